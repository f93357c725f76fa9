"""Synthetic multi-patch registration problems with known ground truth."""

from __future__ import annotations

import numpy as np

from .patchloc import LOCALIZED, LocalizedPatch


def random_orthogonal(rng, d: int = 2, allow_reflection: bool = True) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    q = q * np.sign(np.diag(r))
    if not allow_reflection and np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def rigid_patches(
    rng,
    n_points: int = 60,
    n_patches: int = 8,
    patch_size: int = 12,
    min_overlap: int = 3,
    dimension: int = 2,
    noise: float = 0.0,
    n_anchors: int = 0,
):
    """Overlapping patches of one point cloud, each seen in its own random rigid frame.

    Patch ``i > 0`` shares at least ``min_overlap`` points with a random earlier
    patch, so the overlap structure is connected. Local coordinates get
    independent Gaussian perturbations of size ``noise``.

    Returns ``(truth, patches, anchors)``: ``truth`` maps every covered point
    id to its position, ``anchors`` maps the chosen anchor ids to theirs.
    """
    points = rng.uniform(-0.5, 0.5, size=(n_points, dimension))
    sets = []
    for i in range(n_patches):
        if i == 0:
            s = set(rng.choice(n_points, patch_size, replace=False).tolist())
        else:
            parent = sorted(sets[rng.integers(i)])
            s = set(rng.choice(parent, min_overlap, replace=False).tolist())
            while len(s) < patch_size:
                s.add(int(rng.integers(n_points)))
        sets.append(s)
    covered = sorted(set().union(*sets))
    patches = []
    for i, s in enumerate(sets):
        ids = tuple(sorted(s))
        q = random_orthogonal(rng, dimension)
        t = rng.normal(scale=2.0, size=dimension)
        local = (points[list(ids)] + noise * rng.standard_normal((len(ids), dimension))) @ q.T + t
        patches.append(LocalizedPatch(i, ids, local, LOCALIZED, 0.0))
    anchor_ids = rng.choice(covered, size=n_anchors, replace=False) if n_anchors else []
    truth = {v: points[v] for v in covered}
    anchors = {int(a): points[a] for a in anchor_ids}
    return truth, patches, anchors
