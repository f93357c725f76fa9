"""Self-contained SVG scatter plots of true vs. estimated positions."""

from __future__ import annotations

from pathlib import Path

import numpy as np

VIEW_MIN, VIEW_MAX = -0.55, 0.55
SIZE = 500.0


def to_pixels(points: np.ndarray, size: float = SIZE) -> np.ndarray:
    """Map plane coordinates in ``[-0.55, 0.55]^2`` to SVG pixels (y axis down)."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    span = VIEW_MAX - VIEW_MIN
    return np.column_stack([(pts[:, 0] - VIEW_MIN) / span * size, (VIEW_MAX - pts[:, 1]) / span * size])


def from_pixels(pixels: np.ndarray, size: float = SIZE) -> np.ndarray:
    px = np.asarray(pixels, dtype=float).reshape(-1, 2)
    span = VIEW_MAX - VIEW_MIN
    return np.column_stack([px[:, 0] / size * span + VIEW_MIN, VIEW_MAX - px[:, 1] / size * span])


def _star(cx: float, cy: float, r: float = 4.0) -> str:
    angles = np.pi / 2 + np.arange(10) * np.pi / 5
    radii = np.where(np.arange(10) % 2 == 0, r, 0.4 * r)
    pts = [f"{cx + q * np.cos(a):.3f},{cy - q * np.sin(a):.3f}" for q, a in zip(radii, angles)]
    return " ".join(pts)


def plot_scatter(truth, estimates, anchors, path, title: str | None = None, size: float = SIZE) -> Path:
    """Write truth (blue circles), anchors (black discs), estimates (red stars)
    and truth-to-estimate segments (blue lines) to an SVG file."""
    truth = np.asarray(truth, dtype=float).reshape(-1, 2)
    estimates = np.asarray(estimates, dtype=float).reshape(-1, 2)
    if truth.shape != estimates.shape:
        raise ValueError("truth and estimates must have the same length")
    anchors = np.asarray(anchors if anchors is not None else np.zeros((0, 2)), dtype=float).reshape(-1, 2)
    t_px, e_px, a_px = to_pixels(truth, size), to_pixels(estimates, size), to_pixels(anchors, size)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size:g}" height="{size:g}" viewBox="0 0 {size:g} {size:g}">',
        f'<rect x="0" y="0" width="{size:g}" height="{size:g}" fill="white"/>',
    ]
    if title:
        out.append(f'<text x="8" y="16" font-family="sans-serif" font-size="12">{_escape(title)}</text>')
    out.append('<g class="segments" stroke="blue" stroke-width="0.8">')
    for (x1, y1), (x2, y2) in zip(t_px, e_px):
        out.append(f'<line x1="{x1:.6f}" y1="{y1:.6f}" x2="{x2:.6f}" y2="{y2:.6f}"/>')
    out.append("</g>")
    out.append('<g class="truth" fill="none" stroke="blue" stroke-width="0.8">')
    for x, y in t_px:
        out.append(f'<circle cx="{x:.6f}" cy="{y:.6f}" r="3"/>')
    out.append("</g>")
    out.append('<g class="anchors" fill="black">')
    for x, y in a_px:
        out.append(f'<circle cx="{x:.6f}" cy="{y:.6f}" r="3.5"/>')
    out.append("</g>")
    out.append('<g class="estimates" fill="red">')
    for x, y in e_px:
        out.append(f'<polygon points="{_star(x, y)}"/>')
    out.append("</g>")
    out.append("</svg>")

    path = Path(path)
    path.write_text("\n".join(out) + "\n")
    return path


def _escape(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
