"""Four scatter plots at N=500, r=0.2, eta=0.5: all 50 vs 3 registration anchors,
before and after refinement."""

import argparse
from pathlib import Path

from snlsr import NetworkConfig, SolverConfig, run
from snlsr.plotting import plot_scatter


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--seed", type=int, default=1)
    parser.add_argument("--out", default="figures")
    args = parser.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    net = NetworkConfig(n_sensors=500, n_anchors=50, radio_range=0.2, noise_level=0.5, rng_seed=args.seed)
    for count in (None, 3):
        res = run(net, SolverConfig(registration_anchors=count, seed=args.seed))
        truth = res.instance.true_positions[:500]
        anchors = res.instance.true_positions[res.registration_anchor_ids]
        label = 50 if count is None else count
        for stage, est, err in (
            ("before", res.positions_registered, res.rmsd_registered),
            ("after", res.positions_refined, res.rmsd_refined),
        ):
            path = out / f"scatter_{label}anchors_{stage}.svg"
            plot_scatter(truth, est, anchors, path, title=f"{label} anchors, {stage} refinement: RMSD {err:.1e}")
            print(f"{path}: RMSD {err:.2e}")


if __name__ == "__main__":
    main()
