"""Recovery SSD versus the number of random calibration probes.

    python3 scripts/basis_sweep.py --sigma 0.01 --out results/basis.csv
"""
import argparse
from pathlib import Path

from sparkle.analysis import basis_count_sweep
from sparkle.config import ExperimentConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config")
    ap.add_argument("--sigma", type=float, help="calibration noise (default: config sweep.basis_sigma)")
    ap.add_argument("--out", default="results/basis.csv")
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()

    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    sigma = cfg.sweep.basis_sigma if args.sigma is None else args.sigma
    res = basis_count_sweep(cfg.scene, cfg.sweep.k_values, sigma, cfg.sweep.seeds, cfg.sweep.n_test,
                            cfg.calibration, workers=args.workers)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    res.to_csv(args.out, cfg.hash())
    for k, m, sd in zip(res.values, res.mean(), res.std()):
        print(f"K={k:<4d} ssd={m:.4g} +- {sd:.2g}")


if __name__ == "__main__":
    main()
