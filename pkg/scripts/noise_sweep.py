"""Recovery SSD versus noise level with noise in calibration, test images or both.

    python3 scripts/noise_sweep.py --out results/noise --workers 4
"""
import argparse
from pathlib import Path

import numpy as np

from sparkle.analysis import noise_location_sweep
from sparkle.config import ExperimentConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", help="experiment config JSON (default scene if omitted)")
    ap.add_argument("--out", default="results/noise")
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()

    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    truth = cfg.scene.transfer_matrix()
    for mode in ("both", "train-only", "test-only"):
        res = noise_location_sweep(cfg.scene, cfg.sweep.sigmas, cfg.sweep.seeds, mode, cfg.sweep.n_test,
                                   cfg.calibration, truth=truth, workers=args.workers)
        res.to_csv(out / f"{mode}.csv", cfg.hash())
        for s, m, sd in zip(res.values, res.mean(), res.std()):
            print(f"{mode:10s} sigma={s:<6g} ssd={m:.4g} +- {sd:.2g}")
    print(f"csv written to {out}")


if __name__ == "__main__":
    main()
