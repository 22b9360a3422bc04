"""Misalignment: recovery RMSE versus sensor-image shift, and shift recovery by TV search.

    python3 scripts/shift_study.py --seeds 5
"""
import argparse
from dataclasses import replace

import numpy as np

from sparkle.config import misalignment_scene
from sparkle.reconstruct import LeastSquaresInverse, ShiftSearchConfig, reconstruct_with_shift_search, shift_image
from sparkle.render import random_lightmaps


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--true-shift", type=float, default=0.4)
    ap.add_argument("--two-d", action="store_true", help="search x and y instead of x only")
    args = ap.parse_args()

    scene = misalignment_scene()
    a = scene.transfer_matrix()
    inv = LeastSquaresInverse(a)
    maps = random_lightmaps(scene.screen.shape, 20, 0)
    print("shift  rmse")
    for d in (0.0, 0.2, 0.4, 0.6, 0.8, 1.0):
        e = [np.sqrt(np.mean((inv.solve(shift_image((a @ x).reshape(a.sensor_shape), (d, 0)).reshape(-1)).lightmap - x) ** 2))
             for x in maps]
        print(f"{d:5.1f}  {np.mean(e):.4f}")

    yy, xx = np.mgrid[0:10, 0:10]
    smooth = 0.5 + 0.4 * np.cos(xx / 3) * np.cos(yy / 4)
    grid = ShiftSearchConfig.grid(-1, 1, 0.2, two_d=args.two_d)
    for seed in range(args.seeds):
        sa = replace(scene, surface_seed=seed).transfer_matrix()
        y = shift_image((sa @ smooth).reshape(sa.sensor_shape), (args.true_shift, 0.0))
        best, res, _ = reconstruct_with_shift_search(sa, y, grid)
        rm = np.sqrt(np.mean((res.lightmap - smooth) ** 2))
        print(f"surface seed {seed}: chosen shift {best}, rmse {rm:.2e}")


if __name__ == "__main__":
    main()
