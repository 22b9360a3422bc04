"""Impulse-response overlap and singular-value spectra of specular and matte reflectors.

    python3 scripts/overlap_spectrum.py --out results/spectrum.csv
"""
import argparse
import csv
from pathlib import Path

from sparkle.analysis import grid_adjacency, overlap_matrix, spectrum
from sparkle.config import ExperimentConfig
from sparkle.render import build_diffuse_transfer_matrix


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config")
    ap.add_argument("--out", default="results/spectrum.csv")
    args = ap.parse_args()

    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    scene = cfg.scene
    a = scene.transfer_matrix()
    om = overlap_matrix(a.data, cfg.overlap_threshold)
    adj = grid_adjacency(scene.screen.shape)
    print(f"max overlap {om.max_off_diagonal():.3f}; adjacent mean {om.mean_over(adj):.4f}; "
          f"non-adjacent mean {om.mean_over(~adj):.4f}")

    reps = {"specular": spectrum(a),
            "diffuse": spectrum(build_diffuse_transfer_matrix(scene.surface, scene.screen, scene.camera))}
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    with open(args.out, "w", newline="") as fh:
        fh.write(f"# config_hash={cfg.hash()}\n")
        w = csv.writer(fh)
        w.writerow(["matrix", "index", "singular_value"])
        for name, rep in reps.items():
            print(f"{name}: kappa {rep.condition_number:.4g}, rank deficit {rep.rank_deficit}")
            for i, s in enumerate(rep.singular_values):
                w.writerow([name, i, repr(float(s))])


if __name__ == "__main__":
    main()
