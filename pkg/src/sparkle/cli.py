"""``sparkle`` command-line entry point.

Exit codes: 0 success, 1 configuration or usage error, 2 numerical failure,
3 I/O failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import io
from .analysis import (
    basis_count_sweep,
    grid_adjacency,
    noise_location_sweep,
    overlap_matrix,
    spectrum,
    test_noise_stability,
)
from .calibrate import BasisSet, CalibrationConfig, bright_mask, build_bases, calibrate_matrix, expand_color
from .config import ExperimentConfig
from .errors import ConfigError, NumericalError
from .hdr import ExposureStack, average_backgrounds, hdr_merge, subtract_background
from .pipeline import run_pipeline, run_simulate, write_report
from .reconstruct import ShiftSearchConfig, reconstruct_nnls, reconstruct_ls, reconstruct_with_shift_search
from .render import build_diffuse_transfer_matrix, random_lightmaps

log = logging.getLogger("sparkle")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.out_dir is not None:
        cfg = replace(cfg, out_dir=args.out_dir)
    return cfg


def _threads(args) -> int:
    if args.threads is not None:
        n = args.threads
    else:
        env = os.environ.get("SPARKLE_THREADS")
        try:
            n = int(env) if env else 1
        except ValueError:
            raise ConfigError(f"SPARKLE_THREADS must be an integer, got {env!r}") from None
    if n < 1:
        raise ConfigError("thread count must be >= 1")
    return n


def _out_path(args, name: str, base=None) -> Path:
    if getattr(args, "out", None):
        p = Path(args.out)
    else:
        p = Path(base or args.out_dir or ".") / name
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# --- subcommands -------------------------------------------------------------

def cmd_simulate(args):
    cfg = _load_config(args)
    path = run_simulate(cfg, args.out_dir or cfg.out_dir)
    print(path)


def _read_stack_manifest(path: Path):
    data = json.loads(path.read_text())
    if isinstance(data, list):
        data = {"exposures": data}
    window = tuple(data.get("window", (0.1, 0.7)))
    pairs = []
    for item in data.get("exposures", []):
        if isinstance(item, dict):
            t, p = item["exposure_time"], item["path"]
        else:
            t, p = item
        pairs.append((float(t), path.parent / p))
    if not pairs:
        raise ConfigError(f"{path}: no exposures listed")
    pairs.sort(key=lambda tp: tp[0])
    return pairs, window


def cmd_hdr(args):
    manifest = Path(args.stack)
    try:
        pairs, window = _read_stack_manifest(manifest)
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{manifest}: malformed stack manifest ({exc})") from None
    images = [io.read_pfm(p) for _, p in pairs]
    if args.background:
        bg = average_backgrounds([io.read_pfm(p) for p in args.background])
        images = [subtract_background(im, bg) for im in images]
    try:
        stack = ExposureStack([t for t, _ in pairs], images, window)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    merged, code = hdr_merge(stack, return_fallback=True)
    out = _out_path(args, "merged.pfm")
    io.write_pfm(out, merged)
    flagged = int(np.count_nonzero(code))
    if flagged:
        log.warning("%d pixels had no in-window sample", flagged)
    print(out)


def _load_responses(path: Path):
    manifest = path / "manifest.json" if path.is_dir() else path
    data = json.loads(manifest.read_text())
    return manifest.parent, data


def cmd_calibrate(args):
    root, man = _load_responses(Path(args.responses))
    try:
        screen_shape = tuple(man["screen_shape"])
        sensor_shape = tuple(man["sensor_shape"])
        channels = int(man.get("channels", 1))
        entries = man["responses"]
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"response manifest missing field {exc}") from None
    kinds = [k.strip() for k in args.bases.split(",") if k.strip()]
    for k in kinds:
        if k not in ("impulse", "dct", "random"):
            raise ConfigError(f"--bases: unknown basis kind {k!r}")
    available = sum(1 for e in entries if e["kind"] == "random") // channels
    k = available if args.k is None else args.k
    if "random" in kinds and k > available:
        raise ConfigError(f"--k {k} exceeds the {available} random responses on disk")
    if "random" not in kinds:
        k = 0
    k_disk = int(man.get("k", available))
    bases = build_bases(screen_shape, k_disk, int(man.get("basis_seed", 0)))
    if channels > 1:
        bases = expand_color(bases, channels)
    bases = list(bases)
    # first k probes of every channel block
    keep = (np.arange(channels)[:, None] * k_disk + np.arange(k)[None, :]).reshape(-1)
    bases[2] = BasisSet("random", bases[2].vectors[:, keep])

    bg = average_backgrounds([io.read_pfm(p) for p in args.background]) if args.background else None
    flat = None
    if man.get("flat_field"):
        flat = io.read_pfm(root / man["flat_field"])
        if bg is not None:
            flat = subtract_background(flat, bg)

    ys = []
    for kind, b in zip(("impulse", "dct", "random"), bases):
        if kind not in kinds or b.count == 0:
            ys.append(None)
            continue
        cols = {}
        for e in entries:
            if e["kind"] != kind:
                continue
            idx = int(e["index"])
            if kind == "random":
                c, j = divmod(idx, k_disk)
                if j >= k:
                    continue
                idx = c * k + j
            img = io.read_pfm(root / e["path"])
            if bg is not None:
                img = subtract_background(img, bg)
            gain, offset = float(e.get("gain", 1.0)), float(e.get("offset", 0.0))
            if offset != 0.0:
                if flat is None:
                    raise ConfigError(f"{kind} probes were displayed with an offset but no flat field is listed")
                img = img - flat
            cols[idx] = img.reshape(-1) / gain
        missing = sorted(set(range(b.count)) - set(cols))
        if missing:
            raise ConfigError(f"{kind}: missing responses for indices {missing[:5]}")
        ys.append(np.column_stack([cols[i] for i in range(b.count)]))
    lam = None if args.lam == "auto" else float(args.lam)
    cal = CalibrationConfig(lam=lam, fraction=args.fraction, k=k)
    impulse = ys[0]
    mask = None if args.no_mask or impulse is None else bright_mask(impulse, cal.fraction)
    a = calibrate_matrix(*ys, bases, mask, cal, screen_shape=screen_shape, sensor_shape=sensor_shape, channels=channels)
    out = _out_path(args, "A.mat")
    io.write_matrix(out, a)
    print(out)


def _parse_triplet(text: str):
    try:
        lo, hi, step = (float(v) for v in text.split(","))
    except ValueError:
        raise ConfigError(f"--shift-search expects min,max,step; got {text!r}") from None
    return lo, hi, step


def cmd_reconstruct(args):
    a = io.read_matrix(args.matrix)
    y = io.read_pfm(args.image)
    shift = (0.0, 0.0)
    if args.shift_search:
        lo, hi, step = _parse_triplet(args.shift_search)
        try:
            grid = ShiftSearchConfig.grid(lo, hi, step, two_d=args.shift_axes == "xy")
        except ValueError as exc:
            raise ConfigError(f"--shift-search: {exc}") from None
        shift, res, _ = reconstruct_with_shift_search(a, y, grid, workers=_threads(args))
    elif args.nonneg:
        res = reconstruct_nnls(a, y)
    else:
        res = reconstruct_ls(a, y)
    out = _out_path(args, "x.pfm")
    io.write_pfm(out, res.lightmap if res.lightmap.ndim >= 2 else res.lightmap.reshape(1, -1))
    sidecar = {
        "solver": res.solver,
        "residual": res.residual,
        "residual_clamped": res.residual_clamped,
        "clamp_count": res.clamp_count,
        "shift": list(shift),
    }
    _write_json(out.with_suffix(".json"), sidecar)
    print(out)


def _write_sweep(result, cfg, out):
    result.to_csv(out, cfg.hash())
    print(out)


def cmd_analyze(args):
    cfg = _load_config(args)
    workers = _threads(args)
    what = args.what
    if what in ("overlap", "spectrum", "test-noise") and args.matrix:
        a = io.read_matrix(args.matrix)
    else:
        a = cfg.scene.transfer_matrix() if what != "noise-sweep" and what != "basis-sweep" else None

    out = _out_path(args, f"{what}.csv")
    if what == "overlap":
        om = overlap_matrix(a.data, cfg.overlap_threshold)
        adj = grid_adjacency(a.screen_shape) if a.screen_shape else None
        with open(out, "w", newline="") as fh:
            fh.write(f"# config_hash={cfg.hash()}\n")
            w = csv.writer(fh)
            w.writerow(["i", "j", "overlap", "adjacent"])
            n = om.values.shape[0]
            for i in range(n):
                for j in range(i + 1, n):
                    w.writerow([i, j, repr(float(om.values[i, j])), "" if adj is None else int(adj[i, j])])
        print(f"max_overlap={om.max_off_diagonal()!r}")
        print(out)
    elif what == "spectrum":
        rep = spectrum(a)
        rows = [("specular" if a.provenance == "simulated" else a.provenance, rep)]
        if args.diffuse:
            rows.append(("diffuse", spectrum(build_diffuse_transfer_matrix(cfg.scene.surface, cfg.scene.screen, cfg.scene.camera))))
        with open(out, "w", newline="") as fh:
            fh.write(f"# config_hash={cfg.hash()}\n")
            w = csv.writer(fh)
            w.writerow(["matrix", "index", "singular_value"])
            for name, r in rows:
                for i, s in enumerate(r.singular_values):
                    w.writerow([name, i, repr(float(s))])
        for name, r in rows:
            print(f"{name}: kappa={r.condition_number!r} rank_deficit={r.rank_deficit}")
        print(out)
    elif what == "noise-sweep":
        res = noise_location_sweep(
            cfg.scene, cfg.sweep.sigmas, cfg.sweep.seeds, args.mode or cfg.sweep.mode, cfg.sweep.n_test,
            cfg.calibration, display=cfg.display_probes, flat_repeats=cfg.flat_repeats, workers=workers,
        )
        _write_sweep(res, cfg, out)
    elif what == "basis-sweep":
        res = basis_count_sweep(
            cfg.scene, cfg.sweep.k_values, cfg.sweep.basis_sigma, cfg.sweep.seeds, cfg.sweep.n_test,
            cfg.calibration, display=cfg.display_probes, flat_repeats=cfg.flat_repeats, workers=workers,
        )
        _write_sweep(res, cfg, out)
    elif what == "test-noise":
        maps = random_lightmaps(a.screen_shape, cfg.sweep.n_test, cfg.seed)
        res = test_noise_stability(a, maps, cfg.sweep.test_sigmas, cfg.sweep.seeds, workers=workers)
        _write_sweep(res, cfg, out)


def cmd_pipeline(args):
    cfg = _load_config(args)
    out_dir = Path(args.out_dir or cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cache = None if args.no_cache else out_dir / "cache"
    report = run_pipeline(cfg, cache)
    out = _out_path(args, "report.json", out_dir)
    write_report(report, out)
    m = report["metrics"]
    print(f"ssd_mean={m['ssd_mean']!r} rmse_mean={m['rmse_mean']!r} kappa={m['kappa_calibrated']!r}")
    print(out)


# --- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    # global flags are accepted before or after the subcommand
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", help="experiment config JSON")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--threads", type=int, help="worker threads (default: $SPARKLE_THREADS or 1)")
    common.add_argument("--out-dir", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="sparkle", description="Glitter-surface light transport simulation and inversion.", parents=[common])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", parents=[common], help="render probe captures and the true matrix")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("hdr", parents=[common], help="merge an exposure stack")
    s.add_argument("--stack", required=True, help="JSON manifest of (exposure_time, path) pairs")
    s.add_argument("--background", nargs="+", help="dark-screen capture(s) to subtract")
    s.add_argument("--out")
    s.set_defaults(func=cmd_hdr)

    s = sub.add_parser("calibrate", parents=[common], help="estimate the transfer matrix from probe captures")
    s.add_argument("--responses", required=True, help="response manifest or directory containing manifest.json")
    s.add_argument("--bases", default="impulse,dct,random")
    s.add_argument("--k", type=int, help="random probes to use (default: all on disk)")
    s.add_argument("--fraction", type=float, default=0.01)
    s.add_argument("--lambda", dest="lam", default="auto")
    s.add_argument("--no-mask", action="store_true")
    s.add_argument("--background", nargs="+")
    s.add_argument("--out")
    s.set_defaults(func=cmd_calibrate)

    s = sub.add_parser("reconstruct", parents=[common], help="recover a lightmap from one sensor image")
    s.add_argument("--matrix", required=True)
    s.add_argument("--image", required=True)
    s.add_argument("--nonneg", action="store_true")
    s.add_argument("--shift-search", metavar="MIN,MAX,STEP")
    s.add_argument("--shift-axes", choices=("x", "xy"), default="x")
    s.add_argument("--out")
    s.set_defaults(func=cmd_reconstruct)

    s = sub.add_parser("analyze", parents=[common], help="diagnostics and sweeps (CSV output)")
    s.add_argument("what", choices=("overlap", "spectrum", "noise-sweep", "basis-sweep", "test-noise"))
    s.add_argument("--matrix", help="use this matrix instead of simulating one")
    s.add_argument("--mode", choices=("both", "train-only", "test-only", "train", "test"))
    s.add_argument("--diffuse", action="store_true", help="spectrum: also report the matte reflector")
    s.add_argument("--out")
    s.set_defaults(func=cmd_analyze)

    s = sub.add_parser("pipeline", parents=[common], help="simulate, calibrate and reconstruct end to end")
    s.add_argument("--no-cache", action="store_true")
    s.add_argument("--out")
    s.set_defaults(func=cmd_pipeline)
    return p


_GLOBAL_DEFAULTS = {"config": None, "seed": None, "threads": None, "out_dir": None, "verbose": False}


def _join_negative_values(argv):
    # "--shift-search -1,1,0.2" would otherwise read -1,... as an option
    out = []
    it = iter(argv)
    for tok in it:
        if tok == "--shift-search":
            nxt = next(it, None)
            out.append(tok if nxt is None else f"{tok}={nxt}")
        else:
            out.append(tok)
    return out


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(_join_negative_values(argv))
    for key, value in _GLOBAL_DEFAULTS.items():
        if not hasattr(args, key):
            setattr(args, key, value)
    if args.threads is not None and args.threads < 1:
        print("config error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"config error: {_where(exc)}{exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical error: {_where(exc)}{exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"I/O error: {_where(exc)}{exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {_where(exc)}{exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


def _where(exc) -> str:
    stage = getattr(exc, "stage", None)
    return f"[{stage}] " if stage else ""


if __name__ == "__main__":
    sys.exit(main())
