"""Config-driven drivers: simulate probe captures to disk, or run the whole chain in memory."""
from __future__ import annotations

import hashlib
import json
import logging
from pathlib import Path
from typing import Optional

import numpy as np

from . import io
from .analysis import add_noise, rmse, spectrum, ssd
from .calibrate import bright_mask, build_bases, calibrate_matrix, expand_color, simulate_responses
from .config import ExperimentConfig
from .reconstruct import LeastSquaresInverse
from .render import TransferMatrix, random_lightmaps

log = logging.getLogger(__name__)

MANIFEST_VERSION = 1

# SeedSequence stream ids, shared with nothing else
_BASIS, _PROBE_NOISE, _TEST_MAPS, _TEST_NOISE = 11, 12, 13, 14


def _seed(seed: int, purpose: int) -> int:
    return int(np.random.SeedSequence([int(seed), purpose]).generate_state(1)[0])


def content_hash(*arrays) -> str:
    h = hashlib.sha256()
    for a in arrays:
        a = np.ascontiguousarray(a, dtype="<f8")
        h.update(str(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()


def _bases(cfg: ExperimentConfig, a: TransferMatrix):
    bases = build_bases(cfg.scene.screen.shape, cfg.calibration.k, _seed(cfg.seed, _BASIS))
    return expand_color(bases, cfg.channels) if cfg.channels > 1 else bases


def _sensor_image(v, a: TransferMatrix) -> np.ndarray:
    shape = a.sensor_shape if a.channels == 1 else (a.channels, *a.sensor_shape)
    return np.asarray(v).reshape(shape)


def run_simulate(cfg: ExperimentConfig, out_dir=None) -> Path:
    """Write the true matrix, the surface and every displayed probe capture.

    Captures are stored exactly as the sensor would record them; DCT probes
    are shown as ``offset + gain * d`` and a separate flat-field capture of
    ``offset`` is written so that calibration can remove the bias. Returns
    the manifest path.
    """
    out = Path(out_dir or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    surface = cfg.scene.sample_surface()
    a = cfg.scene.transfer_matrix(cfg.channels)
    io.write_surface(out / "surface.srf", surface)
    io.write_matrix(out / "A_true.mat", a)

    bases = _bases(cfg, a)
    noise = np.random.SeedSequence(_seed(cfg.seed, _PROBE_NOISE)).spawn(len(bases) + 1)
    entries = []
    flat_path = None
    for b, ss in zip(bases, noise):
        if b.count == 0:
            continue
        shown = a.data @ b.displayed()
        shown = add_noise(shown.T, cfg.noise_sigma, ss).T
        (out / b.kind).mkdir(exist_ok=True)
        for i in range(b.count):
            rel = f"{b.kind}/{i:05d}.pfm"
            io.write_pfm(out / rel, _sensor_image(shown[:, i], a))
            entries.append({"kind": b.kind, "index": i, "path": rel, "gain": b.gain, "offset": b.offset})
        if b.offset != 0 and flat_path is None:
            flat = a.data @ np.full(b.dim, b.offset)
            caps = add_noise(np.tile(flat, (cfg.flat_repeats, 1)), cfg.noise_sigma, noise[-1])
            flat_path = "flat.pfm"
            io.write_pfm(out / flat_path, _sensor_image(caps.mean(axis=0), a))

    manifest = {
        "manifest_version": MANIFEST_VERSION,
        "config_hash": cfg.hash(),
        "screen_shape": list(a.screen_shape),
        "sensor_shape": list(a.sensor_shape),
        "channels": cfg.channels,
        "k": cfg.calibration.k,
        "basis_seed": _seed(cfg.seed, _BASIS),
        "flat_field": flat_path,
        "flat_level": 0.5 if flat_path else None,
        "responses": entries,
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


class _Cache:
    def __init__(self, root: Optional[Path]):
        self.root = root
        if root is not None:
            root.mkdir(parents=True, exist_ok=True)

    def get(self, key: str):
        if self.root is None:
            return None
        p = self.root / f"{key}.npz"
        if not p.exists():
            return None
        with np.load(p) as f:
            return {k: f[k] for k in f.files}

    def put(self, key: str, **arrays):
        if self.root is not None:
            np.savez(self.root / f"{key}.npz", **arrays)


def _stage(name):
    def wrap(fn):
        def run(*args, **kwargs):
            try:
                return fn(*args, **kwargs)
            except Exception as exc:
                exc.stage = name
                log.error("stage %s failed: %s", name, exc)
                raise

        return run

    return wrap


def run_pipeline(cfg: ExperimentConfig, cache_dir=None) -> dict:
    """Simulate, calibrate and reconstruct held-out lightmaps; return a metrics report.

    The configured ``noise_sigma`` is applied to probe captures and test
    images alike. Stage outputs are cached by config hash when ``cache_dir``
    is given; cached and fresh runs produce identical reports.
    """
    cache = _Cache(Path(cache_dir) if cache_dir else None)
    key = cfg.hash()[:16]
    stages = {}

    @_stage("simulate")
    def simulate():
        got = cache.get(f"{key}-simulate")
        if got is None:
            a = cfg.scene.transfer_matrix(cfg.channels)
            bases = _bases(cfg, a)
            p = simulate_responses(
                a.data, bases, cfg.noise_sigma, _seed(cfg.seed, _PROBE_NOISE), cfg.display_probes, cfg.flat_repeats
            )
            got = {"a": a.data, "y1": p.impulse, "y2": p.dct, "y3": p.random}
            cache.put(f"{key}-simulate", **got)
        a = TransferMatrix(
            got["a"], sensor_pixels=got["a"].shape[0], screen_shape=cfg.scene.screen.shape,
            sensor_shape=(cfg.scene.surface.rows, cfg.scene.surface.cols), channels=cfg.channels,
        )
        return a, got["y1"], got["y2"], got["y3"]

    a_true, y1, y2, y3 = simulate()
    stages["simulate"] = {"inputs": cfg.hash(), "outputs": content_hash(a_true.data, y1, y2, y3)}

    @_stage("calibrate")
    def calibrate():
        bases = _bases(cfg, a_true)
        mask = bright_mask(y1, cfg.calibration.fraction) if cfg.calibration.use_mask else None
        return calibrate_matrix(
            y1, y2, y3, bases, mask, cfg.calibration,
            screen_shape=a_true.screen_shape, sensor_shape=a_true.sensor_shape, channels=cfg.channels,
        )

    a_est = calibrate()
    mask_arr = np.arange(a_est.rows) if a_est.mask is None else a_est.mask
    stages["calibrate"] = {
        "inputs": stages["simulate"]["outputs"],
        "outputs": content_hash(a_est.data, mask_arr),
    }

    @_stage("reconstruct")
    def reconstruct():
        n_test = cfg.sweep.n_test
        maps = random_lightmaps(cfg.scene.screen.shape, n_test, _seed(cfg.seed, _TEST_MAPS), cfg.channels)
        flat_maps = maps.reshape(n_test, -1)
        y = add_noise(flat_maps @ a_true.data.T, cfg.noise_sigma, _seed(cfg.seed, _TEST_NOISE))
        inv = LeastSquaresInverse(a_est)
        results = [inv.solve(v) for v in y]
        return flat_maps, y, results

    maps, y, results = reconstruct()
    x_hat = np.stack([r.lightmap.reshape(-1) for r in results])
    stages["reconstruct"] = {"inputs": content_hash(maps, y, a_est.data), "outputs": content_hash(x_hat)}

    spec_true = spectrum(a_true)
    spec_est = spectrum(a_est)
    metrics = {
        "ssd_mean": float(np.mean([ssd(p, q) for p, q in zip(x_hat, maps)])),
        "rmse_mean": float(np.mean([rmse(p, q) for p, q in zip(x_hat, maps)])),
        "residual_mean": float(np.mean([r.residual for r in results])),
        "clamp_count": int(sum(r.clamp_count for r in results)),
        "calibration_error_max": float(np.max(np.abs(a_est.data - a_true.data[mask_arr]))),
        "kappa_true": spec_true.condition_number,
        "kappa_calibrated": spec_est.condition_number,
        "mask_rows": int(a_est.rows),
        "n_test": int(len(maps)),
    }
    return {
        "config_hash": cfg.hash(),
        "config": cfg.to_dict(),
        "stages": stages,
        "metrics": metrics,
    }


def write_report(report: dict, path) -> None:
    Path(path).write_text(json.dumps(report, indent=2, sort_keys=True, allow_nan=True) + "\n")
