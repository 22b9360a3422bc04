"""Diagnostics and seeded experiment sweeps.

Every sweep job ``(value, seed)`` draws its randomness from
``SeedSequence([seed, stream])`` with a fixed stream id per purpose, so the
noise realisation for a seed is shared across the swept values (common
random numbers) and results do not depend on the worker schedule.
"""
from __future__ import annotations

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .calibrate import CalibrationConfig, bright_mask, build_bases, calibrate_matrix, simulate_responses
from .config import SceneConfig
from .reconstruct import LeastSquaresInverse
from .render import TransferMatrix, random_lightmaps
from .scene import make_rng

log = logging.getLogger(__name__)

# SeedSequence stream ids
_TEST_MAPS, _TEST_NOISE, _BASIS, _TRAIN_NOISE = 1, 2, 3, 4

MODES = {"both": (True, True), "train": (True, False), "train-only": (True, False),
         "test": (False, True), "test-only": (False, True)}


def _stream(seed: int, purpose: int) -> np.random.Generator:
    return make_rng(np.random.SeedSequence([int(seed), purpose]))


def _stream_seed(seed: int, purpose: int) -> int:
    return int(np.random.SeedSequence([int(seed), purpose]).generate_state(1)[0])


def add_noise(y, sigma: float, rng) -> np.ndarray:
    """Additive i.i.d. Gaussian noise, clipped at zero."""
    y = np.asarray(y, dtype=float)
    if sigma == 0:
        return y.copy()
    return np.maximum(y + sigma * make_rng(rng).standard_normal(y.shape), 0.0)


def ssd(x_hat, x) -> float:
    d = np.asarray(x_hat, dtype=float) - np.asarray(x, dtype=float)
    return float(np.sum(d * d))


def rmse(x_hat, x) -> float:
    d = np.asarray(x_hat, dtype=float) - np.asarray(x, dtype=float)
    return float(np.sqrt(np.mean(d * d)))


@dataclass
class OverlapMatrix:
    values: np.ndarray
    sets: list = field(repr=False)
    threshold: float = 0.1
    flagged: list = field(default_factory=list)

    def off_diagonal(self) -> np.ndarray:
        n = self.values.shape[0]
        return self.values[~np.eye(n, dtype=bool)]

    def max_off_diagonal(self) -> float:
        return float(self.off_diagonal().max(initial=0.0))

    def mean_over(self, pairs: np.ndarray) -> float:
        """Mean overlap over the off-diagonal entries selected by a boolean matrix."""
        sel = pairs & ~np.eye(self.values.shape[0], dtype=bool)
        return float(self.values[sel].mean())


def overlap_matrix(impulse_responses, threshold_fraction: float = 0.1) -> OverlapMatrix:
    """Pairwise overlap ``|S_i & S_j| / min(|S_i|, |S_j|)`` of bright-pixel sets.

    ``S_i`` holds the pixels brighter than ``threshold_fraction`` times the
    peak of response ``i``. A response with an empty bright set is flagged
    and overlaps nothing.
    """
    if isinstance(impulse_responses, np.ndarray) and impulse_responses.ndim == 2:
        y = impulse_responses
    else:
        y = np.column_stack([np.asarray(r, dtype=float).reshape(-1) for r in impulse_responses])
    if y.shape[1] < 2:
        raise ValueError("need at least two responses")
    if not 0 < threshold_fraction <= 1:
        raise ValueError("threshold_fraction must lie in (0, 1]")
    peak = y.max(axis=0)
    s = (y > threshold_fraction * peak) & (peak > 0)
    counts = s.sum(axis=0)
    inter = s.T.astype(np.int64) @ s.astype(np.int64)
    denom = np.minimum.outer(counts, counts)
    values = np.divide(inter, denom, out=np.zeros(inter.shape), where=denom > 0)
    np.fill_diagonal(values, 1.0)
    flagged = [int(i) for i in np.flatnonzero(counts == 0)]
    if flagged:
        log.warning("%d responses have no bright pixels", len(flagged))
    return OverlapMatrix(values, [np.flatnonzero(s[:, i]) for i in range(y.shape[1])], threshold_fraction, flagged)


def grid_adjacency(shape) -> np.ndarray:
    """Boolean matrix of 4-neighbour pixel pairs on an ``(H, W)`` grid."""
    h, w = shape
    r, c = np.divmod(np.arange(h * w), w)
    dr = np.abs(r[:, None] - r[None, :])
    dc = np.abs(c[:, None] - c[None, :])
    return (dr + dc) == 1


@dataclass
class SpectrumReport:
    singular_values: np.ndarray
    condition_number: float
    rank_deficit: int = 0
    provenance: str = "simulated"


def spectrum(a, tol: Optional[float] = None) -> SpectrumReport:
    """Singular values (descending) and condition number of a transfer matrix."""
    data = a.data if isinstance(a, TransferMatrix) else np.asarray(a, dtype=float)
    if data.size == 0:
        raise ValueError("empty matrix")
    s = np.linalg.svd(data, compute_uv=False)
    if tol is None:
        tol = max(data.shape) * np.finfo(float).eps * s[0]
    k = min(data.shape)
    deficit = int(k - np.sum(s > tol))
    kappa = float("inf") if deficit or s[-1] == 0 else float(s[0] / s[-1])
    prov = a.provenance if isinstance(a, TransferMatrix) else "simulated"
    return SpectrumReport(s, kappa, deficit, prov)


@dataclass
class SweepResult:
    """One metric value per (swept value, seed)."""

    variable: str
    values: list
    seeds: list
    metric: str
    records: np.ndarray
    config: dict = field(default_factory=dict)

    def mean(self) -> np.ndarray:
        return self.records.mean(axis=1)

    def std(self) -> np.ndarray:
        return self.records.std(axis=1)

    def rows(self):
        for i, v in enumerate(self.values):
            for j, s in enumerate(self.seeds):
                yield v, s, float(self.records[i, j])

    def to_csv(self, path, config_hash: str = ""):
        with open(path, "w", newline="") as fh:
            fh.write(f"# config_hash={config_hash}\n")
            w = csv.writer(fh)
            w.writerow([self.variable, "seed", self.metric])
            for v, s, m in self.rows():
                w.writerow([repr(float(v)), s, repr(m)])


def _run_jobs(fn, jobs, workers: int):
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(fn, jobs))
    return [fn(j) for j in jobs]


@dataclass
class _Pipeline:
    """Calibrate-then-reconstruct loop shared by the sweeps."""

    truth: TransferMatrix
    calibration: CalibrationConfig
    n_test: int = 20
    display: bool = True
    flat_repeats: int = 16

    def run(self, seed: int, train_sigma: float, test_sigma: float, k: Optional[int] = None) -> float:
        a = self.truth
        k = self.calibration.k if k is None else k
        k_max = max(k, self.calibration.k)
        bases = build_bases(a.screen_shape, k_max, _stream_seed(seed, _BASIS))
        if k < k_max:
            bases = (bases[0], bases[1], type(bases[2])("random", bases[2].vectors[:, :k]))
        probes = simulate_responses(
            a.data, bases, train_sigma, _stream_seed(seed, _TRAIN_NOISE), self.display, self.flat_repeats
        )
        mask = bright_mask(probes.impulse, self.calibration.fraction) if self.calibration.use_mask else None
        est = calibrate_matrix(
            probes.impulse, probes.dct, probes.random, bases, mask, self.calibration,
            screen_shape=a.screen_shape, sensor_shape=a.sensor_shape,
        )
        inv = LeastSquaresInverse(est)
        maps = random_lightmaps(a.screen_shape, self.n_test, _stream(seed, _TEST_MAPS))
        clean = maps.reshape(self.n_test, -1) @ a.data.T
        noisy = add_noise(clean, test_sigma, _stream(seed, _TEST_NOISE))
        x_hat = np.clip(inv.raw(noisy), 0.0, 1.0)
        return float(np.mean(np.sum((x_hat - maps.reshape(self.n_test, -1)) ** 2, axis=1)))


def _pipeline(scene, truth, calibration, n_test, display, flat_repeats):
    truth = truth if truth is not None else scene.transfer_matrix()
    return _Pipeline(truth, calibration or CalibrationConfig(k=truth.cols), n_test, display, flat_repeats)


def noise_location_sweep(
    scene: SceneConfig,
    sigmas: Sequence[float],
    seeds: Sequence[int],
    mode: str = "both",
    n_test: int = 20,
    calibration: Optional[CalibrationConfig] = None,
    truth: Optional[TransferMatrix] = None,
    display: bool = True,
    flat_repeats: int = 16,
    workers: int = 1,
) -> SweepResult:
    """Mean SSD of recovered test lightmaps with noise in calibration, test images, or both."""
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    if any(s < 0 for s in sigmas):
        raise ValueError("noise levels must be >= 0")
    train, test = MODES[mode]
    pipe = _pipeline(scene, truth, calibration, n_test, display, flat_repeats)
    jobs = [(s, seed) for s in sigmas for seed in seeds]
    out = _run_jobs(lambda j: pipe.run(j[1], j[0] if train else 0.0, j[0] if test else 0.0), jobs, workers)
    return SweepResult(
        "sigma", list(sigmas), list(seeds), "ssd",
        np.array(out).reshape(len(sigmas), len(seeds)),
        {"mode": mode, "n_test": n_test, "k": pipe.calibration.k, "scene": repr(scene)},
    )


def basis_count_sweep(
    scene: SceneConfig,
    k_values: Sequence[int],
    sigma: float,
    seeds: Sequence[int],
    n_test: int = 20,
    calibration: Optional[CalibrationConfig] = None,
    truth: Optional[TransferMatrix] = None,
    display: bool = True,
    flat_repeats: int = 16,
    workers: int = 1,
) -> SweepResult:
    """Mean SSD versus number of random calibration probes, calibration noise ``sigma``.

    For a given seed the first ``k`` random probes and their noise are the
    same for every ``k``.
    """
    if list(k_values) != sorted(k_values):
        raise ValueError("k values must be ascending")
    base = calibration or CalibrationConfig()
    cal = CalibrationConfig(base.lam, base.fraction, max(k_values), base.tol, base.use_mask)
    pipe = _pipeline(scene, truth, cal, n_test, display, flat_repeats)
    jobs = [(k, seed) for k in k_values for seed in seeds]
    out = _run_jobs(lambda j: pipe.run(j[1], sigma, 0.0, k=j[0]), jobs, workers)
    return SweepResult(
        "k", list(k_values), list(seeds), "ssd",
        np.array(out).reshape(len(k_values), len(seeds)),
        {"sigma": sigma, "n_test": n_test, "scene": repr(scene)},
    )


def test_noise_stability(a: TransferMatrix, test_lightmaps, sigmas, seeds, workers: int = 1) -> SweepResult:
    """RMSE between recoveries from noisy and from clean renders of each test lightmap."""
    inv = LeastSquaresInverse(a)
    maps = np.asarray(test_lightmaps, dtype=float).reshape(len(test_lightmaps), -1)
    clean_y = maps @ a.data.T
    clean_x = np.clip(inv.raw(clean_y), 0.0, 1.0)

    def job(j):
        sigma, seed = j
        noisy = add_noise(clean_y, sigma, _stream(seed, _TEST_NOISE))
        x = np.clip(inv.raw(noisy), 0.0, 1.0)
        return float(np.mean([rmse(p, q) for p, q in zip(x, clean_x)]))

    jobs = [(s, seed) for s in sigmas for seed in seeds]
    out = _run_jobs(job, jobs, workers)
    return SweepResult(
        "sigma", list(sigmas), list(seeds), "rmse",
        np.array(out).reshape(len(sigmas), len(seeds)),
        {"n_test": len(maps)},
    )


test_noise_stability.__test__ = False  # not a pytest test despite the name


def rmse_bound(a: TransferMatrix, sigma: float) -> float:
    """Linear perturbation bound ``kappa * sigma * sqrt(M / N)`` on the recovery RMSE."""
    rep = spectrum(a)
    return rep.condition_number * sigma * np.sqrt(a.rows / a.cols)
