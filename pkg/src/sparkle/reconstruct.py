"""Recover a lightmap from one (masked) sensor image."""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

from .errors import RankDeficientError, SolverError
from .render import TransferMatrix

log = logging.getLogger(__name__)

KKT_TOL = 1e-8


@dataclass
class ReconstructionResult:
    lightmap: np.ndarray
    residual: float
    solver: str
    clamp_count: int
    residual_clamped: float = float("nan")
    raw: Optional[np.ndarray] = field(default=None, repr=False)


def _shape_lightmap(a: TransferMatrix, x: np.ndarray) -> np.ndarray:
    if a.screen_shape is None:
        return x
    if a.channels > 1:
        return x.reshape(a.channels, *a.screen_shape)
    return x.reshape(a.screen_shape)


def _finish(a: TransferMatrix, y: np.ndarray, x: np.ndarray, solver: str) -> ReconstructionResult:
    resid = float(np.linalg.norm(y - a.data @ x))
    out = (x < 0.0) | (x > 1.0)
    clamped = np.clip(x, 0.0, 1.0)
    return ReconstructionResult(
        lightmap=_shape_lightmap(a, clamped),
        residual=resid,
        solver=solver,
        clamp_count=int(out.sum()),
        residual_clamped=float(np.linalg.norm(y - a.data @ clamped)),
        raw=x,
    )


class LeastSquaresInverse:
    """Cached SVD pseudo-inverse of a full-column-rank transfer matrix."""

    def __init__(self, a: TransferMatrix, rcond: Optional[float] = None):
        self.matrix = a
        u, s, vt = np.linalg.svd(a.data, full_matrices=False)
        if rcond is None:
            rcond = max(a.data.shape) * np.finfo(float).eps
        cutoff = rcond * (s[0] if s.size else 0.0)
        rank = int(np.sum(s > cutoff))
        if rank < a.cols:
            raise RankDeficientError(
                f"transfer matrix has rank {rank} < {a.cols}; null space dimension {a.cols - rank}",
                nullity=a.cols - rank,
            )
        self._pinv = (vt.T / s) @ u.T
        self.singular_values = s

    def raw(self, y) -> np.ndarray:
        """Unclamped least-squares solution(s); ``y`` may hold one image per row."""
        y = np.asarray(y, dtype=float)
        if y.ndim == 2 and y.shape[1] in (self.matrix.rows, self.matrix.sensor_pixels):
            ys = np.stack([self.matrix.restrict(v) for v in y])
            return ys @ self._pinv.T
        return self._pinv @ self.matrix.restrict(y)

    def solve(self, y) -> ReconstructionResult:
        yv = self.matrix.restrict(y)
        return _finish(self.matrix, yv, self._pinv @ yv, "unconstrained")


def reconstruct_ls(a: TransferMatrix, y) -> ReconstructionResult:
    """Unconstrained least squares, then every pixel cropped into [0, 1].

    The reported residual is taken before cropping.
    """
    return LeastSquaresInverse(a).solve(y)


def nnls(a, b, max_iter: int = 10_000, tol: Optional[float] = None):
    """Lawson-Hanson active-set solver for ``min ||a x - b||`` with ``x >= 0``.

    Returns ``(x, kkt_residual)`` where the KKT residual is
    ``max |min(x, grad)|`` for the gradient ``a'(a x - b)``.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    m, n = a.shape
    if tol is None:
        tol = 10 * np.finfo(float).eps * max(m, n) * max(1.0, np.abs(a).sum(0).max()) * max(1.0, np.abs(b).max(initial=0))
    x = np.zeros(n)
    passive = np.zeros(n, dtype=bool)
    w = a.T @ b
    iters = 0
    while (~passive).any() and np.max(np.where(passive, -np.inf, w)) > tol:
        passive[np.argmax(np.where(passive, -np.inf, w))] = True
        while True:
            iters += 1
            if iters > max_iter:
                kkt = _kkt(a, b, x)
                raise SolverError(
                    f"NNLS exceeded {max_iter} iterations (KKT residual {kkt:.3g})",
                    best_iterate=x.copy(),
                    kkt_residual=kkt,
                )
            z = np.zeros(n)
            z[passive] = np.linalg.lstsq(a[:, passive], b, rcond=None)[0]
            if np.all(z[passive] > 0):
                x = z
                break
            neg = passive & (z <= 0)
            alpha = np.min(x[neg] / (x[neg] - z[neg]))
            x = x + alpha * (z - x)
            passive &= x > tol
            x[~passive] = 0.0
        w = a.T @ (b - a @ x)
    return x, _kkt(a, b, x)


def _kkt(a, b, x) -> float:
    g = a.T @ (a @ x - b)
    return float(np.max(np.abs(np.minimum(x, g)), initial=0.0))


def reconstruct_nnls(a: TransferMatrix, y, max_iter: int = 10_000) -> ReconstructionResult:
    """Non-negative least squares, then values above 1 cropped."""
    yv = a.restrict(y)
    x, kkt = nnls(a.data, yv, max_iter=max_iter)
    if kkt > KKT_TOL:
        log.warning("NNLS finished with KKT residual %.3g", kkt)
    return _finish(a, yv, x, "nonnegative")


def total_variation(x) -> float:
    """Anisotropic TV: sum of absolute forward differences along rows and columns."""
    x = np.asarray(x, dtype=float)
    return float(np.abs(np.diff(x, axis=-1)).sum() + np.abs(np.diff(x, axis=-2)).sum())


def shift_image(img, shift) -> np.ndarray:
    """Bilinear sub-pixel translation by ``shift = (dx, dy)``; outside samples read 0.

    Content moves by ``+dx`` columns and ``+dy`` rows.
    """
    img = np.asarray(img, dtype=float)
    dx, dy = shift
    offsets = (dy, dx) if img.ndim == 2 else (0,) * (img.ndim - 2) + (dy, dx)
    if dx == 0 and dy == 0:
        return img.copy()
    return ndimage.shift(img, offsets, order=1, mode="grid-constant", cval=0.0, prefilter=False)


@dataclass
class ShiftSearchConfig:
    shifts: list

    def __post_init__(self):
        self.shifts = [(float(dx), float(dy)) for dx, dy in self.shifts]
        if not self.shifts:
            raise ValueError("shift grid is empty")
        if (0.0, 0.0) not in self.shifts:
            raise ValueError("shift grid must contain the zero shift")

    @classmethod
    def grid(cls, lo: float, hi: float, step: float, two_d: bool = True) -> "ShiftSearchConfig":
        if step <= 0 or hi < lo:
            raise ValueError("need step > 0 and hi >= lo")
        count = int(np.floor((hi - lo) / step + 1e-9)) + 1
        vals = np.round(lo + step * np.arange(count), 10) + 0.0
        if two_d:
            shifts = [(dx, dy) for dy in vals for dx in vals]
        else:
            shifts = [(dx, 0.0) for dx in vals]
        return cls(shifts)


def reconstruct_with_shift_search(
    a: TransferMatrix,
    y,
    config: ShiftSearchConfig,
    workers: int = 1,
    inverse: Optional[LeastSquaresInverse] = None,
):
    """Try every candidate alignment of the unmasked image and keep the smoothest recovery.

    Each candidate shifts ``y`` bilinearly, masks it, solves by least squares
    and scores the recovered lightmap by total variation. Ties go to the
    smaller shift, then lexicographically. Returns
    ``(best_shift, result, scores)`` with ``scores`` mapping shift to TV.
    """
    y = np.asarray(y, dtype=float)
    if a.sensor_shape is not None and y.ndim == 1:
        y = y.reshape(a.sensor_shape if a.channels == 1 else (a.channels, *a.sensor_shape))
    if y.size != a.sensor_pixels:
        raise ValueError("shift search needs the full, unmasked sensor image")
    inv = inverse or LeastSquaresInverse(a)

    def run(shift):
        try:
            res = inv.solve(shift_image(y, shift).reshape(-1))
        except Exception as exc:  # noqa: BLE001 - reported per shift
            return shift, None, exc
        return shift, res, None

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            outcomes = list(pool.map(run, config.shifts))
    else:
        outcomes = [run(s) for s in config.shifts]

    scored = []
    errors = []
    for shift, res, exc in outcomes:
        if res is None:
            errors.append((shift, exc))
            continue
        scored.append((total_variation(res.lightmap), float(np.hypot(*shift)), shift, res))
    if not scored:
        raise SolverError(f"every shift candidate failed: {errors[0][1]}")
    scored.sort(key=lambda t: (t[0], t[1], t[2]))
    tv, _, best, res = scored[0]
    return best, res, {s: t for t, _, s, _ in scored}
