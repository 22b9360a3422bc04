"""Estimate the transfer matrix from probe responses.

The screen is driven with an impulse basis ``E``, the orthonormal 2-D DCT
basis ``D`` and ``K`` random patterns ``B``; the matrix minimising

    ||Y1 - A E||^2 + lam ||Y2 - A D||^2 + lam ||Y3 - A B||^2

over the retained sensor rows is ``(Y1 E' + lam Y2 D' + lam Y3 B') G^-1``
with Gram matrix ``G = E E' + lam D D' + lam B B'``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.fft
import scipy.linalg
from scipy.linalg.lapack import dpstrf

from .errors import CalibrationError, ConfigError
from .render import TransferMatrix
from .scene import make_rng

log = logging.getLogger(__name__)

BASIS_KINDS = ("impulse", "dct", "random")


@dataclass
class BasisSet:
    """Probe vectors stored as columns, with the affine map used to display them.

    A probe ``v`` is shown on the screen as ``offset + gain * v``.
    """

    kind: str
    vectors: np.ndarray
    gain: float = 1.0
    offset: float = 0.0

    def __post_init__(self):
        if self.kind not in BASIS_KINDS:
            raise ValueError(f"unknown basis kind {self.kind!r}")
        self.vectors = np.asarray(self.vectors, dtype=float)

    @property
    def dim(self) -> int:
        return self.vectors.shape[0]

    @property
    def count(self) -> int:
        return self.vectors.shape[1]

    def displayed(self) -> np.ndarray:
        return self.offset + self.gain * self.vectors


def dct_matrix(n: int) -> np.ndarray:
    """Orthonormal DCT-II matrix; row ``k`` is the ``k``-th basis function."""
    return scipy.fft.dct(np.eye(n), norm="ortho", axis=0)


def build_bases(shape, k: int, seed: int) -> tuple[BasisSet, BasisSet, BasisSet]:
    """Impulse, 2-D DCT and ``k`` uniform random probe sets for a ``(H, W)`` screen.

    An integer ``shape`` is read as a one-row screen. Random columns are drawn
    one probe at a time, so the first ``k`` columns do not depend on ``k``.
    """
    if k < 0:
        raise ConfigError("number of random probes must be >= 0")
    h, w = (1, int(shape)) if np.isscalar(shape) else (int(shape[0]), int(shape[1]))
    n = h * w
    e = BasisSet("impulse", np.eye(n))
    d = BasisSet("dct", np.kron(dct_matrix(h), dct_matrix(w)).T, gain=0.5, offset=0.5)
    rng = make_rng(seed)
    b = BasisSet("random", rng.random((k, n)).T)
    return e, d, b


def expand_color(bases, channels: int = 3):
    """Repeat every probe once per colour channel (block-diagonal probe sets)."""
    if channels < 1:
        raise ConfigError("channels must be >= 1")
    eye = np.eye(channels)
    return tuple(
        None if b is None else BasisSet(b.kind, np.kron(eye, b.vectors), b.gain, b.offset) for b in bases
    )


@dataclass
class BrightMask:
    """Union of the brightest sensor pixels of every impulse response."""

    indices: np.ndarray
    per_impulse: list = field(repr=False)
    fraction: float = 0.01
    n_pixels: int = 0

    def __len__(self):
        return len(self.indices)


def _as_columns(responses) -> np.ndarray:
    if isinstance(responses, np.ndarray) and responses.ndim == 2:
        return responses
    cols = [np.asarray(r, dtype=float).reshape(-1) for r in responses]
    if not cols:
        raise ValueError("no responses given")
    if len({c.size for c in cols}) != 1:
        raise ValueError("responses differ in size")
    return np.column_stack(cols)


def bright_mask(impulse_responses, fraction: float = 0.01) -> BrightMask:
    """Keep the ``ceil(fraction * M)`` brightest pixels of each response; ties go to the lower index."""
    y = _as_columns(impulse_responses)
    if y.shape[1] == 0:
        raise ValueError("no responses given")
    if not 0 < fraction <= 1:
        raise ConfigError("fraction must lie in (0, 1]")
    m = y.shape[0]
    keep = math.ceil(fraction * m)
    per = [np.sort(np.argsort(-y[:, i], kind="stable")[:keep]) for i in range(y.shape[1])]
    union = np.unique(np.concatenate(per))
    return BrightMask(union, per, fraction, m)


@dataclass
class CalibrationConfig:
    lam: Optional[float] = None  # None means 1/N
    fraction: float = 0.01
    k: int = 0
    tol: float = 1e-12
    use_mask: bool = True

    def __post_init__(self):
        if self.lam is not None and not self.lam > 0:
            raise ConfigError("lambda must be positive")
        if not 0 < self.fraction <= 1:
            raise ConfigError("fraction must lie in (0, 1]")
        if self.k < 0:
            raise ConfigError("k must be >= 0")

    def weight(self, n: int) -> float:
        return 1.0 / n if self.lam is None else float(self.lam)


def _solve_gram(gram: np.ndarray, rhs: np.ndarray, tol: float) -> np.ndarray:
    """Solve ``gram @ X = rhs`` for symmetric PSD ``gram`` via pivoted Cholesky."""
    n = gram.shape[0]
    scale = max(float(np.max(np.diag(gram))), np.finfo(float).tiny)
    try:
        c, piv, rank, info = dpstrf(gram, tol=tol * scale)
    except Exception:  # pragma: no cover - LAPACK wrapper failure
        info, rank = -1, -1
    if info < 0:
        log.warning("pivoted Cholesky failed (info=%s); using pseudo-inverse", info)
        return np.linalg.pinv(gram, rcond=tol, hermitian=True) @ rhs
    if rank < n:
        vals, vecs = np.linalg.eigh(gram)
        weak = vecs[:, vals <= tol * scale]
        raise CalibrationError(
            f"probe Gram matrix has rank {rank} < {n}; {weak.shape[1]} unconstrained directions",
            deficient_directions=weak,
        )
    u = np.triu(c)
    p = piv - 1
    z = scipy.linalg.solve_triangular(u, rhs[p], trans="T")
    v = scipy.linalg.solve_triangular(u, z)
    out = np.empty_like(v)
    out[p] = v
    return out


def calibrate_matrix(
    y1,
    y2,
    y3,
    bases,
    mask: Optional[BrightMask] = None,
    config: Optional[CalibrationConfig] = None,
    screen_shape: Optional[tuple] = None,
    sensor_shape: Optional[tuple] = None,
    channels: int = 1,
) -> TransferMatrix:
    """Least-squares transfer matrix from impulse, DCT and random probe responses.

    ``y1``, ``y2``, ``y3`` hold one response per column over the full sensor
    (any of them may be ``None`` together with its basis); responses must
    already be background-subtracted and, for displayed probes, de-biased.
    With a mask only the masked rows are estimated.
    """
    config = config or CalibrationConfig()
    terms = []
    n = None
    for y, b, is_impulse in zip((y1, y2, y3), bases, (True, False, False)):
        if y is None or b is None or b.count == 0:
            continue
        y = np.asarray(y, dtype=float)
        if y.ndim != 2 or y.shape[1] != b.count:
            raise ValueError(f"{b.kind} responses need {b.count} columns, got shape {y.shape}")
        n = b.dim if n is None else n
        if b.dim != n:
            raise ValueError("probe sets disagree on the lightmap size")
        terms.append((y, b, is_impulse))
    if not terms:
        raise ValueError("no probe responses supplied")
    lam = config.weight(n)

    m_full = terms[0][0].shape[0]
    if any(t[0].shape[0] != m_full for t in terms):
        raise ValueError("responses differ in row count")
    rows = None if mask is None else mask.indices
    if rows is not None and rows.size and rows.max() >= m_full:
        raise ValueError("mask indexes beyond the sensor")

    gram = np.zeros((n, n))
    rhs = np.zeros((n, m_full if rows is None else len(rows)))
    for y, b, is_impulse in terms:
        wgt = 1.0 if is_impulse else lam
        v = b.vectors
        yr = y if rows is None else y[rows]
        if b.kind == "impulse" and np.array_equal(v, np.eye(n)):
            gram += wgt * np.eye(n)
            rhs += wgt * yr.T
        else:
            gram += wgt * (v @ v.T)
            rhs += wgt * (v @ yr.T)
    a = _solve_gram(gram, rhs, config.tol).T
    return TransferMatrix(
        a,
        provenance="calibrated",
        mask=None if rows is None else rows.copy(),
        sensor_pixels=m_full,
        screen_shape=screen_shape,
        sensor_shape=sensor_shape,
        channels=channels,
    )


def objective(a, y1, y2, y3, bases, lam: float) -> float:
    """Weighted probe misfit that :func:`calibrate_matrix` minimises."""
    a = np.asarray(a, dtype=float)
    total = 0.0
    for y, b, wgt in zip((y1, y2, y3), bases, (1.0, lam, lam)):
        if y is None or b is None or b.count == 0:
            continue
        total += wgt * np.sum((y - a @ b.vectors) ** 2)
    return float(total)


@dataclass
class ProbeResponses:
    impulse: np.ndarray
    dct: np.ndarray
    random: np.ndarray


def _noisy(clean, sigma, z):
    if sigma == 0:
        return clean
    return np.maximum(clean + sigma * z, 0.0)


def simulate_responses(
    a,
    bases,
    sigma: float = 0.0,
    seed: int = 0,
    display: bool = True,
    flat_repeats: int = 16,
) -> ProbeResponses:
    """Render every probe through ``a`` and add clipped i.i.d. Gaussian noise.

    With ``display=True`` each probe is shown as ``offset + gain * v``; the
    flat-field response to ``offset`` is averaged over ``flat_repeats``
    noisy captures and removed, then the result is divided by ``gain``.
    Without it, signed probes are rendered directly (noise-free use only).
    Noise streams are per probe kind and per column, so the responses to
    the first ``k`` random probes do not depend on how many are simulated.
    """
    a = np.asarray(a, dtype=float)
    m, n = a.shape
    ss = np.random.SeedSequence(seed).spawn(4)
    out = []
    for b, s in zip(bases, ss[:3]):
        if b is None or b.count == 0:
            out.append(np.zeros((m, 0)))
            continue
        z = make_rng(s).standard_normal((b.count, m)).T
        if not display or (b.gain == 1.0 and b.offset == 0.0):
            if not display and sigma > 0 and b.vectors.min() < 0:
                raise ValueError("signed probes cannot be measured with clipped noise; use display=True")
            out.append(_noisy(a @ b.vectors, sigma, z))
            continue
        shown = _noisy(a @ b.displayed(), sigma, z)
        flat_clean = a @ np.full(n, b.offset)
        zf = make_rng(ss[3]).standard_normal((flat_repeats, m))
        flat = np.mean([_noisy(flat_clean, sigma, zi) for zi in zf], axis=0)
        out.append((shown - flat[:, None]) / b.gain)
    return ProbeResponses(*out)
