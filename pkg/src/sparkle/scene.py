"""Scene geometry: the screen, the pinhole camera and the random facet surface.

Conventions
-----------
World coordinates are right-handed. A facet surface lives on its local z=0
plane with outward normal +z; ``pose`` is a 3x4 matrix ``[R | t]`` mapping
local to world coordinates. Facet ``(r, c)`` covers one cell of a regular
grid; row 0 sits at local +y, column 0 at local -x. Its representative point
is the cell center.

Every stochastic routine takes an explicit seed or ``numpy.random.Generator``;
generators are Philox-backed so streams are counter-based and splittable.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError

IDENTITY_POSE = (1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0)


def make_rng(seed) -> np.random.Generator:
    """Counter-based generator for an integer seed or a ``SeedSequence``."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.Philox(seed))


def spawn_seeds(seed: int, n: int) -> list[np.random.SeedSequence]:
    return np.random.SeedSequence(seed).spawn(n)


def _unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v)
    if n == 0:
        raise ConfigError("zero-length direction vector")
    return v / n


def _as_pose(pose) -> np.ndarray:
    p = np.asarray(pose, dtype=float)
    if p.size != 12:
        raise ConfigError(f"pose must hold 12 values, got {p.size}")
    p = p.reshape(3, 4)
    r = p[:, :3]
    if not np.allclose(r.T @ r, np.eye(3), atol=1e-9) or np.linalg.det(r) < 0:
        raise ConfigError("pose rotation is not a proper rotation matrix")
    return p


@dataclass(frozen=True)
class ScreenModel:
    """Planar emitter of ``height_pixels x width_pixels`` square pixels.

    ``normal`` points toward the side the screen emits into; ``up`` fixes the
    in-plane orientation (it is orthogonalised against ``normal``).
    """

    width_pixels: int
    height_pixels: int
    pixel_width: float
    center: tuple = (0.0, 2.0, 2.0)
    normal: tuple = (0.0, -1.0, -1.0)
    up: tuple = (0.0, -1.0, 1.0)

    def __post_init__(self):
        if self.width_pixels < 1 or self.height_pixels < 1:
            raise ConfigError("screen must have at least one pixel per side")
        if not self.pixel_width >= 0:
            raise ConfigError("pixel_width must be non-negative")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height_pixels, self.width_pixels)

    @property
    def n_pixels(self) -> int:
        return self.width_pixels * self.height_pixels

    @property
    def axes(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Orthonormal ``(right, up, normal)`` frame of the screen plane."""
        n = _unit(self.normal)
        up = np.asarray(self.up, dtype=float)
        v = _unit(up - (up @ n) * n)
        u = np.cross(v, n)
        return u, v, n

    @property
    def pose(self) -> np.ndarray:
        u, v, n = self.axes
        return np.column_stack([u, v, n, np.asarray(self.center, dtype=float)])

    def pixel_centers(self) -> np.ndarray:
        """World positions of pixel centers, shape ``(H, W, 3)``; row 0 is the top row."""
        u, v, _ = self.axes
        h, w = self.shape
        cols = (np.arange(w) - (w - 1) / 2) * self.pixel_width
        rows = ((h - 1) / 2 - np.arange(h)) * self.pixel_width
        c = np.asarray(self.center, dtype=float)
        return c + rows[:, None, None] * v + cols[None, :, None] * u

    def locate(self, points: np.ndarray) -> np.ndarray:
        """Flat pixel index of in-plane world points, ``-1`` outside the screen."""
        u, v, _ = self.axes
        d = points - np.asarray(self.center, dtype=float)
        h, w = self.shape
        with np.errstate(divide="ignore", invalid="ignore"):
            col = np.floor(d @ u / self.pixel_width + w / 2)
            row = np.floor(h / 2 - d @ v / self.pixel_width)
        ok = (col >= 0) & (col < w) & (row >= 0) & (row < h)
        idx = np.full(points.shape[:-1], -1, dtype=np.int64)
        idx[ok] = (row[ok] * w + col[ok]).astype(np.int64)
        return idx


@dataclass(frozen=True)
class CameraModel:
    """Pinhole camera focused on the facet plane.

    Sensor pixel ``(r, c)`` images facet ``(r, c)``; ``resolution`` defaults to
    the facet grid and, when given, must match it.
    """

    position: tuple = (0.0, -2.0, 2.0)
    look_at: tuple = (0.0, 0.0, 0.0)
    resolution: Optional[tuple] = None

    def __post_init__(self):
        if self.resolution is not None and min(self.resolution) < 1:
            raise ConfigError("sensor resolution must be >= 1 in each dimension")

    @property
    def center(self) -> np.ndarray:
        return np.asarray(self.position, dtype=float)

    @property
    def orientation(self) -> np.ndarray:
        """Rotation whose third column is the optical axis."""
        z = _unit(np.asarray(self.look_at, dtype=float) - self.center)
        helper = np.array([0.0, 0.0, 1.0]) if abs(z[2]) < 0.9 else np.array([0.0, 1.0, 0.0])
        x = _unit(np.cross(helper, z))
        y = np.cross(z, x)
        return np.column_stack([x, y, z])


@dataclass(frozen=True)
class OrientationDistribution:
    """Half-Gaussian slant with scale ``sigma_theta``; tilt uniform on [0, 2pi)."""

    sigma_theta: float

    def __post_init__(self):
        if not self.sigma_theta >= 0:
            raise ConfigError("sigma_theta must be >= 0")

    def slant_pdf(self, theta) -> np.ndarray:
        """Half-Gaussian density (untruncated), zero for negative slant."""
        theta = np.asarray(theta, dtype=float)
        s = self.sigma_theta
        if s == 0:
            raise ValueError("density undefined for sigma_theta = 0")
        pdf = 2.0 / (np.sqrt(2 * np.pi) * s) * np.exp(-(theta**2) / (2 * s * s))
        return np.where(theta >= 0, pdf, 0.0)

    def slant_cdf(self, theta) -> np.ndarray:
        from scipy.special import erf

        theta = np.asarray(theta, dtype=float)
        if self.sigma_theta == 0:
            return (theta >= 0).astype(float)
        return np.where(theta >= 0, erf(theta / (np.sqrt(2) * self.sigma_theta)), 0.0)

    @property
    def truncation_mass(self) -> float:
        """Half-Gaussian mass below pi/2 (the rejection sampler's acceptance rate)."""
        return float(self.slant_cdf(np.pi / 2))


@dataclass(frozen=True)
class SurfaceConfig:
    rows: int
    cols: int
    size: tuple = (1.0, 1.0)
    pose: tuple = IDENTITY_POSE

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ConfigError("facet grid must be at least 1x1")
        if min(self.size) <= 0:
            raise ConfigError("surface extent must be positive")
        _as_pose(self.pose)

    @property
    def n_facets(self) -> int:
        return self.rows * self.cols

    @property
    def pose_matrix(self) -> np.ndarray:
        return _as_pose(self.pose)

    @property
    def base_normal(self) -> np.ndarray:
        return self.pose_matrix[:, 2].copy()

    @property
    def cell_size(self) -> tuple[float, float]:
        return (self.size[0] / self.cols, self.size[1] / self.rows)

    def local_points(self, offsets: Optional[np.ndarray] = None) -> np.ndarray:
        """Local-frame points, shape ``(rows, cols, S, 3)``.

        ``offsets`` are ``(S, 2)`` fractions of a cell in [-0.5, 0.5]; the
        default is the cell center.
        """
        if offsets is None:
            offsets = np.zeros((1, 2))
        cx, cy = self.cell_size
        x = -self.size[0] / 2 + (np.arange(self.cols) + 0.5) * cx
        y = self.size[1] / 2 - (np.arange(self.rows) + 0.5) * cy
        pts = np.zeros((self.rows, self.cols, len(offsets), 3))
        pts[..., 0] = x[None, :, None] + offsets[None, None, :, 0] * cx
        pts[..., 1] = y[:, None, None] - offsets[None, None, :, 1] * cy
        return pts

    def to_world(self, local: np.ndarray) -> np.ndarray:
        p = self.pose_matrix
        return local @ p[:, :3].T + p[:, 3]

    def facet_centers(self) -> np.ndarray:
        """World facet centers, shape ``(rows, cols, 3)``."""
        return self.to_world(self.local_points())[:, :, 0, :]


@dataclass(frozen=True)
class FacetSurface:
    config: SurfaceConfig
    normals: np.ndarray = field(repr=False)
    seed: int = 0
    sigma_theta: float = 0.0

    def __post_init__(self):
        n = np.asarray(self.normals, dtype=float)
        if n.shape != (self.config.rows, self.config.cols, 3):
            raise ConfigError(f"normals shape {n.shape} does not match grid")
        n = n.copy()
        n.flags.writeable = False
        object.__setattr__(self, "normals", n)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.config.rows, self.config.cols)

    @property
    def n_facets(self) -> int:
        return self.config.n_facets

    def slants(self) -> np.ndarray:
        cos = np.clip(self.normals @ self.config.base_normal, -1.0, 1.0)
        return np.arccos(cos)

    def with_normal(self, row: int, col: int, normal: Sequence[float]) -> "FacetSurface":
        n = np.array(self.normals)
        n[row, col] = _unit(normal)
        return FacetSurface(self.config, n, self.seed, self.sigma_theta)


def sample_slant(dist: OrientationDistribution, rng, size=None):
    """Draw slants from the half-Gaussian, rejecting values at or above pi/2."""
    rng = make_rng(rng)
    n = 1 if size is None else int(np.prod(size))
    if dist.sigma_theta == 0:
        out = np.zeros(n)
    else:
        out = np.abs(rng.normal(0.0, dist.sigma_theta, n))
        bad = np.flatnonzero(out >= np.pi / 2)
        while bad.size:
            out[bad] = np.abs(rng.normal(0.0, dist.sigma_theta, bad.size))
            bad = bad[out[bad] >= np.pi / 2]
    if size is None:
        return float(out[0])
    return out.reshape(size)


def normals_from_angles(theta: np.ndarray, phi: np.ndarray, rotation: np.ndarray) -> np.ndarray:
    st = np.sin(theta)
    local = np.stack([st * np.cos(phi), st * np.sin(phi), np.cos(theta)], axis=-1)
    n = local @ rotation.T
    return n / np.linalg.norm(n, axis=-1, keepdims=True)


def sample_surface(config: SurfaceConfig, dist: OrientationDistribution, seed: int) -> FacetSurface:
    """Independently sample every facet orientation; deterministic in ``seed``."""
    rng = make_rng(seed)
    shape = (config.rows, config.cols)
    theta = sample_slant(dist, rng, size=shape)
    phi = rng.uniform(0.0, 2 * np.pi, size=shape)
    normals = normals_from_angles(theta, phi, config.pose_matrix[:, :3])
    return FacetSurface(config, normals, seed=int(seed), sigma_theta=dist.sigma_theta)


def flat_surface(config: SurfaceConfig) -> FacetSurface:
    normals = np.broadcast_to(config.base_normal, (config.rows, config.cols, 3))
    return FacetSurface(config, normals, seed=0, sigma_theta=0.0)
