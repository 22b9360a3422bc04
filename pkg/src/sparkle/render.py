"""Forward simulation: trace camera rays off the facets onto the screen.

Each sensor pixel images exactly one facet. With ``supersample=k`` a facet is
probed by ``k*k`` camera rays through a regular sub-grid of the cell and the
pixel records their mean. A ray's radiometric weight is the cosine between
the incoming camera ray and the facet normal divided by the squared facet to
screen distance, normalised so the largest weight over the surface is 1.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import ConfigError
from .scene import (
    CameraModel,
    FacetSurface,
    OrientationDistribution,
    ScreenModel,
    SurfaceConfig,
    make_rng,
    sample_surface,
)

log = logging.getLogger(__name__)

MISS = -1
_PARALLEL_EPS = 1e-12

PROVENANCES = ("simulated", "calibrated")


@dataclass
class TransferMatrix:
    """Dense linear map from a flattened lightmap to (masked) sensor values.

    ``mask`` holds the retained sensor rows as sorted indices into the full
    sensor vector of length ``sensor_pixels``; ``None`` means every row.
    Lightmaps and sensor images flatten row-major, channel-major for colour.
    """

    data: np.ndarray
    provenance: str = "simulated"
    mask: Optional[np.ndarray] = None
    sensor_pixels: Optional[int] = None
    screen_shape: Optional[tuple] = None
    sensor_shape: Optional[tuple] = None
    channels: int = 1

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        if self.data.ndim != 2:
            raise ValueError("transfer matrix must be 2-D")
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("transfer matrix has non-finite entries")
        if self.mask is not None:
            self.mask = np.asarray(self.mask, dtype=np.int64)
            if len(self.mask) != self.data.shape[0]:
                raise ValueError("mask length must equal the number of rows")
        if self.sensor_pixels is None:
            self.sensor_pixels = self.data.shape[0] if self.mask is None else int(self.mask.max()) + 1

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    def __matmul__(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 2 and x.shape[0] == self.cols:
            return self.data @ x
        return self.data @ x.reshape(self.cols)

    def restrict(self, y) -> np.ndarray:
        """Flatten a sensor image and keep the rows this matrix was built on.

        Accepts either a full sensor image (``sensor_pixels`` values) or an
        already-restricted vector of ``rows`` values.
        """
        y = np.asarray(y, dtype=float)
        flat = y.reshape(-1)
        if flat.size == self.sensor_pixels:
            return flat if self.mask is None else flat[self.mask]
        if flat.size == self.rows:
            return flat
        from .errors import MaskMismatchError

        raise MaskMismatchError(
            f"image has {flat.size} values; matrix expects {self.sensor_pixels} (full) or {self.rows} (masked)"
        )

    def select_rows(self, indices) -> "TransferMatrix":
        """Row-restricted copy; ``indices`` refer to the full sensor vector."""
        idx = np.asarray(indices, dtype=np.int64)
        if self.mask is None:
            rows = idx
        else:
            pos = {int(m): i for i, m in enumerate(self.mask)}
            try:
                rows = np.array([pos[int(i)] for i in idx], dtype=np.int64)
            except KeyError as exc:
                raise ValueError(f"sensor row {exc} is not present in this matrix") from None
        return replace(self, data=self.data[rows], mask=idx.copy())


@dataclass
class RayHits:
    """Per-facet ray targets and weights, both shaped ``(facets, rays_per_facet)``."""

    targets: np.ndarray
    weights: np.ndarray
    screen_shape: tuple
    sensor_shape: tuple

    @property
    def n_screen(self) -> int:
        return int(np.prod(self.screen_shape))


def _subpixel_offsets(k: int) -> np.ndarray:
    f = (np.arange(k) + 0.5) / k - 0.5
    gx, gy = np.meshgrid(f, f)
    return np.column_stack([gx.ravel(), gy.ravel()])


def _check_camera(surface: FacetSurface, camera: CameraModel):
    cfg = surface.config
    if camera.resolution is not None and tuple(camera.resolution) != (cfg.rows, cfg.cols):
        raise ConfigError(
            f"camera resolution {tuple(camera.resolution)} must equal facet grid {(cfg.rows, cfg.cols)}"
        )
    height = (camera.center - cfg.pose_matrix[:, 3]) @ cfg.base_normal
    if abs(height) < _PARALLEL_EPS:
        raise ConfigError("camera lies on the facet plane")
    if height < 0:
        raise ConfigError("camera is behind the facet plane")


def reflect_rays(points, normals, camera_center, screen: ScreenModel):
    """Trace camera rays through ``points`` off mirrors with ``normals``.

    Returns ``(targets, cos_in, distance)``; targets are flat screen indices
    with ``MISS`` for rays that hit the facet back face, run parallel to the
    screen, leave the screen extent or reach the screen from behind.
    """
    d = points - camera_center
    d = d / np.linalg.norm(d, axis=-1, keepdims=True)
    cos_in = -np.einsum("...i,...i->...", d, normals)
    r = d + 2.0 * cos_in[..., None] * normals
    _, _, ns = screen.axes
    denom = r @ ns
    with np.errstate(divide="ignore", invalid="ignore"):
        t = ((np.asarray(screen.center, dtype=float) - points) @ ns) / denom
    ok = (cos_in > 0) & (denom < -_PARALLEL_EPS) & (t > 0)
    hit = points + np.where(ok, t, 0.0)[..., None] * r
    targets = screen.locate(hit)
    targets[~ok] = MISS
    return targets, cos_in, np.where(ok, t, np.inf)


def trace(surface: FacetSurface, screen: ScreenModel, camera: CameraModel, supersample: int = 1) -> RayHits:
    if supersample < 1:
        raise ConfigError("supersample must be >= 1")
    _check_camera(surface, camera)
    cfg = surface.config
    offsets = _subpixel_offsets(supersample)
    pts = cfg.to_world(cfg.local_points(offsets))
    normals = np.broadcast_to(surface.normals[:, :, None, :], pts.shape)
    targets, cos_in, dist = reflect_rays(pts, normals, camera.center, screen)
    raw = np.where(targets >= 0, cos_in / dist**2, 0.0)
    peak = raw.max(initial=0.0)
    weights = raw / peak / offsets.shape[0] if peak > 0 else raw
    n_rays = offsets.shape[0]
    return RayHits(
        targets=targets.reshape(-1, n_rays),
        weights=weights.reshape(-1, n_rays),
        screen_shape=screen.shape,
        sensor_shape=(cfg.rows, cfg.cols),
    )


def facet_pixel_map(surface: FacetSurface, screen: ScreenModel, camera: CameraModel) -> np.ndarray:
    """Screen pixel hit by each facet's center ray, ``(rows, cols)``, ``MISS`` = -1."""
    _check_camera(surface, camera)
    pts = surface.config.facet_centers()
    targets, _, _ = reflect_rays(pts, surface.normals, camera.center, screen)
    return targets


def _lightmap_matrix(x, screen_shape) -> tuple[np.ndarray, int]:
    x = np.asarray(x, dtype=float)
    if x.shape[-2:] != tuple(screen_shape) or x.ndim not in (2, 3):
        raise ValueError(f"lightmap shape {x.shape} does not match screen {tuple(screen_shape)}")
    channels = 1 if x.ndim == 2 else x.shape[0]
    return x.reshape(channels, -1), channels


def render_hits(hits: RayHits, x) -> np.ndarray:
    xs, channels = _lightmap_matrix(x, hits.screen_shape)
    safe = np.where(hits.targets >= 0, hits.targets, 0)
    out = np.zeros((channels, hits.targets.shape[0]))
    for s in range(hits.targets.shape[1]):
        out += hits.weights[:, s] * xs[:, safe[:, s]]
    shape = hits.sensor_shape if channels == 1 and np.ndim(x) == 2 else (channels, *hits.sensor_shape)
    return out.reshape(shape)


def render_image(surface, screen, camera, x, supersample: int = 1) -> np.ndarray:
    """Sensor image of ``surface`` under lightmap ``x`` (``(H, W)`` or ``(C, H, W)``)."""
    return render_hits(trace(surface, screen, camera, supersample), x)


def hits_to_matrix(hits: RayHits, channels: int = 1) -> TransferMatrix:
    m = hits.targets.shape[0]
    a = np.zeros((m, hits.n_screen))
    for s in range(hits.targets.shape[1]):
        ok = hits.targets[:, s] >= 0
        np.add.at(a, (np.flatnonzero(ok), hits.targets[ok, s]), hits.weights[ok, s])
    if channels > 1:
        a = np.kron(np.eye(channels), a)
    return TransferMatrix(
        a,
        provenance="simulated",
        sensor_pixels=a.shape[0],
        screen_shape=tuple(hits.screen_shape),
        sensor_shape=tuple(hits.sensor_shape),
        channels=channels,
    )


def build_transfer_matrix(surface, screen, camera, supersample: int = 1, channels: int = 1) -> TransferMatrix:
    """Column ``i`` is the rendered response to impulse ``e_i``.

    Colour worlds without cross-talk are block diagonal over channels.
    """
    return hits_to_matrix(trace(surface, screen, camera, supersample), channels)


def build_diffuse_transfer_matrix(config: SurfaceConfig, screen: ScreenModel, camera: CameraModel) -> TransferMatrix:
    """Matte reflector on the same geometry: every sensor pixel integrates the whole screen.

    Entry ``(m, j)`` is the point-to-patch form factor between facet center
    ``m`` (Lambertian, base-plane normal) and screen pixel ``j``.
    """
    q = config.facet_centers().reshape(-1, 3)
    p = screen.pixel_centers().reshape(-1, 3)
    d = p[None, :, :] - q[:, None, :]
    r2 = np.einsum("mji,mji->mj", d, d)
    r = np.sqrt(r2)
    cos_f = (d @ config.base_normal) / r
    _, _, ns = screen.axes
    cos_s = -(d @ ns) / r
    a = np.where((cos_f > 0) & (cos_s > 0), cos_f * cos_s / r2, 0.0)
    a /= a.max()
    return TransferMatrix(
        a,
        provenance="simulated",
        sensor_pixels=a.shape[0],
        screen_shape=screen.shape,
        sensor_shape=(config.rows, config.cols),
    )


@dataclass
class CoverageMap:
    """Per-screen-pixel probability of being reflected into the camera."""

    probability: np.ndarray
    clamped: int = 0
    per_facet_max: float = 0.0
    stderr: Optional[np.ndarray] = field(default=None, repr=False)
    trials: int = 0


def facet_reflection_probability(
    screen: ScreenModel,
    camera: CameraModel,
    points: np.ndarray,
    base_normal,
    dist: OrientationDistribution,
    model: str = "exact",
) -> np.ndarray:
    """Probability that the facet at each of ``points`` reflects each screen pixel to the camera.

    Returns an array ``(n_points, n_screen_pixels)`` before clamping.

    ``model="literal"`` evaluates the small-angle expression
    ``P(theta0) * w^2 cos(theta) / (4 |p - q|)`` literally. ``model="exact"``
    is its dimensionally consistent counterpart: the slant density is
    converted to a density per steradian of normal directions
    (``/ (2 pi sin theta0)``, truncated at pi/2 as the sampler is), the pixel
    solid angle is ``w^2 cos(theta) / |p - q|^2`` and the half-vector
    Jacobian is ``1 / (4 cos(theta_d))``. In both, ``theta0`` is the slant
    of the bisector of the directions to the pixel and to the camera and
    ``theta`` the angle between the pixel ray and the screen normal.
    """
    if dist.sigma_theta <= 0:
        raise ValueError("analytic coverage needs sigma_theta > 0")
    if model not in ("exact", "literal"):
        raise ValueError(f"unknown coverage model {model!r}")
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    p = screen.pixel_centers().reshape(-1, 3)
    if points.shape[0] == 0:
        return np.zeros((0, p.shape[0]))
    n0 = np.asarray(base_normal, dtype=float)
    wi = p[None, :, :] - points[:, None, :]
    dist_pq = np.linalg.norm(wi, axis=-1)
    wi = wi / dist_pq[..., None]
    wo = camera.center - points
    wo = wo / np.linalg.norm(wo, axis=-1, keepdims=True)
    h = wi + wo[:, None, :]
    h = h / np.linalg.norm(h, axis=-1, keepdims=True)
    cos0 = np.clip(h @ n0, -1.0, 1.0)
    theta0 = np.arccos(cos0)
    _, _, ns = screen.axes
    cos_s = -(wi @ ns)
    area = screen.pixel_width**2 * np.clip(cos_s, 0.0, None)
    visible = (cos_s > 0) & (cos0 > 0) & (wo @ n0 > 0)[:, None]
    if model == "literal":
        prob = dist.slant_pdf(theta0) * area / (4.0 * dist_pq)
    else:
        cos_d = np.einsum("fpi,fi->fp", h, wo)
        with np.errstate(divide="ignore", invalid="ignore"):
            per_sr = dist.slant_pdf(theta0) / dist.truncation_mass / (2 * np.pi * np.sin(theta0))
            prob = per_sr * area / dist_pq**2 / (4.0 * cos_d)
        prob = np.where(theta0 < np.pi / 2, prob, 0.0)
        prob = np.nan_to_num(prob, nan=np.inf)
    return np.where(visible, prob, 0.0)


def coverage_probability_analytic(
    screen: ScreenModel,
    camera: CameraModel,
    surface,
    dist: OrientationDistribution,
    model: str = "exact",
) -> CoverageMap:
    """Chance that each screen pixel is reflected into the camera by at least one facet.

    ``surface`` is a :class:`SurfaceConfig` (or a sampled surface, whose
    configuration is used). Per-facet probabilities above 1 are clamped and
    counted.
    """
    config = surface.config if isinstance(surface, FacetSurface) else surface
    per_facet = facet_reflection_probability(
        screen, camera, config.facet_centers(), config.base_normal, dist, model
    )
    over = per_facet > 1.0
    n_over = int(over.sum())
    if n_over:
        log.warning("%d per-facet probabilities exceeded 1 and were clamped", n_over)
    per_facet = np.minimum(per_facet, 1.0)
    miss = np.prod(1.0 - per_facet, axis=0)
    return CoverageMap(
        probability=(1.0 - miss).reshape(screen.shape),
        clamped=n_over,
        per_facet_max=float(per_facet.max(initial=0.0)),
    )


def coverage_probability_mc(
    screen: ScreenModel,
    camera: CameraModel,
    config: SurfaceConfig,
    dist: OrientationDistribution,
    trials: int,
    seed: int,
) -> CoverageMap:
    """Hit frequency of each screen pixel over ``trials`` independently sampled surfaces."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    seeds = np.random.SeedSequence(seed).generate_state(trials)
    counts = np.zeros(screen.n_pixels)
    for s in seeds:
        surface = sample_surface(config, dist, int(s))
        targets = facet_pixel_map(surface, screen, camera)
        hit = np.unique(targets[targets >= 0])
        counts[hit] += 1
    freq = counts / trials
    stderr = np.sqrt(freq * (1 - freq) / trials)
    return CoverageMap(
        probability=freq.reshape(screen.shape),
        stderr=stderr.reshape(screen.shape),
        trials=trials,
    )


def random_lightmaps(screen_shape, count: int, seed, channels: int = 1) -> np.ndarray:
    """``count`` i.i.d. uniform [0, 1] lightmaps, shape ``(count, [C,] H, W)``."""
    rng = make_rng(seed)
    shape = (count, *screen_shape) if channels == 1 else (count, channels, *screen_shape)
    return rng.random(shape)
