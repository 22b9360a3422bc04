"""Declarative experiment configuration (JSON, versioned)."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .calibrate import CalibrationConfig
from .errors import ConfigError
from .render import build_transfer_matrix
from .scene import CameraModel, OrientationDistribution, ScreenModel, SurfaceConfig, sample_surface

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class SceneConfig:
    """Geometry of one simulated setup.

    The default is the sweep scene: a 10x10 screen seen through 120x120
    facets with slant scale 0.3 rad and 3x3 rays per facet.
    """

    screen: ScreenModel = ScreenModel(10, 10, 0.15)
    camera: CameraModel = CameraModel(position=(0.0, -6.0, 6.0))
    surface: SurfaceConfig = SurfaceConfig(120, 120, (1.0, 1.0))
    sigma_theta: float = 0.3
    surface_seed: int = 0
    supersample: int = 3

    @property
    def distribution(self) -> OrientationDistribution:
        return OrientationDistribution(self.sigma_theta)

    def sample_surface(self):
        return sample_surface(self.surface, self.distribution, self.surface_seed)

    def transfer_matrix(self, channels: int = 1):
        return build_transfer_matrix(
            self.sample_surface(), self.screen, self.camera, self.supersample, channels=channels
        )

    def with_facets(self, rows: int, cols: Optional[int] = None) -> "SceneConfig":
        return replace(self, surface=replace(self.surface, rows=rows, cols=cols or rows))


def misalignment_scene() -> SceneConfig:
    """Sweep scene with a coarser 60x60 facet grid (a few facets per screen pixel)."""
    return SceneConfig().with_facets(60)


@dataclass
class SweepGrid:
    sigmas: list = field(default_factory=lambda: [0.0, 0.01, 0.02, 0.05, 0.1])
    k_values: list = field(default_factory=lambda: [0, 25, 50, 75, 100])
    basis_sigma: float = 0.01
    test_sigmas: list = field(default_factory=lambda: [0.0, 0.04, 0.08, 0.12, 0.16])
    seeds: list = field(default_factory=lambda: list(range(10)))
    n_test: int = 20
    mode: str = "both"


@dataclass
class ShiftGrid:
    lo: float = -1.0
    hi: float = 1.0
    step: float = 0.2
    two_d: bool = False


@dataclass
class ExperimentConfig:
    scene: SceneConfig = field(default_factory=SceneConfig)
    calibration: CalibrationConfig = field(default_factory=lambda: CalibrationConfig(k=100))
    sweep: SweepGrid = field(default_factory=SweepGrid)
    shift: ShiftGrid = field(default_factory=ShiftGrid)
    seed: int = 0
    noise_sigma: float = 0.0
    display_probes: bool = True
    flat_repeats: int = 16
    overlap_threshold: float = 0.1
    channels: int = 1
    out_dir: str = "out"
    schema_version: int = SCHEMA_VERSION

    def to_dict(self) -> dict:
        return _plain(asdict(self))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def hash(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        data = dict(data)
        version = data.get("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ConfigError(f"schema_version: unsupported version {version!r}")
        try:
            out = _build(cls, data, "", nested={
                "scene": lambda d, p: _scene_from_dict(d, p),
                "calibration": lambda d, p: _build(CalibrationConfig, d, p),
                "sweep": lambda d, p: _build(SweepGrid, d, p),
                "shift": lambda d, p: _build(ShiftGrid, d, p),
            })
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        if out.sweep.mode not in ("both", "train", "test", "train-only", "test-only"):
            raise ConfigError(f"sweep.mode: unknown noise mode {out.sweep.mode!r}")
        if out.channels not in (1, 3):
            raise ConfigError("channels: must be 1 or 3")
        return out

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        text = path.read_text()
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
        return cls.from_dict(data)

    def save(self, path):
        Path(path).write_text(self.to_json() + "\n")


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _tuplify(v):
    if isinstance(v, list):
        return tuple(_tuplify(x) for x in v)
    return v


def _build(cls, data, path, nested=None, extra=None):
    nested = nested or {}
    data = dict(data)
    if extra:
        data.update(extra)
    names = {f.name for f in fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"{path or '<root>'}: unknown field(s) {sorted(unknown)}")
    kwargs = {}
    for key, value in data.items():
        where = f"{path}.{key}" if path else key
        if key in nested:
            if not isinstance(value, dict):
                raise ConfigError(f"{where}: expected an object")
            kwargs[key] = nested[key](value, where)
        else:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except ConfigError as exc:
        raise ConfigError(f"{path or '<root>'}: {exc}") from exc
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path or '<root>'}: {exc}") from exc


def _scene_from_dict(d, path) -> SceneConfig:
    def sub(cls, key):
        where = f"{path}.{key}"
        raw = d.get(key)
        if raw is None:
            return getattr(SceneConfig, key)
        if not isinstance(raw, dict):
            raise ConfigError(f"{where}: expected an object")
        return _build(cls, {k: _tuplify(v) for k, v in raw.items()}, where)

    rest = {k: v for k, v in d.items() if k not in ("screen", "camera", "surface")}
    return _build(
        SceneConfig,
        rest,
        path,
        extra={
            "screen": sub(ScreenModel, "screen"),
            "camera": sub(CameraModel, "camera"),
            "surface": sub(SurfaceConfig, "surface"),
        },
    )
