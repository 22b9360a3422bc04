import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from sparkle.errors import ConfigError
from sparkle.scene import (
    CameraModel,
    OrientationDistribution,
    ScreenModel,
    SurfaceConfig,
    flat_surface,
    make_rng,
    sample_slant,
    sample_surface,
)


def test_zero_sigma_slant_is_zero():
    d = OrientationDistribution(0.0)
    assert sample_slant(d, make_rng(3)) == 0.0
    assert np.all(sample_slant(d, make_rng(3), size=100) == 0.0)


def test_slant_matches_half_gaussian_ks():
    d = OrientationDistribution(0.2)
    theta = sample_slant(d, make_rng(7), size=100_000)
    # halfnorm CDF is erf(x / (sqrt(2) sigma)); truncation at pi/2 is negligible here
    res = stats.kstest(theta, stats.halfnorm(scale=0.2).cdf)
    assert res.pvalue > 0.01


def test_slant_rejects_at_quarter_turn():
    d = OrientationDistribution(2.0)
    theta = sample_slant(d, make_rng(1), size=20_000)
    assert theta.min() >= 0 and theta.max() < np.pi / 2


def test_slant_same_seed_same_sequence():
    d = OrientationDistribution(0.3)
    a = sample_slant(d, make_rng(11), size=50)
    b = sample_slant(d, make_rng(11), size=50)
    assert np.array_equal(a, b)


def test_flat_when_sigma_zero():
    cfg = SurfaceConfig(5, 7)
    s = sample_surface(cfg, OrientationDistribution(0.0), 4)
    assert np.array_equal(s.normals, np.broadcast_to([0.0, 0.0, 1.0], (5, 7, 3)))
    assert np.array_equal(s.normals, flat_surface(cfg).normals)


def test_tilt_uniform_chi_square():
    s = sample_surface(SurfaceConfig(100, 100), OrientationDistribution(0.3), 2)
    n = s.normals.reshape(-1, 3)
    phi = np.mod(np.arctan2(n[:, 1], n[:, 0]), 2 * np.pi)
    counts, _ = np.histogram(phi, bins=20, range=(0, 2 * np.pi))
    assert stats.chisquare(counts).pvalue > 0.01


def test_different_seeds_differ():
    cfg, d = SurfaceConfig(3, 3), OrientationDistribution(0.3)
    assert not np.array_equal(sample_surface(cfg, d, 5).normals, sample_surface(cfg, d, 6).normals)


@given(st.integers(1, 12), st.integers(1, 12), st.floats(0.0, 1.2), st.integers(0, 2**32 - 1))
def test_surface_invariants(rows, cols, sigma, seed):
    cfg = SurfaceConfig(rows, cols)
    d = OrientationDistribution(sigma)
    s = sample_surface(cfg, d, seed)
    assert np.allclose(np.linalg.norm(s.normals, axis=-1), 1.0, atol=1e-12)
    sl = s.slants()
    assert np.all(sl >= 0) and np.all(sl < np.pi / 2)
    again = sample_surface(cfg, d, seed)
    assert np.array_equal(s.normals, again.normals)


def test_normals_read_only():
    s = sample_surface(SurfaceConfig(2, 2), OrientationDistribution(0.3), 0)
    with pytest.raises(ValueError):
        s.normals[0, 0, 0] = 1.0


def test_facet_cells_tile_the_rectangle():
    cfg = SurfaceConfig(4, 5, (2.0, 1.0))
    c = cfg.facet_centers()
    cx, cy = cfg.cell_size
    assert np.isclose(c[..., 0].min() - cx / 2, -1.0) and np.isclose(c[..., 0].max() + cx / 2, 1.0)
    assert np.isclose(c[..., 1].min() - cy / 2, -0.5) and np.isclose(c[..., 1].max() + cy / 2, 0.5)
    assert np.allclose(c[..., 2], 0.0)


def test_screen_locate_round_trip():
    scr = ScreenModel(6, 4, 0.3)
    idx = scr.locate(scr.pixel_centers().reshape(-1, 3))
    assert np.array_equal(idx, np.arange(24))
    far = np.asarray(scr.center) + 10 * scr.axes[0]
    assert scr.locate(far[None])[0] == -1


def test_screen_frame_orthonormal():
    u, v, n = ScreenModel(3, 3, 0.1).axes
    m = np.column_stack([u, v, n])
    assert np.allclose(m.T @ m, np.eye(3))
    assert np.isclose(np.linalg.det(m), 1.0)


@pytest.mark.parametrize("kwargs", [dict(width_pixels=0, height_pixels=2, pixel_width=0.1),
                                    dict(width_pixels=2, height_pixels=2, pixel_width=-1.0)])
def test_screen_validation(kwargs):
    with pytest.raises(ConfigError):
        ScreenModel(**kwargs)


def test_config_validation():
    with pytest.raises(ConfigError):
        OrientationDistribution(-0.1)
    with pytest.raises(ConfigError):
        SurfaceConfig(0, 3)
    with pytest.raises(ConfigError):
        SurfaceConfig(2, 2, pose=(2.0, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0))
    with pytest.raises(ConfigError):
        CameraModel(resolution=(0, 4))


def test_posed_surface_normals_follow_pose():
    # rotate the base plane by 90 degrees about x
    pose = (1.0, 0, 0, 0, 0, 0, -1, 0, 0, 1, 0, 0)
    cfg = SurfaceConfig(3, 3, pose=pose)
    assert np.allclose(cfg.base_normal, [0, -1, 0])
    s = sample_surface(cfg, OrientationDistribution(0.2), 1)
    assert np.all(s.normals @ cfg.base_normal > 0)
