import numpy as np
import pytest
from hypothesis import given, strategies as st

from sparkle.calibrate import (
    BasisSet,
    CalibrationConfig,
    bright_mask,
    build_bases,
    calibrate_matrix,
    dct_matrix,
    expand_color,
    objective,
    simulate_responses,
)
from sparkle.errors import CalibrationError, ConfigError, MaskMismatchError
from sparkle.reconstruct import reconstruct_ls


def test_impulse_is_identity():
    e, _, _ = build_bases((3, 4), 5, 0)
    assert np.array_equal(e.vectors, np.eye(12))


@pytest.mark.parametrize("shape", [(1, 1), (3, 4), (8, 8), (10, 10)])
def test_dct_orthonormal(shape):
    _, d, _ = build_bases(shape, 0, 0)
    assert np.max(np.abs(d.vectors.T @ d.vectors - np.eye(d.dim))) < 1e-10


def test_dct_matches_definition():
    n = 6
    k, i = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    ref = np.cos(np.pi * (2 * i + 1) * k / (2 * n)) * np.sqrt(2 / n)
    ref[0] /= np.sqrt(2)
    assert np.allclose(dct_matrix(n), ref)


def test_random_basis_properties():
    _, _, b = build_bases((4, 4), 0, 0)
    assert b.count == 0
    _, _, b = build_bases((4, 4), 30, 7)
    assert b.vectors.min() >= 0 and b.vectors.max() <= 1
    _, _, b10 = build_bases((4, 4), 10, 7)
    assert np.array_equal(b.vectors[:, :10], b10.vectors)
    _, _, again = build_bases((4, 4), 30, 7)
    assert np.array_equal(b.vectors, again.vectors)
    with pytest.raises(ConfigError):
        build_bases((4, 4), -1, 0)


def test_mask_fraction_one_keeps_everything():
    y = np.random.default_rng(0).random((20, 4))
    m = bright_mask(y, 1.0)
    assert np.array_equal(m.indices, np.arange(20))


def test_mask_single_hot_pixel():
    y = np.zeros((50, 1))
    y[17, 0] = 3.0
    m = bright_mask(y, 0.02)
    assert m.per_impulse[0].tolist() == [17]


def test_mask_disjoint_union_and_size():
    y = np.zeros((100, 2))
    y[:10, 0] = np.arange(1, 11)
    y[50:60, 1] = np.arange(1, 11)
    m = bright_mask(y, 0.05)
    assert all(len(p) == 5 for p in m.per_impulse)
    assert len(m) == 10


def test_mask_ties_go_to_lowest_index():
    y = np.ones((10, 1))
    assert bright_mask(y, 0.3).per_impulse[0].tolist() == [0, 1, 2]


def test_mask_validation():
    with pytest.raises(ConfigError):
        bright_mask(np.ones((4, 2)), 0.0)
    with pytest.raises(ValueError):
        bright_mask([], 0.1)


def probes(a, k, seed=0, display=False):
    n = int(np.sqrt(a.shape[1]))
    bases = build_bases((n, n), k, seed)
    return bases, simulate_responses(a, bases, 0.0, seed, display=display)


@pytest.mark.parametrize("display", [False, True])
@pytest.mark.parametrize("use_mask", [False, True])
def test_noise_free_recovery(small_matrix, display, use_mask):
    bases, p = probes(small_matrix.data, 16, display=display)
    mask = bright_mask(p.impulse, 0.01) if use_mask else None
    est = calibrate_matrix(p.impulse, p.dct, p.random, bases, mask)
    ref = small_matrix.data if mask is None else small_matrix.data[mask.indices]
    assert np.max(np.abs(est.data - ref)) < 1e-8
    assert est.provenance == "calibrated"
    assert est.rows == (576 if mask is None else len(mask))


def test_impulse_only_returns_responses():
    rng = np.random.default_rng(3)
    y1 = rng.random((30, 9))
    bases = build_bases((3, 3), 0, 0)
    est = calibrate_matrix(y1, None, None, bases)
    assert np.array_equal(est.data, y1)


def test_masked_matrix_rejects_other_images(small_matrix):
    bases, p = probes(small_matrix.data, 4)
    mask = bright_mask(p.impulse, 0.01)
    est = calibrate_matrix(p.impulse, p.dct, p.random, bases, mask)
    y = small_matrix @ np.full(16, 0.5)
    assert np.allclose(reconstruct_ls(est, y).lightmap, 0.5)  # full image is masked internally
    assert np.allclose(reconstruct_ls(est, y[mask.indices]).lightmap, 0.5)
    with pytest.raises(MaskMismatchError):
        reconstruct_ls(est, y[:-1])


def test_normal_equation_optimality():
    rng = np.random.default_rng(8)
    a = rng.random((40, 9))
    bases = build_bases((3, 3), 9, 1)
    p = simulate_responses(a, bases, 0.05, 2)
    lam = 1 / 9
    est = calibrate_matrix(p.impulse, p.dct, p.random, bases, config=CalibrationConfig(lam=lam)).data
    base = objective(est, p.impulse, p.dct, p.random, bases, lam)
    for _ in range(100):
        i, j = rng.integers(40), rng.integers(9)
        for step in (1e-3, -1e-3):
            bumped = est.copy()
            bumped[i, j] += step
            assert objective(bumped, p.impulse, p.dct, p.random, bases, lam) > base


@given(st.floats(0.01, 100.0))
def test_lambda_homogeneity(c):
    rng = np.random.default_rng(4)
    a = rng.random((12, 4))
    e, d, b = build_bases((2, 2), 6, 3)
    y1 = a + 0.01 * rng.standard_normal((12, 4))
    y2 = a @ d.vectors + 0.01 * rng.standard_normal((12, 4))
    y3 = a @ b.vectors + 0.01 * rng.standard_normal((12, 6))
    ref = calibrate_matrix(y1, y2, y3, (e, d, b), config=CalibrationConfig(lam=0.3)).data
    s = 1 / np.sqrt(c)
    scaled = (e, BasisSet("dct", d.vectors * s), BasisSet("random", b.vectors * s))
    got = calibrate_matrix(y1, y2 * s, y3 * s, scaled, config=CalibrationConfig(lam=0.3 * c)).data
    assert np.allclose(got, ref, atol=1e-10)


def test_rank_deficient_gram_raises():
    rng = np.random.default_rng(0)
    bases = build_bases((3, 3), 4, 0)
    y3 = rng.random((10, 4))
    with pytest.raises(CalibrationError) as info:
        calibrate_matrix(None, None, y3, bases)
    assert info.value.deficient_directions.shape == (9, 5)


def test_config_validation():
    with pytest.raises(ConfigError):
        CalibrationConfig(lam=0.0)
    with pytest.raises(ConfigError):
        CalibrationConfig(fraction=1.5)
    with pytest.raises(ConfigError):
        CalibrationConfig(k=-2)
    assert CalibrationConfig().weight(25) == 1 / 25


def test_random_probes_reduce_noise(small_matrix):
    errs = {0: [], 16: []}
    for seed in range(10):
        bases = build_bases((4, 4), 16, 100 + seed)
        p = simulate_responses(small_matrix.data, bases, 0.01, seed)
        for k in errs:
            sub = (bases[0], bases[1], BasisSet("random", bases[2].vectors[:, :k]))
            est = calibrate_matrix(p.impulse, p.dct, p.random[:, :k], sub)
            errs[k].append(np.linalg.norm(est.data - small_matrix.data))
    assert np.mean(errs[16]) < np.mean(errs[0])


def test_color_calibration_block_diagonal(small_matrix):
    a3 = np.kron(np.eye(3), small_matrix.data)
    bases = expand_color(build_bases((4, 4), 8, 0), 3)
    assert bases[0].count == 48 and bases[2].count == 24
    p = simulate_responses(a3, bases, 0.0, 0)
    est = calibrate_matrix(p.impulse, p.dct, p.random, bases, channels=3).data
    assert np.max(np.abs(est - a3)) < 1e-8
    m, n = small_matrix.shape
    for r in range(3):
        for c in range(3):
            if r != c:
                assert np.max(np.abs(est[r * m:(r + 1) * m, c * n:(c + 1) * n])) < 1e-8


def test_color_gray_consistency(small_matrix):
    a3 = np.kron(np.eye(3), small_matrix.data)
    x = np.random.default_rng(1).random(16)
    y = a3 @ np.tile(x, 3)
    for c in range(3):
        assert np.allclose(y[c * 576:(c + 1) * 576], small_matrix @ x)


def test_signed_probes_need_display_when_noisy(small_matrix):
    bases = build_bases((4, 4), 0, 0)
    with pytest.raises(ValueError):
        simulate_responses(small_matrix.data, bases, 0.01, 0, display=False)
