import numpy as np
import pytest
from hypothesis import given, strategies as st

from sparkle.analysis import (
    SweepResult,
    add_noise,
    basis_count_sweep,
    grid_adjacency,
    noise_location_sweep,
    overlap_matrix,
    rmse,
    rmse_bound,
    spectrum,
    ssd,
    test_noise_stability as noise_stability,
)
from sparkle.calibrate import CalibrationConfig
from sparkle.render import TransferMatrix, random_lightmaps


def test_overlap_disjoint_and_contained():
    y = np.zeros((10, 3))
    y[0:3, 0] = 1.0
    y[5:8, 1] = 1.0
    y[0:6, 2] = 1.0
    om = overlap_matrix(y)
    assert om.values[0, 1] == 0.0
    assert om.values[0, 2] == 1.0  # S_0 inside S_2
    assert np.array_equal(om.values, om.values.T)
    assert np.all(np.diag(om.values) == 1.0)


def test_overlap_threshold_is_strict():
    y = np.array([[1.0, 1.0], [0.1, 0.0], [0.0, 0.1]])
    om = overlap_matrix(y, 0.1)
    assert [s.tolist() for s in om.sets] == [[0], [0]]


def test_overlap_empty_response_flagged():
    y = np.zeros((5, 3))
    y[1, 0] = y[1, 1] = 1.0
    om = overlap_matrix(y)
    assert om.flagged == [2]
    assert not om.values[2, :2].any() and not om.values[:2, 2].any()


def test_overlap_validation():
    with pytest.raises(ValueError):
        overlap_matrix(np.ones((4, 1)))
    with pytest.raises(ValueError):
        overlap_matrix(np.ones((4, 2)), 0.0)


@given(st.integers(0, 2**31))
def test_overlap_symmetric_and_bounded(seed):
    y = np.random.default_rng(seed).random((30, 6)) ** 4
    om = overlap_matrix(y)
    assert np.array_equal(om.values, om.values.T)
    assert om.values.min() >= 0 and om.values.max() <= 1


def test_overlap_on_simulated_scene(small_matrix):
    om = overlap_matrix(small_matrix.data)
    assert om.max_off_diagonal() < 1.0
    assert len(om.sets) == 16


def test_grid_adjacency():
    adj = grid_adjacency((3, 4))
    assert adj.sum() == 2 * (3 * 3 + 4 * 2)
    assert adj[0, 1] and adj[0, 4] and not adj[0, 5] and not adj[3, 4]
    assert np.array_equal(adj, adj.T)


def test_spectrum_cases():
    rep = spectrum(np.eye(5))
    assert np.allclose(rep.singular_values, 1) and rep.condition_number == 1
    rep = spectrum(np.diag([2.0, 1.0]))
    assert np.allclose(rep.singular_values, [2, 1]) and rep.condition_number == 2
    rep = spectrum(np.diag([1.0, 0.0, 0.0]))
    assert rep.condition_number == np.inf and rep.rank_deficit == 2
    with pytest.raises(ValueError):
        spectrum(np.zeros((0, 3)))


@given(st.integers(0, 2**31))
def test_spectrum_permutation_invariance(seed):
    rng = np.random.default_rng(seed)
    a = rng.random((9, 5))
    p = a[rng.permutation(9)][:, rng.permutation(5)]
    r1, r2 = spectrum(a), spectrum(p)
    assert np.allclose(r1.singular_values, r2.singular_values)
    assert np.isclose(r1.condition_number, r2.condition_number)
    assert np.all(np.diff(r1.singular_values) <= 0) and r1.condition_number >= 1


def test_spectrum_keeps_provenance(small_matrix):
    assert spectrum(small_matrix).provenance == "simulated"


def test_metrics_match_double_loop():
    rng = np.random.default_rng(0)
    a, b = rng.random((7, 9)), rng.random((7, 9))
    total = 0.0
    for i in range(7):
        for j in range(9):
            total += (a[i, j] - b[i, j]) ** 2
    assert abs(ssd(a, b) - total) < 1e-12
    assert abs(rmse(a, b) - np.sqrt(total / 63)) < 1e-12


def test_noise_is_clipped():
    y = add_noise(np.zeros(1000), 0.1, 0)
    assert y.min() == 0 and y.max() > 0
    assert np.array_equal(add_noise(np.ones(3), 0.0, 0), np.ones(3))


CAL = CalibrationConfig(k=16)


@pytest.mark.parametrize("mode", ["both", "train-only", "test-only"])
def test_noise_free_sweep_exact(small_scene, small_matrix, mode):
    res = noise_location_sweep(small_scene, [0.0], [0, 1], mode, n_test=4, calibration=CAL, truth=small_matrix)
    assert res.records.shape == (1, 2) and res.records.max() < 1e-12


def test_sweep_determinism_and_schedule(small_scene, small_matrix):
    args = (small_scene, [0.0, 0.02], [0, 1, 2], "both")
    a = noise_location_sweep(*args, n_test=4, calibration=CAL, truth=small_matrix, workers=1)
    b = noise_location_sweep(*args, n_test=4, calibration=CAL, truth=small_matrix, workers=3)
    assert np.array_equal(a.records, b.records)


def test_both_dominates_test_only(small_scene, small_matrix):
    kw = dict(n_test=5, calibration=CAL, truth=small_matrix)
    sig = [0.01, 0.03]
    both = noise_location_sweep(small_scene, sig, range(4), "both", **kw).mean()
    test = noise_location_sweep(small_scene, sig, range(4), "test-only", **kw).mean()
    assert np.all(both >= test)


def test_sweep_rejects_bad_input(small_scene, small_matrix):
    with pytest.raises(ValueError):
        noise_location_sweep(small_scene, [-0.1], [0], truth=small_matrix)
    with pytest.raises(ValueError):
        noise_location_sweep(small_scene, [0.1], [0], "sideways", truth=small_matrix)
    with pytest.raises(ValueError):
        basis_count_sweep(small_scene, [8, 0], 0.0, [0], truth=small_matrix)


def test_basis_sweep_noise_free(small_scene, small_matrix):
    res = basis_count_sweep(small_scene, [0, 8, 16], 0.0, [0, 1], n_test=4, truth=small_matrix)
    assert res.records.max() < 1e-8


def test_basis_sweep_error_drops(small_scene, small_matrix):
    res = basis_count_sweep(small_scene, [0, 16], 0.01, range(6), n_test=5, truth=small_matrix)
    assert res.mean()[0] >= res.mean()[1]


def test_stability_sweep(small_matrix):
    maps = random_lightmaps((4, 4), 6, 0)
    res = noise_stability(small_matrix, maps, [0.0, 0.01, 0.02, 0.04], range(5))
    m = res.mean()
    assert m[0] == 0.0
    assert np.all(np.diff(m) >= 0)
    for s, v in zip([0.0, 0.01, 0.02, 0.04], m):
        assert v <= rmse_bound(small_matrix, s) + 1e-15


def test_sweep_csv(tmp_path):
    res = SweepResult("sigma", [0.0, 0.5], [3, 4], "ssd", np.array([[0.0, 0.1], [1.0, 2.0]]))
    path = tmp_path / "r.csv"
    res.to_csv(path, "abc123")
    lines = path.read_text().splitlines()
    assert lines[0] == "# config_hash=abc123"
    assert lines[1] == "sigma,seed,ssd"
    assert len(lines) == 6
    assert np.allclose(res.std(), [0.05, 0.5])
