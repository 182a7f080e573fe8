import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ptrmt import ensembles as en
from ptrmt import experiments as ex
from ptrmt import pastur as pa
from ptrmt.ensembles import EnsembleSpec


def test_default_mu_grid():
    g = ex.default_mu_grid()
    assert len(g) == 26 and g[0] == 0
    assert g[1] == pytest.approx(0.05) and g[-1] == pytest.approx(5.0)
    assert np.allclose(np.diff(np.log(g[1:])), np.log(100) / 24)


def test_mu_zero_by_class():
    spec = EnsembleSpec.from_name("GOOE", 200, 40, 1.0)
    assert ex.mu_zero(spec) == pytest.approx(np.sqrt(40) / 400)
    spec = EnsembleSpec.from_name("GOAE", 200, 40, 1.0)
    assert ex.mu_zero(spec) == pytest.approx(np.sqrt(200) / 400)


def test_predicted_scaling():
    assert ex.predicted_scaling(en.OO, 1.0, 10_000) == pytest.approx(1.0, abs=1e-3)
    N, T = 40, 1e-4
    assert ex.predicted_scaling(en.OO, T, N) == pytest.approx(math.sqrt(N * T), rel=0.01)
    assert ex.predicted_scaling(en.UO_PRIME, 0.5, 40) == ex.predicted_scaling(en.OO, 0.5, 40)
    assert ex.predicted_scaling(en.UO, 0.25, 40) == pytest.approx(0.5)
    assert ex.predicted_scaling(en.OA, 1e-5, 40) == 1.0
    with pytest.warns(UserWarning):
        assert ex.predicted_scaling(en.OA_PRIME, 1e-5, 40) == 1.0
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        ex.predicted_scaling(en.OA_PRIME, 0.5, 40)


def _curve(mu, fc):
    spec = EnsembleSpec.from_name("GOOE", 10, 2, 1.0)
    return ex.TransitionCurve(spec, 1.0, mu, 1.0, np.asarray(fc, float), np.zeros(len(fc)), 1)


def test_find_mu_pt_linear():
    assert ex.find_mu_pt(_curve([0, 1, 2], [0, 0.5, 1])) == pytest.approx(1.0)
    c = _curve([0, 1, 2, 3], [0, 0.2, 0.6, 0.9])
    assert ex.find_mu_pt(c) == pytest.approx(1.75)
    assert c.mu_pt == c.g_of_T


def test_find_mu_pt_isotonic_smooths_noise():
    # 0.7 and 0.55 are pooled to 0.625; a single crossing follows
    c = _curve([0, 1, 2, 3, 4], [0, 0.3, 0.7, 0.55, 0.9])
    assert ex.find_mu_pt(c) == pytest.approx(1 + 0.2 / 0.325)
    # a dip before the crossing is pooled with its neighbour
    c = _curve([0, 1, 2, 3], [0, 0.4, 0.3, 0.9])
    assert ex.find_mu_pt(c) == pytest.approx(2 + (0.5 - 0.35) / 0.55)


def test_find_mu_pt_out_of_range():
    with pytest.raises(ValueError):
        ex.find_mu_pt(_curve([0, 1, 2], [0, 0.1, 0.3]))


def test_curve_requires_increasing_grid():
    with pytest.raises(ValueError):
        _curve([0, 2, 1], [0, 0.1, 0.2])


@pytest.fixture(scope="module")
def small_sweep():
    spec = EnsembleSpec.from_name("GOOE", 40, 8, 1.0)
    grid = [0.0, 0.5, 2.0, 8.0]
    return ex.run_transition(spec, [0.5, 1.0], grid, 6, master_seed=3)


def test_transition_basic_properties(small_sweep):
    for c in small_sweep:
        assert c.fc_mean[0] == 0.0
        assert np.all((c.fc_mean >= 0) & (c.fc_mean <= 1))
        assert np.all(np.diff(c.fc_mean) >= -2 * np.hypot(c.fc_stderr[1:], c.fc_stderr[:-1]))
        assert not c.failures
        assert len(c.seeds) == 6


def test_transition_is_reproducible(small_sweep):
    spec = EnsembleSpec.from_name("GOOE", 40, 8, 1.0)
    again = ex.run_transition(spec, [1.0], [0.0, 0.5, 2.0, 8.0], 6, master_seed=3)
    assert np.array_equal(again[0].fc_mean, small_sweep[1].fc_mean)


def test_transition_parallel_matches_serial(small_sweep):
    spec = EnsembleSpec.from_name("GOOE", 40, 8, 1.0)
    par = ex.run_transition(spec, [0.5, 1.0], [0.0, 0.5, 2.0, 8.0], 6, master_seed=3, workers=2)
    for a, b in zip(par, small_sweep):
        assert np.array_equal(a.fc_mean, b.fc_mean)
        assert np.array_equal(a.fc_stderr, b.fc_stderr)


def test_partial_failure_keeps_other_cells(monkeypatch):
    real = ex._fc_cell

    def flaky(cell):
        if cell.spec.mu > 0 and cell.spec.T == 0.5:
            raise RuntimeError("boom")
        return real(cell)

    monkeypatch.setattr(ex, "_fc_cell", flaky)
    spec = EnsembleSpec.from_name("GOOE", 20, 4, 1.0)
    curves = ex.run_transition(spec, [0.5, 1.0], [0.0, 1.0, 4.0], 3, master_seed=0)
    assert set(curves[0].failures) == {1, 2}
    assert np.isnan(curves[0].fc_mean[1:]).all() and curves[0].fc_mean[0] == 0
    assert not curves[1].failures and np.isfinite(curves[1].fc_mean).all()


def test_max_curve_gap():
    a, b = _curve([0, 1], [0, 0.3]), _curve([0, 1], [0.1, 0.25])
    assert ex.max_curve_gap([a, b]) == pytest.approx(0.1)


def test_large_mu_saturates():
    spec = EnsembleSpec.from_name("GOOE", 60, 12, 1.0)
    c = ex.run_transition(spec, [1.0], [0.0, 20.0 * 10], 5, master_seed=1)[0]
    assert c.fc_mean[-1] > 0.95


# -- spacings ------------------------------------------------------------------------

def test_hermitian_levels_decoupled_are_degenerate():
    spec = EnsembleSpec.from_name("GOOE", 30, 6, 0.0)
    a, b = ex.hermitian_levels(spec, 1)
    assert np.allclose(np.sort(a), np.sort(b))
    (full,) = ex.hermitian_levels(EnsembleSpec.from_name("GUOE", 30, 6, 0.5), 1)
    assert len(full) == 60


def test_run_spacing_zero_coupling_peaks_at_zero():
    (h,) = ex.run_spacing(en.OO, [0.0], 40, 8, 10)
    assert np.argmax(h.counts) == 0
    assert np.sum(h.counts * np.diff(h.bin_edges)) == pytest.approx(1.0)


# -- density comparison helpers --------------------------------------------------------

def _grid(rho, re=(-1.0, 0.0, 1.0), im=(-0.5, 0.0, 0.5)):
    rho = np.asarray(rho, float)
    return pa.DensityGrid(np.array(re), np.array(im), rho, np.zeros_like(rho), np.ones(rho.shape, bool),
                          pa.PasturVariant.OO_UOPRIME, {})


def test_support_miss_fraction_synthetic():
    g = _grid([[1, 0, 1], [5, 5, 5], [1, 0, 1]])
    eigs = np.array([-1 + 0.5j, 0.1 + 0.45j, 3 + 0.5j, 0.2 + 0.001j])
    miss, n = ex.support_miss_fraction(g, eigs, eps=1e-4, band=0.01)
    assert n == 3 and miss == pytest.approx(2 / 3)


def test_real_axis_branches_synthetic():
    g = _grid([[0.1, 0.1, 0.1], [50, 0.5, 50], [0.1, 0.1, 0.1]])
    assert ex.real_axis_branches(g).tolist() == [-1.0, 1.0]
    with pytest.raises(ValueError):
        ex.real_axis_branches(_grid(np.ones((3, 3)), im=(0.1, 0.2, 0.3)))


# -- scaling ---------------------------------------------------------------------------

@given(slope=st.floats(-2, 2).filter(lambda s: abs(s) > 1e-3), c=st.floats(0.1, 10))
@settings(max_examples=30)
def test_fit_loglog_recovers_power_law(slope, c):
    m = np.array([50, 100, 200, 400])
    fit = ex.fit_loglog(m, c * m**slope)
    assert fit.slope == pytest.approx(slope, abs=1e-9)


def test_fit_loglog_rejects_bad_input():
    with pytest.raises(ValueError):
        ex.fit_loglog([1, 2, 3], [1, 2, 3])
    with pytest.raises(ValueError):
        ex.fit_loglog([1, 2, 3, 4], [1, 1, 1, 1])
    with pytest.raises(ValueError):
        ex.fit_loglog([1, 2, 3, 4], [1, 0, 1, 1])


def test_m_scaling_hermitian_limit_is_degenerate():
    with pytest.raises(ValueError, match="degenerate"):
        ex.run_m_scaling(en.OO, 0.2, 1.0, 0.0, [20, 30, 40, 50], 2)


def test_ginibre_expected_real_values():
    assert ex.ginibre_expected_real(1) == 1.0
    assert ex.ginibre_expected_real(2) == pytest.approx(math.sqrt(2))
    assert ex.ginibre_expected_real(3) == pytest.approx(1 + 1 / math.sqrt(2))
    assert ex.ginibre_expected_real(4) == pytest.approx(math.sqrt(2) * (1 + 3 / 8))
    e100 = ex.ginibre_expected_real(100)
    assert e100 == pytest.approx(8.449, abs=1e-3)
    assert e100 == pytest.approx(math.sqrt(2 * 100 / math.pi) + 0.5, abs=0.05)


def test_ginibre_two_by_two():
    mean, _ = ex.ginibre_real_count(2, 400, 0)
    assert 1 < mean < 2
    with pytest.raises(ValueError):
        ex.ginibre_real_count(1, 10)


@pytest.mark.parametrize("M", [5, 10, 20])
def test_ginibre_monte_carlo_matches_exact(M):
    mean, err = ex.ginibre_real_count(M, 2000, 1)
    assert abs(mean - ex.ginibre_expected_real(M)) < 3.5 * err


def test_ginibre_regression_value_m100():
    mean, err = ex.ginibre_real_count(100, 1000, 0)
    assert err < 0.1
    assert abs(mean - ex.ginibre_expected_real(100)) < 3.5 * err
