import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jumpactivity import estimators as est
from jumpactivity.asymptotics import bias_constant
from jumpactivity.estimators import (
    EstimationError,
    EstimatorConfig,
    PathGrid,
    ScaledIncrements,
    beta_diffusion,
    beta_fs,
    beta_gmm,
    beta_power_variation,
    beta_two_point,
    default_k_n,
    diff_increments,
    ecf,
    ecf_debiased,
    local_power_variation,
    moment_vector,
    power_variations,
    scaled_increments,
    select_bands,
    two_point_from_curve,
)
from jumpactivity.levy_sim import SimSpec, simulate_brownian, simulate_stable_levy
from jumpactivity.stable_law import DomainError, limit_cf


def stable_path(beta, n, seed):
    return simulate_stable_levy(beta, n, np.random.default_rng(seed))


class ExactCurve:
    """Stand-in for ScaledIncrements whose ECF is a given function."""

    def __init__(self, fn, p, k_n=50, n=10000):
        self.fn, self.p, self.k_n, self.n_effective, self.n_degenerate = fn, p, k_n, n, 0

    def ecf(self, u):
        return self.fn(np.asarray(u, dtype=float))


# -- increments and local scale ------------------------------------------------


def test_diff_increments_examples():
    np.testing.assert_array_equal(diff_increments(PathGrid(np.array([0.0, 1, 3, 6]))), [1.0, 1.0])
    lin = PathGrid(2.0 + 0.5 * np.arange(20))
    np.testing.assert_allclose(diff_increments(lin), 0.0, atol=1e-14)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=3, max_size=60))
def test_diff_increments_telescopes(xs):
    x = np.array(xs)
    d = diff_increments(PathGrid(x))
    assert d.size == x.size - 2
    assert d.sum() == pytest.approx(x[-1] - x[-2] - x[1] + x[0], abs=1e-9 * (1 + np.abs(x).max()))


def test_local_power_variation_index_convention():
    # d_2..d_5 = (1, 2, 1, 2); with k_n = 2, V_5 averages d_2 and d_3
    x = np.concatenate([[0.0, 0.0], np.cumsum(np.cumsum([1.0, 2.0, 1.0, 2.0]))])
    path = PathGrid(x)
    np.testing.assert_allclose(diff_increments(path), [1, 2, 1, 2])
    p = 0.7
    v = local_power_variation(path, p, 2)
    assert v.size == 1
    assert v[0] == pytest.approx((1 + 2**p) / 2)


def test_local_power_variation_constant_and_homogeneous():
    d = np.where(np.arange(40) % 2 == 0, 3.0, -3.0)
    x = np.concatenate([[0.0, 0.0], np.cumsum(np.cumsum(d))])
    v = local_power_variation(PathGrid(x), 0.6, 5)
    np.testing.assert_allclose(v, 3.0**0.6, rtol=1e-12)
    path = stable_path(1.5, 500, 1)
    np.testing.assert_allclose(local_power_variation(path.scaled(7.0), 0.51, 20),
                               7.0**0.51 * local_power_variation(path, 0.51, 20), rtol=1e-10)


def test_index_boundaries():
    k_n = 10
    path = stable_path(1.5, k_n + 3, 2)
    assert scaled_increments(path, 0.51, k_n).n_effective == 1
    short = stable_path(1.5, k_n + 2, 2)
    for call in (lambda: ecf(short, 0.51, k_n, 1.0), lambda: beta_fs(short, 0.51, k_n),
                 lambda: beta_gmm(short, EstimatorConfig(k_n=k_n))):
        with pytest.raises(EstimationError):
            call()


def test_n_effective_and_degenerate_windows():
    path = stable_path(1.5, 1000, 3)
    inc = scaled_increments(path, 0.51, 50)
    assert inc.n_effective == 1000 - 50 - 2 and inc.n_degenerate == 0
    x = path.values.copy()
    x[:200] = 0.0
    res = beta_fs(PathGrid(x), 0.51, 50)
    assert any("degenerate" in d for d in res.diagnostics)
    with pytest.raises(EstimationError, match="no usable increments"):
        ecf(PathGrid(np.ones(300)), 0.51, 50, 1.0)


# -- ECF ----------------------------------------------------------------------


def test_ecf_basics():
    path = stable_path(1.5, 2000, 4)
    assert ecf(path, 0.51, 50, 0.0) == 1.0
    vals = ecf(path, 0.51, 50, np.linspace(0, 5, 30))
    assert np.all(np.abs(vals) <= 1.0)
    assert ecf_debiased(path, 0.51, 50, 0.0, 1.5) == 1.0
    with pytest.raises(DomainError):
        ecf(path, 0.51, 50, -1.0)


@pytest.mark.parametrize("lam", [1e-6, 1e6])
def test_ecf_scale_invariance(lam):
    path = stable_path(1.4, 3000, 5)
    u = np.array([0.3, 1.0, 2.0])
    np.testing.assert_allclose(ecf(path.scaled(lam), 0.51, 40, u), ecf(path, 0.51, 40, u), rtol=1e-9)


def test_ecf_consistency_on_stable_path():
    n, k_n = 20000, 141
    val = ecf(stable_path(1.5, n, 6), 0.51, k_n, 1.0)
    assert abs(val - limit_cf(0.51, 1.0, 1.5)) < 4 / math.sqrt(n)


def test_ecf_debiased_vanishing_correction():
    path = stable_path(1.5, 5000, 7)
    raw = ecf(path, 0.51, 2000, 1.0)
    assert abs(ecf_debiased(path, 0.51, 2000, 1.0, 1.5) - raw) < 1e-3


def test_debiasing_reduces_median_ecf_bias():
    target = limit_cf(0.51, 1.0, 1.5)
    raw, deb = [], []
    corr = bias_constant(0.51, 1.5, 20, 1.0)
    for seed in range(200):
        inc = scaled_increments(stable_path(1.5, 2000, 1000 + seed), 0.51, 20)
        raw.append(inc.ecf(1.0))
        deb.append(inc.ecf(1.0) - corr)
    assert abs(np.median(deb) - target) < abs(np.median(raw) - target)


# -- two-point estimators -------------------------------------------------------


def test_two_point_plugin_identity():
    assert two_point_from_curve(math.exp(-0.5), math.exp(-0.5 * 2**1.5), 1.0, 2.0) == pytest.approx(1.5, rel=1e-14)


@settings(max_examples=60, deadline=None)
@given(beta=st.floats(1.05, 1.99), u=st.floats(0.05, 2.0), ratio=st.floats(1.1, 4.0))
def test_two_point_exact_curve(beta, u, ratio):
    p = 0.3
    v = u * ratio
    lu, lv = limit_cf(p, u, beta), limit_cf(p, v, beta)
    if not (1e-10 < lv and lu < 1 - 1e-10):
        return
    assert two_point_from_curve(lu, lv, u, v) == pytest.approx(beta, rel=1e-10)


def test_two_point_errors_and_clamping():
    with pytest.raises(EstimationError, match="uninformative"):
        two_point_from_curve(1e-20, 1e-30, 1.0, 2.0)
    with pytest.raises(DomainError):
        two_point_from_curve(0.5, 0.2, 1.0, 1.0)
    diags = []
    est._two_point(0.9, -0.1, 0.5, 3.0, 1e-10, diags)
    assert diags and "clamped low" in diags[0]


def test_beta_two_point_on_exact_curve(monkeypatch):
    p, beta, k_n = 0.4, 1.6, 50
    fn = lambda u: limit_cf(p, u, beta) + bias_constant(p, 1.4, k_n, u)  # noqa: E731
    monkeypatch.setattr(est, "scaled_increments", lambda path, p_, k: ExactCurve(fn, p_, k))
    res = beta_two_point(None, p, k_n, 0.3, 1.2, beta_init=1.4)
    assert res.beta_hat == pytest.approx(beta, rel=1e-10)
    with pytest.raises(DomainError):
        beta_two_point(None, p, k_n, 1.0, 1.0)


def test_fs_median_on_stable_paths():
    vals = [beta_fs(stable_path(1.5, 20000, 2000 + s), 0.51, 226).beta_hat for s in range(60)]
    assert abs(np.median(vals) - 1.5) < 0.05


# -- bands and moments ---------------------------------------------------------


def test_select_bands_endpoints():
    b = select_bands(0.51, 1.5)
    assert limit_cf(0.51, b.lows[0], 1.5) == pytest.approx(0.95, rel=1e-10)
    assert limit_cf(0.51, b.highs[-1], 1.5) == pytest.approx(0.25, rel=1e-10)
    widths = np.subtract(b.highs, b.lows)
    np.testing.assert_allclose(widths, widths[0], rtol=1e-12)
    assert b.lows[1:] == b.highs[:-1]
    assert b.lows[0] == pytest.approx(0.16222343569768768, rel=1e-12)
    assert b.highs[-1] == pytest.approx(1.4609774208032253, rel=1e-12)
    one = select_bands(0.51, 1.5, K=1)
    assert one.k == 1 and one.lows[0] == b.lows[0] and one.highs[0] == b.highs[-1]


def test_moment_problem_exact_curve_is_zero():
    p, beta = 0.51, 1.5
    bands = select_bands(p, beta)
    table = est._table(p, beta)
    fn = lambda u: limit_cf(p, u, beta) + bias_constant(p, beta, 50, u, table)  # noqa: E731
    prob = est._MomentProblem(ExactCurve(fn, p), bands, beta, 1e-10, table)
    np.testing.assert_allclose(prob(beta), 0.0, atol=1e-10)
    # derivative in beta matches minus the sensitivity vector
    from jumpactivity.asymptotics import sensitivity_vector
    h = 1e-5
    fd = (prob(beta + h) - prob(beta - h)) / (2 * h)
    np.testing.assert_allclose(fd, -sensitivity_vector(p, bands, beta), rtol=1e-5)


def test_moment_problem_rejects_out_of_range_bands():
    p = 0.51
    bands = select_bands(p, 1.5)
    with pytest.raises(EstimationError, match="bands out of range"):
        est._MomentProblem(ExactCurve(lambda u: np.full_like(u, -0.5), p), bands, 1.5, 1e-10, est._table(p, 1.5))


def test_moment_vector_identifies_beta():
    bands = select_bands(0.51, 1.5)
    wins = 0
    for s in range(100):
        path = stable_path(1.5, 2000, 3000 + s)
        m15 = moment_vector(path, 0.51, 40, bands, 1.5, 1.5)
        m13 = moment_vector(path, 0.51, 40, bands, 1.5, 1.3)
        wins += np.linalg.norm(m15) < np.linalg.norm(m13)
    assert wins >= 90


# -- gmm ------------------------------------------------------------------------


def test_gmm_exact_curve(monkeypatch):
    p, beta = 0.51, 1.5
    monkeypatch.setattr(est, "bias_constant", lambda *a, **k: 0.0)
    monkeypatch.setattr(est, "scaled_increments",
                        lambda path, p_, k: ExactCurve(lambda u: limit_cf(p_, u, beta), p_, k))
    res = beta_gmm(PathGrid(np.zeros(1001)), EstimatorConfig(k_n=50))
    assert res.beta_hat == pytest.approx(beta, abs=1e-6)
    assert res.extra["objective"] < 1e-12
    assert res.stderr > 0 and res.bands.k == 5


def test_gmm_on_stable_path():
    res = beta_gmm(stable_path(1.5, 10000, 8))
    assert abs(res.beta_hat - 1.5) < 3 * res.stderr
    assert res.k_n == default_k_n(10000) and res.n_effective == 10000 - res.k_n - 2
    assert 1.0 < res.beta_hat < 2.0


def test_gmm_power_fallback():
    res = beta_gmm(stable_path(1.1, 5000, 9), EstimatorConfig(p=0.6, stderr=False))
    assert res.p_used < 0.6
    assert any("power fallback" in d for d in res.diagnostics)


def test_gmm_time_scale_free():
    path = stable_path(1.6, 3000, 10)
    a = beta_gmm(path, EstimatorConfig(stderr=False))
    b = beta_gmm(PathGrid(path.values, 2 * path.delta), EstimatorConfig(stderr=False))
    assert a.beta_hat == b.beta_hat


def test_config_validation():
    with pytest.raises(ValueError):
        EstimatorConfig(k_n=1)
    with pytest.raises(ValueError):
        EstimatorConfig(u_init=(1.0, 1.0))
    with pytest.raises(ValueError):
        EstimatorConfig(K=0)
    assert EstimatorConfig().block_size(1000) == 51
    assert EstimatorConfig(k_n=50).block_size(1000) == 50


# -- power variation baseline ----------------------------------------------------


def test_power_variation_index_range():
    path = PathGrid(np.array([0.0, 1, 3, 6, 10, 15]))
    d = diff_increments(path)
    v1, v2 = power_variations(path, 1.0)
    assert v1 == np.sum(np.abs(d))
    assert v2 == pytest.approx(abs(d[2] + d[0]) + abs(d[3] + d[1]))  # N - 3 = 2 terms


def test_power_variation_degenerate():
    res = beta_power_variation(PathGrid(np.zeros(20)), 0.5)
    assert res.beta_hat == 0.0 and res.diagnostics


def test_power_variation_median_on_stable_paths():
    vals = [beta_power_variation(stable_path(1.5, 2000, 4000 + s), 0.51).beta_hat for s in range(500)]
    assert abs(np.median(vals) - 1.5) < 0.06


# -- jump-diffusion diagnostic ------------------------------------------------------


def test_diffusion_exact_gaussian_curve(monkeypatch):
    monkeypatch.setattr(est, "scaled_increments",
                        lambda path, p_, k: ExactCurve(lambda u: limit_cf(p_, u, 2.0), p_, k))
    path = PathGrid(np.zeros(20001))
    res = beta_diffusion(path, 0.75, 100)
    assert res.beta_hat == pytest.approx(2.0, rel=1e-12)
    assert res.extra["u_n"] == pytest.approx(1 / math.log(20000))


def test_diffusion_on_brownian_path():
    spec = SimSpec(vol=None, days=1, per_day=20000, substeps=1)
    res = beta_diffusion(simulate_brownian(spec, np.random.default_rng(11)), 0.75)
    assert abs(res.beta_hat - 2.0) < 0.05
    assert res.stderr > 0


def test_diffusion_domain():
    path = stable_path(1.5, 1000, 1)
    for kw in ({"p": 0.4}, {"p": 1.0}, {"c": 0.0}, {"rho": 1.0}):
        with pytest.raises(DomainError):
            beta_diffusion(path, **kw)


# -- invariants ---------------------------------------------------------------------


@pytest.mark.parametrize("lam", [1e-6, 1e6])
def test_all_estimators_scale_invariant(lam):
    path = stable_path(1.5, 3000, 12)
    scaled = path.scaled(lam)
    cfg = EstimatorConfig(stderr=False)
    pairs = [
        (beta_gmm(path, cfg), beta_gmm(scaled, cfg)),
        (beta_fs(path, 0.51, 50), beta_fs(scaled, 0.51, 50)),
        (beta_two_point(path, 0.51, 50), beta_two_point(scaled, 0.51, 50)),
        (beta_power_variation(path, 0.51), beta_power_variation(scaled, 0.51)),
        (beta_diffusion(path), beta_diffusion(scaled)),
    ]
    for a, b in pairs:
        assert b.beta_hat == pytest.approx(a.beta_hat, rel=1e-9)


def test_scaled_increments_type():
    inc = scaled_increments(stable_path(1.5, 500, 1), 0.51, 20)
    assert isinstance(inc, ScaledIncrements)
    assert inc.ecf(np.array([[0.0, 1.0]])).shape == (1, 2)
