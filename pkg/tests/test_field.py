import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bclab.dynamics import IntegratorConfig, RandomStreams, RunContext, run, window_length
from bclab.field import (BoundaryObserver, FieldObserver, MomentsObserver, QuadraticObserver, TERM_NAMES,
                         TimeIntegralObserver, bath_fluctuation_integrand, bath_gradient_integrand, bg_integrand,
                         box_average, box_averages, box_replacement_integrand, boundary_functional,
                         boundary_sites, dynkin_martingale, generator_action, iota_pairing,
                         local_bath_observer, local_box_observer, local_boundary_observer, predictable_qv,
                         qv_integrand)
from bclab.model import ChainState, ModelParams, derive_params, sample_gibbs
from bclab.spde_ref import inner_product
from bclab.testfn import get_test_function, norm_2n

from conftest import zscore

GAUSS = get_test_function("s:hermite-gauss:0")
ODD = get_test_function("sdir:odd-gauss:1")
FLAT = get_test_function("s0:flat:0")


def _ctx(p, length, tau=0.0):
    ctx = RunContext(p, length, 1.0)
    ctx.set_step(0, tau)
    return ctx


def _field_value(state, p, H, tau=0.0):
    obs = FieldObserver(H, dynkin=False)
    obs.observe(state, _ctx(p, state.length, tau))
    return obs.y


def test_centred_field_vanishes_on_flat_state():
    p = ModelParams(beta=2, lam=1, n=8)
    flat = ChainState(np.full(160, derive_params(p).rho))
    for H in (GAUSS, ODD, FLAT):
        assert _field_value(flat, p, H) == 0.0


def test_single_perturbation():
    p = ModelParams(beta=2, lam=1, n=4, alpha=0.0)
    s = ChainState(np.full(40, derive_params(p).rho))
    s.sites[0] += 1.0
    assert _field_value(s, p, GAUSS) == pytest.approx(0.5, abs=1e-15)


def test_field_variance_under_gibbs(rng):
    p = ModelParams(beta=2, lam=1, n=16, alpha=0.5)
    L = 2 * math.ceil(10 * p.n)
    tau = 3.7
    d = derive_params(p)
    ys = [_field_value(sample_gibbs(p, L, rng), p, ODD, tau) for _ in range(3000)]
    shift = (d.c_n * tau / p.n ** 2) % 1.0
    target = d.sigma2 * norm_2n(ODD, p.n, shift=shift) ** 2
    assert abs(zscore(np.square(ys), target)) < 3


def test_asymmetric_terms_vanish_without_asymmetry(rng):
    p = ModelParams(beta=2, lam=1, n=8, alpha=0.0)
    s = sample_gibbs(p, 160, rng)
    g = generator_action(s, GAUSS, 0.0, p)
    assert g.nonlinear_term == g.laplacian_correction == g.frame_mismatch == 0.0
    assert g.total == pytest.approx(g.laplacian_term + g.bath_term)


class _Linear:
    ident = "linear"

    def __call__(self, u):
        return 2.0 * np.asarray(u, dtype=float) - 1.0

    def value_and_slope(self, u):
        u = np.asarray(u, dtype=float)
        return 2.0 * u - 1.0, np.full_like(u, 2.0)


def test_linear_function_has_no_laplacian_term():
    p = ModelParams(beta=2, lam=1, n=8)
    flat = ChainState(np.full(160, derive_params(p).rho))
    assert generator_action(flat, _Linear(), 0.0, p, bath_enabled=False).laplacian_term == 0.0


@given(st.integers(0, 10_000))
@settings(max_examples=25)
def test_flat_function_bath_term_taylor_bound(seed):
    p = ModelParams(beta=2, lam=1, n=16, delta=-2.0, kappa=0.5)
    rng = np.random.default_rng(seed)
    tau = float(rng.uniform(0, 50))
    s = sample_gibbs(p, 320, rng)
    s.tau = tau
    term = generator_action(s, FLAT, tau / p.n ** 2, p).bath_term
    u = np.linspace(1e-4, 3, 300001)
    sup4 = np.max(np.abs(FLAT.deriv(u, 4)))
    ctx = _ctx(p, 320, tau)
    g = abs(p.lam / s.sites[ctx.bath_index] - p.beta)
    bound = p.n ** (1.5 - p.delta) * sup4 * p.n ** -4 * g
    assert abs(term) <= bound
    # the Taylor remainder carries 1/4! as well
    assert abs(term) <= bound / 24


def test_martingale_has_mean_zero_and_uncorrelated_increments():
    p = ModelParams(beta=3, lam=2, n=16, kappa=1.0, delta=0.0)
    cfg = IntegratorConfig(t_macro_max=0.2, sample_dt=0.05)
    Ms = []
    for r in range(24):
        tr = run(p, cfg, [FieldObserver(ODD, name="f")], rng=RandomStreams(31, r))
        Ms.append(dynkin_martingale(tr, "f"))
    Ms = np.array(Ms)
    assert np.all(Ms[:, 0] == 0.0)
    for k in range(1, Ms.shape[1]):
        assert abs(zscore(Ms[:, k], 0.0)) < 3
    inc = np.diff(Ms, axis=1)
    a, b = inc[:, 0], inc[:, -1]
    assert abs(zscore(a * b, 0.0)) < 3


def test_qv_vanishes_for_frozen_chain(rng):
    p = ModelParams(beta=2, lam=1, n=8, alpha=0.0, gamma=1e-300)
    cfg = IntegratorConfig(t_macro_max=0.02, bath_enabled=False, dt_micro=0.05)
    tr = run(p, cfg, [FieldObserver(GAUSS, name="f")], rng=RandomStreams(0))
    assert abs(predictable_qv(tr, "f")[-1]) < 1e-290
    s = sample_gibbs(p, 160, rng)
    assert qv_integrand(s, GAUSS, 0.0, p, bath_enabled=False) < 1e-290


def test_realized_and_predictable_qv_agree():
    p = ModelParams(beta=3, lam=2, n=16, kappa=1.0, delta=2.0)
    cfg = IntegratorConfig(t_macro_max=0.1)
    diffs, qvs = [], []
    for r in range(24):
        rec = run(p, cfg, [FieldObserver(ODD, name="f")], rng=RandomStreams(32, r)).records["f"][-1]
        diffs.append(rec["M"] ** 2 - rec["QV"])
        qvs.append(rec["QV"])
    assert abs(zscore(diffs, 0.0)) < 3
    # the limit constant for comparison
    limit = 2 * p.gamma * derive_params(p).sigma2 * cfg.t_macro_max * inner_product(
        lambda u: ODD.deriv(u, 1), lambda u: ODD.deriv(u, 1))
    assert np.mean(qvs) == pytest.approx(limit, rel=0.25)


def test_record_contents_and_term_sum():
    p = ModelParams(beta=3, lam=2, n=8, delta=2.0)
    tr = run(p, IntegratorConfig(t_macro_max=0.02), [FieldObserver(GAUSS, name="f")], rng=RandomStreams(1))
    rec = tr.records["f"][-1]
    assert set(rec["terms"]) == set(TERM_NAMES)
    assert sum(rec["terms"].values()) == pytest.approx(rec["integral"], rel=1e-12, abs=1e-15)
    assert rec["M"] == pytest.approx(rec["Y"] - tr.records["f"][0]["Y"] - rec["integral"])
    assert rec["off_theory"] is False


def test_off_theory_flag():
    p = ModelParams(beta=3, lam=2, n=8, delta=0.0)
    tr = run(p, IntegratorConfig(t_macro_max=0.01), [FieldObserver(GAUSS, name="f")], rng=RandomStreams(1))
    assert tr.records["f"][-1]["off_theory"] is True


def test_box_average_equals_field_pairing_exactly(rng):
    # n = 16 and eps = 1/4 keep every factor a power of two
    p = ModelParams(beta=2, lam=1, n=16, alpha=0.0)
    s = sample_gibbs(p, 64, rng)
    ctx = _ctx(p, 64)
    eps = 0.25
    rho = derive_params(p).rho
    via_field = iota_pairing(s, ctx, eps) / math.sqrt(p.n)
    assert via_field == box_average(s, ctx.bath_index, eps, p.n, rho)
    assert box_averages(s.sites, 4, rho)[ctx.bath_index] == pytest.approx(via_field, rel=1e-14)


def test_box_average_variance(rng):
    p = ModelParams(beta=2, lam=1, n=16)
    d = derive_params(p)
    vals = np.concatenate([box_averages(sample_gibbs(p, 400, rng).sites, 5, d.rho)[::5] for _ in range(100)])
    assert abs(zscore(vals ** 2, d.sigma2 / 5)) < 3


def test_flat_box_and_boundary_are_zero():
    p = ModelParams(beta=2, lam=1, n=8)
    flat = np.full(50, derive_params(p).rho)
    assert np.all(box_averages(flat, 3, derive_params(p).rho) == 0.0)
    q = p.with_(alpha=0.0, gamma=1e-300)
    cfg = IntegratorConfig(t_macro_max=0.01, bath_enabled=False, dt_micro=0.05)
    tr = run(q, cfg, [BoundaryObserver(0.25)], rng=RandomStreams(0), state=ChainState(np.full(160, derive_params(q).rho)))
    assert boundary_functional(tr, 0.25) == (0.0, 0.0)


@pytest.mark.parametrize("frac_tau", [0.0, 0.3])
def test_boundary_sites_cover_the_box(frac_tau):
    p = ModelParams(beta=1, lam=0, n=8, kappa=1.0)
    ctx = _ctx(p, 160, tau=frac_tau)
    right = boundary_sites(ctx, 0.5)
    left = boundary_sites(ctx, 0.5, mirrored=True)
    u = ctx.frame_coords
    assert np.all((u[right] > 0) & (u[right] <= 0.5 + 1e-12)) and right.size == 4
    assert np.all((u[left] < 0) & (u[left] >= -0.5 - 1e-12)) and left.size == 4


def test_fused_integrals_match_python_route():
    p = ModelParams(beta=3, lam=2, n=8, kappa=1.0, delta=0.5)
    cfg = IntegratorConfig(t_macro_max=0.05, sample_dt=0.025)
    ells = [1, 2, 3]
    py = [TimeIntegralObserver("py_bath", lambda s, c: [bath_fluctuation_integrand(s, c),
                                                         bath_gradient_integrand(s, c)]),
          TimeIntegralObserver("py_box", box_replacement_integrand(ells)),
          BoundaryObserver(2 / p.n, name="py_bc")]
    fused = [local_bath_observer(p.n), local_box_observer(ells), local_boundary_observer([2], p.n)]
    tr = run(p, cfg, py + fused, rng=RandomStreams(12))
    for t in range(len(tr.times)):
        r = tr.records
        assert np.allclose(r["bath"][t]["integral"], r["py_bath"][t]["integral"], rtol=1e-10, atol=1e-13)
        assert np.allclose(r["box"][t]["integral"], r["py_box"][t]["integral"], rtol=1e-10, atol=1e-13)
        assert np.allclose(r["box"][t]["sup_sq"], r["py_box"][t]["sup_sq"], rtol=1e-10, atol=1e-13)
        bc = r["bc"][t]["integral"]
        assert bc[0] == pytest.approx(r["py_bc"][t]["integral"], rel=1e-10, abs=1e-13)
        assert bc[1] == pytest.approx(r["py_bc"][t]["integral_mirror"], rel=1e-10, abs=1e-13)


def test_zero_weight_gives_zero_bg_integrand(rng):
    p = ModelParams(beta=2, lam=1, n=16)
    f = bg_integrand(lambda u: np.zeros_like(u), [0.25, 0.125])
    out = f(sample_gibbs(p, 320, rng), _ctx(p, 320))
    assert np.all(out == 0.0)


def test_bg_integrand_has_mean_zero_under_gibbs(rng):
    p = ModelParams(beta=2, lam=1, n=16)
    f = bg_integrand(lambda u: np.exp(-u * u), 0.25)
    ctx = _ctx(p, 320)
    vals = [f(sample_gibbs(p, 320, rng), ctx) for _ in range(3000)]
    assert abs(zscore(vals, 0.0)) < 3


def test_quadratic_forms_agree_at_integer_shift(rng):
    p = ModelParams(beta=2, lam=1, n=16, alpha=0.0)
    s = sample_gibbs(p, 320, rng)
    ctx = _ctx(p, 320)
    from bclab.field import quadratic_field_form, quadratic_lattice_form
    a = quadratic_lattice_form(s, ODD, 0.25, ctx)
    b = quadratic_field_form(s, ODD, 0.25, ctx)
    # Y(iota) = sqrt(n) * box when eps * n is an integer
    assert a == pytest.approx(b, rel=1e-12)


def test_moments_observer_records():
    p = ModelParams(beta=2, lam=1, n=8)
    s = ChainState(np.array([1.0, 2.0, 3.0, 2.0]))
    obs = MomentsObserver()
    obs.observe(s, _ctx(p, 4))
    rec = obs.record(_ctx(p, 4))
    assert rec["mean"] == 2.0 and rec["var"] == 0.5
    assert rec["m2"] == pytest.approx(np.mean((s.sites - 1.0) ** 2))
    assert rec["lag1"] == pytest.approx(np.mean((s.sites - 2) * (np.roll(s.sites, -1) - 2)))


def test_quadratic_observer_integrates_both_forms():
    p = ModelParams(beta=2, lam=1, n=16, alpha=0.0)
    tr = run(p, IntegratorConfig(t_macro_max=0.005), [QuadraticObserver(ODD, 0.25, name="q")],
             rng=RandomStreams(4))
    rec = tr.records["q"][-1]
    assert rec["lattice"] != 0.0 and rec["lattice"] == pytest.approx(rec["field"], rel=1e-10)
