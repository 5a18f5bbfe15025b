"""Exact invariants that hold by construction, runnable in a few seconds.

Each check returns ``(ok, info)``.  :func:`run_all` is what ``bclab selftest``
executes.
"""

from __future__ import annotations

import math
import time

import numpy as np

from .dynamics import (IntegratorConfig, RandomStreams, bath_site, bath_step, drift_step, exchange_step, run)
from .experiments import box_kernel_rs, regime_label
from .field import (FieldObserver, TimeIntegralObserver, box_averages, generator_action, iota_pairing,
                    local_boundary_observer)
from .model import ChainState, ModelParams, derive_params, potential_grad, sample_gibbs
from .spde_ref import HeatKernel, heat_apply, inner_product, ou_covariance, sample_white_noise
from .stats import nonlinearity_approx_test, rs_functionals
from .testfn import (GridFunction, bump_a, discrete_grad, discrete_laplacian, get_test_function,
                     kernel_chi, kernel_iota, mollify_check_rho, norm_2n, norm_inf_k, psi_glue,
                     sobolev_norm, tanaka)

GAUSS = get_test_function("s:hermite-gauss:0")


def _flat(p: ModelParams, length: int = 64) -> ChainState:
    return ChainState(np.full(length, derive_params(p).rho))


def zero_asymmetry_speed():
    return all(derive_params(ModelParams(alpha=0.0, kappa=k, n=n)).c_n == 0.0
               for k in (0.5, 1.0, 2.0) for n in (1, 16, 64)), "c_n = 0"


def potential_values():
    a = potential_grad(2.0, ModelParams(beta=1, lam=2))
    b = potential_grad(1.0, ModelParams(beta=1, lam=0))
    return a == 0.0 and b == 1.0, f"{a}, {b}"


def bath_site_trivial():
    p = ModelParams(alpha=0.0)
    ok = bath_site(0.0, ModelParams()) == 0 and all(bath_site(t, p) == 0 for t in (0.0, 3.7, 1e6))
    return ok, "tau = 0 and alpha = 0 give site 0"


def drift_fixed_points():
    p = ModelParams(beta=2, lam=1, n=8)
    flat = _flat(p)
    moved = drift_step(flat, p, 0.3)
    s = sample_gibbs(p, 64, np.random.default_rng(0))
    ident = drift_step(s, p.with_(alpha=0.0), 0.3)
    return np.array_equal(moved.sites, flat.sites) and np.array_equal(ident.sites, s.sites), "flat and alpha = 0"


def exchange_trivial():
    p = ModelParams(beta=2, lam=1, n=8)
    s = sample_gibbs(p, 64, np.random.default_rng(1))
    same, k = exchange_step(s, p, 0.0, np.random.default_rng(2))
    moved, k2 = exchange_step(s, p, 5.0, np.random.default_rng(3))
    ok = np.array_equal(same.sites, s.sites) and k == 0 and k2 > 0
    ok &= np.array_equal(np.sort(moved.sites), np.sort(s.sites))
    return ok, f"{k2} swaps preserve the multiset"


def bath_far_limit():
    p = ModelParams(beta=2, lam=1, n=8, delta=400.0)
    s = sample_gibbs(p, 64, np.random.default_rng(4))
    out = bath_step(s, p, 1.0, 0.0, np.random.default_rng(5))
    return np.array_equal(out.sites, s.sites), "n^-delta underflows to zero"


def frozen_dynamics():
    p = ModelParams(beta=2, lam=1, n=8, alpha=0.0, gamma=1e-300)
    cfg = IntegratorConfig(t_macro_max=0.05, bath_enabled=False, sample_dt=0.01, dt_micro=0.05)
    s = sample_gibbs(p, 160, np.random.default_rng(6))
    obs = FieldObserver(GAUSS, name="f")
    tr = run(p, cfg, [obs], rng=RandomStreams(6), state=s)
    M = [r["M"] for r in tr.records["f"]]
    # gamma must stay positive, so the frozen chain is the gamma -> 0 limit
    return np.array_equal(tr.final_state.sites, s.sites) and max(map(abs, M)) < 1e-290, "no moves, M ~ 0"


def odd_member_at_origin():
    H = get_test_function("sdir:odd-gauss:1")
    return float(H(0.0)) == 0.0 and float(H.deriv(0.0, 2)) == 0.0, "H(0) = H''(0) = 0"


def gaussian_sup_norm():
    a = norm_inf_k(GAUSS, 0)
    b = norm_inf_k(GAUSS.scaled(-3.0), 1)
    c = norm_inf_k(GAUSS, 1)
    return abs(a - 1.0) < 1e-12 and abs(b - 3.0 * c) < 1e-9 * c, f"{a:.12f}"


def lattice_calculus():
    sq = lambda u: np.asarray(u, dtype=float) ** 2
    lin = lambda u: 3.0 * np.asarray(u, dtype=float) - 1.0
    x = np.arange(-5, 6)
    ok = np.allclose(discrete_laplacian(sq, 7, x), 2.0, atol=1e-9)
    ok &= float(discrete_grad(sq, 2, 1)) == 1.5
    ok &= np.allclose(discrete_grad(lin, 5, x), 3.0) and np.allclose(discrete_laplacian(lin, 5, x), 0.0, atol=1e-9)
    return bool(ok), "quadratic and linear"


def zero_norms():
    zero = lambda u: np.zeros_like(np.asarray(u, dtype=float))
    G = GridFunction(np.zeros(101), 10, -50)
    return norm_2n(zero, 16) == 0.0 and sobolev_norm(G, 1) == 0.0 and sobolev_norm(G, 0.5) == 0.0, "all zero"


def kernel_values():
    iota = kernel_iota(0.0, 0.5)
    ok = float(iota(0.25)) == 2.0 and float(iota(0.0)) == 0.0 and float(iota(0.6)) == 0.0
    ok &= kernel_chi(0.25, 0.5) == 0.5 and kernel_chi(1.0, 0.5) == 1.0
    return ok, "half-open box, chi"


def mollify_constant():
    G = GridFunction(np.ones(801), 64, -400)
    eps = 0.25
    out = mollify_check_rho(G, eps)
    u = out.points
    inner = np.abs(u) <= 6.0 - eps
    err = float(np.max(np.abs(out.values[inner] - kernel_chi(u[inner], eps))))
    return err < 1e-12, f"max error {err:.1e}"


def glue_and_tanaka():
    psi = psi_glue(4.0, 0.5)
    h = tanaka(0.2)
    mass = float(np.sum(bump_a()(np.linspace(0, 1, 200001)[1:-1])) / 200000)
    ok = np.all(psi(np.linspace(-3, 0, 31)) == 0.0)
    ok &= abs(h(0.2) - 0.1) < 1e-15 and abs(h(0.1) - 0.025) < 1e-15 and abs(mass - 1.0) < 1e-6
    return bool(ok), f"bump mass {mass:.8f}"


def centred_field():
    p = ModelParams(beta=2, lam=1, n=4, alpha=0.0)
    flat = _flat(p, 40)
    obs = FieldObserver(GAUSS, dynkin=False)
    ctx = _ctx(p, 40)
    obs.observe(flat, ctx)
    y0 = obs.y
    bump = flat.copy()
    bump.sites[0] += 1.0
    obs.observe(bump, ctx)
    return y0 == 0.0 and abs(obs.y - 0.5) < 1e-15, f"{y0}, {obs.y}"


def _ctx(p, length):
    from .dynamics import RunContext
    return RunContext(p, length, 1.0)


def asymmetric_terms_vanish():
    p = ModelParams(beta=2, lam=1, n=8, alpha=0.0)
    s = sample_gibbs(p, 160, np.random.default_rng(7))
    g = generator_action(s, GAUSS, 0.0, p)
    pl = p.with_(alpha=1.0)
    flat = _flat(pl, 40)
    lap = generator_action(flat, _Lin(), 0.0, pl, bath_enabled=False).laplacian_term
    ok = g.nonlinear_term == g.laplacian_correction == g.frame_mismatch == 0.0 and lap == 0.0
    return ok, "alpha = 0 and linear H on a flat state"


class _Lin:
    ident = "linear"

    def __call__(self, u):
        return np.asarray(u, dtype=float)

    def value_and_slope(self, u):
        u = np.asarray(u, dtype=float)
        return u, np.ones_like(u)


def box_flat_state():
    p = ModelParams(beta=2, lam=1, n=8, alpha=0.0, gamma=1e-300)
    box = box_averages(_flat(p).sites, 4, derive_params(p).rho)
    cfg = IntegratorConfig(t_macro_max=0.02, bath_enabled=False, dt_micro=0.05)
    tr = run(p, cfg, [local_boundary_observer([2], p.n)], rng=RandomStreams(0), state=_flat(p, 160))
    return np.all(box == 0.0) and max(tr.records["bc"][-1]["sup_sq"]) == 0.0, "zero box and functional"


def fused_matches_python():
    p = ModelParams(beta=3, lam=2, kappa=1.0, n=8)
    cfg = IntegratorConfig(t_macro_max=0.05, sample_dt=0.05)
    eps = 2 / p.n
    py = TimeIntegralObserver("py", lambda s, c: iota_pairing(s, c, eps))
    tr = run(p, cfg, [py, local_boundary_observer([2], p.n)], rng=RandomStreams(3))
    x, y = tr.records["py"][-1]["integral"], tr.records["bc"][-1]["integral"][0]
    return abs(x - y) <= 1e-9 * max(1.0, abs(x)), f"{x:.12g} vs {y:.12g}"


def chunk_invariance():
    p = ModelParams(beta=3, lam=2, n=8)
    cfg = IntegratorConfig(t_macro_max=0.05, sample_dt=0.01)
    a = run(p, cfg, [], rng=RandomStreams(5)).final_state.sites
    b = run(p, cfg, [FieldObserver(GAUSS)], rng=RandomStreams(5)).final_state.sites
    return bool(np.array_equal(a, b)), "observers do not perturb the path"


def kernel_functionals():
    eps = 0.125
    rs = box_kernel_rs(eps, chi=False)
    u = np.linspace(-1, 1, 41)
    zero = rs_functionals(np.zeros((41, 41)), u)
    # the zero kernel misses unit mass everywhere: only the L4 term survives
    width = u.size * (u[1] - u[0])
    ok = abs(rs.R - math.sqrt(eps / 2)) < 0.01 and abs(rs.S - 2.0) < 1e-9
    ok &= zero.S == 0.0 and zero.parts["moment"] == 0.0 and abs(zero.R - width ** 0.25) < 1e-12
    return ok, f"R {rs.R:.4f}, S {rs.S:.4f}"


def identical_kernels():
    v = nonlinearity_approx_test([(0.1, 0.1)], [0.0], [1.0], [0.0, 0.0], 1.0)
    return v.lhs == [0.0] and v.ratios == [0.0], "eps = delta gives zero"


def white_noise_linear():
    wn = sample_white_noise((-4.0, 4.0, 0.01), 1.0, np.random.default_rng(8))
    a = wn.pair(GAUSS)
    b = wn.pair(GAUSS.scaled(2.5))
    return abs(b - 2.5 * a) <= 1e-13 * max(1.0, abs(a)), f"{a:.6f}"


def semigroup_property():
    k = HeatKernel(1.0, "dirichlet")
    H = get_test_function("sdir:odd-gauss:1")
    two = heat_apply(heat_apply(H, 0.1, k), 0.2, k)
    one = heat_apply(H, 0.3, k)
    u = np.linspace(-3, 3, 13)
    err = float(np.max(np.abs(two(u) - one(u))))
    return err < 1e-8, f"max error {err:.1e}"


def ou_limits():
    H = get_test_function("sdir:odd-gauss:1")
    a0 = ou_covariance(H, H, 0.0, 2.0, 0.5, "dirichlet")
    want = 0.25 * inner_product(H, H)
    far = ou_covariance(H, H, 1e4, 2.0, 0.5, "full_line")
    return abs(a0 - want) < 1e-14 and abs(far) < 1e-4 * want, f"{a0:.6g}, {far:.2e}"


def regimes():
    got = {(k, d): regime_label(k, d) for k in (0.5, 1.0) for d in (-2.0, 0.0, 2.0)}
    want = {(0.5, -2.0): "SBE(S_0)+BC", (0.5, 0.0): "SBE(S_Dir)+BC", (0.5, 2.0): "SBE(S)",
            (1.0, -2.0): "OU(S_0)+BC", (1.0, 0.0): "OU(S_Dir)+BC", (1.0, 2.0): "OU(S)"}
    return got == want, "six cells"


def determinism():
    p = ModelParams(beta=3, lam=2, n=8)
    cfg = IntegratorConfig(t_macro_max=0.02)
    a = run(p, cfg, rng=RandomStreams(11, (0, 1, 2))).final_state.sites
    b = run(p, cfg, rng=RandomStreams(11, (0, 1, 2))).final_state.sites
    c = run(p, cfg, rng=RandomStreams(11, (0, 1, 3))).final_state.sites
    return np.array_equal(a, b) and not np.array_equal(a, c), "same key, same path"


CHECKS = [zero_asymmetry_speed, potential_values, bath_site_trivial, drift_fixed_points, exchange_trivial,
          bath_far_limit, frozen_dynamics, odd_member_at_origin, gaussian_sup_norm, lattice_calculus,
          zero_norms, kernel_values, mollify_constant, glue_and_tanaka, centred_field,
          asymmetric_terms_vanish, box_flat_state, fused_matches_python, chunk_invariance,
          kernel_functionals, identical_kernels, white_noise_linear, semigroup_property, ou_limits,
          regimes, determinism]


def run_check(fn) -> dict:
    t0 = time.perf_counter()
    try:
        ok, info = fn()
    except Exception as exc:  # a crashing check is a failing check
        ok, info = False, f"{type(exc).__name__}: {exc}"
    return {"check": fn.__name__, "pass": bool(ok), "info": str(info), "seconds": time.perf_counter() - t0}


def run_all() -> list[dict]:
    return [run_check(fn) for fn in CHECKS]
