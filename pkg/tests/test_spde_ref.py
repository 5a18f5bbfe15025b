import math

import numpy as np
import pytest
from scipy import integrate

from bclab.spde_ref import (HeatKernel, SpectralDirichletOU, chaos_pairing_samples, dirichlet_series_density,
                            heat_apply, inner_product, ou_covariance, ou_covariance_curve, sample_white_noise)
from bclab.testfn import get_test_function

from conftest import zscore

HALF = get_test_function("sdir:half-gauss:1")
ODD = get_test_function("sdir:odd-gauss:1")


class Bump:
    """``u^2 (2 - u)^2`` on (0, 2], zero elsewhere."""

    radius = 2.0

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        return np.where((u > 0) & (u <= 2), u * u * (2 - u) ** 2, 0.0)


def test_white_noise_variance_and_independence(rng):
    a, c = 2.0, 0.5
    left = lambda u: np.where(np.asarray(u) < -1, np.exp(-(np.asarray(u) + 3) ** 2), 0.0)
    yh, yl = [], []
    for _ in range(3000):
        wn = sample_white_noise((-8.0, 8.0, 0.02), c / a, rng)
        yh.append(wn.pair(HALF))
        yl.append(wn.pair(left))
    yh, yl = np.array(yh), np.array(yl)
    target = (c / a) * inner_product(HALF, HALF)
    assert abs(zscore(yh ** 2, target)) < 3
    assert abs(zscore(yh * yl, 0.0)) < 3


def test_white_noise_pairing_is_linear(rng):
    wn = sample_white_noise((-5.0, 5.0, 0.01), 1.0, rng)
    assert wn.pair(HALF.scaled(-4.0)) == pytest.approx(-4.0 * wn.pair(HALF), rel=1e-13)
    M = np.vstack([HALF(wn.points), ODD(wn.points)])
    assert wn.pair_many(M) == pytest.approx([wn.pair(HALF), wn.pair(ODD)], rel=1e-12)


def test_white_noise_rejects_bad_grids(rng):
    for grid, var in (((0, 1, 0), 1.0), ((1, 0, 0.1), 1.0), ((0, 1, 0.1), -1.0)):
        with pytest.raises(ValueError):
            sample_white_noise(grid, var, rng)


def test_free_kernel_at_origin():
    assert HeatKernel(1.0).density(0.25, 0.0, 0.0) == pytest.approx(1 / math.sqrt(math.pi), rel=1e-15)


@pytest.mark.parametrize("t", [0.01, 0.05, 0.2, 0.5, 1.0])
def test_dirichlet_kernel_matches_sine_series(t):
    u = np.linspace(0.05, 3.0, 25)
    img = HeatKernel(0.8, "dirichlet").density(t, u[:, None], u[None, :])
    series = dirichlet_series_density(t, u, u, 0.8, 40.0)
    assert np.max(np.abs(img - series)) < 1e-6


def test_dirichlet_kernel_blocks_the_origin():
    k = HeatKernel(1.0, "dirichlet")
    assert k.density(0.3, -0.5, 0.5) == 0.0 and k.density(0.3, 0.0, 0.7) == 0.0
    with pytest.raises(ValueError):
        HeatKernel(0.0)
    with pytest.raises(ValueError):
        HeatKernel(1.0, "neumann")


@pytest.mark.parametrize("bc", ["full_line", "dirichlet"])
def test_semigroup_property(bc):
    k = HeatKernel(0.7, bc)
    u = np.linspace(-3, 3, 25)
    two = heat_apply(heat_apply(ODD, 0.15, k), 0.25, k)
    one = heat_apply(ODD, 0.4, k)
    assert np.max(np.abs(two(u) - one(u))) < 1e-8
    assert heat_apply(ODD, 0.0, k) is ODD


def _ou_oracle(H, G, t, a, c, bc, lo=0.0, hi=8.0):
    k = HeatKernel(a, bc)
    val, _ = integrate.dblquad(lambda v, u: H(u) * float(k.density(t, u, v)) * G(v), lo, hi, lo, hi,
                               epsabs=1e-11, epsrel=1e-10)
    return (c / a) * val


@pytest.mark.parametrize("t", [0.25, 1.0])
@pytest.mark.parametrize("bc", ["full_line", "dirichlet"])
def test_ou_covariance_against_double_quadrature(t, bc):
    got = ou_covariance(HALF, HALF, t, 1.0, 1 / 3, bc)
    # the full-line kernel also sees the left half-line, where HALF vanishes
    assert got == pytest.approx(_ou_oracle(HALF, HALF, t, 1.0, 1 / 3, bc), rel=1e-7)


def test_ou_reference_curves():
    times = [0.0, 0.25, 0.5, 1.0]
    full = ou_covariance_curve(HALF, HALF, times, 1.0, 1 / 3, "full_line")
    dirichlet = ou_covariance_curve(HALF, HALF, times, 1.0, 1 / 3, "dirichlet")
    assert np.round(full, 4).tolist() == [0.0522, 0.0346, 0.0279, 0.0213]
    assert np.round(dirichlet, 4).tolist() == [0.0522, 0.0284, 0.0185, 0.0101]


def test_ou_covariance_limits():
    a, c = 1.5, 0.6
    for bc in ("full_line", "dirichlet"):
        assert ou_covariance(ODD, ODD, 0.0, a, c, bc) == pytest.approx((c / a) * inner_product(ODD, ODD), rel=1e-14)
        assert abs(ou_covariance(ODD, ODD, 1e5, a, c, bc)) < 1e-6
    with pytest.raises(ValueError):
        ou_covariance(ODD, ODD, -1.0, a, c)


def test_boundary_gap_is_image_term():
    H = Bump()
    a, c, t = 1.0, 0.5, 1.0
    gap = ou_covariance(H, H, t, a, c, "full_line") - ou_covariance(H, H, t, a, c, "dirichlet")
    image, _ = integrate.dblquad(lambda v, u: H(u) * float(HeatKernel(a).gaussian(t, u + v)) * H(v), 0, 2, 0, 2,
                                 epsabs=1e-12)
    assert gap > 0 and gap == pytest.approx((c / a) * image, rel=1e-7)


def test_spectral_time_integral_variance_by_monte_carlo():
    ou = SpectralDirichletOU(2.0, 3, a=1.0)
    rng = np.random.default_rng(5)
    f = rng.normal(size=(6, 6))
    f = 0.5 * (f + f.T)
    T = 1.0
    exact = ou.time_integral_variance(f, T)
    mc = ou.quadratic_functional_mc(f, T, steps=800, replicas=3000, rng=rng)
    assert abs(zscore(mc, 0.0)) < 3
    assert abs(zscore(mc ** 2, exact)) < 3


def test_box_coefficients_by_quadrature():
    ou = SpectralDirichletOU(3.0, 4)
    u, eps = np.array([-1.0, -0.1, 0.4]), 0.25
    coef = ou.box_coefficients(u, eps)

    def mode(k, x):
        if k < 4:
            return math.sqrt(2 / 3) * math.sin((k + 1) * math.pi * x / 3) if x > 0 else 0.0
        return math.sqrt(2 / 3) * math.sin((k - 3) * math.pi * -x / 3) if x < 0 else 0.0

    for i, ui in enumerate(u):
        for k in range(8):
            ref = integrate.quad(lambda x: mode(k, x), ui, ui + eps, points=[0.0] if ui < 0 < ui + eps else None)[0]
            assert coef[i, k] == pytest.approx(ref / eps, abs=1e-12)


def test_chaos_double_sum_matches_direct_formula():
    psi = lambda u: (1 - 2 * u * u) * np.exp(-u * u)
    dsum, direct = chaos_pairing_samples(psi, 0.25, 3.0, np.random.default_rng(9), samples=300, cells_per_eps=32)
    diff = dsum - direct
    assert abs(zscore(diff, 0.0)) < 3
    assert np.sqrt(np.mean(diff ** 2)) < 0.05 * np.sqrt(np.mean(direct ** 2))
    assert abs(zscore(direct, 0.0)) < 3
