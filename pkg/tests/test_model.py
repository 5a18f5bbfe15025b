import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from bclab.model import (ChainState, ModelParams, ParameterError, derive_params, frame_speed, load_model_config,
                         parse_keyvalue, potential_grad, sample_gibbs)

from conftest import zscore


def test_means_at_reference_point():
    d = derive_params(ModelParams(beta=2, lam=1, alpha=1, n=4, kappa=0.5))
    assert (d.rho, d.sigma2, d.c_n) == (1.0, 0.5, 16.0)


def test_unit_exponential_moments():
    d = derive_params(ModelParams(beta=1, lam=0))
    assert (d.rho, d.sigma2) == (1.0, 1.0)


@given(st.floats(0.5, 3.0), st.integers(1, 200))
def test_zero_asymmetry_has_no_frame_speed(kappa, n):
    assert derive_params(ModelParams(alpha=0.0, kappa=kappa, n=n)).c_n == 0.0


@given(st.floats(0.05, 20.0), st.floats(-0.95, 10.0), st.floats(0.1, 10.0))
def test_moments_scale_with_beta(beta, lam, c):
    a = derive_params(ModelParams(beta=beta, lam=lam))
    b = derive_params(ModelParams(beta=c * beta, lam=lam))
    assert b.rho == pytest.approx(a.rho / c, rel=1e-12)
    assert b.sigma2 == pytest.approx(a.sigma2 / c ** 2, rel=1e-12)


def test_frame_speed_is_cn_over_n_squared():
    p = ModelParams(alpha=0.7, beta=2, lam=1, kappa=1.0, n=16)
    assert frame_speed(p) == pytest.approx(derive_params(p).c_n / 256)


@pytest.mark.parametrize("kw", [dict(beta=0.0), dict(beta=-1.0), dict(lam=-1.0), dict(gamma=0.0), dict(kappa=0.49),
                                dict(n=0), dict(n=2.5), dict(alpha=math.inf), dict(delta=math.nan)])
def test_invalid_parameters_raise(kw):
    with pytest.raises(ParameterError):
        ModelParams(**kw)


def test_exponential_tail_probability(rng):
    x = sample_gibbs(ModelParams(beta=1, lam=0), 200_000, rng).sites
    target = stats.gamma(a=1.0, scale=1.0).sf(1.0)
    assert target == pytest.approx(math.exp(-1))
    assert abs(zscore(x > 1.0, target)) < 4


def test_gibbs_mean_and_variance(rng):
    x = sample_gibbs(ModelParams(beta=2, lam=1), 200_000, rng).sites
    assert abs(zscore(x, 1.0)) < 4
    assert abs(zscore((x - x.mean()) ** 2, 0.5)) < 4


def test_exponential_skewness(rng):
    # Gamma shape 1 skewness from the closed-form moments
    k = sp.Symbol("k", positive=True)
    skew = float((2 / sp.sqrt(k)).subs(k, 1))
    # standard error from independent batches, since the Gaussian formula ignores the heavy tail
    batches = [stats.skew(sample_gibbs(ModelParams(beta=1, lam=0), 20_000, rng).sites) for _ in range(40)]
    assert abs(zscore(batches, skew)) < 4


def test_small_shape_never_returns_zero(rng):
    s = sample_gibbs(ModelParams(beta=1, lam=-0.999), 100_000, rng)
    assert np.all(s.sites > 0)


def test_gibbs_window_as_range(rng):
    assert sample_gibbs(ModelParams(), range(-5, 7), rng).length == 12
    with pytest.raises(ParameterError):
        sample_gibbs(ModelParams(), 2, rng)


def test_potential_gradient_values():
    assert potential_grad(2.0, ModelParams(beta=1, lam=2)) == 0.0
    assert potential_grad(1.0, ModelParams(beta=1, lam=0)) == 1.0
    with pytest.raises(ParameterError):
        potential_grad(0.0, ModelParams())


@given(st.floats(0.01, 50.0), st.floats(0.01, 50.0))
@settings(max_examples=50)
def test_potential_gradient_at_mean(beta, lam):
    b, l, u = sp.symbols("b l u", positive=True)
    expr = (b - l / u).subs(u, (l + 1) / b)
    oracle = float(sp.simplify(expr).subs({b: beta, l: lam}))
    got = potential_grad(derive_params(ModelParams(beta=beta, lam=lam)).rho, ModelParams(beta=beta, lam=lam))
    assert got == pytest.approx(oracle, rel=1e-9)
    assert got == pytest.approx(beta / (lam + 1), rel=1e-9) and got > 0


def test_chain_state_validation():
    with pytest.raises(ParameterError):
        ChainState(np.array([1.0, 0.0, 1.0]))
    with pytest.raises(ParameterError):
        ChainState(np.ones(2))
    s = ChainState(np.ones(5), tau=1.5)
    c = s.copy()
    c.sites[0] = 9.0
    assert s.sites[0] == 1.0 and c.tau == 1.5


def test_parse_keyvalue():
    text = """
    # model
    beta = 2      # inverse temperature
    lambda=1/2
    n = 16
    flag = TRUE
    grid = 16, 32,64
    name = hello
    """
    v = parse_keyvalue(text)
    assert v == {"beta": 2, "lambda": 0.5, "n": 16, "flag": True, "grid": [16, 32, 64], "name": "hello"}
    with pytest.raises(ParameterError, match="line 1"):
        parse_keyvalue("beta 2")
    with pytest.raises(ParameterError):
        parse_keyvalue("= 3")


def test_load_model_config(tmp_path):
    f = tmp_path / "m.cfg"
    f.write_text("beta=2\nlambda=1\nkappa=1\nseed=5\nwindow_buffer=4\n")
    p, rest = load_model_config(f)
    assert p == ModelParams(beta=2, lam=1, kappa=1.0)
    assert rest == {"seed": 5, "window_buffer": 4}


def test_params_round_trip():
    p = ModelParams(beta=2, lam=1.5, alpha=-0.5, gamma=3, kappa=0.75, delta=-2, n=32)
    assert ModelParams.from_dict(p.as_dict()) == p
    assert p.as_dict()["lambda"] == 1.5
