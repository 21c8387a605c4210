import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from vbspca.special import (folded_normal_mean, folded_normal_mean_grad, folded_normal_mean_hess,
                            normal_cdf)

finite_u = st.floats(-50, 50, allow_nan=False)
pos_s2 = st.floats(1e-6, 1e3, allow_nan=False)


def quad_mean_abs(u, s2):
    s = math.sqrt(s2)
    dens = lambda x: abs(x) * math.exp(-0.5 * ((x - u) / s) ** 2) / (s * math.sqrt(2 * math.pi))
    lo, hi = u - 12 * s, u + 12 * s
    pts = [0.0] if lo < 0 < hi else None
    val, _ = integrate.quad(dens, lo, hi, points=pts, epsabs=1e-13, epsrel=1e-13, limit=200)
    return val


def test_normal_cdf_examples():
    assert normal_cdf(0.0) == 0.5
    assert normal_cdf(50.0) == 1.0
    assert abs(normal_cdf(1.959964) - 0.975) < 1e-7


@given(st.floats(-40, 40))
def test_normal_cdf_symmetry(x):
    assert abs(normal_cdf(x) + normal_cdf(-x) - 1.0) < 1e-12


@given(st.floats(-40, 40), st.floats(0, 5))
def test_normal_cdf_monotone(x, dx):
    assert normal_cdf(x + dx) >= normal_cdf(x)


def test_folded_mean_examples():
    assert abs(folded_normal_mean(0.0, 1.0) - 0.7978845608) < 1e-10
    assert abs(folded_normal_mean(3.0, 1e-12) - 3.0) < 1e-9
    assert abs(folded_normal_mean(1.0, 1.0) - 1.16663) < 1e-5
    assert folded_normal_mean(-2.5, 1e-301) == 2.5


def test_folded_mean_domain():
    for bad in (0.0, -1.0, float("nan")):
        with pytest.raises(ValueError):
            folded_normal_mean(1.0, bad)
        with pytest.raises(ValueError):
            folded_normal_mean_grad(1.0, bad)


def test_folded_mean_matches_quadrature():
    us = np.linspace(-4, 4, 10)
    s2s = [0.01, 0.3, 1.0, 2.5, 9.0]
    worst = max(abs(folded_normal_mean(u, s2) - quad_mean_abs(u, s2)) for u in us for s2 in s2s)
    assert worst < 1e-8


def test_folded_mean_broadcasts():
    u = np.linspace(-2, 2, 7)
    out = folded_normal_mean(u[:, None], np.array([0.5, 2.0])[None, :])
    assert out.shape == (7, 2)
    assert out[3, 0] == folded_normal_mean(0.0, 0.5)


def test_grad_examples():
    du, _ = folded_normal_mean_grad(0.0, 1.0)
    assert du == 0.0
    du, _ = folded_normal_mean_grad(5.0, 1e-6)
    assert abs(du - 1.0) < 1e-12
    du, _ = folded_normal_mean_grad(1.0, 1.0)
    assert abs(du - 0.68269) < 1e-5


def test_grad_finite_differences(rng):
    u = rng.uniform(-5, 5, 1000)
    s2 = np.exp(rng.uniform(np.log(0.05), np.log(20.0), 1000))
    du, ds2 = folded_normal_mean_grad(u, s2)
    h = 1e-5
    fd_u = (folded_normal_mean(u + h, s2) - folded_normal_mean(u - h, s2)) / (2 * h)
    hs = h * s2
    fd_s = (folded_normal_mean(u, s2 + hs) - folded_normal_mean(u, s2 - hs)) / (2 * hs)
    # relative error, with an absolute floor where the derivative itself vanishes
    assert np.max(np.abs(du - fd_u) / np.maximum(np.abs(du), 1e-3)) < 1e-5
    assert np.max(np.abs(ds2 - fd_s) / np.maximum(np.abs(ds2), 1e-3)) < 1e-5


def test_hessian_finite_differences(rng):
    u = rng.uniform(-3, 3, 200)
    s2 = np.exp(rng.uniform(np.log(0.1), np.log(5.0), 200))
    duu, dus, dss = folded_normal_mean_hess(u, s2)
    h = 1e-6
    gp, sp = folded_normal_mean_grad(u + h, s2)
    gm, sm = folded_normal_mean_grad(u - h, s2)
    assert np.allclose(duu, (gp - gm) / (2 * h), rtol=1e-5, atol=1e-6)
    assert np.allclose(dus, (sp - sm) / (2 * h), rtol=1e-5, atol=1e-6)
    _, sp = folded_normal_mean_grad(u, s2 + h)
    _, sm = folded_normal_mean_grad(u, s2 - h)
    assert np.allclose(dss, (sp - sm) / (2 * h), rtol=1e-5, atol=1e-6)


@settings(max_examples=300)
@given(finite_u, pos_s2)
def test_folded_mean_lower_bounds(u, s2):
    f = folded_normal_mean(u, s2)
    assert f >= abs(u) * (1 - 1e-15)
    assert f >= math.sqrt(2 * s2 / math.pi) * math.exp(-u * u / (2 * s2)) * (1 - 1e-12)


@given(finite_u, pos_s2)
def test_folded_mean_even(u, s2):
    assert folded_normal_mean(-u, s2) == folded_normal_mean(u, s2)


@given(finite_u, pos_s2, st.floats(1.0, 10.0))
def test_folded_mean_nondecreasing_in_variance(u, s2, factor):
    assert folded_normal_mean(u, s2 * factor) >= folded_normal_mean(u, s2) * (1 - 1e-14)
