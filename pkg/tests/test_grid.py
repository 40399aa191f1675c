import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from plasticswarm.errors import ConfigError, NonzeroMassWarning
from plasticswarm.grid import (
    Grid1D,
    GridND,
    antiderivative,
    circular_convolve,
    curl,
    derivative,
    divergence,
    integrate,
    laplacian,
    make_grid,
    poisson_solve_nd,
    sample_on_lags,
    spectral_derivative,
)

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def test_grid_layout():
    g = Grid1D(8)
    assert g.x[0] == -np.pi
    assert np.isclose(g.x[-1] + g.dx, np.pi)
    assert np.allclose(g.lags, np.array([0, 1, 2, 3, -4, -3, -2, -1]) * g.dx)


@pytest.mark.parametrize("n", [6, 7, 0, -2])
def test_grid_rejects_bad_sizes(n):
    with pytest.raises(ConfigError):
        Grid1D(n)


def test_gridnd_rejects_1d_and_4d():
    with pytest.raises(ConfigError):
        GridND((16,))
    with pytest.raises(ConfigError):
        GridND((8, 8, 8, 8))
    assert isinstance(make_grid(16), Grid1D)
    assert make_grid([16, 8]).shape == (16, 8)


def test_central_differences_match_their_symbols():
    # the central stencil maps sin(kx) to sin(k dx)/dx cos(kx) exactly
    g = Grid1D(64)
    k = 3
    f = np.sin(k * g.x)
    d1 = derivative(f, g, 1)
    d2 = derivative(f, g, 2)
    assert np.allclose(d1, np.sin(k * g.dx) / g.dx * np.cos(k * g.x), atol=1e-12)
    assert np.allclose(d2, -(2 - 2 * np.cos(k * g.dx)) / g.dx**2 * f, atol=1e-11)


def test_derivative_second_order_convergence():
    errs = []
    for n in (32, 64, 128):
        g = Grid1D(n)
        f = np.exp(np.sin(g.x))
        exact = np.cos(g.x) * f
        errs.append(np.max(np.abs(derivative(f, g) - exact)))
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(rates > 1.9)


def test_rectangle_rule_is_exact_for_trig_polynomials():
    g = Grid1D(16)
    assert abs(integrate(np.cos(3 * g.x) ** 2, g) - np.pi) < 1e-13
    assert abs(integrate(np.ones(16), g) - 2 * np.pi) < 1e-13


def test_spectral_derivative_exact_on_band_limited():
    g = GridND((16, 32))
    X, Y = g.mesh()
    f = np.sin(2 * X) * np.cos(5 * Y)
    assert np.allclose(spectral_derivative(f, g, axis=1), -5 * np.sin(2 * X) * np.sin(5 * Y), atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, 32, elements=finite))
def test_central_antiderivative_inverts_derivative(f):
    # up to the mean and the Nyquist mode, which the stencil annihilates
    g = Grid1D(32)
    F = antiderivative(f - f.mean(), g, kind="central")
    fh = np.fft.fft(f - f.mean())
    fh[16] = 0.0
    expected = np.fft.ifft(fh).real
    assert np.allclose(derivative(F, g), expected, atol=1e-9)


def test_antiderivative_warns_on_nonzero_mass():
    g = Grid1D(16)
    with pytest.warns(NonzeroMassWarning):
        antiderivative(np.ones(16), g)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        antiderivative(np.sin(g.x), g)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, 24, elements=finite))
def test_derivatives_of_periodic_fields_integrate_to_zero(f):
    g = Grid1D(24)
    scale = 1 + np.max(np.abs(f))
    assert abs(integrate(derivative(f, g, 1), g)) < 1e-10 * scale
    assert abs(integrate(derivative(f, g, 2), g)) < 1e-9 * scale * 24**2


def brute_convolve(kernel, f, g):
    n = f.size
    out = np.zeros(n)
    for m in range(n):
        for j in range(n):
            out[m] += kernel[(m - j) % n] * f[j]
    return out * g.dx


def test_circular_convolve_matches_direct_sum():
    g = Grid1D(40)
    rng = np.random.default_rng(1)
    k, f = rng.normal(size=40), rng.normal(size=40)
    assert np.allclose(circular_convolve(k, f, g), brute_convolve(k, f, g), atol=1e-12)


def test_convolution_lag_convention():
    # a kernel concentrated at lag +dx shifts the field one cell to the right
    g = Grid1D(16)
    k = np.zeros(16)
    k[1] = 1.0 / g.dx
    f = np.arange(16.0)
    assert np.allclose(circular_convolve(k, f, g), np.roll(f, 1))
    assert np.allclose(sample_on_lags(lambda x: x, g), g.lags)


@settings(max_examples=20, deadline=None)
@given(arrays(np.float64, (8, 8), elements=finite), arrays(np.float64, (8, 8), elements=finite),
       st.floats(-3, 3))
def test_convolution_is_bilinear(k, f, a):
    g = GridND((8, 8))
    lhs = circular_convolve(k, a * f + 1.0, g)
    rhs = a * circular_convolve(k, f, g) + circular_convolve(k, np.ones((8, 8)), g)
    assert np.allclose(lhs, rhs, atol=1e-9 * (1 + np.abs(lhs).max()))


def test_poisson_manufactured_solution_spectral():
    g = GridND((32, 32))
    X, Y = g.mesh()
    phi_true = np.sin(X) * np.cos(2 * Y) + 0.2 * np.cos(3 * X)
    Yf = 5 * np.sin(X) * np.cos(2 * Y) + 1.8 * np.cos(3 * X)  # -lap(phi_true)
    phi, w = poisson_solve_nd(Yf, g)
    assert np.max(np.abs(phi - phi_true)) < 1e-12
    assert np.max(np.abs(divergence(w, g, "spectral") - Yf)) < 1e-11
    assert np.max(np.abs(curl(w, g, "spectral"))) < 1e-11


@settings(max_examples=15, deadline=None)
@given(arrays(np.float64, (8, 8, 8), elements=finite))
def test_central_poisson_round_trip_3d(Yf):
    # the central symbol pairs with the FD divergence; only modes whose
    # wavenumbers are all 0 or Nyquist (zero symbol on every axis) are lost
    g = GridND((8, 8, 8))
    _, w = poisson_solve_nd(Yf, g, kind="central")
    Yh = np.fft.fftn(Yf - Yf.mean())
    for i in (0, 4):
        for j in (0, 4):
            for k in (0, 4):
                Yh[i, j, k] = 0.0
    expected = np.fft.ifftn(Yh).real
    scale = 1 + np.abs(Yf).max()
    assert np.allclose(divergence(w, g), expected, atol=1e-10 * scale)
    assert np.max(np.abs(curl(w, g))) < 1e-10 * scale


def test_laplacian_sums_axes():
    g = GridND((16, 16))
    X, Y = g.mesh()
    f = np.cos(X) + np.cos(2 * Y)
    exp = -(2 - 2 * np.cos(g.spacing[0])) / g.spacing[0] ** 2 * np.cos(X) \
        - (2 - 2 * np.cos(2 * g.spacing[1])) / g.spacing[1] ** 2 * np.cos(2 * Y)
    assert np.allclose(laplacian(f, g), exp, atol=1e-11)
