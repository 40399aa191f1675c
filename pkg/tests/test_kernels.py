import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from plasticswarm.errors import ConfigError
from plasticswarm.grid import Grid1D, GridND, integrate
from plasticswarm.kernels import (
    MorseParams,
    TargetDensity,
    bimodal_von_mises,
    check_isotropy,
    convolve_kernel,
    morse_kernel_1d,
    morse_kernel_nd,
    morse_pairwise_sum,
    morse_self_sum,
    sample_kernel,
    von_mises,
    von_mises_nd,
)

params_st = st.builds(
    MorseParams,
    st.floats(0.2, 2 * np.pi),
    st.floats(0.2, 2 * np.pi),
    st.floats(0.0, 5.0),
)


def periodized_morse(x, L_a, L_r, alpha):
    """sum over images of sgn(y) [exp(-|y|/L_r)/L_r - alpha exp(-|y|/L_a)/L_a], y = x + 2 pi n."""
    mp.mp.dps = 40
    x = mp.mpf(x)

    def term(n):
        y = x + 2 * mp.pi * n
        s = mp.sign(y)
        return s * (mp.exp(-abs(y) / L_r) / L_r - alpha * mp.exp(-abs(y) / L_a) / L_a)

    return mp.nsum(term, [-mp.inf, mp.inf])


@pytest.mark.parametrize("x", [0.1, 0.7, 1.5, 2.9, -0.4, -2.2, 3.1])
@pytest.mark.parametrize("p", [(np.pi, np.pi / 2, 2.0), (np.pi, np.pi / 6, 2.0), (1.0, 0.3, 3.2)])
def test_kernel_matches_periodized_free_space_morse(x, p):
    expected = float(periodized_morse(x, *[mp.mpf(v) for v in p]))
    got = float(morse_kernel_1d(MorseParams(*p), x))
    assert got == pytest.approx(expected, rel=1e-12, abs=1e-14)


@settings(max_examples=40, deadline=None)
@given(params_st, st.floats(-np.pi, np.pi))
def test_kernel_odd_periodic_and_zero_at_origin(p, x):
    f = lambda v: float(morse_kernel_1d(p, v))  # noqa: E731
    assert f(0.0) == 0.0
    assert f(-x) == pytest.approx(-f(x), abs=1e-12)
    if abs(x) > 1e-6:  # the kernel jumps at the origin
        assert f(x + 2 * np.pi) == pytest.approx(f(x), abs=1e-9)


def test_morse_params_validation():
    with pytest.raises(ConfigError):
        MorseParams(0.0, 1.0, 1.0)
    with pytest.raises(ConfigError):
        MorseParams(1.0, 7.0, 1.0)
    with pytest.raises(ConfigError):
        MorseParams(1.0, 1.0, -1.0)
    assert MorseParams(np.pi, np.pi / 4, 2).scaled(0.8, 1.2) == MorseParams(0.8 * np.pi, 1.2 * np.pi / 4, 2)


def test_pure_attraction_at_short_range_for_bimodal_settings():
    # with L_a = pi, L_r = pi/2, alpha = 2 the kernel is attractive for small x > 0
    p = MorseParams(np.pi, np.pi / 2, 2.0)
    xs = np.linspace(1e-3, 1.0, 50)
    assert np.all(morse_kernel_1d(p, xs) < 0)


def test_nd_kernel_is_separable_and_gradient_like():
    p = MorseParams(np.pi, np.pi / 4, 3.2)
    X, Y = np.meshgrid(np.linspace(-3, 3, 7), np.linspace(-3, 3, 5), indexing="ij")
    f = morse_kernel_nd(p, X, Y)
    assert np.allclose(f[0], morse_kernel_1d(p, X))
    assert np.allclose(f[1], morse_kernel_1d(p, Y))


@settings(max_examples=25, deadline=None)
@given(params_st, st.integers(0, 2**31 - 1), st.integers(1, 40))
def test_pairwise_sum_matches_brute_force(p, seed, n):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-np.pi, np.pi, n)
    x[: n // 3] = x[0]  # ties contribute nothing
    w = rng.uniform(0.1, 1.0, n)
    d = x[:, None] - x[None, :]
    brute = (morse_kernel_1d(p, d) * w[None, :]).sum(axis=1)
    scale = 1 + np.abs(brute).max()
    assert np.allclose(morse_self_sum(x, w, p), brute, atol=1e-10 * scale)
    t = rng.uniform(-np.pi, np.pi, 7)
    brute_t = (morse_kernel_1d(p, t[:, None] - x[None, :]) * w).sum(axis=1)
    assert np.allclose(morse_pairwise_sum(t, x, w, p), brute_t, atol=1e-10 * scale)


def test_self_sum_batched_rows_and_order_hint():
    p = MorseParams(np.pi, np.pi / 2, 2.0)
    rng = np.random.default_rng(3)
    x = rng.uniform(-np.pi, np.pi, (4, 50))
    rows = np.stack([morse_self_sum(r, 0.02, p) for r in x])
    assert np.allclose(morse_self_sum(x, 0.02, p), rows, atol=1e-14)
    hint = np.argsort(x + 0.01, axis=-1)
    out, order = morse_self_sum(x, 0.02, p, order_hint=hint)
    assert np.allclose(out, rows, atol=1e-14)
    assert np.all(np.diff(np.take_along_axis(x, order, axis=-1), axis=-1) >= 0)


@pytest.mark.parametrize("k", [0.5, 1.0, 3.0])
def test_von_mises_normalisation_against_bessel(k):
    # Z exp(k cos x) with Z = 1/(2 pi I0(k)); grid quadrature is spectrally accurate
    g = Grid1D(600)
    t = von_mises(0.3, k, g)
    z_exact = float(1 / (2 * mp.pi * mp.besseli(0, k)))
    assert t.values.max() == pytest.approx(z_exact * np.exp(k), rel=1e-3)
    assert abs(t.mass - 1.0) < 1e-12
    assert t.params["Z"] == pytest.approx(z_exact, rel=1e-12)


def test_bimodal_and_nd_targets():
    g = Grid1D(600)
    t = bimodal_von_mises(np.pi / 2, -np.pi / 2, 3.0, g)
    assert abs(t.mass - 1) < 1e-12
    # symmetric under x -> -x, i.e. index j -> n - j
    assert np.allclose(t.values[1:], t.values[1:][::-1], atol=1e-14)
    g2 = GridND((16, 24))
    t2 = von_mises_nd([0, 0], [1, 1], g2)
    assert abs(t2.mass - 1) < 1e-12
    with pytest.raises(ConfigError):
        TargetDensity(-np.ones(16), Grid1D(16))


def test_sampled_kernel_convolution_equals_direct_quadrature():
    g = Grid1D(64)
    p = MorseParams(np.pi, np.pi / 4, 2.0)
    rho = von_mises(0.5, 2.0, g).values
    F = convolve_kernel(sample_kernel(p, g), rho, g)
    d = g.x[:, None] - g.x[None, :]
    assert np.allclose(F, (morse_kernel_1d(p, d) * rho).sum(axis=1) * g.dx, atol=1e-12)


def test_isotropy_holds_for_separable_kernel():
    g = GridND((32, 32))
    ks = sample_kernel(MorseParams(np.pi, np.pi / 4, 3.2), g)
    psi = von_mises_nd([0.3, -1.0], [1.0, 2.0], g).values
    assert check_isotropy(ks, psi, g) < 1e-10


def test_isotropy_fails_for_rotational_kernel():
    # negative control: a kernel with a solenoidal part is not a gradient field
    g = GridND((32, 32))
    X, Y = g.lag_mesh()
    ks = np.stack([np.sin(X) + np.sin(Y), np.sin(Y) - np.sin(X)])
    psi = von_mises_nd([0.0, 0.0], [1.0, 1.0], g).values
    assert check_isotropy(ks, psi, g) > 1e-3


def test_zero_kernel_sampling():
    g = Grid1D(16)
    assert np.all(sample_kernel(None, g) == 0)
    assert sample_kernel(None, GridND((8, 8))).shape == (2, 8, 8)
    assert integrate(sample_kernel(MorseParams(1, 1, 1), g), g) == pytest.approx(0.0, abs=1e-12)
