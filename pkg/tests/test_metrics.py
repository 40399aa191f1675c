import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad
from scipy.special import i0

from plasticswarm.continuum import ClosedLoop, uniform_state
from plasticswarm.errors import TargetVanishes
from plasticswarm.config import load_preset
from plasticswarm.experiments import build_control, initial_state
from plasticswarm.grid import Grid1D, integrate
from plasticswarm.kernels import von_mises
from plasticswarm.metrics import diagnostics, kl_divergence, l2_error, masses


def vm_kl(mu1, k1, mu2, k2):
    """KL(VM(mu1, k1) || VM(mu2, k2)) from Bessel functions."""
    A = mp.besseli(1, k1) / mp.besseli(0, k1)
    return float(mp.log(mp.besseli(0, k2) / mp.besseli(0, k1)) + A * (k1 - k2 * mp.cos(mu1 - mu2)))


@pytest.mark.parametrize("mu1, k1, mu2, k2", [(0, 1, 0, 2), (0.5, 3, -1.0, 1), (0, 0.1, 2, 0.7), (1, 2, 1, 2)])
def test_kl_between_von_mises_matches_closed_form(mu1, k1, mu2, k2):
    g = Grid1D(600)
    got = kl_divergence(von_mises(mu1, k1, g).values, von_mises(mu2, k2, g).values, g)
    assert got == pytest.approx(vm_kl(mu1, k1, mu2, k2), abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0.0, 5.0), min_size=32, max_size=32), st.floats(-3, 3), st.floats(0, 4))
def test_kl_is_nonnegative(vals, mu, k):
    g = Grid1D(32)
    rho = np.array(vals) + 1e-3
    rho /= rho.sum() * g.dx
    assert kl_divergence(rho, von_mises(mu, k, g).values, g) >= -1e-12


def test_kl_zero_iff_equal_and_zero_log_zero():
    g = Grid1D(64)
    t = von_mises(0, 1, g).values
    assert kl_divergence(t, t, g) == pytest.approx(0.0, abs=1e-15)
    rho = np.where(np.abs(g.x) < 1, 1.0, 0.0)
    rho[np.abs(g.x) < 1] -= 1e-16  # round-off below zero is ignored
    rho /= rho.sum() * g.dx
    assert np.isfinite(kl_divergence(rho, t, g)) and kl_divergence(rho, t, g) > 0


def test_kl_rejects_vanishing_target():
    g = Grid1D(16)
    t = np.ones(16)
    t[3] = 0
    with pytest.raises(TargetVanishes):
        kl_divergence(np.ones(16), t, g)


def test_l2_and_diagnostics():
    g = Grid1D(64)
    assert l2_error(np.cos(g.x), np.zeros(64), g) == pytest.approx(np.sqrt(np.pi))
    s = uniform_state(g, 0.2, 0.3, 0.5)
    row = diagnostics(s, von_mises(0, 0, g).values)
    assert (row.M_L, row.M_F, row.Phi_F_obs) == pytest.approx((0.2, 0.3, 0.5))
    assert row.D_KL == pytest.approx(0.0, abs=1e-14)
    assert row.err_L2 == pytest.approx(0.0, abs=1e-14)


def test_kl_uniform_vs_von_mises_matches_adaptive_quadrature():
    g = Grid1D(600)
    z = 1 / (2 * np.pi * i0(1.0))
    expected, _ = quad(lambda x: np.log(1 / (2 * np.pi) / (z * np.exp(np.cos(x)))) / (2 * np.pi), -np.pi, np.pi,
                       epsabs=1e-13)
    got = kl_divergence(np.full(g.n, 1 / (2 * np.pi)), von_mises(0, 1, g).values, g)
    assert got == pytest.approx(expected, abs=1e-6)


def test_kl_nonnegative_over_random_smooth_pairs():
    g = Grid1D(256)
    rng = np.random.default_rng(5)

    def smooth():
        f = np.ones(g.n)
        for m in range(1, 5):
            f += rng.uniform(-0.2, 0.2) * np.cos(m * g.x + rng.uniform(0, 6))
        return f / integrate(f, g)

    assert min(kl_divergence(smooth(), smooth(), g) for _ in range(100)) >= -1e-10


def test_l2_matches_parseval():
    g = Grid1D(128)
    rng = np.random.default_rng(9)
    a, b = rng.normal(size=g.n), rng.normal(size=g.n)
    spectral = np.sqrt(2 * np.pi * np.sum(np.abs(np.fft.fft(a - b)) ** 2) / g.n**2)
    assert l2_error(a, b, g) == pytest.approx(spectral, rel=1e-8)


def test_kl_nonincreasing_along_feasible_closed_loop(feasible_config):
    cfg = feasible_config.with_(t_f=2.0)
    p = cfg.p
    res = ClosedLoop(cfg).run(uniform_state(cfg.grid, p / 2, p / 2, cfg.Phi_F), record_every=1)
    t, d = res.series("t"), res.series("D_KL")
    assert np.all(np.diff(d[t >= 0.1]) <= 1e-9)


def test_bimodal_initial_masses():
    spec = load_preset("fig1")
    s0 = initial_state(spec, build_control(spec))
    assert masses(s0) == pytest.approx((0.3, 0.3, 0.4), abs=1e-12)
