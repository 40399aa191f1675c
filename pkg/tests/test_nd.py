import numpy as np
import pytest

from plasticswarm.continuum import ClosedLoop, ControlConfig, SwarmState, uniform_state
from plasticswarm.grid import GridND, curl, divergence, integrate, l2_norm
from plasticswarm.kernels import MorseParams, von_mises_nd
from plasticswarm.steady import predict_steady_profiles


def random_state(grid, seed, masses=(0.3, 0.5, 0.2)):
    rng = np.random.default_rng(seed)

    out = []
    for m in masses:
        f = np.ones(grid.shape)
        for c in grid.mesh():
            f = f + 0.2 * np.sin(c + rng.uniform(0, 6)) * rng.uniform(0.5, 1)
        out.append(f * m / integrate(f, grid))
    return SwarmState(*out, grid)


def test_forcing_has_zero_mean(config2d):
    s = random_state(config2d.grid, 0)
    Y = ClosedLoop(config2d).forcing(s)
    assert abs(Y.mean()) < 1e-10


def test_momentum_realises_forcing_and_is_curl_free():
    g = GridND((64, 64))
    cfg = ControlConfig(D=0.05, K=1, K_FL=1, K_LF=2, Phi_F=0.2, kernel=MorseParams(np.pi, np.pi / 4, 3.2),
                        target=von_mises_nd([0, 0], [1, 1], g))
    loop = ClosedLoop(cfg)
    s = random_state(g, 1)
    Y = loop.forcing(s)
    w = loop.momentum(s)
    assert np.max(np.abs(divergence(w, g) - (Y - Y.mean()))) < 1e-6
    assert np.max(np.abs(curl(w, g))) < 1e-8


def test_reaction_integral_nd(config2d):
    s = random_state(config2d.grid, 2)
    _, q = ClosedLoop(config2d).controls(s)
    M_L, M_F, _ = s.masses
    assert integrate(q, config2d.grid) == pytest.approx(M_F - 2 * M_L, abs=1e-8)


def test_reaction_vanishes_for_balanced_inert_state():
    g = GridND((16, 16))
    t = von_mises_nd([0, 0], [0, 0], g)  # uniform target
    cfg = ControlConfig(D=0.05, K=1, K_FL=1, K_LF=1, Phi_F=0.2, kernel=None, target=t)
    s = uniform_state(g, 0.4, 0.4, 0.2)
    u, q = ClosedLoop(cfg).controls(s)
    assert np.max(np.abs(u)) < 1e-14 and np.max(np.abs(q)) < 1e-14


def test_forcing_dominated_by_gain_for_large_k(config2d):
    s = random_state(config2d.grid, 3)
    rels = []
    for K in (1.0, 10.0, 100.0):
        loop = ClosedLoop(config2d.with_(K=K))
        Y = loop.forcing(s)
        Ke = -K * loop.error(s)
        rels.append(np.linalg.norm(Y - Ke) / np.linalg.norm(Ke))
    assert rels[1] == pytest.approx(rels[0] / 10, rel=1e-9)
    assert rels[2] == pytest.approx(rels[0] / 100, rel=1e-9)


def test_error_decay_rate_2d(config2d):
    cfg = config2d.with_(t_f=1.0)
    res = ClosedLoop(cfg).run(uniform_state(cfg.grid, 0.4, 0.4, 0.2), record_every=50)
    t, e = res.series("t"), res.series("err_L2")
    slope = np.polyfit(t, np.log(e), 1)[0]
    assert slope == pytest.approx(-cfg.K, rel=0.03)


def test_predicted_profiles_are_fixed_point_2d(config2d):
    pred = predict_steady_profiles(config2d)
    assert pred.feasible
    g = config2d.grid
    s0 = SwarmState(pred.rho_L_bar, pred.rho_F_bar, pred.eta_F_bar, g)
    res = ClosedLoop(config2d).run(s0, record_every=500)
    fs = res.final_state
    assert res.completed
    for a, b in ((fs.rho_L, pred.rho_L_bar), (fs.rho_F, pred.rho_F_bar), (fs.eta_F, pred.eta_F_bar)):
        assert l2_norm(a - b, g) < 1e-3


def test_monomodal_2d_reaches_predicted_masses(config2d):
    res = ClosedLoop(config2d).run(uniform_state(config2d.grid, 0.4, 0.4, 0.2), record_every=100)
    assert res.completed
    last = res.rows[-1]
    assert last.D_KL < 1e-4
    assert (last.M_L, last.M_F) == pytest.approx((0.8 / 3, 1.6 / 3), abs=2e-3)
    assert abs(last.M_L + last.M_F + last.Phi_F_obs - 1) < 1e-12


def test_three_dimensional_smoke():
    g = GridND((16, 16, 16))
    cfg = ControlConfig(D=0.05, K=1, K_FL=1, K_LF=2, Phi_F=0.2, kernel=MorseParams(np.pi, np.pi / 4, 1.0),
                        target=von_mises_nd([0, 0, 0], [0.3, 0.3, 0.3], g), dt=2e-3, t_f=0.2)
    res = ClosedLoop(cfg).run(uniform_state(g, 0.4, 0.4, 0.2), record_every=10)
    assert res.completed
    e = res.series("err_L2")
    assert np.allclose(e, e[0] * (1 - cfg.dt) ** (10 * np.arange(e.size)), rtol=1e-8)
    s = res.final_state
    w = ClosedLoop(cfg).momentum(s)
    assert np.max(np.abs(curl(w, g))) < 1e-10
    assert abs(sum(s.masses) - 1) < 1e-12
