"""Agent-based counterpart of the continuum model on the circle.

Plastic agents (leaders and plastic followers) and non-plastic followers
move under pairwise Morse interactions, Brownian noise and, for leaders,
the feedback velocity ``u``. Each step the three sub-populations are
turned into densities by circular kernel density estimation, ``u`` and
``q`` are evaluated on the grid with the continuum formulas, and ``q`` is
factorized into nonnegative switching rates that drive random role flips.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from .continuum import ClosedLoop, ControlConfig, SwarmState
from .errors import ConfigError, EmptySample, LeaderDepletion
from .grid import integrate
from .kernels import morse_self_sum
from .metrics import FLAG_DENSITY_FLOOR, kl_divergence

log = logging.getLogger(__name__)

DENSITY_EPS = 1e-6
TWO_PI = 2.0 * np.pi


def wrap(x: np.ndarray) -> np.ndarray:
    """Map angles into [-pi, pi)."""
    y = np.atleast_1d(np.mod(np.asarray(x, dtype=float) + np.pi, TWO_PI) - np.pi)
    # mod can round up to exactly pi for tiny negative inputs
    y[y >= np.pi] = -np.pi
    return y if np.ndim(x) else y[0]


@dataclass(frozen=True)
class AgentPopulation:
    """Positions and role labels; labels are 1 for leaders, 0 for followers.

    Arrays may carry a leading batch axis (one row per ensemble member);
    counts are then returned per row.
    """

    x: np.ndarray
    lam: np.ndarray
    y: np.ndarray
    t: float = 0.0

    @property
    def N_LF(self) -> int:
        return int(self.x.shape[-1])

    @property
    def M(self) -> int:
        return int(self.y.shape[-1])

    @property
    def N(self) -> int:
        return self.N_LF + self.M

    @property
    def n_leaders(self):
        c = np.count_nonzero(self.lam, axis=-1)
        return int(c) if np.ndim(c) == 0 else c

    @property
    def n_followers(self) -> int:
        return self.N_LF - self.n_leaders


def initial_population(n_leaders: int, n_followers: int, n_nonplastic: int, rng) -> AgentPopulation:
    """Independent uniform positions on the circle."""
    if min(n_leaders, n_followers, n_nonplastic) < 0:
        raise ConfigError("agent counts must be >= 0")
    n_lf = n_leaders + n_followers
    x = wrap(rng.uniform(-np.pi, np.pi, n_lf))
    lam = np.zeros(n_lf, dtype=np.int8)
    lam[:n_leaders] = 1
    y = wrap(rng.uniform(-np.pi, np.pi, n_nonplastic))
    return AgentPopulation(x, lam, y)


# density estimation -------------------------------------------------------

@lru_cache(maxsize=16)
def _smoother_hat(grid, bandwidth: float) -> np.ndarray:
    return grid.dx * np.fft.rfft(von_mises_smoother(grid, bandwidth))


def von_mises_smoother(grid, bandwidth: float) -> np.ndarray:
    """Von Mises smoothing kernel (concentration ``1/bandwidth**2``) on the
    lag grid, normalised so that its grid integral is exactly one."""
    if not bandwidth > 0:
        raise ConfigError("KDE bandwidth must be > 0")
    k = np.exp((np.cos(grid.lags) - 1.0) / bandwidth**2)
    return k / integrate(k, grid)


def _linear_weights(grid, pos):
    """Left node index, right node index and fractional offset of each
    position; positions must already lie in [-pi, pi)."""
    s = (pos + np.pi) / grid.dx
    i0 = np.floor(s).astype(np.int64)
    frac = s - i0
    i0 %= grid.n
    return i0, (i0 + 1) % grid.n, frac


def _bin(grid, pos, w):
    """Linear binning of weighted points onto grid nodes, per batch row."""
    n = grid.n
    rows = int(np.prod(pos.shape[:-1], dtype=np.int64))
    i0, i1, frac = _linear_weights(grid, pos)
    off = (np.arange(rows) * n).reshape(pos.shape[:-1] + (1,))
    w = np.broadcast_to(w, pos.shape)
    b = np.bincount((i0 + off).ravel(), (w * (1.0 - frac)).ravel(), rows * n)
    b += np.bincount((i1 + off).ravel(), (w * frac).ravel(), rows * n)
    return b.reshape(pos.shape[:-1] + (n,))


def _smooth(bins, grid, bandwidth):
    spec = np.fft.rfft(bins / grid.dx, axis=-1) * _smoother_hat(grid, float(bandwidth))
    return np.fft.irfft(spec, grid.n, axis=-1)


def kde_circular(positions, weights, grid, bandwidth: float = 0.1, method: str = "binned") -> np.ndarray:
    """Wrapped von Mises kernel density estimate on ``grid``.

    ``method="binned"`` spreads each weight linearly onto its two nearest
    grid nodes and convolves with the smoother by FFT; ``"exact"`` sums the
    kernel at every grid point for every sample. Either way each sample
    carries exactly its weight, so the estimate integrates to
    ``sum(weights)``.
    """
    pos = wrap(np.asarray(positions, dtype=float).ravel())
    if pos.size == 0:
        raise EmptySample("no positions to estimate a density from")
    if not bandwidth > 0:
        raise ConfigError("KDE bandwidth must be > 0")
    w = np.broadcast_to(np.asarray(weights, dtype=float), pos.shape)
    if method == "binned":
        return _smooth(_bin(grid, pos, w), grid, bandwidth)
    if method == "exact":
        kappa = 1.0 / bandwidth**2
        out = np.zeros(grid.n)
        for lo in range(0, pos.size, 4096):
            d = grid.x[:, None] - pos[None, lo:lo + 4096]
            k = np.exp(kappa * (np.cos(d) - 1.0))
            k /= grid.dx * k.sum(axis=0)
            out += k @ w[lo:lo + 4096]
        return out
    raise ValueError(f"unknown KDE method {method!r}")


def periodic_interp(field_values: np.ndarray, grid, pos: np.ndarray, weights=None) -> np.ndarray:
    """Linear interpolation of a grid field at positions on the circle.

    ``weights`` may carry precomputed ``_linear_weights(grid, pos)``. A
    field with a leading batch axis is interpolated row by row.
    """
    i0, i1, frac = _linear_weights(grid, wrap(pos)) if weights is None else weights
    f = np.asarray(field_values)
    if f.ndim > 1:
        # flatten so each row indexes its own field
        off = (np.arange(f.shape[0]) * grid.n)[:, None]
        f = f.reshape(-1)
        i0, i1 = i0 + off, i1 + off
    return (1.0 - frac) * f[i0] + frac * f[i1]


# switching -------------------------------------------------------------------

@dataclass(frozen=True)
class SwitchRates:
    kappa_FL: np.ndarray
    kappa_LF: np.ndarray
    floored: int = 0


def factorize_rates(q, rho_L_est, rho_F_est, K_FL: float, K_LF: float, eps: float = DENSITY_EPS) -> SwitchRates:
    """Split ``q`` into nonnegative rates with ``kFL rho_F - kLF rho_L = q``.

    The mass-action part ``K_FL rho_F - K_LF rho_L`` keeps its constant
    rates; the remainder ``q - g`` is assigned to follower-to-leader flips
    where positive and to leader-to-follower flips where negative, divided
    by the (floored) density of the species that flips. ``floored`` counts
    grid points where a floor was active in a nonzero division.
    """
    q = np.asarray(q, dtype=float)
    g = K_FL * rho_F_est - K_LF * rho_L_est
    r = q - g
    pos = np.maximum(r, 0.0)
    neg = np.maximum(-r, 0.0)
    dF = np.maximum(rho_F_est, eps)
    dL = np.maximum(rho_L_est, eps)
    floored = int(np.count_nonzero((pos > 0) & (rho_F_est < eps)) + np.count_nonzero((neg > 0) & (rho_L_est < eps)))
    return SwitchRates(K_FL + pos / dF, K_LF + neg / dL, floored)


# dynamics --------------------------------------------------------------------

@dataclass(frozen=True)
class AbmConfig:
    """Agent model settings; the continuum ``control`` config supplies the
    target, kernel, gains, rates, grid, ``dt`` and ``t_f``.

    ``weighting`` selects the pairwise interaction normalisation:
    ``"mass"`` gives every agent weight ``1/N`` (the particle version of
    ``f * rho``); ``"population"`` averages separately over plastic and
    non-plastic agents with weights ``1/N_LF`` and ``1/M``.
    """

    control: ControlConfig
    n_leaders: int = 300
    n_followers: int = 300
    n_nonplastic: int = 400
    bandwidth: float = 0.1
    kde_method: str = "binned"
    weighting: str = "mass"
    eps: float = DENSITY_EPS
    seed: int = 0
    record_every: int = 100
    switching: bool = True
    control_on: bool = True

    def __post_init__(self):
        if self.control.grid.ndim != 1:
            raise ConfigError("the agent model is one-dimensional")
        if min(self.n_leaders, self.n_followers, self.n_nonplastic) < 0:
            raise ConfigError("agent counts must be >= 0")
        if self.N == 0:
            raise ConfigError("need at least one agent")
        if not self.bandwidth > 0:
            raise ConfigError("KDE bandwidth must be > 0")
        if self.weighting not in ("mass", "population"):
            raise ConfigError(f"unknown interaction weighting {self.weighting!r}")
        if self.kde_method not in ("binned", "exact"):
            raise ConfigError(f"unknown KDE method {self.kde_method!r}")

    @property
    def N(self) -> int:
        return self.n_leaders + self.n_followers + self.n_nonplastic

    def with_(self, **changes) -> "AbmConfig":
        return replace(self, **changes)


def make_rng(seed) -> np.random.Generator:
    """Counter-based generator so every seed is an independent, reproducible stream."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


def _source_weights(pop: AgentPopulation, weighting: str):
    if weighting == "mass":
        return 1.0 / pop.N
    return np.concatenate([
        np.full(pop.N_LF, 1.0 / max(pop.N_LF, 1)),
        np.full(pop.M, 1.0 / max(pop.M, 1)),
    ])


def interaction_drift(pop: AgentPopulation, params, weighting: str = "mass", order_hint=None):
    """Pairwise Morse drift on plastic and non-plastic agents.

    Returns ``(v_x, v_y, order)``; ``order`` sorts the concatenated
    positions and can be passed back as ``order_hint`` on the next step.
    """
    z = np.concatenate([pop.x, pop.y], axis=-1)
    if params is None or z.shape[-1] == 0:
        return np.zeros(pop.x.shape), np.zeros(pop.y.shape), order_hint
    if order_hint is None:
        order_hint = np.broadcast_to(np.arange(z.shape[-1]), z.shape)
    v, order = morse_self_sum(z, _source_weights(pop, weighting), params, order_hint)
    return v[..., : pop.N_LF], v[..., pop.N_LF:], order


def estimate_state(pop: AgentPopulation, cfg: AbmConfig) -> SwarmState:
    """Grid densities of the three species, each agent carrying mass 1/N."""
    grid = cfg.control.grid
    m = 1.0 / pop.N
    lead = pop.lam.astype(float)
    if cfg.kde_method == "binned":
        L = _bin(grid, pop.x, m * lead)
        F = _bin(grid, pop.x, m * (1.0 - lead))
        E = _bin(grid, pop.y, m) if pop.M else np.zeros(L.shape)
        L, F, E = _smooth(np.stack([L, F, E]), grid, cfg.bandwidth)
    else:
        if pop.x.ndim != 1:
            raise ValueError("exact KDE supports a single population only")
        zero = np.zeros(grid.shape)
        est = lambda p, w: kde_circular(p, w, grid, cfg.bandwidth, "exact") if p.size else zero  # noqa: E731
        b = pop.lam == 1
        L, F, E = est(pop.x[b], m), est(pop.x[~b], m), est(pop.y, m)
    return SwarmState(L, F, E, grid, pop.t)


def _interp_flat(f, lw):
    i0, i1, frac = lw
    f = f.reshape(-1)
    return (1.0 - frac) * f[i0] + frac * f[i1]


def agent_step(pop: AgentPopulation, u_field, rates: SwitchRates | None, cfg: AbmConfig, rng,
               order_hint=None, return_order: bool = False):
    """One Euler-Maruyama step of positions followed by random role flips.

    ``rng`` is one generator, or a sequence with one generator per batch
    row. Each row draws, in this order, normals for the plastic agents,
    normals for the non-plastic agents and one uniform per plastic agent,
    so a seed fixes the trajectory regardless of batching.
    """
    c = cfg.control
    grid = c.grid
    dt = c.dt
    rngs = [rng] if pop.x.ndim == 1 else list(rng)
    lw = _linear_weights(grid, pop.x)
    if pop.x.ndim > 1:
        off = (np.arange(pop.x.shape[0]) * grid.n)[:, None]
        lw = (lw[0] + off, lw[1] + off, lw[2])
    params = c.plant_kernel if c.plant_kernel is not None else c.kernel
    vx, vy, order = interaction_drift(pop, params, cfg.weighting, order_hint)
    if u_field is not None:
        vx = vx + pop.lam * _interp_flat(u_field, lw)
    D_F = c.D if c.D_followers is None else c.D_followers
    draws = [(r.standard_normal(pop.N_LF), r.standard_normal(pop.M),
              r.random(pop.N_LF) if rates is not None else None) for r in rngs]
    nx = np.stack([d[0] for d in draws]).reshape(pop.x.shape)
    ny = np.stack([d[1] for d in draws]).reshape(pop.y.shape)
    sx = np.where(pop.lam == 1, np.sqrt(2.0 * c.D * dt), np.sqrt(2.0 * D_F * dt))
    x = wrap(pop.x + vx * dt + sx * nx)
    y = wrap(pop.y + vy * dt + np.sqrt(2.0 * D_F * dt) * ny)
    lam = pop.lam
    if rates is not None:
        uni = np.stack([d[2] for d in draws]).reshape(pop.x.shape)
        # rates are sampled at pre-move positions, where they were computed
        kFL = _interp_flat(rates.kappa_FL, lw)
        kLF = _interp_flat(rates.kappa_LF, lw)
        p_flip = np.where(lam == 1, -np.expm1(-kLF * dt), -np.expm1(-kFL * dt))
        lam = np.where(uni < p_flip, 1 - lam, lam).astype(np.int8)
    new = AgentPopulation(x, lam, y, pop.t + dt)
    return (new, order) if return_order else new


@dataclass
class AbmResult:
    rows: list = field(default_factory=list)
    final: AgentPopulation | None = None
    summary: dict = field(default_factory=dict)
    status: str = "completed"

    ROW_FIELDS = ("t", "D_KL", "M_L", "M_F", "n_leaders", "n_followers", "flags")

    @property
    def completed(self) -> bool:
        return self.status == "completed"

    def series(self, name: str) -> np.ndarray:
        i = self.ROW_FIELDS.index(name)
        return np.array([r[i] for r in self.rows], dtype=float)


def abm_controls(pop: AgentPopulation, loop: ClosedLoop, cfg: AbmConfig):
    """``(estimated state, u, rates)`` evaluated from the agents' positions."""
    est = estimate_state(pop, cfg)
    if not cfg.control_on:
        return est, None, None
    c = cfg.control
    F = loop.interaction(est.rho)
    w = loop.momentum(est, F)
    u = w / np.maximum(est.rho_L, cfg.eps)
    rates = None
    if cfg.switching:
        q = loop.reaction(est, w, F)
        rates = factorize_rates(q, est.rho_L, est.rho_F, c.K_FL, c.K_LF, cfg.eps)
    return est, u, rates


def _kl_rows(rho, target, grid):
    """``kl_divergence`` for every row of a stack of densities."""
    if rho.ndim == 1:
        return np.array([kl_divergence(rho, target, grid)])
    return np.array([kl_divergence(r, target, grid) for r in rho])


def _floored_rows(rates: SwitchRates | None, rows: int, est, eps) -> np.ndarray:
    if rates is None:
        return np.zeros(rows, dtype=bool)
    low = (est.rho_L < eps) | (est.rho_F < eps)
    return low.reshape(rows, -1).any(axis=1)


def run_abm_batch(cfg: AbmConfig, seeds, pops: AgentPopulation | None = None) -> list[AbmResult]:
    """Run one closed-loop agent simulation per seed, advanced together.

    All members share the configuration and differ only in their random
    streams (``make_rng(seed)``: initial positions, then per-step draws).
    Because every member's arithmetic is row-wise, a member's trajectory
    does not depend on which other seeds share the batch. A member that
    runs out of leaders is frozen at that time and reported as aborted.
    """
    seeds = [int(v) for v in seeds]
    S = len(seeds)
    c = cfg.control
    rngs = [make_rng(sd) for sd in seeds]
    if pops is None:
        init = [initial_population(cfg.n_leaders, cfg.n_followers, cfg.n_nonplastic, r) for r in rngs]
        pop = AgentPopulation(np.stack([p.x for p in init]), np.stack([p.lam for p in init]),
                              np.stack([p.y for p in init]))
    else:
        pop = pops if pops.x.ndim == 2 else AgentPopulation(pops.x[None], pops.lam[None], pops.y[None], pops.t)
        if pop.x.shape[0] != S:
            raise ConfigError("need one initial population per seed")
    loop = ClosedLoop(c)
    target = c.target.values
    results = [AbmResult(summary={"seed": sd}) for sd in seeds]
    active = np.ones(S, dtype=bool)
    leader_min = np.array(pop.n_leaders, dtype=np.int64).reshape(S)
    flags = np.zeros(S, dtype=np.int64)
    finals: list = [None] * S
    order = None

    def member(p, i):
        return AgentPopulation(p.x[i].copy(), p.lam[i].copy(), p.y[i].copy(), p.t)

    def record(p, est, i, kl):
        nL = int(np.count_nonzero(p.lam[i]))
        nF = p.N_LF - nL
        results[i].rows.append((p.t, float(kl[i]), nL / p.N, nF / p.N, nL, nF, int(flags[i])))

    for k in range(c.n_steps + 1):
        est, u, rates = abm_controls(pop, loop, cfg)
        flags[_floored_rows(rates, S, est, cfg.eps)] |= FLAG_DENSITY_FLOOR
        last = k == c.n_steps
        if k % cfg.record_every == 0 or last:
            kl = _kl_rows(est.rho, target, c.grid)
            for i in np.flatnonzero(active):
                record(pop, est, i, kl)
            flags[:] = 0
        if last:
            break
        nL = np.atleast_1d(pop.n_leaders)
        for i in np.flatnonzero(active & (nL == 0) & cfg.control_on):
            if k % cfg.record_every:
                record(pop, est, i, _kl_rows(est.rho, target, c.grid))
            results[i].status = f"aborted: {LeaderDepletion.__name__}: no leaders left at t={pop.t:.4f}"
            log.warning("abm seed %d %s", seeds[i], results[i].status)
            finals[i] = member(pop, i)
            active[i] = False
        if not active.any():
            break
        pop, order = agent_step(pop, u, rates, cfg, rngs, order, return_order=True)
        pop = replace(pop, t=(k + 1) * c.dt)
        leader_min = np.minimum(leader_min, np.atleast_1d(pop.n_leaders))
    for i, res in enumerate(results):
        res.final = finals[i] if finals[i] is not None else member(pop, i)
        _, kl_ss, ML, MF, nL, nF, _ = res.rows[-1]
        res.summary.update({
            "D_KL_ss": kl_ss,
            "M_L_ss": ML,
            "M_F_ss": MF,
            "ratio": nL / nF if nF else float("inf"),
            "leader_min_count": int(leader_min[i]),
        })
    return results


def run_abm(cfg: AbmConfig, pop: AgentPopulation | None = None) -> AbmResult:
    """Closed-loop agent simulation to ``t_f`` for ``cfg.seed``.

    Rows hold ``(t, D_KL, M_L, M_F, n_leaders, n_followers, flags)`` where
    masses are agent-count fractions and ``D_KL`` compares the KDE of all
    agents with the target. The run stops early if no leaders remain.
    """
    return run_abm_batch(cfg, [cfg.seed], pop)[0]
