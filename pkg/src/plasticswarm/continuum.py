"""Closed-loop leader/follower density model on periodic grids.

The state is the triple (leaders, plastic followers, non-plastic followers).
Leaders carry the feedback velocity ``u``; plastic leaders and followers
exchange mass through the reaction term ``q``. In 1D the leader momentum
``w = rho_L u`` is obtained by spatial integration of the divergence
relation; in 2D/3D it is recovered from the same relation by a zero-curl
Poisson solve.

Discretisation: central differences in space, forward Euler in time, every
field advanced from time-``t`` data (Jacobi update). The Fourier inverses
used for ``w`` are built on the symbol of the central difference, so the
discrete total density obeys ``e_{n+1} = (1 - K dt) e_n`` exactly, apart
from the Nyquist mode which the stencil cannot see (it is damped by the
diffusion term instead).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from .errors import (
    ConfigError,
    LeaderDepletion,
    NegativeDensity,
    NumericalAbort,
    NumericalBlowup,
    StabilityViolation,
)
from .grid import derivative, integrate, laplacian
from .kernels import MorseParams, TargetDensity, sample_kernel
from .metrics import FLAG_LEADER_LOW, FLAG_NEGATIVE, DiagnosticsRow, diagnostics

log = logging.getLogger(__name__)

TOL_NEG = 1e-9
BLOWUP = 1e6
ADVECTIVE_SAFETY = 0.5


@dataclass(frozen=True)
class SwarmState:
    """Leader, plastic-follower and non-plastic-follower densities at time ``t``."""

    rho_L: np.ndarray
    rho_F: np.ndarray
    eta_F: np.ndarray
    grid: object
    t: float = 0.0

    @property
    def rho(self) -> np.ndarray:
        return self.rho_L + self.rho_F + self.eta_F

    @property
    def masses(self) -> tuple[float, float, float]:
        g = self.grid
        return integrate(self.rho_L, g), integrate(self.rho_F, g), integrate(self.eta_F, g)


def uniform_state(grid, M_L: float, M_F: float, Phi_F: float) -> SwarmState:
    """Each species spread uniformly with the requested mass."""
    vol = (2.0 * np.pi) ** grid.ndim
    ones = np.ones(grid.shape)
    return SwarmState(ones * (M_L / vol), ones * (M_F / vol), ones * (Phi_F / vol), grid)


@dataclass(frozen=True)
class ControlConfig:
    """Scalar parameters of the closed loop.

    ``D`` and ``kernel`` are the nominal values known to the controller.
    ``D_followers`` and ``plant_kernel`` optionally perturb the simulated
    plant only (followers' diffusion, and everyone's kernel) to probe
    robustness; the controller keeps using the nominal model.
    """

    D: float
    K: float
    K_FL: float
    K_LF: float
    Phi_F: float
    kernel: MorseParams | tuple | None
    target: TargetDensity
    dt: float = 1e-3
    t_f: float = 15.0
    rho_L_floor: float = 1e-8
    D_followers: float | None = None
    plant_kernel: MorseParams | tuple | None = None
    seed: int = 0

    def __post_init__(self):
        if not self.D >= 0:
            raise ConfigError("D must be >= 0")
        if not self.K > 0:
            raise ConfigError("K must be > 0")
        if not (self.K_FL > 0 and self.K_LF > 0):
            raise ConfigError("reaction rates K_FL and K_LF must be > 0")
        if not 0.0 <= self.Phi_F < 1.0:
            raise ConfigError("Phi_F must lie in [0, 1)")
        if not (self.dt > 0 and self.t_f > 0):
            raise ConfigError("dt and t_f must be > 0")
        if not self.rho_L_floor > 0:
            raise ConfigError("rho_L_floor must be > 0")
        if self.D_followers is not None and not self.D_followers >= 0:
            raise ConfigError("D_followers must be >= 0")
        bound = self.diffusive_dt_bound
        if self.dt > bound:
            raise ConfigError(f"dt={self.dt:g} exceeds the diffusive stability bound {bound:.4g}")

    @property
    def grid(self):
        return self.target.grid

    @property
    def p(self) -> float:
        return 1.0 - self.Phi_F

    @property
    def a(self) -> float:
        return self.K_FL + self.K_LF

    @property
    def b(self) -> float:
        return self.K_FL - self.K_LF

    @property
    def n_steps(self) -> int:
        return int(round(self.t_f / self.dt))

    @property
    def diffusive_dt_bound(self) -> float:
        """``dx^2 / (2 d D)`` for the largest diffusion coefficient in play."""
        D = max(self.D, self.D_followers or 0.0)
        if D == 0:
            return np.inf
        g = self.grid
        return min(g.spacing) ** 2 / (2.0 * g.ndim * D)

    def with_(self, **changes) -> "ControlConfig":
        return replace(self, **changes)


@dataclass
class Snapshot:
    state: SwarmState
    u: np.ndarray
    q: np.ndarray


@dataclass
class RunResult:
    rows: list[DiagnosticsRow]
    snapshots: dict[float, Snapshot]
    final_state: SwarmState
    status: str = "completed"
    error: NumericalAbort | None = None

    @property
    def completed(self) -> bool:
        return self.error is None

    def series(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows])


class ClosedLoop:
    """Feedback laws and explicit stepper for one configuration.

    Kernel samples and Fourier multipliers are built once here and reused
    for every step.
    """

    def __init__(self, config: ControlConfig):
        self.config = config
        self.grid = g = config.grid
        self.target = config.target.values
        self._axes = tuple(range(g.ndim))
        self._f_hat = self._kernel_hat(config.kernel)
        plant = config.plant_kernel if config.plant_kernel is not None else config.kernel
        self._f_hat_plant = self._f_hat if plant is config.kernel else self._kernel_hat(plant)
        self.D_F = config.D if config.D_followers is None else config.D_followers
        syms = g.rfft_symbols("central")
        denom = sum(np.abs(s) ** 2 for s in syms)
        safe = np.where(denom > 0, denom, 1.0)
        if g.ndim == 1:
            # zero-mean antiderivative, exact inverse of the central difference
            s = syms[0]
            self._inv_d = np.where(s != 0, 1.0 / np.where(s != 0, s, 1.0), 0.0)
            idx = np.arange(g.n)
            self._ip, self._im = (idx + 1) % g.n, (idx - 1) % g.n
            self._inv_2dx = 1.0 / (2.0 * g.dx)
            self._inv_dx2 = 1.0 / (g.dx * g.dx)
        else:
            # w_hat = -s_i phi_hat, phi_hat = Y_hat / sum |s_i|^2
            self._poisson = [np.where(denom > 0, -s / safe, 0.0) for s in syms]

    def _kernel_hat(self, params):
        samples = sample_kernel(params, self.grid)
        if self.grid.ndim == 1:
            return np.fft.rfft(samples)
        return np.stack([np.fft.rfftn(c) for c in samples])

    # operators -----------------------------------------------------------

    def _ddx(self, f):
        """Central-difference divergence; accepts stacked vectors in nD."""
        if self.grid.ndim == 1:
            # same stencil as grid.derivative, with cached neighbour indices;
            # acts on the last axis so stacked 1D fields (agent ensembles) work
            return (f[..., self._ip] - f[..., self._im]) * self._inv_2dx
        return sum(derivative(f[a], self.grid, 1, axis=a) for a in self._axes)

    def _lap(self, f):
        if self.grid.ndim == 1:
            return (f[..., self._ip] - 2.0 * f + f[..., self._im]) * self._inv_dx2
        return laplacian(f, self.grid)

    def interaction(self, rho: np.ndarray, plant: bool = False) -> np.ndarray:
        """Nonlocal drift ``f * rho`` (stacked components in nD)."""
        g = self.grid
        fh = self._f_hat_plant if plant else self._f_hat
        if g.ndim == 1:
            return g.cell_volume * np.fft.irfft(fh * np.fft.rfft(rho), g.n)
        rh = np.fft.rfftn(rho)
        return np.stack([g.cell_volume * np.fft.irfftn(c * rh, s=g.shape, axes=tuple(range(g.ndim))) for c in fh])

    # feedback laws -------------------------------------------------------

    def error(self, state: SwarmState) -> np.ndarray:
        return self.target - state.rho

    def forcing(self, state: SwarmState, F=None) -> np.ndarray:
        """Prescribed divergence ``Y`` of the leader momentum.

        ``Y = -K e - div(rho (f*rho)) + D lap(rho)``; the controller uses
        the nominal kernel and diffusion coefficient.
        """
        c = self.config
        rho = state.rho
        if F is None:
            F = self.interaction(rho)
        return -c.K * (self.target - rho) - self._ddx(rho * F) + c.D * self._lap(rho)

    def momentum(self, state: SwarmState, F=None) -> np.ndarray:
        """Leader momentum ``w = rho_L u`` realising the prescribed divergence.

        1D: ``w = -K int(e) - rho (f*rho) + D int(rho_xx)`` with zero-mean
        antiderivatives. nD: ``w = -grad(phi)``, ``lap(phi) = -Y``, which
        is curl-free by construction.
        """
        c = self.config
        rho = state.rho
        if F is None:
            F = self.interaction(rho)
        g = self.grid
        if g.ndim == 1:
            src = -c.K * (self.target - rho) + c.D * self._lap(rho)
            return np.fft.irfft(self._inv_d * np.fft.rfft(src), g.n) - rho * F
        Yh = np.fft.rfftn(self.forcing(state, F))
        return np.stack([np.fft.irfftn(m * Yh, s=g.shape, axes=tuple(range(g.ndim))) for m in self._poisson])

    def velocity(self, state: SwarmState, w: np.ndarray) -> np.ndarray:
        lmin = float(np.min(state.rho_L))
        if not lmin > self.config.rho_L_floor:
            raise LeaderDepletion(
                f"min leader density {lmin:.3e} <= floor {self.config.rho_L_floor:.1e} at t={state.t:.4f}"
            )
        return w / state.rho_L

    def reaction(self, state: SwarmState, w: np.ndarray, F=None) -> np.ndarray:
        """``q = div(w)/2 + div(rho* (f*rho))/2 - D lap(rho*)/2 + g``."""
        c = self.config
        if F is None:
            F = self.interaction(state.rho)
        rstar = state.rho_L - state.rho_F
        g = c.K_FL * state.rho_F - c.K_LF * state.rho_L
        return 0.5 * self._ddx(w) + 0.5 * self._ddx(rstar * F) - 0.5 * c.D * self._lap(rstar) + g

    # time stepping -------------------------------------------------------

    def tendencies(self, state: SwarmState):
        """Time derivatives of the three species plus ``(u, q)``."""
        c = self.config
        rho = state.rho
        F = self.interaction(rho)
        Fp = F if self._f_hat_plant is self._f_hat else self.interaction(rho, plant=True)
        w = self.momentum(state, F)
        u = self.velocity(state, w)
        q = self.reaction(state, w, F)
        dw = self._ddx(w)
        dL = -dw - self._ddx(state.rho_L * Fp) + c.D * self._lap(state.rho_L) + q
        dF = -self._ddx(state.rho_F * Fp) + self.D_F * self._lap(state.rho_F) - q
        dE = -self._ddx(state.eta_F * Fp) + self.D_F * self._lap(state.eta_F)
        self._check_cfl(u, Fp, state.t)
        return dL, dF, dE, u, q

    def _check_cfl(self, u, F, t):
        g = self.grid
        if g.ndim == 1:
            vmax = float(np.max(np.abs(u)) + np.max(np.abs(F)))
            ratio = vmax / g.spacing[0]
        else:
            ratio = max(float(np.max(np.abs(u[a])) + np.max(np.abs(F[a]))) / g.spacing[a] for a in self._axes)
        if not np.isfinite(ratio):
            raise NumericalBlowup(f"non-finite velocity at t={t:.4f}")
        if self.config.dt * ratio > ADVECTIVE_SAFETY:
            raise StabilityViolation(
                f"advective CFL number {self.config.dt * ratio:.3f} > {ADVECTIVE_SAFETY} at t={t:.4f}"
            )

    def step(self, state: SwarmState, k: int | None = None):
        """One forward-Euler step; returns ``(new_state, u, q, flags)``.

        ``k`` is the index of the new time level (``t = k dt``); by default
        ``t + dt``.
        """
        dt = self.config.dt
        dL, dF, dE, u, q = self.tendencies(state)
        new = SwarmState(
            state.rho_L + dt * dL,
            state.rho_F + dt * dF,
            state.eta_F + dt * dE,
            self.grid,
            state.t + dt if k is None else k * dt,
        )
        return new, u, q, self._check_state(new)

    def _check_state(self, s: SwarmState) -> int:
        flags = 0
        for name in ("rho_L", "rho_F", "eta_F"):
            v = getattr(s, name)
            lo, hi = float(np.min(v)), float(np.max(v))
            if not (np.isfinite(lo) and np.isfinite(hi)) or max(-lo, hi) > BLOWUP:
                raise NumericalBlowup(f"{name} out of range [{lo:.3e}, {hi:.3e}] at t={s.t:.4f}")
            if lo < 0:
                if lo < -TOL_NEG:
                    raise NegativeDensity(f"{name} reached {lo:.3e} at t={s.t:.4f}")
                flags |= FLAG_NEGATIVE
        if float(np.min(s.rho_L)) < 10 * self.config.rho_L_floor:
            flags |= FLAG_LEADER_LOW
        return flags

    def controls(self, state: SwarmState):
        """``(u, q)`` at ``state`` without advancing it."""
        F = self.interaction(state.rho)
        w = self.momentum(state, F)
        return self.velocity(state, w), self.reaction(state, w, F)

    def run(
        self,
        initial: SwarmState,
        record_every: int = 10,
        snapshot_times=(),
        callbacks=(),
    ) -> RunResult:
        """Integrate to ``t_f``, recording diagnostics every ``record_every`` steps.

        Numerical aborts end the run early; the rows recorded so far, the
        last good state and the exception are returned in the result.
        """
        c = self.config
        n_steps = c.n_steps
        snap_steps = {int(round(t / c.dt)): float(t) for t in snapshot_times}
        state = replace(initial, t=0.0)
        rows: list[DiagnosticsRow] = []
        snaps: dict[float, Snapshot] = {}
        flags = 0

        def record(st, fl):
            row = diagnostics(st, self.target, fl)
            rows.append(row)
            for cb in callbacks:
                cb(row, st)

        try:
            record(state, 0)
            for k in range(1, n_steps + 1):
                new, u, q, fl = self.step(state, k)
                if k - 1 in snap_steps:
                    snaps[snap_steps[k - 1]] = Snapshot(state, u, q)
                flags |= fl
                state = new
                if k % record_every == 0 or k == n_steps:
                    record(state, flags)
                    flags = 0
            if n_steps in snap_steps:
                u, q = self.controls(state)
                snaps[snap_steps[n_steps]] = Snapshot(state, u, q)
        except NumericalAbort as exc:
            log.warning("run aborted: %s", exc)
            if not rows or rows[-1].t != state.t:
                record(state, flags)
            return RunResult(rows, snaps, state, f"aborted: {type(exc).__name__}: {exc}", exc)
        return RunResult(rows, snaps, state)


# functional interface ---------------------------------------------------

def compute_error(state: SwarmState, target) -> np.ndarray:
    """``e = target - rho``."""
    t = target.values if isinstance(target, TargetDensity) else np.asarray(target)
    return t - state.rho


def compute_control_u(state: SwarmState, config: ControlConfig) -> np.ndarray:
    """Feedback velocity of the leaders (vector stacked along axis 0 in nD)."""
    loop = ClosedLoop(config)
    return loop.velocity(state, loop.momentum(state))


def compute_reaction_q(state: SwarmState, u: np.ndarray, config: ControlConfig) -> np.ndarray:
    return ClosedLoop(config).reaction(state, state.rho_L * u)


def step(state: SwarmState, config: ControlConfig) -> SwarmState:
    return ClosedLoop(config).step(state)[0]


def run(config: ControlConfig, initial: SwarmState, **kwargs) -> RunResult:
    return ClosedLoop(config).run(initial, **kwargs)


def compute_forcing_Y(state: SwarmState, config: ControlConfig) -> np.ndarray:
    return ClosedLoop(config).forcing(state)


compute_control_u_nd = compute_control_u
compute_reaction_q_nd = compute_reaction_q
step_nd = step
run_nd = run
