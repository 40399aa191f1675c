"""Closed-form steady states, feasibility threshold and stability margins.

At steady state the whole density equals the target, the non-plastic
followers settle on ``eta = Phi_F h / int h`` with
``h = exp(A / D)``, ``grad A = f * target``, and the plastic species split
the remainder in the ratio fixed by the reaction rates. The construction
needs ``f * target`` to be a gradient field; in 1D this always holds, in
nD it is the isotropy hypothesis (see ``kernels.check_isotropy``).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DiffusionZero, NonpositiveRatio
from .grid import antiderivative, integrate, l2_norm, spectral_derivative
from .kernels import TargetDensity, convolve_kernel, sample_kernel

ISOTROPY_TOL = 1e-6


def _values(target):
    return target.values if isinstance(target, TargetDensity) else np.asarray(target, dtype=float)


def interaction_potential(target: TargetDensity, kernel):
    """Zero-mean ``A`` with ``grad A = f * target`` and the fit residual.

    The residual ``max |grad A - f*target|`` is zero (to rounding) exactly
    when the nonlocal drift is a gradient field.
    """
    grid = target.grid
    F = convolve_kernel(sample_kernel(kernel, grid), target.values, grid)
    if grid.ndim == 1:
        return antiderivative(F, grid, kind="spectral"), 0.0
    axes = tuple(range(grid.ndim))
    syms = [grid.symbol(a) for a in axes]
    denom = sum(np.abs(s) ** 2 for s in syms)
    num = sum(np.conj(s) * np.fft.fftn(F[a]) for a, s in zip(axes, syms))
    with np.errstate(divide="ignore", invalid="ignore"):
        Ah = np.where(denom > 0, num / np.where(denom > 0, denom, 1.0), 0.0)
    A = np.fft.ifftn(Ah).real
    resid = max(float(np.max(np.abs(spectral_derivative(A, grid, axis=a) - F[a]))) for a in axes)
    return A, resid


def compute_h(target: TargetDensity, kernel, D: float) -> np.ndarray:
    """``h = exp(A / D)``; strictly positive and periodic."""
    if D == 0:
        raise DiffusionZero("steady-state profiles need D > 0")
    A, resid = interaction_potential(target, kernel)
    if resid > ISOTROPY_TOL:
        warnings.warn(f"nonlocal drift is not a gradient field (residual {resid:.2e})", stacklevel=2)
    return np.exp(A / D)


def compute_eta_bar(target: TargetDensity, kernel, D: float, Phi_F: float) -> np.ndarray:
    h = compute_h(target, kernel, D)
    return Phi_F * h / integrate(h, target.grid)


def compute_p_hat(target: TargetDensity, kernel, D: float) -> float:
    """Minimum plasticity fraction: ``1 - min_x[target(x) int(h) / h(x)]``."""
    h = compute_h(target, kernel, D)
    return float(1.0 - np.min(target.values * integrate(h, target.grid) / h))


def select_rates(r_hat: float, rate_scale: float = 1.0) -> tuple[float, float]:
    """Reaction rates giving the steady leader/follower mass ratio ``r_hat``."""
    if not (r_hat > 0 and rate_scale > 0):
        raise NonpositiveRatio(f"need r_hat > 0 and rate_scale > 0, got {r_hat!r}, {rate_scale!r}")
    return r_hat * rate_scale, rate_scale


def rates_for_leader_mass(M_L: float, p: float, rate_scale: float = 1.0) -> tuple[float, float]:
    """Rates that put steady leader mass ``M_L`` out of plastic mass ``p``."""
    if not 0 < M_L < p:
        raise NonpositiveRatio(f"leader mass {M_L!r} must lie in (0, p={p!r})")
    return select_rates(M_L / (p - M_L), rate_scale)


def check_local_stability(target: TargetDensity, kernel, D: float):
    """Sufficient local-stability margin ``2D - sum_i ||d_i target|| ||f_i||``.

    Returns ``(margin, stable, terms)`` where ``terms`` holds the per-axis
    products of L2 norms.
    """
    grid = target.grid
    f = sample_kernel(kernel, grid)
    if grid.ndim == 1:
        f = f[None]
    terms = [
        l2_norm(spectral_derivative(target.values, grid, axis=a), grid) * l2_norm(f[a], grid)
        for a in range(grid.ndim)
    ]
    margin = 2.0 * D - float(sum(terms))
    return margin, margin > 0, terms


@dataclass
class SteadyStatePrediction:
    h: np.ndarray
    eta_F_bar: np.ndarray
    rho_star_bar: np.ndarray
    rho_L_bar: np.ndarray
    rho_F_bar: np.ndarray
    p_hat: float
    p: float
    feasible: bool
    violating: np.ndarray
    stability_margin: float
    stability_terms: list
    isotropy_residual: float
    grid: object

    @property
    def M_L(self) -> float:
        return integrate(self.rho_L_bar, self.grid)

    @property
    def M_F(self) -> float:
        return integrate(self.rho_F_bar, self.grid)

    @property
    def stable(self) -> bool:
        return self.stability_margin > 0


def predict_steady_profiles(config) -> SteadyStatePrediction:
    """Steady profiles of all species for a ``ControlConfig``.

    Infeasible settings (``p <= p_hat``) are returned with
    ``feasible=False`` and ``violating`` marking where a plastic species
    would be non-positive.
    """
    target = config.target
    grid = target.grid
    if config.D == 0:
        raise DiffusionZero("steady-state profiles need D > 0")
    A, resid = interaction_potential(target, config.kernel)
    h = np.exp(A / config.D)
    H = integrate(h, grid)
    rho = target.values
    eta = config.Phi_F * h / H
    ratio = config.b / config.a
    rstar = ratio * (rho - eta)
    rho_L = 0.5 * (1.0 + ratio) * (rho - eta)
    rho_F = 0.5 * (1.0 - ratio) * (rho - eta)
    p_hat = float(1.0 - np.min(rho * H / h))
    violating = (rho_L <= 0) | (rho_F <= 0)
    margin, _, terms = check_local_stability(target, config.kernel, config.D)
    return SteadyStatePrediction(
        h=h,
        eta_F_bar=eta,
        rho_star_bar=rstar,
        rho_L_bar=rho_L,
        rho_F_bar=rho_F,
        p_hat=p_hat,
        p=config.p,
        feasible=bool(not violating.any()),
        violating=violating,
        stability_margin=margin,
        stability_terms=terms,
        isotropy_residual=resid,
        grid=grid,
    )


def relax_eta(target: TargetDensity, kernel, D: float, eta0: np.ndarray, t_f: float, dt: float | None = None):
    """Integrate the non-plastic-follower equation with the collective frozen at the target.

    ``eta_t = -div(eta (f * target)) + D lap(eta)`` is linear in ``eta``;
    forward Euler with central differences (1D), the same discretisation as
    the closed-loop solver. Returns ``eta`` at ``t_f``. Its long-time limit
    is the unique steady state with the mass of ``eta0``.
    """
    grid = target.grid
    if grid.ndim != 1:
        raise ValueError("relax_eta is implemented for 1D grids")
    F = convolve_kernel(sample_kernel(kernel, grid), target.values, grid)
    dx = grid.dx
    bound = min(0.5 * dx * dx / D if D > 0 else np.inf, 0.5 * dx / max(float(np.max(np.abs(F))), 1e-300))
    dt = 0.9 * bound if dt is None else dt
    n_steps = int(np.ceil(t_f / dt))
    dt = t_f / n_steps
    Fp, Fm = np.roll(F, -1), np.roll(F, 1)
    # eta_new = a_m eta_{j-1} + a_0 eta_j + a_p eta_{j+1}
    a_p = dt * (D / dx**2 - Fp / (2 * dx))
    a_m = dt * (D / dx**2 + Fm / (2 * dx))
    a_0 = 1.0 - 2.0 * dt * D / dx**2
    eta = np.array(eta0, dtype=float)
    for _ in range(n_steps):
        eta = a_0 * eta + a_p * np.roll(eta, -1) + a_m * np.roll(eta, 1)
    return eta
