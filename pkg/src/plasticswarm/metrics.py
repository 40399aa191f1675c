"""Scalar diagnostics: KL divergence, L2 error and species masses."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import TargetVanishes
from .grid import integrate, l2_norm

RHO_ZERO = 1e-14

# telemetry bits carried in DiagnosticsRow.flags
FLAG_NEGATIVE = 1       # a density dipped into the tolerated negative band
FLAG_LEADER_LOW = 2     # leader density within 10x of the floor
FLAG_DENSITY_FLOOR = 4  # agent model: estimated density floored in a division


def kl_divergence(rho: np.ndarray, target: np.ndarray, grid) -> float:
    """``int rho log(rho / target) dx`` with the convention ``0 log 0 = 0``.

    Values of ``rho`` below 1e-14 (including tiny negative round-off) are
    treated as zero.
    """
    target = np.asarray(target, dtype=float)
    if np.min(target) <= 0:
        raise TargetVanishes("KL divergence needs a strictly positive target")
    rho = np.asarray(rho, dtype=float)
    pos = rho > RHO_ZERO
    integrand = np.zeros_like(rho)
    integrand[pos] = rho[pos] * np.log(rho[pos] / target[pos])
    return integrate(integrand, grid)


def l2_error(rho: np.ndarray, target: np.ndarray, grid) -> float:
    return l2_norm(np.asarray(target) - np.asarray(rho), grid)


def masses(state) -> tuple[float, float, float]:
    """``(M_L, M_F, Phi_F)`` of a continuum state."""
    g = state.grid
    return integrate(state.rho_L, g), integrate(state.rho_F, g), integrate(state.eta_F, g)


@dataclass(frozen=True)
class DiagnosticsRow:
    t: float
    D_KL: float
    M_L: float
    M_F: float
    Phi_F_obs: float
    err_L2: float
    flags: int = 0

    # column order of the time-series CSV
    CSV_FIELDS = ("t", "D_KL", "M_L", "M_F", "err_L2", "flags")


def diagnostics(state, target: np.ndarray, flags: int = 0) -> DiagnosticsRow:
    rho = state.rho
    M_L, M_F, Phi = masses(state)
    return DiagnosticsRow(
        t=float(state.t),
        D_KL=kl_divergence(rho, target, state.grid),
        M_L=M_L,
        M_F=M_F,
        Phi_F_obs=Phi,
        err_L2=l2_error(rho, target, state.grid),
        flags=flags,
    )
