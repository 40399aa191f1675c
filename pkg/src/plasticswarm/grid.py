"""Uniform periodic grids on [-pi, pi)^d and the operators defined on them.

Fields are plain ``numpy`` arrays whose shape equals ``grid.shape``; vector
fields carry a leading axis of length ``grid.ndim``. Every function here is
pure: inputs are never modified in place.

Two families of derivative are provided:

* finite differences (``derivative``, ``divergence``, ``laplacian``), the
  central stencils used by the explicit time steppers;
* Fourier-space operators (``antiderivative``, ``poisson_solve_nd``,
  ``spectral_derivative``), parametrised by a per-axis *symbol*. The
  ``"spectral"`` symbol is ``i k``; the ``"central"`` symbol is
  ``i sin(k dx) / dx``, i.e. the exact Fourier image of the central
  difference, which makes the Fourier inverses exact inverses of the
  stencil operators.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import ConfigError, NonzeroMassWarning

TOL_MASS = 1e-6

__all__ = [
    "TOL_MASS",
    "Grid1D",
    "GridND",
    "make_grid",
    "integrate",
    "derivative",
    "laplacian",
    "divergence",
    "curl",
    "spectral_derivative",
    "antiderivative",
    "circular_convolve",
    "sample_on_lags",
    "poisson_solve_nd",
    "l2_norm",
]


def _check_axis_size(n: int) -> None:
    if int(n) != n or n < 8 or n % 2:
        raise ConfigError(f"grid size must be an even integer >= 8, got {n!r}")


class _GridBase:
    shape: tuple[int, ...]

    @property
    def ndim(self) -> int:
        return len(self.shape)

    @cached_property
    def spacing(self) -> tuple[float, ...]:
        return tuple(2.0 * np.pi / n for n in self.shape)

    @cached_property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @cached_property
    def axes(self) -> tuple[np.ndarray, ...]:
        """1D coordinate arrays ``x_j = -pi + j dx`` for each axis."""
        return tuple(-np.pi + np.arange(n) * (2.0 * np.pi / n) for n in self.shape)

    @cached_property
    def lag_axes(self) -> tuple[np.ndarray, ...]:
        """Per-axis displacements ``j dx`` wrapped into [-pi, pi).

        Kernels are sampled on these lags before circular convolution, so
        that index ``j`` of the sampled kernel is the weight linking grid
        points ``m + j`` and ``m``.
        """
        out = []
        for n in self.shape:
            j = np.arange(n)
            j = np.where(j < n // 2, j, j - n)
            out.append(j * (2.0 * np.pi / n))
        return tuple(out)

    def rfft_symbols(self, kind: str = "spectral") -> list[np.ndarray]:
        """Per-axis derivative symbols laid out for ``numpy.fft.rfftn``."""
        out = []
        for a, n in enumerate(self.shape):
            dx = self.spacing[a]
            if a == self.ndim - 1:
                k = np.fft.rfftfreq(n, 1.0 / n)
            else:
                k = np.fft.fftfreq(n, 1.0 / n)
            s = 1j * k if kind == "spectral" else 1j * np.sin(k * dx) / dx
            s = np.where(np.abs(k) == n // 2, 0.0, s)
            shape = [1] * self.ndim
            shape[a] = k.size
            out.append(s.reshape(shape))
        return out

    def mesh(self) -> tuple[np.ndarray, ...]:
        return tuple(np.meshgrid(*self.axes, indexing="ij"))

    def lag_mesh(self) -> tuple[np.ndarray, ...]:
        return tuple(np.meshgrid(*self.lag_axes, indexing="ij"))

    def wavenumbers(self, axis: int) -> np.ndarray:
        """Integer wavenumbers along ``axis`` in ``numpy.fft.fft`` order,
        shaped to broadcast against a full-size field."""
        n = self.shape[axis]
        k = np.fft.fftfreq(n, 1.0 / n)
        shape = [1] * self.ndim
        shape[axis] = n
        return k.reshape(shape)

    def symbol(self, axis: int, kind: str = "spectral") -> np.ndarray:
        """Fourier multiplier of a first derivative along ``axis``.

        The Nyquist entry is zero for both kinds (it is zero for the central
        stencil anyway, and for ``i k`` it is the conventional choice that
        keeps real fields real).
        """
        n = self.shape[axis]
        dx = self.spacing[axis]
        k = self.wavenumbers(axis)
        if kind == "spectral":
            s = 1j * k
        elif kind == "central":
            s = 1j * np.sin(k * dx) / dx
        else:
            raise ValueError(f"unknown derivative symbol {kind!r}")
        return np.where(np.abs(k) == n // 2, 0.0, s)


@dataclass(frozen=True)
class Grid1D(_GridBase):
    """Periodic grid on S = [-pi, pi) with ``n`` cells."""

    n: int

    def __post_init__(self):
        _check_axis_size(self.n)

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,)

    @property
    def dx(self) -> float:
        return 2.0 * np.pi / self.n

    @property
    def x(self) -> np.ndarray:
        return self.axes[0]

    @property
    def lags(self) -> np.ndarray:
        return self.lag_axes[0]


@dataclass(frozen=True)
class GridND(_GridBase):
    """Tensor product of periodic grids on [-pi, pi)^d, d in {2, 3}."""

    shape: tuple[int, ...]

    def __post_init__(self):
        shape = tuple(int(n) for n in self.shape)
        if len(shape) not in (2, 3):
            raise ConfigError(f"GridND supports 2 or 3 dimensions, got {len(shape)}")
        for n in self.shape:
            _check_axis_size(n)
        object.__setattr__(self, "shape", shape)


def make_grid(n) -> Grid1D | GridND:
    """``Grid1D`` for an integer, ``GridND`` for a sequence of 2 or 3 sizes."""
    if np.ndim(n) == 0:
        return Grid1D(int(n))
    n = tuple(int(v) for v in n)
    if len(n) == 1:
        return Grid1D(n[0])
    return GridND(n)


def integrate(f: np.ndarray, grid) -> float:
    """Rectangle-rule integral over the periodic domain."""
    return float(grid.cell_volume * np.sum(f))


def l2_norm(f: np.ndarray, grid) -> float:
    return float(np.sqrt(grid.cell_volume * np.sum(np.square(f))))


def derivative(f: np.ndarray, grid, order: int = 1, axis: int = 0) -> np.ndarray:
    """Central finite difference along ``axis`` with periodic wraparound."""
    dx = grid.spacing[axis]
    fp = np.roll(f, -1, axis=axis)
    fm = np.roll(f, 1, axis=axis)
    if order == 1:
        return (fp - fm) / (2.0 * dx)
    if order == 2:
        return (fp - 2.0 * f + fm) / (dx * dx)
    raise ValueError("order must be 1 or 2")


def laplacian(f: np.ndarray, grid) -> np.ndarray:
    """Compact three-point Laplacian summed over axes."""
    return sum(derivative(f, grid, 2, axis=a) for a in range(grid.ndim))


def divergence(w: np.ndarray, grid, method: str = "fd") -> np.ndarray:
    """Divergence of a vector field stacked along axis 0.

    ``method="fd"`` uses central differences; ``"spectral"`` uses ``i k``.
    """
    if method == "fd":
        return sum(derivative(w[a], grid, 1, axis=a) for a in range(grid.ndim))
    return sum(spectral_derivative(w[a], grid, axis=a) for a in range(grid.ndim))


def curl(w: np.ndarray, grid, method: str = "fd") -> np.ndarray:
    """Scalar curl in 2D, vector curl (stacked) in 3D."""
    if method == "fd":
        d = lambda f, a: derivative(f, grid, 1, axis=a)  # noqa: E731
    else:
        d = lambda f, a: spectral_derivative(f, grid, axis=a)  # noqa: E731
    if grid.ndim == 2:
        return d(w[1], 0) - d(w[0], 1)
    if grid.ndim == 3:
        return np.stack([
            d(w[2], 1) - d(w[1], 2),
            d(w[0], 2) - d(w[2], 0),
            d(w[1], 0) - d(w[0], 1),
        ])
    raise ValueError("curl needs a 2D or 3D grid")


def spectral_derivative(f: np.ndarray, grid, axis: int = 0, kind: str = "spectral") -> np.ndarray:
    fh = np.fft.fft(f, axis=axis)
    return np.fft.ifft(grid.symbol(axis, kind) * fh, axis=axis).real


def antiderivative(
    f: np.ndarray,
    grid,
    axis: int = 0,
    kind: str = "central",
    tol: float = TOL_MASS,
) -> np.ndarray:
    """Zero-mean periodic antiderivative of ``f`` along ``axis``.

    With ``kind="central"`` the result ``F`` satisfies
    ``derivative(F) == f`` to rounding, up to the mean and Nyquist content
    of ``f``, which the central difference cannot produce. With
    ``kind="spectral"`` the exact Fourier antiderivative is returned.

    A periodic antiderivative exists only when ``f`` integrates to zero
    along ``axis``; otherwise a ``NonzeroMassWarning`` is emitted and the
    mean is silently dropped.
    """
    means = np.mean(f, axis=axis) * 2.0 * np.pi
    if np.max(np.abs(means)) > tol:
        warnings.warn(
            f"antiderivative of a field with integral {np.max(np.abs(means)):.3e}",
            NonzeroMassWarning,
            stacklevel=2,
        )
    s = grid.symbol(axis, kind)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = np.where(s != 0, 1.0 / np.where(s != 0, s, 1.0), 0.0)
    fh = np.fft.fft(f, axis=axis)
    return np.fft.ifft(inv * fh, axis=axis).real


def sample_on_lags(func, grid) -> np.ndarray:
    """Evaluate ``func`` on the wrapped lag grid (see ``lag_axes``)."""
    if grid.ndim == 1:
        return np.asarray(func(grid.lags), dtype=float)
    return np.asarray(func(*grid.lag_mesh()), dtype=float)


def circular_convolve(kernel: np.ndarray, f: np.ndarray, grid) -> np.ndarray:
    """Periodic convolution ``(kernel * f)(x) = int kernel(x - y) f(y) dy``.

    ``kernel`` holds samples on the lag grid (``sample_on_lags``); the
    discrete cyclic sum is scaled by the cell volume.
    """
    axes = tuple(range(grid.ndim))
    kh = np.fft.rfftn(kernel, axes=axes)
    fh = np.fft.rfftn(f, axes=axes)
    return grid.cell_volume * np.fft.irfftn(kh * fh, s=grid.shape, axes=axes)


def poisson_solve_nd(Y: np.ndarray, grid, kind: str = "spectral"):
    """Zero-curl recovery of a vector field from its divergence.

    Solves ``lap(phi) = -(Y - mean(Y))`` in Fourier space with zero-mean
    ``phi`` and returns ``(phi, w)`` with ``w = -grad(phi)`` stacked along
    axis 0. The gradient and Laplacian share the per-axis derivative
    ``symbol`` of ``kind``, so ``divergence(w) == Y - mean(Y)`` and
    ``curl(w) == 0`` hold to rounding for the matching discrete operators
    (``"spectral"`` pairs with ``divergence(..., method="spectral")``,
    ``"central"`` with the finite-difference ``divergence``). Modes the
    symbol cannot represent (Nyquist planes) are set to zero.
    """
    axes = tuple(range(grid.ndim))
    Yh = np.fft.fftn(Y - np.mean(Y), axes=axes)
    syms = [grid.symbol(a, kind) for a in axes]
    denom = sum(np.abs(s) ** 2 for s in syms)
    with np.errstate(divide="ignore", invalid="ignore"):
        phih = np.where(denom > 0, Yh / np.where(denom > 0, denom, 1.0), 0.0)
    phi = np.fft.ifftn(phih, axes=axes).real
    w = np.stack([np.fft.ifftn(-s * phih, axes=axes).real for s in syms])
    return phi, w
