"""Periodic Morse interaction kernels and von Mises target densities."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NonzeroMassWarning
from .grid import antiderivative, circular_convolve, integrate, sample_on_lags

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class MorseParams:
    """Length scales (rad) and attraction weight of the periodic Morse kernel."""

    L_a: float
    L_r: float
    alpha: float

    def __post_init__(self):
        for name in ("L_a", "L_r"):
            v = getattr(self, name)
            if not np.isfinite(v) or not 0.0 < v <= TWO_PI:
                raise ConfigError(f"{name} must lie in (0, 2*pi], got {v!r}")
        if not np.isfinite(self.alpha) or self.alpha < 0:
            raise ConfigError(f"alpha must be finite and >= 0, got {self.alpha!r}")

    def scaled(self, L_a_factor: float = 1.0, L_r_factor: float = 1.0) -> "MorseParams":
        return MorseParams(self.L_a * L_a_factor, self.L_r * L_r_factor, self.alpha)


def _phi(y: np.ndarray, L: float) -> np.ndarray:
    # periodic exponential profile on y in [0, 2pi); overflow-free rearrangement
    return (np.exp(-y / L) - np.exp((y - TWO_PI) / L)) / (-np.expm1(-TWO_PI / L))


def morse_kernel_1d(params: MorseParams, x) -> np.ndarray:
    """Periodic Morse kernel: repulsion at short range, attraction at long range.

    ``f(x) = f_r(x)/L_r - alpha f_a(x)/L_a`` with
    ``f_i(x) = sgn(x) [exp((2pi-|x|)/L_i) - exp(|x|/L_i)] / (exp(2pi/L_i) - 1)``.
    The kernel is odd, vanishes at the origin and is 2pi-periodic; on
    ``(-pi, pi)`` it equals a single exponential profile of ``x mod 2pi``,
    which is how it is evaluated here.
    """
    x = np.asarray(x, dtype=float)
    y = np.mod(x, TWO_PI)
    out = _phi(y, params.L_r) / params.L_r - params.alpha * _phi(y, params.L_a) / params.L_a
    return np.where(y == 0.0, 0.0, out)


def morse_kernel_nd(params, *coords) -> np.ndarray:
    """Separable d-dimensional Morse kernel.

    Component ``i`` is the 1D kernel applied to coordinate ``i``:
    ``f_i(x) = morse_kernel_1d(params_i, x_i)``. The field is the gradient
    of the periodic potential ``-sum_i W_i(x_i)`` and therefore satisfies
    the isotropy hypothesis needed for the closed-form nD steady state.
    ``params`` is one ``MorseParams`` or a sequence with one per axis.
    """
    d = len(coords)
    if isinstance(params, MorseParams):
        params = [params] * d
    if len(params) != d:
        raise ConfigError("need one MorseParams per axis")
    shape = np.broadcast(*coords).shape
    return np.stack([np.broadcast_to(morse_kernel_1d(p, c), shape) for p, c in zip(params, coords)])


def sample_kernel(params, grid) -> np.ndarray:
    """Kernel samples on the lag grid; stacked components for nD grids.

    ``params=None`` means no interaction (zero kernel).
    """
    if grid.ndim == 1:
        if params is None:
            return np.zeros(grid.shape)
        return sample_on_lags(lambda x: morse_kernel_1d(params, x), grid)
    if params is None:
        return np.zeros((grid.ndim,) + grid.shape)
    return morse_kernel_nd(params, *grid.lag_mesh())


def convolve_kernel(kernel_samples: np.ndarray, rho: np.ndarray, grid) -> np.ndarray:
    """``f * rho`` for a scalar (1D) or stacked vector (nD) kernel."""
    if grid.ndim == 1:
        return circular_convolve(kernel_samples, rho, grid)
    return np.stack([circular_convolve(k, rho, grid) for k in kernel_samples])


def _morse_terms(params: MorseParams):
    out = [(L, c) for L, c in ((params.L_r, 1.0 / params.L_r), (params.L_a, -params.alpha / params.L_a)) if c != 0.0]
    L = np.array([v[0] for v in out])
    coef = np.array([v[1] for v in out])
    return L, coef


def _sorted_sums(s, w, t, lo, hi, params):
    """Kernel sums at ``t`` from sorted sources ``s``; ``lo``/``hi`` delimit the
    sources strictly below / strictly above each target. The last axis
    indexes points; any leading axes are independent batches."""
    L, coef = _morse_terms(params)
    if L.size == 0:
        return np.zeros(t.shape)
    L = L.reshape((-1,) + (1,) * s.ndim)
    c = np.exp(-TWO_PI / L)
    es = np.exp((s + np.pi) / L)            # scaled to keep exponents <= 2pi/L
    ep = w * es
    em = w * (np.exp(TWO_PI / L) / es)
    pad = np.zeros(ep.shape[:-1] + (1,))

    def prefix(a):
        return np.concatenate((pad, np.cumsum(a, axis=-1)), axis=-1)

    def suffix(a):
        return np.concatenate((np.cumsum(a[..., ::-1], axis=-1)[..., ::-1], pad), axis=-1)

    def take(a, i):
        if i is None:
            return a
        return np.take_along_axis(a, np.broadcast_to(i, a.shape[:-1] + i.shape[-1:]), axis=-1)

    et = es if t is s else np.exp((t + np.pi) / L)
    if lo is None:
        # distinct self-interaction points: lo = i, hi = i + 1
        pre_p, suf_p = prefix(ep)[..., :-1], suffix(ep)[..., 1:]
        pre_m, suf_m = prefix(em)[..., :-1], suffix(em)[..., 1:]
    else:
        pre_p, suf_p = take(prefix(ep), lo), take(suffix(ep), hi)
        pre_m, suf_m = take(prefix(em), lo), take(suffix(em), hi)
    # s < t: y = t - s ;  s > t: y = t - s + 2pi
    e_neg = (pre_p + c * suf_p) / et
    e_pos = (et * c) * (pre_m * c + suf_m)
    # phi(y) = [exp(-y/L) - exp((y - 2pi)/L)] / (1 - exp(-2pi/L))
    scale = coef.reshape(L.shape) / (-np.expm1(-TWO_PI / L))
    total = scale[0] * (e_neg[0] - e_pos[0])
    for j in range(1, L.shape[0]):
        total = total + scale[j] * (e_neg[j] - e_pos[j])
    return total


def morse_pairwise_sum(targets, sources, weights, params: MorseParams) -> np.ndarray:
    """``sum_j w_j f(t_i - s_j)`` for all targets, exactly, in O((N+M) log M).

    On the circle every displacement reduces to ``y = (t - s) mod 2pi`` and
    the kernel is a combination of ``exp(+-y/L)``, so each sum factors into
    prefix/suffix sums of ``w_j exp(+-s_j/L)`` over the sources sorted by
    position. Coincident points (zero displacement) contribute nothing, as
    ``f(0) = 0``. Positions must lie in [-pi, pi). ``targets=None`` means
    the sources themselves (see ``morse_self_sum``).
    """
    if targets is None:
        return morse_self_sum(sources, weights, params)
    s = np.asarray(sources, dtype=float)
    t = np.asarray(targets, dtype=float)
    w = np.broadcast_to(np.asarray(weights, dtype=float), s.shape)
    if s.size == 0:
        return np.zeros_like(t)
    order = np.argsort(s, kind="stable")
    s = s[order]
    w = w[order]
    lo = np.searchsorted(s, t, side="left")
    hi = np.searchsorted(s, t, side="right")
    return _sorted_sums(s, w, t, lo, hi, params)


def morse_self_sum(points, weights, params: MorseParams, order_hint=None):
    """``sum_j w_j f(x_i - x_j)`` over one point set, batched over leading axes.

    ``points`` has shape ``(..., N)``; ``weights`` broadcasts against it.
    Each batch row is an independent point set. ``order_hint`` is an index
    array that nearly sorts ``points`` (e.g. the sort order from the
    previous time step); it only affects speed. Returns ``(sums, order)``
    when a hint is given, so the order can be reused, else just the sums.
    """
    x = np.asarray(points, dtype=float)
    w = np.broadcast_to(np.asarray(weights, dtype=float), x.shape)
    if x.shape[-1] == 0:
        return (np.zeros(x.shape), order_hint) if order_hint is not None else np.zeros(x.shape)
    if order_hint is None:
        order = np.argsort(x, axis=-1, kind="stable")
    else:
        # timsort is near-linear on almost sorted input
        rel = np.argsort(np.take_along_axis(x, order_hint, axis=-1), axis=-1, kind="stable")
        order = np.take_along_axis(order_hint, rel, axis=-1)
    s = np.take_along_axis(x, order, axis=-1)
    w0 = np.asarray(weights, dtype=float)
    if w0.ndim == 0:
        w = w0
    elif w0.ndim == 1:
        w = w0[order]
    else:
        w = np.take_along_axis(w, order, axis=-1)
    n = x.shape[-1]
    idx = np.arange(n)
    same = s[..., 1:] == s[..., :-1]
    if not same.any():
        lo = hi = None
    else:
        first = np.ones(s.shape, dtype=bool)
        first[..., 1:] = ~same
        last = np.ones(s.shape, dtype=bool)
        last[..., :-1] = ~same
        lo = np.maximum.accumulate(np.where(first, idx, 0), axis=-1)
        hi = np.minimum.accumulate(np.where(last, idx + 1, n)[..., ::-1], axis=-1)[..., ::-1]
    total = _sorted_sums(s, w, s, lo, hi, params)
    out = np.empty_like(total)
    np.put_along_axis(out, order, total, axis=-1)
    return out if order_hint is None else (out, order)


@dataclass(frozen=True)
class TargetDensity:
    """Desired density sampled on a grid, with a record of how it was built."""

    values: np.ndarray
    grid: object
    kind: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != self.grid.shape:
            raise ConfigError(f"target shape {v.shape} does not match grid {self.grid.shape}")
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise ConfigError("target density must be finite and nonnegative")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def mass(self) -> float:
        return integrate(self.values, self.grid)

    @classmethod
    def from_samples(cls, values, grid, normalize: bool = True) -> "TargetDensity":
        v = np.asarray(values, dtype=float)
        if normalize:
            v = v / integrate(v, grid)
        return cls(v, grid, "custom")


def _bump(x, mu, k):
    return np.exp(k * (np.cos(x - mu) - 1.0))


def von_mises(mu: float, k: float, grid, mass: float = 1.0) -> TargetDensity:
    """``Z exp(k cos(x - mu))`` with ``Z`` fixed by grid quadrature."""
    if k < 0:
        raise ConfigError("von Mises concentration must be >= 0")
    raw = _bump(grid.x, mu, k)
    z_scaled = mass / integrate(raw, grid)
    return TargetDensity(z_scaled * raw, grid, "von_mises",
                         {"mu": float(mu), "k": float(k), "Z": z_scaled * np.exp(-k)})


def bimodal_von_mises(mu1: float, mu2: float, k: float, grid) -> TargetDensity:
    """Equal-weight sum of two von Mises bumps normalised to unit mass."""
    if k < 0:
        raise ConfigError("von Mises concentration must be >= 0")
    raw = _bump(grid.x, mu1, k) + _bump(grid.x, mu2, k)
    z_scaled = 1.0 / integrate(raw, grid)
    return TargetDensity(z_scaled * raw, grid, "bimodal_von_mises",
                         {"mu": [float(mu1), float(mu2)], "k": float(k), "Z": z_scaled * np.exp(-k)})


def von_mises_nd(mus, ks, grid) -> TargetDensity:
    """Product of per-axis von Mises factors on an nD grid, unit mass."""
    mus = np.broadcast_to(np.asarray(mus, dtype=float), (grid.ndim,))
    ks = np.broadcast_to(np.asarray(ks, dtype=float), (grid.ndim,))
    if np.any(ks < 0):
        raise ConfigError("von Mises concentration must be >= 0")
    raw = np.ones(grid.shape)
    for c, mu, k in zip(grid.mesh(), mus, ks):
        raw = raw * _bump(c, mu, k)
    raw = raw / integrate(raw, grid)
    return TargetDensity(raw, grid, "von_mises_nd", {"mu": mus.tolist(), "k": ks.tolist()})


def check_isotropy(kernel_samples: np.ndarray, psi: np.ndarray, grid) -> float:
    """Numerical residual of the isotropy hypothesis for a vector kernel.

    The hypothesis asks that the axis-wise antiderivatives
    ``A_i = int (f_i * psi) dx_i`` describe one common function. Each
    ``A_i`` is only defined up to an additive term that does not depend on
    ``x_i``, so for every pair (i, j) the difference ``A_i - A_j`` is
    stripped of components independent of ``x_i`` or of ``x_j``; what
    remains (plus any nonzero line integral of ``f_i * psi``, which already
    rules out a periodic antiderivative) is the discrepancy. Returns the
    largest L-infinity discrepancy over axis pairs.
    """
    d = grid.ndim
    conv = [circular_convolve(kernel_samples[i], psi, grid) for i in range(d)]
    line_means = max(float(np.max(np.abs(np.mean(c, axis=i)))) for i, c in enumerate(conv))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NonzeroMassWarning)
        A = [antiderivative(conv[i], grid, axis=i, kind="spectral") for i in range(d)]
    worst = line_means
    for i in range(d):
        for j in range(i + 1, d):
            r = A[i] - A[j]
            r = r - r.mean(axis=i, keepdims=True)
            r = r - r.mean(axis=j, keepdims=True)
            worst = max(worst, float(np.max(np.abs(r))))
    return worst
