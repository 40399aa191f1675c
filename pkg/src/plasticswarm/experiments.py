"""Config-driven experiment runners and their on-disk outputs.

Each ``run_*`` function takes a validated ``ExperimentSpec`` and returns an
``ExperimentResult``; ``write_result`` persists it as plain-text CSV tables
plus a JSON manifest. Every file starts with a ``# spec=`` comment line
holding the exact spec, so any output can regenerate itself
(``spec_from_file``).
"""

from __future__ import annotations

import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .agents import AbmConfig, AbmResult, run_abm_batch
from .config import ExperimentSpec, spec_from_dict
from .continuum import ClosedLoop, ControlConfig, SwarmState, uniform_state
from .errors import ConfigError, NumericalAbort
from .grid import curl, divergence, integrate, l2_norm, make_grid, poisson_solve_nd, spectral_derivative
from .kernels import MorseParams, bimodal_von_mises, von_mises, von_mises_nd
from .metrics import DiagnosticsRow
from .steady import predict_steady_profiles, rates_for_leader_mass

log = logging.getLogger(__name__)

FLOAT_FMT = "%.17g"


@dataclass
class Table:
    """Named columns written as one CSV file."""

    columns: list[str]
    rows: list[list]
    preamble: list[str] = field(default_factory=list)


@dataclass
class ExperimentResult:
    spec: ExperimentSpec
    tables: dict[str, Table]
    summary: dict
    status: str = "completed"
    wall_clock: float = 0.0
    version: str = __version__

    @property
    def aborted(self) -> bool:
        return self.status != "completed"

    @property
    def spec_hash(self) -> str:
        return self.spec.hash


# builders ---------------------------------------------------------------

def build_grid(spec: ExperimentSpec):
    g = spec["grid"]
    return make_grid(g["shape"] if spec.kind == "continuum_nd" else g["n"])


def build_target(spec: ExperimentSpec, grid):
    t = spec["target"]
    mu, k = spec.num("target", "mu"), spec.num("target", "k")
    if t["type"] == "von_mises":
        return von_mises(mu, k, grid)
    if t["type"] == "bimodal_von_mises":
        return bimodal_von_mises(mu[0], mu[1], k, grid)
    return von_mises_nd(mu, k, grid)


def build_kernel(spec: ExperimentSpec) -> MorseParams:
    return MorseParams(*(spec.num("kernel", key) for key in ("L_a", "L_r", "alpha")))


def build_control(spec: ExperimentSpec, grid=None) -> ControlConfig:
    grid = build_grid(spec) if grid is None else grid
    c = {key: spec.num("control", key) for key in spec["control"]}
    return ControlConfig(
        D=c["D"], K=c["K"], K_FL=c["K_FL"], K_LF=c["K_LF"], Phi_F=c["Phi_F"],
        kernel=build_kernel(spec), target=build_target(spec, grid),
        dt=c["dt"], t_f=c["t_f"], rho_L_floor=c["rho_L_floor"], D_followers=c["D_followers"],
        seed=spec.seed,
    )


def shift_to_positive(profile: np.ndarray, mass: float, grid, margin: float) -> np.ndarray:
    """Translate a profile up until it is positive, then rescale to ``mass``.

    The minimum is lifted to ``margin`` times the mean density of ``mass``
    rather than to exactly zero, which would leave the leaders at the
    depletion floor from the first step.
    """
    if profile.min() > 0:
        return profile
    vol = (2.0 * np.pi) ** grid.ndim
    out = profile - profile.min() + margin * mass / vol
    return out * (mass / integrate(out, grid))


def initial_state(spec: ExperimentSpec, cfg: ControlConfig) -> SwarmState:
    init = spec["initial"]
    grid = cfg.grid
    p = cfg.p
    M_L = spec.num("initial", "M_L")
    M_F = spec.num("initial", "M_F")
    M_L = p / 2 if M_L is None else M_L
    M_F = p - M_L if M_F is None else M_F
    if abs(M_L + M_F + cfg.Phi_F - 1.0) > 1e-12:
        raise ConfigError(f"initial masses M_L={M_L}, M_F={M_F}, Phi_F={cfg.Phi_F} do not add up to 1")
    if init["type"] == "uniform":
        return uniform_state(grid, M_L, M_F, cfg.Phi_F)
    if init["type"] == "target":
        t = cfg.target.values
        return SwarmState(M_L * t, M_F * t, cfg.Phi_F * t, grid)
    pred = predict_steady_profiles(cfg)
    margin = spec.num("initial", "shift_margin")
    return SwarmState(
        shift_to_positive(pred.rho_L_bar.copy(), pred.M_L, grid, margin),
        shift_to_positive(pred.rho_F_bar.copy(), pred.M_F, grid, margin),
        pred.eta_F_bar.copy(),
        grid,
    )


# tables -----------------------------------------------------------------

def series_table(rows: list[DiagnosticsRow]) -> Table:
    cols = list(DiagnosticsRow.CSV_FIELDS)
    return Table(cols, [[getattr(r, c) for c in cols] for r in rows])


def snapshot_table(state: SwarmState, u, q) -> Table:
    """Columnar snapshot; nD fields are flattened in row-major order."""
    grid = state.grid
    nan = np.full(grid.shape, np.nan)
    u = np.stack([nan] * grid.ndim) if u is None else np.asarray(u).reshape((grid.ndim,) + grid.shape)
    q = nan if q is None else q
    coords = [c.ravel() for c in grid.mesh()]
    names = ["x", "y", "z"][: grid.ndim]
    unames = ["u"] + [f"u_{n}" for n in names[1:]]
    fields = [state.rho, state.rho_L, state.rho_F, state.eta_F, *u, q]
    cols = names + ["rho", "rho_L", "rho_F", "eta_F"] + unames + ["q"]
    data = np.column_stack(coords + [f.ravel() for f in fields])
    pre = [f"t={state.t!r}", "axes=" + ",".join(f"{n}:{m}" for n, m in zip(names, grid.shape)), "order=row-major"]
    return Table(cols, data.tolist(), pre)


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return FLOAT_FMT % v
    return str(v)


def write_table(path: Path, table: Table, spec: ExperimentSpec) -> None:
    lines = ["# spec=" + json.dumps(spec.to_dict(), sort_keys=True, separators=(",", ":"))]
    lines += [f"# {p}" for p in table.preamble]
    lines.append(",".join(table.columns))
    lines += [",".join(_fmt(v) for v in row) for row in table.rows]
    path.write_text("\n".join(lines) + "\n", newline="\n")


def spec_from_file(path) -> ExperimentSpec:
    """Recover the experiment spec embedded in any output file (CSV or manifest)."""
    path = Path(path)
    text = path.read_text()
    if path.suffix == ".json":
        return spec_from_dict(json.loads(text)["spec"])
    first = text.split("\n", 1)[0]
    if not first.startswith("# spec="):
        raise ConfigError(f"{path} carries no embedded spec")
    return spec_from_dict(json.loads(first[len("# spec="):]))


def read_table(path) -> tuple[list[str], np.ndarray]:
    """Header and numeric body of a CSV written by ``write_table``."""
    lines = [ln for ln in Path(path).read_text().splitlines() if not ln.startswith("#")]
    cols = lines[0].split(",")
    body = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]]) if len(lines) > 1 else np.empty((0, len(cols)))
    return cols, body


def _jsonable(v):
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, float) and not np.isfinite(v):
        return repr(v)
    return v


def write_result(result: ExperimentResult, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    for name, table in result.tables.items():
        write_table(out / f"{name}.csv", table, result.spec)
        files.append(f"{name}.csv")
    manifest = {
        "spec": result.spec.to_dict(),
        "spec_hash": result.spec_hash,
        "kind": result.spec.kind,
        "version": result.version,
        "status": result.status,
        "wall_clock_s": result.wall_clock,
        "summary": _jsonable(result.summary),
        "files": files,
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


# runners ----------------------------------------------------------------

def _mass_errors(rows: list[DiagnosticsRow], Phi_F: float) -> tuple[float, float]:
    total = max(abs(r.M_L + r.M_F + r.Phi_F_obs - 1.0) for r in rows)
    eta = max(abs(r.Phi_F_obs - Phi_F) for r in rows)
    return total, eta


def run_continuum(spec: ExperimentSpec) -> ExperimentResult:
    """Single closed-loop PDE run (1D or nD) from a spec."""
    t0 = time.perf_counter()
    cfg = build_control(spec)
    grid = cfg.grid
    pred = predict_steady_profiles(cfg)
    state0 = initial_state(spec, cfg)
    snaps = sorted(set(spec.num("output", "snapshot_times")) | {cfg.n_steps * cfg.dt})
    loop = ClosedLoop(cfg)
    res = loop.run(state0, record_every=spec["output"]["record_every"], snapshot_times=snaps)

    tables = {"series": series_table(res.rows)}
    for t, snap in sorted(res.snapshots.items()):
        tables[f"snapshot_t{t:g}"] = snapshot_table(snap.state, snap.u, snap.q)
    fs = res.final_state
    if not res.completed:
        try:
            u, q = loop.controls(fs)
        except NumericalAbort:
            u = q = None
        tables[f"snapshot_t{fs.t:g}_abort"] = snapshot_table(fs, u, q)

    M_L, M_F, _ = fs.masses
    tot_err, eta_err = _mass_errors(res.rows, cfg.Phi_F)
    summary = {
        "t_end": fs.t,
        "D_KL_final": res.rows[-1].D_KL,
        "err_L2_final": res.rows[-1].err_L2,
        "M_L_final": M_L,
        "M_F_final": M_F,
        "ratio_final": M_L / M_F if M_F > 0 else float("inf"),
        "p": cfg.p,
        "p_hat": pred.p_hat,
        "feasible": pred.feasible,
        "stability_margin": pred.stability_margin,
        "M_L_predicted": pred.M_L,
        "M_F_predicted": pred.M_F,
        "profile_L2_rho_L": l2_norm(fs.rho_L - pred.rho_L_bar, grid),
        "profile_L2_rho_F": l2_norm(fs.rho_F - pred.rho_F_bar, grid),
        "profile_L2_eta_F": l2_norm(fs.eta_F - pred.eta_F_bar, grid),
        "mass_error_total": tot_err,
        "mass_error_eta_F": eta_err,
    }
    return ExperimentResult(spec, tables, summary, res.status, time.perf_counter() - t0)


run_bimodal_1d = run_continuum
run_monomodal_2d = run_continuum


def sweep_point_config(spec: ExperimentSpec, p: float):
    """Nominal and perturbed configs for one value of the plasticity fraction."""
    base = build_control(spec)
    lm = spec.num("sweep", "leader_mass")
    if lm is not None:
        K_FL, K_LF = rates_for_leader_mass(lm, p, spec.num("sweep", "rate_scale"))
    else:
        K_FL, K_LF = base.K_FL, base.K_LF
    nominal = base.with_(Phi_F=1.0 - p, K_FL=K_FL, K_LF=K_LF)
    changes = {}
    fD = spec.num("perturbation", "D_followers_factor")
    if fD != 1.0:
        changes["D_followers"] = nominal.D * fD
    fa, fr = spec.num("perturbation", "L_a_factor"), spec.num("perturbation", "L_r_factor")
    if (fa, fr) != (1.0, 1.0):
        changes["plant_kernel"] = nominal.kernel.scaled(fa, fr)
    return nominal, (nominal.with_(**changes) if changes else nominal)


def _sweep_point(spec_dict: dict, index: int) -> dict:
    spec = spec_from_dict(spec_dict)
    p = spec.num("sweep", "values")[index]
    nominal, plant = sweep_point_config(spec, p)
    pred = predict_steady_profiles(nominal)
    grid = nominal.grid
    margin = spec.num("initial", "shift_margin")
    s0 = SwarmState(
        shift_to_positive(pred.rho_L_bar.copy(), pred.M_L, grid, margin),
        shift_to_positive(pred.rho_F_bar.copy(), pred.M_F, grid, margin),
        pred.eta_F_bar.copy(),
        grid,
    )
    res = ClosedLoop(plant).run(s0, record_every=spec["output"]["record_every"])
    last = res.rows[-1]
    return {
        "index": index,
        "p": p,
        "p_hat": pred.p_hat,
        "feasible": pred.feasible,
        "K_FL": nominal.K_FL,
        "K_LF": nominal.K_LF,
        "D_KL_0": res.rows[0].D_KL,
        "D_KL_ss": last.D_KL,
        "M_L_ss": last.M_L,
        "M_F_ss": last.M_F,
        "t_end": last.t,
        "status": res.status,
        "mass_errors": _mass_errors(res.rows, plant.Phi_F),
        "rows": res.rows,
    }


def threshold_bracket(ps, dkl) -> tuple[float, float, float]:
    """Split of the sweep into a low-p and a high-p group with the widest gap.

    Returns ``(p_low, p_high, separation)`` where ``separation`` is
    ``min(D_KL below) / max(D_KL above)`` for the best split; a value of at
    least 10 marks a clear threshold between ``p_low`` and ``p_high``.
    """
    order = np.argsort(ps)
    ps = np.asarray(ps, dtype=float)[order]
    dkl = np.asarray(dkl, dtype=float)[order]
    best = (float("nan"), float("nan"), 0.0)
    for j in range(1, len(ps)):
        hi = float(np.max(dkl[j:]))
        sep = float(np.min(dkl[:j])) / hi if hi > 0 else float("inf")
        if sep > best[2]:
            best = (float(ps[j - 1]), float(ps[j]), sep)
    return best


SWEEP_COLUMNS = ["index", "p", "p_hat", "feasible", "K_FL", "K_LF", "D_KL_0", "D_KL_ss",
                 "M_L_ss", "M_F_ss", "t_end", "status"]


def _map(fn, args, jobs: int):
    if jobs <= 1 or len(args) <= 1:
        return [fn(*a) for a in args]
    with ProcessPoolExecutor(max_workers=min(jobs, len(args))) as ex:
        futures = [ex.submit(fn, *a) for a in args]
        return [f.result() for f in futures]


def run_robustness_sweep(spec: ExperimentSpec, jobs: int = 1) -> ExperimentResult:
    """Perturbed runs from predicted equilibria over a grid of ``p``.

    Points below the feasibility threshold usually abort (leaders cannot
    stay positive); their ``D_KL_ss`` is the value when the run stopped and
    the abort is recorded in ``status``. The sweep itself always completes.
    """
    t0 = time.perf_counter()
    values = spec.num("sweep", "values")
    raw = spec.to_dict()
    points = _map(_sweep_point, [(raw, i) for i in range(len(values))], jobs)
    points.sort(key=lambda d: d["index"])
    tables = {"sweep": Table(SWEEP_COLUMNS, [[d[c] for c in SWEEP_COLUMNS] for d in points])}
    for d in points:
        tables[f"point_{d['index']:02d}"] = series_table(d["rows"])
    p_low, p_high, sep = threshold_bracket([d["p"] for d in points], [d["D_KL_ss"] for d in points])
    summary = {
        "p_hat": points[0]["p_hat"],
        "p_low": p_low,
        "p_high": p_high,
        "separation": sep,
        "n_aborted": sum(d["status"] != "completed" for d in points),
        "mass_error_total": max(d["mass_errors"][0] for d in points),
        "mass_error_eta_F": max(d["mass_errors"][1] for d in points),
    }
    return ExperimentResult(spec, tables, summary, "completed", time.perf_counter() - t0)


def abm_config(spec: ExperimentSpec) -> AbmConfig:
    a = spec["abm"]
    return AbmConfig(
        build_control(spec),
        n_leaders=a["n_leaders"], n_followers=a["n_followers"], n_nonplastic=a["n_nonplastic"],
        bandwidth=spec.num("abm", "bandwidth"), kde_method=a["kde_method"], weighting=a["weighting"],
        eps=spec.num("abm", "eps"), seed=a["seed0"], record_every=a["record_every"],
    )


def _abm_chunk(spec_dict: dict, seeds: list[int]):
    cfg = abm_config(spec_from_dict(spec_dict))
    return [(r.rows, r.summary, r.status) for r in run_abm_batch(cfg, seeds)]


ABM_SUMMARY_COLUMNS = ["seed", "D_KL_ss", "M_L_ss", "M_F_ss", "ratio", "leader_min_count", "status"]


def run_abm_ensemble(spec: ExperimentSpec, jobs: int = 1, seeds: int | None = None) -> ExperimentResult:
    """Independent agent-based runs, one per seed, plus ensemble statistics.

    Seeds are split into contiguous chunks, one per worker; every seed's
    trajectory is identical whether it runs alone, in a batch or in a
    worker, so the merged output does not depend on ``jobs``.
    """
    t0 = time.perf_counter()
    a = spec["abm"]
    n = a["seeds"] if seeds is None else seeds
    all_seeds = list(range(a["seed0"], a["seed0"] + n))
    chunks = [list(c) for c in np.array_split(all_seeds, max(1, min(jobs, n))) if len(c)]
    chunks = [[int(s) for s in c] for c in chunks]
    raw = spec.to_dict()
    parts = _map(_abm_chunk, [(raw, c) for c in chunks], jobs)
    results = [r for part in parts for r in part]

    series_rows, summ_rows = [], []
    for seed, (rows, summary, status) in zip(all_seeds, results):
        series_rows += [[seed] + list(row) for row in rows]
        summ_rows.append([summary[c] for c in ABM_SUMMARY_COLUMNS[:-1]] + [status])
    D = np.array([r[1] for r in summ_rows])
    R = np.array([r[4] for r in summ_rows])
    n_aborted = sum(r[-1] != "completed" for r in summ_rows)
    summary = {
        "n_seeds": n,
        "D_KL_ss_mean": float(D.mean()),
        "D_KL_ss_std": float(D.std()),
        "ratio_mean": float(R.mean()),
        "ratio_std": float(R.std()),
        "n_aborted": n_aborted,
    }
    tables = {
        "abm_summary": Table(ABM_SUMMARY_COLUMNS, summ_rows),
        "abm_series": Table(["seed"] + list(AbmResult.ROW_FIELDS), series_rows),
    }
    status = "completed" if n_aborted == 0 else f"aborted: {n_aborted} of {n} seeds"
    return ExperimentResult(spec, tables, summary, status, time.perf_counter() - t0)


def run_feasibility(spec: ExperimentSpec) -> ExperimentResult:
    """Threshold, steady profiles and stability margin, no time stepping."""
    t0 = time.perf_counter()
    cfg = build_control(spec)
    pred = predict_steady_profiles(cfg)
    grid = cfg.grid
    coords = [c.ravel() for c in grid.mesh()]
    names = ["x", "y", "z"][: grid.ndim]
    fields = [cfg.target.values, pred.h, pred.eta_F_bar, pred.rho_L_bar, pred.rho_F_bar]
    data = np.column_stack(coords + [f.ravel() for f in fields])
    tables = {"profiles": Table(names + ["target", "h", "eta_F_bar", "rho_L_bar", "rho_F_bar"], data.tolist())}
    summary = {
        "p": cfg.p,
        "p_hat": pred.p_hat,
        "feasible": pred.feasible,
        "M_L_predicted": pred.M_L,
        "M_F_predicted": pred.M_F,
        "ratio_predicted": pred.M_L / pred.M_F,
        "stability_margin": pred.stability_margin,
        "stable": pred.stable,
        "isotropy_residual": pred.isotropy_residual,
    }
    return ExperimentResult(spec, tables, summary, "completed", time.perf_counter() - t0)


def manufactured_potential(grid) -> np.ndarray:
    """Smooth zero-mean band-limited potential used by the Poisson check."""
    mesh = grid.mesh()
    phi = np.zeros(grid.shape)
    for a, c in enumerate(mesh):
        phi += np.sin((a + 1) * c) + 0.5 * np.cos(2 * c + 0.3 * a)
    if grid.ndim >= 2:
        phi += 0.3 * np.sin(mesh[0] + 2 * mesh[1]) * np.cos(3 * mesh[-1])
    return phi - phi.mean()


def poisson_residuals(shape) -> dict:
    """Recovery, divergence round-trip and curl residuals of the Poisson solve."""
    grid = make_grid(shape)
    phi_true = manufactured_potential(grid)
    lap = sum(spectral_derivative(spectral_derivative(phi_true, grid, a), grid, a) for a in range(grid.ndim))
    Y = -lap
    phi, w = poisson_solve_nd(Y, grid, kind="spectral")
    w_true = -np.stack([spectral_derivative(phi_true, grid, a) for a in range(grid.ndim)])
    c = curl(w, grid, method="spectral")
    _, w_fd = poisson_solve_nd(Y, grid, kind="central")
    return {
        "recovery_phi": float(np.max(np.abs(phi - phi_true))),
        "recovery_w": float(np.max(np.abs(w - w_true))),
        "divergence_roundtrip": float(np.max(np.abs(divergence(w, grid, method="spectral") - Y))),
        "divergence_roundtrip_fd": float(np.max(np.abs(divergence(w_fd, grid) - (Y - Y.mean())))),
        "curl": float(np.max(np.abs(c))),
        "curl_fd": float(np.max(np.abs(curl(w_fd, grid)))),
    }


def run_poisson_check(spec: ExperimentSpec) -> ExperimentResult:
    t0 = time.perf_counter()
    p = spec["poisson"]
    r = poisson_residuals(p["shape"])
    tol = {"recovery_phi": p["tol_recovery"], "recovery_w": p["tol_recovery"],
           "divergence_roundtrip": p["tol_divergence"], "divergence_roundtrip_fd": p["tol_divergence"],
           "curl": p["tol_curl"], "curl_fd": p["tol_curl"]}
    rows = [[k, v, float(tol[k]), bool(v <= tol[k])] for k, v in r.items()]
    ok = all(row[-1] for row in rows)
    summary = dict(r, passed=ok)
    status = "completed" if ok else "failed: residual above tolerance"
    return ExperimentResult(spec, {"poisson": Table(["check", "residual", "tolerance", "passed"], rows)},
                            summary, status, time.perf_counter() - t0)


RUNNERS = {
    "continuum_1d": run_continuum,
    "continuum_nd": run_continuum,
    "abm": run_abm_ensemble,
    "feasibility": run_feasibility,
    "robustness_sweep": run_robustness_sweep,
    "poisson_check": run_poisson_check,
}


def run_spec(spec: ExperimentSpec, jobs: int = 1, seeds: int | None = None) -> ExperimentResult:
    if spec.kind == "abm":
        return run_abm_ensemble(spec, jobs=jobs, seeds=seeds)
    if spec.kind == "robustness_sweep":
        return run_robustness_sweep(spec, jobs=jobs)
    return RUNNERS[spec.kind](spec)


def default_jobs() -> int:
    return max(1, os.cpu_count() or 1)
