"""Command-line entry point: ``plasticswarm <command> [options]``.

Exit codes: 0 success, 1 a check failed its tolerance, 2 config error,
3 numerical abort (partial results are still written).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import PRESETS, load_preset, load_spec, spec_from_dict
from .errors import ConfigError, NumericalAbort
from .experiments import run_spec, write_result

EXIT_OK, EXIT_FAILED, EXIT_CONFIG, EXIT_ABORT = 0, 1, 2, 3

# command -> kinds it accepts
COMMAND_KINDS = {
    "simulate": ("continuum_1d", "continuum_nd"),
    "analyze": ("feasibility", "continuum_1d", "continuum_nd"),
    "sweep": ("robustness_sweep",),
    "abm": ("abm",),
    "poisson-check": ("poisson_check",),
}

DEFAULT_PRESET = {"poisson-check": "poisson"}


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="TOML experiment file")
    p.add_argument("--preset", choices=sorted(PRESETS), help="shipped experiment preset")
    p.add_argument("--out", type=Path, help="output directory (default: runs/<name>)")
    p.add_argument("--seeds", type=int, help="number of seeds (agent ensembles)")
    p.add_argument("--jobs", type=int, default=1, help="worker processes for sweep points / seeds")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="plasticswarm", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "simulate": "closed-loop PDE run (1D or nD)",
        "analyze": "feasibility threshold, steady profiles and stability margin",
        "sweep": "robustness sweep over the plasticity fraction",
        "abm": "agent-based ensemble",
        "poisson-check": "manufactured-solution check of the Poisson recovery",
    }
    for name, text in helps.items():
        _common(sub.add_parser(name, help=text))
    rep = sub.add_parser("reproduce", help="run a shipped figure preset")
    rep.add_argument("figure", choices=sorted(PRESETS))
    _common(rep)
    return parser


def _resolve_spec(args):
    if args.command == "reproduce":
        if args.config or args.preset:
            raise ConfigError("reproduce takes a figure id, not --config/--preset")
        return load_preset(args.figure)
    if args.config and args.preset:
        raise ConfigError("give either --config or --preset, not both")
    if args.config:
        spec = load_spec(args.config)
    elif args.preset:
        spec = load_preset(args.preset)
    elif args.command in DEFAULT_PRESET:
        spec = load_preset(DEFAULT_PRESET[args.command])
    else:
        raise ConfigError(f"{args.command} needs --config or --preset")
    kinds = COMMAND_KINDS[args.command]
    if spec.kind not in kinds:
        raise ConfigError(f"{args.command} expects a config of kind {' or '.join(kinds)}, got {spec.kind!r}")
    if args.command == "analyze" and spec.kind != "feasibility":
        raw = spec.to_dict()
        raw["kind"] = "feasibility"
        for sec in ("initial", "output"):
            raw.pop(sec, None)
        spec = spec_from_dict(raw)
    return spec


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        spec = _resolve_spec(args)
        if args.seeds is not None and args.seeds < 1:
            raise ConfigError("--seeds must be >= 1")
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        out = args.out or Path("runs") / spec.name
        result = run_spec(spec, jobs=args.jobs, seeds=args.seeds)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalAbort as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_ABORT
    manifest = write_result(result, out)
    print(json.dumps({"status": result.status, "manifest": str(manifest), **_brief(result.summary)}, indent=2))
    if result.status.startswith("aborted"):
        print(f"run {result.status}; partial results in {out}", file=sys.stderr)
        return EXIT_ABORT
    if result.status != "completed":
        return EXIT_FAILED
    return EXIT_OK


def _brief(summary: dict) -> dict:
    out = {}
    for k, v in summary.items():
        if isinstance(v, float):
            out[k] = float(f"{v:.6g}")
        elif isinstance(v, (int, bool, str)):
            out[k] = v
    return out


if __name__ == "__main__":
    sys.exit(main())
