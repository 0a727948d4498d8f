"""Command-line front end.

Subcommands: validate, steady, simulate, mix, clean, stabilize. Time flags
are in parallel time (interactions / n); interaction counts are derived and
echoed in outputs. Exit codes are a stable contract: 0 success, 1 validation
error, 2 I/O error, 3 experiment failure (for instance non-convergence).

figure presets reproduce the desk-scale experiment conditions (n = 10^4;
s = 14 or 17; beta = 0, 0.01, 0.1); every preset value can be overridden
flag by flag. The default seed comes from LEAKPP_SEED when set; an explicit
--seed always wins. Output sampling in the library breaks ties toward
nondetect.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from . import analysis, convergence, dsl
from .model import ProtocolError, classify_catalytic
from .robust_detect import DetectParams, build_robust_detect, initial_configuration
from .simulate import LeakModel, SimParams, run, run_batch


class UsageError(ValueError):
    pass


class ExperimentFailure(RuntimeError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); keep 2 for real I/O errors
        raise UsageError(message)


def _default_seed() -> int:
    try:
        return int(os.environ.get("LEAKPP_SEED", "0"))
    except ValueError:
        return 0


def _add_common(p: argparse.ArgumentParser, *, runs_default: int = 1) -> None:
    p.add_argument("--n", type=int, default=None, help="population size")
    p.add_argument("--k", type=int, default=None, help="detector count")
    p.add_argument("--s", type=int, default=None, help="alert levels (default ceil(log2 n))")
    p.add_argument("--beta", type=float, default=None, help="leak parameter (rate beta/n)")
    p.add_argument(
        "--strategy",
        default=None,
        help="leak strategy: none, fp, fn, or custom:<file> with 'SRC -> DST' lines",
    )
    p.add_argument("--seed", type=int, default=None, help="RNG seed (env LEAKPP_SEED)")
    p.add_argument("--runs", type=int, default=runs_default)
    p.add_argument("--time", type=float, default=None, help="horizon in parallel time")
    p.add_argument("--record-every", type=float, default=0.5, help="snapshot spacing, parallel time")
    p.add_argument("--out", type=Path, default=None, help="output path (stem for multi-file output)")
    p.add_argument("--format", choices=("csv", "json"), default="json")


def _leak_model(beta: float, strategy: Optional[str]) -> LeakModel:
    name = strategy or "none"
    if name == "none":
        return LeakModel(beta)
    if name == "fp":
        return LeakModel.worst_false_positive(beta)
    if name == "fn":
        return LeakModel.worst_false_negative(beta)
    if name.startswith("custom:"):
        path = name.split(":", 1)[1]
        mapping: Dict[str, str] = {}
        with open(path, encoding="utf-8") as fh:
            for raw in fh:
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                parts = [tok.strip() for tok in line.split("->")] if "->" in line else line.split()
                if len(parts) != 2 or not all(parts):
                    raise UsageError(f"bad custom leak line {raw.strip()!r}")
                mapping[parts[0]] = parts[1]
        return LeakModel.custom(beta, mapping)
    raise UsageError(f"unknown strategy {name!r}")


def _emit(obj, out: Optional[Path], fmt: str) -> None:
    """Write a report-like object (with to_json_obj/to_csv) or plain dict."""
    if fmt == "csv" and hasattr(obj, "to_csv"):
        obj.to_csv(out if out is not None else sys.stdout)
        return
    doc = obj.to_json_obj() if hasattr(obj, "to_json_obj") else obj
    if out is None:
        json.dump(doc, sys.stdout, indent=2)
        sys.stdout.write("\n")
    else:
        with open(out, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2)
            fh.write("\n")


# ---------------------------------------------------------------------------
# commands


def cmd_validate(args) -> int:
    text = Path(args.file).read_text(encoding="utf-8")
    protocol = dsl.parse(text)
    if not protocol.species:
        print("warning: empty protocol", file=sys.stderr)
    partition = classify_catalytic(protocol)
    cat = " ".join(sp.name for sp in sorted(partition.catalytic, key=lambda s: s.id)) or "-"
    non = " ".join(sp.name for sp in sorted(partition.non_catalytic, key=lambda s: s.id)) or "-"
    print(f"species: {len(protocol.species)}")
    print(f"rules: {len(protocol.rules())}")
    print(f"catalytic: {cat}")
    print(f"non-catalytic: {non}")
    return 0


_FIGURE1 = (("k1_b0", 1, 0.0), ("k0_b0.01", 0, 0.01), ("k0_b0.1", 0, 0.1))


def _steady_profile(n: int, k: int, beta: float, s: int) -> analysis.StationaryProfile:
    if beta > 0 and k == 0:
        return analysis.stationary_false_positive(n, beta, s)
    if beta > 0 and k >= 1:
        return analysis.stationary_false_negative(n, k, beta, s)
    return analysis.stationary_no_leak(n, k, s)


def cmd_steady(args) -> int:
    if args.preset == "figure1":
        n = args.n if args.n is not None else 10_000
        s = args.s if args.s is not None else 14
        profiles = {tag: _steady_profile(n, k, beta, s) for tag, k, beta in _FIGURE1}
        if args.format == "csv":
            if args.out is None:
                for tag, prof in profiles.items():
                    print(f"# condition: {tag}")
                    print("i,p_leq,p")
                    for i in range(prof.s + 1):
                        print(f"{i},{float(prof.p_leq[i])!r},{float(prof.p[i])!r}")
            else:
                for tag, prof in profiles.items():
                    prof.to_csv(_tagged(args.out, tag))
        else:
            doc = {
                "preset": "figure1",
                "n": n,
                "s": s,
                "profiles": {tag: prof.to_json_obj() for tag, prof in profiles.items()},
            }
            _emit(doc, args.out, "json")
        return 0

    n = args.n if args.n is not None else 10_000
    k = args.k if args.k is not None else 0
    s = args.s if args.s is not None else DetectParams(n, k).s
    beta = args.beta if args.beta is not None else 0.0
    DetectParams(n, k, s)  # range validation
    prof = _steady_profile(n, k, beta, s)
    _emit(prof, args.out, args.format)
    return 0


def _tagged(path: Path, tag: str) -> Path:
    return path.with_name(f"{path.stem}.{tag}{path.suffix}")


_FIGURE2 = {
    "figure2a": (14, 0.1),
    "figure2b": (17, 0.01),
}


def _simulate_once(n, k, s, leak, seed, time_pt, record_pt, runs):
    protocol = build_robust_detect(s)
    params = SimParams(
        protocol=protocol,
        init=initial_configuration(protocol, DetectParams(n, k, s), "all_n"),
        leak=leak,
        seed=seed,
        t_max=round(time_pt * n),
        record_every=max(1, round(record_pt * n)),
    )
    if runs == 1:
        return run(params)
    return run_batch(params, runs)


def cmd_simulate(args) -> int:
    seed = args.seed if args.seed is not None else _default_seed()
    time_pt = args.time if args.time is not None else 100.0
    if args.preset in _FIGURE2:
        s_preset, beta_preset = _FIGURE2[args.preset]
        n = args.n if args.n is not None else 10_000
        s = args.s if args.s is not None else s_preset
        beta = args.beta if args.beta is not None else beta_preset
        conditions = [
            ("k1_b0", 1, LeakModel.none()),
            (f"k0_b{beta}", 0, LeakModel.worst_false_positive(beta)),
        ]
        for tag, k, leak in conditions:
            result = _simulate_once(n, k, s, leak, seed, time_pt, args.record_every, args.runs)
            out = _tagged(args.out, tag) if args.out is not None else None
            _emit(result, out, args.format)
        return 0

    n = args.n if args.n is not None else 10_000
    k = args.k if args.k is not None else 1
    s = args.s if args.s is not None else DetectParams(n, k).s
    beta = args.beta if args.beta is not None else 0.0
    leak = _leak_model(beta, args.strategy)
    result = _simulate_once(n, k, s, leak, seed, time_pt, args.record_every, args.runs)
    _emit(result, args.out, args.format)
    return 0


def cmd_mix(args) -> int:
    seed = args.seed if args.seed is not None else _default_seed()
    n = args.n if args.n is not None else 10_000
    k = args.k if args.k is not None else 1
    s = args.s if args.s is not None else DetectParams(n, k).s
    beta = args.beta if args.beta is not None else 0.0
    time_pt = args.time if args.time is not None else 10 * math.log2(n)
    leak = _leak_model(beta, args.strategy)
    protocol = build_robust_detect(s)
    params = SimParams(
        protocol=protocol,
        init=initial_configuration(protocol, DetectParams(n, k, s), "all_n"),
        leak=leak,
        seed=seed,
        t_max=round(time_pt * n),
        record_every=max(1, round(args.record_every * n)),
    )
    report = convergence.estimate_convergence_time(params, args.epsilon, args.runs)
    _emit(report, args.out, args.format)
    if not report.converged:
        raise ExperimentFailure(
            f"gap never stayed below epsilon={args.epsilon} (min gap {report.min_gap:.4f})"
        )
    return 0


def cmd_clean(args) -> int:
    seed = args.seed if args.seed is not None else _default_seed()
    n = args.n if args.n is not None else 1000
    s = args.s if args.s is not None else 10
    report = convergence.decay_experiment(
        n, s, "all_x1", runs=args.runs, seed=seed,
        record_every=max(1, round(args.record_every * n)),
        horizon_factor=args.horizon_factor,
    )
    _emit(report, args.out, args.format)
    if report.fraction_cleared_by_tstar < args.min_cleared:
        raise ExperimentFailure(
            f"only {report.fraction_cleared_by_tstar:.0%} of runs cleared by t*={report.t_star}"
        )
    return 0


def cmd_stabilize(args) -> int:
    seed = args.seed if args.seed is not None else _default_seed()
    n = args.n if args.n is not None else 10_000
    k = args.k if args.k is not None else 1
    s = args.s if args.s is not None else DetectParams(n, k).s
    report = convergence.stabilization_experiment(
        n, s, runs=args.runs, seed=seed,
        remove_at=args.remove_at, window=args.window,
        record_every_pt=args.record_every,
    )
    _emit(report, args.out, args.format)
    if report.successes < args.min_success * report.runs:
        raise ExperimentFailure(
            f"only {report.successes}/{report.runs} runs adapted within the window"
        )
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> _Parser:
    top = _Parser(prog="leakpp", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = top.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="parse a .pp protocol file and report structure")
    p.add_argument("file", type=Path)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("steady", help="stationary level probabilities (analytic)")
    _add_common(p)
    p.add_argument("--preset", choices=("figure1",), default=None)
    p.set_defaults(func=cmd_steady)

    p = sub.add_parser("simulate", help="simulate trajectories")
    _add_common(p)
    p.add_argument("--preset", choices=tuple(_FIGURE2), default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("mix", help="estimate convergence time to the stationary profile")
    _add_common(p, runs_default=20)
    p.add_argument("--epsilon", type=float, default=0.02)
    p.set_defaults(func=cmd_mix)

    p = sub.add_parser("clean", help="alert-level clearing experiment (no detector, no leaks)")
    _add_common(p, runs_default=100)
    p.add_argument("--horizon-factor", type=float, default=2.0)
    p.add_argument("--min-cleared", type=float, default=0.95)
    p.set_defaults(func=cmd_clean)

    p = sub.add_parser("stabilize", help="remove and re-add the detector mid-run")
    _add_common(p, runs_default=20)
    p.add_argument("--remove-at", type=float, default=100.0)
    p.add_argument("--window", type=float, default=40.0)
    p.add_argument("--min-success", type=float, default=0.9)
    p.set_defaults(func=cmd_stabilize)

    return top


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (dsl.ParseError, ProtocolError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 2
    except ExperimentFailure as exc:
        print(f"experiment failed: {exc}", file=sys.stderr)
        return 3


def entry() -> None:  # console_scripts hook
    raise SystemExit(main())


if __name__ == "__main__":
    raise SystemExit(main())
