"""Command-line front end: ``rkbench <subcommand> [flags]``.

Exit status: 0 when every run succeeded, 1 when any run failed, 2 for
usage errors (bad flags, unknown method or problem names).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import bench
from . import problems as _problems
from .bench import ExperimentError, ExperimentSpec
from .tableaus import available as available_methods
from .tableaus import dump_tableaus

SUBCOMMANDS = ("convergence", "work-precision", "eigs", "integrate", "step-trace",
               "dump-tableaus", "make-reference")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _floats(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text):
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _param(text):
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    key, value = text.split("=", 1)
    try:
        value = json.loads(value)
    except json.JSONDecodeError:
        pass
    return key.strip(), value


def _jvp(text):
    """``fd``, ``exact`` or a per-method list like ``rok4=fd,ros4=exact``."""
    if "=" not in text:
        if text not in ("fd", "exact"):
            raise argparse.ArgumentTypeError("jvp mode must be fd or exact")
        return text
    out = {}
    for item in text.split(","):
        k, _, v = item.partition("=")
        out[k.strip()] = v.strip()
    return out


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="rkbench", description="Stiff ODE integrator benchmarks.")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    def common(sp, methods=True, grid=True):
        sp.add_argument("--config", help="JSON file with experiment fields; flags override it")
        sp.add_argument("--problem", help=f"problem name ({', '.join(_problems.available())})")
        sp.add_argument("--preset", help="Burgers stiffness preset (default or stiff)")
        sp.add_argument("--param", action="append", type=_param, default=[], metavar="KEY=VALUE",
                        help="problem parameter override, repeatable")
        if methods:
            sp.add_argument("--methods", "--method", dest="methods",
                            type=lambda s: [m for m in s.split(",") if m],
                            help="comma-separated method names")
        if grid:
            sp.add_argument("--h", type=float, help="largest fixed step size")
            sp.add_argument("--halvings", type=int, help="number of step halvings after --h")
            sp.add_argument("--steps", type=_floats, help="explicit comma-separated step list")
            sp.add_argument("--tols", "--tol", dest="tols", type=_floats,
                            help="comma-separated tolerances (adaptive runs)")
        sp.add_argument("--m", type=_ints, help="Krylov dimension(s), comma-separated")
        sp.add_argument("--jvp", type=_jvp, help="fd, exact, or per-method e.g. rok4=fd,ros4=exact")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", help="output CSV path")
        sp.add_argument("--json", help="also write the records as JSON to this path")

    common(sub.add_parser("convergence", help="fixed-step order study"))
    common(sub.add_parser("work-precision", help="adaptive tolerance sweep"))
    common(sub.add_parser("integrate", help="single runs (fixed if --h is given)"))
    common(sub.add_parser("step-trace", help="per-step sizes of adaptive runs"))
    common(sub.add_parser("eigs", help="Ritz values of the Jacobian at the initial state"),
           methods=False, grid=False)
    dt = sub.add_parser("dump-tableaus", help="write all registered tableaus as JSON")
    dt.add_argument("--out", help="output path (stdout if omitted)")
    mr = sub.add_parser("make-reference", help="compute and store a reference solution")
    mr.add_argument("--config")
    mr.add_argument("--problem")
    mr.add_argument("--preset")
    mr.add_argument("--param", action="append", type=_param, default=[], metavar="KEY=VALUE")
    mr.add_argument("--tol", type=float, default=bench.REFERENCE_TOL)
    return p


def spec_from_args(args) -> ExperimentSpec:
    data = {}
    if getattr(args, "config", None):
        try:
            data = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(data, dict):
            raise UsageError("config must be a JSON object")
    data["kind"] = args.command
    if args.problem:
        data["problem"] = args.problem
    params = dict(data.get("problem_params", {}))
    if args.preset:
        params["preset"] = args.preset
    params.update(dict(args.param))
    data["problem_params"] = params
    if getattr(args, "methods", None):
        data["methods"] = args.methods
    if getattr(args, "steps", None):
        data["steps"] = args.steps
    elif getattr(args, "h", None) is not None:
        n = args.halvings if args.halvings is not None else 0
        data["steps"] = [args.h / 2**k for k in range(n + 1)]
    if getattr(args, "tols", None):
        data["tols"] = args.tols
    if args.m:
        data["krylov_dims"] = args.m
    if args.jvp is not None:
        data["jvp_mode"] = args.jvp
    if args.seed is not None:
        data["seed"] = args.seed
    if args.out:
        data["out"] = args.out
    if args.command == "eigs":
        data.setdefault("methods", [])
        data.setdefault("krylov_dims", [min(30, _probe_dimension(data))])
    if args.command == "convergence" and "steps" not in data:
        data["steps"] = [1e-2 / 2**k for k in range(6)]
    if args.command in ("work-precision", "step-trace") and "tols" not in data:
        data["tols"] = [1e-3, 1e-4, 1e-5, 1e-6]
    try:
        return ExperimentSpec.from_dict(data).validate()
    except TypeError as exc:
        raise UsageError(str(exc)) from None


def _probe_dimension(data) -> int:
    try:
        return _problems.get_problem(data.get("problem", "lorenz96"), **data.get("problem_params", {})).dimension
    except (KeyError, TypeError, ValueError):
        return 30


def _emit(rows, spec, args, columns=bench.CSV_COLUMNS):
    text = bench.write_csv(rows, spec.out, columns)
    if not spec.out:
        sys.stdout.write(text)
    if getattr(args, "json", None):
        bench.write_json(rows, args.json)


def _say(text, spec=None):
    """Summary lines go to stdout unless stdout is carrying the CSV itself."""
    print(text, file=sys.stdout if spec is None or spec.out else sys.stderr)


def _label(method, M):
    return method if M is None else f"{method}(M={M})"


def _summarize(records, spec):
    by = {}
    for r in records:
        by.setdefault((r.method, r.M), []).append(r)
    for (m, M), rs in by.items():
        ok = sum(r.success for r in rs)
        _say(f"{_label(m, M)}: {ok}/{len(rs)} runs succeeded, "
             f"{sum(r.steps_accepted for r in rs)} accepted steps, "
             f"{sum(r.rhs_evals + r.jvp_evals for r in rs)} rhs+jvp evals", spec)


def _run(args) -> int:
    if args.command == "dump-tableaus":
        doc = dump_tableaus(args.out)
        if not args.out:
            print(json.dumps(doc, indent=2))
        print(f"wrote {len(doc['tableaus'])} tableaus", file=sys.stdout if args.out else sys.stderr)
        return 0
    if args.command == "make-reference":
        params = {}
        if args.config:
            params = json.loads(Path(args.config).read_text()).get("problem_params", {})
        if args.preset:
            params["preset"] = args.preset
        params.update(dict(args.param))
        problem = _problems.get_problem(args.problem or "lorenz96", **params)
        ref = bench.get_reference(problem, args.tol)
        print(f"reference for {problem.name} at tol {args.tol:g}: {ref.path}")
        return 0

    spec = spec_from_args(args)
    if spec.kind == "convergence":
        res = bench.run_convergence(spec)
        _emit(res.records, spec, args)
        for (m, M), fit in res.slopes.items():
            _say(f"{_label(m, M)}: slope {fit.describe()}", spec)
        return 0 if all(r.success for r in res.records) else 1
    if spec.kind == "work-precision":
        records = bench.run_work_precision(spec)
        _emit(records, spec, args)
        _summarize(records, spec)
        return 0 if all(r.success for r in records) else 1
    if spec.kind == "integrate":
        records = bench.run_integrate(spec)
        _emit(records, spec, args)
        _summarize(records, spec)
        return 0 if all(r.success for r in records) else 1
    if spec.kind == "step-trace":
        rows = bench.run_step_trace(spec)
        _emit(rows, spec, args, bench.TRACE_COLUMNS)
        for tol in spec.tols:
            n = sum(r["accepted"] for r in rows if r["tol"] == tol)
            _say(f"{spec.methods[0]} tol={tol:g}: {n} accepted, mean h "
                 f"{bench.mean_accepted_step(rows, tol=tol):.4g}", spec)
        return 0 if all(r["status"] == "success" for r in rows) else 1
    # eigs
    res = bench.run_eigs(spec)
    _emit(res.rows(), spec, args, bench.EIG_COLUMNS)
    lo = res.ritz.real.min()
    _say(f"{len(res.ritz)} Ritz values (M_eff={res.m_eff}{', breakdown' if res.breakdown else ''}); "
         f"most negative real part {lo:.6g}", spec)
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _run(args)
    except UsageError as exc:
        print(f"rkbench: error: {exc}", file=sys.stderr)
        print(f"valid methods: {', '.join(available_methods())}; "
              f"valid problems: {', '.join(_problems.available())}", file=sys.stderr)
        return 2
    except (ExperimentError, KeyError) as exc:
        msg = exc.args[0] if exc.args else str(exc)
        print(f"rkbench: error: {msg}", file=sys.stderr)
        print(f"valid methods: {', '.join(available_methods())}; "
              f"valid problems: {', '.join(_problems.available())}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
