"""Command-line interface: ``softmpc run|find-box|sweep|validate``.

Exit codes: 0 success, 2 validation error, 3 scenario abort.
"""
import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import tomli_w

from .constraint_finder import find_constraint_set
from .exceptions import NoFeasibleBox, ScenarioAbort, ScenarioError
from .sim.scenario import finder_from_dict, parse_toml, scenario_from_dict, set_path

EXIT_OK, EXIT_VALIDATION, EXIT_ABORT = 0, 2, 3


def _read(path):
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise ScenarioError(f"cannot read file: {exc}", where=str(path)) from exc


def _overrides(data, args):
    data = dict(data)
    if getattr(args, "seed", None) is not None:
        data["seed"] = args.seed
    if getattr(args, "rate", None) is not None:
        data["rate"] = args.rate
    if getattr(args, "controller", None) is not None:
        data["controller"] = args.controller
    return data


def _run_one(data, text, out_dir, tag, timing=True):
    """Run one scenario dict; returns a JSON-able summary. Raises on abort."""
    from .sim.logio import export_csv
    from .sim.runner import run_scenario

    sc = scenario_from_dict(data, text)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        log, metrics = run_scenario(sc, timing=timing)
    except ScenarioAbort as exc:
        export_csv(exc.log, out_dir / f"{tag}.csv")
        (out_dir / f"{tag}.metrics.json").write_text(
            json.dumps({"aborted": str(exc), **exc.metrics.as_dict()}, indent=2))
        raise
    export_csv(log, out_dir / f"{tag}.csv")
    summary = metrics.as_dict()
    (out_dir / f"{tag}.metrics.json").write_text(json.dumps(summary, indent=2))
    return summary


def cmd_run(args):
    text = _read(args.scenario)
    data = _overrides(parse_toml(text), args)
    tag = args.tag or Path(args.scenario).stem
    summary = _run_one(data, text, args.out, tag, timing=not args.no_timing)
    print(json.dumps(summary, indent=2))
    return EXIT_OK


def _parse_values(raw):
    items = []
    for token in raw.split(","):
        token = token.strip()
        if not token:
            continue
        try:
            items.append(parse_toml(f"v = {token}")["v"])
        except ScenarioError:
            items.append(token)
    if not items:
        raise ScenarioError("no values given", where="--values")
    return items


def _sweep_worker(payload):
    data, text, out, tag, timing = payload
    try:
        return tag, _run_one(data, text, out, tag, timing), None
    except ScenarioAbort as exc:
        return tag, None, str(exc)


def cmd_sweep(args):
    text = _read(args.scenario)
    base = _overrides(parse_toml(text), args)
    values = _parse_values(args.values)
    jobs = []
    stem = Path(args.scenario).stem
    for value in values:
        data = set_path(base, args.param, value)
        scenario_from_dict(data)  # validate every variant before running any
        jobs.append((data, None, args.out, f"{stem}_{args.param.replace('.', '-')}={value}",
                     not args.no_timing))
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_sweep_worker, jobs))
    else:
        results = [_sweep_worker(j) for j in jobs]
    aborted = False
    for (tag, summary, error), value in zip(results, values):
        if error:
            aborted = True
            print(f"{args.param}={value}: ABORTED {error}")
        else:
            print(f"{args.param}={value}: rmse={summary['rmse']:.6g} "
                  f"max_error={summary['max_error']:.6g} mean_solve_ms={summary['mean_solve_ms']:.4g}")
    return EXIT_ABORT if aborted else EXIT_OK


def cmd_validate(args):
    text = _read(args.file)
    data = parse_toml(text)
    if "finder" in data and "controller" not in data:
        finder_from_dict(data, text)
    else:
        scenario_from_dict(data, text)
    print(f"{args.file}: OK")
    return EXIT_OK


def cmd_find_box(args):
    text = _read(args.finder_file)
    cfg, geom = finder_from_dict(parse_toml(text), text)
    try:
        box = find_constraint_set(cfg, geom)
    except NoFeasibleBox as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ABORT
    out = tomli_w.dumps({"box": {"q_l": [float(v) for v in box.q_l], "q_u": [float(v) for v in box.q_u]}})
    if args.out:
        Path(args.out).write_text(out)
    print(out, end="")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="softmpc", description="Tube MPC soft-arm simulation bench")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--out", default="runs", help="output directory for CSV logs and metrics")
        p.add_argument("--seed", type=int, default=None, help="override the scenario seed (u64)")
        p.add_argument("--rate", type=float, default=None, help="override the control rate in Hz")
        p.add_argument("--controller", default=None,
                       choices=["robust_mpc", "penalized_mpc", "soft_mpc", "quasi_static"])
        p.add_argument("--no-timing", action="store_true",
                       help="write nan solve times for byte-reproducible logs")

    run = sub.add_parser("run", help="simulate one scenario")
    run.add_argument("scenario")
    run.add_argument("--tag", default=None, help="output file stem (default: scenario file stem)")
    common(run)
    run.set_defaults(func=cmd_run)

    fb = sub.add_parser("find-box", help="search an obstacle-free joint-space box")
    fb.add_argument("finder_file")
    fb.add_argument("--out", default=None, help="write the box table to this file")
    fb.set_defaults(func=cmd_find_box)

    sw = sub.add_parser("sweep", help="run a scenario over several values of one parameter")
    sw.add_argument("scenario")
    sw.add_argument("--param", required=True, help="dotted key path, e.g. mpc.N or rate")
    sw.add_argument("--values", required=True, help="comma-separated TOML values")
    sw.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    common(sw)
    sw.set_defaults(func=cmd_sweep)

    va = sub.add_parser("validate", help="schema-check a scenario or finder file")
    va.add_argument("file")
    va.set_defaults(func=cmd_validate)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command != "find-box" and getattr(args, "seed", None) is not None:
        if not 0 <= args.seed < 2 ** 64:
            print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
            return EXIT_VALIDATION
    try:
        return args.func(args)
    except ScenarioError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except ScenarioAbort as exc:
        print(f"scenario aborted: {exc}", file=sys.stderr)
        return EXIT_ABORT


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
