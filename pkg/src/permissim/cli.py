"""Command line front end.

Verbs:
    run      execute one scenario file and print its verdict
    attack   run a registered attack directly
    chain    run the indistinguishability-chain demonstrator on a protocol
    verify   structural checks over a stored trace file
    sweep    run a scenario once per value of one builder parameter

Exit status is 0 exactly when every check passed (for `chain`, when the
demonstration reached a coherent outcome: a contradiction, a decline, or an
undecided report).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Any, Optional, Sequence

from .adversary import ATTACKS
from .compliance import demonstrate_impossibility
from .harness import (
    load_scenario,
    run_attack,
    run_scenario,
    sweep_scenario,
    verify_trace_file,
)
from .protocols import PROTOCOLS, get_protocol


def _parse_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _parse_sets(pairs: Sequence[str]) -> dict[str, Any]:
    out: dict[str, Any] = {}
    for pair in pairs:
        if "=" not in pair:
            raise SystemExit(f"--set expects key=value, got {pair!r}")
        key, _, raw = pair.partition("=")
        out[key] = _parse_value(raw)
    return out


def _emit(obj: Any, out: Optional[str], pretty: bool) -> None:
    text = json.dumps(obj, sort_keys=True, indent=2 if pretty else None,
                      separators=None if pretty else (",", ":"))
    if out:
        Path(out).write_text(text + "\n")
    else:
        print(text)


def _print_summary(verdict) -> None:
    for name in sorted(verdict.checks):
        c = verdict.checks[name]
        status = "PASS" if c["pass"] else "FAIL"
        if c.get("runs"):
            freq = c.get("frequency")
            ci = c.get("ci95")
            extra = ""
            if freq is not None and ci is not None:
                extra = f"  frequency={freq:.4f}  ci95=[{ci[0]:.4f}, {ci[1]:.4f}]"
            print(f"{status} {name}  ({c.get('held')}/{c.get('runs')}){extra}")
        else:
            print(f"{status} {name}")
    print("VERDICT:", "PASS" if verdict.passed else "FAIL")


def _cmd_run(args) -> int:
    sc = load_scenario(args.scenario)
    verdict = run_scenario(sc, parallel=args.parallel)
    if args.json:
        print(verdict.to_json())
    else:
        _print_summary(verdict)
    if args.out:
        Path(args.out).write_text(verdict.to_json() + "\n")
    return 0 if verdict.passed else 1


def _cmd_attack(args) -> int:
    params = _parse_sets(args.set or [])
    result = run_attack(args.name, seeds=args.seeds, epsilon=args.epsilon, **params)
    _emit(result, args.out, pretty=not args.json)
    return 0 if result.get("pass") else 1


def _cmd_chain(args) -> int:
    params = _parse_sets(args.set or [])
    builder = get_protocol(args.protocol)
    base = builder(**params)
    k = args.k if args.k is not None else base.meta.get("horizon")
    if k is None:
        raise SystemExit("no --k given and the instance does not suggest one")
    watchers = tuple(args.watchers.split(",")) if args.watchers else ("p0", "p1")
    report = demonstrate_impossibility(
        base, k, watchers=watchers, q=args.q, budget=args.budget
    )
    if not args.full:
        # the element walk is bulky; keep the headline fields by default
        report = {k2: v for k2, v in report.items() if k2 != "elements"}
    _emit(report, args.out, pretty=not args.json)
    coherent = (
        report.get("declined") is not None
        or report.get("undecided_by_k") is not None
        or (report.get("compliant") and report.get("contradiction_found"))
    )
    return 0 if coherent else 1


def _cmd_verify(args) -> int:
    verdict = verify_trace_file(args.trace)
    for name in sorted(verdict.checks):
        c = verdict.checks[name]
        status = "PASS" if c["pass"] else "FAIL"
        detail = f"  ({c['detail']})" if c.get("detail") else ""
        print(f"{status} {name}{detail}")
    print("VERDICT:", "PASS" if verdict.passed else "FAIL")
    if args.out:
        Path(args.out).write_text(verdict.to_json() + "\n")
    return 0 if verdict.passed else 1


def _cmd_sweep(args) -> int:
    sc = load_scenario(args.scenario)
    values = [_parse_value(v) for v in args.values.split(",")]
    result = sweep_scenario(sc, args.param, values, parallel=args.parallel)
    for v, verdict in zip(result["values"], result["verdicts"]):
        status = "PASS" if verdict["passed"] else "FAIL"
        print(f"{status} {args.param}={v}")
    print("SWEEP:", "PASS" if result["passed"] else "FAIL")
    if args.out:
        Path(args.out).write_text(
            json.dumps(result, sort_keys=True, separators=(",", ":")) + "\n"
        )
    return 0 if result["passed"] else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="permissim", description=__doc__)
    sub = p.add_subparsers(dest="verb", required=True)

    run = sub.add_parser("run", help="execute one scenario file")
    run.add_argument("scenario", help="path to a scenario JSON file")
    run.add_argument("--parallel", type=int, default=None,
                     help="seed workers (default: PERMISSIM_PARALLEL or 1)")
    run.add_argument("--json", action="store_true", help="print the raw verdict")
    run.add_argument("--out", help="also write the canonical verdict JSON here")
    run.set_defaults(fn=_cmd_run)

    atk = sub.add_parser("attack", help="run a registered attack")
    atk.add_argument("name", choices=sorted(ATTACKS))
    atk.add_argument("--seeds", type=int, default=1000)
    atk.add_argument("--epsilon", type=float, default=0.1)
    atk.add_argument("--set", action="append", metavar="KEY=VALUE",
                     help="attack parameter override (JSON values)")
    atk.add_argument("--json", action="store_true", help="compact output")
    atk.add_argument("--out", help="write the result JSON here")
    atk.set_defaults(fn=_cmd_attack)

    ch = sub.add_parser("chain", help="run the indistinguishability-chain demonstrator")
    ch.add_argument("protocol", choices=sorted(PROTOCOLS))
    ch.add_argument("--k", type=int, default=None, help="chain window (default: instance horizon)")
    ch.add_argument("--watchers", default=None, help="comma-separated watcher pids")
    ch.add_argument("--q", type=float, default=0.5)
    ch.add_argument("--budget", type=int, default=20000)
    ch.add_argument("--set", action="append", metavar="KEY=VALUE",
                    help="builder parameter override (JSON values)")
    ch.add_argument("--full", action="store_true", help="include the element walk")
    ch.add_argument("--json", action="store_true", help="compact output")
    ch.add_argument("--out", help="write the report JSON here")
    ch.set_defaults(fn=_cmd_chain)

    ver = sub.add_parser("verify", help="structural checks over a stored trace")
    ver.add_argument("trace", help="trace .jsonl file")
    ver.add_argument("--out", help="write the verdict JSON here")
    ver.set_defaults(fn=_cmd_verify)

    sw = sub.add_parser("sweep", help="run a scenario across parameter values")
    sw.add_argument("scenario", help="path to a scenario JSON file")
    sw.add_argument("--param", required=True, help="builder parameter to vary")
    sw.add_argument("--values", required=True, help="comma-separated values (JSON each)")
    sw.add_argument("--parallel", type=int, default=None)
    sw.add_argument("--out", help="write the sweep JSON here")
    sw.set_defaults(fn=_cmd_sweep)

    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    raise SystemExit(main())
