"""Command-line entry point ``fctdse``.

Exit status is 0 on success, 1 when an input fails validation and 2 when
the integration produces non-finite values. Diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from fctdse.canonical import decompose, report_to_json, validate
from fctdse.errors import IntegrationError, ValidationError
from fctdse.network import find_walk, validate_walk
from fctdse.sim import load_scenario, resolve_walk, run, write_outputs

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 1, 2


def _emit(doc, out):
    text = json.dumps(doc, indent=2)
    if out:
        Path(out).write_text(text + "\n")
    else:
        print(text)


def cmd_simulate(args) -> int:
    sc = load_scenario(args.scenario)
    trace, summary = run(sc)
    decimate = args.decimate or sc.decimate
    csv_path, json_path = write_outputs(trace, summary, args.out, decimate)
    print(f"wrote {csv_path} and {json_path}")
    v = summary.validation
    if not v["converged"]:
        print("warning: not every agent reached its finite convergence time", file=sys.stderr)
    if not (v["canonical_form"] and v["finite"]):
        print(f"error: run failed validation: {v}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


def cmd_decompose(args) -> int:
    sc = load_scenario(args.scenario)
    order = None
    if sc.walk is not None:
        order = [node - 1 for node in sc.walk.first_appearance()]
    cf = decompose(sc.system, order)
    report = validate(cf, sc.system)
    doc = cf.to_json()
    doc["validation"] = report_to_json(report)
    _emit(doc, args.out)
    return EXIT_OK if all(r.passed for r in report.values()) else EXIT_INVALID


def cmd_check_walk(args) -> int:
    sc = load_scenario(args.scenario)
    closed = sc.objective == "O2"
    if sc.walk is not None:
        check = validate_walk(sc.graph, sc.walk)
        doc = {"walk": list(sc.walk.nodes), "valid": check.valid, "message": check.message}
        if check.valid:
            resolve_walk(sc)  # also enforces closedness for O2
        print(json.dumps(doc))
        return EXIT_OK if check.valid else EXIT_INVALID
    w = find_walk(sc.graph, closed=closed)
    if w is None:
        kind = "closed" if closed else "open"
        print(f"error: no {kind} Hamiltonian walk", file=sys.stderr)
        return EXIT_INVALID
    print(json.dumps({"walk": list(w.nodes), "valid": True, "message": "found"}))
    return EXIT_OK


def _shift(a, b):
    return None if a is None or b is None else a - b


def cmd_compare(args) -> int:
    sc = load_scenario(args.scenario)
    base = json.loads(Path(args.baseline).read_text())
    _, summary = run(sc)
    cur = summary.to_json()
    report = {"agents": {}, "full_state_convergence_shift_s": _shift(
        cur.get("full_state_convergence_s"), base.get("full_state_convergence_s"))}
    for node, t in cur["latch_times_s"].items():
        b_latch = base.get("latch_times_s", {}).get(node)
        b_obs = base.get("observed_convergence_s", {}).get(node)
        b_err = base.get("final_error_norms", {}).get(node)
        err = cur["final_error_norms"][node]
        report["agents"][node] = {
            "latch_s": t,
            "baseline_latch_s": b_latch,
            "latch_shift_s": _shift(t, b_latch),
            "observed_shift_s": _shift(cur["observed_convergence_s"][node], b_obs),
            "final_error": err,
            "baseline_final_error": b_err,
        }
    _emit(report, args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fctdse", description="Distributed finite-time state estimation simulator")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run a scenario and write traces.csv and summary.json")
    s.add_argument("--scenario", required=True)
    s.add_argument("--out", default=".")
    s.add_argument("--decimate", type=int, default=None)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("decompose", help="canonical form and its validation report as JSON")
    s.add_argument("--scenario", required=True)
    s.add_argument("--out", default=None)
    s.set_defaults(func=cmd_decompose)

    s = sub.add_parser("check-walk", help="validate the scenario walk or search for one")
    s.add_argument("--scenario", required=True)
    s.set_defaults(func=cmd_check_walk)

    s = sub.add_parser("compare", help="latch and error differences against a baseline summary.json")
    s.add_argument("--scenario", required=True)
    s.add_argument("--baseline", required=True)
    s.add_argument("--out", default=None)
    s.set_defaults(func=cmd_compare)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr)
    if args.command == "simulate" and args.decimate is not None and args.decimate < 1:
        print("error: --decimate must be >= 1", file=sys.stderr)
        return EXIT_INVALID
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except IntegrationError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
