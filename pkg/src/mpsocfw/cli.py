from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Optional, Sequence

from . import __version__
from .bus import TopologyError, read_topology_file
from .firewall_crypto import max_protectable, parse_capacity
from .harness import AppTrace, AttackScript, estimate_area, inject
from .kernel import Simulator
from .policy import PolicyError, policy_from_dict
from .report import RunReport, dumps
from .scenarios import SCENARIOS, RunOptions, run_scenario

EXIT_OK, EXIT_ERROR, EXIT_DETECTED = 0, 1, 2


class ConfigError(Exception):
    pass


def _bool(text: str) -> bool:
    v = text.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _read_json(path: str) -> Any:
    p = Path(path)
    try:
        return json.loads(p.read_text())
    except FileNotFoundError:
        raise ConfigError(f"{p}: no such file") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}:{exc.lineno}:{exc.colno}: {exc.msg}") from None


def _apply_policies(topo, path: str):
    doc = _read_json(path)
    if isinstance(doc, dict) and "firewalls" in doc:
        doc = doc["firewalls"]
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: expected an object mapping firewall names to policy lists")
    for name, pols in doc.items():
        try:
            spec = topo.firewall(name)
        except KeyError:
            raise ConfigError(f"{path}: topology has no firewall {name!r}") from None
        try:
            spec.policies = [policy_from_dict(p) for p in pols]
        except PolicyError as exc:
            raise ConfigError(f"{path}: firewall {name}: {exc}") from None
    return topo.validate()


def _attack_from_dict(d: dict) -> AttackScript:
    params = dict(d.get("params", {}))
    for k in ("address", "replay_from"):
        if isinstance(params.get(k), str):
            params[k] = int(params[k], 0)
    for k in ("data", "overwrite"):
        if isinstance(params.get(k), str):
            params[k] = bytes.fromhex(params[k])
    if "items" in params:
        from .kernel import TraceItem

        params["items"] = [TraceItem.from_dict(x) for x in params["items"]]
    if "payload" in params:
        params["payload"] = [w if isinstance(w, int) else int(w, 0) for w in params["payload"]]
    return AttackScript(d["kind"], int(d.get("cycle", 0)), params)


def run_custom(args: argparse.Namespace) -> tuple[RunReport, dict[str, list[str]]]:
    if not args.topology:
        raise ConfigError("--trace needs --topology")
    try:
        topo = read_topology_file(args.topology)
    except (TopologyError, PolicyError) as exc:
        raise ConfigError(str(exc)) from None
    changes = {}
    if args.strict_4n is not None:
        changes["strict_4n"] = args.strict_4n
    if args.software_latency is not None:
        changes["software_latency"] = args.software_latency
    if args.mode is not None:
        changes["mode"] = args.mode
    if changes:
        topo = topo.with_constants(**changes)
    if args.policies:
        topo = _apply_policies(topo, args.policies)
    trace, attacks = AppTrace("empty"), []
    if args.trace:
        doc = _read_json(args.trace)
        try:
            trace = AppTrace.from_dict(doc)
            attacks = [_attack_from_dict(a) for a in (doc.get("attacks", []) if isinstance(doc, dict) else [])]
        except (KeyError, ValueError, TypeError) as exc:
            raise ConfigError(f"{args.trace}: {exc}") from None
    try:
        sim = Simulator(topo, trace.items)
    except (KeyError, PolicyError, TopologyError) as exc:
        raise ConfigError(f"{args.topology}: {exc}") from None
    for a in attacks:
        inject(a, sim)
    sim.run(args.max_cycles)
    rep = RunReport(trace.name, expect_detection=True)
    rep.add_run("main", sim)
    return rep, {"main": sim.event_log()}


def _options(args: argparse.Namespace) -> RunOptions:
    kw: dict[str, Any] = {"scale": args.scale, "hit_rate": args.hit_rate}
    if args.strict_4n is not None:
        kw["strict_4n"] = args.strict_4n
    if args.software_latency is not None:
        kw["software_latency"] = args.software_latency
    if args.mode is not None:
        kw["mode"] = args.mode
    return RunOptions(**kw)


def _one(name: str, opts: RunOptions) -> tuple[RunReport, dict[str, list[str]], float]:
    t0 = time.perf_counter()
    rep, logs = run_scenario(name, opts)
    return rep, logs, time.perf_counter() - t0


def _write_outputs(args, reports: list[RunReport], logs: list[dict[str, list[str]]]) -> None:
    body: Any
    if len(reports) == 1:
        body = reports[0].as_dict(args.canonical)
    else:
        body = {"scenarios": [r.as_dict(args.canonical) for r in reports]}
    text = dumps(body) + "\n"
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text)
        ev = out.with_name(out.stem + ".events.jsonl")
        with ev.open("w") as fh:
            for rep, lg in zip(reports, logs):
                for label, lines in lg.items():
                    for line in lines:
                        fh.write(f'{{"scenario":{json.dumps(rep.scenario)},"run":{json.dumps(label)},"event":{line}}}\n')
    else:
        sys.stdout.write(text)
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["scenario", "run", "seq", "master", "kind", "status", "latency", "total",
                        "interface", "table_lookup", "policy_read", "check", "crypto", "manager",
                        "update_stall", "bus"])
            for rep in reports:
                for label, run in rep.runs.items():
                    for t in run.get("transactions", []):
                        lg = t["ledger"]
                        w.writerow([rep.scenario, label, t["seq"], t["master"], t["kind"], t["status"],
                                    t["latency"], lg["total"], lg["interface"], lg["table_lookup"],
                                    lg["policy_read"], lg["check"], lg["crypto"], lg["manager"],
                                    lg["update_stall"], t["bus_cycles"]])


def cmd_run(args: argparse.Namespace) -> int:
    reports: list[RunReport] = []
    logs: list[dict[str, list[str]]] = []
    if args.scenario:
        names = list(dict.fromkeys(n for s in args.scenario for n in (SCENARIOS if s == "all" else [s])))
        for n in names:
            if n not in SCENARIOS:
                raise ConfigError(f"unknown scenario {n!r}; choose from: all, {', '.join(SCENARIOS)}")
        opts = _options(args)
        if args.jobs > 1 and len(names) > 1:
            with ProcessPoolExecutor(max_workers=args.jobs) as pool:
                results = list(pool.map(_one, names, [opts] * len(names)))
        else:
            results = [_one(n, opts) for n in names]
        for rep, lg, wall in results:
            rep.meta = {"wall_seconds": round(wall, 6), "version": __version__}
            reports.append(rep)
            logs.append(lg)
    elif args.topology or args.trace:
        t0 = time.perf_counter()
        rep, lg = run_custom(args)
        rep.meta = {"wall_seconds": round(time.perf_counter() - t0, 6), "version": __version__}
        reports.append(rep)
        logs.append(lg)
    else:
        raise ConfigError("run needs --scenario or --topology")
    _write_outputs(args, reports, logs)
    for rep in reports:
        if not rep.passed:
            failed = [k for k, v in rep.checks.items() if not v]
            print(f"{rep.scenario}: FAILED {', '.join(failed)}", file=sys.stderr)
    codes = [r.exit_code for r in reports]
    if EXIT_ERROR in codes:
        return EXIT_ERROR
    return EXIT_DETECTED if EXIT_DETECTED in codes else EXIT_OK


def cmd_area(args: argparse.Namespace) -> int:
    slices, regs, luts = estimate_area(args.x, args.y)
    print(f"{'local':>6} {'crypto':>6} {'slices':>8} {'regs':>8} {'luts':>8}")
    print(f"{args.x:>6} {args.y:>6} {slices:>8} {regs:>8} {luts:>8}")
    print(json.dumps({"local": args.x, "crypto": args.y, "slices": slices, "regs": regs, "luts": luts},
                     sort_keys=True))
    return EXIT_OK


def cmd_tagbudget(args: argparse.Namespace) -> int:
    try:
        bits = parse_capacity(args.capacity)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    data = max_protectable(bits)
    mb = data / 1e6
    print(f"{'capacity_bits':>14} {'tag_bytes':>12} {'protectable':>12} {'MB':>8}")
    print(f"{bits:>14} {bits // 8:>12} {data:>12} {mb:>8.3f}")
    print(json.dumps({"capacity_bits": bits, "protectable_bytes": data, "protectable_mb": round(mb, 6)},
                     sort_keys=True))
    return EXIT_OK


def cmd_scenarios(args: argparse.Namespace) -> int:
    for name in SCENARIOS:
        print(name)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mpsocfw", description="Distributed MPSoC firewall simulator.")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run built-in scenarios or a topology + trace")
    run.add_argument("--scenario", action="append", help="scenario name (repeatable, or 'all')")
    run.add_argument("--topology", help="topology JSON")
    run.add_argument("--policies", help="JSON mapping firewall names to policy lists")
    run.add_argument("--trace", help="trace JSON (items and optional attacks)")
    run.add_argument("--scale", type=float, default=1e-4, help="fraction of the reference access counts")
    run.add_argument("--hit-rate", type=float, default=0.0, help="cache hit rate for application traces")
    run.add_argument("--strict-4n", type=_bool, default=None, metavar="BOOL")
    run.add_argument("--software-latency", type=int, default=None)
    run.add_argument("--mode", choices=["distributed", "centralized"], default=None)
    run.add_argument("--max-cycles", type=int, default=None)
    run.add_argument("--out", help="report JSON path; events go to <stem>.events.jsonl beside it")
    run.add_argument("--csv", help="per-transaction latency table")
    run.add_argument("--canonical", action="store_true", help="omit wall-clock metadata")
    run.add_argument("--jobs", type=int, default=1)
    run.set_defaults(func=cmd_run)

    area = sub.add_parser("area", help="area estimate for x Local and y Cryptographic Firewalls")
    area.add_argument("x", type=int)
    area.add_argument("y", type=int)
    area.set_defaults(func=cmd_area)

    tb = sub.add_parser("tagbudget", help="data protectable with a given trusted-memory capacity")
    tb.add_argument("capacity", help="e.g. 14976Kbit")
    tb.set_defaults(func=cmd_tagbudget)

    ls = sub.add_parser("scenarios", help="list built-in scenarios")
    ls.set_defaults(func=cmd_scenarios)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "x", 0) < 0 or getattr(args, "y", 0) < 0:
        print("error: counts must be non-negative", file=sys.stderr)
        return EXIT_ERROR
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except Exception as exc:  # noqa: BLE001 - report internal failures through the exit code
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
