"""Command-line driver for the compiler pipeline and the simulator.

Subcommands: compile, deps, xfdd, map, place, reroute, export-lp,
simulate, check.  Exit codes: 0 success, 1 compile errors (parse, race,
unsupported composition), 2 infeasible placement/routing, 3 I/O errors.
The environment variable SNAPNET_SEED overrides --seed.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

from . import deps, interp, lang, opt, psm, rulegen, simnet, topo, xfdd
from .errors import CompileError, InfeasibleError

PHASES = [
    ("P1", "state dependency"),
    ("P2", "xFDD generation"),
    ("P3", "packet-state mapping"),
    ("P4", "MILP creation"),
    ("P5", "MILP solving"),
    ("P6", "rule generation"),
]


def _load_program(paths: list) -> lang.Program:
    progs = []
    for p in paths:
        with open(p) as f:
            progs.append(lang.parse(f.read()))
    return lang.compose_all(progs)


def _seed(args) -> int:
    env = os.environ.get("SNAPNET_SEED")
    if env is not None:
        return int(env)
    return getattr(args, "seed", 0) or 0


def _print_phases(times: dict) -> None:
    for key, label in PHASES:
        if key in times:
            print(f"{key} {label}: {times[key]:.3f}s", file=sys.stderr)


def _fixed_placement(args) -> dict | None:
    if getattr(args, "placement", None) is None:
        return None
    with open(args.placement) as f:
        data = json.load(f)
    return opt.placement_from_json(data.get("placement", data))


# ---------------------------------------------------------------- commands

def cmd_compile(args) -> int:
    prog = _load_program(args.policy)
    t = topo.load(args.topology)
    times: dict = {}
    bundle = rulegen.compile(prog, t, mode=args.mode,
                             fixed=_fixed_placement(args),
                             budget=args.budget, phase_times=times)
    _print_phases(times)
    rulegen.write_bundle(bundle, args.output)
    print(json.dumps({"placement": opt.placement_to_json(bundle.placement),
                      "objective": bundle.objective,
                      "exact": bundle.exact, "output": args.output},
                     sort_keys=True))
    return 0


def cmd_deps(args) -> int:
    prog = _load_program(args.policy)
    g = deps.st_dep_program(prog)
    order = deps.order_spec(g, schema=prog)
    print(json.dumps({
        "groups": order.groups,
        "dep": sorted(list(p) for p in order.dep),
        "tied": sorted(sorted(p) for p in order.tied),
        "rank": order.state_rank,
    }, sort_keys=True))
    if args.dot:
        with open(args.dot, "w") as f:
            f.write(deps.to_dot(g))
    return 0


def cmd_xfdd(args) -> int:
    prog = _load_program(args.policy)
    order = deps.order_spec_program(prog)
    b = xfdd.Builder(prog, order)
    d = b.prune_vacuous(b.to_xfdd_program())
    nodes, root = rulegen.number_nodes(b.arena, d)
    dot = rulegen.bundle_dot(nodes, root)
    if args.output:
        with open(args.output, "w") as f:
            f.write(dot)
    else:
        print(dot, end="")
    return 0


def _demand(prog, t):
    order = deps.order_spec_program(prog)
    b = xfdd.Builder(prog, order)
    d = b.prune_vacuous(b.to_xfdd_program())
    return order, psm.packet_state_map(b, d, t, order)


def cmd_map(args) -> int:
    prog = _load_program(args.policy)
    t = topo.load(args.topology)
    _, demand = _demand(prog, t)
    print(json.dumps({"flows": demand.to_json_lines()}, sort_keys=True))
    return 0


def cmd_place(args) -> int:
    prog = _load_program(args.policy)
    t = topo.load(args.topology)
    order, demand = _demand(prog, t)
    m = opt.build_milp(t, demand, order)
    sol = opt.solve_builtin(m, budget=args.budget)
    print(json.dumps({"placement": opt.placement_to_json(sol.placement),
                      "routing": opt.routing_to_json(sol.routing),
                      "objective": sol.objective, "exact": sol.exact},
                     sort_keys=True))
    return 0


def cmd_reroute(args) -> int:
    """Routing-only re-optimization with the placement held fixed (e.g.
    after a topology or demand change)."""
    prog = _load_program(args.policy)
    t = topo.load(args.topology)
    order, demand = _demand(prog, t)
    fixed = _fixed_placement(args)
    if fixed is None:
        print("reroute requires --placement", file=sys.stderr)
        return 3
    m = opt.build_milp(t, demand, order, mode="TE", fixed=fixed)
    sol = opt.solve_builtin(m, budget=args.budget)
    print(json.dumps({"placement": opt.placement_to_json(sol.placement),
                      "routing": opt.routing_to_json(sol.routing),
                      "objective": sol.objective, "exact": sol.exact},
                     sort_keys=True))
    return 0


def cmd_export_lp(args) -> int:
    prog = _load_program(args.policy)
    t = topo.load(args.topology)
    order, demand = _demand(prog, t)
    m = opt.build_milp(t, demand, order, mode=args.mode,
                       fixed=_fixed_placement(args))
    text = opt.export_lp(m)
    if args.output:
        with open(args.output, "w") as f:
            f.write(text)
    else:
        print(text, end="")
    return 0


def cmd_simulate(args) -> int:
    t = topo.load(args.topology)
    net = simnet.load(args.bundle, t, seed=_seed(args))
    injections = simnet.read_trace(args.trace)
    emitted = []
    for port, pkt in injections:
        emitted.extend(net.inject(port, pkt, mode=args.mode))
    if args.mode == "interleaved":
        net.run()
        emitted = net.emissions
    from .values import value_to_json
    for port, pkt in emitted:
        print(json.dumps({"port": port,
                          "packet": {f: value_to_json(v)
                                     for f, v in pkt.items()}},
                         sort_keys=True))
    if args.events:
        with open(args.events, "w") as f:
            for row in simnet.trace_to_json(net.trace):
                f.write(json.dumps(row, sort_keys=True) + "\n")
    return 0


def cmd_check(args) -> int:
    t = topo.load(args.topology)
    bundle = rulegen.load_bundle(args.bundle)
    problems = [str(p) for p in rulegen.validate_bundle(bundle, t)]
    if args.policy:
        prog = _load_program(args.policy)
        order, demand = _demand(prog, t)
        m = opt.build_milp(t, demand, order)
        for v in opt.check_solution(m, bundle.placement,
                                    bundle.routing):
            problems.append(f"{v.constraint}: {v.lhs} {v.sense} {v.rhs}")
    print(json.dumps({"ok": not problems, "problems": problems},
                     sort_keys=True))
    return 0 if not problems else 2


# ---------------------------------------------------------------- main

def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="snapnet",
        description="Compile stateful one-big-switch policies to "
                    "distributed switch configurations and simulate them.")
    sub = ap.add_subparsers(dest="cmd", required=True)

    def policy_opt(p, required=True):
        p.add_argument("-p", "--policy", action="append", required=required,
                       default=None, help="policy file (repeatable; "
                       "multiple files are composed in sequence)")

    def topo_opt(p):
        p.add_argument("-t", "--topology", required=True,
                       help="topology JSON file")

    p = sub.add_parser("compile", help="run the full pipeline to a bundle")
    policy_opt(p)
    topo_opt(p)
    p.add_argument("-o", "--output", required=True, help="bundle directory")
    p.add_argument("--mode", choices=["ST", "TE"], default="ST")
    p.add_argument("--placement", help="fixed placement JSON (TE mode)")
    p.add_argument("--budget", type=int, default=4096)

    p = sub.add_parser("deps", help="state dependency analysis")
    policy_opt(p)
    p.add_argument("--dot", help="write the dependency graph as dot")

    p = sub.add_parser("xfdd", help="emit the program diagram as dot")
    policy_opt(p)
    p.add_argument("-o", "--output")

    p = sub.add_parser("map", help="packet-state mapping per flow")
    policy_opt(p)
    topo_opt(p)

    p = sub.add_parser("place", help="joint placement and routing")
    policy_opt(p)
    topo_opt(p)
    p.add_argument("--budget", type=int, default=4096)

    p = sub.add_parser("reroute", help="re-route with placement fixed")
    policy_opt(p)
    topo_opt(p)
    p.add_argument("--placement", required=True)
    p.add_argument("--budget", type=int, default=4096)

    p = sub.add_parser("export-lp", help="write the optimization as LP text")
    policy_opt(p)
    topo_opt(p)
    p.add_argument("-o", "--output")
    p.add_argument("--mode", choices=["ST", "TE"], default="ST")
    p.add_argument("--placement", help="fixed placement JSON (TE mode)")

    p = sub.add_parser("simulate", help="run a trace through a bundle")
    p.add_argument("--bundle", required=True)
    p.add_argument("--topo", dest="topology", required=True)
    p.add_argument("--trace", required=True,
                   help="JSON-lines file of {port, packet} injections")
    p.add_argument("--mode", choices=["serialized", "interleaved"],
                   default="serialized")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--events", help="write the event trace as JSON lines")

    p = sub.add_parser("check", help="validate a bundle against a topology")
    p.add_argument("--bundle", required=True)
    p.add_argument("--topo", dest="topology", required=True)
    policy_opt(p, required=False)

    return ap


COMMANDS = {
    "compile": cmd_compile,
    "deps": cmd_deps,
    "xfdd": cmd_xfdd,
    "map": cmd_map,
    "place": cmd_place,
    "reroute": cmd_reroute,
    "export-lp": cmd_export_lp,
    "simulate": cmd_simulate,
    "check": cmd_check,
}


def main(argv: list | None = None) -> int:
    args = _parser().parse_args(argv)
    try:
        return COMMANDS[args.cmd](args)
    except InfeasibleError as e:
        print(f"infeasible: {e}", file=sys.stderr)
        return 2
    except CompileError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (OSError, json.JSONDecodeError) as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
