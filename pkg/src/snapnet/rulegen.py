"""Distributed data-plane generation.

Splits the compiled program diagram into per-switch fragments, defines the
in-network header protocol that lets a packet's processing resume on the
next switch, and emits per-switch routing tables, including proportional
selection among candidate designated paths for packets whose egress is not
yet known.

Execution protocol (shared with the simulator):
  * The packet body in flight is the ENTRY packet: branch tests and the
    canonical leaf state operations are all expressed relative to it, so
    field modifications are deferred until the packet's effect is final.
  * A switch executes diagram nodes from its fragment until it reaches a
    node it does not hold (a state test on a foreign variable); it then
    tags the packet with that resume point and forwards it toward the
    variable's owner.
  * Reaching a leaf forks one copy per action sequence.  Copies whose
    final output packet would duplicate another copy's are marked
    non-emitting; they only carry state updates.
  * A copy executes its action sequence's state operations at their
    owners; operations on locally-owned variables encountered en route are
    applied opportunistically (they address distinct variables, so the
    per-packet result is order-independent).  Once none remain, the field
    modifications are applied, the egress port is final, and the packet is
    routed to it and emitted with the header stripped.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field

from . import deps, lang, opt, psm, xfdd
from .values import value_from_json, value_to_json

UNRESOLVED = "unresolved"
DONE = "done"


@dataclass(frozen=True)
class SnapHeader:
    """Virtual metadata record present on every inter-switch hop and
    stripped at egress.  `resume_node` is ("node", id) while the packet is
    mid-diagram, ("leaf", id, elem) while one action sequence is running,
    or DONE once the packet effect is final.  `action_offset` is the
    lowest-numbered atom still to run; `done_atoms` holds atoms already
    run out of order at owners passed en route; `emitter` is False for
    forked copies that only carry state updates."""
    obs_inport: int
    obs_outport: object = UNRESOLVED
    resume_node: object = ("node", 0)
    action_offset: int = 0
    done_atoms: frozenset = frozenset()
    emitter: bool = True


@dataclass
class SwitchConfig:
    switch: str
    owns: tuple                  # state variables stored here
    state_tables: dict           # var -> (arity, default)
    fragment: tuple              # node ids this switch can evaluate
    nodes: dict                  # nid -> node (only fragment members)
    resolved: dict               # (u, v) -> ("fwd", next) | ("emit", v)
    unresolved: dict             # (u, resume key) -> ((w, tag, next), ...)


@dataclass
class DeploymentBundle:
    mode: str
    placement: dict              # state var -> switch id
    routing: dict                # (u, v) -> [(weight, path)]
    nodes: dict                  # nid -> node, the whole program diagram
    root: int
    configs: dict                # switch id -> SwitchConfig
    objective: float = 0.0
    exact: bool = False
    program: lang.Program | None = None


# ---------------------------------------------------------------- numbering

def number_nodes(arena: xfdd.Arena, root: int) -> tuple:
    """Stable global ids: pre-order traversal, high branch first.  Returns
    (nodes, root_id) with nodes: nid -> ("branch", test, hi, lo) or
    ("leaf", (elem, ...)) with elements in canonical order."""
    nid_of: dict = {}
    order: list = []

    def visit(i: int):
        if i in nid_of:
            return
        nid_of[i] = len(order)
        order.append(i)
        if not arena.is_leaf(i):
            visit(arena.hi(i))
            visit(arena.lo(i))

    visit(root)
    nodes: dict = {}
    for i in order:
        nid = nid_of[i]
        if arena.is_leaf(i):
            elems = tuple(sorted(arena.elems(i), key=xfdd.elem_key))
            nodes[nid] = ("leaf", elems)
        else:
            nodes[nid] = ("branch", arena.test_of(i),
                          nid_of[arena.hi(i)], nid_of[arena.lo(i)])
    return nodes, nid_of[root]


def is_state_atom(a) -> bool:
    return isinstance(a, (lang.StateSet, lang.Incr, lang.Decr))


def state_resume_points(nodes: dict) -> dict:
    """Every resume key at which a packet can be blocked on a state
    variable, mapped to that variable.  Keys: ("node", nid) for state-test
    branches; ("leaf", nid, elem, offset) for leaf state operations."""
    out: dict = {}
    for nid in sorted(nodes):
        node = nodes[nid]
        if node[0] == "branch":
            if isinstance(node[1], xfdd.TStateTest):
                out[("node", nid)] = node[1].var
        else:
            for ei, elem in enumerate(node[1]):
                for k, a in enumerate(elem):
                    if is_state_atom(a):
                        out[("leaf", nid, ei, k)] = a.var
    return out


# ---------------------------------------------------------------- splitting

def split_xfdd(nodes: dict, root: int, placement: dict, topo) -> dict:
    """Per-switch fragments (sets of node ids).  Ingress switches hold the
    stateless prefix from the root; the owner of a variable holds every
    maximal subdiagram rooted at one of its state nodes, continuing through
    stateless nodes until the next foreign state node; a leaf belongs to
    every switch owning one of its state atoms (its action sequences are
    split at foreign-state-atom boundaries at run time)."""
    frags: dict = {sid: set() for sid in topo.nodes}

    def expand(sid: str, nid: int):
        frag = frags[sid]
        if nid in frag:
            return
        node = nodes[nid]
        if (node[0] == "branch" and isinstance(node[1], xfdd.TStateTest)
                and placement.get(node[1].var) != sid):
            return                      # foreign boundary: resume point
        frag.add(nid)
        if node[0] == "branch":
            expand(sid, node[2])
            expand(sid, node[3])

    for sid in sorted(topo.nodes):
        if topo.nodes[sid].external_ports:
            expand(sid, root)
        for nid in sorted(nodes):
            node = nodes[nid]
            if (node[0] == "branch" and isinstance(node[1], xfdd.TStateTest)
                    and placement.get(node[1].var) == sid):
                expand(sid, nid)
            elif node[0] == "leaf":
                if any(is_state_atom(a) and placement.get(a.var) == sid
                       for elem in node[1] for a in elem):
                    frags[sid].add(nid)
    return frags


# ---------------------------------------------------------------- routing

def _exec_positions(path, svars, placement: dict, dep) -> dict:
    """Position along the walk where each needed variable executes: the
    first visit to its owner at which every prerequisite has already run."""
    preds = {s: frozenset(a for (a, b) in dep if b == s and a in svars)
             for s in svars}
    done: dict = {}
    for i, n in enumerate(path):
        changed = True
        while changed:
            changed = False
            for s in svars:
                if s in done or placement.get(s) != n:
                    continue
                if all(p in done for p in preds[s]):
                    done[s] = i
                    changed = True
    return done


def gen_routing(rt: dict, placement: dict, demand, topo,
                nodes: dict, dep=frozenset()) -> tuple:
    """Per-switch routing tables.

    Resolved rules, keyed (obs_inport, obs_outport): next hop along the
    flow's designated path, with an emit action at the egress switch.

    Unresolved rules, keyed (obs_inport, resume point): a weighted group
    over the candidate designated paths of flows (u, v_i) that need the
    blocking variable and pass this switch before the variable's owner,
    with weights proportional to the flows' demand volumes; the selection
    also tags the packet with the chosen path identifier (u, v_i)."""
    paths = opt.rt_paths(rt)
    resolved: dict = {sid: {} for sid in topo.nodes}
    unresolved: dict = {sid: {} for sid in topo.nodes}

    for (u, v), path in sorted(paths.items()):
        assert path, f"flow ({u},{v}) has no designated path"
        assert path[-1] == topo.node_of_port(v), \
            f"flow ({u},{v}) path does not end at the egress switch"
        for a, b in zip(path, path[1:]):
            resolved[a][(u, v)] = ("fwd", b)
        resolved[path[-1]][(u, v)] = ("emit", v)

    points = state_resume_points(nodes)
    for key in sorted(points):
        s = points[key]
        owner = placement.get(s)
        if owner is None:
            continue
        for (u, v), path in sorted(paths.items()):
            svars = demand.states_for(u, v)
            if s not in svars:
                continue
            stop = _exec_positions(path, frozenset(svars),
                                   placement, dep).get(s)
            if stop is None:
                continue
            w = topo.demands.get((u, v), 0.0)
            # a walk may pass a switch more than once before the owner; a
            # packet still blocked on s there is on its latest visit, so
            # keep the hop of the last occurrence
            last_at: dict = {}
            for ai in range(stop):
                last_at[path[ai]] = ai
            for a, ai in sorted(last_at.items()):
                entry = (w, v, path[ai + 1])
                rows = unresolved[a].setdefault((u, key), [])
                if entry not in rows:
                    rows.append(entry)
    for sid in unresolved:
        unresolved[sid] = {k: tuple(sorted(rows, key=lambda e: (e[1], e[2])))
                           for k, rows in unresolved[sid].items()}
    return resolved, unresolved


# ---------------------------------------------------------------- pipeline

def compile(prog: lang.Program, topo, mode: str = "ST",
            fixed: dict | None = None, budget: int = 4096,
            time_limit: float | None = None,
            phase_times: dict | None = None) -> DeploymentBundle:
    """End-to-end pipeline: dependency order, diagram construction, flow
    demand mapping, placement/routing optimization, rule generation.
    `fixed` forces a placement (traffic-engineering reruns and controlled
    experiments); recompiling identical inputs yields an identical bundle."""
    times = phase_times if phase_times is not None else {}

    t0 = time.monotonic()
    order = deps.order_spec_program(prog)
    times["P1"] = time.monotonic() - t0

    t0 = time.monotonic()
    b = xfdd.Builder(prog, order)
    d = b.to_xfdd_program()
    d = b.prune_vacuous(d)
    times["P2"] = time.monotonic() - t0

    t0 = time.monotonic()
    demand = psm.packet_state_map(b, d, topo, order)
    times["P3"] = time.monotonic() - t0

    t0 = time.monotonic()
    if fixed is not None:
        mode = "TE"
    m = opt.build_milp(topo, demand, order, mode=mode, fixed=fixed)
    times["P4"] = time.monotonic() - t0

    t0 = time.monotonic()
    sol = opt.solve_builtin(m, budget=budget, time_limit=time_limit)
    times["P5"] = time.monotonic() - t0

    t0 = time.monotonic()
    nodes, root = number_nodes(b.arena, d)
    frags = split_xfdd(nodes, root, sol.placement, topo)
    resolved, unresolved = gen_routing(sol.routing, sol.placement,
                                       demand, topo, nodes, dep=m.dep)
    configs = {}
    for sid in sorted(topo.nodes):
        owns = tuple(sorted(s for s, n in sol.placement.items() if n == sid))
        tables = {s: (prog.states[s].arity, prog.states[s].default)
                  for s in owns}
        configs[sid] = SwitchConfig(
            switch=sid, owns=owns, state_tables=tables,
            fragment=tuple(sorted(frags[sid])),
            nodes={nid: nodes[nid] for nid in sorted(frags[sid])},
            resolved=resolved[sid], unresolved=unresolved[sid])
    times["P6"] = time.monotonic() - t0

    return DeploymentBundle(mode=mode, placement=dict(sol.placement),
                            routing=sol.routing, nodes=nodes, root=root,
                            configs=configs, objective=sol.objective,
                            exact=sol.exact, program=prog)


# ---------------------------------------------------------------- dot

def bundle_dot(nodes: dict, root: int) -> str:
    lines = ["digraph xfdd {", "  node [shape=box];"]

    def fmt_atom(x) -> str:
        if x is xfdd.DROP:
            return "drop"
        return lang.pretty_policy(x)

    for nid in sorted(nodes):
        node = nodes[nid]
        if node[0] == "leaf":
            label = "{" + "; ".join(
                ", ".join(fmt_atom(a) for a in elem) or "id"
                for elem in node[1]) + "}"
            lines.append(f'  n{nid} [shape=ellipse, label="{label}"];')
        else:
            lines.append(
                f'  n{nid} [label="{xfdd.format_test(node[1])}"];')
    for nid in sorted(nodes):
        node = nodes[nid]
        if node[0] == "branch":
            lines.append(f"  n{nid} -> n{node[2]} [style=solid];")
            lines.append(f"  n{nid} -> n{node[3]} [style=dashed];")
    lines.append("}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- bundle IO

def _node_to_json(nid: int, node) -> dict:
    if node[0] == "leaf":
        return {"id": nid, "kind": "leaf",
                "elems": [[xfdd.atom_to_json(a) for a in elem]
                          for elem in node[1]]}
    return {"id": nid, "kind": "branch", "test": xfdd.test_to_json(node[1]),
            "hi": node[2], "lo": node[3]}


def _node_from_json(d: dict):
    if d["kind"] == "leaf":
        return (d["id"], ("leaf", tuple(
            tuple(xfdd.atom_from_json(a) for a in elem)
            for elem in d["elems"])))
    return (d["id"], ("branch", xfdd.test_from_json(d["test"]),
                      d["hi"], d["lo"]))


def _resume_to_json(key) -> dict:
    if key[0] == "node":
        return {"kind": "node", "id": key[1]}
    return {"kind": "leaf", "id": key[1], "elem": key[2], "offset": key[3]}


def _resume_from_json(d: dict):
    if d["kind"] == "node":
        return ("node", d["id"])
    return ("leaf", d["id"], d["elem"], d["offset"])


def _config_to_json(c: SwitchConfig) -> dict:
    return {
        "id": c.switch,
        "owns": list(c.owns),
        "state_tables": {s: {"arity": a, "default": value_to_json(dv)}
                         for s, (a, dv) in sorted(c.state_tables.items())},
        "fragment": list(c.fragment),
        "nodes": [_node_to_json(nid, c.nodes[nid])
                  for nid in sorted(c.nodes)],
        "rules": {
            "resolved": [{"inport": u, "outport": v,
                          "action": act[0], "arg": act[1]}
                         for (u, v), act in sorted(c.resolved.items())],
            "unresolved": [{"inport": u, "resume": _resume_to_json(key),
                            "group": [{"weight": w, "tag": v, "next": nh}
                                      for w, v, nh in rows]}
                           for (u, key), rows in sorted(c.unresolved.items())],
        },
    }


def _config_from_json(d: dict) -> SwitchConfig:
    nodes = dict(_node_from_json(n) for n in d["nodes"])
    resolved = {(r["inport"], r["outport"]): (r["action"], r["arg"])
                for r in d["rules"]["resolved"]}
    unresolved = {(r["inport"], _resume_from_json(r["resume"])):
                  tuple((g["weight"], g["tag"], g["next"])
                        for g in r["group"])
                  for r in d["rules"]["unresolved"]}
    return SwitchConfig(
        switch=d["id"], owns=tuple(d["owns"]),
        state_tables={s: (t["arity"], value_from_json(t["default"]))
                      for s, t in d["state_tables"].items()},
        fragment=tuple(d["fragment"]), nodes=nodes,
        resolved=resolved, unresolved=unresolved)


def _dump(path: str, obj) -> None:
    with open(path, "w") as f:
        json.dump(obj, f, sort_keys=True, indent=2)
        f.write("\n")


def write_bundle(bundle: DeploymentBundle, dirpath: str) -> None:
    os.makedirs(os.path.join(dirpath, "switch"), exist_ok=True)
    _dump(os.path.join(dirpath, "placement.json"),
          {"mode": bundle.mode, "objective": bundle.objective,
           "exact": bundle.exact,
           "placement": opt.placement_to_json(bundle.placement)})
    _dump(os.path.join(dirpath, "routing.json"),
          {"root": bundle.root,
           "flows": opt.routing_to_json(bundle.routing)})
    for sid in sorted(bundle.configs):
        _dump(os.path.join(dirpath, "switch", f"{sid}.json"),
              _config_to_json(bundle.configs[sid]))
    with open(os.path.join(dirpath, "xfdd.dot"), "w") as f:
        f.write(bundle_dot(bundle.nodes, bundle.root))


def load_bundle(dirpath: str) -> DeploymentBundle:
    with open(os.path.join(dirpath, "placement.json")) as f:
        pl = json.load(f)
    with open(os.path.join(dirpath, "routing.json")) as f:
        rj = json.load(f)
    configs = {}
    swdir = os.path.join(dirpath, "switch")
    for name in sorted(os.listdir(swdir)):
        if not name.endswith(".json"):
            continue
        with open(os.path.join(swdir, name)) as f:
            c = _config_from_json(json.load(f))
        configs[c.switch] = c
    nodes: dict = {}
    for c in configs.values():
        nodes.update(c.nodes)
    return DeploymentBundle(
        mode=pl["mode"], placement=opt.placement_from_json(pl["placement"]),
        routing=opt.routing_from_json(rj["flows"]), nodes=nodes,
        root=rj["root"], configs=configs, objective=pl["objective"],
        exact=pl["exact"])


# ---------------------------------------------------------------- checks

def validate_bundle(bundle: DeploymentBundle, topo) -> list:
    """Structural validators: placement totality, fragment coverage of
    every state resume point, no dangling node references.  Returns a list
    of problem strings (empty means ok)."""
    problems = []
    for s, sid in sorted(bundle.placement.items()):
        if sid not in topo.nodes:
            problems.append(f"placement of {s!r} on unknown switch {sid!r}")
    points = state_resume_points(bundle.nodes)
    for key in sorted(points):
        s = points[key]
        owner = bundle.placement.get(s)
        if owner is None:
            problems.append(f"state variable {s!r} is unplaced")
            continue
        cfg = bundle.configs.get(owner)
        if cfg is None or key[1] not in cfg.fragment:
            problems.append(
                f"owner {owner!r} of {s!r} lacks node {key[1]} "
                "in its fragment")
    for sid, cfg in sorted(bundle.configs.items()):
        for nid, node in cfg.nodes.items():
            if node[0] == "branch":
                for child in (node[2], node[3]):
                    if child not in bundle.nodes:
                        problems.append(
                            f"switch {sid}: node {nid} references "
                            f"unknown node {child}")
        for (u, key), rows in sorted(cfg.unresolved.items()):
            if key[1] not in bundle.nodes:
                problems.append(
                    f"switch {sid}: rule ({u},{key}) references "
                    f"unknown node {key[1]}")
            for _, _, nh in rows:
                if (sid, nh) not in topo.links:
                    problems.append(
                        f"switch {sid}: rule next hop {nh!r} is not "
                        "a neighbor")
    for sid in topo.nodes:
        if topo.nodes[sid].external_ports and sid not in bundle.configs:
            problems.append(f"ingress switch {sid!r} has no config")
    return problems
