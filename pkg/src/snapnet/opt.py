"""Joint state placement and routing.

Builds a mixed-integer model over per-flow link fractions (R), placement
indicators (P), and processed-flow fractions (PS); exports it in CPLEX-LP
text form for external solvers; and solves desk-scale instances with a
built-in search: exhaustive (or shortlisted, under a budget) enumeration of
per-group placements, with per-placement sequential flow routing over a
layered waypoint graph.

Variable naming (deterministic):
    R_u{u}_v{v}_{i}_{j}       fraction of demand (u,v) on link (i,j)
    P_{s}_{n}                 1 iff state variable s lives on switch n
    PS_{s}_u{u}_v{v}_{i}_{j}  fraction of (u,v) on (i,j) that has passed s
"""

from __future__ import annotations

import heapq
import itertools
import json
import re
import time
from dataclasses import dataclass, field

from .errors import InfeasibleError


def _san(x) -> str:
    return re.sub(r"[^A-Za-z0-9]", "_", str(x))


def rname(u, v, i, j) -> str:
    return f"R_u{_san(u)}_v{_san(v)}_{_san(i)}_{_san(j)}"


def pname(s, n) -> str:
    return f"P_{_san(s)}_{_san(n)}"


def psname(s, u, v, i, j) -> str:
    return f"PS_{_san(s)}_u{_san(u)}_v{_san(v)}_{_san(i)}_{_san(j)}"


# ---------------------------------------------------------------- model

@dataclass(frozen=True)
class Constraint:
    name: str
    coeffs: tuple            # ((var, coef), ...), vars unique
    sense: str               # "<=" | ">=" | "="
    rhs: float


@dataclass
class MILPModel:
    objective: dict          # var -> coefficient (minimization)
    constraints: list        # [Constraint]
    bounds: dict             # var -> (lo, hi)
    binaries: frozenset      # subset of variable names
    # data needed to re-verify / solve
    topo: object = None
    flows: dict = field(default_factory=dict)   # (u,v) -> (demand, vars tuple)
    state_vars: tuple = ()
    tied: frozenset = frozenset()
    dep: frozenset = frozenset()
    mode: str = "ST"
    fixed: dict | None = None                   # TE-mode placement

    def variables(self) -> list:
        names = set(self.objective)
        for c in self.constraints:
            names.update(v for v, _ in c.coeffs)
        names.update(self.bounds)
        return sorted(names)


@dataclass(frozen=True)
class Violation:
    constraint: str
    lhs: float
    sense: str
    rhs: float


@dataclass
class Solution:
    placement: dict          # state var -> switch id
    routing: dict            # (u,v) -> [(weight, (node, ...))]
    objective: float
    exact: bool              # exhaustive search, routing never congested


# ---------------------------------------------------------------- build

def build_milp(topo, demand, order, mode: str = "ST",
               fixed: dict | None = None) -> MILPModel:
    """demand: psm.StateDemand; order: deps.OrderSpec.
    mode "TE" treats `fixed` (state var -> switch) as constants."""
    if mode not in ("ST", "TE"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "TE" and fixed is None:
        raise ValueError("TE mode needs a fixed placement")

    nodes = sorted(topo.nodes)
    links = sorted(topo.links)
    in_of: dict = {n: [] for n in nodes}
    out_of: dict = {n: [] for n in nodes}
    for (i, j) in links:
        out_of[i].append((i, j))
        in_of[j].append((i, j))
    state_vars = tuple(sorted(order.state_rank, key=lambda s:
                              (order.state_rank[s], s)))
    flows = {}
    for (u, v), vol in sorted(topo.demands.items()):
        flows[(u, v)] = (vol, tuple(demand.states_for(u, v)))

    def pval(s, n):
        """In TE mode placement indicators are constants."""
        if mode == "TE":
            return None, 1.0 if fixed.get(s) == n else 0.0
        return pname(s, n), None

    objective: dict = {}
    constraints: list = []
    bounds: dict = {}
    binaries: set = set()

    def add(name, coeffs: dict, sense: str, rhs: float):
        # fold constant (None-keyed) contributions into the rhs
        rhs -= coeffs.pop(None, 0.0)
        items = tuple(sorted((k, c) for k, c in coeffs.items() if c != 0.0))
        constraints.append(Constraint(name, items, sense, float(rhs)))

    cap_rows: dict = {l: {} for l in links}

    for (u, v), (vol, svars) in flows.items():
        src = topo.node_of_port(u)
        snk = topo.node_of_port(v)
        fu, fv = _san(u), _san(v)

        if src == snk:
            # degenerate flow: never leaves its switch, so any needed state
            # must be placed there
            for s in svars:
                var, const = pval(s, src)
                if var is None:
                    if const != 1.0:
                        # impossible to satisfy; surface as an explicit row
                        add(f"pin_{_san(s)}_u{fu}_v{fv}", {None: const},
                            "=", 1.0)
                else:
                    add(f"pin_{_san(s)}_u{fu}_v{fv}", {var: 1.0}, "=", 1.0)
            continue

        rvars = {}
        for (i, j) in links:
            name = rname(u, v, i, j)
            rvars[(i, j)] = name
            bounds[name] = (0.0, 1.0)
            objective[name] = objective.get(name, 0.0) + \
                vol / topo.links[(i, j)].capacity
            cap_rows[(i, j)][name] = vol

        add(f"src_u{fu}_v{fv}",
            {rvars[l]: 1.0 for l in out_of[src]}, "=", 1.0)
        add(f"snk_u{fu}_v{fv}",
            {rvars[l]: 1.0 for l in in_of[snk]}, "=", 1.0)
        for n in nodes:
            if n in (src, snk):
                continue
            row = {rvars[l]: 1.0 for l in in_of[n]}
            for l in out_of[n]:
                row[rvars[l]] = row.get(rvars[l], 0.0) - 1.0
            add(f"cons_u{fu}_v{fv}_{_san(n)}", row, "=", 0.0)
        # a node may be entered once per execution phase: stateless flows
        # follow simple paths, stateful flows may detour back for a variable
        # whose prerequisites were satisfied on a later switch
        visits = 1.0 if not svars else float(len(svars) + 1)
        for n in nodes:
            row = {rvars[l]: 1.0 for l in in_of[n]}
            if row:
                add(f"loop_u{fu}_v{fv}_{_san(n)}", row, "<=", visits)

        for s in svars:
            fs = _san(s)
            psvars = {}
            for (i, j) in links:
                name = psname(s, u, v, i, j)
                psvars[(i, j)] = name
                bounds[name] = (0.0, 1.0)
                add(f"pslim_{fs}_u{fu}_v{fv}_{_san(i)}_{_san(j)}",
                    {name: 1.0, rvars[(i, j)]: -1.0}, "<=", 0.0)
            # a switch hosting s must see the whole flow (waived at the
            # ingress switch, where the flow starts out)
            for n in nodes:
                if n == src:
                    continue
                var, const = pval(s, n)
                row = {rvars[l]: 1.0 for l in in_of[n]}
                if var is None:
                    row[None] = -const
                else:
                    row[var] = -1.0
                add(f"cover_{fs}_u{fu}_v{fv}_{_san(n)}", row, ">=", 0.0)
            # processed-flow conservation (all nodes but the sink)
            for n in nodes:
                if n == snk:
                    continue
                var, const = pval(s, n)
                row = {psvars[l]: 1.0 for l in in_of[n]}
                for l in out_of[n]:
                    row[psvars[l]] = row.get(psvars[l], 0.0) - 1.0
                if var is None:
                    row[None] = row.get(None, 0.0) + const
                else:
                    row[var] = row.get(var, 0.0) + 1.0
                add(f"pcons_{fs}_u{fu}_v{fv}_{_san(n)}", row, "=", 0.0)
            # everything reaching the sink has been processed
            row = {psvars[l]: 1.0 for l in in_of[snk]}
            var, const = pval(s, snk)
            if var is None:
                row[None] = const
            else:
                row[var] = 1.0
            add(f"pfull_{fs}_u{fu}_v{fv}", row, "=", 1.0)

        # ordering: when the flow needs both s and t with s before t, the
        # switch hosting t must only see flow that already passed s
        for (s, t) in sorted(order.dep):
            if s not in svars or t not in svars:
                continue
            for n in nodes:
                row = {psname(s, u, v, i, j): 1.0 for (i, j) in in_of[n]}
                vs, cs = pval(s, n)
                if vs is None:
                    row[None] = row.get(None, 0.0) - cs
                else:
                    row[vs] = row.get(vs, 0.0) + 1.0
                vt, ct = pval(t, n)
                if vt is None:
                    row[None] = row.get(None, 0.0) + ct
                else:
                    row[vt] = row.get(vt, 0.0) - 1.0
                add(f"ord_{_san(s)}_{_san(t)}_u{fu}_v{fv}_{_san(n)}",
                    row, ">=", 0.0)

    for (i, j) in links:
        if cap_rows[(i, j)]:
            add(f"cap_{_san(i)}_{_san(j)}", dict(cap_rows[(i, j)]), "<=",
                topo.links[(i, j)].capacity)

    if mode == "ST":
        for s in state_vars:
            for n in nodes:
                name = pname(s, n)
                bounds[name] = (0.0, 1.0)
                binaries.add(name)
            add(f"place_{_san(s)}",
                {pname(s, n): 1.0 for n in nodes}, "=", 1.0)
        for pair in sorted(order.tied, key=sorted):
            s, t = sorted(pair)
            for n in nodes:
                add(f"tied_{_san(s)}_{_san(t)}_{_san(n)}",
                    {pname(s, n): 1.0, pname(t, n): -1.0}, "=", 0.0)

    constraints.sort(key=lambda c: c.name)
    return MILPModel(objective=objective, constraints=constraints,
                     bounds=bounds, binaries=frozenset(binaries),
                     topo=topo, flows=flows, state_vars=state_vars,
                     tied=order.tied, dep=order.dep, mode=mode,
                     fixed=dict(fixed) if fixed else None)


# ---------------------------------------------------------------- export

def _fmt(x: float) -> str:
    """12 significant digits, no exponent surprises for typical values."""
    s = f"{x:.12g}"
    return s


def _fmt_terms(coeffs) -> str:
    parts = []
    for var, c in coeffs:
        if not parts:
            parts.append(f"{_fmt(c)} {var}" if c >= 0
                         else f"- {_fmt(-c)} {var}")
        elif c >= 0:
            parts.append(f"+ {_fmt(c)} {var}")
        else:
            parts.append(f"- {_fmt(-c)} {var}")
    return " ".join(parts) if parts else "0 "


def export_lp(m: MILPModel) -> str:
    out = ["Minimize"]
    obj_terms = tuple(sorted(m.objective.items()))
    out.append(" obj: " + _fmt_terms(obj_terms))
    out.append("Subject To")
    for c in m.constraints:
        sense = {"<=": "<=", ">=": ">=", "=": "="}[c.sense]
        out.append(f" {c.name}: {_fmt_terms(c.coeffs)} {sense} {_fmt(c.rhs)}")
    out.append("Bounds")
    for var in sorted(m.bounds):
        lo, hi = m.bounds[var]
        out.append(f" {_fmt(lo)} <= {var} <= {_fmt(hi)}")
    if m.binaries:
        out.append("Binary")
        for var in sorted(m.binaries):
            out.append(f" {var}")
    out.append("End")
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------- solve

def _bfs_dist(topo, source: str) -> dict:
    dist = {source: 0}
    q = [source]
    while q:
        nxt = []
        for n in q:
            for l in topo.out_links(n):
                if l.dst not in dist:
                    dist[l.dst] = dist[n] + 1
                    nxt.append(l.dst)
        q = nxt
    return dist


def _closure(node: str, visited: frozenset, needed: frozenset,
             owner: dict, preds: dict) -> frozenset:
    """Collect every variable owned here whose prerequisites are done."""
    out = set(visited)
    changed = True
    while changed:
        changed = False
        for s in needed:
            if s in out or owner[s] != node:
                continue
            if preds[s] <= out:
                out.add(s)
                changed = True
    return frozenset(out)


def _route_one(topo, src: str, snk: str, needed: frozenset, owner: dict,
               dep: frozenset, loads: dict, cache: dict | None = None):
    """Cheapest node-simple path src->snk visiting owners of `needed` in a
    dep-consistent order.  Layered Dijkstra first; if its answer revisits a
    node, a budgeted search over simple paths."""
    preds = {s: frozenset(a for (a, b) in dep if b == s and a in needed)
             for s in needed}

    def cost(link) -> float:
        c = link.capacity
        return (1.0 / c) * (1.0 + loads.get((link.src, link.dst), 0.0) / c)

    start = (src, _closure(src, frozenset(), needed, owner, preds))
    best: dict = {start: 0.0}
    parent: dict = {start: None}
    pq = [(0.0, start)]
    goal = None
    while pq:
        d, st = heapq.heappop(pq)
        if d > best.get(st, float("inf")):
            continue
        node, vis = st
        if node == snk and vis == needed:
            goal = st
            break
        for l in topo.out_links(node):
            vis2 = _closure(l.dst, vis, needed, owner, preds)
            st2 = (l.dst, vis2)
            d2 = d + cost(l)
            if d2 < best.get(st2, float("inf")) - 1e-15:
                best[st2] = d2
                parent[st2] = st
                heapq.heappush(pq, (d2, st2))
    if goal is None:
        return None
    path = []
    st = goal
    while st is not None:
        path.append(st[0])
        st = parent[st]
    path.reverse()
    # A node may repeat across execution phases (each visit happens under a
    # distinct forwarding key), but a directed link can carry the flow only
    # once: the link indicator below is binary.
    hops = list(zip(path, path[1:]))
    if len(set(hops)) == len(hops):
        return tuple(path)
    # phase-walk fallback; feasibility does not depend on current loads,
    # so the result may be reused across placement candidates
    ck = (src, snk, frozenset((s, owner[s]) for s in needed))
    if cache is not None and ck in cache:
        return cache[ck]
    walk = _route_link_distinct(topo, src, snk, needed, owner, preds, cost)
    if cache is not None:
        cache[ck] = walk
    return walk


def _segment(topo, src: str, dst: str, used: set, cost):
    """Cheapest src->dst path over links not in `used`; deterministic."""
    best = {src: 0.0}
    parent: dict = {src: None}
    pq = [(0.0, src)]
    while pq:
        d, n = heapq.heappop(pq)
        if d > best.get(n, float("inf")):
            continue
        if n == dst:
            path = []
            while n is not None:
                path.append(n)
                n = parent[n]
            return list(reversed(path)), d
        for l in topo.out_links(n):
            if (n, l.dst) in used:
                continue
            d2 = d + cost(l)
            if d2 < best.get(l.dst, float("inf")) - 1e-15:
                best[l.dst] = d2
                parent[l.dst] = n
                heapq.heappush(pq, (d2, l.dst))
    return None


def _route_link_distinct(topo, src, snk, needed, owner, preds, cost):
    """Walks that never reuse a directed link (the link indicators are
    binary) but may revisit a node between execution phases.  Built
    constructively: for every dependency-consistent order of the needed
    variables, chain per-phase shortest paths over the remaining links."""
    best = None
    tried = set()
    for perm in itertools.permutations(sorted(needed)):
        pos = {s: i for i, s in enumerate(perm)}
        if any(pos[a] > pos[s] for s in perm for a in preds[s]):
            continue
        targets = []
        for s in perm:
            n = owner[s]
            if not targets or targets[-1] != n:
                targets.append(n)
        targets.append(snk)
        tkey = tuple(targets)
        if tkey in tried:
            continue
        tried.add(tkey)
        cur = src
        used: set = set()
        path = [src]
        total = 0.0
        for tgt in targets:
            if cur == tgt:
                continue
            seg = _segment(topo, cur, tgt, used, cost)
            if seg is None:
                path = None
                break
            nodes, d = seg
            used.update(zip(nodes, nodes[1:]))
            total += d
            path.extend(nodes[1:])
            cur = tgt
        if path is None:
            continue
        vis: frozenset = frozenset()
        for n in path:
            vis = _closure(n, vis, needed, owner, preds)
        if vis != needed:
            continue
        if best is None or (total, tuple(path)) < best:
            best = (total, tuple(path))
    return best[1] if best else None


def _route_flows(m: MILPModel, placement: dict, flow_keys: list,
                 loads: dict, obj_so_far: float = 0.0,
                 abort_above: float | None = None,
                 cache: dict | None = None):
    """Route the given flows (in order) on top of `loads`, mutating it.
    Returns (routing, objective) or None if some flow cannot be routed or
    the running objective already exceeds `abort_above`."""
    topo = m.topo
    routing = {}
    obj = obj_so_far
    for (u, v) in flow_keys:
        vol, svars = m.flows[(u, v)]
        src = topo.node_of_port(u)
        snk = topo.node_of_port(v)
        if src == snk:
            for s in svars:
                if placement.get(s) != src:
                    return None
            routing[(u, v)] = (src,)
            continue
        path = _route_one(topo, src, snk, frozenset(svars), placement,
                          m.dep, loads, cache=cache)
        if path is None:
            return None
        routing[(u, v)] = path
        for a, b in zip(path, path[1:]):
            loads[(a, b)] = loads.get((a, b), 0.0) + vol
            obj += vol / topo.links[(a, b)].capacity
        if abort_above is not None and obj > abort_above + 1e-12:
            return None
    return routing, obj


def _objective_of(m: MILPModel, routing: dict) -> float:
    loads: dict = {}
    for (u, v), path in routing.items():
        vol = m.flows[(u, v)][0]
        for a, b in zip(path, path[1:]):
            loads[(a, b)] = loads.get((a, b), 0.0) + vol
    return sum(load / m.topo.links[l].capacity for l, load in loads.items())


def _congested(m: MILPModel, routing: dict) -> bool:
    loads: dict = {}
    for (u, v), path in routing.items():
        vol = m.flows[(u, v)][0]
        for a, b in zip(path, path[1:]):
            loads[(a, b)] = loads.get((a, b), 0.0) + vol
    return any(load > m.topo.links[l].capacity + 1e-9
               for l, load in loads.items())


def _flow_order(m: MILPModel) -> list:
    return sorted(m.flows, key=lambda k: (-m.flows[k][0], k))


def solve_builtin(m: MILPModel, budget: int = 4096,
                  time_limit: float | None = None) -> Solution:
    """Enumerate placements of tied groups over switches (exhaustively when
    the space fits in `budget`, otherwise a demand-weighted shortlist) and
    route flows sequentially for each candidate.  Deterministic."""
    topo = m.topo
    nodes = sorted(topo.nodes)
    t0 = time.monotonic()

    if m.mode == "TE":
        placement = dict(m.fixed)
        loads: dict = {}
        r = _route_flows(m, placement, _flow_order(m), loads)
        if r is None:
            raise InfeasibleError(
                "no order-respecting routing under the fixed placement")
        routing, obj = r
        rt = {k: [(1.0, p)] for k, p in routing.items()}
        return Solution(placement, rt, obj,
                        exact=not _congested(m, rt_paths(rt)))

    # group variables that must be co-located
    groups = _placement_groups(m)
    total = len(nodes) ** len(groups) if groups else 1
    exhaustive = total <= budget

    if exhaustive:
        cand = {g: nodes for g in range(len(groups))}
    else:
        cand = _shortlists(m, groups, nodes, budget)

    # flows whose path never depends on placement can be routed once
    state_flows = [k for k in _flow_order(m) if m.flows[k][1]]
    base_flows = [k for k in _flow_order(m) if not m.flows[k][1]]
    reroute_all = exhaustive
    base_loads: dict = {}
    base_routing: dict = {}
    base_obj = 0.0
    if not reroute_all:
        r = _route_flows(m, {}, base_flows, base_loads)
        if r is None:
            raise InfeasibleError("a stateless flow has no path")
        base_routing, base_obj = r

    best = None
    examined = 0
    walk_cache: dict = {}
    for combo in itertools.product(*(cand[g] for g in range(len(groups)))):
        if time_limit is not None and time.monotonic() - t0 > time_limit:
            exhaustive = False
            break
        examined += 1
        placement = {}
        for gi, node in enumerate(combo):
            for s in groups[gi]:
                placement[s] = node
        abort_above = best[0][0] if best is not None else None
        if reroute_all:
            loads: dict = {}
            r = _route_flows(m, placement, _flow_order(m), loads,
                             abort_above=abort_above, cache=walk_cache)
            routing, obj = r if r is not None else (None, None)
        else:
            loads = dict(base_loads)
            r = _route_flows(m, placement, state_flows, loads,
                             obj_so_far=base_obj, abort_above=abort_above,
                             cache=walk_cache)
            if r is None:
                routing, obj = None, None
            else:
                routing, obj = {**base_routing, **r[0]}, r[1]
        if routing is None:
            continue
        rt = {k: [(1.0, p)] for k, p in routing.items()}
        key = (obj, tuple(sorted(placement.items())))
        if best is None or key < best[0]:
            best = (key, placement, rt)
    if best is None:
        raise InfeasibleError("no placement admits an order-respecting "
                              "routing for every flow")
    _, placement, rt = best
    exact = exhaustive and not _congested(m, rt_paths(rt))
    return Solution(placement, rt, best[0][0], exact=exact)


def rt_paths(rt: dict) -> dict:
    """Routing {key: [(w, path)]} -> {key: path} using the heaviest path."""
    return {k: max(ps, key=lambda wp: wp[0])[1] for k, ps in rt.items()}


def _placement_groups(m: MILPModel) -> list:
    """Tied variables share a group; each group is placed as a unit."""
    parent = {s: s for s in m.state_vars}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for pair in m.tied:
        a, b = sorted(pair)
        if a in parent and b in parent:
            parent[find(a)] = find(b)
    buckets: dict = {}
    for s in m.state_vars:
        buckets.setdefault(find(s), []).append(s)
    return [sorted(g) for _, g in sorted(buckets.items())]


def _shortlists(m: MILPModel, groups: list, nodes: list,
                budget: int) -> dict:
    """Per-group candidate switches ranked by demand-weighted detour."""
    topo = m.topo
    k = max(1, int(budget ** (1.0 / max(1, len(groups)))))
    k = min(k, len(nodes))
    dists = {n: _bfs_dist(topo, n) for n in nodes}
    out = {}
    for gi, group in enumerate(groups):
        gset = set(group)
        score = {n: 0.0 for n in nodes}
        for (u, v), (vol, svars) in m.flows.items():
            if not gset & set(svars):
                continue
            src, snk = topo.node_of_port(u), topo.node_of_port(v)
            for n in nodes:
                d1 = dists[src].get(n)
                d2 = dists[n].get(snk)
                if d1 is None or d2 is None:
                    score[n] += 1e9
                else:
                    score[n] += max(vol, 1e-9) * (d1 + d2)
        ranked = sorted(nodes, key=lambda n: (score[n], n))
        out[gi] = ranked[:k]
    return out


# ---------------------------------------------------------------- check

def _routing_values(m: MILPModel, placement: dict, routing: dict) -> dict:
    """Expand (Placement, Routing) into a full variable assignment."""
    vals: dict = {}
    for s in m.state_vars:
        for n in sorted(m.topo.nodes):
            vals[pname(s, n)] = 1.0 if placement.get(s) == n else 0.0
    for (u, v), paths in routing.items():
        _, svars = m.flows.get((u, v), (0.0, ()))
        for w, path in paths:
            done: set = set()
            placed_here = {}
            for n in path:
                for s in svars:
                    if placement.get(s) == n:
                        placed_here.setdefault(n, []).append(s)
            for a, b in zip(path, path[1:]):
                for s in placed_here.get(a, ()):
                    done.add(s)
                key = rname(u, v, a, b)
                vals[key] = vals.get(key, 0.0) + w
                for s in svars:
                    if s in done:
                        k2 = psname(s, u, v, a, b)
                        vals[k2] = vals.get(k2, 0.0) + w
    return vals


def check_solution(m: MILPModel, placement: dict, routing: dict,
                   tol: float = 1e-9) -> list:
    """Independent re-verification of every constraint row.  Returns the
    list of violations (empty means ok).  Capacity rows are checked like
    any other row."""
    vals = _routing_values(m, placement, routing)
    out = []
    for c in m.constraints:
        lhs = sum(coef * vals.get(var, 0.0) for var, coef in c.coeffs)
        ok = (lhs <= c.rhs + tol if c.sense == "<=" else
              lhs >= c.rhs - tol if c.sense == ">=" else
              abs(lhs - c.rhs) <= tol)
        if not ok:
            out.append(Violation(c.name, lhs, c.sense, c.rhs))
    return out


def objective_value(m: MILPModel, routing: dict) -> float:
    vals = _routing_values(m, {}, routing)
    return sum(c * vals.get(v, 0.0) for v, c in m.objective.items())


# ---------------------------------------------------------------- JSON

def placement_to_json(placement: dict) -> dict:
    return {s: n for s, n in sorted(placement.items())}


def placement_from_json(d: dict) -> dict:
    return dict(d)


def routing_to_json(routing: dict) -> list:
    out = []
    for (u, v) in sorted(routing):
        out.append({"u": u, "v": v,
                    "paths": [{"weight": w, "nodes": list(p)}
                              for w, p in routing[(u, v)]]})
    return out


def routing_from_json(rows: list) -> dict:
    return {(r["u"], r["v"]): [(p["weight"], tuple(p["nodes"]))
                               for p in r["paths"]]
            for r in rows}
