"""Software-switch IR and discrete-event network simulator.

Loads a deployment bundle onto a topology, lowers each switch's diagram
fragment to a loop-free instruction DAG, and executes injected packets
under the distributed protocol described in the rule generator: the packet
body in flight is the entry packet, state operations run at their owners
(opportunistically when an owner is passed en route), and field
modifications are applied once no state operations remain.

Two execution modes:
  * serialized — each injected packet (and all its forked copies) is
    driven to emission or drop before the next injection starts;
  * interleaved — injections enqueue and the event loop advances one
    switch-visit per event, with a seeded deterministic tie-break among
    concurrent events, so cross-packet interleavings are reproducible.

Per-switch processing is atomic: one packet's instruction run at a switch
is never interleaved with another's on the same switch.  Links deliver in
FIFO order with a uniform latency of one tick.
"""

from __future__ import annotations

import hashlib
import heapq
import json
from dataclasses import dataclass, field

from . import lang, rulegen, xfdd
from .errors import EvalError
from .rulegen import DONE, UNRESOLVED, SnapHeader
from .values import canon_key, check_int_range, test_match, values_equal


# ---------------------------------------------------------------- instr IR

@dataclass(frozen=True)
class Branch:
    test: object          # diagram test, or ("cell", rhs expr) after a lookup
    target_true: int
    target_false: int


@dataclass(frozen=True)
class ApplyAtom:
    atom: object          # field modification


@dataclass(frozen=True)
class StateLookup:
    var: str
    index: object         # entry-relative index expression


@dataclass(frozen=True)
class StateWrite:
    var: str
    index: object
    atom: object          # StateSet / Incr / Decr carrying the value expr


@dataclass(frozen=True)
class TagResume:
    node: object          # resume key
    offset: int = 0


@dataclass(frozen=True)
class ForwardGroup:
    key: object           # (obs_inport-independent) unresolved-rule key


@dataclass(frozen=True)
class Fork:
    leaf: int             # leaf node id whose action sequences fork


@dataclass(frozen=True)
class Emit:
    port: object          # None: the final packet's own outport


@dataclass(frozen=True)
class Drop:
    pass


@dataclass
class SwitchProgram:
    instrs: list
    node_entry: dict      # nid -> instruction index
    leaf_entry: dict      # (nid, elem) -> first atom's instruction index


def lower_fragment(cfg: rulegen.SwitchConfig) -> SwitchProgram:
    """Fragment -> loop-free DAG of instruction indices."""
    instrs: list = []
    node_entry: dict = {}
    leaf_entry: dict = {}

    def emit(i) -> int:
        instrs.append(i)
        return len(instrs) - 1

    def lower_node(nid: int) -> int:
        if nid in node_entry:
            return node_entry[nid]
        node = cfg.nodes.get(nid)
        if node is None:
            # foreign boundary: tag the resume point and forward
            at = emit(TagResume(("node", nid)))
            emit(ForwardGroup(("node", nid)))
            node_entry[nid] = at
            return at
        if node[0] == "leaf":
            at = emit(Fork(nid))
            node_entry[nid] = at
            for ei, elem in enumerate(node[1]):
                start = None
                dropped = False
                for a in elem:
                    if a is xfdd.DROP:
                        k = emit(Drop())
                        dropped = True
                    elif isinstance(a, lang.Mod):
                        k = emit(ApplyAtom(a))
                    else:
                        k = emit(StateWrite(a.var, a.index, a))
                    if start is None:
                        start = k
                if not dropped:
                    k = emit(Emit(None))
                    if start is None:
                        start = k
                leaf_entry[(nid, ei)] = start
            return at
        test = node[1]
        # reserve slots so targets can be lowered depth-first afterwards
        if isinstance(test, xfdd.TStateTest):
            at = emit(StateLookup(test.var, test.index))
            slot = emit(None)
            node_entry[nid] = at
            hi, lo = lower_node(node[2]), lower_node(node[3])
            instrs[slot] = Branch(("cell", test.rhs), hi, lo)
        else:
            at = emit(None)
            node_entry[nid] = at
            hi, lo = lower_node(node[2]), lower_node(node[3])
            instrs[at] = Branch(test, hi, lo)
        return at

    for nid in sorted(cfg.nodes):
        lower_node(nid)
    return SwitchProgram(instrs, node_entry, leaf_entry)


# ---------------------------------------------------------------- network

@dataclass
class TraceEvent:
    time: int
    switch: str
    packet: dict
    kind: str             # ingress | hop | state-read | state-write |
    detail: object = None  # emit | drop | fork | tag


@dataclass
class _Copy:
    """One in-flight packet copy: entry body plus protocol header."""
    body: dict
    hdr: SnapHeader
    uid: int


class SimNetwork:
    def __init__(self, bundle: rulegen.DeploymentBundle, topo,
                 seed: int = 0):
        self.bundle = bundle
        self.topo = topo
        self.seed = seed
        self.programs = {sid: lower_fragment(cfg)
                         for sid, cfg in bundle.configs.items()}
        # state tables: var -> canonical index key -> (index, value)
        self.tables = {sid: {s: {} for s in cfg.owns}
                       for sid, cfg in bundle.configs.items()}
        self.defaults = {}
        for cfg in bundle.configs.values():
            for s, (arity, dv) in cfg.state_tables.items():
                self.defaults[s] = dv
        self.points = rulegen.state_resume_points(bundle.nodes)
        self.clock = 0
        self.trace: list = []
        self.emissions: list = []          # (port, packet)
        self._wrr: dict = {}
        self._events: list = []            # heap of (time, tb, serial, fn)
        self._serial = 0
        self._uid = 0
        self._linkq: dict = {}             # (a, b) -> fifo list
        self._fallback: dict = {}          # (sid, target) -> next hop
        self._mode = "serialized"
        self._validate()

    # -- bookkeeping

    def _validate(self):
        problems = rulegen.validate_bundle(self.bundle, self.topo)
        if problems:
            raise ValueError("inconsistent bundle: " + "; ".join(problems))

    def _tiebreak(self, serial: int) -> int:
        if self._mode == "serialized":
            return 0
        h = hashlib.blake2b(f"{self.seed}:{serial}".encode(),
                            digest_size=8).digest()
        return int.from_bytes(h, "big")

    def _schedule(self, t: int, fn):
        self._serial += 1
        heapq.heappush(self._events,
                       (t, self._tiebreak(self._serial), self._serial, fn))

    def _log(self, sid: str, body: dict, kind: str, detail=None):
        self.trace.append(TraceEvent(self.clock, sid, dict(body),
                                     kind, detail))

    # -- state tables

    def _cell(self, sid: str, var: str, idx: tuple):
        slot = self.tables[sid][var].get(tuple(canon_key(x) for x in idx))
        return slot[1] if slot is not None else self.defaults[var]

    def _store(self, sid: str, var: str, idx: tuple, value):
        k = tuple(canon_key(x) for x in idx)
        tab = self.tables[sid][var]
        if values_equal(value, self.defaults[var]):
            tab.pop(k, None)
        else:
            tab[k] = (idx, value)

    def aggregate_state(self) -> dict:
        """Union of all switches' tables: var -> index key -> value."""
        out = {s: {} for s in self.defaults}
        for sid in sorted(self.tables):
            for var, tab in self.tables[sid].items():
                for k, (idx, v) in tab.items():
                    out[var][k] = v
        return out

    # -- injection / event loop

    def inject(self, port: int, pkt: dict, mode: str = "serialized"):
        """Serialized mode runs the packet (and every forked copy) to
        completion and returns the packets it emitted; interleaved mode
        enqueues the injection for a later run()."""
        if mode not in ("serialized", "interleaved"):
            raise ValueError(f"unknown mode {mode!r}")
        self._mode = mode
        sid = self.topo.node_of_port(port)
        hdr = SnapHeader(obs_inport=port, obs_outport=UNRESOLVED,
                         resume_node=("node", self.bundle.root))
        self._uid += 1
        copy = _Copy(dict(pkt), hdr, self._uid)
        self._log(sid, pkt, "ingress", port)
        before = len(self.emissions)
        self._schedule(self.clock, lambda: self._process(sid, copy))
        if mode == "serialized":
            self.run()
            return self.emissions[before:]
        return []

    def run(self):
        while self._events:
            t, _, _, fn = heapq.heappop(self._events)
            self.clock = max(self.clock, t)
            fn()

    # -- forwarding

    def _send(self, a: str, b: str, copy: _Copy):
        link = (a, b)
        if link not in self.topo.links:
            raise EvalError(f"no link {a}->{b}")
        self._linkq.setdefault(link, []).append(copy)
        self._log(a, copy.body, "hop", (a, b))
        self._schedule(self.clock + 1, lambda: self._deliver(link))

    def _deliver(self, link):
        # explicit per-link FIFO: delivery order equals send order
        q = self._linkq[link]
        assert q, "delivery event with empty link queue"
        copy = q.pop(0)
        self._process(link[1], copy)

    def _fallback_next(self, sid: str, target: str) -> str:
        key = (sid, target)
        hop = self._fallback.get(key)
        if hop is None:
            # deterministic BFS from target over reversed links
            dist = {target: 0}
            frontier = [target]
            while frontier:
                nxt = []
                for n in frontier:
                    for l in self.topo.in_links(n):
                        if l.src not in dist:
                            dist[l.src] = dist[n] + 1
                            nxt.append(l.src)
                frontier = sorted(nxt)
            best = None
            for l in self.topo.out_links(sid):
                d = dist.get(l.dst)
                if d is not None and (best is None or (d, l.dst) < best):
                    best = (d, l.dst)
            if best is None:
                raise EvalError(f"switch {sid} cannot reach {target}")
            hop = best[1]
            self._fallback[key] = hop
        return hop

    def _swrr(self, sid: str, u: int, key, rows: tuple) -> tuple:
        """Deterministic weighted round-robin over a rule group."""
        weights = [w for w, _, _ in rows]
        total = sum(weights)
        if total <= 0:
            weights = [1.0] * len(rows)
            total = float(len(rows))
        cur = self._wrr.setdefault((sid, u, key), [0.0] * len(rows))
        for i, w in enumerate(weights):
            cur[i] += w
        pick = max(range(len(rows)), key=lambda i: (cur[i], -i))
        cur[pick] -= total
        return rows[pick]

    def _forward_blocked(self, sid: str, copy: _Copy, key):
        cfg = self.bundle.configs[sid]
        u = copy.hdr.obs_inport
        rows = cfg.unresolved.get((u, key))
        if rows:
            chosen = None
            if copy.hdr.obs_outport != UNRESOLVED:
                for row in rows:
                    if row[1] == copy.hdr.obs_outport:
                        chosen = row
                        break
            if chosen is None:
                chosen = self._swrr(sid, u, key, rows)
                copy.hdr = SnapHeader(
                    u, chosen[1], copy.hdr.resume_node,
                    copy.hdr.action_offset, copy.hdr.done_atoms,
                    copy.hdr.emitter)
                self._log(sid, copy.body, "tag", (key, chosen[1]))
            self._send(sid, chosen[2], copy)
            return
        var = self.points[key]
        owner = self.bundle.placement[var]
        copy.hdr = SnapHeader(u, UNRESOLVED, copy.hdr.resume_node,
                              copy.hdr.action_offset, copy.hdr.done_atoms,
                              copy.hdr.emitter)
        self._send(sid, self._fallback_next(sid, owner), copy)

    # -- per-switch execution (atomic)

    def _process(self, sid: str, copy: _Copy):
        hdr = copy.hdr
        if hdr.resume_node == DONE:
            self._route_final(sid, copy)
            return
        kind = hdr.resume_node[0]
        if kind == "node":
            nid = hdr.resume_node[1]
            prog = self.programs.get(sid)
            if prog is None or nid not in self.bundle.configs[sid].nodes:
                self._forward_blocked(sid, copy, ("node", nid))
                return
            self._run_instrs(sid, copy, prog.node_entry[nid])
            return
        # leaf continuation
        _, nid, ei = hdr.resume_node
        prog = self.programs.get(sid)
        if prog is not None and (nid, ei) in prog.leaf_entry:
            self._run_leaf(sid, copy, nid, ei)
        else:
            self._forward_blocked(
                sid, copy, ("leaf", nid, ei, hdr.action_offset))

    def _eval_test(self, sid: str, test, body: dict, reg):
        if isinstance(test, tuple) and test[0] == "cell":
            from .interp import eval_expr
            return values_equal(reg, eval_expr(test[1], body))
        if isinstance(test, xfdd.TFieldValue):
            return test_match(body[test.field], test.value)
        if isinstance(test, xfdd.TFieldField):
            return values_equal(body[test.f1], body[test.f2])
        raise EvalError(f"cannot evaluate test {test!r}")

    def _run_instrs(self, sid: str, copy: _Copy, ip: int):
        from .interp import eval_index
        prog = self.programs[sid]
        reg = None
        while True:
            instr = prog.instrs[ip]
            if isinstance(instr, StateLookup):
                idx = eval_index(instr.index, copy.body)
                reg = self._cell(sid, instr.var, idx)
                self._log(sid, copy.body, "state-read", (instr.var, idx))
                ip += 1
            elif isinstance(instr, Branch):
                ok = self._eval_test(sid, instr.test, copy.body, reg)
                ip = instr.target_true if ok else instr.target_false
            elif isinstance(instr, TagResume):
                copy.hdr = SnapHeader(
                    copy.hdr.obs_inport, copy.hdr.obs_outport, instr.node,
                    instr.offset, frozenset(), copy.hdr.emitter)
                self._forward_blocked(sid, copy, instr.node)
                return
            elif isinstance(instr, Fork):
                self._fork(sid, copy, instr.leaf)
                return
            else:
                raise EvalError(f"unexpected instruction {instr!r}")

    def _final_packet(self, elem: tuple, body: dict):
        """(dropped, final packet) preview for one action sequence."""
        if elem and elem[-1] is xfdd.DROP:
            return True, None
        out = dict(body)
        for a in elem:
            if isinstance(a, lang.Mod):
                out[a.field] = a.value
        return False, out

    def _fork(self, sid: str, copy: _Copy, nid: int):
        """One copy per action sequence; copies whose output packet would
        duplicate an earlier copy's only carry state updates."""
        elems = self.bundle.configs[sid].nodes[nid][1]
        seen: set = set()
        copies = []
        for ei, elem in enumerate(elems):
            dropped, final = self._final_packet(elem, copy.body)
            emitter = True
            if not dropped:
                key = tuple(sorted((f, canon_key(v))
                                   for f, v in final.items()))
                if key in seen:
                    emitter = False
                seen.add(key)
            hdr = SnapHeader(copy.hdr.obs_inport, copy.hdr.obs_outport,
                             ("leaf", nid, ei), 0, frozenset(), emitter)
            self._uid += 1
            copies.append(_Copy(dict(copy.body), hdr, self._uid))
        if len(copies) > 1:
            self._log(sid, copy.body, "fork", (nid, len(copies)))
        for c in copies:
            self._run_leaf(sid, c, nid, c.hdr.resume_node[2])

    def _run_leaf(self, sid: str, copy: _Copy, nid: int, ei: int):
        from .interp import eval_expr, eval_index
        elems = self.bundle.configs[sid].nodes[nid][1]
        elem = elems[ei]
        owns = set(self.bundle.configs[sid].owns)
        done = set(copy.hdr.done_atoms)
        pending = [k for k, a in enumerate(elem)
                   if rulegen.is_state_atom(a) and k not in done]
        for k in pending[:]:
            a = elem[k]
            if a.var not in owns:
                continue
            idx = eval_index(a.index, copy.body)
            if isinstance(a, lang.StateSet):
                val = eval_expr(a.rhs, copy.body)
            else:
                old = self._cell(sid, a.var, idx)
                if isinstance(old, bool) or not isinstance(old, int):
                    raise EvalError(
                        f"++/-- on non-integer cell value {old!r}")
                val = check_int_range(
                    old + (1 if isinstance(a, lang.Incr) else -1))
            self._store(sid, a.var, idx, val)
            self._log(sid, copy.body, "state-write", (a.var, idx, val))
            done.add(k)
            pending.remove(k)
        if pending:
            off = min(pending)
            copy.hdr = SnapHeader(copy.hdr.obs_inport, copy.hdr.obs_outport,
                                  ("leaf", nid, ei), off, frozenset(done),
                                  copy.hdr.emitter)
            self._forward_blocked(sid, copy, ("leaf", nid, ei, off))
            return
        dropped, final = self._final_packet(elem, copy.body)
        if dropped or not copy.hdr.emitter:
            self._log(sid, copy.body, "drop",
                      "dropped" if dropped else "duplicate-copy")
            return
        copy.body = final
        copy.hdr = SnapHeader(copy.hdr.obs_inport, final.get("outport"),
                              DONE, 0, frozenset(), True)
        self._route_final(sid, copy)

    def _route_final(self, sid: str, copy: _Copy):
        v = copy.hdr.obs_outport
        ports = self.topo.nodes[sid].external_ports
        if v in ports:
            # header stripped: the emitted packet is the bare body
            self.emissions.append((v, dict(copy.body)))
            self._log(sid, copy.body, "emit", v)
            return
        try:
            target = self.topo.node_of_port(v)
        except KeyError:
            self._log(sid, copy.body, "drop", f"unknown egress port {v}")
            return
        rule = self.bundle.configs[sid].resolved.get(
            (copy.hdr.obs_inport, v))
        if rule is not None and rule[0] == "fwd":
            self._send(sid, rule[1], copy)
        else:
            self._send(sid, self._fallback_next(sid, target), copy)


# ---------------------------------------------------------------- loading

def load(bundle, topo, seed: int = 0) -> SimNetwork:
    """bundle: a DeploymentBundle or a bundle directory path."""
    if isinstance(bundle, str):
        bundle = rulegen.load_bundle(bundle)
    return SimNetwork(bundle, topo, seed=seed)


# ---------------------------------------------------------------- probes

def race_probe(net: SimNetwork, scenario: dict) -> dict:
    """Inject the scenario's packets under one interleaved schedule and
    report whether the observed pair of state cells describes a single
    packet.  scenario keys: packets [(port, pkt), ...], vars (v1, v2),
    index (tuple), fields (f1, f2)."""
    for port, pkt in scenario["packets"]:
        net.inject(port, pkt, mode="interleaved")
    net.run()
    v1, v2 = scenario["vars"]
    f1, f2 = scenario["fields"]
    key = tuple(canon_key(x) for x in scenario["index"])
    state = net.aggregate_state()
    got1 = state.get(v1, {}).get(key)
    got2 = state.get(v2, {}).get(key)
    consistent = any(
        got1 is not None and got2 is not None
        and values_equal(got1, pkt[f1]) and values_equal(got2, pkt[f2])
        for _, pkt in scenario["packets"])
    return {"consistent": consistent, "values": (got1, got2)}


# ---------------------------------------------------------------- traces

def trace_to_json(events: list) -> list:
    from .values import value_to_json
    return [{"time": e.time, "switch": e.switch, "kind": e.kind,
             "detail": repr(e.detail),
             "packet": {f: value_to_json(v) for f, v in e.packet.items()}}
            for e in events]


def read_trace(path: str) -> list:
    """Trace input: JSON lines, each {"port": int, "packet": {field: value}}."""
    from .values import value_from_loose
    out = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            d = json.loads(line)
            out.append((d["port"],
                        {f: value_from_loose(v)
                         for f, v in d["packet"].items()}))
    return out
