"""Extended forwarding decision diagrams.

Branch nodes test one of three test kinds (field=value, field=field,
state-cell=expr) in a global total order; leaves hold sets of action
sequences.  Construction goes through a hash-consing arena; composition
operators carry a Context of path facts so contradicting and redundant
tests never survive in the result.

Conflict detection mirrors the evaluator's log discipline exactly:
parallel composition checks its two operands' read/write sets against
each other, and sequential composition checks the per-output-packet runs
of the second operand pairwise.  Reads that were statically resolved
against pending updates still count as reads (they are reads in the
corresponding run's log).
"""

from __future__ import annotations

from dataclasses import dataclass

from . import lang
from .deps import OrderSpec, expr_key
from .errors import RaceError, UnsupportedCompositionError
from .values import (
    IPv4Network, format_value, test_match, value_from_json, value_to_json,
    values_equal,
)


# ---------------------------------------------------------------- tests

@dataclass(frozen=True)
class TFieldValue:
    field: str
    value: object


@dataclass(frozen=True)
class TFieldField:
    f1: str
    f2: str

    def __post_init__(self):
        assert self.f1 < self.f2, "field-field tests are canonicalized"


@dataclass(frozen=True)
class TStateTest:
    var: str
    index: object   # lang Expr
    rhs: object     # lang Expr


def make_ff(f: str, g: str) -> TFieldField:
    return TFieldField(min(f, g), max(f, g))


def format_test(t) -> str:
    if isinstance(t, TFieldValue):
        return f"{t.field} = {format_value(t.value)}"
    if isinstance(t, TFieldField):
        return f"{t.f1} = {t.f2}"
    if isinstance(t, TStateTest):
        return (f"{t.var}[{lang.pretty_expr(t.index)}] = "
                f"{lang.pretty_expr(t.rhs)}")
    raise TypeError(f"not a test: {t!r}")


# ---------------------------------------------------------------- atoms

class _Drop:
    _inst = None

    def __new__(cls):
        if cls._inst is None:
            cls._inst = super().__new__(cls)
        return cls._inst

    def __repr__(self):
        return "DROP"


DROP = _Drop()

# Action atoms reuse the lang node classes: Mod, StateSet, Incr, Decr.


def subst_expr(e, subst: dict):
    if isinstance(e, lang.Lit):
        return e if e.span is None else lang.Lit(e.value)
    if isinstance(e, lang.FieldRef):
        if e.name in subst:
            return lang.Lit(subst[e.name])
        return e if e.span is None else lang.FieldRef(e.name)
    if isinstance(e, lang.TupleExpr):
        return lang.TupleExpr(tuple(subst_expr(x, subst) for x in e.items))
    raise TypeError(f"not an expr: {e!r}")


def canon_seq(atoms: tuple) -> tuple:
    """Canonical action sequence: state ops (index/rhs expressions rewritten
    to refer to the entry packet) stably sorted by variable, then surviving
    field mods sorted by field, then an optional trailing drop."""
    subst: dict = {}
    state_ops = []
    dropped = False
    for a in atoms:
        if a is DROP:
            dropped = True
            break
        if isinstance(a, lang.Mod):
            subst[a.field] = a.value
        elif isinstance(a, lang.StateSet):
            state_ops.append(lang.StateSet(
                a.var, subst_expr(a.index, subst), subst_expr(a.rhs, subst)))
        elif isinstance(a, lang.Incr):
            state_ops.append(lang.Incr(a.var, subst_expr(a.index, subst)))
        elif isinstance(a, lang.Decr):
            state_ops.append(lang.Decr(a.var, subst_expr(a.index, subst)))
        elif isinstance(a, lang.Id):
            continue
        else:
            raise TypeError(f"not an action atom: {a!r}")
    state_ops.sort(key=lambda a: a.var)   # stable: same-var order preserved
    tail: tuple = ()
    if dropped:
        tail = (DROP,)
    else:
        tail = tuple(lang.Mod(f, subst[f]) for f in sorted(subst))
    return tuple(state_ops) + tail


def seq_writes(atoms: tuple) -> frozenset:
    if isinstance(atoms, Poison):
        return frozenset()
    return frozenset(a.var for a in atoms
                     if isinstance(a, (lang.StateSet, lang.Incr, lang.Decr)))


def seq_state_ops(atoms: tuple) -> tuple:
    if isinstance(atoms, Poison):
        return ()
    return tuple(a for a in atoms
                 if isinstance(a, (lang.StateSet, lang.Incr, lang.Decr)))


def seq_effect(atoms: tuple) -> tuple:
    """The packet-effect part (mods + drop flag) of a canonical sequence."""
    mods = tuple(a for a in atoms if isinstance(a, lang.Mod))
    dropped = atoms[-1] is DROP if atoms else False
    return (mods, dropped)


DROP_SEQ = (DROP,)


@dataclass(frozen=True)
class Poison:
    """Leaf marker for a detected update conflict.  Raising is deferred to
    the final reachability check so conflicts inside branches that later
    composition prunes away (code the evaluator never runs) stay silent."""
    var: str


def atom_key(a) -> tuple:
    if a is DROP:
        return (9,)
    if isinstance(a, lang.Mod):
        from .values import canon_key
        return (1, a.field, canon_key(a.value))
    if isinstance(a, lang.StateSet):
        return (2, a.var, expr_key(a.index), expr_key(a.rhs))
    if isinstance(a, lang.Incr):
        return (3, a.var, expr_key(a.index))
    if isinstance(a, lang.Decr):
        return (4, a.var, expr_key(a.index))
    raise TypeError(f"not an action atom: {a!r}")


def elem_key(e) -> tuple:
    if isinstance(e, Poison):
        return ((99, e.var),)
    atoms = e.atoms if isinstance(e, AnnotatedSeq) else e
    return tuple(atom_key(a) for a in atoms)


@dataclass(frozen=True)
class AnnotatedSeq:
    """Leaf element carrying per-run bookkeeping during checked unions."""
    atoms: tuple
    qw: frozenset        # state vars written by this run's second phase
    qr: frozenset        # state vars read by this run (incl. resolved reads)
    pops: tuple          # ((var, count), ...): leading first-phase ops per var


def _pure_drop_elems(elems: frozenset) -> bool:
    if len(elems) != 1:
        return False
    e = next(iter(elems))
    if isinstance(e, Poison):
        return False
    atoms = e.atoms if isinstance(e, AnnotatedSeq) else e
    return atoms == DROP_SEQ


# ---------------------------------------------------------------- context

class Contradiction(Exception):
    """Internal error: a contradicting fact was added to a Context."""


class Context:
    """Immutable set of (test, polarity) path facts with an implication
    closure: same-field value exclusion, finite field domains, prefix
    containment, field-equality transitivity, and state-cell facts."""

    __slots__ = ("schema", "facts", "_parent", "_classes", "_neq", "_st")

    def __init__(self, schema, facts: tuple = ()):
        self.schema = schema          # lang.Program (for field domains)
        self.facts = facts
        self._build()

    def add(self, t, polarity: bool) -> "Context":
        return Context(self.schema, self.facts + ((t, bool(polarity)),))

    # -- closure construction

    def _rep(self, f: str) -> str:
        while self._parent.get(f, f) != f:
            f = self._parent[f]
        return f

    def _union(self, f: str, g: str):
        rf, rg = self._rep(f), self._rep(g)
        if rf != rg:
            if rg < rf:
                rf, rg = rg, rf
            self._parent[rg] = rf

    def _build(self):
        self._parent: dict = {}
        eqs, rest = [], []
        for t, b in self.facts:
            (eqs if isinstance(t, TFieldField) and b else rest).append((t, b))
        for t, _ in eqs:
            self._union(t.f1, t.f2)

        # per-class facts
        val: dict = {}
        noval: dict = {}
        pyes: dict = {}
        pno: dict = {}
        neq: list = []
        st: dict = {}
        for t, b in rest:
            if isinstance(t, TFieldField):
                if self._rep(t.f1) == self._rep(t.f2):
                    raise Contradiction(format_test(t))
                neq.append((self._rep(t.f1), self._rep(t.f2)))
            elif isinstance(t, TFieldValue):
                r = self._rep(t.field)
                if isinstance(t.value, IPv4Network):
                    (pyes if b else pno).setdefault(r, []).append(t.value)
                elif b:
                    if r in val and not values_equal(val[r], t.value):
                        raise Contradiction(format_test(t))
                    val[r] = t.value
                else:
                    noval.setdefault(r, []).append(t.value)
            elif isinstance(t, TStateTest):
                k = (t.var, expr_key(t.index))
                rk = expr_key(t.rhs)
                slot = st.setdefault(k, {"yes": None, "no": set(),
                                         "rhs": {}})
                slot["rhs"][rk] = t.rhs
                if b:
                    if slot["yes"] is not None and slot["yes"] != rk:
                        y1, y2 = slot["rhs"].get(slot["yes"]), t.rhs
                        if (isinstance(y1, lang.Lit)
                                and isinstance(y2, lang.Lit)):
                            raise Contradiction(format_test(t))
                        # two non-literal rhs both "yes": only contradictory
                        # if provably unequal; treat as compatible.
                    if slot["yes"] is None:
                        slot["yes"] = rk
                    if rk in slot["no"]:
                        raise Contradiction(format_test(t))
                else:
                    if slot["yes"] == rk:
                        raise Contradiction(format_test(t))
                    slot["no"].add(rk)
            else:
                raise TypeError(f"not a test: {t!r}")

        # candidate sets per class, from declared finite domains
        classes: dict = {}
        fields = set(self._parent) | {f for f, _ in []}
        for t, b in self.facts:
            if isinstance(t, TFieldValue):
                fields.add(t.field)
            elif isinstance(t, TFieldField):
                fields.update((t.f1, t.f2))
        for f in fields:
            r = self._rep(f)
            c = classes.setdefault(r, {"members": set(), "val": val.get(r),
                                       "noval": noval.get(r, []),
                                       "pyes": pyes.get(r, []),
                                       "pno": pno.get(r, []),
                                       "cands": None})
            c["members"].add(f)
        for r, c in classes.items():
            doms = []
            for f in c["members"]:
                d = self.schema.domain_of(f) if self.schema else None
                if d is not None:
                    doms.append(d)
            cands = None
            for d in doms:
                s = [v for v in d
                     if cands is None or any(values_equal(v, x) for x in cands)]
                cands = s
            if c["val"] is not None:
                if cands is not None and not any(
                        values_equal(c["val"], x) for x in cands):
                    raise Contradiction(f"{r} = {format_value(c['val'])}")
                cands = [c["val"]]
            if cands is not None:
                cands = [v for v in cands
                         if not any(values_equal(v, x) for x in c["noval"])]
                for p in c["pyes"]:
                    cands = [v for v in cands if test_match(v, p)]
                for p in c["pno"]:
                    cands = [v for v in cands if not test_match(v, p)]
                if not cands:
                    raise Contradiction(f"empty domain for {r}")
                if len(cands) == 1 and c["val"] is None:
                    c["val"] = cands[0]
            c["cands"] = cands

        # value-known classes that are neq-linked with equal values
        for r1, r2 in neq:
            a = classes.get(r1, {}).get("val")
            b2 = classes.get(r2, {}).get("val")
            if a is not None and b2 is not None and values_equal(a, b2):
                raise Contradiction(f"{r1} != {r2}")

        self._classes = classes
        self._neq = neq
        self._st = st

    # -- queries

    def _class(self, f: str) -> dict:
        r = self._rep(f)
        c = self._classes.get(r)
        if c is not None:
            return c
        d = self.schema.domain_of(f) if self.schema else None
        return {"val": None, "noval": [], "pyes": [], "pno": [],
                "cands": list(d) if d is not None else None}

    def value_of(self, f: str):
        return self._class(f)["val"]

    def imply(self, t):
        """True / False when the path facts decide t; None otherwise."""
        if isinstance(t, TFieldValue):
            c = self._class(t.field)
            if c["val"] is not None:
                return test_match(c["val"], t.value)
            if isinstance(t.value, IPv4Network):
                for p in c["pyes"]:
                    if p.subnet_of(t.value):
                        return True
                    if not p.overlaps(t.value):
                        return False
                for p in c["pno"]:
                    if t.value.subnet_of(p):
                        return False
                if c["cands"] is not None:
                    hits = [test_match(v, t.value) for v in c["cands"]]
                    if all(hits):
                        return True
                    if not any(hits):
                        return False
                return None
            if any(values_equal(t.value, x) for x in c["noval"]):
                return False
            for p in c["pyes"]:
                if not test_match(t.value, p):
                    return False
            for p in c["pno"]:
                if test_match(t.value, p):
                    return False
            if c["cands"] is not None:
                hits = [values_equal(v, t.value) for v in c["cands"]]
                if not any(hits):
                    return False
                if all(hits):
                    return True
            return None
        if isinstance(t, TFieldField):
            r1, r2 = self._rep(t.f1), self._rep(t.f2)
            if r1 == r2:
                return True
            for a, b in self._neq:
                if {a, b} == {r1, r2}:
                    return False
            c1, c2 = self._class(t.f1), self._class(t.f2)
            if c1["val"] is not None and c2["val"] is not None:
                return values_equal(c1["val"], c2["val"])
            if c1["cands"] is not None and c2["cands"] is not None:
                if not any(values_equal(a, b)
                           for a in c1["cands"] for b in c2["cands"]):
                    return False
            return None
        if isinstance(t, TStateTest):
            slot = self._st.get((t.var, expr_key(t.index)))
            if slot is None:
                return None
            rk = expr_key(t.rhs)
            if slot["yes"] == rk:
                return True
            if rk in slot["no"]:
                return False
            if slot["yes"] is not None:
                y = slot["rhs"].get(slot["yes"])
                if isinstance(y, lang.Lit) and isinstance(t.rhs, lang.Lit):
                    return False    # cell equals a different literal
            return None
        raise TypeError(f"not a test: {t!r}")


# ---------------------------------------------------------------- arena

class Arena:
    """Hash-consing arena; node ids are dense ints, structurally unique."""

    def __init__(self, order: OrderSpec):
        self.order = order
        self.nodes: list = []
        self._ids: dict = {}

    def _intern(self, node) -> int:
        i = self._ids.get(node)
        if i is None:
            i = len(self.nodes)
            self.nodes.append(node)
            self._ids[node] = i
        return i

    def leaf(self, elems) -> int:
        fs = frozenset(elems)
        assert fs, "leaves are non-empty"
        return self._intern(("L", fs))

    def branch(self, t, hi: int, lo: int) -> int:
        return self._intern(("B", t, hi, lo))

    def node(self, i: int):
        return self.nodes[i]

    def is_leaf(self, i: int) -> bool:
        return self.nodes[i][0] == "L"

    def elems(self, i: int) -> frozenset:
        return self.nodes[i][1]

    def test_of(self, i: int):
        return self.nodes[i][1]

    def hi(self, i: int) -> int:
        return self.nodes[i][2]

    def lo(self, i: int) -> int:
        return self.nodes[i][3]


# ---------------------------------------------------------------- builder

class Builder:
    def __init__(self, prog: lang.Program, order: OrderSpec,
                 arena: Arena | None = None):
        self.prog = prog
        self.order = order
        self.arena = arena if arena is not None else Arena(order)
        self._neg_memo: dict = {}

    # -- small helpers

    def key(self, t):
        return self.order.test_key(t)

    def empty_ctx(self) -> Context:
        return Context(self.prog)

    def id_leaf(self) -> int:
        return self.arena.leaf({()})

    def drop_leaf(self, annotated: bool = False) -> int:
        if annotated:
            e = AnnotatedSeq(DROP_SEQ, frozenset(), frozenset(), ())
            return self.arena.leaf({e})
        return self.arena.leaf({DROP_SEQ})

    def _leaf_annotated(self, d: int) -> bool:
        a = self.arena
        stack = [d]
        while stack:
            i = stack.pop()
            if a.is_leaf(i):
                for e in a.elems(i):
                    if not isinstance(e, Poison):
                        return isinstance(e, AnnotatedSeq)
            else:
                stack.append(a.hi(i))
                stack.append(a.lo(i))
        return False

    # -- public operators -------------------------------------------------

    def neg(self, d: int) -> int:
        a = self.arena
        if d in self._neg_memo:
            return self._neg_memo[d]
        if a.is_leaf(d):
            elems = self._merge_by_effect(a.elems(d))
            if elems == {()}:
                r = self.drop_leaf()
            elif elems == {DROP_SEQ}:
                r = self.id_leaf()
            else:
                raise ValueError("negation of a non-predicate diagram")
        else:
            r = a.branch(a.test_of(d), self.neg(a.hi(d)), self.neg(a.lo(d)))
        self._neg_memo[d] = r
        return r

    def _ctx2(self, ctx: Context, t) -> tuple:
        """(hi ctx, lo ctx) for a test, with None marking a side the path
        facts (including declared field domains) rule out entirely."""
        try:
            hi = ctx.add(t, True)
        except Contradiction:
            hi = None
        try:
            lo = ctx.add(t, False)
        except Contradiction:
            lo = None
        if hi is None and lo is None:
            raise Contradiction(format_test(t))
        return hi, lo

    def _branch_ctx(self, t, ctx: Context, fhi, flo) -> int:
        """Branch on t, skipping a side no packet can reach."""
        chi, clo = self._ctx2(ctx, t)
        if chi is None:
            return flo(clo)
        if clo is None:
            return fhi(chi)
        return self.arena.branch(t, fhi(chi), flo(clo))

    def refine(self, d: int, ctx: Context) -> int:
        a = self.arena
        while not a.is_leaf(d):
            dec = ctx.imply(a.test_of(d))
            if dec is None:
                return d
            d = a.hi(d) if dec else a.lo(d)
        return d

    def restrict(self, d: int, t, polarity: bool) -> int:
        a = self.arena
        ann = self._leaf_annotated(d)
        dl = self.drop_leaf(annotated=ann)

        def wrap(x: int) -> int:
            return (a.branch(t, x, dl) if polarity else a.branch(t, dl, x))

        if a.is_leaf(d):
            # drop absorbs field tests, but a state test is a store read the
            # run still performs; keep it so read tracking sees it
            if (_pure_drop_elems(a.elems(d))
                    and not isinstance(t, TStateTest)):
                return d
            return wrap(d)
        t1 = a.test_of(d)
        if t1 == t:
            if polarity:
                return a.branch(t1, a.hi(d), dl)
            return a.branch(t1, dl, a.lo(d))
        if self.key(t) < self.key(t1):
            return wrap(d)
        return a.branch(t1, self.restrict(a.hi(d), t, polarity),
                        self.restrict(a.lo(d), t, polarity))

    def plus(self, d1: int, d2: int, ctx: Context | None = None) -> int:
        """Public checked union of two plain diagrams."""
        if ctx is None:
            ctx = self.empty_ctx()
        a1 = self._annotate(d1)
        a2 = self._annotate(d2)
        return self._strip(self._plus(a1, a2, ctx, checked=True))

    def seq(self, d1: int, d2: int, ctx: Context | None = None) -> int:
        if ctx is None:
            ctx = self.empty_ctx()
        a = self.arena
        if a.is_leaf(d1):
            return self._seq_leaf(a.elems(d1), d2, ctx)
        t = a.test_of(d1)
        chi, clo = self._ctx2(ctx, t)
        if chi is None:
            return self.seq(a.lo(d1), d2, clo)
        if clo is None:
            return self.seq(a.hi(d1), d2, chi)
        hi = self.seq(a.hi(d1), d2, chi)
        lo = self.seq(a.lo(d1), d2, clo)
        return self._plus(self.restrict(hi, t, True),
                          self.restrict(lo, t, False), ctx, checked=False)

    def conj(self, d1: int, d2: int, ctx: Context) -> int:
        """Predicate intersection: passes where both operands pass."""
        a = self.arena
        d1 = self.refine(d1, ctx)
        d2 = self.refine(d2, ctx)
        l1, l2 = a.is_leaf(d1), a.is_leaf(d2)
        if l1 and l2:
            ok = (() in a.elems(d1)) and (() in a.elems(d2))
            return self.id_leaf() if ok else self.drop_leaf()
        if l1:
            t = a.test_of(d2)
            return self._branch_ctx(t, ctx,
                                    lambda c: self.conj(d1, a.hi(d2), c),
                                    lambda c: self.conj(d1, a.lo(d2), c))
        if l2:
            t = a.test_of(d1)
            return self._branch_ctx(t, ctx,
                                    lambda c: self.conj(a.hi(d1), d2, c),
                                    lambda c: self.conj(a.lo(d1), d2, c))
        t1, t2 = a.test_of(d1), a.test_of(d2)
        if t1 == t2:
            return self._branch_ctx(
                t1, ctx,
                lambda c: self.conj(a.hi(d1), a.hi(d2), c),
                lambda c: self.conj(a.lo(d1), a.lo(d2), c))
        if self.key(t1) < self.key(t2):
            return self._branch_ctx(t1, ctx,
                                    lambda c: self.conj(a.hi(d1), d2, c),
                                    lambda c: self.conj(a.lo(d1), d2, c))
        return self._branch_ctx(t2, ctx,
                                lambda c: self.conj(d1, a.hi(d2), c),
                                lambda c: self.conj(d1, a.lo(d2), c))

    def check_races(self, d: int):
        """Final validator: no leaf may hold two sequences writing one var."""
        a = self.arena
        seen = set()

        def go(i: int):
            if i in seen:
                return
            seen.add(i)
            if a.is_leaf(i):
                elems = sorted(a.elems(i), key=elem_key)
                for e in elems:
                    if isinstance(e, Poison):
                        raise RaceError(e.var, leaf_id=i)
                for x in range(len(elems)):
                    for y in range(x + 1, len(elems)):
                        both = seq_writes(elems[x]) & seq_writes(elems[y])
                        if both:
                            raise RaceError(min(both), leaf_id=i)
                return
            go(a.hi(i))
            go(a.lo(i))

        go(d)

    def prune_vacuous(self, d: int) -> int:
        """Collapse branches whose two sides are identical.  A test whose
        outcome can never influence any result is unobservable (state reads
        have no side effects), so deployment may skip it.  Such nodes are
        kept during construction because race checking needs every read;
        call this only on a diagram that already passed check_races."""
        a = self.arena
        memo: dict = {}

        def go(i: int) -> int:
            r = memo.get(i)
            if r is not None:
                return r
            if a.is_leaf(i):
                r = i
            else:
                hi, lo = go(a.hi(i)), go(a.lo(i))
                r = hi if hi == lo else a.branch(a.test_of(i), hi, lo)
            memo[i] = r
            return r

        return go(d)

    # -- translation ------------------------------------------------------

    def to_xfdd(self, p) -> int:
        d = self._translate(p)
        d = self._normalize_leaves(d)
        self.check_races(d)
        return d

    def _translate(self, p) -> int:
        a = self.arena
        if isinstance(p, lang.Id):
            return self.id_leaf()
        if isinstance(p, lang.Drop):
            return self.drop_leaf()
        if isinstance(p, lang.Test):
            return a.branch(TFieldValue(p.field, p.value),
                            self.id_leaf(), self.drop_leaf())
        if isinstance(p, lang.StateTest):
            t = TStateTest(p.var, subst_expr(p.index, {}),
                           subst_expr(p.rhs, {}))
            return a.branch(t, self.id_leaf(), self.drop_leaf())
        if isinstance(p, lang.Mod):
            return a.leaf({canon_seq((lang.Mod(p.field, p.value),))})
        if isinstance(p, lang.StateSet):
            return a.leaf({canon_seq((lang.StateSet(p.var, p.index, p.rhs),))})
        if isinstance(p, lang.Incr):
            return a.leaf({canon_seq((lang.Incr(p.var, p.index),))})
        if isinstance(p, lang.Decr):
            return a.leaf({canon_seq((lang.Decr(p.var, p.index),))})
        if isinstance(p, lang.Neg):
            return self.neg(self._translate(p.p))
        if isinstance(p, (lang.Or, lang.Par)):
            return self.plus(self._translate(p.p), self._translate(p.q))
        if isinstance(p, lang.And):
            # intersection evaluates both operands on the original packet,
            # so both structures (and their state reads) must survive
            return self.conj(self._translate(p.p), self._translate(p.q),
                             self.empty_ctx())
        if isinstance(p, lang.Seq):
            return self.seq(self._translate(p.p), self._translate(p.q))
        if isinstance(p, lang.If):
            dc = self._translate(p.cond)
            ctx = self.empty_ctx()
            dt = self.seq(dc, self._translate(p.then), ctx)
            de = self.seq(self.neg(dc), self._translate(p.els), ctx)
            return self._plus(dt, de, ctx, checked=False)
        if isinstance(p, lang.Atomic):
            return self._translate(p.p)
        raise TypeError(f"not a policy: {p!r}")

    def to_xfdd_program(self) -> int:
        pol = self.prog.body
        if self.prog.assumption is not None:
            pol = lang.Seq(self.prog.assumption, self.prog.body)
        return self.to_xfdd(pol)

    # -- plus (shared recursion, plain or annotated) ----------------------

    def _plus(self, d1: int, d2: int, ctx: Context, checked: bool) -> int:
        a = self.arena
        d1 = self.refine(d1, ctx)
        d2 = self.refine(d2, ctx)
        if d1 == d2 and not checked:
            return d1
        l1, l2 = a.is_leaf(d1), a.is_leaf(d2)
        if l1 and l2:
            return a.leaf(self._join(a.elems(d1), a.elems(d2), checked))
        if l1:
            t = a.test_of(d2)
            return self._branch_ctx(
                t, ctx,
                lambda c: self._plus(d1, a.hi(d2), c, checked),
                lambda c: self._plus(d1, a.lo(d2), c, checked))
        if l2:
            t = a.test_of(d1)
            return self._branch_ctx(
                t, ctx,
                lambda c: self._plus(a.hi(d1), d2, c, checked),
                lambda c: self._plus(a.lo(d1), d2, c, checked))
        t1, t2 = a.test_of(d1), a.test_of(d2)
        if t1 == t2:
            return self._branch_ctx(
                t1, ctx,
                lambda c: self._plus(a.hi(d1), a.hi(d2), c, checked),
                lambda c: self._plus(a.lo(d1), a.lo(d2), c, checked))
        if self.key(t1) < self.key(t2):
            return self._branch_ctx(
                t1, ctx,
                lambda c: self._plus(a.hi(d1), d2, c, checked),
                lambda c: self._plus(a.lo(d1), d2, c, checked))
        return self._branch_ctx(
            t2, ctx,
            lambda c: self._plus(d1, a.hi(d2), c, checked),
            lambda c: self._plus(d1, a.lo(d2), c, checked))

    def _join(self, e1: frozenset, e2: frozenset, checked: bool) -> frozenset:
        if not checked:
            return e1 | e2
        poison = set()
        for x in e1:
            if isinstance(x, Poison):
                continue
            for y in e2:
                if isinstance(y, Poison):
                    continue
                bad = ((x.qw & (y.qr | y.qw)) | (y.qw & x.qr))
                if bad:
                    poison.add(Poison(min(bad)))
        return e1 | e2 | poison

    # -- annotation / stripping -------------------------------------------

    def _annotate(self, d: int) -> int:
        """Plain -> annotated: each element learns its own write set and the
        state tests read along its path; used for parallel-union checks."""
        a = self.arena
        memo: dict = {}

        def go(i: int, reads: frozenset) -> int:
            k = (i, reads)
            if k in memo:
                return memo[k]
            if a.is_leaf(i):
                out = a.leaf({e if isinstance(e, Poison)
                              else AnnotatedSeq(e, seq_writes(e), reads, ())
                              for e in a.elems(i)})
            else:
                t = a.test_of(i)
                r2 = reads | {t.var} if isinstance(t, TStateTest) else reads
                out = a.branch(t, go(a.hi(i), r2), go(a.lo(i), r2))
            memo[k] = out
            return out

        return go(d, frozenset())

    def _strip(self, d: int) -> int:
        a = self.arena
        memo: dict = {}

        def go(i: int) -> int:
            if i in memo:
                return memo[i]
            if a.is_leaf(i):
                out = a.leaf({e if isinstance(e, Poison) else e.atoms
                              for e in a.elems(i)})
            else:
                out = a.branch(a.test_of(i), go(a.hi(i)), go(a.lo(i)))
            memo[i] = out
            return out

        return go(d)

    def _normalize_leaves(self, d: int) -> int:
        """Merge leaf elements with identical packet effect (they correspond
        to one output packet); drop redundant pure-drop elements."""
        a = self.arena
        memo: dict = {}

        def go(i: int) -> int:
            if i in memo:
                return memo[i]
            if a.is_leaf(i):
                out = a.leaf(self._merge_by_effect(a.elems(i)))
            else:
                out = a.branch(a.test_of(i), go(a.hi(i)), go(a.lo(i)))
            memo[i] = out
            return out

        return go(d)

    def _merge_by_effect(self, elems: frozenset) -> set:
        out = set()
        groups: dict = {}
        for e in sorted(elems, key=elem_key):
            if isinstance(e, Poison):
                out.add(e)
                continue
            groups.setdefault(seq_effect(e), []).append(e)
        for (mods, dropped), members in groups.items():
            ops = []
            written = set()
            clash = False
            for m in members:
                w = seq_writes(m)
                dup = written & w
                if dup:
                    out.add(Poison(min(dup)))
                    clash = True
                written |= w
                ops.extend(seq_state_ops(m))
            if clash:
                out.update(members)   # unmergeable; the poison wins anyway
                continue
            ops.sort(key=lambda x: x.var)
            merged = tuple(ops) + mods + ((DROP,) if dropped else ())
            out.add(merged)
        # a bare drop adds nothing next to other outcomes
        if len(out) > 1 and DROP_SEQ in out:
            out.discard(DROP_SEQ)
        return out

    # -- sequential composition base case ---------------------------------

    def _simplify_mods(self, e, ctx: Context):
        """Remove mods that write the value the path context already
        guarantees; makes packet-effect grouping match actual packets."""
        if isinstance(e, Poison):
            return e
        kept = []
        changed = False
        for x in e:
            if isinstance(x, lang.Mod) and not isinstance(
                    x.value, IPv4Network):
                known = ctx.value_of(x.field)
                if known is not None and values_equal(known, x.value):
                    changed = True
                    continue
            kept.append(x)
        return tuple(kept) if changed else e

    def _collision_tests(self, runs: set, ctx: Context) -> list:
        """Tests that decide whether two distinct-looking runs are actually
        the same output packet (a one-sided mod writing the entry value)."""
        live = [e for e in sorted(runs, key=elem_key)
                if not isinstance(e, Poison) and not (e and e[-1] is DROP)]
        out = []
        for x in range(len(live)):
            m1 = {m.field: m.value for m in live[x] if isinstance(m, lang.Mod)}
            for y in range(x + 1, len(live)):
                m2 = {m.field: m.value
                      for m in live[y] if isinstance(m, lang.Mod)}
                needed = []
                possible = True
                for f in sorted(set(m1) | set(m2)):
                    if f in m1 and f in m2:
                        if not values_equal(m1[f], m2[f]):
                            possible = False
                            break
                        continue
                    v = m1.get(f, m2.get(f))
                    if isinstance(v, IPv4Network):
                        possible = False   # exact-equality test inexpressible
                        break
                    t = TFieldValue(f, v)
                    imp = ctx.imply(t)
                    if imp is False:
                        possible = False
                        break
                    if imp is None:
                        needed.append(t)
                if possible:
                    out.extend(needed)
        out.sort(key=self.key)
        return out

    def _seq_leaf(self, elems: frozenset, d2: int, ctx: Context) -> int:
        # Group the first diagram's outcomes by packet effect: each group is
        # one output packet, i.e. one run of the second diagram.
        runs = self._merge_by_effect(
            {self._simplify_mods(e, ctx) for e in elems})

        # Runs whose packets may coincide depending on entry field values
        # must be split on those values so grouping is exact per context.
        tests = self._collision_tests(runs, ctx)
        if tests:
            t = tests[0]
            chi, clo = self._ctx2(ctx, t)
            if chi is None:
                return self._seq_leaf(elems, d2, clo)
            if clo is None:
                return self._seq_leaf(elems, d2, chi)
            hi = self._seq_leaf(elems, d2, chi)
            lo = self._seq_leaf(elems, d2, clo)
            return self._plus(self.restrict(hi, t, True),
                              self.restrict(lo, t, False),
                              ctx, checked=False)

        pending: dict = {}
        for e in sorted(runs, key=elem_key):
            for op in seq_state_ops(e):
                pending.setdefault(op.var, []).append(op)

        operands = []
        for e in sorted(runs, key=elem_key):
            if isinstance(e, Poison):
                operands.append(self.arena.leaf({e}))
            elif e and e[-1] is DROP:
                ann = AnnotatedSeq(e, frozenset(), frozenset(),
                                   self._pops(e))
                operands.append(self.arena.leaf({ann}))
            else:
                operands.append(self._resolve(e, d2, ctx, pending))
        acc = operands[0]
        for x in operands[1:]:
            acc = self._plus(acc, x, ctx, checked=True)
        return self._finalize_fanout(acc)

    @staticmethod
    def _pops(atoms: tuple) -> tuple:
        counts: dict = {}
        for op in seq_state_ops(atoms):
            counts[op.var] = counts.get(op.var, 0) + 1
        return tuple(sorted(counts.items()))

    def _resolve(self, e: tuple, d2: int, ctx: Context, pending: dict) -> int:
        """Compose one first-phase outcome with the second diagram, deciding
        its tests through the outcome's field mods and the leaf's pending
        state updates."""
        a = self.arena
        subst = {m.field: m.value for m in e if isinstance(m, lang.Mod)}
        e_ops = seq_state_ops(e)
        e_mods = tuple(x for x in e if isinstance(x, lang.Mod))

        def at_leaf(i: int, ctx2: Context, reads: frozenset) -> int:
            # This run's first-phase state ops must appear in exactly one
            # element of the result: the one whose second phase writes the
            # same variable (ordering), else the first surviving element.
            poisons = {q for q in a.elems(i) if isinstance(q, Poison)}
            qelems = sorted((q for q in a.elems(i)
                             if not isinstance(q, Poison)), key=elem_key)
            qwrites = [seq_writes(q) for q in qelems]
            nondrop = [j for j, q in enumerate(qelems)
                       if not (q and q[-1] is DROP)]
            carrier = {}
            for op in e_ops:
                if op.var in carrier:
                    continue
                js = [j for j, w in enumerate(qwrites) if op.var in w]
                carrier[op.var] = (js[0] if js
                                   else nondrop[0] if nondrop else 0)
            out = set(poisons)
            for j, q in enumerate(qelems):
                ops_j = tuple(op for op in e_ops if carrier[op.var] == j)
                atoms = canon_seq(ops_j + e_mods + q)
                out.add(AnnotatedSeq(atoms, seq_writes(q), reads,
                                     self._pops(ops_j)))
            if not qelems:
                out.update(poisons or {AnnotatedSeq(
                    canon_seq(e), frozenset(), reads, self._pops(e_ops))})
            return a.leaf(out)

        def go(i: int, ctx2: Context, reads: frozenset) -> int:
            if a.is_leaf(i):
                return at_leaf(i, ctx2, reads)
            t = a.test_of(i)
            reads2 = reads | ({t.var} if isinstance(t, TStateTest)
                              else frozenset())
            dec = self._decide(t, subst, pending, ctx2)
            if dec is True:
                return go(a.hi(i), ctx2, reads2)
            if dec is False:
                return go(a.lo(i), ctx2, reads2)
            kind, t2 = dec
            if kind == "split":
                # decide an index-equality prerequisite, then retry this node
                hi_i = lo_i = i
                r2 = reads
            else:
                hi_i, lo_i = a.hi(i), a.lo(i)
                r2 = reads2
            chi, clo = self._ctx2(ctx2, t2)
            if chi is None:
                return go(lo_i, clo, r2)
            if clo is None:
                return go(hi_i, chi, r2)
            hi = go(hi_i, chi, r2)
            lo = go(lo_i, clo, r2)
            return self._plus(self.restrict(hi, t2, True),
                              self.restrict(lo, t2, False),
                              ctx2, checked=False)

        return go(d2, ctx, frozenset())

    def _decide(self, t, subst: dict, pending: dict, ctx: Context):
        """True | False | ("test", t') | ("split", equality-test)."""
        if isinstance(t, TFieldValue):
            if t.field in subst:
                return test_match(subst[t.field], t.value)
            imp = ctx.imply(t)
            return imp if imp is not None else ("test", t)
        if isinstance(t, TFieldField):
            va, vb = subst.get(t.f1), subst.get(t.f2)
            if va is not None and vb is not None:
                return values_equal(va, vb)
            if va is not None or vb is not None:
                known = va if va is not None else vb
                other = t.f2 if va is not None else t.f1
                if isinstance(known, IPv4Network):
                    raise UnsupportedCompositionError(
                        other, "prefix-valued field in a field-field test")
                t2 = TFieldValue(other, known)
                imp = ctx.imply(t2)
                return imp if imp is not None else ("test", t2)
            imp = ctx.imply(t)
            return imp if imp is not None else ("test", t)
        if isinstance(t, TStateTest):
            idx = subst_expr(t.index, subst)
            rhs = subst_expr(t.rhs, subst)
            delta = 0
            for u in reversed(pending.get(t.var, [])):
                eq = self._expr_eq(idx, u.index, ctx)
                if eq is False:
                    continue
                if isinstance(eq, tuple):
                    return ("split", eq[1])
                # matched the latest update of this cell
                if isinstance(u, lang.Incr):
                    delta += 1
                    continue
                if isinstance(u, lang.Decr):
                    delta -= 1
                    continue
                return self._finish_state(t.var, u.rhs, rhs, delta, ctx,
                                          idx=None)
            # cell untouched below any matched increments
            return self._finish_state(t.var, None, rhs, delta, ctx, idx=idx)
        raise TypeError(f"not a test: {t!r}")

    def _finish_state(self, var: str, cell_expr, rhs, delta: int,
                      ctx: Context, idx):
        """Cell value is cell_expr + delta (or entry-cell + delta when
        cell_expr is None); decide `cell == rhs`."""
        if delta == 0:
            if cell_expr is None:
                t2 = TStateTest(var, idx, rhs)
                imp = ctx.imply(t2)
                return imp if imp is not None else ("test", t2)
            eq = self._expr_eq(cell_expr, rhs, ctx)
            if isinstance(eq, tuple):
                return ("test", eq[1])
            return eq
        # increments pending: only literal-int arithmetic is representable
        if not (isinstance(rhs, lang.Lit) and isinstance(rhs.value, int)
                and not isinstance(rhs.value, bool)):
            raise UnsupportedCompositionError(
                var, "increment composed against a non-literal test")
        want = rhs.value - delta
        if cell_expr is None:
            t2 = TStateTest(var, idx, lang.Lit(want))
            imp = ctx.imply(t2)
            return imp if imp is not None else ("test", t2)
        if isinstance(cell_expr, lang.Lit):
            if isinstance(cell_expr.value, int) and not isinstance(
                    cell_expr.value, bool):
                return cell_expr.value == want
            return False
        if isinstance(cell_expr, lang.FieldRef):
            t2 = TFieldValue(cell_expr.name, want)
            imp = ctx.imply(t2)
            return imp if imp is not None else ("test", t2)
        raise UnsupportedCompositionError(
            var, "increment composed over a structured stored value")

    def _expr_eq(self, e1, e2, ctx: Context):
        """True | False | ("need", test) for entry-relative expressions."""
        i1 = e1.items if isinstance(e1, lang.TupleExpr) else (e1,)
        i2 = e2.items if isinstance(e2, lang.TupleExpr) else (e2,)
        if len(i1) != len(i2):
            return False
        need = None
        for x, y in zip(i1, i2):
            r = self._scalar_eq(x, y, ctx)
            if r is False:
                return False
            if isinstance(r, tuple) and need is None:
                need = r
        return need if need is not None else True

    def _scalar_eq(self, x, y, ctx: Context):
        if isinstance(x, lang.TupleExpr) or isinstance(y, lang.TupleExpr):
            return self._expr_eq(x, y, ctx)
        if isinstance(x, lang.Lit) and isinstance(y, lang.Lit):
            return values_equal(x.value, y.value)
        if isinstance(x, lang.FieldRef) and isinstance(y, lang.FieldRef):
            if x.name == y.name:
                return True
            t = make_ff(x.name, y.name)
            imp = ctx.imply(t)
            return imp if imp is not None else ("need", t)
        lit, fld = (x, y) if isinstance(x, lang.Lit) else (y, x)
        if isinstance(lit.value, IPv4Network):
            raise UnsupportedCompositionError(
                fld.name, "prefix literal in an index-equality decision")
        t = TFieldValue(fld.name, lit.value)
        imp = ctx.imply(t)
        return imp if imp is not None else ("need", t)

    # -- fan-out finalization ----------------------------------------------

    def _finalize_fanout(self, d: int) -> int:
        a = self.arena
        memo: dict = {}

        def go(i: int) -> int:
            if i in memo:
                return memo[i]
            if a.is_leaf(i):
                out = a.leaf(self._merge_by_effect(
                    self._assemble(a.elems(i))))
            else:
                out = a.branch(a.test_of(i), go(a.hi(i)), go(a.lo(i)))
            memo[i] = out
            return out

        return go(d)

    def _assemble(self, elems: frozenset) -> set:
        """Move first-phase writes of variable s into the element whose run
        writes s, so every variable's full update sequence lives in exactly
        one action sequence (the merged-store semantics of fan-out)."""
        poisons = {e for e in elems if isinstance(e, Poison)}
        items = [[list(e.atoms), dict(e.pops), e]
                 for e in sorted(elems, key=elem_key)
                 if not isinstance(e, Poison)]
        movable_vars = set()
        for atoms, pops, e in items:
            movable_vars |= set(pops)
        for var in sorted(movable_vars):
            owners = [it for it in items if it[1].get(var)]
            qwriters = [it for it in items if var in it[2].qw]
            if not owners or not qwriters:
                continue
            src = owners[0]
            dst = qwriters[0]
            if src is dst:
                continue
            n = src[1][var]
            moved = [x for x in src[0] if isinstance(
                x, (lang.StateSet, lang.Incr, lang.Decr)) and x.var == var][:n]
            for x in moved:
                src[0].remove(x)
            # insert before dst's ops on var (stable by-var canonical order)
            pos = 0
            for k, x in enumerate(dst[0]):
                if isinstance(x, (lang.StateSet, lang.Incr, lang.Decr)):
                    if x.var >= var:
                        pos = k
                        break
                    pos = k + 1
                else:
                    pos = k
                    break
            else:
                pos = len(dst[0])
            dst[0][pos:pos] = moved
        return {self._recanon(atoms) for atoms, _, _ in items} | poisons

    @staticmethod
    def _recanon(atoms: list) -> tuple:
        ops = [x for x in atoms
               if isinstance(x, (lang.StateSet, lang.Incr, lang.Decr))]
        ops.sort(key=lambda x: x.var)
        mods = [x for x in atoms if isinstance(x, lang.Mod)]
        dropped = any(x is DROP for x in atoms)
        tail = (DROP,) if dropped else tuple(mods)
        return tuple(ops) + tail


# ---------------------------------------------------------------- export

def to_dot(arena: Arena, root: int) -> str:
    lines = ["digraph xfdd {", "  node [shape=box];"]
    seen = set()

    def fmt_atom(x) -> str:
        if x is DROP:
            return "drop"
        return lang.pretty_policy(x)

    def fmt_elem(e) -> str:
        if isinstance(e, Poison):
            return f"conflict({e.var})"
        return ", ".join(fmt_atom(x) for x in e) or "id"

    def go(i: int):
        if i in seen:
            return
        seen.add(i)
        if arena.is_leaf(i):
            label = "{" + "; ".join(
                fmt_elem(e)
                for e in sorted(arena.elems(i), key=elem_key)) + "}"
            lines.append(f'  n{i} [shape=ellipse, label="{label}"];')
            return
        lines.append(f'  n{i} [label="{format_test(arena.test_of(i))}"];')
        go(arena.hi(i))
        go(arena.lo(i))
        lines.append(f"  n{i} -> n{arena.hi(i)} [style=solid];")
        lines.append(f"  n{i} -> n{arena.lo(i)} [style=dashed];")

    go(root)
    lines.append("}")
    return "\n".join(lines) + "\n"


# -------------------------------------------------------------- validation

def validate(arena: Arena, root: int, prog: lang.Program,
             order: OrderSpec) -> None:
    """Debug check: strictly increasing test order and satisfiable paths."""

    def go(i: int, ctx: Context, last_key):
        if arena.is_leaf(i):
            for e in arena.elems(i):
                if isinstance(e, Poison):
                    continue
                assert e == canon_seq(e), f"non-canonical leaf element {e}"
            return
        t = arena.test_of(i)
        k = order.test_key(t)
        assert last_key is None or last_key < k, f"order violated at node {i}"
        assert ctx.imply(t) is None, f"redundant test at node {i}"
        go(arena.hi(i), ctx.add(t, True), k)
        go(arena.lo(i), ctx.add(t, False), k)

    go(root, Context(prog), None)


# -------------------------------------------------------------- serialization

def expr_to_json(e):
    if isinstance(e, lang.Lit):
        return {"e": "lit", "v": value_to_json(e.value)}
    if isinstance(e, lang.FieldRef):
        return {"e": "field", "name": e.name}
    if isinstance(e, lang.TupleExpr):
        return {"e": "tuple", "items": [expr_to_json(x) for x in e.items]}
    raise TypeError(f"not an expr: {e!r}")


def expr_from_json(d):
    if d["e"] == "lit":
        return lang.Lit(value_from_json(d["v"]))
    if d["e"] == "field":
        return lang.FieldRef(d["name"])
    if d["e"] == "tuple":
        return lang.TupleExpr(tuple(expr_from_json(x) for x in d["items"]))
    raise ValueError(f"unknown expr tag {d['e']!r}")


def test_to_json(t):
    if isinstance(t, TFieldValue):
        return {"t": "fv", "field": t.field, "value": value_to_json(t.value)}
    if isinstance(t, TFieldField):
        return {"t": "ff", "f1": t.f1, "f2": t.f2}
    if isinstance(t, TStateTest):
        return {"t": "st", "var": t.var, "index": expr_to_json(t.index),
                "rhs": expr_to_json(t.rhs)}
    raise TypeError(f"not a test: {t!r}")


def test_from_json(d):
    if d["t"] == "fv":
        return TFieldValue(d["field"], value_from_json(d["value"]))
    if d["t"] == "ff":
        return TFieldField(d["f1"], d["f2"])
    if d["t"] == "st":
        return TStateTest(d["var"], expr_from_json(d["index"]),
                          expr_from_json(d["rhs"]))
    raise ValueError(f"unknown test tag {d['t']!r}")


def atom_to_json(x):
    if x is DROP:
        return {"a": "drop"}
    if isinstance(x, lang.Mod):
        return {"a": "mod", "field": x.field, "value": value_to_json(x.value)}
    if isinstance(x, lang.StateSet):
        return {"a": "set", "var": x.var, "index": expr_to_json(x.index),
                "rhs": expr_to_json(x.rhs)}
    if isinstance(x, lang.Incr):
        return {"a": "incr", "var": x.var, "index": expr_to_json(x.index)}
    if isinstance(x, lang.Decr):
        return {"a": "decr", "var": x.var, "index": expr_to_json(x.index)}
    raise TypeError(f"not an atom: {x!r}")


def atom_from_json(d):
    if d["a"] == "drop":
        return DROP
    if d["a"] == "mod":
        return lang.Mod(d["field"], value_from_json(d["value"]))
    if d["a"] == "set":
        return lang.StateSet(d["var"], expr_from_json(d["index"]),
                             expr_from_json(d["rhs"]))
    if d["a"] == "incr":
        return lang.Incr(d["var"], expr_from_json(d["index"]))
    if d["a"] == "decr":
        return lang.Decr(d["var"], expr_from_json(d["index"]))
    raise ValueError(f"unknown atom tag {d['a']!r}")
