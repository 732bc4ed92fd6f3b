"""Shared test utilities: a brute-force diagram walker (independent of the
compiler's own machinery) and a random policy generator over a small
universe of fields, values, and state variables."""

import itertools
import random

from snapnet import interp, lang, xfdd
from snapnet.errors import RaceError, UnsupportedCompositionError
from snapnet.values import test_match, values_equal


# ---------------------------------------------------------------- walker

def eval_test(t, store, pkt):
    if isinstance(t, xfdd.TFieldValue):
        return test_match(pkt[t.field], t.value)
    if isinstance(t, xfdd.TFieldField):
        return values_equal(pkt[t.f1], pkt[t.f2])
    if isinstance(t, xfdd.TStateTest):
        idx = interp.eval_index(t.index, pkt)
        return values_equal(store.get(t.var, idx),
                            interp.eval_expr(t.rhs, pkt))
    raise TypeError(t)


def apply_seq(atoms, store, pkt):
    """Run one leaf action sequence; returns (store, packet-or-None)."""
    pkt = dict(pkt)
    for a in atoms:
        if a is xfdd.DROP:
            return store, None
        if isinstance(a, lang.Mod):
            pkt[a.field] = a.value
        elif isinstance(a, lang.StateSet):
            store = store.set(a.var, interp.eval_index(a.index, pkt),
                              interp.eval_expr(a.rhs, pkt))
        elif isinstance(a, (lang.Incr, lang.Decr)):
            idx = interp.eval_index(a.index, pkt)
            old = store.get(a.var, idx)
            delta = 1 if isinstance(a, lang.Incr) else -1
            store = store.set(a.var, idx, old + delta)
        else:
            raise TypeError(a)
    return store, pkt


def eval_xfdd(arena, root, store, pkt):
    """Walk to a leaf, run every action sequence, merge the results.
    Returns (store, {pkt_key: packet})."""
    i = root
    while not arena.is_leaf(i):
        i = arena.hi(i) if eval_test(arena.test_of(i), store, pkt) else arena.lo(i)
    outs = {}
    stores = []
    for e in sorted(arena.elems(i), key=xfdd.elem_key):
        st2, p2 = apply_seq(e, store, pkt)
        stores.append(st2)
        if p2 is not None:
            outs[interp.pkt_key(p2)] = p2
    return interp.merge_many(store, stores), outs


# ---------------------------------------------------------------- universe

UNIVERSE_SRC = """
state s[1] default 0;
state t[1] default 0;
field a : small in {0, 1};
field b : small in {0, 1};
field c : small in {0, 1};
"""


def universe_prog():
    return lang.parse(UNIVERSE_SRC + "\nid")


def all_packets(prog):
    doms = [sorted(prog.domain_of(f) if prog.domain_of(f) else [0, 1],
                   key=repr) for f in ("a", "b", "c")]
    pkts = []
    for va, vb, vc in itertools.product(*doms):
        pkts.append({"a": va, "b": vb, "c": vc, "inport": 0, "outport": 0})
    return pkts


def all_stores(prog):
    st0 = interp.Store.initial(prog)
    stores = []
    for sv in (0, 1):
        for tv in (0, 1):
            st = st0.set("s", (0,), sv).set("t", (0,), tv)
            stores.append(st)
    return stores


def random_policy(rng: random.Random, depth: int, counters: bool = True):
    fields = ["a", "b", "c"]
    svars = ["s", "t"]

    def expr():
        r = rng.random()
        if r < 0.5:
            return lang.Lit(rng.choice([0, 1]))
        return lang.FieldRef(rng.choice(fields))

    def pred(d):
        r = rng.random()
        if d <= 0 or r < 0.35:
            k = rng.randrange(4)
            if k == 0:
                return lang.Id()
            if k == 1:
                return lang.Drop()
            if k == 2:
                return lang.Test(rng.choice(fields), rng.choice([0, 1]))
            return lang.StateTest(rng.choice(svars), lang.Lit(0), expr())
        k = rng.randrange(3)
        if k == 0:
            return lang.Neg(pred(d - 1))
        if k == 1:
            return lang.Or(pred(d - 1), pred(d - 1))
        return lang.And(pred(d - 1), pred(d - 1))

    def pol(d):
        r = rng.random()
        if d <= 0 or r < 0.3:
            k = rng.randrange(6)
            if k == 0:
                return lang.Mod(rng.choice(fields), rng.choice([0, 1]))
            if k in (2, 3) and counters:
                cls = lang.Incr if k == 2 else lang.Decr
                return cls(rng.choice(svars), lang.Lit(0))
            if k in (1, 2, 3):
                return lang.StateSet(rng.choice(svars), lang.Lit(0), expr())
            return pred(1)
        k = rng.randrange(4)
        if k == 0:
            return lang.Par(pol(d - 1), pol(d - 1))
        if k == 1:
            return lang.Seq(pol(d - 1), pol(d - 1))
        if k == 2:
            return lang.If(pred(d - 1), pol(d - 1), pol(d - 1))
        return lang.Atomic(pol(d - 1))

    return pol(depth)
