"""Deployment bundle tests: diagram numbering, splitting, routing rules,
bundle serialization, and structural validation."""

import filecmp
import os

from snapnet import deps, lang, rulegen, topo, xfdd

from conftest import policy_src


def compile_named(names, t=None, **kw):
    prog = lang.compose_all([lang.parse(policy_src(n)) for n in names])
    t = t if t is not None else topo.example12()
    return prog, t, rulegen.compile(prog, t, **kw)


def test_number_nodes_is_preorder_and_total():
    prog = lang.parse(policy_src("dns-tunnel-detect"))
    order = deps.order_spec_program(prog)
    b = xfdd.Builder(prog, order)
    d = b.prune_vacuous(b.to_xfdd_program())
    nodes, root = rulegen.number_nodes(b.arena, d)
    assert root == 0
    assert sorted(nodes) == list(range(len(nodes)))
    for nid, node in nodes.items():
        if node[0] == "branch":
            # children resolve within the table (shared subdiagrams may
            # carry ids lower than the referencing parent)
            assert node[2] in nodes and node[3] in nodes


def test_state_resume_points():
    prog = lang.parse("state s[1] default 0;\nstate t[1] default 0;\n"
                      "field a : small in {0, 1};\n"
                      "if s[0] = 1 then t[0]++ else a <- 1")
    order = deps.order_spec_program(prog)
    b = xfdd.Builder(prog, order)
    nodes, root = rulegen.number_nodes(b.arena, b.to_xfdd_program())
    points = rulegen.state_resume_points(nodes)
    assert "s" in points.values() and "t" in points.values()
    kinds = {k[0] for k in points}
    assert kinds == {"node", "leaf"}


def test_exec_positions_follow_dependencies():
    dep = frozenset({("a", "c"), ("b", "c")})
    placement = {"a": "X", "b": "Y", "c": "X"}
    path = ("I", "X", "Y", "X", "E")
    pos = rulegen._exec_positions(path, frozenset({"a", "b", "c"}),
                                  placement, dep)
    assert pos == {"a": 1, "b": 2, "c": 3}
    # with a straight-through path, c never becomes executable
    pos2 = rulegen._exec_positions(("I", "X", "E"),
                                   frozenset({"a", "b", "c"}),
                                   placement, dep)
    assert pos2 == {"a": 1}


def test_compile_bundle_structure():
    prog, t, bundle = compile_named(
        ["dns-tunnel-detect", "assign-egress", "assumption"])
    assert set(bundle.configs) == set(t.nodes)
    assert set(bundle.placement) == {"orphan", "susp-client", "blacklist"}
    owner = bundle.placement["orphan"]
    cfg = bundle.configs[owner]
    assert "orphan" in cfg.owns
    assert cfg.state_tables["orphan"][0] == 2  # (dstip, dns-rdata) index
    # every flow is fully wired: each hop forwards, the egress emits
    for (u, v), paths in bundle.routing.items():
        for _, path in paths:
            for a in path[:-1]:
                assert bundle.configs[a].resolved[(u, v)][0] == "fwd"
            assert bundle.configs[path[-1]].resolved[(u, v)] == ("emit", v)


def test_validate_bundle_clean_and_detects_damage():
    _, t, bundle = compile_named(
        ["dns-tunnel-detect", "assign-egress", "assumption"])
    assert rulegen.validate_bundle(bundle, t) == []
    bundle.placement["orphan"] = "nowhere"
    problems = rulegen.validate_bundle(bundle, t)
    assert any("unknown switch" in p for p in problems)


def test_unresolved_rules_exist_upstream_of_owner():
    _, t, bundle = compile_named(
        ["dns-tunnel-detect", "assign-egress", "assumption"])
    owner = bundle.placement["orphan"]
    upstream = set()
    for (u, v), paths in bundle.routing.items():
        for _, path in paths:
            if owner in path:
                upstream.update(path[:path.index(owner)])
    with_rules = {sid for sid, cfg in bundle.configs.items()
                  if cfg.unresolved}
    assert with_rules and with_rules <= upstream


def test_unresolved_groups_are_demand_weighted():
    _, t, bundle = compile_named(
        ["dns-tunnel-detect", "assign-egress", "assumption"])
    for cfg in bundle.configs.values():
        for (u, key), rows in cfg.unresolved.items():
            for w, tag, nh in rows:
                assert w == t.demands[(u, tag)]
                assert (cfg.switch, nh) in t.links


def test_recompile_is_byte_identical(tmp_path):
    _, t, b1 = compile_named(
        ["dns-tunnel-detect", "assign-egress", "assumption"])
    _, _, b2 = compile_named(
        ["dns-tunnel-detect", "assign-egress", "assumption"])
    d1, d2 = tmp_path / "one", tmp_path / "two"
    rulegen.write_bundle(b1, str(d1))
    rulegen.write_bundle(b2, str(d2))
    for rel in ("placement.json", "routing.json", "xfdd.dot"):
        assert filecmp.cmp(d1 / rel, d2 / rel, shallow=False), rel
    for name in sorted(os.listdir(d1 / "switch")):
        assert filecmp.cmp(d1 / "switch" / name, d2 / "switch" / name,
                           shallow=False), name


def test_bundle_round_trip(tmp_path):
    _, t, b1 = compile_named(
        ["dns-tunnel-detect", "assign-egress", "assumption"])
    rulegen.write_bundle(b1, str(tmp_path))
    b2 = rulegen.load_bundle(str(tmp_path))
    assert b2.placement == b1.placement
    assert b2.routing == b1.routing
    assert b2.root == b1.root
    assert set(b2.configs) == set(b1.configs)
    for sid in b1.configs:
        c1, c2 = b1.configs[sid], b2.configs[sid]
        assert c2.owns == c1.owns
        assert c2.fragment == c1.fragment
        assert c2.nodes == c1.nodes
        assert c2.resolved == c1.resolved
        assert c2.unresolved == c1.unresolved
    assert rulegen.validate_bundle(b2, t) == []


def test_fixed_placement_forces_te_mode():
    fixed = {"orphan": "C1", "susp-client": "C1", "blacklist": "C1"}
    _, _, bundle = compile_named(
        ["dns-tunnel-detect", "assign-egress", "assumption"], fixed=fixed)
    assert bundle.mode == "TE"
    assert bundle.placement == fixed


def test_walk_routing_with_revisited_switch_generates_rules():
    """A dependency-heavy policy whose flows must double back: rules must
    still be generated for every hop, and the last pre-owner visit wins the
    unresolved entry."""
    _, t, bundle = compile_named(["many-ip-domains", "assign-egress"])
    assert rulegen.validate_bundle(bundle, t) == []
    walks = [path for paths in bundle.routing.values()
             for _, path in paths if len(set(path)) < len(path)]
    assert walks, "expected at least one phased walk in this deployment"
    for path in walks:
        hops = list(zip(path, path[1:]))
        assert len(set(hops)) == len(hops)


def test_phase_times_reported():
    times = {}
    prog = lang.parse(policy_src("stateful-fw"))
    rulegen.compile(prog, topo.example12(), phase_times=times)
    assert set(times) == {"P1", "P2", "P3", "P4", "P5", "P6"}
    assert all(v >= 0 for v in times.values())
