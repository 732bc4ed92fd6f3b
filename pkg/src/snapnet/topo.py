"""Network topology model and JSON format.

Nodes are switches; a subset are edge switches exposing external (one-big-
switch) port numbers.  Links are directed with capacities; demands are
volumes between external port pairs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field


@dataclass
class Node:
    id: str
    external_ports: tuple = ()


@dataclass
class Link:
    src: str
    dst: str
    capacity: float


@dataclass
class Topology:
    nodes: dict                     # id -> Node
    links: dict                     # (src, dst) -> Link
    demands: dict                   # (u, v) -> volume  (external port pairs)

    def external_ports(self) -> list:
        out = []
        for n in sorted(self.nodes):
            out.extend(self.nodes[n].external_ports)
        return sorted(out)

    def node_of_port(self, port: int) -> str:
        for n in sorted(self.nodes):
            if port in self.nodes[n].external_ports:
                return n
        raise KeyError(f"no node exposes external port {port}")

    def _adjacency(self) -> tuple:
        # treated as immutable after construction; cache keyed on size
        cache = getattr(self, "_adj_cache", None)
        if cache is None or cache[0] != len(self.links):
            out: dict = {n: [] for n in self.nodes}
            inn: dict = {n: [] for n in self.nodes}
            for (s, d) in sorted(self.links):
                out[s].append(self.links[(s, d)])
                inn[d].append(self.links[(s, d)])
            cache = (len(self.links), out, inn)
            self._adj_cache = cache
        return cache

    def out_links(self, node: str) -> list:
        return self._adjacency()[1][node]

    def in_links(self, node: str) -> list:
        return self._adjacency()[2][node]

    def validate(self):
        if not self.nodes:
            raise ValueError("empty topology")
        seen_ports = set()
        for n in self.nodes.values():
            for p in n.external_ports:
                if p in seen_ports:
                    raise ValueError(f"external port {p} exposed twice")
                seen_ports.add(p)
        for (s, d), l in self.links.items():
            if s not in self.nodes or d not in self.nodes:
                raise ValueError(f"link {s}->{d} references unknown node")
            if l.capacity <= 0:
                raise ValueError(f"link {s}->{d} capacity must be positive")
        for (u, v), vol in self.demands.items():
            if u not in seen_ports or v not in seen_ports:
                raise ValueError(f"demand ({u},{v}) uses unknown port")
            if vol < 0:
                raise ValueError(f"demand ({u},{v}) volume must be >= 0")


def from_json(data: dict) -> Topology:
    nodes = {}
    for n in data["nodes"]:
        nodes[n["id"]] = Node(n["id"], tuple(n.get("external_ports", [])))
    links = {}
    for l in data["links"]:
        key = (l["from"], l["to"])
        links[key] = Link(l["from"], l["to"], float(l["capacity"]))
        if l.get("bidirectional", True) and (l["to"], l["from"]) not in links:
            links[(l["to"], l["from"])] = Link(l["to"], l["from"],
                                               float(l["capacity"]))
    demands = {}
    for d in data.get("demands", []):
        demands[(int(d["u"]), int(d["v"]))] = float(d["volume"])
    t = Topology(nodes, links, demands)
    t.validate()
    return t


def load(path: str) -> Topology:
    with open(path) as f:
        return from_json(json.load(f))


def to_json(t: Topology) -> dict:
    # emit directed links explicitly for byte-stable round trips
    return {
        "nodes": [{"id": n.id, "external_ports": list(n.external_ports)}
                  for _, n in sorted(t.nodes.items())],
        "links": [{"from": l.src, "to": l.dst, "capacity": l.capacity,
                   "bidirectional": False}
                  for _, l in sorted(t.links.items())],
        "demands": [{"u": u, "v": v, "volume": vol}
                    for (u, v), vol in sorted(t.demands.items())],
    }


def example12() -> Topology:
    """The twelve-switch evaluation topology: two ingress edges (I1, I2),
    four department edges (D1-D4), six core switches (C1-C6)."""
    nodes = {}
    for name, ports in [("I1", (1,)), ("I2", (2,)),
                        ("D1", (3,)), ("D2", (4,)), ("D3", (5,)),
                        ("D4", (6,)),
                        ("C1", ()), ("C2", ()), ("C3", ()),
                        ("C4", ()), ("C5", ()), ("C6", ())]:
        nodes[name] = Node(name, ports)
    pairs = [("I1", "C1"), ("I2", "C2"),
             ("D1", "C1"), ("D2", "C2"), ("D3", "C5"),
             ("D4", "C5"), ("D4", "C6"),
             ("C1", "C5"), ("C1", "C3"), ("C3", "C5"),
             ("C2", "C6"), ("C2", "C4"), ("C4", "C6"),
             ("C3", "C4"), ("C5", "C6")]
    links = {}
    for s, d in pairs:
        links[(s, d)] = Link(s, d, 10.0)
        links[(d, s)] = Link(d, s, 10.0)
    demands = {}
    ports = [1, 2, 3, 4, 5, 6]
    for u in ports:
        for v in ports:
            if u != v:
                demands[(u, v)] = 1.0
    t = Topology(nodes, links, demands)
    t.validate()
    return t


def generated(n_switches: int, seed: int = 7, edge_fraction: float = 0.7,
              capacity: float = 10.0,
              demand_volume: float | None = None) -> Topology:
    """Random connected topology; the lowest-degree fraction of switches
    become edges, each exposing one external port.  Demand units are
    abstract; the default volume is scaled so the all-pairs demand matrix
    fits the link capacities with room to spare."""
    import random
    rng = random.Random(seed)
    names = [f"S{i}" for i in range(n_switches)]
    links = {}

    def add(a, b):
        links[(a, b)] = Link(a, b, capacity)
        links[(b, a)] = Link(b, a, capacity)

    # random spanning tree, then extra chords
    order = names[:]
    rng.shuffle(order)
    for i in range(1, len(order)):
        add(order[i], rng.choice(order[:i]))
    extra = n_switches  # average degree ~4
    for _ in range(extra):
        a, b = rng.sample(names, 2)
        if (a, b) not in links:
            add(a, b)

    degree = {n: 0 for n in names}
    for (s, _) in links:
        degree[s] += 1
    by_degree = sorted(names, key=lambda n: (degree[n], n))
    n_edge = max(2, int(round(edge_fraction * n_switches)))
    edge_nodes = by_degree[:n_edge]

    nodes = {}
    port = 1
    for n in names:
        if n in edge_nodes:
            nodes[n] = Node(n, (port,))
            port += 1
        else:
            nodes[n] = Node(n, ())
    ports = [nodes[n].external_ports[0] for n in edge_nodes]
    if demand_volume is None:
        # an edge switch must sink (n_ports - 1) flows over as few as two
        # links; keep the aggregate comfortably under the link capacity
        demand_volume = capacity / (2 * max(1, len(ports)))
    demands = {}
    for u in ports:
        for v in ports:
            if u != v:
                demands[(u, v)] = demand_volume
    t = Topology(nodes, links, demands)
    t.validate()
    return t
