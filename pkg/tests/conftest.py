import os
import sys

sys.path.insert(0, os.path.dirname(__file__))

POLICY_DIR = os.path.join(os.path.dirname(__file__), "..",
                          "examples", "policies")
TOPO_DIR = os.path.join(os.path.dirname(__file__), "..",
                        "examples", "topologies")


def policy_path(name: str) -> str:
    return os.path.join(POLICY_DIR, name + ".snap")


def policy_src(name: str) -> str:
    with open(policy_path(name)) as f:
        return f.read()


# The detection/monitoring policies that compose with assign-egress on the
# twelve-switch topology (excludes the purpose-built race variants and the
# deliberately ill-formed examples).
CORPUS = [
    "many-ip-domains", "many-domain-ips", "stateful-fw", "dns-ttl-change",
    "ftp-monitoring", "spam-detection", "heavy-hitter-detection",
    "sidejacking", "super-spreader-detection", "flow-size-detect",
    "sampling-based-flow-size", "sample-small", "sample-medium",
    "sample-large", "selective-packet-dropping", "conn-affinity",
    "dns-amplification", "udp-flood", "snort-flowbits",
    "basic-tcp-reassembly", "honeypot", "dns-tunnel-detect",
]

ALL_POLICIES = CORPUS + [
    "assign-egress", "assumption",
    "race-honeypot-atomic", "race-honeypot-plain",
    "parallel-distinct-vars",
]
