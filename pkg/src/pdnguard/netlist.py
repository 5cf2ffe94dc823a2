"""PDN circuit graphs: branches, ports, anomaly hooks and process variation.

A :class:`PdnNetlist` is a flat list of two-terminal RLC branches over named
nodes, with ``gnd`` as the reference. Everything here is immutable; edits
return new netlists.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from collections import defaultdict, deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np

GND = "gnd"
FORMAT_VERSION = 1

BRANCH_KINDS = ("resistor", "inductor", "capacitor", "series_rlc", "parallel_rlc")
ANOMALY_KINDS = (
    "parallel_rlc_at_node",
    "series_r_in_branch",
    "remove_branch",
    "replace_branch",
)

# perturbed element values never drop below this fraction of nominal
CLAMP_FRACTION = 1e-6


class NetlistError(ValueError):
    """Raised for malformed netlists or invalid edits."""


@dataclass(frozen=True)
class RlcBranch:
    """Two-terminal element between ``node_a`` and ``node_b``.

    A zero value marks an absent element where zero would be degenerate:
    ``c = 0`` in a series chain is a short, ``r = 0`` or ``l = 0`` in a
    parallel bank is an open. ``tolerance_pct = None`` defers to the
    tolerance model used for sampling.
    """

    id: str
    node_a: str
    node_b: str
    kind: str
    r: float = 0.0
    l: float = 0.0
    c: float = 0.0
    tolerance_pct: float | None = None

    def scaled(self, r: float = 1.0, l: float = 1.0, c: float = 1.0) -> RlcBranch:
        return dataclasses.replace(self, r=self.r * r, l=self.l * l, c=self.c * c)


@dataclass(frozen=True)
class CapacitorSpec:
    """A decoupling capacitor model repeated ``count`` times in parallel."""

    nominal_c: float
    esr: float
    esl: float
    count: int = 1

    def __post_init__(self):
        if not self.nominal_c > 0:
            raise NetlistError(f"capacitor value must be positive, got {self.nominal_c}")
        if self.count < 1:
            raise NetlistError(f"capacitor count must be >= 1, got {self.count}")

    def expand(self, node: str, prefix: str) -> list[RlcBranch]:
        return [
            RlcBranch(f"{prefix}_{k + 1}", node, GND, "series_rlc",
                      r=self.esr, l=self.esl, c=self.nominal_c)
            for k in range(self.count)
        ]


@dataclass(frozen=True)
class AnomalySpec:
    """A board modification that can be switched on with :func:`apply_anomalies`.

    ``target`` is a node id for ``parallel_rlc_at_node`` and a branch id for
    the other kinds. ``branch_kind`` optionally changes the element kind of a
    replaced branch.
    """

    id: str
    kind: str
    target: str
    r: float = 0.0
    l: float = 0.0
    c: float = 0.0
    branch_kind: str | None = None


@dataclass(frozen=True)
class PortSpec:
    index: int
    node: str
    z0: float = 50.0


@dataclass(frozen=True)
class ToleranceModel:
    """Gaussian element variation where ``tolerance`` is the 3-sigma spread."""

    tolerance: float
    seed: int = 0
    distribution: str = "gaussian"

    @property
    def sigma(self) -> float:
        return self.tolerance / 3.0


@dataclass(frozen=True)
class Diagnostic:
    code: str
    subject: str
    message: str

    def __str__(self):
        return f"{self.code}[{self.subject}]: {self.message}"


@dataclass(frozen=True)
class PdnNetlist:
    label: str
    nodes: tuple[str, ...]
    branches: tuple[RlcBranch, ...]
    ports: tuple[PortSpec, ...] = ()
    anomalies: tuple[AnomalySpec, ...] = ()

    def __post_init__(self):
        # normalise list inputs so instances stay hashable and immutable
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "branches", tuple(self.branches))
        object.__setattr__(self, "ports", tuple(self.ports))
        object.__setattr__(self, "anomalies", tuple(self.anomalies))

    @property
    def n_ports(self) -> int:
        return len(self.ports)

    def branch(self, branch_id: str) -> RlcBranch:
        for b in self.branches:
            if b.id == branch_id:
                return b
        raise KeyError(branch_id)

    def anomaly(self, anomaly_id: str) -> AnomalySpec:
        for a in self.anomalies:
            if a.id == anomaly_id:
                return a
        raise KeyError(anomaly_id)

    def with_ports(self, nodes, z0: float = 50.0) -> PdnNetlist:
        ports = tuple(PortSpec(k + 1, n, z0) for k, n in enumerate(nodes))
        return dataclasses.replace(self, ports=ports)

    def with_anomalies(self, *anomalies: AnomalySpec) -> PdnNetlist:
        return dataclasses.replace(self, anomalies=self.anomalies + tuple(anomalies))

    def replace(self, **changes) -> PdnNetlist:
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "label": self.label,
            "nodes": list(self.nodes),
            "branches": [
                {"id": b.id, "kind": b.kind, "a": b.node_a, "b": b.node_b,
                 "r": b.r, "l": b.l, "c": b.c, "tol": b.tolerance_pct}
                for b in self.branches
            ],
            "ports": [{"index": p.index, "node": p.node, "z0": p.z0} for p in self.ports],
            "anomalies": [
                {"id": a.id, "kind": a.kind, "target": a.target,
                 "r": a.r, "l": a.l, "c": a.c, "branch_kind": a.branch_kind}
                for a in self.anomalies
            ],
        }

    def digest(self) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()


# -- JSON -------------------------------------------------------------------

_TOP_KEYS = {"format_version", "label", "nodes", "branches", "ports", "anomalies"}
_BRANCH_KEYS = {"id", "kind", "a", "b", "r", "l", "c", "tol"}
_PORT_KEYS = {"index", "node", "z0"}
_ANOMALY_KEYS = {"id", "kind", "target", "r", "l", "c", "branch_kind"}


def _check_keys(obj, allowed: set, required: set, where: str):
    if not isinstance(obj, dict):
        raise NetlistError(f"{where}: expected an object")
    unknown = set(obj) - allowed
    if unknown:
        raise NetlistError(f"{where}: unknown field(s) {sorted(unknown)}")
    missing = required - set(obj)
    if missing:
        raise NetlistError(f"{where}: missing field(s) {sorted(missing)}")


def netlist_from_dict(doc: dict) -> PdnNetlist:
    _check_keys(doc, _TOP_KEYS, {"label", "nodes", "branches"}, "netlist")
    version = doc.get("format_version", FORMAT_VERSION)
    if version != FORMAT_VERSION:
        raise NetlistError(f"unsupported netlist format_version {version}")
    branches = []
    for k, b in enumerate(doc["branches"]):
        _check_keys(b, _BRANCH_KEYS, {"id", "kind", "a", "b"}, f"branches[{k}]")
        branches.append(RlcBranch(
            str(b["id"]), str(b["a"]), str(b["b"]), b["kind"],
            r=float(b.get("r", 0.0)), l=float(b.get("l", 0.0)), c=float(b.get("c", 0.0)),
            tolerance_pct=None if b.get("tol") is None else float(b["tol"]),
        ))
    ports = []
    for k, p in enumerate(doc.get("ports", [])):
        _check_keys(p, _PORT_KEYS, {"index", "node"}, f"ports[{k}]")
        ports.append(PortSpec(int(p["index"]), str(p["node"]), float(p.get("z0", 50.0))))
    anomalies = []
    for k, a in enumerate(doc.get("anomalies", [])):
        _check_keys(a, _ANOMALY_KEYS, {"id", "kind", "target"}, f"anomalies[{k}]")
        anomalies.append(AnomalySpec(
            str(a["id"]), a["kind"], str(a["target"]),
            r=float(a.get("r", 0.0)), l=float(a.get("l", 0.0)), c=float(a.get("c", 0.0)),
            branch_kind=a.get("branch_kind"),
        ))
    nodes = [str(n) for n in doc["nodes"]]
    return PdnNetlist(str(doc["label"]), tuple(nodes), tuple(branches),
                      tuple(ports), tuple(anomalies))


def load_netlist(path) -> PdnNetlist:
    with open(path) as fh:
        doc = json.load(fh)
    return netlist_from_dict(doc)


def save_netlist(netlist: PdnNetlist, path) -> None:
    Path(path).write_text(json.dumps(netlist.to_dict(), indent=2) + "\n")


# -- validation -------------------------------------------------------------

def _branch_diagnostics(b: RlcBranch) -> list[Diagnostic]:
    out = []
    if b.kind not in BRANCH_KINDS:
        return [Diagnostic("bad-kind", b.id, f"unknown branch kind {b.kind!r}")]
    if b.node_a == b.node_b:
        out.append(Diagnostic("self-loop", b.id, f"both terminals on {b.node_a!r}"))
    vals = {"r": b.r, "l": b.l, "c": b.c}
    for name, v in vals.items():
        if not np.isfinite(v) or v < 0:
            out.append(Diagnostic("negative-value", b.id, f"{name}={v} must be finite and >= 0"))
    if out:
        return out
    if b.kind == "resistor" and b.r <= 0:
        out.append(Diagnostic("degenerate", b.id, "resistor needs r > 0"))
    elif b.kind == "inductor" and b.l <= 0:
        out.append(Diagnostic("degenerate", b.id, "inductor needs l > 0"))
    elif b.kind == "capacitor" and b.c <= 0:
        out.append(Diagnostic("degenerate", b.id, "capacitor needs c > 0"))
    elif b.kind == "series_rlc" and b.r == 0 and b.l == 0 and b.c == 0:
        out.append(Diagnostic("degenerate", b.id, "series_rlc with r = l = c = 0 is an ideal short"))
    elif b.kind == "parallel_rlc" and b.r == 0 and b.l == 0 and b.c == 0:
        out.append(Diagnostic("degenerate", b.id, "parallel_rlc with no elements is an open"))
    if b.tolerance_pct is not None and not 0 <= b.tolerance_pct < 1:
        out.append(Diagnostic("bad-tolerance", b.id, f"tolerance {b.tolerance_pct} outside [0, 1)"))
    return out


def _grounded_nodes(nodes, branches) -> set[str]:
    adj = defaultdict(set)
    for b in branches:
        adj[b.node_a].add(b.node_b)
        adj[b.node_b].add(b.node_a)
    seen = {GND}
    queue = deque([GND])
    while queue:
        n = queue.popleft()
        for m in adj[n]:
            if m not in seen:
                seen.add(m)
                queue.append(m)
    return seen


def floating_nodes(netlist: PdnNetlist) -> list[str]:
    """Nodes with no path to ground; these make the nodal system singular."""
    grounded = _grounded_nodes(netlist.nodes, netlist.branches)
    return [n for n in netlist.nodes if n != GND and n not in grounded]


def validate_netlist(netlist: PdnNetlist) -> list[Diagnostic]:
    """Return one diagnostic per violated netlist invariant (empty when valid)."""
    diags: list[Diagnostic] = []
    node_set = set(netlist.nodes)
    if GND not in node_set:
        diags.append(Diagnostic("no-ground", netlist.label, "node list lacks 'gnd'"))
    if len(node_set) != len(netlist.nodes):
        diags.append(Diagnostic("duplicate-node", netlist.label, "node ids repeat"))

    seen_ids = set()
    for b in netlist.branches:
        if b.id in seen_ids:
            diags.append(Diagnostic("duplicate-branch", b.id, "branch id used twice"))
        seen_ids.add(b.id)
        for n in (b.node_a, b.node_b):
            if n not in node_set:
                diags.append(Diagnostic("unknown-node", b.id, f"terminal {n!r} not declared"))
        diags.extend(_branch_diagnostics(b))

    grounded = _grounded_nodes(netlist.nodes, netlist.branches)
    port_nodes = set()
    for k, p in enumerate(netlist.ports):
        pid = f"port{p.index}"
        if p.index != k + 1:
            diags.append(Diagnostic("port-order", pid, f"port at position {k + 1} has index {p.index}"))
        if not p.z0 > 0:
            diags.append(Diagnostic("bad-z0", pid, f"reference impedance {p.z0} must be > 0"))
        if p.node in port_nodes:
            diags.append(Diagnostic("duplicate-port", pid, f"node {p.node!r} already has a port"))
        port_nodes.add(p.node)
        if p.node == GND:
            diags.append(Diagnostic("ground-port", pid, "port placed on the reference node"))
        elif p.node not in node_set:
            diags.append(Diagnostic("unknown-node", pid, f"port node {p.node!r} not declared"))
        elif p.node not in grounded:
            diags.append(Diagnostic("floating-port", pid, f"node {p.node!r} has no path to gnd"))

    for n in netlist.nodes:
        if n != GND and n not in grounded and n not in port_nodes:
            diags.append(Diagnostic("floating-node", n, "node has no path to gnd"))

    anomaly_ids = set()
    for a in netlist.anomalies:
        if a.id in anomaly_ids:
            diags.append(Diagnostic("duplicate-anomaly", a.id, "anomaly id used twice"))
        anomaly_ids.add(a.id)
        if a.kind not in ANOMALY_KINDS:
            diags.append(Diagnostic("bad-kind", a.id, f"unknown anomaly kind {a.kind!r}"))
        elif a.kind == "parallel_rlc_at_node":
            if a.target not in node_set or a.target == GND:
                diags.append(Diagnostic("unknown-target", a.id, f"node {a.target!r} not usable"))
        elif a.target not in seen_ids:
            diags.append(Diagnostic("unknown-target", a.id, f"branch {a.target!r} not found"))
    return diags


# -- anomaly injection ------------------------------------------------------

def _materialize(net: PdnNetlist, a: AnomalySpec) -> PdnNetlist:
    branches = list(net.branches)
    ids = [b.id for b in branches]
    if a.kind == "parallel_rlc_at_node":
        if a.target not in net.nodes or a.target == GND:
            raise NetlistError(f"anomaly {a.id}: unknown node {a.target!r}")
        branches.append(RlcBranch(a.id, a.target, GND, "series_rlc", r=a.r, l=a.l, c=a.c))
        return net.replace(branches=tuple(branches))
    if a.target not in ids:
        raise NetlistError(f"anomaly {a.id}: no branch {a.target!r} to {a.kind.split('_')[0]}")
    k = ids.index(a.target)
    old = branches[k]
    if a.kind == "remove_branch":
        del branches[k]
        return net.replace(branches=tuple(branches))
    if a.kind == "replace_branch":
        branches[k] = dataclasses.replace(old, kind=a.branch_kind or old.kind, r=a.r, l=a.l, c=a.c)
        return net.replace(branches=tuple(branches))
    if a.kind == "series_r_in_branch":
        mid = f"{old.id}.{a.id}"
        if mid in net.nodes:
            raise NetlistError(f"anomaly {a.id}: split node {mid!r} already exists")
        branches[k] = dataclasses.replace(old, node_b=mid)
        branches.insert(k + 1, RlcBranch(a.id, mid, old.node_b, "resistor", r=a.r))
        return net.replace(nodes=net.nodes + (mid,), branches=tuple(branches))
    raise NetlistError(f"anomaly {a.id}: unknown kind {a.kind!r}")


def apply_anomalies(netlist: PdnNetlist, which=()) -> PdnNetlist:
    """Materialize the selected anomalies, in the order given, as branch edits.

    Applied specs are dropped from the result's anomaly list, the others
    stay switchable; the input is untouched. An empty selection returns an
    equal netlist.
    """
    which = list(which)
    known = {a.id: a for a in netlist.anomalies}
    for aid in which:
        if aid not in known:
            raise NetlistError(f"unknown anomaly id {aid!r}")
    if len(set(which)) != len(which):
        raise NetlistError("anomaly ids selected more than once")
    out = netlist.replace(anomalies=tuple(a for a in netlist.anomalies if a.id not in which))
    for aid in which:
        out = _materialize(out, known[aid])
    return out


def inject(netlist: PdnNetlist, *anomalies: AnomalySpec) -> PdnNetlist:
    """Attach and immediately materialize ad-hoc anomalies."""
    net = netlist.replace(anomalies=tuple(anomalies))
    return apply_anomalies(net, [a.id for a in anomalies])


# -- process variation ------------------------------------------------------

def derive_seed(root: int, *keys) -> int:
    """Stable 64-bit seed from a root seed and any number of string-able keys."""
    h = hashlib.sha256(str(int(root)).encode())
    for key in keys:
        h.update(b"\x1f")
        h.update(str(key).encode())
    return int.from_bytes(h.digest()[:8], "little")


def sample_variation(netlist: PdnNetlist, model: ToleranceModel, trial: int) -> PdnNetlist:
    """Draw one Monte-Carlo instance of ``netlist``.

    Each of r, l, c of every branch gets an independent factor ``1 + eps`` with
    ``eps ~ N(0, (t/3)^2)``. Three draws are consumed per branch whether or not
    the element is present, so streams line up across boards of equal size.
    """
    if model.distribution != "gaussian":
        raise NetlistError(f"unsupported distribution {model.distribution!r}")
    if not 0 <= model.tolerance < 1:
        raise NetlistError(f"tolerance {model.tolerance} outside [0, 1)")
    rng = np.random.default_rng(np.random.SeedSequence([model.seed % 2**64, int(trial)]))
    eps = rng.standard_normal((len(netlist.branches), 3))
    out = []
    for b, e in zip(netlist.branches, eps):
        t = model.tolerance if b.tolerance_pct is None else b.tolerance_pct
        if t == 0:
            out.append(b)
            continue
        f = 1.0 + (t / 3.0) * e
        f = np.maximum(f, CLAMP_FRACTION)
        out.append(dataclasses.replace(b, r=b.r * float(f[0]), l=b.l * float(f[1]), c=b.c * float(f[2])))
    return netlist.replace(branches=tuple(out))


# -- canonical boards -------------------------------------------------------

DECAP_GROUPS = {
    # chain index -> (capacitance, count)
    2: (10e-6, 1),
    3: (4.7e-6, 1),
    4: (470e-9, 2),
    5: (47e-9, 2),
}

ATTINY85 = {"r": 3.0, "l": 21e-9, "c": 0.9e-9}
SOT23 = {"r": 3.0, "l": 1.4e-9, "c": 0.12e-12}


def chain_node(index: int) -> str:
    return f"n{index}"


def make_decap_chain_board(
    doubled: bool = False,
    *,
    port_indices=(1, 2, 3, 4, 5, 6),
    wire_r: float = 0.05,
    wire_l: float = 10e-9,
    esr: float = 0.2,
    esl: float = 8e-9,
    groups: dict | None = None,
    z0: float = 50.0,
    label: str | None = None,
) -> PdnNetlist:
    """Six-position PDN: VRM (1), four decap groups (2-5), SoC (6).

    Consecutive positions are joined by series R-L wireline segments. The
    VRM is unpowered and so contributes nothing. ``groups`` overrides the
    default ``{index: (capacitance, count)}`` table.

    The parasitic defaults describe a two-layer board with mounting and
    trace inductance; lower-loss values give resonances so sharp that
    process variation alone swamps chip-sized anomalies.
    """
    groups = DECAP_GROUPS if groups is None else groups
    nodes = [GND] + [chain_node(k) for k in range(1, 7)]
    branches = [
        RlcBranch(f"W{k}{k + 1}", chain_node(k), chain_node(k + 1), "series_rlc", r=wire_r, l=wire_l)
        for k in range(1, 6)
    ]
    for idx, (cap, count) in sorted(groups.items()):
        spec = CapacitorSpec(cap, esr, esl, count * (2 if doubled else 1))
        branches.extend(spec.expand(chain_node(idx), f"C{idx}"))
    ports = [PortSpec(k + 1, chain_node(i), z0) for k, i in enumerate(port_indices)]
    if label is None:
        label = "decap-chain-12" if doubled else "decap-chain-6"
    return PdnNetlist(label, tuple(nodes), tuple(branches), tuple(ports))


def capacitor_count(netlist: PdnNetlist) -> int:
    return sum(1 for b in netlist.branches if b.kind == "series_rlc" and b.c > 0)
