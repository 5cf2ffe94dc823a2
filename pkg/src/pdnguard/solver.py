"""Frequency-domain nodal analysis and Z/S parameter conversions."""

from __future__ import annotations

import csv
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .netlist import GND, PdnNetlist, RlcBranch, floating_nodes, validate_netlist

SYMMETRY_RTOL = 1e-6


class SingularNetworkError(ValueError):
    """The nodal (or conversion) system cannot be solved at some frequency."""

    def __init__(self, message, frequency=None, nodes=()):
        super().__init__(message)
        self.frequency = frequency
        self.nodes = tuple(nodes)


@dataclass(frozen=True)
class FrequencyGrid:
    f_start: float = 300e3
    f_stop: float = 3e9
    points: int = 1024
    spacing: str = "log"

    def __post_init__(self):
        if not 0 < self.f_start < self.f_stop:
            raise ValueError(f"need 0 < f_start < f_stop, got {self.f_start}, {self.f_stop}")
        if self.points < 2:
            raise ValueError("a grid needs at least 2 points")
        if self.spacing not in ("log", "linear"):
            raise ValueError(f"unknown spacing {self.spacing!r}")

    def frequencies(self) -> np.ndarray:
        if self.spacing == "log":
            return np.geomspace(self.f_start, self.f_stop, self.points)
        return np.linspace(self.f_start, self.f_stop, self.points)


@dataclass
class BoardSignature:
    """Z-parameter sweep of one board: ``z[k]`` is the n x n matrix at ``freqs[k]``."""

    freqs: np.ndarray
    z: np.ndarray
    label: str = ""
    provenance: str = "simulated"
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.freqs = np.asarray(self.freqs, dtype=float)
        self.z = np.asarray(self.z, dtype=complex)
        if self.z.ndim != 3 or self.z.shape[1] != self.z.shape[2]:
            raise ValueError(f"z must have shape (F, n, n), got {self.z.shape}")
        if self.z.shape[0] != self.freqs.shape[0]:
            raise ValueError("z and freqs disagree on the number of frequencies")
        if self.provenance not in ("simulated", "measured"):
            raise ValueError(f"unknown provenance {self.provenance!r}")

    @property
    def n_ports(self) -> int:
        return self.z.shape[1]

    def same_shape(self, other: BoardSignature) -> bool:
        return self.n_ports == other.n_ports and np.array_equal(self.freqs, other.freqs)

    def subset(self, ports) -> BoardSignature:
        """Keep only the given 1-based ports, renumbered in the given order."""
        idx = [p - 1 for p in ports]
        return BoardSignature(self.freqs, self.z[:, idx][:, :, idx], self.label,
                              self.provenance, dict(self.metadata))


@dataclass
class SParamSweep:
    freqs: np.ndarray
    s: np.ndarray
    z0: np.ndarray
    label: str = ""
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.freqs = np.asarray(self.freqs, dtype=float)
        self.s = np.asarray(self.s, dtype=complex)
        n = self.s.shape[1]
        self.z0 = np.broadcast_to(np.asarray(self.z0, dtype=float), (n,)).copy()

    @property
    def n_ports(self) -> int:
        return self.s.shape[1]


# -- element stamps ---------------------------------------------------------

def branch_admittance(branch: RlcBranch, f):
    """Admittance of one branch at frequency ``f`` (scalar or array), in siemens."""
    w = 2j * np.pi * np.asarray(f, dtype=float)
    kind = branch.kind
    if kind == "resistor":
        return np.ones_like(w) / branch.r
    if kind == "inductor":
        return 1.0 / (w * branch.l)
    if kind == "capacitor":
        return w * branch.c
    if kind == "series_rlc":
        z = branch.r + w * branch.l
        if branch.c > 0:
            z = z + 1.0 / (w * branch.c)
        return 1.0 / z
    if kind == "parallel_rlc":
        y = w * branch.c
        if branch.r > 0:
            y = y + 1.0 / branch.r
        if branch.l > 0:
            y = y + 1.0 / (w * branch.l)
        return y
    raise ValueError(f"unknown branch kind {kind!r}")


def _node_index(netlist: PdnNetlist) -> dict[str, int]:
    return {n: k for k, n in enumerate(n for n in netlist.nodes if n != GND)}


def admittance_matrices(netlist: PdnNetlist, freqs: np.ndarray) -> np.ndarray:
    """Ground-eliminated nodal admittance matrix at every frequency, shape (F, N, N)."""
    index = _node_index(netlist)
    n = len(index)
    y = np.zeros((len(freqs), n, n), dtype=complex)
    for b in netlist.branches:
        yb = branch_admittance(b, freqs)
        ia = index.get(b.node_a)
        ib = index.get(b.node_b)
        if ia is not None:
            y[:, ia, ia] += yb
        if ib is not None:
            y[:, ib, ib] += yb
        if ia is not None and ib is not None:
            y[:, ia, ib] -= yb
            y[:, ib, ia] -= yb
    return y


def _solve_block(y: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    return np.linalg.solve(y, np.broadcast_to(rhs, (y.shape[0],) + rhs.shape))


def _locate_singular(y: np.ndarray, freqs: np.ndarray) -> float | None:
    for k in range(len(freqs)):
        try:
            np.linalg.solve(y[k], np.eye(y.shape[1]))
        except np.linalg.LinAlgError:
            return float(freqs[k])
    return None


def solve_z(netlist: PdnNetlist, grid, *, workers: int = 1, check: bool = True) -> BoardSignature:
    """Full n-port Z-parameters of ``netlist`` by complex nodal analysis.

    ``grid`` is a :class:`FrequencyGrid` or an explicit frequency array. Each
    port injects a unit current in turn; the port-node voltages form one
    column of Z. With ``workers > 1`` the frequency axis is split into
    contiguous chunks solved on a thread pool and concatenated in order.
    """
    if check:
        diags = validate_netlist(netlist)
        if diags:
            raise ValueError("invalid netlist: " + "; ".join(map(str, diags)))
    freqs = grid.frequencies() if isinstance(grid, FrequencyGrid) else np.asarray(grid, dtype=float)
    if np.any(freqs <= 0):
        raise ValueError("frequencies must be positive")
    if not netlist.ports:
        raise ValueError("netlist declares no ports")
    index = _node_index(netlist)
    port_idx = [index[p.node] for p in netlist.ports]
    y = admittance_matrices(netlist, freqs)
    rhs = np.zeros((len(index), len(port_idx)), dtype=complex)
    rhs[port_idx, range(len(port_idx))] = 1.0

    try:
        if workers > 1 and len(freqs) > 1:
            chunks = np.array_split(np.arange(len(freqs)), workers)
            with ThreadPoolExecutor(workers) as pool:
                parts = list(pool.map(lambda c: _solve_block(y[c], rhs), chunks))
            v = np.concatenate(parts, axis=0)
        else:
            v = _solve_block(y, rhs)
    except np.linalg.LinAlgError:
        f_bad = _locate_singular(y, freqs)
        floating = floating_nodes(netlist)
        raise SingularNetworkError(
            f"singular nodal system at f={f_bad:.6g} Hz; floating nodes: {floating or 'none'}",
            f_bad, floating) from None
    z = v[:, port_idx, :]
    if not np.all(np.isfinite(z)):
        bad = int(np.argwhere(~np.isfinite(z))[0][0])
        raise SingularNetworkError(f"non-finite solution at f={freqs[bad]:.6g} Hz",
                                   float(freqs[bad]), floating_nodes(netlist))
    z = _symmetrize(z, freqs)
    return BoardSignature(freqs, z, netlist.label, "simulated")


def _symmetrize(z: np.ndarray, freqs: np.ndarray) -> np.ndarray:
    zt = np.swapaxes(z, 1, 2)
    scale = np.max(np.abs(z), axis=(1, 2))
    scale[scale == 0] = 1.0
    asym = np.max(np.abs(z - zt), axis=(1, 2)) / scale
    worst = int(np.argmax(asym))
    if asym[worst] > SYMMETRY_RTOL:
        raise RuntimeError(f"solver produced a non-reciprocal Z at f={freqs[worst]:.6g} Hz "
                           f"(relative asymmetry {asym[worst]:.3g})")
    return 0.5 * (z + zt)


# -- reduced three-port example -----------------------------------------------

def parallel(*zs):
    """Parallel combination of impedances."""
    y = 0
    for z in zs:
        y = y + 1 / z
    return 1 / y


@dataclass(frozen=True)
class ToyNetwork:
    """Three-port reduction: P1 shunted by ``za``; P1-P2 via ``zb`` with ``zd``
    from P2 to ground; P1-P3 via ``ze`` with ``zc`` from P3 to ground."""

    za: complex
    zb: complex
    zc: complex
    zd: complex
    ze: complex

    def to_netlist(self, f: float) -> PdnNetlist:
        """Realize every impedance as a series R-L or R-C branch valid at ``f``."""
        w = 2 * np.pi * f

        def realize(name, z, a, b):
            z = complex(z)
            if z.real < 0:
                raise ValueError(f"{name}: negative resistance is not realizable")
            if z.imag > 0:
                return RlcBranch(name, a, b, "series_rlc", r=z.real, l=z.imag / w)
            if z.imag < 0:
                return RlcBranch(name, a, b, "series_rlc", r=z.real, c=-1 / (w * z.imag))
            return RlcBranch(name, a, b, "resistor", r=z.real)

        branches = (
            realize("Za", self.za, "p1", GND),
            realize("Zb", self.zb, "p1", "p2"),
            realize("Zd", self.zd, "p2", GND),
            realize("Ze", self.ze, "p1", "p3"),
            realize("Zc", self.zc, "p3", GND),
        )
        net = PdnNetlist("toy", (GND, "p1", "p2", "p3"), branches)
        return net.with_ports(["p1", "p2", "p3"])


def _checked(value):
    if not np.isfinite(value):
        raise ZeroDivisionError("degenerate toy network (zero denominator)")
    return value


def toy_z11(t: ToyNetwork) -> complex:
    try:
        return _checked(parallel(complex(t.za), t.zb + t.zd, t.zc + t.ze))
    except ZeroDivisionError as exc:
        raise ZeroDivisionError("degenerate toy network (zero denominator)") from exc


def toy_z13(t: ToyNetwork) -> complex:
    """Transfer impedance P1 -> P3.

    Evaluated in impedance form ``zc * zp / (zp + zc + ze)`` with
    ``zp = za || (zb + zd)``; the admittance-form ratio printed for this
    network is its reciprocal.
    """
    try:
        zp = parallel(complex(t.za), t.zb + t.zd)
        return _checked(t.zc * zp / (zp + t.zc + t.ze))
    except ZeroDivisionError as exc:
        raise ZeroDivisionError("degenerate toy network (zero denominator)") from exc


# -- S <-> Z ----------------------------------------------------------------

def _as_z0(z0, n):
    z0 = np.broadcast_to(np.asarray(z0, dtype=float), (n,))
    if np.any(z0 <= 0):
        raise ValueError("reference impedances must be positive")
    return z0


def _inverse_each(m: np.ndarray, freqs, what: str) -> np.ndarray:
    try:
        inv = np.linalg.inv(m)
    except np.linalg.LinAlgError:
        inv = None
    if inv is None or not np.all(np.isfinite(inv)):
        for k in range(m.shape[0]):
            try:
                ik = np.linalg.inv(m[k])
                if np.all(np.isfinite(ik)):
                    continue
            except np.linalg.LinAlgError:
                pass
            raise SingularNetworkError(f"{what} is singular at f={freqs[k]:.6g} Hz", float(freqs[k]))
    return inv


def z_to_s(sig: BoardSignature, z0=50.0) -> SParamSweep:
    """Power-wave S-parameters for real per-port reference impedances ``z0``."""
    n = sig.n_ports
    z0 = _as_z0(z0, n)
    g = np.diag(z0)
    f = np.diag(1 / (2 * np.sqrt(z0)))
    finv = np.diag(2 * np.sqrt(z0))
    inv = _inverse_each(sig.z + g, sig.freqs, "Z + Z0")
    s = f @ (sig.z - g) @ inv @ finv
    return SParamSweep(sig.freqs, s, z0, sig.label, dict(sig.metadata))


def s_to_z(sweep: SParamSweep, *, label: str | None = None, provenance: str = "measured") -> BoardSignature:
    n = sweep.n_ports
    z0 = _as_z0(sweep.z0, n)
    g = np.diag(z0)
    f = np.diag(1 / (2 * np.sqrt(z0)))
    finv = np.diag(2 * np.sqrt(z0))
    eye = np.eye(n)
    inv = _inverse_each(eye - sweep.s, sweep.freqs, "I - S")
    z = finv @ inv @ (sweep.s @ g + g) @ f
    return BoardSignature(sweep.freqs, z, sweep.label if label is None else label,
                          provenance, dict(sweep.metadata))


def shunt_through_z21(s21, z11, z22, z0=50.0):
    """Transfer impedance from a two-port shunt-through measurement.

    ``z11`` and ``z22`` are the separately measured self-impedances. Exact
    when port 1 and port 2 see the same node voltage under port-1 drive
    (``z21 == z11``), which is the shunt-through fixture geometry.
    """
    s21 = np.asarray(s21, dtype=complex)
    n11 = np.asarray(z11, dtype=complex) / z0
    n22 = np.asarray(z22, dtype=complex) / z0
    den = 1 + s21 * n11 / 2
    if np.any(den == 0):
        raise ZeroDivisionError("shunt-through denominator vanishes")
    out = s21 * (z0 / 2) * (1 + n11 + n22 + n11 * n22) / den
    return out[()] if out.ndim == 0 else out


# -- CSV --------------------------------------------------------------------

def signature_to_csv(sig: BoardSignature) -> str:
    """Long-format CSV: one ``freq_hz, x, y, re_ohm, im_ohm`` row per entry with x <= y."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["freq_hz", "x", "y", "re_ohm", "im_ohm"])
    n = sig.n_ports
    for k, f in enumerate(sig.freqs):
        for x in range(n):
            for y in range(x, n):
                v = sig.z[k, x, y]
                w.writerow([repr(float(f)), x + 1, y + 1, repr(float(v.real)), repr(float(v.imag))])
    return buf.getvalue()


def signature_from_csv(text: str, label: str = "", provenance: str = "simulated") -> BoardSignature:
    rows = list(csv.DictReader(io.StringIO(text)))
    if not rows:
        raise ValueError("empty signature CSV")
    freqs = sorted({float(r["freq_hz"]) for r in rows})
    n = max(max(int(r["x"]), int(r["y"])) for r in rows)
    fi = {f: k for k, f in enumerate(freqs)}
    z = np.full((len(freqs), n, n), np.nan, dtype=complex)
    for r in rows:
        x, y = int(r["x"]) - 1, int(r["y"]) - 1
        v = complex(float(r["re_ohm"]), float(r["im_ohm"]))
        z[fi[float(r["freq_hz"])], x, y] = v
        z[fi[float(r["freq_hz"])], y, x] = v
    if np.isnan(z).any():
        raise ValueError("signature CSV is missing matrix entries")
    return BoardSignature(np.array(freqs), z, label, provenance)
