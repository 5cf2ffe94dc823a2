"""Touchstone v1.0 (.sNp) reader and writer for S- and Z-parameter sweeps."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .solver import BoardSignature, SParamSweep, s_to_z

UNITS = {"HZ": 1.0, "KHZ": 1e3, "MHZ": 1e6, "GHZ": 1e9}
FORMATS = ("RI", "MA", "DB")
PARAMETERS = ("S", "Z")
DIGITS = 9
_EXT = re.compile(r"\.s(\d+)p$", re.IGNORECASE)


class TouchstoneError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass
class TouchstoneDocument:
    """Parsed sweep; ``data`` holds plain complex values (Z in ohms, S unitless)."""

    parameter: str
    freqs: np.ndarray
    data: np.ndarray  # (F, n, n)
    z0: float = 50.0
    unit: str = "HZ"
    fmt: str = "RI"
    comments: list = field(default_factory=list)

    @property
    def n_ports(self) -> int:
        return self.data.shape[1]

    def to_signature(self, label: str = "", provenance: str = "measured") -> BoardSignature:
        if self.parameter == "Z":
            return BoardSignature(self.freqs, self.data, label, provenance,
                                  {"comments": list(self.comments)})
        return s_to_z(self.to_sweep(label), label=label, provenance=provenance)

    def to_sweep(self, label: str = "") -> SParamSweep:
        if self.parameter != "S":
            raise ValueError("document holds Z-parameters, not S")
        return SParamSweep(self.freqs, self.data, np.full(self.n_ports, self.z0), label)


def ports_from_filename(name) -> int | None:
    m = _EXT.search(str(name))
    return int(m.group(1)) if m else None


def _parse_option(tokens, lineno):
    unit, param, fmt, z0 = "GHZ", "S", "MA", 50.0
    i = 0
    while i < len(tokens):
        tok = tokens[i].upper()
        if tok in UNITS:
            unit = tok
        elif tok in PARAMETERS:
            param = tok
        elif tok in ("Y", "H", "G"):
            raise TouchstoneError(f"unsupported parameter type {tok}", lineno)
        elif tok in FORMATS:
            fmt = tok
        elif tok == "R":
            if i + 1 >= len(tokens):
                raise TouchstoneError("option line: R needs a value", lineno)
            try:
                z0 = float(tokens[i + 1])
            except ValueError:
                raise TouchstoneError(f"option line: bad reference resistance {tokens[i + 1]!r}", lineno)
            if not z0 > 0:
                raise TouchstoneError("option line: reference resistance must be > 0", lineno)
            i += 1
        else:
            raise TouchstoneError(f"option line: unknown token {tokens[i]!r}", lineno)
        i += 1
    return unit, param, fmt, z0


def _to_complex(a, b, fmt):
    if fmt == "RI":
        return a + 1j * b
    mag = a if fmt == "MA" else 10.0 ** (a / 20.0)
    ang = np.deg2rad(b)
    return mag * (np.cos(ang) + 1j * np.sin(ang))


def _from_complex(z, fmt):
    if fmt == "RI":
        return z.real, z.imag
    mag = np.abs(z)
    ang = np.rad2deg(np.angle(z))
    if fmt == "MA":
        return mag, ang
    with np.errstate(divide="ignore"):
        return 20.0 * np.log10(mag), ang


def _order(n):
    # flat (row, col) order of one record's value pairs
    if n == 2:
        return [(0, 0), (1, 0), (0, 1), (1, 1)]
    return [(r, c) for r in range(n) for c in range(n)]


def parse_touchstone(text: str, n_ports: int | None = None, *, filename=None) -> TouchstoneDocument:
    """Read a v1.0 document. The port count comes from ``n_ports``, else the
    ``.sNp`` extension of ``filename``, else the first data line (1-3 ports)."""
    if n_ports is None and filename is not None:
        n_ports = ports_from_filename(filename)
    option = None
    comments = []
    rows = []  # (lineno, [floats])
    for lineno, raw in enumerate(text.splitlines(), 1):
        body, _, comment = raw.partition("!")
        if comment.strip() or raw.lstrip().startswith("!"):
            comments.append(comment.strip())
        body = body.strip()
        if not body:
            continue
        if body.startswith("["):
            raise TouchstoneError(f"Touchstone v2.0 keyword {body.split()[0]} not supported (v1.0 only)", lineno)
        if body.startswith("#"):
            if option is not None:
                raise TouchstoneError("second option line", lineno)
            option = _parse_option(body[1:].split(), lineno)
            continue
        try:
            values = [float(t) for t in body.split()]
        except ValueError:
            raise TouchstoneError(f"non-numeric data: {body!r}", lineno)
        if option is None:
            raise TouchstoneError("data before option line", lineno)
        rows.append((lineno, values))
    if option is None:
        raise TouchstoneError("missing option line")
    unit, param, fmt, z0 = option
    if not rows:
        raise TouchstoneError("no data rows")
    if n_ports is None:
        n_ports = {3: 1, 9: 2, 7: 3}.get(len(rows[0][1]))
        if n_ports is None:
            raise TouchstoneError("cannot infer port count; name the file .sNp or pass n_ports", rows[0][0])
    n = int(n_ports)
    per_record = 2 * n * n
    order = _order(n)
    freqs, records = [], []
    i = 0
    while i < len(rows):
        lineno, vals = rows[i]
        freq, values = vals[0], list(vals[1:])
        start = lineno
        i += 1
        # wrapped layouts continue on following lines until the record is full
        while len(values) < per_record and i < len(rows) and n > 2:
            values += rows[i][1]
            lineno = rows[i][0]
            i += 1
        if len(values) != per_record:
            raise TouchstoneError(f"expected {per_record} values for a {n}-port record, got {len(values)}", lineno)
        if not (math.isfinite(freq) and freq >= 0):
            raise TouchstoneError(f"bad frequency {freq!r}", start)
        if freqs and not freq * UNITS[unit] > freqs[-1]:
            raise TouchstoneError("frequencies must be strictly increasing", start)
        freqs.append(freq * UNITS[unit])
        a = np.asarray(values[0::2])
        b = np.asarray(values[1::2])
        flat = _to_complex(a, b, fmt)
        m = np.empty((n, n), dtype=complex)
        for (r, c), v in zip(order, flat):
            m[r, c] = v
        records.append(m)
    return TouchstoneDocument(param, np.asarray(freqs), np.asarray(records), z0, unit, fmt, comments)


def read_touchstone(path) -> TouchstoneDocument:
    path = Path(path)
    return parse_touchstone(path.read_text(), filename=path.name)


def _num(v, digits):
    return f"{float(v):.{digits}g}"


def write_touchstone(obj, *, unit: str = "HZ", fmt: str = "RI", z0: float | None = None,
                     header=(), digits: int = DIGITS) -> str:
    """Text of a v1.0 document for a BoardSignature (Z) or SParamSweep (S).

    ``header`` lines become ``!`` comments after the provenance line.
    """
    from . import __version__
    unit, fmt = unit.upper(), fmt.upper()
    if unit not in UNITS or fmt not in FORMATS:
        raise ValueError(f"unit must be in {sorted(UNITS)}, format in {FORMATS}")
    if isinstance(obj, BoardSignature):
        param, data, ref = "Z", obj.z, 50.0 if z0 is None else float(z0)
        provenance = obj.provenance
    elif isinstance(obj, SParamSweep):
        zs = np.unique(obj.z0)
        if len(zs) != 1:
            raise ValueError("Touchstone v1.0 needs one reference resistance for all ports")
        if z0 is not None and float(z0) != float(zs[0]):
            raise ValueError("S data cannot be re-referenced by the writer; convert first")
        param, data, ref = "S", obj.s, float(zs[0])
        provenance = obj.metadata.get("provenance", "simulated")
    else:
        raise TypeError(f"cannot write {type(obj).__name__}")
    if not np.all(np.isfinite(data)):
        raise ValueError("non-finite values cannot be written")
    n = data.shape[1]
    lines = [f"! pdnguard {__version__} touchstone v1.0", f"! provenance: {provenance}"]
    lines += [f"! {h}" for h in header]
    lines.append(f"# {unit} {param} {fmt} R {ref:g}")
    order = _order(n)
    for f, m in zip(obj.freqs, data):
        a, b = _from_complex(np.array([m[r, c] for r, c in order]), fmt)
        pairs = [f"{_num(x, digits)} {_num(y, digits)}" for x, y in zip(a, b)]
        fstr = _num(f / UNITS[unit], digits)
        if n <= 2:
            lines.append(" ".join([fstr] + pairs))
            continue
        for r in range(n):
            row = pairs[r * n:(r + 1) * n]
            for k in range(0, n, 4):
                chunk = " ".join(row[k:k + 4])
                lines.append(f"{fstr} {chunk}" if r == 0 and k == 0 else f"  {chunk}")
    return "\n".join(lines) + "\n"


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """Largest per-frequency ``max|a - b| / max|b|`` (matrix-wise relative error)."""
    a = np.asarray(a)
    b = np.asarray(b)
    num = np.abs(a - b).reshape(len(a), -1).max(axis=1)
    den = np.abs(b).reshape(len(b), -1).max(axis=1)
    den = np.where(den == 0, 1.0, den)
    return float((num / den).max())

