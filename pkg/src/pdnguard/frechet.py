"""Impedance-profile curves and Frechet-distance board comparison."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np
from numba import njit

from .solver import BoardSignature

MAG_FLOOR = 1e-12
NORMS = ("L1", "L2", "Linf")


@dataclass(frozen=True)
class FdConfig:
    norm_order: str = "L2"

    def __post_init__(self):
        if self.norm_order not in NORMS:
            raise ValueError(f"norm_order must be one of {NORMS}, got {self.norm_order!r}")


@dataclass(frozen=True, eq=False)
class ProfileCurve:
    """Polyline of ``(u, v)``: normalized log-frequency vs ``log10 |Z|``."""

    u: np.ndarray
    v: np.ndarray

    def __len__(self):
        return len(self.u)

    @property
    def points(self) -> np.ndarray:
        return np.column_stack([self.u, self.v])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["u", "v"])
        for a, b in zip(self.u, self.v):
            w.writerow([repr(float(a)), repr(float(b))])
        return buf.getvalue()


def log_abscissa(freqs: np.ndarray) -> np.ndarray:
    lf = np.log10(np.asarray(freqs, dtype=float))
    span = lf[-1] - lf[0]
    if len(lf) == 1:
        return np.zeros(1)
    return (lf - lf[0]) / span


def log_magnitude(z) -> np.ndarray:
    return np.log10(np.maximum(np.abs(z), MAG_FLOOR))


def embed_profile(sig: BoardSignature, x: int, y: int) -> ProfileCurve:
    """Curve for the 1-based Z-parameter ``Z_xy`` of ``sig``."""
    n = sig.n_ports
    if not (1 <= x <= n and 1 <= y <= n):
        raise IndexError(f"port pair ({x}, {y}) outside 1..{n}")
    return ProfileCurve(log_abscissa(sig.freqs), log_magnitude(sig.z[:, x - 1, y - 1]))


@njit(cache=True, nogil=True)
def _dfd_sq(ua, va, ub, vb):
    # Eiter & Mannila recurrence on squared distances, one row at a time
    p = ua.shape[0]
    q = ub.shape[0]
    row = np.empty(q)
    du = ua[0] - ub[0]
    dv = va[0] - vb[0]
    row[0] = du * du + dv * dv
    for j in range(1, q):
        du = ua[0] - ub[j]
        dv = va[0] - vb[j]
        row[j] = max(du * du + dv * dv, row[j - 1])
    for i in range(1, p):
        diag = row[0]
        du = ua[i] - ub[0]
        dv = va[i] - vb[0]
        row[0] = max(du * du + dv * dv, row[0])
        for j in range(1, q):
            up = row[j]
            du = ua[i] - ub[j]
            dv = va[i] - vb[j]
            row[j] = max(du * du + dv * dv, min(diag, up, row[j - 1]))
            diag = up
    return row[q - 1]


@njit(cache=True, nogil=True)
def _dfd_sq_banded(ua, va, ub, vb, bound):
    # Same recurrence restricted to cells whose abscissa gap alone stays
    # within ``bound`` (a squared distance achieved by some coupling). Cells
    # outside cannot lie on an optimal coupling, so the result is exact.
    # Requires non-decreasing ua and ub.
    p = ua.shape[0]
    q = ub.shape[0]
    inf = np.inf
    row = np.full(q, inf)
    lo_prev = 0
    lo = 0
    hi = -1
    for i in range(p):
        while lo < q and (ub[lo] - ua[i]) ** 2 > bound and ub[lo] < ua[i]:
            lo += 1
        while hi + 1 < q and not ((ub[hi + 1] - ua[i]) ** 2 > bound and ub[hi + 1] > ua[i]):
            hi += 1
        diag = row[lo - 1] if (lo >= 1 and i > 0) else inf
        for j in range(lo_prev, lo):
            row[j] = inf
        left = inf
        for j in range(lo, hi + 1):
            up = row[j] if i > 0 else inf
            du = ua[i] - ub[j]
            dv = va[i] - vb[j]
            d = du * du + dv * dv
            if i == 0 and j == 0:
                best = 0.0
            else:
                best = min(diag, up, left)
            val = max(d, best)
            row[j] = val
            left = val
            diag = up
        lo_prev = lo
    return row[q - 1]


@njit(cache=True, nogil=True)
def _dfd_fast(ua, va, ub, vb):
    p = ua.shape[0]
    q = ub.shape[0]
    monotone = True
    for i in range(1, p):
        if ua[i] < ua[i - 1]:
            monotone = False
    for j in range(1, q):
        if ub[j] < ub[j - 1]:
            monotone = False
    if not monotone or p != q:
        return _dfd_sq(ua, va, ub, vb)
    # the index-aligned coupling gives an upper bound on the optimum
    bound = 0.0
    for i in range(p):
        du = ua[i] - ub[i]
        dv = va[i] - vb[i]
        bound = max(bound, du * du + dv * dv)
    return _dfd_sq_banded(ua, va, ub, vb, bound)


def frechet(a: ProfileCurve, b: ProfileCurve) -> float:
    """Discrete Frechet distance between two curves (Euclidean in ``(u, v)``)."""
    if len(a) == 0 or len(b) == 0:
        raise ValueError("Frechet distance of an empty curve is undefined")
    return float(np.sqrt(_dfd_fast(
        np.ascontiguousarray(a.u, dtype=np.float64), np.ascontiguousarray(a.v, dtype=np.float64),
        np.ascontiguousarray(b.u, dtype=np.float64), np.ascontiguousarray(b.v, dtype=np.float64))))


def optimal_coupling(a: ProfileCurve, b: ProfileCurve) -> list[tuple[int, int]]:
    """A coupling (1-based index pairs) that attains :func:`frechet`.

    Builds the full table, so intended for short curves and inspection.
    """
    pa, pb = a.points, b.points
    d = np.sqrt(((pa[:, None, :] - pb[None, :, :]) ** 2).sum(-1))
    p, q = d.shape
    ca = np.empty_like(d)
    for i in range(p):
        for j in range(q):
            if i == 0 and j == 0:
                prev = 0.0
            elif i == 0:
                prev = ca[0, j - 1]
            elif j == 0:
                prev = ca[i - 1, 0]
            else:
                prev = min(ca[i - 1, j], ca[i, j - 1], ca[i - 1, j - 1])
            ca[i, j] = max(prev, d[i, j])
    path = [(p - 1, q - 1)]
    i, j = p - 1, q - 1
    while (i, j) != (0, 0):
        steps = [(i - 1, j - 1), (i - 1, j), (i, j - 1)]
        steps = [(s, t) for s, t in steps if s >= 0 and t >= 0]
        i, j = min(steps, key=lambda st: ca[st])
        path.append((i, j))
    return [(i + 1, j + 1) for i, j in reversed(path)]


def port_pairs(n: int) -> list[tuple[int, int]]:
    """All distinct Z-parameters of an n-port, ``(x, y)`` with ``x <= y``, 1-based."""
    return [(x, y) for x in range(1, n + 1) for y in range(x, n + 1)]


def aggregate(fds, cfg: FdConfig) -> float:
    """Vector norm of per-profile distances divided by their count."""
    fds = np.asarray(fds, dtype=float)
    if cfg.norm_order == "L1":
        total = np.sum(np.abs(fds))
    elif cfg.norm_order == "L2":
        total = np.sqrt(np.sum(fds * fds))
    else:
        total = np.max(np.abs(fds))
    return float(total / len(fds))


class ProfileSet:
    """Pre-embedded curves of one board for a fixed list of port pairs.

    Campaigns compare each board many times; embedding once keeps the
    comparisons to the dynamic program alone.
    """

    def __init__(self, sig: BoardSignature, pairs=None):
        self.pairs = list(pairs) if pairs is not None else port_pairs(sig.n_ports)
        for x, y in self.pairs:
            if not (1 <= x <= sig.n_ports and 1 <= y <= sig.n_ports):
                raise IndexError(f"port pair ({x}, {y}) outside 1..{sig.n_ports}")
        self.freqs = sig.freqs
        self.u = np.ascontiguousarray(log_abscissa(sig.freqs))
        self.v = np.ascontiguousarray(np.stack(
            [log_magnitude(sig.z[:, x - 1, y - 1]) for x, y in self.pairs]))
        self.label = sig.label

    def fds(self, other: ProfileSet) -> np.ndarray:
        if self.pairs != other.pairs or not np.array_equal(self.freqs, other.freqs):
            raise ValueError("profile sets differ in grid or port pairs")
        return np.array([np.sqrt(_dfd_fast(self.u, self.v[k], other.u, other.v[k]))
                         for k in range(len(self.pairs))])

    def distance(self, other: ProfileSet, cfg: FdConfig) -> float:
        return aggregate(self.fds(other), cfg)


def _check_shapes(b1: BoardSignature, b2: BoardSignature):
    if b1.n_ports != b2.n_ports:
        raise ValueError(f"port count mismatch: {b1.n_ports} vs {b2.n_ports}")
    if not np.array_equal(b1.freqs, b2.freqs):
        raise ValueError("frequency grids differ; resample explicitly before comparing")


def fd_prime(b1: BoardSignature, b2: BoardSignature, cfg: FdConfig = FdConfig(),
             pairs=None) -> float:
    """Board-to-board distance: normalized norm of per-Z-parameter Frechet distances.

    ``pairs`` restricts the comparison to a subset of Z-parameters; the
    divisor is then the subset size.
    """
    _check_shapes(b1, b2)
    return ProfileSet(b1, pairs).distance(ProfileSet(b2, pairs), cfg)


def fd_prime_matrix(boards, cfg: FdConfig = FdConfig(), pairs=None) -> np.ndarray:
    sets = [ProfileSet(b, pairs) for b in boards]
    for b in boards[1:]:
        _check_shapes(boards[0], b)
    m = np.zeros((len(sets), len(sets)))
    for i in range(len(sets)):
        for j in range(i + 1, len(sets)):
            m[i, j] = m[j, i] = sets[i].distance(sets[j], cfg)
    return m


def matrix_to_csv(m: np.ndarray, labels) -> str:
    """Square FD' table with row and column labels (heat-map layout)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["board"] + list(labels))
    for lab, row in zip(labels, m):
        w.writerow([lab] + [f"{v:.9g}" for v in row])
    return buf.getvalue()
