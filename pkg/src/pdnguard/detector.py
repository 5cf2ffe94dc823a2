"""Golden-model thresholding, FD'-based KNN classification and ROC metrics."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .frechet import FdConfig, ProfileSet
from .solver import BoardSignature

log = logging.getLogger(__name__)

STATISTICS = ("min", "mean")


def _check_uniform(boards, what="boards"):
    first = boards[0]
    for b in boards[1:]:
        if not first.same_shape(b):
            raise ValueError(f"{what} differ in frequency grid or port count "
                             f"({first.label!r} vs {b.label!r})")


@dataclass
class GoldenModel:
    genuine: list
    intra_fds: np.ndarray
    mu: float
    sigma: float
    k: float
    threshold: float
    cfg: FdConfig
    pairs: list | None = None
    warnings: list = field(default_factory=list)

    def profile_sets(self):
        return [ProfileSet(b, self.pairs) for b in self.genuine]

    def to_dict(self) -> dict:
        return {
            "format_version": 1,
            "mu": self.mu,
            "sigma": self.sigma,
            "k": self.k,
            "threshold": self.threshold,
            "norm_order": self.cfg.norm_order,
            "pairs": self.pairs,
            "intra_fds": [float(v) for v in self.intra_fds],
            "warnings": list(self.warnings),
            "genuine": [_sig_to_dict(b) for b in self.genuine],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> GoldenModel:
        if doc.get("format_version") != 1:
            raise ValueError(f"unsupported golden model format_version {doc.get('format_version')}")
        pairs = None if doc["pairs"] is None else [tuple(p) for p in doc["pairs"]]
        return cls(
            genuine=[_sig_from_dict(d) for d in doc["genuine"]],
            intra_fds=np.asarray(doc["intra_fds"], dtype=float),
            mu=doc["mu"], sigma=doc["sigma"], k=doc["k"], threshold=doc["threshold"],
            cfg=FdConfig(doc["norm_order"]), pairs=pairs, warnings=list(doc["warnings"]),
        )


def _sig_to_dict(sig: BoardSignature) -> dict:
    return {
        "label": sig.label,
        "provenance": sig.provenance,
        "freqs": sig.freqs.tolist(),
        "re": sig.z.real.tolist(),
        "im": sig.z.imag.tolist(),
    }


def _sig_from_dict(d: dict) -> BoardSignature:
    z = np.asarray(d["re"]) + 1j * np.asarray(d["im"])
    return BoardSignature(np.asarray(d["freqs"]), z, d["label"], d["provenance"])


def fit_golden(genuine, cfg: FdConfig = FdConfig(), k: float = 3.0, pairs=None) -> GoldenModel:
    """Threshold ``mu + k*sigma`` over all unordered genuine-pair FD' values."""
    genuine = list(genuine)
    if len(genuine) < 2:
        raise ValueError("a golden model needs at least 2 genuine boards")
    _check_uniform(genuine, "genuine boards")
    sets = [ProfileSet(b, pairs) for b in genuine]
    fds = np.array([sets[i].distance(sets[j], cfg)
                    for i in range(len(sets)) for j in range(i + 1, len(sets))])
    warnings = []
    mu = float(np.mean(fds))
    if len(fds) < 2:
        sigma = 0.0
        warnings.append("only one genuine pair: sigma undefined, set to 0")
        log.warning("golden model from 2 boards; sigma set to 0")
    else:
        sigma = float(np.std(fds, ddof=1))
    threshold = mu + k * sigma
    return GoldenModel(genuine, fds, mu, sigma, float(k), float(threshold), cfg,
                       None if pairs is None else list(pairs), warnings)


@dataclass
class DetectionReport:
    board_label: str
    fds_to_training: list
    decision_statistic: float
    verdict: str
    threshold_used: float
    statistic: str = "min"
    norm_order: str = "L2"

    @property
    def anomalous(self) -> bool:
        return self.verdict == "anomalous"

    def to_dict(self) -> dict:
        return {
            "format_version": 1,
            "board_label": self.board_label,
            "fds_to_training": [float(v) for v in self.fds_to_training],
            "decision_statistic": float(self.decision_statistic),
            "statistic": self.statistic,
            "norm_order": self.norm_order,
            "threshold_used": float(self.threshold_used),
            "verdict": self.verdict,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_csv(self) -> str:
        d = self.to_dict()
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["board_label", "decision_statistic", "threshold_used", "verdict", "statistic"])
        w.writerow([d["board_label"], f"{d['decision_statistic']:.9g}",
                    f"{d['threshold_used']:.9g}", d["verdict"], d["statistic"]])
        return buf.getvalue()


def decision_statistic(fds, statistic: str = "min") -> float:
    if statistic not in STATISTICS:
        raise ValueError(f"statistic must be one of {STATISTICS}")
    fds = np.asarray(fds, dtype=float)
    return float(fds.min() if statistic == "min" else fds.mean())


def detect(model: GoldenModel, test: BoardSignature, statistic: str = "min") -> DetectionReport:
    _check_uniform([model.genuine[0], test], "test board and golden set")
    ts = ProfileSet(test, model.pairs)
    fds = [g.distance(ts, model.cfg) for g in model.profile_sets()]
    stat = decision_statistic(fds, statistic)
    verdict = "anomalous" if stat > model.threshold else "genuine"
    return DetectionReport(test.label, fds, stat, verdict, model.threshold,
                           statistic, model.cfg.norm_order)


# -- classification ---------------------------------------------------------

@dataclass
class LabeledLibrary:
    entries: list  # of (BoardSignature, label)

    def __post_init__(self):
        self.entries = [(b, y) for b, y in self.entries]
        if self.entries:
            _check_uniform([b for b, _ in self.entries], "library boards")

    def __len__(self):
        return len(self.entries)

    @property
    def labels(self):
        return [y for _, y in self.entries]


def knn_vote(distances, labels, k: int):
    """Majority label of the ``k`` smallest distances.

    Distance ties keep entry order; vote ties go to the class with the
    smaller summed distance, then to the class seen first.
    """
    distances = np.asarray(distances, dtype=float)
    if len(distances) == 0:
        raise ValueError("empty library")
    if not 1 <= k <= len(distances):
        raise ValueError(f"k={k} must be in 1..{len(distances)}")
    order = np.argsort(distances, kind="stable")[:k]
    votes: dict = {}
    for rank, idx in enumerate(order):
        y = labels[idx]
        count, dsum, first = votes.get(y, (0, 0.0, rank))
        votes[y] = (count + 1, dsum + distances[idx], first)
    return min(votes, key=lambda y: (-votes[y][0], votes[y][1], votes[y][2]))


def fd_knn(lib: LabeledLibrary, test: BoardSignature, k: int = 3,
           cfg: FdConfig = FdConfig(), pairs=None):
    """Label of ``test`` by majority vote over its ``k`` FD'-nearest library boards."""
    if len(lib) == 0:
        raise ValueError("empty library")
    if k > len(lib):
        raise ValueError(f"k={k} exceeds library size {len(lib)}")
    _check_uniform([lib.entries[0][0], test], "test board and library")
    ts = ProfileSet(test, pairs)
    d = [ProfileSet(b, pairs).distance(ts, cfg) for b, _ in lib.entries]
    return knn_vote(d, lib.labels, k)


# -- ROC and accuracy -------------------------------------------------------

@dataclass
class RocCurve:
    points: list  # (fpr, tpr, threshold), thresholds descending
    auc: float

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["threshold", "fpr", "tpr"])
        for fpr, tpr, thr in self.points:
            w.writerow([f"{thr:.9g}", f"{fpr:.9g}", f"{tpr:.9g}"])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "format_version": 1,
            "auc": self.auc,
            "points": [{"fpr": f, "tpr": t, "threshold": None if math.isinf(h) else h,
                        "threshold_inf": 0 if not math.isinf(h) else (1 if h > 0 else -1)}
                       for f, t, h in self.points],
        }


def _thresholds(genuine, anomalous):
    return np.concatenate([[np.inf], np.unique(np.concatenate([genuine, anomalous]))[::-1], [-np.inf]])


def roc(genuine_stats, anomalous_stats) -> RocCurve:
    """ROC of the rule ``statistic > threshold`` flags a board as anomalous."""
    g = np.asarray(genuine_stats, dtype=float)
    a = np.asarray(anomalous_stats, dtype=float)
    if g.size == 0 or a.size == 0:
        raise ValueError("ROC needs non-empty genuine and anomalous statistics")
    thr = _thresholds(g, a)
    gs = np.sort(g)
    as_ = np.sort(a)
    fpr = 1.0 - np.searchsorted(gs, thr, side="right") / g.size
    tpr = 1.0 - np.searchsorted(as_, thr, side="right") / a.size
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2))
    return RocCurve([(float(f), float(t), float(h)) for f, t, h in zip(fpr, tpr, thr)], auc)


def accuracy(tp: int, tn: int, fp: int, fn: int) -> float:
    total = tp + tn + fp + fn
    if total <= 0:
        raise ValueError("accuracy of zero samples is undefined")
    return (tp + tn) / total


def best_accuracy(genuine_stats, anomalous_stats) -> tuple[float, float]:
    """Highest accuracy over every threshold of the ROC sweep, and that threshold.

    This is an oracle-threshold figure: it picks the cut on the evaluated
    samples themselves.
    """
    g = np.asarray(genuine_stats, dtype=float)
    a = np.asarray(anomalous_stats, dtype=float)
    thr = _thresholds(g, a)
    fp = g.size - np.searchsorted(np.sort(g), thr, side="right")
    tp = a.size - np.searchsorted(np.sort(a), thr, side="right")
    acc = (tp + (g.size - fp)) / (g.size + a.size)
    k = int(np.argmax(acc))
    return float(acc[k]), float(thr[k])


def fd_histogram(genuine_fds, malicious_fds, bins: int = 20) -> str:
    """CSV histogram (shared bin edges) of intra- and inter-FD' values."""
    g = np.asarray(genuine_fds, dtype=float)
    m = np.asarray(malicious_fds, dtype=float)
    edges = np.histogram_bin_edges(np.concatenate([g, m]), bins=bins)
    gc, _ = np.histogram(g, edges)
    mc, _ = np.histogram(m, edges)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["bin_lo", "bin_hi", "genuine", "malicious"])
    for lo, hi, a, b in zip(edges[:-1], edges[1:], gc, mc):
        w.writerow([f"{lo:.9g}", f"{hi:.9g}", int(a), int(b)])
    return buf.getvalue()
