"""Seeded Monte-Carlo campaigns: tolerance ROC, anomaly scaling, placement
grid, port ablation and clone classification."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .detector import RocCurve, best_accuracy, decision_statistic, knn_vote, roc
from .frechet import FdConfig, ProfileSet, port_pairs
from .netlist import (
    ATTINY85,
    SOT23,
    AnomalySpec,
    PdnNetlist,
    ToleranceModel,
    chain_node,
    derive_seed,
    inject,
    make_decap_chain_board,
    sample_variation,
)
from .solver import FrequencyGrid, solve_z

log = logging.getLogger(__name__)

SCALE_PARAMETERS = {"scale_c": "c", "scale_l": "l", "scale_r": "r"}
REFERENCE = (ATTINY85["c"], ATTINY85["l"], ATTINY85["r"])


def attiny85_anomaly(node: str, anomaly_id: str = "attiny85") -> AnomalySpec:
    return AnomalySpec(anomaly_id, "parallel_rlc_at_node", node, **ATTINY85)


@dataclass
class CampaignConfig:
    base_netlist: PdnNetlist
    anomaly: AnomalySpec | tuple
    tolerance_list: tuple = (0.10,)
    trials_per_arm: int = 200
    golden_count: int = 5
    grid: FrequencyGrid = field(default_factory=FrequencyGrid)
    cfg: FdConfig = field(default_factory=FdConfig)
    seed: int = 0
    statistic: str = "min"
    workers: int = 1

    def __post_init__(self):
        if self.trials_per_arm < 10:
            raise ValueError("trials_per_arm must be >= 10")
        if self.golden_count < 2:
            raise ValueError("golden_count must be >= 2")
        if isinstance(self.anomaly, list):
            self.anomaly = tuple(self.anomaly)
        self.tolerance_list = tuple(float(t) for t in self.tolerance_list)
        if not self.tolerance_list:
            raise ValueError("tolerance_list is empty")

    @property
    def anomalies(self) -> tuple:
        return self.anomaly if isinstance(self.anomaly, tuple) else (self.anomaly,)

    def to_dict(self) -> dict:
        return {
            "base_netlist": self.base_netlist.to_dict(),
            "anomalies": [dataclasses.asdict(a) for a in self.anomalies],
            "tolerance_list": list(self.tolerance_list),
            "trials_per_arm": self.trials_per_arm,
            "golden_count": self.golden_count,
            "grid": dataclasses.asdict(self.grid),
            "norm_order": self.cfg.norm_order,
            "seed": self.seed,
            "statistic": self.statistic,
        }

    def digest(self) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()


# -- job engine -------------------------------------------------------------

def run_jobs(jobs: dict, workers: int = 1) -> dict:
    """Evaluate ``{key: thunk}``; the result is keyed, so order of completion
    does not matter. Thunks must be independent."""
    if workers <= 1:
        return {k: fn() for k, fn in jobs.items()}
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = {k: pool.submit(fn) for k, fn in jobs.items()}
        return {k: f.result() for k, f in futures.items()}


def _board_job(cfg: CampaignConfig, arm: str, trial: int, t: float, anomaly, base=None):
    base = cfg.base_netlist if base is None else base

    def job():
        net = sample_variation(base, ToleranceModel(t, derive_seed(cfg.seed, arm)), trial)
        if anomaly is not None:
            net = inject(net, anomaly)
        try:
            return solve_z(net, cfg.grid)
        except Exception as exc:
            raise RuntimeError(f"arm {arm!r} trial {trial}: {exc}") from exc
    return job


def simulate_arm(cfg: CampaignConfig, arm: str, count: int, t: float, anomalies=None, base=None):
    """``count`` variated boards; anomalous trials cycle through ``anomalies``.

    The anomaly is attached at nominal values after the board is varied, so
    an arm's boards differ from another arm's only through their own stream.
    """
    jobs = {}
    for i in range(count):
        a = None if not anomalies else anomalies[i % len(anomalies)]
        jobs[(arm, i)] = _board_job(cfg, arm, i, t, a, base)
    done = run_jobs(jobs, cfg.workers)
    return [done[(arm, i)] for i in range(count)]


def statistics(golden, boards, cfg: FdConfig, statistic: str = "min", pairs=None, workers: int = 1):
    gsets = [ProfileSet(g, pairs) for g in golden]

    def job(b):
        return lambda: decision_statistic([g.distance(ProfileSet(b, pairs), cfg) for g in gsets], statistic)
    done = run_jobs({i: job(b) for i, b in enumerate(boards)}, workers)
    return np.array([done[i] for i in range(len(boards))])


@dataclass
class _Population:
    golden: list
    genuine: list
    anomalous: list


def _population(cfg: CampaignConfig, t: float, anomalies=None) -> _Population:
    anomalies = cfg.anomalies if anomalies is None else anomalies
    return _Population(
        simulate_arm(cfg, "golden", cfg.golden_count, t),
        simulate_arm(cfg, "genuine", cfg.trials_per_arm, t),
        simulate_arm(cfg, "anomalous", cfg.trials_per_arm, t, anomalies),
    )


# -- tolerance ROC ----------------------------------------------------------

def run_tolerance_sweep(cfg: CampaignConfig) -> list[tuple[float, RocCurve]]:
    out = []
    for t in cfg.tolerance_list:
        pop = _population(cfg, t)
        g = statistics(pop.golden, pop.genuine, cfg.cfg, cfg.statistic, workers=cfg.workers)
        a = statistics(pop.golden, pop.anomalous, cfg.cfg, cfg.statistic, workers=cfg.workers)
        curve = roc(g, a)
        log.info("tolerance %.3g: auc %.4f", t, curve.auc)
        out.append((t, curve))
    return out


# -- anomaly scaling --------------------------------------------------------

@dataclass
class SensitivitySweep:
    parameter: str
    multipliers: list
    reference: tuple = REFERENCE
    include_sot23: bool = True
    curves: dict = field(default_factory=dict)  # arm label -> RocCurve

    def __post_init__(self):
        if self.parameter not in SCALE_PARAMETERS:
            raise ValueError(f"parameter must be one of {sorted(SCALE_PARAMETERS)}")
        self.multipliers = [float(m) for m in self.multipliers]
        if any(m <= 0 for m in self.multipliers):
            raise ValueError("multipliers must be > 0")

    def arm_label(self, m: float) -> str:
        return f"{self.parameter}:{m:g}"

    def arms(self, base: AnomalySpec) -> list[tuple[str, AnomalySpec]]:
        c0, l0, r0 = self.reference
        key = SCALE_PARAMETERS[self.parameter]
        out = []
        for m in self.multipliers:
            vals = {"r": r0, "l": l0, "c": c0}
            vals[key] *= m
            out.append((self.arm_label(m), dataclasses.replace(base, **vals)))
        if self.include_sot23:
            out.append(("sot23", dataclasses.replace(base, **SOT23)))
        return out


def run_sensitivity_sweep(cfg: CampaignConfig, sweep: SensitivitySweep) -> SensitivitySweep:
    """One ROC per scaled anomaly at ``cfg.tolerance_list[0]``.

    The genuine population is shared by all arms and every anomalous arm
    reuses the same variation stream, so the x1 arm reproduces the
    tolerance sweep at that tolerance exactly.
    """
    t = cfg.tolerance_list[0]
    base = cfg.anomalies[0]
    golden = simulate_arm(cfg, "golden", cfg.golden_count, t)
    genuine = simulate_arm(cfg, "genuine", cfg.trials_per_arm, t)
    g = statistics(golden, genuine, cfg.cfg, cfg.statistic, workers=cfg.workers)
    curves = {}
    for label, anomaly in sweep.arms(base):
        boards = simulate_arm(cfg, "anomalous", cfg.trials_per_arm, t, (anomaly,))
        a = statistics(golden, boards, cfg.cfg, cfg.statistic, workers=cfg.workers)
        curves[label] = roc(g, a)
        log.info("sensitivity %s: auc %.4f", label, curves[label].auc)
    return dataclasses.replace(sweep, curves=curves)


# -- placement grid ---------------------------------------------------------

@dataclass
class AccuracyGrid:
    cells: np.ndarray  # (6, 6), row = source index, col = probe index
    doubled: bool = False
    anomaly_index: int = 4

    def __getitem__(self, xy):
        x, y = xy
        return float(self.cells[x - 1, y - 1])

    @property
    def mean(self) -> float:
        return float(self.cells.mean())

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["source", "probe", "accuracy"])
        n = self.cells.shape[0]
        for x in range(1, n + 1):
            for y in range(1, n + 1):
                w.writerow([x, y, f"{self[x, y]:.9g}"])
        return buf.getvalue()


def run_placement_grid(doubled: bool, anomaly_index: int, cfg: CampaignConfig,
                       board: PdnNetlist | None = None) -> AccuracyGrid:
    """Best accuracy of every single-profile detector Z_xy on one trial batch.

    ``cfg.base_netlist`` is ignored unless ``board`` is None, in which case
    the decap chain with a port at every index is built. ``cfg.anomaly``
    supplies the anomaly's values; its target is moved to ``anomaly_index``.
    """
    if not 1 <= anomaly_index <= 6:
        raise ValueError("anomaly_index must be in 1..6")
    if board is None:
        board = make_decap_chain_board(doubled)
    anomaly = dataclasses.replace(cfg.anomalies[0], target=chain_node(anomaly_index))
    local = dataclasses.replace(cfg, base_netlist=board, anomaly=anomaly)
    pop = _population(local, cfg.tolerance_list[0])
    n = board.n_ports
    cells = np.zeros((n, n))
    for x, y in port_pairs(n):
        pairs = [(x, y)]
        g = statistics(pop.golden, pop.genuine, cfg.cfg, cfg.statistic, pairs, cfg.workers)
        a = statistics(pop.golden, pop.anomalous, cfg.cfg, cfg.statistic, pairs, cfg.workers)
        cells[x - 1, y - 1] = cells[y - 1, x - 1] = best_accuracy(g, a)[0]
    return AccuracyGrid(cells, doubled, anomaly_index)


# -- port ablation ----------------------------------------------------------

def subset_pairs(ports) -> list[tuple[int, int]]:
    ports = sorted(set(int(p) for p in ports))
    return [(x, y) for i, x in enumerate(ports) for y in ports[i:]]


def run_port_ablation(cfg: CampaignConfig, port_subsets) -> list[tuple[tuple, float]]:
    """Best accuracy per port subset, all subsets scored on the same boards.

    Anomalous trials cycle through ``cfg.anomalies``.
    """
    n = cfg.base_netlist.n_ports
    subsets = [tuple(sorted(set(int(p) for p in s))) for s in port_subsets]
    for s in subsets:
        if not s or not all(1 <= p <= n for p in s):
            raise ValueError(f"port subset {s} invalid for a {n}-port board")
    pop = _population(cfg, cfg.tolerance_list[0])
    out = []
    for s in subsets:
        pairs = subset_pairs(s)
        g = statistics(pop.golden, pop.genuine, cfg.cfg, cfg.statistic, pairs, cfg.workers)
        a = statistics(pop.golden, pop.anomalous, cfg.cfg, cfg.statistic, pairs, cfg.workers)
        out.append((s, best_accuracy(g, a)[0]))
    return out


# -- clone classification ---------------------------------------------------

CLONE_CLASSES = {
    # class label -> {chain index: (capacitance, count)} edits of the default groups
    "reference": {},
    "clone-a": {4: (1e-6, 2)},
    "clone-b": {5: (100e-9, 2)},
    "clone-c": {3: (1e-6, 1)},
}


def make_clone_boards(port_indices=(2, 4, 6)) -> dict[str, PdnNetlist]:
    """Four board classes that differ only in one decoupling group's value."""
    from .netlist import DECAP_GROUPS
    out = {}
    for label, edits in CLONE_CLASSES.items():
        groups = dict(DECAP_GROUPS)
        groups.update(edits)
        out[label] = make_decap_chain_board(port_indices=port_indices, groups=groups, label=label)
    return out


@dataclass
class KnnResult:
    accuracies: np.ndarray  # per trial
    k: int
    train_per_class: int

    @property
    def mean(self) -> float:
        return float(self.accuracies.mean())

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["trial", "accuracy"])
        for i, a in enumerate(self.accuracies):
            w.writerow([i, f"{a:.9g}"])
        return buf.getvalue()


def run_knn_campaign(classes: dict, cfg: CampaignConfig, *, k: int = 3, train_per_class: int = 4,
                     pool_per_class: int = 12, trials: int = 500) -> KnnResult:
    """FD-KNN accuracy over random train/test splits of a simulated board pool.

    Each class contributes ``pool_per_class`` variated boards. Every trial
    draws ``train_per_class`` training boards per class and classifies all
    remaining boards; pairwise FD' is computed once for the whole pool.
    """
    if pool_per_class <= train_per_class:
        raise ValueError("pool_per_class must exceed train_per_class")
    t = cfg.tolerance_list[0]
    boards, labels = [], []
    for label, net in classes.items():
        boards += simulate_arm(cfg, f"class:{label}", pool_per_class, t, base=net)
        labels += [label] * pool_per_class
    sets = [ProfileSet(b) for b in boards]
    m = len(sets)
    jobs = {(i, j): (lambda i=i, j=j: sets[i].distance(sets[j], cfg.cfg))
            for i in range(m) for j in range(i + 1, m)}
    done = run_jobs(jobs, cfg.workers)
    dist = np.zeros((m, m))
    for (i, j), d in done.items():
        dist[i, j] = dist[j, i] = d
    by_class = {y: [i for i in range(m) if labels[i] == y] for y in classes}
    acc = np.zeros(trials)
    for trial in range(trials):
        rng = np.random.default_rng(derive_seed(cfg.seed, "knn-split", trial))
        train = sorted(int(i) for y in classes
                       for i in rng.choice(by_class[y], train_per_class, replace=False))
        test = [i for i in range(m) if i not in set(train)]
        tl = [labels[i] for i in train]
        hits = sum(knn_vote(dist[i, train], tl, k) == labels[i] for i in test)
        acc[trial] = hits / len(test)
    return KnnResult(acc, k, train_per_class)


# -- tables -----------------------------------------------------------------

def tolerance_table(results) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["tolerance", "auc"])
    for t, curve in results:
        w.writerow([f"{t:.9g}", f"{curve.auc:.9g}"])
    return buf.getvalue()


def roc_table(named_curves) -> str:
    """Long-format ROC points: one row per (arm, threshold)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["arm", "threshold", "fpr", "tpr"])
    for name, curve in named_curves:
        for fpr, tpr, thr in curve.points:
            w.writerow([name, f"{thr:.9g}", f"{fpr:.9g}", f"{tpr:.9g}"])
    return buf.getvalue()


def sensitivity_table(sweeps) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["arm", "auc"])
    for sw in sweeps:
        for label, curve in sw.curves.items():
            w.writerow([label, f"{curve.auc:.9g}"])
    return buf.getvalue()


def ablation_table(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["ports", "accuracy"])
    for subset, acc in rows:
        w.writerow([" ".join(str(p) for p in subset), f"{acc:.9g}"])
    return buf.getvalue()
