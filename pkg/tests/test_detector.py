import json
import statistics

import numpy as np
import pytest
from sklearn.metrics import roc_auc_score
from sklearn.neighbors import KNeighborsClassifier

from pdnguard.campaign import attiny85_anomaly
from pdnguard.detector import (
    DetectionReport,
    GoldenModel,
    LabeledLibrary,
    accuracy,
    best_accuracy,
    detect,
    fd_histogram,
    fd_knn,
    fit_golden,
    knn_vote,
    roc,
)
from pdnguard.frechet import FdConfig, fd_prime
from pdnguard.netlist import ToleranceModel, inject, make_decap_chain_board, sample_variation
from pdnguard.solver import BoardSignature, FrequencyGrid, solve_z

GRID = FrequencyGrid(points=128)


def variants(count, t=0.1, seed=1, anomaly=None, ports=(6,)):
    base = make_decap_chain_board(port_indices=ports)
    out = []
    for k in range(count):
        net = sample_variation(base, ToleranceModel(t, seed), k)
        if anomaly is not None:
            net = inject(net, anomaly)
        sig = solve_z(net, GRID)
        sig.label = f"board{k}"
        out.append(sig)
    return out


@pytest.fixture(scope="module")
def genuine():
    return variants(5)


def test_golden_statistics(genuine):
    model = fit_golden(genuine, FdConfig(), k=3.0)
    pairs = [fd_prime(genuine[i], genuine[j]) for i in range(5) for j in range(i + 1, 5)]
    assert len(model.intra_fds) == 10
    assert model.mu == pytest.approx(statistics.mean(pairs), rel=1e-12)
    assert model.sigma == pytest.approx(statistics.stdev(pairs), rel=1e-12)
    assert model.threshold == pytest.approx(model.mu + 3 * model.sigma)
    assert model.threshold >= model.mu


def test_identical_boards_give_zero_threshold(genuine):
    model = fit_golden([genuine[0]] * 4)
    assert model.mu == model.sigma == model.threshold == 0


def test_k_zero_threshold_is_mu(genuine):
    model = fit_golden(genuine, k=0)
    assert model.threshold == model.mu


def test_two_boards_warn(genuine):
    model = fit_golden(genuine[:2])
    assert model.sigma == 0 and model.warnings


def test_golden_errors(genuine):
    with pytest.raises(ValueError):
        fit_golden(genuine[:1])
    other = BoardSignature(genuine[1].freqs * 2, genuine[1].z)
    with pytest.raises(ValueError):
        fit_golden([genuine[0], other])


def test_member_of_golden_set_is_genuine(genuine):
    model = fit_golden(genuine)
    report = detect(model, genuine[2])
    assert report.decision_statistic == 0
    assert report.verdict == "genuine"


def test_attiny_board_is_anomalous(genuine):
    model = fit_golden(genuine)
    bad = variants(3, seed=77, anomaly=attiny85_anomaly("n6"))
    for b in bad:
        assert detect(model, b).verdict == "anomalous"


def test_huge_k_always_genuine(genuine):
    model = fit_golden(genuine, k=1e9)
    bad = variants(1, seed=77, anomaly=attiny85_anomaly("n6"))[0]
    assert detect(model, bad).verdict == "genuine"


def test_raising_k_never_flips_to_anomalous(genuine):
    tests = variants(6, seed=5) + variants(4, seed=6, anomaly=attiny85_anomaly("n6"))
    prev = None
    for k in (0, 1, 2, 3, 5, 10):
        verdicts = [detect(fit_golden(genuine, k=k), t).anomalous for t in tests]
        if prev is not None:
            assert all(p or not v for p, v in zip(prev, verdicts))
        prev = verdicts


def test_mean_statistic(genuine):
    model = fit_golden(genuine)
    t = variants(1, seed=9)[0]
    r_min, r_mean = detect(model, t, "min"), detect(model, t, "mean")
    assert r_min.fds_to_training == r_mean.fds_to_training
    assert r_min.decision_statistic == min(r_min.fds_to_training)
    assert r_mean.decision_statistic == pytest.approx(np.mean(r_min.fds_to_training))
    with pytest.raises(ValueError):
        detect(model, t, "max")


def test_report_serialisation(genuine):
    r = detect(fit_golden(genuine), genuine[0])
    doc = json.loads(r.to_json())
    assert doc["verdict"] == "genuine" and doc["norm_order"] == "L2"
    assert r.to_csv().splitlines()[0].startswith("board_label,decision_statistic")
    assert DetectionReport("x", [1.0], 2.0, "anomalous", 1.5).anomalous


def test_model_json_roundtrip(genuine):
    model = fit_golden(genuine, FdConfig("L1"), k=2.5)
    back = GoldenModel.from_dict(json.loads(json.dumps(model.to_dict())))
    assert back.threshold == model.threshold and back.cfg == model.cfg
    t = variants(1, seed=3)[0]
    assert detect(back, t).decision_statistic == detect(model, t).decision_statistic


# -- KNN ------------------------------------------------------------------

def test_knn_vote_matches_sklearn_on_distinct_distances():
    rng = np.random.default_rng(0)
    for _ in range(200):
        n = int(rng.integers(5, 30))
        d = rng.uniform(0, 1, n)
        labels = list(rng.choice(["a", "b", "c"], n))
        k = int(rng.choice([1, 3, 5]))
        clf = KNeighborsClassifier(n_neighbors=k, metric="precomputed")
        train = np.abs(np.subtract.outer(np.arange(n), np.arange(n))).astype(float) + 1
        clf.fit(train, labels)
        expected = clf.predict(d[None, :])[0]
        # sklearn breaks vote ties alphabetically; only compare clear majorities
        top = [labels[i] for i in np.argsort(d)[:k]]
        counts = sorted((top.count(y) for y in set(top)), reverse=True)
        if len(counts) > 1 and counts[0] == counts[1]:
            continue
        assert knn_vote(d, labels, k) == expected


def test_knn_tie_breaks():
    # 2-2 vote tie: class with smaller distance sum wins
    assert knn_vote([0.1, 0.2, 0.3, 0.05], ["a", "b", "b", "a"], 4) == "a"
    # equal sums: first class seen in sorted order wins
    assert knn_vote([0.1, 0.1], ["x", "y"], 2) == "x"
    # equal distances sort by entry order
    assert knn_vote([0.5, 0.5, 0.5], ["p", "q", "q"], 1) == "p"


def test_knn_errors():
    with pytest.raises(ValueError):
        knn_vote([], [], 1)
    with pytest.raises(ValueError):
        knn_vote([0.1], ["a"], 3)


def test_fd_knn_nearest_and_member(genuine):
    other = variants(3, seed=2, ports=(6,))
    lib = LabeledLibrary([(b, "g") for b in genuine] + [(b, "o") for b in other])
    assert fd_knn(lib, genuine[1], k=1) == "g"
    assert fd_knn(lib, other[2], k=1) == "o"
    with pytest.raises(ValueError):
        fd_knn(lib, genuine[0], k=99)
    with pytest.raises(ValueError):
        fd_knn(LabeledLibrary([]), genuine[0])


def test_fd_knn_permutation_stable(genuine):
    bad = variants(4, seed=8, anomaly=attiny85_anomaly("n6"))
    entries = [(b, "genuine") for b in genuine] + [(b, "bad") for b in bad]
    test = variants(1, seed=42)[0]
    ref = fd_knn(LabeledLibrary(entries), test, k=3)
    rng = np.random.default_rng(1)
    for _ in range(5):
        perm = [entries[i] for i in rng.permutation(len(entries))]
        assert fd_knn(LabeledLibrary(perm), test, k=3) == ref


# -- ROC ------------------------------------------------------------------

def test_roc_separated_and_identical():
    assert roc([0.1, 0.2], [0.5, 0.9]).auc == 1.0
    assert roc([1, 2, 3, 3], [3, 2, 1, 3]).auc == 0.5
    with pytest.raises(ValueError):
        roc([], [1.0])


def test_roc_matches_mann_whitney_auc():
    rng = np.random.default_rng(12)
    for _ in range(50):
        g = np.round(rng.normal(0, 1, 40), 1)
        a = np.round(rng.normal(0.7, 1, 30), 1)
        y = np.r_[np.zeros(len(g)), np.ones(len(a))]
        assert roc(g, a).auc == pytest.approx(roc_auc_score(y, np.r_[g, a]), abs=1e-12)


def test_roc_points_monotone_and_invariant():
    rng = np.random.default_rng(3)
    g, a = rng.normal(0, 1, 50), rng.normal(1, 1, 50)
    c = roc(g, a)
    fpr = [p[0] for p in c.points]
    tpr = [p[1] for p in c.points]
    assert fpr == sorted(fpr) and tpr == sorted(tpr)
    assert fpr[0] == 0 and tpr[-1] == 1
    assert roc(np.exp(g), np.exp(a)).auc == c.auc
    assert c.to_csv().splitlines()[0] == "threshold,fpr,tpr"
    assert c.to_dict()["points"][0]["threshold_inf"] == 1


def test_accuracy_formula():
    assert accuracy(10, 10, 0, 0) == 1.0
    assert accuracy(0, 0, 10, 10) == 0.0
    assert accuracy(52, 52, 48, 48) == 0.52
    with pytest.raises(ValueError):
        accuracy(0, 0, 0, 0)


def test_best_accuracy_is_max_over_thresholds():
    rng = np.random.default_rng(5)
    g, a = rng.normal(0, 1, 60), rng.normal(1, 1, 40)
    acc, thr = best_accuracy(g, a)
    brute = max(((a > t).sum() + (g <= t).sum()) / 100 for t in np.r_[g, a, -np.inf])
    assert acc == pytest.approx(brute)
    assert (((a > thr).sum() + (g <= thr).sum()) / 100) == pytest.approx(acc)


def test_histogram_csv():
    text = fd_histogram([0.1, 0.2, 0.2], [0.8, 0.9], bins=4)
    rows = text.splitlines()
    assert rows[0] == "bin_lo,bin_hi,genuine,malicious" and len(rows) == 5
    assert sum(int(r.split(",")[2]) for r in rows[1:]) == 3
