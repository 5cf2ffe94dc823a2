"""Campaign configuration documents (TOML) and the runner behind ``campaign``."""

from __future__ import annotations

import hashlib
import json
import os
import time
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import campaign as cp
from .frechet import FdConfig
from .netlist import SOT23, ATTINY85, AnomalySpec, load_netlist, make_decap_chain_board
from .solver import FrequencyGrid

KINDS = ("tolerance", "sensitivity", "placement", "ablation", "knn")
SEED_ENV = "PDNPULSE_SEED"
_TOP = {"format_version", "kind", "seed", "trials_per_arm", "golden_count", "tolerances",
        "norm_order", "statistic", "workers", "grid", "board", "anomaly", "anomalies",
        "placement", "sensitivity", "ablation", "knn"}
PRESETS = {"attiny85": ATTINY85, "sot23": SOT23}


class ConfigError(ValueError):
    pass


def env_seed(default: int) -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw == "":
        return int(default)
    try:
        return int(raw, 0)
    except ValueError:
        raise ConfigError(f"{SEED_ENV}={raw!r} is not an integer")


def _anomaly(doc: dict, default_id: str) -> AnomalySpec:
    doc = dict(doc)
    preset = doc.pop("preset", None)
    if preset is not None and preset not in PRESETS:
        raise ConfigError(f"unknown anomaly preset {preset!r}")
    values = dict(PRESETS[preset]) if preset else {}
    values.update({k: doc.pop(k) for k in ("r", "l", "c") if k in doc})
    if "target" not in doc:
        raise ConfigError("anomaly needs a target")
    spec = AnomalySpec(doc.pop("id", preset or default_id), doc.pop("kind", "parallel_rlc_at_node"),
                       doc.pop("target"), branch_kind=doc.pop("branch_kind", None), **values)
    if doc:
        raise ConfigError(f"unknown anomaly keys {sorted(doc)}")
    return spec


class CampaignDocument:
    """A parsed campaign config: the CampaignConfig plus per-kind settings."""

    def __init__(self, doc: dict, base_dir: Path = Path(".")):
        unknown = set(doc) - _TOP
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        if doc.get("format_version", 1) != 1:
            raise ConfigError(f"unsupported format_version {doc.get('format_version')}")
        self.doc = doc
        self.kind = doc.get("kind")
        if self.kind not in KINDS:
            raise ConfigError(f"kind must be one of {KINDS}")
        board = dict(doc.get("board", {}))
        if "netlist" in board:
            path = Path(board.pop("netlist"))
            net = load_netlist(path if path.is_absolute() else base_dir / path)
            if "ports" in board:
                raise ConfigError("board.ports cannot be combined with board.netlist")
        else:
            ports = tuple(board.pop("ports", (1, 2, 3, 4, 5, 6)))
            net = make_decap_chain_board(bool(board.pop("doubled", False)), port_indices=ports,
                                         **{k: board.pop(k) for k in ("wire_r", "wire_l", "esr", "esl")
                                            if k in board})
        if board:
            raise ConfigError(f"unknown board keys {sorted(board)}")
        if "anomalies" in doc:
            anomalies = tuple(_anomaly(a, f"anomaly{k}") for k, a in enumerate(doc["anomalies"]))
        else:
            anomalies = _anomaly(doc.get("anomaly", {"preset": "attiny85", "target": "n6"}), "anomaly")
        self.seed = env_seed(doc.get("seed", 0))
        self.config = cp.CampaignConfig(
            base_netlist=net,
            anomaly=anomalies,
            tolerance_list=tuple(doc.get("tolerances", (0.10,))),
            trials_per_arm=int(doc.get("trials_per_arm", 200)),
            golden_count=int(doc.get("golden_count", 5)),
            grid=FrequencyGrid(**doc.get("grid", {})),
            cfg=FdConfig(doc.get("norm_order", "L2")),
            seed=self.seed,
            statistic=doc.get("statistic", "min"),
            workers=int(doc.get("workers", 1)),
        )

    def digest(self) -> str:
        # the effective document, seed override included
        eff = dict(self.doc, seed=self.seed)
        eff.pop("workers", None)
        text = json.dumps(eff, sort_keys=True, separators=(",", ":"), default=str)
        return hashlib.sha256(text.encode()).hexdigest()

    def run(self) -> dict[str, str]:
        """Run the campaign; returns ``{file name: CSV text}``."""
        return getattr(self, f"_run_{self.kind}")()

    def _run_tolerance(self):
        res = cp.run_tolerance_sweep(self.config)
        return {
            "tolerance_auc.csv": cp.tolerance_table(res),
            "tolerance_roc.csv": cp.roc_table([(f"t={t:g}", c) for t, c in res]),
        }

    def _run_sensitivity(self):
        sweeps = []
        specs = self.doc.get("sensitivity", [{"parameter": "scale_l", "multipliers": [1.0]}])
        for k, spec in enumerate(specs):
            sw = cp.SensitivitySweep(spec["parameter"], spec["multipliers"],
                                     include_sot23=bool(spec.get("include_sot23", k == 0)))
            sweeps.append(cp.run_sensitivity_sweep(self.config, sw))
        curves = [(label, c) for sw in sweeps for label, c in sw.curves.items()]
        return {"sensitivity_auc.csv": cp.sensitivity_table(sweeps),
                "sensitivity_roc.csv": cp.roc_table(curves)}

    def _run_placement(self):
        spec = self.doc.get("placement", {})
        index = int(spec.get("anomaly_index", 4))
        out = {}
        for variant in spec.get("variants", ["single"]):
            if variant not in ("single", "doubled"):
                raise ConfigError(f"placement variant {variant!r} not in (single, doubled)")
            grid = cp.run_placement_grid(variant == "doubled", index, self.config)
            out[f"placement_{variant}.csv"] = grid.to_csv()
        return out

    def _run_ablation(self):
        spec = self.doc.get("ablation", {})
        n = self.config.base_netlist.n_ports
        subsets = spec.get("subsets") or [[p] for p in range(1, n + 1)] + [list(range(1, n + 1))]
        rows = cp.run_port_ablation(self.config, subsets)
        return {"ablation.csv": cp.ablation_table(rows)}

    def _run_knn(self):
        spec = dict(self.doc.get("knn", {}))
        ports = tuple(spec.pop("ports", (2, 4, 6)))
        classes = cp.make_clone_boards(ports)
        res = cp.run_knn_campaign(classes, self.config, **spec)
        summary = f"k,train_per_class,trials,mean_accuracy\n{res.k},{res.train_per_class}," \
                  f"{len(res.accuracies)},{res.mean:.9g}\n"
        return {"knn_trials.csv": res.to_csv(), "knn_summary.csv": summary}


def load_campaign(path) -> CampaignDocument:
    path = Path(path)
    try:
        doc = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}")
    return CampaignDocument(doc, path.parent)


def run_campaign_file(path, out_dir) -> dict:
    """Run a config and write its tables plus ``manifest.json`` into ``out_dir``."""
    from . import __version__
    t0 = time.perf_counter()
    camp = load_campaign(path)
    tables = camp.run()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs = {}
    for name, text in sorted(tables.items()):
        (out_dir / name).write_text(text)
        outputs[name] = hashlib.sha256(text.encode()).hexdigest()
    manifest = {
        "format_version": 1,
        "tool": "pdnguard",
        "version": __version__,
        "kind": camp.kind,
        "config": str(path),
        "config_sha256": hashlib.sha256(Path(path).read_bytes()).hexdigest(),
        "effective_config_hash": camp.digest(),
        "seed": camp.seed,
        "seed_from_env": os.environ.get(SEED_ENV) not in (None, ""),
        "outputs": outputs,
        "runtime_s": round(time.perf_counter() - t0, 3),
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest

