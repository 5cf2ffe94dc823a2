"""Command-line entry point.

Exit codes: 0 success (or genuine verdict), 2 anomalous verdict, 1 error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import SEED_ENV, env_seed, run_campaign_file
from .detector import GoldenModel, LabeledLibrary, best_accuracy, detect, fd_knn, fit_golden, roc
from .frechet import FdConfig
from .netlist import ToleranceModel, apply_anomalies, load_netlist, sample_variation, validate_netlist
from .solver import BoardSignature, FrequencyGrid, signature_from_csv, signature_to_csv, solve_z, z_to_s
from .touchstone import parse_touchstone, ports_from_filename, write_touchstone

log = logging.getLogger("pdnguard")

EXIT_OK, EXIT_ERROR, EXIT_ANOMALOUS = 0, 1, 2


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(f"usage: {message}")


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(out: Path, args, inputs=(), outputs=(), seed=None, extra=None, t0=None):
    """Sidecar ``<out>.manifest.json`` with input/output hashes and the argv."""
    doc = {
        "format_version": 1,
        "tool": "pdnguard",
        "version": __version__,
        "command": args.command,
        "argv": list(args.argv),
        "inputs": {str(p): _sha256(p) for p in inputs},
        "outputs": {str(p): _sha256(p) for p in outputs},
        "seed": seed,
    }
    if extra:
        doc.update(extra)
    if t0 is not None:
        doc["runtime_s"] = round(time.perf_counter() - t0, 3)
    Path(str(out) + ".manifest.json").write_text(json.dumps(doc, indent=2) + "\n")


def load_signature(path, label=None) -> BoardSignature:
    path = Path(path)
    if not path.exists():
        raise CliError(f"no such file: {path}")
    label = path.stem if label is None else label
    if path.suffix.lower() == ".csv":
        return signature_from_csv(path.read_text(), label)
    if ports_from_filename(path.name):
        return parse_touchstone(path.read_text(), filename=path.name).to_signature(label)
    raise CliError(f"{path}: expected a .csv signature or a .sNp Touchstone file")


def save_signature(sig: BoardSignature, path, header=()):
    path = Path(path)
    if path.suffix.lower() == ".csv":
        path.write_text(signature_to_csv(sig))
    elif ports_from_filename(path.name) == sig.n_ports:
        path.write_text(write_touchstone(sig, header=header))
    else:
        raise CliError(f"{path}: output must be .csv or .s{sig.n_ports}p")


def _grid(args) -> FrequencyGrid:
    return FrequencyGrid(args.f_start, args.f_stop, args.points, args.spacing)


def _pairs(text):
    if not text:
        return None
    out = []
    for item in text.split(","):
        x, _, y = item.partition("-")
        out.append((int(x), int(y or x)))
    return out


# -- subcommands --------------------------------------------------------------

def cmd_simulate(args):
    t0 = time.perf_counter()
    net = load_netlist(args.netlist)
    diags = validate_netlist(net)
    if diags:
        raise CliError("invalid netlist: " + "; ".join(str(d) for d in diags))
    seed = None
    if args.tolerance:
        seed = env_seed(args.seed)
        net = sample_variation(net, ToleranceModel(args.tolerance, seed), args.trial)
    net = apply_anomalies(net, args.anomaly or [])
    sig = solve_z(net, _grid(args))
    sig.label = args.label or net.label
    header = [f"netlist sha256 {_sha256(args.netlist)}"]
    if seed is not None:
        header.append(f"seed {seed} trial {args.trial} tolerance {args.tolerance:g}")
    save_signature(sig, args.output, header)
    write_manifest(Path(args.output), args, [args.netlist], [args.output], seed, t0=t0,
                   extra={"anomalies": list(args.anomaly or []), "tolerance": args.tolerance,
                          "trial": args.trial})
    print(f"wrote {args.output} ({sig.n_ports} ports, {len(sig.freqs)} points)")


def cmd_import(args):
    sig = load_signature(args.input)
    sig.provenance = "measured"
    save_signature(sig, args.output, [f"imported from {Path(args.input).name}"])
    write_manifest(Path(args.output), args, [args.input], [args.output])
    print(f"wrote {args.output}")


def cmd_golden(args):
    boards = [load_signature(p) for p in args.signatures]
    model = fit_golden(boards, FdConfig(args.norm), args.k, _pairs(args.pairs))
    Path(args.output).write_text(json.dumps(model.to_dict()) + "\n")
    write_manifest(Path(args.output), args, args.signatures, [args.output])
    for w in model.warnings:
        print(f"warning: {w}", file=sys.stderr)
    print(f"threshold {model.threshold:.9g} (mu {model.mu:.9g}, sigma {model.sigma:.9g}, "
          f"{len(model.intra_fds)} pairs)")


def cmd_detect(args):
    model = GoldenModel.from_dict(json.loads(Path(args.model).read_text()))
    if args.k is not None:
        model.k = args.k
        model.threshold = model.mu + args.k * model.sigma
    report = detect(model, load_signature(args.test), args.statistic)
    if args.output:
        text = report.to_csv() if args.output.endswith(".csv") else report.to_json() + "\n"
        Path(args.output).write_text(text)
        write_manifest(Path(args.output), args, [args.model, args.test], [args.output])
    print(f"{report.board_label}: {report.verdict} "
          f"(statistic {report.decision_statistic:.9g}, threshold {report.threshold_used:.9g})")
    return EXIT_ANOMALOUS if report.anomalous else EXIT_OK


def cmd_classify(args):
    entries = []
    for item in args.train:
        label, sep, path = item.partition("=")
        if not sep:
            raise CliError(f"--train expects LABEL=PATH, got {item!r}")
        entries.append((load_signature(path), label))
    lib = LabeledLibrary(entries)
    label = fd_knn(lib, load_signature(args.test), args.k, FdConfig(args.norm), _pairs(args.pairs))
    print(label)
    if args.genuine_label is not None and label != args.genuine_label:
        return EXIT_ANOMALOUS
    return EXIT_OK


def _read_stats(path):
    text = Path(path).read_text()
    rows = list(csv.reader(io.StringIO(text)))
    values = []
    for row in rows:
        if not row:
            continue
        cell = row[-1].strip()
        try:
            values.append(float(cell))
        except ValueError:
            if values:
                raise CliError(f"{path}: non-numeric statistic {cell!r}")
    if not values:
        raise CliError(f"{path}: no statistics")
    return np.array(values)


def cmd_roc(args):
    g, a = _read_stats(args.genuine), _read_stats(args.anomalous)
    curve = roc(g, a)
    acc, thr = best_accuracy(g, a)
    Path(args.output).write_text(curve.to_csv())
    write_manifest(Path(args.output), args, [args.genuine, args.anomalous], [args.output])
    print(f"auc {curve.auc:.9g}, best accuracy {acc:.9g} at threshold {thr:.9g}")


def cmd_campaign(args):
    manifest = run_campaign_file(args.config, args.output)
    for name in manifest["outputs"]:
        print(Path(args.output) / name)


def cmd_convert(args):
    text = Path(args.input).read_text()
    doc = parse_touchstone(text, filename=Path(args.input).name)
    label = Path(args.input).stem
    z0 = doc.z0 if args.z0 is None else args.z0
    header = [f"converted from {Path(args.input).name} ({doc.parameter})"]
    sig = doc.to_signature(label)
    if args.to == "z":
        out = write_touchstone(sig, unit=args.unit, fmt=args.fmt, z0=z0, header=header, digits=args.digits)
    else:
        out = write_touchstone(z_to_s(sig, z0), unit=args.unit, fmt=args.fmt, header=header,
                               digits=args.digits)
    Path(args.output).write_text(out)
    write_manifest(Path(args.output), args, [args.input], [args.output])
    print(f"wrote {args.output}")


# -- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="pdnguard", description="PDN impedance profiling and anomaly detection")
    p.add_argument("--version", action="version", version=f"pdnguard {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    s = sub.add_parser("simulate", help="solve a netlist into a Z-parameter signature")
    s.add_argument("netlist")
    s.add_argument("-o", "--output", required=True, help=".csv or .sNp")
    s.add_argument("--anomaly", action="append", help="anomaly id to switch on (repeatable)")
    s.add_argument("--tolerance", type=float, default=0.0)
    s.add_argument("--trial", type=int, default=0)
    s.add_argument("--seed", type=int, default=0, help=f"overridden by ${SEED_ENV}")
    s.add_argument("--label")
    s.add_argument("--f-start", type=float, default=300e3)
    s.add_argument("--f-stop", type=float, default=3e9)
    s.add_argument("--points", type=int, default=1024)
    s.add_argument("--spacing", choices=("log", "linear"), default="log")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("import", help="read a Touchstone sweep into a Z signature")
    s.add_argument("input")
    s.add_argument("-o", "--output", required=True)
    s.set_defaults(func=cmd_import)

    s = sub.add_parser("golden", help="fit a golden model from genuine signatures")
    s.add_argument("signatures", nargs="+")
    s.add_argument("-o", "--output", required=True)
    s.add_argument("-k", type=float, default=3.0)
    s.add_argument("--norm", choices=("L1", "L2", "Linf"), default="L2")
    s.add_argument("--pairs", help="restrict to port pairs, e.g. 1-1,1-2")
    s.set_defaults(func=cmd_golden)

    s = sub.add_parser("detect", help="test one board against a golden model (exit 2 if anomalous)")
    s.add_argument("--model", required=True)
    s.add_argument("test")
    s.add_argument("--statistic", choices=("min", "mean"), default="min")
    s.add_argument("-k", type=float, help="override the model's k")
    s.add_argument("-o", "--output", help="report .json or .csv")
    s.set_defaults(func=cmd_detect)

    s = sub.add_parser("classify", help="FD-KNN label of a board")
    s.add_argument("test")
    s.add_argument("--train", action="append", required=True, metavar="LABEL=PATH")
    s.add_argument("-k", type=int, default=3)
    s.add_argument("--norm", choices=("L1", "L2", "Linf"), default="L2")
    s.add_argument("--pairs")
    s.add_argument("--genuine-label", help="exit 2 when the predicted label differs")
    s.set_defaults(func=cmd_classify)

    s = sub.add_parser("roc", help="ROC table from genuine and anomalous statistic files")
    s.add_argument("--genuine", required=True)
    s.add_argument("--anomalous", required=True)
    s.add_argument("-o", "--output", required=True)
    s.set_defaults(func=cmd_roc)

    s = sub.add_parser("campaign", help="run a Monte-Carlo campaign config")
    s.add_argument("--config", required=True)
    s.add_argument("-o", "--output", default="campaign-out", help="output directory")
    s.set_defaults(func=cmd_campaign)

    s = sub.add_parser("convert", help="convert a Touchstone file between S and Z")
    s.add_argument("input")
    s.add_argument("--to", choices=("s", "z"), required=True)
    s.add_argument("-o", "--output", required=True)
    s.add_argument("--fmt", choices=("RI", "MA", "DB"), default="RI")
    s.add_argument("--unit", choices=("HZ", "KHZ", "MHZ", "GHZ"), default="HZ")
    s.add_argument("--z0", type=float, help="reference resistance of the output (default: input's)")
    s.add_argument("--digits", type=int, default=9, help="significant digits")
    s.set_defaults(func=cmd_convert)
    return p


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
        args.argv = argv
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        code = args.func(args)
        return EXIT_OK if code is None else code
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except Exception as exc:
        msg = " ".join(str(exc).split()) or type(exc).__name__
        print(f"error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
