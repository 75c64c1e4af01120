"""Command-line front end: one stage per subcommand, communicating through files in a run directory."""

from __future__ import annotations

import argparse
import io
import sys
from dataclasses import fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__, detect, kg, pipeline, rules, synth
from .config import ConfigError, PipelineConfig, resolve, save_config
from .graph import load_graph, save_graph
from .model import load_checkpoint, save_checkpoint
from .txn import DataFormatError, FRAUD, load_labels, load_transactions, write_labels, write_transactions

HASH_KEY = "config_sha256"

CONFIG = "config.txt"
TRANSACTIONS = "transactions.csv"
LABELS = "labels.csv"
GROUPS = "groups.csv"
CASHBACK = "cashback.csv"
GRAPH = "graph.csv"
RELATIONS = "relations.csv"
CHECKPOINT = "model.ckpt"
HISTORY = "train_history.csv"
DETECTIONS = "detections.csv"
DETECTED_GROUPS = "detected_groups.csv"
METRICS_TXT = "metrics.txt"
METRICS_JSON = "metrics.json"
GROUP_RULES = "group_rules.csv"
TCS_TABLE = "tcs.csv"
SWEEP_TP = "sweep_tp.csv"
SWEEP_TS = "sweep_ts.csv"
ABLATION = "ablation.csv"

# inputs that may come from outside the pipeline and so may carry no hash
EXTERNAL = {TRANSACTIONS, LABELS, GROUPS, CASHBACK}


class StageError(RuntimeError):
    pass


def artifact_hash(path: Path) -> Optional[str]:
    """The config hash recorded in the first comment lines of an artifact, if any."""
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh):
            if n > 0 and not line.startswith("#"):
                break
            body = line.lstrip("#").strip()
            if body.startswith(HASH_KEY + "="):
                return body.split("=", 1)[1].strip()
    return None


class Run:
    """A run directory bound to a resolved config."""

    def __init__(self, root: Path, cfg: PipelineConfig, force: bool = False):
        self.root = root
        self.cfg = cfg
        self.force = force
        self.digest = cfg.digest()

    @property
    def preamble(self) -> list[str]:
        return [f"{HASH_KEY}={self.digest}"]

    def path(self, name: str) -> Path:
        return self.root / name

    def need(self, name: str) -> Path:
        p = self.path(name)
        if not p.is_file():
            raise StageError(f"missing input file: {p}")
        recorded = artifact_hash(p)
        if recorded is None and name in EXTERNAL:
            return p
        if recorded != self.digest and not self.force:
            raise StageError(f"config hash mismatch: {p} was made with {recorded or 'no recorded hash'}, "
                             f"current config is {self.digest} (use --force to override)")
        return p

    def write(self, name: str, text: str) -> Path:
        p = self.path(name)
        p.write_text("".join(f"# {line}\n" for line in self.preamble) + text, encoding="utf-8", newline="\n")
        return p


def _csv(header: Sequence[str], rows: Sequence[Sequence[object]]) -> str:
    out = io.StringIO()
    out.write(",".join(header) + "\n")
    for row in rows:
        out.write(",".join(_cell(v) for v in row) + "\n")
    return out.getvalue()


def _cell(v: object) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _metric_row(m: rules.Metrics) -> list[Optional[float]]:
    return [m.precision, m.recall, m.f1]


def _oracle_truth(run: Run, labels) -> Optional[list[str]]:
    if run.cfg.metric_policy != rules.ORACLE:
        return None
    if run.path(GROUPS).is_file():
        return sorted({u for g in synth.load_groups(run.need(GROUPS)) for u in g.members})
    return labels.users_with(FRAUD)


# stages

def cmd_generate(run: Run, args: argparse.Namespace) -> None:
    scenario = synth.generate(pipeline.scenario_config(run.cfg))
    save_config(run.cfg, run.path(CONFIG))
    write_transactions(scenario.transactions, run.path(TRANSACTIONS), run.preamble)
    write_labels(scenario.labels, run.path(LABELS), run.preamble)
    synth.write_groups(scenario.groups, run.path(GROUPS), run.preamble)
    synth.write_cashback(scenario.cashback, run.path(CASHBACK), run.preamble)


def cmd_build_graph(run: Run, args: argparse.Namespace) -> None:
    txns = load_transactions(run.need(TRANSACTIONS))
    save_graph(pipeline.build_graph(txns, run.cfg), run.path(GRAPH), run.preamble)


def cmd_train(run: Run, args: argparse.Namespace) -> None:
    graph = load_graph(run.need(GRAPH))
    labels = load_labels(run.need(LABELS))
    variant = args.variant
    emb = pipeline.relation_embeddings(graph, run.cfg, variant)
    kg.save_relation_embeddings(emb, run.path(RELATIONS), run.preamble)
    model = pipeline.fit_model(graph, emb, labels, run.cfg, "full" if variant == "-P" else variant)
    save_checkpoint(model, run.path(CHECKPOINT), run.preamble)
    cols = ("epoch", "loss", "relation", "labeled", "unlabeled", "val_f1")
    run.write(HISTORY, _csv(cols, [[h[c] for c in cols] for h in model.history]))


def cmd_detect(run: Run, args: argparse.Namespace) -> None:
    ckpt = run.need(CHECKPOINT)
    graph = load_graph(run.need(GRAPH))
    txns = load_transactions(run.need(TRANSACTIONS))
    model = load_checkpoint(ckpt)
    result = pipeline.run_detection(graph, model, txns, run.cfg, propagation=not args.no_propagation)
    detect.save_detection(result, run.path(DETECTIONS), run.path(DETECTED_GROUPS), run.preamble)


def cmd_evaluate(run: Run, args: argparse.Namespace) -> None:
    report = detect.load_report(run.need(DETECTIONS))
    labels = load_labels(run.need(LABELS))
    txns = pipeline.select_window(load_transactions(run.need(TRANSACTIONS)), run.cfg)
    cashback = synth.load_cashback(run.need(CASHBACK))
    predicted = report.predicted
    m = pipeline.evaluate(predicted, labels, run.cfg, _oracle_truth(run, labels))
    avoided = rules.avoided_losses(pipeline.blocked_transactions(predicted, txns))
    groups = detect.group_detections(predicted, txns)
    flags = pipeline.classify_groups(groups, txns, labels, cashback, run.cfg)
    values = {
        HASH_KEY: run.digest,
        "policy": run.cfg.metric_policy,
        "precision": m.precision,
        "recall": m.recall,
        "f1": m.f1,
        "accuracy": m.accuracy,
        "n_predicted": len(predicted),
        "n_seeds": len(report.seeds),
        "n_propagated": len(report.propagated),
        "avoided_losses": str(avoided),
        "groups_stocking": sum(1 for f in flags if f[2]),
        "groups_cashback": sum(1 for f in flags if f[3]),
    }
    rules.save_metrics(values, run.path(METRICS_TXT), run.path(METRICS_JSON), run.preamble)
    run.write(GROUP_RULES, _csv(("retail_store", "size", "stocking_up", "cashback_abuse"), flags))


def cmd_analyze_tcs(run: Run, args: argparse.Namespace) -> None:
    graph = load_graph(run.need(GRAPH))
    labels = load_labels(run.need(LABELS))
    planted = synth.load_groups(run.need(GROUPS))
    txns = pipeline.select_window(load_transactions(run.need(TRANSACTIONS)), run.cfg)
    fraud = [list(g.members) for g in planted]
    rng = np.random.default_rng(run.cfg.seed)
    normal = pipeline.normal_store_groups(graph, txns, labels, [len(g) for g in fraud], rng)
    rows = [(int(r), r.name, f, n) for r, f, n in pipeline.tcs_table(graph, fraud, normal)]
    run.write(TCS_TABLE, _csv(("relation_index", "relation", "tcs_fraud", "tcs_normal"), rows))


def cmd_sweep(run: Run, args: argparse.Namespace) -> None:
    ckpt = run.need(CHECKPOINT)
    graph = load_graph(run.need(GRAPH))
    labels = load_labels(run.need(LABELS))
    txns = load_transactions(run.need(TRANSACTIONS))
    model = load_checkpoint(ckpt)
    truth = _oracle_truth(run, labels)
    header = ("threshold", "precision", "recall", "f1")
    todo = {"tp": ("propagation_threshold", pipeline.TP_GRID, SWEEP_TP),
            "ts": ("seed_quantile", pipeline.TS_GRID, SWEEP_TS)}
    for key in (("tp", "ts") if args.parameter == "both" else (args.parameter,)):
        param, grid, name = todo[key]
        rows = pipeline.sweep(graph, model, txns, labels, run.cfg, param, grid, truth)
        run.write(name, _csv(header, [[v] + _metric_row(m) for v, m in rows]))


def cmd_ablate(run: Run, args: argparse.Namespace) -> None:
    txns = load_transactions(run.need(TRANSACTIONS))
    labels = load_labels(run.need(LABELS))
    out = pipeline.ablation_suite(txns, labels, run.cfg, tuple(args.variants), _oracle_truth(run, labels))
    rows = [[v] + _metric_row(m) for v, m in out.items()]
    run.write(ABLATION, _csv(("variant", "precision", "recall", "f1"), rows))


def cmd_run(run: Run, args: argparse.Namespace) -> None:
    """Every stage in order on freshly generated data."""
    cmd_generate(run, args)
    for stage in (cmd_build_graph, cmd_train, cmd_detect, cmd_evaluate, cmd_analyze_tcs, cmd_sweep):
        stage(run, args)


STAGES = {
    "generate": (cmd_generate, "generate a synthetic scenario with planted fraud groups"),
    "build-graph": (cmd_build_graph, "build the fused user graph from transactions.csv"),
    "train": (cmd_train, "learn relation embeddings and train the detector"),
    "detect": (cmd_detect, "score users, pick seeds and propagate"),
    "evaluate": (cmd_evaluate, "metrics, avoided losses and group rule flags"),
    "analyze-tcs": (cmd_analyze_tcs, "cohesion of planted versus normal groups per relation"),
    "sweep": (cmd_sweep, "detection metrics across threshold grids"),
    "ablate": (cmd_ablate, "train and evaluate model variants"),
    "run": (cmd_run, "generate, then every stage through sweep"),
}


def _variant(text: str) -> str:
    # "-R" reads as an option on the command line, so "R" is accepted too
    name = text if text == "full" or text.startswith("-") else f"-{text}"
    if name not in pipeline.VARIANTS:
        raise argparse.ArgumentTypeError(f"unknown variant {text!r}; expected full, R, W or P")
    return name


def _variant_list(text: str) -> list[str]:
    return [_variant(part.strip()) for part in text.split(",") if part.strip()]


def _config_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("config overrides")
    for f in fields(PipelineConfig):
        group.add_argument(f"--{f.name.replace('_', '-')}", dest=f"cfg_{f.name}", metavar=f.type.upper(),
                           default=None, help=f"(default {f.default})")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fusedfraud", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for name, (_, help_text) in STAGES.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--run-dir", required=True, type=Path, help="directory holding the run's artifacts")
        p.add_argument("--config", type=Path, default=None,
                       help="key=value config file (default: config.txt in the run directory if present)")
        p.add_argument("--force", action="store_true", help="accept inputs made under a different config")
        if name in ("train", "run"):
            p.add_argument("--variant", type=_variant, default="full", help="full, R, W or P")
        if name in ("detect", "run"):
            p.add_argument("--no-propagation", action="store_true", help="report seeds only")
        if name in ("sweep", "run"):
            p.add_argument("--parameter", choices=("tp", "ts", "both"), default="both")
        if name == "ablate":
            p.add_argument("--variants", type=_variant_list, default=list(pipeline.VARIANTS),
                           help="comma-separated subset of full,R,W,P")
        _config_flags(p)
    return parser


def _resolve(args: argparse.Namespace) -> PipelineConfig:
    path = args.config
    if path is None and args.command not in ("generate", "run"):
        default = args.run_dir / CONFIG
        path = default if default.is_file() else None
    flags = {k[4:]: v for k, v in vars(args).items() if k.startswith("cfg_")}
    return resolve(path, flags)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if not args.run_dir.is_dir():
            raise StageError(f"run directory does not exist: {args.run_dir}")
        run = Run(args.run_dir, _resolve(args), args.force)
        STAGES[args.command][0](run, args)
    except (StageError, ConfigError, DataFormatError, FileNotFoundError, KeyError, ValueError, OSError) as exc:
        msg = str(exc).strip().splitlines()[0] if str(exc).strip() else type(exc).__name__
        print(f"fusedfraud {args.command}: error: {msg}", file=sys.stderr)
        return 1
    return 0
