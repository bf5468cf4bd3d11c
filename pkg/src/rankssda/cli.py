"""Command-line driver: data generation, training, evaluation, export, ablation.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 training failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
from contextlib import contextmanager
from pathlib import Path

from .data import SynthConfig, generate_synthetic, load_dataset, split_summary, write_dataset
from .errors import ConfigError, ParseError, ProtocolError, RankSSDAError, ShapeError, TrainingError
from .experiment import METRICS, run_ablation
from .metrics import evaluate, rank_distribution_from_scores
from .model import load_checkpoint, predict, rank_scores
from .trainer import TrainConfig, adapt, pretrain

log = logging.getLogger("rankssda")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_TRAIN = 0, 1, 2, 3


class CommandError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


class Manifest:
    """Run record written before work starts and finalized with output checksums."""

    def __init__(self, out_dir: Path, command: str, config: dict, seeds, inputs: dict, overrides: dict):
        self.path = out_dir / "manifest.json"
        self.doc = {
            "command": command,
            "config": config,
            "overrides": overrides,
            "seeds": list(seeds),
            "inputs": {k: str(v) for k, v in inputs.items()},
            "input_checksums": {k: sha256(v) for k, v in inputs.items() if v and Path(v).is_file()},
            "outputs": {},
            "status": "running",
        }
        self._write()

    def _write(self):
        self.path.write_text(dump_json(self.doc))

    def finish(self, outputs: dict[str, Path]):
        self.doc["outputs"] = {k: {"path": str(p), "sha256": sha256(p)} for k, p in outputs.items()}
        self.doc["status"] = "complete"
        self._write()

    def fail(self, message: str):
        self.doc["status"] = "failed"
        self.doc["error"] = message
        self._write()


@contextmanager
def staged_outputs(paths: list[Path]):
    """Write to ``<name>.partial`` files and move into place only on success."""
    staged = [p.with_name(p.name + ".partial") for p in paths]
    try:
        yield staged
    except BaseException:
        for s in staged:
            s.unlink(missing_ok=True)
        raise
    for s, p in zip(staged, paths):
        os.replace(s, p)


# -- argument helpers --------------------------------------------------------

def _read_json(path, what) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise CommandError(f"{what} not found: {path}", EXIT_CONFIG)
    except json.JSONDecodeError as exc:
        raise CommandError(f"{what} {path} is not valid JSON: {exc}", EXIT_CONFIG)
    if not isinstance(doc, dict):
        raise CommandError(f"{what} {path} must hold a JSON object", EXIT_CONFIG)
    return doc


def _load_data(path, num_classes=None):
    if not Path(path).is_file():
        raise CommandError(f"data file not found: {path}", EXIT_DATA)
    try:
        return load_dataset(path, num_classes)
    except ParseError as exc:
        raise CommandError(f"{path}: {exc}", EXIT_DATA)


def _load_ckpt(path):
    if not Path(path).is_file():
        raise CommandError(f"checkpoint not found: {path}", EXIT_DATA)
    try:
        return load_checkpoint(path)
    except (ValueError, KeyError, RankSSDAError) as exc:
        raise CommandError(f"unreadable checkpoint {path}: {exc}", EXIT_DATA)


def train_config_from_args(args) -> tuple[TrainConfig, dict]:
    base = _read_json(args.config, "train config") if args.config else {}
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.lam is not None:
        overrides["lam"] = args.lam
    if args.epochs is not None:
        overrides["max_epochs"] = args.epochs
    if args.patience is not None:
        overrides["patience"] = args.patience
    if getattr(args, "no_cdr", False):
        overrides["use_cdr"] = False
    if getattr(args, "no_cda", False):
        overrides["use_cda"] = False
    try:
        return TrainConfig.from_dict({**base, **overrides}), overrides
    except ConfigError as exc:
        raise CommandError(f"bad train config: {exc}", EXIT_CONFIG)


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _check_dims(params, bundle):
    if params.config.input_dim != bundle.input_dim or params.config.num_classes != bundle.num_classes:
        raise CommandError(
            f"checkpoint expects {params.config.input_dim} features / {params.config.num_classes} classes, "
            f"data has {bundle.input_dim} / {bundle.num_classes}", EXIT_DATA)


# -- commands ----------------------------------------------------------------

def cmd_gen_data(args) -> int:
    try:
        config = SynthConfig.from_json(args.config) if args.config else SynthConfig()
        if args.seed is not None:
            config = SynthConfig.from_dict({**config.to_dict(), "seed": args.seed})
    except FileNotFoundError:
        raise CommandError(f"config not found: {args.config}", EXIT_CONFIG)
    except ConfigError as exc:
        raise CommandError(f"bad synthetic config: {exc}", EXIT_CONFIG)
    out = _out_dir(args.out)
    manifest = Manifest(out, "gen-data", config.to_dict(), [config.seed],
                        {"config": args.config} if args.config else {}, {"seed": args.seed} if args.seed is not None else {})
    data_path, cfg_path = out / "dataset.csv", out / "synth_config.json"
    bundle = generate_synthetic(config)
    with staged_outputs([data_path, cfg_path]) as (d_tmp, c_tmp):
        write_dataset(bundle, d_tmp)
        c_tmp.write_text(dump_json(config.to_dict()))
    manifest.finish({"dataset": data_path, "synth_config": cfg_path})
    summary = {f"{d}/{s}/{'labeled' if l else 'unlabeled'}": n for (d, s, l), n in split_summary(bundle).items()}
    print(dump_json(summary), end="")
    return EXIT_OK


def _train_outputs(out):
    return out / "checkpoint.json", out / "report.json", out / "epochs.jsonl"


def _run_training(stage, args, runner) -> int:
    config, overrides = train_config_from_args(args)
    out = _out_dir(args.out)
    inputs = {"data": args.data}
    if args.config:
        inputs["config"] = args.config
    if stage == "adapt":
        inputs["checkpoint"] = args.checkpoint
    bundle = _load_data(args.data)
    manifest = Manifest(out, stage, config.to_dict(), [config.seed], inputs, overrides)
    ckpt_path, report_path, log_path = _train_outputs(out)
    try:
        with staged_outputs([ckpt_path, report_path, log_path]) as (c_tmp, r_tmp, l_tmp):
            with open(l_tmp, "w") as log_fh:
                result = runner(bundle, config, lambda e: log_fh.write(json.dumps(e, sort_keys=True) + "\n"))
            result.save(c_tmp)
            result.report.checkpoint = str(ckpt_path)
            r_tmp.write_text(result.report.to_json())
    except (TrainingError, ProtocolError) as exc:
        manifest.fail(str(exc))
        raise CommandError(f"{stage} failed: {exc}", EXIT_TRAIN)
    manifest.finish({"checkpoint": ckpt_path, "report": report_path, "epoch_log": log_path})
    print(f"{stage}: best val mF1 {result.report.best_val_mf1:.4f} at epoch {result.report.best_epoch} "
          f"(stopped at {result.report.stopping_epoch}); wrote {ckpt_path}")
    return EXIT_OK


def cmd_pretrain(args) -> int:
    return _run_training("pretrain", args, lambda b, c, cb: pretrain(b, c, epoch_log=cb))


def cmd_adapt(args) -> int:
    params, _ = _load_ckpt(args.checkpoint)

    def runner(bundle, config, cb):
        _check_dims(params, bundle)
        return adapt(params, bundle, config, epoch_log=cb)

    return _run_training("adapt", args, runner)


def cmd_eval(args) -> int:
    params, doc = _load_ckpt(args.checkpoint)
    bundle = _load_data(args.data, params.config.num_classes)
    _check_dims(params, bundle)
    subset = bundle.select(args.domain, args.split, labeled=True)
    if len(subset) == 0:
        raise CommandError(f"no labeled {args.domain}/{args.split} samples in {args.data}", EXIT_DATA)
    report = evaluate(predict(params, subset.features), subset.labels, bundle.num_classes)
    report.update({"domain": args.domain, "split": args.split, "n": len(subset),
                   "checkpoint": str(args.checkpoint), "training_stage": doc.get("training_stage")})
    text = dump_json(report)
    if args.out:
        Path(args.out).write_text(text)
    print(text, end="")
    return EXIT_OK


def cmd_export_ranks(args) -> int:
    params, _ = _load_ckpt(args.checkpoint)
    bundle = _load_data(args.data, params.config.num_classes)
    out = _out_dir(args.out)
    ranks_path, hist_path = out / "ranks.csv", out / "rank_histogram.csv"
    if len(bundle):
        _check_dims(params, bundle)
        scores = rank_scores(params, bundle.features)
    else:
        scores = []
    with staged_outputs([ranks_path, hist_path]) as (r_tmp, h_tmp):
        with open(r_tmp, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["domain", "class", "rank_score"])
            for i in range(len(bundle)):
                w.writerow([bundle.domains[i], int(bundle.labels[i]), repr(float(scores[i]))])
        dist = rank_distribution_from_scores(scores, bundle.domains, bundle.labels, args.bins) if len(bundle) else {}
        with open(h_tmp, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["domain", "class", "bin_left", "bin_right", "count"])
            for (domain, label), stats in dist.items():
                for j, count in enumerate(stats.counts):
                    w.writerow([domain, label, repr(float(stats.bin_edges[j])),
                                repr(float(stats.bin_edges[j + 1])), int(count)])
    print(f"wrote {len(bundle)} rank scores to {ranks_path}")
    return EXIT_OK


def ablation_table(result: dict) -> list[dict]:
    rows = []
    for row in result["table"]:
        entry = {"CDR": row["CDR"], "CDA": row["CDA"], "arm": row["arm"],
                 "runs": row["runs"], "failed": row["failed"]}
        for m in METRICS:
            entry["Accuracy" if m == "accuracy" else m] = row[m]
        rows.append(entry)
    return rows


def cmd_ablation(args) -> int:
    config, overrides = train_config_from_args(args)
    seeds = args.seeds
    out = _out_dir(args.out)
    bundle = _load_data(args.data)
    inputs = {"data": args.data}
    if args.config:
        inputs["config"] = args.config
    manifest = Manifest(out, "ablation", config.to_dict(), seeds, inputs, overrides)
    result = run_ablation(bundle, config, seeds)
    result["ablation_table"] = ablation_table(result)
    path = out / "ablation.json"
    with staged_outputs([path]) as (tmp,):
        tmp.write_text(dump_json(result))
    manifest.finish({"ablation": path})
    for row in result["ablation_table"]:
        print(f"{row['arm']:8s} " + " ".join(
            f"{k} {row[k]['mean']:.3f}±{row[k]['sd']:.3f}" if row[k]["mean"] is not None else f"{k} n/a"
            for k in ("Accuracy", "mP", "mR", "mF1")))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rankssda", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="generate a synthetic domain-shift dataset")
    p.add_argument("--config", help="SynthConfig JSON (defaults if omitted)")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_gen_data)

    def training_flags(p):
        p.add_argument("--data", required=True)
        p.add_argument("--config", help="TrainConfig JSON")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int)
        p.add_argument("--lambda", dest="lam", type=float)
        p.add_argument("--epochs", type=int)
        p.add_argument("--patience", type=int)

    p = sub.add_parser("pretrain", help="source-only pretraining")
    training_flags(p)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("adapt", help="adaptation from a pretrained checkpoint")
    training_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--no-cdr", action="store_true", help="disable cross-domain ranking pairs")
    p.add_argument("--no-cda", action="store_true", help="disable rank-distribution alignment")
    p.set_defaults(func=cmd_adapt)

    p = sub.add_parser("eval", help="classification metrics of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--domain", choices=("source", "target"), default="target")
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.add_argument("--out", help="also write the metrics JSON here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export-ranks", help="per-sample rank scores and histograms")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--bins", type=int, default=40)
    p.set_defaults(func=cmd_export_ranks)

    p = sub.add_parser("ablation", help="all four CDR/CDA arms over several seeds")
    training_flags(p)
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    p.set_defaults(func=cmd_ablation)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CommandError as exc:
        print(f"rankssda {args.command}: {exc}", file=sys.stderr)
        return exc.code
    except (ConfigError, ShapeError) as exc:
        print(f"rankssda {args.command}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ParseError as exc:
        print(f"rankssda {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingError, ProtocolError) as exc:
        print(f"rankssda {args.command}: {exc}", file=sys.stderr)
        return EXIT_TRAIN


if __name__ == "__main__":
    sys.exit(main())
