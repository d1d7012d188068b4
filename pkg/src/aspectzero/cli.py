"""Command-line entry point: prepare / train / eval / overlap / report.

Runs are driven by a JSON config file plus flag overrides (flag wins over
file, file wins over default).  Every command echoes the fully resolved
configuration into the run directory:

    <out_root>/<run_id>/{config.json, corpus/, checkpoints/, logs/, metrics/}

The default output root comes from ASPECTZERO_OUT when set.
"""

from __future__ import annotations

import argparse
import glob
import json
import os
import sys
from dataclasses import asdict, dataclass, fields

from . import evaluation, formalizations as fz, strategies
from .corpus import (
    IN_DOMAIN,
    OUT_OF_DOMAIN,
    Dataset,
    aspect_normalize,
    group_by_aspect,
    overlap_report,
    scan_dataset,
    write_jsonl,
)
from .encoder import ReferenceEncoder, load_checkpoint
from .tokenizer import HashTokenizer

OUTPUT_ROOT_ENV = "ASPECTZERO_OUT"

FORMALIZATIONS = {
    "binary": fz.BINARY_PAIR,
    "dual": fz.DUAL_PAIR,
    "generative": fz.GENERATIVE_PROMPT,
    "seq_cls": fz.SEQUENCE_CLS,
}


@dataclass
class RunConfig:
    run_id: str = ""
    data_dir: str = ""
    out_root: str = ""
    normalize: bool = True
    seed: int = 0
    formalization: str = "binary"
    strategy: str = "vanilla"
    hidden_width: int = 32
    n_layers: int = 2
    n_heads: int = 4
    n_buckets: int = 512
    max_sequence_length: int = 128
    embedding_init_std: float = 0.3
    position_init_std: float = 0.02
    model_seed: int = 0
    train_seed: int = 0
    learning_rate: float | None = None
    batch_size: int | None = None
    warmup_fraction: float | None = None
    schedule: str | None = None
    epochs: int | None = None
    weight_decay: float | None = None
    negatives_per_positive: int = 3
    loss_scope: str = "full"
    prompt_options: int = 0
    pretrain_learning_rate: float | None = None
    pretrain_batch_size: int | None = None
    pretrain_epochs: int | None = None
    which: str = "both"
    dump_predictions: bool = False

    def validate(self) -> None:
        if not self.run_id:
            raise ValueError("run_id is required")
        if self.formalization not in FORMALIZATIONS:
            raise ValueError(
                f"unknown formalization {self.formalization!r}; "
                f"choose from {sorted(FORMALIZATIONS)}"
            )
        if self.strategy not in strategies.STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.which not in ("in", "out", "both"):
            raise ValueError("which must be in, out, or both")

    @property
    def run_dir(self) -> str:
        return os.path.join(self.out_root, self.run_id)

    @property
    def kind(self) -> str:
        return FORMALIZATIONS[self.formalization]


def resolve_config(file_path: str | None, overrides: dict) -> RunConfig:
    """defaults < config file < command-line flags."""
    values: dict = {}
    if file_path:
        with open(file_path, encoding="utf-8") as fh:
            loaded = json.load(fh)
        known = {f.name for f in fields(RunConfig)}
        unknown = set(loaded) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        values.update(loaded)
    values.update({k: v for k, v in overrides.items() if v is not None})
    config = RunConfig(**values)
    if not config.out_root:
        config.out_root = os.environ.get(OUTPUT_ROOT_ENV, "runs")
    config.validate()
    return config


def echo_config(config: RunConfig, resolved_stages: list | None = None) -> None:
    payload = asdict(config)
    if resolved_stages is not None:
        payload["resolved_stages"] = [asdict(s) for s in resolved_stages]
    os.makedirs(config.run_dir, exist_ok=True)
    with open(os.path.join(config.run_dir, "config.json"), "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_datasets(directory: str) -> list[Dataset]:
    paths = sorted(glob.glob(os.path.join(directory, "*.jsonl")))
    if not paths:
        raise FileNotFoundError(f"no .jsonl datasets under {directory}")
    return [scan_dataset(p) for p in paths]


def _stats_payload(datasets: list[Dataset]) -> dict:
    per_dataset = []
    for d in datasets:
        n_train = len(d.partition("train"))
        n_test = len(d.partition("test"))
        per_dataset.append(
            {
                "dataset": d.spec.dataset_id,
                "aspect": d.spec.aspect,
                "split": d.spec.split,
                "train": n_train,
                "test": n_test,
                "n_labels": len(d.spec.label_vocabulary),
            }
        )
    unique_counts = {
        c.aspect: c.unique_text_count
        for c in group_by_aspect([d for d in datasets if d.spec.split == IN_DOMAIN])
    }
    return {"datasets": per_dataset, "in_domain_unique_texts": unique_counts}


def _stats_table(payload: dict) -> str:
    lines = []
    for split in (IN_DOMAIN, OUT_OF_DOMAIN):
        rows = [r for r in payload["datasets"] if r["split"] == split]
        if not rows:
            continue
        lines.append(f"[{split}]")
        for r in rows:
            lines.append(
                f"{r['dataset']} {r['aspect']} {r['train']}/{r['test']} {r['n_labels']}"
            )
    lines.append("[in-domain unique train texts per aspect]")
    for aspect, count in payload["in_domain_unique_texts"].items():
        lines.append(f"{aspect} {count}")
    return "\n".join(lines) + "\n"


def cmd_prepare(config: RunConfig) -> int:
    if not config.data_dir:
        raise ValueError("data_dir is required for prepare")
    datasets = _load_datasets(config.data_dir)
    in_datasets = [d for d in datasets if d.spec.split == IN_DOMAIN]
    out_datasets = [d for d in datasets if d.spec.split == OUT_OF_DOMAIN]
    if config.normalize and len(group_by_aspect(in_datasets)) >= 2:
        corpora = aspect_normalize(group_by_aspect(in_datasets), seed=config.seed)
        in_datasets = [d for c in corpora for d in c.datasets]
    echo_config(config)
    corpus_dir = os.path.join(config.run_dir, "corpus")
    for d in in_datasets + out_datasets:
        write_jsonl(d.examples, os.path.join(corpus_dir, f"{d.spec.dataset_id}.jsonl"))
    payload = _stats_payload(in_datasets + out_datasets)
    table = _stats_table(payload)
    with open(os.path.join(corpus_dir, "stats.json"), "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(corpus_dir, "stats.txt"), "w", encoding="utf-8") as fh:
        fh.write(table)
    if in_datasets and out_datasets:
        matrix, text = overlap_report(
            [d.spec for d in in_datasets], [d.spec for d in out_datasets]
        )
        with open(os.path.join(corpus_dir, "overlap.json"), "w", encoding="utf-8") as fh:
            json.dump(matrix, fh, indent=2, sort_keys=True)
            fh.write("\n")
        with open(os.path.join(corpus_dir, "overlap.txt"), "w", encoding="utf-8") as fh:
            fh.write(text)
    sys.stdout.write(table)
    return 0


def _prepared_datasets(config: RunConfig) -> list[Dataset]:
    corpus_dir = os.path.join(config.run_dir, "corpus")
    if not os.path.isdir(corpus_dir):
        raise FileNotFoundError(
            f"no prepared corpus at {corpus_dir}; run `prepare` first"
        )
    return _load_datasets(corpus_dir)


def _stage_overrides(config: RunConfig) -> tuple[dict, dict]:
    finetune = {
        key: getattr(config, key)
        for key in (
            "learning_rate", "batch_size", "warmup_fraction", "schedule",
            "epochs", "weight_decay",
        )
        if getattr(config, key) is not None
    }
    finetune["negatives_per_positive"] = config.negatives_per_positive
    finetune["loss_scope"] = config.loss_scope
    finetune["prompt_options"] = config.prompt_options
    pretrain = {
        key: value
        for key, value in (
            ("learning_rate", config.pretrain_learning_rate),
            ("batch_size", config.pretrain_batch_size),
            ("epochs", config.pretrain_epochs),
        )
        if value is not None
    }
    return pretrain, finetune


def build_model(config: RunConfig, aspects: tuple[str, ...]) -> ReferenceEncoder:
    tokenizer = HashTokenizer(n_buckets=config.n_buckets, aspects=aspects)
    mode = "autoregressive" if config.kind == fz.GENERATIVE_PROMPT else "bidirectional"
    return ReferenceEncoder(
        tokenizer=tokenizer,
        mode=mode,
        hidden_width=config.hidden_width,
        n_layers=config.n_layers,
        n_heads=config.n_heads,
        max_sequence_length=config.max_sequence_length,
        seed=config.model_seed,
        embedding_init_std=config.embedding_init_std,
        position_init_std=config.position_init_std,
    )


def cmd_train(config: RunConfig) -> int:
    datasets = _prepared_datasets(config)
    in_datasets = [d for d in datasets if d.spec.split == IN_DOMAIN]
    if not in_datasets:
        raise ValueError("prepared corpus has no in-domain datasets")
    aspects = tuple(sorted({d.spec.aspect for d in datasets}))
    model = build_model(config, aspects)
    pretrain_overrides, finetune_overrides = _stage_overrides(config)
    plan = strategies.TrainingPlan.default(
        config.strategy,
        config.kind,
        seed=config.train_seed,
        pretrain_overrides=pretrain_overrides,
        finetune_overrides=finetune_overrides,
    )
    echo_config(config, resolved_stages=plan.stages)
    corpora = group_by_aspect(in_datasets)
    stage_names = [s.name for s in plan.stages]
    try:
        strategies.run_plan(plan, model, corpora, run_dir=config.run_dir)
    except Exception as err:  # surface which stage died, then fail non-zero
        done = len(glob.glob(os.path.join(config.run_dir, "checkpoints", "*")))
        stage = stage_names[min(done, len(stage_names) - 1)]
        sys.stderr.write(f"training failed in stage {done} ({stage}): {err}\n")
        return 1
    sys.stdout.write(
        f"trained {config.strategy} {config.formalization}: "
        f"{len(plan.stages)} checkpoint(s) under "
        f"{os.path.join(config.run_dir, 'checkpoints')}\n"
    )
    return 0


def cmd_eval(config: RunConfig, checkpoint: str | None = None) -> int:
    datasets = _prepared_datasets(config)
    if checkpoint is None:
        stage_dirs = sorted(
            glob.glob(os.path.join(config.run_dir, "checkpoints", "*")),
            key=lambda p: os.path.basename(p),
        )
        if not stage_dirs:
            raise FileNotFoundError(f"no checkpoints under {config.run_dir}")
        checkpoint = stage_dirs[-1]
    model = load_checkpoint(checkpoint)
    echo_config(config)
    wanted = {
        "in": (IN_DOMAIN,),
        "out": (OUT_OF_DOMAIN,),
        "both": (IN_DOMAIN, OUT_OF_DOMAIN),
    }[config.which]
    selected = [d for d in datasets if d.spec.split in wanted]
    if not selected:
        raise ValueError(f"no datasets matching --which {config.which}")
    aspect_policy = "dataset" if config.strategy == "implicit" else "none"
    records = []
    for d in selected:
        records.append(
            evaluation.evaluate(
                model,
                config.kind,
                d,
                aspect_policy=aspect_policy,
                run_id=config.run_id,
                dump_predictions=config.dump_predictions,
            )
        )
    report = evaluation.aggregate(records, run_id=config.run_id)
    metrics_dir = os.path.join(config.run_dir, "metrics")
    evaluation.write_metrics(report, os.path.join(metrics_dir, f"{config.which}.json"))
    text = evaluation.render_report(report)
    with open(os.path.join(metrics_dir, f"{config.which}.txt"), "w", encoding="utf-8") as fh:
        fh.write(text)
    if config.dump_predictions:
        for record in records:
            evaluation.write_predictions_csv(
                record,
                os.path.join(metrics_dir, "predictions", f"{record.dataset_id}.csv"),
            )
    sys.stdout.write(text)
    return 0


def cmd_overlap(data_dir: str, out_path: str | None = None) -> int:
    datasets = _load_datasets(data_dir)
    in_specs = [d.spec for d in datasets if d.spec.split == IN_DOMAIN]
    out_specs = [d.spec for d in datasets if d.spec.split == OUT_OF_DOMAIN]
    if not in_specs or not out_specs:
        raise ValueError("overlap needs both in-domain and out-of-domain datasets")
    payload, text = overlap_report(in_specs, out_specs)
    if out_path:
        os.makedirs(os.path.dirname(out_path) or ".", exist_ok=True)
        with open(out_path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
    sys.stdout.write(text)
    return 0


def cmd_report(metrics_path: str) -> int:
    if os.path.isdir(metrics_path):
        candidates = sorted(glob.glob(os.path.join(metrics_path, "**", "*.json"),
                                      recursive=True))
        if not candidates:
            raise FileNotFoundError(f"no metrics JSON under {metrics_path}")
        metrics_path = candidates[-1]
    with open(metrics_path, encoding="utf-8") as fh:
        report = json.load(fh)
    sys.stdout.write(evaluation.render_report(report))
    return 0


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--run-id", dest="run_id")
    parser.add_argument("--data-dir", dest="data_dir")
    parser.add_argument("--out", dest="out_root")
    parser.add_argument("--normalize", dest="normalize",
                        action=argparse.BooleanOptionalAction, default=None)
    parser.add_argument("--seed", type=int, dest="seed")
    parser.add_argument("--formalization", choices=sorted(FORMALIZATIONS))
    parser.add_argument("--strategy", choices=strategies.STRATEGIES)
    parser.add_argument("--hidden-width", type=int, dest="hidden_width")
    parser.add_argument("--n-layers", type=int, dest="n_layers")
    parser.add_argument("--n-heads", type=int, dest="n_heads")
    parser.add_argument("--n-buckets", type=int, dest="n_buckets")
    parser.add_argument("--max-sequence-length", type=int, dest="max_sequence_length")
    parser.add_argument("--embedding-init-std", type=float, dest="embedding_init_std")
    parser.add_argument("--position-init-std", type=float, dest="position_init_std")
    parser.add_argument("--model-seed", type=int, dest="model_seed")
    parser.add_argument("--train-seed", type=int, dest="train_seed")
    parser.add_argument("--learning-rate", type=float, dest="learning_rate")
    parser.add_argument("--batch-size", type=int, dest="batch_size")
    parser.add_argument("--warmup-fraction", type=float, dest="warmup_fraction")
    parser.add_argument("--schedule", choices=("linear", "cosine"))
    parser.add_argument("--epochs", type=int, dest="epochs")
    parser.add_argument("--weight-decay", type=float, dest="weight_decay")
    parser.add_argument("--negatives-per-positive", type=int,
                        dest="negatives_per_positive")
    parser.add_argument("--loss-scope", choices=("full", "answer_only"),
                        dest="loss_scope")
    parser.add_argument("--prompt-options", type=int, dest="prompt_options")
    parser.add_argument("--pretrain-learning-rate", type=float,
                        dest="pretrain_learning_rate")
    parser.add_argument("--pretrain-batch-size", type=int, dest="pretrain_batch_size")
    parser.add_argument("--pretrain-epochs", type=int, dest="pretrain_epochs")
    parser.add_argument("--which", choices=("in", "out", "both"))
    parser.add_argument("--dump-predictions", dest="dump_predictions",
                        action=argparse.BooleanOptionalAction, default=None)


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    config_keys = {f.name for f in fields(RunConfig)}
    overrides = {k: v for k, v in vars(args).items() if k in config_keys}
    return resolve_config(args.config, overrides)


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="aspectzero",
        description="Zero-shot text classification runs: corpus preparation, "
        "training strategies, and evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("prepare", "train", "eval"):
        p = sub.add_parser(name)
        _add_config_flags(p)
        if name == "eval":
            p.add_argument("--checkpoint", help="checkpoint directory (default: last stage)")
    p_overlap = sub.add_parser("overlap")
    p_overlap.add_argument("--data-dir", required=True)
    p_overlap.add_argument("--out", dest="out_path")
    p_report = sub.add_parser("report")
    p_report.add_argument("--metrics", required=True,
                          help="metrics JSON file or a directory to search")
    args = parser.parse_args(argv)
    try:
        if args.command == "prepare":
            return cmd_prepare(_config_from_args(args))
        if args.command == "train":
            return cmd_train(_config_from_args(args))
        if args.command == "eval":
            return cmd_eval(_config_from_args(args), checkpoint=args.checkpoint)
        if args.command == "overlap":
            return cmd_overlap(args.data_dir, args.out_path)
        if args.command == "report":
            return cmd_report(args.metrics)
    except Exception as err:
        sys.stderr.write(f"error: {err}\n")
        return 1
    raise AssertionError("unreachable")


if __name__ == "__main__":
    raise SystemExit(main())
