"""Command-line front end: seeded training for BASE / MLT_ontology /
MLT_attention modes, attention-based keyword selection, code-switch file
transforms, zero-shot evaluation under swapped embeddings, and the
self-contained synthetic experiment.

Every command is a pure function of (config, input files, seed); the
metric JSON it writes is byte-identical across reruns.
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from . import dst as dst_mod
from . import nlu as nlu_mod
from .checkpoint import read_checkpoint
from .codeswitch import (
    PairDictionary,
    build_pairs,
    collect_top1,
    load_pairs,
    ontology_pairs,
    save_pairs,
    select_keywords,
    write_attention_records,
)
from .config import ExperimentConfig, UsageError
from .dst import (
    DstTrainConfig,
    apply_pairs_to_dialogues,
    gold_belief_states,
    load_dialogues,
    load_dst_model,
    load_ontology,
    save_dialogues,
    save_dst_model,
    track_dialogue,
    train_dst,
)
from .embeddings import load_embeddings, load_lexicon
from .metrics import config_digest, dst_metrics, nlu_metrics
from .nlu import (
    NluTrainConfig,
    apply_pairs_to_examples,
    evaluate_nlu,
    load_nlu_model,
    load_nlu_tsv,
    save_nlu_model,
    save_nlu_tsv,
    train_nlu,
)
from .synth import SynthConfig, run_synth_experiment

__all__ = ["main", "cmd_train", "cmd_select_keywords", "cmd_evaluate", "cmd_generate_cs", "cmd_synth_experiment"]

_INT_FIELDS = {"hidden_size", "epochs", "n_pairs", "min_count", "negatives_per_positive", "embedding_dim", "seed"}
_FLOAT_FIELDS = {"lr", "lambda_intent", "threshold", "init_scale"}
_BOOL_FIELDS = {"auto_base_phase", "constrain_decode"}


def _write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def _out_dir(config: ExperimentConfig) -> Path:
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_table(config: ExperimentConfig, path) -> "EmbeddingTable":
    return load_embeddings(path, config.embedding_dim)


def _dst_train_config(config: ExperimentConfig) -> DstTrainConfig:
    return DstTrainConfig(
        epochs=config.epochs,
        lr=config.lr,
        hidden_size=config.hidden_size,
        seed=config.seed,
        negatives_per_positive=config.negatives_per_positive,
        scoring=config.scoring,
        threshold=config.threshold,
        init_scale=config.init_scale,
    )


def _nlu_train_config(config: ExperimentConfig) -> NluTrainConfig:
    return NluTrainConfig(
        epochs=config.epochs,
        lr=config.lr,
        hidden_size=config.hidden_size,
        seed=config.seed,
        lambda_intent=config.lambda_intent,
        init_scale=config.init_scale,
    )


def _dst_report(model, dialogues, ontology, config: ExperimentConfig, digest: str):
    pred, gold = [], []
    for dialogue in dialogues:
        pred.extend(track_dialogue(model, dialogue, ontology, config.threshold))
        gold.extend(gold_belief_states(dialogue, ontology))
    return dst_metrics(pred, gold, config_digest=digest, seed=config.seed)


def _nlu_report(model, examples, config: ExperimentConfig, digest: str):
    pred_intents, pred_tags = evaluate_nlu(model, examples, constrain=config.constrain_decode)
    return nlu_metrics(
        pred_intents,
        [ex.intent for ex in examples],
        pred_tags,
        [ex.tags for ex in examples],
        config_digest=digest,
        seed=config.seed,
    )


def _attention_pairs(config: ExperimentConfig, model, data, lexicon):
    """collect_top1 -> select_keywords -> build_pairs over the training data."""
    if config.task == "dst":
        records = dst_mod.attention_records(model, data)
    else:
        records = nlu_mod.attention_records(model, data)
    counts = collect_top1(records)
    keywords = select_keywords(counts.counts, config.pair_count, config.min_count)
    built = build_pairs(keywords, lexicon)
    return records, counts, keywords, built


def _resolve_mlt_pairs(config: ExperimentConfig, table, data, ontology):
    """The pair dictionary for an mlt_* training run, plus its provenance."""
    if config.mode == "mlt_ontology":
        lexicon = load_lexicon(config.lexicon)
        return ontology_pairs(ontology.terms(), lexicon), "ontology"
    if config.pairs_file is not None:
        return load_pairs(config.pairs_file), f"file:{config.pairs_file}"
    lexicon = load_lexicon(config.lexicon)
    if config.source_checkpoint is not None:
        if config.task == "dst":
            source_model = load_dst_model(config.source_checkpoint, table)
        else:
            source_model = load_nlu_model(config.source_checkpoint, table)
        provenance = f"attention:{config.source_checkpoint}"
    else:
        # auto base phase: train a source-language model first, same seed
        if config.task == "dst":
            source_model = train_dst(data, table, ontology, _dst_train_config(config)).model
        else:
            source_model = train_nlu(data, table, _nlu_train_config(config)).model
        provenance = "attention:auto-base-phase"
    _, _, _, built = _attention_pairs(config, source_model, data, lexicon)
    return built.pairs, provenance


def cmd_train(config: ExperimentConfig) -> dict:
    """Train per config; writes checkpoint.json, metrics.json, manifest.json
    (and pairs.tsv in mlt modes) into the output directory."""
    config.validate_for_train()
    started = time.time()
    out = _out_dir(config)
    digest = config_digest(config.to_dict())
    table = _load_table(config, config.train_embeddings)

    pairs = None
    pair_source = None
    if config.task == "dst":
        ontology = load_ontology(config.ontology)
        data = load_dialogues(config.train_data)
        if config.mode != "base":
            pairs, pair_source = _resolve_mlt_pairs(config, table, data, ontology)
            data = apply_pairs_to_dialogues(data, pairs)
        result = train_dst(data, table, ontology, _dst_train_config(config))
        save_dst_model(result.model, out / "checkpoint.json", seed=config.seed)
        report = _dst_report(result.model, data, ontology, config, digest)
    else:
        data = load_nlu_tsv(config.train_data)
        if config.mode != "base":
            pairs, pair_source = _resolve_mlt_pairs(config, table, data, None)
            data = apply_pairs_to_examples(data, pairs)
        result = train_nlu(data, table, _nlu_train_config(config))
        save_nlu_model(result.model, out / "checkpoint.json", seed=config.seed)
        report = _nlu_report(result.model, data, config, digest)

    (out / "metrics.json").write_text(report.to_json(), encoding="utf-8")
    if pairs is not None:
        save_pairs(pairs, out / "pairs.tsv")
    manifest = {
        "command": "train",
        "config": config.to_dict(),
        "config_digest": digest,
        "seed": config.seed,
        "mode": config.mode,
        "pair_source": pair_source,
        "pairs": [list(p) for p in pairs] if pairs is not None else [],
        "epoch_losses": result.epoch_losses,
        "final_metrics": report.to_dict(),
        "outputs": ["checkpoint.json", "metrics.json"] + (["pairs.tsv"] if pairs is not None else []),
        "wall_clock_s": time.time() - started,
    }
    _write_json(out / "manifest.json", manifest)
    return manifest


def cmd_select_keywords(config: ExperimentConfig, checkpoint_path: str) -> dict:
    """Dump attention records for the training set and write the selected
    pair dictionary."""
    config.validate_for_select()
    blob = read_checkpoint(checkpoint_path)
    if blob.get("kind") != config.task:
        raise UsageError(
            f"checkpoint task {blob.get('kind')!r} does not match config task {config.task!r}"
        )
    out = _out_dir(config)
    table = _load_table(config, config.train_embeddings)
    lexicon = load_lexicon(config.lexicon)
    if config.task == "dst":
        model = load_dst_model(checkpoint_path, table)
        data = load_dialogues(config.train_data)
    else:
        model = load_nlu_model(checkpoint_path, table)
        data = load_nlu_tsv(config.train_data)
    records, counts, keywords, built = _attention_pairs(config, model, data, lexicon)
    write_attention_records(records, out / "attention.jsonl")
    save_pairs(built.pairs, out / "pairs.tsv")
    summary = {
        "command": "select-keywords",
        "config_digest": config_digest(config.to_dict()),
        "n_requested": config.pair_count,
        "min_count": config.min_count,
        "keywords": keywords,
        "pairs": [list(p) for p in built.pairs],
        "skipped_keywords": built.skipped,
        "records": len(records),
        "records_skipped": counts.skipped,
        "outputs": ["attention.jsonl", "pairs.tsv"],
    }
    _write_json(out / "selection.json", summary)
    return summary


def cmd_evaluate(config: ExperimentConfig, checkpoint_path: str):
    """Inference-only evaluation, swapping in the target-language embedding
    table; writes metrics.json."""
    config.validate_for_evaluate()
    blob = read_checkpoint(checkpoint_path)
    if blob.get("kind") != config.task:
        raise UsageError(
            f"checkpoint task {blob.get('kind')!r} does not match config task {config.task!r}"
        )
    out = _out_dir(config)
    digest = config_digest(config.to_dict())
    emb_path = config.test_embeddings if config.test_embeddings is not None else config.train_embeddings
    table = _load_table(config, emb_path)
    if config.task == "dst":
        model = load_dst_model(checkpoint_path, table)
        ontology = load_ontology(config.ontology)
        dialogues = load_dialogues(config.test_data)
        report = _dst_report(model, dialogues, ontology, config, digest)
    else:
        model = load_nlu_model(checkpoint_path, table)
        examples = load_nlu_tsv(config.test_data)
        report = _nlu_report(model, examples, config, digest)
    (out / "metrics.json").write_text(report.to_json(), encoding="utf-8")
    return report


def cmd_generate_cs(task: str, pairs_path: str, data_path: str, out_path: str) -> None:
    """Rewrite a dataset file through a pair dictionary; labels unchanged."""
    pairs = load_pairs(pairs_path)
    if task == "dst":
        save_dialogues(apply_pairs_to_dialogues(load_dialogues(data_path), pairs), out_path)
    elif task == "nlu":
        save_nlu_tsv(apply_pairs_to_examples(load_nlu_tsv(data_path), pairs), out_path)
    else:
        raise UsageError(f"generate-cs task must be 'dst' or 'nlu', got {task!r}")


def cmd_synth_experiment(seed: int = 11, trials: int = 1, noise: float | None = None, out_dir: str = "runs/synth") -> dict:
    """BASE vs attention-informed mixed-language training on the built-in
    synthetic bilingual corpus; writes per-arm metric reports and deltas."""
    synth_config = SynthConfig() if noise is None else SynthConfig(noise=noise)
    report = run_synth_experiment(synth_config, seed, trials)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "synth_report.json", report)
    for run in report["runs"]:
        _write_json(out / f"base_metrics_seed{run['seed']}.json", run["base"])
        _write_json(out / f"mlt_metrics_seed{run['seed']}.json", run["mlt_attention"])
    return report


# ---------------------------------------------------------------------------
# argument parsing


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file (flat key space)")
    for name in ExperimentConfig.field_names():
        flag = "--" + name.replace("_", "-")
        if name in _BOOL_FIELDS:
            parser.add_argument(flag, dest=name, action="store_const", const=True, default=None)
        elif name in _INT_FIELDS:
            parser.add_argument(flag, dest=name, type=int, default=None)
        elif name in _FLOAT_FIELDS:
            parser.add_argument(flag, dest=name, type=float, default=None)
        else:
            parser.add_argument(flag, dest=name, default=None)


def _config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    overrides = {
        name: getattr(args, name)
        for name in ExperimentConfig.field_names()
        if hasattr(args, name)
    }
    if getattr(args, "checkpoint_flag", None) is not None:
        overrides["source_checkpoint"] = args.checkpoint_flag
    if getattr(args, "pairs_flag", None) is not None:
        overrides["pairs_file"] = args.pairs_flag
    return ExperimentConfig.from_sources(args.config, overrides)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mixlang",
        description="Mixed-language training toolkit for zero-shot cross-lingual dialogue models",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a model (base or mixed-language mode)")
    _add_config_flags(p_train)
    p_train.add_argument("--checkpoint", dest="checkpoint_flag", default=None,
                         help="source model for mlt_attention keyword selection")
    p_train.add_argument("--pairs", dest="pairs_flag", default=None,
                         help="pair dictionary file for mlt_attention mode")

    p_select = sub.add_parser("select-keywords", help="mine keywords from a trained model's attention")
    _add_config_flags(p_select)
    p_select.add_argument("--checkpoint", required=True, help="trained model checkpoint")

    p_eval = sub.add_parser("evaluate", help="inference-only evaluation with swapped embeddings")
    _add_config_flags(p_eval)
    p_eval.add_argument("--checkpoint", required=True, help="trained model checkpoint")

    p_gen = sub.add_parser("generate-cs", help="code-switch a dataset file through a pair dictionary")
    p_gen.add_argument("--config", default=None)
    p_gen.add_argument("--task", default=None, choices=["dst", "nlu"])
    p_gen.add_argument("--pairs", required=True)
    p_gen.add_argument("--data", required=True)
    p_gen.add_argument("--out", required=True)

    p_synth = sub.add_parser("synth-experiment", help="built-in synthetic zero-shot comparison")
    p_synth.add_argument("--seed", type=int, default=11)
    p_synth.add_argument("--trials", type=int, default=1)
    p_synth.add_argument("--noise", type=float, default=None)
    p_synth.add_argument("--out-dir", default="runs/synth")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "train":
            cmd_train(_config_from_args(args))
        elif args.command == "select-keywords":
            cmd_select_keywords(_config_from_args(args), args.checkpoint)
        elif args.command == "evaluate":
            cmd_evaluate(_config_from_args(args), args.checkpoint)
        elif args.command == "generate-cs":
            task = args.task
            if task is None and args.config is not None:
                task = ExperimentConfig.from_sources(args.config, {}).task
            if task is None:
                raise UsageError("generate-cs needs --task or a config file naming one")
            cmd_generate_cs(task, args.pairs, args.data, args.out)
        elif args.command == "synth-experiment":
            cmd_synth_experiment(args.seed, args.trials, args.noise, args.out_dir)
        else:  # pragma: no cover
            parser.error(f"unknown command {args.command!r}")
    except UsageError as err:
        print(f"usage error: {err}", file=sys.stderr)
        return 2
    except (ValueError, OSError, FloatingPointError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
