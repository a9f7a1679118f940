"""Experiment configuration: a flat JSON key space where every key can be
overridden by a same-named command-line flag."""
from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass

__all__ = ["UsageError", "ExperimentConfig", "DEFAULT_PAIR_COUNTS"]

# word-pair budgets per task when the config does not pin one
DEFAULT_PAIR_COUNTS = {"dst": 90, "nlu": 20}

TASKS = ("dst", "nlu")
MODES = ("base", "mlt_ontology", "mlt_attention")


class UsageError(ValueError):
    """Invalid configuration or flag combination; maps to exit code 2."""


@dataclass
class ExperimentConfig:
    task: str = "nlu"
    mode: str = "base"
    train_data: str | None = None
    dev_data: str | None = None
    test_data: str | None = None
    train_embeddings: str | None = None
    test_embeddings: str | None = None
    lexicon: str | None = None
    ontology: str | None = None
    hidden_size: int = 16
    lr: float = 0.2
    epochs: int = 30
    lambda_intent: float = 1.0
    n_pairs: int | None = None
    min_count: int = 2
    threshold: float = 0.5
    negatives_per_positive: int = 3
    scoring: str = "binary"
    init_scale: float = 0.1
    embedding_dim: int | None = None
    seed: int = 0
    out_dir: str = "runs"
    source_checkpoint: str | None = None
    pairs_file: str | None = None
    auto_base_phase: bool = False
    constrain_decode: bool = False

    @classmethod
    def field_names(cls) -> list:
        return [f.name for f in dataclasses.fields(cls)]

    @classmethod
    def from_sources(cls, config_path: str | None = None, overrides: dict | None = None):
        values = {}
        if config_path is not None:
            if not os.path.exists(config_path):
                raise UsageError(f"config file {config_path!r} does not exist")
            with open(config_path, encoding="utf-8") as fh:
                loaded = json.load(fh)
            if not isinstance(loaded, dict):
                raise UsageError("config file must hold a JSON object")
            known = set(cls.field_names())
            for key in loaded:
                if key not in known:
                    raise UsageError(f"unknown config key {key!r}")
            values.update(loaded)
        for key, value in (overrides or {}).items():
            if value is not None:
                values[key] = value
        try:
            return cls(**values)
        except TypeError as err:
            raise UsageError(str(err)) from None

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @property
    def pair_count(self) -> int:
        return self.n_pairs if self.n_pairs is not None else DEFAULT_PAIR_COUNTS[self.task]

    # -- validation -------------------------------------------------------

    def _need(self, field: str, why: str) -> str:
        value = getattr(self, field)
        if value is None:
            raise UsageError(f"config field {field!r} is required {why}")
        return value

    def _need_file(self, field: str, why: str) -> str:
        path = self._need(field, why)
        if not os.path.exists(path):
            raise UsageError(f"config field {field!r}: file {path!r} does not exist")
        return path

    def validate_common(self) -> None:
        if self.task not in TASKS:
            raise UsageError(f"config field 'task' must be one of {TASKS}, got {self.task!r}")
        if self.mode not in MODES:
            raise UsageError(f"config field 'mode' must be one of {MODES}, got {self.mode!r}")
        if self.scoring not in ("binary", "per_slot_softmax"):
            raise UsageError(f"config field 'scoring' must be 'binary' or 'per_slot_softmax'")

    def validate_for_train(self) -> None:
        self.validate_common()
        self._need_file("train_data", "to train")
        self._need_file("train_embeddings", "to train")
        if self.task == "dst":
            self._need_file("ontology", "for the dst task")
        if self.mode == "mlt_ontology":
            self._need_file("ontology", "in mlt_ontology mode")
            self._need_file("lexicon", "in mlt_ontology mode")
        if self.mode == "mlt_attention":
            if self.pairs_file is not None:
                self._need_file("pairs_file", "in mlt_attention mode")
            elif self.source_checkpoint is not None:
                self._need_file("source_checkpoint", "in mlt_attention mode")
                self._need_file("lexicon", "to pair selected keywords")
            elif self.auto_base_phase:
                self._need_file("lexicon", "to pair selected keywords")
            else:
                raise UsageError(
                    "mlt_attention mode needs a source model: set 'pairs_file' or "
                    "'source_checkpoint', or enable 'auto_base_phase'"
                )

    def validate_for_select(self) -> None:
        self.validate_common()
        self._need_file("train_data", "to collect attention records")
        self._need_file("train_embeddings", "to run the source model")
        self._need_file("lexicon", "to pair selected keywords")

    def validate_for_evaluate(self) -> None:
        self.validate_common()
        self._need_file("test_data", "to evaluate")
        if self.test_embeddings is not None:
            self._need_file("test_embeddings", "to evaluate")
        else:
            self._need_file("train_embeddings", "to evaluate (no test_embeddings given)")
        if self.task == "dst":
            self._need_file("ontology", "for the dst task")
