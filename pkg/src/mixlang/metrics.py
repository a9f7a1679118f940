"""Evaluation metrics: slot / joint goal / request accuracy for state
tracking, intent accuracy, and micro-averaged BIO chunk F1.

Every metric is an exact numerator/denominator count; zero-denominator
metrics report 0.0 and are flagged undefined instead of raising, so batch
evaluation never aborts.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Sequence

__all__ = [
    "BeliefState",
    "Fraction",
    "MetricsReport",
    "slot_accuracy",
    "joint_goal_accuracy",
    "request_accuracy",
    "intent_accuracy",
    "bio_chunks",
    "bio_f1",
    "bio_f1_detail",
    "ChunkF1",
    "dst_metrics",
    "nlu_metrics",
    "config_digest",
]


@dataclass
class BeliefState:
    """Accumulated goal assignment plus this turn's requested slots."""

    goal: dict
    requests: set = field(default_factory=set)

    def copy(self) -> "BeliefState":
        return BeliefState(goal=dict(self.goal), requests=set(self.requests))


@dataclass(frozen=True)
class Fraction:
    numerator: int
    denominator: int

    @property
    def value(self) -> float:
        return 0.0 if self.denominator == 0 else self.numerator / self.denominator

    @property
    def undefined(self) -> bool:
        return self.denominator == 0


def _check_aligned(pred: Sequence, gold: Sequence, what: str) -> None:
    if len(pred) != len(gold):
        raise ValueError(f"{what}: {len(pred)} predictions vs {len(gold)} references")


def slot_accuracy_fraction(pred: Sequence[BeliefState], gold: Sequence[BeliefState]) -> Fraction:
    _check_aligned(pred, gold, "slot_accuracy")
    num = den = 0
    for p, g in zip(pred, gold):
        for slot, value in g.goal.items():
            den += 1
            if p.goal.get(slot) == value:
                num += 1
    return Fraction(num, den)


def slot_accuracy(pred, gold) -> float:
    """Fraction of (turn, goal slot) pairs whose predicted value is correct."""
    return slot_accuracy_fraction(pred, gold).value


def joint_goal_accuracy_fraction(pred, gold) -> Fraction:
    _check_aligned(pred, gold, "joint_goal_accuracy")
    num = 0
    for p, g in zip(pred, gold):
        if all(p.goal.get(slot) == value for slot, value in g.goal.items()):
            num += 1
    return Fraction(num, len(gold))


def joint_goal_accuracy(pred, gold) -> float:
    """Fraction of turns where every goal slot matches exactly."""
    return joint_goal_accuracy_fraction(pred, gold).value


def request_accuracy_fraction(pred, gold) -> Fraction:
    _check_aligned(pred, gold, "request_accuracy")
    num = sum(1 for p, g in zip(pred, gold) if set(p.requests) == set(g.requests))
    return Fraction(num, len(gold))


def request_accuracy(pred, gold) -> float:
    """Fraction of turns whose predicted request set equals the gold set."""
    return request_accuracy_fraction(pred, gold).value


def intent_accuracy_fraction(pred: Sequence[str], gold: Sequence[str]) -> Fraction:
    _check_aligned(pred, gold, "intent_accuracy")
    num = sum(1 for p, g in zip(pred, gold) if p == g)
    return Fraction(num, len(gold))


def intent_accuracy(pred, gold) -> float:
    return intent_accuracy_fraction(pred, gold).value


def bio_chunks(tags: Sequence[str]) -> set:
    """Extract (type, start, end) chunks, inclusive bounds.

    Conventional repair: an I-x that does not continue a chunk of type x
    starts a new chunk.
    """
    chunks = set()
    current = None  # (type, start)
    for i, tag in enumerate(tags):
        if tag == "O":
            if current:
                chunks.add((current[0], current[1], i - 1))
                current = None
            continue
        if len(tag) < 3 or tag[1] != "-" or tag[0] not in "BI":
            raise ValueError(f"malformed BIO tag {tag!r} at position {i}")
        kind, ctype = tag[0], tag[2:]
        if kind == "B" or current is None or current[0] != ctype:
            if current:
                chunks.add((current[0], current[1], i - 1))
            current = (ctype, i)
    if current:
        chunks.add((current[0], current[1], len(tags) - 1))
    return chunks


@dataclass(frozen=True)
class ChunkF1:
    true_positive: int
    pred_total: int
    gold_total: int

    @property
    def precision(self) -> float:
        return 0.0 if self.pred_total == 0 else self.true_positive / self.pred_total

    @property
    def recall(self) -> float:
        return 0.0 if self.gold_total == 0 else self.true_positive / self.gold_total

    @property
    def f1(self) -> float:
        denom = self.pred_total + self.gold_total
        return 0.0 if denom == 0 else 2.0 * self.true_positive / denom

    @property
    def undefined(self) -> bool:
        return self.pred_total + self.gold_total == 0


def bio_f1_detail(pred_tags: Sequence[Sequence[str]], gold_tags: Sequence[Sequence[str]]) -> ChunkF1:
    _check_aligned(pred_tags, gold_tags, "bio_f1")
    tp = pred_total = gold_total = 0
    for i, (p, g) in enumerate(zip(pred_tags, gold_tags)):
        if len(p) != len(g):
            raise ValueError(f"bio_f1: sequence {i} has {len(p)} predicted tags vs {len(g)} gold")
        pc, gc = bio_chunks(p), bio_chunks(g)
        tp += len(pc & gc)
        pred_total += len(pc)
        gold_total += len(gc)
    return ChunkF1(true_positive=tp, pred_total=pred_total, gold_total=gold_total)


def bio_f1(pred_tags, gold_tags) -> float:
    """Micro-averaged exact-chunk F1 over BIO tag sequences."""
    return bio_f1_detail(pred_tags, gold_tags).f1


METRIC_NAMES = ("slot_acc", "joint_goal_acc", "request_acc", "intent_acc", "slot_f1")


@dataclass
class MetricsReport:
    """All five metrics with their counts; unused metrics are flagged undefined."""

    fractions: dict
    config_digest: str = ""
    seed: int | None = None

    def value(self, name: str) -> float:
        return self.fractions[name].value

    def undefined(self, name: str) -> bool:
        return self.fractions[name].undefined

    def to_dict(self) -> dict:
        return {
            "metrics": {name: self.fractions[name].value for name in METRIC_NAMES},
            "counts": {
                name: {
                    "numerator": self.fractions[name].numerator,
                    "denominator": self.fractions[name].denominator,
                }
                for name in METRIC_NAMES
            },
            "undefined": [name for name in METRIC_NAMES if self.fractions[name].undefined],
            "config_digest": self.config_digest,
            "seed": self.seed,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def _empty_fractions() -> dict:
    return {name: Fraction(0, 0) for name in METRIC_NAMES}


def dst_metrics(pred_states, gold_states, config_digest: str = "", seed=None) -> MetricsReport:
    fr = _empty_fractions()
    fr["slot_acc"] = slot_accuracy_fraction(pred_states, gold_states)
    fr["joint_goal_acc"] = joint_goal_accuracy_fraction(pred_states, gold_states)
    fr["request_acc"] = request_accuracy_fraction(pred_states, gold_states)
    return MetricsReport(fractions=fr, config_digest=config_digest, seed=seed)


def nlu_metrics(pred_intents, gold_intents, pred_tags, gold_tags, config_digest: str = "", seed=None) -> MetricsReport:
    fr = _empty_fractions()
    fr["intent_acc"] = intent_accuracy_fraction(pred_intents, gold_intents)
    detail = bio_f1_detail(pred_tags, gold_tags)
    fr["slot_f1"] = Fraction(2 * detail.true_positive, detail.pred_total + detail.gold_total)
    return MetricsReport(fractions=fr, config_digest=config_digest, seed=seed)


def config_digest(config_dict: dict) -> str:
    """Stable digest of a JSON-serializable configuration mapping."""
    canonical = json.dumps(config_dict, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]
