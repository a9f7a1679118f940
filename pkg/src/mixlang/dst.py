"""Dialogue state tracking: BiLSTM + attention utterance encoder, a
three-part context gate over (candidate, system acts), and a linear
match/no-match head per (slot, value) candidate.

Belief tracking carries a slot's previous value forward whenever no
candidate clears the no-value threshold; requests are per-turn.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .checkpoint import params_payload, read_checkpoint, restore_params, write_checkpoint
from .codeswitch import AttentionRecord, PairDictionary, generate_cs, tokenize
from .embeddings import EmbeddingTable
from .metrics import BeliefState
from .numeric import (
    BiLstmParams,
    Tape,
    Tensor,
    affine,
    bilstm_encode,
    concat,
    dot,
    init_bilstm,
    logsumexp,
    sgd_step,
    sigmoid,
    softmax,
    stack,
    tensor,
    transpose,
)

__all__ = [
    "ConfigurationError",
    "DataError",
    "SystemActs",
    "DialogueTurn",
    "SlotCandidate",
    "Ontology",
    "DstModel",
    "DstTrainConfig",
    "DstTrainResult",
    "NONE_VALUE",
    "REQUEST_SLOT",
    "encode_utterance",
    "context_gate",
    "context_gate_parts",
    "score_candidate",
    "match_probability",
    "track_dialogue",
    "train_dst",
    "candidate_accuracy",
    "attention_records",
    "apply_pairs_to_dialogues",
    "load_dialogues",
    "save_dialogues",
    "load_ontology",
    "save_dst_model",
    "load_dst_model",
]

NONE_VALUE = "none"
REQUEST_SLOT = "request"


class ConfigurationError(ValueError):
    pass


class DataError(ValueError):
    pass


@dataclass
class SystemActs:
    """Previous system behavior: a slot request and/or a slot-value confirmation."""

    request: str | None = None
    confirm_slot: str | None = None
    confirm_value: str | None = None

    def __post_init__(self):
        if (self.confirm_slot is None) != (self.confirm_value is None):
            raise ValueError("confirm_slot and confirm_value must be present together")


@dataclass
class DialogueTurn:
    utterance: list
    acts: SystemActs = field(default_factory=SystemActs)
    gold_slots: dict = field(default_factory=dict)
    gold_requests: set = field(default_factory=set)

    def __post_init__(self):
        if not self.utterance:
            raise ValueError("turn utterance must be non-empty")


@dataclass(frozen=True)
class SlotCandidate:
    slot: str
    value: str


@dataclass
class Ontology:
    """Goal slots with their legal values, plus the requestable slot names."""

    goal_slots: dict
    requestable: list

    def terms(self) -> list:
        out = list(self.goal_slots.keys())
        for values in self.goal_slots.values():
            out.extend(values)
        out.extend(self.requestable)
        return out

    def validate_turn(self, turn: DialogueTurn) -> None:
        for slot, value in turn.gold_slots.items():
            if slot not in self.goal_slots:
                raise ConfigurationError(f"unknown goal slot {slot!r} in turn label")
            if value != NONE_VALUE and value not in self.goal_slots[slot]:
                raise ConfigurationError(f"value {value!r} not in ontology for slot {slot!r}")
        for r in turn.gold_requests:
            if r not in self.requestable:
                raise ConfigurationError(f"unknown requestable slot {r!r}")


# ---------------------------------------------------------------------------
# dataset and ontology files


def load_ontology(path) -> Ontology:
    with open(path, encoding="utf-8") as fh:
        obj = json.load(fh)
    if "requestable" not in obj:
        raise ConfigurationError("ontology file is missing the 'requestable' list")
    goal = {
        slot.lower(): [str(v).lower() for v in values]
        for slot, values in obj.items()
        if slot != "requestable"
    }
    return Ontology(goal_slots=goal, requestable=[str(r).lower() for r in obj["requestable"]])


def _first_or_none(value):
    # dataset files may carry a list of acts; the first one wins
    if value is None:
        return None
    if isinstance(value, list):
        return str(value[0]).lower() if value else None
    return str(value).lower()


def load_dialogues(path) -> list:
    """Parse the dialogue dataset JSON into lists of DialogueTurn."""
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    dialogues = []
    for d_idx, dialogue in enumerate(data):
        turns = []
        for t_idx, turn in enumerate(dialogue):
            try:
                acts_obj = turn.get("system_acts", {}) or {}
                acts = SystemActs(
                    request=_first_or_none(acts_obj.get("request")),
                    confirm_slot=_first_or_none(acts_obj.get("confirm_slot")),
                    confirm_value=_first_or_none(acts_obj.get("confirm_value")),
                )
                turns.append(
                    DialogueTurn(
                        utterance=tokenize(turn["utterance"]),
                        acts=acts,
                        gold_slots={
                            str(k).lower(): str(v).lower()
                            for k, v in (turn.get("turn_label", {}) or {}).items()
                        },
                        gold_requests={str(r).lower() for r in turn.get("requested", [])},
                    )
                )
            except (KeyError, ValueError) as err:
                raise DataError(f"dialogue {d_idx} turn {t_idx}: {err}") from err
        dialogues.append(turns)
    return dialogues


def save_dialogues(dialogues: Sequence[Sequence[DialogueTurn]], path) -> None:
    data = []
    for dialogue in dialogues:
        data.append(
            [
                {
                    "utterance": " ".join(turn.utterance),
                    "system_acts": {
                        "request": turn.acts.request,
                        "confirm_slot": turn.acts.confirm_slot,
                        "confirm_value": turn.acts.confirm_value,
                    },
                    "turn_label": dict(turn.gold_slots),
                    "requested": sorted(turn.gold_requests),
                }
                for turn in dialogue
            ]
        )
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh, ensure_ascii=False, indent=1)
        fh.write("\n")


def apply_pairs_to_dialogues(dialogues, pairs: PairDictionary) -> list:
    """Code-switch every utterance; gold labels are untouched."""
    out = []
    for dialogue in dialogues:
        out.append([replace(turn, utterance=generate_cs(turn.utterance, pairs)) for turn in dialogue])
    return out


# ---------------------------------------------------------------------------
# model


class DstModel:
    """Parameter container; the operations below are free functions over it."""

    def __init__(self, table: EmbeddingTable, hidden_size: int, scoring: str = "binary"):
        if scoring not in ("binary", "per_slot_softmax"):
            raise ConfigurationError(f"unknown scoring mode {scoring!r}")
        self.table = table
        self.hidden_size = hidden_size
        self.scoring = scoring
        d = table.dim
        self.bilstm: BiLstmParams | None = None
        self.w_a: Tensor | None = None
        self.w1: Tensor | None = None
        self.w2: Tensor | None = None
        self.fc_w: Tensor | None = None
        self.fc_b: Tensor | None = None
        self.dim = d

    @classmethod
    def init(cls, table: EmbeddingTable, hidden_size: int, rng: np.random.Generator, scoring: str = "binary", scale: float = 0.1):
        model = cls(table, hidden_size, scoring)
        d, h = table.dim, hidden_size
        model.bilstm = init_bilstm(d, h, rng, scale)
        model.w_a = Tensor(rng.uniform(-scale, scale, 2 * h), requires_grad=True)
        # identity-plus-noise start for the gate matrices: the act gates then
        # act as similarity detectors from the first step, which the linear
        # head can read immediately
        model.w1 = Tensor(np.eye(d) + rng.uniform(-scale, scale, (d, d)), requires_grad=True)
        model.w2 = Tensor(np.eye(d) + rng.uniform(-scale, scale, (d, d)), requires_grad=True)
        model.fc_w = Tensor(rng.uniform(-scale, scale, (2, 2 * h + d)), requires_grad=True)
        model.fc_b = Tensor(np.zeros(2), requires_grad=True)
        return model

    def params(self) -> dict:
        out = self.bilstm.named("bilstm")
        out.update({"w_a": self.w_a, "w1": self.w1, "w2": self.w2, "fc_w": self.fc_w, "fc_b": self.fc_b})
        return out

    def embed(self, tokens: Sequence[str]) -> list:
        return [tensor(self.table.lookup(t)) for t in tokens]

    def mean_embedding(self, text: str | None) -> np.ndarray:
        """Mean vector over the whitespace tokens of a phrase; zeros if absent."""
        if text is None:
            return np.zeros(self.dim)
        parts = text.split()
        if not parts:
            return np.zeros(self.dim)
        return np.mean([self.table.lookup(t) for t in parts], axis=0)


def encode_utterance(model: DstModel, tokens: Sequence[str]):
    """BiLSTM + attention pooling; returns (R, attention weights)."""
    if not tokens:
        raise ValueError("cannot encode an empty utterance")
    hs = bilstm_encode(model.embed(tokens), model.bilstm)
    scores = stack([dot(h, model.w_a) for h in hs])
    alpha = softmax(scores)
    pooled = transpose(stack(hs)) @ alpha
    return pooled, alpha


def _candidate_embedding(model: DstModel, cand: SlotCandidate) -> np.ndarray:
    parts = cand.slot.split() + cand.value.split()
    return np.mean([model.table.lookup(t) for t in parts], axis=0)


def context_gate_parts(model: DstModel, cand: SlotCandidate, acts: SystemActs):
    e_sc = _candidate_embedding(model, cand)
    g1 = tensor(e_sc)
    e_r = tensor(model.mean_embedding(acts.request))
    e_conf = tensor(model.mean_embedding(acts.confirm_slot)) + tensor(model.mean_embedding(acts.confirm_value))
    g2 = sigmoid(tensor(e_sc) * (model.w1 @ e_r))
    g3 = sigmoid(tensor(e_sc) * (model.w2 @ e_conf))
    return g1, g2, g3


def context_gate(model: DstModel, cand: SlotCandidate, acts: SystemActs) -> Tensor:
    """Sum of candidate, request, and confirm gates; absent acts contribute
    zero vectors inside the sigmoid arguments."""
    g1, g2, g3 = context_gate_parts(model, cand, acts)
    return g1 + g2 + g3


def score_candidate(model: DstModel, pooled: Tensor, gate: Tensor) -> Tensor:
    """Probability pair (match, no-match) for one candidate."""
    logits = affine(concat([pooled, gate]), model.fc_w, model.fc_b)
    return softmax(logits)


def _match_logit(model: DstModel, pooled: Tensor, gate: Tensor) -> Tensor:
    return affine(concat([pooled, gate]), model.fc_w, model.fc_b)[0]


def match_probability(model: DstModel, pooled: Tensor, cand: SlotCandidate, acts: SystemActs) -> float:
    gate = context_gate(model, cand, acts)
    return float(score_candidate(model, pooled, gate).data[0])


def track_dialogue(
    model: DstModel | None,
    dialogue: Sequence[DialogueTurn],
    ontology: Ontology,
    threshold: float = 0.5,
    prob_fn=None,
) -> list:
    """Per-turn belief states; goal slots carry over below threshold,
    requests are re-predicted every turn.

    prob_fn(turn_index, turn, candidate) -> float overrides the model's
    match probability; it exists so decoding policy can be exercised with
    scripted scores.
    """
    scoring = model.scoring if model is not None else "binary"
    previous = {slot: NONE_VALUE for slot in ontology.goal_slots}
    states = []
    for t_idx, turn in enumerate(dialogue):
        if prob_fn is None:
            pooled, _ = encode_utterance(model, turn.utterance)
            prob = lambda cand: match_probability(model, pooled, cand, turn.acts)
            logit = lambda cand: float(
                _match_logit(model, pooled, context_gate(model, cand, turn.acts)).data
            )
        else:
            prob = lambda cand: prob_fn(t_idx, turn, cand)
            logit = prob
        goal = {}
        for slot, values in ontology.goal_slots.items():
            if scoring == "per_slot_softmax":
                scored = [logit(SlotCandidate(slot, v)) for v in list(values) + [NONE_VALUE]]
                best = int(np.argmax(scored))
                goal[slot] = previous[slot] if best == len(values) else values[best]
            else:
                best_value, best_p = None, -1.0
                for value in values:
                    p = prob(SlotCandidate(slot, value))
                    if p > best_p:
                        best_value, best_p = value, p
                goal[slot] = best_value if best_p > threshold else previous[slot]
        requests = {r for r in ontology.requestable if prob(SlotCandidate(REQUEST_SLOT, r)) > 0.5}
        states.append(BeliefState(goal=dict(goal), requests=requests))
        previous = goal
    return states


def gold_belief_states(dialogue: Sequence[DialogueTurn], ontology: Ontology) -> list:
    """Accumulate per-turn labels into reference belief states."""
    state = {slot: NONE_VALUE for slot in ontology.goal_slots}
    states = []
    for turn in dialogue:
        state.update(turn.gold_slots)
        states.append(BeliefState(goal=dict(state), requests=set(turn.gold_requests)))
    return states


def attention_records(model: DstModel, dialogues) -> list:
    """Dump per-utterance attention weights for keyword selection."""
    records = []
    for d_idx, dialogue in enumerate(dialogues):
        for t_idx, turn in enumerate(dialogue):
            _, alpha = encode_utterance(model, turn.utterance)
            records.append(
                AttentionRecord(
                    utterance_id=f"d{d_idx}_t{t_idx}",
                    tokens=list(turn.utterance),
                    scores=[float(a) for a in alpha.data],
                )
            )
    return records


# ---------------------------------------------------------------------------
# training


@dataclass
class DstTrainConfig:
    epochs: int = 30
    lr: float = 0.1
    hidden_size: int = 16
    seed: int = 0
    negatives_per_positive: int = 3
    scoring: str = "binary"
    threshold: float = 0.5
    init_scale: float = 0.1


@dataclass
class DstTrainResult:
    model: DstModel
    epoch_losses: list


def _nll_of_index(logits: Tensor, index: int) -> Tensor:
    # -log softmax(logits)[index], numerically stable
    return logsumexp(logits) - logits[index]


def _binary_loss(model: DstModel, pooled: Tensor, cand: SlotCandidate, acts: SystemActs, positive: bool) -> Tensor:
    gate = context_gate(model, cand, acts)
    logits = affine(concat([pooled, gate]), model.fc_w, model.fc_b)
    return _nll_of_index(logits, 0 if positive else 1)


def _turn_samples(turn: DialogueTurn, ontology: Ontology, k: int, rng: np.random.Generator) -> list:
    """Gold (slot, value) positives plus k sampled same-slot negatives each."""
    samples = []
    for slot, value in turn.gold_slots.items():
        if value == NONE_VALUE:
            continue
        samples.append((SlotCandidate(slot, value), True))
        others = [v for v in ontology.goal_slots[slot] if v != value]
        if others and k > 0:
            picks = rng.choice(len(others), size=min(k, len(others)), replace=False)
            samples.extend((SlotCandidate(slot, others[int(i)]), False) for i in picks)
    for req in sorted(turn.gold_requests):
        samples.append((SlotCandidate(REQUEST_SLOT, req), True))
        others = [r for r in ontology.requestable if r not in turn.gold_requests]
        if others and k > 0:
            picks = rng.choice(len(others), size=min(k, len(others)), replace=False)
            samples.extend((SlotCandidate(REQUEST_SLOT, others[int(i)]), False) for i in picks)
    return samples


def _softmax_slot_losses(model: DstModel, pooled: Tensor, turn: DialogueTurn, ontology: Ontology) -> list:
    losses = []
    for slot, value in turn.gold_slots.items():
        values = list(ontology.goal_slots[slot]) + [NONE_VALUE]
        gold_index = values.index(value if value in values else NONE_VALUE)
        logits = stack(
            [_match_logit(model, pooled, context_gate(model, SlotCandidate(slot, v), turn.acts)) for v in values]
        )
        losses.append(_nll_of_index(logits, gold_index))
    return losses


def train_dst(dialogues, table: EmbeddingTable, ontology: Ontology, config: DstTrainConfig) -> DstTrainResult:
    """SGD over per-turn candidate batches; deterministic for a given seed."""
    turns = [turn for dialogue in dialogues for turn in dialogue]
    if not turns:
        raise DataError("training dataset contains no turns")
    for turn in turns:
        ontology.validate_turn(turn)

    seeds = np.random.SeedSequence(config.seed).spawn(3)
    init_rng = np.random.default_rng(seeds[0])
    shuffle_rng = np.random.default_rng(seeds[1])
    sample_rng = np.random.default_rng(seeds[2])

    model = DstModel.init(table, config.hidden_size, init_rng, config.scoring, config.init_scale)
    params = model.params()

    epoch_losses = []
    for epoch in range(config.epochs):
        order = shuffle_rng.permutation(len(turns))
        total, count = 0.0, 0
        for turn_idx in order:
            turn = turns[int(turn_idx)]
            with Tape() as tape:
                pooled, _ = encode_utterance(model, turn.utterance)
                if model.scoring == "per_slot_softmax":
                    losses = _softmax_slot_losses(model, pooled, turn, ontology)
                    for req in sorted(turn.gold_requests):
                        losses.append(_binary_loss(model, pooled, SlotCandidate(REQUEST_SLOT, req), turn.acts, True))
                else:
                    samples = _turn_samples(turn, ontology, config.negatives_per_positive, sample_rng)
                    losses = [_binary_loss(model, pooled, cand, turn.acts, pos) for cand, pos in samples]
                if not losses:
                    continue
                loss = stack(losses).mean()
            value = float(loss.data)
            if not np.isfinite(value):
                raise FloatingPointError(f"non-finite loss {value} at epoch {epoch}")
            tape.backward(loss)
            sgd_step(params, config.lr)
            total += value
            count += 1
        epoch_losses.append(total / max(count, 1))
    return DstTrainResult(model=model, epoch_losses=epoch_losses)


def candidate_accuracy(model: DstModel, dialogues, ontology: Ontology) -> float:
    """Binary classification accuracy over every gold positive and every
    same-slot alternative as negative; sampling-free, for progress checks."""
    correct = total = 0
    for dialogue in dialogues:
        for turn in dialogue:
            pooled, _ = encode_utterance(model, turn.utterance)
            for slot, value in turn.gold_slots.items():
                if value == NONE_VALUE:
                    continue
                for v in ontology.goal_slots[slot]:
                    p = match_probability(model, pooled, SlotCandidate(slot, v), turn.acts)
                    total += 1
                    correct += int((p > 0.5) == (v == value))
    return correct / max(total, 1)


# ---------------------------------------------------------------------------
# checkpointing


def save_dst_model(model: DstModel, path, seed: int | None = None) -> None:
    write_checkpoint(
        {
            "kind": "dst",
            "dim": model.dim,
            "hidden_size": model.hidden_size,
            "scoring": model.scoring,
            "seed": seed,
            "params": params_payload(model.params()),
        },
        path,
    )


def load_dst_model(path, table: EmbeddingTable) -> DstModel:
    obj = read_checkpoint(path)
    if obj.get("kind") != "dst":
        raise ConfigurationError(f"checkpoint at {path} is {obj.get('kind')!r}, expected 'dst'")
    if obj["dim"] != table.dim:
        raise ConfigurationError(
            f"checkpoint dim {obj['dim']} does not match embedding dim {table.dim}"
        )
    model = DstModel.init(
        table, obj["hidden_size"], np.random.default_rng(0), obj.get("scoring", "binary")
    )
    restore_params(obj["params"], model.params())
    return model
