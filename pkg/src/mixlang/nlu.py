"""Joint natural language understanding: a shared BiLSTM feeding a CRF
slot-filling head (learned start/stop/transition scores, log-space forward
algorithm) and an attention-pooled softmax intent head.

Decoding uses Viterbi with lowest-index tie breaking; a hard BIO
transition mask is available as a decode-time option.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .checkpoint import params_payload, read_checkpoint, restore_params, write_checkpoint
from .codeswitch import PairDictionary, generate_cs
from .embeddings import EmbeddingTable
from .numeric import (
    BiLstmParams,
    Tape,
    Tensor,
    affine,
    bilstm_encode,
    dot,
    init_bilstm,
    logsumexp,
    sgd_step,
    softmax,
    stack,
    tensor,
    transpose,
)

__all__ = [
    "NluDataError",
    "NluExample",
    "CrfParams",
    "NluModel",
    "NluTrainConfig",
    "NluTrainResult",
    "emissions",
    "crf_log_partition",
    "crf_gold_score",
    "crf_nll",
    "crf_viterbi",
    "bio_transition_mask",
    "predict_intent",
    "decode",
    "train_nlu",
    "evaluate_nlu",
    "attention_records",
    "apply_pairs_to_examples",
    "load_nlu_tsv",
    "save_nlu_tsv",
    "save_nlu_model",
    "load_nlu_model",
]


class NluDataError(ValueError):
    pass


@dataclass
class NluExample:
    tokens: list
    tags: list
    intent: str

    def __post_init__(self):
        if not self.tokens:
            raise ValueError("example has no tokens")
        if len(self.tokens) != len(self.tags):
            raise ValueError(
                f"example {' '.join(self.tokens)!r}: {len(self.tokens)} tokens vs {len(self.tags)} tags"
            )

    def bio_violations(self) -> list:
        """Positions whose I-tag does not continue a chunk; accepted, not fixed."""
        bad = []
        prev = "O"
        for i, tag in enumerate(self.tags):
            if tag.startswith("I-") and prev not in (f"B-{tag[2:]}", tag):
                bad.append(i)
            prev = tag
        return bad


@dataclass
class CrfParams:
    """Transition matrix plus learned start/stop scores over the tag set."""

    matrix: Tensor  # (K, K), [from, to]
    start: Tensor  # (K,)
    stop: Tensor  # (K,)

    @property
    def num_tags(self) -> int:
        return self.start.shape[0]

    def named(self, prefix: str = "crf") -> dict:
        return {f"{prefix}.matrix": self.matrix, f"{prefix}.start": self.start, f"{prefix}.stop": self.stop}


class NluModel:
    def __init__(self, table: EmbeddingTable, hidden_size: int, tag_vocab: list, intent_vocab: list):
        self.table = table
        self.hidden_size = hidden_size
        self.tag_vocab = list(tag_vocab)
        self.intent_vocab = list(intent_vocab)
        self.tag_index = {t: i for i, t in enumerate(self.tag_vocab)}
        self.intent_index = {t: i for i, t in enumerate(self.intent_vocab)}
        self.dim = table.dim
        self.bilstm: BiLstmParams | None = None
        self.emit_w: Tensor | None = None
        self.emit_b: Tensor | None = None
        self.crf: CrfParams | None = None
        self.intent_w_a: Tensor | None = None
        self.intent_w: Tensor | None = None
        self.intent_b: Tensor | None = None

    @classmethod
    def init(cls, table, hidden_size, tag_vocab, intent_vocab, rng: np.random.Generator, scale: float = 0.1):
        model = cls(table, hidden_size, tag_vocab, intent_vocab)
        d, h = table.dim, hidden_size
        k, m = len(model.tag_vocab), len(model.intent_vocab)
        model.bilstm = init_bilstm(d, h, rng, scale)
        model.emit_w = Tensor(rng.uniform(-scale, scale, (k, 2 * h)), requires_grad=True)
        model.emit_b = Tensor(np.zeros(k), requires_grad=True)
        model.crf = CrfParams(
            matrix=Tensor(rng.uniform(-scale, scale, (k, k)), requires_grad=True),
            start=Tensor(rng.uniform(-scale, scale, k), requires_grad=True),
            stop=Tensor(rng.uniform(-scale, scale, k), requires_grad=True),
        )
        model.intent_w_a = Tensor(rng.uniform(-scale, scale, 2 * h), requires_grad=True)
        model.intent_w = Tensor(rng.uniform(-scale, scale, (m, 2 * h)), requires_grad=True)
        model.intent_b = Tensor(np.zeros(m), requires_grad=True)
        return model

    def params(self) -> dict:
        out = self.bilstm.named("bilstm")
        out.update(self.crf.named("crf"))
        out.update(
            {
                "emit_w": self.emit_w,
                "emit_b": self.emit_b,
                "intent_w_a": self.intent_w_a,
                "intent_w": self.intent_w,
                "intent_b": self.intent_b,
            }
        )
        return out

    def embed(self, tokens: Sequence[str]) -> list:
        return [tensor(self.table.lookup(t)) for t in tokens]

    def encode(self, tokens: Sequence[str]) -> list:
        if not tokens:
            raise ValueError("cannot encode an empty token sequence")
        return bilstm_encode(self.embed(tokens), self.bilstm)


def emissions(model: NluModel, tokens: Sequence[str]) -> Tensor:
    """Per-token tag logits, shape (len(tokens), tag count)."""
    hidden = stack(model.encode(tokens))
    return affine(hidden, model.emit_w, model.emit_b)


def crf_log_partition(em: Tensor, crf: CrfParams) -> Tensor:
    """log sum over all tag paths of exp(path score), forward algorithm."""
    n, k = em.shape
    alpha = crf.start + em[0]
    for t in range(1, n):
        alpha = logsumexp(alpha.reshape((k, 1)) + crf.matrix, axis=0) + em[t]
    return logsumexp(alpha + crf.stop)


def crf_gold_score(em: Tensor, crf: CrfParams, tags: Sequence[int]) -> Tensor:
    n, k = em.shape
    if len(tags) != n:
        raise ValueError(f"{len(tags)} tags for {n} emission rows")
    if any(t < 0 or t >= k for t in tags):
        raise ValueError(f"tag id out of range 0..{k - 1}: {list(tags)}")
    score = crf.start[tags[0]] + em[0, tags[0]]
    for i in range(1, n):
        score = score + crf.matrix[tags[i - 1], tags[i]] + em[i, tags[i]]
    return score + crf.stop[tags[-1]]


def crf_nll(em: Tensor, crf: CrfParams, tags: Sequence[int]) -> Tensor:
    """Negative log likelihood of the gold path; non-negative up to rounding."""
    return crf_log_partition(em, crf) - crf_gold_score(em, crf, tags)


def crf_viterbi(em, crf: CrfParams, transition_mask: np.ndarray | None = None, start_mask: np.ndarray | None = None) -> list:
    """Best-scoring tag path; ties break toward the lowest tag index."""
    scores = em.data if isinstance(em, Tensor) else np.asarray(em, dtype=np.float64)
    trans = crf.matrix.data
    n, k = scores.shape
    if transition_mask is not None:
        trans = trans + transition_mask
    delta = crf.start.data + scores[0]
    if start_mask is not None:
        delta = delta + start_mask
    backptr = np.zeros((n, k), dtype=np.int64)
    for t in range(1, n):
        grown = delta[:, None] + trans
        backptr[t] = np.argmax(grown, axis=0)
        delta = grown[backptr[t], np.arange(k)] + scores[t]
    delta = delta + crf.stop.data
    best = int(np.argmax(delta))
    path = [best]
    for t in range(n - 1, 0, -1):
        best = int(backptr[t][best])
        path.append(best)
    path.reverse()
    return path


def bio_transition_mask(tag_vocab: Sequence[str], penalty: float = -1e9):
    """(transition, start) additive masks forbidding I-x after anything other
    than B-x/I-x; used only when hard-constraint decoding is requested."""
    k = len(tag_vocab)
    trans = np.zeros((k, k))
    start = np.zeros(k)
    for j, to_tag in enumerate(tag_vocab):
        if not to_tag.startswith("I-"):
            continue
        ctype = to_tag[2:]
        start[j] = penalty
        for i, from_tag in enumerate(tag_vocab):
            if from_tag not in (f"B-{ctype}", f"I-{ctype}"):
                trans[i, j] = penalty
    return trans, start


def _intent_pooled(model: NluModel, tokens: Sequence[str]):
    hs = model.encode(tokens)
    alpha = softmax(stack([dot(h, model.intent_w_a) for h in hs]))
    pooled = transpose(stack(hs)) @ alpha
    return pooled, alpha


def predict_intent(model: NluModel, tokens: Sequence[str]) -> Tensor:
    """Distribution over the intent inventory."""
    pooled, _ = _intent_pooled(model, tokens)
    return softmax(affine(pooled, model.intent_w, model.intent_b))


def decode(model: NluModel, tokens: Sequence[str], constrain: bool = False):
    """(BIO tag sequence, intent label) for one utterance."""
    em = emissions(model, tokens)
    if constrain:
        tmask, smask = bio_transition_mask(model.tag_vocab)
        path = crf_viterbi(em, model.crf, tmask, smask)
    else:
        path = crf_viterbi(em, model.crf)
    tags = [model.tag_vocab[i] for i in path]
    dist = predict_intent(model, tokens)
    intent = model.intent_vocab[int(np.argmax(dist.data))]
    return tags, intent


def attention_records(model: NluModel, examples: Sequence[NluExample]) -> list:
    from .codeswitch import AttentionRecord

    records = []
    for i, ex in enumerate(examples):
        _, alpha = _intent_pooled(model, ex.tokens)
        records.append(
            AttentionRecord(
                utterance_id=f"ex{i}",
                tokens=list(ex.tokens),
                scores=[float(a) for a in alpha.data],
            )
        )
    return records


def apply_pairs_to_examples(examples: Sequence[NluExample], pairs: PairDictionary) -> list:
    """Code-switch tokens; tags stay aligned to the replaced positions."""
    return [replace(ex, tokens=generate_cs(ex.tokens, pairs)) for ex in examples]


# ---------------------------------------------------------------------------
# training


@dataclass
class NluTrainConfig:
    epochs: int = 50
    lr: float = 0.2
    hidden_size: int = 12
    seed: int = 0
    lambda_intent: float = 1.0
    init_scale: float = 0.1


@dataclass
class NluTrainResult:
    model: NluModel
    epoch_losses: list


def _nll_of_index(logits: Tensor, index: int) -> Tensor:
    return logsumexp(logits) - logits[index]


def build_vocabs(examples: Sequence[NluExample]):
    tags = sorted({t for ex in examples for t in ex.tags})
    intents = sorted({ex.intent for ex in examples})
    return tags, intents


def train_nlu(examples: Sequence[NluExample], table: EmbeddingTable, config: NluTrainConfig,
              tag_vocab: list | None = None, intent_vocab: list | None = None) -> NluTrainResult:
    """Joint SGD on crf_nll + lambda * intent cross-entropy, one example per
    step; deterministic for a given seed."""
    if not examples:
        raise NluDataError("training dataset is empty")
    for idx, ex in enumerate(examples):
        if len(ex.tokens) != len(ex.tags):
            raise NluDataError(
                f"example {idx} ({' '.join(ex.tokens)!r}): {len(ex.tokens)} tokens vs {len(ex.tags)} tags"
            )
    if tag_vocab is None or intent_vocab is None:
        tag_vocab, intent_vocab = build_vocabs(examples)
    for idx, ex in enumerate(examples):
        unknown = [t for t in ex.tags if t not in set(tag_vocab)]
        if unknown or ex.intent not in set(intent_vocab):
            raise NluDataError(f"example {idx}: labels outside the vocabulary: {unknown or ex.intent}")

    seeds = np.random.SeedSequence(config.seed).spawn(2)
    init_rng = np.random.default_rng(seeds[0])
    shuffle_rng = np.random.default_rng(seeds[1])
    model = NluModel.init(table, config.hidden_size, tag_vocab, intent_vocab, init_rng, config.init_scale)
    params = model.params()

    epoch_losses = []
    for epoch in range(config.epochs):
        order = shuffle_rng.permutation(len(examples))
        total = 0.0
        for ex_idx in order:
            ex = examples[int(ex_idx)]
            tag_ids = [model.tag_index[t] for t in ex.tags]
            with Tape() as tape:
                hidden = stack(model.encode(ex.tokens))
                em = affine(hidden, model.emit_w, model.emit_b)
                loss = crf_nll(em, model.crf, tag_ids)
                alpha = softmax(stack([dot(hidden[i], model.intent_w_a) for i in range(len(ex.tokens))]))
                pooled = transpose(hidden) @ alpha
                intent_logits = affine(pooled, model.intent_w, model.intent_b)
                loss = loss + float(config.lambda_intent) * _nll_of_index(
                    intent_logits, model.intent_index[ex.intent]
                )
            value = float(loss.data)
            if not np.isfinite(value):
                raise FloatingPointError(f"non-finite loss {value} at epoch {epoch}, example {int(ex_idx)}")
            tape.backward(loss)
            sgd_step(params, config.lr)
            total += value
        epoch_losses.append(total / len(examples))
    return NluTrainResult(model=model, epoch_losses=epoch_losses)


def evaluate_nlu(model: NluModel, examples: Sequence[NluExample], constrain: bool = False):
    """(predicted intents, predicted tag sequences) over a dataset."""
    intents, tag_seqs = [], []
    for ex in examples:
        tags, intent = decode(model, ex.tokens, constrain=constrain)
        intents.append(intent)
        tag_seqs.append(tags)
    return intents, tag_seqs


# ---------------------------------------------------------------------------
# dataset files


def load_nlu_tsv(path) -> list:
    """Blocks of "token<TAB>tag" lines, one "#intent=<label>" header per
    block, blank line between blocks."""
    examples = []
    tokens, tags, intent = [], [], None
    with open(path, encoding="utf-8") as fh:
        lines = list(fh) + [""]
    for lineno, raw in enumerate(lines, start=1):
        line = raw.rstrip("\n")
        if not line.strip():
            if tokens:
                if intent is None:
                    raise NluDataError(f"block ending at line {lineno} has no #intent= header")
                examples.append(NluExample(tokens=tokens, tags=tags, intent=intent))
            tokens, tags, intent = [], [], None
            continue
        if line.startswith("#intent="):
            intent = line[len("#intent=") :].strip().lower()
            continue
        fields = line.split("\t")
        if len(fields) != 2:
            raise NluDataError(f"line {lineno}: expected 'token<TAB>tag', got {line!r}")
        tokens.append(fields[0].lower())
        tags.append(fields[1])
    return examples


def save_nlu_tsv(examples: Sequence[NluExample], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for i, ex in enumerate(examples):
            fh.write(f"#intent={ex.intent}\n")
            for token, tag in zip(ex.tokens, ex.tags):
                fh.write(f"{token}\t{tag}\n")
            if i != len(examples) - 1:
                fh.write("\n")


# ---------------------------------------------------------------------------
# checkpointing


def save_nlu_model(model: NluModel, path, seed: int | None = None) -> None:
    write_checkpoint(
        {
            "kind": "nlu",
            "dim": model.dim,
            "hidden_size": model.hidden_size,
            "tag_vocab": model.tag_vocab,
            "intent_vocab": model.intent_vocab,
            "seed": seed,
            "params": params_payload(model.params()),
        },
        path,
    )


def load_nlu_model(path, table: EmbeddingTable) -> NluModel:
    obj = read_checkpoint(path)
    if obj.get("kind") != "nlu":
        raise ValueError(f"checkpoint at {path} is {obj.get('kind')!r}, expected 'nlu'")
    if obj["dim"] != table.dim:
        raise ValueError(f"checkpoint dim {obj['dim']} does not match embedding dim {table.dim}")
    model = NluModel.init(
        table, obj["hidden_size"], obj["tag_vocab"], obj["intent_vocab"], np.random.default_rng(0)
    )
    restore_params(obj["params"], model.params())
    return model
