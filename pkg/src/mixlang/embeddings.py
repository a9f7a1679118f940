"""Aligned cross-lingual word vectors, bilingual lexicons, and the two
subword-to-word aggregation schemes (boundary sum, shared encoder + pooling).

File formats:
  * embeddings: word2vec text, optional "count dim" header, then
    "token v1 ... vd" per line, UTF-8.
  * lexicon: "source target" per line, UTF-8; '#'-prefixed lines are
    comments, blank lines are skipped.

Tables and lexicons are immutable after load and safe for concurrent reads.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .numeric import (
    Tensor,
    affine,
    concat,
    layer_norm,
    matmul,
    relu,
    softmax,
    tensor,
    transpose,
)

__all__ = [
    "EmbeddingParseError",
    "LexiconParseError",
    "EmbeddingTable",
    "BilingualLexicon",
    "SubwordSpan",
    "load_embeddings",
    "write_embeddings",
    "load_lexicon",
    "aggregate_sum",
    "aggregate_transformer",
    "TransformerAggregatorParams",
    "init_transformer_aggregator",
    "char_chunks",
    "spans_from_words",
    "sinusoidal_positions",
]


class EmbeddingParseError(ValueError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class LexiconParseError(ValueError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class EmbeddingTable:
    """Token -> d-dimensional vector map in a shared cross-lingual space.

    Lookups never fail: out-of-vocabulary tokens resolve to the zero vector
    or to the vocabulary mean, per ``oov_policy``.
    """

    def __init__(self, dim: int, entries: dict | None = None, oov_policy: str = "zero"):
        if dim <= 0:
            raise ValueError(f"embedding dim must be positive, got {dim}")
        if oov_policy not in ("zero", "mean"):
            raise ValueError(f"unknown oov_policy {oov_policy!r}")
        self.dim = dim
        self.oov_policy = oov_policy
        self._entries: dict[str, np.ndarray] = {}
        self._mean: np.ndarray | None = None
        self.duplicates_skipped = 0
        if entries:
            for token, vec in entries.items():
                self.add(token, vec)

    def add(self, token: str, vector) -> bool:
        """Insert one entry (first occurrence wins); returns False on duplicate."""
        token = token.lower()
        vec = np.asarray(vector, dtype=np.float64)
        if vec.shape != (self.dim,):
            raise ValueError(f"vector for {token!r} has shape {vec.shape}, expected ({self.dim},)")
        if token in self._entries:
            self.duplicates_skipped += 1
            return False
        self._entries[token] = vec
        self._mean = None
        return True

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, token: str) -> bool:
        return token.lower() in self._entries

    def tokens(self) -> Iterable[str]:
        return self._entries.keys()

    def _oov_vector(self) -> np.ndarray:
        if self.oov_policy == "zero" or not self._entries:
            return np.zeros(self.dim)
        if self._mean is None:
            self._mean = np.mean(list(self._entries.values()), axis=0)
        return self._mean

    def lookup(self, token: str) -> np.ndarray:
        """Stored vector for the token, or the OOV vector; always a copy."""
        vec = self._entries.get(token.lower())
        if vec is None:
            vec = self._oov_vector()
        return vec.copy()


def load_embeddings(path, expected_dim: int | None = None) -> EmbeddingTable:
    """Parse a word2vec-format text file into an EmbeddingTable."""
    table: EmbeddingTable | None = None
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip():
                continue
            fields = line.split()
            if table is None and lineno == 1 and len(fields) == 2:
                try:
                    _count, dim = int(fields[0]), int(fields[1])
                except ValueError:
                    pass
                else:
                    if expected_dim is not None and dim != expected_dim:
                        raise EmbeddingParseError(
                            f"header dim {dim} != expected dim {expected_dim}", lineno
                        )
                    table = EmbeddingTable(dim)
                    continue
            token, values = fields[0], fields[1:]
            if not values:
                raise EmbeddingParseError(f"no vector components for token {token!r}", lineno)
            try:
                vec = np.array([float(v) for v in values], dtype=np.float64)
            except ValueError as err:
                raise EmbeddingParseError(f"bad float in vector for {token!r}: {err}", lineno) from None
            if table is None:
                dim = expected_dim if expected_dim is not None else len(vec)
                table = EmbeddingTable(dim)
            if len(vec) != table.dim:
                raise EmbeddingParseError(
                    f"vector for {token!r} has {len(vec)} components, expected {table.dim}", lineno
                )
            table.add(token, vec)
    if table is None or len(table) == 0:
        raise EmbeddingParseError("no embedding entries found", 0)
    return table


def write_embeddings(table: EmbeddingTable, path) -> None:
    """Inverse of load_embeddings; repr-formatted floats round-trip exactly."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{len(table)} {table.dim}\n")
        for token in table.tokens():
            vec = table.lookup(token)
            fh.write(token + " " + " ".join(repr(float(v)) for v in vec) + "\n")


class BilingualLexicon:
    """Source token -> ordered list of target tokens (file order preserved)."""

    def __init__(self):
        self._pairs: dict[str, list[str]] = {}

    def add(self, source: str, target: str) -> None:
        source, target = source.lower(), target.lower()
        if not source or not target:
            raise ValueError("lexicon tokens must be non-empty")
        self._pairs.setdefault(source, []).append(target)

    def __len__(self) -> int:
        return len(self._pairs)

    def __contains__(self, source: str) -> bool:
        return source.lower() in self._pairs

    def sources(self) -> Iterable[str]:
        return self._pairs.keys()

    def targets(self, source: str) -> list[str]:
        return list(self._pairs.get(source.lower(), []))

    def first_target(self, source: str) -> str | None:
        targets = self._pairs.get(source.lower())
        return targets[0] if targets else None


def load_lexicon(path) -> BilingualLexicon:
    lexicon = BilingualLexicon()
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            fields = line.split()
            if len(fields) != 2:
                raise LexiconParseError(
                    f"expected 'source target', got {len(fields)} fields", lineno
                )
            lexicon.add(fields[0], fields[1])
    return lexicon


@dataclass
class SubwordSpan:
    """The subword vectors belonging to one word."""

    word_index: int
    vectors: list = field(default_factory=list)

    def __post_init__(self):
        if not self.vectors:
            raise ValueError(f"span for word {self.word_index} has no subword vectors")
        self.vectors = [np.asarray(v, dtype=np.float64) for v in self.vectors]


def aggregate_sum(spans: Sequence[SubwordSpan]) -> list:
    """Sum subword vectors inside each word boundary; one vector per word."""
    if not spans:
        raise ValueError("aggregate_sum requires at least one span")
    return [np.sum(span.vectors, axis=0) for span in spans]


def sinusoidal_positions(n: int, dim: int) -> np.ndarray:
    """Standard sin/cos position table of shape (n, dim)."""
    pos = np.arange(n)[:, None]
    i = np.arange(dim)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / dim)
    table = np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
    return table


@dataclass
class TransformerAggregatorParams:
    """One encoder layer (self-attention + feed-forward, residuals, layer
    norm), shared across every span."""

    heads: int
    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor
    ln1_g: Tensor
    ln1_b: Tensor
    ff_w1: Tensor
    ff_b1: Tensor
    ff_w2: Tensor
    ff_b2: Tensor
    ln2_g: Tensor
    ln2_b: Tensor

    @property
    def dim(self) -> int:
        return self.wq.shape[0]

    def named(self, prefix: str = "agg") -> dict:
        out = {}
        for name in (
            "wq", "wk", "wv", "wo",
            "ln1_g", "ln1_b", "ff_w1", "ff_b1", "ff_w2", "ff_b2", "ln2_g", "ln2_b",
        ):
            out[f"{prefix}.{name}"] = getattr(self, name)
        return out


def init_transformer_aggregator(
    dim: int, rng: np.random.Generator, heads: int = 2, ff_size: int | None = None, scale: float = 0.1
) -> TransformerAggregatorParams:
    if dim % heads != 0:
        raise ValueError(f"dim {dim} not divisible by heads {heads}")
    ff = ff_size if ff_size is not None else 2 * dim
    mat = lambda shape: Tensor(rng.uniform(-scale, scale, shape), requires_grad=True)
    return TransformerAggregatorParams(
        heads=heads,
        wq=mat((dim, dim)),
        wk=mat((dim, dim)),
        wv=mat((dim, dim)),
        wo=mat((dim, dim)),
        ln1_g=Tensor(np.ones(dim), requires_grad=True),
        ln1_b=Tensor(np.zeros(dim), requires_grad=True),
        ff_w1=mat((ff, dim)),
        ff_b1=Tensor(np.zeros(ff), requires_grad=True),
        ff_w2=mat((dim, ff)),
        ff_b2=Tensor(np.zeros(dim), requires_grad=True),
        ln2_g=Tensor(np.ones(dim), requires_grad=True),
        ln2_b=Tensor(np.zeros(dim), requires_grad=True),
    )


def _encode_span(x: Tensor, params: TransformerAggregatorParams) -> Tensor:
    dim = params.dim
    dk = dim // params.heads
    q = matmul(x, transpose(params.wq))
    k = matmul(x, transpose(params.wk))
    v = matmul(x, transpose(params.wv))
    head_outs = []
    for h in range(params.heads):
        sl = slice(h * dk, (h + 1) * dk)
        qh, kh, vh = q[:, sl], k[:, sl], v[:, sl]
        scores = matmul(qh, transpose(kh)) / np.sqrt(dk)
        attn = softmax(scores, axis=-1)
        head_outs.append(matmul(attn, vh))
    attended = matmul(concat(head_outs, axis=1), transpose(params.wo))
    res1 = layer_norm(x + attended, params.ln1_g, params.ln1_b)
    ff = affine(relu(affine(res1, params.ff_w1, params.ff_b1)), params.ff_w2, params.ff_b2)
    return layer_norm(res1 + ff, params.ln2_g, params.ln2_b)


def aggregate_transformer(
    spans: Sequence[SubwordSpan], params: TransformerAggregatorParams
) -> list:
    """Encode each span (with sinusoidal positions local to the span) and
    mean-pool the encoder outputs into one word vector per span.

    Returns Tensors so gradients can flow to the shared encoder parameters.
    """
    if not spans:
        raise ValueError("aggregate_transformer requires at least one span")
    dim = params.dim
    words = []
    for span in spans:
        mat = np.stack(span.vectors)
        if mat.shape[1] != dim:
            raise ValueError(
                f"span {span.word_index} has subword dim {mat.shape[1]}, encoder expects {dim}"
            )
        x = tensor(mat + sinusoidal_positions(mat.shape[0], dim))
        words.append(_encode_span(x, params).mean(axis=0))
    return words


def char_chunks(word: str, size: int = 3) -> list[str]:
    """Fixed-size character chunks; the trivial subword splitter used in tests."""
    if size <= 0:
        raise ValueError("chunk size must be positive")
    if not word:
        raise ValueError("cannot chunk an empty word")
    return [word[i : i + size] for i in range(0, len(word), size)]


def spans_from_words(words: Sequence[str], subword_table: EmbeddingTable, size: int = 3) -> list:
    """Build one SubwordSpan per word by embedding its character chunks."""
    return [
        SubwordSpan(i, [subword_table.lookup(chunk) for chunk in char_chunks(word, size)])
        for i, word in enumerate(words)
    ]
