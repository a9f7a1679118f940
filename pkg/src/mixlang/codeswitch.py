"""Attention-informed keyword mining and the code-switching sentence generator.

Pipeline: collect the top-attended token of every training utterance,
drop rarely selected tokens, keep the top-n by frequency, pair them
through a bilingual lexicon, then rewrite sentences by replacing every
occurrence of a source word with its paired target word.

All functions here are pure over immutable inputs.
"""
from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .embeddings import BilingualLexicon

__all__ = [
    "STOPWORDS",
    "AttentionRecord",
    "PairDictionary",
    "Top1Counts",
    "PairBuildResult",
    "tokenize",
    "collect_top1",
    "select_keywords",
    "build_pairs",
    "ontology_pairs",
    "generate_cs",
    "save_pairs",
    "load_pairs",
    "write_attention_records",
    "read_attention_records",
]

# function words excluded from keyword selection; task keywords are content
# words, but the highest attention score occasionally lands on filler
STOPWORDS = frozenset(
    """
    a an the i you he she it we they me my your his her its our their
    is are am was were be been being do does did done have has had
    to of in on at for with from by about as into over under
    and or but not no yes if then than so too very
    this that these those there here
    what when where which who whom how why
    can could will would shall should may might must
    please thanks thank hi hello hey ok okay
    """.split()
)


def tokenize(text: str) -> list[str]:
    """Lower-case and split into word and punctuation tokens."""
    return re.findall(r"\w+|[^\w\s]", text.lower())


@dataclass
class AttentionRecord:
    """Per-utterance attention scores, one score per token."""

    utterance_id: str
    tokens: list
    scores: list

    def __post_init__(self):
        if len(self.tokens) != len(self.scores):
            raise ValueError(
                f"{self.utterance_id}: {len(self.tokens)} tokens vs {len(self.scores)} scores"
            )
        if any(s < 0 for s in self.scores):
            raise ValueError(f"{self.utterance_id}: negative attention score")
        if self.tokens and abs(sum(self.scores) - 1.0) > 1e-6:
            raise ValueError(
                f"{self.utterance_id}: attention scores sum to {sum(self.scores)}, expected 1"
            )


class PairDictionary:
    """Ordered (source word, target word) pairs with unique source words."""

    def __init__(self, pairs: Iterable[tuple] = ()):
        self.pairs: list[tuple] = []
        self._map: dict[str, str] = {}
        for source, target in pairs:
            self.add(source, target)

    def add(self, source: str, target: str) -> None:
        if not source or not target:
            raise ValueError("pair words must be non-empty")
        if source in self._map:
            raise ValueError(f"duplicate source word {source!r}")
        self.pairs.append((source, target))
        self._map[source] = target

    @property
    def n(self) -> int:
        return len(self.pairs)

    def __len__(self) -> int:
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)

    def __contains__(self, source: str) -> bool:
        return source in self._map

    def __eq__(self, other) -> bool:
        return isinstance(other, PairDictionary) and self.pairs == other.pairs

    def translate(self, token: str) -> str:
        return self._map.get(token, token)

    def sources(self) -> list:
        return [s for s, _ in self.pairs]

    def targets(self) -> list:
        return [t for _, t in self.pairs]


@dataclass
class Top1Counts:
    """Selection frequencies plus a tally of records skipped as malformed."""

    counts: Counter = field(default_factory=Counter)
    skipped: int = 0


def collect_top1(records: Sequence[AttentionRecord], stopwords=STOPWORDS) -> Top1Counts:
    """Count, per utterance, the token holding the highest attention score.

    Ties go to the lowest index. Top tokens that are stopwords are not
    counted. Records with no tokens are skipped and tallied.
    """
    if not records:
        raise ValueError("collect_top1 requires at least one attention record")
    result = Top1Counts()
    for record in records:
        if not record.tokens:
            result.skipped += 1
            continue
        idx = max(range(len(record.scores)), key=lambda i: (record.scores[i], -i))
        token = record.tokens[idx]
        if token in stopwords:
            continue
        result.counts[token] += 1
    return result


def select_keywords(counts, n: int, min_count: int = 2) -> list:
    """Drop tokens selected fewer than min_count times, sort by
    (count desc, token asc), and keep the first n."""
    if n < 0:
        raise ValueError("n must be >= 0")
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    kept = [(token, c) for token, c in counts.items() if c >= min_count]
    kept.sort(key=lambda item: (-item[1], item[0]))
    return [token for token, _ in kept[:n]]


@dataclass
class PairBuildResult:
    pairs: PairDictionary
    skipped: list


def build_pairs(keywords: Sequence[str], lexicon: BilingualLexicon) -> PairBuildResult:
    """Pair each keyword with its first-listed lexicon target, preserving
    keyword order; keywords without a usable single-word target are skipped
    and reported."""
    pairs = PairDictionary()
    skipped = []
    for keyword in keywords:
        target = lexicon.first_target(keyword)
        if target is None or len(target.split()) != 1:
            skipped.append(keyword)
            continue
        pairs.add(keyword, target)
    return PairBuildResult(pairs=pairs, skipped=skipped)


def ontology_pairs(terms: Iterable[str], lexicon: BilingualLexicon) -> PairDictionary:
    """Pair every distinct whitespace token of the ontology terms that the
    lexicon covers, preserving first-appearance order."""
    pairs = PairDictionary()
    seen = set()
    for term in terms:
        for token in term.lower().split():
            if token in seen:
                continue
            seen.add(token)
            target = lexicon.first_target(token)
            if target is not None and len(target.split()) == 1:
                pairs.add(token, target)
    return pairs


def generate_cs(sentence: Sequence[str], pairs: PairDictionary) -> list:
    """Replace every occurrence of every source word with its target word.

    One-to-one word replacement: the output has the same length as the
    input and non-key tokens keep their positions.
    """
    return [pairs.translate(token) for token in sentence]


def save_pairs(pairs: PairDictionary, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for source, target in pairs:
            fh.write(f"{source}\t{target}\n")


def load_pairs(path) -> PairDictionary:
    pairs = PairDictionary()
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) != 2:
                raise ValueError(f"line {lineno}: expected 'source<TAB>target', got {line!r}")
            pairs.add(fields[0], fields[1])
    return pairs


def write_attention_records(records: Iterable[AttentionRecord], path) -> None:
    """One JSON object per line: {utterance_id, tokens, scores}."""
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(
                json.dumps(
                    {
                        "utterance_id": record.utterance_id,
                        "tokens": list(record.tokens),
                        "scores": [float(s) for s in record.scores],
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )


def read_attention_records(path) -> list:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            records.append(
                AttentionRecord(
                    utterance_id=obj["utterance_id"],
                    tokens=list(obj["tokens"]),
                    scores=[float(s) for s in obj["scores"]],
                )
            )
    return records
