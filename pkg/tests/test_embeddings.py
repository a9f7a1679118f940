"""Embedding/lexicon IO and subword aggregation tests. Derived expectations
come from brute-force numpy recomputations done inside the tests."""

import numpy as np
import pytest

from mixlang.embeddings import (
    BilingualLexicon,
    EmbeddingParseError,
    EmbeddingTable,
    LexiconParseError,
    SubwordSpan,
    aggregate_sum,
    aggregate_transformer,
    char_chunks,
    init_transformer_aggregator,
    load_embeddings,
    load_lexicon,
    sinusoidal_positions,
    spans_from_words,
    write_embeddings,
)
from mixlang.numeric import grad_check, dot


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


class TestLoadEmbeddings:
    def test_header_file(self, tmp_path):
        p = write(tmp_path / "emb.txt", "2 3\na 1 0 0\nb 0 1 0\n")
        table = load_embeddings(p)
        assert table.dim == 3 and len(table) == 2
        np.testing.assert_array_equal(table.lookup("a"), [1, 0, 0])

    def test_headerless_file(self, tmp_path):
        p = write(tmp_path / "emb.txt", "a 1 0\nb 0 1\n")
        table = load_embeddings(p)
        assert table.dim == 2 and len(table) == 2

    def test_duplicate_keeps_first_and_counts(self, tmp_path):
        p = write(tmp_path / "emb.txt", "a 1 0\na 9 9\nb 0 1\n")
        table = load_embeddings(p)
        np.testing.assert_array_equal(table.lookup("a"), [1, 0])
        assert table.duplicates_skipped == 1

    def test_tokens_lowercased(self, tmp_path):
        p = write(tmp_path / "emb.txt", "Food 1 0\n")
        table = load_embeddings(p)
        assert "food" in table and "FOOD" in table

    def test_inconsistent_length_reports_line(self, tmp_path):
        p = write(tmp_path / "emb.txt", "a 1 0 0\nb 0 1\n")
        with pytest.raises(EmbeddingParseError) as exc:
            load_embeddings(p)
        assert exc.value.line == 2

    def test_empty_file_rejected(self, tmp_path):
        p = write(tmp_path / "emb.txt", "")
        with pytest.raises(EmbeddingParseError):
            load_embeddings(p)

    def test_expected_dim_conflict(self, tmp_path):
        p = write(tmp_path / "emb.txt", "2 3\na 1 0 0\n")
        with pytest.raises(EmbeddingParseError):
            load_embeddings(p, expected_dim=5)

    def test_roundtrip_is_exact(self, tmp_path):
        rng = np.random.default_rng(13)
        src = tmp_path / "src.txt"
        lines = [f"tok{i} " + " ".join(repr(float(v)) for v in rng.normal(size=4)) for i in range(10)]
        write(src, "\n".join(lines) + "\n")
        table = load_embeddings(src)
        out = tmp_path / "out.txt"
        write_embeddings(table, out)
        reloaded = load_embeddings(out)
        assert len(reloaded) == len(table)
        for token in table.tokens():
            np.testing.assert_allclose(reloaded.lookup(token), table.lookup(token), rtol=0, atol=1e-12)
            assert np.array_equal(reloaded.lookup(token), table.lookup(token))


class TestLookup:
    def test_in_vocab(self):
        table = EmbeddingTable(2, {"food": [1.0, 2.0]})
        np.testing.assert_array_equal(table.lookup("food"), [1.0, 2.0])

    def test_oov_zero_policy(self):
        table = EmbeddingTable(3, {"a": [1, 0, 0]})
        np.testing.assert_array_equal(table.lookup("zzz"), [0, 0, 0])

    def test_oov_mean_policy_matches_brute_force(self):
        rng = np.random.default_rng(5)
        vecs = {f"t{i}": rng.normal(size=4) for i in range(7)}
        table = EmbeddingTable(4, vecs, oov_policy="mean")
        brute = sum(vecs.values()) / len(vecs)
        np.testing.assert_allclose(table.lookup("missing"), brute, atol=1e-12)

    def test_lookup_is_pure(self):
        table = EmbeddingTable(2, {"a": [1.0, 2.0]})
        v = table.lookup("a")
        v[0] = 99.0
        np.testing.assert_array_equal(table.lookup("a"), [1.0, 2.0])


class TestLexicon:
    def test_direct_read(self, tmp_path):
        p = write(tmp_path / "lex.txt", "cheap economico\nfood cibo\n")
        lex = load_lexicon(p)
        assert len(lex) == 2
        assert lex.first_target("cheap") == "economico"

    def test_multimap_order(self, tmp_path):
        p = write(tmp_path / "lex.txt", "set configurar\nset establecer\n")
        lex = load_lexicon(p)
        assert lex.targets("set") == ["configurar", "establecer"]

    def test_blank_lines_and_comments_skipped(self, tmp_path):
        p = write(tmp_path / "lex.txt", "\n# comment\ncheap economico\n\n")
        lex = load_lexicon(p)
        assert len(lex) == 1

    def test_malformed_line_reports_number(self, tmp_path):
        p = write(tmp_path / "lex.txt", "cheap economico\nbroken\n")
        with pytest.raises(LexiconParseError) as exc:
            load_lexicon(p)
        assert exc.value.line == 2

    def test_lowercased(self, tmp_path):
        p = write(tmp_path / "lex.txt", "Cheap Economico\n")
        lex = load_lexicon(p)
        assert lex.first_target("cheap") == "economico"


class TestAggregateSum:
    def test_singleton_spans_identity(self):
        spans = [SubwordSpan(0, [[1.0, 2.0]]), SubwordSpan(1, [[3.0, 4.0]])]
        out = aggregate_sum(spans)
        np.testing.assert_array_equal(out[0], [1.0, 2.0])
        np.testing.assert_array_equal(out[1], [3.0, 4.0])

    def test_basis_vectors(self):
        out = aggregate_sum([SubwordSpan(0, [[1.0, 0.0], [0.0, 1.0]])])
        np.testing.assert_array_equal(out[0], [1.0, 1.0])

    def test_random_fixture_matches_brute_force(self):
        rng = np.random.default_rng(2)
        spans = [SubwordSpan(i, [rng.normal(size=3) for _ in range(i + 1)]) for i in range(3)]
        out = aggregate_sum(spans)
        for i, span in enumerate(spans):
            brute = np.zeros(3)
            for v in span.vectors:
                brute = brute + v
            np.testing.assert_allclose(out[i], brute, atol=1e-12)

    def test_permutation_invariant_within_span(self):
        rng = np.random.default_rng(3)
        vecs = [rng.normal(size=4) for _ in range(3)]
        a = aggregate_sum([SubwordSpan(0, vecs)])[0]
        b = aggregate_sum([SubwordSpan(0, vecs[::-1])])[0]
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_empty_span_rejected(self):
        with pytest.raises(ValueError):
            SubwordSpan(0, [])


class TestAggregateTransformer:
    def test_parameter_sharing_identical_spans(self):
        rng = np.random.default_rng(4)
        params = init_transformer_aggregator(4, rng)
        vecs = [rng.normal(size=4) for _ in range(2)]
        spans = [SubwordSpan(0, vecs), SubwordSpan(1, vecs)]
        out = aggregate_transformer(spans, params)
        np.testing.assert_array_equal(out[0].data, out[1].data)

    def test_not_permutation_invariant(self):
        rng = np.random.default_rng(6)
        params = init_transformer_aggregator(4, rng)
        vecs = [rng.normal(size=4) for _ in range(2)]
        a = aggregate_transformer([SubwordSpan(0, vecs)], params)[0]
        b = aggregate_transformer([SubwordSpan(0, vecs[::-1])], params)[0]
        assert not np.allclose(a.data, b.data)

    def test_singleton_span_matches_direct_evaluation(self):
        # attention over one position reduces to the value projection; the

        # whole layer is recomputed here with raw numpy as the oracle
        rng = np.random.default_rng(8)
        params = init_transformer_aggregator(4, rng, heads=2)
        v = rng.normal(size=4)
        out = aggregate_transformer([SubwordSpan(0, [v])], params)[0].data

        def ln(x, g, b, eps=1e-5):
            mu = x.mean()
            var = ((x - mu) ** 2).mean()
            return (x - mu) / np.sqrt(var + eps) * g + b

        x = v + sinusoidal_positions(1, 4)[0]
        attended = x @ params.wv.data.T @ params.wo.data.T  # softmax over self = 1
        r1 = ln(x + attended, params.ln1_g.data, params.ln1_b.data)
        ff = np.maximum(r1 @ params.ff_w1.data.T + params.ff_b1.data, 0.0)
        ff = ff @ params.ff_w2.data.T + params.ff_b2.data
        expected = ln(r1 + ff, params.ln2_g.data, params.ln2_b.data)
        np.testing.assert_allclose(out, expected, atol=1e-12)

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(10)
        params = init_transformer_aggregator(4, rng, heads=2)
        spans = [
            SubwordSpan(0, [rng.normal(size=4) for _ in range(2)]),
            SubwordSpan(1, [rng.normal(size=4) for _ in range(3)]),
        ]

        def loss():
            words = aggregate_transformer(spans, params)
            total = dot(words[0], words[0])
            return total + dot(words[1], words[1])

        report = grad_check(loss, params.named())
        assert report.passed, report.summary()

    def test_word_count_preserved(self):
        rng = np.random.default_rng(12)
        params = init_transformer_aggregator(4, rng)
        spans = [SubwordSpan(i, [rng.normal(size=4)]) for i in range(5)]
        assert len(aggregate_transformer(spans, params)) == 5
        assert len(aggregate_sum(spans)) == 5


def test_char_chunks():
    assert char_chunks("alarm") == ["ala", "rm"]
    assert char_chunks("to") == ["to"]
    with pytest.raises(ValueError):
        char_chunks("")


def test_spans_from_words():
    table = EmbeddingTable(2, {"ala": [1.0, 0.0], "rm": [0.0, 1.0]})
    spans = spans_from_words(["alarm"], table)
    assert len(spans) == 1 and len(spans[0].vectors) == 2
    np.testing.assert_array_equal(aggregate_sum(spans)[0], [1.0, 1.0])
