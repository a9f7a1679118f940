"""Dialogue state tracker tests: encoder/gate/score formula oracles,
scripted-score tracking traces, training convergence, and checkpointing."""

import numpy as np
import pytest

from conftest import FOODS, make_table, separable_dst_dialogues, turn, vocab_of
from mixlang.codeswitch import PairDictionary, generate_cs
from mixlang.dst import (
    ConfigurationError,
    DataError,
    DstModel,
    DstTrainConfig,
    Ontology,
    SlotCandidate,
    SystemActs,
    apply_pairs_to_dialogues,
    attention_records,
    candidate_accuracy,
    context_gate,
    context_gate_parts,
    encode_utterance,
    load_dialogues,
    load_dst_model,
    load_ontology,
    match_probability,
    save_dialogues,
    save_dst_model,
    score_candidate,
    track_dialogue,
    train_dst,
)
from mixlang.metrics import joint_goal_accuracy, request_accuracy
from mixlang.numeric import Tape, bilstm_encode, dot, grad_check, stack, tensor


def small_model(tokens, dim=4, hidden=3, seed=0, scoring="binary"):
    table = make_table(tokens, dim=dim, seed=seed)
    return DstModel.init(table, hidden, np.random.default_rng(seed), scoring=scoring)


class TestEncodeUtterance:
    def test_single_token(self):
        model = small_model(["food"])
        pooled, alpha = encode_utterance(model, ["food"])
        np.testing.assert_array_equal(alpha.data, [1.0])
        hs = bilstm_encode(model.embed(["food"]), model.bilstm)
        np.testing.assert_array_equal(pooled.data, hs[0].data)

    def test_zero_attention_vector_gives_uniform_mean(self):
        model = small_model(["i", "want", "food"])
        model.w_a.data[...] = 0.0
        pooled, alpha = encode_utterance(model, ["i", "want", "food"])
        np.testing.assert_allclose(alpha.data, [1 / 3] * 3, atol=1e-15)
        hs = bilstm_encode(model.embed(["i", "want", "food"]), model.bilstm)
        brute = np.mean([h.data for h in hs], axis=0)
        np.testing.assert_allclose(pooled.data, brute, atol=1e-12)

    def test_recomposition_from_dumped_pieces(self):
        model = small_model(["a", "b", "c", "d"], seed=3)
        tokens = ["a", "b", "c", "d"]
        pooled, alpha = encode_utterance(model, tokens)
        hs = bilstm_encode(model.embed(tokens), model.bilstm)
        recomposed = sum(alpha.data[i] * hs[i].data for i in range(4))
        np.testing.assert_allclose(pooled.data, recomposed, rtol=0, atol=1e-12)

    def test_empty_utterance_rejected(self):
        model = small_model(["a"])
        with pytest.raises(ValueError):
            encode_utterance(model, [])

    def test_alphas_nonnegative_sum_to_one(self):
        model = small_model(["a", "b", "c"], seed=9)
        _, alpha = encode_utterance(model, ["a", "b", "c", "a"])
        assert abs(alpha.data.sum() - 1.0) < 1e-9
        assert np.all(alpha.data >= 0)


class TestContextGate:
    def test_all_acts_absent(self):
        model = small_model(["food", "thai"])
        gate = context_gate(model, SlotCandidate("food", "thai"), SystemActs())
        e_sc = np.mean([model.table.lookup("food"), model.table.lookup("thai")], axis=0)
        np.testing.assert_allclose(gate.data, e_sc + 1.0, atol=1e-12)

    def test_one_hot_identity_analytic(self):
        table = make_table([], dim=3)
        table.add("hot", [0.0, 1.0, 0.0])
        model = DstModel.init(table, 2, np.random.default_rng(0))
        model.w1.data = np.eye(3)
        _, g2, _ = context_gate_parts(
            model, SlotCandidate("hot", "hot"), SystemActs(request="hot")
        )
        sig1 = 1.0 / (1.0 + np.exp(-1.0))
        np.testing.assert_allclose(g2.data, [0.5, sig1, 0.5], atol=1e-9)
        assert abs(g2.data[1] - 0.7311) < 1e-4

    def test_random_fixture_matches_formula_oracle(self):
        model = small_model(["food", "thai", "area", "north", "price"], seed=7)
        acts = SystemActs(request="area", confirm_slot="price", confirm_value="north")
        cand = SlotCandidate("food", "thai")
        gate = context_gate(model, cand, acts).data

        sig = lambda z: 1.0 / (1.0 + np.exp(-z))
        look = model.table.lookup
        e_sc = (look("food") + look("thai")) / 2
        g1 = e_sc
        g2 = sig(e_sc * (model.w1.data @ look("area")))
        g3 = sig(e_sc * (model.w2.data @ (look("price") + look("north"))))
        np.testing.assert_allclose(gate, g1 + g2 + g3, rtol=0, atol=1e-12)

    def test_dropping_request_changes_only_g2(self):
        model = small_model(["food", "thai", "area", "price", "north"], seed=2)
        cand = SlotCandidate("food", "thai")
        with_r = context_gate_parts(model, cand, SystemActs(request="area", confirm_slot="price", confirm_value="north"))
        without_r = context_gate_parts(model, cand, SystemActs(confirm_slot="price", confirm_value="north"))
        np.testing.assert_array_equal(with_r[0].data, without_r[0].data)
        np.testing.assert_array_equal(with_r[2].data, without_r[2].data)
        assert not np.array_equal(with_r[1].data, without_r[1].data)
        np.testing.assert_allclose(without_r[1].data, 0.5, atol=1e-15)


class TestScoreCandidate:
    def test_zero_head_gives_half_half(self):
        model = small_model(["food", "thai"])
        model.fc_w.data[...] = 0.0
        model.fc_b.data[...] = 0.0
        pooled, _ = encode_utterance(model, ["food"])
        gate = context_gate(model, SlotCandidate("food", "thai"), SystemActs())
        probs = score_candidate(model, pooled, gate)
        np.testing.assert_array_equal(probs.data, [0.5, 0.5])

    def test_probabilities_sum_to_one(self):
        model = small_model(["food", "thai", "want"], seed=5)
        pooled, _ = encode_utterance(model, ["want", "thai", "food"])
        gate = context_gate(model, SlotCandidate("food", "thai"), SystemActs())
        probs = score_candidate(model, pooled, gate)
        assert abs(float(probs.data.sum()) - 1.0) < 1e-9

    def test_full_path_gradients(self):
        model = small_model(["i", "want", "thai", "food", "area", "north"], seed=4)
        acts = SystemActs(request="area")
        tokens = ["want", "thai", "food"]
        cands = [SlotCandidate("food", "thai"), SlotCandidate("area", "north")]

        def loss():
            pooled, _ = encode_utterance(model, tokens)
            losses = []
            for cand, positive in zip(cands, (True, False)):
                probs = score_candidate(model, pooled, context_gate(model, cand, acts))
                from mixlang.numeric import log

                losses.append(-log(probs[0 if positive else 1]))
            return stack(losses).mean()

        report = grad_check(loss, model.params())
        assert report.passed, report.summary()


class TestTrackDialogue:
    def test_oracle_scores_reproduce_gold(self, toy_ontology):
        dialogue = [
            turn("i want thai food", slots={"food": "thai"}),
            turn("in the north please", slots={"area": "north"}, requests=["phone"]),
        ]
        # accumulated gold belief states
        gold = [
            {"food": "thai", "area": "none"},
            {"food": "thai", "area": "north"},
        ]

        def prob(t, _turn, cand):
            if cand.slot == "request":
                return 0.99 if cand.value in _turn.gold_requests else 0.01
            return 0.99 if gold[t][cand.slot] == cand.value else 0.01

        states = track_dialogue(None, dialogue, toy_ontology, prob_fn=prob)
        assert [s.goal for s in states] == gold
        assert states[1].requests == {"phone"}
        from mixlang.metrics import BeliefState

        gold_states = [
            BeliefState(goal=gold[0], requests=set()),
            BeliefState(goal=gold[1], requests={"phone"}),
        ]
        assert joint_goal_accuracy(states, gold_states) == 1.0
        assert request_accuracy(states, gold_states) == 1.0

    def test_carry_over_below_threshold(self, toy_ontology):
        dialogue = [turn("thai food"), turn("anything else")]

        def prob(t, _turn, cand):
            if cand.slot == "request":
                return 0.0
            if t == 0:
                return 0.9 if cand.value == "thai" else 0.1
            return 0.3  # nothing clears the threshold at turn 2

        states = track_dialogue(None, dialogue, toy_ontology, prob_fn=prob)
        assert states[0].goal["food"] == "thai"
        assert states[1].goal["food"] == "thai"
        assert states[1].goal == states[0].goal

    def test_two_turn_hand_trace(self, toy_ontology):
        dialogue = [turn("hello"), turn("hello again")]
        script = {
            (0, "food", "thai"): 0.8,
            (0, "food", "french"): 0.6,
            (0, "area", "north"): 0.4,
            (1, "food", "french"): 0.95,
            (1, "area", "south"): 0.7,
            (1, "request", "phone"): 0.9,
        }

        def prob(t, _turn, cand):
            return script.get((t, cand.slot, cand.value), 0.05)

        states = track_dialogue(None, dialogue, toy_ontology, prob_fn=prob)
        # hand trace: turn 0 -> food thai (0.8 best, above 0.5), area below
        # threshold so stays none; turn 1 -> food french, area south, phone
        assert states[0].goal == {"food": "thai", "area": "none"}
        assert states[0].requests == set()
        assert states[1].goal == {"food": "french", "area": "south"}
        assert states[1].requests == {"phone"}

    def test_real_model_runs_and_carries_over(self, dst_corpus):
        dialogues, table, ontology = dst_corpus
        model = DstModel.init(table, 4, np.random.default_rng(0))
        states = track_dialogue(model, dialogues[0], ontology)
        assert len(states) == len(dialogues[0])
        for s in states:
            assert set(s.goal) == set(ontology.goal_slots)


class TestTrainDst:
    def test_separable_fixture_reaches_accuracy(self, dst_corpus):
        dialogues, table, ontology = dst_corpus
        config = DstTrainConfig(epochs=30, lr=0.5, hidden_size=8, seed=0, init_scale=0.3)
        result = train_dst(dialogues, table, ontology, config)
        acc = candidate_accuracy(result.model, dialogues, ontology)
        assert acc >= 0.95, f"training accuracy {acc}"
        assert len(result.epoch_losses) == 30

    def test_loss_trace_decreases(self, dst_corpus):
        dialogues, table, ontology = dst_corpus
        config = DstTrainConfig(epochs=12, lr=0.2, hidden_size=6, seed=1)
        result = train_dst(dialogues, table, ontology, config)
        losses = result.epoch_losses
        assert losses[-1] < losses[0]

    def test_same_seed_identical_parameters(self, dst_corpus):
        dialogues, table, ontology = dst_corpus
        config = DstTrainConfig(epochs=3, lr=0.2, hidden_size=5, seed=7)
        a = train_dst(dialogues, table, ontology, config)
        b = train_dst(dialogues, table, ontology, config)
        for name, p in a.model.params().items():
            assert np.array_equal(p.data, b.model.params()[name].data), name
        assert a.epoch_losses == b.epoch_losses

    def test_zero_learning_rate_keeps_parameters(self, dst_corpus):
        dialogues, table, ontology = dst_corpus
        frozen = train_dst(dialogues, table, ontology, DstTrainConfig(epochs=4, lr=0.0, seed=3))
        init_only = train_dst(dialogues, table, ontology, DstTrainConfig(epochs=0, lr=0.9, seed=3))
        for name, p in frozen.model.params().items():
            assert np.array_equal(p.data, init_only.model.params()[name].data), name

    def test_empty_dataset_rejected(self, dst_corpus):
        _, table, ontology = dst_corpus
        with pytest.raises(DataError):
            train_dst([], table, ontology, DstTrainConfig())

    def test_unknown_slot_rejected(self, dst_corpus):
        _, table, ontology = dst_corpus
        bad = [[turn("hello there", slots={"color": "red"})]]
        with pytest.raises(ConfigurationError):
            train_dst(bad, table, ontology, DstTrainConfig())

    def test_per_slot_softmax_mode_trains(self, dst_corpus):
        dialogues, table, ontology = dst_corpus
        config = DstTrainConfig(epochs=10, lr=0.3, hidden_size=6, seed=0, scoring="per_slot_softmax")
        result = train_dst(dialogues, table, ontology, config)
        states = track_dialogue(result.model, dialogues[0], ontology)
        assert len(states) == len(dialogues[0])
        assert result.epoch_losses[-1] < result.epoch_losses[0]


class TestAlignmentIdentity:
    def test_identical_target_vectors_keep_outputs_bit_identical(self):
        # perfectly aligned synthetic embeddings: swapping a keyword for its
        # translation must not change any model output at all
        rng = np.random.default_rng(5)
        table = make_table(["i", "want", "cheap", "food"], dim=5, seed=11)
        table.add("economico", table.lookup("cheap"))
        model = DstModel.init(table, 4, rng)
        pairs = PairDictionary([("cheap", "economico")])
        sentence = ["i", "want", "cheap", "food"]
        switched = generate_cs(sentence, pairs)
        assert switched == ["i", "want", "economico", "food"]

        pooled_a, alpha_a = encode_utterance(model, sentence)
        pooled_b, alpha_b = encode_utterance(model, switched)
        assert np.array_equal(pooled_a.data, pooled_b.data)
        assert np.array_equal(alpha_a.data, alpha_b.data)

        cand = SlotCandidate("food", "cheap")
        acts = SystemActs(request="food")
        pa = match_probability(model, pooled_a, cand, acts)
        pb = match_probability(model, pooled_b, cand, acts)
        assert pa == pb


class TestCheckpoint:
    def test_roundtrip_bit_exact(self, dst_corpus, tmp_path):
        dialogues, table, ontology = dst_corpus
        result = train_dst(dialogues, table, ontology, DstTrainConfig(epochs=2, lr=0.2, seed=0))
        path = tmp_path / "dst.ckpt.json"
        save_dst_model(result.model, path, seed=0)
        loaded = load_dst_model(path, table)
        for name, p in result.model.params().items():
            assert np.array_equal(p.data, loaded.params()[name].data), name
        assert loaded.scoring == result.model.scoring

    def test_kind_mismatch_rejected(self, dst_corpus, tmp_path):
        _, table, _ = dst_corpus
        path = tmp_path / "bogus.json"
        path.write_text('{"kind": "nlu"}', encoding="utf-8")
        with pytest.raises(ConfigurationError):
            load_dst_model(path, table)

    def test_dim_mismatch_rejected(self, dst_corpus, tmp_path):
        dialogues, table, ontology = dst_corpus
        result = train_dst(dialogues, table, ontology, DstTrainConfig(epochs=1, seed=0))
        path = tmp_path / "dst.json"
        save_dst_model(result.model, path)
        other = make_table(["a"], dim=3)
        with pytest.raises(ConfigurationError):
            load_dst_model(path, other)


class TestDataFiles:
    def test_dialogue_json_roundtrip(self, tmp_path):
        raw = [
            [
                {
                    "utterance": "I want Thai food",
                    "system_acts": {"request": None, "confirm_slot": None, "confirm_value": None},
                    "turn_label": {"food": "thai"},
                    "requested": [],
                },
                {
                    "utterance": "what is the phone number",
                    "system_acts": {"request": "area", "confirm_slot": "food", "confirm_value": "thai"},
                    "turn_label": {},
                    "requested": ["phone"],
                },
            ]
        ]
        import json

        src = tmp_path / "data.json"
        src.write_text(json.dumps(raw), encoding="utf-8")
        dialogues = load_dialogues(src)
        assert dialogues[0][0].utterance == ["i", "want", "thai", "food"]
        assert dialogues[0][1].acts.request == "area"
        assert dialogues[0][1].gold_requests == {"phone"}

        out = tmp_path / "out.json"
        save_dialogues(dialogues, out)
        again = load_dialogues(out)
        assert again[0][0].utterance == dialogues[0][0].utterance
        assert again[0][1].gold_slots == dialogues[0][1].gold_slots

    def test_list_valued_act_takes_first(self, tmp_path):
        import json

        raw = [[{"utterance": "hi", "system_acts": {"request": ["area", "food"]}, "turn_label": {}, "requested": []}]]
        src = tmp_path / "d.json"
        src.write_text(json.dumps(raw), encoding="utf-8")
        assert load_dialogues(src)[0][0].acts.request == "area"

    def test_ontology_loading(self, tmp_path):
        import json

        src = tmp_path / "ont.json"
        src.write_text(json.dumps({"food": ["Thai"], "requestable": ["Phone"]}), encoding="utf-8")
        ont = load_ontology(src)
        assert ont.goal_slots == {"food": ["thai"]}
        assert ont.requestable == ["phone"]
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"food": ["thai"]}), encoding="utf-8")
        with pytest.raises(ConfigurationError):
            load_ontology(bad)

    def test_apply_pairs_keeps_labels(self):
        dialogues = [[turn("i want thai food", slots={"food": "thai"}, requests=["phone"])]]
        switched = apply_pairs_to_dialogues(dialogues, PairDictionary([("thai", "tailandese")]))
        assert switched[0][0].utterance == ["i", "want", "tailandese", "food"]
        assert switched[0][0].gold_slots == {"food": "thai"}
        assert switched[0][0].gold_requests == {"phone"}


def test_attention_records_cover_all_turns(dst_corpus):
    dialogues, table, ontology = dst_corpus
    model = DstModel.init(table, 4, np.random.default_rng(2))
    records = attention_records(model, dialogues[:2])
    assert len(records) == sum(len(d) for d in dialogues[:2])
    for rec in records:
        assert abs(sum(rec.scores) - 1.0) < 1e-6


def test_confirm_act_pair_invariant():
    with pytest.raises(ValueError):
        SystemActs(confirm_slot="food", confirm_value=None)
