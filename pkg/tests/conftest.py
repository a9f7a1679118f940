"""Shared fixture builders: deterministic embedding tables and a small
restaurant-domain DST corpus."""

import numpy as np
import pytest

from mixlang.codeswitch import tokenize
from mixlang.dst import DialogueTurn, Ontology, SystemActs
from mixlang.embeddings import EmbeddingTable

FOODS = ["thai", "french", "italian"]
AREAS = ["north", "south"]
REQUESTABLE = ["phone", "address"]


def make_table(tokens, dim=6, seed=0, oov_policy="zero") -> EmbeddingTable:
    """One deterministic unit-scale random vector per token."""
    rng = np.random.default_rng(seed)
    table = EmbeddingTable(dim, oov_policy=oov_policy)
    for token in tokens:
        table.add(token, rng.normal(size=dim))
    return table


def vocab_of(dialogues, ontology: Ontology):
    vocab = []
    seen = set()

    def push(tok):
        if tok not in seen:
            seen.add(tok)
            vocab.append(tok)

    for dialogue in dialogues:
        for turn in dialogue:
            for tok in turn.utterance:
                push(tok)
    for term in ontology.terms():
        for tok in term.split():
            push(tok)
    push("none")
    push("request")
    return vocab


@pytest.fixture
def toy_ontology() -> Ontology:
    return Ontology(goal_slots={"food": list(FOODS), "area": list(AREAS)}, requestable=list(REQUESTABLE))


def turn(text, slots=None, requests=(), acts=None):
    return DialogueTurn(
        utterance=tokenize(text),
        acts=acts or SystemActs(),
        gold_slots=dict(slots or {}),
        gold_requests=set(requests),
    )


def separable_dst_dialogues():
    """20 turns whose gold value is signalled by the system confirm act.

    The match head is linear over concat(R, G), so candidate/value agreement
    must flow through the act gates (the Hadamard interactions); the user
    only affirms in text.
    """
    affirmations = [
        "yes {v} works for me",
        "{v} sounds good",
        "yes please book {v}",
        "right {v} is what i want",
    ]
    dialogues = []
    for slot, values in (("food", FOODS), ("area", AREAS)):
        for v in values:
            dialogues.append(
                [
                    turn(
                        text.format(v=v),
                        slots={slot: v},
                        acts=SystemActs(confirm_slot=slot, confirm_value=v),
                    )
                    for text in affirmations
                ]
            )
    return dialogues


@pytest.fixture
def dst_corpus(toy_ontology):
    dialogues = separable_dst_dialogues()
    table = make_table(vocab_of(dialogues, toy_ontology), dim=10, seed=1)
    return dialogues, table, toy_ontology


def _slot_example(prefix, value_tokens, suffix, slot, intent):
    from mixlang.nlu import NluExample

    tokens = prefix.split() + list(value_tokens) + suffix.split()
    tags = (
        ["O"] * len(prefix.split())
        + [f"B-{slot}"]
        + [f"I-{slot}"] * (len(value_tokens) - 1)
        + ["O"] * len(suffix.split())
    )
    return NluExample(tokens=tokens, tags=tags, intent=intent)


def separable_nlu_examples():
    """40 template utterances over 3 intents and 3 slot types."""
    times = [["morning"], ["noon"], ["evening"], ["night"], ["six", "thirty"]]
    cities = [["paris"], ["london"], ["tokyo"], ["oslo"], ["new", "york"]]
    tasks = [["shopping"], ["exercise"], ["homework"], ["family", "dinner"], ["grocery", "run"]]
    examples = []
    for v in times:
        examples.append(_slot_example("set the alarm for", v, "", "time", "set_alarm"))
        examples.append(_slot_example("wake me up at", v, "please", "time", "set_alarm"))
        examples.append(_slot_example("alarm at", v, "thanks", "time", "set_alarm"))
    for v in cities:
        examples.append(_slot_example("will it rain in", v, "", "city", "check_weather"))
        examples.append(_slot_example("show the weather for", v, "today", "city", "check_weather"))
        examples.append(_slot_example("how hot is it in", v, "", "city", "check_weather"))
    for v in tasks:
        examples.append(_slot_example("remind me to do", v, "", "task", "add_reminder"))
        examples.append(_slot_example("add a reminder about", v, "now", "task", "add_reminder"))
    assert len(examples) == 40
    return examples


def nlu_vocab(examples):
    vocab = []
    seen = set()
    for ex in examples:
        for tok in ex.tokens:
            if tok not in seen:
                seen.add(tok)
                vocab.append(tok)
    return vocab


@pytest.fixture
def nlu_corpus():
    examples = separable_nlu_examples()
    table = make_table(nlu_vocab(examples), dim=10, seed=2)
    return examples, table
