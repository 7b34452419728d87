"""Shared fixtures: tiny models for exact checks, one trained toy world for end-to-end tests."""

import functools

import pytest
import torch

from agnostic_attack import toy
from agnostic_attack.config import ModelConfig
from agnostic_attack.data_io import TaskSchema, TokenizedSample
from agnostic_attack.experiments import build_toy_world
from agnostic_attack.model import build_model

TINY_SENTENCES = [
    ("the", "film", "was", "great", "."),
    ("this", "is", "so", "bad", "."),
    ("a", "dull", "plot", "!"),
    ("great", "acting", ",", "great", "story"),
]


def tiny_samples(kind="classification", paired=False):
    out = []
    for i, toks in enumerate(TINY_SENTENCES):
        label = i % 2 if kind == "classification" else 1.0 + 0.7 * i
        tokens_b = TINY_SENTENCES[(i + 1) % len(TINY_SENTENCES)] if paired else None
        out.append(TokenizedSample(f"s{i}", toks, tokens_b, label, kind))
    return out


def tiny_model(kind="classification", paired=False, seed=0, double=True):
    schema = TaskSchema(task_kind=kind, m=2 if kind == "classification" else None, paired=paired)
    model = build_model(tiny_samples(kind, paired), schema, ModelConfig.tiny(), seed=seed)
    model.eval()
    return model.double() if double else model


@pytest.fixture
def tiny_clf():
    return tiny_model()


@pytest.fixture
def tiny_reg():
    return tiny_model("regression")


@functools.lru_cache(maxsize=None)
def world(seed):
    """Toy corpus, held-out set, synonym space and trained attack model, built once per seed."""
    torch.set_num_threads(1)
    return build_toy_world(seed)


@pytest.fixture(scope="session")
def toy_world():
    return world(0)


@pytest.fixture(scope="session")
def toy_space():
    return toy.make_toy_embeddings(seed=0)
