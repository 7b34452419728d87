"""Desk-scale experiment protocols on the synthetic sentiment corpus.

Shared by the command line, the scripts in ``scripts/`` and the acceptance
tests so every caller runs exactly the same protocol.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

from . import toy
from .char_attack import generate_all_char
from .config import AttackParams, CharAttackParams, ModelConfig, TrainConfig, derive_seed
from .data_io import EmbeddingSpace, TokenizedSample
from .eval_harness import (AttackReport, BlackboxTarget, attack_target, budget_sweep, staggered_attack,
                           toy_target_factory, transfer_attack)
from .model import AttackModel, build_model
from .training import train
from .word_attack import CandidateSet, generate_all

N_TRAIN = 2000
N_TEST = 400


@dataclass
class ToyWorld:
    seed: int
    train: List[TokenizedSample]
    test: List[TokenizedSample]
    space: EmbeddingSpace
    model: AttackModel


def build_toy_world(seed: int, n_train: int = N_TRAIN, n_test: int = N_TEST,
                    epochs: Optional[int] = None) -> ToyWorld:
    """Corpus, held-out sentences, synonym space and a trained attack model for one seed."""
    corpus = toy.make_toy_corpus(n_train, seed=seed)
    test = toy.make_toy_corpus(n_test, seed=derive_seed(seed, "toy-test") % (2 ** 32), prefix="test")
    space = toy.make_toy_embeddings(seed=seed)
    model = build_model(corpus, toy.TOY_SCHEMA, ModelConfig.toy(), seed=derive_seed(seed, "model-init"))
    cfg = TrainConfig.toy(seed)
    if epochs is not None:
        cfg = dataclasses.replace(cfg, max_epochs=epochs)
    train(model, corpus, cfg)
    return ToyWorld(seed, corpus, test, space, model)


def toy_target(world: ToyWorld, kind: str = "mean_embedding", tag: str = "A") -> BlackboxTarget:
    """A target trained independently of the attack model (its own seed stream)."""
    return toy_target_factory(kind, derive_seed(world.seed, "target", kind, tag), world.train,
                              name=f"{kind}-{tag}")


def word_sets(world: ToyWorld, params: Optional[AttackParams] = None, selection: str = "alpha") -> List[CandidateSet]:
    params = params or AttackParams(seed=world.seed)
    return generate_all(world.test, world.model, world.space, params, selection=selection)


def ablation(world: ToyWorld, target: BlackboxTarget, params: Optional[AttackParams] = None) -> Dict[str, AttackReport]:
    """Alpha-guided versus random-position candidates against one target."""
    out = {}
    for selection in ("alpha", "random"):
        sets = word_sets(world, params, selection)
        out[selection] = attack_target(target, world.test, sets).report
    return out


def sweep(world: ToyWorld, target: BlackboxTarget, budgets: Sequence[int] = (0, 1, 2, 5, 10, 15, 20),
          params: Optional[AttackParams] = None):
    return budget_sweep(target, world.test, word_sets(world, params), budgets)


def transfer(world: ToyWorld, source: BlackboxTarget, other: BlackboxTarget,
             params: Optional[AttackParams] = None) -> AttackReport:
    sets = word_sets(world, params)
    src = attack_target(source, world.test, sets)
    return transfer_attack(src.success_sets, world.test, other).report


def staggered(world: ToyWorld, targets: Sequence[BlackboxTarget], params: Optional[AttackParams] = None):
    return staggered_attack(targets, world.test, word_sets(world, params))


def char_word_count_curve(world: ToyWorld, target: BlackboxTarget, words: Sequence[int] = (1, 2, 3),
                          chars_per_word: int = 2) -> Dict[int, AttackReport]:
    """Character attack strength as a function of how many words are perturbed."""
    out = {}
    for m in words:
        params = CharAttackParams(max_words=m, chars_per_word=chars_per_word, seed=world.seed)
        sets = generate_all_char(world.test, world.model, params)
        out[m] = attack_target(target, world.test, sets).report
    return out
