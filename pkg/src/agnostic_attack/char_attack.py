"""Character-level candidates driven by gradient-norm character importance."""

from __future__ import annotations

import random
from typing import Dict, List, Sequence

import numpy as np
import torch

from .config import CharAttackParams, derive_seed, to_dict
from .data_io import TokenizedSample
from .model import AttackModel
from .word_attack import Candidate, CandidateSet


def _selectable(token: str) -> bool:
    return any(ch.isalnum() for ch in token)


def select_char_attack_words(alpha: Sequence[float], tokens: Sequence[str], max_words: int) -> List[int]:
    """Top ``max_words`` positions by alpha among tokens with a letter or digit."""
    order = sorted(range(len(tokens)), key=lambda i: (-float(alpha[i]), i))
    return [i for i in order if _selectable(tokens[i])][:max_words]


def _task_output(model: AttackModel, sample: TokenizedSample, char_emb: torch.Tensor, batch) -> torch.Tensor:
    states = model.states(batch, char_emb)
    if model.schema.paired:
        other = model.states(model.batch([sample.tokens_a]))
        out = model.head(other.pooled.detach(), states.pooled)
    else:
        out = model.head(states.pooled)
    return out[0]


def char_importance(model: AttackModel, sample: TokenizedSample,
                    word_positions: Sequence[int]) -> Dict[int, np.ndarray]:
    """L2 norm of d(task output)/d(char embedding) for each char of the given words.

    The task output is the predicted class's logit (classification) or the
    regression scalar. Returns ``{position: scores}`` with one score per
    (possibly truncated) character.
    """
    tokens = tuple(sample.target_tokens)
    was_training = model.training
    model.eval()
    try:
        batch = model.batch([tokens], dedupe=False)
        with torch.no_grad():
            base = model.encoder.embed(batch.char_ids)
        char_emb = base.clone().requires_grad_(True)
        with torch.enable_grad():
            out = _task_output(model, sample, char_emb, batch)
            target = out[int(out.argmax())] if model.schema.is_classification else out.reshape(())
            (grad,) = torch.autograd.grad(target, char_emb)
    finally:
        model.train(was_training)
    norms = grad.norm(dim=-1).double().cpu().numpy()
    lengths = batch.char_lengths.tolist()
    return {int(p): norms[p, : lengths[p]].copy() for p in word_positions}


def top_characters(scores: np.ndarray, n: int) -> List[int]:
    """Indices of the ``n`` highest scores; ties go to the lower character index."""
    order = sorted(range(len(scores)), key=lambda i: (-float(scores[i]), i))
    return sorted(order[:n])


def generate_char_candidates(sample: TokenizedSample, model: AttackModel, params: CharAttackParams) -> CandidateSet:
    tokens = tuple(sample.target_tokens)
    result = CandidateSet(sample.id, tokens, [], to_dict(params), "char")
    positions = select_char_attack_words(model.alpha(tokens), tokens, params.max_words)
    result.selected_positions = tuple(sorted(positions))
    if not positions or params.chars_per_word == 0 or params.budget == 0:
        return result

    importance = char_importance(model, sample, positions)
    # edit targets in alpha-rank order, so the first m words' draws are shared
    # between runs with different max_words (common random numbers)
    targets = [(pos, ci) for pos in positions for ci in top_characters(importance[pos], params.chars_per_word)]

    alphabet = sorted(set(params.alphabet))
    seen = set()
    for attempt in range(50 * params.budget):
        if len(result.candidates) == params.budget:
            break
        rng = random.Random(derive_seed(params.seed, "char-attack", sample.id, attempt))
        words = [list(t) for t in tokens]
        for pos, ci in targets:
            original = words[pos][ci]
            words[pos][ci] = rng.choice([ch for ch in alphabet if ch != original])
        cand = tuple("".join(w) for w in words)
        if cand in seen:
            continue
        seen.add(cand)
        result.candidates.append(Candidate(cand, 1.0, None, result.selected_positions))
    return result


def generate_all_char(samples: Sequence[TokenizedSample], model: AttackModel,
                      params: CharAttackParams) -> List[CandidateSet]:
    return [generate_char_candidates(s, model, params) for s in samples]
