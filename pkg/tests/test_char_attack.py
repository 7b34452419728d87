import numpy as np
import pytest
import torch

from agnostic_attack.char_attack import (char_importance, generate_all_char, generate_char_candidates,
                                         select_char_attack_words, top_characters)
from agnostic_attack.config import CharAttackParams
from agnostic_attack.data_io import TokenizedSample

from conftest import tiny_model, tiny_samples


def _edits(orig, cand):
    out = {}
    for i, (a, b) in enumerate(zip(orig, cand)):
        if a != b:
            assert len(a) == len(b)
            out[i] = [j for j, (x, y) in enumerate(zip(a, b)) if x != y]
    return out


def test_word_selection_skips_punctuation():
    assert select_char_attack_words([0.1, 0.6, 0.3], ["film", "!", "dull"], 2) == [2, 0]
    assert select_char_attack_words([0.5, 0.5], ["..", "?"], 3) == []


def test_top_characters_tie_break():
    assert top_characters(np.zeros(5), 2) == [0, 1]
    assert top_characters(np.array([0.1, 0.9, 0.9, 0.2]), 2) == [1, 2]
    assert top_characters(np.array([0.3]), 2) == [0]


def test_zero_head_gives_zero_scores():
    model = tiny_model()
    with torch.no_grad():
        for p in model.c_clf.parameters():
            p.zero_()
    sample = tiny_samples()[0]
    scores = char_importance(model, sample, [1, 3])
    assert set(scores) == {1, 3}
    for pos, s in scores.items():
        assert len(s) == len(sample.tokens_a[pos]) and not s.any()
        assert top_characters(s, 2) == [0, 1]


def test_importance_matches_finite_differences():
    model = tiny_model()
    sample = tiny_samples()[3]
    positions = [0, 1, 4]
    scores = char_importance(model, sample, positions)

    batch = model.batch([sample.tokens_a], dedupe=False)
    with torch.no_grad():
        base = model.encoder.embed(batch.char_ids)
        logits = model.head(model.states(batch, base).pooled)[0]
    cls = int(logits.argmax())

    def f(emb):
        with torch.no_grad():
            return float(model.head(model.states(batch, emb).pooled)[0, cls])

    eps, worst = 1e-6, 0.0
    for pos in positions:
        for c in range(len(sample.tokens_a[pos])):
            grad = np.zeros(base.shape[-1])
            for d in range(base.shape[-1]):
                plus, minus = base.clone(), base.clone()
                plus[pos, c, d] += eps
                minus[pos, c, d] -= eps
                grad[d] = (f(plus) - f(minus)) / (2 * eps)
            num = np.linalg.norm(grad)
            worst = max(worst, abs(num - scores[pos][c]) / max(num, scores[pos][c], 1e-8))
    assert worst < 1e-3


def test_importance_ignores_unselected_words():
    model = tiny_model()
    a = TokenizedSample("a", ("great", "film", "here"), None, 1)
    b = TokenizedSample("a", ("great", "film", "zzzz"), None, 1)
    sa, sb = char_importance(model, a, [0]), char_importance(model, b, [0])
    assert set(sa) == {0}
    assert sa[0].shape == sb[0].shape


def test_zero_chars_per_word_gives_empty_set():
    model = tiny_model()
    cs = generate_char_candidates(tiny_samples()[0], model, CharAttackParams(chars_per_word=0))
    assert cs.empty and cs.mode == "char"


def test_no_selectable_words_gives_empty_set():
    model = tiny_model()
    cs = generate_char_candidates(TokenizedSample("p", ("!", "?"), None, 0), model, CharAttackParams())
    assert cs.empty and cs.selected_positions == ()


def test_alphabet_must_exclude_padding():
    with pytest.raises(ValueError):
        CharAttackParams(alphabet="")


@pytest.mark.parametrize("words,chars", [(1, 1), (2, 2), (3, 2), (3, 3)])
def test_edit_budget_on_tiny_model(words, chars):
    model = tiny_model()
    params = CharAttackParams(max_words=words, chars_per_word=chars, budget=20, seed=4)
    for s in tiny_samples():
        cs = generate_char_candidates(s, model, params)
        assert len(cs) <= 20 and len({c.tokens for c in cs.candidates}) == len(cs)
        for c in cs.candidates:
            edits = _edits(s.tokens_a, c.tokens)
            assert edits and len(edits) <= words
            assert set(edits) <= set(cs.selected_positions)
            assert all(len(v) <= chars for v in edits.values())
            assert c.similarity == 1.0 and c.perplexity is None


def test_char_candidates_are_deterministic():
    model = tiny_model()
    params = CharAttackParams(seed=9)
    a = [cs.to_json() for cs in generate_all_char(tiny_samples(), model, params)]
    b = [cs.to_json() for cs in generate_all_char(tiny_samples(), model, params)]
    assert a == b
    c = [cs.to_json() for cs in generate_all_char(tiny_samples(), model, CharAttackParams(seed=10))]
    assert a != c


def test_edit_budget_on_toy_world(toy_world):
    params = CharAttackParams(seed=0)
    for s in toy_world.test[:40]:
        cs = generate_char_candidates(s, toy_world.model, params)
        for c in cs.candidates:
            edits = _edits(s.tokens_a, c.tokens)
            assert 1 <= len(edits) <= params.max_words
            assert set(edits) <= set(cs.selected_positions)
            assert all(1 <= len(v) <= params.chars_per_word for v in edits.values())
