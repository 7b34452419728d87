import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from agnostic_attack.config import ModelConfig, OnLstmConfig
from agnostic_attack.data_io import TaskSchema, TokenizedSample, WordVocabulary
from agnostic_attack.model import build_model
from agnostic_attack.onlstm import ONLSTM, ONLSTMCell, cumax, lm_targets, onlstm_step

from conftest import tiny_model


def test_cumax_examples():
    torch.testing.assert_close(cumax(torch.zeros(3, dtype=torch.float64)),
                               torch.tensor([1 / 3, 2 / 3, 1.0], dtype=torch.float64))
    e = math.e
    expected = torch.tensor([e / (e + 2), (e + 1) / (e + 2), 1.0], dtype=torch.float64)
    out = cumax(torch.tensor([1.0, 0.0, 0.0], dtype=torch.float64))
    torch.testing.assert_close(out, expected)
    assert out.tolist() == pytest.approx([0.5761, 0.7880, 1.0], abs=1e-4)


def test_cumax_last_component_under_permutation():
    v = torch.tensor([3.0, -1.0, 0.5, 2.0])
    for perm in ([0, 1, 2, 3], [3, 2, 1, 0], [1, 3, 0, 2]):
        assert cumax(v[perm])[-1].item() == pytest.approx(1.0, abs=1e-6)


@settings(max_examples=300, deadline=None)
@given(arrays(np.float64, st.integers(1, 64), elements=st.floats(-50, 50)))
def test_cumax_is_monotone_gate(v):
    out = cumax(torch.from_numpy(v)).numpy()
    assert np.all(np.diff(out) >= -1e-12)
    assert np.all(out > 0) and np.all(out <= 1 + 1e-12)
    assert abs(out[-1] - 1.0) <= 1e-6


def _cell(hidden=10, chunk=5, d_in=4, seed=0):
    torch.manual_seed(seed)
    return ONLSTMCell(d_in, hidden, chunk).double()


def test_zero_everything_gives_zero_hidden():
    cell = _cell()
    with torch.no_grad():
        for p in cell.parameters():
            p.zero_()
    x = torch.zeros(4, dtype=torch.float64)
    h, (_, c) = onlstm_step(cell, x)
    assert torch.count_nonzero(h) == 0 and torch.count_nonzero(c) == 0
    _, _, gates = cell(x[None], cell.zero_state(1, x), return_gates=True)
    torch.testing.assert_close(gates["master_f"][0, ::5], torch.tensor([0.5, 1.0], dtype=torch.float64))
    torch.testing.assert_close(gates["o"], torch.full((1, 10), 0.5, dtype=torch.float64))


def test_effective_gate_identity_on_random_draws():
    # f_eff + i_eff = (f + i - 2) * overlap + master_f + master_i, and both gates lie in [0, 1]
    cell = _cell()
    gen = torch.Generator().manual_seed(1)
    for _ in range(50):
        x = torch.randn(3, 4, generator=gen, dtype=torch.float64) * 3
        state = (torch.randn(3, 10, generator=gen, dtype=torch.float64), torch.randn(3, 10, generator=gen, dtype=torch.float64))
        _, _, g = cell(x, state, return_gates=True)
        lhs = g["f_eff"] + g["i_eff"]
        rhs = (g["f"] + g["i"] - 2) * g["overlap"] + g["master_f"] + g["master_i"]
        torch.testing.assert_close(lhs, rhs)
        assert ((lhs > -1e-12) & (lhs < 2)).all()
        for k in ("f_eff", "i_eff"):
            assert ((g[k] >= -1e-12) & (g[k] <= 1 + 1e-12)).all()


def test_single_chunk_master_gates_are_scalars():
    cell = _cell(hidden=6, chunk=6)
    x = torch.randn(2, 4, dtype=torch.float64)
    _, _, g = cell(x, cell.zero_state(2, x), return_gates=True)
    for k in ("master_f", "master_i"):
        assert torch.allclose(g[k], g[k][:, :1].expand_as(g[k]))
    assert torch.allclose(g["master_f"], torch.ones_like(g["master_f"]))


def test_shape_mismatch():
    cell = _cell()
    with pytest.raises(ValueError):
        cell(torch.zeros(1, 5, dtype=torch.float64), cell.zero_state(1, torch.zeros(1, dtype=torch.float64)))
    with pytest.raises(ValueError):
        OnLstmConfig(hidden_dim=10, chunk_size=3)


def _stack(layers=2, seed=0):
    torch.manual_seed(seed)
    return ONLSTM(4, OnLstmConfig(layers=layers, hidden_dim=10, chunk_size=5, dropout=0.0)).double().eval()


def test_forward_matches_hand_unrolled_steps():
    lstm = _stack()
    x = torch.randn(1, 3, 4, dtype=torch.float64)
    out = lstm(x)
    seq = x[0]
    for cell in lstm.cells:
        state, rows = None, []
        for t in range(3):
            h, state = onlstm_step(cell, seq[t], state)
            rows.append(h)
        seq = torch.stack(rows)
    torch.testing.assert_close(out[0], seq, rtol=0, atol=1e-12)


def test_single_token_forward():
    lstm = _stack()
    assert lstm(torch.randn(1, 1, 4, dtype=torch.float64)).shape == (1, 1, 10)
    targets = lm_targets([[5]], eos=WordVocabulary.EOS, length=1)
    assert targets.tolist() == [[WordVocabulary.EOS]]


def test_causality():
    lstm = _stack()
    x = torch.randn(1, 6, 4, dtype=torch.float64)
    y = x.clone()
    y[0, 3] += 1.0
    a, b = lstm(x), lstm(y)
    torch.testing.assert_close(a[0, :3], b[0, :3], rtol=0, atol=0)
    assert not torch.allclose(a[0, 3:], b[0, 3:])


def test_lm_targets_shift_and_pad():
    out = lm_targets([[4, 5, 6], [7]], eos=1, length=3)
    assert out.tolist() == [[5, 6, 1], [1, -100, -100]]


def test_zero_projection_gives_vocab_size_perplexity():
    model = tiny_model()
    with torch.no_grad():
        model.lm_head.proj.weight.zero_()
        model.lm_head.proj.bias.zero_()
    ppl = model.perplexity([("the", "film", "was", "great", "."), ("unseen", "words")])
    np.testing.assert_allclose(ppl, len(model.word_vocab), rtol=1e-12)


def test_perplexity_ignores_label():
    model = tiny_model()
    a = TokenizedSample("x", ("a", "dull", "plot"), None, 0)
    b = TokenizedSample("x", ("a", "dull", "plot"), None, 1)
    assert model.sample_perplexity(a) == model.sample_perplexity(b)


def test_forward_is_deterministic():
    model = tiny_model()
    sents = [("the", "film"), ("great", "acting", "!")]
    assert np.array_equal(model.perplexity(sents), model.perplexity(sents))


def test_overfit_single_sentence_drives_perplexity_to_one():
    sent = ("we", "loved", "this", "quiet", "film")
    samples = [TokenizedSample("r0", sent, None, 1)]
    model = build_model(samples, TaskSchema(m=2), ModelConfig.tiny(), seed=0)
    opt = torch.optim.Adam(model.parameters(), lr=3e-2)
    for _ in range(300):
        opt.zero_grad()
        model.loss(samples).total.backward()
        opt.step()
    assert model.perplexity([sent])[0] <= 1.1
