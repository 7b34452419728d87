"""Ordered-neurons LSTM stack with a next-token language-model head."""

from __future__ import annotations

from typing import List, Optional, Tuple

import torch
from torch import nn
from torch.nn import functional as F

from .config import OnLstmConfig

State = Tuple[torch.Tensor, torch.Tensor]


def cumax(x: torch.Tensor, dim: int = -1) -> torch.Tensor:
    """Cumulative sum of softmax: a monotone gate ending at 1."""
    c = torch.cumsum(F.softmax(x, dim=dim), dim=dim)
    # the float sum can overshoot 1 by a few ulps; dividing by the last entry
    # is the identity in exact arithmetic and keeps every entry in (0, 1]
    return c / c.narrow(dim, c.shape[dim] - 1, 1)


class ONLSTMCell(nn.Module):
    """One ON-LSTM layer step.

    Master gates live at chunk resolution (``hidden_dim // chunk_size``
    blocks) and are expanded by repeating each block ``chunk_size`` times.
    """

    def __init__(self, input_dim: int, hidden_dim: int, chunk_size: int):
        super().__init__()
        if hidden_dim % chunk_size:
            raise ValueError("hidden_dim must be divisible by chunk_size")
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        self.chunk_size = chunk_size
        self.n_chunks = hidden_dim // chunk_size
        width = 4 * hidden_dim + 2 * self.n_chunks
        self.ih = nn.Linear(input_dim, width)
        self.hh = nn.Linear(hidden_dim, width, bias=False)

    def zero_state(self, batch: int, like: torch.Tensor) -> State:
        z = like.new_zeros(batch, self.hidden_dim)
        return z, z.clone()

    def forward(self, x: torch.Tensor, state: State, return_gates: bool = False):
        h_prev, c_prev = state
        if x.shape[-1] != self.input_dim or h_prev.shape[-1] != self.hidden_dim:
            raise ValueError(
                f"shape mismatch: input {tuple(x.shape)}, hidden {tuple(h_prev.shape)} "
                f"for cell ({self.input_dim} -> {self.hidden_dim})"
            )
        return self.update(self.ih(x), state, return_gates)

    def update(self, x_proj: torch.Tensor, state: State, return_gates: bool = False):
        """Step given the precomputed input projection ``ih(x)``."""
        h_prev, c_prev = state
        gates = x_proj + self.hh(h_prev)
        nc, hd = self.n_chunks, self.hidden_dim
        master_f = cumax(gates[..., :nc]).repeat_interleave(self.chunk_size, dim=-1)
        master_i = (1.0 - cumax(gates[..., nc:2 * nc])).repeat_interleave(self.chunk_size, dim=-1)
        o, c_hat, i, f = gates[..., 2 * nc:].split(hd, dim=-1)
        o, i, f = torch.sigmoid(o), torch.sigmoid(i), torch.sigmoid(f)
        c_hat = torch.tanh(c_hat)

        overlap = master_f * master_i
        f_eff = f * overlap + (master_f - overlap)
        i_eff = i * overlap + (master_i - overlap)
        c = f_eff * c_prev + i_eff * c_hat
        h = o * torch.tanh(c)
        if return_gates:
            gate_dict = dict(f=f, i=i, o=o, c_hat=c_hat, master_f=master_f, master_i=master_i,
                             overlap=overlap, f_eff=f_eff, i_eff=i_eff)
            return h, (h, c), gate_dict
        return h, (h, c)


def onlstm_step(cell: ONLSTMCell, x_t: torch.Tensor, state: Optional[State] = None):
    """Single recurrence step; returns ``(h_t, (h_t, c_t))``."""
    squeeze = x_t.dim() == 1
    if squeeze:
        x_t = x_t[None]
        if state is not None:
            state = (state[0][None], state[1][None])
    if state is None:
        state = cell.zero_state(x_t.shape[0], x_t)
    h, (h, c) = cell(x_t, state)
    if squeeze:
        return h[0], (h[0], c[0])
    return h, (h, c)


class ONLSTM(nn.Module):
    """Stack of ON-LSTM cells over [B, T, d] inputs, dropout between layers."""

    def __init__(self, input_dim: int, config: OnLstmConfig):
        super().__init__()
        self.config = config
        dims = [input_dim] + [config.hidden_dim] * config.layers
        self.cells = nn.ModuleList(
            ONLSTMCell(dims[i], dims[i + 1], config.chunk_size) for i in range(config.layers)
        )
        self.dropout = nn.Dropout(config.dropout)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() != 3:
            raise ValueError("expected [batch, time, features] input")
        out = x
        for layer, cell in enumerate(self.cells):
            if layer > 0:
                out = self.dropout(out)
            state = cell.zero_state(out.shape[0], out)
            projected = cell.ih(out)
            steps: List[torch.Tensor] = []
            for t in range(out.shape[1]):
                h, state = cell.update(projected[:, t], state)
                steps.append(h)
            out = torch.stack(steps, dim=1)
        return out


class LmHead(nn.Module):
    """Projects hidden states to next-token logits over the LM vocabulary."""

    def __init__(self, hidden_dim: int, vocab_size: int):
        super().__init__()
        self.proj = nn.Linear(hidden_dim, vocab_size)

    def forward(self, hidden: torch.Tensor) -> torch.Tensor:
        return self.proj(hidden)


def lm_targets(word_ids: List[List[int]], eos: int, length: int) -> torch.Tensor:
    """Shifted next-token targets: position i predicts token i+1, the last predicts EOS.

    Padding positions are ``-100`` (ignored by the loss).
    """
    out = torch.full((len(word_ids), length), -100, dtype=torch.long)
    for row, ids in enumerate(word_ids):
        shifted = list(ids[1:]) + [eos]
        out[row, : len(shifted)] = torch.as_tensor(shifted, dtype=torch.long)
    return out


def sequence_nll(logits: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    """Mean next-token negative log-likelihood per sequence, shape [B]."""
    nll = F.cross_entropy(logits.transpose(1, 2), targets, ignore_index=-100, reduction="none")
    counts = (targets != -100).sum(dim=1).clamp(min=1)
    return nll.sum(dim=1) / counts
