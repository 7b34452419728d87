"""Sparse attention scoring: 1.5-entmax, multi-head self-attention, MLP heads."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import torch
from torch import nn

ENTMAX_ITERATIONS = 60


def _entmax15_forward(scores: torch.Tensor, mask: Optional[torch.Tensor], n_iter: int) -> torch.Tensor:
    z = scores / 2
    if mask is not None:
        z = z.masked_fill(~mask, float("-inf"))
        n_valid = mask.sum(dim=-1, keepdim=True).clamp(min=1).to(z.dtype)
    else:
        n_valid = torch.full_like(z[..., :1], z.shape[-1])
    z_max = z.max(dim=-1, keepdim=True).values
    # the threshold tau is bracketed by: top entry alone carries mass 1 (lo),
    # and every entry carries at most 1/n (hi)
    lo = z_max - 1.0
    hi = z_max - n_valid.rsqrt()
    for _ in range(n_iter):
        mid = (lo + hi) / 2
        mass = torch.clamp(z - mid, min=0).pow(2).sum(dim=-1, keepdim=True)
        above = mass >= 1
        lo = torch.where(above, mid, lo)
        hi = torch.where(above, hi, mid)
        if torch.equal(lo, hi):
            break
    p = torch.clamp(z - lo, min=0).pow(2)
    p = p / p.sum(dim=-1, keepdim=True)
    # fully tied rows are exactly uniform; renormalising leaves a one-ulp error
    z_min = z.masked_fill(torch.isinf(z), float("inf")).min(dim=-1, keepdim=True).values
    tied = z_min == z_max
    if tied.any():
        uniform = torch.isfinite(z).to(z.dtype) / n_valid
        p = torch.where(tied, uniform, p)
    return p


class _Entmax15(torch.autograd.Function):
    @staticmethod
    def forward(ctx, scores, mask, n_iter):
        p = _entmax15_forward(scores, mask, n_iter)
        ctx.save_for_backward(p)
        return p

    @staticmethod
    def backward(ctx, grad_out):
        (p,) = ctx.saved_tensors
        # on the support p = u^2 with u = z/2 - tau, so J = diag(u) - u u^T / sum(u)
        u = p.sqrt()
        g = grad_out * u
        coef = g.sum(dim=-1, keepdim=True) / u.sum(dim=-1, keepdim=True)
        return g - coef * u, None, None


def entmax15(scores: torch.Tensor, dim: int = -1, mask: Optional[torch.Tensor] = None,
             n_iter: int = ENTMAX_ITERATIONS) -> torch.Tensor:
    """1.5-entmax along ``dim``: ``p_i = max(0, scores_i/2 - tau)^2`` with sum 1.

    The threshold is found by bisection. Entries where ``mask`` is False get
    exactly zero mass.
    """
    if dim != -1 and dim != scores.dim() - 1:
        scores = scores.transpose(dim, -1)
        if mask is not None:
            mask = mask.transpose(dim, -1)
        return _Entmax15.apply(scores, mask, n_iter).transpose(dim, -1)
    return _Entmax15.apply(scores, mask, n_iter)


def mlp(in_dim: int, dims: Sequence[int], activation=nn.SELU) -> nn.Sequential:
    layers = []
    prev = in_dim
    for i, d in enumerate(dims):
        layers.append(nn.Linear(prev, d))
        if i < len(dims) - 1:
            layers.append(activation())
        prev = d
    return nn.Sequential(*layers)


class MultiHeadSelfAttention(nn.Module):
    """Scaled dot-product self-attention, no residual, no positional encoding."""

    def __init__(self, hidden_dim: int, heads: int):
        super().__init__()
        if hidden_dim % heads:
            raise ValueError("hidden_dim must be divisible by heads")
        self.heads = heads
        self.head_dim = hidden_dim // heads
        self.q = nn.Linear(hidden_dim, hidden_dim)
        self.k = nn.Linear(hidden_dim, hidden_dim)
        self.v = nn.Linear(hidden_dim, hidden_dim)
        self.out = nn.Linear(hidden_dim, hidden_dim)

    def forward(self, h: torch.Tensor, mask: Optional[torch.Tensor] = None) -> torch.Tensor:
        b, t, d = h.shape

        def split(x):
            return x.view(b, t, self.heads, self.head_dim).transpose(1, 2)

        q, k, v = split(self.q(h)), split(self.k(h)), split(self.v(h))
        logits = q @ k.transpose(-1, -2) / math.sqrt(self.head_dim)
        if mask is not None:
            logits = logits.masked_fill(~mask[:, None, None, :], float("-inf"))
        weights = torch.softmax(logits, dim=-1)
        ctx = (weights @ v).transpose(1, 2).reshape(b, t, d)
        return self.out(ctx)


@dataclass
class TrainLossTerms:
    ce_or_mse: torch.Tensor
    lm_loss: torch.Tensor
    l2: torch.Tensor
    lambda_: float

    @property
    def total(self) -> torch.Tensor:
        return self.ce_or_mse + self.lm_loss + self.l2

    def as_floats(self) -> dict:
        return {
            "ce_or_mse": float(self.ce_or_mse.detach()),
            "lm": float(self.lm_loss.detach()),
            "l2": float(self.l2.detach()),
            "lambda": self.lambda_,
            "total": float(self.total.detach()),
        }
