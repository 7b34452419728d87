"""Character-level CNN word encoder."""

from __future__ import annotations

from typing import List, Sequence, Tuple

import torch
from torch import nn

from .config import CharEncoderConfig
from .data_io import CharVocabulary


class CharCNNEncoder(nn.Module):
    """Builds one word vector per token from its characters.

    Each kernel size gets its own 1-D convolution; features are max-pooled
    over valid window positions, concatenated, projected to ``output_dim``
    and layer-normalised.
    """

    def __init__(self, n_chars: int, config: CharEncoderConfig):
        super().__init__()
        self.config = config
        self.n_chars = n_chars
        self.char_embedding = nn.Embedding(n_chars, config.d_c)
        self.convs = nn.ModuleList(
            nn.Conv1d(config.d_c, config.channels_per_kernel, k) for k in config.kernel_sizes
        )
        self.dropout = nn.Dropout(config.dropout)
        self.proj = nn.Linear(len(config.kernel_sizes) * config.channels_per_kernel, config.output_dim)
        self.norm = nn.LayerNorm(config.output_dim)
        bound = 3.0 ** 0.5 / config.d_c ** 0.5
        nn.init.uniform_(self.char_embedding.weight, -bound, bound)

    @property
    def min_len(self) -> int:
        return max(self.config.kernel_sizes)

    def char_ids(self, words: Sequence[Sequence[int]]) -> Tuple[torch.Tensor, torch.Tensor]:
        """Pad char-index sequences into a [W, L] tensor plus true lengths."""
        lengths = []
        for chars in words:
            if len(chars) == 0:
                raise ValueError("cannot encode an empty character sequence")
            for c in chars:
                if not 0 <= c < self.n_chars:
                    raise IndexError(f"char index {c} outside [0, {self.n_chars})")
            lengths.append(min(len(chars), self.config.max_word_len))
        width = max([self.min_len, *lengths])
        ids = torch.full((len(words), width), CharVocabulary.PAD, dtype=torch.long)
        for row, (chars, n) in enumerate(zip(words, lengths)):
            ids[row, :n] = torch.as_tensor(list(chars[:n]), dtype=torch.long)
        return ids, torch.as_tensor(lengths, dtype=torch.long)

    def embed(self, ids: torch.Tensor) -> torch.Tensor:
        """Char embeddings with padding positions forced to zero."""
        return self.char_embedding(ids) * (ids != CharVocabulary.PAD).unsqueeze(-1).to(self.char_embedding.weight.dtype)

    def pooled(self, char_emb: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
        # only windows starting inside max(len, largest kernel) count, which
        # keeps a word's features independent of how far the batch is padded
        x = char_emb.transpose(1, 2)
        eff = torch.clamp(lengths, min=self.min_len)
        feats = []
        for conv, k in zip(self.convs, self.config.kernel_sizes):
            out = conv(x)
            starts = torch.arange(out.shape[-1], device=out.device)
            valid = starts[None, :] <= (eff - k)[:, None]
            out = out.masked_fill(~valid[:, None, :], float("-inf"))
            feats.append(out.max(dim=-1).values)
        return torch.cat(feats, dim=-1)

    def project(self, char_emb: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
        """Un-normalised word vectors [W, output_dim]."""
        return self.proj(self.dropout(self.pooled(char_emb, lengths)))

    def forward(self, ids: torch.Tensor, lengths: torch.Tensor, char_emb: torch.Tensor = None) -> torch.Tensor:
        if char_emb is None:
            char_emb = self.embed(ids)
        return self.norm(self.project(char_emb, lengths))


def encode_word(encoder: CharCNNEncoder, chars: Sequence[int], normalize: bool = True) -> torch.Tensor:
    """Vector for a single word given as char indices."""
    ids, lengths = encoder.char_ids([chars])
    if normalize:
        return encoder(ids, lengths)[0]
    return encoder.project(encoder.embed(ids), lengths)[0]


def encode_sequence(encoder: CharCNNEncoder, vocab: CharVocabulary, tokens: Sequence[str]) -> torch.Tensor:
    """S_emb for one sentence: row i is the encoding of token i."""
    ids, lengths = encoder.char_ids(
        [vocab.encode(t, encoder.config.max_word_len) for t in tokens]
    )
    return encoder(ids, lengths)


def encode_tokens_batch(encoder: CharCNNEncoder, vocab: CharVocabulary,
                        sentences: Sequence[Sequence[str]]) -> List[torch.Tensor]:
    """Encode many sentences at once, sharing work across repeated words."""
    unique: dict = {}
    for sent in sentences:
        for tok in sent:
            unique.setdefault(tok, len(unique))
    ids, lengths = encoder.char_ids([vocab.encode(t, encoder.config.max_word_len) for t in unique])
    table = encoder(ids, lengths)
    return [table[torch.as_tensor([unique[t] for t in sent])] for sent in sentences]
