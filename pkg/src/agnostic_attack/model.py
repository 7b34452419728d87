"""The importance-scoring attack network and its checkpoint format.

char-CNN word vectors -> 2-layer ON-LSTM -> (LM head, multi-head attention
-> C^Att -> entmax15 weights alpha) -> alpha-pooled sentence vector ->
C^clf. Paired tasks pool each sentence separately and classify
``[s_a + s_b ; s_a - s_b ; s_a * s_b]``.
"""

from __future__ import annotations

import contextlib
import io
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from . import config as cfg
from .attention import MultiHeadSelfAttention, TrainLossTerms, entmax15, mlp
from .data_io import CharVocabulary, TaskSchema, TokenizedSample, WordVocabulary
from .encoder import CharCNNEncoder
from .onlstm import LmHead, ONLSTM, lm_targets, sequence_nll

CHECKPOINT_FORMAT = "agnostic-attack-checkpoint"
CHECKPOINT_VERSION = 1


class NonFiniteLossError(FloatingPointError):
    def __init__(self, sample_id: str, term: str):
        self.sample_id = sample_id
        self.term = term
        super().__init__(f"non-finite {term} loss for sample {sample_id!r}")


@dataclass
class SentenceBatch:
    """Padded, model-ready view of a list of token sequences."""

    sentences: List[Tuple[str, ...]]
    char_ids: torch.Tensor      # [W, L] unique words
    char_lengths: torch.Tensor  # [W]
    word_index: torch.Tensor    # [B, T] rows of char_ids (0 on padding)
    mask: torch.Tensor          # [B, T] True on real tokens
    targets: torch.Tensor       # [B, T] LM targets, -100 on padding

    @property
    def lengths(self) -> List[int]:
        return [len(s) for s in self.sentences]


@dataclass
class SentenceStates:
    hidden: torch.Tensor     # [B, T, hidden]
    mask: torch.Tensor
    lm_logits: torch.Tensor  # [B, T, V_lm]
    scores: torch.Tensor     # [B, T] pre-entmax P'
    alpha: torch.Tensor      # [B, T]
    pooled: torch.Tensor     # [B, hidden]
    targets: torch.Tensor


class AttackModel(nn.Module):
    def __init__(self, model_config: cfg.ModelConfig, schema: TaskSchema,
                 char_vocab: CharVocabulary, word_vocab: WordVocabulary,
                 n_outputs: Optional[int] = None):
        super().__init__()
        self.model_config = model_config
        self.schema = schema
        self.char_vocab = char_vocab
        self.word_vocab = word_vocab
        self.n_outputs = schema.n_outputs if n_outputs is None else n_outputs
        hidden = model_config.lstm.hidden_dim
        self.encoder = CharCNNEncoder(len(char_vocab), model_config.encoder)
        self.lstm = ONLSTM(model_config.encoder.output_dim, model_config.lstm)
        self.lm_head = LmHead(hidden, len(word_vocab))
        self.attention = MultiHeadSelfAttention(hidden, model_config.attention.heads)
        self.c_att = mlp(hidden, model_config.attention.c_att_dims)
        clf_in = 3 * hidden if schema.paired else hidden
        self.c_clf = mlp(clf_in, tuple(model_config.attention.c_clf_dims) + (self.n_outputs,))

    # -- batching -------------------------------------------------------------

    def batch(self, sentences: Sequence[Sequence[str]], dedupe: bool = True) -> SentenceBatch:
        """Pack sentences; repeated words share one char row unless ``dedupe`` is off.

        With ``dedupe=False`` the char rows follow token order sentence by
        sentence, so a gradient on row j belongs to exactly one token.
        """
        sentences = [tuple(s) for s in sentences]
        if any(len(s) == 0 for s in sentences):
            raise ValueError("cannot encode an empty sentence")
        words: List[str] = []
        index_rows: List[List[int]] = []
        unique: dict = {}
        for s in sentences:
            row = []
            for tok in s:
                if dedupe:
                    if tok not in unique:
                        unique[tok] = len(words)
                        words.append(tok)
                    row.append(unique[tok])
                else:
                    row.append(len(words))
                    words.append(tok)
            index_rows.append(row)
        max_len = self.model_config.encoder.max_word_len
        char_ids, char_lengths = self.encoder.char_ids(
            [self.char_vocab.encode(w, max_len) for w in words]
        )
        t_max = max(len(s) for s in sentences)
        word_index = torch.zeros(len(sentences), t_max, dtype=torch.long)
        mask = torch.zeros(len(sentences), t_max, dtype=torch.bool)
        for row, (s, idx) in enumerate(zip(sentences, index_rows)):
            word_index[row, : len(s)] = torch.as_tensor(idx)
            mask[row, : len(s)] = True
        targets = lm_targets([self.word_vocab.encode(s) for s in sentences], WordVocabulary.EOS, t_max)
        return SentenceBatch(sentences, char_ids, char_lengths, word_index, mask, targets)

    # -- forward pieces -------------------------------------------------------

    def word_vectors(self, batch: SentenceBatch, char_emb: Optional[torch.Tensor] = None) -> torch.Tensor:
        table = self.encoder(batch.char_ids, batch.char_lengths, char_emb=char_emb)
        return table[batch.word_index]

    def states(self, batch: SentenceBatch, char_emb: Optional[torch.Tensor] = None) -> SentenceStates:
        emb = self.word_vectors(batch, char_emb)
        hidden = self.lstm(emb)
        lm_logits = self.lm_head(hidden)
        scores, alpha = self.attend_hidden(hidden, batch.mask)
        pooled = torch.einsum("bt,btd->bd", alpha, hidden)
        return SentenceStates(hidden, batch.mask, lm_logits, scores, alpha, pooled, batch.targets)

    def attend_hidden(self, hidden: torch.Tensor, mask: Optional[torch.Tensor] = None):
        """P = MultiHead(H); P' = C^Att(P); alpha = entmax15(P')."""
        if hidden.dim() == 2:
            hidden = hidden[None]
            mask = None if mask is None else mask[None]
            scores, alpha = self.attend_hidden(hidden, mask)
            return scores[0], alpha[0]
        if hidden.shape[-1] != self.model_config.lstm.hidden_dim:
            raise ValueError("hidden width does not match the attention block")
        p = self.attention(hidden, mask)
        scores = self.c_att(p).squeeze(-1)
        return scores, entmax15(scores, mask=mask)

    def head(self, pooled_a: torch.Tensor, pooled_b: Optional[torch.Tensor] = None) -> torch.Tensor:
        """C^clf on the (combined) sentence vectors; raw logits or regression scalar."""
        if self.schema.paired:
            if pooled_b is None:
                raise ValueError("paired schema needs both sentence vectors")
            feats = torch.cat([pooled_a + pooled_b, pooled_a - pooled_b, pooled_a * pooled_b], dim=-1)
        else:
            if pooled_b is not None:
                raise ValueError("paired inputs given to an unpaired schema")
            feats = pooled_a
        return self.c_clf(feats)

    def classify(self, hidden_a, alpha_a, hidden_b=None, alpha_b=None) -> torch.Tensor:
        """Class probabilities (classification) or the scalar score (regression)."""
        s_a = alpha_a @ hidden_a if hidden_a.dim() == 2 else torch.einsum("bt,btd->bd", alpha_a, hidden_a)
        s_b = None
        if hidden_b is not None:
            s_b = alpha_b @ hidden_b if hidden_b.dim() == 2 else torch.einsum("bt,btd->bd", alpha_b, hidden_b)
        out = self.head(s_a, s_b)
        if self.schema.is_classification:
            return torch.softmax(out, dim=-1)
        return out.squeeze(-1)

    def run(self, samples: Sequence[TokenizedSample]):
        """Shared forward over samples: (task outputs, per-sample LM nll, states_a, states_b)."""
        states_a = self.states(self.batch([s.tokens_a for s in samples]))
        states_b = None
        lm = sequence_nll(states_a.lm_logits, states_a.targets)
        if self.schema.paired:
            if any(s.tokens_b is None for s in samples):
                raise ValueError("paired schema requires tokens_b on every sample")
            states_b = self.states(self.batch([s.tokens_b for s in samples]))
            lm = lm + sequence_nll(states_b.lm_logits, states_b.targets)
            out = self.head(states_a.pooled, states_b.pooled)
        else:
            if any(s.tokens_b is not None for s in samples):
                raise ValueError("paired inputs given to an unpaired schema")
            out = self.head(states_a.pooled)
        return out, lm, states_a, states_b

    # -- loss -----------------------------------------------------------------

    def l2_norm_sq(self) -> torch.Tensor:
        return sum((p * p).sum() for p in self.parameters())

    def loss(self, samples: Sequence[TokenizedSample], lambda_: float = 0.0) -> TrainLossTerms:
        """Joint objective: task CE (or MSE) + LM loss + lambda * ||theta||^2.

        Data terms are per-sample values averaged over the batch.
        """
        if not samples:
            raise ValueError("loss needs a non-empty batch")
        out, lm, _, _ = self.run(samples)
        if self.schema.is_classification:
            labels = torch.as_tensor([int(s.label) for s in samples])
            if labels.min() < 0 or labels.max() >= self.n_outputs:
                raise ValueError("label outside the model's class range")
            task = F.cross_entropy(out, labels, reduction="none")
        else:
            labels = torch.as_tensor([float(s.label) for s in samples], dtype=out.dtype)
            task = (out.squeeze(-1) - labels) ** 2
        for name, values in (("task", task), ("lm", lm)):
            bad = ~torch.isfinite(values)
            if bad.any():
                raise NonFiniteLossError(samples[int(bad.nonzero()[0])].id, name)
        l2 = lambda_ * self.l2_norm_sq() if lambda_ else out.new_zeros(())
        return TrainLossTerms(task.mean(), lm.mean(), l2, lambda_)

    # -- inference helpers ------------------------------------------------------

    @contextlib.contextmanager
    def inference(self):
        """Dropout off and no autograd for the duration; restores the mode after."""
        was_training = self.training
        self.eval()
        try:
            with torch.no_grad():
                yield
        finally:
            self.train(was_training)

    def predict(self, samples: Sequence[TokenizedSample]) -> torch.Tensor:
        with self.inference():
            out, _, _, _ = self.run(samples)
        if self.schema.is_classification:
            return torch.softmax(out, dim=-1)
        return out.squeeze(-1)

    def alpha(self, tokens: Sequence[str]) -> np.ndarray:
        """Attention weights over the tokens of one sentence."""
        with self.inference():
            st = self.states(self.batch([tokens]))
        return st.alpha[0, : len(tokens)].double().cpu().numpy()

    def perplexity(self, sentences: Sequence[Sequence[str]], batch_size: int = 256) -> np.ndarray:
        """exp(mean next-token NLL) for each sentence."""
        out = []
        with self.inference():
            for start in range(0, len(sentences), batch_size):
                batch = self.batch(sentences[start:start + batch_size])
                hidden = self.lstm(self.word_vectors(batch))
                nll = sequence_nll(self.lm_head(hidden), batch.targets)
                out.append(torch.exp(nll).double().cpu().numpy())
        return np.concatenate(out) if out else np.zeros(0)

    def sample_perplexity(self, sample: TokenizedSample) -> float:
        """Perplexity of the sentence an attack perturbs (the second one when paired)."""
        return float(self.perplexity([sample.target_tokens])[0])


# --------------------------------------------------------------------------
# checkpoints: one .npz holding named parameter arrays plus a JSON metadata blob


def model_metadata(model: AttackModel, extra: Optional[dict] = None) -> dict:
    meta = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "model_config": cfg.to_dict(model.model_config),
        "schema": model.schema.to_dict(),
        "n_outputs": model.n_outputs,
        "char_vocab": model.char_vocab.to_list(),
        "word_vocab": model.word_vocab.to_list(),
        "dtype": str(next(model.parameters()).dtype).replace("torch.", ""),
    }
    if extra:
        meta["extra"] = extra
    return meta


def save_checkpoint(model: AttackModel, path, extra: Optional[dict] = None) -> None:
    """Write atomically: temp file in the same directory, then rename."""
    path = Path(path)
    arrays = {f"param/{k}": v.detach().cpu().numpy() for k, v in model.state_dict().items()}
    meta = json.dumps(model_metadata(model, extra), sort_keys=True)
    arrays["__meta__"] = np.frombuffer(meta.encode("utf-8"), dtype=np.uint8)
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(buf.getvalue())
    tmp.replace(path)


def load_checkpoint(path) -> Tuple[AttackModel, dict]:
    with np.load(Path(path), allow_pickle=False) as data:
        meta = json.loads(bytes(data["__meta__"]).decode("utf-8"))
        if meta.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"{path} is not an attack-model checkpoint")
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
        state = {k[len("param/"):]: torch.from_numpy(np.array(data[k])) for k in data.files if k.startswith("param/")}
    model_config = cfg.from_dict(cfg.ModelConfig, meta["model_config"])
    model = AttackModel(
        model_config,
        TaskSchema.from_dict(meta["schema"]),
        CharVocabulary(meta["char_vocab"]),
        WordVocabulary(meta["word_vocab"]),
        n_outputs=meta["n_outputs"],
    )
    if meta.get("dtype") == "float64":
        model.double()
    model.load_state_dict(state)
    model.eval()
    return model, meta


def build_model(samples: Iterable[TokenizedSample], schema: TaskSchema,
                model_config: Optional[cfg.ModelConfig] = None, seed: int = 0,
                n_outputs: Optional[int] = None) -> AttackModel:
    """Vocabularies from the corpus, weights from a seeded initialisation."""
    samples = list(samples)
    model_config = model_config or cfg.ModelConfig()
    char_vocab = CharVocabulary.build(samples)
    word_vocab = WordVocabulary.build(samples, cap=model_config.lm_vocab_cap)
    torch.manual_seed(seed)
    return AttackModel(model_config, schema, char_vocab, word_vocab, n_outputs=n_outputs)
