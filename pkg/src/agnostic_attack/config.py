"""Configuration dataclasses and seed plumbing.

Defaults follow the published hyperparameters wherever one exists; the
``tiny``/``toy`` constructors give CPU-friendly sizes for tests and the
desk-scale experiments.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from typing import Any, Optional, Sequence, Tuple


def derive_seed(root_seed: int, *names: Any) -> int:
    """Stable 63-bit seed from a root seed and a path of stage names."""
    key = json.dumps([int(root_seed), *[str(n) for n in names]])
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") & ((1 << 63) - 1)


@dataclass(frozen=True)
class CharEncoderConfig:
    d_c: int = 100
    kernel_sizes: Tuple[int, ...] = (3, 4, 5)
    channels_per_kernel: int = 100
    output_dim: int = 200
    dropout: float = 0.3
    max_word_len: int = 32

    def __post_init__(self):
        if min(self.d_c, self.channels_per_kernel, self.output_dim, self.max_word_len) <= 0:
            raise ValueError("char encoder sizes must be positive")
        if not self.kernel_sizes or min(self.kernel_sizes) <= 0:
            raise ValueError("kernel sizes must be positive")
        object.__setattr__(self, "kernel_sizes", tuple(int(k) for k in self.kernel_sizes))


@dataclass(frozen=True)
class OnLstmConfig:
    layers: int = 2
    hidden_dim: int = 500
    chunk_size: int = 10
    dropout: float = 0.25

    def __post_init__(self):
        if self.layers < 1 or self.hidden_dim < 1 or self.chunk_size < 1:
            raise ValueError("ON-LSTM sizes must be positive")
        if self.hidden_dim % self.chunk_size:
            raise ValueError(
                f"hidden_dim ({self.hidden_dim}) must be divisible by chunk_size ({self.chunk_size})"
            )

    @property
    def n_chunks(self) -> int:
        return self.hidden_dim // self.chunk_size


@dataclass(frozen=True)
class AttentionConfig:
    heads: int = 4
    c_att_dims: Tuple[int, ...] = (100, 1)
    c_clf_dims: Tuple[int, ...] = (300, 100)

    def __post_init__(self):
        if self.heads < 1:
            raise ValueError("heads must be positive")
        att = tuple(int(d) for d in self.c_att_dims)
        if not att or att[-1] != 1:
            raise ValueError("C^Att must end in a width-1 layer")
        object.__setattr__(self, "c_att_dims", att)
        object.__setattr__(self, "c_clf_dims", tuple(int(d) for d in self.c_clf_dims))


@dataclass(frozen=True)
class ModelConfig:
    encoder: CharEncoderConfig = field(default_factory=CharEncoderConfig)
    lstm: OnLstmConfig = field(default_factory=OnLstmConfig)
    attention: AttentionConfig = field(default_factory=AttentionConfig)
    lm_vocab_cap: int = 10_000

    def __post_init__(self):
        if self.lstm.hidden_dim % self.attention.heads:
            raise ValueError("hidden_dim must be divisible by the number of heads")

    @classmethod
    def tiny(cls) -> "ModelConfig":
        """Gradient-check sized model (hidden 10, chunk 5)."""
        return cls(
            encoder=CharEncoderConfig(d_c=4, kernel_sizes=(3, 4, 5), channels_per_kernel=3,
                                      output_dim=6, dropout=0.0),
            lstm=OnLstmConfig(layers=2, hidden_dim=10, chunk_size=5, dropout=0.0),
            attention=AttentionConfig(heads=2, c_att_dims=(5, 1), c_clf_dims=(6, 4)),
        )

    @classmethod
    def toy(cls) -> "ModelConfig":
        """Small model used for the desk-scale sentiment experiments."""
        return cls(
            # reference dropout: lighter dropout lets the last state carry the whole sentence,
            # and the attention then drifts off the words that decide the label
            encoder=CharEncoderConfig(d_c=16, channels_per_kernel=24, output_dim=32),
            # one layer: at this width a second layer starves the classifier of signal
            lstm=OnLstmConfig(layers=1, hidden_dim=40, chunk_size=10),
            attention=AttentionConfig(heads=4, c_att_dims=(20, 1), c_clf_dims=(32, 16)),
        )


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    max_epochs: int = 200
    batch_size: int = 32
    l2_lambda: float = 1e-5
    plateau_factor: float = 0.5
    plateau_patience: int = 5
    min_lr: float = 1e-5
    grad_clip: float = 5.0
    val_fraction: float = 0.1
    early_stop_patience: Optional[int] = None
    seed: int = 0

    @classmethod
    def toy(cls, seed: int = 0) -> "TrainConfig":
        """Short schedule for the toy corpus; no L2 term, which Adam turns into a collapse of
        weights whose task gradient is still near zero."""
        return cls(max_epochs=10, l2_lambda=0.0, seed=seed)

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size <= 0 or self.max_epochs < 0:
            raise ValueError("learning rate and batch size must be positive, epochs non-negative")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in [0, 1)")
        if self.l2_lambda < 0:
            raise ValueError("l2_lambda must be non-negative")


@dataclass(frozen=True)
class AttackParams:
    k_neighbors: int = 25
    cosine_floor: float = 0.5
    max_words: int = 3
    combinations: int = 600
    perplexity_keep: int = 350
    budget: int = 20
    similarity_floor: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.k_neighbors < 0:
            raise ValueError("k_neighbors must be non-negative")
        if self.max_words < 1:
            raise ValueError("max_words (M) must be at least 1")
        if not (0.0 <= self.cosine_floor <= 1.0 and 0.0 <= self.similarity_floor <= 1.0):
            raise ValueError("cosine_floor and similarity_floor must lie in [0, 1]")
        if not (0 <= self.budget <= self.perplexity_keep <= self.combinations):
            raise ValueError("need K <= W <= R")


@dataclass(frozen=True)
class CharAttackParams:
    max_words: int = 3
    chars_per_word: int = 2
    budget: int = 20
    alphabet: str = (
        "abcdefghijklmnopqrstuvwxyz"
        "0123456789"
        ".,;:'\"?!"
        "-_/|"
        "@#$%^&*()[]{}<>~+="
    )
    seed: int = 0

    def __post_init__(self):
        if self.max_words < 1:
            raise ValueError("max_words must be at least 1")
        if self.chars_per_word < 0:
            raise ValueError("chars_per_word must be non-negative")
        if not self.alphabet:
            raise ValueError("replacement alphabet must be non-empty")
        if any(ch.isspace() for ch in self.alphabet):
            raise ValueError("replacement alphabet may not contain whitespace")


def to_dict(obj) -> dict:
    return dataclasses.asdict(obj)


def from_dict(cls, data: Optional[dict]):
    """Build a (possibly nested) config dataclass from a plain mapping."""
    if data is None:
        return cls()
    if isinstance(data, cls):
        return data
    kwargs = {}
    fields = {f.name: f for f in dataclasses.fields(cls)}
    for key, value in data.items():
        if key not in fields:
            raise KeyError(f"{cls.__name__} has no field {key!r}")
        sub = _NESTED.get((cls.__name__, key))
        if sub is not None and isinstance(value, dict):
            value = from_dict(sub, value)
        elif isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    return cls(**kwargs)


_NESTED = {
    ("ModelConfig", "encoder"): CharEncoderConfig,
    ("ModelConfig", "lstm"): OnLstmConfig,
    ("ModelConfig", "attention"): AttentionConfig,
}


def config_hash(payload: Any) -> str:
    """Short content hash of any JSON-serialisable config payload."""
    text = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=_jsonable)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def _jsonable(obj):
    if dataclasses.is_dataclass(obj):
        return dataclasses.asdict(obj)
    if isinstance(obj, (set, frozenset)):
        return sorted(obj)
    if isinstance(obj, Sequence):
        return list(obj)
    raise TypeError(f"not JSON serialisable: {type(obj).__name__}")
