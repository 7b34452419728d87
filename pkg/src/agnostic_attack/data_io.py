"""Corpus and embedding ingestion, vocabularies, stop-words and POS tagging."""

from __future__ import annotations

import collections
import json
import os
import logging
import math
import string
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Protocol, Sequence, Tuple, Union

import numpy as np

logger = logging.getLogger(__name__)

PUNCTUATION = frozenset(string.punctuation)
CLASSIFICATION = "classification"
REGRESSION = "regression"
COARSE_TAGS = ("NOUN", "VERB", "ADJ", "ADV", "PRON", "DET", "OTHER")


class DatasetError(ValueError):
    """A dataset record could not be parsed; carries the 1-based line number."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class EmbeddingError(ValueError):
    pass


# --------------------------------------------------------------------------
# tokenization


def tokenize(text: str) -> List[str]:
    """Lowercase, split on whitespace, then peel leading/trailing punctuation.

    Each peeled punctuation character becomes its own token; interior
    punctuation (``don't``, ``e-mail``) stays inside the word.
    """
    tokens: List[str] = []
    for chunk in text.lower().split():
        start, end = 0, len(chunk)
        while start < end and chunk[start] in PUNCTUATION:
            start += 1
        while end > start and chunk[end - 1] in PUNCTUATION:
            end -= 1
        tokens.extend(chunk[:start])
        if start < end:
            tokens.append(chunk[start:end])
        tokens.extend(chunk[end:])
    return tokens


def detokenize(tokens: Sequence[str]) -> str:
    return " ".join(tokens)


def is_punctuation(token: str) -> bool:
    return bool(token) and all(ch in PUNCTUATION for ch in token)


# --------------------------------------------------------------------------
# samples and schema


@dataclass(frozen=True)
class TaskSchema:
    task_kind: str = CLASSIFICATION
    m: Optional[int] = 2
    paired: bool = False
    label_names: Optional[Tuple[str, ...]] = None

    def __post_init__(self):
        if self.task_kind not in (CLASSIFICATION, REGRESSION):
            raise ValueError(f"unknown task kind {self.task_kind!r}")
        if self.task_kind == CLASSIFICATION:
            if self.m is None or self.m < 2:
                raise ValueError("classification schemas need m >= 2 classes")
            if self.label_names is not None:
                names = tuple(self.label_names)
                if len(names) != self.m:
                    raise ValueError("label_names must have exactly m entries")
                object.__setattr__(self, "label_names", names)
        else:
            object.__setattr__(self, "m", None)

    @property
    def is_classification(self) -> bool:
        return self.task_kind == CLASSIFICATION

    @property
    def n_outputs(self) -> int:
        return self.m if self.is_classification else 1

    def to_dict(self) -> dict:
        return {
            "task_kind": self.task_kind,
            "m": self.m,
            "paired": self.paired,
            "label_names": list(self.label_names) if self.label_names else None,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "TaskSchema":
        names = data.get("label_names")
        return cls(
            task_kind=data.get("task_kind", CLASSIFICATION),
            m=data.get("m", 2),
            paired=bool(data.get("paired", False)),
            label_names=tuple(names) if names else None,
        )


@dataclass(frozen=True)
class TokenizedSample:
    id: str
    tokens_a: Tuple[str, ...]
    tokens_b: Optional[Tuple[str, ...]] = None
    label: Union[int, float] = 0
    task_kind: str = CLASSIFICATION

    def __post_init__(self):
        object.__setattr__(self, "tokens_a", tuple(self.tokens_a))
        if self.tokens_b is not None:
            object.__setattr__(self, "tokens_b", tuple(self.tokens_b))
        for seq in (self.tokens_a, self.tokens_b):
            if seq is None:
                continue
            if not seq:
                raise ValueError(f"sample {self.id}: token sequence is empty")
            if any(not tok for tok in seq):
                raise ValueError(f"sample {self.id}: empty token")
        if self.task_kind == CLASSIFICATION:
            if isinstance(self.label, bool) or not isinstance(self.label, (int, np.integer)):
                raise ValueError(f"sample {self.id}: classification label must be an int")
            object.__setattr__(self, "label", int(self.label))
        elif self.task_kind == REGRESSION:
            object.__setattr__(self, "label", float(self.label))
        else:
            raise ValueError(f"unknown task kind {self.task_kind!r}")

    @property
    def paired(self) -> bool:
        return self.tokens_b is not None

    @property
    def target_tokens(self) -> Tuple[str, ...]:
        """The sentence an attack perturbs: the second one for paired tasks."""
        return self.tokens_b if self.tokens_b is not None else self.tokens_a

    def with_target_tokens(self, tokens: Sequence[str]) -> "TokenizedSample":
        if self.tokens_b is not None:
            return TokenizedSample(self.id, self.tokens_a, tuple(tokens), self.label, self.task_kind)
        return TokenizedSample(self.id, tuple(tokens), None, self.label, self.task_kind)


def _parse_label(raw, schema: TaskSchema, line: int):
    if schema.is_classification:
        text = str(raw).strip()
        if schema.label_names and text in schema.label_names:
            return schema.label_names.index(text)
        try:
            value = float(text)
        except ValueError:
            raise DatasetError(f"label {text!r} is not a class index", line) from None
        if value != int(value) or not 0 <= int(value) < schema.m:
            raise DatasetError(f"label {text!r} outside [0, {schema.m})", line)
        return int(value)
    try:
        value = float(raw)
    except (TypeError, ValueError):
        raise DatasetError(f"label {raw!r} is not a real number", line) from None
    if not math.isfinite(value):
        raise DatasetError(f"label {raw!r} is not finite", line)
    return value


def _make_sample(record: Mapping, schema: TaskSchema, index: int, line: int, stem: str):
    s1 = record.get("sentence1")
    if s1 is None or not str(s1).strip():
        raise DatasetError("missing sentence1", line)
    if "label" not in record or record["label"] in (None, ""):
        raise DatasetError("missing label", line)
    tokens_b = None
    if schema.paired:
        s2 = record.get("sentence2")
        if s2 is None or not str(s2).strip():
            raise DatasetError("paired schema but sentence2 is missing", line)
        tokens_b = tokenize(str(s2))
        if not tokens_b:
            raise DatasetError("sentence2 has no tokens", line)
    tokens_a = tokenize(str(s1))
    if not tokens_a:
        raise DatasetError("sentence1 has no tokens", line)
    sid = str(record["id"]) if record.get("id") not in (None, "") else f"{stem}-{index}"
    return TokenizedSample(
        id=sid,
        tokens_a=tuple(tokens_a),
        tokens_b=tuple(tokens_b) if tokens_b is not None else None,
        label=_parse_label(record["label"], schema, line),
        task_kind=schema.task_kind,
    )


def load_dataset(path, schema: TaskSchema) -> List[TokenizedSample]:
    """Read a TSV (with header) or JSONL corpus into tokenized samples.

    Sample ids come from an ``id`` column when present, otherwise from the
    file stem and record index, so they are stable across reloads.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    stem = path.stem
    samples: List[TokenizedSample] = []
    if path.suffix.lower() in (".jsonl", ".json"):
        with path.open(encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    record = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise DatasetError(f"invalid JSON ({exc.msg})", lineno) from None
                if not isinstance(record, dict):
                    raise DatasetError("record is not an object", lineno)
                samples.append(_make_sample(record, schema, len(samples), lineno, stem))
        return samples

    with path.open(encoding="utf-8", newline="") as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].strip():
        return samples
    header = lines[0].split("\t")
    required = ["sentence1", "label"] + (["sentence2"] if schema.paired else [])
    missing = [c for c in required if c not in header]
    if missing:
        raise DatasetError(f"header lacks column(s) {missing}", 1)
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        cells = line.split("\t")
        if len(cells) > len(header):
            raise DatasetError(f"expected {len(header)} columns, found {len(cells)}", lineno)
        record = dict(zip(header, cells))
        samples.append(_make_sample(record, schema, len(samples), lineno, stem))
    return samples


def write_dataset(path, samples: Iterable[TokenizedSample]) -> None:
    """Write samples as TSV in the loader's own normal form."""
    samples = list(samples)
    paired = any(s.paired for s in samples)
    cols = ["id", "sentence1"] + (["sentence2"] if paired else []) + ["label"]
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("w", encoding="utf-8", newline="") as fh:
        fh.write("\t".join(cols) + "\n")
        for s in samples:
            row = [s.id, detokenize(s.tokens_a)]
            if paired:
                row.append(detokenize(s.tokens_b or ()))
            row.append(repr(s.label) if isinstance(s.label, float) else str(s.label))
            fh.write("\t".join(row) + "\n")
    os.replace(tmp, path)


# --------------------------------------------------------------------------
# embeddings


class EmbeddingSpace:
    """Read-only word vectors with cosine nearest-neighbour search."""

    def __init__(self, vocabulary: Mapping[str, int], vectors: np.ndarray, duplicates: int = 0):
        vectors = np.array(vectors, dtype=np.float64)
        if vectors.ndim != 2 or vectors.shape[0] != len(vocabulary):
            raise EmbeddingError("vectors must be a [V x d_w] matrix aligned to the vocabulary")
        if not np.all(np.isfinite(vectors)):
            raise EmbeddingError("embedding vectors must be finite")
        norms = np.linalg.norm(vectors, axis=1)
        if np.any(norms == 0):
            bad = [w for w, i in vocabulary.items() if norms[i] == 0]
            raise EmbeddingError(f"zero-norm vector for {bad[0]!r}")
        vectors.setflags(write=False)
        self.vocabulary: Dict[str, int] = dict(vocabulary)
        self.words: List[str] = [None] * len(self.vocabulary)
        for w, i in self.vocabulary.items():
            self.words[i] = w
        self.vectors = vectors
        self.duplicates = duplicates
        unit = vectors / norms[:, None]
        unit.setflags(write=False)
        self._unit = unit

    @property
    def d_w(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return len(self.vocabulary)

    def __contains__(self, token: str) -> bool:
        return token.lower() in self.vocabulary

    def vector(self, token: str) -> np.ndarray:
        return self.vectors[self.vocabulary[token.lower()]]

    def cosine(self, a: str, b: str) -> float:
        return float(self._unit[self.vocabulary[a.lower()]] @ self._unit[self.vocabulary[b.lower()]])

    def nearest(self, token: str, k: int) -> List[Tuple[str, float]]:
        """The ``k`` most cosine-similar words to ``token`` (itself excluded).

        Ties are broken by vocabulary row so results are deterministic.
        """
        token = token.lower()
        if k <= 0 or token not in self.vocabulary:
            return []
        row = self.vocabulary[token]
        sims = self._unit @ self._unit[row]
        order = np.lexsort((np.arange(len(sims)), -sims))
        out = []
        for idx in order:
            if idx == row:
                continue
            out.append((self.words[idx], float(sims[idx])))
            if len(out) == k:
                break
        return out


def load_embeddings(path) -> EmbeddingSpace:
    """Parse a word2vec text file (``V d_w`` header, then token + floats)."""
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise EmbeddingError("header must read 'V d_w'")
        n_rows, dim = int(header[0]), int(header[1])
        vocab: Dict[str, int] = {}
        rows: List[List[float]] = []
        duplicates = 0
        for line in fh:
            parts = line.rstrip("\n").rstrip().split(" ")
            if not parts or parts == [""]:
                continue
            token, values = parts[0].lower(), parts[1:]
            if len(values) != dim:
                raise EmbeddingError(
                    f"dimension mismatch for token {parts[0]!r}: expected {dim}, got {len(values)}"
                )
            vec = [float(v) for v in values]
            if not all(math.isfinite(v) for v in vec):
                raise EmbeddingError(f"non-finite component for token {parts[0]!r}")
            if not any(vec):
                raise EmbeddingError(f"zero-norm vector for token {parts[0]!r}")
            if token in vocab:
                duplicates += 1
                continue
            vocab[token] = len(rows)
            rows.append(vec)
    if duplicates:
        logger.warning("%s: skipped %d duplicate token(s)", path, duplicates)
    if len(rows) + duplicates != n_rows:
        logger.warning("%s: header announces %d rows, read %d", path, n_rows, len(rows) + duplicates)
    matrix = np.array(rows, dtype=np.float64).reshape(len(rows), dim)
    return EmbeddingSpace(vocab, matrix, duplicates=duplicates)


def write_embeddings(path, words: Sequence[str], vectors: np.ndarray) -> None:
    vectors = np.asarray(vectors, dtype=np.float64)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("w", encoding="utf-8") as fh:
        fh.write(f"{len(words)} {vectors.shape[1]}\n")
        for w, v in zip(words, vectors):
            fh.write(w + " " + " ".join(repr(float(x)) for x in v) + "\n")
    os.replace(tmp, path)


# --------------------------------------------------------------------------
# vocabularies


class CharVocabulary:
    PAD = 0
    UNK = 1

    def __init__(self, characters: Iterable[str]):
        self.chars: List[str] = ["<pad>", "<unk>"]
        self.index: Dict[str, int] = {}
        for ch in characters:
            if len(ch) != 1:
                raise ValueError(f"not a single character: {ch!r}")
            if ch not in self.index:
                self.index[ch] = len(self.chars)
                self.chars.append(ch)

    DEFAULT_ALPHABET = string.ascii_lowercase + string.digits + string.punctuation

    @classmethod
    def build(cls, samples: Iterable[TokenizedSample] = (), extra: str = "") -> "CharVocabulary":
        seen = list(cls.DEFAULT_ALPHABET) + list(extra)
        corpus_chars = set()
        for s in samples:
            for seq in (s.tokens_a, s.tokens_b or ()):
                for tok in seq:
                    corpus_chars.update(tok)
        seen.extend(sorted(corpus_chars))
        return cls(seen)

    def __len__(self) -> int:
        return len(self.chars)

    def encode(self, word: str, max_len: int = 32) -> List[int]:
        return [self.index.get(ch, self.UNK) for ch in word[:max_len]]

    def printable(self) -> str:
        return "".join(ch for ch in self.chars[2:] if ch.isprintable() and not ch.isspace())

    def to_list(self) -> List[str]:
        return self.chars[2:]


class WordVocabulary:
    """Language-model target vocabulary: ``<unk>``, ``<eos>``, then frequent words."""

    UNK = 0
    EOS = 1

    def __init__(self, words: Iterable[str]):
        self.words: List[str] = ["<unk>", "<eos>"]
        self.index: Dict[str, int] = {}
        for w in words:
            if w not in self.index and w not in ("<unk>", "<eos>"):
                self.index[w] = len(self.words)
                self.words.append(w)

    @classmethod
    def build(cls, samples: Iterable[TokenizedSample], cap: int = 10_000) -> "WordVocabulary":
        counts: collections.Counter = collections.Counter()
        for s in samples:
            counts.update(s.tokens_a)
            if s.tokens_b:
                counts.update(s.tokens_b)
        ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:cap]
        return cls(w for w, _ in ranked)

    def __len__(self) -> int:
        return len(self.words)

    def encode(self, tokens: Sequence[str]) -> List[int]:
        return [self.index.get(t, self.UNK) for t in tokens]

    def to_list(self) -> List[str]:
        return self.words[2:]


# --------------------------------------------------------------------------
# stop-words and POS tagging


def _data_file(name: str) -> Path:
    return Path(str(resources.files("agnostic_attack") / "data" / name))


def load_stopwords(path=None) -> frozenset:
    path = Path(path) if path is not None else _data_file("stopwords.txt")
    words = set()
    with path.open(encoding="utf-8") as fh:
        for line in fh:
            word = line.strip().lower()
            if word and not word.startswith("#"):
                words.add(word)
    return frozenset(words)


class Tagger(Protocol):
    def tag(self, tokens: Sequence[str]) -> List[str]: ...


_SUFFIX_RULES = (
    ("ly", "ADV"),
    ("ing", "VERB"),
    ("ed", "VERB"),
    ("ize", "VERB"),
    ("ise", "VERB"),
    ("ous", "ADJ"),
    ("ful", "ADJ"),
    ("ive", "ADJ"),
    ("able", "ADJ"),
    ("ible", "ADJ"),
    ("less", "ADJ"),
    ("ish", "ADJ"),
    ("tion", "NOUN"),
    ("sion", "NOUN"),
    ("ness", "NOUN"),
    ("ment", "NOUN"),
    ("ity", "NOUN"),
    ("ship", "NOUN"),
    ("er", "NOUN"),
)


class LexiconTagger:
    """Deterministic coarse tagger: lexicon lookup, then suffix rules, then OTHER."""

    def __init__(self, lexicon: Optional[Mapping[str, str]] = None, suffix_rules=_SUFFIX_RULES):
        if lexicon is None:
            lexicon = load_lexicon()
        for word, tag in lexicon.items():
            if tag not in COARSE_TAGS:
                raise ValueError(f"lexicon tag {tag!r} for {word!r} is not a coarse tag")
        self.lexicon = dict(lexicon)
        self.suffix_rules = tuple(suffix_rules)

    def tag_word(self, token: str) -> str:
        token = token.lower()
        hit = self.lexicon.get(token)
        if hit is not None:
            return hit
        if is_punctuation(token) or not any(ch.isalpha() for ch in token):
            return "OTHER"
        for suffix, tag in self.suffix_rules:
            if len(token) > len(suffix) + 2 and token.endswith(suffix):
                return tag
        return "OTHER"

    def tag(self, tokens: Sequence[str]) -> List[str]:
        return [self.tag_word(t) for t in tokens]


def load_lexicon(path=None) -> Dict[str, str]:
    path = Path(path) if path is not None else _data_file("pos_lexicon.tsv")
    lexicon: Dict[str, str] = {}
    with path.open(encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            word, tag = line.split("\t")
            lexicon.setdefault(word.lower(), tag)
    return lexicon


_DEFAULT_TAGGER: Optional[LexiconTagger] = None


def default_tagger() -> LexiconTagger:
    global _DEFAULT_TAGGER
    if _DEFAULT_TAGGER is None:
        _DEFAULT_TAGGER = LexiconTagger()
    return _DEFAULT_TAGGER


def pos_tag(tokens: Sequence[str], tagger: Optional[Tagger] = None) -> List[str]:
    if not tokens:
        raise ValueError("pos_tag needs a non-empty token sequence")
    return list((tagger or default_tagger()).tag(tokens))
