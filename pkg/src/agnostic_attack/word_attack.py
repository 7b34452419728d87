"""Offline, target-agnostic generation of word-substitution candidate sets.

For one sample: build a pruned synonym neighbourhood for every token, pick
the top-M positions by attention weight, sample up to R substitution
combinations over those positions, keep the W lowest-perplexity sentences
under the attack model's language-model head, then keep the K most
semantically similar ones that clear the similarity floor.
"""

from __future__ import annotations

import json
import os
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, List, Optional, Protocol, Sequence, Tuple

import numpy as np

from .config import AttackParams, derive_seed, to_dict
from .data_io import EmbeddingSpace, Tagger, TokenizedSample, default_tagger, load_stopwords


@dataclass(frozen=True)
class Neighborhood:
    token: str
    position: int
    candidates: Tuple[Tuple[str, float], ...] = ()

    @property
    def words(self) -> Tuple[str, ...]:
        return tuple(w for w, _ in self.candidates)

    def __len__(self) -> int:
        return len(self.candidates)


@dataclass
class Candidate:
    tokens: Tuple[str, ...]
    similarity: float
    perplexity: Optional[float]
    positions: Tuple[int, ...]

    def to_json(self) -> dict:
        return {
            "tokens": list(self.tokens),
            "similarity": self.similarity,
            "perplexity": self.perplexity,
            "positions": list(self.positions),
        }

    @classmethod
    def from_json(cls, data: dict) -> "Candidate":
        return cls(tuple(data["tokens"]), float(data["similarity"]),
                   None if data.get("perplexity") is None else float(data["perplexity"]),
                   tuple(int(p) for p in data["positions"]))


@dataclass
class CandidateSet:
    """At most K candidates for one original sample.

    ``tokens`` of each candidate replace the perturbable sentence (the
    second sentence for paired tasks); ``original_tokens`` is that sentence
    before perturbation.
    """

    original_id: str
    original_tokens: Tuple[str, ...]
    candidates: List[Candidate] = field(default_factory=list)
    params: dict = field(default_factory=dict)
    mode: str = "word"
    selected_positions: Tuple[int, ...] = ()
    meta: dict = field(default_factory=dict)

    @property
    def empty(self) -> bool:
        return not self.candidates

    def __len__(self) -> int:
        return len(self.candidates)

    def truncated(self, budget: int) -> "CandidateSet":
        return CandidateSet(self.original_id, self.original_tokens, self.candidates[:budget],
                            self.params, self.mode, self.selected_positions, self.meta)

    def to_json(self) -> dict:
        return {
            "id": self.original_id,
            "original_tokens": list(self.original_tokens),
            "candidates": [c.to_json() for c in self.candidates],
            "params": self.params,
            "mode": self.mode,
            "selected_positions": list(self.selected_positions),
            "status": "empty" if self.empty else "ok",
            **({"meta": self.meta} if self.meta else {}),
        }

    @classmethod
    def from_json(cls, data: dict) -> "CandidateSet":
        return cls(
            original_id=str(data["id"]),
            original_tokens=tuple(data["original_tokens"]),
            candidates=[Candidate.from_json(c) for c in data.get("candidates", [])],
            params=dict(data.get("params", {})),
            mode=data.get("mode", "word"),
            selected_positions=tuple(data.get("selected_positions", ())),
            meta=dict(data.get("meta", {})),
        )


def write_candidate_sets(path, sets: Iterable[CandidateSet]) -> None:
    """JSONL, one record per original; written to a temp file then renamed."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("w", encoding="utf-8") as fh:
        for cs in sets:
            fh.write(json.dumps(cs.to_json(), sort_keys=True) + "\n")
    os.replace(tmp, path)


def read_candidate_sets(path) -> List[CandidateSet]:
    out = []
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                out.append(CandidateSet.from_json(json.loads(line)))
    return out


# --------------------------------------------------------------------------
# sentence similarity


class SentenceEncoder(Protocol):
    def encode(self, tokens: Sequence[str]) -> np.ndarray: ...


class MeanEmbeddingEncoder:
    """Mean of the word vectors of in-vocabulary tokens (zero if none)."""

    def __init__(self, space: EmbeddingSpace):
        self.space = space

    def encode(self, tokens: Sequence[str]) -> np.ndarray:
        rows = [self.space.vector(t) for t in tokens if t in self.space]
        if not rows:
            return np.zeros(self.space.d_w)
        return np.mean(rows, axis=0)


def semantic_similarity(s1: Sequence[str], s2: Sequence[str], encoder: SentenceEncoder) -> float:
    """Cosine between sentence encodings, in [-1, 1]; identical inputs give 1."""
    if not s1 or not s2:
        raise ValueError("semantic_similarity needs two non-empty sentences")
    if tuple(s1) == tuple(s2):
        return 1.0
    a, b = np.asarray(encoder.encode(s1), float), np.asarray(encoder.encode(s2), float)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


# --------------------------------------------------------------------------
# steps (a) and (b)


def build_neighborhood(space: EmbeddingSpace, sentence, position: int, params: AttackParams,
                       tagger: Optional[Tagger] = None, stopwords: Optional[frozenset] = None) -> Neighborhood:
    """Top-k cosine neighbours of one token, pruned by cosine floor, POS and stop-words.

    The POS check tags the sentence with the neighbour substituted in place
    and compares the tag at ``position`` with the original's.
    """
    tokens = tuple(sentence.target_tokens if isinstance(sentence, TokenizedSample) else sentence)
    token = tokens[position]
    if params.k_neighbors <= 0 or token not in space:
        return Neighborhood(token, position)
    tagger = tagger or default_tagger()
    stopwords = load_stopwords() if stopwords is None else stopwords
    original_tag = tagger.tag(tokens)[position]
    kept = []
    for word, cos in space.nearest(token, params.k_neighbors):
        if cos < params.cosine_floor or word in stopwords or word == token:
            continue
        swapped = tokens[:position] + (word,) + tokens[position + 1:]
        if tagger.tag(swapped)[position] != original_tag:
            continue
        kept.append((word, cos))
    return Neighborhood(token, position, tuple(kept))


def select_important_words(alpha: Sequence[float], M: int,
                           neighborhoods: Sequence[Optional[Neighborhood]]) -> List[int]:
    """Positions of the M largest attention weights, skipping empty neighbourhoods.

    Ties go to the lower index; fewer than M positions come back when not
    enough tokens have substitutes.
    """
    alpha = np.asarray(alpha, dtype=float)
    if len(alpha) != len(neighborhoods):
        raise ValueError("alpha and neighbourhoods must align with the tokens")
    order = sorted(range(len(alpha)), key=lambda i: (-alpha[i], i))
    chosen = []
    for i in order:
        if len(chosen) == M:
            break
        if neighborhoods[i] is not None and len(neighborhoods[i]) > 0:
            chosen.append(i)
    return chosen


def select_random_words(M: int, neighborhoods: Sequence[Optional[Neighborhood]], rng: np.random.Generator) -> List[int]:
    """M positions uniformly at random among those with substitutes."""
    eligible = [i for i, nb in enumerate(neighborhoods) if nb is not None and len(nb) > 0]
    if not eligible:
        return []
    picks = rng.permutation(len(eligible))[:M]
    return [eligible[i] for i in picks]


# --------------------------------------------------------------------------
# step (b) combinations and step (c) filtering


def combination_count(neighborhoods: Sequence[Neighborhood]) -> int:
    """Number of non-identity substitutions over the given positions."""
    total = 1
    for nb in neighborhoods:
        total *= len(nb) + 1
    return total - 1


def decode_combination(index: int, neighborhoods: Sequence[Neighborhood]) -> List[Optional[str]]:
    """Mixed-radix decoding: digit 0 keeps the original word at that position."""
    choice = []
    for nb in neighborhoods:
        radix = len(nb) + 1
        index, digit = divmod(index, radix)
        choice.append(None if digit == 0 else nb.candidates[digit - 1][0])
    return choice


def combination_indices(neighborhoods: Sequence[Neighborhood], R: int, rng: random.Random) -> List[int]:
    """All non-identity combinations when there are at most R, else R distinct ones at random."""
    total = combination_count(neighborhoods)
    if total <= R:
        return list(range(1, total + 1))
    return sorted(rng.sample(range(1, total + 1), R))


def apply_combination(tokens: Sequence[str], positions: Sequence[int],
                      choice: Sequence[Optional[str]]) -> Tuple[Tuple[str, ...], Tuple[int, ...]]:
    out = list(tokens)
    changed = []
    for pos, word in zip(positions, choice):
        if word is not None:
            out[pos] = word
            changed.append(pos)
    return tuple(out), tuple(sorted(changed))


def filter_candidates(original: Sequence[str], pool: Sequence[Tuple[Tuple[str, ...], Tuple[int, ...]]],
                      perplexities: Sequence[float], params: AttackParams,
                      encoder: SentenceEncoder) -> List[Candidate]:
    """Keep the W lowest-perplexity sentences, then the top-K by similarity above the floor."""
    by_ppl = sorted(range(len(pool)), key=lambda i: (perplexities[i], i))[: params.perplexity_keep]
    scored = []
    for i in by_ppl:
        tokens, positions = pool[i]
        sim = semantic_similarity(original, tokens, encoder)
        if sim >= params.similarity_floor:
            scored.append((sim, float(perplexities[i]), i, tokens, positions))
    scored.sort(key=lambda r: (-r[0], r[1], r[2]))
    return [Candidate(tokens, sim, ppl, positions) for sim, ppl, _, tokens, positions in scored[: params.budget]]


class _Perplexity(Protocol):
    def perplexity(self, sentences: Sequence[Sequence[str]]) -> np.ndarray: ...

    def alpha(self, tokens: Sequence[str]) -> np.ndarray: ...


def sample_rng_seed(params: AttackParams, sample_id: str, mode: str) -> int:
    return derive_seed(params.seed, "word-attack", mode, sample_id)


def generate_candidates(sample: TokenizedSample, model: _Perplexity, space: EmbeddingSpace,
                        params: AttackParams, encoder: Optional[SentenceEncoder] = None,
                        tagger: Optional[Tagger] = None, stopwords: Optional[frozenset] = None,
                        selection: str = "alpha") -> CandidateSet:
    """Run the full pipeline for one sample; ``selection='random'`` is the ablation."""
    if selection not in ("alpha", "random"):
        raise ValueError(f"unknown selection {selection!r}")
    encoder = encoder or MeanEmbeddingEncoder(space)
    stopwords = load_stopwords() if stopwords is None else stopwords
    tokens = tuple(sample.target_tokens)
    mode = "word" if selection == "alpha" else "random"
    result = CandidateSet(sample.id, tokens, [], to_dict(params), mode)

    neighborhoods = [build_neighborhood(space, tokens, i, params, tagger, stopwords) for i in range(len(tokens))]
    seed = sample_rng_seed(params, sample.id, mode)
    if selection == "alpha":
        positions = select_important_words(model.alpha(tokens), params.max_words, neighborhoods)
    else:
        positions = select_random_words(params.max_words, neighborhoods, np.random.default_rng(seed))
    positions = sorted(positions)
    result.selected_positions = tuple(positions)
    if not positions:
        return result

    chosen = [neighborhoods[p] for p in positions]
    indices = combination_indices(chosen, params.combinations, random.Random(seed))
    pool = [apply_combination(tokens, positions, decode_combination(ix, chosen)) for ix in indices]
    perplexities = model.perplexity([t for t, _ in pool])
    result.candidates = filter_candidates(tokens, pool, perplexities, params, encoder)
    return result


def generate_random_candidates(sample: TokenizedSample, model: _Perplexity, space: EmbeddingSpace,
                               params: AttackParams, encoder: Optional[SentenceEncoder] = None,
                               tagger: Optional[Tagger] = None,
                               stopwords: Optional[frozenset] = None) -> CandidateSet:
    return generate_candidates(sample, model, space, params, encoder, tagger, stopwords, selection="random")


def generate_all(samples: Sequence[TokenizedSample], model, space: EmbeddingSpace, params: AttackParams,
                 encoder: Optional[SentenceEncoder] = None, tagger: Optional[Tagger] = None,
                 stopwords: Optional[frozenset] = None, selection: str = "alpha",
                 progress: Optional[Callable[[int], None]] = None) -> List[CandidateSet]:
    encoder = encoder or MeanEmbeddingEncoder(space)
    stopwords = load_stopwords() if stopwords is None else stopwords
    out = []
    for i, s in enumerate(samples):
        out.append(generate_candidates(s, model, space, params, encoder, tagger, stopwords, selection))
        if progress:
            progress(i)
    return out
