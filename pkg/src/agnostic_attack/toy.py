"""Reference toy sentiment world used by the desk-scale experiments.

Polarity is decided by 20 lexicon adjectives (10 positive, 10 negative).
Every content word belongs to a synonym group; the group's head word is
common in the corpus while the other members are rare, which is the
regime word-substitution attacks exploit. A synthetic counter-fitted
style embedding space places each group tightly around its own random
direction.
"""

from __future__ import annotations

from typing import Dict, List, Sequence, Tuple

import numpy as np

from .data_io import EmbeddingSpace, TaskSchema, TokenizedSample

POSITIVE = {
    "good": ("decent", "fine", "solid"),
    "great": ("grand", "terrific"),
    "excellent": ("exceptional", "outstanding"),
    "wonderful": ("marvelous", "splendid"),
    "amazing": ("astonishing", "stunning"),
    "superb": ("first-rate", "magnificent"),
    "delightful": ("charming", "pleasant"),
    "brilliant": ("clever", "inspired"),
    "lovely": ("sweet", "adorable"),
    "fantastic": ("fabulous", "tremendous"),
}
NEGATIVE = {
    "bad": ("crummy", "lame"),
    "terrible": ("atrocious", "abysmal"),
    "awful": ("appalling", "frightful"),
    "horrible": ("hideous", "ghastly"),
    "dreadful": ("dire", "woeful"),
    "poor": ("shoddy", "inferior"),
    "boring": ("tedious", "tiresome"),
    "dull": ("bland", "drab"),
    "lousy": ("rotten", "shabby"),
    "weak": ("feeble", "flimsy"),
}

NOUNS = {
    "movie": ("film", "picture", "flick"),
    "plot": ("storyline", "narrative"),
    "acting": ("performances", "portrayals"),
    "script": ("screenplay", "writing"),
    "soundtrack": ("score", "music"),
    "ending": ("finale", "conclusion"),
    "director": ("filmmaker", "helmer"),
    "cast": ("ensemble", "actors"),
    "dialogue": ("lines", "conversation"),
    "pacing": ("tempo", "rhythm"),
    "story": ("tale", "yarn"),
    "cinematography": ("camerawork", "photography"),
    "characters": ("figures", "personas"),
    "visuals": ("imagery", "effects"),
    "premise": ("concept", "setup"),
    "humor": ("comedy", "wit"),
    "editing": ("cutting", "montage"),
    "sequel": ("follow-up", "continuation"),
}
VERBS = {
    "was": ("seemed", "felt"),
    "is": ("appears", "looks"),
}
ADVERBS = {
    "really": ("truly", "genuinely"),
    "very": ("extremely", "highly"),
    "quite": ("rather", "fairly"),
    "simply": ("just", "merely"),
}
INTROS = {
    "overall": ("altogether", "generally"),
    "honestly": ("frankly", "candidly"),
}
WHEN_NOUNS = {
    "evening": ("night", "afternoon"),
    "weekend": ("holiday", "break"),
    "sunday": ("saturday", "friday"),
}
COMPANY_NOUNS = {
    "friends": ("pals", "buddies"),
    "family": ("relatives", "kin"),
    "kids": ("children", "youngsters"),
}
FILLER_NOUNS = WHEN_NOUNS | COMPANY_NOUNS
FILLER_VERBS = {
    "watched": ("viewed", "saw"),
    "caught": ("attended", "visited"),
}

# Words that never get synonyms: determiners, connectives, punctuation.
FUNCTION_WORDS = ("the", "a", "this", "that", "its", "and", "but", "with", "my", "on", "i", "we", "it", ",", ".", "!")

POLARITY: Dict[str, int] = {w: 1 for w in POSITIVE} | {w: -1 for w in NEGATIVE}
LEXICON_WORDS: Tuple[str, ...] = tuple(POSITIVE) + tuple(NEGATIVE)

GROUPS: Dict[str, Dict[str, Tuple[str, ...]]] = {
    "ADJ": POSITIVE | NEGATIVE,
    "NOUN": NOUNS | FILLER_NOUNS,
    "VERB": VERBS | FILLER_VERBS,
    "ADV": ADVERBS | INTROS,
}

TOY_SCHEMA = TaskSchema(task_kind="classification", m=2, paired=False, label_names=("negative", "positive"))


def toy_lexicon() -> Dict[str, str]:
    """POS entries for every toy word (shipped in the tagger's lexicon file)."""
    lexicon = {}
    for tag, groups in GROUPS.items():
        for head, syns in groups.items():
            for w in (head, *syns):
                lexicon[w] = tag
    return lexicon


def _word(rng: np.random.Generator, groups: Dict[str, Tuple[str, ...]], heads: Sequence[str],
          rare_rate: float) -> str:
    head = heads[rng.integers(len(heads))]
    syns = groups[head]
    if syns and rng.random() < rare_rate:
        return syns[rng.integers(len(syns))]
    return head


def _polarity_word(rng, sign: int, rare_rate: float) -> str:
    groups = POSITIVE if sign > 0 else NEGATIVE
    return _word(rng, groups, list(groups), rare_rate)


def _clause(rng, sign: int, rare_rate: float) -> List[str]:
    det = ["the", "this", "that", "its"][rng.integers(4)]
    noun = _word(rng, NOUNS, list(NOUNS), rare_rate)
    verb = _word(rng, VERBS, list(VERBS), rare_rate)
    words = [det, noun, verb]
    if rng.random() < 0.7:
        words.append(_word(rng, ADVERBS, list(ADVERBS), rare_rate))
    words.append(_polarity_word(rng, sign, rare_rate))
    return words


def _context(rng, rare_rate: float) -> List[str]:
    pron = ["i", "we"][rng.integers(2)]
    verb = _word(rng, FILLER_VERBS, list(FILLER_VERBS), rare_rate)
    det = ["it", "this"][rng.integers(2)]
    if rng.random() < 0.5:
        return [pron, verb, det, "on", "the", _word(rng, WHEN_NOUNS, list(WHEN_NOUNS), rare_rate)]
    return [pron, verb, det, "with", "my", _word(rng, COMPANY_NOUNS, list(COMPANY_NOUNS), rare_rate)]


def _mixed(rng, sign: int, rare_rate: float) -> List[str]:
    # two clauses agree with the label, one opposes it; order is random
    signs = [sign, sign, -sign]
    rng.shuffle(signs)
    joiner = "and" if signs[1] == signs[2] else "but"
    return (_clause(rng, signs[0], rare_rate) + [","] + _clause(rng, signs[1], rare_rate)
            + [",", joiner] + _clause(rng, signs[2], rare_rate))


def make_toy_corpus(n: int = 2000, seed: int = 0, rare_rate: float = 0.015,
                    prefix: str = "toy", mixed_rate: float = 0.0) -> List[TokenizedSample]:
    """Generate ``n`` labelled sentences; label 1 iff the polarity sum is positive.

    A ``mixed_rate`` share are three-clause sentences whose label is the
    majority polarity, so no single polarity word decides them.
    """
    rng = np.random.default_rng(seed)
    samples = []
    for i in range(n):
        label = int(rng.integers(2))
        sign = 1 if label == 1 else -1
        tokens: List[str] = []
        if rng.random() < 0.35:
            tokens += [_word(rng, INTROS, list(INTROS), rare_rate), ","]
        roll = rng.random()
        if roll < mixed_rate:
            tokens += _mixed(rng, sign, rare_rate)
        else:
            tokens += _clause(rng, sign, rare_rate)
            roll = (roll - mixed_rate) / (1.0 - mixed_rate)
            if roll < 0.3:
                tokens += ["and"] + _clause(rng, sign, rare_rate)
            elif roll < 0.6:
                tokens += ["."] + _context(rng, rare_rate)
        tokens.append("." if rng.random() < 0.8 else "!")
        samples.append(TokenizedSample(f"{prefix}-{i}", tuple(tokens), None, label, "classification"))
    return samples


def polarity_of(tokens: Sequence[str]) -> int:
    """Gold polarity under the lexicon, counting rare synonyms as their head word."""
    score = 0
    for tok in tokens:
        if tok in POLARITY:
            score += POLARITY[tok]
            continue
        for groups, sign in ((POSITIVE, 1), (NEGATIVE, -1)):
            if any(tok in syns for syns in groups.values()):
                score += sign
    return score


def make_toy_embeddings(dim: int = 48, seed: int = 0, spread: float = 0.18,
                        n_distractors: int = 60) -> EmbeddingSpace:
    """Synthetic synonym-curated vectors for every toy word.

    Group members sit near a shared random direction (cosine roughly 0.9
    to each other); unrelated groups are nearly orthogonal. Function words
    and a few distractor words get their own random directions.
    """
    rng = np.random.default_rng(seed)
    words: List[str] = []
    rows: List[np.ndarray] = []

    def add(word, vec):
        words.append(word)
        rows.append(vec / np.linalg.norm(vec))

    for groups in GROUPS.values():
        for head, syns in groups.items():
            center = rng.standard_normal(dim)
            center /= np.linalg.norm(center)
            for w in (head, *syns):
                add(w, center + spread * rng.standard_normal(dim) / np.sqrt(dim) * 2)
    for w in FUNCTION_WORDS:
        if w.isalpha():
            add(w, rng.standard_normal(dim))
    for i in range(n_distractors):
        add(f"distractor{i}", rng.standard_normal(dim))
    vocab = {w: i for i, w in enumerate(words)}
    return EmbeddingSpace(vocab, np.stack(rows))
