import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from agnostic_attack.data_io import (COARSE_TAGS, CharVocabulary, DatasetError, EmbeddingError, EmbeddingSpace,
                                     LexiconTagger, TaskSchema, TokenizedSample, WordVocabulary, detokenize,
                                     load_dataset, load_embeddings, load_stopwords, pos_tag, tokenize,
                                     write_dataset, write_embeddings)

BINARY = TaskSchema(task_kind="classification", m=2)
PAIRED = TaskSchema(task_kind="classification", m=3, paired=True)


def _tsv(tmp_path, text, name="data.tsv"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


# -- tokenization -------------------------------------------------------------


def test_tokenize_example_sentence():
    assert tokenize("This is so bad.") == ["this", "is", "so", "bad", "."]


def test_tokenize_keeps_interior_punctuation():
    assert tokenize("Don't e-mail (me)!") == ["don't", "e-mail", "(", "me", ")", "!"]


@settings(max_examples=200, deadline=None)
@given(st.text(alphabet="abcXYZ .,!?'-()\t", max_size=40))
def test_tokenize_is_idempotent_on_its_normal_form(text):
    tokens = tokenize(text)
    assert all(tokens)
    assert tokenize(detokenize(tokens)) == tokens


# -- datasets -----------------------------------------------------------------


def test_load_tsv_example(tmp_path):
    path = _tsv(tmp_path, "sentence1\tlabel\nThis is so bad.\t0\n")
    (s,) = load_dataset(path, BINARY)
    assert s.tokens_a == ("this", "is", "so", "bad", ".")
    assert s.label == 0
    assert s.tokens_b is None


def test_empty_file_gives_empty_sequence(tmp_path):
    assert load_dataset(_tsv(tmp_path, ""), BINARY) == []


def test_paired_record_missing_second_sentence_names_line(tmp_path):
    path = _tsv(tmp_path, "sentence1\tsentence2\tlabel\na b\tc d\t1\ne f\t\t0\n")
    with pytest.raises(DatasetError) as err:
        load_dataset(path, PAIRED)
    assert err.value.line == 3


def test_label_outside_schema_is_an_error(tmp_path):
    path = _tsv(tmp_path, "sentence1\tlabel\ngood\t1\nbad\t2\n")
    with pytest.raises(DatasetError, match="line 3"):
        load_dataset(path, BINARY)


def test_regression_labels_and_label_names(tmp_path):
    path = _tsv(tmp_path, "sentence1\tlabel\nfine\t3.25\n")
    (s,) = load_dataset(path, TaskSchema(task_kind="regression"))
    assert s.label == 3.25 and s.task_kind == "regression"
    named = TaskSchema(m=2, label_names=("neg", "pos"))
    (s,) = load_dataset(_tsv(tmp_path, "sentence1\tlabel\nfine\tpos\n", "n.tsv"), named)
    assert s.label == 1


def test_jsonl_matches_tsv(tmp_path):
    rows = [{"sentence1": "A cat.", "sentence2": "Some dog!", "label": 2},
            {"sentence1": "Yes", "sentence2": "no", "label": 0}]
    jl = tmp_path / "d.jsonl"
    jl.write_text("\n".join(json.dumps(r) for r in rows) + "\n", encoding="utf-8")
    tsv = _tsv(tmp_path, "sentence1\tsentence2\tlabel\nA cat.\tSome dog!\t2\nYes\tno\t0\n", "d.tsv")
    a, b = load_dataset(jl, PAIRED), load_dataset(tsv, PAIRED)
    assert [(s.tokens_a, s.tokens_b, s.label) for s in a] == [(s.tokens_a, s.tokens_b, s.label) for s in b]


def test_ids_are_stable_and_write_round_trips(tmp_path):
    path = _tsv(tmp_path, "sentence1\tlabel\nGood film.\t1\nBad one!\t0\n")
    first, second = load_dataset(path, BINARY), load_dataset(path, BINARY)
    assert [s.id for s in first] == [s.id for s in second] == ["data-0", "data-1"]
    out = tmp_path / "copy.tsv"
    write_dataset(out, first)
    assert load_dataset(out, BINARY) == first


def test_sample_invariants():
    with pytest.raises(ValueError):
        TokenizedSample("x", (), None, 0)
    with pytest.raises(ValueError):
        TokenizedSample("x", ("a", ""), None, 0)
    with pytest.raises(ValueError):
        TokenizedSample("x", ("a",), None, 0.5, "classification")
    with pytest.raises(ValueError):
        TaskSchema(task_kind="classification", m=1)


# -- embeddings ---------------------------------------------------------------


def test_load_embeddings_example(tmp_path):
    path = _tsv(tmp_path, "3 2\na 1 0\nb 0 1\nc 1 1\n", "e.txt")
    space = load_embeddings(path)
    assert len(space) == 3 and space.d_w == 2
    np.testing.assert_array_equal(space.vector("c"), [1.0, 1.0])


def test_dimension_mismatch_names_token(tmp_path):
    with pytest.raises(EmbeddingError, match="'b'"):
        load_embeddings(_tsv(tmp_path, "2 2\na 1 0\nb 0.5\n", "e.txt"))


def test_zero_vector_rejected(tmp_path):
    with pytest.raises(EmbeddingError, match="zero-norm"):
        load_embeddings(_tsv(tmp_path, "1 2\na 0 0\n", "e.txt"))


def test_duplicates_keep_first(tmp_path):
    space = load_embeddings(_tsv(tmp_path, "3 2\na 1 0\nA 0 1\nb 0 1\n", "e.txt"))
    assert space.duplicates == 1
    np.testing.assert_array_equal(space.vector("a"), [1.0, 0.0])


def test_embedding_lookup_is_bit_exact(tmp_path):
    rng = np.random.default_rng(3)
    words = ["good", "great", "bad", "Fine"]
    vecs = rng.standard_normal((4, 7))
    path = tmp_path / "e.txt"
    write_embeddings(path, words, vecs)
    space = load_embeddings(path)
    for w, v in zip(words, vecs):
        assert space.vector(w).tobytes() == v.tobytes()
    assert "fine" in space and "FINE" in space


def test_nearest_is_sorted_and_excludes_self():
    space = EmbeddingSpace({"a": 0, "b": 1, "c": 2}, np.array([[1.0, 0.0], [0.6, 0.8], [0.0, 1.0]]))
    out = space.nearest("a", 5)
    assert [w for w, _ in out] == ["b", "c"]
    assert out[0][1] == pytest.approx(0.6)


# -- vocabularies, stop-words, tagging -------------------------------------------


def test_char_vocabulary_reserves_pad_and_unk():
    vocab = CharVocabulary.build()
    assert vocab.encode("aé")[1] == CharVocabulary.UNK
    assert CharVocabulary.PAD not in vocab.encode("hello")
    assert sorted(vocab.index.values()) == list(range(2, len(vocab)))


def test_word_vocabulary_has_unk_and_eos_and_caps():
    samples = [TokenizedSample("a", ("x", "x", "y", "z"), None, 0)]
    vocab = WordVocabulary.build(samples, cap=2)
    assert vocab.words == ["<unk>", "<eos>", "x", "y"]
    assert vocab.encode(["z"]) == [WordVocabulary.UNK]


def test_default_stopwords():
    words = load_stopwords()
    assert 100 <= len(words) <= 200
    assert {"the", "is", "a"} <= words


def test_pos_tag_examples():
    assert pos_tag(["this", "is", "so", "bad"]) == ["DET", "VERB", "ADV", "ADJ"]
    assert pos_tag(["zzxq"]) == ["OTHER"]


def test_pos_tag_length_on_random_sentences():
    rng = np.random.default_rng(0)
    pool = ["the", "film", "quickly", "runs", "happiness", "zzq", ",", "beautiful", "7", "we"]
    for _ in range(100):
        toks = list(rng.choice(pool, size=int(rng.integers(1, 15))))
        tags = pos_tag(toks)
        assert len(tags) == len(toks)
        assert set(tags) <= set(COARSE_TAGS)


def test_tagger_rejects_unknown_tags():
    with pytest.raises(ValueError):
        LexiconTagger({"x": "VERBISH"})
