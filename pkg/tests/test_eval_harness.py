import numpy as np
import pytest

from agnostic_attack.data_io import TokenizedSample
from agnostic_attack.eval_harness import (AttackReport, BlackboxTarget, TargetError, attack_target, budget_sweep,
                                          collect_outcomes, confidence_perplexity_export, constant_target,
                                          measure_attack_time, parse_table, remote_target, render_report_text,
                                          render_table, serve_target, staggered_attack, summarize,
                                          toy_target_factory, transfer_attack)
from agnostic_attack.word_attack import Candidate, CandidateSet


def _sample(i, label, words=("a", "film")):
    return TokenizedSample(f"o{i}", tuple(words), None, label)


def _cands(orig, *words):
    return CandidateSet(orig.id, orig.tokens_a, [Candidate((w,) + orig.tokens_a[1:], 0.9 - 0.01 * j, 5.0, (0,))
                                                 for j, w in enumerate(words)], {"budget": 20})


def keyword_target(name="kw", flip_word="bad"):
    """Label 1 unless ``flip_word`` appears; probabilities follow the label."""
    def fn(queries):
        out = []
        for a, _ in queries:
            lab = 0 if flip_word in a else 1
            out.append((lab, (1.0 - lab, float(lab))))
        return out
    return BlackboxTarget(fn, name)


class TrapTarget:
    """Exposes the query interface and fails on any other attribute access."""

    _allowed = {"query", "query_batch", "query_count", "name"}

    def __init__(self, inner):
        object.__setattr__(self, "_inner", inner)

    def __getattribute__(self, item):
        if item in TrapTarget._allowed:
            return getattr(object.__getattribute__(self, "_inner"), item)
        if item in ("__class__", "__dict__", "__setattr__"):
            return object.__getattribute__(self, item)
        raise AssertionError(f"black-box violation: accessed {item!r}")


# -- basic metrics ---------------------------------------------------------------------


def test_no_flips_gives_zero_drops():
    origs = [_sample(i, 1) for i in range(10)]
    origs[9] = _sample(9, 0)  # misclassified by the keyword target
    sets = [_cands(o, "one", "two") for o in origs]
    rep = attack_target(keyword_target(), origs, sets).report
    assert rep.pre_attack_accuracy == pytest.approx(90.0)
    assert rep.avg_accuracy_drop == 0.0 and rep.max_accuracy_drop == 0.0


def test_one_of_two_candidates_flips():
    o = _sample(0, 1)
    res = attack_target(keyword_target(), [o], [_cands(o, "bad", "good")])
    assert res.report.avg_accuracy_drop == pytest.approx(50.0)
    assert res.report.max_accuracy_drop == pytest.approx(100.0)
    assert [c.tokens[0] for c in res.success_sets["o0"]] == ["bad"]


def test_unknown_original_id():
    o = _sample(0, 1)
    bad = CandidateSet("nope", ("x",), [])
    with pytest.raises(KeyError):
        attack_target(keyword_target(), [o], [bad])


def test_report_fixture_renders_and_parses():
    rep = AttackReport("classification", 100, 90, 1800, 1800, 100, pre_attack_accuracy=92.14,
                       avg_accuracy_drop=5.97, max_accuracy_drop=23.55, avg_semantic_similarity=0.84)
    text = render_table({"BERT/SST-2": rep})
    assert "92.14" in text and "23.55" in text
    assert parse_table(text) == {"BERT/SST-2": {"pre": 92.14, "avg_drop": 5.97, "max_drop": 23.55,
                                                "similarity": 0.84}}
    assert AttackReport.from_json(rep.to_json()) == rep
    assert "queries 1800" in render_report_text(rep)
    with pytest.raises(ValueError):
        parse_table("nonsense\n")


def test_per_class_drops_aggregate_to_overall():
    rng = np.random.default_rng(0)
    words = ["bad", "good", "fine", "dull"]
    origs = [_sample(i, int(rng.integers(0, 2)), ("x", "y")) for i in range(60)]
    sets = [_cands(o, *rng.choice(words, size=int(rng.integers(0, 5)))) for o in origs]
    rep = attack_target(keyword_target(), origs, sets, label_names=("neg", "pos")).report
    assert set(rep.per_class) <= {"neg", "pos"}
    for key in ("avg_accuracy_drop", "max_accuracy_drop", "pre_attack_accuracy"):
        total = sum(c["count"] * c[key] for c in rep.per_class.values()) / len(origs)
        assert total == pytest.approx(getattr(rep, key), abs=1e-9)
    assert rep.max_accuracy_drop >= rep.avg_accuracy_drop >= 0


def test_query_accounting_is_exact():
    origs = [_sample(i, 1) for i in range(5)] + [_sample(5, 0)]
    sets = [_cands(o, *["bad", "w1", "w2"][: i % 3 + 1]) for i, o in enumerate(origs)]
    target = keyword_target()
    rep = attack_target(target, origs, sets, batch_size=4).report
    attacked = sum(len(cs) for cs, o in zip(sets, origs) if o.label == 1)
    assert rep.query_count == attacked
    assert target.query_count == attacked + len(origs)
    assert rep.query_count <= 20 * rep.n_attacked


def test_regression_reports_mse():
    origs = [TokenizedSample(f"r{i}", ("a", "b"), None, 3.0, "regression") for i in range(2)]

    def fn(queries):
        return [(1.0 if q[0][0] == "far" else 3.2, None) for q in queries]

    sets = [CandidateSet("r0", ("a", "b"), [Candidate(("far", "b"), 0.8, 1.0, (0,))]),
            CandidateSet("r1", ("a", "b"), [Candidate(("near", "b"), 0.8, 1.0, (0,))])]
    res = attack_target(BlackboxTarget(fn), origs, sets)
    assert res.report.pre_mse == pytest.approx(0.04)
    assert res.report.post_mse == pytest.approx((4.0 + 0.04) / 2)
    assert list(res.success_sets) == ["r0"]


# -- transfer, staggered, sweeps ---------------------------------------------------------


def test_transfer_to_identical_and_constant_targets():
    origs = [_sample(i, 1) for i in range(4)]
    sets = [_cands(o, "bad", "meh") for o in origs]
    src = attack_target(keyword_target(), origs, sets)
    same = transfer_attack(src.success_sets, origs, keyword_target()).report
    assert same.avg_accuracy_drop == pytest.approx(100.0)
    const = transfer_attack(src.success_sets, origs, constant_target(1)).report
    assert const.avg_accuracy_drop == 0.0
    empty = transfer_attack({}, origs, keyword_target()).report
    assert empty.flags and empty.n_originals == 0


def test_staggered_identical_chain_and_bookkeeping():
    origs = [_sample(i, 1) for i in range(6)]
    rng = np.random.default_rng(1)
    sets = [_cands(o, *rng.choice(["bad", "worse", "ok", "fine"], size=4, replace=False)) for o in origs]
    stages = staggered_attack([keyword_target("a"), keyword_target("b"), keyword_target("c")], origs, sets)
    assert [s.success_pct for s in stages[1:]] == [100.0, 100.0]
    assert stages[0].attacked == 24 and stages[0].successful == 6

    mixed = staggered_attack([keyword_target("a"), keyword_target("b", "worse"), keyword_target("c")], origs, sets)
    # brute force: 'bad' fools a; of those, only candidates that also contain 'worse' fool b, which none do
    assert mixed[1].attacked == mixed[0].successful
    assert mixed[1].successful == 0 and mixed[2].attacked == 0
    for prev, cur in zip(mixed, mixed[1:]):
        assert cur.attacked <= prev.attacked
    with pytest.raises(ValueError):
        staggered_attack([keyword_target()], origs, sets)


def test_budget_sweep_zero_and_monotone_max():
    rng = np.random.default_rng(2)
    origs = [_sample(i, 1) for i in range(30)]
    sets = [_cands(o, *rng.choice(["bad", "ok", "fine", "meh", "so"], size=5, replace=False)) for o in origs]
    rows = budget_sweep(keyword_target(), origs, sets, [0, 1, 2, 3, 5])
    assert rows[0].avg_accuracy_drop == 0.0 and rows[0].max_accuracy_drop == 0.0 and rows[0].n_candidates == 0
    maxes = [r.max_accuracy_drop for r in rows]
    assert maxes == sorted(maxes)
    assert rows[-1].max_accuracy_drop == pytest.approx(100.0)
    with pytest.raises(ValueError):
        budget_sweep(keyword_target(), origs, sets, [21])


def test_confidence_export():
    origs = [_sample(i, 1) for i in range(3)]
    sets = [CandidateSet(o.id, o.tokens_a, [Candidate(o.tokens_a, 1.0, 4.0, ()),
                                            Candidate(("bad", "film"), 0.8, 6.0, (0,))]) for o in origs]
    rows = confidence_perplexity_export(keyword_target(), origs, sets)
    assert len(rows) == 6
    assert [r.confidence_drop for r in rows[:2]] == [0.0, 1.0]
    assert all(-1.0 <= r.confidence_drop <= 1.0 for r in rows)
    with pytest.raises(TargetError):
        confidence_perplexity_export(constant_target(1), origs, sets)


# -- timing, toy targets, remote ------------------------------------------------------------


def test_timing_empty_input():
    target = keyword_target()
    res = measure_attack_time(lambda batch: target.query_batch(batch), [], 32)
    assert res.seconds == 0.0 and target.query_count == 0


def test_batching_is_not_slower(toy_world):
    target = toy_target_factory("mean_embedding", 0, toy_world.train, epochs=3)
    queries = [(s.tokens_a, None) for s in toy_world.test[:100]]
    before = target.query_count
    fast = measure_attack_time(lambda b: target.query_batch(b), queries, 32)
    slow = measure_attack_time(lambda b: target.query_batch(b), queries, 1)
    assert fast.seconds <= slow.seconds * 1.1
    assert target.query_count - before == 2 * 4 * len(queries)


def test_toy_factory_errors():
    one_class = [_sample(i, 1) for i in range(4)]
    with pytest.raises(ValueError):
        toy_target_factory("mean_embedding", 0, one_class)
    with pytest.raises(ValueError):
        toy_target_factory("transformer", 0, [_sample(0, 0), _sample(1, 1)])
    with pytest.raises(ValueError):
        toy_target_factory("mean_embedding", 0, [])


@pytest.mark.parametrize("kind", ["mean_embedding", "bag_of_bigrams", "recurrent"])
def test_toy_targets_differ_across_seeds_and_hide_weights(kind, toy_world):
    a = toy_target_factory(kind, 1, toy_world.train, epochs=2)
    b = toy_target_factory(kind, 2, toy_world.train, epochs=2)
    probes = [(s.tokens_a, None) for s in toy_world.test[:100]]
    pa, pb = a.query_batch(probes), b.query_batch(probes)
    assert any(x.probs != y.probs for x, y in zip(pa, pb))
    assert not hasattr(a, "__dict__")
    assert not any(n.startswith(("param", "weight", "state")) for n in dir(a))


def test_toy_targets_learn_the_task(toy_world):
    target = toy_target_factory("mean_embedding", 3, toy_world.train)
    preds = target.query_batch([(s.tokens_a, None) for s in toy_world.test])
    acc = np.mean([p.label == s.label for p, s in zip(preds, toy_world.test)])
    assert acc >= 0.9


def test_remote_round_trip():
    inner = keyword_target()
    server = serve_target(inner)
    try:
        url = f"http://127.0.0.1:{server.server_address[1]}/"
        remote = remote_target(url)
        o = _sample(0, 1)
        res = attack_target(remote, [o], [_cands(o, "bad", "good")])
        assert res.report.avg_accuracy_drop == pytest.approx(50.0)
        assert remote.query_count == 3 and inner.query_count == 3
    finally:
        server.shutdown()


def test_target_answer_count_is_checked():
    t = BlackboxTarget(lambda qs: [(0, None)])
    with pytest.raises(TargetError):
        t.query_batch([(("a",), None), (("b",), None)])


# -- black-box discipline ------------------------------------------------------------------


def test_trap_target_passes_the_whole_suite():
    origs = [_sample(i, 1) for i in range(8)]
    rng = np.random.default_rng(3)
    sets = [_cands(o, *rng.choice(["bad", "ok", "fine", "so"], size=3, replace=False)) for o in origs]
    trap = TrapTarget(keyword_target())
    res = attack_target(trap, origs, sets)
    transfer_attack(res.success_sets, origs, TrapTarget(keyword_target()))
    staggered_attack([trap, TrapTarget(keyword_target())], origs, sets)
    budget_sweep(trap, origs, sets, [0, 1, 3])
    confidence_perplexity_export(trap, origs, sets)
    summarize(collect_outcomes(trap, origs, sets), 2)
    with pytest.raises(AssertionError):
        trap.parameters
