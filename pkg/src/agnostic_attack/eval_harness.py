"""Black-box evaluation: query-counting targets, attack metrics and reports.

Everything here talks to a target only through ``query_batch`` and the
``query_count`` tally. Drops and accuracies are reported in percent.
"""

from __future__ import annotations

import csv
import io
import json
import os
import statistics
import threading
import time
import urllib.request
from dataclasses import asdict, dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Mapping, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import torch
from torch import nn

from .config import derive_seed
from .data_io import TokenizedSample
from .word_attack import Candidate, CandidateSet

Query = Tuple[Tuple[str, ...], Optional[Tuple[str, ...]]]


class Prediction(NamedTuple):
    label: float  # class index, or the score for regression
    probs: Optional[Tuple[float, ...]] = None


class TargetError(RuntimeError):
    pass


class BlackboxTarget:
    """Wraps an opaque batch query function and counts every query.

    ``query_fn`` maps a list of ``(tokens, tokens_b)`` pairs to a list of
    ``(label, probs)`` pairs. Nothing else about the model is reachable.
    """

    __slots__ = ("_query_fn", "_count", "_lock", "name")

    def __init__(self, query_fn: Callable[[List[Query]], Sequence], name: str = "target"):
        self._query_fn = query_fn
        self._count = 0
        self._lock = threading.Lock()
        self.name = name

    @property
    def query_count(self) -> int:
        return self._count

    def query_batch(self, queries: Sequence[Query]) -> List[Prediction]:
        queries = [(tuple(a), None if b is None else tuple(b)) for a, b in queries]
        if not queries:
            return []
        raw = self._query_fn(queries)
        if len(raw) != len(queries):
            raise TargetError(f"target answered {len(raw)} of {len(queries)} queries")
        with self._lock:
            self._count += len(queries)
        out = []
        for label, probs in raw:
            out.append(Prediction(label, None if probs is None else tuple(float(p) for p in probs)))
        return out

    def query(self, tokens: Sequence[str], tokens_b: Optional[Sequence[str]] = None) -> Prediction:
        return self.query_batch([(tokens, tokens_b)])[0]


# --------------------------------------------------------------------------
# per-sample outcomes, computed once and summarised many times


@dataclass
class SampleOutcome:
    sample: TokenizedSample
    original: Prediction
    candidates: List[Candidate]
    predictions: List[Prediction]

    @property
    def correct(self) -> bool:
        return int(self.original.label) == int(self.sample.label)


def _query_for(sample: TokenizedSample, tokens: Sequence[str]) -> Query:
    # candidates replace the perturbable sentence, which is the second one when paired
    if sample.paired:
        return (tuple(sample.tokens_a), tuple(tokens))
    return (tuple(tokens), None)


def _batched(target: BlackboxTarget, queries: List[Query], batch_size: int) -> List[Prediction]:
    out: List[Prediction] = []
    for start in range(0, len(queries), batch_size):
        out.extend(target.query_batch(queries[start:start + batch_size]))
    return out


def _index_sets(originals: Sequence[TokenizedSample], candidate_sets: Iterable[CandidateSet]) -> Dict[str, CandidateSet]:
    known = {s.id for s in originals}
    by_id: Dict[str, CandidateSet] = {}
    for cs in candidate_sets:
        if cs.original_id not in known:
            raise KeyError(f"candidate set references unknown original id {cs.original_id!r}")
        by_id[cs.original_id] = cs
    return by_id


def collect_outcomes(target: BlackboxTarget, originals: Sequence[TokenizedSample],
                     candidate_sets: Iterable[CandidateSet], budget: Optional[int] = None,
                     batch_size: int = 256, regression: Optional[bool] = None) -> List[SampleOutcome]:
    """Query originals, then candidates of every sample that is worth attacking.

    Classification skips candidates of misclassified originals; regression
    attacks every original.
    """
    originals = list(originals)
    if regression is None:
        regression = bool(originals) and originals[0].task_kind == "regression"
    by_id = _index_sets(originals, candidate_sets)
    orig_preds = _batched(target, [_query_for(s, s.target_tokens) for s in originals], batch_size)

    outcomes, queries = [], []
    for s, pred in zip(originals, orig_preds):
        cs = by_id.get(s.id)
        cands = list(cs.candidates[:budget] if budget is not None else cs.candidates) if cs else []
        oc = SampleOutcome(s, pred, cands if (regression or int(pred.label) == int(s.label)) else [], [])
        outcomes.append(oc)
        queries.extend(_query_for(s, c.tokens) for c in oc.candidates)
    preds = _batched(target, queries, batch_size)
    pos = 0
    for oc in outcomes:
        oc.predictions = preds[pos:pos + len(oc.candidates)]
        pos += len(oc.candidates)
    return outcomes


# --------------------------------------------------------------------------
# reports


@dataclass
class AttackReport:
    task_kind: str
    n_originals: int
    n_attacked: int
    n_candidates: int
    query_count: int
    original_queries: int
    pre_attack_accuracy: Optional[float] = None
    avg_accuracy_drop: Optional[float] = None
    max_accuracy_drop: Optional[float] = None
    avg_semantic_similarity: Optional[float] = None
    per_class: Dict[str, dict] = field(default_factory=dict)
    pre_mse: Optional[float] = None
    post_mse: Optional[float] = None
    n_successful: int = 0
    flags: List[str] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, data: Mapping) -> "AttackReport":
        return cls(**dict(data))


@dataclass
class AttackResult:
    report: AttackReport
    success_sets: Dict[str, List[Candidate]]
    outcomes: List[SampleOutcome]


def _candidate_succeeds(oc: SampleOutcome, pred: Prediction, regression: bool, margin: float) -> bool:
    if regression:
        gold = float(oc.sample.label)
        return abs(float(pred.label) - gold) > abs(float(oc.original.label) - gold) + margin
    return int(pred.label) != int(oc.sample.label)


def summarize(outcomes: Sequence[SampleOutcome], budget: Optional[int] = None, regression: bool = False,
              regression_margin: float = 0.5, label_names: Optional[Sequence[str]] = None) -> AttackResult:
    """Aggregate outcomes, optionally looking only at the first ``budget`` candidates."""
    n = len(outcomes)
    success: Dict[str, List[Candidate]] = {}
    n_cands = 0
    sims: List[float] = []
    for oc in outcomes:
        cands = oc.candidates[:budget] if budget is not None else oc.candidates
        n_cands += len(cands)
        hits = [c for c, p in zip(cands, oc.predictions) if _candidate_succeeds(oc, p, regression, regression_margin)]
        if hits:
            success[oc.sample.id] = hits
            sims.extend(c.similarity for c in hits)
    n_success = sum(len(v) for v in success.values())
    report = AttackReport(
        task_kind="regression" if regression else "classification",
        n_originals=n, n_attacked=sum(1 for oc in outcomes if (oc.candidates[:budget] if budget is not None else oc.candidates)),
        n_candidates=n_cands, query_count=n_cands, original_queries=n, n_successful=n_success,
        avg_semantic_similarity=float(np.mean(sims)) if sims else None,
    )
    if n == 0:
        report.flags.append("no originals")
        return AttackResult(report, success, list(outcomes))

    if regression:
        pre, post = [], []
        for oc in outcomes:
            gold = float(oc.sample.label)
            e0 = (float(oc.original.label) - gold) ** 2
            cands = oc.candidates[:budget] if budget is not None else oc.candidates
            errs = [(float(p.label) - gold) ** 2 for p in oc.predictions[:len(cands)]]
            pre.append(e0)
            post.append(max(errs) if errs else e0)
        report.pre_mse = float(np.mean(pre))
        report.post_mse = float(np.mean(post))
        return AttackResult(report, success, list(outcomes))

    frac, broken, correct, gold = [], [], [], []
    for oc in outcomes:
        cands = oc.candidates[:budget] if budget is not None else oc.candidates
        flips = [_candidate_succeeds(oc, p, False, 0.0) for p in oc.predictions[:len(cands)]]
        frac.append(sum(flips) / len(flips) if flips else 0.0)
        broken.append(1.0 if any(flips) else 0.0)
        correct.append(1.0 if oc.correct else 0.0)
        gold.append(int(oc.sample.label))
    frac_a, broken_a, correct_a, gold_a = map(np.asarray, (frac, broken, correct, gold))
    report.pre_attack_accuracy = 100.0 * float(correct_a.mean())
    report.avg_accuracy_drop = 100.0 * float(frac_a.mean())
    report.max_accuracy_drop = 100.0 * float(broken_a.mean())
    for c in sorted(set(gold)):
        sel = gold_a == c
        name = label_names[c] if label_names and c < len(label_names) else str(c)
        report.per_class[name] = {
            "count": int(sel.sum()),
            "pre_attack_accuracy": 100.0 * float(correct_a[sel].mean()),
            "avg_accuracy_drop": 100.0 * float(frac_a[sel].mean()),
            "max_accuracy_drop": 100.0 * float(broken_a[sel].mean()),
        }
    return AttackResult(report, success, list(outcomes))


def attack_target(target: BlackboxTarget, originals: Sequence[TokenizedSample],
                  candidate_sets: Iterable[CandidateSet], batch_size: int = 256,
                  regression_margin: float = 0.5, label_names: Optional[Sequence[str]] = None) -> AttackResult:
    originals = list(originals)
    regression = bool(originals) and originals[0].task_kind == "regression"
    outcomes = collect_outcomes(target, originals, candidate_sets, batch_size=batch_size, regression=regression)
    return summarize(outcomes, None, regression, regression_margin, label_names)


def transfer_attack(success_sets: Mapping[str, Sequence[Candidate]], originals: Sequence[TokenizedSample],
                    target: BlackboxTarget, batch_size: int = 256, regression_margin: float = 0.5,
                    label_names: Optional[Sequence[str]] = None) -> AttackResult:
    """Replay only the source-successful candidates against a second target."""
    by_id = {s.id: s for s in originals}
    unknown = [k for k in success_sets if k not in by_id]
    if unknown:
        raise KeyError(f"success set references unknown original id {unknown[0]!r}")
    kept = [by_id[k] for k in by_id if success_sets.get(k)]
    sets = [CandidateSet(s.id, tuple(s.target_tokens), list(success_sets[s.id]), mode="transfer") for s in kept]
    result = attack_target(target, kept, sets, batch_size, regression_margin, label_names)
    if not kept:
        result.report.flags.append("empty success sets: nothing transferred")
    return result


@dataclass
class StaggeredStage:
    target: str
    attacked: int
    successful: int
    success_pct: float


def staggered_attack(targets: Sequence[BlackboxTarget], originals: Sequence[TokenizedSample],
                     candidate_sets: Iterable[CandidateSet], batch_size: int = 256,
                     regression_margin: float = 0.5) -> List[StaggeredStage]:
    """Attack targets in order, carrying forward only the surviving successes."""
    if len(targets) < 2:
        raise ValueError("a staggered attack needs at least two targets")
    originals = list(originals)
    current = {cs.original_id: list(cs.candidates) for cs in candidate_sets}
    stages = []
    for target in targets:
        sets = [CandidateSet(k, (), v) for k, v in current.items() if v]
        keep = {cs.original_id for cs in sets}
        subset = [s for s in originals if s.id in keep]
        result = attack_target(target, subset, sets, batch_size, regression_margin)
        attacked = result.report.n_candidates
        successful = sum(len(v) for v in result.success_sets.values())
        pct = 100.0 * successful / attacked if attacked else 0.0
        stages.append(StaggeredStage(target.name, attacked, successful, pct))
        current = {k: list(v) for k, v in result.success_sets.items()}
    return stages


@dataclass
class SweepRow:
    budget: int
    avg_accuracy_drop: Optional[float]
    max_accuracy_drop: Optional[float]
    post_mse: Optional[float]
    n_candidates: int


def budget_sweep(target: BlackboxTarget, originals: Sequence[TokenizedSample],
                 candidate_sets: Sequence[CandidateSet], budgets: Sequence[int],
                 batch_size: int = 256, regression_margin: float = 0.5) -> List[SweepRow]:
    """Query once at the largest budget, then summarise every prefix."""
    budgets = sorted(set(int(b) for b in budgets))
    if not budgets:
        return []
    if budgets[0] < 0:
        raise ValueError("budgets must be non-negative")
    for cs in candidate_sets:
        stored = cs.params.get("budget")
        if stored is not None and budgets[-1] > int(stored):
            raise ValueError(f"budget {budgets[-1]} exceeds the stored K={stored}")
    originals = list(originals)
    regression = bool(originals) and originals[0].task_kind == "regression"
    outcomes = collect_outcomes(target, originals, candidate_sets, budgets[-1], batch_size, regression)
    rows = []
    for b in budgets:
        rep = summarize(outcomes, b, regression, regression_margin).report
        rows.append(SweepRow(b, rep.avg_accuracy_drop, rep.max_accuracy_drop, rep.post_mse, rep.n_candidates))
    return rows


@dataclass
class ConfidenceRow:
    id: str
    candidate: int
    perplexity: Optional[float]
    confidence_drop: float


def confidence_perplexity_export(target: BlackboxTarget, originals: Sequence[TokenizedSample],
                                 candidate_sets: Iterable[CandidateSet], batch_size: int = 256) -> List[ConfidenceRow]:
    """One row per candidate: LM perplexity and p(y | original) - p(y | candidate)."""
    originals = list(originals)
    by_id = _index_sets(originals, candidate_sets)
    queries, owners = [], []
    for s in originals:
        queries.append(_query_for(s, s.target_tokens))
        owners.append((s, None))
        for j, c in enumerate(by_id[s.id].candidates if s.id in by_id else []):
            queries.append(_query_for(s, c.tokens))
            owners.append((s, (j, c)))
    preds = _batched(target, queries, batch_size)
    rows, base = [], None
    for (s, item), pred in zip(owners, preds):
        if pred.probs is None:
            raise TargetError("target does not expose class probabilities")
        p_y = pred.probs[int(s.label)]
        if item is None:
            base = p_y
            continue
        j, c = item
        rows.append(ConfidenceRow(s.id, j, c.perplexity, float(base - p_y)))
    return rows


@dataclass
class TimingResult:
    seconds: float
    runs: Tuple[float, ...]
    batch_size: int
    n_inputs: int


def measure_attack_time(fn: Callable[[Sequence], object], inputs: Sequence, batch_size: int,
                        repeats: int = 3) -> TimingResult:
    """Median wall-clock time of ``repeats`` runs of ``fn`` over mini-batches, after one warm-up."""
    inputs = list(inputs)
    if not inputs:
        return TimingResult(0.0, (), batch_size, 0)

    def once():
        for start in range(0, len(inputs), batch_size):
            fn(inputs[start:start + batch_size])

    once()
    runs = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        once()
        runs.append(time.perf_counter() - t0)
    return TimingResult(statistics.median(runs), tuple(runs), batch_size, len(inputs))


# --------------------------------------------------------------------------
# toy targets


class _Vocab:
    def __init__(self, samples: Sequence[TokenizedSample]):
        words = sorted({t for s in samples for t in s.tokens_a + (s.tokens_b or ())})
        self.index = {w: i + 1 for i, w in enumerate(words)}  # 0 = unknown

    def __len__(self) -> int:
        return len(self.index) + 1

    def ids(self, tokens: Sequence[str]) -> List[int]:
        return [self.index.get(t, 0) for t in tokens]


class _MeanEmbedding(nn.Module):
    def __init__(self, n_words: int, dim: int):
        super().__init__()
        self.emb = nn.EmbeddingBag(n_words, dim, mode="mean")
        # fastText-style init: words the data barely touches stay near zero
        nn.init.uniform_(self.emb.weight, -1.0 / dim, 1.0 / dim)
        self.dim = dim

    def forward(self, ids: List[List[int]]) -> torch.Tensor:
        flat = torch.as_tensor([i for row in ids for i in row], dtype=torch.long)
        offsets = torch.as_tensor(np.cumsum([0] + [len(r) for r in ids[:-1]]), dtype=torch.long)
        return self.emb(flat, offsets)


class _BagOfBigrams(nn.Module):
    def __init__(self, n_buckets: int, vocab_size: int):
        super().__init__()
        self.n_buckets = n_buckets
        self.vocab_size = vocab_size
        self.dim = n_buckets

    def forward(self, ids: List[List[int]]) -> torch.Tensor:
        feats = torch.zeros(len(ids), self.n_buckets)
        for row, seq in enumerate(ids):
            grams = [("u", a) for a in seq] + [("b", a, b) for a, b in zip(seq, seq[1:])]
            for g in grams:
                key = g[1] if g[0] == "u" else self.vocab_size + (g[1] * 7919 + g[2] * 104729)
                feats[row, key % self.n_buckets] += 1.0
        return feats / feats.sum(dim=1, keepdim=True).clamp(min=1.0)


class _Recurrent(nn.Module):
    def __init__(self, n_words: int, dim: int, hidden: int):
        super().__init__()
        self.emb = nn.Embedding(n_words, dim)
        self.gru = nn.GRU(dim, hidden, batch_first=True)
        self.dim = hidden

    def forward(self, ids: List[List[int]]) -> torch.Tensor:
        lengths = torch.as_tensor([len(r) for r in ids])
        padded = torch.zeros(len(ids), int(lengths.max()), dtype=torch.long)
        for row, seq in enumerate(ids):
            padded[row, : len(seq)] = torch.as_tensor(seq, dtype=torch.long)
        packed = nn.utils.rnn.pack_padded_sequence(self.emb(padded), lengths, batch_first=True, enforce_sorted=False)
        _, h = self.gru(packed)
        return h[-1]


class _ToyClassifier(nn.Module):
    def __init__(self, features: nn.Module, paired: bool, n_out: int):
        super().__init__()
        self.features = features
        self.paired = paired
        self.out = nn.Linear(features.dim * (4 if paired else 1), n_out)

    def forward(self, ids_a, ids_b=None) -> torch.Tensor:
        u = self.features(ids_a)
        if self.paired:
            v = self.features(ids_b)
            u = torch.cat([u, v, (u - v).abs(), u * v], dim=-1)
        return self.out(u)


TOY_KINDS = ("mean_embedding", "bag_of_bigrams", "recurrent")


def toy_target_factory(kind: str, seed: int, samples: Sequence[TokenizedSample], epochs: int = 30,
                       dim: int = 16, lr: float = 0.05, batch_size: int = 64, name: Optional[str] = None) -> BlackboxTarget:
    """Train a small classifier on ``samples`` and hide it behind a BlackboxTarget."""
    if kind not in TOY_KINDS:
        raise ValueError(f"unknown toy target kind {kind!r}; expected one of {TOY_KINDS}")
    samples = list(samples)
    if not samples:
        raise ValueError("toy target needs training data")
    regression = samples[0].task_kind == "regression"
    paired = samples[0].paired
    if regression:
        labels = torch.as_tensor([float(s.label) for s in samples])
        if float(labels.std()) == 0.0:
            raise ValueError("untrainable data: every regression target is identical")
        n_out = 1
    else:
        labels = torch.as_tensor([int(s.label) for s in samples])
        if len(set(labels.tolist())) < 2:
            raise ValueError("untrainable data: only one class present")
        n_out = int(labels.max()) + 1

    torch.manual_seed(derive_seed(seed, "toy-target", kind))
    rng = np.random.default_rng(derive_seed(seed, "toy-target-order", kind))
    vocab = _Vocab(samples)
    if kind == "mean_embedding":
        feats: nn.Module = _MeanEmbedding(len(vocab), dim)
    elif kind == "bag_of_bigrams":
        feats = _BagOfBigrams(1024, len(vocab))
    else:
        feats = _Recurrent(len(vocab), dim, dim)
    net = _ToyClassifier(feats, paired, n_out)
    opt = torch.optim.Adam(net.parameters(), lr=lr if kind != "recurrent" else lr / 5)
    ids_a = [vocab.ids(s.tokens_a) for s in samples]
    ids_b = [vocab.ids(s.tokens_b) for s in samples] if paired else None
    net.train()
    for _ in range(epochs):
        order = rng.permutation(len(samples))
        for start in range(0, len(order), batch_size):
            idx = order[start:start + batch_size]
            out = net([ids_a[i] for i in idx], [ids_b[i] for i in idx] if paired else None)
            if regression:
                loss = ((out.squeeze(-1) - labels[idx]) ** 2).mean()
            else:
                loss = nn.functional.cross_entropy(out, labels[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
    net.eval()

    def query_fn(queries: List[Query]):
        with torch.no_grad():
            a = [vocab.ids(q[0]) or [0] for q in queries]
            b = [vocab.ids(q[1] or ()) or [0] for q in queries] if paired else None
            out = net(a, b)
        if regression:
            return [(float(v), None) for v in out.squeeze(-1).tolist()]
        probs = torch.softmax(out, dim=-1)
        return [(int(p.argmax()), tuple(p.tolist())) for p in probs]

    return BlackboxTarget(query_fn, name or f"{kind}-{seed}")


def constant_target(label, n_classes: Optional[int] = None, name: str = "constant") -> BlackboxTarget:
    """Always answers ``label``; with ``n_classes`` it also reports a one-hot probability vector."""
    def query_fn(queries):
        probs = None
        if n_classes is not None:
            probs = tuple(1.0 if c == label else 0.0 for c in range(n_classes))
        return [(label, probs)] * len(queries)
    return BlackboxTarget(query_fn, name)


# --------------------------------------------------------------------------
# remote targets: one JSON endpoint {tokens, tokens_b?} -> {label, probs?}


def remote_target(url: str, timeout: float = 30.0, name: Optional[str] = None) -> BlackboxTarget:
    def query_fn(queries: List[Query]):
        out = []
        for a, b in queries:
            body = {"tokens": list(a)}
            if b is not None:
                body["tokens_b"] = list(b)
            req = urllib.request.Request(url, data=json.dumps(body).encode("utf-8"),
                                         headers={"Content-Type": "application/json"}, method="POST")
            with urllib.request.urlopen(req, timeout=timeout) as resp:
                reply = json.loads(resp.read().decode("utf-8"))
            if "label" not in reply:
                raise TargetError(f"remote reply lacks 'label': {reply!r}")
            out.append((reply["label"], reply.get("probs")))
        return out
    return BlackboxTarget(query_fn, name or url)


def serve_target(target: BlackboxTarget, host: str = "127.0.0.1", port: int = 0) -> ThreadingHTTPServer:
    """Expose a target over HTTP in a background thread; ``server.server_address`` gives the port."""

    class Handler(BaseHTTPRequestHandler):
        def do_POST(self):
            length = int(self.headers.get("Content-Length", 0))
            try:
                req = json.loads(self.rfile.read(length).decode("utf-8"))
                pred = target.query(req["tokens"], req.get("tokens_b"))
                payload, status = {"label": pred.label, "probs": pred.probs}, 200
            except (KeyError, ValueError, TypeError) as exc:
                payload, status = {"error": str(exc)}, 400
            data = json.dumps(payload).encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)

        def log_message(self, *args):
            pass

    server = ThreadingHTTPServer((host, port), Handler)
    threading.Thread(target=server.serve_forever, daemon=True).start()
    return server


# --------------------------------------------------------------------------
# rendering and files

TABLE_COLUMNS = ("model", "pre", "avg_drop", "max_drop", "similarity")


def _fmt(value: Optional[float], digits: int = 2) -> str:
    return "-" if value is None else f"{value:.{digits}f}"


def render_table(reports: Mapping[str, AttackReport]) -> str:
    """Aligned columns: model, pre-attack accuracy, avg drop, max drop, similarity."""
    rows = [TABLE_COLUMNS]
    for name, r in reports.items():
        rows.append((name, _fmt(r.pre_attack_accuracy), _fmt(r.avg_accuracy_drop),
                     _fmt(r.max_accuracy_drop), _fmt(r.avg_semantic_similarity)))
    widths = [max(len(row[i]) for row in rows) for i in range(len(TABLE_COLUMNS))]
    lines = []
    for row in rows:
        cells = [row[0].ljust(widths[0])] + [c.rjust(w) for c, w in zip(row[1:], widths[1:])]
        lines.append("  ".join(cells).rstrip())
    return "\n".join(lines) + "\n"


def parse_table(text: str) -> Dict[str, Dict[str, Optional[float]]]:
    """Inverse of ``render_table`` (values only)."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or tuple(lines[0].split()) != TABLE_COLUMNS:
        raise ValueError("not a report table")
    out = {}
    for ln in lines[1:]:
        parts = ln.split()
        name, values = " ".join(parts[:-4]), parts[-4:]
        out[name] = {k: None if v == "-" else float(v) for k, v in zip(TABLE_COLUMNS[1:], values)}
    return out


def render_report_text(report: AttackReport, name: str = "target") -> str:
    lines = [render_table({name: report}).rstrip()]
    if report.pre_mse is not None:
        lines.append(f"pre_mse {report.pre_mse:.4f}  post_mse {report.post_mse:.4f}")
    for cls, stats in report.per_class.items():
        lines.append(f"class {cls}: n={stats['count']} avg_drop={stats['avg_accuracy_drop']:.2f} "
                     f"max_drop={stats['max_accuracy_drop']:.2f}")
    lines.append(f"queries {report.query_count} (+{report.original_queries} on originals)")
    for flag in report.flags:
        lines.append(f"flag: {flag}")
    return "\n".join(lines) + "\n"


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def write_json(path, payload) -> None:
    atomic_write_text(path, json.dumps(payload, sort_keys=True, indent=2) + "\n")


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence], comment: Optional[str] = None) -> None:
    buf = io.StringIO()
    if comment:
        buf.write(f"# {comment}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow(["" if v is None else v for v in row])
    atomic_write_text(path, buf.getvalue())
