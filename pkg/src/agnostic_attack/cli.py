"""Command-line entry point.

Configuration precedence, lowest to highest: built-in defaults, the YAML
file given with ``--config``, then ``--set section.key=value`` flags and the
dedicated flags (``--seed``, ``--output-dir``).

Exit status: 0 success, 1 configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, List, Optional, Sequence

import torch
import yaml

from . import config as cfg
from . import toy
from .char_attack import generate_all_char
from .data_io import (EmbeddingError, DatasetError, TaskSchema, load_dataset, load_embeddings, load_stopwords,
                      write_dataset, write_embeddings)
from .eval_harness import (TOY_KINDS, AttackReport, BlackboxTarget, attack_target, budget_sweep,
                           confidence_perplexity_export, remote_target, render_report_text, staggered_attack,
                           atomic_write_text, toy_target_factory, transfer_attack, write_csv, write_json)
from .model import build_model, load_checkpoint, save_checkpoint
from .training import train
from .word_attack import CandidateSet, generate_all, read_candidate_sets, write_candidate_sets

logger = logging.getLogger("agnostic_attack")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


class ConfigError(ValueError):
    """Invalid run configuration; the message names the offending field."""


PRESETS = {"reference": cfg.ModelConfig, "toy": cfg.ModelConfig.toy, "tiny": cfg.ModelConfig.tiny}


@dataclass
class RunConfig:
    schema: TaskSchema
    seed: int = 0
    dataset: Optional[str] = None
    test_dataset: Optional[str] = None
    embeddings: Optional[str] = None
    stopwords: Optional[str] = None
    checkpoint: str = "model.npz"
    output_dir: str = "runs"
    model: cfg.ModelConfig = field(default_factory=cfg.ModelConfig)
    train: cfg.TrainConfig = field(default_factory=cfg.TrainConfig)
    attack: cfg.AttackParams = field(default_factory=cfg.AttackParams)
    char_attack: cfg.CharAttackParams = field(default_factory=cfg.CharAttackParams)
    targets: List[dict] = field(default_factory=lambda: [{"kind": "mean_embedding"}])
    budgets: List[int] = field(default_factory=lambda: [0, 1, 2, 5, 10, 15, 20])
    regression_margin: float = 0.5
    batch_size: int = 256
    raw: dict = field(default_factory=dict)

    @property
    def hash(self) -> str:
        return cfg.config_hash(self.raw)

    def out(self, name: str) -> Path:
        path = Path(self.output_dir)
        path.mkdir(parents=True, exist_ok=True)
        return path / name

    def provenance(self) -> dict:
        return {"config_hash": self.hash, "seed": self.seed}


DEFAULT_SCHEMA = {"task_kind": "classification", "m": 2, "paired": False}
TOP_KEYS = {"seed", "schema", "paths", "model", "train", "attack", "char_attack", "targets", "eval"}
PATH_KEYS = {"dataset", "test_dataset", "embeddings", "stopwords", "checkpoint", "output_dir"}


def _parse_scalar(text: str) -> Any:
    return yaml.safe_load(text)


def apply_override(raw: dict, assignment: str) -> None:
    if "=" not in assignment:
        raise ConfigError(f"--set expects key=value, got {assignment!r}")
    key, value = assignment.split("=", 1)
    parts = key.strip().split(".")
    node = raw
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"{key}: {p} is not a section")
    node[parts[-1]] = _parse_scalar(value)


def _section(cls, raw: dict, name: str, seed: int, seeded: bool):
    data = dict(raw.get(name) or {})
    if seeded and "seed" not in data:
        data["seed"] = seed
    try:
        return cfg.from_dict(cls, data)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"{name}: {exc}") from None


def build_run_config(raw: dict, required_paths: Sequence[str] = ()) -> RunConfig:
    """Validate a raw mapping into a RunConfig before any heavy work starts."""
    unknown = set(raw) - TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {sorted(unknown)}")
    seed = raw.get("seed", 0)
    if not isinstance(seed, int) or seed < 0:
        raise ConfigError("seed: must be a non-negative integer")
    try:
        schema = TaskSchema.from_dict({**DEFAULT_SCHEMA, **(raw.get("schema") or {})})
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"schema: {exc}") from None

    model_raw = raw.get("model") or {}
    if isinstance(model_raw, str):
        if model_raw not in PRESETS:
            raise ConfigError(f"model: unknown preset {model_raw!r}; choose from {sorted(PRESETS)}")
        model = PRESETS[model_raw]()
    else:
        model = _section(cfg.ModelConfig, raw, "model", seed, False)

    paths = dict(raw.get("paths") or {})
    bad = set(paths) - PATH_KEYS
    if bad:
        raise ConfigError(f"paths: unknown key(s) {sorted(bad)}")
    for key in required_paths:
        if not paths.get(key):
            raise ConfigError(f"paths.{key}: required for this command")
        if key != "output_dir" and not Path(paths[key]).exists():
            raise ConfigError(f"paths.{key}: {paths[key]} does not exist")
    for key in ("dataset", "test_dataset", "embeddings", "stopwords"):
        if paths.get(key) and not Path(paths[key]).exists():
            raise ConfigError(f"paths.{key}: {paths[key]} does not exist")

    targets = raw.get("targets") or [{"kind": "mean_embedding"}]
    for i, t in enumerate(targets):
        if not isinstance(t, dict) or not ({"kind", "url"} & set(t)):
            raise ConfigError(f"targets[{i}]: need a 'kind' or a 'url'")
        if "kind" in t and t["kind"] not in TOY_KINDS:
            raise ConfigError(f"targets[{i}].kind: {t['kind']!r} not one of {TOY_KINDS}")
    ev = dict(raw.get("eval") or {})
    budgets = ev.get("budgets", [0, 1, 2, 5, 10, 15, 20])
    if not all(isinstance(b, int) and b >= 0 for b in budgets):
        raise ConfigError("eval.budgets: must be non-negative integers")

    return RunConfig(
        schema=schema, seed=seed,
        dataset=paths.get("dataset"), test_dataset=paths.get("test_dataset"),
        embeddings=paths.get("embeddings"), stopwords=paths.get("stopwords"),
        checkpoint=paths.get("checkpoint", "model.npz"), output_dir=paths.get("output_dir", "runs"),
        model=model,
        train=_section(cfg.TrainConfig, raw, "train", seed, True),
        attack=_section(cfg.AttackParams, raw, "attack", seed, True),
        char_attack=_section(cfg.CharAttackParams, raw, "char_attack", seed, True),
        targets=list(targets), budgets=list(budgets),
        regression_margin=float(ev.get("regression_margin", 0.5)),
        batch_size=int(ev.get("batch_size", 256)),
        raw=raw,
    )


def load_raw_config(path: Optional[str], overrides: Sequence[str], seed: Optional[int],
                    output_dir: Optional[str]) -> dict:
    raw: dict = {}
    if path:
        try:
            with open(path, encoding="utf-8") as fh:
                raw = yaml.safe_load(fh) or {}
        except FileNotFoundError:
            raise ConfigError(f"config file {path} does not exist") from None
        except yaml.YAMLError as exc:
            raise ConfigError(f"config file {path} is not valid YAML: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError("config file must hold a mapping at the top level")
    for item in overrides:
        apply_override(raw, item)
    if seed is not None:
        raw["seed"] = seed
    if output_dir is not None:
        raw.setdefault("paths", {})["output_dir"] = output_dir
    return raw


# --------------------------------------------------------------------------
# helpers shared by subcommands


def _test_samples(rc: RunConfig):
    path = rc.test_dataset or rc.dataset
    if not path:
        raise ConfigError("paths.test_dataset (or paths.dataset) is required")
    return load_dataset(path, rc.schema)


def _targets(rc: RunConfig) -> List[BlackboxTarget]:
    out = []
    train_samples = None
    for i, spec in enumerate(rc.targets):
        if "url" in spec:
            out.append(remote_target(spec["url"], name=spec.get("name", f"remote-{i}")))
            continue
        if train_samples is None:
            if not rc.dataset:
                raise ConfigError("paths.dataset is required to train toy targets")
            train_samples = load_dataset(rc.dataset, rc.schema)
        seed = spec.get("seed", cfg.derive_seed(rc.seed, "target", i))
        out.append(toy_target_factory(spec["kind"], seed, train_samples, epochs=spec.get("epochs", 30),
                                      name=spec.get("name", f"{spec['kind']}-{i}")))
    return out


def _candidates_path(rc: RunConfig, given: Optional[str], default: str) -> Path:
    path = Path(given) if given else rc.out(default)
    if not path.exists():
        raise ConfigError(f"candidate file {path} does not exist")
    return path


def _report_payload(rc: RunConfig, report: AttackReport, target: str) -> dict:
    report.meta.update(rc.provenance())
    report.meta["target"] = target
    return report.to_json()


def _stamp(sets: List[CandidateSet], rc: RunConfig) -> List[CandidateSet]:
    for cs in sets:
        cs.meta = {**cs.meta, **rc.provenance()}
    return sets


# --------------------------------------------------------------------------
# subcommands


def _pct(x: Optional[float]) -> str:
    return "n/a" if x is None else f"{x:.2f}"


def cmd_make_toy(rc: RunConfig, args) -> None:
    out = Path(rc.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_dataset(out / "train.tsv", toy.make_toy_corpus(args.n_train, seed=rc.seed))
    write_dataset(out / "test.tsv", toy.make_toy_corpus(args.n_test, seed=rc.seed + 1, prefix="test"))
    space = toy.make_toy_embeddings(seed=rc.seed)
    write_embeddings(out / "embeddings.txt", space.words, space.vectors)
    config = {
        "seed": rc.seed,
        "schema": toy.TOY_SCHEMA.to_dict(),
        "model": "toy",
        "train": {k: v for k, v in cfg.to_dict(cfg.TrainConfig.toy(rc.seed)).items() if k != "seed"},
        "paths": {"dataset": str(out / "train.tsv"), "test_dataset": str(out / "test.tsv"),
                  "embeddings": str(out / "embeddings.txt"), "checkpoint": str(out / "model.npz"),
                  "output_dir": str(out)},
        "targets": [{"kind": "mean_embedding"}, {"kind": "bag_of_bigrams"}, {"kind": "recurrent"}],
    }
    atomic_write_text(out / "config.yaml", yaml.safe_dump(config, sort_keys=True))
    print(f"wrote toy corpus, embeddings and config.yaml to {out}")


def cmd_train(rc: RunConfig, args) -> None:
    samples = load_dataset(rc.dataset, rc.schema)
    if not samples:
        raise ConfigError(f"paths.dataset: {rc.dataset} holds no samples")
    model = build_model(samples, rc.schema, rc.model, seed=cfg.derive_seed(rc.seed, "model-init"))
    result = train(model, samples, rc.train, log_path=rc.out("train_log.jsonl"))
    save_checkpoint(result.model, rc.checkpoint,
                    extra={**rc.provenance(), "best_epoch": result.best_epoch, "best_metric": result.best_metric})
    print(f"best epoch {result.best_epoch}, validation metric {result.best_metric}; checkpoint {rc.checkpoint}")


def _load_attack_inputs(rc: RunConfig):
    model, _ = load_checkpoint(rc.checkpoint)
    samples = _test_samples(rc)
    return model, samples


def cmd_attack(rc: RunConfig, args) -> None:
    model, samples = _load_attack_inputs(rc)
    space = load_embeddings(rc.embeddings)
    stop = load_stopwords(rc.stopwords)
    sets = generate_all(samples, model, space, rc.attack, stopwords=stop, selection=args.selection)
    path = Path(args.output) if args.output else rc.out("candidates.jsonl" if args.selection == "alpha"
                                                         else "candidates_random.jsonl")
    write_candidate_sets(path, _stamp(sets, rc))
    print(f"{sum(len(s) for s in sets)} candidates for {len(sets)} samples -> {path}")


def cmd_char_attack(rc: RunConfig, args) -> None:
    model, samples = _load_attack_inputs(rc)
    sets = generate_all_char(samples, model, rc.char_attack)
    path = Path(args.output) if args.output else rc.out("char_candidates.jsonl")
    write_candidate_sets(path, _stamp(sets, rc))
    print(f"{sum(len(s) for s in sets)} character candidates -> {path}")


def cmd_evaluate(rc: RunConfig, args) -> None:
    samples = _test_samples(rc)
    sets = read_candidate_sets(_candidates_path(rc, args.candidates, "candidates.jsonl"))
    reports = {}
    text = []
    for target in _targets(rc):
        result = attack_target(target, samples, sets, rc.batch_size, rc.regression_margin, rc.schema.label_names)
        reports[target.name] = _report_payload(rc, result.report, target.name)
        text.append(render_report_text(result.report, target.name))
    write_json(rc.out("report.json"), reports)
    atomic_write_text(rc.out("report.txt"), "\n".join(text))
    print("\n".join(text), end="")


def cmd_transfer(rc: RunConfig, args) -> None:
    samples = _test_samples(rc)
    sets = read_candidate_sets(_candidates_path(rc, args.candidates, "candidates.jsonl"))
    targets = _targets(rc)
    if len(targets) < 2:
        raise ConfigError("targets: transfer needs a source and at least one other target")
    source = attack_target(targets[0], samples, sets, rc.batch_size, rc.regression_margin)
    payload = {"source": _report_payload(rc, source.report, targets[0].name), "transfer": {}}
    for other in targets[1:]:
        rep = transfer_attack(source.success_sets, samples, other, rc.batch_size, rc.regression_margin).report
        payload["transfer"][other.name] = _report_payload(rc, rep, other.name)
        print(f"{targets[0].name} -> {other.name}: avg drop {_pct(rep.avg_accuracy_drop)}")
    write_json(rc.out("transfer.json"), payload)


def cmd_staggered(rc: RunConfig, args) -> None:
    samples = _test_samples(rc)
    sets = read_candidate_sets(_candidates_path(rc, args.candidates, "candidates.jsonl"))
    targets = _targets(rc)
    if len(targets) < 2:
        raise ConfigError("targets: a staggered attack needs at least two targets")
    stages = staggered_attack(targets, samples, sets, rc.batch_size, rc.regression_margin)
    write_json(rc.out("staggered.json"), {"stages": [dataclasses.asdict(s) for s in stages], **rc.provenance()})
    for s in stages:
        print(f"{s.target}: {s.successful}/{s.attacked} successful ({s.success_pct:.2f}%)")


def cmd_ablate(rc: RunConfig, args) -> None:
    model, samples = _load_attack_inputs(rc)
    space = load_embeddings(rc.embeddings)
    stop = load_stopwords(rc.stopwords)
    target = _targets(rc)[0]
    payload = {**rc.provenance(), "target": target.name}
    for selection in ("alpha", "random"):
        sets = generate_all(samples, model, space, rc.attack, stopwords=stop, selection=selection)
        rep = attack_target(target, samples, sets, rc.batch_size, rc.regression_margin).report
        payload[selection] = rep.to_json()
        print(f"{selection:>6}: avg drop {_pct(rep.avg_accuracy_drop)}, max drop {_pct(rep.max_accuracy_drop)}")
    write_json(rc.out("ablation.json"), payload)


def cmd_sweep(rc: RunConfig, args) -> None:
    samples = _test_samples(rc)
    sets = read_candidate_sets(_candidates_path(rc, args.candidates, "candidates.jsonl"))
    target = _targets(rc)[0]
    rows = budget_sweep(target, samples, sets, rc.budgets, rc.batch_size, rc.regression_margin)
    write_csv(rc.out("sweep.csv"), ["budget", "avg_accuracy_drop", "max_accuracy_drop", "post_mse", "n_candidates"],
              [(r.budget, r.avg_accuracy_drop, r.max_accuracy_drop, r.post_mse, r.n_candidates) for r in rows],
              comment=f"config_hash={rc.hash} seed={rc.seed} target={target.name}")
    for r in rows:
        print(f"K={r.budget}: avg drop {_pct(r.avg_accuracy_drop)}, max drop {_pct(r.max_accuracy_drop)}")


def cmd_export_ppl(rc: RunConfig, args) -> None:
    samples = _test_samples(rc)
    sets = read_candidate_sets(_candidates_path(rc, args.candidates, "candidates.jsonl"))
    target = _targets(rc)[0]
    rows = confidence_perplexity_export(target, samples, sets, rc.batch_size)
    write_csv(rc.out("confidence_ppl.csv"), ["id", "candidate", "perplexity", "confidence_drop"],
              [(r.id, r.candidate, r.perplexity, r.confidence_drop) for r in rows],
              comment=f"config_hash={rc.hash} seed={rc.seed} target={target.name}")
    print(f"{len(rows)} rows -> {rc.out('confidence_ppl.csv')}")


COMMANDS = {
    "make-toy": (cmd_make_toy, ("output_dir",)),
    "train": (cmd_train, ("dataset",)),
    "attack": (cmd_attack, ("checkpoint", "embeddings")),
    "char-attack": (cmd_char_attack, ("checkpoint",)),
    "evaluate": (cmd_evaluate, ()),
    "transfer": (cmd_transfer, ()),
    "staggered": (cmd_staggered, ()),
    "ablate": (cmd_ablate, ("checkpoint", "embeddings")),
    "sweep": (cmd_sweep, ()),
    "export-ppl": (cmd_export_ppl, ()),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="agnostic-attack", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config entry, e.g. attack.budget=10 (repeatable)")
    common.add_argument("--seed", type=int, help="root seed (overrides the file)")
    common.add_argument("--output-dir", help="directory for artifacts (overrides paths.output_dir)")
    common.add_argument("--jobs", type=int, default=1, help="cap on worker threads")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name == "make-toy":
            p.add_argument("--n-train", type=int, default=2000)
            p.add_argument("--n-test", type=int, default=400)
        if name in ("attack", "char-attack"):
            p.add_argument("--output", help="candidate file to write")
        if name == "attack":
            p.add_argument("--selection", choices=("alpha", "random"), default="alpha")
        if name in ("evaluate", "transfer", "staggered", "sweep", "export-ppl"):
            p.add_argument("--candidates", help="candidate file to read")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    fn, required = COMMANDS[args.command]
    try:
        if args.jobs < 1:
            raise ConfigError("--jobs must be at least 1")
        torch.set_num_threads(args.jobs)
        raw = load_raw_config(args.config, args.overrides, args.seed, args.output_dir)
        rc = build_run_config(raw, required)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        fn(rc, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DatasetError, EmbeddingError, OSError, ValueError, KeyError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
