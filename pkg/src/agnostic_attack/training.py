"""Joint training of the attack model and a finite-difference gradient checker."""

from __future__ import annotations

import copy
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
from torch.nn import functional as F

from .config import TrainConfig, derive_seed
from .data_io import TokenizedSample
from .model import AttackModel, NonFiniteLossError, save_checkpoint

logger = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    """Raised when the loss goes non-finite; ``model`` holds the last good weights."""

    def __init__(self, message: str, model: AttackModel, log: List[dict]):
        super().__init__(message)
        self.model = model
        self.log = log


@dataclass
class TrainResult:
    model: AttackModel
    log: List[dict] = field(default_factory=list)
    best_epoch: Optional[int] = None
    best_metric: Optional[float] = None


def split_validation(samples: Sequence[TokenizedSample], fraction: float, seed: int):
    if fraction <= 0 or len(samples) < 2:
        return list(samples), []
    rng = np.random.default_rng(derive_seed(seed, "val-split"))
    order = rng.permutation(len(samples))
    n_val = max(1, int(round(fraction * len(samples))))
    val = [samples[i] for i in sorted(order[:n_val])]
    train = [samples[i] for i in sorted(order[n_val:])]
    return train, val


@torch.no_grad()
def evaluate(model: AttackModel, samples: Sequence[TokenizedSample], batch_size: int = 256) -> Tuple[float, float]:
    """(metric, task loss): accuracy and mean cross-entropy, or MSE twice for regression."""
    was_training = model.training
    model.eval()
    hits, loss, n = 0.0, 0.0, 0
    for start in range(0, len(samples), batch_size):
        chunk = samples[start:start + batch_size]
        with model.inference():
            out, _, _, _ = model.run(chunk)
        if model.schema.is_classification:
            labels = torch.as_tensor([s.label for s in chunk])
            hits += float((out.argmax(dim=-1) == labels).sum())
            loss += float(F.cross_entropy(out, labels, reduction="sum"))
        else:
            target = torch.as_tensor([s.label for s in chunk], dtype=out.dtype)
            loss += float(((out.squeeze(-1) - target) ** 2).sum())
        n += len(chunk)
    model.train(was_training)
    if n == 0:
        return float("nan"), float("nan")
    return (hits / n if model.schema.is_classification else loss / n), loss / n


def evaluate_metric(model: AttackModel, samples: Sequence[TokenizedSample], batch_size: int = 256) -> float:
    """Accuracy for classification, mean squared error for regression."""
    return evaluate(model, samples, batch_size)[0]


def train(model: AttackModel, samples: Sequence[TokenizedSample], config: TrainConfig,
          val_samples: Optional[Sequence[TokenizedSample]] = None,
          log_path=None, checkpoint_path=None) -> TrainResult:
    """Minimise the joint objective with Adam and a reduce-on-plateau schedule.

    The returned model carries the weights of the best validation epoch.
    """
    if not samples:
        raise ValueError("training needs a non-empty dataset")
    if val_samples is None:
        train_set, val_set = split_validation(samples, config.val_fraction, config.seed)
    else:
        train_set, val_set = list(samples), list(val_samples)
    if config.max_epochs == 0:
        return TrainResult(model)

    torch.manual_seed(derive_seed(config.seed, "train-torch"))
    rng = np.random.default_rng(derive_seed(config.seed, "train-shuffle"))
    classification = model.schema.is_classification
    optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    scheduler = torch.optim.lr_scheduler.ReduceLROnPlateau(
        optimizer, mode="max" if classification else "min",
        factor=config.plateau_factor, patience=config.plateau_patience, min_lr=config.min_lr,
    )
    # accuracy saturates early on easy data, so equal accuracies fall back to the lower loss
    better = (lambda a, b: a > b) if classification else (lambda a, b: a[0] < b[0])

    log: List[dict] = []
    best_state = copy.deepcopy(model.state_dict())
    last_good = best_state
    best_key, best_metric, best_epoch, stale = None, None, None, 0
    log_fh = Path(log_path).open("w", encoding="utf-8") if log_path else None
    try:
        for epoch in range(1, config.max_epochs + 1):
            model.train()
            order = rng.permutation(len(train_set))
            sums: Dict[str, float] = {"ce_or_mse": 0.0, "lm": 0.0, "l2": 0.0}
            n_batches = 0
            for start in range(0, len(order), config.batch_size):
                batch = [train_set[i] for i in order[start:start + config.batch_size]]
                try:
                    terms = model.loss(batch, config.l2_lambda)
                    total = terms.total
                    if not torch.isfinite(total):
                        raise NonFiniteLossError(batch[0].id, "total")
                except NonFiniteLossError as exc:
                    model.load_state_dict(last_good)
                    if checkpoint_path:
                        save_checkpoint(model, checkpoint_path, extra={"diverged_at_epoch": epoch})
                    raise TrainingDiverged(f"epoch {epoch}: {exc}", model, log) from exc
                optimizer.zero_grad()
                total.backward()
                torch.nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip)
                optimizer.step()
                for key, value in terms.as_floats().items():
                    if key in sums:
                        sums[key] += value
                n_batches += 1

            metric, val_loss = evaluate(model, val_set if val_set else train_set)
            lr = optimizer.param_groups[0]["lr"]
            record = {"epoch": epoch, **{k: v / n_batches for k, v in sums.items()},
                      "val_metric": metric, "val_loss": val_loss, "lr": lr}
            log.append(record)
            if log_fh:
                log_fh.write(json.dumps(record, sort_keys=True) + "\n")
                log_fh.flush()
            logger.info("epoch %d %s", epoch, record)

            last_good = copy.deepcopy(model.state_dict())
            key = (metric, -val_loss) if classification else (metric,)
            if best_key is None or better(key, best_key):
                best_key, best_metric, best_epoch, stale = key, metric, epoch, 0
                best_state = last_good
            else:
                stale += 1
            scheduler.step(metric)
            if config.early_stop_patience is not None and stale >= config.early_stop_patience:
                break
    finally:
        if log_fh:
            log_fh.close()

    model.load_state_dict(best_state)
    model.eval()
    if checkpoint_path:
        save_checkpoint(model, checkpoint_path, extra={"best_epoch": best_epoch, "best_metric": best_metric})
    return TrainResult(model, log, best_epoch, best_metric)


# --------------------------------------------------------------------------
# gradient checking


@dataclass
class GradCheckResult:
    max_rel_error: float
    per_parameter: Dict[str, float]
    epsilon: float
    n_checked: int
    trustworthy: bool


def relative_error(analytic: torch.Tensor, numeric: torch.Tensor, floor: float = 1e-6) -> torch.Tensor:
    """|a - n| / max(|a|, |n|, floor): relative where gradients are sizeable, absolute near zero."""
    scale = torch.maximum(analytic.abs(), numeric.abs()).clamp(min=floor)
    return (analytic - numeric).abs() / scale


def gradient_check(model: AttackModel, samples: Sequence[TokenizedSample], epsilon: float = 1e-5,
                   lambda_: float = 0.0, params: Optional[Sequence[str]] = None,
                   floor: float = 1e-6, tolerance: float = 1e-4) -> GradCheckResult:
    """Compare autograd gradients of the joint loss with central differences.

    Runs on a float64, eval-mode copy of ``model`` so the original is left
    untouched. ``trustworthy`` is False when epsilon is outside the range
    where central differences are reliable at double precision or the
    error exceeds ``tolerance``.
    """
    probe = copy.deepcopy(model).double().eval()
    named = dict(probe.named_parameters())
    names = list(params) if params is not None else list(named)

    probe.zero_grad()
    probe.loss(samples, lambda_).total.backward()
    analytic = {n: named[n].grad.detach().clone() for n in names}

    def value() -> float:
        with torch.no_grad():
            return float(probe.loss(samples, lambda_).total)

    per_param: Dict[str, float] = {}
    n_checked = 0
    with torch.no_grad():
        for name in names:
            p = named[name]
            flat = p.view(-1)
            numeric = torch.zeros_like(flat)
            for j in range(flat.numel()):
                orig = float(flat[j])
                flat[j] = orig + epsilon
                plus = value()
                flat[j] = orig - epsilon
                minus = value()
                flat[j] = orig
                numeric[j] = (plus - minus) / (2 * epsilon)
            err = relative_error(analytic[name].view(-1), numeric, floor)
            per_param[name] = float(err.max()) if err.numel() else 0.0
            n_checked += flat.numel()
    worst = max(per_param.values()) if per_param else 0.0
    trustworthy = (1e-8 <= epsilon <= 1e-4) and worst < tolerance and math.isfinite(worst)
    return GradCheckResult(worst, per_param, epsilon, n_checked, trustworthy)
