"""Training loop: Nesterov-momentum SGD with annealing and length curriculum.

The first epoch visits utterances sorted by length (short first); later
epochs use a seeded shuffle. The learning rate holds at its initial value
through epoch anneal_start_epoch - 1, then decays geometrically. Gradients
are evaluated at the momentum look-ahead point, averaged over the batch,
and clipped by global norm before the update.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .ctc import ctc_loss, greedy_decode, sequence_error_rate
from .data import Dataset
from .ensemble import DistillationConfig, FusionSpec, distill_loss
from .errors import (
    EmptyDatasetError,
    InvalidConfigError,
    NonFiniteGradientError,
    NonFiniteLossError,
    OutOfRangeError,
    ParseError,
    ShapeMismatchError,
)
from .guided import GuidedLossConfig, guided_ctc_loss
from .seqmodel import SequenceModel, save_checkpoint
from .util import ordered_map

LOSS_MODES = ("ctc", "guided", "distill")

_INT_FIELDS = ("epochs", "anneal_start_epoch", "batch_size", "seed")
_FLOAT_FIELDS = ("lr_initial", "momentum", "anneal_factor", "clip_norm")


@dataclass(frozen=True)
class TrainingSchedule:
    epochs: int = 20
    lr_initial: float = 0.03
    momentum: float = 0.9
    anneal_factor: float = math.sqrt(0.5)
    anneal_start_epoch: int = 11
    batch_size: int = 16
    seed: int = 0
    clip_norm: float = 5.0

    def __post_init__(self) -> None:
        if self.epochs < 0:
            raise InvalidConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.lr_initial <= 0:
            raise InvalidConfigError(f"lr_initial must be > 0, got {self.lr_initial}")
        if not 0.0 <= self.momentum < 1.0:
            raise InvalidConfigError(f"momentum must be in [0, 1), got {self.momentum}")
        if not 0.0 < self.anneal_factor <= 1.0:
            raise InvalidConfigError(f"anneal_factor must be in (0, 1], got {self.anneal_factor}")
        if self.anneal_start_epoch < 1:
            raise InvalidConfigError(
                f"anneal_start_epoch must be >= 1, got {self.anneal_start_epoch}"
            )
        if self.batch_size < 1:
            raise InvalidConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.clip_norm < 0:
            raise InvalidConfigError(f"clip_norm must be >= 0 (0 disables), got {self.clip_norm}")


def learning_rate(schedule: TrainingSchedule, epoch: int) -> float:
    """Learning rate for a 1-based epoch index."""
    if not 1 <= epoch <= schedule.epochs:
        raise OutOfRangeError(f"epoch {epoch} outside 1..{schedule.epochs}")
    if epoch < schedule.anneal_start_epoch:
        return schedule.lr_initial
    return schedule.lr_initial * schedule.anneal_factor ** (epoch - schedule.anneal_start_epoch + 1)


def batch_order(dataset: Dataset, epoch: int, seed: int, batch_size: int) -> list[list[int]]:
    """Utterance index batches for one epoch.

    Epoch 1 sorts ascending by frame count (ties by id); later epochs use a
    seeded permutation that also mixes in the epoch number.
    """
    n = len(dataset)
    if n == 0:
        raise EmptyDatasetError("cannot order an empty dataset")
    if epoch == 1:
        order = sorted(range(n), key=lambda i: (dataset.utterances[i].num_frames, dataset.utterances[i].id))
    else:
        order = np.random.default_rng([seed, epoch]).permutation(n).tolist()
    return [order[i : i + batch_size] for i in range(0, n, batch_size)]


def sgd_nesterov_step(
    params: np.ndarray,
    velocity: np.ndarray,
    grad: np.ndarray,
    lr: float,
    momentum: float,
) -> tuple[np.ndarray, np.ndarray]:
    """One update. The gradient must already be evaluated at the look-ahead
    point params + momentum * velocity; this function applies
    velocity' = momentum * velocity - lr * grad, params' = params + velocity'."""
    if params.shape != velocity.shape or params.shape != grad.shape:
        raise ShapeMismatchError(
            f"params {params.shape}, velocity {velocity.shape}, grad {grad.shape} must match"
        )
    if not np.all(np.isfinite(grad)):
        raise NonFiniteGradientError("gradient contains non-finite entries")
    new_velocity = momentum * velocity - lr * grad
    return params + new_velocity, new_velocity


def clip_gradient(grad: np.ndarray, clip_norm: float) -> np.ndarray:
    """Scale grad down to the given global norm; 0 disables clipping."""
    if clip_norm <= 0:
        return grad
    norm = float(np.sqrt(np.sum(grad * grad)))
    if norm > clip_norm:
        return grad * (clip_norm / norm)
    return grad


@dataclass(frozen=True)
class TrainingJob:
    model: SequenceModel
    schedule: TrainingSchedule
    loss_mode: str = "ctc"
    masks: Mapping[str, np.ndarray] | None = None
    teacher_grids: Mapping[str, np.ndarray] | None = None
    guided_cfg: GuidedLossConfig = field(default_factory=GuidedLossConfig)
    distill_cfg: DistillationConfig = field(
        default_factory=lambda: DistillationConfig(teacher=FusionSpec(("precomputed",)))
    )
    checkpoint_dir: str | os.PathLike | None = None

    def __post_init__(self) -> None:
        if self.loss_mode not in LOSS_MODES:
            raise InvalidConfigError(f"loss_mode must be one of {LOSS_MODES}, got {self.loss_mode!r}")
        if self.loss_mode == "guided" and self.masks is None:
            raise InvalidConfigError("guided training requires a mask store")
        if self.loss_mode == "distill" and self.teacher_grids is None:
            raise InvalidConfigError("distillation requires a teacher posterior store")


@dataclass(frozen=True)
class EpochMetrics:
    epoch: int
    mean_train_loss: float
    heldout_ser: float | None
    lr: float


def _loss_fn(job: TrainingJob) -> Callable:
    if job.loss_mode == "ctc":
        return lambda grid, utt: ctc_loss(grid, utt.target)
    if job.loss_mode == "guided":

        def guided_fn(grid, utt):
            mask = job.masks.get(utt.id)
            if mask is None:
                raise InvalidConfigError(f"no mask cached for utterance {utt.id!r}")
            return guided_ctc_loss(grid, utt.target, mask, job.guided_cfg)

        return guided_fn

    def distill_fn(grid, utt):
        teacher = job.teacher_grids.get(utt.id)
        if teacher is None:
            raise InvalidConfigError(f"no teacher posteriors cached for utterance {utt.id!r}")
        return distill_loss(grid, utt.target, teacher, job.distill_cfg)

    return distill_fn


def evaluate_ser(model: SequenceModel, dataset: Dataset) -> float:
    """Greedy-decode every utterance and score against the targets."""

    def decode(utt):
        grid, _ = model.forward(utt.features)
        return greedy_decode(grid)

    hyps = ordered_map(decode, dataset.utterances)
    return sequence_error_rate(hyps, [utt.target for utt in dataset.utterances])


def run_training(
    job: TrainingJob,
    dataset: Dataset,
    heldout: Dataset | None = None,
) -> tuple[SequenceModel, list[EpochMetrics]]:
    """Train a copy of the job's model; the input model is left untouched."""
    if len(dataset) == 0 and job.schedule.epochs > 0:
        raise EmptyDatasetError("cannot train on an empty dataset")
    model = job.model.copy()
    schedule = job.schedule
    loss_fn = _loss_fn(job)
    params = model.parameters.copy()
    velocity = np.zeros_like(params)
    metrics: list[EpochMetrics] = []
    ckpt_dir = Path(job.checkpoint_dir) if job.checkpoint_dir is not None else None
    if ckpt_dir is not None:
        ckpt_dir.mkdir(parents=True, exist_ok=True)

    for epoch in range(1, schedule.epochs + 1):
        lr = learning_rate(schedule, epoch)
        batches = batch_order(dataset, epoch, schedule.seed, schedule.batch_size)
        total_loss = 0.0
        for batch_idx, batch in enumerate(batches):
            lookahead = params + schedule.momentum * velocity
            model.parameters[:] = lookahead

            def one(i: int):
                utt = dataset.utterances[i]
                grid, trace = model.forward(utt.features)
                loss, dgrid = loss_fn(grid, utt)
                if not math.isfinite(loss):
                    raise NonFiniteLossError(
                        f"epoch {epoch} batch {batch_idx}: non-finite loss "
                        f"on utterance {utt.id!r}"
                    )
                return loss, model.backward(trace, dgrid)

            results = ordered_map(one, batch)
            grad = np.zeros_like(params)
            for loss, pgrad in results:
                total_loss += loss
                grad += pgrad
            grad /= len(batch)
            grad = clip_gradient(grad, schedule.clip_norm)
            if not np.all(np.isfinite(grad)):
                raise NonFiniteGradientError(
                    f"epoch {epoch} batch {batch_idx}: non-finite gradient"
                )
            params, velocity = sgd_nesterov_step(params, velocity, grad, lr, schedule.momentum)

        model.parameters[:] = params
        ser = evaluate_ser(model, heldout) if heldout is not None and len(heldout) else None
        metrics.append(
            EpochMetrics(
                epoch=epoch,
                mean_train_loss=total_loss / len(dataset),
                heldout_ser=ser,
                lr=lr,
            )
        )
        if ckpt_dir is not None:
            save_checkpoint(model, ckpt_dir / f"epoch{epoch:03d}.ckpt")

    model.parameters[:] = params
    if ckpt_dir is not None:
        save_checkpoint(model, ckpt_dir / "final.ckpt")
    return model, metrics


def write_metrics_csv(metrics: Sequence[EpochMetrics], path) -> None:
    """Floats are written with repr (shortest exact round trip)."""
    with open(path, "w", newline="") as fh:
        fh.write("epoch,mean_train_loss,heldout_ser,lr\n")
        for row in metrics:
            ser = "" if row.heldout_ser is None else repr(float(row.heldout_ser))
            fh.write(
                f"{row.epoch},{repr(float(row.mean_train_loss))},{ser},{repr(float(row.lr))}\n"
            )


def parse_schedule_file(path) -> dict[str, float | int]:
    """key=value lines; blank lines and # comments ignored."""
    values: dict[str, float | int] = {}
    with open(path, "r") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ParseError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, _, value = line.partition("=")
            key = key.strip()
            value = value.strip()
            if key not in _INT_FIELDS and key not in _FLOAT_FIELDS:
                raise ParseError(f"{path}:{lineno}: unknown schedule field {key!r}")
            try:
                values[key] = int(value) if key in _INT_FIELDS else float(value)
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: bad value for {key}: {value!r}") from exc
    return values


def build_schedule(
    config_path=None, overrides: Mapping[str, float | int] | None = None
) -> TrainingSchedule:
    """Schedule from defaults, then a config file, then explicit overrides."""
    values: dict[str, float | int] = {}
    if config_path is not None:
        values.update(parse_schedule_file(config_path))
    if overrides:
        for key, val in overrides.items():
            if val is None:
                continue
            if key not in _INT_FIELDS and key not in _FLOAT_FIELDS:
                raise InvalidConfigError(f"unknown schedule field {key!r}")
            values[key] = int(val) if key in _INT_FIELDS else float(val)
    return TrainingSchedule(**values)
