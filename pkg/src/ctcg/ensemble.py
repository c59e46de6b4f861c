"""Posterior fusion across models and frame-wise distillation to a student.

Fusion is an entrywise weighted average of posterior grids, so the result
of fusing row-stochastic grids is itself row-stochastic. Distillation
minimizes the per-frame KL divergence from the (possibly fused) teacher
distribution to the student distribution, optionally interpolated with the
student's own alignment loss.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .ctc import ctc_loss, greedy_decode, sequence_error_rate
from .errors import BadWeightsError, InvalidConfigError, ParseError, ShapeMismatchError
from .util import ordered_map

POSTERIOR_MAGIC = b"CTCP"
POSTERIOR_VERSION = 1


def _check_weights(weights: Sequence[float], count: int) -> np.ndarray:
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (count,):
        raise BadWeightsError(f"{w.shape[0] if w.ndim == 1 else w.shape} weights for {count} members")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise BadWeightsError("weights must be finite and nonnegative")
    if abs(float(w.sum()) - 1.0) > 1e-9:
        raise BadWeightsError(f"weights sum to {w.sum()!r}, expected 1")
    return w


@dataclass(frozen=True)
class FusionSpec:
    member_model_ids: tuple[str, ...]
    weights: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if not self.member_model_ids:
            raise BadWeightsError("fusion needs at least one member")
        if not self.weights:
            uniform = (1.0 / len(self.member_model_ids),) * len(self.member_model_ids)
            object.__setattr__(self, "weights", uniform)
        _check_weights(self.weights, len(self.member_model_ids))


@dataclass(frozen=True)
class DistillationConfig:
    teacher: FusionSpec
    kd_weight: float = 1.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.kd_weight <= 1.0:
            raise InvalidConfigError(f"kd_weight must be in [0, 1], got {self.kd_weight}")


def fuse(grids: Sequence[np.ndarray], weights: Sequence[float] | None = None) -> np.ndarray:
    """Entrywise weighted average; uniform weights by default."""
    if not grids:
        raise BadWeightsError("fusion needs at least one grid")
    shape = np.asarray(grids[0]).shape
    for g in grids[1:]:
        if np.asarray(g).shape != shape:
            raise ShapeMismatchError(f"grid shapes differ: {shape} vs {np.asarray(g).shape}")
    if weights is None:
        weights = [1.0 / len(grids)] * len(grids)
    w = _check_weights(weights, len(grids))
    out = np.zeros(shape, dtype=np.float64)
    for wi, g in zip(w, grids):
        out += wi * np.asarray(g, dtype=np.float64)
    return out


def kd_frame_loss(teacher_grid: np.ndarray, student_grid: np.ndarray) -> tuple[float, np.ndarray]:
    """Sum over frames of KL(teacher row || student row), plus the gradient
    with respect to student grid entries (-teacher/student)."""
    t = np.asarray(teacher_grid, dtype=np.float64)
    s = np.asarray(student_grid, dtype=np.float64)
    if t.shape != s.shape:
        raise ShapeMismatchError(f"teacher shape {t.shape} vs student shape {s.shape}")
    pos = t > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        contrib = np.where(pos, t * (np.log(np.where(pos, t, 1.0)) - np.log(s)), 0.0)
    loss = float(contrib.sum())
    grad = np.zeros_like(s)
    grad[pos] = -t[pos] / s[pos]
    return loss, grad


def distill_loss(
    student_grid: np.ndarray,
    labels,
    teacher_grid: np.ndarray,
    cfg: DistillationConfig,
    blank_id: int | None = None,
) -> tuple[float, np.ndarray]:
    """kd_weight * KL term + (1 - kd_weight) * alignment term."""
    if cfg.kd_weight == 1.0:
        return kd_frame_loss(teacher_grid, student_grid)
    if cfg.kd_weight == 0.0:
        return ctc_loss(student_grid, labels, blank_id)
    kd_l, kd_g = kd_frame_loss(teacher_grid, student_grid)
    ctc_l, ctc_g = ctc_loss(student_grid, labels, blank_id)
    w = cfg.kd_weight
    return w * kd_l + (1.0 - w) * ctc_l, w * kd_g + (1.0 - w) * ctc_g


def fused_ser(models: Sequence, dataset, weights: Sequence[float] | None = None) -> float:
    """Decode the weighted-average posteriors of several models and score
    against the dataset targets."""

    def one(utt):
        grids = [m.forward(utt.features)[0] for m in models]
        return greedy_decode(fuse(grids, weights))

    hyps = ordered_map(one, dataset.utterances)
    return sequence_error_rate(hyps, [utt.target for utt in dataset.utterances])


def precompute_teacher_grids(
    models: Sequence, dataset, weights: Sequence[float] | None = None
) -> dict[str, np.ndarray]:
    """Fused posterior grid per utterance, for use as distillation targets."""

    def one(utt):
        grids = [m.forward(utt.features)[0] for m in models]
        return fuse(grids, weights)

    results = ordered_map(one, dataset.utterances)
    return {utt.id: grid for utt, grid in zip(dataset.utterances, results)}


def save_posterior_cache(grids: Mapping[str, np.ndarray], path) -> None:
    """Per-utterance posterior grids as little-endian float64 blocks."""
    with open(path, "wb") as fh:
        fh.write(POSTERIOR_MAGIC)
        fh.write(struct.pack("<II", POSTERIOR_VERSION, len(grids)))
        for utt_id, grid in grids.items():
            encoded = utt_id.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<II", grid.shape[0], grid.shape[1]))
            fh.write(np.ascontiguousarray(grid, dtype="<f8").tobytes())


def load_posterior_cache(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != POSTERIOR_MAGIC:
        raise ParseError(f"{path}: bad magic {raw[:4]!r}")
    pos = 4
    try:
        version, count = struct.unpack_from("<II", raw, pos)
        pos += 8
        if version != POSTERIOR_VERSION:
            raise ParseError(f"{path}: unsupported version {version}")
        grids: dict[str, np.ndarray] = {}
        for _ in range(count):
            (id_len,) = struct.unpack_from("<H", raw, pos)
            pos += 2
            utt_id = raw[pos : pos + id_len].decode("utf-8")
            pos += id_len
            T, K = struct.unpack_from("<II", raw, pos)
            pos += 8
            n_bytes = 8 * T * K
            block = raw[pos : pos + n_bytes]
            if len(block) != n_bytes:
                raise ParseError(f"{path}: truncated grid for {utt_id!r} at byte {pos}")
            pos += n_bytes
            grids[utt_id] = np.frombuffer(block, dtype="<f8").astype(np.float64).reshape(T, K)
    except struct.error as exc:
        raise ParseError(f"{path}: truncated at byte {pos}: {exc}") from exc
    return grids
