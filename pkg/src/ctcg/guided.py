"""Spike-timing masks from a frozen guiding model and the guide loss.

A guiding model's posterior grid is reduced to a binary mask holding a one
at each frame's winning non-blank symbol; frames the guiding model labels
blank contribute nothing. Training a second model with the combined loss
(alignment loss plus guide term) pulls its spike timings onto the mask.
"""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .ctc import ctc_loss
from .errors import (
    AlphabetMismatchError,
    InvalidConfigError,
    ParseError,
    ShapeMismatchError,
)
from .util import ordered_map

LINEAR = "linear"
LOGARITHMIC = "logarithmic"

MASK_MAGIC = b"CTCM"
MASK_VERSION = 1


@dataclass(frozen=True)
class GuidedLossConfig:
    guide_weight: float = 1.0
    variant: str = LINEAR

    def __post_init__(self) -> None:
        if not np.isfinite(self.guide_weight) or self.guide_weight < 0:
            raise InvalidConfigError(f"guide_weight must be finite and >= 0, got {self.guide_weight}")
        if self.variant not in (LINEAR, LOGARITHMIC):
            raise InvalidConfigError(f"variant must be {LINEAR!r} or {LOGARITHMIC!r}, got {self.variant!r}")


def build_mask(guiding_grid: np.ndarray, blank_id: int | None = None) -> np.ndarray:
    """One-hot per frame at the winning non-blank symbol; zero row when the
    blank wins. Blank wins exact ties; non-blank ties go to the lowest index."""
    grid = np.asarray(guiding_grid, dtype=np.float64)
    if grid.ndim != 2 or grid.shape[1] < 2:
        raise ShapeMismatchError(f"grid must be (T, K) with K >= 2, got {grid.shape}")
    blank = grid.shape[1] - 1 if blank_id is None else blank_id
    nonblank = np.delete(grid, blank, axis=1)
    best = np.argmax(nonblank, axis=1)
    best = np.where(best >= blank, best + 1, best)
    rows = np.arange(grid.shape[0])
    keep = grid[rows, best] > grid[:, blank]
    mask = np.zeros(grid.shape, dtype=np.uint8)
    mask[rows[keep], best[keep]] = 1
    return mask


def guide_loss(grid: np.ndarray, mask: np.ndarray, variant: str = LINEAR) -> tuple[float, np.ndarray]:
    """Loss pulling posterior mass onto masked entries, with its grid gradient.

    linear: minus the sum of masked posteriors (gradient -1 at masked entries).
    logarithmic: minus the sum of masked log-posteriors (frame-level
    cross-entropy against the mask; gradient -1/p at masked entries).
    """
    grid = np.asarray(grid, dtype=np.float64)
    m = np.asarray(mask)
    if grid.shape != m.shape:
        raise ShapeMismatchError(f"grid shape {grid.shape} vs mask shape {m.shape}")
    if variant not in (LINEAR, LOGARITHMIC):
        raise InvalidConfigError(f"unknown guide loss variant {variant!r}")
    rows, cols = np.nonzero(m)
    grad = np.zeros_like(grid)
    if variant == LINEAR:
        loss = -float(np.sum(grid[rows, cols]))
        grad[rows, cols] = -1.0
    else:
        picked = grid[rows, cols]
        with np.errstate(divide="ignore"):
            loss = -float(np.sum(np.log(picked)))
            grad[rows, cols] = -1.0 / picked
    return loss, grad


def guided_ctc_loss(
    model_grid: np.ndarray,
    labels,
    mask: np.ndarray,
    cfg: GuidedLossConfig,
    blank_id: int | None = None,
) -> tuple[float, np.ndarray]:
    """Alignment loss plus guide_weight times the guide loss."""
    if cfg.guide_weight == 0.0:
        return ctc_loss(model_grid, labels, blank_id)
    base_loss, base_grad = ctc_loss(model_grid, labels, blank_id)
    g_loss, g_grad = guide_loss(model_grid, mask, cfg.variant)
    return base_loss + cfg.guide_weight * g_loss, base_grad + cfg.guide_weight * g_grad


def precompute_masks(guiding_model, dataset) -> dict[str, np.ndarray]:
    """One mask per utterance from the frozen guiding model's posteriors."""
    if guiding_model.config.output_dim != dataset.alphabet.num_symbols:
        raise AlphabetMismatchError(
            f"guiding model emits {guiding_model.config.output_dim} symbols, "
            f"dataset alphabet has {dataset.alphabet.num_symbols}"
        )

    def one(utt):
        grid, _ = guiding_model.forward(utt.features)
        return build_mask(grid)

    masks = ordered_map(one, dataset.utterances)
    return {utt.id: mask for utt, mask in zip(dataset.utterances, masks)}


def _mask_runs(mask: np.ndarray) -> list[tuple[int, int, int]]:
    """(start_frame, symbol, length) runs of consecutive identical spikes."""
    rows, cols = np.nonzero(mask)
    runs: list[tuple[int, int, int]] = []
    for t, s in zip(rows.tolist(), cols.tolist()):
        if runs and runs[-1][1] == s and runs[-1][0] + runs[-1][2] == t:
            start, sym, length = runs[-1]
            runs[-1] = (start, sym, length + 1)
        else:
            runs.append((t, s, 1))
    return runs


def save_mask_cache(masks: Mapping[str, np.ndarray], path) -> None:
    with open(path, "wb") as fh:
        fh.write(MASK_MAGIC)
        fh.write(struct.pack("<II", MASK_VERSION, len(masks)))
        for utt_id, mask in masks.items():
            encoded = utt_id.encode("utf-8")
            runs = _mask_runs(mask)
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<III", mask.shape[0], mask.shape[1], len(runs)))
            for start, sym, length in runs:
                fh.write(struct.pack("<III", start, sym, length))


def load_mask_cache(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != MASK_MAGIC:
        raise ParseError(f"{path}: bad magic {raw[:4]!r}")
    try:
        version, count = struct.unpack_from("<II", raw, 4)
        if version != MASK_VERSION:
            raise ParseError(f"{path}: unsupported version {version}")
        pos = 12
        masks: dict[str, np.ndarray] = {}
        for _ in range(count):
            (id_len,) = struct.unpack_from("<H", raw, pos)
            pos += 2
            utt_id = raw[pos : pos + id_len].decode("utf-8")
            pos += id_len
            T, K, n_runs = struct.unpack_from("<III", raw, pos)
            pos += 12
            mask = np.zeros((T, K), dtype=np.uint8)
            for _ in range(n_runs):
                start, sym, length = struct.unpack_from("<III", raw, pos)
                pos += 12
                mask[start : start + length, sym] = 1
            masks[utt_id] = mask
    except struct.error as exc:
        raise ParseError(f"{path}: truncated at byte {pos}: {exc}") from exc
    return masks


def export_mask_csv(masks: Mapping[str, np.ndarray], path) -> None:
    """Human-readable dump: one row per spike."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["utterance_id", "frame", "symbol_index"])
        for utt_id, mask in masks.items():
            rows, cols = np.nonzero(mask)
            for t, s in zip(rows.tolist(), cols.tolist()):
                writer.writerow([utt_id, t, s])
