"""Spike extraction, pairwise coverage ratios, and posterior CSV dumps.

A spike is a frame whose winning posterior belongs to a non-ignored symbol
(the blank and any designated filler symbols never spike). Coverage asks
how many of one model's spikes the other model reproduces at the same
frame, optionally within a small window, optionally ignoring the symbol
identity.
"""
from __future__ import annotations

import csv
from typing import Mapping, Sequence

import numpy as np

from .alphabet import Alphabet
from .data import Dataset
from .errors import EmptySpikeSetError, OutOfRangeError, ParseError, ShapeMismatchError
from .util import ordered_map

Spike = tuple[int, int]


def extract_spikes(
    grid: np.ndarray, alphabet: Alphabet, threshold: float = 0.0
) -> list[Spike]:
    """(frame, symbol) pairs where a non-ignored symbol wins the frame with
    posterior at least threshold."""
    if not 0.0 <= threshold <= 1.0:
        raise OutOfRangeError(f"threshold must be in [0, 1], got {threshold}")
    grid = np.asarray(grid)
    ignore = alphabet.ignore_ids
    spikes: list[Spike] = []
    winners = np.argmax(grid, axis=1)
    for t, k in enumerate(winners.tolist()):
        if k not in ignore and grid[t, k] >= threshold:
            spikes.append((t, k))
    return spikes


def compute_spike_sets(
    model, dataset: Dataset, threshold: float = 0.0
) -> dict[str, list[Spike]]:
    """Spikes for every utterance, keyed by utterance id."""

    def one(utt):
        grid, _ = model.forward(utt.features)
        return extract_spikes(grid, dataset.alphabet, threshold)

    results = ordered_map(one, dataset.utterances)
    return {utt.id: spikes for utt, spikes in zip(dataset.utterances, results)}


def coverage_ratio(
    spikes_a: Mapping[str, Sequence[Spike]],
    spikes_b: Mapping[str, Sequence[Spike]],
    window: int = 0,
    match_symbol: bool = True,
) -> float:
    """Percentage of A's spikes that B reproduces. Directional: A covered by B.

    A spike (t, s) counts as covered when B has a spike within `window`
    frames of t, carrying the same symbol when match_symbol is set.
    """
    if set(spikes_a) != set(spikes_b):
        raise ShapeMismatchError("spike sets cover different utterances")
    if window < 0:
        raise OutOfRangeError(f"window must be >= 0, got {window}")
    total = 0
    covered = 0
    for utt_id, a_list in spikes_a.items():
        b_list = spikes_b[utt_id]
        by_frame: dict[int, set[int]] = {}
        for t, s in b_list:
            by_frame.setdefault(t, set()).add(s)
        for t, s in a_list:
            total += 1
            for dt in range(-window, window + 1):
                cands = by_frame.get(t + dt)
                if cands and (not match_symbol or s in cands):
                    covered += 1
                    break
    if total == 0:
        raise EmptySpikeSetError("the covered spike set is empty")
    return 100.0 * covered / total


def dump_posterior_csv(grid: np.ndarray, path) -> None:
    """frame column plus one generically named column per symbol; values at
    17 significant digits so parsing reproduces the float64 bits."""
    grid = np.asarray(grid, dtype=np.float64)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame"] + [f"symbol_{k}" for k in range(grid.shape[1])])
        for t in range(grid.shape[0]):
            writer.writerow([t] + [f"{v:.17g}" for v in grid[t]])


def read_posterior_csv(path) -> np.ndarray:
    with open(path, "r", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        if not header or header[0] != "frame":
            raise ParseError(f"{path}: expected a 'frame' header column")
        width = len(header) - 1
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != width + 1:
                raise ParseError(f"{path}:{lineno}: expected {width + 1} fields, got {len(row)}")
            try:
                rows.append([float(v) for v in row[1:]])
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: bad float: {exc}") from exc
    return np.array(rows, dtype=np.float64).reshape(len(rows), width)


def dump_posteriors(model, utterance, path) -> None:
    grid, _ = model.forward(utterance.features)
    dump_posterior_csv(grid, path)


def write_coverage_report(rows: Sequence[tuple[str, str, float]], path) -> None:
    """Rows of (pair_name, split, coverage_percent)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["pair_name", "split", "coverage_percent"])
        for pair_name, split, pct in rows:
            writer.writerow([pair_name, split, f"{pct:.17g}"])
