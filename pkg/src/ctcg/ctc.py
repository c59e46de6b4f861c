"""Alignment expansion, collapse, exact loss, gradient, and greedy decoding.

A target sequence y of length L is matched against a frame grid of length T
by summing the probability of every length-T symbol path that collapses to
y (merge consecutive repeats, then drop blanks). The loss is the negative
log of that sum. The efficient path runs a forward-backward recursion in
log space over the blank-augmented state sequence of length 2L + 1; the
brute-force enumerator exists as an oracle for small instances.
"""
from __future__ import annotations

import math
from typing import Iterable, Sequence

import numpy as np

from . import _kernels
from .errors import EmptyReferenceError, InfeasibleError, ShapeMismatchError


def collapse(frames: Sequence[int], blank_id: int) -> list[int]:
    """Merge consecutive repeats, then delete blanks."""
    out: list[int] = []
    prev = -1
    for f in frames:
        if f != prev:
            out.append(f)
        prev = f
    return [s for s in out if s != blank_id]


def min_alignment_length(labels: Sequence[int]) -> int:
    """Shortest T that can realize the labels: L plus one separating blank
    per adjacent equal pair."""
    repeats = sum(1 for a, b in zip(labels, labels[1:]) if a == b)
    return len(labels) + repeats


def _check_labels(labels: Sequence[int], blank_id: int) -> None:
    for s in labels:
        if s == blank_id:
            raise InfeasibleError(f"target contains the blank index {blank_id}")
        if s < 0:
            raise InfeasibleError(f"negative label index {s}")


def expand_alignments(labels: Sequence[int], num_frames: int, blank_id: int) -> list[tuple[int, ...]]:
    """All length-num_frames paths that collapse to labels. Oracle-scale only."""
    _check_labels(labels, blank_id)
    if num_frames < min_alignment_length(labels):
        raise InfeasibleError(
            f"{num_frames} frames cannot realize {len(labels)} labels "
            f"(minimum {min_alignment_length(labels)})"
        )
    labels = list(labels)
    L = len(labels)
    results: list[tuple[int, ...]] = []
    path: list[int] = []

    def rec(t: int, consumed: int, prev: int) -> None:
        if t == num_frames:
            if consumed == L:
                results.append(tuple(path))
            return
        # A new label beyond this frame needs room: pending labels plus a
        # separating blank per adjacent repeat among them.
        pending = labels[consumed:]
        need = min_alignment_length(pending)
        if prev != blank_id and pending and pending[0] == prev:
            need += 1
        if num_frames - t < need:
            return
        path.append(blank_id)
        rec(t + 1, consumed, blank_id)
        path.pop()
        if prev != blank_id:
            path.append(prev)
            rec(t + 1, consumed, prev)
            path.pop()
        if consumed < L and labels[consumed] != prev:
            path.append(labels[consumed])
            rec(t + 1, consumed + 1, labels[consumed])
            path.pop()

    rec(0, 0, blank_id)
    return results


def _resolve_blank(grid: np.ndarray, blank_id: int | None) -> int:
    if blank_id is None:
        return grid.shape[1] - 1
    if not 0 <= blank_id < grid.shape[1]:
        raise InfeasibleError(f"blank index {blank_id} outside grid width {grid.shape[1]}")
    return blank_id


def ctc_loss_bruteforce(grid: np.ndarray, labels: Sequence[int], blank_id: int | None = None) -> float:
    """Loss by explicit enumeration of every valid alignment."""
    grid = np.asarray(grid, dtype=np.float64)
    blank = _resolve_blank(grid, blank_id)
    total = 0.0
    for path in expand_alignments(labels, grid.shape[0], blank):
        p = 1.0
        for t, s in enumerate(path):
            p *= grid[t, s]
        total += p
    if total <= 0.0:
        return math.inf
    return -math.log(total)


def ctc_loss(
    grid: np.ndarray, labels: Sequence[int], blank_id: int | None = None
) -> tuple[float, np.ndarray]:
    """Forward-backward loss and its gradient with respect to grid entries.

    The gradient is dLoss/dGrid; callers chain it through their own output
    nonlinearity. Zero-probability entries are handled (the gradient there
    is finite because path weights exclude the differentiated factor).
    """
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 2 or grid.shape[0] < 1 or grid.shape[1] < 2:
        raise ShapeMismatchError(f"grid must be (T, K) with K >= 2, got {grid.shape}")
    blank = _resolve_blank(grid, blank_id)
    _check_labels(labels, blank)
    for s in labels:
        if s >= grid.shape[1]:
            raise InfeasibleError(f"label index {s} outside grid width {grid.shape[1]}")
    T = grid.shape[0]
    if T < min_alignment_length(labels):
        raise InfeasibleError(
            f"{T} frames cannot realize {len(labels)} labels "
            f"(minimum {min_alignment_length(labels)})"
        )
    L = len(labels)
    ext = np.empty(2 * L + 1, dtype=np.int64)
    ext[0::2] = blank
    ext[1::2] = labels
    can_skip = np.zeros(2 * L + 1, dtype=np.bool_)
    for s in range(2, 2 * L + 1):
        can_skip[s] = ext[s] != blank and ext[s] != ext[s - 2]
    with np.errstate(divide="ignore"):
        lp = np.log(grid)
    loss, grad = _kernels.ctc_loss_grad(np.ascontiguousarray(lp), ext, can_skip)
    return float(loss), grad


def greedy_decode(grid: np.ndarray, blank_id: int | None = None) -> list[int]:
    """Per-frame argmax then collapse; ties break toward the lowest index."""
    grid = np.asarray(grid)
    blank = _resolve_blank(grid, blank_id)
    return collapse(np.argmax(grid, axis=1).tolist(), blank)


def edit_distance(a: Sequence[int], b: Sequence[int]) -> int:
    """Levenshtein distance with unit substitution/insertion/deletion costs."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, sa in enumerate(a, start=1):
        cur = [i]
        for j, sb in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (sa != sb)))
        prev = cur
    return prev[-1]


def sequence_error_rate(
    hypotheses: Iterable[Sequence[int]], references: Iterable[Sequence[int]]
) -> float:
    """100 times total edit distance over total reference length."""
    hyps = list(hypotheses)
    refs = list(references)
    if len(hyps) != len(refs):
        raise ShapeMismatchError(f"{len(hyps)} hypotheses vs {len(refs)} references")
    total_len = sum(len(r) for r in refs)
    if total_len == 0:
        raise EmptyReferenceError("total reference length is zero")
    total_edit = sum(edit_distance(h, r) for h, r in zip(hyps, refs))
    return 100.0 * total_edit / total_len
