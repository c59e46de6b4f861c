"""Alignment machinery: collapse, expansion, loss vs brute force, decoder."""
import itertools
from functools import lru_cache

import numpy as np
import pytest

from _helpers import random_grid, random_labels, renormalized_fd_check
from ctcg.ctc import (
    collapse,
    ctc_loss,
    ctc_loss_bruteforce,
    edit_distance,
    expand_alignments,
    greedy_decode,
    min_alignment_length,
    sequence_error_rate,
)
from ctcg.errors import (
    EmptyReferenceError,
    InfeasibleError,
    ShapeMismatchError,
)

BLANK = 2  # alphabet {a=0, b=1} plus blank in most tests here

UNIFORM_LOSS = 0.2876820724517809  # -log(3 * 0.25), frozen from 3-path enumeration


def alignment_count(labels: tuple[int, ...], num_frames: int, blank: int) -> int:
    """Independent path counter: dynamic program over (consumed, frame, last)."""

    @lru_cache(maxsize=None)
    def paths(consumed: int, frames_left: int, last: int) -> int:
        if frames_left == 0:
            return 1 if consumed == len(labels) else 0
        total = paths(consumed, frames_left - 1, blank)
        if last != blank:
            total += paths(consumed, frames_left - 1, last)
        if consumed < len(labels) and labels[consumed] != last:
            total += paths(consumed + 1, frames_left - 1, labels[consumed])
        return total

    return paths(0, num_frames, blank)


# ---------------------------------------------------------------- collapse


def test_collapse_merges_repeats_then_drops_blanks():
    assert collapse([0, 0, BLANK, 1], BLANK) == [0, 1]


def test_collapse_all_blank_is_empty():
    assert collapse([BLANK, BLANK, BLANK], BLANK) == []


def test_collapse_blank_separates_repeated_label():
    assert collapse([0, BLANK, 0], BLANK) == [0, 0]


def test_min_alignment_length_counts_required_separators():
    assert min_alignment_length(()) == 0
    assert min_alignment_length((0, 1)) == 2
    assert min_alignment_length((0, 0)) == 3
    assert min_alignment_length((0, 0, 0, 1, 1)) == 8


# ---------------------------------------------------------------- expansion


def test_expand_single_label_two_frames():
    got = expand_alignments((0,), 2, BLANK)
    assert set(map(tuple, got)) == {(0, 0), (0, BLANK), (BLANK, 0)}


def test_expand_repeated_label_forces_separating_blank():
    got = expand_alignments((0, 0), 3, BLANK)
    assert set(map(tuple, got)) == {(0, BLANK, 0)}


def test_expand_infeasible_when_frames_short():
    with pytest.raises(InfeasibleError):
        expand_alignments((0, 1), 1, BLANK)


def test_expand_rejects_blank_in_target():
    with pytest.raises(InfeasibleError):
        expand_alignments((0, BLANK), 4, BLANK)


def test_expansion_soundness_and_count():
    rng = np.random.default_rng(7)
    for _ in range(60):
        num_frames = int(rng.integers(1, 7))
        labels = random_labels(rng, num_frames, 2, 3)
        got = expand_alignments(labels, num_frames, BLANK)
        as_tuples = [tuple(a) for a in got]
        assert len(set(as_tuples)) == len(as_tuples), "duplicate alignments"
        for alignment in as_tuples:
            assert len(alignment) == num_frames
            assert collapse(alignment, BLANK) == list(labels)
        assert len(as_tuples) == alignment_count(labels, num_frames, BLANK)


def test_expansion_matches_exhaustive_filter():
    labels = (0, 1, 0)
    num_frames = 5
    expected = {
        path
        for path in itertools.product(range(3), repeat=num_frames)
        if collapse(path, BLANK) == list(labels)
    }
    got = set(map(tuple, expand_alignments(labels, num_frames, BLANK)))
    assert got == expected


# ---------------------------------------------------------------- brute force


def test_bruteforce_uniform_grid_single_label():
    grid = np.full((2, 2), 0.5)
    loss = ctc_loss_bruteforce(grid, (0,), blank_id=1)
    assert abs(loss - UNIFORM_LOSS) < 1e-12


def test_bruteforce_certain_alignment_gives_zero_loss():
    grid = np.array([[1.0, 0.0], [0.0, 1.0]])  # path [a, blank], probability 1
    assert ctc_loss_bruteforce(grid, (0,), blank_id=1) == 0.0


def test_bruteforce_infeasible():
    grid = np.full((1, 2), 0.5)
    with pytest.raises(InfeasibleError):
        ctc_loss_bruteforce(grid, (0, 0), blank_id=1)


# ---------------------------------------------------------------- loss


def test_loss_uniform_grid_matches_frozen_value():
    grid = np.full((2, 2), 0.5)
    loss, _ = ctc_loss(grid, (0,), blank_id=1)
    assert abs(loss - UNIFORM_LOSS) < 1e-8


def test_loss_empty_target_is_blank_nll():
    rng = np.random.default_rng(0)
    grid = random_grid(rng, 3, 3)
    loss, grad = ctc_loss(grid, (), blank_id=2)
    assert abs(loss - (-np.log(grid[:, 2]).sum())) < 1e-12
    expected = np.zeros_like(grid)
    expected[:, 2] = -1.0 / grid[:, 2]
    assert np.allclose(grad, expected, atol=1e-12)


def test_loss_blank_defaults_to_last_column():
    rng = np.random.default_rng(1)
    grid = random_grid(rng, 4, 3)
    explicit = ctc_loss(grid, (0, 1), blank_id=2)
    implicit = ctc_loss(grid, (0, 1))
    assert explicit[0] == implicit[0]
    assert np.array_equal(explicit[1], implicit[1])


def _lattice_rows(num_symbols: int) -> list[tuple[float, ...]]:
    points = (0.0, 0.5, 1.0)
    return [
        row
        for row in itertools.product(points, repeat=num_symbols)
        if sum(row) == 1.0
    ]


def test_loss_exhaustive_three_point_lattice():
    """Every grid with rows from {0, 1/2, 1} lattice, T<=4, L<=2, V<=2."""
    checked = 0
    for num_labels in (1, 2):
        blank = num_labels
        rows = _lattice_rows(num_labels + 1)
        targets = [
            labels
            for length in range(3)
            for labels in itertools.product(range(num_labels), repeat=length)
        ]
        for num_frames in range(1, 5):
            for grid_rows in itertools.product(rows, repeat=num_frames):
                grid = np.array(grid_rows)
                for labels in targets:
                    if min_alignment_length(labels) > num_frames:
                        continue
                    expected = ctc_loss_bruteforce(grid, labels, blank_id=blank)
                    got, _ = ctc_loss(grid, labels, blank_id=blank)
                    if np.isinf(expected) or np.isinf(got):
                        assert np.isinf(expected) and np.isinf(got)
                    else:
                        assert abs(got - expected) <= 1e-8
                    checked += 1
    assert checked > 10000


def test_loss_matches_bruteforce_random_instances():
    rng = np.random.default_rng(11)
    for _ in range(200):
        num_frames = int(rng.integers(1, 7))
        num_labels = int(rng.integers(1, 4))
        grid = random_grid(rng, num_frames, num_labels + 1)
        labels = random_labels(rng, num_frames, num_labels, 3)
        expected = ctc_loss_bruteforce(grid, labels, blank_id=num_labels)
        got, _ = ctc_loss(grid, labels, blank_id=num_labels)
        assert abs(got - expected) <= 1e-8


def test_loss_nonnegative_and_zero_iff_certain():
    rng = np.random.default_rng(13)
    for _ in range(100):
        num_frames = int(rng.integers(1, 6))
        grid = random_grid(rng, num_frames, 3)
        labels = random_labels(rng, num_frames, 2, 2)
        loss, _ = ctc_loss(grid, labels, blank_id=2)
        assert loss >= 0.0
        assert loss > 0.0  # interior grids spread mass over many paths
    certain = np.zeros((3, 3))
    certain[:, 2] = 1.0
    assert ctc_loss(certain, (), blank_id=2)[0] == 0.0


def test_loss_gradient_matches_renormalized_fd():
    rng = np.random.default_rng(17)
    total_checked = 0
    for _ in range(50):
        num_frames = int(rng.integers(2, 7))
        num_labels = int(rng.integers(1, 4))
        grid = random_grid(rng, num_frames, num_labels + 1)
        labels = random_labels(rng, num_frames, num_labels, 3)
        _, grad = ctc_loss(grid, labels, blank_id=num_labels)
        checked, failed = renormalized_fd_check(
            lambda g: ctc_loss(g, labels, blank_id=num_labels)[0], grid, grad
        )
        total_checked += checked
        assert failed == 0
    assert total_checked > 500


def test_loss_gradient_finite_at_zero_entries():
    grid = np.array([[1.0, 0.0], [0.5, 0.5]])
    loss, grad = ctc_loss(grid, (0,), blank_id=1)
    assert np.isfinite(loss)
    assert np.all(np.isfinite(grad))


def test_loss_infeasible_raises():
    with pytest.raises(InfeasibleError):
        ctc_loss(np.full((1, 2), 0.5), (0, 0), blank_id=1)


# ---------------------------------------------------------------- decoder


def test_greedy_decode_collapses_argmax_path():
    grid = np.array(
        [
            [0.9, 0.05, 0.05],
            [0.8, 0.1, 0.1],
            [0.1, 0.2, 0.7],
            [0.2, 0.7, 0.1],
        ]
    )
    assert greedy_decode(grid, blank_id=2) == [0, 1]


def test_greedy_decode_all_blank_is_empty():
    grid = np.array([[0.1, 0.2, 0.7], [0.0, 0.3, 0.7]])
    assert greedy_decode(grid, blank_id=2) == []


def test_greedy_decode_tie_breaks_to_lowest_index():
    grid = np.array([[0.4, 0.4, 0.2]])
    assert greedy_decode(grid, blank_id=2) == [0]


def test_greedy_decode_invariant_under_monotonic_transform():
    rng = np.random.default_rng(19)
    for _ in range(50):
        grid = random_grid(rng, int(rng.integers(1, 8)), 4)
        squared = grid**2  # strictly monotonic on [0, 1], preserves argmax
        assert greedy_decode(grid) == greedy_decode(squared)


# ---------------------------------------------------------------- metrics


def test_edit_distance_basics():
    assert edit_distance((0, 1, 2), (0, 1, 2)) == 0
    assert edit_distance((), (0, 1)) == 2
    assert edit_distance((0, 2), (0, 1)) == 1
    assert edit_distance((1, 0, 1), (0, 1)) == 1  # delete the leading symbol
    assert edit_distance((2, 2), (0, 1)) == 2  # two substitutions


def test_sequence_error_rate_identity():
    assert sequence_error_rate([(0, 1)], [(0, 1)]) == 0.0


def test_sequence_error_rate_all_deleted():
    assert sequence_error_rate([()], [(0, 1)]) == 100.0


def test_sequence_error_rate_substitution():
    assert sequence_error_rate([(0, 2)], [(0, 1)]) == 50.0


def test_sequence_error_rate_pools_over_utterances():
    hyps = [(0,), (0, 1)]
    refs = [(0,), (0, 2)]
    assert sequence_error_rate(hyps, refs) == pytest.approx(100.0 / 3.0)


def test_sequence_error_rate_can_exceed_100():
    assert sequence_error_rate([(0, 1, 2, 3)], [(9,)]) == 400.0


def test_sequence_error_rate_length_mismatch():
    with pytest.raises(ShapeMismatchError):
        sequence_error_rate([(0,)], [(0,), (1,)])


def test_sequence_error_rate_empty_reference_set():
    with pytest.raises(EmptyReferenceError):
        sequence_error_rate([()], [()])
