"""Recurrent model: init, forward/backward, context handling, checkpoints."""
import math

import numpy as np
import pytest

from ctcg.errors import (
    BadCheckpointError,
    DimensionMismatchError,
    InvalidConfigError,
    TraceMismatchError,
)
from ctcg.seqmodel import (
    BIDIRECTIONAL,
    CHECKPOINT_MAGIC,
    UNIDIRECTIONAL,
    ModelConfig,
    init_model,
    load_checkpoint,
    param_count,
    save_checkpoint,
    uniform_init_scale,
    warm_start,
)

SCALE_240 = 0.06454972243679028  # 1/sqrt(240), frozen from independent evaluation


def small_config(**overrides) -> ModelConfig:
    base = dict(
        input_dim=3,
        hidden_dim=6,
        num_layers=2,
        direction=UNIDIRECTIONAL,
        output_dim=4,
        seed=7,
    )
    base.update(overrides)
    return ModelConfig(**base)


def random_features(config: ModelConfig, num_frames: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng([seed, 99])
    return rng.normal(0.0, 1.0, (num_frames, config.input_dim))


def output_block_size(config: ModelConfig) -> int:
    """Size of the final projection (weights + bias), from the documented layout."""
    out_in = config.hidden_dim * (2 if config.direction == BIDIRECTIONAL else 1)
    return config.output_dim * out_in + config.output_dim


# ---------------------------------------------------------------- init scale


def test_uniform_init_scale_example():
    assert uniform_init_scale(240) == pytest.approx(SCALE_240, abs=1e-15)


def test_uniform_init_scale_rejects_nonpositive():
    with pytest.raises(InvalidConfigError):
        uniform_init_scale(0)
    with pytest.raises(InvalidConfigError):
        uniform_init_scale(-5)


def test_config_rejects_zero_hidden_dim():
    with pytest.raises(InvalidConfigError):
        small_config(hidden_dim=0)


def test_config_rejects_unknown_direction():
    with pytest.raises(InvalidConfigError):
        small_config(direction="forwards")


def test_config_rejects_non_integer_fields():
    with pytest.raises(InvalidConfigError):
        small_config(num_layers=1.5)
    with pytest.raises(InvalidConfigError):
        small_config(seed="zero")


def test_param_count_hand_computed():
    # One layer, unidirectional: gates (4H x (din+H)) + bias 4H, output KxH + K.
    uni = ModelConfig(3, 2, 1, UNIDIRECTIONAL, 4, 0)
    assert param_count(uni) == (8 * 5 + 8) + (4 * 2 + 4)
    # Bidirectional doubles the recurrent blocks and the projection fan-in.
    bi = ModelConfig(3, 2, 1, BIDIRECTIONAL, 4, 0)
    assert param_count(bi) == 2 * (8 * 5 + 8) + (4 * 4 + 4)


def test_init_is_deterministic():
    a = init_model(small_config())
    b = init_model(small_config())
    assert np.array_equal(a.parameters, b.parameters)
    c = init_model(small_config(seed=8))
    assert not np.array_equal(a.parameters, c.parameters)


def test_init_respects_per_block_scale():
    # Layer-0 fan-in is input_dim + hidden_dim = 232 + 8 = 240.
    config = ModelConfig(232, 8, 1, UNIDIRECTIONAL, 4, 3)
    model = init_model(config)
    first_block = 4 * 8 * 240 + 4 * 8  # gate weights plus bias
    head = np.abs(model.parameters[:first_block])
    assert head.max() <= SCALE_240
    assert head.max() > 0.95 * SCALE_240  # uniform draws should come close
    assert np.abs(model.parameters).max() <= uniform_init_scale(8)


# ---------------------------------------------------------------- forward


def test_forward_rows_are_distributions():
    model = init_model(small_config())
    grid, _ = model.forward(random_features(model.config, 9, seed=1))
    assert grid.shape == (9, 4)
    assert np.all(grid > 0.0)
    assert np.all(grid < 1.0)
    np.testing.assert_allclose(grid.sum(axis=1), np.ones(9), atol=1e-12, rtol=0)


def test_forward_rejects_bad_features():
    model = init_model(small_config())
    with pytest.raises(DimensionMismatchError):
        model.forward(np.zeros((4, 5)))
    with pytest.raises(DimensionMismatchError):
        model.forward(np.zeros(3))
    with pytest.raises(DimensionMismatchError):
        model.forward(np.zeros((0, 3)))
    bad = np.zeros((4, 3))
    bad[2, 1] = np.nan
    with pytest.raises(DimensionMismatchError):
        model.forward(bad)


def test_forward_is_deterministic():
    model = init_model(small_config())
    feats = random_features(model.config, 7, seed=2)
    grid_a, _ = model.forward(feats)
    grid_b, _ = model.forward(feats)
    assert np.array_equal(grid_a, grid_b)


def test_unidirectional_output_ignores_future_frames():
    model = init_model(small_config())
    feats = random_features(model.config, 6, seed=3)
    grid_a, _ = model.forward(feats)
    changed = feats.copy()
    changed[4:] += 10.0
    grid_b, _ = model.forward(changed)
    assert np.array_equal(grid_a[:4], grid_b[:4])
    assert not np.array_equal(grid_a[4:], grid_b[4:])


def test_bidirectional_output_sees_future_frames():
    model = init_model(small_config(direction=BIDIRECTIONAL, num_layers=1))
    feats = random_features(model.config, 6, seed=4)
    grid_a, _ = model.forward(feats)
    changed = feats.copy()
    changed[-1] += 1.0
    grid_b, _ = model.forward(changed)
    assert np.abs(grid_a[0] - grid_b[0]).max() > 1e-9


# ---------------------------------------------------------------- backward


def test_backward_zero_gradient_is_zero():
    model = init_model(small_config())
    _, trace = model.forward(random_features(model.config, 5, seed=5))
    grad = model.backward(trace, np.zeros_like(trace.grid))
    assert np.array_equal(grad, np.zeros_like(model.parameters))


def test_backward_is_linear_in_upstream_gradient():
    model = init_model(small_config())
    _, trace = model.forward(random_features(model.config, 5, seed=6))
    rng = np.random.default_rng([6, 1])
    g1 = rng.normal(0.0, 1.0, trace.grid.shape)
    g2 = rng.normal(0.0, 1.0, trace.grid.shape)
    combined = model.backward(trace, 2.0 * g1 - 3.0 * g2)
    separate = 2.0 * model.backward(trace, g1) - 3.0 * model.backward(trace, g2)
    np.testing.assert_allclose(combined, separate, atol=1e-12, rtol=0)


def test_backward_is_deterministic():
    model = init_model(small_config())
    _, trace = model.forward(random_features(model.config, 5, seed=7))
    g = np.random.default_rng([7, 1]).normal(0.0, 1.0, trace.grid.shape)
    assert np.array_equal(model.backward(trace, g), model.backward(trace, g))


def test_backward_rejects_mismatched_gradient_shape():
    model = init_model(small_config())
    _, trace = model.forward(random_features(model.config, 5, seed=8))
    with pytest.raises(TraceMismatchError):
        model.backward(trace, np.zeros((5, 3)))


def test_backward_rejects_trace_from_other_layout():
    donor = init_model(small_config(hidden_dim=4))
    recipient = init_model(small_config(hidden_dim=6))
    _, trace = donor.forward(random_features(donor.config, 5, seed=9))
    with pytest.raises(TraceMismatchError):
        recipient.backward(trace, np.zeros_like(trace.grid))


def finite_difference_agreement(config: ModelConfig, num_frames: int) -> float:
    """Fraction of parameter coordinates where backward matches central differences."""
    model = init_model(config)
    rng = np.random.default_rng([config.seed, 11])
    feats = rng.normal(0.0, 1.0, (num_frames, config.input_dim))
    probe = rng.normal(0.0, 1.0, (num_frames, config.output_dim))
    _, trace = model.forward(feats)
    grad = model.backward(trace, probe)
    step = 1e-5
    agree = considered = 0
    for i in range(model.parameters.size):
        original = model.parameters[i]
        model.parameters[i] = original + step
        up, _ = model.forward(feats)
        model.parameters[i] = original - step
        down, _ = model.forward(feats)
        model.parameters[i] = original
        estimate = (np.sum(probe * up) - np.sum(probe * down)) / (2.0 * step)
        if abs(grad[i]) <= 1e-8 and abs(estimate) <= 1e-8:
            continue
        considered += 1
        rel = abs(grad[i] - estimate) / max(abs(grad[i]), abs(estimate))
        if rel < 1e-4:
            agree += 1
    assert considered > 100
    return agree / considered


def test_gradient_matches_finite_differences_unidirectional():
    config = small_config()  # two stacked layers
    assert finite_difference_agreement(config, num_frames=5) >= 0.99


def test_gradient_matches_finite_differences_bidirectional():
    config = small_config(hidden_dim=5, num_layers=1, direction=BIDIRECTIONAL)
    assert finite_difference_agreement(config, num_frames=5) >= 0.99


# ---------------------------------------------------------------- persistence


def test_checkpoint_round_trip_is_bit_exact(tmp_path):
    model = init_model(small_config(direction=BIDIRECTIONAL))
    path = tmp_path / "model.ckpt"
    save_checkpoint(model, path)
    loaded = load_checkpoint(path)
    assert loaded.config == model.config
    assert np.array_equal(loaded.parameters, model.parameters)
    feats = random_features(model.config, 6, seed=10)
    assert np.array_equal(model.forward(feats)[0], loaded.forward(feats)[0])
    # Saving the loaded model reproduces the original file byte for byte.
    second = tmp_path / "again.ckpt"
    save_checkpoint(loaded, second)
    assert path.read_bytes() == second.read_bytes()


def test_load_checkpoint_rejects_corruption(tmp_path):
    model = init_model(small_config())
    path = tmp_path / "model.ckpt"
    save_checkpoint(model, path)
    raw = path.read_bytes()
    assert raw[:4] == CHECKPOINT_MAGIC

    truncated_header = tmp_path / "short.ckpt"
    truncated_header.write_bytes(raw[:8])
    with pytest.raises(BadCheckpointError):
        load_checkpoint(truncated_header)

    bad_magic = tmp_path / "magic.ckpt"
    bad_magic.write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(BadCheckpointError):
        load_checkpoint(bad_magic)

    truncated_body = tmp_path / "body.ckpt"
    truncated_body.write_bytes(raw[:-16])
    with pytest.raises(BadCheckpointError):
        load_checkpoint(truncated_body)


def test_warm_start_keeps_encoder_and_resamples_head(tmp_path):
    model = init_model(small_config())
    path = tmp_path / "model.ckpt"
    save_checkpoint(model, path)
    boundary = param_count(model.config) - output_block_size(model.config)

    warmed = warm_start(path, output_seed=123)
    assert np.array_equal(warmed.parameters[:boundary], model.parameters[:boundary])
    assert not np.array_equal(warmed.parameters[boundary:], model.parameters[boundary:])

    again = warm_start(path, output_seed=123)
    assert np.array_equal(warmed.parameters, again.parameters)
    other = warm_start(path, output_seed=124)
    assert not np.array_equal(warmed.parameters[boundary:], other.parameters[boundary:])


def test_copy_is_independent():
    model = init_model(small_config())
    clone = model.copy()
    clone.parameters[0] += 1.0
    assert model.parameters[0] != clone.parameters[0]
