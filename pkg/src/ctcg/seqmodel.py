"""Recurrent sequence model mapping feature frames to per-frame posteriors.

The model is a stack of gated recurrent layers (input, forget, output, and
candidate gates; no peepholes) followed by an affine projection and a
per-frame softmax. Unidirectional stacks see only past context; bidirectional
stacks run each layer in both directions and concatenate the hidden states.
All parameters live in one flat float64 vector so the optimizer can treat
the model as a single point in parameter space.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from typing import BinaryIO

import numpy as np

from . import _kernels
from .errors import (
    BadCheckpointError,
    DimensionMismatchError,
    InvalidConfigError,
    TraceMismatchError,
)

UNIDIRECTIONAL = "unidirectional"
BIDIRECTIONAL = "bidirectional"

CHECKPOINT_MAGIC = b"CTCG"
CHECKPOINT_VERSION = 1
_HEADER = struct.Struct("<4sIIIIBIqQ")


def uniform_init_scale(fan_in: int) -> float:
    """Half-width of the init distribution: inverse square root of fan-in."""
    if fan_in <= 0:
        raise InvalidConfigError(f"fan-in must be positive, got {fan_in}")
    return 1.0 / math.sqrt(fan_in)


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int
    hidden_dim: int
    num_layers: int
    direction: str
    output_dim: int
    seed: int

    def __post_init__(self) -> None:
        for name in ("input_dim", "hidden_dim", "num_layers", "output_dim"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 1:
                raise InvalidConfigError(f"{name} must be a positive integer, got {value!r}")
        if self.direction not in (UNIDIRECTIONAL, BIDIRECTIONAL):
            raise InvalidConfigError(
                f"direction must be {UNIDIRECTIONAL!r} or {BIDIRECTIONAL!r}, got {self.direction!r}"
            )
        if not isinstance(self.seed, int):
            raise InvalidConfigError(f"seed must be an integer, got {self.seed!r}")

    @property
    def num_directions(self) -> int:
        return 2 if self.direction == BIDIRECTIONAL else 1

    def layer_input_dim(self, layer: int) -> int:
        return self.input_dim if layer == 0 else self.hidden_dim * self.num_directions


@dataclass(frozen=True)
class _Block:
    """One contiguous slice of the flat parameter vector."""

    offset: int
    shape: tuple[int, ...]
    fan_in: int

    @property
    def size(self) -> int:
        n = 1
        for d in self.shape:
            n *= d
        return n


def _layout(config: ModelConfig) -> list[_Block]:
    """Blocks in storage order: per layer, per direction, W then b; output last."""
    blocks: list[_Block] = []
    offset = 0
    H = config.hidden_dim
    for layer in range(config.num_layers):
        din = config.layer_input_dim(layer)
        fan_in = din + H
        for _ in range(config.num_directions):
            for shape in ((4 * H, din + H), (4 * H,)):
                blocks.append(_Block(offset, shape, fan_in))
                offset += blocks[-1].size
    out_in = H * config.num_directions
    blocks.append(_Block(offset, (config.output_dim, out_in), out_in))
    offset += blocks[-1].size
    blocks.append(_Block(offset, (config.output_dim,), out_in))
    return blocks


def param_count(config: ModelConfig) -> int:
    blocks = _layout(config)
    last = blocks[-1]
    return last.offset + last.size


@dataclass(frozen=True)
class ForwardTrace:
    """Activations retained by forward for the matching backward call.

    layer_states holds, per layer and direction, the tuple
    (inputs, gates, cells, hiddens) in that direction's processing order.
    """

    features: np.ndarray
    layer_states: tuple[tuple[tuple[np.ndarray, ...], ...], ...]
    final_hidden: np.ndarray
    grid: np.ndarray
    param_fingerprint: int


@dataclass
class SequenceModel:
    config: ModelConfig
    parameters: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        expected = param_count(self.config)
        if self.parameters.shape != (expected,):
            raise InvalidConfigError(
                f"parameter vector has shape {self.parameters.shape}, expected ({expected},)"
            )
        if self.parameters.dtype != np.float64:
            raise InvalidConfigError("parameters must be float64")
        if not np.all(np.isfinite(self.parameters)):
            raise InvalidConfigError("parameters must be finite")

    def _views(self) -> list[np.ndarray]:
        return [
            self.parameters[b.offset : b.offset + b.size].reshape(b.shape)
            for b in _layout(self.config)
        ]

    def forward(self, features: np.ndarray) -> tuple[np.ndarray, ForwardTrace]:
        x = np.ascontiguousarray(features, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.config.input_dim:
            raise DimensionMismatchError(
                f"features must be (T, {self.config.input_dim}), got {features.shape}"
            )
        if x.shape[0] < 1:
            raise DimensionMismatchError("need at least one frame")
        if not np.all(np.isfinite(x)):
            raise DimensionMismatchError("features must be finite")

        views = self._views()
        dirs = self.config.num_directions
        layer_states: list[tuple[tuple[np.ndarray, ...], ...]] = []
        inp = x
        vi = 0
        for _ in range(self.config.num_layers):
            per_dir: list[tuple[np.ndarray, ...]] = []
            outs: list[np.ndarray] = []
            for d in range(dirs):
                w, b = views[vi], views[vi + 1]
                vi += 2
                seq = inp if d == 0 else np.ascontiguousarray(inp[::-1])
                gates, cells, hiddens = _kernels.lstm_forward(seq, w, b)
                per_dir.append((seq, gates, cells, hiddens))
                outs.append(hiddens if d == 0 else hiddens[::-1])
            layer_states.append(tuple(per_dir))
            inp = outs[0] if dirs == 1 else np.ascontiguousarray(np.concatenate(outs, axis=1))
        w_out, b_out = views[vi], views[vi + 1]
        logits = _kernels.linear_forward(inp, w_out, b_out)
        shifted = logits - logits.max(axis=1, keepdims=True)
        expd = np.exp(shifted)
        grid = expd / expd.sum(axis=1, keepdims=True)
        trace = ForwardTrace(
            features=x,
            layer_states=tuple(layer_states),
            final_hidden=inp,
            grid=grid,
            param_fingerprint=len(self.parameters),
        )
        return grid, trace

    def backward(self, trace: ForwardTrace, grad_wrt_grid: np.ndarray) -> np.ndarray:
        g = np.asarray(grad_wrt_grid, dtype=np.float64)
        if g.shape != trace.grid.shape:
            raise TraceMismatchError(
                f"gradient shape {g.shape} does not match trace grid shape {trace.grid.shape}"
            )
        if trace.param_fingerprint != len(self.parameters):
            raise TraceMismatchError("trace was produced by a model with a different layout")

        # softmax Jacobian: dlogits = grid * (g - sum(g * grid, row))
        grid = trace.grid
        inner = np.sum(g * grid, axis=1, keepdims=True)
        dlogits = np.ascontiguousarray(grid * (g - inner))

        views = self._views()
        blocks = _layout(self.config)
        grad = np.zeros_like(self.parameters)

        def gview(i: int) -> np.ndarray:
            b = blocks[i]
            return grad[b.offset : b.offset + b.size].reshape(b.shape)

        vi = len(views) - 2
        dh, dw_out, db_out = _kernels.linear_backward(trace.final_hidden, views[vi], dlogits)
        gview(vi)[:] = dw_out
        gview(vi + 1)[:] = db_out

        dirs = self.config.num_directions
        H = self.config.hidden_dim
        for layer in range(self.config.num_layers - 1, -1, -1):
            vi -= 2 * dirs
            dinp_total: np.ndarray | None = None
            for d in range(dirs):
                seq, gates, cells, hiddens = trace.layer_states[layer][d]
                dh_dir = dh[:, d * H : (d + 1) * H]
                if d == 1:
                    dh_dir = dh_dir[::-1]
                dseq, dw, db = _kernels.lstm_backward(
                    seq, views[vi + 2 * d], gates, cells, hiddens, np.ascontiguousarray(dh_dir)
                )
                gview(vi + 2 * d)[:] = dw
                gview(vi + 2 * d + 1)[:] = db
                if d == 1:
                    dseq = dseq[::-1]
                dinp_total = dseq if dinp_total is None else dinp_total + dseq
            dh = np.ascontiguousarray(dinp_total)
        return grad

    def reinit_output_layer(self, seed: int) -> None:
        """Resample the output projection; used when warm-starting encoders."""
        blocks = _layout(self.config)
        rng = np.random.default_rng(seed)
        for b in blocks[-2:]:
            eps = uniform_init_scale(b.fan_in)
            self.parameters[b.offset : b.offset + b.size] = rng.uniform(-eps, eps, b.size)

    def copy(self) -> "SequenceModel":
        return SequenceModel(self.config, self.parameters.copy())


def init_model(config: ModelConfig) -> SequenceModel:
    rng = np.random.default_rng(config.seed)
    params = np.empty(param_count(config))
    for b in _layout(config):
        eps = uniform_init_scale(b.fan_in)
        params[b.offset : b.offset + b.size] = rng.uniform(-eps, eps, b.size)
    return SequenceModel(config, params)


def save_checkpoint(model: SequenceModel, path) -> None:
    with open(path, "wb") as fh:
        _write_checkpoint(model, fh)


def _write_checkpoint(model: SequenceModel, fh: BinaryIO) -> None:
    c = model.config
    fh.write(
        _HEADER.pack(
            CHECKPOINT_MAGIC,
            CHECKPOINT_VERSION,
            c.input_dim,
            c.hidden_dim,
            c.num_layers,
            1 if c.direction == BIDIRECTIONAL else 0,
            c.output_dim,
            c.seed,
            len(model.parameters),
        )
    )
    fh.write(model.parameters.astype("<f8").tobytes())


def load_checkpoint(path) -> SequenceModel:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise BadCheckpointError(f"{path}: truncated header")
    magic, version, input_dim, hidden_dim, num_layers, dir_flag, output_dim, seed, n = (
        _HEADER.unpack_from(raw)
    )
    if magic != CHECKPOINT_MAGIC:
        raise BadCheckpointError(f"{path}: bad magic {magic!r}")
    if version != CHECKPOINT_VERSION:
        raise BadCheckpointError(f"{path}: unsupported version {version}")
    config = ModelConfig(
        input_dim=input_dim,
        hidden_dim=hidden_dim,
        num_layers=num_layers,
        direction=BIDIRECTIONAL if dir_flag else UNIDIRECTIONAL,
        output_dim=output_dim,
        seed=seed,
    )
    expected = param_count(config)
    if n != expected:
        raise BadCheckpointError(f"{path}: header claims {n} parameters, layout needs {expected}")
    body = raw[_HEADER.size :]
    if len(body) != 8 * n:
        raise BadCheckpointError(f"{path}: parameter block is {len(body)} bytes, expected {8 * n}")
    params = np.frombuffer(body, dtype="<f8").astype(np.float64)
    return SequenceModel(config, params)


def warm_start(checkpoint_path, output_seed: int) -> SequenceModel:
    """Load a trained encoder and resample only its output layer."""
    model = load_checkpoint(checkpoint_path)
    model.reinit_output_layer(output_seed)
    return model
