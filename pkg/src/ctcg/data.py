"""Dataset container, on-disk format, and the synthetic labeling task.

The synthetic task stands in for a speech corpus: each alphabet symbol owns
a fixed prototype feature vector; an utterance is a symbol sequence where
every symbol is held for a few frames and every frame is the prototype plus
Gaussian noise. The task is alignment-free by construction (targets carry
no segment boundaries), which is exactly the regime the alignment loss is
built for.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .alphabet import Alphabet
from .ctc import min_alignment_length
from .errors import (
    EmptyDatasetError,
    InvalidConfigError,
    ParseError,
    UnknownSymbolError,
    UnknownUtteranceError,
)

DATASET_MAGIC = "CTCD 1"


@dataclass(frozen=True)
class Utterance:
    id: str
    features: np.ndarray
    target: tuple[int, ...]

    def __post_init__(self) -> None:
        if not self.id or any(c.isspace() for c in self.id):
            raise InvalidConfigError(f"utterance id must be a non-empty token, got {self.id!r}")
        if self.features.ndim != 2 or self.features.shape[0] < 1:
            raise InvalidConfigError(f"features must be (T, D) with T >= 1, got {self.features.shape}")
        if not np.all(np.isfinite(self.features)):
            raise InvalidConfigError(f"utterance {self.id}: non-finite features")
        if self.num_frames < min_alignment_length(self.target):
            raise InvalidConfigError(
                f"utterance {self.id}: {self.num_frames} frames cannot realize "
                f"{len(self.target)} labels"
            )

    @property
    def num_frames(self) -> int:
        return self.features.shape[0]


@dataclass(frozen=True)
class Dataset:
    alphabet: Alphabet
    utterances: tuple[Utterance, ...]

    def __post_init__(self) -> None:
        seen: set[str] = set()
        for utt in self.utterances:
            if utt.id in seen:
                raise InvalidConfigError(f"duplicate utterance id {utt.id!r}")
            seen.add(utt.id)
            for s in utt.target:
                if not 0 <= s < self.alphabet.num_labels:
                    raise InvalidConfigError(
                        f"utterance {utt.id}: label index {s} outside alphabet"
                    )

    def __len__(self) -> int:
        return len(self.utterances)

    def __iter__(self) -> Iterator[Utterance]:
        return iter(self.utterances)

    @property
    def input_dim(self) -> int:
        if not self.utterances:
            raise EmptyDatasetError("empty dataset has no input dimension")
        return self.utterances[0].features.shape[1]

    def by_id(self, utt_id: str) -> Utterance:
        for utt in self.utterances:
            if utt.id == utt_id:
                return utt
        raise UnknownUtteranceError(f"no utterance with id {utt_id!r}")


PROTOTYPE_STDDEV = 0.3
"""Scale of the per-symbol prototype vectors.

Deliberately below the default noise floor: a single frame then carries only
weak class evidence, so a model has to integrate several frames before it can
commit to a symbol. That pressure is what makes trained posteriors spiky and
leaves the spike placement within a segment up to the training run rather
than the data — the regime the guided-alignment machinery is built to study.
"""


@dataclass(frozen=True)
class SyntheticTaskSpec:
    """Parameters of the synthetic labeling task."""

    alphabet_size: int = 6
    input_dim: int = 8
    min_symbols: int = 3
    max_symbols: int = 8
    min_segment_frames: int = 2
    max_segment_frames: int = 6
    noise_stddev: float = 0.3
    seed: int = 0
    allow_repeats: bool = False

    def __post_init__(self) -> None:
        if self.alphabet_size < 1 or self.input_dim < 1:
            raise InvalidConfigError("alphabet_size and input_dim must be positive")
        if not (1 <= self.min_symbols <= self.max_symbols):
            raise InvalidConfigError(
                f"symbol range [{self.min_symbols}, {self.max_symbols}] invalid"
            )
        if not (1 <= self.min_segment_frames <= self.max_segment_frames):
            raise InvalidConfigError(
                f"segment range [{self.min_segment_frames}, {self.max_segment_frames}] invalid"
            )
        if self.noise_stddev < 0:
            raise InvalidConfigError(f"noise_stddev must be >= 0, got {self.noise_stddev}")
        if not self.allow_repeats and self.alphabet_size == 1 and self.max_symbols > 1:
            raise InvalidConfigError(
                "a one-symbol alphabet cannot avoid adjacent repeats; "
                "set allow_repeats or max_symbols=1"
            )

    def make_alphabet(self) -> Alphabet:
        if self.alphabet_size <= 26:
            symbols = tuple(chr(ord("a") + i) for i in range(self.alphabet_size))
        else:
            symbols = tuple(f"s{i}" for i in range(self.alphabet_size))
        return Alphabet(symbols)

    def prototypes(self) -> np.ndarray:
        """Per-symbol prototype vectors, fixed per seed."""
        rng = np.random.default_rng([self.seed, 0])
        return PROTOTYPE_STDDEV * rng.normal(
            0.0, 1.0, (self.alphabet_size, self.input_dim)
        )


def generate_synthetic(
    spec: SyntheticTaskSpec,
    num_utterances: int,
    id_prefix: str = "utt",
    stream: int = 1,
) -> Dataset:
    """Deterministic synthetic dataset. Distinct streams share prototypes but
    draw disjoint utterance randomness, so train and held-out sets can come
    from the same spec."""
    if num_utterances < 0:
        raise InvalidConfigError(f"num_utterances must be >= 0, got {num_utterances}")
    alphabet = spec.make_alphabet()
    protos = spec.prototypes()
    rng = np.random.default_rng([spec.seed, stream])
    utterances = []
    for i in range(num_utterances):
        n_symbols = int(rng.integers(spec.min_symbols, spec.max_symbols + 1))
        labels: list[int] = []
        for _ in range(n_symbols):
            while True:
                s = int(rng.integers(0, spec.alphabet_size))
                if spec.allow_repeats or not labels or s != labels[-1]:
                    break
            labels.append(s)
        durations = rng.integers(
            spec.min_segment_frames, spec.max_segment_frames + 1, n_symbols
        ).tolist()
        # Repeated adjacent labels need a separating blank frame each; pad
        # segments round-robin until the alignment fits.
        deficit = min_alignment_length(labels) - int(sum(durations))
        j = 0
        while deficit > 0:
            durations[j % n_symbols] += 1
            j += 1
            deficit -= 1
        frames = protos[np.repeat(labels, durations)]
        if spec.noise_stddev > 0:
            frames = frames + rng.normal(0.0, spec.noise_stddev, frames.shape)
        utterances.append(
            Utterance(id=f"{id_prefix}{i:05d}", features=frames, target=tuple(labels))
        )
    return Dataset(alphabet=alphabet, utterances=tuple(utterances))


def save_dataset(dataset: Dataset, path) -> None:
    """Text header plus per-utterance records; features as raw little-endian
    float64 blocks for a bit-exact round trip."""
    with open(path, "wb") as fh:
        fh.write(f"{DATASET_MAGIC}\n".encode())
        fh.write(f"symbols {len(dataset.alphabet.symbols)}\n".encode())
        for sym in dataset.alphabet.symbols:
            fh.write(f"{sym}\n".encode())
        dim = dataset.input_dim if dataset.utterances else 0
        fh.write(f"input_dim {dim}\n".encode())
        fh.write(f"count {len(dataset)}\n".encode())
        for utt in dataset:
            labels = " ".join(dataset.alphabet.symbol(s) for s in utt.target)
            fh.write(f"utt {utt.id} {utt.num_frames} {len(utt.target)}\n".encode())
            fh.write(f"{labels}\n".encode())
            fh.write(np.ascontiguousarray(utt.features, dtype="<f8").tobytes())
            fh.write(b"\n")


class _Reader:
    def __init__(self, raw: bytes, path) -> None:
        self.raw = raw
        self.pos = 0
        self.path = path

    def fail(self, message: str) -> ParseError:
        return ParseError(f"{self.path}: byte {self.pos}: {message}")

    def line(self) -> str:
        end = self.raw.find(b"\n", self.pos)
        if end < 0:
            raise self.fail("unexpected end of file")
        try:
            text = self.raw[self.pos : end].decode("utf-8")
        except UnicodeDecodeError as exc:
            raise self.fail(f"undecodable text: {exc}") from exc
        self.pos = end + 1
        return text

    def block(self, n: int) -> bytes:
        chunk = self.raw[self.pos : self.pos + n]
        if len(chunk) != n:
            raise self.fail(f"feature block truncated ({len(chunk)} of {n} bytes)")
        self.pos += n
        return chunk


def _header_int(reader: _Reader, key: str) -> int:
    line = reader.line()
    parts = line.split()
    if len(parts) != 2 or parts[0] != key or not parts[1].lstrip("-").isdigit():
        raise reader.fail(f"expected '{key} <n>', got {line!r}")
    value = int(parts[1])
    if value < 0:
        raise reader.fail(f"{key} must be >= 0, got {value}")
    return value


def load_dataset(path) -> Dataset:
    with open(path, "rb") as fh:
        raw = fh.read()
    reader = _Reader(raw, path)
    if not raw:
        raise reader.fail("missing header (empty file)")
    if reader.line() != DATASET_MAGIC:
        reader.pos = 0
        raise reader.fail(f"missing {DATASET_MAGIC!r} header")
    n_symbols = _header_int(reader, "symbols")
    symbols = tuple(reader.line() for _ in range(n_symbols))
    try:
        alphabet = Alphabet(symbols)
    except InvalidConfigError as exc:
        raise reader.fail(str(exc)) from exc
    input_dim = _header_int(reader, "input_dim")
    count = _header_int(reader, "count")
    utterances = []
    for _ in range(count):
        line = reader.line()
        parts = line.split()
        if len(parts) != 4 or parts[0] != "utt":
            raise reader.fail(f"expected 'utt <id> <T> <L>', got {line!r}")
        utt_id = parts[1]
        if not (parts[2].isdigit() and parts[3].isdigit()):
            raise reader.fail(f"non-numeric frame or label count in {line!r}")
        n_frames, n_labels = int(parts[2]), int(parts[3])
        label_line = reader.line()
        label_syms = label_line.split()
        if len(label_syms) != n_labels:
            raise reader.fail(f"utterance {utt_id}: {len(label_syms)} labels, header says {n_labels}")
        try:
            target = alphabet.encode(label_syms)
        except UnknownSymbolError as exc:
            raise reader.fail(f"utterance {utt_id}: {exc}") from exc
        block = reader.block(8 * n_frames * input_dim)
        features = (
            np.frombuffer(block, dtype="<f8").astype(np.float64).reshape(n_frames, input_dim)
        )
        if reader.block(1) != b"\n":
            raise reader.fail(f"utterance {utt_id}: missing record terminator")
        try:
            utterances.append(Utterance(id=utt_id, features=features, target=tuple(target)))
        except InvalidConfigError as exc:
            raise reader.fail(str(exc)) from exc
    try:
        return Dataset(alphabet=alphabet, utterances=tuple(utterances))
    except InvalidConfigError as exc:
        raise reader.fail(str(exc)) from exc


def split_heldout(dataset: Dataset, heldout_fraction: float = 0.1) -> tuple[Dataset, Dataset]:
    """Deterministic split by hashing utterance ids."""
    if not 0.0 < heldout_fraction < 1.0:
        raise InvalidConfigError(f"heldout_fraction must be in (0, 1), got {heldout_fraction}")
    threshold = int(heldout_fraction * 2**32)
    train, heldout = [], []
    for utt in dataset:
        digest = hashlib.sha1(utt.id.encode("utf-8")).digest()
        bucket = int.from_bytes(digest[:4], "big")
        (heldout if bucket < threshold else train).append(utt)
    return (
        Dataset(dataset.alphabet, tuple(train)),
        Dataset(dataset.alphabet, tuple(heldout)),
    )
