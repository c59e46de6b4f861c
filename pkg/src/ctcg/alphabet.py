"""Symbol inventory with an implicit trailing blank.

The blank label has no string form: target sequences are written with the
non-blank symbols only, and the blank always occupies the last index
``num_labels`` so that model outputs, masks, and caches agree on layout.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

from .errors import InvalidConfigError, ParseError, UnknownSymbolError


@dataclass(frozen=True)
class Alphabet:
    """Ordered non-blank symbols plus the set ignored during spike extraction.

    ``extra_ignored`` names symbols (for example a silence marker) that are
    skipped by spike extraction in addition to the blank, which is always
    ignored.
    """

    symbols: tuple[str, ...]
    extra_ignored: frozenset[str] = field(default_factory=frozenset)

    def __post_init__(self) -> None:
        if not self.symbols:
            raise InvalidConfigError("alphabet needs at least one symbol")
        if len(set(self.symbols)) != len(self.symbols):
            raise InvalidConfigError("alphabet symbols must be unique")
        for sym in self.symbols:
            if not sym or any(ch.isspace() for ch in sym):
                raise InvalidConfigError(f"bad symbol {sym!r}: empty or contains whitespace")
        unknown = set(self.extra_ignored) - set(self.symbols)
        if unknown:
            raise InvalidConfigError(f"ignored symbols not in alphabet: {sorted(unknown)}")

    @cached_property
    def _index(self) -> dict[str, int]:
        return {sym: i for i, sym in enumerate(self.symbols)}

    @property
    def num_labels(self) -> int:
        return len(self.symbols)

    @property
    def blank_id(self) -> int:
        return len(self.symbols)

    @property
    def num_symbols(self) -> int:
        """Output dimension: labels plus the blank."""
        return len(self.symbols) + 1

    @cached_property
    def ignore_ids(self) -> frozenset[int]:
        return frozenset({self.blank_id} | {self._index[s] for s in self.extra_ignored})

    def lookup(self, symbol: str) -> int:
        try:
            return self._index[symbol]
        except KeyError:
            raise UnknownSymbolError(f"unknown symbol {symbol!r}") from None

    def symbol(self, index: int) -> str:
        if not 0 <= index < self.num_labels:
            raise UnknownSymbolError(f"index {index} has no symbol (blank has no string form)")
        return self.symbols[index]

    def encode(self, tokens: Iterable[str]) -> tuple[int, ...]:
        return tuple(self.lookup(tok) for tok in tokens)

    def decode(self, ids: Iterable[int]) -> tuple[str, ...]:
        return tuple(self.symbol(i) for i in ids)

    def with_ignored(self, symbols: Sequence[str]) -> "Alphabet":
        """Copy of this alphabet with additional spike-extraction ignores."""
        return Alphabet(self.symbols, self.extra_ignored | frozenset(symbols))

    def save(self, path: str | Path) -> None:
        Path(path).write_text("".join(f"{sym}\n" for sym in self.symbols), encoding="utf-8")

    @classmethod
    def from_file(cls, path: str | Path, extra_ignored: Sequence[str] = ()) -> "Alphabet":
        """Load a plain-text alphabet, one symbol per line; blank is implicit."""
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        symbols = tuple(line.strip() for line in lines if line.strip())
        if not symbols:
            raise ParseError(f"{path}: no symbols found")
        return cls(symbols, frozenset(extra_ignored))
