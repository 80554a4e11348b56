"""Polytonic character inventory and the character <-> class-index bijection.

Class index 0 is reserved for the CTC blank and never maps to a printable
character. Indices 1..N follow the line order of the charset file.

All text is NFC-normalized at ingestion. NFC also canonicalizes the
visually identical oxia-accented vowels (U+1F71 etc.) onto their tonos
counterparts, so one composed code point equals one class.
"""

from __future__ import annotations

import unicodedata
from dataclasses import dataclass, field
from importlib import resources

BLANK_INDEX = 0


class CharsetError(ValueError):
    """Raised for malformed charset files or out-of-charset text."""


def normalize_text(text: str) -> str:
    """NFC-normalize text; one composed code point per character class."""
    return unicodedata.normalize("NFC", text)


@dataclass(frozen=True)
class Charset:
    """Immutable bijection between characters and class indices 1..N."""

    chars: tuple[str, ...]
    _index: dict[str, int] = field(repr=False, compare=False, default_factory=dict)

    def __post_init__(self):
        index = {c: i + 1 for i, c in enumerate(self.chars)}
        if len(index) != len(self.chars):
            raise CharsetError("duplicate characters in charset")
        object.__setattr__(self, "_index", index)

    @property
    def size(self) -> int:
        """Total class count including the blank at index 0."""
        return len(self.chars) + 1

    @property
    def blank_index(self) -> int:
        return BLANK_INDEX

    def __contains__(self, char: str) -> bool:
        return char in self._index

    def encode(self, text: str) -> list[int]:
        text = normalize_text(text)
        out = []
        for ch in text:
            idx = self._index.get(ch)
            if idx is None:
                raise CharsetError(
                    f"character {ch!r} (U+{ord(ch):04X}) is not in the charset"
                )
            out.append(idx)
        return out

    def decode(self, indices: list[int]) -> str:
        chars = []
        for idx in indices:
            if not 1 <= idx <= len(self.chars):
                raise CharsetError(f"index {idx} out of range [1, {len(self.chars)}]")
            chars.append(self.chars[idx - 1])
        return "".join(chars)

    def encodable(self, text: str) -> bool:
        return all(ch in self._index for ch in normalize_text(text))


def parse_charset(lines: list[str]) -> Charset:
    chars: list[str] = []
    for lineno, raw in enumerate(lines, start=1):
        line = raw.rstrip("\r\n")
        if not line:
            continue
        line = normalize_text(line)
        if len(line) != 1:
            raise CharsetError(f"line {lineno}: expected one character, got {line!r}")
        if line in chars:
            raise CharsetError(f"line {lineno}: duplicate character {line!r}")
        chars.append(line)
    if not chars:
        raise CharsetError("charset file defines no characters")
    return Charset(tuple(chars))


def load_charset(path) -> Charset:
    """Load a charset file: UTF-8, one character per non-empty line."""
    with open(path, encoding="utf-8") as fh:
        return parse_charset(fh.readlines())


def load_default_charset() -> Charset:
    """The shipped polytonic charset (Greek + Greek Extended + punctuation)."""
    text = resources.files("kalchas.assets").joinpath("charset_polytonic.txt").read_text("utf-8")
    return parse_charset(text.splitlines(keepends=True))


def fold_oxia(text: str) -> str:
    """Canonicalize oxia accent variants to tonos (a plain NFC pass)."""
    return normalize_text(text)
