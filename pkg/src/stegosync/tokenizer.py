"""Byte-level token vocabulary and visible-string arithmetic.

A vocabulary maps token ids to byte pieces. Detokenization is concatenative:
the visible string of a token sequence is the concatenation of its pieces.
Several distinct token sequences can share one visible string ("mis"+"trust"
versus "mistrust"); everything downstream exists to handle that ambiguity.

EOS has the empty piece. A sequence ending in EOS is *end-marked*: its visible
string can never be extended, which is what lets a decoder treat it specially.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Iterator, NamedTuple

from .errors import InvalidToken

TokenSeq = tuple[int, ...]


class VisibleString(NamedTuple):
    """Bytes visible on the channel plus the end-of-sequence mark."""

    data: bytes
    end_marked: bool = False

    def extend(self, piece: bytes, end_marked: bool) -> "VisibleString":
        return VisibleString(self.data + piece, end_marked)


def prefix_order_key(v: VisibleString) -> tuple[bytes, int]:
    """Sort key placing every string before its strict extensions.

    Byte-lexicographic order already satisfies prefix-before-extension; the
    second component puts an end-marked string ahead of a plain one with equal
    bytes, so a finished sequence sorts before anything that could extend it.
    """
    return (v.data, 0 if v.end_marked else 1)


@dataclass(frozen=True)
class Vocab:
    """Immutable id -> byte piece table with a designated EOS id."""

    pieces: dict[int, bytes]
    eos_id: int
    _delim_free: dict[bytes, bool] = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self) -> None:
        if self.eos_id not in self.pieces:
            raise InvalidToken(f"eos id {self.eos_id} missing from vocab")
        if self.pieces[self.eos_id] != b"":
            raise InvalidToken("eos piece must be the empty byte string")
        for tid in self.pieces:
            if tid < 0:
                raise InvalidToken(f"negative token id {tid}")

    def piece(self, token_id: int) -> bytes:
        try:
            return self.pieces[token_id]
        except KeyError:
            raise InvalidToken(f"unknown token id {token_id}") from None

    def __len__(self) -> int:
        return len(self.pieces)

    def __contains__(self, token_id: int) -> bool:
        return token_id in self.pieces

    def ids(self) -> Iterator[int]:
        return iter(self.pieces)

    def delimiter_free(self, delimiter: bytes) -> bool:
        """True if no piece contains the sentence delimiter byte(s)."""
        cached = self._delim_free.get(delimiter)
        if cached is None:
            cached = all(delimiter not in p for p in self.pieces.values() if p)
            self._delim_free[delimiter] = cached
        return cached

    def to_lines(self) -> str:
        """Serialize as the line format: '#eos <id>' then '<id>\\t<hex piece>'."""
        out = [f"#eos {self.eos_id}"]
        for tid in sorted(self.pieces):
            out.append(f"{tid}\t{self.pieces[tid].hex()}")
        return "\n".join(out) + "\n"

    @classmethod
    def from_lines(cls, text: str) -> "Vocab":
        eos_id = None
        pieces: dict[int, bytes] = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#eos"):
                eos_id = int(line.split()[1])
                continue
            if line.startswith("#"):
                continue
            try:
                # Split the unstripped line: the EOS row ends in a bare tab
                # because its piece is empty.
                tid_s, hex_s = raw.rstrip("\r\n").split("\t")
                tid = int(tid_s)
                piece = bytes.fromhex(hex_s.strip())
            except ValueError as exc:
                raise InvalidToken(f"bad vocab line {lineno}: {raw!r}") from exc
            if tid in pieces:
                raise InvalidToken(f"duplicate token id {tid} at line {lineno}")
            pieces[tid] = piece
        if eos_id is None:
            raise InvalidToken("vocab file missing '#eos <id>' header")
        return cls(pieces=pieces, eos_id=eos_id)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_lines())

    @classmethod
    def load(cls, path) -> "Vocab":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_lines(fh.read())


def detokenize(seq: Iterable[int], vocab: Vocab) -> VisibleString:
    """Concatenate pieces; EOS is only legal as the final token."""
    parts = []
    end_marked = False
    for tok in seq:
        if end_marked:
            raise InvalidToken("token after eos in sequence")
        if tok == vocab.eos_id:
            end_marked = True
            continue
        parts.append(vocab.piece(tok))
    return VisibleString(b"".join(parts), end_marked)


def fixture_vocab() -> Vocab:
    """The small hand-built vocabulary used throughout tests and examples.

    Includes one genuine ambiguity pair: "mistrust" as a single piece versus
    "mis"+"trust", and the prefix chain "a"/"ab".
    """
    return Vocab(
        pieces={
            0: b"",
            1: b"a",
            2: b"b",
            3: b"ab",
            4: b"dog",
            278: b"mistrust",
            377: b"mis",
            245: b"trust",
        },
        eos_id=0,
    )
