"""Keyed pseudorandom streams and synchronized sampling.

Sender and receiver hold the same key, so they can draw the same "random"
choices in lockstep. All randomness comes from HMAC-SHA256 over a domain tag
and a monotone counter; distinct tags keep the sampling stream, the coder's
mask stream and the padding stream independent of each other.

A sync draw maps 64 output bits to u in [0,1) and selects by inverse CDF
against compensated cumulative sums. The comparison is done in exact integer
arithmetic so both sides pick the same item even at boundary values.
"""

from __future__ import annotations

import hmac
from dataclasses import dataclass, field
from typing import Sequence, TypeVar

from .errors import EmptyCandidateSet, InvalidWeight, ProtocolViolation

SYNC_TAG = b"sync-draw"
MASK_TAG = b"coder-mask"
PAD_TAG = b"pad"

_U64 = 1 << 64

T = TypeVar("T")


class KeyedStream:
    """Deterministic PRF stream: block(tag, index) = HMAC-SHA256(key, tag||index)."""

    __slots__ = ("key",)

    def __init__(self, key: bytes):
        if not isinstance(key, bytes) or len(key) < 16:
            raise ProtocolViolation("key must be at least 16 bytes")
        self.key = key

    def block(self, tag: bytes, index: int) -> bytes:
        return hmac.digest(self.key, tag + index.to_bytes(8, "big"), "sha256")

    def bits64(self, tag: bytes, index: int) -> int:
        return int.from_bytes(self.block(tag, index)[:8], "big")


@dataclass(slots=True)
class SyncContext:
    """Counter-disciplined draw state shared by both ends of a session."""

    stream: KeyedStream
    counter: int = 0
    domain_tag: bytes = field(default=SYNC_TAG)

    def draw_u64(self) -> int:
        value = self.stream.bits64(self.domain_tag, self.counter)
        self.counter += 1
        return value


def sync_sample(items: Sequence[tuple[T, float]], ctx: SyncContext) -> T:
    """Draw one item by inverse CDF; exactly one counter tick per call.

    `items` must already be in the canonical deterministic order and carry
    strictly positive weights summing to 1 (within float tolerance). The draw
    u = bits/2^64 is compared against cumulative sums exactly: u < c is
    evaluated as an integer cross-multiplication, never in rounded floats.
    """
    if not items:
        raise EmptyCandidateSet("sync_sample over an empty set")
    u_num = ctx.draw_u64()
    acc = 0.0
    comp = 0.0
    for obj, w in items:
        if not w > 0.0:
            raise InvalidWeight(f"non-positive sync weight {w!r}")
        # Kahan-compensated running sum, identical on both sides.
        y = w - comp
        t = acc + y
        comp = (t - acc) - y
        acc = t
        num, den = acc.as_integer_ratio()
        if u_num * den < num * _U64:
            return obj
    return items[-1][0]
