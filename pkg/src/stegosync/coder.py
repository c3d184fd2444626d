"""Distribution-preserving interval coder over group selections.

Each round the pipeline hands the coder a probability vector `inter` over the
current groups. The coder lays the groups out as adjacent intervals of [0,1),
peeks a 64-bit window of the payload stream, XORs it with a fresh keyed mask,
and treats the masked window as a binary point: the group whose interval
contains that point is selected. Because the masked bits are uniform, the
selection probability of group m is exactly its interval width, which is what
makes the stegotext distribution match the model distribution.

Only the bits that every point of the selected interval agrees on are
actually consumed ("beta", the interval's common binary prefix); peeked but
unconsumed bits stay in the stream and are re-masked next step. The receiver
recomputes the same intervals from the decoded group index, regenerates the
mask, and recovers exactly the consumed payload bits.

Boundary arithmetic is exact. Cumulative sums are compensated floats, mapped
to integers in 2^64 scale when they are exact multiples of 2^-64 (always the
case for boundaries >= 2^-12) and to Fractions otherwise. A window that still
straddles a boundary after all 64 bits resolves to the group containing its
left endpoint, a deviation of at most M * 2^-64 in selection measure.
"""

from __future__ import annotations

from fractions import Fraction
from typing import NamedTuple, Sequence

from .errors import DesyncError, InvalidWeight, ProtocolViolation
from .syncsample import MASK_TAG, PAD_TAG, KeyedStream

_WINDOW = 64
_SCALE = 1 << _WINDOW
_MASK64 = _SCALE - 1

FRAME_HEADER_BITS = 32


class Bits(NamedTuple):
    """A bit string as (integer value, bit count), most significant bit first."""

    value: int
    length: int


def frame_payload(payload: bytes) -> bytes:
    """Prepend the 32-bit big-endian payload byte length."""
    if len(payload) >= 1 << 32:
        raise ProtocolViolation("payload too long for 32-bit framing")
    return len(payload).to_bytes(4, "big") + payload


class MaskSchedule:
    """Per-step 64-bit masks; sender and receiver tick it in lockstep."""

    __slots__ = ("stream", "step")

    def __init__(self, stream: KeyedStream, step: int = 0):
        self.stream = stream
        self.step = step

    def next64(self) -> int:
        value = self.stream.bits64(MASK_TAG, self.step)
        self.step += 1
        return value


class BitCursor:
    """Read cursor over the framed payload, extended by keyed padding.

    The payload is held as one big integer (MSB-first). Whenever a peek or
    consume would run past the end, deterministic keyed padding blocks are
    appended, so a session can always finish its sentence after the real
    payload drains. The receiver never needs to regenerate the padding: it
    simply recovers whatever bits the sender consumed and truncates via the
    length header.
    """

    __slots__ = ("_bits", "_len", "_framed_len", "position", "_stream", "_pad_blocks", "mask")

    def __init__(self, framed: bytes, key: bytes):
        self._bits = int.from_bytes(framed, "big") if framed else 0
        self._len = 8 * len(framed)
        self._framed_len = self._len
        self.position = 0
        self._stream = KeyedStream(key)
        self._pad_blocks = 0
        self.mask = MaskSchedule(self._stream)

    @property
    def payload_bit_length(self) -> int:
        return self._framed_len

    @property
    def drained(self) -> bool:
        return self.position >= self._framed_len

    def _ensure(self, n: int) -> None:
        while self._len < self.position + n:
            block = self._stream.block(PAD_TAG, self._pad_blocks)
            self._bits = (self._bits << 256) | int.from_bytes(block, "big")
            self._len += 256
            self._pad_blocks += 1

    def peek64(self) -> int:
        self._ensure(_WINDOW)
        return (self._bits >> (self._len - self.position - _WINDOW)) & _MASK64

    def consume(self, n: int) -> Bits:
        if n == 0:
            return Bits(0, 0)
        self._ensure(n)
        value = (self._bits >> (self._len - self.position - n)) & ((1 << n) - 1)
        self.position += n
        return Bits(value, n)


class BitSink:
    """Receiver-side accumulator for recovered payload bits."""

    __slots__ = ("value", "length")

    def __init__(self) -> None:
        self.value = 0
        self.length = 0

    def append(self, bits: Bits) -> None:
        self.value = (self.value << bits.length) | bits.value
        self.length += bits.length

    def needed_bits(self) -> int | None:
        """Total framed length once the 32-bit header is recovered, else None."""
        if self.length < FRAME_HEADER_BITS:
            return None
        header = (self.value >> (self.length - FRAME_HEADER_BITS)) & 0xFFFFFFFF
        return FRAME_HEADER_BITS + 8 * header

    def unframe(self) -> bytes:
        needed = self.needed_bits()
        if needed is None or self.length < needed:
            raise DesyncError("recovered bit stream shorter than its length header")
        nbytes = (needed - FRAME_HEADER_BITS) // 8
        if nbytes == 0:
            return b""
        tail = (self.value >> (self.length - needed)) & ((1 << (8 * nbytes)) - 1)
        return tail.to_bytes(nbytes, "big")


def boundaries(inter: Sequence[float]) -> list[float]:
    """Cumulative interval boundaries c_0=0 <= ... <= c_M=1.

    Left-to-right compensated summation; both ends of the session run this
    exact procedure so the float boundaries agree bit for bit. The final
    boundary is pinned to 1.0 so the window space is fully covered.
    """
    if not inter:
        raise InvalidWeight("empty group distribution")
    total = 0.0
    comp = 0.0
    out = [0.0]
    for w in inter:
        if not w > 0.0:
            raise InvalidWeight(f"non-positive group mass {w!r}")
        y = w - comp
        t = total + y
        comp = (t - total) - y
        total = t
        out.append(t if t < 1.0 else 1.0)
    if abs(total - 1.0) > 1e-9:
        raise InvalidWeight(f"group masses sum to {total!r}, not 1")
    out[-1] = 1.0
    return out


def _scaled_boundaries(cum: list[float]) -> list:
    """Boundaries in 2^64 scale: exact ints when possible, Fractions otherwise."""
    out = []
    exact = True
    for c in cum:
        num, den = c.as_integer_ratio()
        if den <= _SCALE:
            out.append(num * (_SCALE // den))
        else:
            exact = False
            out.append(Fraction(num * _SCALE, den))
    if exact:
        return out
    return [s if isinstance(s, Fraction) else Fraction(s) for s in out]


# Group layouts repeat heavily across rounds and sessions; the layout is a
# pure function of the mass vector, so memoize it. Cleared wholesale when
# it grows past the cap.
_layout_cache: dict[tuple, tuple[list[float], list]] = {}
_LAYOUT_CACHE_CAP = 1 << 16


def _layout(inter: Sequence[float]) -> tuple[list[float], list]:
    key = tuple(inter)
    got = _layout_cache.get(key)
    if got is None:
        if len(_layout_cache) >= _LAYOUT_CACHE_CAP:
            _layout_cache.clear()
        cum = boundaries(key)
        got = (cum, _scaled_boundaries(cum))
        _layout_cache[key] = got
    return got


def _locate(scaled: list, cum: list[float], w: int) -> int:
    """Index m with scaled[m] <= w < scaled[m+1]; left-endpoint tie-break."""
    # Cheap float guess, then exact adjustment.
    u = w * 2.0**-64
    lo, hi = 0, len(cum) - 1
    while lo < hi:
        mid = (lo + hi) // 2
        if cum[mid + 1] <= u:
            lo = mid + 1
        else:
            hi = mid
    m = lo
    while m > 0 and scaled[m] > w:
        m -= 1
    last = len(scaled) - 2
    while m < last and scaled[m + 1] <= w:
        m += 1
    return m


def _common_prefix(lo, hi) -> Bits:
    """Longest dyadic prefix whose cell contains [lo, hi), in 2^64 scale.

    Walks the binary subdivision of [0, 2^64): descend into the half that
    still contains the whole interval, stop as soon as the interval straddles
    a midpoint. Capped at the 64-bit window, matching the peek depth.
    """
    value = 0
    length = 0
    cell_lo = 0
    half = _SCALE >> 1
    while length < _WINDOW and half > 0:
        mid = cell_lo + half
        if hi <= mid:
            value <<= 1
        elif lo >= mid:
            value = (value << 1) | 1
            cell_lo = mid
        else:
            break
        length += 1
        half >>= 1
    return Bits(value, length)


def beta_length(inter: Sequence[float], m: int) -> int:
    """How many bits a selection of group m consumes, given the layout."""
    if not 0 <= m < len(inter):
        raise ProtocolViolation(f"group index {m} out of range")
    _, scaled = _layout(inter)
    return _common_prefix(scaled[m], scaled[m + 1]).length


def encode_select(inter: Sequence[float], cursor: BitCursor) -> tuple[int, Bits]:
    """Select a group from the payload stream; returns (m, consumed raw bits).

    The returned bits are the pre-mask payload bits, exactly what the
    receiver's decode_select will reproduce for the same group index.
    """
    cum, scaled = _layout(inter)
    mask = cursor.mask.next64()
    window = cursor.peek64() ^ mask
    m = _locate(scaled, cum, window)
    prefix = _common_prefix(scaled[m], scaled[m + 1])
    consumed = cursor.consume(prefix.length)
    if prefix.length:
        masked = consumed.value ^ (mask >> (_WINDOW - prefix.length))
        if masked != prefix.value:
            raise ProtocolViolation("window prefix mismatch; coder state corrupt")
    return m, consumed


def decode_select(inter: Sequence[float], m: int, mask: MaskSchedule) -> Bits:
    """Recover the payload bits consumed by the matching encode_select."""
    if not 0 <= m < len(inter):
        raise ProtocolViolation(f"group index {m} out of range")
    _, scaled = _layout(inter)
    step_mask = mask.next64()
    prefix = _common_prefix(scaled[m], scaled[m + 1])
    if prefix.length == 0:
        return Bits(0, 0)
    return Bits(prefix.value ^ (step_mask >> (_WINDOW - prefix.length)), prefix.length)


def selection_measure(inter: Sequence[float]) -> list[Fraction]:
    """Exact probability of each group over uniform 64-bit windows.

    Counts the windows assigned to each group under the left-endpoint rule.
    When every boundary is a multiple of 2^-64 the result equals the interval
    widths exactly; otherwise it deviates by less than 2^-64 per boundary.
    """
    cum = boundaries(inter)
    scaled = _scaled_boundaries(cum)

    def ceil_of(x) -> int:
        if isinstance(x, int):
            return x
        return -((-x.numerator) // x.denominator)

    out = []
    for m in range(len(inter)):
        count = ceil_of(scaled[m + 1]) - ceil_of(scaled[m])
        out.append(Fraction(count, _SCALE))
    return out
