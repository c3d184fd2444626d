import math

import pytest

from stegosync.errors import EmptyCandidateSet, InvalidWeight, ProtocolViolation
from stegosync.metrics import derive_key
from stegosync.syncsample import (
    MASK_TAG,
    PAD_TAG,
    SYNC_TAG,
    KeyedStream,
    SyncContext,
    sync_sample,
)

KEY = bytes(range(32))

# PRF outputs for KEY under the sync tag, counters 0..4. Frozen from the
# HMAC-SHA256 construction; any change here is a wire-format break.
GOLDEN_DRAWS = (
    12646923860584823843,
    7437763945897728514,
    5137065805001957170,
    14959408324355660026,
    17491337349694214529,
)


class _FixedStream:
    """Stands in for KeyedStream when a test needs a chosen draw value."""

    def __init__(self, value: int):
        self.value = value

    def bits64(self, tag: bytes, index: int) -> int:
        return self.value


class TestKeyedStream:
    def test_short_key_rejected(self):
        with pytest.raises(ProtocolViolation):
            KeyedStream(b"short")
        with pytest.raises(ProtocolViolation):
            KeyedStream("not bytes")  # type: ignore[arg-type]

    def test_golden_draws(self):
        ctx = SyncContext(KeyedStream(KEY))
        assert tuple(ctx.draw_u64() for _ in range(5)) == GOLDEN_DRAWS
        assert ctx.counter == 5

    def test_tags_are_distinct_streams(self):
        ks = KeyedStream(KEY)
        values = {ks.bits64(tag, 0) for tag in (SYNC_TAG, MASK_TAG, PAD_TAG)}
        assert len(values) == 3

    def test_blocks_are_32_bytes(self):
        assert len(KeyedStream(KEY).block(SYNC_TAG, 0)) == 32


class TestSyncSample:
    def test_empty_rejected(self):
        with pytest.raises(EmptyCandidateSet):
            sync_sample([], SyncContext(KeyedStream(KEY)))

    def test_non_positive_weight_rejected(self):
        # Weights are checked during the CDF scan, so the bad one must sit
        # before the draw lands.
        with pytest.raises(InvalidWeight):
            sync_sample([("b", 0.0), ("a", 1.0)], SyncContext(KeyedStream(KEY)))

    def test_singleton_forced(self):
        ctx = SyncContext(KeyedStream(KEY))
        assert sync_sample([("only", 1.0)], ctx) == "only"
        # Even a forced draw ticks the counter, keeping both ends in step.
        assert ctx.counter == 1

    def test_inverse_cdf_halves(self):
        items = [("s1", 0.5), ("s2", 0.5)]
        low = SyncContext(_FixedStream(1 << 62))  # u = 0.25
        high = SyncContext(_FixedStream(3 << 62))  # u = 0.75
        assert sync_sample(items, low) == "s1"
        assert sync_sample(items, high) == "s2"

    def test_boundary_goes_right(self):
        # u exactly at the boundary belongs to the upper cell: [0, c) is
        # half-open, so u == c selects the next item.
        items = [("s1", 0.5), ("s2", 0.5)]
        ctx = SyncContext(_FixedStream(1 << 63))  # u = 0.5 exactly
        assert sync_sample(items, ctx) == "s2"

    def test_determinism_across_contexts(self):
        items = [((278,), 0.6), ((377, 245), 0.4)]
        a = SyncContext(KeyedStream(KEY))
        b = SyncContext(KeyedStream(KEY))
        seq_a = [sync_sample(items, a) for _ in range(50)]
        seq_b = [sync_sample(items, b) for _ in range(50)]
        assert seq_a == seq_b

    def test_counter_offset_changes_draws(self):
        items = [("x", 0.5), ("y", 0.5)]
        base = [sync_sample(items, SyncContext(KeyedStream(KEY), counter=i)) for i in range(20)]
        shifted = [
            sync_sample(items, SyncContext(KeyedStream(KEY), counter=i + 1)) for i in range(20)
        ]
        assert base[1:] == shifted[:-1]
        assert base != shifted


class TestDrawStatistics:
    def test_million_draws_match_weights(self):
        # 1000 independent keys x 1000 counters each; the frequency of the
        # first item must sit within 4 sigma of its weight.
        p = 0.6
        items = [("heavy", p), ("light", 1.0 - p)]
        n = 1_000_000
        hits = 0
        for k in range(1000):
            ctx = SyncContext(KeyedStream(derive_key(KEY, k)))
            for _ in range(1000):
                if sync_sample(items, ctx) == "heavy":
                    hits += 1
        sigma = math.sqrt(p * (1.0 - p) / n)
        assert abs(hits / n - p) < 4.0 * sigma
