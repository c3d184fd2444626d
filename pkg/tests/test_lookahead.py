import math

import pytest

from stegosync.errors import ProtocolViolation
from stegosync.langmodel import NextDist
from stegosync.lookahead import resolve, resolve_winner, split_prefix_partial
from stegosync.state import Candidate
from stegosync.syncsample import KeyedStream, SyncContext
from stegosync.tokenizer import VisibleString, fixture_vocab

V = fixture_vocab()
KEY = bytes(range(32))


def cand(seq, data, weight, end=False):
    return Candidate(tuple(seq), VisibleString(data, end), weight)


def no_expand(seq):
    raise AssertionError("expansion must not be called here")


class TestSplit:
    def test_prefix_versus_partial(self):
        members = [cand((377,), b"mis", 0.625), cand((278,), b"mistrust", 0.375)]
        prefix, partial = split_prefix_partial(members, VisibleString(b"mis"))
        assert [c.seq for c in prefix] == [(377,)]
        assert [c.seq for c in partial] == [(278,)]

    def test_all_prefix(self):
        members = [cand((377, 245), b"mistrust", 0.6), cand((278,), b"mistrust", 0.4)]
        prefix, partial = split_prefix_partial(members, VisibleString(b"mistrust"))
        assert len(prefix) == 2
        assert partial == []


class TestResolve:
    def test_expansion_merges_with_partials(self):
        # "mis" is drawn (sole prefix member), expanded by a forced "trust";
        # the untouched "mistrust" reading keeps its weight.
        members = [cand((377,), b"mis", 0.625), cand((278,), b"mistrust", 0.375)]

        def expand(seq):
            assert seq == (377,)
            return NextDist(tokens=(245,), probs=(1.0,))

        out = resolve(members, VisibleString(b"mis"), SyncContext(KeyedStream(KEY)), expand, V, 1)
        assert out.terminal is None
        assert out.expanded
        assert out.s_sync.seq == (377,)
        got = {c.seq: c.weight for c in out.state.items}
        assert got == {(278,): 0.375, (377, 245): 0.625}
        assert out.state.round == 1

    def test_partial_carryover_weights(self):
        # Prefix mass 0.4 spread over the expansion, partial 0.6 untouched.
        members = [cand((1,), b"a", 0.4), cand((3,), b"ab", 0.6)]

        def expand(seq):
            return NextDist(tokens=(1, 2), probs=(0.5, 0.5))

        out = resolve(members, VisibleString(b"a"), SyncContext(KeyedStream(KEY)), expand, V, 2)
        got = {c.seq: c.weight for c in out.state.items}
        assert got == {(3,): 0.6, (1, 1): 0.2, (1, 2): 0.2}

    def test_single_eos_terminal(self):
        members = [cand((0,), b"", 1.0, end=True)]
        out = resolve(
            members, VisibleString(b"", True), SyncContext(KeyedStream(KEY)), no_expand, V, 1
        )
        assert out.terminal is not None
        assert out.terminal.seq == (0,)
        assert out.state is None
        assert not out.expanded

    def test_eos_winner_with_partials_renormalizes(self):
        # The sentence cannot stop while a longer reading is alive: the
        # partial set carries on, scaled by 1 / (1 - p_sum).
        members = [cand((1, 0), b"a", 0.4, end=True), cand((3,), b"ab", 0.6)]
        out = resolve(
            members, VisibleString(b"a", True), SyncContext(KeyedStream(KEY)), no_expand, V, 3
        )
        assert out.terminal is None
        assert not out.expanded
        assert [c.seq for c in out.state.items] == [(3,)]
        assert out.state.items[0].weight == 1.0

    def test_group_without_prefix_member_rejected(self):
        members = [cand((3,), b"ab", 1.0)]
        with pytest.raises(ProtocolViolation):
            resolve(members, VisibleString(b"a"), SyncContext(KeyedStream(KEY)), no_expand, V, 1)

    def test_mass_conserved(self):
        members = [
            cand((1,), b"a", 0.3),
            cand((1, 1), b"aa", 0.25),
            cand((3,), b"ab", 0.45),
        ]

        def expand(seq):
            return NextDist(tokens=(3, 2, 0), probs=(0.5, 0.3, 0.2))

        out = resolve(members, VisibleString(b"a"), SyncContext(KeyedStream(KEY)), expand, V, 1)
        assert math.isclose(math.fsum(c.weight for c in out.state.items), 1.0, abs_tol=1e-12)
        got = {c.seq: c.weight for c in out.state.items}
        # Each expansion branch carries exactly p_sum * p.
        assert got[(1, 2)] == pytest.approx(0.3 * 0.3, abs=1e-15)
        assert got[(1, 3)] == pytest.approx(0.3 * 0.5, abs=1e-15)
        assert got[(3,)] == 0.45
        assert got[(1, 1)] == 0.25

    def test_expansion_weights_are_exact_products(self):
        members = [cand((377,), b"mis", 1.0)]

        def expand(seq):
            return NextDist(tokens=(245, 0), probs=(0.75, 0.25))

        out = resolve(members, VisibleString(b"mis"), SyncContext(KeyedStream(KEY)), expand, V, 1)
        got = {c.seq: c.weight for c in out.state.items}
        assert got == {(377, 245): 0.75, (377, 0): 0.25}
        # EOS branch is end-marked, the other is not.
        flags = {c.seq: c.visible.end_marked for c in out.state.items}
        assert flags == {(377, 245): False, (377, 0): True}

    def test_resolve_winner_matches_resolve(self):
        members = [cand((377,), b"mis", 0.625), cand((278,), b"mistrust", 0.375)]

        def expand(seq):
            return NextDist(tokens=(245,), probs=(1.0,))

        via_resolve = resolve(
            members, VisibleString(b"mis"), SyncContext(KeyedStream(KEY)), expand, V, 1
        )
        prefix_items = ((members[0], 1.0),)
        direct = resolve_winner(members[0], 0.625, prefix_items, [members[1]], expand, V, 1)
        assert direct.state == via_resolve.state
        assert direct.expanded == via_resolve.expanded

    def test_draw_counter_ticks_once(self):
        members = [cand((377, 245), b"mistrust", 0.6), cand((278,), b"mistrust", 0.4)]
        ctx = SyncContext(KeyedStream(KEY))

        def expand(seq):
            return NextDist(tokens=(0,), probs=(1.0,))

        resolve(members, VisibleString(b"mistrust"), ctx, expand, V, 1)
        assert ctx.counter == 1
