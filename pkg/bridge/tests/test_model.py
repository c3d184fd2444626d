import math

import pytest

from lmbridge.model import TinyCausalLM


@pytest.fixture(scope="module")
def lm():
    return TinyCausalLM()


class TestVocabulary:
    def test_eos_piece_empty(self, lm):
        assert lm.eos_id == 0
        assert lm.pieces[0] == b""

    def test_ambiguous_merges_present(self, lm):
        pieces = [p for p in lm.pieces.values() if p]
        overlaps = [
            (a, b) for a in pieces for b in pieces if a != b and b.startswith(a)
        ]
        assert len(overlaps) >= 10

    def test_newline_free(self, lm):
        assert all(b"\n" not in p for p in lm.pieces.values())

    def test_detokenize_concatenates(self, lm):
        assert lm.detokenize([1, 7, 0]) == lm.pieces[1] + lm.pieces[7]
        with pytest.raises(ValueError):
            lm.detokenize([999])


class TestNextDist:
    def test_shape_and_normalization(self, lm):
        dist = lm.next_dist((), 8)
        assert len(dist) == 8
        ids = [t for t, _ in dist]
        assert len(set(ids)) == 8
        probs = [p for _, p in dist]
        assert all(p > 0 for p in probs)
        assert abs(math.fsum(probs) - 1.0) < 1e-12
        assert probs == sorted(probs, reverse=True)

    def test_context_sensitivity(self, lm):
        assert lm.next_dist((), 6) != lm.next_dist((7, 3), 6)

    def test_depth_cap_forces_end(self, lm):
        assert lm.next_dist(tuple([1] * lm.sentence_depth), 8) == [(0, 1.0)]

    def test_top_one_is_certain(self, lm):
        [(tid, p)] = lm.next_dist((7,), 1)
        assert p == 1.0

    def test_validation(self, lm):
        with pytest.raises(ValueError):
            lm.next_dist((), 0)
        with pytest.raises(ValueError):
            lm.next_dist((999,), 4)
        with pytest.raises(ValueError):
            lm.next_dist(tuple([1] * (lm.max_context + 1)), 4)

    def test_same_seed_same_weights(self):
        a, b = TinyCausalLM(seed=7), TinyCausalLM(seed=7)
        for ctx in ((), (7,), (3, 12, 5)):
            assert a.next_dist(ctx, 10) == b.next_dist(ctx, 10)

    def test_different_seed_differs(self):
        a, b = TinyCausalLM(seed=7), TinyCausalLM(seed=8)
        assert a.next_dist((), 10) != b.next_dist((), 10)
