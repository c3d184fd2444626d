"""Weighted candidate sets over token sequences.

A candidate state is the decoder-shared belief: a finite set of token
sequences, each with a weight, kept normalized and in a canonical order so
that sender and receiver always compute bit-identical floats from it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, NamedTuple

from .errors import EmptyCandidateSet, InvalidWeight
from .tokenizer import TokenSeq, VisibleString, Vocab, detokenize


class Candidate(NamedTuple):
    seq: TokenSeq
    visible: VisibleString
    weight: float


def candidate_sort_key(c: Candidate) -> tuple[bytes, int, TokenSeq]:
    """Prefix-before-extension order, end-marked first at equal bytes, id tiebreak."""
    v = c.visible
    return (v.data, 0 if v.end_marked else 1, c.seq)


@dataclass(frozen=True, slots=True)
class CandidateState:
    """Sorted, normalized candidates plus the round counter."""

    items: tuple[Candidate, ...]
    round: int = 0

    def weights(self) -> list[float]:
        return [c.weight for c in self.items]

    def __len__(self) -> int:
        return len(self.items)


def normalize(
    items: Iterable[Candidate | tuple[TokenSeq, float]],
    vocab: Vocab | None = None,
    round: int = 0,
) -> CandidateState:
    """Build a canonical state: detokenize if needed, sort, renormalize weights.

    Accepts either ready Candidates or raw (sequence, weight) pairs; the latter
    require a vocab. Weights must be strictly positive; tiny weights are kept,
    never pruned. The total is computed with exact summation so both ends of a
    session agree to the last bit.
    """
    cands: list[Candidate] = []
    for item in items:
        if isinstance(item, Candidate):
            cands.append(item)
        else:
            seq, weight = item
            if vocab is None:
                raise InvalidWeight("raw (seq, weight) pairs need a vocab")
            cands.append(Candidate(tuple(seq), detokenize(seq, vocab), float(weight)))
    if not cands:
        raise EmptyCandidateSet("cannot normalize an empty candidate set")
    cands.sort(key=candidate_sort_key)
    for c in cands:
        if not c.weight > 0.0:
            raise InvalidWeight(f"non-positive weight {c.weight!r} for {c.seq}")
    total = math.fsum(c.weight for c in cands)
    if not total > 0.0 or math.isinf(total) or math.isnan(total):
        raise InvalidWeight(f"bad weight total {total!r}")
    if total != 1.0:
        cands = [Candidate(c.seq, c.visible, c.weight / total) for c in cands]
    return CandidateState(items=tuple(cands), round=round)


def dump(state: CandidateState) -> str:
    """Debug dump, one candidate per line: hex visible, ids, 17-digit weight."""
    lines = []
    for c in state.items:
        ids = ",".join(map(str, c.seq))
        lines.append(f"{c.visible.data.hex()}\t{ids}\t{c.weight:.17g}")
    return "\n".join(lines)
