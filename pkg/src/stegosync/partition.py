"""Grouping candidates by visible-string prefix relations.

Two candidate sequences are channel-indistinguishable at this round when one
visible string is a prefix of the other: the stegotext seen so far cannot
separate them. The partition puts every maximal prefix-connected run of the
sorted candidate list into one group, keyed by its shortest visible string.
Group masses form the inter-group distribution the coder selects from.

End-marked strings never join a longer string's group: a finished sequence is
only compatible with the stegotext ending exactly there (or a sentence
boundary following), so it forms its own group per distinct byte string.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

from .errors import DesyncError, EmptyCandidateSet
from .state import Candidate, CandidateState
from .tokenizer import VisibleString


class PrefixGroup(NamedTuple):
    key: VisibleString
    members: tuple[Candidate, ...]


@dataclass(frozen=True, slots=True)
class PrefixPartition:
    groups: tuple[PrefixGroup, ...]
    inter: tuple[float, ...]

    @property
    def keys(self) -> list[VisibleString]:
        return [g.key for g in self.groups]

    def __len__(self) -> int:
        return len(self.groups)


def partition_by_prefix(state: CandidateState) -> PrefixPartition:
    """Single pass over the sorted state.

    A plain candidate joins the open plain group when its bytes extend the
    group key. An end-marked candidate joins a group only with end-marked
    peers of exactly equal bytes; it neither absorbs nor interrupts the open
    plain group (sorted order can interleave one between a key and its longer
    extensions).
    """
    if not state.items:
        raise EmptyCandidateSet("cannot partition an empty state")
    ordered: list[list] = []  # [key, member list]
    open_plain: list | None = None
    open_end: list | None = None
    for cand in state.items:
        v = cand.visible
        if v.end_marked:
            if open_end is not None and open_end[0].data == v.data:
                open_end[1].append(cand)
            else:
                open_end = [v, [cand]]
                ordered.append(open_end)
        else:
            if open_plain is not None and v.data.startswith(open_plain[0].data):
                open_plain[1].append(cand)
            else:
                open_plain = [v, [cand]]
                ordered.append(open_plain)
    groups = tuple(PrefixGroup(key, tuple(members)) for key, members in ordered)
    inter = tuple(math.fsum(c.weight for c in g.members) for g in groups)
    return PrefixPartition(groups=groups, inter=inter)


def match_prefix_index(
    keys: Sequence[VisibleString],
    tail: bytes,
    delimiter: bytes = b"",
) -> int:
    """Which group did the sender choose, judging by the stegotext tail?

    A plain key matches when the tail starts with it. An end-marked key means
    the sentence ends right here, so it matches only when the tail equals the
    key exactly, or continues with the sentence delimiter. On reachable states
    exactly one key matches; anything else means tampering or a key mismatch.
    """
    found = -1
    for i, key in enumerate(keys):
        if key.end_marked:
            hit = tail == key.data or (
                bool(delimiter) and tail.startswith(key.data + delimiter)
            )
        else:
            hit = tail.startswith(key.data)
        if hit:
            if found >= 0:
                raise DesyncError("stegotext tail matches more than one group key")
            found = i
    if found < 0:
        raise DesyncError("stegotext tail matches no group key")
    return found
