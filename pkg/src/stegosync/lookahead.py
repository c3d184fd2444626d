"""Resolution of one selected ambiguity group, preserving its inner entropy.

After the coder picks a group, its members split into the prefix set (visible
string equals the group key exactly) and the partial set (strict extensions).
One prefix-set representative is chosen by synchronized sampling and expanded
by a single model call; the partial set survives untouched. The expansion
weights aggregate the whole prefix-set mass, so the next state's expected
weights still match the model: dropping the unchosen prefix members loses no
probability, only the identity of which tokenization produced the bytes.

A sentence ends when the sync winner is end-marked and nothing is left to
carry; an end-marked winner with surviving partials just renormalizes onto
the partial set.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

from .errors import ProtocolViolation
from .langmodel import NextDist
from .state import Candidate, CandidateState, normalize
from .syncsample import SyncContext, sync_sample
from .tokenizer import TokenSeq, VisibleString, Vocab


@dataclass(frozen=True, slots=True)
class ResolutionOutcome:
    """Either a terminal sequence or the next candidate state."""

    terminal: Candidate | None
    state: CandidateState | None
    s_sync: Candidate
    prefix_items: tuple[tuple[Candidate, float], ...]
    expanded: bool


def split_prefix_partial(
    members: Sequence[Candidate], key: VisibleString
) -> tuple[list[Candidate], list[Candidate]]:
    """Members whose visible string is exactly the key, and the strict extensions."""
    prefix_set: list[Candidate] = []
    partial_set: list[Candidate] = []
    for c in members:
        if c.visible.data == key.data:
            prefix_set.append(c)
        else:
            partial_set.append(c)
    return prefix_set, partial_set


def resolve(
    members: Sequence[Candidate],
    key: VisibleString,
    sync: SyncContext,
    expand: Callable[[TokenSeq], NextDist],
    vocab: Vocab,
    next_round: int,
) -> ResolutionOutcome:
    """Resolve one normalized group; at most one model call.

    `members` must be the group's members renormalized to sum to 1, in
    canonical order. `expand` is the model hook (prompt handling and call
    accounting belong to the caller).
    """
    prefix_set, partial_set = split_prefix_partial(members, key)
    if not prefix_set:
        raise ProtocolViolation("group without a prefix-set member")
    p_sum = math.fsum(c.weight for c in prefix_set)
    prefix_items = tuple((c, c.weight / p_sum) for c in prefix_set)
    s_sync = sync_sample(prefix_items, sync)
    return resolve_winner(
        s_sync, p_sum, prefix_items, partial_set, expand, vocab, next_round
    )


def resolve_winner(
    s_sync: Candidate,
    p_sum: float,
    prefix_items: tuple[tuple[Candidate, float], ...],
    partial_set: Sequence[Candidate],
    expand: Callable[[TokenSeq], NextDist],
    vocab: Vocab,
    next_round: int,
) -> ResolutionOutcome:
    """The draw-free half of resolve: apply an already-chosen representative.

    Split out so callers that memoize per-winner outcomes can reuse the
    expansion without re-drawing; resolve() itself delegates here.
    """
    if s_sync.visible.end_marked:
        if not partial_set:
            return ResolutionOutcome(
                terminal=s_sync,
                state=None,
                s_sync=s_sync,
                prefix_items=prefix_items,
                expanded=False,
            )
        # The sentence cannot end while longer readings are still alive:
        # carry the partial set, renormalized by 1/(1 - p_sum).
        return ResolutionOutcome(
            terminal=None,
            state=normalize(partial_set, round=next_round),
            s_sync=s_sync,
            prefix_items=prefix_items,
            expanded=False,
        )

    dist = expand(s_sync.seq)
    eos_id = vocab.eos_id
    base_seq = s_sync.seq
    base_vis = s_sync.visible
    new_items: list[Candidate] = list(partial_set)
    for tok, p in dist.items():
        new_items.append(
            Candidate(
                base_seq + (tok,),
                base_vis.extend(vocab.piece(tok), tok == eos_id),
                p_sum * p,
            )
        )
    return ResolutionOutcome(
        terminal=None,
        state=normalize(new_items, round=next_round),
        s_sync=s_sync,
        prefix_items=prefix_items,
        expanded=True,
    )
