"""Baseline channels: pooled synchronization and prefix-conflict pruning.

`syncpool_resolve` settles a whole ambiguity group with one synchronized
draw, throwing the group's internal entropy away instead of carrying it
forward. `mwis_prune` removes tokenization ambiguity up front by keeping a
maximum-weight set of mutually non-prefixing pieces each step, which is
decodable but distorts the sampling distribution (its per-step KL is the
price, reported alongside).
"""

from __future__ import annotations

import math
from typing import Sequence

from .errors import EmptyCandidateSet
from .langmodel import NextDist
from .state import Candidate
from .syncsample import SyncContext, sync_sample
from .tokenizer import Vocab


def syncpool_resolve(members: Sequence[Candidate], sync: SyncContext) -> Candidate:
    """Pick one member of a normalized group by synchronized sampling."""
    if not members:
        raise EmptyCandidateSet("syncpool over an empty group")
    return sync_sample([(c, c.weight) for c in members], sync)


def _prefix_forest(nodes: list[tuple[int, bytes, float]]) -> tuple[list[int], list[list[int]]]:
    """Parent links for the prefix forest over (id, piece, weight) nodes.

    Nodes must be sorted by (piece, id). A node's parent is the nearest
    earlier node whose piece is a (possibly equal, for duplicate pieces)
    prefix of its own; conflicts are exactly ancestor relations.
    """
    parents = [-1] * len(nodes)
    children: list[list[int]] = [[] for _ in nodes]
    stack: list[int] = []
    for i, (_, piece, _) in enumerate(nodes):
        while stack and not piece.startswith(nodes[stack[-1]][1]):
            stack.pop()
        if stack:
            parents[i] = stack[-1]
            children[stack[-1]].append(i)
        stack.append(i)
    return parents, children


def mwis_prune(dist: NextDist, vocab: Vocab) -> tuple[list[tuple[int, float]], float]:
    """Keep a max-weight antichain of the prefix forest; renormalize.

    EOS is exempt from conflicts: its empty piece prefixes everything, but an
    end-marked sequence can never be extended, so decoding stays unambiguous
    and pruning it would make termination impossible. Returns the kept
    (token, renormalized prob) list in canonical (piece, id) order and the
    step KL in bits, sum of p*log2(p/q) over the kept tokens.
    """
    eos_id = vocab.eos_id
    plain = []
    eos_weight = None
    for tok, p in dist.items():
        if tok == eos_id:
            eos_weight = p
        else:
            plain.append((tok, vocab.piece(tok), p))
    plain.sort(key=lambda n: (n[1], n[0]))
    parents, children = _prefix_forest(plain)

    best = [0.0] * len(plain)
    take = [False] * len(plain)
    for i in range(len(plain) - 1, -1, -1):
        child_sum = math.fsum(best[j] for j in children[i]) if children[i] else 0.0
        own = plain[i][2]
        if own >= child_sum:
            best[i] = own
            take[i] = True
        else:
            best[i] = child_sum

    kept: list[tuple[int, float]] = []

    def collect(i: int) -> None:
        if take[i]:
            kept.append((plain[i][0], plain[i][2]))
        else:
            for j in children[i]:
                collect(j)

    for i in range(len(plain)):
        if parents[i] == -1:
            collect(i)
    if eos_weight is not None:
        kept.append((eos_id, eos_weight))
    if not kept:
        raise EmptyCandidateSet("pruning removed every candidate")

    total = math.fsum(w for _, w in kept)
    out = [(tok, w / total) for tok, w in kept]
    kl = math.fsum(w * math.log2(w / orig) for (_, w), (_, orig) in zip(out, kept))
    return out, kl
