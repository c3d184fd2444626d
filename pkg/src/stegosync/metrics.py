"""Oracles and measurement harnesses.

Everything here answers "what should the channel have done" independently of
how the channel is implemented. The enumeration oracle walks a toy model's
entire sequence tree in exact rational arithmetic; the evolution oracle
replaces the keyed draws with exhaustive branching and tracks expected
candidate weights and sentence outcomes exactly. Test suites freeze values
computed here and compare the running system against them.
"""

from __future__ import annotations

import hashlib
import math
from collections import Counter, defaultdict
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Sequence

from .errors import OracleTooLarge, ProtocolViolation
from .partition import partition_by_prefix
from .pipeline import SessionConfig, decode, embed, sample_sentence
from .state import CandidateState
from .tokenizer import TokenSeq, Vocab

# ---------------------------------------------------------------------------
# information-theoretic helpers


def entropy_bits(weights) -> float:
    """Shannon entropy in bits; accepts floats or exact rationals."""
    total = 0.0
    for w in weights:
        x = float(w)
        if x > 0.0:
            total -= x * math.log2(x)
    return total


def kl_bits(p: Sequence[float], q: Sequence[float]) -> float:
    """KL(p || q) in bits over aligned supports."""
    total = 0.0
    for a, b in zip(p, q):
        if a > 0.0:
            if not b > 0.0:
                return math.inf
            total += a * math.log2(a / b)
    return total


def jsd_bits(dists: Sequence[dict], weights: Sequence) -> float:
    """Generalized Jensen-Shannon divergence of weighted distributions."""
    mix: dict = {}
    inner = 0.0
    for d, w in zip(dists, weights):
        wf = float(w)
        for k, p in d.items():
            mix[k] = mix.get(k, 0) + w * p
        inner += wf * entropy_bits(d.values())
    return entropy_bits(mix.values()) - inner


def tv_distance(counts: dict[bytes, int], n: int, ref: dict[bytes, Fraction]) -> float:
    """Total variation between empirical counts/n and an exact distribution."""
    keys = set(counts) | set(ref)
    return 0.5 * sum(abs(counts.get(k, 0) / n - float(ref.get(k, 0))) for k in keys)


# ---------------------------------------------------------------------------
# exact enumeration of terminal sequences


def _exact_caller(lm, top_k: int, prompt: TokenSeq) -> Callable[[TokenSeq], list]:
    fn = getattr(lm, "next_dist_exact", None)
    if fn is None:
        raise ProtocolViolation("enumeration oracles need a model with next_dist_exact")
    return lambda ctx: fn(prompt + ctx, top_k)


@dataclass(slots=True)
class TerminalSet:
    """Exact distribution over end-marked sequences of a toy model."""

    seqs: dict[TokenSeq, Fraction]
    visibles: dict[bytes, Fraction]
    expected_tokens: Fraction


def enumerate_terminals(
    lm, vocab: Vocab, top_k: int, prompt: TokenSeq = (), limit: int = 10**6
) -> TerminalSet:
    """Walk every sequence to EOS; probabilities stay exact throughout."""
    exact = _exact_caller(lm, top_k, tuple(prompt))
    eos = vocab.eos_id
    seqs: dict[TokenSeq, Fraction] = {}
    visibles: dict[bytes, Fraction] = defaultdict(Fraction)
    expected = Fraction(0)
    stack: list[tuple[TokenSeq, bytes, Fraction]] = [((), b"", Fraction(1))]
    visited = 0
    while stack:
        ctx, vis, p = stack.pop()
        visited += 1
        if visited > limit:
            raise OracleTooLarge(f"terminal enumeration exceeded {limit} nodes")
        for tok, q in exact(ctx):
            if tok == eos:
                seq = ctx + (tok,)
                seqs[seq] = p * q
                visibles[vis] += p * q
                expected += p * q * len(seq)
            else:
                stack.append((ctx + (tok,), vis + vocab.piece(tok), p * q))
    return TerminalSet(seqs=seqs, visibles=dict(visibles), expected_tokens=expected)


def sequence_prob(lm, vocab: Vocab, top_k: int, seq: TokenSeq, prompt: TokenSeq = ()) -> Fraction:
    """Exact model probability of a token sequence under top-k renormalization."""
    exact = _exact_caller(lm, top_k, tuple(prompt))
    p = Fraction(1)
    ctx: TokenSeq = ()
    for tok in seq:
        row = dict(exact(ctx))
        if tok not in row:
            return Fraction(0)
        p *= row[tok]
        ctx += (tok,)
    return p


# ---------------------------------------------------------------------------
# capacity bound


@dataclass(slots=True)
class CapacityBound:
    """Entropy of the terminal visible string over the expected sequence length."""

    h_visible_bits: float
    expected_tokens: float
    bpt_bound: float
    terminal_visibles: dict[bytes, Fraction]


def capacity_bound(lm, vocab: Vocab, top_k: int, prompt: TokenSeq = ()) -> CapacityBound:
    term = enumerate_terminals(lm, vocab, top_k, prompt)
    h = entropy_bits(term.visibles.values())
    e_len = float(term.expected_tokens)
    return CapacityBound(
        h_visible_bits=h,
        expected_tokens=e_len,
        bpt_bound=h / e_len,
        terminal_visibles=term.visibles,
    )


# ---------------------------------------------------------------------------
# exhaustive evolution of the look-ahead channel

_ExactItem = tuple[TokenSeq, bytes, bool, Fraction]
_ExactState = tuple[_ExactItem, ...]


@dataclass(frozen=True, slots=True)
class SyncEvent:
    """One multi-member synchronized draw: occurrence mass and the contenders."""

    q: Fraction
    key: bytes
    items: tuple[tuple[TokenSeq, Fraction], ...]


@dataclass(slots=True)
class _Transitions:
    h_inter: float
    children: dict[_ExactState, Fraction]
    terminals: dict[tuple[TokenSeq, bytes], Fraction]
    events: tuple[tuple[Fraction, bytes, tuple[tuple[TokenSeq, Fraction], ...]], ...]


@dataclass(slots=True)
class EvolutionReport:
    """Everything the exhaustive walk can say about one sentence.

    `alive[(round, seq)]` is the expected weight of `seq` summed over the
    branches whose candidate state contains it at that round; while a
    sequence is representable it must equal the model's own probability.
    `terminal_seqs` is the end-to-end output distribution, the headline
    fidelity statement.
    """

    terminal_seqs: dict[TokenSeq, Fraction]
    terminal_visibles: dict[bytes, Fraction]
    alive: dict[tuple[int, TokenSeq], Fraction]
    expected_h_inter: float
    sync_events: list[SyncEvent]
    rounds: int
    states_visited: int


def _closure_groups(items: _ExactState) -> list[tuple[bytes, bool, list[int]]]:
    """Brute-force grouping: transitive closure of visible-prefix compatibility.

    Plain strings are compatible when one byte-prefixes the other; end-marked
    strings only with an end-marked twin of equal bytes. Groups come out
    keyed by their shortest member, ordered end-marked first at equal bytes.
    """
    n = len(items)
    parent = list(range(n))

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(n):
        for j in range(i + 1, n):
            _, bi, ei, _ = items[i]
            _, bj, ej, _ = items[j]
            if ei or ej:
                ok = ei and ej and bi == bj
            else:
                ok = bi.startswith(bj) or bj.startswith(bi)
            if ok:
                parent[find(i)] = find(j)

    buckets: dict[int, list[int]] = defaultdict(list)
    for i in range(n):
        buckets[find(i)].append(i)
    groups = []
    for members in buckets.values():
        key_idx = min(members, key=lambda i: (items[i][1], not items[i][2]))
        groups.append((items[key_idx][1], items[key_idx][2], members))
    groups.sort(key=lambda g: (g[0], not g[1]))
    return groups


def _canon(items: list[_ExactItem]) -> _ExactState:
    return tuple(sorted(items, key=lambda it: (it[1], not it[2], it[0])))


def trace_evolution(
    lm, vocab: Vocab, top_k: int, prompt: TokenSeq = (), limit: int = 500_000
) -> EvolutionReport:
    """Exhaust every coder choice and every synchronized draw of one sentence.

    Branch probabilities replace both randomness sources: group m occurs with
    its group mass, and each prefix-set member with its renormalized weight.
    States are deduplicated per round, so the walk covers the full branch
    tree at DAG cost.
    """
    exact = _exact_caller(lm, top_k, tuple(prompt))
    eos = vocab.eos_id

    root_items = [
        ((tok,), vocab.piece(tok), tok == eos, p) for tok, p in exact(())
    ]
    root = _canon(root_items)

    memo: dict[_ExactState, _Transitions] = {}

    def compute(state: _ExactState) -> _Transitions:
        groups = _closure_groups(state)
        h_inter = entropy_bits(sum(state[i][3] for i in members) for _, _, members in groups)
        children: dict[_ExactState, Fraction] = defaultdict(Fraction)
        terminals: dict[tuple[TokenSeq, bytes], Fraction] = defaultdict(Fraction)
        events = []
        for key, _, members in groups:
            g = sum(state[i][3] for i in members)
            norm = [(state[i][0], state[i][1], state[i][2], state[i][3] / g) for i in members]
            prefix = [it for it in norm if it[1] == key]
            partial = [it for it in norm if it[1] != key]
            p_sum = sum(it[3] for it in prefix)
            if len(prefix) >= 2:
                events.append(
                    (g, key, tuple((it[0], it[3] / p_sum) for it in prefix))
                )
            for seq, vis, end, w in prefix:
                bp = g * (w / p_sum)
                if end:
                    if not partial:
                        terminals[(seq, vis)] += bp
                    else:
                        rest = Fraction(1) - p_sum
                        child = _canon(
                            [(s, b, e, x / rest) for s, b, e, x in partial]
                        )
                        children[child] += bp
                else:
                    nxt = [(s, b, e, x) for s, b, e, x in partial]
                    for tok, q in exact(seq):
                        nxt.append(
                            (seq + (tok,), vis + vocab.piece(tok), tok == eos, p_sum * q)
                        )
                    children[_canon(nxt)] += bp
        return _Transitions(
            h_inter=h_inter,
            children=dict(children),
            terminals=dict(terminals),
            events=tuple(events),
        )

    terminal_seqs: dict[TokenSeq, Fraction] = defaultdict(Fraction)
    terminal_vis: dict[bytes, Fraction] = defaultdict(Fraction)
    alive: dict[tuple[int, TokenSeq], Fraction] = defaultdict(Fraction)
    sync_events: list[SyncEvent] = []
    expected_h_inter = 0.0
    visited = 0
    rnd = 0
    current: dict[_ExactState, Fraction] = {root: Fraction(1)}
    while current:
        rnd += 1
        visited += len(current)
        if visited > limit:
            raise OracleTooLarge(f"evolution walk exceeded {limit} states")
        nxt: dict[_ExactState, Fraction] = defaultdict(Fraction)
        for state in sorted(current):
            prob = current[state]
            for seq, _, _, w in state:
                alive[(rnd, seq)] += prob * w
            tr = memo.get(state)
            if tr is None:
                tr = memo[state] = compute(state)
            expected_h_inter += float(prob) * tr.h_inter
            for ev_q, key, items in tr.events:
                sync_events.append(SyncEvent(q=prob * ev_q, key=key, items=items))
            for (seq, vis), p in tr.terminals.items():
                terminal_seqs[seq] += prob * p
                terminal_vis[vis] += prob * p
            for child, p in tr.children.items():
                nxt[child] += prob * p
        current = dict(nxt)
    return EvolutionReport(
        terminal_seqs=dict(terminal_seqs),
        terminal_visibles=dict(terminal_vis),
        alive=dict(alive),
        expected_h_inter=expected_h_inter,
        sync_events=sync_events,
        rounds=rnd,
        states_visited=visited,
    )


# ---------------------------------------------------------------------------
# synchronization loss


def future_visible_dist(
    lm, vocab: Vocab, top_k: int, seq: TokenSeq, prompt: TokenSeq = (), eos_id: int | None = None
) -> dict[bytes, Fraction]:
    """Distribution of the remaining visible bytes after committing to `seq`."""
    eos = vocab.eos_id if eos_id is None else eos_id
    if seq and seq[-1] == eos:
        return {b"": Fraction(1)}
    term = enumerate_terminals(lm, vocab, top_k, tuple(prompt) + tuple(seq))
    return term.visibles


def sync_loss_bits(
    lm,
    vocab: Vocab,
    top_k: int,
    items: Sequence[tuple[TokenSeq, Fraction | float]],
    prompt: TokenSeq = (),
) -> float:
    """Future visible entropy destroyed by one synchronized draw.

    The contenders share their visible bytes but not their token identities;
    collapsing to one of them replaces a mixture of futures with a single
    future. The expected loss is the generalized Jensen-Shannon divergence of
    the members' future visible distributions under the draw weights.
    """
    dists = [future_visible_dist(lm, vocab, top_k, seq, prompt) for seq, _ in items]
    return jsd_bits(dists, [w for _, w in items])


@dataclass(slots=True)
class CapacityAccounting:
    """Where the visible entropy goes: carried by the coder or lost to sync."""

    h_visible_bits: float
    expected_h_inter: float
    sync_loss_bits: float
    identity_gap: float


def capacity_accounting(lm, vocab: Vocab, top_k: int, prompt: TokenSeq = ()) -> CapacityAccounting:
    """Split H(visible) into coder-visible entropy plus synchronization loss.

    On models whose multi-member draws never coincide with partial carryover
    the split is an exact identity; `identity_gap` reports the float residue.
    """
    report = trace_evolution(lm, vocab, top_k, prompt)
    h_vis = entropy_bits(report.terminal_visibles.values())
    loss = 0.0
    for ev in report.sync_events:
        loss += float(ev.q) * sync_loss_bits(lm, vocab, top_k, ev.items, prompt)
    return CapacityAccounting(
        h_visible_bits=h_vis,
        expected_h_inter=report.expected_h_inter,
        sync_loss_bits=loss,
        identity_gap=h_vis - report.expected_h_inter - loss,
    )


# ---------------------------------------------------------------------------
# running-system harnesses


def group_entropy_split(state: CandidateState) -> tuple[float, float]:
    """(coder-visible entropy, total state entropy) for one candidate state."""
    part = partition_by_prefix(state)
    return entropy_bits(part.inter), entropy_bits(state.weights())


def derive_key(master: bytes, index: int) -> bytes:
    return hashlib.sha256(master + b"|key|" + index.to_bytes(8, "big")).digest()


def derive_bytes(master: bytes, index: int, label: bytes, nbytes: int) -> bytes:
    out = b""
    block = 0
    while len(out) < nbytes:
        out += hashlib.sha256(
            master + b"|" + label + b"|" + index.to_bytes(8, "big") + block.to_bytes(4, "big")
        ).digest()
        block += 1
    return out[:nbytes]


def sample_visible_counts(
    lm,
    vocab: Vocab,
    top_k: int,
    n: int,
    master: bytes,
    method: str = "lookahead",
    prompt: TokenSeq = (),
) -> Counter:
    """Empirical first-sentence distribution under fresh keys and payloads.

    Each sample uses an independent derived key and an independent uniform
    bit stream, which is the regime the fidelity statement quantifies over.
    """
    counts: Counter = Counter()
    for i in range(n):
        cfg = SessionConfig(
            key=derive_key(master, i),
            model=lm,
            vocab=vocab,
            top_k=top_k,
            method=method,
            prompt=prompt,
            collect_stats=False,
        )
        counts[sample_sentence(cfg, derive_bytes(master, i, b"ent", 64))] += 1
    return counts


@dataclass(slots=True)
class BenchRow:
    method: str
    top_k: int
    runs: int
    bpt: float
    bpt_sigma: float
    tok_per_call: float
    kl_per_round: float
    entropy_ratio: float


def ratio_sigma(nums: Sequence[float], dens: Sequence[float]) -> float:
    """Standard error of sum(nums)/sum(dens) over i.i.d. runs (delta method)."""
    n = len(nums)
    if n < 2:
        return 0.0
    ratio = sum(nums) / sum(dens)
    dbar = sum(dens) / n
    resid = [a - ratio * b for a, b in zip(nums, dens)]
    mean_r = sum(resid) / n
    var = sum((r - mean_r) ** 2 for r in resid) / (n - 1)
    return math.sqrt(var / n) / dbar


def run_benchmark(
    lm,
    vocab: Vocab,
    top_k: int,
    methods: Sequence[str],
    n_runs: int,
    payload_len: int,
    master: bytes,
    prompt: TokenSeq = (),
    verify: bool = True,
) -> list[BenchRow]:
    """Embed/decode n_runs payloads per method and aggregate channel metrics."""
    rows = []
    for method in methods:
        bits = tokens = calls = rounds = 0
        h_inter = h_state = kl = 0.0
        per_bits: list[float] = []
        per_tokens: list[float] = []
        for i in range(n_runs):
            cfg = SessionConfig(
                key=derive_key(master, i),
                model=lm,
                vocab=vocab,
                top_k=top_k,
                method=method,
                prompt=prompt,
            )
            payload = derive_bytes(master, i, b"payload", payload_len)
            result = embed(cfg, payload)
            if verify and decode(cfg, result.stegotext) != payload:
                raise ProtocolViolation(f"round trip failed for run {i} ({method})")
            bits += result.bits_embedded
            tokens += result.tokens_emitted
            calls += result.llm_calls
            rounds += result.rounds
            h_inter += result.h_inter_total
            h_state += result.h_state_total
            kl += result.kl_total
            per_bits.append(float(result.bits_embedded))
            per_tokens.append(float(result.tokens_emitted))
        rows.append(
            BenchRow(
                method=method,
                top_k=top_k,
                runs=n_runs,
                bpt=bits / tokens,
                bpt_sigma=ratio_sigma(per_bits, per_tokens),
                tok_per_call=tokens / calls,
                kl_per_round=kl / rounds,
                entropy_ratio=(h_inter / h_state) if h_state > 0 else 1.0,
            )
        )
    return rows
