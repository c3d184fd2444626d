"""Embed and decode sessions.

Both directions run the identical round loop: partition the candidate state,
pick a group through the coder (sender: from payload bits; receiver: by
matching the stegotext and recovering the bits), renormalize the group, and
resolve it according to the configured method. Every floating-point value on
the shared path is computed by the same procedure on both sides, so states,
sync draws and coder steps stay bit-identical round for round.

One terminal sequence rarely has room for a whole framed payload, so a
session runs consecutive sentences (each restarted from the prompt) until the
framed payload is consumed, joining their visible strings with a delimiter
byte that must not occur inside any vocab piece. The receiver mirrors the
stop rule from the recovered length header, so neither side needs to tell the
other when to stop.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

from .baselines import mwis_prune
from .coder import (
    BitCursor,
    BitSink,
    MaskSchedule,
    decode_select,
    encode_select,
    frame_payload,
)
from .errors import CapacityError, DesyncError, HardStop, ProtocolViolation
from .langmodel import LanguageModel, NextDist
from .lookahead import ResolutionOutcome, resolve_winner, split_prefix_partial
from .partition import PrefixPartition, match_prefix_index, partition_by_prefix
from .state import Candidate, CandidateState, dump, normalize
from .syncsample import KeyedStream, SyncContext, sync_sample
from .tokenizer import TokenSeq, VisibleString, Vocab

METHODS = ("lookahead", "syncpool", "mwis")


@dataclass(slots=True)
class SessionConfig:
    """Everything both ends must agree on for a session to stay in lockstep."""

    key: bytes
    model: LanguageModel
    vocab: Vocab
    top_k: int
    method: str = "lookahead"
    coder: str = "interval"
    prompt: TokenSeq = ()
    max_rounds: int = 4096
    max_sentences: int = 4096
    sentence_delimiter: bytes = b"\n"
    collect_stats: bool = True
    collect_log: bool = False

    def __post_init__(self) -> None:
        if not isinstance(self.key, bytes) or len(self.key) != 32:
            raise ProtocolViolation("session key must be exactly 32 bytes")
        if self.method not in METHODS:
            raise ProtocolViolation(f"unknown method {self.method!r}")
        if self.coder != "interval":
            raise ProtocolViolation(f"unknown coder {self.coder!r}")
        if self.top_k < 1 or self.max_rounds < 1 or self.max_sentences < 1:
            raise ProtocolViolation("top_k, max_rounds, max_sentences must be >= 1")
        if not self.sentence_delimiter:
            raise ProtocolViolation("sentence delimiter must be non-empty")
        self.prompt = tuple(self.prompt)


@dataclass(frozen=True, slots=True)
class StepRecord:
    round: int
    sentence: int
    group_count: int
    choice: int
    beta_len: int
    llm_calls: int
    state_hash: str
    h_inter: float
    h_state: float
    kl_step: float
    prefix_items: tuple[tuple[TokenSeq, float], ...] | None


@dataclass(slots=True)
class StegoResult:
    stegotext: VisibleString
    sentences: tuple[bytes, ...]
    bits_embedded: int
    tokens_emitted: int
    llm_calls: int
    rounds: int
    payload_drained: bool
    sync_draws: int
    coder_steps: int
    h_inter_total: float
    h_state_total: float
    kl_total: float
    multi_group_rounds: int
    per_step_log: tuple[StepRecord, ...] = field(default=())


def _entropy_bits(weights) -> float:
    total = 0.0
    for w in weights:
        if w > 0.0:
            total -= w * math.log2(w)
    return total


class _SenderIO:
    """Payload side: selections come from the masked bit stream."""

    __slots__ = ("cursor",)

    def __init__(self, cursor: BitCursor):
        self.cursor = cursor

    @classmethod
    def framed(cls, cfg: SessionConfig, payload: bytes) -> "_SenderIO":
        return cls(BitCursor(frame_payload(payload), cfg.key))

    def select(self, part: PrefixPartition):
        return encode_select(part.inter, self.cursor)

    @property
    def bits_done(self) -> int:
        return self.cursor.position

    @property
    def coder_steps(self) -> int:
        return self.cursor.mask.step

    def wants_more(self) -> bool:
        return not self.cursor.drained

    def drained_past_end(self) -> bool:
        return self.cursor.position > self.cursor.payload_bit_length

    def end_sentence(self, visible: VisibleString) -> None:
        pass

    def cross_delimiter(self, delimiter: bytes) -> None:
        pass

    def finish(self) -> None:
        pass


class _ReceiverIO:
    """Stegotext side: selections come from key matching, bits are recovered."""

    __slots__ = ("data", "offset", "mask", "sink", "delimiter")

    def __init__(self, cfg: SessionConfig, data: bytes):
        self.data = data
        self.offset = 0
        self.mask = MaskSchedule(KeyedStream(cfg.key))
        self.sink = BitSink()
        self.delimiter = cfg.sentence_delimiter

    def select(self, part: PrefixPartition):
        tail = self.data[self.offset :]
        m = match_prefix_index(part.keys, tail, self.delimiter)
        bits = decode_select(part.inter, m, self.mask)
        self.sink.append(bits)
        return m, bits

    @property
    def bits_done(self) -> int:
        return self.sink.length

    @property
    def coder_steps(self) -> int:
        return self.mask.step

    def wants_more(self) -> bool:
        needed = self.sink.needed_bits()
        return needed is None or self.sink.length < needed

    def drained_past_end(self) -> bool:
        needed = self.sink.needed_bits()
        return needed is not None and self.sink.length > needed

    def end_sentence(self, visible: VisibleString) -> None:
        seg = visible.data
        if self.data[self.offset : self.offset + len(seg)] != seg:
            raise DesyncError("terminal sequence does not match stegotext")
        self.offset += len(seg)

    def cross_delimiter(self, delimiter: bytes) -> None:
        nxt = self.offset + len(delimiter)
        if self.data[self.offset : nxt] != delimiter:
            raise DesyncError("missing sentence delimiter in stegotext")
        self.offset = nxt

    def finish(self) -> None:
        if self.offset != len(self.data):
            raise DesyncError("trailing bytes after the final sentence")


class _RoundCache:
    """Cross-session memo of pure per-round computations.

    Partitions, group splits, expansion outcomes and lifted states are pure
    functions of candidate-state content under a fixed (model, top_k, prompt),
    and toy-scale state spaces are tiny, so sessions re-enter the same states
    constantly. Holding the model reference keeps the id-based registry key
    valid. Everything cached is immutable.
    """

    __slots__ = ("model", "lift", "partition", "groups", "outcomes", "pool_next")
    CAP = 1 << 17

    def __init__(self, model):
        self.model = model
        self.lift: dict[NextDist, CandidateState] = {}
        self.partition: dict[tuple, PrefixPartition] = {}
        self.groups: dict[tuple, tuple] = {}
        self.outcomes: dict[tuple, ResolutionOutcome] = {}
        self.pool_next: dict[TokenSeq, CandidateState] = {}

    def trim(self) -> None:
        if (
            len(self.partition) + len(self.groups) + len(self.outcomes) + len(self.pool_next)
            > self.CAP
        ):
            self.partition.clear()
            self.groups.clear()
            self.outcomes.clear()
            self.pool_next.clear()


_round_caches: dict[tuple[int, int, TokenSeq, str], _RoundCache] = {}


def _get_round_cache(model, top_k: int, prompt: TokenSeq, method: str) -> _RoundCache:
    # The method is part of the key: group records store method-specific
    # draw sets, so lookahead and syncpool must not share them.
    key = (id(model), top_k, prompt, method)
    cache = _round_caches.get(key)
    if cache is None or cache.model is not model:
        cache = _RoundCache(model)
        if len(_round_caches) > 64:
            _round_caches.clear()
        _round_caches[key] = cache
    return cache


class _Session:
    def __init__(self, cfg: SessionConfig, io):
        self.cfg = cfg
        self.io = io
        self.sync = SyncContext(KeyedStream(cfg.key))
        self.llm_calls = 0
        self.round = 0
        self.sentence = 0
        self.tokens = 0
        self.h_inter_total = 0.0
        self.h_state_total = 0.0
        self.kl_total = 0.0
        self.multi_group_rounds = 0
        self.log: list[StepRecord] = []
        self.cache = _get_round_cache(cfg.model, cfg.top_k, cfg.prompt, cfg.method)

    # -- model access -----------------------------------------------------

    def _model_call(self, seq: TokenSeq) -> NextDist:
        self.llm_calls += 1
        return self.cfg.model.next_dist(self.cfg.prompt + seq, self.cfg.top_k)

    def _model_peek(self, seq: TokenSeq) -> NextDist:
        # No call accounting: memoized paths charge by outcome, not by fetch.
        return self.cfg.model.next_dist(self.cfg.prompt + seq, self.cfg.top_k)

    def _lift(self, dist: NextDist) -> CandidateState:
        state = self.cache.lift.get(dist)
        if state is None:
            vocab = self.cfg.vocab
            eos = vocab.eos_id
            state = normalize(
                [
                    Candidate((tok,), VisibleString(vocab.piece(tok), tok == eos), p)
                    for tok, p in dist.items()
                ]
            )
            self.cache.lift[dist] = state
        return state

    # -- bookkeeping -------------------------------------------------------

    def _note(
        self,
        part: PrefixPartition,
        state_weights,
        m: int,
        beta_len: int,
        after: CandidateState | None,
        terminal: VisibleString | None,
        kl_step: float,
        prefix_items,
    ) -> None:
        cfg = self.cfg
        if not (cfg.collect_stats or cfg.collect_log):
            return
        h_inter = _entropy_bits(part.inter)
        h_state = _entropy_bits(state_weights)
        self.h_inter_total += h_inter
        self.h_state_total += h_state
        self.kl_total += kl_step
        if any(len(g.members) > 1 for g in part.groups):
            self.multi_group_rounds += 1
        if not cfg.collect_log:
            return
        if after is not None:
            material = dump(after)
        else:
            material = "terminal\t" + (terminal.data.hex() if terminal else "")
        material += f"\n#sync={self.sync.counter}\n#coder={self.io.coder_steps}"
        digest = hashlib.sha256(material.encode("ascii")).hexdigest()[:16]
        items = None
        if prefix_items is not None and len(prefix_items) > 1:
            items = tuple((c.seq, w) for c, w in prefix_items)
        self.log.append(
            StepRecord(
                round=self.round,
                sentence=self.sentence,
                group_count=len(part.groups),
                choice=m,
                beta_len=beta_len,
                llm_calls=self.llm_calls,
                state_hash=digest,
                h_inter=h_inter,
                h_state=h_state,
                kl_step=kl_step,
                prefix_items=items,
            )
        )

    # -- sentence loops ----------------------------------------------------

    @staticmethod
    def _renorm(members: tuple[Candidate, ...], mass: float) -> tuple[Candidate, ...]:
        if mass == 1.0:
            return members
        return tuple(Candidate(c.seq, c.visible, c.weight / mass) for c in members)

    def run_sentence(self) -> Candidate:
        self.sentence += 1
        self.cache.trim()
        method = self.cfg.method
        if method == "mwis":
            return self._sentence_mwis()
        return self._sentence_shared(method == "lookahead")

    def _sentence_shared(self, is_lookahead: bool) -> Candidate:
        cfg = self.cfg
        cache = self.cache
        bookkeeping = cfg.collect_stats or cfg.collect_log
        state = self._lift(self._model_call(()))
        for _ in range(cfg.max_rounds):
            items = state.items
            part = cache.partition.get(items)
            if part is None:
                part = partition_by_prefix(state)
                cache.partition[items] = part
            self.round += 1
            m, bits = self.io.select(part)
            gkey = (items, m)
            rec = cache.groups.get(gkey)
            if rec is None:
                group = part.groups[m]
                intra = self._renorm(group.members, part.inter[m])
                if is_lookahead:
                    prefix_set, partial_set = split_prefix_partial(intra, group.key)
                    if not prefix_set:
                        raise ProtocolViolation("group without a prefix-set member")
                    p_sum = math.fsum(c.weight for c in prefix_set)
                    rec = (
                        tuple((c, c.weight / p_sum) for c in prefix_set),
                        p_sum,
                        tuple(partial_set),
                    )
                else:
                    rec = (tuple((c, c.weight) for c in intra), 0.0, ())
                cache.groups[gkey] = rec
            draw_items, p_sum, partial_set = rec

            if is_lookahead:
                winner = sync_sample(draw_items, self.sync)
                okey = (items, m, winner.seq)
                outcome = cache.outcomes.get(okey)
                if outcome is None:
                    outcome = resolve_winner(
                        winner, p_sum, draw_items, partial_set,
                        self._model_peek, cfg.vocab, 0,
                    )
                    cache.outcomes[okey] = outcome
                if outcome.expanded:
                    self.llm_calls += 1
                if outcome.terminal is not None:
                    if bookkeeping:
                        self._note(
                            part, state.weights(), m, bits.length, None,
                            outcome.terminal.visible, 0.0, outcome.prefix_items,
                        )
                    return outcome.terminal
                if bookkeeping:
                    self._note(
                        part, state.weights(), m, bits.length, outcome.state,
                        None, 0.0, outcome.prefix_items,
                    )
                state = outcome.state
            else:
                chosen = sync_sample(draw_items, self.sync)
                if chosen.visible.end_marked:
                    if bookkeeping:
                        self._note(
                            part, state.weights(), m, bits.length, None,
                            chosen.visible, 0.0, None,
                        )
                    return chosen
                self.llm_calls += 1
                nxt = cache.pool_next.get(chosen.seq)
                if nxt is None:
                    dist = self._model_peek(chosen.seq)
                    vocab = cfg.vocab
                    eos = vocab.eos_id
                    nxt = normalize(
                        [
                            Candidate(
                                chosen.seq + (tok,),
                                chosen.visible.extend(vocab.piece(tok), tok == eos),
                                p,
                            )
                            for tok, p in dist.items()
                        ]
                    )
                    cache.pool_next[chosen.seq] = nxt
                if bookkeeping:
                    self._note(part, part_weights(part), m, bits.length, nxt, None, 0.0, None)
                state = nxt
        raise HardStop(f"sentence exceeded max_rounds={cfg.max_rounds}")

    def _sentence_mwis(self) -> Candidate:
        cfg = self.cfg
        vocab = cfg.vocab
        eos = vocab.eos_id
        ctx_seq: TokenSeq = ()
        ctx_vis = VisibleString(b"", False)
        for _ in range(cfg.max_rounds):
            dist = self._model_call(ctx_seq)
            kept, kl_step = mwis_prune(dist, vocab)
            state = normalize(
                [
                    Candidate(ctx_seq + (tok,), ctx_vis.extend(vocab.piece(tok), tok == eos), w)
                    for tok, w in kept
                ],
                round=self.round + 1,
            )
            part = partition_by_prefix(state)
            self.round += 1
            m, bits = self.io.select(part)
            group = part.groups[m]
            if len(group.members) != 1:
                raise ProtocolViolation("pruned step produced a multi-member group")
            chosen = group.members[0]
            if chosen.visible.end_marked:
                self._note(
                    part, dist.probs, m, bits.length, None, chosen.visible, kl_step, None
                )
                return chosen
            after = CandidateState((Candidate(chosen.seq, chosen.visible, 1.0),), self.round)
            self._note(part, dist.probs, m, bits.length, after, None, kl_step, None)
            ctx_seq, ctx_vis = chosen.seq, chosen.visible
        raise HardStop(f"sentence exceeded max_rounds={cfg.max_rounds}")

    # -- whole session -----------------------------------------------------

    def run(self) -> StegoResult:
        cfg = self.cfg
        sentences: list[bytes] = []
        while True:
            terminal = self.run_sentence()
            self.io.end_sentence(terminal.visible)
            sentences.append(terminal.visible.data)
            self.tokens += len(terminal.seq)
            if not self.io.wants_more():
                break
            if len(sentences) >= cfg.max_sentences:
                raise HardStop(f"session exceeded max_sentences={cfg.max_sentences}")
            if not cfg.vocab.delimiter_free(cfg.sentence_delimiter):
                raise CapacityError(
                    "payload does not fit in one sentence and a vocab piece "
                    "contains the sentence delimiter"
                )
            self.io.cross_delimiter(cfg.sentence_delimiter)
        self.io.finish()
        text = cfg.sentence_delimiter.join(sentences)
        return StegoResult(
            stegotext=VisibleString(text, True),
            sentences=tuple(sentences),
            bits_embedded=self.io.bits_done,
            tokens_emitted=self.tokens,
            llm_calls=self.llm_calls,
            rounds=self.round,
            payload_drained=self.io.drained_past_end(),
            sync_draws=self.sync.counter,
            coder_steps=self.io.coder_steps,
            h_inter_total=self.h_inter_total,
            h_state_total=self.h_state_total,
            kl_total=self.kl_total,
            multi_group_rounds=self.multi_group_rounds,
            per_step_log=tuple(self.log),
        )


def part_weights(part: PrefixPartition) -> list[float]:
    return [c.weight for g in part.groups for c in g.members]


def embed(cfg: SessionConfig, payload: bytes) -> StegoResult:
    """Embed a payload; returns the stegotext and the session audit trail."""
    if not payload:
        raise ProtocolViolation("payload must be non-empty")
    session = _Session(cfg, _SenderIO.framed(cfg, payload))
    return session.run()


def decode_full(cfg: SessionConfig, stegotext: bytes | VisibleString) -> tuple[bytes, StegoResult]:
    """Decode and also return the receiver's session record (for audits)."""
    data = stegotext.data if isinstance(stegotext, VisibleString) else stegotext
    io = _ReceiverIO(cfg, data)
    session = _Session(cfg, io)
    result = session.run()
    return io.sink.unframe(), result


def decode(cfg: SessionConfig, stegotext: bytes | VisibleString) -> bytes:
    """Recover the payload from a stegotext produced under the same config."""
    return decode_full(cfg, stegotext)[0]


def sample_sentence(cfg: SessionConfig, entropy: bytes) -> bytes:
    """Run a single sentence driven by a raw bit stream; returns its bytes.

    This is the sampling primitive for distribution tests: with uniform
    entropy bytes and a uniform key, the emitted sentence follows the
    channel's visible-string distribution.
    """
    session = _Session(cfg, _SenderIO(BitCursor(entropy, cfg.key)))
    return session.run_sentence().visible.data


def transcript_text(result: StegoResult) -> str:
    """Render the audit transcript; requires a session run with collect_log."""
    if not result.per_step_log:
        raise ProtocolViolation("session was run without collect_log")
    lines = [
        f"{r.round}\t{r.group_count}\t{r.choice}\t{r.beta_len}\t{r.llm_calls}\t{r.state_hash}"
        for r in result.per_step_log
    ]
    return "\n".join(lines) + "\n"
