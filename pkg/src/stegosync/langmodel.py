"""Next-token distribution sources.

The pipeline only ever asks one question: given a token context, what is the
top-k next-token distribution? `ToyLM` answers from a hand-written table and
is the workhorse for tests and oracles; a wire-protocol client for real models
lives in `bridge_client` and satisfies the same interface.

ToyLM keeps its probabilities as exact rationals internally so that top-k
renormalization preserves ratios exactly; floats appear only at the NextDist
boundary. Enumeration oracles use the exact route.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction
from typing import Protocol

from .errors import InvalidWeight
from .tokenizer import TokenSeq, Vocab, fixture_vocab


@dataclass(frozen=True, slots=True)
class NextDist:
    """A validated next-token distribution, sorted by (prob desc, id asc)."""

    tokens: tuple[int, ...]
    probs: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.tokens) != len(self.probs) or not self.tokens:
            raise InvalidWeight("tokens and probs must be non-empty and aligned")
        if len(set(self.tokens)) != len(self.tokens):
            raise InvalidWeight("duplicate token id in distribution")
        total = 0.0
        for p in self.probs:
            if not p > 0.0:
                raise InvalidWeight(f"non-positive probability {p!r}")
            total += p
        if abs(total - 1.0) > 1e-12:
            raise InvalidWeight(f"probabilities sum to {total!r}, not 1")

    def items(self):
        return zip(self.tokens, self.probs)


class LanguageModel(Protocol):
    def next_dist(self, context: TokenSeq, top_k: int) -> NextDist: ...


class _Entry:
    """One table row: exact probabilities plus per-k truncation caches."""

    __slots__ = ("sorted_items", "_cache", "_cache_exact")

    def __init__(self, weights: dict[int, Fraction]):
        total = sum(weights.values())
        if not weights or total <= 0:
            raise InvalidWeight("table entry needs positive total weight")
        for tid, w in weights.items():
            if w <= 0:
                raise InvalidWeight(f"non-positive weight for token {tid}")
        norm = {tid: w / total for tid, w in weights.items()}
        self.sorted_items = sorted(norm.items(), key=lambda kv: (-kv[1], kv[0]))
        self._cache: dict[int, NextDist] = {}
        self._cache_exact: dict[int, list[tuple[int, Fraction]]] = {}

    def top_k_exact(self, k: int) -> list[tuple[int, Fraction]]:
        got = self._cache_exact.get(k)
        if got is None:
            kept = self.sorted_items[: max(1, k)]
            total = sum(p for _, p in kept)
            got = [(tid, p / total) for tid, p in kept]
            self._cache_exact[k] = got
        return got

    def top_k(self, k: int) -> NextDist:
        got = self._cache.get(k)
        if got is None:
            exact = self.top_k_exact(k)
            got = NextDist(
                tokens=tuple(tid for tid, _ in exact),
                probs=tuple(float(p) for _, p in exact),
            )
            self._cache[k] = got
        return got


def _as_fraction(value) -> Fraction:
    if isinstance(value, Fraction):
        return value
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, str):
        return Fraction(value)
    if isinstance(value, float):
        return Fraction(value)
    raise InvalidWeight(f"cannot interpret {value!r} as an exact probability")


class ToyLM:
    """Deterministic table-driven model with a hard depth cap.

    Contexts are looked up by their full token-id tuple; unlisted contexts use
    the default entry. Any context of `max_depth` or more tokens returns an
    EOS-only distribution, which forces every sequence to terminate.
    """

    def __init__(
        self,
        default: dict[int, object],
        table: dict[TokenSeq, dict[int, object]] | None = None,
        max_depth: int = 6,
        eos_id: int = 0,
    ):
        self.max_depth = max_depth
        self.eos_id = eos_id
        self._default = _Entry({t: _as_fraction(w) for t, w in default.items()})
        self._table = {
            tuple(ctx): _Entry({t: _as_fraction(w) for t, w in row.items()})
            for ctx, row in (table or {}).items()
        }
        self._eos_entry = _Entry({eos_id: Fraction(1)})

    def _entry(self, context: TokenSeq) -> _Entry:
        if len(context) >= self.max_depth:
            return self._eos_entry
        return self._table.get(tuple(context), self._default)

    def next_dist(self, context: TokenSeq, top_k: int) -> NextDist:
        return self._entry(context).top_k(top_k)

    def next_dist_exact(self, context: TokenSeq, top_k: int) -> list[tuple[int, Fraction]]:
        """Exact-rational twin of next_dist, for enumeration oracles."""
        return self._entry(context).top_k_exact(top_k)

    def to_json(self) -> str:
        def row(entry: _Entry) -> dict[str, str]:
            return {str(t): str(p) for t, p in entry.sorted_items}

        doc = {
            "max_depth": self.max_depth,
            "eos_id": self.eos_id,
            "default": row(self._default),
            "table": {
                ",".join(map(str, ctx)): row(entry) for ctx, entry in self._table.items()
            },
        }
        return json.dumps(doc, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ToyLM":
        doc = json.loads(text)

        def parse_row(row: dict) -> dict[int, Fraction]:
            return {int(t): _as_fraction(p) for t, p in row.items()}

        table = {}
        for key, row in doc.get("table", {}).items():
            ctx = tuple(int(x) for x in key.split(",")) if key else ()
            table[ctx] = parse_row(row)
        return cls(
            default=parse_row(doc["default"]),
            table=table,
            max_depth=int(doc["max_depth"]),
            eos_id=int(doc.get("eos_id", 0)),
        )

    @classmethod
    def load(cls, path) -> "ToyLM":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json(fh.read())

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())


def ab_fixture(max_depth: int = 6) -> tuple[ToyLM, Vocab]:
    """The four-token fixture: a/ab prefix ambiguity at every step."""
    lm = ToyLM(
        default={1: "0.4", 3: "0.3", 2: "0.2", 0: "0.1"},
        max_depth=max_depth,
        eos_id=0,
    )
    return lm, fixture_vocab()


def plain_fixture(max_depth: int = 6) -> tuple[ToyLM, Vocab]:
    """Ambiguity-free vocabulary: all pieces mutually non-prefixing."""
    vocab = Vocab(pieces={0: b"", 1: b"x", 2: b"y", 3: b"z"}, eos_id=0)
    lm = ToyLM(
        default={1: "0.5", 2: "0.3", 3: "0.1", 0: "0.1"},
        max_depth=max_depth,
        eos_id=0,
    )
    return lm, vocab


def divergent_fixture() -> tuple[ToyLM, Vocab]:
    """Duplicate pieces with divergent futures.

    Tokens 1 and 2 both detokenize to "x" but lead to very different
    continuations, so synchronized sampling between them destroys a
    measurable amount of future visible entropy.
    """
    vocab = Vocab(pieces={0: b"", 1: b"x", 2: b"x", 3: b"a", 4: b"b"}, eos_id=0)
    lm = ToyLM(
        default={0: 1},
        table={
            (): {1: "0.35", 2: "0.35", 3: "0.2", 0: "0.1"},
            (1,): {3: "0.7", 4: "0.2", 0: "0.1"},
            (2,): {3: "0.1", 4: "0.2", 0: "0.7"},
        },
        max_depth=3,
        eos_id=0,
    )
    return lm, vocab


def rich_fixture(max_depth: int = 4) -> tuple[ToyLM, Vocab]:
    """Ambiguity-rich fixture for capacity comparisons.

    Most of the probability mass sits on a prefix chain (t/th/the), so prefix
    pruning loses a lot of mass and pooled synchronization discards a lot of
    intra-group entropy. Every step produces multi-member groups.
    """
    vocab = Vocab(
        pieces={0: b"", 1: b"t", 2: b"th", 3: b"the", 4: b"q", 5: b"r", 6: b"s"},
        eos_id=0,
    )
    lm = ToyLM(
        default={1: "0.28", 2: "0.24", 3: "0.18", 4: "0.13", 5: "0.07", 6: "0.05", 0: "0.05"},
        max_depth=max_depth,
        eos_id=0,
    )
    return lm, vocab


BUILTIN_FIXTURES = {
    "ab": ab_fixture,
    "plain": plain_fixture,
    "divergent": divergent_fixture,
    "rich": rich_fixture,
}
