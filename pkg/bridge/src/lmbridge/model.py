"""A tiny deterministic causal transformer over a synthetic byte vocabulary.

The weights are drawn once from a seeded generator, so two processes built
with the same seed agree on every distribution (per host; cross-hardware
float drift is out of scope). The vocabulary deliberately contains merged
pieces that extend shorter ones, so next-token slices are full of prefix
overlaps, which is the regime the client-side channel cares about.

Sentences terminate: the end token's logit ramps up with context length and
a hard depth cap forces it outright, mirroring how a fine-tuned model stops.
"""

from __future__ import annotations

import math

import numpy as np

_SINGLES = ("a", "b", "c", "d", "e", " ")
_MERGES = (
    "ab", "abc", "ac", "ba", "bc", "bcd", "ca", "cd", "cde",
    "da", "de", "dea", "ea", "eab", "a ", "b ", " a", " b",
)


def _norm(x: np.ndarray) -> np.ndarray:
    mean = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mean) / np.sqrt(var + 1e-5)


class TinyCausalLM:
    """One-block pre-norm transformer; float64 numpy, no training."""

    def __init__(
        self,
        seed: int = 1789,
        d_model: int = 32,
        max_context: int = 48,
        sentence_depth: int = 12,
    ):
        if sentence_depth >= max_context:
            raise ValueError("sentence_depth must stay below max_context")
        self.eos_id = 0
        self.pieces: dict[int, bytes] = {0: b""}
        for i, s in enumerate(_SINGLES + _MERGES, start=1):
            self.pieces[i] = s.encode("ascii")
        self.d_model = d_model
        self.max_context = max_context
        self.sentence_depth = sentence_depth
        vocab = len(self.pieces)
        rng = np.random.default_rng(seed)
        scale = 0.4
        self.bos = rng.normal(0.0, scale, d_model)
        self.emb = rng.normal(0.0, scale, (vocab, d_model))
        self.pos = rng.normal(0.0, scale, (max_context + 1, d_model))
        self.wq = rng.normal(0.0, scale, (d_model, d_model))
        self.wk = rng.normal(0.0, scale, (d_model, d_model))
        self.wv = rng.normal(0.0, scale, (d_model, d_model))
        self.wo = rng.normal(0.0, scale, (d_model, d_model))
        self.w1 = rng.normal(0.0, scale, (d_model, 4 * d_model))
        self.w2 = rng.normal(0.0, scale, (4 * d_model, d_model))
        self.out = rng.normal(0.0, scale, (d_model, vocab))

    def __len__(self) -> int:
        return len(self.pieces)

    def detokenize(self, ids) -> bytes:
        parts = []
        for t in ids:
            piece = self.pieces.get(int(t))
            if piece is None:
                raise ValueError(f"unknown token id {t}")
            parts.append(piece)
        return b"".join(parts)

    def _logits(self, ids: tuple[int, ...]) -> np.ndarray:
        x = np.concatenate([self.bos[None, :], self.emb[list(ids)]], axis=0)
        x = x + self.pos[: x.shape[0]]
        h = _norm(x)
        scores = (h @ self.wq) @ (h @ self.wk).T / math.sqrt(self.d_model)
        n = x.shape[0]
        scores[np.triu(np.ones((n, n), dtype=bool), k=1)] = -1e30
        scores -= scores.max(axis=-1, keepdims=True)
        att = np.exp(scores)
        att /= att.sum(axis=-1, keepdims=True)
        x = x + (att @ (h @ self.wv)) @ self.wo
        h = _norm(x)
        x = x + np.maximum(h @ self.w1, 0.0) @ self.w2
        return _norm(x[-1]) @ self.out

    def next_dist(self, context_ids, top_k: int) -> list[tuple[int, float]]:
        """Top-k next-token probabilities, renormalized, sorted by
        descending probability with ties broken by ascending id."""
        ids = tuple(int(t) for t in context_ids)
        if top_k < 1:
            raise ValueError("top_k must be at least 1")
        for t in ids:
            if t not in self.pieces:
                raise ValueError(f"unknown token id {t}")
        if len(ids) > self.max_context:
            raise ValueError(f"context longer than {self.max_context} tokens")
        if len(ids) >= self.sentence_depth:
            return [(self.eos_id, 1.0)]
        z = self._logits(ids)
        z = z - z.max()
        # Ramp the end token so sentences usually finish before the hard cap.
        z[self.eos_id] += 0.9 * len(ids) - 4.0
        weights = np.exp(z).tolist()
        order = sorted(range(len(weights)), key=lambda t: (-weights[t], t))[:top_k]
        total = math.fsum(weights[t] for t in order)
        return [(t, weights[t] / total) for t in order]
