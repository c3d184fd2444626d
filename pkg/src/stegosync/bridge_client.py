"""Client for an external next-token distribution server.

The server speaks newline-delimited UTF-8 JSON over a byte stream (TCP or a
pipe pair): one request object per line, one response per line, strictly in
order. Operations: "next_dist" (context_ids, top_k -> ids, probs,
pieces_hex), "detok" (context_ids -> bytes_hex) and "vocab_info" (-> eos_id,
size). Probabilities travel as decimal strings so the wire format never
depends on JSON float quirks; both session ends parse and renormalize them by
the same procedure, which keeps embed and decode bit-identical.

The vocabulary is learned lazily: every distribution response carries the
byte pieces of the tokens it mentions, and global facts (EOS id, whether any
piece contains a newline) arrive in the connect banner, since only the server
sees the whole table.
"""

from __future__ import annotations

import json
import math
import socket

from .errors import ModelUnavailable, ProtocolViolation
from .langmodel import NextDist
from .tokenizer import TokenSeq

PROTOCOL_VERSION = "1"


class BridgeVocab:
    """Vocab view fed from server responses; fetches missing pieces on demand."""

    __slots__ = ("eos_id", "pieces", "_client", "_nl_free")

    def __init__(self, eos_id: int, nl_free: bool, client: "BridgeLM"):
        self.eos_id = eos_id
        self.pieces: dict[int, bytes] = {eos_id: b""}
        self._client = client
        self._nl_free = nl_free

    def piece(self, token_id: int) -> bytes:
        got = self.pieces.get(token_id)
        if got is None:
            got = self._client.detok((token_id,))
            self.pieces[token_id] = got
        return got

    def __contains__(self, token_id: int) -> bool:
        return token_id in self.pieces

    def delimiter_free(self, delimiter: bytes) -> bool:
        # Only the newline capability is reported by the server; any other
        # delimiter is conservatively assumed to occur somewhere.
        if delimiter == b"\n":
            return self._nl_free
        return False

    def absorb(self, pieces_hex: dict) -> None:
        for tid_s, hex_s in pieces_hex.items():
            self.pieces[int(tid_s)] = bytes.fromhex(hex_s)


class BridgeLM:
    """Line-protocol model client; satisfies the LanguageModel interface."""

    def __init__(self, rfile, wfile, sock: socket.socket | None = None):
        self._rfile = rfile
        self._wfile = wfile
        self._sock = sock
        self._cache: dict[tuple[TokenSeq, int], NextDist] = {}
        banner = self._read_line()
        version = str(banner.get("lmbridge", ""))
        if version != PROTOCOL_VERSION:
            raise ProtocolViolation(f"unsupported bridge protocol version {version!r}")
        self.name = str(banner.get("name", "?"))
        self.eos_id = int(banner["eos_id"])
        self.vocab_size = int(banner.get("vocab_size", 0))
        self.max_context = int(banner.get("max_context", 0))
        self.concatenative = bool(banner.get("concatenative", False))
        self.vocab = BridgeVocab(self.eos_id, bool(banner.get("nl_free", False)), self)

    @classmethod
    def connect(cls, host: str, port: int, timeout: float = 10.0) -> "BridgeLM":
        try:
            sock = socket.create_connection((host, port), timeout=timeout)
        except OSError as exc:
            raise ModelUnavailable(f"cannot reach bridge at {host}:{port}: {exc}") from exc
        return cls(sock.makefile("rb"), sock.makefile("wb"), sock)

    # -- wire plumbing ------------------------------------------------------

    def _read_line(self) -> dict:
        try:
            line = self._rfile.readline()
        except OSError as exc:
            raise ModelUnavailable(f"bridge connection lost: {exc}") from exc
        if not line:
            raise ModelUnavailable("bridge closed the connection")
        try:
            doc = json.loads(line)
        except ValueError as exc:
            raise ProtocolViolation(f"bridge sent invalid JSON: {line[:80]!r}") from exc
        if not isinstance(doc, dict):
            raise ProtocolViolation("bridge sent a non-object record")
        return doc

    def _request(self, op: str, **fields) -> dict:
        record = {"op": op, **fields}
        try:
            self._wfile.write(json.dumps(record).encode("utf-8") + b"\n")
            self._wfile.flush()
        except OSError as exc:
            raise ModelUnavailable(f"bridge connection lost: {exc}") from exc
        reply = self._read_line()
        if not reply.get("ok", False):
            raise ProtocolViolation(f"bridge error: {reply.get('error', 'unspecified')}")
        return reply

    # -- model interface ------------------------------------------------------

    def next_dist(self, context: TokenSeq, top_k: int) -> NextDist:
        key = (tuple(context), top_k)
        got = self._cache.get(key)
        if got is not None:
            return got
        reply = self._request("next_dist", context_ids=list(context), top_k=top_k)
        ids = reply.get("ids")
        probs = reply.get("probs")
        if not isinstance(ids, list) or not isinstance(probs, list):
            raise ProtocolViolation("bridge next_dist reply missing ids/probs")
        values = [float(p) for p in probs]
        total = math.fsum(values)
        if abs(total - 1.0) > 1e-6:
            raise ProtocolViolation(f"bridge probabilities sum to {total!r}")
        if total != 1.0:
            values = [v / total for v in values]
        dist = NextDist(tokens=tuple(int(t) for t in ids), probs=tuple(values))
        self.vocab.absorb(reply.get("pieces_hex", {}))
        self._cache[key] = dist
        return dist

    def detok(self, ids: TokenSeq) -> bytes:
        reply = self._request("detok", context_ids=list(ids))
        return bytes.fromhex(reply["bytes_hex"])

    def vocab_info(self) -> dict:
        reply = self._request("vocab_info")
        return {"eos_id": int(reply["eos_id"]), "size": int(reply["size"])}

    def close(self) -> None:
        try:
            self._wfile.close()
            self._rfile.close()
        finally:
            if self._sock is not None:
                self._sock.close()

    def __enter__(self) -> "BridgeLM":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
