"""Line-protocol server for next-token distributions and detokenization.

One JSON object per line, UTF-8, over local TCP or a stdio pipe. A version
banner goes out when a connection opens; after that the server answers one
request per line, in order. Operations:

  {"op": "next_dist", "context_ids": [...], "top_k": n}
      -> {"ok": true, "ids": [...], "probs": ["...", ...], "pieces_hex": {...}}
  {"op": "detok", "context_ids": [...]}
      -> {"ok": true, "bytes_hex": "..."}
  {"op": "vocab_info"}
      -> {"ok": true, "eos_id": n, "size": n}

Probabilities travel as decimal strings with 17 significant digits, which
parse back to the exact same doubles on the other side. Malformed requests
get {"ok": false, "code", "error"} and the connection stays open; only EOF
closes it. Inference is serialized behind one lock regardless of how many
connections are active.
"""

from __future__ import annotations

import argparse
import json
import socketserver
import sys
import threading

from .model import TinyCausalLM

PROTOCOL_VERSION = "1"


class RequestError(Exception):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


def _field(record: dict, name: str):
    if name not in record:
        raise RequestError("bad_request", f"missing field {name!r}")
    return record[name]


def _int_list(value, what: str) -> list[int]:
    if not isinstance(value, list) or not all(isinstance(t, int) for t in value):
        raise RequestError("bad_request", f"{what} must be a list of integers")
    return value


class BridgeService:
    """Protocol logic, independent of the transport."""

    def __init__(self, model: TinyCausalLM, name: str = "tiny"):
        self.model = model
        self.name = name
        self._lock = threading.Lock()
        self.nl_free = all(b"\n" not in p for p in model.pieces.values())
        self.concatenative = self._probe_concatenative()

    def _probe_concatenative(self) -> bool:
        """Detokenizing a sequence must equal joining its pieces one by one."""
        ids = sorted(self.model.pieces)
        for probe in (ids, ids[::3], ids[::-1][:7]):
            whole = self.model.detokenize(probe)
            joined = b"".join(self.model.detokenize([t]) for t in probe)
            if whole != joined:
                return False
        return True

    def banner(self) -> dict:
        return {
            "lmbridge": PROTOCOL_VERSION,
            "name": self.name,
            "eos_id": self.model.eos_id,
            "vocab_size": len(self.model),
            "max_context": self.model.max_context,
            "nl_free": self.nl_free,
            "concatenative": self.concatenative,
        }

    def handle(self, record) -> dict:
        if not isinstance(record, dict):
            raise RequestError("bad_request", "record must be an object")
        op = record.get("op")
        if op == "next_dist":
            return self._next_dist(record)
        if op == "detok":
            return self._detok(record)
        if op == "vocab_info":
            return {"ok": True, "eos_id": self.model.eos_id, "size": len(self.model)}
        raise RequestError("bad_op", f"unknown op {op!r}")

    def _next_dist(self, record: dict) -> dict:
        context = _int_list(_field(record, "context_ids"), "context_ids")
        top_k = _field(record, "top_k")
        if not isinstance(top_k, int) or top_k < 1:
            raise RequestError("bad_request", "top_k must be a positive integer")
        if len(context) > self.model.max_context:
            raise RequestError(
                "context_overflow",
                f"context has {len(context)} tokens, limit {self.model.max_context}",
            )
        for t in context:
            if t not in self.model.pieces:
                raise RequestError("bad_token", f"unknown token id {t}")
        with self._lock:
            dist = self.model.next_dist(tuple(context), top_k)
        return {
            "ok": True,
            "ids": [t for t, _ in dist],
            "probs": [format(p, ".17g") for _, p in dist],
            "pieces_hex": {str(t): self.model.pieces[t].hex() for t, _ in dist},
        }

    def _detok(self, record: dict) -> dict:
        ids = _int_list(_field(record, "context_ids"), "context_ids")
        try:
            data = self.model.detokenize(ids)
        except ValueError as exc:
            raise RequestError("bad_token", str(exc)) from exc
        return {"ok": True, "bytes_hex": data.hex()}

    def serve_stream(self, rfile, wfile) -> None:
        def send(doc: dict) -> None:
            wfile.write(json.dumps(doc).encode("utf-8") + b"\n")
            wfile.flush()

        send(self.banner())
        while True:
            line = rfile.readline()
            if not line:
                return
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except ValueError:
                send({"ok": False, "code": "bad_json", "error": "invalid JSON record"})
                continue
            try:
                send(self.handle(record))
            except RequestError as exc:
                send({"ok": False, "code": exc.code, "error": str(exc)})


class _Handler(socketserver.StreamRequestHandler):
    def handle(self) -> None:
        try:
            self.server.service.serve_stream(self.rfile, self.wfile)
        except (BrokenPipeError, ConnectionResetError):
            pass


class BridgeTCPServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, address: tuple[str, int], service: BridgeService):
        super().__init__(address, _Handler)
        self.service = service


def load_model(spec: str, seed: int, device: str) -> TinyCausalLM:
    if device != "cpu":
        raise RuntimeError(f"device {device!r} not available, only cpu")
    if spec == "tiny":
        return TinyCausalLM(seed=seed)
    raise RuntimeError(f"unknown model {spec!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lmbridge", description=__doc__)
    parser.add_argument("--model", default="tiny", help="model name (built-in: tiny)")
    parser.add_argument("--port", type=int, default=7863, help="TCP port (0 = ephemeral)")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--seed", type=int, default=1789, help="weight seed")
    parser.add_argument("--stdio", action="store_true", help="serve one session over stdin/stdout")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        model = load_model(args.model, args.seed, args.device)
    except RuntimeError as exc:
        print(f"lmbridge: {exc}", file=sys.stderr)
        return 1
    service = BridgeService(model, name=args.model)
    if args.stdio:
        service.serve_stream(sys.stdin.buffer, sys.stdout.buffer)
        return 0
    with BridgeTCPServer((args.host, args.port), service) as server:
        host, port = server.server_address[:2]
        print(f"lmbridge: serving {args.model} on {host}:{port}", file=sys.stderr)
        try:
            server.serve_forever()
        except KeyboardInterrupt:
            pass
    return 0


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
