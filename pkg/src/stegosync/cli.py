"""Command-line front end.

Subcommands: embed, decode, bench, bound, jsd. Model specs are either
"toy:<builtin>" / "toy:<table.json>" (the latter needs --vocab) or
"bridge:<host>:<port>" for a live model server. The session key comes from
--key, a config file, or the STEGOSYNC_KEY environment variable, in that
order of precedence.

Exit codes: 0 success, 1 runtime failure (desync, bad stegotext), 2 bad
configuration, 3 budget exhausted, 4 model backend unreachable.
"""

from __future__ import annotations

import argparse
import os
import sys

from .bridge_client import BridgeLM
from .errors import ConfigError, HardStop, ModelUnavailable, StegoError
from .langmodel import BUILTIN_FIXTURES, ToyLM
from .metrics import (
    capacity_accounting,
    capacity_bound,
    run_benchmark,
    sync_loss_bits,
    trace_evolution,
)
from .pipeline import SessionConfig, decode_full, embed, transcript_text
from .tokenizer import Vocab

KEY_ENV = "STEGOSYNC_KEY"


def _read_config(path: str) -> dict[str, str]:
    out: dict[str, str] = {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, 1):
                line = raw.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw!r}")
                key, _, value = line.partition("=")
                out[key.strip().replace("-", "_")] = value.strip()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    return out


class _Resolver:
    """Layered option lookup: command line beats config file beats default."""

    def __init__(self, args: argparse.Namespace, cfg: dict[str, str]):
        self.args = args
        self.cfg = cfg

    def get(self, name: str, default=None, cast=None):
        value = getattr(self.args, name, None)
        if value is None:
            value = self.cfg.get(name)
        if value is None:
            return default
        if cast is not None and isinstance(value, str):
            try:
                value = cast(value)
            except ValueError as exc:
                raise ConfigError(f"bad value for --{name.replace('_', '-')}: {exc}") from exc
        return value


def _resolve_key(res: _Resolver) -> bytes:
    value = res.get("key") or os.environ.get(KEY_ENV)
    if not value:
        raise ConfigError(f"no session key: pass --key or set {KEY_ENV}")
    try:
        key = bytes.fromhex(value)
    except ValueError as exc:
        raise ConfigError(f"--key must be hex: {exc}") from exc
    if len(key) != 32:
        raise ConfigError(f"--key must be 64 hex characters (32 bytes), got {len(key)}")
    return key


def _load_model(res: _Resolver):
    spec = res.get("model")
    if not spec:
        raise ConfigError("no model: pass --model toy:<name|path> or bridge:<host>:<port>")
    if spec.startswith("toy:"):
        name = spec[4:]
        if name in BUILTIN_FIXTURES:
            lm, vocab = BUILTIN_FIXTURES[name]()
            return lm, vocab, None
        vocab_path = res.get("vocab")
        if not vocab_path:
            raise ConfigError("toy model files need --vocab <pieces file>")
        try:
            lm = ToyLM.load(name)
            vocab = Vocab.load(vocab_path)
        except OSError as exc:
            raise ConfigError(f"cannot load model/vocab: {exc}") from exc
        return lm, vocab, None
    if spec.startswith("bridge:"):
        hostport = spec[len("bridge:") :]
        host, _, port_s = hostport.rpartition(":")
        if not host or not port_s.isdigit():
            raise ConfigError(f"bad bridge spec {spec!r}, expected bridge:<host>:<port>")
        client = BridgeLM.connect(host, int(port_s))
        return client, client.vocab, client
    raise ConfigError(f"unknown model spec {spec!r}")


def _parse_prompt(res: _Resolver) -> tuple[int, ...]:
    raw = res.get("prompt")
    if not raw:
        return ()
    try:
        return tuple(int(x) for x in str(raw).split(",") if x.strip())
    except ValueError as exc:
        raise ConfigError(f"--prompt must be comma-separated token ids: {exc}") from exc


def _session_config(res: _Resolver, collect_log: bool) -> tuple[SessionConfig, object]:
    lm, vocab, closer = _load_model(res)
    cfg = SessionConfig(
        key=_resolve_key(res),
        model=lm,
        vocab=vocab,
        top_k=res.get("top_k", 8, int),
        method=res.get("method", "lookahead"),
        prompt=_parse_prompt(res),
        max_rounds=res.get("max_rounds", 4096, int),
        max_sentences=res.get("max_sentences", 4096, int),
        collect_log=collect_log,
    )
    return cfg, closer


def _read_payload(res: _Resolver) -> bytes:
    hex_s = res.get("payload_hex")
    path = res.get("payload")
    if bool(hex_s) == bool(path):
        raise ConfigError("pass exactly one of --payload / --payload-hex")
    if hex_s:
        try:
            payload = bytes.fromhex(hex_s)
        except ValueError as exc:
            raise ConfigError(f"--payload-hex is not valid hex: {exc}") from exc
    else:
        try:
            with open(path, "rb") as fh:
                payload = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read payload file: {exc}") from exc
    if not payload:
        raise ConfigError("payload is empty")
    return payload


_HEX_MARKER = b"#hex\n"


def _encode_stego(data: bytes) -> bytes:
    """Stegotext file format: raw when valid UTF-8, hex with a marker otherwise."""
    try:
        data.decode("utf-8")
    except UnicodeDecodeError:
        return _HEX_MARKER + data.hex().encode("ascii") + b"\n"
    return data


def _decode_stego(raw: bytes) -> bytes:
    if raw.startswith(_HEX_MARKER):
        return bytes.fromhex(raw[len(_HEX_MARKER) :].decode("ascii").strip())
    return raw


def _write_bytes(path: str | None, data: bytes) -> None:
    if path:
        with open(path, "wb") as fh:
            fh.write(data)
    else:
        sys.stdout.buffer.write(data)
        sys.stdout.buffer.flush()


def _cmd_embed(res: _Resolver) -> int:
    transcript = res.get("transcript")
    cfg, closer = _session_config(res, collect_log=bool(transcript))
    try:
        result = embed(cfg, _read_payload(res))
    finally:
        if closer is not None:
            closer.close()
    _write_bytes(res.get("out"), _encode_stego(result.stegotext.data))
    if transcript:
        with open(transcript, "w", encoding="utf-8") as fh:
            fh.write(transcript_text(result))
    print(
        f"embedded {result.bits_embedded} bits in {result.tokens_emitted} tokens "
        f"({result.llm_calls} model calls, {len(result.sentences)} sentences)",
        file=sys.stderr,
    )
    return 0


def _cmd_decode(res: _Resolver) -> int:
    transcript = res.get("transcript")
    cfg, closer = _session_config(res, collect_log=bool(transcript))
    src = res.get("infile")
    if src:
        try:
            with open(src, "rb") as fh:
                data = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read stegotext: {exc}") from exc
    else:
        data = sys.stdin.buffer.read()
    try:
        payload, result = decode_full(cfg, _decode_stego(data))
    finally:
        if closer is not None:
            closer.close()
    _write_bytes(res.get("out"), payload)
    if transcript:
        with open(transcript, "w", encoding="utf-8") as fh:
            fh.write(transcript_text(result))
    print(f"recovered {len(payload)} bytes", file=sys.stderr)
    return 0


def _cmd_bench(res: _Resolver) -> int:
    lm, vocab, closer = _load_model(res)
    try:
        try:
            master = bytes.fromhex(res.get("seed", "0f" * 16))
            top_ks = [int(k) for k in str(res.get("top_k", "16,32,128")).split(",")]
        except ValueError as exc:
            raise ConfigError(f"bad --seed or --top-k value: {exc}") from exc
        methods = [m.strip() for m in res.get("methods", "lookahead,syncpool,mwis").split(",")]
        rows = []
        for top_k in top_ks:
            rows.extend(
                run_benchmark(
                    lm,
                    vocab,
                    top_k=top_k,
                    methods=methods,
                    n_runs=res.get("runs", 50, int),
                    payload_len=res.get("payload_len", 4, int),
                    master=master,
                    prompt=_parse_prompt(res),
                )
            )
    finally:
        if closer is not None:
            closer.close()
    lines = ["method,top_k,bpt,tok_per_call,kl,ratio"]
    for r in rows:
        lines.append(
            f"{r.method},{r.top_k},{r.bpt:.10g},{r.tok_per_call:.10g},"
            f"{r.kl_per_round:.10g},{r.entropy_ratio:.10g}"
        )
    text = "\n".join(lines) + "\n"
    csv_path = res.get("csv")
    if csv_path:
        with open(csv_path, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    plot_path = res.get("plot")
    if plot_path:
        _plot_bench(rows, plot_path)
    return 0


def _plot_bench(rows, path: str) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    names = [f"{r.method}@{r.top_k}" for r in rows]
    ax.bar(names, [r.bpt for r in rows], yerr=[3 * r.bpt_sigma for r in rows], capsize=4)
    ax.set_ylabel("payload bits per token")
    ax.set_title("channel capacity by method")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def _cmd_bound(res: _Resolver) -> int:
    lm, vocab, closer = _load_model(res)
    try:
        bound = capacity_bound(lm, vocab, res.get("top_k", 8, int), _parse_prompt(res))
    finally:
        if closer is not None:
            closer.close()
    print(f"h_visible_bits={bound.h_visible_bits:.10g}")
    print(f"expected_tokens={bound.expected_tokens:.10g}")
    print(f"bpt_bound={bound.bpt_bound:.10g}")
    return 0


def _cmd_jsd(res: _Resolver) -> int:
    lm, vocab, closer = _load_model(res)
    try:
        top_k = res.get("top_k", 8, int)
        prompt = _parse_prompt(res)
        report = trace_evolution(lm, vocab, top_k, prompt)
        acct = capacity_accounting(lm, vocab, top_k, prompt)
        print(f"h_visible_bits={acct.h_visible_bits:.10g}")
        print(f"expected_h_inter={acct.expected_h_inter:.10g}")
        print(f"sync_loss_bits={acct.sync_loss_bits:.10g}")
        print(f"identity_gap={acct.identity_gap:.3g}")
        for ev in report.sync_events:
            loss = sync_loss_bits(lm, vocab, top_k, ev.items, prompt)
            print(f"event q={float(ev.q):.10g} key={ev.key.hex()} loss_bits={loss:.10g}")
    finally:
        if closer is not None:
            closer.close()
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stegosync", description=__doc__)
    parser.add_argument("--config", help="key=value option file")

    model = argparse.ArgumentParser(add_help=False)
    model.add_argument("--model", help="toy:<builtin|table.json> or bridge:<host>:<port>")
    model.add_argument("--vocab", help="vocab pieces file (for toy model files)")
    model.add_argument("--top-k", dest="top_k", help="distribution truncation")
    model.add_argument("--prompt", help="comma-separated prompt token ids")

    session = argparse.ArgumentParser(add_help=False)
    session.add_argument("--key", help="64 hex chars; falls back to $" + KEY_ENV)
    session.add_argument("--method", choices=("lookahead", "syncpool", "mwis"))
    session.add_argument("--max-rounds", dest="max_rounds")
    session.add_argument("--max-sentences", dest="max_sentences")
    session.add_argument("--transcript", help="write the per-round audit transcript here")

    sub = parser.add_subparsers(dest="command", required=True)

    p_embed = sub.add_parser("embed", parents=[model, session], help="payload -> stegotext")
    p_embed.add_argument("--payload", help="payload file (raw bytes)")
    p_embed.add_argument("--payload-hex", dest="payload_hex", help="payload as a hex string")
    p_embed.add_argument("--out", help="stegotext output file (default: stdout)")

    p_decode = sub.add_parser("decode", parents=[model, session], help="stegotext -> payload")
    p_decode.add_argument("--in", dest="infile", help="stegotext input file (default: stdin)")
    p_decode.add_argument("--out", help="payload output file (default: stdout)")

    p_bench = sub.add_parser("bench", parents=[model], help="compare methods on a model")
    p_bench.add_argument("--methods", help="comma-separated method list")
    p_bench.add_argument("--runs", help="sessions per method")
    p_bench.add_argument("--payload-len", dest="payload_len", help="payload bytes per session")
    p_bench.add_argument("--seed", help="hex master seed for keys and payloads")
    p_bench.add_argument("--csv", help="write rows here instead of stdout")
    p_bench.add_argument("--plot", help="write a bar chart here")

    sub.add_parser("bound", parents=[model], help="exact capacity bound of a toy model")
    sub.add_parser("jsd", parents=[model], help="synchronization loss accounting")

    return parser


_COMMANDS = {
    "embed": _cmd_embed,
    "decode": _cmd_decode,
    "bench": _cmd_bench,
    "bound": _cmd_bound,
    "jsd": _cmd_jsd,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _read_config(args.config) if args.config else {}
        return _COMMANDS[args.command](_Resolver(args, cfg))
    except ConfigError as exc:
        print(f"stegosync: config error: {exc}", file=sys.stderr)
        return 2
    except HardStop as exc:
        print(f"stegosync: budget exhausted: {exc}", file=sys.stderr)
        return 3
    except ModelUnavailable as exc:
        print(f"stegosync: model unavailable: {exc}", file=sys.stderr)
        return 4
    except StegoError as exc:
        print(f"stegosync: {exc}", file=sys.stderr)
        return 1


def entrypoint() -> None:
    sys.exit(main())
