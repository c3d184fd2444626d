import json
import math
import subprocess
import sys

import pytest

from conftest import RawClient


class TestBanner:
    def test_fields(self, client):
        banner = client.banner
        assert banner["lmbridge"] == "1"
        assert banner["name"] == "tiny"
        assert banner["eos_id"] == 0
        assert banner["vocab_size"] == 25
        assert banner["max_context"] == 48
        assert banner["nl_free"] is True
        assert banner["concatenative"] is True

    def test_vocab_info_echoes_banner(self, client):
        reply = client.call(op="vocab_info")
        assert reply == {
            "ok": True,
            "eos_id": client.banner["eos_id"],
            "size": client.banner["vocab_size"],
        }


class TestNextDist:
    def test_reply_shape(self, client):
        reply = client.call(op="next_dist", context_ids=[7, 3], top_k=6)
        assert reply["ok"] is True
        assert len(reply["ids"]) == 6
        assert len(reply["probs"]) == 6
        assert set(reply["pieces_hex"]) == {str(t) for t in reply["ids"]}
        for hex_s in reply["pieces_hex"].values():
            bytes.fromhex(hex_s)

    def test_probs_are_decimal_strings_in_order(self, client):
        reply = client.call(op="next_dist", context_ids=[], top_k=8)
        values = [float(s) for s in reply["probs"]]
        assert all(isinstance(s, str) for s in reply["probs"])
        assert all(0 < v <= 1 for v in values)
        assert values == sorted(values, reverse=True)
        # 17 significant digits: the string is a lossless spelling of the double
        for s, v in zip(reply["probs"], values):
            assert format(v, ".17g") == s

    def test_renormalized_sum_within_tolerance(self, client):
        for top_k in (2, 5, 8, 25):
            reply = client.call(op="next_dist", context_ids=[12], top_k=top_k)
            total = math.fsum(float(s) for s in reply["probs"])
            assert abs(total - 1.0) <= 1e-6

    def test_top_one_renormalizes_to_unity(self, client):
        reply = client.call(op="next_dist", context_ids=[7], top_k=1)
        assert reply["probs"] == ["1"]

    def test_truncation_preserves_ratios(self, client):
        full = client.call(op="next_dist", context_ids=[3, 9], top_k=25)
        cut = client.call(op="next_dist", context_ids=[3, 9], top_k=4)
        pf = {t: float(s) for t, s in zip(full["ids"], full["probs"])}
        pc = {t: float(s) for t, s in zip(cut["ids"], cut["probs"])}
        ids = list(pc)
        assert ids == full["ids"][:4]
        for a in ids:
            for b in ids:
                ratio_cut = pc[a] / pc[b]
                ratio_full = pf[a] / pf[b]
                assert abs(ratio_cut - ratio_full) <= 1e-6 * ratio_full

    def test_deterministic_within_connection(self, client):
        line = json.dumps({"op": "next_dist", "context_ids": [5, 1], "top_k": 7})
        raw = line.encode() + b"\n"
        assert client.send_raw(raw) == client.send_raw(raw)

    def test_deterministic_across_connections(self, port):
        raw = json.dumps({"op": "next_dist", "context_ids": [2, 8, 4], "top_k": 9}).encode() + b"\n"
        a, b = RawClient(port), RawClient(port)
        try:
            assert a.banner == b.banner
            assert a.send_raw(raw) == b.send_raw(raw)
        finally:
            a.close()
            b.close()


class TestDetok:
    def test_concatenation(self, client, service):
        reply = client.call(op="detok", context_ids=[7, 3, 1])
        expect = service.model.pieces[7] + service.model.pieces[3] + service.model.pieces[1]
        assert bytes.fromhex(reply["bytes_hex"]) == expect

    def test_empty(self, client):
        assert client.call(op="detok", context_ids=[])["bytes_hex"] == ""


class TestErrors:
    """Every malformed request gets an error record; the connection lives on."""

    def test_bad_json_keeps_connection(self, client):
        reply = json.loads(client.send_raw(b"this is not json\n"))
        assert reply["ok"] is False
        assert reply["code"] == "bad_json"
        assert client.call(op="vocab_info")["ok"] is True

    def test_unknown_op(self, client):
        reply = client.call(op="frobnicate")
        assert reply == {"ok": False, "code": "bad_op", "error": "unknown op 'frobnicate'"}

    def test_missing_field(self, client):
        assert client.call(op="next_dist", context_ids=[1])["code"] == "bad_request"

    def test_bad_top_k(self, client):
        assert client.call(op="next_dist", context_ids=[], top_k=0)["code"] == "bad_request"
        assert client.call(op="next_dist", context_ids=[], top_k="8")["code"] == "bad_request"

    def test_bad_token_id(self, client):
        assert client.call(op="next_dist", context_ids=[999], top_k=4)["code"] == "bad_token"
        assert client.call(op="detok", context_ids=[999])["code"] == "bad_token"

    def test_context_overflow(self, client):
        reply = client.call(op="next_dist", context_ids=[1] * 49, top_k=4)
        assert reply["code"] == "context_overflow"

    def test_non_object_record(self, client):
        reply = json.loads(client.send_raw(b"[1, 2, 3]\n"))
        assert reply["ok"] is False
        assert reply["code"] == "bad_request"


class TestCli:
    def test_stdio_transport(self):
        proc = subprocess.Popen(
            [sys.executable, "-m", "lmbridge.server", "--stdio"],
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
        )
        try:
            banner = json.loads(proc.stdout.readline())
            assert banner["lmbridge"] == "1"
            proc.stdin.write(json.dumps({"op": "vocab_info"}).encode() + b"\n")
            proc.stdin.flush()
            reply = json.loads(proc.stdout.readline())
            assert reply == {"ok": True, "eos_id": 0, "size": 25}
            proc.stdin.close()
            assert proc.wait(timeout=10) == 0
        finally:
            proc.kill()

    def test_unknown_model_exits_nonzero(self):
        proc = subprocess.run(
            [sys.executable, "-m", "lmbridge.server", "--model", "nosuch", "--stdio"],
            capture_output=True,
            timeout=30,
        )
        assert proc.returncode == 1
        assert b"unknown model" in proc.stderr

    def test_unknown_device_exits_nonzero(self):
        proc = subprocess.run(
            [sys.executable, "-m", "lmbridge.server", "--device", "cuda", "--stdio"],
            capture_output=True,
            timeout=30,
        )
        assert proc.returncode == 1
        assert b"only cpu" in proc.stderr
