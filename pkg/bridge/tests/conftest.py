import json
import socket
import threading

import pytest

from lmbridge.model import TinyCausalLM
from lmbridge.server import BridgeService, BridgeTCPServer


class RawClient:
    """Bare line-protocol client for poking the server directly."""

    def __init__(self, port: int):
        self.sock = socket.create_connection(("127.0.0.1", port), timeout=10)
        self.rfile = self.sock.makefile("rb")
        self.wfile = self.sock.makefile("wb")
        self.banner = json.loads(self.rfile.readline())

    def send_raw(self, line: bytes) -> bytes:
        self.wfile.write(line)
        self.wfile.flush()
        return self.rfile.readline()

    def call(self, **record) -> dict:
        return json.loads(self.send_raw(json.dumps(record).encode() + b"\n"))

    def close(self) -> None:
        self.sock.close()


@pytest.fixture(scope="session")
def service():
    return BridgeService(TinyCausalLM(), name="tiny")


@pytest.fixture(scope="session")
def server(service):
    srv = BridgeTCPServer(("127.0.0.1", 0), service)
    thread = threading.Thread(target=srv.serve_forever, daemon=True)
    thread.start()
    yield srv
    srv.shutdown()
    srv.server_close()


@pytest.fixture(scope="session")
def port(server):
    return server.server_address[1]


@pytest.fixture()
def client(port):
    c = RawClient(port)
    yield c
    c.close()
