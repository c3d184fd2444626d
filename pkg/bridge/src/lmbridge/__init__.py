"""Model server speaking the stegosync bridge line protocol."""

from .model import TinyCausalLM
from .server import PROTOCOL_VERSION, BridgeService, BridgeTCPServer

__all__ = ["TinyCausalLM", "BridgeService", "BridgeTCPServer", "PROTOCOL_VERSION"]
