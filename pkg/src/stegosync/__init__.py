"""Distribution-preserving steganography over ambiguous tokenizations."""

from .errors import (
    CapacityError,
    ConfigError,
    DesyncError,
    EmptyCandidateSet,
    HardStop,
    InvalidToken,
    InvalidWeight,
    ModelUnavailable,
    OracleTooLarge,
    ProtocolViolation,
    StegoError,
)
from .langmodel import BUILTIN_FIXTURES, LanguageModel, NextDist, ToyLM
from .partition import PrefixGroup, PrefixPartition, match_prefix_index, partition_by_prefix
from .pipeline import (
    SessionConfig,
    StegoResult,
    StepRecord,
    decode,
    decode_full,
    embed,
    sample_sentence,
    transcript_text,
)
from .state import Candidate, CandidateState, normalize
from .syncsample import KeyedStream, SyncContext, sync_sample
from .tokenizer import TokenSeq, VisibleString, Vocab, detokenize, fixture_vocab

__version__ = "0.1.0"

__all__ = [
    "BUILTIN_FIXTURES",
    "Candidate",
    "CandidateState",
    "CapacityError",
    "ConfigError",
    "DesyncError",
    "EmptyCandidateSet",
    "HardStop",
    "InvalidToken",
    "InvalidWeight",
    "KeyedStream",
    "LanguageModel",
    "ModelUnavailable",
    "NextDist",
    "OracleTooLarge",
    "PrefixGroup",
    "PrefixPartition",
    "ProtocolViolation",
    "SessionConfig",
    "StegoError",
    "StegoResult",
    "StepRecord",
    "SyncContext",
    "TokenSeq",
    "ToyLM",
    "VisibleString",
    "Vocab",
    "decode",
    "decode_full",
    "detokenize",
    "embed",
    "fixture_vocab",
    "match_prefix_index",
    "normalize",
    "partition_by_prefix",
    "sample_sentence",
    "sync_sample",
    "transcript_text",
    "__version__",
]
