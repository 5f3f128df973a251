"""Exact A* CCG parsing with a global recursive score and violation-based learning."""
from .decoder import (
    Certificate,
    DecodeLimits,
    DecodeResult,
    decode_astar,
    decode_beam,
    decode_best_first,
    decode_local,
    decode_rerank,
)
from .global_model import ModelDims, ParameterStore
from .grammar import GrammarConfig, Lexicon, parse_category
from .hypergraph import ParseNode, from_bracket, to_bracket
from .learning import TrainConfig, UpdateKind, train
from .local_model import SupertagTable

__version__ = "0.1.0"

__all__ = [
    "Certificate", "DecodeLimits", "DecodeResult", "GrammarConfig", "Lexicon", "ModelDims",
    "ParameterStore", "ParseNode", "SupertagTable", "TrainConfig", "UpdateKind",
    "decode_astar", "decode_beam", "decode_best_first", "decode_local", "decode_rerank",
    "from_bracket", "parse_category", "to_bracket", "train",
]
