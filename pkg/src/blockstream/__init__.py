"""Multi-latency block-streaming sequence transduction."""

from .blocking import Block, BlockSpec, delay_ms, segment, suffix_mask
from .errors import (
    BlockstreamError,
    ContractError,
    EmptyInputError,
    MaskError,
    ParseError,
    ShapeError,
)
from .metrics import EditCounts, LatencyReport, TokenEvent, error_rate, measure_latency
from .multilatency import LatencyConfig, NeuralRecognizer, StepOutput, Streamer, run_stream
from .synthdata import Corpus, CorpusSpec, Utterance, generate_corpus, read_corpus, write_corpus
from .transducer import BLANK, EOS, Vocabulary

__all__ = [
    "BLANK",
    "EOS",
    "Block",
    "BlockSpec",
    "BlockstreamError",
    "ContractError",
    "Corpus",
    "CorpusSpec",
    "EditCounts",
    "EmptyInputError",
    "LatencyConfig",
    "LatencyReport",
    "MaskError",
    "NeuralRecognizer",
    "ParseError",
    "ShapeError",
    "StepOutput",
    "Streamer",
    "TokenEvent",
    "Utterance",
    "Vocabulary",
    "delay_ms",
    "error_rate",
    "generate_corpus",
    "measure_latency",
    "read_corpus",
    "run_stream",
    "segment",
    "suffix_mask",
    "write_corpus",
]
