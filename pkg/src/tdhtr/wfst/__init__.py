"""Tropical-semiring transducers and CTC search-graph decoding."""

from .decoder import DecodeResult, brute_force_decode, decode
from .fst import (EPS, INF, Arc, Fst, compose, connect, determinize, minimize, push_weights,
                  read_symbols, rmepsilon, shortest_path, string_weight, transduce, write_symbols)
from .graphs import (Lexicon, SearchGraph, build_grammar_fst, build_lexicon_fst, build_lg,
                     build_search_graph, build_token_fst, grammar_from_texts)
from .lm import GrammarModel

__all__ = [
    "EPS", "INF", "Arc", "Fst", "compose", "connect", "determinize", "minimize", "push_weights",
    "read_symbols", "rmepsilon", "shortest_path", "string_weight", "transduce", "write_symbols",
    "Lexicon", "SearchGraph", "build_grammar_fst", "build_lexicon_fst", "build_lg",
    "build_search_graph", "build_token_fst", "grammar_from_texts", "GrammarModel",
    "DecodeResult", "brute_force_decode", "decode",
]
