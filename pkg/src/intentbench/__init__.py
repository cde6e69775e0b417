"""Toolkit for specializing and benchmarking small LLMs on cart-intent extraction.

Subpackages cover the full loop: synthetic multilingual dataset generation,
strict exact-match evaluation against any inference backend, operational
profiling (throughput, memory, energy), GGUF file inspection, and Pareto
trade-off analysis.
"""

__version__ = "0.1.0"

from .records import (  # noqa: F401
    Action,
    ErrorClass,
    IntentRecord,
    MatchOutcome,
    canonical_serialize,
    exact_match,
    parse_intent_json,
)
