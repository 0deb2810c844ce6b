"""Black-box serializability checking for transaction histories with predicates."""

from .history import ObservedHistory, load_history, parse_history, serialize_history
from .verify import (
    INDETERMINATE,
    INVALID_HISTORY,
    NOT_SERIALIZABLE,
    SERIALIZABLE,
    Verdict,
    replay_witness,
    verify,
)

__all__ = [
    "INDETERMINATE",
    "INVALID_HISTORY",
    "NOT_SERIALIZABLE",
    "SERIALIZABLE",
    "ObservedHistory",
    "Verdict",
    "load_history",
    "parse_history",
    "replay_witness",
    "serialize_history",
    "verify",
]
__version__ = "0.1.0"
