"""Entanglement-based BB84 post-processing run as a two-party protocol."""

from .channel import Endpoint, ProtocolAbort
from .keys import KeyBlock, confirmation_tag, final_key_length, toeplitz_hash
from .parties import PartyView, QkdConfig, balancing_discards, privacy_amplify
from .session import (
    SessionResult,
    estimate_qber,
    reconcile,
    run_session,
    sift,
    views_from_records,
)

__all__ = [
    "Endpoint",
    "KeyBlock",
    "PartyView",
    "ProtocolAbort",
    "QkdConfig",
    "SessionResult",
    "balancing_discards",
    "confirmation_tag",
    "estimate_qber",
    "final_key_length",
    "privacy_amplify",
    "reconcile",
    "run_session",
    "sift",
    "toeplitz_hash",
    "views_from_records",
]
