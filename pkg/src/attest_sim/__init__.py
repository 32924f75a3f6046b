"""Desk-scale simulator of TPM-backed attestation for mobile banking logins."""

from .bank_service import BankService
from .channel import ChannelConfig, open_session
from .lma_client import LmaClient, Pin
from .tpm_core import DigestAlg, KeyKind, Locality, PcrPolicy, Tpm

__version__ = "0.1.0"

__all__ = [
    "BankService",
    "ChannelConfig",
    "DigestAlg",
    "KeyKind",
    "LmaClient",
    "Locality",
    "PcrPolicy",
    "Pin",
    "Tpm",
    "open_session",
]
