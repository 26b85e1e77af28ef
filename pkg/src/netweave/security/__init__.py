"""Key distribution and the encrypted, MAC-authenticated transport."""

from .credentials import Credential, load_credential, load_registry, save_credential, save_registry
from .crypto import SessionKey, ciphertext_len, open_record, seal
from .kdc import KdcServer, kdc_fetch_by_id, kdc_request_key, kdc_serve

__all__ = [
    "Credential", "KdcServer", "SessionKey", "ciphertext_len", "kdc_fetch_by_id",
    "kdc_request_key", "kdc_serve", "load_credential", "load_registry", "open_record",
    "save_credential", "save_registry", "seal",
]
