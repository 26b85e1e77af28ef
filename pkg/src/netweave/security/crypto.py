"""AES-128-CBC records authenticated with HMAC-SHA256 (encrypt-then-MAC).

Record layout: ``iv (16) | ciphertext (16*k) | mac (32)`` where the MAC
covers ``iv | ciphertext``. The MAC is always checked before decrypting.
"""

from __future__ import annotations

import hashlib
import hmac
import os
from dataclasses import dataclass

from cryptography.hazmat.primitives import padding
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

from ..errors import IntegrityViolation, ProtocolError

BLOCK = 16
IV_LEN = 16
MAC_LEN = 32
KEY_LEN = 16
KEY_ID_LEN = 8
NONCE_LEN = 16


def ciphertext_len(plain_len: int) -> int:
    """PKCS#7 always adds 1..16 bytes, so a full block is added on exact multiples."""
    return BLOCK * (plain_len // BLOCK + 1)


def record_len(plain_len: int) -> int:
    return IV_LEN + ciphertext_len(plain_len) + MAC_LEN


def mac(key: bytes, *parts: bytes) -> bytes:
    h = hmac.new(bytes(key), digestmod=hashlib.sha256)
    for p in parts:
        h.update(p)
    return h.digest()


def seal(cipher_key: bytes, mac_key: bytes, plaintext: bytes, iv: bytes | None = None) -> bytes:
    iv = os.urandom(IV_LEN) if iv is None else iv
    padder = padding.PKCS7(BLOCK * 8).padder()
    padded = padder.update(plaintext) + padder.finalize()
    enc = Cipher(algorithms.AES(bytes(cipher_key)), modes.CBC(iv)).encryptor()
    ct = enc.update(padded) + enc.finalize()
    return iv + ct + mac(mac_key, iv, ct)


def open_record(cipher_key: bytes, mac_key: bytes, record: bytes) -> bytes:
    body_len = len(record) - IV_LEN - MAC_LEN
    if body_len < BLOCK or body_len % BLOCK:
        raise IntegrityViolation(f"record length {len(record)} is not a valid record size")
    iv, ct, tag = record[:IV_LEN], record[IV_LEN:-MAC_LEN], record[-MAC_LEN:]
    if not hmac.compare_digest(tag, mac(mac_key, iv, ct)):
        raise IntegrityViolation("record MAC mismatch")
    dec = Cipher(algorithms.AES(bytes(cipher_key)), modes.CBC(iv)).decryptor()
    padded = dec.update(ct) + dec.finalize()
    unpadder = padding.PKCS7(BLOCK * 8).unpadder()
    try:
        return unpadder.update(padded) + unpadder.finalize()
    except ValueError as exc:
        raise ProtocolError("invalid padding under a valid MAC") from exc


@dataclass
class SessionKey:
    key_id: bytes
    cipher_key: bytearray
    mac_key: bytearray
    session_nonce: bytearray

    PACKED_LEN = KEY_ID_LEN + 2 * KEY_LEN + NONCE_LEN

    @classmethod
    def generate(cls, key_id: bytes | None = None) -> SessionKey:
        ck = os.urandom(KEY_LEN)
        mk = os.urandom(KEY_LEN)
        while mk == ck:
            mk = os.urandom(KEY_LEN)
        return cls(key_id or os.urandom(KEY_ID_LEN), bytearray(ck), bytearray(mk),
                   bytearray(os.urandom(NONCE_LEN)))

    def pack(self) -> bytes:
        return bytes(self.key_id) + bytes(self.cipher_key) + bytes(self.mac_key) + bytes(self.session_nonce)

    @classmethod
    def unpack(cls, data: bytes) -> SessionKey:
        if len(data) != cls.PACKED_LEN:
            raise ProtocolError("bad session key encoding")
        k = KEY_ID_LEN
        return cls(bytes(data[:k]), bytearray(data[k:k + KEY_LEN]),
                   bytearray(data[k + KEY_LEN:k + 2 * KEY_LEN]), bytearray(data[k + 2 * KEY_LEN:]))

    def fingerprint(self) -> str:
        return hashlib.sha256(self.pack()).hexdigest()[:16]

    def seal(self, plaintext: bytes) -> bytes:
        return seal(self.cipher_key, self.mac_key, plaintext)

    def open(self, record: bytes) -> bytes:
        return open_record(self.cipher_key, self.mac_key, record)

    def zeroize(self) -> None:
        for buf in (self.cipher_key, self.mac_key, self.session_nonce):
            buf[:] = bytes(len(buf))

    @property
    def zeroized(self) -> bool:
        return not any(self.cipher_key) and not any(self.mac_key) and not any(self.session_nonce)
