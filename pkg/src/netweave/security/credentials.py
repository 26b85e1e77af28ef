"""Pre-shared node credentials.

File layout: ``b"NWCR" | id_len:u8 | node_id | secret (32)``. A KDC registry
file is any number of these records back to back.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

from ..config import check_id
from ..errors import CredentialMissing, ProtocolError

MAGIC = b"NWCR"
SECRET_LEN = 32


@dataclass(frozen=True)
class Credential:
    node_id: str
    shared_secret: bytes

    def __post_init__(self):
        check_id(self.node_id)
        if len(self.shared_secret) != SECRET_LEN:
            raise ValueError(f"shared secret must be {SECRET_LEN} bytes")

    @classmethod
    def generate(cls, node_id: str) -> Credential:
        return cls(node_id, os.urandom(SECRET_LEN))

    def pack(self) -> bytes:
        nid = self.node_id.encode()
        return MAGIC + bytes((len(nid),)) + nid + self.shared_secret

    def __repr__(self):
        return f"Credential({self.node_id!r}, <secret>)"


def unpack_credentials(data: bytes) -> list[Credential]:
    out, pos = [], 0
    while pos < len(data):
        if data[pos:pos + 4] != MAGIC:
            raise ProtocolError(f"bad credential magic at offset {pos}")
        n = data[pos + 4] if pos + 4 < len(data) else 0
        end = pos + 5 + n + SECRET_LEN
        if n == 0 or end > len(data):
            raise ProtocolError("truncated credential record")
        out.append(Credential(data[pos + 5:pos + 5 + n].decode(), data[pos + 5 + n:end]))
        pos = end
    return out


def load_credential(path: str | Path | None) -> Credential:
    if not path or not Path(path).exists():
        raise CredentialMissing(f"credential file not found: {path}")
    creds = unpack_credentials(Path(path).read_bytes())
    if len(creds) != 1:
        raise ProtocolError(f"{path} must hold exactly one credential")
    return creds[0]


def save_credential(cred: Credential, path: str | Path) -> None:
    p = Path(path)
    p.write_bytes(cred.pack())
    p.chmod(0o600)


def load_registry(path: str | Path) -> list[Credential]:
    if not Path(path).exists():
        raise CredentialMissing(f"registry file not found: {path}")
    return unpack_credentials(Path(path).read_bytes())


def save_registry(creds: list[Credential], path: str | Path) -> None:
    p = Path(path)
    p.write_bytes(b"".join(c.pack() for c in creds))
    p.chmod(0o600)
