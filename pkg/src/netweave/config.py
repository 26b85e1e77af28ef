"""Identifiers and the ``key=value`` federation config file."""

from __future__ import annotations

import re
from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import ConfigError, InvalidId

_ID_RE = re.compile(r"[A-Za-z0-9-]{1,64}")

COMM_TYPES = ("tcp", "pubsub", "secure")
DEFAULT_CONNECT_TIMEOUT = 10.0


def check_id(value: str, what: str = "node id") -> str:
    """Return *value* if it is a valid node/federation id, else raise InvalidId.

    Underscores are reserved as topic separators, so they never appear here.
    """
    if not isinstance(value, str) or not _ID_RE.fullmatch(value):
        raise InvalidId(f"invalid {what}: {value!r}")
    return value


@dataclass
class FederationConfig:
    federation_id: str = "Fed1"
    comm_type: str = "tcp"
    coordinator_host: str = "127.0.0.1"
    coordinator_port: int = 15045
    broker_host: str = "127.0.0.1"
    broker_port: int = 1883
    kdc_host: str = "127.0.0.1"
    kdc_port: int = 21900
    credential_path: str | None = None
    # federate ids in index order; position is the destination index of tagged messages
    nodes: list[str] = field(default_factory=lambda: ["fed0", "fed1"])
    connect_timeout: float = DEFAULT_CONNECT_TIMEOUT

    def __post_init__(self):
        check_id(self.federation_id, "federation id")
        if self.comm_type not in COMM_TYPES:
            raise ConfigError(f"comm_type must be one of {COMM_TYPES}, got {self.comm_type!r}")
        for n in self.nodes:
            check_id(n)
        if len(set(self.nodes)) != len(self.nodes):
            raise ConfigError("node ids must be unique within a federation")

    @classmethod
    def from_text(cls, text: str) -> FederationConfig:
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected key=value")
            key, value = (s.strip() for s in line.split("=", 1))
            key = key.replace("-", "_")
            if key not in known:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            if key.endswith("_port"):
                kwargs[key] = int(value)
            elif key == "connect_timeout":
                kwargs[key] = float(value)
            elif key == "nodes":
                kwargs[key] = [v.strip() for v in value.split(",") if v.strip()]
            else:
                kwargs[key] = value
        return cls(**kwargs)

    @classmethod
    def load(cls, path: str | Path) -> FederationConfig:
        return cls.from_text(Path(path).read_text())

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if value is None:
                continue
            if f.name == "nodes":
                value = ",".join(value)
            lines.append(f"{f.name}={value}")
        return "\n".join(lines) + "\n"
