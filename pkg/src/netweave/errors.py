"""Exception taxonomy shared by every transport."""


class NetweaveError(Exception):
    """Base class for all library errors."""


class InvalidId(NetweaveError, ValueError):
    pass


class ConfigError(NetweaveError, ValueError):
    pass


class ProtocolError(NetweaveError):
    """Malformed or unexpected bytes on a session."""


class SessionClosed(NetweaveError):
    """Operation attempted on a closed session, or the peer hung up."""


class TruncatedMessage(SessionClosed):
    """Peer went away in the middle of a frame."""


class IntegrityViolation(NetweaveError):
    """A secure record failed MAC verification."""


class HandshakeFailed(NetweaveError):
    pass


class Timeout(NetweaveError, TimeoutError):
    pass


class Refused(NetweaveError, ConnectionRefusedError):
    pass


class AddressInUse(NetweaveError, OSError):
    pass


class BrokerUnreachable(NetweaveError, ConnectionError):
    pass


class KdcUnreachable(NetweaveError, ConnectionError):
    pass


class AuthFailed(NetweaveError):
    pass


class KeyNotFound(NetweaveError, LookupError):
    pass


class CredentialMissing(NetweaveError, FileNotFoundError):
    pass
