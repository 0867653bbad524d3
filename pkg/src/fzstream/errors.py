"""Exception hierarchy shared by every fzstream module."""


class FzError(Exception):
    """Base class for all fzstream errors."""


class ShapeMismatch(FzError, ValueError):
    pass


class RangeViolation(FzError, ValueError):
    pass


class NonFinite(FzError, ValueError):
    pass


class EmptyInput(FzError, ValueError):
    pass


class DegenerateGeometry(FzError, ValueError):
    pass


class DegenerateBox(FzError, ValueError):
    pass


class NoValidSample(FzError, LookupError):
    pass


class TrackParseError(FzError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


# codec


class CodecError(FzError):
    pass


class UnknownSymbol(CodecError, ValueError):
    pass


class TruncatedStream(CodecError):
    pass


class ChecksumFailure(CodecError):
    """Decoded symbols do not match the frame checksum."""


class PriorMismatch(ChecksumFailure):
    """Checksum failed on an intact stream: the decoder is using another prior or config."""


# wire


class ProtocolError(FzError):
    pass


class BadMagic(ProtocolError):
    pass


class VersionMismatch(ProtocolError):
    pass


class PriorHashMismatch(ProtocolError):
    pass


class ChannelClosed(FzError, ConnectionError):
    """The channel ended; ``received`` is how many bytes of the pending read arrived."""

    def __init__(self, message="", received=0):
        super().__init__(message)
        self.received = received


class Desynchronized(ChecksumFailure):
    """A delta frame was dropped because the receiver is waiting for a keyframe."""
