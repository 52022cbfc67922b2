"""Shared exception and warning types."""


class CavityFeedbackError(Exception):
    """Base class for all library errors."""


class NumericalFailure(CavityFeedbackError):
    """A numerical routine produced an unusable result (e.g. an eigenvalue
    far below zero in a matrix that should be positive semidefinite)."""


class ZeroProbabilityOutcome(CavityFeedbackError):
    """A measurement outcome with (numerically) zero probability was
    requested; conditioning on it is undefined."""


class ShapeMismatch(CavityFeedbackError):
    """Array dimensions disagree with what the surrounding structure declares."""


class FormatError(CavityFeedbackError):
    """A serialized artifact (weight file, config, wire frame) is malformed."""


class ChecksumError(FormatError):
    """A serialized artifact failed its integrity check."""


class DepthLimit(CavityFeedbackError):
    """Requested trajectory-tree depth exceeds the memory guard."""


class ProtocolError(CavityFeedbackError):
    """A bridge request frame was malformed; the session survives."""


class TransportClosed(CavityFeedbackError):
    """The bridge transport was closed by the peer; session ends cleanly."""


class TruncationWarning(UserWarning):
    """The requested operation can push noticeable population past the top
    retained Fock level; results near the truncation edge are suspect."""
