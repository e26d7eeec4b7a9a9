"""
Exception hierarchy for the composition engine.

Every error raised on purpose by the engine derives from CompositionError so the
CLI can map it to an exit code (1 for user errors, 2 for service errors).
"""


class CompositionError(Exception):
    """Base class for all engine errors."""

    exit_code = 1


class ValidationError(CompositionError, ValueError):
    """A value violates the invariants of its type."""


class AmbiguityError(CompositionError):
    """The interaction graph does not give an object a unique anchor chain."""


class UninitializedInteractionError(CompositionError):
    """An interaction must be initialized before the scene can be flattened."""

    def __init__(self, anchor_id: str, child_id: str):
        self.anchor_id = anchor_id
        self.child_id = child_id
        super().__init__(
            f"Interaction {anchor_id}->{child_id} is Unset; run `init` for this pair first"
        )


class UnknownObjectError(CompositionError, KeyError):
    """An object or pair id is not part of the scene."""

    def __str__(self):
        return str(self.args[0]) if self.args else 'unknown object'


class ShapeMismatchError(CompositionError, ValueError):
    """Array dimensions do not match the camera or each other."""


class OracleError(CompositionError):
    """The guidance/CLF oracle failed, timed out or answered malformed data."""

    exit_code = 2


class CapabilityError(OracleError):
    """A residual was requested from an oracle that can only score."""


class InitializationError(CompositionError):
    """Monte-Carlo initialization could not produce a valid configuration."""

    exit_code = 2

    def __init__(self, message: str, diagnostics: dict = None):
        self.diagnostics = diagnostics or {}
        super().__init__(message)


class SchemaError(CompositionError, ValueError):
    """A scene file violates the schema; `pointer` is a JSON pointer to the offending value."""

    def __init__(self, pointer: str, message: str):
        self.pointer = pointer
        super().__init__(f"{pointer or '/'}: {message}")
