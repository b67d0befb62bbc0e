"""Exception hierarchy shared by all labloop subsystems.

Every error raised by the library derives from :class:`LabloopError` so
callers (CLI, service) can map failures to exit codes / HTTP statuses in
one place.
"""


class LabloopError(Exception):
    """Base class for all labloop errors."""


# --- protocol parsing ---------------------------------------------------


class ParseError(LabloopError):
    """Protocol text could not be turned into a task plan."""


class UnmappableAction(ParseError):
    """A verb phrase has no entry in the closed action table."""


class SchemaError(LabloopError):
    """A structured document violates its declared schema."""


class ValidationFatal(LabloopError):
    """Plan validation found issues that make a run impossible."""


# --- backends -----------------------------------------------------------


class BackendError(LabloopError):
    """A remote backend is unreachable or replied with a transport error."""


class MalformedReply(BackendError):
    """A verifier reply does not match the PASS/FAIL grammar."""


class UnknownInstruction(LabloopError):
    """The scripted executor cannot map an instruction to an action kind."""


# --- knowledge retrieval ------------------------------------------------


class EmbedError(LabloopError):
    """Text produced no tokens to embed."""


class DimensionMismatch(LabloopError):
    """Vector operands have different dimensions."""


class ZeroVector(LabloopError):
    """Cosine similarity is undefined for a zero vector."""


class EmptyKnowledgeBase(LabloopError):
    """Retrieval was attempted against a base with no items."""


class DuplicateKey(LabloopError):
    """Two knowledge items share a key."""


# --- world simulation ---------------------------------------------------


class UnknownPredicate(LabloopError):
    """A condition references a predicate outside the closed vocabulary."""


class PreconditionViolated(LabloopError):
    """An action was applied to a world that does not admit it.

    The scheduler is expected to gate execution on a passed readiness
    verdict; seeing this error therefore points at a scheduling bug (or a
    deliberately noisy verifier), not at a normal task failure.
    """


# --- augmentation / episodes ---------------------------------------------


class EpochOutOfRange(LabloopError):
    """Epoch index outside the configured curriculum."""


class ShapeMismatch(LabloopError):
    """Action chunks disagree in horizon or frame width."""


class LengthMismatch(LabloopError):
    """Episode streams (frames/states/actions) have different lengths."""


class DecodeError(LabloopError):
    """An episode file exists but cannot be decoded."""


class IoError(LabloopError):
    """A required file is missing or unreadable."""


# --- metrics --------------------------------------------------------------


class ArityError(LabloopError):
    """A report operation received the wrong number of inputs."""


class MixedM(LabloopError):
    """Composite trials in one report have different step counts."""


class InconsistentScenario(LabloopError):
    """Run records passed to one harvest come from different scenarios."""


# --- orchestration --------------------------------------------------------


class NoSuspendedSubtask(LabloopError):
    """An intervention was submitted but nothing is awaiting one."""


class InvalidReorderTarget(LabloopError):
    """A reorder intervention named a subtask that is not pending."""
