"""Exception types raised across the engine."""


class DeliberantError(Exception):
    """Base class for all engine errors."""


class DimensionMismatch(DeliberantError):
    """Operands disagree on embedding dimension or shape."""


class ZeroNormInput(DeliberantError):
    """An embedding with zero Frobenius norm reached a similarity kernel."""


class EmptyEvidence(DeliberantError):
    """A fact score was requested against an empty evidence set."""


class EmptyText(DeliberantError):
    """An embedder was asked to embed an empty string."""


class DuplicateId(DeliberantError):
    """Two knowledge items share an id within one base."""


class EmptyCorpus(DeliberantError):
    """A knowledge base was built from, or queried with, zero items."""


class DisconnectedGraph(DeliberantError):
    """Entity traversal reached a node with no outgoing edges mid-path."""


class EndpointUnavailable(DeliberantError):
    """All retries against a remote model endpoint were exhausted."""


class EndpointTimeout(DeliberantError):
    """A single remote call exceeded the configured timeout."""


class MalformedResponse(DeliberantError):
    """A remote endpoint returned a body the client could not parse."""


class BackendFailure(DeliberantError):
    """A single backend call failed; carries the viewpoint index."""

    def __init__(self, index: int, reason: str):
        super().__init__(f"backend failure for viewpoint {index}: {reason}")
        self.index = index
        self.reason = reason


class TotalBackendFailure(DeliberantError):
    """Every viewpoint generation in one deliberation failed."""


class SingleViewpoint(DeliberantError):
    """The diversity objective is undefined for a single viewpoint."""


class NonDeterministicEvaluator(DeliberantError):
    """Two identical probes of the gradient evaluator disagreed."""


class TooFewRuns(DeliberantError):
    """Consistency needs at least two repeated answers."""


class MissingGoldAnswers(DeliberantError):
    """Accuracy was requested on a dataset without gold answers."""


class ConfigError(DeliberantError):
    """A configuration file failed validation; names the offending key."""


class TrainingDiverged(DeliberantError):
    """The training loss became non-finite."""
