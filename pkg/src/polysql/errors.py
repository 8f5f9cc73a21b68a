"""Exception types shared across the pipeline."""


class PolysqlError(Exception):
    """Base class for all library errors."""


class UnreadableDatabase(PolysqlError):
    """The database file is missing or cannot be opened/queried."""


class UnsupportedDialect(PolysqlError):
    """The requested dialect is not supported for this operation."""


class DanglingSubset(PolysqlError):
    """A schema subset references a column unknown to the document."""


class InvalidSubset(PolysqlError):
    """A schema subset violates a structural invariant."""


class BackendFailure(PolysqlError):
    """A chat or embedding backend could not produce a response."""


class UnboundRole(BackendFailure):
    """No backend is configured for the requested role id."""


class ProviderExhausted(BackendFailure):
    """A live provider failed after all configured retries."""


class MockExhausted(BackendFailure):
    """A scripted mock backend has no entries left to serve."""


class DimensionMismatch(BackendFailure):
    """An embedding provider returned vectors of the wrong length."""


class ExtractionFailure(PolysqlError):
    """No SQL statement could be extracted from a model response."""


class EmptyClusterSet(PolysqlError):
    """Reorganization was asked to order an empty cluster set."""


class NoApplicableMutation(PolysqlError):
    """No seeded mutation applies to the given SQL statement."""


class GoldExecutionFailure(PolysqlError):
    """A reference query failed to execute on its own database."""


class NoCorrectCandidate(PolysqlError):
    """No generated candidate matched the reference result."""


class MalformedDataset(PolysqlError):
    """A dataset file could not be parsed into benchmark items."""


class ConfigInvalid(PolysqlError):
    """The pipeline configuration is missing or inconsistent."""
