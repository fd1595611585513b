"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class FakeStackError(Exception):
    exit_code = 1


class ConfigError(FakeStackError, ValueError):
    """Invalid experiment configuration; ``items`` holds every problem found."""

    exit_code = 2

    def __init__(self, message, items=None):
        self.items = list(items or [])
        if self.items:
            message = message + "\n" + "\n".join(f"  - {item}" for item in self.items)
        super().__init__(message)


class DataError(FakeStackError, ValueError):
    exit_code = 3


class SchemaError(DataError):
    pass


class LabelValueError(DataError):
    def __init__(self, message, row=None, value=None):
        super().__init__(message)
        self.row = row
        self.value = value


class DegenerateDataError(DataError):
    pass


class LeakageError(DataError):
    def __init__(self, message, ids=()):
        super().__init__(message)
        self.ids = tuple(ids)


class ShapeError(FakeStackError, ValueError):
    exit_code = 3


class TrainingError(FakeStackError, RuntimeError):
    exit_code = 4


class NonFiniteLossError(TrainingError):
    def __init__(self, epoch, batch, loss):
        super().__init__(f"non-finite loss {loss!r} at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch
        self.loss = loss


class AvailabilityError(FakeStackError, RuntimeError):
    exit_code = 4


class IntegrityError(FakeStackError, ValueError):
    exit_code = 5

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


class CoverageError(IntegrityError):
    def __init__(self, message, missing=(), extra=()):
        super().__init__(message)
        self.missing = tuple(missing)
        self.extra = tuple(extra)


class CompletenessError(IntegrityError):
    def __init__(self, model, post_id, reason="missing"):
        super().__init__(f"member {model!r} {reason} post id {post_id!r}", key=(model, post_id))
        self.model = model
        self.post_id = post_id


class ConfigurationError(ConfigError):
    """Runtime configuration mismatch, e.g. ensemble members in the wrong order."""


class PredictionFileError(DataError):
    """Malformed prediction cache file; ``line`` is 1-based (the header is line 1)."""

    def __init__(self, message, path=None, line=None):
        where = f"{path}:{line}: " if line is not None else (f"{path}: " if path else "")
        super().__init__(where + message)
        self.path = path
        self.line = line
