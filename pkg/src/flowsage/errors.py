"""Exception hierarchy shared across the package."""


class FlowsageError(Exception):
    pass


# ingestion
class MissingHeader(FlowsageError):
    pass


class SchemaError(FlowsageError):
    def __init__(self, missing, message=None):
        self.missing = list(missing)
        super().__init__(message or "missing retained fields: " + ", ".join(self.missing))


class RowError(FlowsageError):
    pass


class EmptyInput(FlowsageError):
    pass


# features
class AddressError(FlowsageError, ValueError):
    pass


class EmptyVocabulary(FlowsageError):
    pass


class TooFewSamples(FlowsageError):
    pass


# autodiff / training
class ShapeError(FlowsageError, ValueError):
    pass


class NonScalarLoss(FlowsageError):
    pass


class NaNGradient(FlowsageError, FloatingPointError):
    def __init__(self, name):
        self.name = name
        super().__init__(f"non-finite gradient in parameter {name!r}")


class NaNLoss(FlowsageError, FloatingPointError):
    def __init__(self, epoch, batch):
        self.epoch = epoch
        self.batch = batch
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch}")


class UnknownKind(FlowsageError, ValueError):
    pass


class PipelineMismatch(FlowsageError):
    pass


class FormatError(FlowsageError):
    pass


class VersionError(FormatError):
    pass


# metrics
class LengthMismatch(FlowsageError, ValueError):
    pass


class EmptyMatrix(FlowsageError):
    pass


class SingleClass(FlowsageError, ValueError):
    pass


class ConfigError(FlowsageError, ValueError):
    pass
