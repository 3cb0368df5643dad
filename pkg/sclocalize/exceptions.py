class PipelineError(Exception):
    """Base class for every failure raised by the localization pipeline."""


class ConfigurationError(PipelineError):
    pass


class SceneGenerationError(PipelineError):
    pass


class ImagePairError(PipelineError):
    pass


class SceneFormatError(PipelineError):
    """Malformed scene/pose/theta/pair document; message names line or field."""


class DimensionMismatchError(PipelineError):
    pass


class AsymmetricMatrixError(PipelineError):
    """A matrix that must be symmetric is not."""


class InsufficientCorrespondencesError(PipelineError):
    pass


class DegenerateConfigurationError(PipelineError):
    pass


class ProcrustesError(PipelineError):
    pass


class ConsensusError(PipelineError):
    pass


class NoOverlapError(PipelineError):
    pass


class DivergenceError(PipelineError):
    pass


class InsufficientInliersError(PipelineError):
    pass


class LMStallError(PipelineError):
    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class EDGradientUnstableError(PipelineError):
    pass


class UndefinedCorrelationError(PipelineError):
    pass


class EmptyInputError(PipelineError):
    pass


class InvalidPoseError(PipelineError):
    pass
