"""Exception types raised across the pipeline."""


class TrustFuseError(Exception):
    """Base class for all package errors."""


class InsufficientSamples(TrustFuseError, ValueError):
    pass


class SingularHomography(TrustFuseError, ValueError):
    pass


class ConfigMismatch(TrustFuseError, ValueError):
    pass


class ImageTooSmall(TrustFuseError, ValueError):
    pass


class EmptyTrainingSet(TrustFuseError, ValueError):
    pass


class DimensionMismatch(TrustFuseError, ValueError):
    pass


class SingleClassTraining(TrustFuseError, ValueError):
    pass


class MissingClassifier(TrustFuseError, KeyError):
    pass


class ShapeMismatch(TrustFuseError, ValueError):
    pass


class DegenerateSystem(TrustFuseError, ValueError):
    pass


class UnknownScene(TrustFuseError, KeyError):
    pass


class NoModalitiesAvailable(TrustFuseError, ValueError):
    pass


class AllModalitiesMissing(TrustFuseError, ValueError):
    pass


class CorruptModel(TrustFuseError):
    pass


class VersionMismatch(CorruptModel):
    pass


class MissingFile(TrustFuseError, FileNotFoundError):
    pass


class ManifestMismatch(TrustFuseError, ValueError):
    pass


class LengthMismatch(TrustFuseError, ValueError):
    pass
