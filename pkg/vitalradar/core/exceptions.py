class VitalRadarException(Exception):
    """Base exception for the vital radar toolkit"""

    pass


class ConfigurationException(VitalRadarException):
    """Raised when a radar config, array layout or network shape is invalid"""

    pass


class SceneException(VitalRadarException):
    """Raised when a scene cannot be synthesized (e.g. scatterer behind the array)"""

    pass


class ArgumentException(VitalRadarException, ValueError):
    """Raised for invalid call arguments"""

    pass


class FitException(VitalRadarException):
    """Raised when a circle or conic fit is degenerate"""

    def __init__(self, message: str, residual: float | None = None):
        super().__init__(message)
        self.residual = residual


class FilterDesignException(VitalRadarException):
    """Raised when a band-pass filter cannot be designed"""

    pass


class MetricException(VitalRadarException):
    """Raised when a metric (PAPR, angle) is undefined for the given input"""

    pass


class NumericException(VitalRadarException):
    """Raised when a covariance stays singular after diagonal loading"""

    pass


class MappingException(VitalRadarException):
    """Raised when an ellipse set cannot be mapped to a skeleton"""

    pass


class TrainingException(VitalRadarException):
    """Raised when training diverges; carries the loss history so far"""

    def __init__(self, message: str, history: list[float] | None = None):
        super().__init__(message)
        self.history = list(history or [])


class StageException(VitalRadarException):
    """Raised when a pipeline stage fails or its upstream artifact is missing"""

    def __init__(self, message: str, stage: str | None = None):
        super().__init__(message)
        self.stage = stage
