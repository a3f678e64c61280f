
class BaseAPNetException(Exception):
    def __init__(self, message: str = "An unexpected error occurred in the augmentation pathways system.", details: dict | None = None):
        super().__init__(message)
        self.message = message
        self.details = details if details is not None else {}

    def __str__(self):
        if self.details:
            return f"{self.message} Details: {self.details}"
        return self.message

class AugmentationException(BaseAPNetException):
    def __init__(self, message: str = "Error during image augmentation.", details: dict | None = None):
        super().__init__(f"AugmentationError: {message}", details)

class IncomparablePoliciesException(AugmentationException):
    def __init__(self, message: str = "Policies cannot be ordered by deviation.", details: dict | None = None):
        super().__init__(f"IncomparablePolicies: {message}", details)

class PathwaySpecException(BaseAPNetException):
    def __init__(self, message: str = "Invalid pathway channel layout.", details: dict | None = None):
        super().__init__(f"PathwaySpecError: {message}", details)

class RoutingException(BaseAPNetException):
    def __init__(self, message: str = "Feature map does not match the requested pathway level.", details: dict | None = None):
        super().__init__(f"RoutingError: {message}", details)

class SurgeryException(BaseAPNetException):
    def __init__(self, message: str = "Invalid network plan.", details: dict | None = None):
        super().__init__(f"SurgeryError: {message}", details)

class ObjectiveException(BaseAPNetException):
    def __init__(self, message: str = "Error computing the training objective.", details: dict | None = None):
        super().__init__(f"ObjectiveError: {message}", details)

class NonFiniteLossException(ObjectiveException):
    def __init__(self, message: str = "Loss component is NaN or infinite.", details: dict | None = None):
        super().__init__(f"NonFiniteLoss: {message}", details)

class HeAPException(BaseAPNetException):
    def __init__(self, message: str = "Error in heterogeneous pathway stage.", details: dict | None = None):
        super().__init__(f"HeAPError: {message}", details)

class ConfigurationException(BaseAPNetException):
    def __init__(self, message: str = "Invalid experiment configuration.", details: dict | None = None):
        super().__init__(f"ConfigurationError: {message}", details)

class DataIngestionException(BaseAPNetException):
    def __init__(self, message: str = "Error during dataset ingestion.", details: dict | None = None):
        super().__init__(f"DataIngestionError: {message}", details)

class CheckpointException(BaseAPNetException):
    def __init__(self, message: str = "Error reading or writing a checkpoint.", details: dict | None = None):
        super().__init__(f"CheckpointError: {message}", details)

class TrainingException(BaseAPNetException):
    def __init__(self, message: str = "Training run failed.", details: dict | None = None):
        super().__init__(f"TrainingError: {message}", details)

class EvaluationException(BaseAPNetException):
    def __init__(self, message: str = "Evaluation failed.", details: dict | None = None):
        super().__init__(f"EvaluationError: {message}", details)
