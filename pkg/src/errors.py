class SegmentationError(Exception):
    """Base exception for the segmentation engine"""
    pass


class ContractViolation(SegmentationError):
    """Raised when an argument breaks an operation's precondition"""
    pass


class VocabularyError(ContractViolation):
    """Raised when a label or class name is outside the vocabulary"""
    pass


class NonFiniteError(SegmentationError):
    """Raised when a loss or gradient is not finite"""
    pass


class InfeasibleError(SegmentationError):
    """Raised when no admissible segmentation or candidate exists"""
    pass


class CoverageError(InfeasibleError):
    """Raised when label flipping cannot cover the ground-truth set"""

    def __init__(self, message: str, partial=None, missing=()):
        super().__init__(message)
        self.partial = partial
        self.missing = tuple(missing)


class SamplingError(SegmentationError):
    """Raised when Monte Carlo sampling exhausts its attempt budget"""
    pass


class DatasetError(SegmentationError):
    """Raised for malformed or inconsistent dataset files"""
    pass


class OracleGuardError(SegmentationError):
    """Raised when an exhaustive oracle is asked to enumerate too much"""
    pass


class TrainingError(SegmentationError):
    """Raised when training cannot start or an iteration must abort"""
    pass
