#!/usr/bin/env python3
"""
CPC-SNN Custom Exception Classes
Provides structured error handling across the data, encoder and CPC layers
"""

import functools
import traceback
from typing import Optional, Dict, Any

class CPCSNNException(Exception):
    """Base exception for the CPC-SNN toolkit"""

    def __init__(self, message: str, error_code: Optional[str] = None, details: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.message = message
        self.error_code = error_code
        self.details = details or {}

    def to_dict(self) -> Dict[str, Any]:
        """Convert exception to dictionary"""
        return {
            'error': self.__class__.__name__,
            'message': self.message,
            'error_code': self.error_code,
            'details': self.details
        }

class DataError(CPCSNNException):
    """Dataset ingestion and sampling errors"""
    pass

class IdxFormatError(DataError):
    """IDX file has the wrong magic number or dimensionality"""
    pass

class IdxLengthError(DataError):
    """IDX payload is shorter than its header announces"""
    pass

class IdxConsistencyError(DataError):
    """Image and label files disagree on the number of entries"""
    pass

class SubsetCapacityError(DataError):
    """Not enough images of some class to build a balanced subset"""
    pass

class ChecksumMismatchError(DataError):
    """A dataset file does not match its published digest"""
    pass

class EncodingError(CPCSNNException):
    """Spike coding and similarity scoring errors"""
    pass

class EncodingFailureError(EncodingError):
    """Adaptive Poisson coding gave up without reaching the spike minimum"""

    def __init__(self, message: str, image_index: int, **kwargs):
        super().__init__(message, **kwargs)
        self.image_index = image_index
        self.details.setdefault('image_index', image_index)

class ScoringError(EncodingError):
    """Similarity score requested for a zero-norm (degenerate) vector"""
    pass

class SimulationError(CPCSNNException):
    """Spiking network simulation errors"""
    pass

class NumericalStabilityError(SimulationError):
    """A membrane potential became NaN or infinite"""
    pass

class KernelError(CPCSNNException):
    """Tensor kernel errors"""
    pass

class ShapeMismatchError(KernelError):
    """Operand shapes are incompatible"""
    pass

class DivergenceError(KernelError):
    """Loss or gradient became non-finite"""

    def __init__(self, message: str, epoch_report: Optional[Dict[str, Any]] = None, **kwargs):
        super().__init__(message, **kwargs)
        self.epoch_report = epoch_report or {}
        if epoch_report:
            self.details.setdefault('epoch_report', epoch_report)

class ImmutabilityError(KernelError):
    """Update attempted through a frozen parameter handle"""
    pass

class ConfigurationError(CPCSNNException):
    """Configuration-related errors"""
    pass

class CheckpointError(CPCSNNException):
    """Checkpoint file is malformed or of the wrong kind"""
    pass

class MissingArtifactError(CPCSNNException):
    """A required artifact (checkpoint, dataset file) is not on disk"""

    def __init__(self, message: str, artifact_path: str, hint: Optional[str] = None, **kwargs):
        super().__init__(message, **kwargs)
        self.artifact_path = artifact_path
        self.details.setdefault('artifact_path', artifact_path)
        if hint:
            self.details.setdefault('hint', hint)

class StageError(CPCSNNException):
    """Failure inside one stage of an experiment run"""

    def __init__(self, message: str, stage: str, **kwargs):
        super().__init__(message, **kwargs)
        self.stage = stage
        self.details.setdefault('stage', stage)

def handle_stage(stage: str):
    """Decorator tagging unexpected failures with the experiment stage they happened in"""
    def decorator(func):
        @functools.wraps(func)
        def wrapper(*args, **kwargs):
            try:
                return func(*args, **kwargs)
            except CPCSNNException as e:
                e.details.setdefault('stage', stage)
                raise
            except Exception as e:
                raise StageError(f"[{stage}] Unexpected error in {func.__name__}: {e}", stage=stage, details={
                    'function': func.__name__,
                    'original_error': str(e),
                    'traceback': traceback.format_exc()
                }) from e
        return wrapper
    return decorator
