"""Core dataset, model, sampling and evaluation functionality."""
from .errors import CrashBayesError, DataError, NumericalError, UsageError
from .hasher import ArtifactHasher
from .file_handler import ArtifactHeader, FileValidator

__all__ = ['CrashBayesError', 'DataError', 'NumericalError', 'UsageError',
           'ArtifactHasher', 'ArtifactHeader', 'FileValidator']
