"""
Exceptions raised by the delaynet toolkit
"""
from typing import Optional, Tuple


class DelayNetError(Exception):
    """Base class for all toolkit failures"""

    pass


class ConfigurationError(DelayNetError):
    """Exception raised for invalid configurations, shapes or extents"""

    pass


class DataError(DelayNetError):
    """Exception raised for malformed or unusable input data"""

    pass


class StateError(DelayNetError):
    """Exception raised when an object is used in the wrong state"""

    pass


class NumericError(DelayNetError):
    """Exception raised when a computation produces non-finite values"""

    def __init__(self, message: str, op_kind: Optional[str] = None, index: Optional[Tuple[int, ...]] = None):
        """Initialize the error

        Args:
            message: Human readable description
            op_kind: Name of the autodiff operation that produced the value, if any
            index: Position of the first offending element, if known
        """
        super().__init__(message)
        self.op_kind = op_kind
        self.index = index
