"""Utility modules for regflow."""

from regflow.utils.io import (
    FileFormatError,
    format_float,
    read_matrix_csv,
    read_tableau_text,
    write_csv,
    write_json,
    write_matrix_csv,
)
from regflow.utils.logging_config import get_logger, setup_logging
from regflow.utils.spaces import DimensionMismatchError, WeightedSpace, as_vector

__all__ = [
    "FileFormatError",
    "format_float",
    "read_matrix_csv",
    "read_tableau_text",
    "write_csv",
    "write_json",
    "write_matrix_csv",
    "get_logger",
    "setup_logging",
    "DimensionMismatchError",
    "WeightedSpace",
    "as_vector",
]
