"""
File formats used by regflow.

- Matrix CSV: one row per line, comma-separated decimals, no header.
- Tableau text: first line s, then s rows of A, then b, then c,
  whitespace-separated decimals.
- Result CSV/JSON: floats written with 17 significant digits so regression
  anchors round-trip exactly.
"""

import csv
import json
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from regflow.utils.logging_config import get_logger

logger = get_logger("utils.io")


class FileFormatError(ValueError):
    """Raised when an input file does not follow its documented format."""

    def __init__(self, path: str | Path, reason: str):
        self.path = str(path)
        self.reason = reason
        super().__init__(f"{path}: {reason}")


def format_float(value: float | None) -> str:
    """Format a float with 17 significant digits; None becomes an empty field."""
    if value is None:
        return ""
    return f"{float(value):.17g}"


def read_matrix_csv(path: str | Path) -> np.ndarray:
    """
    Read a dense matrix from a headerless CSV file.

    Raises:
        FileFormatError: On ragged rows, empty files or non-numeric cells
    """
    path = Path(path)
    rows: list[list[float]] = []
    with path.open(newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            try:
                rows.append([float(cell) for cell in row])
            except ValueError as e:
                raise FileFormatError(path, f"line {lineno}: {e}") from e

    if not rows:
        raise FileFormatError(path, "no matrix rows found")
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise FileFormatError(path, "rows have different lengths")

    logger.debug(f"Read {len(rows)}x{width} matrix from {path}")
    return np.array(rows, dtype=float)


def write_matrix_csv(path: str | Path, matrix: np.ndarray) -> None:
    """Write a matrix in the headerless CSV format."""
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        for row in np.atleast_2d(matrix):
            writer.writerow([format_float(v) for v in row])


def read_tableau_text(path: str | Path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Read a Butcher tableau file.

    Returns:
        (A, b, c) as float arrays; shapes are validated later by validate_tableau
    """
    path = Path(path)
    lines = [ln.split() for ln in path.read_text().splitlines() if ln.strip()]
    if not lines:
        raise FileFormatError(path, "empty tableau file")
    try:
        s = int(lines[0][0])
    except ValueError as e:
        raise FileFormatError(path, f"first line must be the stage count: {e}") from e
    if s < 1:
        raise FileFormatError(path, f"stage count must be positive, got {s}")
    if len(lines) != s + 3:
        raise FileFormatError(path, f"expected {s + 3} non-empty lines, got {len(lines)}")

    if any(len(row) != s for row in lines[1 : s + 1]):
        raise FileFormatError(path, f"every row of A must have {s} entries")
    try:
        a = np.array([[float(v) for v in row] for row in lines[1 : s + 1]])
        b = np.array([float(v) for v in lines[s + 1]])
        c = np.array([float(v) for v in lines[s + 2]])
    except ValueError as e:
        raise FileFormatError(path, f"non-numeric entry: {e}") from e
    return a, b, c


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    """Write rows with a header; floats use 17 significant digits."""
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow(
                [format_float(v) if isinstance(v, float) or v is None else v for v in row]
            )


def write_json(path: str | Path, payload: dict) -> None:
    """Write a JSON document with sorted keys so repeated runs are byte-identical."""
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
