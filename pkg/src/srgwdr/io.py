"""CSV and JSON persistence.

Matrices are written with 17 significant digits so that a write/read round
trip reproduces every float exactly.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .errors import DataFormatError

FLOAT_FORMAT = "%.17g"


def _is_number(token: str) -> bool:
    try:
        float(token)
    except ValueError:
        return False
    return True


def read_matrix(path, dtype=np.float64, allow_nan: bool = False) -> np.ndarray:
    """Read a comma-separated matrix, one sample per row.

    A first row that does not parse as numbers is taken as a header. Blank
    lines are skipped. ``allow_nan`` accepts ``nan`` cells (missing scores
    in emitted tables); infinities are always rejected.

    Raises
    ------
    DataFormatError
        On ragged rows or unparsable entries, naming the line number.
    """
    path = Path(path)
    rows = []
    width = None
    with path.open(newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            cells = [c.strip() for c in row]
            if not cells or all(c == "" for c in cells):
                continue
            if not rows and lineno == 1 and not all(_is_number(c) for c in cells):
                continue
            try:
                values = [float(c) for c in cells]
            except ValueError:
                bad = next(c for c in cells if not _is_number(c))
                raise DataFormatError(
                    f"{path}:{lineno}: cannot parse {bad!r} as a number"
                ) from None
            if width is None:
                width = len(values)
            elif len(values) != width:
                raise DataFormatError(
                    f"{path}:{lineno}: expected {width} columns, found {len(values)}"
                )
            rows.append(values)
    if not rows:
        raise DataFormatError(f"{path}: no data rows")
    A = np.asarray(rows, dtype=np.float64)
    bad = np.isinf(A) if allow_nan else ~np.isfinite(A)
    if bad.any():
        i = int(np.argwhere(bad)[0, 0])
        raise DataFormatError(f"{path}: non-finite value in data row {i + 1}")
    return A.astype(dtype)


def read_labels(path) -> np.ndarray:
    """Read one integer label per row (first column; header optional)."""
    A = read_matrix(path)
    col = A[:, 0]
    if not np.all(col == np.round(col)):
        i = int(np.flatnonzero(col != np.round(col))[0])
        raise DataFormatError(f"{path}: label in data row {i + 1} is not an integer")
    return col.astype(np.int64)


def write_matrix(path, A, header=None) -> Path:
    path = Path(path)
    A = np.atleast_2d(np.asarray(A))
    if A.dtype.kind in "iub":
        fmt = "%d"
    else:
        fmt = FLOAT_FORMAT
    kwargs = {"delimiter": ",", "fmt": fmt}
    if header is not None:
        kwargs["header"] = ",".join(header)
        kwargs["comments"] = ""
    np.savetxt(path, A, **kwargs)
    return path


def write_vector(path, v, name: str) -> Path:
    return write_matrix(path, np.asarray(v).reshape(-1, 1), header=[name])


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj) if np.isfinite(obj) else None
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, Path):
        return str(obj)
    return obj


def write_json(path, obj) -> Path:
    path = Path(path)
    path.write_text(json.dumps(_plain(obj), indent=2, sort_keys=True) + "\n")
    return path


def read_json(path):
    return json.loads(Path(path).read_text())
