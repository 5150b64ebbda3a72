"""Matrix Market coordinate I/O plus the plain-text vector/coordinate sidecars.

Values are printed with 17 significant digits so that write/read round trips
are exact for IEEE doubles.  Indices are 1-based on disk, 0-based in memory.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .linalg import as_csr


class MatrixMarketError(ValueError):
    """Malformed Matrix Market content; carries the offending line number."""

    def __init__(self, path, line_no, message):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = path
        self.line_no = line_no


def write_matrix(path, A) -> None:
    """Write a sparse matrix in coordinate format (real, general)."""
    A = as_csr(A).tocoo()
    with open(path, "w") as fh:
        fh.write("%%MatrixMarket matrix coordinate real general\n")
        fh.write(f"{A.shape[0]} {A.shape[1]} {A.nnz}\n")
        for i, j, v in zip(A.row, A.col, A.data):
            fh.write(f"{i + 1} {j + 1} {v:.17g}\n")


def read_matrix(path) -> sp.csr_matrix:
    """Read a coordinate-format Matrix Market file written by :func:`write_matrix`."""
    with open(path) as fh:
        lines = fh.readlines()
    if not lines:
        raise MatrixMarketError(path, 1, "empty file")
    header = lines[0].strip().lower().split()
    if (
        len(header) < 5
        or header[0] != "%%matrixmarket"
        or header[1] != "matrix"
        or header[2] != "coordinate"
        or header[3] != "real"
        or header[4] != "general"
    ):
        raise MatrixMarketError(path, 1, f"unsupported header {lines[0].strip()!r}")
    pos = 1
    while pos < len(lines) and (lines[pos].startswith("%") or not lines[pos].strip()):
        pos += 1
    if pos >= len(lines):
        raise MatrixMarketError(path, pos + 1, "missing size line")
    parts = lines[pos].split()
    if len(parts) != 3:
        raise MatrixMarketError(path, pos + 1, f"expected 'rows cols nnz', got {lines[pos].strip()!r}")
    try:
        n_rows, n_cols, nnz = (int(p) for p in parts)
    except ValueError as exc:
        raise MatrixMarketError(path, pos + 1, f"bad size line: {exc}") from None
    rows = np.empty(nnz, dtype=np.int64)
    cols = np.empty(nnz, dtype=np.int64)
    vals = np.empty(nnz, dtype=float)
    count = 0
    for offset, line in enumerate(lines[pos + 1:], start=pos + 2):
        stripped = line.strip()
        if not stripped or stripped.startswith("%"):
            continue
        parts = stripped.split()
        if len(parts) != 3:
            raise MatrixMarketError(path, offset, f"expected 'i j value', got {stripped!r}")
        if count >= nnz:
            raise MatrixMarketError(path, offset, f"more than the declared {nnz} entries")
        try:
            i, j, v = int(parts[0]), int(parts[1]), float(parts[2])
        except ValueError as exc:
            raise MatrixMarketError(path, offset, f"bad entry: {exc}") from None
        if not (1 <= i <= n_rows and 1 <= j <= n_cols):
            raise MatrixMarketError(path, offset, f"index ({i}, {j}) outside {n_rows} x {n_cols}")
        rows[count] = i - 1
        cols[count] = j - 1
        vals[count] = v
        count += 1
    if count != nnz:
        raise MatrixMarketError(path, len(lines), f"header declares {nnz} entries, file has {count}")
    return as_csr(sp.coo_matrix((vals, (rows, cols)), shape=(n_rows, n_cols)))


def write_vector(path, v) -> None:
    v = np.asarray(v, dtype=float).ravel()
    with open(path, "w") as fh:
        fh.write(f"{v.size}\n")
        for x in v:
            fh.write(f"{x:.17g}\n")


def read_vector(path) -> np.ndarray:
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines:
        raise MatrixMarketError(path, 1, "empty vector file")
    try:
        n = int(lines[0])
    except ValueError:
        raise MatrixMarketError(path, 1, f"bad length line {lines[0]!r}") from None
    if len(lines) - 1 != n:
        raise MatrixMarketError(path, len(lines), f"expected {n} values, found {len(lines) - 1}")
    return np.array([float(x) for x in lines[1:]], dtype=float)


def write_coordinates(path, coords_v, coords_p) -> None:
    """Sidecar with one "x y" pair per line: velocity nodes first, then pressure."""
    with open(path, "w") as fh:
        for block in (coords_v, coords_p):
            for x, y in np.asarray(block, dtype=float):
                fh.write(f"{x:.17g} {y:.17g}\n")


def read_coordinates(path, n_v_scalar) -> tuple[np.ndarray, np.ndarray]:
    rows = []
    with open(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 2:
                raise MatrixMarketError(path, line_no, f"expected 'x y', got {line.strip()!r}")
            rows.append((float(parts[0]), float(parts[1])))
    coords = np.asarray(rows, dtype=float)
    if coords.shape[0] < n_v_scalar:
        raise MatrixMarketError(path, len(rows), f"fewer than {n_v_scalar} coordinate pairs")
    return coords[:n_v_scalar], coords[n_v_scalar:]
