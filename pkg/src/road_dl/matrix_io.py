"""Read and write matrices as ROADMAT1 binary files or CSV text, chosen by file extension."""
import logging
from pathlib import Path
import struct

import numpy as np

from road_dl.errors import FormatError
from road_dl.linalg import Mat, as_mat

log = logging.getLogger(__name__)

MAGIC = b"ROADMAT1"
_HEADER = struct.Struct("<8sQQ")


def is_csv(path: str | Path) -> bool:
    """Return True when the path selects the CSV format."""
    return Path(path).suffix.lower() == ".csv"


def write_matrix(path: str | Path, a: Mat) -> None:
    """
    Write a matrix to ``path``.

    Parameters
    ----------
    path : str or Path
        Destination. A ``.csv`` suffix writes plain decimal rows separated by commas;
        any other suffix writes the ROADMAT1 binary layout.
    a : Mat
        Matrix to write.

    Notes
    -----
    ROADMAT1 is the 8-byte magic ``ROADMAT1``, rows and cols as little-endian uint64,
    then rows*cols little-endian float64 values in column-major order.
    """
    a = as_mat(a)
    path = Path(path)
    if is_csv(path):
        np.savetxt(path, a, delimiter=",", fmt="%.17g")
    else:
        rows, cols = a.shape
        with open(path, "wb") as file:
            file.write(_HEADER.pack(MAGIC, rows, cols))
            file.write(a.astype("<f8").tobytes(order="F"))
    log.debug("Wrote %dx%d matrix to %s", a.shape[0], a.shape[1], path)


def read_matrix(path: str | Path) -> Mat:
    """
    Read a matrix written by :func:`write_matrix`.

    Parameters
    ----------
    path : str or Path
        Source file; the suffix selects CSV or ROADMAT1 as in :func:`write_matrix`.

    Returns
    -------
    Mat
        The matrix.

    Raises
    ------
    FormatError
        If the file is truncated, has the wrong magic or holds non-numeric CSV fields.
    """
    path = Path(path)
    if is_csv(path):
        try:
            data = np.loadtxt(path, delimiter=",", ndmin=2, dtype=np.float64)
        except ValueError as exc:
            raise FormatError(f"{path} is not a numeric CSV matrix: {exc}") from exc
        return as_mat(data, name=str(path))

    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path} is too short to hold a ROADMAT1 header.")
    magic, rows, cols = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path} does not start with the ROADMAT1 magic.")
    expected = _HEADER.size + 8 * rows * cols
    if len(raw) != expected:
        raise FormatError(f"{path} holds {len(raw)} bytes, expected {expected} for a {rows}x{cols} matrix.")
    data = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).reshape((rows, cols), order="F")
    return as_mat(data.astype(np.float64), name=str(path))
