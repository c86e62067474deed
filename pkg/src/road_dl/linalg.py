"""Dense matrix operators shared by every solver: norms, thin SVD, rank-one projection and proximal maps."""
from dataclasses import dataclass
import logging

import numpy as np
import numpy.typing as npt

from road_dl.errors import DimensionMismatchError, NumericalFailureError

log = logging.getLogger(__name__)

Mat = npt.NDArray[np.float64]

# Columns with a norm at or below this are treated as exactly zero.
ZERO_NORM = 1e-12


def as_mat(a: npt.ArrayLike, name: str = "matrix") -> Mat:
    """
    Convert an array-like to a validated two-dimensional float64 matrix.

    Parameters
    ----------
    a : array_like
        Input values. A 1-D input is read as a single column.
    name : str
        Name used in error messages.

    Returns
    -------
    Mat
        A float64 array with at least one row and one column and only finite entries.

    Raises
    ------
    DimensionMismatchError
        If the input is not 1-D or 2-D, or has an empty dimension.
    ValueError
        If any entry is NaN or infinite.
    """
    mat = np.asarray(a, dtype=np.float64)
    if mat.ndim == 1:
        mat = mat.reshape(-1, 1)
    if mat.ndim != 2:
        raise DimensionMismatchError(f"{name} must be two-dimensional, got {mat.ndim} dimensions.")
    if mat.shape[0] < 1 or mat.shape[1] < 1:
        raise DimensionMismatchError(f"{name} must have positive dimensions, got {mat.shape}.")
    if not np.all(np.isfinite(mat)):
        raise ValueError(f"{name} contains NaN or infinite entries.")
    return mat


def frob_norm(a: Mat) -> float:
    """Return the Frobenius norm of ``a``."""
    return float(np.sqrt(np.sum(np.square(a))))


def l21_norm(a: Mat) -> float:
    """Return the sum of the column l2 norms of ``a``."""
    return float(np.sum(np.linalg.norm(a, axis=0)))


@dataclass(frozen=True)
class SvdThin:
    """Thin singular value decomposition ``a = u @ diag(s) @ vt`` with ``s`` sorted descending."""

    u: Mat
    s: npt.NDArray[np.float64]
    vt: Mat

    def reconstruct(self) -> Mat:
        """Return ``u @ diag(s) @ vt``."""
        return (self.u * self.s) @ self.vt


def svd_thin(a: Mat) -> SvdThin:
    """
    Compute the thin SVD of a matrix.

    Parameters
    ----------
    a : Mat
        Matrix of shape (M, N).

    Returns
    -------
    SvdThin
        Factors with ``u`` of shape (M, r), ``s`` of length r and ``vt`` of shape (r, N),
        where r = min(M, N).

    Raises
    ------
    NumericalFailureError
        If the LAPACK driver does not converge.
    """
    try:
        u, s, vt = np.linalg.svd(a, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailureError(f"SVD did not converge for a {a.shape[0]}x{a.shape[1]} matrix") from exc
    return SvdThin(u=u, s=s, vt=vt)


def nuclear_norm(a: Mat) -> float:
    """Return the sum of the singular values of ``a``."""
    return float(np.sum(svd_thin(a).s))


def rank_r_project(a: Mat, r: int) -> Mat:
    """
    Project onto matrices of rank at most ``r`` by hard-thresholding the spectrum.

    At a singular-value tie the triples returned first by the SVD are kept; the projection
    is set-valued there and any maximizing choice is a valid answer.

    Parameters
    ----------
    a : Mat
        Matrix to project.
    r : int
        Target rank, at least 1.

    Returns
    -------
    Mat
        The best rank-``r`` Frobenius approximation of ``a``.
    """
    if r < 1:
        raise ValueError("Rank must be at least 1.")
    if not np.any(a):
        return np.zeros_like(a)
    svd = svd_thin(a)
    r = min(r, svd.s.size)
    return (svd.u[:, :r] * svd.s[:r]) @ svd.vt[:r, :]


def rank_one_project(a: Mat) -> Mat:
    """Return ``s1 * u1 @ v1.T``, the best rank-one approximation of ``a`` (zero maps to zero)."""
    if not np.any(a):
        return np.zeros_like(a)
    svd = svd_thin(a)
    return svd.s[0] * np.outer(svd.u[:, 0], svd.vt[0, :])


def group_soft_threshold(a: Mat, t: float) -> Mat:
    """
    Proximal operator of the l2,1 norm with radius ``t``.

    Each column ``c`` becomes ``(1 - t / ||c||)_+ c``, which minimizes
    ``||X||_{2,1} + ||X - a||_F^2 / (2 t)``.

    Parameters
    ----------
    a : Mat
        Matrix whose columns are shrunk.
    t : float
        Positive shrinkage radius.

    Returns
    -------
    Mat
        The shrunk matrix; columns with norm at most ``t`` are zero.
    """
    if t <= 0:
        raise ValueError("Threshold must be positive.")
    norms = np.linalg.norm(a, axis=0)
    scale = np.zeros_like(norms)
    keep = norms > t
    scale[keep] = 1.0 - t / norms[keep]
    return a * scale


def soft_threshold(a: Mat, t: float) -> Mat:
    """Entrywise soft thresholding, the proximal operator of ``t * ||.||_1``."""
    return np.sign(a) * np.maximum(np.abs(a) - t, 0.0)


def random_unit_vectors(rows: int, count: int, rng: np.random.Generator) -> Mat:
    """Draw ``count`` standard Gaussian columns of length ``rows`` and normalize them."""
    vectors = rng.standard_normal((rows, count))
    norms = np.linalg.norm(vectors, axis=0)
    # A Gaussian draw of exactly zero norm has probability zero.
    return vectors / norms


def normalize_columns(a: Mat, rng: np.random.Generator | int = 0) -> Mat:
    """
    Scale every column of ``a`` to unit l2 norm.

    Parameters
    ----------
    a : Mat
        Matrix whose columns are normalized.
    rng : numpy.random.Generator or int
        Generator, or seed for one, used to draw replacements for zero columns.

    Returns
    -------
    Mat
        Matrix with unit-norm columns. Zero columns are replaced by random unit vectors.
    """
    norms = np.linalg.norm(a, axis=0)
    dead = norms <= ZERO_NORM
    out = np.array(a, dtype=np.float64, copy=True)
    out[:, ~dead] /= norms[~dead]
    if np.any(dead):
        if not isinstance(rng, np.random.Generator):
            rng = np.random.default_rng(rng)
        log.debug("Replacing %d zero columns with random unit vectors", int(np.sum(dead)))
        out[:, dead] = random_unit_vectors(a.shape[0], int(np.sum(dead)), rng)
    return out
