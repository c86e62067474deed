"""Two-stage dictionary learning baselines: OMP and lasso coding, MOD and K-SVD dictionary updates."""
from collections.abc import Callable
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from enum import Enum
import logging
from typing import NamedTuple

import numpy as np
import numpy.typing as npt
import scipy.linalg

from road_dl.errors import NumericalFailureError
from road_dl.linalg import Mat, as_mat, normalize_columns, soft_threshold, svd_thin
from road_dl.model import LearnedModel, SolveReport

log = logging.getLogger(__name__)

# Residual norm below which OMP stops adding atoms to a column.
OMP_RESIDUAL_FLOOR = 1e-10
# Ridge added to a singular restricted Gram matrix in OMP.
OMP_RIDGE = 1e-12
# Ridge of the MOD normal equations.
MOD_RIDGE = 1e-12
# Columns coded per OMP work item; fixed so results do not depend on the worker count.
OMP_CHUNK = 256


class Coder(Enum):
    """Sparse coding stage."""

    OMP = "omp"
    LASSO = "lasso"


class Updater(Enum):
    """Dictionary update stage."""

    MOD = "mod"
    KSVD = "ksvd"


@dataclass
class SparseCode:
    """Sparse coefficients with the support of every column."""

    coefficients: Mat = field(metadata={"description": "K x N coefficient matrix"})
    support: list[list[int]] = field(metadata={
        "description": "Selected atom indices per column, in selection order"})
    regularized: npt.NDArray[np.bool_] | None = field(default=None, metadata={
        "description": "Columns whose least-squares refit needed the ridge"})

    def __post_init__(self) -> None:
        """Check that non-zeros lie on the recorded supports."""
        if len(self.support) != self.coefficients.shape[1]:
            raise ValueError("Support list length must equal the number of columns.")
        for col, indices in enumerate(self.support):
            off_support = np.delete(self.coefficients[:, col], indices)
            if np.any(off_support):
                raise ValueError(f"Column {col} has non-zeros outside its support.")


class OmpResult(NamedTuple):
    """OMP result for a single column."""

    support: list[int]
    coefficients: npt.NDArray[np.float64]
    regularized: bool


def _solve_restricted(gram: npt.NDArray[np.float64],
                      rhs: npt.NDArray[np.float64]) -> tuple[npt.NDArray[np.float64], npt.NDArray[np.bool_]]:
    """Solve a stack of restricted normal equations, adding a ridge to singular ones."""
    flagged = np.zeros(gram.shape[0], dtype=bool)
    try:
        return np.linalg.solve(gram, rhs[..., None])[..., 0], flagged
    except np.linalg.LinAlgError:
        pass
    out = np.empty_like(rhs)
    eye = np.eye(gram.shape[1])
    for idx, (g, b) in enumerate(zip(gram, rhs)):
        try:
            out[idx] = np.linalg.solve(g, b)
        except np.linalg.LinAlgError:
            out[idx] = np.linalg.solve(g + OMP_RIDGE * eye, b)
            flagged[idx] = True
    if np.any(flagged):
        log.warning("OMP refit needed a ridge on %d singular Gram matrices", int(np.sum(flagged)))
    return out, flagged


def _omp_chunk(d: Mat, y: Mat, s: int  # pylint: disable=too-many-locals
               ) -> tuple[Mat, npt.NDArray[np.int64], npt.NDArray[np.int64], npt.NDArray[np.bool_]]:
    """Batched OMP over the columns of ``y``; all active columns share the same support size."""
    k_atoms = d.shape[1]
    n_cols = y.shape[1]
    gram = d.T @ d
    dty = d.T @ y
    support = np.zeros((n_cols, s), dtype=np.int64)
    sizes = np.zeros(n_cols, dtype=np.int64)
    coefficients = np.zeros((k_atoms, n_cols))
    regularized = np.zeros(n_cols, dtype=bool)
    residual = y.copy()
    active = np.linalg.norm(residual, axis=0) >= OMP_RESIDUAL_FLOOR
    for t in range(s):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        corr = np.abs(d.T @ residual[:, idx])
        if t:
            corr[support[idx, :t].T, np.arange(idx.size)[None, :]] = -1.0
        # argmax returns the first maximum, so ties go to the lowest atom index
        support[idx, t] = np.argmax(corr, axis=0)
        sup = support[idx, :t + 1]
        solution, flagged = _solve_restricted(gram[sup[:, :, None], sup[:, None, :]], dty[sup, idx[:, None]])
        regularized[idx] |= flagged
        coefficients[:, idx] = 0.0
        coefficients[sup, idx[:, None]] = solution
        residual[:, idx] = y[:, idx] - d @ coefficients[:, idx]
        sizes[idx] = t + 1
        active[idx] = np.linalg.norm(residual[:, idx], axis=0) >= OMP_RESIDUAL_FLOOR
    return coefficients, support, sizes, regularized


def omp_code(d: Mat, y: Mat, s: int, workers: int = 1) -> SparseCode:
    """
    Code every column of ``y`` with orthogonal matching pursuit.

    Parameters
    ----------
    d : Mat
        Dictionary with unit-norm columns, shape (M, K).
    y : Mat
        Signals, shape (M, N).
    s : int
        Sparsity budget per column, at most M.
    workers : int
        Threads used across column chunks. The result does not depend on it.

    Returns
    -------
    SparseCode
        Coefficients with at most ``s`` non-zeros per column.
    """
    d = as_mat(d, name="dictionary")
    y = as_mat(y, name="signals")
    if s < 1 or s > d.shape[0] or s > d.shape[1]:
        raise ValueError(f"Sparsity {s} must be between 1 and min(M, K) = {min(d.shape)}.")
    starts = range(0, y.shape[1], OMP_CHUNK)
    chunks = [y[:, start:start + OMP_CHUNK] for start in starts]
    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda chunk: _omp_chunk(d, chunk, s), chunks))
    else:
        results = [_omp_chunk(d, chunk, s) for chunk in chunks]
    coefficients = np.concatenate([result[0] for result in results], axis=1)
    support = [row[:size].tolist()
               for result in results
               for row, size in zip(result[1], result[2])]
    regularized = np.concatenate([result[3] for result in results])
    return SparseCode(coefficients=coefficients, support=support, regularized=regularized)


def omp(d: Mat, y_col: npt.ArrayLike, s: int) -> OmpResult:
    """
    Code a single signal with orthogonal matching pursuit.

    Each step adds the atom most correlated with the residual (lowest index on ties) and
    refits all selected coefficients by least squares. Coding stops early once the residual
    norm drops below 1e-10.

    Parameters
    ----------
    d : Mat
        Dictionary with unit-norm columns.
    y_col : array_like
        Signal of length M.
    s : int
        Sparsity budget.

    Returns
    -------
    OmpResult
        Selected support, the length-K coefficient vector, and whether a ridge was needed.
    """
    code = omp_code(d, as_mat(y_col, name="signal"), s)
    return OmpResult(support=code.support[0],
                     coefficients=code.coefficients[:, 0],
                     regularized=bool(code.regularized[0]) if code.regularized is not None else False)


def lipschitz_constant(d: Mat, rtol: float = 1e-8, max_iter: int = 1000) -> float:
    """Largest eigenvalue of ``d.T @ d`` by power iteration from a fixed start vector."""
    vector = np.ones(d.shape[1]) / np.sqrt(d.shape[1])
    value = 0.0
    for _ in range(max_iter):
        product = d.T @ (d @ vector)
        norm = float(np.linalg.norm(product))
        if norm == 0.0:
            return 0.0
        vector = product / norm
        if abs(norm - value) <= rtol * norm:
            return norm
        value = norm
    return value


def lasso_objective(d: Mat, y: Mat, x: Mat, lam: float | npt.NDArray[np.float64]) -> float:
    """Return ``0.5 ||Y - DX||_F^2 + sum_n lam_n ||X[:, n]||_1``."""
    penalty = np.sum(np.asarray(lam) * np.sum(np.abs(x), axis=0))
    return float(0.5 * np.sum((y - d @ x) ** 2) + penalty)


def lasso_code(d: Mat, y: Mat, lam: float | npt.ArrayLike,  # pylint: disable=too-many-locals
               max_inner: int = 200, tol: float = 1e-6) -> Mat:
    """
    Solve the lasso coding problem by accelerated proximal gradient.

    Minimizes ``0.5 ||Y - DX||_F^2 + lam sum |X_ij|`` with step ``1 / L``, where ``L`` is the
    largest eigenvalue of ``D^T D``. A momentum step that would raise the objective is
    discarded and replaced by a plain proximal step, so the objective never increases.

    Parameters
    ----------
    d : Mat
        Dictionary with unit-norm columns.
    y : Mat
        Signals.
    lam : float or array_like
        Positive regularization weight, scalar or one per column of ``y``.
    max_inner : int
        Iteration cap.
    tol : float
        Stop when the relative objective change drops below this.

    Returns
    -------
    Mat
        Coefficient matrix of shape (K, N).
    """
    d = as_mat(d, name="dictionary")
    y = as_mat(y, name="signals")
    lam_arr = np.asarray(lam, dtype=np.float64)
    if np.any(lam_arr <= 0):
        raise ValueError("Lasso weight must be positive.")
    lam_row = lam_arr.reshape(1, -1) if lam_arr.ndim else lam_arr
    lipschitz = lipschitz_constant(d)
    x = np.zeros((d.shape[1], y.shape[1]))
    if lipschitz == 0.0:
        return x
    step = 1.0 / lipschitz

    def prox_grad(point: Mat) -> Mat:
        """Proximal gradient step from ``point``."""
        return soft_threshold(point - step * (d.T @ (d @ point - y)), step * lam_row)

    momentum_point = x
    t = 1.0
    objective = lasso_objective(d, y, x, lam_row)
    for _ in range(max_inner):
        candidate = prox_grad(momentum_point)
        candidate_objective = lasso_objective(d, y, candidate, lam_row)
        if candidate_objective > objective:
            # restart from the last accepted iterate
            t = 1.0
            candidate = prox_grad(x)
            candidate_objective = lasso_objective(d, y, candidate, lam_row)
            if candidate_objective > objective:
                # x is already a fixed point up to rounding
                break
        t_next = (1.0 + np.sqrt(1.0 + 4.0 * t * t)) / 2.0
        momentum_point = candidate + ((t - 1.0) / t_next) * (candidate - x)
        change = abs(objective - candidate_objective) / max(objective, np.finfo(float).tiny)
        x, objective, t = candidate, candidate_objective, t_next
        if change < tol:
            break
    return x


def default_lasso_weight(d: Mat, y: Mat, fraction: float = 0.1) -> npt.NDArray[np.float64]:
    """Per-column lasso weight ``fraction * max |D^T y_n|``, floored to stay positive."""
    weight = fraction * np.max(np.abs(d.T @ y), axis=0)
    return np.maximum(weight, np.finfo(float).tiny)


def mod_update(y: Mat, x: Mat, seed: int | np.random.Generator = 0) -> Mat:
    """
    Method of optimal directions: least-squares dictionary for fixed coefficients.

    Computes ``D = Y X^T (X X^T + 1e-12 I)^-1`` and normalizes the columns; zero columns are
    replaced by seeded random unit vectors.

    Parameters
    ----------
    y : Mat
        Signals, shape (M, N).
    x : Mat
        Coefficients, shape (K, N).
    seed : int or numpy.random.Generator
        Source of replacement columns.

    Returns
    -------
    Mat
        Dictionary of shape (M, K) with unit-norm columns.
    """
    gram = x @ x.T + MOD_RIDGE * np.eye(x.shape[0])
    cross = y @ x.T
    try:
        dictionary = scipy.linalg.solve(gram, cross.T, assume_a="pos").T
    except np.linalg.LinAlgError:
        dictionary = cross @ np.linalg.pinv(gram)
    return normalize_columns(dictionary, seed)


def ksvd_update(y: Mat, d: Mat, x: Mat) -> tuple[Mat, Mat]:
    """
    One K-SVD sweep over the atoms in ascending index order.

    For each atom with a non-empty support row, the residual without that atom is restricted
    to the support and replaced by its best rank-one approximation, which updates the atom and
    the non-zero coefficients together. Atoms with an empty support are left unchanged.

    Parameters
    ----------
    y : Mat
        Signals.
    d : Mat
        Dictionary with unit-norm columns.
    x : Mat
        Coefficients.

    Returns
    -------
    tuple[Mat, Mat]
        Updated dictionary and coefficients; the zero pattern of ``x`` is preserved.
    """
    d = np.array(d, dtype=np.float64, copy=True)
    x = np.array(x, dtype=np.float64, copy=True)
    residual = y - d @ x
    for j in range(d.shape[1]):
        omega = np.flatnonzero(x[j, :])
        if omega.size == 0:
            continue
        error = residual[:, omega] + np.outer(d[:, j], x[j, omega])
        try:
            svd = svd_thin(error)
        except NumericalFailureError as exc:
            raise NumericalFailureError("K-SVD atom update failed", atom=j) from exc
        d[:, j] = svd.u[:, 0]
        x[j, omega] = svd.s[0] * svd.vt[0, :]
        residual[:, omega] = error - np.outer(d[:, j], x[j, omega])
    return d, x


@dataclass
class AltConfig:  # pylint: disable=too-many-instance-attributes
    """Configuration of the alternating coding / dictionary update driver."""

    coder: Coder = field(default=Coder.OMP, metadata={"description": "Sparse coding stage"})
    updater: Updater = field(default=Updater.KSVD, metadata={"description": "Dictionary update stage"})
    outer_iters: int = field(default=300, metadata={"description": "Number of coding/update rounds"})
    sparsity: int = field(default=3, metadata={"description": "OMP sparsity budget S"})
    lasso_lambda: float | None = field(default=None, metadata={
        "description": "Lasso weight; None uses 0.1 * max |D^T y| per column"})
    max_inner: int = field(default=200, metadata={"description": "Lasso iteration cap"})
    tol: float = field(default=1e-6, metadata={"description": "Lasso relative objective tolerance"})
    seed: int = field(default=0, metadata={"description": "Seed of the initial dictionary"})
    workers: int = field(default=1, metadata={"description": "Threads used by the coding stage"})

    def __post_init__(self) -> None:
        """Validate the configuration."""
        self.coder = Coder(self.coder)
        self.updater = Updater(self.updater)
        if self.outer_iters < 1:
            raise ValueError("Outer iterations must be at least 1.")
        if self.sparsity < 1:
            raise ValueError("Sparsity must be at least 1.")
        if self.lasso_lambda is not None and self.lasso_lambda <= 0:
            raise ValueError("Lasso weight must be positive.")

    @property
    def name(self) -> str:
        """Short solver name such as ``ksvd-omp``."""
        return f"{self.updater.value}-{self.coder.value}"

    def code(self, d: Mat, y: Mat) -> Mat:
        """Run the configured coding stage."""
        if self.coder is Coder.OMP:
            return omp_code(d, y, min(self.sparsity, d.shape[0], d.shape[1]), workers=self.workers).coefficients
        lam = self.lasso_lambda if self.lasso_lambda is not None else default_lasso_weight(d, y)
        return lasso_code(d, y, lam, max_inner=self.max_inner, tol=self.tol)


def run_alternating(y: Mat, k: int, cfg: AltConfig,
                    callback: Callable[[int, Mat], None] | None = None) -> LearnedModel:
    """
    Learn a dictionary by alternating sparse coding and dictionary updates.

    The dictionary starts from ``k`` distinct random training columns, normalized.
    Every outer round codes the data, updates the dictionary, and records ``||Y - DX||_F``.
    The returned coefficients come from a final coding pass against the last dictionary.

    Parameters
    ----------
    y : Mat
        Training data, shape (M, N).
    k : int
        Number of atoms, at most N.
    cfg : AltConfig
        Stage selection and iteration counts.
    callback : callable, optional
        Called with the round number and the dictionary after every round.

    Returns
    -------
    LearnedModel
        The learned dictionary and coefficients with the objective history.
    """
    y = as_mat(y, name="Y")
    if k < 1 or k > y.shape[1]:
        raise ValueError(f"Number of atoms {k} must be between 1 and N = {y.shape[1]}.")
    rng = np.random.default_rng(cfg.seed)
    columns = rng.choice(y.shape[1], size=k, replace=False)
    d = normalize_columns(y[:, columns], rng)
    report = SolveReport()
    log.info("Running %s on a %dx%d matrix with K=%d for %d rounds",
             cfg.name, y.shape[0], y.shape[1], k, cfg.outer_iters)
    for _ in range(cfg.outer_iters):
        x = cfg.code(d, y)
        if cfg.updater is Updater.MOD:
            d = mod_update(y, x, rng)
        else:
            d, x = ksvd_update(y, d, x)
        report.objective_history.append(float(np.linalg.norm(y - d @ x)))
        report.iterations += 1
        if callback is not None:
            callback(report.iterations, d)
    x = cfg.code(d, y)
    log.info("%s finished with objective %.4e", cfg.name, report.objective_history[-1])
    parameters = {item.name: str(getattr(cfg, item.name)) for item in fields(cfg)}
    parameters.update(coder=cfg.coder.value, updater=cfg.updater.value, k_atoms=str(k))
    return LearnedModel(dictionary=d, coefficients=x, report=report, solver=cfg.name, parameters=parameters)
