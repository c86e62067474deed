"""
Rank-one atomic decomposition solvers.

The training matrix is written as a sum of K rank-one blocks whose columns are jointly
sparse. Three ADMM solvers are provided: the exact solver for noise-free data, the exact
solver with a Frobenius-ball noise constraint, and the inexact solver with slack blocks and
per-constraint penalties. Block stacks are stored as arrays of shape (K, M, N), so
``state.x2[k]`` is the k-th rank-one block.
"""
from collections.abc import Callable
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
import logging
import math

import numpy as np
import numpy.typing as npt

from road_dl.errors import DimensionMismatchError, NumericalFailureError, PenaltyBoundError
from road_dl.linalg import (
    Mat,
    as_mat,
    frob_norm,
    group_soft_threshold,
    l21_norm,
    random_unit_vectors,
    rank_one_project,
    svd_thin,
)
from road_dl.model import LearnedModel, SolveReport

log = logging.getLogger(__name__)

Stack = npt.NDArray[np.float64]

# Guard for the stopping-rule denominators.
DENOMINATOR_FLOOR = 1e-12
# Relative singular-value level below which an extracted atom is declared dead.
DEAD_ATOM_LEVEL = 1e-8
# Relative second singular value below which a block counts as rank one.
RANK_ONE_LEVEL = 1e-10


class Variant(Enum):
    """ADMM solver variant."""

    EXACT_NOISEFREE = "exact_noisefree"
    EXACT_NOISY = "exact_noisy"
    INEXACT = "inexact"


# Learner names of the variants, as used by the registry and the run manifests.
SOLVER_NAMES = {
    Variant.EXACT_NOISEFREE: "road-exact",
    Variant.EXACT_NOISY: "road-exact-noisy",
    Variant.INEXACT: "road-inexact",
}


@dataclass
class AdmmConfig:  # pylint: disable=too-many-instance-attributes
    """Solver variant, penalties, tolerances and seed of a ROAD run."""

    variant: Variant = field(metadata={"description": "Which ADMM solver to run"})
    k_atoms: int = field(metadata={"description": "Number of atoms K"})
    rho: float = field(default=10.0, metadata={
        "description": "Penalty of the exact variants"})
    rho1: float = field(default=210.0, metadata={"description": "Penalty of X1 = X3 + Z1 (inexact)"})
    rho2: float = field(default=310.0, metadata={"description": "Penalty of X2 = X3 + Z2 (inexact)"})
    rho3: float = field(default=260.0, metadata={"description": "Penalty of Y = sum X3 + Z3 (inexact)"})
    beta1: float = field(default=200.0, metadata={"description": "Weight of ||Z1||^2 (inexact)"})
    beta2: float = field(default=300.0, metadata={"description": "Weight of ||Z2||^2 (inexact)"})
    beta3: float = field(default=250.0, metadata={"description": "Weight of ||Z3||^2 (inexact)"})
    epsilon_noise: float = field(default=0.0, metadata={
        "description": "Radius of the Frobenius noise ball around Y (exact_noisy)"})
    tol_primal: float = field(default=1e-6, metadata={
        "description": "Tolerance on the normalized squared primal residual"})
    tol_dual: float = field(default=1e-6, metadata={
        "description": "Tolerance on the normalized squared dual residual"})
    max_iter: int = field(default=1000, metadata={"description": "Iteration cap"})
    seed: int = field(default=0, metadata={"description": "Seed of the initialization"})
    allow_unsafe_penalties: bool = field(default=False, metadata={
        "description": "Warn instead of raising when rho_i <= beta_i + 2"})

    def __post_init__(self) -> None:
        """Validate the configuration."""
        self.variant = Variant(self.variant)
        if self.k_atoms < 1:
            raise ValueError("Number of atoms must be at least 1.")
        if self.max_iter < 1:
            raise ValueError("Maximum iterations must be at least 1.")
        if self.tol_primal <= 0 or self.tol_dual <= 0:
            raise ValueError("Tolerances must be positive.")
        if self.seed < 0:
            raise ValueError("Seed must be non-negative.")
        if self.variant is Variant.INEXACT:
            self._check_inexact_penalties()
        elif self.rho <= 0:
            raise ValueError("Penalty rho must be positive.")
        if self.epsilon_noise < 0:
            raise ValueError("Noise radius epsilon must be non-negative.")

    def _check_inexact_penalties(self) -> None:
        for idx in (1, 2, 3):
            rho = getattr(self, f"rho{idx}")
            beta = getattr(self, f"beta{idx}")
            if beta <= 0:
                raise ValueError(f"beta{idx} must be positive.")
            if rho <= beta + 2:
                message = (f"rho{idx} = {rho:g} must exceed beta{idx} + 2 = {beta + 2:g} "
                           f"(convergence requires rho_i > beta_i + 2)")
                if not self.allow_unsafe_penalties:
                    raise PenaltyBoundError(message)
                log.warning("%s; proceeding because unsafe penalties are allowed", message)

    @classmethod
    def fixed_rho(cls, k_atoms: int, rho: float = 310.0, **kwargs: object) -> 'AdmmConfig':
        """Build an inexact configuration that uses the same penalty for every constraint."""
        return cls(variant=Variant.INEXACT, k_atoms=k_atoms, rho1=rho, rho2=rho, rho3=rho,
                   **kwargs)  # type: ignore[arg-type]

    def as_dict(self) -> dict[str, str]:
        """Return the configuration as strings, for run manifests."""
        values = asdict(self)
        values["variant"] = self.variant.value
        return {key: str(value) for key, value in values.items()}


@dataclass
class RoadState:  # pylint: disable=too-many-instance-attributes
    """Full iterate of a ROAD ADMM run."""

    variant: Variant
    x1: Stack
    x2: Stack
    x3: Stack
    z1: Stack
    z2: Stack
    z3: Mat
    lam1: Stack
    lam2: Stack
    lam3: Mat
    w: Mat | None = None
    iteration: int = 0

    @property
    def k_atoms(self) -> int:
        """Number of rank-one blocks."""
        return int(self.x3.shape[0])

    @property
    def shape(self) -> tuple[int, int]:
        """Shape (M, N) shared by every block."""
        return (int(self.x3.shape[1]), int(self.x3.shape[2]))


def _check_dims(state: RoadState, y: Mat) -> None:
    if state.shape != y.shape:
        raise DimensionMismatchError(f"State blocks are {state.shape} but Y is {y.shape}.")


def init_state(y: Mat, cfg: AdmmConfig) -> RoadState:
    """
    Build the deterministic starting iterate.

    Block k of X3 starts as ``d_k d_k^T Y`` for a random unit atom ``d_k`` drawn from
    ``cfg.seed``, that is the projection of Y onto the span of ``d_k``. X1 and X2 copy X3,
    slack blocks and multipliers are zero, and W starts at Y for the noisy variant.

    Blocks that all start near the same matrix stay near each other, and the exact solvers
    then settle on a fixed point with many copies of the leading atom; distinct atoms at the
    scale of Y avoid that.

    Parameters
    ----------
    y : Mat
        Training data of shape (M, N).
    cfg : AdmmConfig
        Solver configuration.

    Returns
    -------
    RoadState
        The initial state with ``iteration == 0``.
    """
    y = as_mat(y, name="Y")
    atoms = random_unit_vectors(y.shape[0], cfg.k_atoms, np.random.default_rng(cfg.seed))
    x3 = np.einsum("mk,kn->kmn", atoms, atoms.T @ y)
    zeros = np.zeros_like(x3)
    return RoadState(
        variant=cfg.variant,
        x1=x3.copy(),
        x2=x3.copy(),
        x3=x3,
        z1=zeros.copy(),
        z2=zeros.copy(),
        z3=np.zeros_like(y),
        lam1=zeros.copy(),
        lam2=zeros.copy(),
        lam3=np.zeros_like(y),
        w=y.copy() if cfg.variant is Variant.EXACT_NOISY else None,
    )


def solve_x3(b1: Stack, b2: Stack, b3: Mat,  # pylint: disable=too-many-arguments,too-many-positional-arguments
             rho1: float, rho2: float, rho3: float, k_atoms: int | None = None) -> Stack:
    """
    Minimize ``rho1 sum ||b1_k - X_k||^2 + rho2 sum ||b2_k - X_k||^2 + rho3 ||b3 - sum X_k||^2``.

    The normal equations couple the blocks only through their sum, so with ``c = rho1 + rho2``,
    ``d = rho3`` and ``R_k = rho1 b1_k + rho2 b2_k + rho3 b3`` the minimizer is
    ``S = sum R_k / (c + d K)`` and ``X_k = (R_k - d S) / c``.

    Parameters
    ----------
    b1, b2 : array of shape (K, M, N)
        Per-block targets.
    b3 : Mat
        Target of the block sum.
    rho1, rho2, rho3 : float
        Positive weights.
    k_atoms : int, optional
        Expected K; checked against the stacks when given.

    Returns
    -------
    array of shape (K, M, N)
        The minimizing blocks.
    """
    b1 = np.asarray(b1, dtype=np.float64)
    b2 = np.asarray(b2, dtype=np.float64)
    if min(rho1, rho2, rho3) <= 0:
        raise ValueError("Penalties must be positive.")
    if b1.shape != b2.shape or b1.shape[1:] != b3.shape:
        raise DimensionMismatchError(f"Inconsistent block shapes {b1.shape}, {b2.shape}, {b3.shape}.")
    if k_atoms is not None and b1.shape[0] != k_atoms:
        raise DimensionMismatchError(f"Expected {k_atoms} blocks, got {b1.shape[0]}.")
    c = rho1 + rho2
    d = rho3
    r = rho1 * b1 + rho2 * b2 + rho3 * b3
    s = r.sum(axis=0) / (c + d * b1.shape[0])
    return (r - d * s) / c


def _shrink_blocks(stack: Stack, t: float) -> Stack:
    return np.stack([group_soft_threshold(block, t) for block in stack])


def _rank_one_blocks(stack: Stack) -> Stack:
    out = np.empty_like(stack)
    for k, block in enumerate(stack):
        try:
            out[k] = rank_one_project(block)
        except NumericalFailureError as exc:
            raise NumericalFailureError("Rank-one projection failed", atom=k) from exc
    return out


def step_inexact(state: RoadState, y: Mat, cfg: AdmmConfig) -> RoadState:
    """
    Run one sweep of the inexact ADMM.

    Blocks are updated in the order X1, X2, X3, Z1, Z2, Z3 followed by the multipliers.

    Parameters
    ----------
    state : RoadState
        Current iterate.
    y : Mat
        Training data.
    cfg : AdmmConfig
        Configuration with ``variant == Variant.INEXACT``.

    Returns
    -------
    RoadState
        The next iterate; ``state`` is not modified.
    """
    if cfg.variant is not Variant.INEXACT:
        raise ValueError(f"step_inexact needs the inexact variant, got {cfg.variant.value}.")
    _check_dims(state, y)
    x1 = _shrink_blocks(state.x3 + state.z1 - state.lam1, 1.0 / cfg.rho1)
    x2 = _rank_one_blocks(state.x3 + state.z2 - state.lam2)
    x3 = solve_x3(x1 - state.z1 + state.lam1,
                  x2 - state.z2 + state.lam2,
                  y - state.z3 + state.lam3,
                  cfg.rho1, cfg.rho2, cfg.rho3)
    x3_sum = x3.sum(axis=0)
    z1 = cfg.rho1 / (cfg.beta1 + cfg.rho1) * (x1 - x3 + state.lam1)
    z2 = cfg.rho2 / (cfg.beta2 + cfg.rho2) * (x2 - x3 + state.lam2)
    z3 = cfg.rho3 / (cfg.beta3 + cfg.rho3) * (y - x3_sum + state.lam3)
    return RoadState(
        variant=state.variant,
        x1=x1, x2=x2, x3=x3, z1=z1, z2=z2, z3=z3,
        lam1=state.lam1 + (x1 - x3 - z1),
        lam2=state.lam2 + (x2 - x3 - z2),
        lam3=state.lam3 + (y - x3_sum - z3),
        w=state.w,
        iteration=state.iteration + 1,
    )


def _step_exact_blocks(state: RoadState, target: Mat, cfg: AdmmConfig) -> tuple[Stack, Stack, Stack]:
    x1 = _shrink_blocks(state.x3 + state.lam1, 1.0 / cfg.rho)
    x2 = _rank_one_blocks(state.x3 + state.lam2)
    x3 = solve_x3(x1 - state.lam1, x2 - state.lam2, target - state.lam3, 1.0, 1.0, 1.0)
    return x1, x2, x3


def step_exact(state: RoadState, y: Mat, cfg: AdmmConfig) -> RoadState:
    """
    Run one sweep of the exact ADMM for noise-free data (constraint ``Y = sum X3_k``).

    Parameters
    ----------
    state : RoadState
        Current iterate.
    y : Mat
        Training data.
    cfg : AdmmConfig
        Configuration with ``variant == Variant.EXACT_NOISEFREE``.

    Returns
    -------
    RoadState
        The next iterate.
    """
    if cfg.variant is not Variant.EXACT_NOISEFREE:
        raise ValueError(f"step_exact needs the exact_noisefree variant, got {cfg.variant.value}.")
    _check_dims(state, y)
    x1, x2, x3 = _step_exact_blocks(state, y, cfg)
    return replace(
        state,
        x1=x1, x2=x2, x3=x3,
        lam1=state.lam1 + (x3 - x1),
        lam2=state.lam2 + (x3 - x2),
        lam3=state.lam3 + (x3.sum(axis=0) - y),
        iteration=state.iteration + 1,
    )


def project_noise_ball(w_hat: Mat, y: Mat, epsilon: float) -> Mat:
    """
    Project ``w_hat`` onto the Frobenius ball of radius ``epsilon`` centred at ``y``.

    Parameters
    ----------
    w_hat : Mat
        Point to project.
    y : Mat
        Centre of the ball.
    epsilon : float
        Non-negative radius.

    Returns
    -------
    Mat
        ``w_hat`` when it lies inside the ball, otherwise the closest boundary point.
    """
    if epsilon < 0:
        raise ValueError("Noise radius must be non-negative.")
    offset = w_hat - y
    distance = frob_norm(offset)
    if distance > epsilon:
        return y + (epsilon / distance) * offset
    return np.array(w_hat, copy=True)


def step_exact_noisy(state: RoadState, y: Mat, cfg: AdmmConfig) -> RoadState:
    """
    Run one sweep of the exact ADMM with the constraint ``W = sum X3_k``, ``||W - Y||_F <= eps``.

    Parameters
    ----------
    state : RoadState
        Current iterate; ``state.w`` must be set.
    y : Mat
        Observed data.
    cfg : AdmmConfig
        Configuration with ``variant == Variant.EXACT_NOISY``.

    Returns
    -------
    RoadState
        The next iterate.
    """
    if cfg.variant is not Variant.EXACT_NOISY:
        raise ValueError(f"step_exact_noisy needs the exact_noisy variant, got {cfg.variant.value}.")
    _check_dims(state, y)
    w_prev = state.w if state.w is not None else y
    x1, x2, x3 = _step_exact_blocks(state, w_prev, cfg)
    x3_sum = x3.sum(axis=0)
    w = project_noise_ball(x3_sum + state.lam3, y, cfg.epsilon_noise)
    return replace(
        state,
        x1=x1, x2=x2, x3=x3, w=w,
        lam1=state.lam1 + (x3 - x1),
        lam2=state.lam2 + (x3 - x2),
        lam3=state.lam3 + (x3_sum - w),
        iteration=state.iteration + 1,
    )


STEPS: dict[Variant, Callable[[RoadState, Mat, AdmmConfig], RoadState]] = {
    Variant.EXACT_NOISEFREE: step_exact,
    Variant.EXACT_NOISY: step_exact_noisy,
    Variant.INEXACT: step_inexact,
}


def is_rank_one(a: Mat, level: float = RANK_ONE_LEVEL) -> bool:
    """Return True when ``a`` is zero or its second singular value is below ``level * s1``."""
    if not np.any(a):
        return True
    s = svd_thin(a).s
    return s.size < 2 or s[1] <= level * s[0]


def eval_lagrangian(state: RoadState, y: Mat, cfg: AdmmConfig) -> float:
    """
    Evaluate the inexact augmented Lagrangian with per-constraint penalties.

    Returns ``math.inf`` when some X2 block is not rank one (the indicator term).
    """
    _check_dims(state, y)
    if not all(is_rank_one(block) for block in state.x2):
        return math.inf
    value = sum(l21_norm(block) for block in state.x1)
    value += cfg.beta1 / 2 * float(np.sum(state.z1 ** 2))
    value += cfg.beta2 / 2 * float(np.sum(state.z2 ** 2))
    value += cfg.beta3 / 2 * float(np.sum(state.z3 ** 2))
    value += cfg.rho1 / 2 * float(np.sum((state.x1 - state.x3 - state.z1 + state.lam1) ** 2)
                                  - np.sum(state.lam1 ** 2))
    value += cfg.rho2 / 2 * float(np.sum((state.x2 - state.x3 - state.z2 + state.lam2) ** 2)
                                  - np.sum(state.lam2 ** 2))
    value += cfg.rho3 / 2 * float(np.sum((y - state.x3.sum(axis=0) - state.z3 + state.lam3) ** 2)
                                  - np.sum(state.lam3 ** 2))
    return float(value)


def residuals(prev: RoadState, cur: RoadState, y: Mat) -> tuple[float, float]:
    """
    Return the primal and dual residual norms of ``cur`` relative to ``prev``.

    The primal residual stacks the constraint violations of ``cur``; the exact variants read
    their slack blocks as zero and the noisy variant compares against W instead of Y. The dual
    residual stacks the change of the slack blocks (inexact) or of the X3 blocks (exact).

    Parameters
    ----------
    prev, cur : RoadState
        Consecutive iterates.
    y : Mat
        Training data.

    Returns
    -------
    tuple[float, float]
        Frobenius norms of the stacked primal and dual residual blocks.
    """
    _check_dims(prev, y)
    _check_dims(cur, y)
    if prev.k_atoms != cur.k_atoms:
        raise DimensionMismatchError(f"States hold {prev.k_atoms} and {cur.k_atoms} blocks.")
    target = cur.w if cur.w is not None else y
    primal_sq = (float(np.sum((cur.x1 - cur.x3 - cur.z1) ** 2))
                 + float(np.sum((cur.x2 - cur.x3 - cur.z2) ** 2))
                 + float(np.sum((target - cur.x3.sum(axis=0) - cur.z3) ** 2)))
    if cur.variant is Variant.INEXACT:
        dual_sq = (float(np.sum((cur.z1 - prev.z1) ** 2))
                   + float(np.sum((cur.z2 - prev.z2) ** 2))
                   + float(np.sum((cur.z3 - prev.z3) ** 2)))
    else:
        dual_sq = float(np.sum((cur.x3 - prev.x3) ** 2))
    return math.sqrt(primal_sq), math.sqrt(dual_sq)


def normalized_residuals(prev: RoadState, cur: RoadState, y: Mat) -> tuple[float, float]:
    """
    Return the squared residuals divided by the squared norm of the blocks they measure.

    The primal residual is scaled by ``||[X3_1, ..., X3_K]||_F^2``; the dual residual by the
    stacked slack blocks (inexact) or X3 blocks (exact). Denominators are floored at 1e-12.
    """
    primal, dual = residuals(prev, cur, y)
    x3_sq = float(np.sum(cur.x3 ** 2))
    if cur.variant is Variant.INEXACT:
        dual_scale = float(np.sum(cur.z1 ** 2) + np.sum(cur.z2 ** 2) + np.sum(cur.z3 ** 2))
    else:
        dual_scale = x3_sq
    return (primal ** 2 / max(x3_sq, DENOMINATOR_FLOOR),
            dual ** 2 / max(dual_scale, DENOMINATOR_FLOOR))


def run(y: Mat, cfg: AdmmConfig,
        callback: Callable[[RoadState], None] | None = None) -> tuple[RoadState, SolveReport]:
    """
    Iterate the configured ADMM variant until both stopping rules hold or the cap is reached.

    Parameters
    ----------
    y : Mat
        Training data.
    cfg : AdmmConfig
        Solver configuration.
    callback : callable, optional
        Called with every new iterate.

    Returns
    -------
    tuple[RoadState, SolveReport]
        The final iterate and the convergence record.
    """
    y = as_mat(y, name="Y")
    step = STEPS[cfg.variant]
    state = init_state(y, cfg)
    report = SolveReport()
    log.info("Running %s ADMM on a %dx%d matrix with K=%d (max %d iterations)",
             cfg.variant.value, y.shape[0], y.shape[1], cfg.k_atoms, cfg.max_iter)
    for _ in range(cfg.max_iter):
        new_state = step(state, y, cfg)
        primal, dual = normalized_residuals(state, new_state, y)
        report.primal_residual_history.append(primal)
        report.dual_residual_history.append(dual)
        if cfg.variant is Variant.INEXACT:
            report.lagrangian_history.append(eval_lagrangian(new_state, y, cfg))
        report.iterations += 1
        state = new_state
        if callback is not None:
            callback(state)
        log.debug("iter %d: primal %.3e, dual %.3e", state.iteration, primal, dual)
        if primal <= cfg.tol_primal and dual <= cfg.tol_dual:
            report.converged = True
            break
    log.info("%s ADMM %s after %d iterations (primal %.3e, dual %.3e)", cfg.variant.value,
             "converged" if report.converged else "stopped", report.iterations,
             report.primal_residual_history[-1], report.dual_residual_history[-1])
    return state, report


def extract_model(state: RoadState, y: Mat, seed: int = 0,  # pylint: disable=too-many-locals
                  report: SolveReport | None = None) -> LearnedModel:
    """
    Factor every X2 block into an atom and a coefficient row.

    Each block ``s1 u1 v1^T`` gives the atom ``u1``, signed so its largest-magnitude entry is
    positive, and the coefficient row ``s1 v1^T``. Blocks whose ``s1`` is below 1e-8 of the
    largest ``s1`` are dead: their atom is a seeded random unit vector and their row is zero.

    Parameters
    ----------
    state : RoadState
        Final iterate of a run.
    y : Mat
        Training data, used for the shape check.
    seed : int
        Seed for replacement atoms.
    report : SolveReport, optional
        Convergence record to attach to the model.

    Returns
    -------
    LearnedModel
        Dictionary (M x K) and coefficients (K x N).
    """
    _check_dims(state, y)
    rows, cols = state.shape
    k_atoms = state.k_atoms
    dictionary = np.zeros((rows, k_atoms))
    coefficients = np.zeros((k_atoms, cols))
    leading = []
    for block in state.x2:
        leading.append(svd_thin(block) if np.any(block) else None)
    top = np.array([svd.s[0] if svd is not None else 0.0 for svd in leading])
    level = DEAD_ATOM_LEVEL * float(top.max())
    dead = sorted(k for k in range(k_atoms) if leading[k] is None or top[k] < level or top[k] == 0.0)
    for k, svd in enumerate(leading):
        if k in dead or svd is None:
            continue
        atom = svd.u[:, 0]
        row = svd.s[0] * svd.vt[0, :]
        if atom[np.argmax(np.abs(atom))] < 0:
            atom, row = -atom, -row
        dictionary[:, k] = atom
        coefficients[k, :] = row
    if dead:
        log.warning("%d of %d atoms carry no energy; replacing them with random unit vectors",
                    len(dead), k_atoms)
        dictionary[:, dead] = random_unit_vectors(rows, len(dead), np.random.default_rng(seed))
    return LearnedModel(dictionary=dictionary, coefficients=coefficients, dead_atoms=frozenset(dead),
                        report=report if report is not None else SolveReport())


def fit_road(y: Mat, cfg: AdmmConfig,
             callback: Callable[[RoadState], None] | None = None) -> LearnedModel:
    """Run the configured ROAD solver and extract the learned model."""
    state, report = run(y, cfg, callback=callback)
    model = extract_model(state, as_mat(y, name="Y"), seed=cfg.seed, report=report)
    model.solver = SOLVER_NAMES[cfg.variant]
    model.parameters = cfg.as_dict()
    return model
