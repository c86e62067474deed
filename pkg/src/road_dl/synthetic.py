"""Synthetic ground truth for dictionary recovery experiments, noise injection and the recovery error."""
from dataclasses import dataclass, field
from enum import Enum
import logging

import numpy as np

from road_dl.errors import DimensionMismatchError
from road_dl.linalg import ZERO_NORM, Mat, as_mat, frob_norm, random_unit_vectors

log = logging.getLogger(__name__)


class SparsityKind(Enum):
    """How the support of each ground-truth coefficient column is drawn."""

    FIXED = "fixed"
    BERNOULLI = "bernoulli"


@dataclass(frozen=True)
class SparsityModel:
    """Support model of the ground-truth coefficients: exactly S non-zeros, or i.i.d. Bernoulli(theta)."""

    kind: SparsityKind = field(metadata={"description": "fixed or bernoulli"})
    value: float = field(metadata={"description": "S for the fixed model, theta for the Bernoulli model"})

    def __post_init__(self) -> None:
        """Validate the model parameter."""
        object.__setattr__(self, "kind", SparsityKind(self.kind))
        if self.kind is SparsityKind.FIXED:
            if self.value < 1 or self.value != int(self.value):
                raise ValueError(f"Fixed sparsity must be a positive integer, got {self.value}.")
        elif not 0.0 < self.value < 1.0:
            raise ValueError(f"Bernoulli probability must lie in (0, 1), got {self.value}.")

    @classmethod
    def fixed(cls, s: int) -> 'SparsityModel':
        """Exactly ``s`` non-zeros per column."""
        return cls(SparsityKind.FIXED, s)

    @classmethod
    def bernoulli(cls, theta: float) -> 'SparsityModel':
        """Each coefficient is non-zero with probability ``theta``."""
        return cls(SparsityKind.BERNOULLI, theta)

    @classmethod
    def parse(cls, text: str) -> 'SparsityModel':
        """
        Parse ``fixed:S`` or ``bernoulli:THETA``; a bare integer means ``fixed``.

        Raises
        ------
        ValueError
            If the text names an unknown model or a bad value.
        """
        kind, _, value = text.strip().partition(":")
        if not value:
            return cls.fixed(int(kind))
        if kind.strip() == SparsityKind.FIXED.value:
            return cls.fixed(int(value))
        return cls(SparsityKind(kind.strip()), float(value))

    @property
    def sparsity(self) -> int:
        """Per-column budget S of the fixed model."""
        if self.kind is not SparsityKind.FIXED:
            raise ValueError("Only the fixed model has a sparsity budget; use expected_sparsity(k).")
        return int(self.value)

    def expected_sparsity(self, k: int) -> int:
        """Expected number of non-zeros per column for ``k`` atoms, at least 1."""
        if self.kind is SparsityKind.FIXED:
            return int(self.value)
        return max(1, round(self.value * k))

    def __str__(self) -> str:
        """Return the ``kind:value`` form accepted by :meth:`parse`."""
        if self.kind is SparsityKind.FIXED:
            return f"fixed:{int(self.value)}"
        return f"bernoulli:{self.value:g}"


@dataclass
class GroundTruth:
    """Ground-truth dictionary, coefficients and the data generated from them."""

    d0: Mat = field(metadata={"description": "M x K dictionary with unit-norm columns"})
    x0: Mat = field(metadata={"description": "K x N sparse coefficients"})
    y_clean: Mat = field(metadata={"description": "Noise-free data d0 @ x0"})
    y_observed: Mat = field(metadata={"description": "Data handed to the learners (y_clean plus noise)"})
    sparsity_model: SparsityModel = field(metadata={"description": "How the supports of x0 were drawn"})
    snr_db: float | None = field(default=None, metadata={"description": "Target SNR of the added noise, if any"})
    epsilon: float = field(default=0.0, metadata={"description": "Frobenius norm of the added noise"})

    def __post_init__(self) -> None:
        """Check the shapes agree."""
        rows, k_atoms = self.d0.shape
        if self.x0.shape[0] != k_atoms:
            raise DimensionMismatchError(f"x0 has {self.x0.shape[0]} rows for {k_atoms} atoms.")
        expected = (rows, self.x0.shape[1])
        if self.y_clean.shape != expected or self.y_observed.shape != expected:
            raise DimensionMismatchError(f"Data must be {expected}.")


def gen_ground_truth(m: int, k: int, n: int,  # pylint: disable=too-many-arguments,too-many-positional-arguments
                     sparsity_model: SparsityModel, seed: int = 0, snr_db: float | None = None) -> GroundTruth:
    """
    Draw a random dictionary and sparse coefficients and form ``Y = D0 X0``.

    Parameters
    ----------
    m, k, n : int
        Signal dimension, number of atoms and number of samples.
    sparsity_model : SparsityModel
        Support model of the coefficient columns.
    seed : int
        Seed of every random draw; equal seeds give equal ground truth.
    snr_db : float, optional
        When given, Gaussian noise at this SNR is added to form ``y_observed``.

    Returns
    -------
    GroundTruth
        Dictionary with unit-norm Gaussian columns, coefficients with standard Gaussian
        non-zeros, and the clean and observed data.

    Raises
    ------
    ValueError
        If a dimension is not positive or the fixed sparsity exceeds ``k``.
    """
    if min(m, k, n) < 1:
        raise ValueError(f"Dimensions must be positive, got M={m}, K={k}, N={n}.")
    rng = np.random.default_rng(seed)
    d0 = random_unit_vectors(m, k, rng)
    if sparsity_model.kind is SparsityKind.FIXED:
        s = sparsity_model.sparsity
        if s > k:
            raise ValueError(f"Sparsity S = {s} exceeds the number of atoms K = {k}.")
        # the first s entries of a random permutation per column are a uniform s-subset
        ranks = np.argsort(rng.random((k, n)), axis=0)
        mask = np.zeros((k, n), dtype=bool)
        np.put_along_axis(mask, ranks[:s, :], True, axis=0)
    else:
        mask = rng.random((k, n)) < sparsity_model.value
    x0 = np.where(mask, rng.standard_normal((k, n)), 0.0)
    y_clean = d0 @ x0
    y_observed = y_clean
    epsilon = 0.0
    if snr_db is not None:
        y_observed, epsilon = add_noise(y_clean, snr_db, rng)
    log.debug("Generated ground truth M=%d K=%d N=%d (%s, seed %d)", m, k, n, sparsity_model, seed)
    return GroundTruth(d0=d0, x0=x0, y_clean=y_clean, y_observed=y_observed,
                       sparsity_model=sparsity_model, snr_db=snr_db, epsilon=epsilon)


def add_noise(y: Mat, snr_db: float, seed: int | np.random.Generator = 0) -> tuple[Mat, float]:
    """
    Add Gaussian noise scaled to an exact signal-to-noise ratio.

    Parameters
    ----------
    y : Mat
        Clean, non-zero data.
    snr_db : float
        Target ``10 log10(||Y||_F^2 / ||E||_F^2)``.
    seed : int or numpy.random.Generator
        Source of the noise draw.

    Returns
    -------
    tuple[Mat, float]
        ``Y + E`` and ``||E||_F``, which is the noise radius for the exact noisy solver.
    """
    y = as_mat(y, name="Y")
    signal = frob_norm(y)
    if signal == 0.0:
        raise ValueError("Cannot set an SNR for an all-zero signal.")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    noise = rng.standard_normal(y.shape)
    target = signal * 10.0 ** (-snr_db / 20.0)
    noise *= target / frob_norm(noise)
    return y + noise, frob_norm(noise)


def measured_snr_db(clean: Mat, observed: Mat) -> float:
    """Return the measured SNR of ``observed`` against ``clean`` in decibels."""
    noise = float(np.sum((observed - clean) ** 2))
    if noise == 0.0:
        return float("inf")
    return 10.0 * float(np.log10(float(np.sum(clean ** 2)) / noise))


def _unit_columns(a: Mat) -> Mat:
    norms = np.linalg.norm(a, axis=0)
    out = np.zeros_like(a)
    keep = norms > ZERO_NORM
    out[:, keep] = a[:, keep] / norms[keep]
    return out


def match_atoms(d_hat: Mat, d0: Mat) -> list[int]:
    """
    Greedily match learned atoms to ground-truth atoms.

    Learned atoms are visited in index order; each takes the unmatched ground-truth atom with
    the largest absolute correlation (lowest index on ties).

    Returns
    -------
    list[int]
        ``matches[k]`` is the ground-truth index assigned to learned atom ``k``.
    """
    d_hat = as_mat(d_hat, name="learned dictionary")
    d0 = as_mat(d0, name="ground-truth dictionary")
    if d_hat.shape != d0.shape:
        raise DimensionMismatchError(f"Learned dictionary is {d_hat.shape} but ground truth is {d0.shape}.")
    corr = np.abs(_unit_columns(d_hat).T @ _unit_columns(d0))
    available = np.ones(d0.shape[1], dtype=bool)
    matches = []
    for row in corr:
        candidates = np.where(available, row, -1.0)
        best = int(np.argmax(candidates))
        available[best] = False
        matches.append(best)
    return matches


def recovery_error(d_hat: Mat, d0: Mat) -> float:
    """
    Dictionary recovery error: one minus the mean absolute cosine over greedily matched atoms.

    Parameters
    ----------
    d_hat : Mat
        Learned dictionary, M x K. Columns are renormalized before matching.
    d0 : Mat
        Ground-truth dictionary of the same shape.

    Returns
    -------
    float
        Value in [0, 1]; zero iff every learned atom equals its match up to sign.
    """
    matches = match_atoms(d_hat, d0)
    cosines = np.abs(np.sum(_unit_columns(d_hat) * _unit_columns(d0)[:, matches], axis=0))
    error = float(np.mean(1.0 - np.minimum(cosines, 1.0)))
    return min(max(error, 0.0), 1.0)
