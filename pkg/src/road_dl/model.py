"""Learned dictionary models, solver reports and their export to matrix and report files."""
import csv
from dataclasses import dataclass, field
import logging
from pathlib import Path

import numpy as np

from road_dl.linalg import Mat
from road_dl.matrix_io import write_matrix

log = logging.getLogger(__name__)


@dataclass
class SolveReport:
    """Convergence record of one solver run."""

    converged: bool = field(default=False, metadata={
        "description": "Whether the stopping criteria were met before the iteration cap"})
    iterations: int = field(default=0, metadata={
        "description": "Number of completed iterations"})
    primal_residual_history: list[float] = field(default_factory=list, metadata={
        "description": "Normalized squared primal residual per iteration (ADMM solvers)"})
    dual_residual_history: list[float] = field(default_factory=list, metadata={
        "description": "Normalized squared dual residual per iteration (ADMM solvers)"})
    lagrangian_history: list[float] = field(default_factory=list, metadata={
        "description": "Augmented Lagrangian per iteration (inexact ADMM only)"})
    objective_history: list[float] = field(default_factory=list, metadata={
        "description": "Frobenius fitting error ||Y - DX||_F per outer iteration (alternating solvers)"})

    def __post_init__(self) -> None:
        """Validate history lengths against the iteration count."""
        if self.iterations < 0:
            raise ValueError("Iteration count must be non-negative.")
        for name in ("primal_residual_history", "dual_residual_history"):
            history = getattr(self, name)
            if history and len(history) != self.iterations:
                raise ValueError(f"{name} has {len(history)} entries, expected {self.iterations}.")


@dataclass
class LearnedModel:
    """A learned dictionary with its coefficients and provenance."""

    dictionary: Mat = field(metadata={
        "description": "M x K dictionary with unit-norm columns"})
    coefficients: Mat = field(metadata={
        "description": "K x N coefficient matrix"})
    dead_atoms: frozenset[int] = field(default_factory=frozenset, metadata={
        "description": "Atoms that carried no energy and were replaced by random unit vectors"})
    report: SolveReport = field(default_factory=SolveReport, metadata={
        "description": "Convergence record of the run that produced the model"})
    solver: str = field(default="", metadata={
        "description": "Name of the solver that produced the model"})
    parameters: dict[str, str] = field(default_factory=dict, metadata={
        "description": "Effective solver parameters, for the run manifest"})

    def __post_init__(self) -> None:
        """Check that the dictionary and coefficients agree on the atom count."""
        if self.dictionary.shape[1] != self.coefficients.shape[0]:
            raise ValueError(
                f"Dictionary has {self.dictionary.shape[1]} atoms but coefficients have "
                f"{self.coefficients.shape[0]} rows.")

    @property
    def k_atoms(self) -> int:
        """Number of atoms in the dictionary."""
        return int(self.dictionary.shape[1])

    def reconstruct(self) -> Mat:
        """Return the product of dictionary and coefficients."""
        return self.dictionary @ self.coefficients

    def relative_error(self, y: Mat) -> float:
        """Return ``||Y - DX||_F / ||Y||_F`` (or the absolute error when ``Y`` is zero)."""
        residual = float(np.linalg.norm(y - self.reconstruct()))
        scale = float(np.linalg.norm(y))
        return residual / scale if scale > 0 else residual


def _fmt(value: float) -> str:
    return f"{value:.17g}"


def export_report_to_csv(filename: str | Path, report: SolveReport) -> None:
    """
    Save a solver report as one CSV line per iteration.

    ADMM reports use the header ``iter,primal,dual,lagrangian`` (the Lagrangian column is
    blank for the exact variants); alternating reports use ``iter,objective``.

    Parameters
    ----------
    filename : str or Path
        Destination CSV file.
    report : SolveReport
        The report to save.
    """
    with open(filename, "w", encoding="utf-8", newline="") as csvfile:
        writer = csv.writer(csvfile)
        if report.primal_residual_history:
            writer.writerow(["iter", "primal", "dual", "lagrangian"])
            for idx, (primal, dual) in enumerate(zip(report.primal_residual_history,
                                                     report.dual_residual_history)):
                lagrangian = ""
                if idx < len(report.lagrangian_history):
                    lagrangian = _fmt(report.lagrangian_history[idx])
                writer.writerow([idx + 1, _fmt(primal), _fmt(dual), lagrangian])
        else:
            writer.writerow(["iter", "objective"])
            for idx, objective in enumerate(report.objective_history):
                writer.writerow([idx + 1, _fmt(objective)])


def export_model(model: LearnedModel, out_dir: str | Path, suffix: str = ".roadmat") -> dict[str, Path]:
    """
    Write a learned model as two matrix files plus a run report.

    Parameters
    ----------
    model : LearnedModel
        Model to export.
    out_dir : str or Path
        Output directory, created if missing.
    suffix : str
        Matrix file suffix; ``.csv`` selects CSV, anything else ROADMAT1.

    Returns
    -------
    dict[str, Path]
        Paths of the written ``dictionary``, ``coefficients`` and ``report`` files.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "dictionary": out_dir / f"dictionary{suffix}",
        "coefficients": out_dir / f"coefficients{suffix}",
        "report": out_dir / "report.csv",
    }
    log.info("Exporting %s model with %d atoms to %s", model.solver or "learned", model.k_atoms, out_dir)
    write_matrix(paths["dictionary"], model.dictionary)
    write_matrix(paths["coefficients"], model.coefficients)
    export_report_to_csv(paths["report"], model.report)
    return paths
