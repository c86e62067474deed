import csv
from pathlib import Path

import numpy as np
import pytest

from road_dl.matrix_io import read_matrix
from road_dl.model import LearnedModel, SolveReport, export_model, export_report_to_csv


def _model(report: SolveReport | None = None) -> LearnedModel:
    dictionary = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]])
    coefficients = np.array([[1.0, 2.0, 0.0], [0.0, 1.0, 3.0]])
    return LearnedModel(dictionary=dictionary, coefficients=coefficients, report=report or SolveReport(),
                        solver="road-exact")


def test_atom_count_must_agree() -> None:
    with pytest.raises(ValueError, match="2 atoms but coefficients have 3 rows"):
        LearnedModel(dictionary=np.eye(2), coefficients=np.zeros((3, 4)))


def test_history_length_must_match_iterations() -> None:
    with pytest.raises(ValueError, match="primal_residual_history has 1 entries, expected 2"):
        SolveReport(iterations=2, primal_residual_history=[0.1], dual_residual_history=[0.1, 0.2])


def test_reconstruct_and_relative_error() -> None:
    model = _model()
    y = model.reconstruct()
    assert model.k_atoms == 2
    assert model.relative_error(y) == 0.0
    assert model.relative_error(2 * y) == pytest.approx(0.5)
    assert model.relative_error(np.zeros_like(y)) == pytest.approx(np.linalg.norm(y))


def test_admm_report_csv(tmp_path: Path) -> None:
    report = SolveReport(converged=True, iterations=2, primal_residual_history=[0.5, 0.25],
                         dual_residual_history=[0.1, 0.05], lagrangian_history=[3.0, 2.0])
    path = tmp_path / "report.csv"
    export_report_to_csv(path, report)
    with open(path, "r", encoding="utf-8") as csvfile:
        rows = list(csv.reader(csvfile))
    assert rows == [["iter", "primal", "dual", "lagrangian"],
                    ["1", "0.5", "0.10000000000000001", "3"],
                    ["2", "0.25", "0.050000000000000003", "2"]]


def test_exact_report_leaves_lagrangian_blank(tmp_path: Path) -> None:
    report = SolveReport(iterations=1, primal_residual_history=[0.5], dual_residual_history=[0.5])
    path = tmp_path / "report.csv"
    export_report_to_csv(path, report)
    assert path.read_text(encoding="utf-8").splitlines()[1] == "1,0.5,0.5,"


def test_alternating_report_csv(tmp_path: Path) -> None:
    path = tmp_path / "report.csv"
    export_report_to_csv(path, SolveReport(iterations=2, objective_history=[4.0, 1.5]))
    assert path.read_text(encoding="utf-8").splitlines() == ["iter,objective", "1,4", "2,1.5"]


@pytest.mark.parametrize("suffix", [pytest.param(".roadmat", id="roadmat"), pytest.param(".csv", id="csv")])
def test_export_model(tmp_path: Path, suffix: str) -> None:
    model = _model(SolveReport(iterations=1, objective_history=[0.0]))
    paths = export_model(model, tmp_path / "out", suffix=suffix)
    assert paths["dictionary"].name == f"dictionary{suffix}"
    np.testing.assert_array_equal(read_matrix(paths["dictionary"]), model.dictionary)
    np.testing.assert_array_equal(read_matrix(paths["coefficients"]), model.coefficients)
    assert paths["report"].is_file()
