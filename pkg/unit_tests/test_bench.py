import csv
import math
from pathlib import Path

import pytest
import pytest_check

from road_dl.bench import (
    PRESETS,
    AlgorithmSpec,
    ExperimentSpec,
    derive_seed,
    export_experiment_result,
    get_preset,
    read_experiment_spec,
    run_experiment,
    spec_from_values,
)
from road_dl.errors import FormatError
from road_dl.synthetic import SparsityModel


@pytest.fixture
def small_spec() -> ExperimentSpec:
    """Fixture to provide a two-point experiment that runs in well under a second."""
    return ExperimentSpec("small", 6, 8, [20, 40], SparsityModel.fixed(2),
                          [AlgorithmSpec("mod-omp", max_iter=5), AlgorithmSpec("ksvd-omp", max_iter=5)],
                          trials=2, seed=11)


def _rows(path: Path) -> list[list[str]]:
    with open(path, "r", encoding="utf-8") as csvfile:
        return list(csv.reader(csvfile))


def test_derive_seed_is_stable_and_label_dependent() -> None:
    assert derive_seed(3, "data", 100, 0) == derive_seed(3, "data", 100, 0)
    assert derive_seed(3, "data", 100, 0) != derive_seed(3, "data", 100, 1)
    assert derive_seed(3, "data", 100, 0) != derive_seed(4, "data", 100, 0)
    assert 0 <= derive_seed(2 ** 64, "x") < 2 ** 63


@pytest.mark.parametrize("kwargs, message", [
    pytest.param({"n_grid": [200, 100]}, "strictly increasing", id="decreasing"),
    pytest.param({"n_grid": []}, "must not be empty", id="empty"),
    pytest.param({"trials": 0}, "Trials", id="trials"),
    pytest.param({"algorithms": []}, "At least one algorithm", id="no-algorithms"),
    pytest.param({"algorithms": [AlgorithmSpec("mod-omp"), AlgorithmSpec("mod-omp")]}, "unique", id="duplicate"),
    pytest.param({"m": 0}, "M and K", id="dimension"),
])
def test_spec_validation(kwargs: dict, message: str) -> None:
    settings = {"name": "bad", "m": 4, "k": 4, "n_grid": [10], "sparsity_model": SparsityModel.fixed(1),
                "algorithms": [AlgorithmSpec("mod-omp")]}
    settings.update(kwargs)
    with pytest.raises(ValueError, match=message):
        ExperimentSpec(**settings)


def test_unknown_algorithm_is_rejected() -> None:
    with pytest.raises(ValueError, match="Unknown learner"):
        AlgorithmSpec("ista")


def test_single_trial_mean_is_the_trial_error(small_spec: ExperimentSpec) -> None:
    small_spec.trials = 1
    result = run_experiment(small_spec, workers=1)
    assert len(result.trials) == 4
    for record in result.trials:
        assert result.mean_error(record.algorithm, record.n) == record.error
        assert 0.0 <= record.error <= 1.0


def test_result_does_not_depend_on_workers(small_spec: ExperimentSpec) -> None:
    serial = run_experiment(small_spec, workers=1)
    threaded = run_experiment(small_spec, workers=3)
    assert [(r.algorithm, r.n, r.trial, r.error) for r in serial.trials] == \
        [(r.algorithm, r.n, r.trial, r.error) for r in threaded.trials]
    assert [(r.algorithm, r.n, r.trial) for r in serial.trials][:3] == \
        [("mod-omp", 20, 0), ("mod-omp", 20, 1), ("mod-omp", 40, 0)]


def test_failed_trials_are_recorded(small_spec: ExperimentSpec) -> None:
    small_spec.algorithms = [AlgorithmSpec("road-inexact", max_iter=2, overrides={"rho1": 100.0}),
                             AlgorithmSpec("mod-omp", max_iter=2)]
    result = run_experiment(small_spec, workers=1)
    assert len(result.failed_trials) == 4
    assert all("must exceed" in record.failure for record in result.failed_trials)
    assert math.isnan(result.mean_error("road-inexact", 20))
    assert not math.isnan(result.mean_error("mod-omp", 20))


def test_export_without_timing_is_reproducible(small_spec: ExperimentSpec, tmp_path: Path) -> None:
    first = export_experiment_result(run_experiment(small_spec, workers=1), tmp_path / "a", include_timing=False)
    second = export_experiment_result(run_experiment(small_spec, workers=2), tmp_path / "b", include_timing=False)
    assert first["trials"].read_bytes() == second["trials"].read_bytes()
    assert first["means"].read_bytes() == second["means"].read_bytes()
    trials = _rows(first["trials"])
    assert trials[0] == ["algorithm", "N", "trial", "error", "seconds"]
    assert len(trials) == 1 + 8
    assert trials[1][:3] == ["mod-omp", "20", "0"]
    assert trials[1][4] == ""
    means = _rows(first["means"])
    assert means[0] == ["algorithm", "N", "mean_error"]
    assert [row[:2] for row in means[1:]] == [["mod-omp", "20"], ["mod-omp", "40"],
                                              ["ksvd-omp", "20"], ["ksvd-omp", "40"]]
    assert "trace" not in first


def test_trace_is_written(small_spec: ExperimentSpec, tmp_path: Path) -> None:
    small_spec.trace_every = 2
    small_spec.trials = 1
    small_spec.algorithms = [AlgorithmSpec("mod-omp", max_iter=4)]
    result = run_experiment(small_spec, workers=1)
    assert [(point.n, point.iteration) for point in result.traces] == [(20, 2), (20, 4), (40, 2), (40, 4)]
    paths = export_experiment_result(result, tmp_path)
    assert _rows(paths["trace"])[0] == ["algorithm", "N", "trial", "iteration", "error"]


def test_spec_from_values() -> None:
    spec = spec_from_values({"m": "6", "k": "8", "n_grid": "20, 40", "sparsity": "bernoulli:0.25",
                             "algorithms": "road-inexact, mod-lasso", "snr_db": "30",
                             "road-inexact.max_iter": "50", "road-inexact.rho1": "400",
                             "mod-lasso.lasso_lambda": "0.05"})
    assert spec.n_grid == [20, 40]
    assert spec.sparsity_model == SparsityModel.bernoulli(0.25)
    assert spec.snr_db == 30.0
    assert spec.algorithms[0].max_iter == 50
    assert spec.algorithms[0].overrides == {"rho1": 400}
    assert spec.algorithms[1].overrides == {"lasso_lambda": 0.05}
    assert spec_from_values(spec.as_dict()) == spec


def test_spec_from_values_uses_base() -> None:
    spec = spec_from_values({"trials": "2", "seed": "7"}, base=get_preset("fig1a"))
    assert spec.trials == 2
    assert spec.seed == 7
    assert spec.n_grid == get_preset("fig1a").n_grid
    assert get_preset("fig1a").trials == 10


@pytest.mark.parametrize("values, message", [
    pytest.param({"m": "6"}, "missing k, n_grid, sparsity, algorithms", id="missing"),
    pytest.param({"m": "six"}, "not a valid int", id="not-int"),
    pytest.param({"m": "6", "k": "8", "n_grid": "20", "sparsity": "fixed:2", "algorithms": "nope"},
                 "Unknown learner", id="unknown-learner"),
])
def test_bad_spec_values(values: dict[str, str], message: str) -> None:
    with pytest.raises(FormatError, match=message):
        spec_from_values(values)


def test_read_experiment_spec_names_from_file(tmp_path: Path) -> None:
    path = tmp_path / "tiny.txt"
    path.write_text("m = 4\nk = 4\nn_grid = 10\nsparsity = fixed:1\nalgorithms = mod-omp\n", encoding="utf-8")
    assert read_experiment_spec(path).name == "tiny"


def test_presets() -> None:
    fig1a = get_preset("fig1a")
    assert (fig1a.m, fig1a.k, fig1a.n_grid[0], fig1a.n_grid[-1]) == (16, 32, 100, 400)
    assert [algorithm.name for algorithm in fig1a.algorithms] == ["road-exact", "mod-omp", "ksvd-omp"]
    pytest_check.equal(get_preset("fig2-snr20").snr_db, 20.0)
    pytest_check.equal(get_preset("fig3-theta6").algorithms[1].sparsity, 6)
    pytest_check.equal([(algorithm.name, algorithm.max_iter) for algorithm in get_preset("fig1a-mini").algorithms],
                       [("road-exact", 1000), ("mod-omp", 300), ("ksvd-omp", 300)])
    for spec in PRESETS.values():
        pytest_check.equal(spec.trials, 10)
    with pytest.raises(ValueError, match="Unknown preset"):
        get_preset("fig9")


@pytest.mark.slow
def test_mini_preset_recovers_dictionary() -> None:
    spec = get_preset("fig1a-mini")
    result = run_experiment(ExperimentSpec(spec.name, spec.m, spec.k, [100, 400], spec.sparsity_model,
                                           spec.algorithms))
    assert not result.failed_trials
    assert result.median_error("road-exact", 400) < 0.01
    assert result.median_error("road-exact", 100) > 0.05
    for baseline in ("mod-omp", "ksvd-omp"):
        pytest_check.greater(result.median_error(baseline, 400), 1e-3)
        pytest_check.less(result.median_error("road-exact", 400), result.median_error(baseline, 400))
        pytest_check.less(result.mean_error("road-exact", 400), result.mean_error(baseline, 400))


@pytest.mark.slow
def test_noisy_solver_improves_with_samples_and_beats_ksvd() -> None:
    spec = get_preset("fig2-snr20")
    result = run_experiment(ExperimentSpec("snr20-ends", spec.m, spec.k, [100, 400], spec.sparsity_model,
                                           [AlgorithmSpec("road-exact-noisy"), AlgorithmSpec("ksvd-omp")],
                                           snr_db=spec.snr_db))
    noisy_400 = result.median_error("road-exact-noisy", 400)
    assert noisy_400 < result.median_error("road-exact-noisy", 100)
    assert noisy_400 < result.median_error("ksvd-omp", 400)
