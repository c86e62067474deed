"""
Synthetic dictionary recovery benchmark.

An experiment sweeps the number of samples N for one ground-truth family, runs every
configured learner on fresh data for each trial, and records the dictionary recovery error.
Ground truth depends only on (seed, N, trial), so every learner sees identical data in a given
cell, while each learner gets its own initialization seed.
"""
from concurrent.futures import ThreadPoolExecutor
import csv
from dataclasses import dataclass, field, fields
import hashlib
import logging
import math
from pathlib import Path
import statistics
import time

import numpy as np

from road_dl.config import (
    get_float,
    get_int,
    get_int_list,
    get_str,
    get_str_list,
    read_key_value_file,
    resolve_workers,
)
from road_dl.errors import FormatError, RoadError
from road_dl.learners import get_learner
from road_dl.linalg import Mat
from road_dl.synthetic import SparsityModel, gen_ground_truth, recovery_error

log = logging.getLogger(__name__)

# Exceptions that mark a single trial as failed instead of aborting the experiment.
TRIAL_ERRORS = (RoadError, ValueError, ArithmeticError, np.linalg.LinAlgError)

# Spec file keys that must be present when there is no base spec, with their field names.
REQUIRED_KEYS = {"m": "m", "k": "k", "n_grid": "n_grid", "sparsity": "sparsity_model", "algorithms": "algorithms"}


def derive_seed(seed: int, *parts: object) -> int:
    """
    Combine a base seed with a cell label into a 63-bit seed.

    The label is hashed with BLAKE2b, so the result is the same on every platform and run.
    """
    digest = hashlib.blake2b(repr(parts).encode("utf-8"), digest_size=8).digest()
    return (seed ^ int.from_bytes(digest, "little")) & (2 ** 63 - 1)


@dataclass
class AlgorithmSpec:
    """One learner of an experiment with its iteration cap and overrides."""

    name: str = field(metadata={"description": "Learner name, see road_dl.learners"})
    max_iter: int | None = field(default=None, metadata={
        "description": "Iteration cap; None uses the learner default"})
    sparsity: int | None = field(default=None, metadata={
        "description": "OMP budget; None derives it from the sparsity model"})
    overrides: dict[str, object] = field(default_factory=dict, metadata={
        "description": "Extra solver configuration fields"})

    def __post_init__(self) -> None:
        """Check that the learner exists."""
        get_learner(self.name)
        if self.max_iter is not None and self.max_iter < 1:
            raise ValueError(f"{self.name}: iteration cap must be at least 1.")


@dataclass
class ExperimentSpec:  # pylint: disable=too-many-instance-attributes
    """A grid of (learner, N, trial) cells over one ground-truth family."""

    name: str = field(metadata={"description": "Experiment or preset name"})
    m: int = field(metadata={"description": "Signal dimension M"})
    k: int = field(metadata={"description": "Number of atoms K"})
    n_grid: list[int] = field(metadata={"description": "Strictly increasing sample counts N"})
    sparsity_model: SparsityModel = field(metadata={"description": "Support model of the coefficients"})
    algorithms: list[AlgorithmSpec] = field(metadata={"description": "Learners to compare"})
    trials: int = field(default=10, metadata={"description": "Trials per (learner, N) cell"})
    snr_db: float | None = field(default=None, metadata={"description": "Noise level; None is noise-free"})
    seed: int = field(default=0, metadata={"description": "Base seed of every trial"})
    trace_every: int = field(default=0, metadata={
        "description": "Record the recovery error every this many iterations (0 disables)"})

    def __post_init__(self) -> None:
        """Validate the grid."""
        if min(self.m, self.k) < 1:
            raise ValueError("M and K must be positive.")
        if self.trials < 1:
            raise ValueError("Trials must be at least 1.")
        if not self.n_grid:
            raise ValueError("The N grid must not be empty.")
        if self.n_grid[0] < 1 or any(b <= a for a, b in zip(self.n_grid, self.n_grid[1:])):
            raise ValueError(f"The N grid must be positive and strictly increasing, got {self.n_grid}.")
        if not self.algorithms:
            raise ValueError("At least one algorithm is required.")
        names = [algorithm.name for algorithm in self.algorithms]
        if len(set(names)) != len(names):
            raise ValueError(f"Algorithm names must be unique, got {names}.")
        if self.trace_every < 0:
            raise ValueError("Trace spacing must be non-negative.")

    def as_dict(self) -> dict[str, str]:
        """Return the spec as ``key = value`` strings, the format :func:`read_experiment_spec` reads."""
        entries = {
            "name": self.name,
            "m": str(self.m),
            "k": str(self.k),
            "n_grid": ", ".join(str(n) for n in self.n_grid),
            "sparsity": str(self.sparsity_model),
            "trials": str(self.trials),
            "seed": str(self.seed),
            "algorithms": ", ".join(algorithm.name for algorithm in self.algorithms),
            "trace_every": str(self.trace_every),
        }
        if self.snr_db is not None:
            entries["snr_db"] = f"{self.snr_db:g}"
        for algorithm in self.algorithms:
            if algorithm.max_iter is not None:
                entries[f"{algorithm.name}.max_iter"] = str(algorithm.max_iter)
            if algorithm.sparsity is not None:
                entries[f"{algorithm.name}.sparsity"] = str(algorithm.sparsity)
            for key, value in algorithm.overrides.items():
                entries[f"{algorithm.name}.{key}"] = str(value)
        return entries


@dataclass
class TrialRecord:
    """Outcome of one (learner, N, trial) cell."""

    algorithm: str
    n: int
    trial: int
    error: float = field(metadata={"description": "Recovery error, NaN when the trial failed"})
    seconds: float = field(metadata={"description": "Wall-clock time of the learner"})
    failure: str = field(default="", metadata={"description": "Error message of a failed trial"})

    @property
    def failed(self) -> bool:
        """Whether the learner raised instead of returning a dictionary."""
        return bool(self.failure)


@dataclass
class TracePoint:
    """Recovery error of a learner's intermediate dictionary."""

    algorithm: str
    n: int
    trial: int
    iteration: int
    error: float


@dataclass
class ExperimentResult:
    """Per-trial outcomes of an experiment in grid order (learner, N, trial)."""

    spec: ExperimentSpec
    trials: list[TrialRecord] = field(default_factory=list)
    traces: list[TracePoint] = field(default_factory=list)

    def errors(self, algorithm: str, n: int) -> list[float]:
        """Recovery errors of the successful trials of one cell."""
        return [record.error for record in self.trials
                if record.algorithm == algorithm and record.n == n and not record.failed]

    def mean_error(self, algorithm: str, n: int) -> float:
        """Arithmetic mean over the successful trials of one cell, NaN if all failed."""
        errors = self.errors(algorithm, n)
        return math.fsum(errors) / len(errors) if errors else math.nan

    def median_error(self, algorithm: str, n: int) -> float:
        """Median over the successful trials of one cell, NaN if all failed."""
        errors = self.errors(algorithm, n)
        return statistics.median(errors) if errors else math.nan

    def mean_errors(self) -> dict[tuple[str, int], float]:
        """Mean error of every cell, keyed by (learner, N) in grid order."""
        return {(algorithm.name, n): self.mean_error(algorithm.name, n)
                for algorithm in self.spec.algorithms for n in self.spec.n_grid}

    @property
    def failed_trials(self) -> list[TrialRecord]:
        """Trials whose learner raised."""
        return [record for record in self.trials if record.failed]


def _run_trial(spec: ExperimentSpec, algorithm: AlgorithmSpec, n: int,
               trial: int) -> tuple[TrialRecord, list[TracePoint]]:
    truth = gen_ground_truth(spec.m, spec.k, n, spec.sparsity_model,
                             seed=derive_seed(spec.seed, "data", n, trial), snr_db=spec.snr_db)
    learner = get_learner(algorithm.name)
    sparsity = algorithm.sparsity or spec.sparsity_model.expected_sparsity(spec.k)
    trace: list[TracePoint] = []
    extra: dict[str, object] = {"overrides": dict(algorithm.overrides)}
    if spec.trace_every:
        def record(iteration: int, dictionary: Mat) -> None:
            """Store the recovery error of an intermediate dictionary."""
            trace.append(TracePoint(algorithm.name, n, trial, iteration, recovery_error(dictionary, truth.d0)))
        extra.update(callback=record, callback_every=spec.trace_every)
    start = time.perf_counter()
    try:
        model = learner(truth.y_observed, spec.k, seed=derive_seed(spec.seed, algorithm.name, n, trial),
                        max_iter=algorithm.max_iter, sparsity=sparsity, epsilon=truth.epsilon, **extra)
        error = recovery_error(model.dictionary, truth.d0)
    except TRIAL_ERRORS as exc:
        log.warning("%s failed at N=%d, trial %d: %s", algorithm.name, n, trial, exc)
        return TrialRecord(algorithm.name, n, trial, math.nan, time.perf_counter() - start, str(exc)), trace
    return TrialRecord(algorithm.name, n, trial, error, time.perf_counter() - start), trace


def run_experiment(spec: ExperimentSpec, workers: int | None = None) -> ExperimentResult:
    """
    Run every (learner, N, trial) cell of an experiment.

    Parameters
    ----------
    spec : ExperimentSpec
        The grid to run.
    workers : int, optional
        Worker threads; None reads ``ROAD_THREADS``. Results do not depend on it.

    Returns
    -------
    ExperimentResult
        One record per cell in grid order; failed learners are recorded, not raised.
    """
    cells = [(algorithm, n, trial)
             for algorithm in spec.algorithms for n in spec.n_grid for trial in range(spec.trials)]
    threads = min(resolve_workers(workers), len(cells))
    log.info("Running experiment %s: %d cells on %d threads", spec.name, len(cells), threads)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(lambda cell: _run_trial(spec, *cell), cells))
    else:
        outcomes = [_run_trial(spec, *cell) for cell in cells]
    result = ExperimentResult(spec=spec)
    for record, trace in outcomes:
        result.trials.append(record)
        result.traces.extend(trace)
    for (name, n), mean in result.mean_errors().items():
        log.info("%s N=%d: mean recovery error %.3e", name, n, mean)
    if result.failed_trials:
        log.warning("%d of %d trials failed", len(result.failed_trials), len(result.trials))
    return result


def _fmt(value: float) -> str:
    return f"{value:.17g}"


def export_experiment_result(result: ExperimentResult, out_dir: str | Path,
                             include_timing: bool = True) -> dict[str, Path]:
    """
    Write the per-trial CSV, the means CSV and, when traced, the trace CSV.

    Parameters
    ----------
    result : ExperimentResult
        Result to write.
    out_dir : str or Path
        Output directory, created if missing.
    include_timing : bool
        Write wall-clock seconds; when False the column is left blank so reruns are
        byte-identical.

    Returns
    -------
    dict[str, Path]
        Paths keyed ``trials``, ``means`` and, if present, ``trace``.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {"trials": out_dir / "trials.csv", "means": out_dir / "means.csv"}
    with open(paths["trials"], "w", encoding="utf-8", newline="") as csvfile:
        writer = csv.writer(csvfile)
        writer.writerow(["algorithm", "N", "trial", "error", "seconds"])
        for record in result.trials:
            error = "" if record.failed else _fmt(record.error)
            seconds = f"{record.seconds:.6f}" if include_timing else ""
            writer.writerow([record.algorithm, record.n, record.trial, error, seconds])
    with open(paths["means"], "w", encoding="utf-8", newline="") as csvfile:
        writer = csv.writer(csvfile)
        writer.writerow(["algorithm", "N", "mean_error"])
        for (name, n), mean in result.mean_errors().items():
            writer.writerow([name, n, "" if math.isnan(mean) else _fmt(mean)])
    if result.traces:
        paths["trace"] = out_dir / "trace.csv"
        with open(paths["trace"], "w", encoding="utf-8", newline="") as csvfile:
            writer = csv.writer(csvfile)
            writer.writerow(["algorithm", "N", "trial", "iteration", "error"])
            for point in result.traces:
                writer.writerow([point.algorithm, point.n, point.trial, point.iteration, _fmt(point.error)])
    log.info("Wrote experiment %s results to %s", result.spec.name, out_dir)
    return paths


def _number(key: str, value: str) -> int | float:
    try:
        return int(value)
    except ValueError:
        pass
    try:
        return float(value)
    except ValueError as exc:
        raise FormatError(f"{key} = {value!r} is not a number") from exc


def _algorithms(names: list[str], values: dict[str, str]) -> list[AlgorithmSpec]:
    algorithms = []
    for name in names:
        prefix = f"{name}."
        overrides = {key[len(prefix):]: _number(key, value) for key, value in values.items()
                     if key.startswith(prefix) and key[len(prefix):] not in ("max_iter", "sparsity")}
        algorithms.append(AlgorithmSpec(name=name,
                                        max_iter=get_int(values, f"{prefix}max_iter"),
                                        sparsity=get_int(values, f"{prefix}sparsity"),
                                        overrides=overrides))
    return algorithms


def spec_from_values(values: dict[str, str], base: ExperimentSpec | None = None) -> ExperimentSpec:
    """
    Build an experiment spec from ``key = value`` entries, filling gaps from ``base``.

    Recognized keys are ``name``, ``m``, ``k``, ``n_grid``, ``sparsity`` (``fixed:S`` or
    ``bernoulli:THETA``), ``snr_db``, ``trials``, ``seed``, ``trace_every``, ``algorithms`` and
    per-learner ``<learner>.max_iter``, ``<learner>.sparsity`` or ``<learner>.<config field>``.

    Raises
    ------
    FormatError
        If a required key is missing and there is no base spec, or a value does not parse.
    """
    settings: dict[str, object] = {"name": "experiment"}
    if base is not None:
        settings = {item.name: getattr(base, item.name) for item in fields(base)}
    parsed: dict[str, object | None] = {
        "name": get_str(values, "name"),
        "m": get_int(values, "m"),
        "k": get_int(values, "k"),
        "n_grid": get_int_list(values, "n_grid"),
        "trials": get_int(values, "trials"),
        "snr_db": get_float(values, "snr_db"),
        "seed": get_int(values, "seed"),
        "trace_every": get_int(values, "trace_every"),
    }
    sparsity = get_str(values, "sparsity")
    names = get_str_list(values, "algorithms")
    try:
        if sparsity:
            parsed["sparsity_model"] = SparsityModel.parse(sparsity)
        if names:
            parsed["algorithms"] = _algorithms(names, values)
        settings.update({key: value for key, value in parsed.items() if value is not None})
        missing = [key for key, field_name in REQUIRED_KEYS.items() if field_name not in settings]
        if missing:
            raise FormatError(f"Experiment spec is missing {', '.join(missing)}")
        return ExperimentSpec(**settings)  # type: ignore[arg-type]
    except FormatError:
        raise
    except ValueError as exc:
        raise FormatError(f"Invalid experiment spec: {exc}") from exc


def read_experiment_spec(path: str | Path, base: ExperimentSpec | None = None) -> ExperimentSpec:
    """Read an experiment spec file; see :func:`spec_from_values` for the keys."""
    values = read_key_value_file(path)
    if base is None:
        values.setdefault("name", Path(path).stem)
    return spec_from_values(values, base=base)


def _grid(start: int, stop: int, step: int = 50) -> list[int]:
    return list(range(start, stop + 1, step))


def _compare(road: str = "road-exact", sparsity: int | None = None) -> list[AlgorithmSpec]:
    return [AlgorithmSpec(road),
            AlgorithmSpec("mod-omp", sparsity=sparsity),
            AlgorithmSpec("ksvd-omp", sparsity=sparsity)]


PRESETS: dict[str, ExperimentSpec] = {
    spec.name: spec for spec in (
        ExperimentSpec("fig1a", 16, 32, _grid(100, 400), SparsityModel.fixed(3), _compare()),
        ExperimentSpec("fig1b", 24, 48, _grid(100, 600), SparsityModel.fixed(3), _compare()),
        ExperimentSpec("fig1c", 24, 48, _grid(200, 800), SparsityModel.fixed(6), _compare()),
        ExperimentSpec("fig1d", 32, 64, _grid(200, 1000, 100), SparsityModel.fixed(6), _compare()),
        ExperimentSpec("fig2-snr30", 16, 32, _grid(100, 400), SparsityModel.fixed(3),
                       _compare("road-exact-noisy"), snr_db=30.0),
        ExperimentSpec("fig2-snr20", 16, 32, _grid(100, 400), SparsityModel.fixed(3),
                       _compare("road-exact-noisy"), snr_db=20.0),
        ExperimentSpec("fig3-theta3", 24, 48, _grid(100, 600), SparsityModel.bernoulli(3 / 48),
                       _compare(sparsity=3)),
        ExperimentSpec("fig3-theta6", 24, 48, _grid(200, 800), SparsityModel.bernoulli(6 / 48),
                       _compare(sparsity=6)),
        ExperimentSpec("fig1a-mini", 16, 32, _grid(100, 400), SparsityModel.fixed(3),
                       [AlgorithmSpec("road-exact", max_iter=1000), AlgorithmSpec("mod-omp", max_iter=300),
                        AlgorithmSpec("ksvd-omp", max_iter=300)]),
        ExperimentSpec("variants", 16, 32, _grid(100, 400), SparsityModel.fixed(3),
                       [AlgorithmSpec("road-inexact"), AlgorithmSpec("road-inexact-fixed"),
                        AlgorithmSpec("road-exact")], trace_every=50),
    )
}


def get_preset(name: str) -> ExperimentSpec:
    """
    Look up a preset experiment.

    Raises
    ------
    ValueError
        If no preset has that name; the message lists the known presets.
    """
    try:
        return PRESETS[name]
    except KeyError:
        raise ValueError(f"Unknown preset {name!r}; choose from {', '.join(PRESETS)}.") from None
