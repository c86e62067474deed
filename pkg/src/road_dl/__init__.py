"""Dictionary learning by rank-one atomic decomposition, with baselines, benchmarks and super-resolution."""
# pylint: disable=cyclic-import
from importlib.metadata import PackageNotFoundError, version

from .errors import DimensionMismatchError, FormatError, NumericalFailureError, PenaltyBoundError, RoadError
from .matrix_io import read_matrix, write_matrix
from .model import LearnedModel, SolveReport, export_model
from .admm import AdmmConfig, RoadState, Variant, fit_road
from .baselines import AltConfig, Coder, Updater, ksvd_update, lasso_code, mod_update, omp, omp_code, run_alternating
from .synthetic import GroundTruth, SparsityModel, gen_ground_truth, recovery_error
from .learners import LEARNERS, Learner, get_learner
from .bench import ExperimentResult, ExperimentSpec, export_experiment_result, get_preset, run_experiment
from .image import GrayImage, bicubic_resize, pgm_read, pgm_write, psnr, synthetic_image
from .superres import SrModel, apply_sr, load_sr_model, save_sr_model, train_yang, train_zeyde

__all__ = [
    "RoadError",
    "DimensionMismatchError",
    "FormatError",
    "NumericalFailureError",
    "PenaltyBoundError",
    "read_matrix",
    "write_matrix",
    "LearnedModel",
    "SolveReport",
    "export_model",
    "AdmmConfig",
    "RoadState",
    "Variant",
    "fit_road",
    "AltConfig",
    "Coder",
    "Updater",
    "ksvd_update",
    "lasso_code",
    "mod_update",
    "omp",
    "omp_code",
    "run_alternating",
    "GroundTruth",
    "SparsityModel",
    "gen_ground_truth",
    "recovery_error",
    "LEARNERS",
    "Learner",
    "get_learner",
    "ExperimentResult",
    "ExperimentSpec",
    "export_experiment_result",
    "get_preset",
    "run_experiment",
    "GrayImage",
    "bicubic_resize",
    "pgm_read",
    "pgm_write",
    "psnr",
    "synthetic_image",
    "SrModel",
    "apply_sr",
    "load_sr_model",
    "save_sr_model",
    "train_yang",
    "train_zeyde",
]

try:
    __version__ = version("road-dictionary-learning")
except PackageNotFoundError:
    __version__ = "0.0.0"
