"""Named dictionary learners shared by the benchmark, the command line and super-resolution training."""
from collections.abc import Callable
from dataclasses import dataclass, field
import logging

from road_dl.admm import AdmmConfig, RoadState, Variant, extract_model, fit_road
from road_dl.baselines import AltConfig, Coder, Updater, run_alternating
from road_dl.linalg import Mat, as_mat
from road_dl.model import LearnedModel

log = logging.getLogger(__name__)

DictionaryCallback = Callable[[int, Mat], None]


@dataclass
class LearnerOptions:  # pylint: disable=too-many-instance-attributes
    """Settings common to every learner plus solver-specific overrides."""

    seed: int = field(default=0, metadata={"description": "Seed of the initialization"})
    max_iter: int | None = field(default=None, metadata={
        "description": "Iteration cap (ADMM sweeps or outer rounds); None uses the learner default"})
    sparsity: int = field(default=3, metadata={"description": "OMP budget of the two-stage learners"})
    epsilon: float = field(default=0.0, metadata={"description": "Noise radius of road-exact-noisy"})
    workers: int = field(default=1, metadata={"description": "Threads used by the OMP coding stage"})
    overrides: dict[str, object] = field(default_factory=dict, metadata={
        "description": "Extra AdmmConfig or AltConfig fields, such as rho1 or lasso_lambda"})
    callback: DictionaryCallback | None = field(default=None, metadata={
        "description": "Called with (iteration, dictionary) every callback_every iterations"})
    callback_every: int = field(default=1, metadata={"description": "Spacing of callback invocations"})

    def __post_init__(self) -> None:
        """Validate the options."""
        if self.max_iter is not None and self.max_iter < 1:
            raise ValueError("Iteration cap must be at least 1.")
        if self.sparsity < 1:
            raise ValueError("Sparsity must be at least 1.")
        if self.epsilon < 0:
            raise ValueError("Noise radius must be non-negative.")
        if self.callback_every < 1:
            raise ValueError("Callback spacing must be at least 1.")


FitFunction = Callable[[Mat, int, LearnerOptions, int], LearnedModel]


@dataclass(frozen=True)
class Learner:
    """A named dictionary learner with its default iteration cap."""

    name: str
    description: str
    default_max_iter: int
    fit: FitFunction = field(repr=False)

    def __call__(self, y: Mat, k: int, *,  # pylint: disable=too-many-arguments
                 seed: int = 0, max_iter: int | None = None, sparsity: int = 3, epsilon: float = 0.0,
                 **extra: object) -> LearnedModel:
        """
        Learn a ``k``-atom dictionary from ``y``.

        Extra keyword arguments are :class:`LearnerOptions` fields (``workers``, ``overrides``,
        ``callback``, ``callback_every``).
        """
        options = LearnerOptions(seed=seed, max_iter=max_iter, sparsity=sparsity, epsilon=epsilon,
                                 **extra)  # type: ignore[arg-type]
        iterations = options.max_iter if options.max_iter is not None else self.default_max_iter
        log.debug("%s: K=%d, cap %d, seed %d", self.name, k, iterations, options.seed)
        return self.fit(as_mat(y, name="Y"), k, options, iterations)


def _road(variant: Variant, fixed_rho: bool = False) -> FitFunction:
    def fit(y: Mat, k: int, options: LearnerOptions, iterations: int) -> LearnedModel:
        """Run the ROAD solver with the given options."""
        settings: dict[str, object] = {"max_iter": iterations, "seed": options.seed}
        if variant is Variant.EXACT_NOISY:
            settings["epsilon_noise"] = options.epsilon
        settings.update(options.overrides)
        if fixed_rho:
            cfg = AdmmConfig.fixed_rho(k, **settings)
        else:
            cfg = AdmmConfig(variant=variant, k_atoms=k, **settings)  # type: ignore[arg-type]

        def trace(state: RoadState) -> None:
            """Forward the current dictionary to the caller."""
            if options.callback is not None and state.iteration % options.callback_every == 0:
                options.callback(state.iteration, extract_model(state, y, seed=options.seed).dictionary)

        model = fit_road(y, cfg, callback=trace if options.callback is not None else None)
        if fixed_rho:
            model.solver = "road-inexact-fixed"
        return model
    return fit


def _two_stage(coder: Coder, updater: Updater) -> FitFunction:
    def fit(y: Mat, k: int, options: LearnerOptions, iterations: int) -> LearnedModel:
        """Run the alternating solver with the given options."""
        settings: dict[str, object] = {"outer_iters": iterations, "sparsity": options.sparsity,
                                       "seed": options.seed, "workers": options.workers}
        settings.update(options.overrides)
        cfg = AltConfig(coder=coder, updater=updater, **settings)  # type: ignore[arg-type]

        def trace(iteration: int, dictionary: Mat) -> None:
            """Forward every callback_every-th dictionary to the caller."""
            if options.callback is not None and iteration % options.callback_every == 0:
                options.callback(iteration, dictionary)

        return run_alternating(y, k, cfg, callback=trace if options.callback is not None else None)
    return fit


LEARNERS: dict[str, Learner] = {
    learner.name: learner for learner in (
        Learner("road-exact", "Exact ADMM for noise-free data", 1000, _road(Variant.EXACT_NOISEFREE)),
        Learner("road-exact-noisy", "Exact ADMM with a Frobenius noise ball", 1000, _road(Variant.EXACT_NOISY)),
        Learner("road-inexact", "Inexact ADMM with per-constraint penalties", 2000, _road(Variant.INEXACT)),
        Learner("road-inexact-fixed", "Inexact ADMM with one shared penalty", 2000,
                _road(Variant.INEXACT, fixed_rho=True)),
        Learner("mod-omp", "MOD updates with OMP coding", 300, _two_stage(Coder.OMP, Updater.MOD)),
        Learner("ksvd-omp", "K-SVD updates with OMP coding", 300, _two_stage(Coder.OMP, Updater.KSVD)),
        Learner("mod-lasso", "MOD updates with lasso coding", 300, _two_stage(Coder.LASSO, Updater.MOD)),
        Learner("ksvd-lasso", "K-SVD updates with lasso coding", 300, _two_stage(Coder.LASSO, Updater.KSVD)),
    )
}


def get_learner(name: str) -> Learner:
    """
    Look up a learner by name.

    Raises
    ------
    ValueError
        If no learner has that name; the message lists the known names.
    """
    try:
        return LEARNERS[name]
    except KeyError:
        raise ValueError(f"Unknown learner {name!r}; choose from {', '.join(LEARNERS)}.") from None
