"""
Command-line interface for synthesizing data, learning dictionaries, benchmarking and super-resolution.

Every subcommand takes ``--seed``, ``--out``, ``--config`` and ``--verbose``. Values in the
``--config`` file act as defaults that explicit flags override, and every command that writes
files also writes ``manifest.txt`` with its effective parameters.
"""
import argparse
from collections.abc import Callable
from dataclasses import replace
import logging
import math
from pathlib import Path
import sys

from road_dl.bench import export_experiment_result, get_preset, read_experiment_spec, run_experiment
from road_dl.config import read_key_value_file, resolve_workers, write_manifest
from road_dl.errors import RoadError
from road_dl.image import GrayImage, ImageKind, bicubic_resize, pgm_read, pgm_write, psnr, synthetic_image
from road_dl.learners import LEARNERS, get_learner
from road_dl.matrix_io import read_matrix, write_matrix
from road_dl.model import export_model
from road_dl.superres import (
    SrCoder,
    SrMode,
    apply_sr,
    downscale_pair,
    load_sr_model,
    save_sr_model,
    train_yang,
    train_zeyde,
)
from road_dl.synthetic import SparsityModel, gen_ground_truth, measured_snr_db, recovery_error

log = logging.getLogger(__name__)

MANIFEST = "manifest.txt"
# Short learner names accepted by sr-train.
SR_LEARNERS = {"road": "road-exact", "ksvd": "ksvd-lasso", "mod": "mod-lasso"}
ROAD_OVERRIDES = ("rho", "rho1", "rho2", "rho3", "beta1", "beta2", "beta3")
AddParser = Callable[..., argparse.ArgumentParser]
FLAG_KEYS = frozenset({"verbose", "force", "no_timing", "features"})
LIST_KEYS = frozenset({"high", "low"})


def configure_logging(verbose: bool = False) -> None:
    """Send log records to stderr as ``LEVEL: message``; DEBUG when verbose, INFO otherwise."""
    for handler in logging.root.handlers[:]:
        logging.root.removeHandler(handler)
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(levelname)s: %(message)s"
    )


def _fmt(value: float) -> str:
    return "inf" if math.isinf(value) else f"{value:.17g}"


def _require(args: argparse.Namespace, *names: str) -> None:
    missing = [f"--{name.replace('_', '-')}" for name in names if getattr(args, name) is None]
    if missing:
        raise ValueError(f"{args.command} requires {', '.join(missing)}")


def _out_dir(args: argparse.Namespace) -> Path:
    _require(args, "out")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    return out_dir


def _seed(args: argparse.Namespace) -> int:
    return 0 if args.seed is None else args.seed


def _suffix(args: argparse.Namespace) -> str:
    return ".csv" if args.format == "csv" else ".roadmat"


def _non_negative(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {text}")
    return value


def cmd_synth(args: argparse.Namespace) -> int:
    """Write a random ground-truth dictionary, its sparse coefficients and the data they generate."""
    _require(args, "m", "k", "n")
    if args.theta is not None:
        sparsity_model = SparsityModel.bernoulli(args.theta)
    else:
        sparsity_model = SparsityModel.fixed(3 if args.s is None else args.s)
    truth = gen_ground_truth(args.m, args.k, args.n, sparsity_model, seed=_seed(args), snr_db=args.snr_db)
    out_dir = _out_dir(args)
    suffix = _suffix(args)
    for name in ("d0", "x0", "y_clean", "y_observed"):
        write_matrix(out_dir / f"{name}{suffix}", getattr(truth, name))
    entries: dict[str, object] = {
        "command": "synth", "m": args.m, "k": args.k, "n": args.n, "sparsity": sparsity_model,
        "seed": _seed(args), "format": args.format,
        "snr_db": "" if args.snr_db is None else _fmt(args.snr_db),
        "epsilon": _fmt(truth.epsilon),
    }
    if args.snr_db is not None:
        entries["measured_snr_db"] = _fmt(measured_snr_db(truth.y_clean, truth.y_observed))
    write_manifest(out_dir / MANIFEST, entries)
    print(f"Wrote M={args.m} K={args.k} N={args.n} ground truth to {out_dir}")
    return 0


def _train_overrides(args: argparse.Namespace) -> dict[str, object]:
    overrides: dict[str, object] = {}
    if args.algorithm.startswith("road"):
        for name in ROAD_OVERRIDES:
            if getattr(args, name) is not None:
                overrides[name] = getattr(args, name)
        if args.algorithm == "road-inexact-fixed":
            for name in ("rho1", "rho2", "rho3"):
                if overrides.pop(name, None) is not None:
                    log.warning("--%s is ignored by road-inexact-fixed; use --rho", name)
        if args.tol is not None:
            overrides.update(tol_primal=args.tol, tol_dual=args.tol)
        if args.force:
            overrides["allow_unsafe_penalties"] = True
    else:
        if args.lasso_lambda is not None:
            overrides["lasso_lambda"] = args.lasso_lambda
        if args.tol is not None:
            overrides["tol"] = args.tol
    return overrides


def cmd_train(args: argparse.Namespace) -> int:
    """Learn a dictionary from a data matrix with one of the registered learners."""
    _require(args, "y", "k")
    y = read_matrix(args.y)
    learner = get_learner(args.algorithm)
    model = learner(y, args.k, seed=_seed(args), max_iter=args.max_iter, sparsity=args.sparsity,
                    epsilon=args.epsilon, workers=resolve_workers(args.workers),
                    overrides=_train_overrides(args))
    out_dir = _out_dir(args)
    paths = export_model(model, out_dir, suffix=_suffix(args))
    entries: dict[str, object] = {
        "command": "train", "algorithm": args.algorithm, "y": args.y, "k": args.k, "seed": _seed(args),
        "max_iter": learner.default_max_iter if args.max_iter is None else args.max_iter,
        "sparsity": args.sparsity, "epsilon": _fmt(args.epsilon), "format": args.format,
        "converged": model.report.converged, "iterations": model.report.iterations,
        "dead_atoms": ",".join(str(atom) for atom in sorted(model.dead_atoms)),
    }
    entries.update({f"solver.{key}": value for key, value in model.parameters.items()})
    report = model.report
    if report.primal_residual_history:
        print(f"Final residuals: primal {report.primal_residual_history[-1]:.3e}, "
              f"dual {report.dual_residual_history[-1]:.3e}")
    elif report.objective_history:
        print(f"Final objective: {report.objective_history[-1]:.6e}")
    print(f"Relative fitting error: {model.relative_error(y):.6e}")
    if args.d0 is not None:
        error = recovery_error(model.dictionary, read_matrix(args.d0))
        entries.update(d0=args.d0, recovery_error=_fmt(error))
        print(f"Recovery error: {error:.6f}")
    write_manifest(out_dir / MANIFEST, entries)
    print(f"Dictionary written to {paths['dictionary']}")
    return 0


def cmd_bench(args: argparse.Namespace) -> int:
    """Run a preset or file-defined recovery experiment and write its CSV tables."""
    if args.spec is not None:
        spec = read_experiment_spec(args.spec)
    elif args.preset is not None:
        spec = get_preset(args.preset)
    else:
        raise ValueError("bench requires --preset or --spec")
    changes: dict[str, object] = {}
    if args.trials is not None:
        changes["trials"] = args.trials
    if args.seed is not None:
        changes["seed"] = args.seed
    spec = replace(spec, **changes)  # type: ignore[arg-type]
    out_dir = _out_dir(args)
    result = run_experiment(spec, workers=args.workers)
    export_experiment_result(result, out_dir, include_timing=not args.no_timing)
    entries: dict[str, object] = {"command": "bench", "timing": not args.no_timing}
    entries.update(spec.as_dict())
    entries["failed_trials"] = len(result.failed_trials)
    write_manifest(out_dir / MANIFEST, entries)
    for (name, n), mean in result.mean_errors().items():
        print(f"{name:<20} N={n:<6} mean error {mean:.4e}")
    return 0


def _training_images(args: argparse.Namespace) -> list[GrayImage]:
    if args.high:
        return [pgm_read(path) for path in args.high]
    if args.synthetic:
        kinds = [ImageKind(kind.strip()) for kind in args.synthetic.split(",") if kind.strip()]
        return [synthetic_image(kind, args.size, seed=_seed(args) + idx) for idx, kind in enumerate(kinds)]
    raise ValueError("sr-train requires --high images or --synthetic kinds")


def cmd_sr_train(args: argparse.Namespace) -> int:
    """Train coupled low/high-resolution dictionaries on image pairs."""
    highs = _training_images(args)
    if args.low:
        if len(args.low) != len(highs):
            raise ValueError(f"Got {len(args.low)} low-resolution and {len(highs)} high-resolution images.")
        lows = [pgm_read(path) for path in args.low]
    else:
        pairs = [downscale_pair(high, args.scale) for high in highs]
        lows = [low for low, _ in pairs]
        highs = [high for _, high in pairs]
    learner = get_learner(SR_LEARNERS.get(args.learner, args.learner))
    mode = SrMode(args.mode)
    settings: dict[str, object] = {"seed": _seed(args), "max_iter": args.max_iter, "sparsity": args.sparsity}
    if mode is SrMode.YANG:
        if args.patch_size is not None:
            settings["patch_size"] = args.patch_size
        if args.overlap is not None:
            settings["overlap"] = args.overlap
        model = train_yang(lows, highs, args.k, learner, **settings)  # type: ignore[arg-type]
    else:
        model = train_zeyde(lows, highs, args.k, learner, use_features=args.features,
                            patch_size=args.patch_size, overlap=args.overlap, pca_dim=args.pca_dim,
                            **settings)  # type: ignore[arg-type]
    out_dir = _out_dir(args)
    save_sr_model(model, out_dir, extra={
        "command": "sr-train", "seed": _seed(args),
        "max_iter": learner.default_max_iter if args.max_iter is None else args.max_iter,
        "sparsity": args.sparsity, "images": len(highs),
        "inputs": ",".join(str(path) for path in args.high) if args.high else f"synthetic:{args.synthetic}",
    })
    print(f"Super-resolution model ({mode.value}, {model.k_atoms} atoms) written to {out_dir}")
    return 0


def cmd_sr_apply(args: argparse.Namespace) -> int:
    """Super-resolve a PGM image and write it next to the bicubic baseline."""
    _require(args, "model", "input")
    model = load_sr_model(args.model)
    low = pgm_read(args.input)
    high = apply_sr(model, low, SrCoder(args.coder), sparsity=args.sparsity,
                    lasso_fraction=args.lasso_fraction, workers=resolve_workers(args.workers))
    baseline = bicubic_resize(low, size=(high.height, high.width)).clamped()
    out_dir = _out_dir(args)
    pgm_write(high, out_dir / "sr.pgm")
    pgm_write(baseline, out_dir / "bicubic.pgm")
    entries: dict[str, object] = {
        "command": "sr-apply", "model": args.model, "input": args.input, "coder": args.coder,
        "sparsity": args.sparsity, "lasso_fraction": _fmt(args.lasso_fraction), "scale": model.scale,
        "seed": _seed(args),
    }
    if args.reference is not None:
        reference = pgm_read(args.reference)
        # compare against the output as written, after 8-bit quantization
        entries.update(reference=args.reference,
                       psnr_sr=_fmt(psnr(pgm_read(out_dir / "sr.pgm"), reference)),
                       psnr_bicubic=_fmt(psnr(pgm_read(out_dir / "bicubic.pgm"), reference)))
        print(f"PSNR super-resolved: {entries['psnr_sr']} dB, bicubic: {entries['psnr_bicubic']} dB")
    write_manifest(out_dir / MANIFEST, entries)
    print(f"Super-resolved image written to {out_dir / 'sr.pgm'}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    """Print the PSNR between two PGM images."""
    value = psnr(pgm_read(args.first), pgm_read(args.second))
    text = "inf" if math.isinf(value) else f"{value:.4f}"
    print(text)
    if args.out is not None:
        write_manifest(_out_dir(args) / MANIFEST, {"command": "eval", "first": args.first,
                                                   "second": args.second, "psnr": text})
    return 0


def _common_options() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=_non_negative, default=None, help="Seed of every random draw (default 0)")
    common.add_argument("--out", type=Path, default=None, help="Output directory")
    common.add_argument("--config", type=Path, default=None,
                        help="Key-value file of default option values; flags override it")
    common.add_argument("--workers", type=_non_negative, default=None,
                        help="Worker threads; 0 or unset reads ROAD_THREADS")
    common.add_argument("--verbose", action="store_true", help="Log per-iteration details")
    return common


def _add_synth(add: AddParser, common: argparse.ArgumentParser) -> None:
    parser = add("synth", parents=[common], help="Generate synthetic ground truth")
    parser.add_argument("--m", type=int, help="Signal dimension M")
    parser.add_argument("--k", type=int, help="Number of atoms K")
    parser.add_argument("--n", type=int, help="Number of samples N")
    sparsity = parser.add_mutually_exclusive_group()
    sparsity.add_argument("--s", type=int, help="Non-zeros per coefficient column (default 3)")
    sparsity.add_argument("--theta", type=float, help="Bernoulli probability of each non-zero")
    parser.add_argument("--snr-db", type=float, help="Add Gaussian noise at this SNR")
    parser.add_argument("--format", choices=("roadmat", "csv"), default="roadmat", help="Matrix file format")
    parser.set_defaults(handler=cmd_synth)


def _add_train(add: AddParser, common: argparse.ArgumentParser) -> None:
    parser = add("train", parents=[common], help="Learn a dictionary from a data matrix")
    parser.add_argument("--y", type=Path, help="Data matrix file (.roadmat or .csv)")
    parser.add_argument("--algorithm", choices=sorted(LEARNERS), default="road-exact", help="Learner")
    parser.add_argument("--k", type=int, help="Number of atoms K")
    parser.add_argument("--max-iter", type=int, help="Iteration cap (default per learner)")
    parser.add_argument("--sparsity", type=int, default=3, help="OMP budget of the two-stage learners")
    parser.add_argument("--epsilon", type=float, default=0.0, help="Noise radius of road-exact-noisy")
    for name in ROAD_OVERRIDES:
        parser.add_argument(f"--{name}", type=float, help=f"ADMM penalty {name}")
    parser.add_argument("--tol", type=float, help="Stopping tolerance")
    parser.add_argument("--lasso-lambda", type=float, help="Lasso weight of the lasso learners")
    parser.add_argument("--force", action="store_true", help="Warn instead of failing on unsafe penalties")
    parser.add_argument("--d0", type=Path, help="Ground-truth dictionary; prints the recovery error")
    parser.add_argument("--format", choices=("roadmat", "csv"), default="roadmat", help="Matrix file format")
    parser.set_defaults(handler=cmd_train)


def _add_bench(add: AddParser, common: argparse.ArgumentParser) -> None:
    parser = add("bench", parents=[common], help="Run a dictionary recovery experiment")
    parser.add_argument("--preset", help="Preset experiment name")
    parser.add_argument("--spec", type=Path, help="Experiment spec file")
    parser.add_argument("--trials", type=int, help="Trials per (learner, N) cell")
    parser.add_argument("--no-timing", action="store_true", help="Leave the seconds column blank")
    parser.set_defaults(handler=cmd_bench)


def _add_sr(add: AddParser, common: argparse.ArgumentParser) -> None:
    train = add("sr-train", parents=[common], help="Train a super-resolution model")
    train.add_argument("--mode", choices=[mode.value for mode in SrMode], default="zeyde", help="Training pipeline")
    train.add_argument("--learner", default="road",
                       help=f"{', '.join(SR_LEARNERS)} or any learner name (default road)")
    train.add_argument("--high", type=Path, nargs="+", help="High-resolution training images (PGM)")
    train.add_argument("--low", type=Path, nargs="+", help="Matching low-resolution images (PGM)")
    train.add_argument("--synthetic", help="Comma-separated synthetic image kinds used instead of --high")
    train.add_argument("--size", type=int, default=48, help="Side of the synthetic training images")
    train.add_argument("--scale", type=int, default=2, help="Downscaling factor when --low is not given")
    train.add_argument("--k", type=int, default=64, help="Number of atoms K")
    train.add_argument("--features", action="store_true", help="Edge features with PCA (zeyde mode)")
    train.add_argument("--patch-size", type=int, help="Patch side")
    train.add_argument("--overlap", type=int, help="Patch overlap")
    train.add_argument("--pca-dim", type=int, help="Retained PCA dimension")
    train.add_argument("--max-iter", type=int, help="Iteration cap (default per learner)")
    train.add_argument("--sparsity", type=int, default=3, help="OMP budget of the two-stage learners")
    train.set_defaults(handler=cmd_sr_train)

    apply = add("sr-apply", parents=[common], help="Super-resolve an image")
    apply.add_argument("--model", type=Path, help="Model directory written by sr-train")
    apply.add_argument("--input", type=Path, help="Low-resolution image (PGM)")
    apply.add_argument("--reference", type=Path, help="Ground-truth image; records PSNR")
    apply.add_argument("--coder", choices=[coder.value for coder in SrCoder], default="lasso", help="Sparse coder")
    apply.add_argument("--sparsity", type=int, default=3, help="OMP budget")
    apply.add_argument("--lasso-fraction", type=float, default=0.1, help="Relative lasso weight")
    apply.set_defaults(handler=cmd_sr_apply)

    evaluate = add("eval", parents=[common], help="PSNR between two images")
    evaluate.add_argument("first", type=Path, help="First image (PGM)")
    evaluate.add_argument("second", type=Path, help="Second image (PGM)")
    evaluate.set_defaults(handler=cmd_eval)


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    """Return the top-level parser and its subcommand parsers keyed by name."""
    parser = argparse.ArgumentParser(
        prog="road",
        description="Dictionary learning by rank-one atomic decomposition, with baselines and benchmarks."
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    common = _common_options()
    _add_synth(subparsers.add_parser, common)
    _add_train(subparsers.add_parser, common)
    _add_bench(subparsers.add_parser, common)
    _add_sr(subparsers.add_parser, common)
    return parser, dict(subparsers.choices)


def _apply_config(subparser: argparse.ArgumentParser, args: argparse.Namespace) -> None:
    """Install the ``--config`` file values as defaults of the chosen subcommand."""
    defaults: dict[str, object] = {}
    for key, value in read_key_value_file(args.config).items():
        if key in ("config", "command", "handler") or not hasattr(args, key):
            log.warning("Ignoring unknown setting %r in %s", key, args.config)
        elif key in FLAG_KEYS:
            defaults[key] = value.lower() in ("1", "true", "yes", "on")
        elif key in LIST_KEYS:
            defaults[key] = [Path(item.strip()) for item in value.split(",") if item.strip()]
        else:
            # string defaults go through the option's type conversion
            defaults[key] = value
    subparser.set_defaults(**defaults)


def run(argv: list[str] | None = None, setup_logging: bool = False) -> int:
    """
    Parse ``argv`` and run the chosen subcommand.

    Returns
    -------
    int
        0 on success, 1 when the command failed; the error is printed to stderr.
    """
    parser, subparsers = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.config is not None:
            _apply_config(subparsers[args.command], args)
            args = parser.parse_args(argv)
        if setup_logging:
            configure_logging(args.verbose)
        return args.handler(args)
    except (RoadError, OSError, ValueError) as exc:
        print(f"Error: {exc}", file=sys.stderr)
        return 1


def main(argv: list[str] | None = None) -> None:
    """Entry point of the ``road`` executable."""
    sys.exit(run(argv, setup_logging=True))


if __name__ == "__main__":
    main()
