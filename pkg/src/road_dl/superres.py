"""
Patch-based single-image super-resolution with coupled dictionaries.

Two training pipelines are provided. The stacked pipeline learns one dictionary on vertically
stacked low- and high-resolution patch pairs and splits its rows. The separate pipeline learns
the low-resolution dictionary alone and fits the high-resolution dictionary to the shared
coefficients by least squares, optionally on edge features reduced by PCA with the
interpolated image subtracted from the high-resolution targets.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
import logging
from pathlib import Path

import numpy as np
import scipy.linalg

from road_dl.baselines import default_lasso_weight, lasso_code, omp_code
from road_dl.config import get_int, get_str, read_key_value_file, write_manifest
from road_dl.errors import DimensionMismatchError, FormatError
from road_dl.image import GrayImage, bicubic_resize
from road_dl.learners import Learner, get_learner
from road_dl.linalg import ZERO_NORM, Mat
from road_dl.matrix_io import read_matrix, write_matrix
from road_dl.patches import (
    FILTERS_VERSION,
    PcaBasis,
    assemble_patches,
    extract_patches,
    feature_patches,
    pca_apply,
    pca_fit,
)

log = logging.getLogger(__name__)

# Ridge of the high-resolution least-squares fit.
HIGH_RIDGE = 1e-10
# Columns coded per work item when applying a model; fixed so the output does not depend on threads.
CODE_CHUNK = 256


class SrMode(Enum):
    """Training pipeline of a super-resolution model."""

    YANG = "yang"
    ZEYDE = "zeyde"


class SrCoder(Enum):
    """Sparse coder used when applying a model."""

    LASSO = "lasso"
    OMP = "omp"


@dataclass
class SrModel:  # pylint: disable=too-many-instance-attributes
    """Coupled low/high-resolution dictionaries and the patch pipeline they were trained with."""

    mode: SrMode = field(metadata={"description": "yang (stacked) or zeyde (separate) training"})
    d_low: Mat = field(metadata={"description": "Low-resolution dictionary, one atom per column"})
    d_high: Mat = field(metadata={"description": "High-resolution dictionary with the same atom count"})
    patch_size: int = field(metadata={"description": "Patch side p"})
    overlap: int = field(metadata={"description": "Patch overlap v"})
    scale: int = field(metadata={"description": "Upscaling factor"})
    use_features: bool = field(default=False, metadata={
        "description": "Edge features with PCA and residual high-resolution targets (zeyde only)"})
    pca: PcaBasis | None = field(default=None, metadata={"description": "PCA reduction of the edge features"})
    learner: str = field(default="", metadata={"description": "Name of the learner that produced d_low"})

    def __post_init__(self) -> None:
        """Check that the dictionaries and the pipeline agree."""
        self.mode = SrMode(self.mode)
        if self.d_low.shape[1] != self.d_high.shape[1]:
            raise DimensionMismatchError(
                f"d_low has {self.d_low.shape[1]} atoms but d_high has {self.d_high.shape[1]}.")
        if self.d_high.shape[0] != self.patch_size ** 2:
            raise DimensionMismatchError(f"d_high rows must equal p^2 = {self.patch_size ** 2}.")
        if self.use_features and self.mode is not SrMode.ZEYDE:
            raise ValueError("Edge features are only used by the zeyde pipeline.")
        if self.use_features and self.pca is None:
            raise ValueError("A feature model needs its PCA basis.")
        if self.scale < 1:
            raise ValueError("Scale must be at least 1.")

    @property
    def k_atoms(self) -> int:
        """Number of atoms shared by both dictionaries."""
        return int(self.d_low.shape[1])


def _pair_scale(low_imgs: list[GrayImage], high_imgs: list[GrayImage]) -> int:
    if not low_imgs or len(low_imgs) != len(high_imgs):
        raise DimensionMismatchError(
            f"Need matching non-empty image lists, got {len(low_imgs)} low and {len(high_imgs)} high.")
    scales = set()
    for low, high in zip(low_imgs, high_imgs):
        ratio = divmod(high.height, low.height), divmod(high.width, low.width)
        if ratio[0][1] or ratio[1][1] or ratio[0][0] != ratio[1][0]:
            raise DimensionMismatchError(
                f"A {low.height}x{low.width} image does not pair with a {high.height}x{high.width} image.")
        scales.add(high.height // low.height)
    if len(scales) != 1:
        raise DimensionMismatchError(f"Training pairs use different scales {sorted(scales)}.")
    return scales.pop()


def _upsample(low: GrayImage, high_shape: tuple[int, int]) -> GrayImage:
    return bicubic_resize(low, size=high_shape)


def _resolve(learner: Learner | str) -> Learner:
    return get_learner(learner) if isinstance(learner, str) else learner


def train_yang(low_imgs: list[GrayImage], high_imgs: list[GrayImage],  # pylint: disable=too-many-arguments
               k: int, learner: Learner | str, *, patch_size: int = 6, overlap: int = 2,
               seed: int = 0, max_iter: int | None = None, sparsity: int = 3) -> SrModel:
    """
    Train coupled dictionaries on stacked low/high patch pairs.

    Low-resolution images are upsampled to the high-resolution size, both are cut into
    ``patch_size`` patches overlapping by ``overlap``, and each pair becomes one column
    ``[vec(P_L); vec(P_H)]`` of the training matrix. The learned dictionary is split into its
    top rows (``d_low``) and bottom rows (``d_high``).

    Parameters
    ----------
    low_imgs, high_imgs : list[GrayImage]
        Paired training images; every high image is an integer multiple of its low image.
    k : int
        Number of atoms.
    learner : Learner or str
        Dictionary learner or its registry name.
    patch_size, overlap : int
        Patch geometry.
    seed, max_iter, sparsity : int
        Forwarded to the learner.

    Returns
    -------
    SrModel
        Model in ``yang`` mode.
    """
    scale = _pair_scale(low_imgs, high_imgs)
    learner = _resolve(learner)
    columns = []
    for low, high in zip(low_imgs, high_imgs):
        upsampled = _upsample(low, (high.height, high.width))
        columns.append(np.vstack([extract_patches(upsampled, patch_size, overlap).patches,
                                  extract_patches(high, patch_size, overlap).patches]))
    training = np.hstack(columns)
    log.info("Training stacked dictionaries: %dx%d patch pairs, K=%d, learner %s",
             training.shape[0], training.shape[1], k, learner.name)
    model = learner(training, k, seed=seed, max_iter=max_iter, sparsity=sparsity)
    rows = patch_size ** 2
    return SrModel(mode=SrMode.YANG, d_low=model.dictionary[:rows], d_high=model.dictionary[rows:],
                   patch_size=patch_size, overlap=overlap, scale=scale, learner=learner.name)


def fit_high_dictionary(high_patches: Mat, coefficients: Mat) -> Mat:
    """
    Least-squares high-resolution dictionary ``P_H X^T (X X^T + 1e-10 I)^-1``.

    Parameters
    ----------
    high_patches : Mat
        High-resolution targets, one column per training patch.
    coefficients : Mat
        Sparse codes of the same patches, K x N.

    Returns
    -------
    Mat
        Dictionary with one column per atom.
    """
    if high_patches.shape[1] != coefficients.shape[1]:
        raise DimensionMismatchError(
            f"{high_patches.shape[1]} target patches but {coefficients.shape[1]} coefficient columns.")
    gram = coefficients @ coefficients.T
    unused = int(np.sum(np.diag(gram) <= ZERO_NORM))
    if unused:
        log.warning("%d atoms are never used; the ridge keeps their high-resolution atoms at zero", unused)
    gram += HIGH_RIDGE * np.eye(gram.shape[0])
    return scipy.linalg.solve(gram, coefficients @ high_patches.T, assume_a="pos").T


def train_zeyde(  # pylint: disable=too-many-arguments,too-many-locals
        low_imgs: list[GrayImage], high_imgs: list[GrayImage], k: int, learner: Learner | str,
        use_features: bool = False, *,
        patch_size: int | None = None, overlap: int | None = None, pca_dim: int | None = None,
        seed: int = 0, max_iter: int | None = None, sparsity: int = 3) -> SrModel:
    """
    Train a low-resolution dictionary alone and fit the high-resolution one by least squares.

    With ``use_features`` the low-resolution training vectors are the four edge-filter
    responses of each patch reduced by PCA, and the high-resolution targets are the patches of
    the high image minus the interpolated image. Without it both sides are raw patches.

    Parameters
    ----------
    low_imgs, high_imgs : list[GrayImage]
        Paired training images.
    k : int
        Number of atoms.
    learner : Learner or str
        Dictionary learner or its registry name.
    use_features : bool
        Select the edge-feature pipeline.
    patch_size, overlap : int, optional
        Patch geometry; defaults to 9/6 with features and 6/2 without.
    pca_dim : int, optional
        PCA dimension; None keeps 99.9% of the feature energy.
    seed, max_iter, sparsity : int
        Forwarded to the learner.

    Returns
    -------
    SrModel
        Model in ``zeyde`` mode.
    """
    scale = _pair_scale(low_imgs, high_imgs)
    learner = _resolve(learner)
    patch_size = patch_size if patch_size is not None else (9 if use_features else 6)
    overlap = overlap if overlap is not None else (6 if use_features else 2)
    low_parts, high_parts = [], []
    for low, high in zip(low_imgs, high_imgs):
        upsampled = _upsample(low, (high.height, high.width))
        if use_features:
            low_parts.append(feature_patches(upsampled, patch_size, overlap).patches)
            residual = GrayImage(high.pixels - upsampled.pixels)
            high_parts.append(extract_patches(residual, patch_size, overlap).patches)
        else:
            low_parts.append(extract_patches(upsampled, patch_size, overlap).patches)
            high_parts.append(extract_patches(high, patch_size, overlap).patches)
    low_training = np.hstack(low_parts)
    high_training = np.hstack(high_parts)
    pca = None
    if use_features:
        pca = pca_fit(low_training, retained_dim=pca_dim, seed=seed, center=False)
        low_training = pca_apply(pca, low_training)
        log.info("Reduced %d-dimensional edge features to %d by PCA", pca.basis.shape[0], pca.dim)
    log.info("Training low-resolution dictionary: %dx%d, K=%d, learner %s",
             low_training.shape[0], low_training.shape[1], k, learner.name)
    model = learner(low_training, k, seed=seed, max_iter=max_iter, sparsity=sparsity)
    d_high = fit_high_dictionary(high_training, model.coefficients)
    return SrModel(mode=SrMode.ZEYDE, d_low=model.dictionary, d_high=d_high, patch_size=patch_size,
                   overlap=overlap, scale=scale, use_features=use_features, pca=pca, learner=learner.name)


def _code_chunk(d: Mat, y: Mat, coder: SrCoder, sparsity: int, lasso_fraction: float) -> Mat:
    if coder is SrCoder.OMP:
        return omp_code(d, y, min(sparsity, d.shape[0], d.shape[1])).coefficients
    return lasso_code(d, y, default_lasso_weight(d, y, fraction=lasso_fraction))


def code_patches(d: Mat, y: Mat, coder: SrCoder | str = SrCoder.LASSO,  # pylint: disable=too-many-arguments
                 *, sparsity: int = 3, lasso_fraction: float = 0.1, workers: int = 1) -> Mat:
    """
    Sparse-code patch columns against a dictionary whose columns need not be unit norm.

    Atoms are normalized for coding and the coefficients rescaled afterwards; zero atoms get
    zero coefficients. Columns are coded in fixed chunks, so the result does not depend on
    ``workers``.
    """
    coder = SrCoder(coder)
    norms = np.linalg.norm(d, axis=0)
    live = norms > ZERO_NORM
    unit = np.zeros_like(d)
    unit[:, live] = d[:, live] / norms[live]
    live_unit = unit[:, live]
    coefficients = np.zeros((d.shape[1], y.shape[1]))
    if not np.any(live) or not np.any(y):
        return coefficients
    chunks = [y[:, start:start + CODE_CHUNK] for start in range(0, y.shape[1], CODE_CHUNK)]

    def code(chunk: Mat) -> Mat:
        """Code one chunk of columns."""
        return _code_chunk(live_unit, chunk, coder, sparsity, lasso_fraction)

    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(code, chunks))
    else:
        parts = [code(chunk) for chunk in chunks]
    coefficients[live, :] = np.hstack(parts) / norms[live, None]
    return coefficients


def apply_sr(model: SrModel, low_img: GrayImage,  # pylint: disable=too-many-arguments
             coder: SrCoder | str = SrCoder.LASSO, *, sparsity: int = 3, lasso_fraction: float = 0.1,
             workers: int = 1) -> GrayImage:
    """
    Super-resolve one image with a trained model.

    The image is upsampled by ``model.scale``, cut into patches (or edge features) matching the
    training pipeline and coded against ``d_low``; the codes synthesize high-resolution patches
    through ``d_high`` (plus the interpolated patches in the residual pipeline), which are
    assembled with overlap averaging and clamped to [0, 1].

    Parameters
    ----------
    model : SrModel
        Trained model.
    low_img : GrayImage
        Low-resolution input.
    coder : SrCoder or str
        ``lasso`` (weight ``lasso_fraction * max |D_L^T y|`` per patch) or ``omp``.
    sparsity : int
        OMP budget.
    lasso_fraction : float
        Lasso weight relative to the largest correlation of each patch.
    workers : int
        Threads for the coding stage; the output does not depend on it.

    Returns
    -------
    GrayImage
        Image of ``model.scale`` times the input size.
    """
    size = (low_img.height * model.scale, low_img.width * model.scale)
    if min(size) < model.patch_size:
        raise DimensionMismatchError(
            f"Upsampled image {size[0]}x{size[1]} is smaller than the {model.patch_size}-pixel patches.")
    upsampled = _upsample(low_img, size)
    grid = extract_patches(upsampled, model.patch_size, model.overlap)
    if model.mode is SrMode.YANG or not model.use_features:
        low = grid.patches
    else:
        low = pca_apply(model.pca, feature_patches(upsampled, model.patch_size, model.overlap).patches)
    if low.shape[0] != model.d_low.shape[0]:
        raise DimensionMismatchError(
            f"Image pipeline gives {low.shape[0]}-dimensional vectors but d_low has {model.d_low.shape[0]} rows.")
    coefficients = code_patches(model.d_low, low, coder, sparsity=sparsity,
                                lasso_fraction=lasso_fraction, workers=workers)
    high = model.d_high @ coefficients
    if model.use_features:
        high = high + grid.patches
    log.info("Super-resolved %dx%d to %dx%d with %d patches", low_img.height, low_img.width,
             size[0], size[1], grid.count)
    return assemble_patches(grid.with_patches(high), width=size[1], height=size[0]).clamped()


def downscale_pair(high: GrayImage, scale: int) -> tuple[GrayImage, GrayImage]:
    """
    Build a training pair by bicubic downscaling.

    The high-resolution image is cropped to a multiple of ``scale`` and shrunk by it.

    Returns
    -------
    tuple[GrayImage, GrayImage]
        The low-resolution image and the cropped high-resolution image.
    """
    if scale < 2:
        raise ValueError("Scale must be at least 2.")
    height = high.height - high.height % scale
    width = high.width - high.width % scale
    if height < scale or width < scale:
        raise DimensionMismatchError(f"A {high.height}x{high.width} image is too small for scale {scale}.")
    cropped = GrayImage(high.pixels[:height, :width].copy())
    return bicubic_resize(cropped, size=(height // scale, width // scale)), cropped


def save_sr_model(model: SrModel, model_dir: str | Path, extra: dict[str, object] | None = None) -> Path:
    """
    Write a model directory with ROADMAT1 dictionaries, the PCA basis if any, and ``manifest.txt``.

    Entries of ``extra``, such as the training settings, are appended to the manifest.
    """
    model_dir = Path(model_dir)
    model_dir.mkdir(parents=True, exist_ok=True)
    write_matrix(model_dir / "d_low.roadmat", model.d_low)
    write_matrix(model_dir / "d_high.roadmat", model.d_high)
    if model.pca is not None:
        write_matrix(model_dir / "pca_basis.roadmat", model.pca.basis)
        write_matrix(model_dir / "pca_mean.roadmat", model.pca.mean)
    write_manifest(model_dir / "manifest.txt", {
        "mode": model.mode.value,
        "patch_size": model.patch_size,
        "overlap": model.overlap,
        "scale": model.scale,
        "use_features": int(model.use_features),
        "filters_version": FILTERS_VERSION,
        "k_atoms": model.k_atoms,
        "pca_padded": model.pca.padded if model.pca is not None else 0,
        "learner": model.learner,
        **(extra or {}),
    })
    log.info("Saved %s super-resolution model to %s", model.mode.value, model_dir)
    return model_dir


def load_sr_model(model_dir: str | Path) -> SrModel:
    """
    Read a model directory written by :func:`save_sr_model`.

    Raises
    ------
    FormatError
        If the manifest is incomplete or was written with different edge filters.
    """
    model_dir = Path(model_dir)
    values = read_key_value_file(model_dir / "manifest.txt")
    version = get_str(values, "filters_version")
    if version != FILTERS_VERSION:
        raise FormatError(f"{model_dir} uses edge filters {version!r}, expected {FILTERS_VERSION!r}.")
    patch_size = get_int(values, "patch_size")
    overlap = get_int(values, "overlap")
    scale = get_int(values, "scale")
    mode = get_str(values, "mode")
    if patch_size is None or overlap is None or scale is None or mode is None:
        raise FormatError(f"{model_dir}/manifest.txt must give mode, patch_size, overlap and scale.")
    use_features = bool(get_int(values, "use_features", 0))
    pca = None
    if use_features:
        pca = PcaBasis(basis=read_matrix(model_dir / "pca_basis.roadmat"),
                       mean=read_matrix(model_dir / "pca_mean.roadmat"),
                       padded=get_int(values, "pca_padded", 0) or 0)
    try:
        return SrModel(mode=SrMode(mode), d_low=read_matrix(model_dir / "d_low.roadmat"),
                       d_high=read_matrix(model_dir / "d_high.roadmat"), patch_size=patch_size,
                       overlap=overlap, scale=scale, use_features=use_features, pca=pca,
                       learner=get_str(values, "learner", "") or "")
    except ValueError as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"{model_dir} does not hold a valid model: {exc}") from exc
