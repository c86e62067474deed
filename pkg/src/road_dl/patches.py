"""Overlapping image patches, edge-feature filters and PCA reduction of patch features."""
from dataclasses import dataclass, field
import logging

import numpy as np
import scipy.ndimage

from road_dl.errors import DimensionMismatchError
from road_dl.image import GrayImage
from road_dl.linalg import Mat, as_mat, svd_thin

log = logging.getLogger(__name__)

# First- and second-order difference kernels; the vertical filters are their transposes.
GRADIENT_KERNEL = np.array([1.0, 0.0, 0.0, -1.0])
LAPLACIAN_KERNEL = np.array([1.0, 0.0, 0.0, -2.0, 0.0, 0.0, 1.0]) / 2.0
FILTERS_VERSION = "grad4-lap7"
# Share of the feature variance kept by the default PCA dimension.
PCA_VARIANCE = 0.999


def patch_offsets(length: int, p: int, v: int) -> list[int]:
    """Start positions along one axis: stride ``p - v``, the last patch shifted to touch the border."""
    starts = list(range(0, length - p + 1, p - v))
    if starts[-1] + p < length:
        starts.append(length - p)
    return starts


@dataclass
class PatchGrid:
    """Patches of one image as columns, with the top-left offset of each."""

    patch_size: int = field(metadata={"description": "Side p of the square patches"})
    overlap: int = field(metadata={"description": "Overlap v between neighbouring patches, v < p"})
    offsets: list[tuple[int, int]] = field(metadata={"description": "(row, col) of each patch"})
    patches: Mat = field(metadata={
        "description": "Column per patch: the column-major vectorized p x p patch, or a multiple of p^2 features"})

    def __post_init__(self) -> None:
        """Validate the geometry."""
        if self.patch_size < 1 or not 0 <= self.overlap < self.patch_size:
            raise ValueError(f"Need p >= 1 and 0 <= v < p, got p={self.patch_size}, v={self.overlap}.")
        rows, count = self.patches.shape
        if count != len(self.offsets) or rows % self.patch_size ** 2:
            raise DimensionMismatchError(
                f"Patch matrix is {self.patches.shape} for {len(self.offsets)} patches of size {self.patch_size}.")

    @property
    def count(self) -> int:
        """Number of patches."""
        return len(self.offsets)

    def with_patches(self, patches: Mat) -> 'PatchGrid':
        """Return the same grid holding different patch contents."""
        return PatchGrid(self.patch_size, self.overlap, list(self.offsets), np.asarray(patches, dtype=np.float64))


def extract_patches(img: GrayImage | Mat, p: int, v: int) -> PatchGrid:
    """
    Cover an image with ``p`` x ``p`` patches overlapping by ``v`` pixels.

    Offsets step by ``p - v`` along each axis, with the final row and column of patches shifted
    inward to touch the border. Patches are ordered column by column and vectorized
    column-major.

    Parameters
    ----------
    img : GrayImage or Mat
        Image, or any 2-D array of per-pixel values such as a filter response.
    p : int
        Patch side, at most the smaller image dimension.
    v : int
        Overlap, ``0 <= v < p``.

    Returns
    -------
    PatchGrid
        The patches and their offsets.
    """
    pixels = img.pixels if isinstance(img, GrayImage) else as_mat(img, name="image")
    height, width = pixels.shape
    if p < 1 or not 0 <= v < p:
        raise ValueError(f"Need p >= 1 and 0 <= v < p, got p={p}, v={v}.")
    if p > min(height, width):
        raise DimensionMismatchError(f"Patch size {p} exceeds the {height}x{width} image.")
    row_starts = patch_offsets(height, p, v)
    col_starts = patch_offsets(width, p, v)
    windows = np.lib.stride_tricks.sliding_window_view(pixels, (p, p))[np.ix_(row_starts, col_starts)]
    # (rows, cols, p, p) -> column-major over offsets and within each patch
    patches = windows.transpose(1, 0, 3, 2).reshape(-1, p * p).T
    offsets = [(row, col) for col in col_starts for row in row_starts]
    return PatchGrid(patch_size=p, overlap=v, offsets=offsets, patches=np.ascontiguousarray(patches))


def assemble_patches(grid: PatchGrid, width: int, height: int) -> GrayImage:
    """
    Rebuild an image from a patch grid, averaging pixels covered by several patches.

    Raises
    ------
    DimensionMismatchError
        If a patch reaches outside the ``height`` x ``width`` canvas.
    """
    p = grid.patch_size
    if grid.patches.shape[0] != p * p:
        raise DimensionMismatchError(
            f"Cannot assemble {grid.patches.shape[0]}-dimensional columns as {p}x{p} patches.")
    total = np.zeros((height, width))
    counts = np.zeros((height, width))
    for (row, col), patch in zip(grid.offsets, grid.patches.T):
        if row < 0 or col < 0 or row + p > height or col + p > width:
            raise DimensionMismatchError(f"Patch at ({row}, {col}) does not fit a {height}x{width} image.")
        total[row:row + p, col:col + p] += patch.reshape(p, p, order="F")
        counts[row:row + p, col:col + p] += 1.0
    covered = counts > 0
    total[covered] /= counts[covered]
    return GrayImage(total)


def feature_filters(img: GrayImage) -> list[Mat]:
    """
    Edge responses of an image: horizontal and vertical first and second differences.

    Each output has the image's size; borders replicate the edge pixels.
    """
    size = max(GRADIENT_KERNEL.size, LAPLACIAN_KERNEL.size)
    if min(img.height, img.width) < size:
        raise DimensionMismatchError(f"Image must be at least {size}x{size} for the edge filters.")
    return [
        scipy.ndimage.correlate1d(img.pixels, GRADIENT_KERNEL, axis=1, mode="nearest"),
        scipy.ndimage.correlate1d(img.pixels, GRADIENT_KERNEL, axis=0, mode="nearest"),
        scipy.ndimage.correlate1d(img.pixels, LAPLACIAN_KERNEL, axis=1, mode="nearest"),
        scipy.ndimage.correlate1d(img.pixels, LAPLACIAN_KERNEL, axis=0, mode="nearest"),
    ]


def feature_patches(img: GrayImage, p: int, v: int) -> PatchGrid:
    """Stack the patches of the four filter responses into ``4 p^2``-dimensional feature columns."""
    grids = [extract_patches(response, p, v) for response in feature_filters(img)]
    return grids[0].with_patches(np.vstack([grid.patches for grid in grids]))


@dataclass
class PcaBasis:
    """Orthonormal basis and mean of a PCA reduction."""

    basis: Mat = field(metadata={"description": "F x d matrix with orthonormal columns"})
    mean: Mat = field(metadata={"description": "F x 1 feature mean"})
    padded: int = field(default=0, metadata={
        "description": "Trailing basis vectors drawn as a random orthonormal complement"})

    @property
    def dim(self) -> int:
        """Retained dimension d."""
        return int(self.basis.shape[1])


def pca_fit(features: Mat, retained_dim: int | None = None,
            variance: float = PCA_VARIANCE, seed: int = 0, center: bool = True) -> PcaBasis:
    """
    Fit a PCA basis to feature columns.

    Parameters
    ----------
    features : Mat
        F x N matrix of feature columns.
    retained_dim : int, optional
        Number of components. When None, the smallest d whose components hold ``variance`` of
        the total variance.
    variance : float
        Retained variance share used when ``retained_dim`` is None.
    seed : int
        Seed of the orthonormal complement used when ``retained_dim`` exceeds the rank.
    center : bool
        Subtract the feature mean before the decomposition. Without centring the mean is
        zero, so all-zero features map to all-zero codes.

    Returns
    -------
    PcaBasis
        Leading left singular vectors of the (centred) features and the mean.
    """
    features = as_mat(features, name="features")
    dim_features = features.shape[0]
    if retained_dim is not None and not 1 <= retained_dim <= dim_features:
        raise ValueError(f"Retained dimension {retained_dim} must be between 1 and {dim_features}.")
    if not 0.0 < variance <= 1.0:
        raise ValueError("Retained variance share must lie in (0, 1].")
    mean = features.mean(axis=1, keepdims=True) if center else np.zeros((dim_features, 1))
    svd = svd_thin(features - mean)
    energy = svd.s ** 2
    tolerance = svd.s[0] * max(features.shape) * np.finfo(float).eps if svd.s.size else 0.0
    rank = int(np.sum(svd.s > tolerance))
    if retained_dim is None:
        if rank == 0:
            retained_dim = 1
        else:
            share = np.cumsum(energy[:rank]) / np.sum(energy[:rank])
            retained_dim = int(np.searchsorted(share, variance * (1 - 1e-12)) + 1)
    kept = min(retained_dim, rank)
    basis = svd.u[:, :kept]
    padded = retained_dim - kept
    if padded:
        log.warning("Features have rank %d; padding the PCA basis with %d random orthonormal vectors",
                    rank, padded)
        rng = np.random.default_rng(seed)
        extra = rng.standard_normal((dim_features, padded))
        extra -= basis @ (basis.T @ extra)
        complement, _ = np.linalg.qr(extra)
        basis = np.hstack([basis, complement])
    return PcaBasis(basis=basis, mean=mean, padded=padded)


def pca_apply(pca: PcaBasis, features: Mat) -> Mat:
    """Project feature columns onto the basis: ``basis^T (features - mean)``."""
    features = as_mat(features, name="features")
    if features.shape[0] != pca.basis.shape[0]:
        raise DimensionMismatchError(
            f"Features have {features.shape[0]} rows but the PCA basis expects {pca.basis.shape[0]}.")
    return pca.basis.T @ (features - pca.mean)


def pca_reconstruct(pca: PcaBasis, codes: Mat) -> Mat:
    """Map reduced codes back to feature space: ``basis codes + mean``."""
    return pca.basis @ codes + pca.mean
