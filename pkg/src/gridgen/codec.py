"""Grid codec: converts grayscale images to/from discrete token grids via a
k-means patch codebook, builds latent datasets, and downsamples inpainting
masks to latent resolution.

Images are float arrays of shape (H, W) with values in [0, 1]; token grids
are integer arrays of shape (h, w) = (H/f, W/f) with values in [0, vocab).
"""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ConfigError, FitError, ShapeError, VocabError


@dataclass
class Codebook:
    """v codewords, each a flattened f x f patch (row-major)."""

    vocab: int
    patch_size: int
    channels: int
    codewords: np.ndarray  # (vocab, patch_size**2 * channels) float32

    @property
    def patch_dim(self):
        return self.patch_size * self.patch_size * self.channels


@dataclass
class LatentDataset:
    """Ordered token-grid collection with shared vocab and grid shape."""

    vocab: int
    grid_shape: tuple
    entries: np.ndarray  # (count, h, w) uint16
    labels: np.ndarray | None = None  # (count,) uint16

    def __len__(self):
        return self.entries.shape[0]


def _check_divisible(h, w, f):
    if h % f or w % f:
        raise ShapeError(f"image dims {h}x{w} not divisible by patch size {f}")


def extract_patches(image, patch_size):
    """All non-overlapping f x f patches of an (H, W) image, row-major,
    flattened row-major within each patch: (h*w, f*f)."""
    img = np.asarray(image, dtype=np.float32)
    h, w = img.shape
    _check_divisible(h, w, patch_size)
    f = patch_size
    blocks = img.reshape(h // f, f, w // f, f).transpose(0, 2, 1, 3)
    return np.ascontiguousarray(blocks.reshape(-1, f * f))


def paste_patches(patches, grid_shape, patch_size):
    """Inverse of extract_patches: (h*w, f*f) -> (h*f, w*f) image."""
    h, w = grid_shape
    f = patch_size
    blocks = np.asarray(patches).reshape(h, w, f, f).transpose(0, 2, 1, 3)
    return np.ascontiguousarray(blocks.reshape(h * f, w * f))


def kmeans_plusplus_init(points, k, rng):
    """Standard k-means++ seeding; deterministic given the generator state."""
    n = points.shape[0]
    centroids = np.empty((k, points.shape[1]), dtype=points.dtype)
    centroids[0] = points[rng.integers(n)]
    d2 = ((points - centroids[0]) ** 2).sum(axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total <= 0:
            # all remaining mass on existing centroids; fall back to uniform
            idx = rng.integers(n)
        else:
            idx = int(np.searchsorted(np.cumsum(d2), rng.random() * total))
            idx = min(idx, n - 1)
        centroids[i] = points[idx]
        d2 = np.minimum(d2, ((points - centroids[i]) ** 2).sum(axis=1))
    return centroids


def lloyd(points, centroids, max_iter=50, tol=1e-6):
    """Lloyd iterations from given centroids.

    Returns (centroids, labels, inertia_history) where inertia is the mean
    squared point-to-centroid distance after each assignment. Empty clusters
    are reseeded to the point currently farthest from its centroid.
    """
    points = np.ascontiguousarray(points, dtype=np.float32)
    centroids = np.array(centroids, dtype=np.float32, copy=True)
    k = centroids.shape[0]
    history = []
    labels = None
    for _ in range(max_iter):
        labels, sqd = kernels.kmeans_assign(points, centroids)
        history.append(float(sqd.mean()))
        # reseed empty clusters one at a time: a steal can empty the donor
        for attempt in range(k + 1):
            counts = np.bincount(labels, minlength=k)
            empty = np.flatnonzero(counts == 0)
            if empty.size == 0:
                break
            if attempt == k or sqd.max() <= 0:
                raise FitError(f"cannot populate {k} clusters from these points")
            far = int(np.argmax(sqd))
            centroids[empty[0]] = points[far]
            labels[far] = empty[0]
            sqd[far] = 0.0
        sums = np.zeros_like(centroids, dtype=np.float64)
        np.add.at(sums, labels, points)
        centroids = (sums / counts[:, None]).astype(np.float32)
        if len(history) > 1:
            prev, cur = history[-2], history[-1]
            if prev - cur <= tol * max(prev, 1e-12):
                break
    labels, sqd = kernels.kmeans_assign(points, centroids)
    history.append(float(sqd.mean()))
    return centroids, labels, history


def fit_codebook(images, vocab, patch_size, seed, max_iter=50, tol=1e-6):
    """k-means codebook over all f x f patches of the corpus."""
    if vocab < 1:
        raise FitError(f"vocab must be >= 1, got {vocab}")
    patch_list = [extract_patches(img, patch_size) for img in images]
    if not patch_list:
        raise FitError("empty image corpus")
    patches = np.concatenate(patch_list, axis=0)
    distinct = np.unique(patches, axis=0).shape[0]
    if distinct < vocab:
        raise FitError(
            f"corpus has {distinct} distinct patches, fewer than vocab {vocab}"
        )
    rng = np.random.default_rng(seed)
    init = kmeans_plusplus_init(patches, vocab, rng)
    centroids, _, _ = lloyd(patches, init, max_iter=max_iter, tol=tol)
    return Codebook(
        vocab=vocab, patch_size=patch_size, channels=1, codewords=centroids
    )


def grayscale_codebook(levels):
    """Direct-pixel codebook: patch_size 1, codeword i -> gray level i/(q-1).

    Encoding with it quantizes each pixel to the nearest of q uniform levels,
    so the whole token pipeline runs on raw pixels (q=256 keeps 8-bit values
    intact).
    """
    if levels < 2:
        raise ConfigError(f"direct-pixel quantization needs >= 2 levels, got {levels}")
    cw = (np.arange(levels, dtype=np.float32) / np.float32(levels - 1)).reshape(-1, 1)
    return Codebook(vocab=levels, patch_size=1, channels=1, codewords=cw)


def encode_grid(image, codebook):
    """Nearest-codeword token per patch; ties break to the lowest index."""
    patches = extract_patches(image, codebook.patch_size)
    if patches.shape[1] != codebook.patch_dim:
        raise ShapeError(
            f"patch dim {patches.shape[1]} != codebook dim {codebook.patch_dim}"
        )
    labels, _ = kernels.kmeans_assign(patches, codebook.codewords)
    h = image.shape[0] // codebook.patch_size
    w = image.shape[1] // codebook.patch_size
    return labels.reshape(h, w).astype(np.int32)


def decode_grid(tokens, codebook):
    """Pastes each token's codeword patch back into an image."""
    tok = np.asarray(tokens)
    if tok.size and (tok.min() < 0 or tok.max() >= codebook.vocab):
        raise VocabError(
            f"token out of range [0, {codebook.vocab}): {int(tok.min())}..{int(tok.max())}"
        )
    patches = codebook.codewords[tok.reshape(-1)]
    return paste_patches(patches, tok.shape, codebook.patch_size)


def hflip(image):
    return np.ascontiguousarray(np.asarray(image)[:, ::-1])


def build_latent_dataset(images, codebook, hflip_augment=False, labels=None):
    """Encodes a homogeneous corpus; with hflip each image is followed by the
    encoding of its mirror (original_0, flipped_0, original_1, ...)."""
    images = list(images)
    if not images:
        raise FitError("empty image corpus")
    shape = np.asarray(images[0]).shape
    entries, out_labels = [], []
    for idx, img in enumerate(images):
        img = np.asarray(img)
        if img.shape != shape:
            raise ShapeError(f"image {idx} shape {img.shape} != corpus shape {shape}")
        entries.append(encode_grid(img, codebook))
        if hflip_augment:
            entries.append(encode_grid(hflip(img), codebook))
        if labels is not None:
            out_labels.extend([labels[idx]] * (2 if hflip_augment else 1))
    stacked = np.stack(entries).astype(np.uint16)
    return LatentDataset(
        vocab=codebook.vocab,
        grid_shape=stacked.shape[1:],
        entries=stacked,
        labels=np.asarray(out_labels, dtype=np.uint16) if labels is not None else None,
    )


def mask_downsample(mask, patch_size):
    """Pixel mask -> latent mask: cell is 1 iff every pixel in the patch is 1."""
    m = np.asarray(mask)
    h, w = m.shape
    _check_divisible(h, w, patch_size)
    f = patch_size
    blocks = m.reshape(h // f, f, w // f, f)
    return blocks.min(axis=(1, 3)).astype(np.uint8)
