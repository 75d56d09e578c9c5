"""Synthetic desk-scale corpora: Markov token textures and stroke images.

Stand-ins for MNIST-style data in tests, the acceptance suite, and the
README demo. Textures have strong local structure (each cell usually copies
a neighbor) and a skewed token prior, so a competent denoiser beats the
marginal-entropy floor by a wide margin.
"""

import numpy as np

from .codec import LatentDataset


def skewed_prior(vocab, decay=0.45):
    w = decay ** np.arange(vocab)
    return w / w.sum()


def markov_grids(rng, count, grid_shape, vocab, p_copy=0.9, prior=None):
    """Token grids where each cell copies its left/up neighbor with
    probability p_copy, else redraws from the prior. Returns (count, h, w)."""
    h, w = grid_shape
    prior = skewed_prior(vocab) if prior is None else np.asarray(prior)
    grids = np.zeros((count, h, w), dtype=np.int64)
    for i in range(h):
        for j in range(w):
            fresh = rng.choice(vocab, size=count, p=prior)
            if i == 0 and j == 0:
                grids[:, i, j] = fresh
                continue
            if i == 0:
                src = grids[:, i, j - 1]
            elif j == 0:
                src = grids[:, i - 1, j]
            else:
                take_up = rng.random(count) < 0.5
                src = np.where(take_up, grids[:, i - 1, j], grids[:, i, j - 1])
            copy = rng.random(count) < p_copy
            grids[:, i, j] = np.where(copy, src, fresh)
    return grids


def markov_dataset(seed, count, grid_shape, vocab, p_copy=0.9, prior=None):
    rng = np.random.default_rng(seed)
    grids = markov_grids(rng, count, grid_shape, vocab, p_copy, prior)
    return LatentDataset(
        vocab=vocab,
        grid_shape=tuple(grid_shape),
        entries=grids.astype(np.uint16),
        labels=None,
    )


def class_dataset(seed, count_per_class, grid_shape, vocab, class_count,
                  p_copy=0.9):
    """Labelled textures whose token prior depends on the class, so pooled
    per-class marginals are far apart."""
    rng = np.random.default_rng(seed)
    entries, labels = [], []
    for c in range(class_count):
        prior = np.roll(skewed_prior(vocab), c)
        entries.append(
            markov_grids(rng, count_per_class, grid_shape, vocab, p_copy, prior)
        )
        labels += [c] * count_per_class
    return LatentDataset(
        vocab=vocab,
        grid_shape=tuple(grid_shape),
        entries=np.concatenate(entries).astype(np.uint16),
        labels=np.asarray(labels, dtype=np.uint16),
    )


def stroke_images(rng, count, image_shape, strokes=3, steps=20):
    """Dark canvases with bright random-walk strokes, values in [0, 1]."""
    h, w = image_shape
    images = np.zeros((count, h, w), dtype=np.float32)
    for img in images:
        for _ in range(strokes):
            i, j = int(rng.integers(h)), int(rng.integers(w))
            level = 0.5 + 0.5 * rng.random()
            for _ in range(steps):
                img[i, j] = level
                di, dj = rng.integers(-1, 2), rng.integers(-1, 2)
                i = int(np.clip(i + di, 0, h - 1))
                j = int(np.clip(j + dj, 0, w - 1))
    return images


def _main(argv=None):
    """Writes a small stroke-image corpus as PGMs (README demo helper)."""
    import argparse
    import pathlib

    from . import formats

    ap = argparse.ArgumentParser(description=_main.__doc__)
    ap.add_argument("outdir")
    ap.add_argument("--count", type=int, default=64)
    ap.add_argument("--size", type=int, default=16)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    out = pathlib.Path(args.outdir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(args.seed)
    images = stroke_images(rng, args.count, (args.size, args.size))
    for i, img in enumerate(images):
        formats.write_pgm(out / f"img_{i:04d}.pgm", img)
    print(f"wrote {args.count} {args.size}x{args.size} PGMs to {out}")


if __name__ == "__main__":
    _main()
