"""Iterative non-autoregressive sampling.

Chains start from uniform-random token grids and repeatedly redraw a random
subset of positions from the model's (temperature-scaled) logits. The
temperature anneals linearly across the schedule; a batch item whose grid
survives a step unchanged after min_steps is frozen and skips all further
model evaluations. Inpainting runs the same chain with updates restricted to
the latent mask.

Each batch item owns an RNG stream derived from (seed, item index), so its
chain is independent of batch composition and chunking.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import codec, kernels
from .errors import ConfigError, ShapeError


@dataclass
class SampleSchedule:
    max_steps: int = 100
    min_steps: int = 10
    temp_start: float = 1.0
    temp_end: float = 0.6
    proportion: float = 0.8
    seed: int = 0
    freeze_enabled: bool = True

    def __post_init__(self):
        if self.max_steps < 1:
            raise ConfigError(f"max steps must be >= 1, got {self.max_steps}")
        if not 0 <= self.min_steps <= self.max_steps:
            raise ConfigError(
                f"min steps must lie in [0, max steps], got {self.min_steps}"
            )
        if not self.temp_start >= self.temp_end > 0:
            raise ConfigError(
                f"need temp_start >= temp_end > 0, got "
                f"{self.temp_start} -> {self.temp_end}"
            )
        if not 0 < self.proportion <= 1:
            raise ConfigError(f"proportion must be in (0, 1], got {self.proportion}")

    def temperature(self, step):
        """Linear anneal; step is 1-based, temp_start at 1, temp_end at max."""
        if self.max_steps == 1:
            return self.temp_start
        frac = (step - 1) / (self.max_steps - 1)
        return self.temp_start + (self.temp_end - self.temp_start) * frac


@dataclass
class SampleTrace:
    tokens: np.ndarray  # (steps_run + 1, B, N) incl. the step-0 prior grid
    grid_shape: tuple
    stop_steps: np.ndarray  # (B,) freeze step, or steps_run if never frozen
    frozen: np.ndarray  # (B,) bool, True if item froze before max_steps
    subsets: list | None = None  # per step: list of per-item position arrays

    @property
    def steps_run(self):
        return self.tokens.shape[0] - 1

    def grids(self, step):
        """Token grids (B, h, w) recorded after the given step (0 = prior)."""
        if not 0 <= step <= self.steps_run:
            raise ConfigError(
                f"step {step} out of recorded range [0, {self.steps_run}]"
            )
        b = self.tokens.shape[1]
        return self.tokens[step].reshape((b,) + self.grid_shape)

    @property
    def final(self):
        return self.grids(self.steps_run)


def _item_rngs(seed, batch, offset):
    return [
        np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(offset + i,)))
        for i in range(batch)
    ]


def _run_chain(model, schedule, z0, updatable, rngs, class_labels,
               record_subsets=False):
    """Shared chain loop for sampling and inpainting.

    z0:        (B, N) initial tokens
    updatable: (B, N) bool, positions the chain may rewrite
    """
    cfg = model.config
    b, n = z0.shape
    labels = None
    if class_labels is not None:
        labels = np.broadcast_to(np.asarray(class_labels, dtype=np.int64), (b,))

    upd_positions = [np.flatnonzero(updatable[i]) for i in range(b)]
    subset_sizes = np.array(
        [math.ceil(schedule.proportion * len(p)) for p in upd_positions]
    )
    frozen = np.array([len(p) == 0 for p in upd_positions])
    stop_steps = np.zeros(b, dtype=np.int64)

    z_prev = z0.astype(np.int64)
    trace = [z_prev.astype(np.uint16)]
    all_subsets = [] if record_subsets else None
    steps_run = 0

    for step in range(1, schedule.max_steps + 1):
        active = np.flatnonzero(~frozen)
        if active.size == 0:
            break
        tau = schedule.temperature(step)
        logits = model.forward(
            z_prev[active], labels[active] if labels is not None else None
        )

        subsets, uniforms = [], []
        for i in active:
            perm = rngs[i].permutation(upd_positions[i])
            subsets.append(perm[: subset_sizes[i]])
            uniforms.append(rngs[i].random(subset_sizes[i]))
        rows = np.repeat(np.arange(active.size), [len(s) for s in subsets])
        cols = np.concatenate(subsets)
        flat_logits = logits[rows, cols]
        probs = kernels.softmax(flat_logits, temperature=tau)
        draws = kernels.categorical_sample(probs, np.concatenate(uniforms))

        z_new = z_prev.copy()
        z_new[np.repeat(active, [len(s) for s in subsets]), cols] = draws
        if record_subsets:
            all_subsets.append(
                {int(i): s.copy() for i, s in zip(active, subsets)}
            )

        if schedule.freeze_enabled and step - 1 >= schedule.min_steps:
            for i in active:
                if np.array_equal(z_new[i], z_prev[i]):
                    frozen[i] = True
                    stop_steps[i] = step
        trace.append(z_new.astype(np.uint16))
        z_prev = z_new
        steps_run = step

    stop_steps[~frozen] = steps_run
    return SampleTrace(
        tokens=np.stack(trace),
        grid_shape=cfg.grid_shape,
        stop_steps=stop_steps,
        frozen=frozen,
        subsets=all_subsets,
    )


def sample(model, schedule, batch, class_labels=None, item_offset=0,
           record_subsets=False):
    """Unconditional (or class-conditioned) chains from the uniform prior.

    item_offset shifts the per-item RNG streams so large runs can be chunked
    into several calls while producing exactly the same per-item chains.
    """
    cfg = model.config
    rngs = _item_rngs(schedule.seed, batch, item_offset)
    z0 = np.stack([r.integers(0, cfg.vocab, cfg.seq_len) for r in rngs])
    updatable = np.ones((batch, cfg.seq_len), dtype=bool)
    return _run_chain(model, schedule, z0, updatable, rngs, class_labels,
                      record_subsets)


def inpaint(model, image, pixel_mask, codebook, schedule, class_label=None,
            return_trace=False):
    """Regenerates the masked region of an image through the token chain.

    The pixel mask downsamples to the latent mask by logical AND over each
    patch; unmasked token positions keep the encoded input at every step, so
    outside-the-mask content is preserved exactly at latent-cell granularity.
    """
    image = np.asarray(image)
    pixel_mask = np.asarray(pixel_mask)
    if image.shape != pixel_mask.shape:
        raise ShapeError(
            f"mask shape {pixel_mask.shape} != image shape {image.shape}"
        )
    z_enc = codec.encode_grid(image, codebook)
    if z_enc.shape != model.config.grid_shape:
        raise ShapeError(
            f"encoded grid {z_enc.shape} != model grid {model.config.grid_shape}"
        )
    m_vq = codec.mask_downsample(pixel_mask, codebook.patch_size)
    flat_mask = m_vq.reshape(-1).astype(bool)

    rngs = _item_rngs(schedule.seed, 1, 0)
    prior = rngs[0].integers(0, model.config.vocab, model.config.seq_len)
    z0 = np.where(flat_mask, prior, z_enc.reshape(-1))[None, :]
    labels = None if class_label is None else [class_label]
    trace = _run_chain(model, schedule, z0, flat_mask[None, :], rngs, labels)
    out = codec.decode_grid(trace.final[0], codebook)
    return (out, trace, z_enc) if return_trace else out


def decode_intermediate(trace, step, codebook):
    """Decodes the grids recorded after `step` (any chain state is decodable)."""
    grids = trace.grids(step)
    return np.stack([codec.decode_grid(g, codebook) for g in grids])
