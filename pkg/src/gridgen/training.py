"""Unrolled denoising training.

A batch of clean grids z is corrupted by replacing a random fraction of
tokens with uniform draws (per-item threshold t_i ~ U[0,1], cell mask
R < t_i). The model then denoises its own samples for T chained steps;
the loss is the mean over steps of the cross entropy between each step's
logits and the clean z. Gradients flow through every forward pass but not
through the categorical sampling between steps.
"""

import dataclasses
from dataclasses import dataclass

import numpy as np

from . import formats, kernels
from .errors import ConfigError
from .model import HourglassModel


@dataclass
class TrainConfig:
    total_steps: int
    unroll_steps: int = 2
    batch_size: int = 8
    learning_rate: float = 3e-4
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    ckpt_every: int = 0

    def __post_init__(self):
        if self.unroll_steps < 1:
            raise ConfigError(f"unroll steps must be >= 1, got {self.unroll_steps}")
        if self.learning_rate < 0:
            raise ConfigError(f"learning rate must be >= 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ConfigError(f"batch size must be >= 1, got {self.batch_size}")

    def to_dict(self):
        return dataclasses.asdict(self)


def corrupt(z, vocab, rng, thresholds=None):
    """Returns (z0, mask, t). Draw order is t, R, prior tokens -- pinned so
    tests can replay the stream. thresholds overrides the t ~ U[0,1] draw
    (the draw is still consumed, keeping the stream aligned)."""
    z = np.asarray(z)
    b = z.shape[0]
    t = rng.random(b)
    if thresholds is not None:
        t = np.broadcast_to(np.asarray(thresholds, dtype=np.float64), (b,)).copy()
    r = rng.random(z.shape)
    mask = (r < t.reshape((b,) + (1,) * (z.ndim - 1))).astype(np.uint8)
    prior = rng.integers(0, vocab, size=z.shape)
    z0 = np.where(mask, prior, z)
    return z0, mask, t


def unrolled_loss(model, z, z0, unroll_steps, rng, class_labels=None,
                  want_grads=True):
    """T-step unrolled denoising loss.

    Returns (loss, step_losses, item_losses, grads):
      loss:        scalar, mean over steps of mean cross entropy vs clean z
      step_losses: (T,) per-step means
      item_losses: (T, B) per-item means (for Monte-Carlo error bars)
      grads:       parameter gradient dict, or None when want_grads=False

    Intermediate samples are drawn at temperature 1 from each step's logits;
    no gradient flows through those draws.
    """
    if unroll_steps < 1:
        raise ConfigError(f"unroll steps must be >= 1, got {unroll_steps}")
    z = np.asarray(z)
    b, n = z.shape
    vocab = model.config.vocab
    targets = z.reshape(-1).astype(np.int64)

    grads = model.zero_grads() if want_grads else None
    step_losses = np.empty(unroll_steps)
    item_losses = np.empty((unroll_steps, b))
    z_t = np.asarray(z0)
    inv_scale = 1.0 / (b * n * unroll_steps)
    for t in range(unroll_steps):
        if want_grads:
            logits, cache = model.forward(z_t, class_labels, want_cache=True)
        else:
            logits = model.forward(z_t, class_labels)
        flat = logits.reshape(-1, vocab)
        losses, dlogits = kernels.cross_entropy(flat, targets)
        step_losses[t] = losses.mean()
        item_losses[t] = losses.reshape(b, n).mean(axis=1)
        if want_grads:
            dlogits = dlogits * flat.dtype.type(inv_scale)
            model.backward(cache, dlogits.reshape(b, n, vocab), grads)
        if t + 1 < unroll_steps:
            probs = kernels.softmax(flat)
            u = rng.random(b * n)
            z_t = kernels.categorical_sample(probs, u).reshape(b, n)
    return float(step_losses.mean()), step_losses, item_losses, grads


class AdamW:
    """Adam with decoupled weight decay; state arrays are checkpointable."""

    def __init__(self, params, config, state=None, step=0):
        self.cfg = config
        self.step = step
        if state is None:
            self.m = {k: np.zeros_like(v) for k, v in params.items()}
            self.v = {k: np.zeros_like(v) for k, v in params.items()}
        else:
            self.m, self.v = state

    def update(self, params, grads):
        c = self.cfg
        self.step += 1
        b1c = 1.0 - c.beta1**self.step
        b2c = 1.0 - c.beta2**self.step
        for name, p in params.items():
            g = grads[name]
            m = self.m[name]
            v = self.v[name]
            m += (1.0 - c.beta1) * (g - m)
            v += (1.0 - c.beta2) * (g * g - v)
            mhat = m / b1c
            vhat = v / b2c
            upd = mhat / (np.sqrt(vhat) + c.eps)
            if c.weight_decay:
                upd = upd + c.weight_decay * p
            p -= np.asarray(c.learning_rate * upd, dtype=p.dtype)


def _epoch_permutation(seed, epoch, count):
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(3, epoch)))
    return rng.permutation(count)


def batch_indices(seed, step, batch_size, count):
    """Dataset indices for 1-based training step, from seeded per-epoch
    shuffles. Stateless in step, so resume needs no data-order state."""
    start = (step - 1) * batch_size
    out = np.empty(batch_size, dtype=np.int64)
    for i in range(batch_size):
        g = start + i
        perm = _epoch_permutation(seed, g // count, count)
        out[i] = perm[g % count]
    return out


def _rng_stream(seed, key):
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(key,)))


@dataclass
class TrainResult:
    model: HourglassModel
    history: np.ndarray  # (steps, 2 + T): step, mean loss, per-step losses
    final_step: int


def train(model, dataset, config, checkpoint_path=None, resume_extra=None,
          resume_tensors=None, log_fn=None):
    """Runs AdamW training up to config.total_steps.

    With resume_extra/resume_tensors from a previous training checkpoint the
    continuation reproduces the uninterrupted trajectory exactly: optimizer
    moments and the corruption/unroll RNG states are restored, and data order
    is a pure function of (seed, step).
    """
    if dataset.vocab != model.config.vocab:
        raise ConfigError(
            f"dataset vocab {dataset.vocab} != model vocab {model.config.vocab}"
        )
    if len(dataset) == 0:
        raise ConfigError("empty dataset")
    entries = dataset.entries.reshape(len(dataset), -1).astype(np.int64)
    labels = dataset.labels
    if labels is not None and model.config.class_count is None:
        labels = None  # unconditional model ignores dataset labels
    count = entries.shape[0]

    corrupt_rng = _rng_stream(config.seed, 1)
    unroll_rng = _rng_stream(config.seed, 2)
    opt = AdamW(model.params, config)
    start_step = 0
    if resume_extra is not None:
        start_step = int(resume_extra["step"])
        corrupt_rng.bit_generator.state = resume_extra["corrupt_rng"]
        unroll_rng.bit_generator.state = resume_extra["unroll_rng"]
        opt.step = start_step
        opt.m = {k[len("opt.m."):]: v for k, v in resume_tensors.items()
                 if k.startswith("opt.m.")}
        opt.v = {k[len("opt.v."):]: v for k, v in resume_tensors.items()
                 if k.startswith("opt.v.")}

    history = []
    for step in range(start_step + 1, config.total_steps + 1):
        idx = batch_indices(config.seed, step, config.batch_size, count)
        z = entries[idx]
        batch_labels = labels[idx].astype(np.int64) if labels is not None else None
        z0, _, _ = corrupt(z, model.config.vocab, corrupt_rng)
        loss, step_losses, _, grads = unrolled_loss(
            model, z, z0, config.unroll_steps, unroll_rng, batch_labels
        )
        opt.update(model.params, grads)
        history.append([step, loss, *step_losses])
        if log_fn is not None:
            log_fn(step, loss, step_losses)
        if (
            checkpoint_path
            and config.ckpt_every
            and step % config.ckpt_every == 0
            and step < config.total_steps
        ):
            save_train_checkpoint(checkpoint_path, model, opt, config,
                                  corrupt_rng, unroll_rng, step)

    final_step = max(start_step, config.total_steps)
    if checkpoint_path:
        save_train_checkpoint(checkpoint_path, model, opt, config,
                              corrupt_rng, unroll_rng, final_step)
    hist = np.asarray(history, dtype=np.float64)
    if hist.size == 0:
        hist = hist.reshape(0, 2 + config.unroll_steps)
    return TrainResult(model=model, history=hist, final_step=final_step)


def save_train_checkpoint(path, model, opt, config, corrupt_rng, unroll_rng, step):
    tensors = dict(model.params)
    for name, arr in opt.m.items():
        tensors[f"opt.m.{name}"] = arr
    for name, arr in opt.v.items():
        tensors[f"opt.v.{name}"] = arr
    extra = {
        "step": step,
        "train_config": config.to_dict(),
        "corrupt_rng": corrupt_rng.bit_generator.state,
        "unroll_rng": unroll_rng.bit_generator.state,
    }
    formats.write_checkpoint(path, model.config.to_dict(), tensors, extra)


def history_to_csv(history, unroll_steps):
    lines = ["step,loss," + ",".join(f"L{i+1}" for i in range(unroll_steps))]
    for row in history:
        step = int(row[0])
        vals = ",".join(f"{v:.8f}" for v in row[1:])
        lines.append(f"{step},{vals}")
    return "\n".join(lines) + "\n"
