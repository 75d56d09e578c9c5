"""Desk-scale evaluation: held-out unrolled loss, pooled token-marginal TV
against data, enumerable exact NLL, and sampler stop-step statistics."""

import numpy as np

from . import oracle, sampling, training


def token_marginal(tokens, vocab):
    """Pooled token distribution: all positions of all grids aggregated."""
    flat = np.asarray(tokens).reshape(-1)
    counts = np.bincount(flat, minlength=vocab).astype(np.float64)
    return counts / counts.sum()


def tv_distance(p, q):
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


def heldout_loss(model, dataset, draws, unroll_steps, seed, batch=64):
    """Monte-Carlo estimate of the unrolled loss per token on a dataset.

    Each draw corrupts one dataset grid (cycled in order) with a fresh
    threshold. Returns (mean, standard_error) over per-item losses.
    """
    entries = dataset.entries.reshape(len(dataset), -1).astype(np.int64)
    labels = dataset.labels
    if labels is not None and model.config.class_count is None:
        labels = None
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(10,)))
    per_item = []
    for lo in range(0, draws, batch):
        size = min(batch, draws - lo)
        idx = (lo + np.arange(size)) % len(dataset)
        z = entries[idx]
        batch_labels = labels[idx].astype(np.int64) if labels is not None else None
        z0, _, _ = training.corrupt(z, model.config.vocab, rng)
        _, _, item_losses, _ = training.unrolled_loss(
            model, z, z0, unroll_steps, rng, batch_labels, want_grads=False
        )
        per_item.append(item_losses.mean(axis=0))
    per_item = np.concatenate(per_item)
    se = per_item.std(ddof=1) / np.sqrt(per_item.size) if per_item.size > 1 else 0.0
    return float(per_item.mean()), float(se)


def eval_report(model, dataset, schedule, sample_batch=64, loss_draws=256,
                unroll_steps=2, seed=0, class_label=None):
    """Returns the metric dict backing the CLI eval command."""
    report = {}
    loss, se = heldout_loss(model, dataset, loss_draws, unroll_steps, seed)
    report["loss_per_token"] = loss
    report["loss_se"] = se

    cfg = model.config
    enumerable = (
        cfg.vocab <= oracle.MAX_VOCAB
        and cfg.seq_len <= oracle.MAX_POSITIONS
        and cfg.vocab**cfg.seq_len <= oracle.MAX_STATES
        and unroll_steps <= oracle.MAX_STEPS
    )
    if enumerable:
        log_m = oracle.log_transition_matrix(model, class_label)
        nlls = [
            oracle.exact_model_nll(model, grid, unroll_steps, log_m=log_m)
            for grid in dataset.entries
        ]
        report["exact_nll_per_token"] = float(np.mean(nlls) / cfg.seq_len)

    trace = sampling.sample(model, schedule, sample_batch, class_labels=(
        np.full(sample_batch, class_label) if class_label is not None else None
    ))
    data_marginal = token_marginal(dataset.entries, cfg.vocab)
    sample_marginal = token_marginal(trace.final, cfg.vocab)
    report["marginal_tv"] = tv_distance(data_marginal, sample_marginal)
    report["mean_stop_step"] = float(trace.stop_steps.mean())
    report["frozen_fraction"] = float(trace.frozen.mean())
    return report
