"""Brute-force reference implementations used for acceptance checks.

Everything here enumerates the full state space Z = {0..v-1}^N, so it only
works at desk scale (v <= 4, N <= 6, v^N <= 4096, T <= 3). The probability
arithmetic is float64 log-space with scipy's logsumexp/log_softmax and
deliberately shares no numerical kernels with the main model path; agreement
between the two routes is evidence, not tautology.
"""

import math

import numpy as np
from scipy.special import log_softmax, logsumexp

from .errors import GridgenError, SizeError

MAX_VOCAB = 4
MAX_POSITIONS = 6
MAX_STATES = 4096
MAX_STEPS = 3

NLL_OVERFLOW = math.inf  # explicit sentinel for zero enumerated probability


def check_bounds(vocab, positions, steps=1):
    if vocab > MAX_VOCAB:
        raise SizeError(f"vocab {vocab} exceeds enumeration bound {MAX_VOCAB}")
    if positions > MAX_POSITIONS:
        raise SizeError(
            f"{positions} positions exceed enumeration bound {MAX_POSITIONS}"
        )
    if vocab**positions > MAX_STATES:
        raise SizeError(
            f"state space {vocab}**{positions} exceeds bound {MAX_STATES}"
        )
    if steps > MAX_STEPS:
        raise SizeError(f"{steps} steps exceed enumeration bound {MAX_STEPS}")


def enumerate_states(vocab, positions):
    """All v^N token vectors, last position varying fastest."""
    check_bounds(vocab, positions)
    count = vocab**positions
    idx = np.arange(count)
    states = np.empty((count, positions), dtype=np.int64)
    for p in reversed(range(positions)):
        states[:, p] = idx % vocab
        idx //= vocab
    return states


def state_index(state, vocab):
    """Inverse of enumerate_states row order."""
    state = np.asarray(state).reshape(-1)
    idx = 0
    for tok in state:
        idx = idx * vocab + int(tok)
    return idx


def log_transition_matrix(model, class_label=None, batch=512):
    """M[s, s'] = log f(state s' | state s) under one model step.

    One chain step samples every position independently from the softmaxed
    logits of the previous state, so the row factorizes over positions.
    """
    vocab = model.config.vocab
    n = model.config.seq_len
    check_bounds(vocab, n)
    states = enumerate_states(vocab, n)
    count = states.shape[0]
    labels = None if class_label is None else np.full(1, class_label)

    m = np.zeros((count, count), dtype=np.float64)
    for lo in range(0, count, batch):
        hi = min(count, lo + batch)
        chunk_labels = None
        if labels is not None:
            chunk_labels = np.full(hi - lo, class_label)
        logits = model.forward(states[lo:hi], chunk_labels)
        lp = log_softmax(np.asarray(logits, dtype=np.float64), axis=-1)
        acc = np.zeros((hi - lo, count), dtype=np.float64)
        for p in range(n):
            acc += lp[:, p, states[:, p]]
        m[lo:hi] = acc
    return m


def exact_transition(model, z0, steps, class_label=None, log_m=None):
    """p_steps(. | z0): exact distribution over all states after `steps`
    chain steps from z0. Sums to 1 within 1e-10."""
    vocab = model.config.vocab
    n = model.config.seq_len
    check_bounds(vocab, n, steps)
    if log_m is None:
        log_m = log_transition_matrix(model, class_label)
    lp = log_m[state_index(z0, vocab)]
    for _ in range(steps - 1):
        lp = logsumexp(lp[:, None] + log_m, axis=0)
    return np.exp(lp)


def exact_marginal(model, steps, class_label=None, log_m=None):
    """Distribution of z_steps when z0 is uniform over all states."""
    vocab = model.config.vocab
    n = model.config.seq_len
    check_bounds(vocab, n, steps)
    if log_m is None:
        log_m = log_transition_matrix(model, class_label)
    lp = np.full(log_m.shape[0], -n * math.log(vocab))
    for _ in range(steps):
        lp = logsumexp(lp[:, None] + log_m, axis=0)
    return np.exp(lp)


def exact_model_nll(model, z, steps, class_label=None, log_m=None):
    """-ln sum_z0 p_steps(z | z0) * v^-N, exact by enumeration.

    Returns NLL_OVERFLOW when the enumerated probability underflows to zero
    (e.g. a delta model queried on an unreachable state).
    """
    vocab = model.config.vocab
    n = model.config.seq_len
    check_bounds(vocab, n, steps)
    if log_m is None:
        log_m = log_transition_matrix(model, class_label)
    target = state_index(z, vocab)
    back = log_m[:, target]
    for _ in range(steps - 1):
        back = logsumexp(log_m + back[None, :], axis=1)
    total = logsumexp(back - n * math.log(vocab))
    if not np.isfinite(total):
        return NLL_OVERFLOW
    return float(-total)


def finite_diff_grad(loss_fn, params, epsilon=None, richardson=False):
    """Central-difference gradient of loss_fn() w.r.t. every parameter entry.

    params is a dict of arrays perturbed in place and restored; loss_fn takes
    no arguments and must be deterministic (pin any RNG inside it). epsilon
    defaults to cbrt(machine eps) scaled by max(1, |value|); the division uses
    the actually realized two-sided step, which matters in float32.

    With richardson=True, two central differences at epsilon and epsilon/2
    combine as (4*D(eps/2) - D(eps)) / 3, cancelling the eps^2 truncation
    term. Deep compositions need this to reach ~1e-7 agreement in float64:
    a single plain central difference is pinched between truncation (large
    eps) and evaluation roundoff (small eps).
    """
    if richardson:
        eps = 1.6e-4 if epsilon is None else epsilon
        coarse = finite_diff_grad(loss_fn, params, eps)
        fine = finite_diff_grad(loss_fn, params, eps / 2)
        return {k: (4.0 * fine[k] - coarse[k]) / 3.0 for k in coarse}
    grads = {}
    for name, arr in params.items():
        flat = arr.reshape(-1)
        base_eps = epsilon
        if base_eps is None:
            base_eps = float(np.finfo(arr.dtype).eps) ** (1.0 / 3.0)
        g = np.zeros(flat.shape, dtype=np.float64)
        for i in range(flat.size):
            orig = flat[i].item()
            step = base_eps * max(1.0, abs(orig))
            flat[i] = orig + step
            hi = flat[i].item()
            lhi = loss_fn()
            flat[i] = orig - step
            lo = flat[i].item()
            llo = loss_fn()
            flat[i] = orig
            if not (np.isfinite(lhi) and np.isfinite(llo)):
                raise GridgenError(
                    f"non-finite loss while perturbing {name}[{i}]"
                )
            g[i] = (lhi - llo) / (hi - lo)
        grads[name] = g.reshape(arr.shape)
    return grads
