"""Pure-NumPy kernel lane.

Semantic reference for the compiled core: every function here defines the
contract the Cython lane must match (same shapes, same dtype policy, equal
values up to floating-point reassociation). Matrix products are deliberately
absent -- both lanes leave those to BLAS.
"""

import numpy as np

NAME = "numpy"


def softmax(x, temperature=None):
    """Row-wise softmax over the last axis, optionally at a temperature.

    The max is subtracted before the temperature division so tiny
    temperatures approach argmax without overflow.
    """
    shifted = x - x.max(axis=-1, keepdims=True)
    if temperature is not None:
        shifted = shifted / x.dtype.type(temperature)
    np.exp(shifted, out=shifted)
    shifted /= shifted.sum(axis=-1, keepdims=True)
    return shifted


def softmax_backward(p, dp):
    """Gradient of softmax: dx = p * (dp - sum(p * dp))."""
    inner = (p * dp).sum(axis=-1, keepdims=True)
    return p * (dp - inner)


def layernorm_forward(x, gain, bias, eps=1e-5):
    """Returns (y, xhat, rstd); xhat and rstd are the backward cache."""
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * rstd
    return xhat * gain + bias, xhat, rstd


def layernorm_backward(dy, xhat, rstd, gain):
    d = xhat.shape[-1]
    dg = (dy * xhat).reshape(-1, d).sum(axis=0)
    db = dy.reshape(-1, d).sum(axis=0)
    dxhat = dy * gain
    dx = rstd * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )
    return dx, dg, db

_GELU_C = 0.7978845608028654  # sqrt(2/pi)


def gelu(x):
    """tanh-approximation GELU."""
    return 0.5 * x * (1.0 + np.tanh(_GELU_C * (x + 0.044715 * x * x * x)))


def gelu_backward(x, dy):
    t = np.tanh(_GELU_C * (x + 0.044715 * x * x * x))
    dt = (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * x * x)
    return dy * (0.5 * (1.0 + t) + 0.5 * x * dt)


def rotary_apply(x, cos, sin, sign=1):
    """Rotate adjacent feature pairs of x by per-position angles.

    x:   (rows, n, 2*m) -- rows is any leading batch, n positions
    cos: (n, m), sin: (n, m) -- per position, per pair
    sign=-1 applies the inverse rotation (used by the backward pass).
    """
    a = x[..., 0::2]
    b = x[..., 1::2]
    s = sin if sign == 1 else -sin
    out = np.empty_like(x)
    out[..., 0::2] = a * cos - b * s
    out[..., 1::2] = a * s + b * cos
    return out


def cross_entropy(logits, targets):
    """Mean-ready cross entropy on 2D logits.

    Returns (losses, dlogits) where losses[i] = -log softmax(logits[i])[t_i]
    and dlogits = softmax(logits) - onehot(targets), unscaled.
    """
    n = logits.shape[0]
    shifted = logits - logits.max(axis=-1, keepdims=True)
    expv = np.exp(shifted)
    total = expv.sum(axis=-1)
    losses = np.log(total) - shifted[np.arange(n), targets]
    dlogits = expv / total[:, None]
    dlogits[np.arange(n), targets] -= 1.0
    return losses, dlogits


def kmeans_assign(points, centroids):
    """Nearest centroid per point by squared Euclidean distance.

    Ties break to the lowest centroid index. Distances accumulate from
    explicit differences (no norm expansion) so exact ties stay exact.
    Returns (labels, sqdists).
    """
    n = points.shape[0]
    labels = np.empty(n, dtype=np.int64)
    sqdists = np.empty(n, dtype=points.dtype)
    chunk = max(1, 2**22 // max(1, centroids.size))
    for lo in range(0, n, chunk):
        hi = min(n, lo + chunk)
        diff = points[lo:hi, None, :] - centroids[None, :, :]
        d2 = np.einsum("pkd,pkd->pk", diff, diff)
        labels[lo:hi] = d2.argmin(axis=1)
        sqdists[lo:hi] = d2[np.arange(hi - lo), labels[lo:hi]]
    return labels, sqdists


def categorical_sample(probs, uniforms):
    """Inverse-CDF draw per row: first index with cumsum(probs) > u.

    The running sum accumulates in float64 in both lanes so the lanes agree
    except on sub-ulp boundary cases. Rows are assumed normalized; any
    residual shortfall falls back to the last index.
    """
    cdf = np.cumsum(probs, axis=-1, dtype=np.float64)
    hit = cdf > uniforms[:, None]
    idx = hit.argmax(axis=-1).astype(np.int64)
    idx[~hit[:, -1]] = probs.shape[1] - 1
    return idx
