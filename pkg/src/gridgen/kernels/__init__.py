"""Kernel lane selection.

At import, the compiled Cython core is used when it built successfully and
``GRIDGEN_FORCE_NUMPY`` is unset; otherwise the NumPy reference lane takes
over. Both lanes implement the exact same contracts (see ``reference.py``),
so callers go through the module-level wrappers and never notice the switch.
``use()`` re-points the wrappers at runtime -- tests and the kernel benchmark
rely on it.
"""

import os

from . import reference

try:
    from . import _core
except ImportError:
    _core = None

_impl = reference
if _core is not None and not os.environ.get("GRIDGEN_FORCE_NUMPY"):
    _impl = _core

LANES = {"numpy": reference}
if _core is not None:
    LANES["compiled"] = _core


def use(name):
    """Switch the active lane ('numpy' or 'compiled'). Returns the old name."""
    global _impl
    if name not in LANES:
        raise ValueError(f"unknown kernel lane {name!r}; have {sorted(LANES)}")
    old = _impl.NAME
    _impl = LANES[name]
    return old


def active():
    return _impl.NAME


def softmax(x, temperature=None):
    return _impl.softmax(x, temperature)


def softmax_backward(p, dp):
    return _impl.softmax_backward(p, dp)


def layernorm_forward(x, gain, bias, eps=1e-5):
    return _impl.layernorm_forward(x, gain, bias, eps)


def layernorm_backward(dy, xhat, rstd, gain):
    return _impl.layernorm_backward(dy, xhat, rstd, gain)


def gelu(x):
    return _impl.gelu(x)


def gelu_backward(x, dy):
    return _impl.gelu_backward(x, dy)


def rotary_apply(x, cos, sin, sign=1):
    return _impl.rotary_apply(x, cos, sin, sign)


def cross_entropy(logits, targets):
    return _impl.cross_entropy(logits, targets)


def kmeans_assign(points, centroids):
    return _impl.kmeans_assign(points, centroids)


def categorical_sample(probs, uniforms):
    return _impl.categorical_sample(probs, uniforms)
