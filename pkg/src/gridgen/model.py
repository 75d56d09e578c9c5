"""Non-causal hourglass transformer over flattened token grids.

Forward and backward passes are written out explicitly on NumPy arrays:
matmuls go to BLAS, the fused elementwise/reduction pieces go through
``gridgen.kernels``. Every forward can return a cache from which
``backward`` produces exact analytic parameter gradients (checked against
central finite differences in the test suite).

Sequence layout is raster-major: position p of an (h, w) grid is
(p // w, p % w). Attention is full (every position attends to every other);
positions enter only through the axial rotary rotation of queries and keys,
with the first half of each head rotating by row index and the second half
by column index.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import formats, kernels
from .errors import ConfigError, VocabError


@dataclass
class HourglassConfig:
    vocab: int
    grid_shape: tuple
    model_dim: int = 128
    depths: tuple = (2, 4, 2)
    shorten_factor: int = 4
    heads: int = 4
    class_count: int | None = None
    mlp_mult: int = 4
    rope_base: float = 10000.0

    def __post_init__(self):
        self.grid_shape = tuple(int(x) for x in self.grid_shape)
        self.depths = tuple(int(x) for x in self.depths)
        if self.vocab < 2:
            raise ConfigError(f"vocab must be >= 2, got {self.vocab}")
        if len(self.depths) != 3 or any(d < 1 for d in self.depths):
            raise ConfigError(f"depths must be three values >= 1, got {self.depths}")
        s = math.isqrt(self.shorten_factor)
        if s * s != self.shorten_factor:
            raise ConfigError(
                f"shorten factor {self.shorten_factor} is not a perfect square"
            )
        h, w = self.grid_shape
        if h % s or w % s:
            raise ConfigError(
                f"grid {h}x{w} not divisible by sqrt(shorten factor) {s}"
            )
        if self.model_dim % self.heads:
            raise ConfigError(
                f"model dim {self.model_dim} not divisible by {self.heads} heads"
            )
        if (self.model_dim // self.heads) % 4:
            raise ConfigError(
                f"head dim {self.model_dim // self.heads} must be divisible by 4 "
                "(two axial rotary banks, each needs even dims)"
            )
        if self.class_count is not None and self.class_count < 1:
            raise ConfigError(f"class count must be >= 1, got {self.class_count}")

    @property
    def seq_len(self):
        return self.grid_shape[0] * self.grid_shape[1]

    @property
    def sqrt_shorten(self):
        return math.isqrt(self.shorten_factor)

    @property
    def short_grid(self):
        s = self.sqrt_shorten
        return (self.grid_shape[0] // s, self.grid_shape[1] // s)

    def to_dict(self):
        return {
            "vocab": self.vocab,
            "grid_shape": list(self.grid_shape),
            "model_dim": self.model_dim,
            "depths": list(self.depths),
            "shorten_factor": self.shorten_factor,
            "heads": self.heads,
            "class_count": self.class_count,
            "mlp_mult": self.mlp_mult,
            "rope_base": self.rope_base,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["grid_shape"] = tuple(d["grid_shape"])
        d["depths"] = tuple(d["depths"])
        return cls(**d)


def rotary_tables(grid_shape, head_dim, base=10000.0, dtype=np.float32):
    """Per-position cos/sin for axial rotary attention.

    Returns (cos, sin) of shape (N, head_dim // 2): pair m < head_dim//4
    rotates by the row index, the rest by the column index, each bank with
    standard inverse-frequency spacing.
    """
    h, w = grid_shape
    bank_pairs = head_dim // 4
    inv_freq = base ** (-np.arange(bank_pairs, dtype=np.float64) / bank_pairs)
    rows = np.repeat(np.arange(h), w).astype(np.float64)
    cols = np.tile(np.arange(w), h).astype(np.float64)
    angles = np.concatenate(
        [rows[:, None] * inv_freq[None, :], cols[:, None] * inv_freq[None, :]],
        axis=1,
    )
    return np.cos(angles).astype(dtype), np.sin(angles).astype(dtype)


def space_to_depth(x, grid_shape, s):
    """(B, h*w, d) -> (B, h*w/s^2, s*s*d), gathering s x s spatial blocks."""
    b, n, d = x.shape
    h, w = grid_shape
    blocks = x.reshape(b, h // s, s, w // s, s, d).transpose(0, 1, 3, 2, 4, 5)
    return np.ascontiguousarray(blocks.reshape(b, (h // s) * (w // s), s * s * d))


def depth_to_space(x, short_grid, s):
    """Exact inverse of space_to_depth."""
    b, m, kd = x.shape
    hs, ws = short_grid
    d = kd // (s * s)
    blocks = x.reshape(b, hs, ws, s, s, d).transpose(0, 1, 3, 2, 4, 5)
    return np.ascontiguousarray(blocks.reshape(b, hs * s * ws * s, d))


def _block_param_specs(prefix, d, mult):
    return [
        (f"{prefix}.ln1.g", (d,), "ones"),
        (f"{prefix}.ln1.b", (d,), "zeros"),
        (f"{prefix}.attn.wqkv", (d, 3 * d), "normal"),
        (f"{prefix}.attn.bqkv", (3 * d,), "zeros"),
        (f"{prefix}.attn.wo", (d, d), "normal"),
        (f"{prefix}.attn.bo", (d,), "zeros"),
        (f"{prefix}.ln2.g", (d,), "ones"),
        (f"{prefix}.ln2.b", (d,), "zeros"),
        (f"{prefix}.mlp.w1", (d, mult * d), "normal"),
        (f"{prefix}.mlp.b1", (mult * d,), "zeros"),
        (f"{prefix}.mlp.w2", (mult * d, d), "normal"),
        (f"{prefix}.mlp.b2", (d,), "zeros"),
    ]


class HourglassModel:
    """Parameters plus the forward/backward machinery."""

    INIT_STD = 0.02

    def __init__(self, config, seed=0, dtype=np.float32, params=None):
        self.config = config
        self.dtype = np.dtype(dtype)
        self._rope_cache = {}
        if params is not None:
            self.params = {k: np.asarray(v, dtype=self.dtype) for k, v in params.items()}
        else:
            self.params = self._init_params(seed)

    # -- parameters ------------------------------------------------------

    def block_names(self):
        pre, mid, post = self.config.depths
        names = [f"pre.{i}" for i in range(pre)]
        names.append("down.post")
        names += [f"mid.{i}" for i in range(mid)]
        names.append("up.post")
        names += [f"post.{i}" for i in range(post)]
        return names

    def param_specs(self):
        cfg = self.config
        d, k, mult = cfg.model_dim, cfg.shorten_factor, cfg.mlp_mult
        specs = [("tok_emb", (cfg.vocab, d), "normal")]
        if cfg.class_count is not None:
            specs.append(("class_emb", (cfg.class_count, d), "normal"))
        pre, mid, post = cfg.depths
        for i in range(pre):
            specs += _block_param_specs(f"pre.{i}", d, mult)
        specs += [("down.w", (k * d, d), "normal"), ("down.b", (d,), "zeros")]
        specs += _block_param_specs("down.post", d, mult)
        for i in range(mid):
            specs += _block_param_specs(f"mid.{i}", d, mult)
        specs += [("up.w", (d, k * d), "normal"), ("up.b", (k * d,), "zeros")]
        specs += _block_param_specs("up.post", d, mult)
        for i in range(post):
            specs += _block_param_specs(f"post.{i}", d, mult)
        specs += [
            ("ln_f.g", (d,), "ones"),
            ("ln_f.b", (d,), "zeros"),
            ("head.w", (d, cfg.vocab), "normal"),
            ("head.b", (cfg.vocab,), "zeros"),
        ]
        return specs

    def _init_params(self, seed):
        rng = np.random.default_rng(seed)
        params = {}
        for name, shape, kind in self.param_specs():
            if kind == "normal":
                params[name] = rng.normal(0.0, self.INIT_STD, shape).astype(self.dtype)
            elif kind == "ones":
                params[name] = np.ones(shape, dtype=self.dtype)
            else:
                params[name] = np.zeros(shape, dtype=self.dtype)
        return params

    @property
    def num_params(self):
        return sum(p.size for p in self.params.values())

    def zero_grads(self):
        return {k: np.zeros_like(v) for k, v in self.params.items()}

    # -- rotary ----------------------------------------------------------

    def _rope(self, grid_shape):
        key = grid_shape
        if key not in self._rope_cache:
            hd = self.config.model_dim // self.config.heads
            self._rope_cache[key] = rotary_tables(
                grid_shape, hd, self.config.rope_base, self.dtype
            )
        return self._rope_cache[key]

    # -- embedding -------------------------------------------------------

    def embed(self, tokens, class_labels=None):
        """Token lookup plus optional additive class embedding (no absolute
        positional table; positions enter via rotary attention)."""
        cfg = self.config
        tokens = np.asarray(tokens)
        if tokens.size and (tokens.min() < 0 or tokens.max() >= cfg.vocab):
            raise VocabError(
                f"token out of range [0, {cfg.vocab}): "
                f"{int(tokens.min())}..{int(tokens.max())}"
            )
        x = self.params["tok_emb"][tokens]
        if class_labels is not None:
            if cfg.class_count is None:
                raise ConfigError("class label given but model has no class_count")
            labels = np.asarray(class_labels)
            if labels.min() < 0 or labels.max() >= cfg.class_count:
                raise ConfigError(
                    f"class label out of range [0, {cfg.class_count})"
                )
            x = x + self.params["class_emb"][labels][:, None, :]
        return x

    # -- transformer block -----------------------------------------------

    def _attn_forward(self, x, prefix, grid_shape, cache):
        p = self.params
        cfg = self.config
        b, n, d = x.shape
        heads, hd = cfg.heads, d // cfg.heads
        cos, sin = self._rope(grid_shape)

        y, xhat, rstd = kernels.layernorm_forward(
            x, p[f"{prefix}.ln1.g"], p[f"{prefix}.ln1.b"]
        )
        qkv = y.reshape(-1, d) @ p[f"{prefix}.attn.wqkv"] + p[f"{prefix}.attn.bqkv"]
        qkv = qkv.reshape(b, n, 3, heads, hd).transpose(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        qr = kernels.rotary_apply(q, cos, sin)
        kr = kernels.rotary_apply(k, cos, sin)
        scale = self.dtype.type(1.0 / math.sqrt(hd))
        scores = (qr @ kr.transpose(0, 1, 3, 2)) * scale
        probs = kernels.softmax(scores)
        ctx = probs @ v
        ctxm = np.ascontiguousarray(ctx.transpose(0, 2, 1, 3)).reshape(b, n, d)
        out = ctxm @ p[f"{prefix}.attn.wo"] + p[f"{prefix}.attn.bo"]
        if cache is not None:
            cache[f"{prefix}.attn"] = {
                "xhat": xhat, "rstd": rstd, "y": y,
                "qr": qr, "kr": kr, "v": v, "probs": probs, "ctxm": ctxm,
                "grid": grid_shape, "scale": scale,
            }
        return x + out

    def _attn_backward(self, dout, prefix, grads, cache):
        p = self.params
        c = cache[f"{prefix}.attn"]
        b, n, d = dout.shape
        heads, hd = self.config.heads, d // self.config.heads
        cos, sin = self._rope(c["grid"])

        dctxm = dout.reshape(-1, d) @ p[f"{prefix}.attn.wo"].T
        grads[f"{prefix}.attn.wo"] += c["ctxm"].reshape(-1, d).T @ dout.reshape(-1, d)
        grads[f"{prefix}.attn.bo"] += dout.sum(axis=(0, 1))
        dctx = dctxm.reshape(b, n, heads, hd).transpose(0, 2, 1, 3)
        dprobs = dctx @ c["v"].transpose(0, 1, 3, 2)
        dv = c["probs"].transpose(0, 1, 3, 2) @ dctx
        dscores = kernels.softmax_backward(c["probs"], dprobs)
        dscores *= c["scale"]
        dqr = dscores @ c["kr"]
        dkr = dscores.transpose(0, 1, 3, 2) @ c["qr"]
        dq = kernels.rotary_apply(dqr, cos, sin, sign=-1)
        dk = kernels.rotary_apply(dkr, cos, sin, sign=-1)
        dqkv = np.stack([dq, dk, dv]).transpose(1, 3, 0, 2, 4).reshape(b, n, 3 * d)
        grads[f"{prefix}.attn.wqkv"] += (
            c["y"].reshape(-1, d).T @ dqkv.reshape(-1, 3 * d)
        )
        grads[f"{prefix}.attn.bqkv"] += dqkv.sum(axis=(0, 1))
        dy = dqkv.reshape(-1, 3 * d) @ p[f"{prefix}.attn.wqkv"].T
        dx, dg, db = kernels.layernorm_backward(
            dy.reshape(b, n, d), c["xhat"], c["rstd"], p[f"{prefix}.ln1.g"]
        )
        grads[f"{prefix}.ln1.g"] += dg
        grads[f"{prefix}.ln1.b"] += db
        return dout + dx

    def _mlp_forward(self, x, prefix, cache):
        p = self.params
        b, n, d = x.shape
        y, xhat, rstd = kernels.layernorm_forward(
            x, p[f"{prefix}.ln2.g"], p[f"{prefix}.ln2.b"]
        )
        hpre = y.reshape(-1, d) @ p[f"{prefix}.mlp.w1"] + p[f"{prefix}.mlp.b1"]
        hact = kernels.gelu(hpre)
        out = (hact @ p[f"{prefix}.mlp.w2"] + p[f"{prefix}.mlp.b2"]).reshape(b, n, d)
        if cache is not None:
            cache[f"{prefix}.mlp"] = {
                "xhat": xhat, "rstd": rstd, "y": y, "hpre": hpre, "hact": hact,
            }
        return x + out

    def _mlp_backward(self, dout, prefix, grads, cache):
        p = self.params
        c = cache[f"{prefix}.mlp"]
        b, n, d = dout.shape
        dflat = dout.reshape(-1, d)
        grads[f"{prefix}.mlp.w2"] += c["hact"].T @ dflat
        grads[f"{prefix}.mlp.b2"] += dflat.sum(axis=0)
        dhact = dflat @ p[f"{prefix}.mlp.w2"].T
        dhpre = kernels.gelu_backward(c["hpre"], dhact)
        grads[f"{prefix}.mlp.w1"] += c["y"].reshape(-1, d).T @ dhpre
        grads[f"{prefix}.mlp.b1"] += dhpre.sum(axis=0)
        dy = dhpre @ p[f"{prefix}.mlp.w1"].T
        dx, dg, db = kernels.layernorm_backward(
            dy.reshape(b, n, d), c["xhat"], c["rstd"], p[f"{prefix}.ln2.g"]
        )
        grads[f"{prefix}.ln2.g"] += dg
        grads[f"{prefix}.ln2.b"] += db
        return dout + dx

    def _block_forward(self, x, prefix, grid_shape, cache):
        x = self._attn_forward(x, prefix, grid_shape, cache)
        return self._mlp_forward(x, prefix, cache)

    def _block_backward(self, dout, prefix, grads, cache):
        dout = self._mlp_backward(dout, prefix, grads, cache)
        return self._attn_backward(dout, prefix, grads, cache)

    # -- full network ------------------------------------------------------

    def forward(self, tokens, class_labels=None, want_cache=False):
        """Logits of shape (B, N, vocab); with want_cache, also retains the
        intermediate state needed by backward()."""
        cfg = self.config
        tokens = np.asarray(tokens)
        squeeze = tokens.ndim == 1
        if squeeze:
            tokens = tokens[None]
        if tokens.shape[1] != cfg.seq_len:
            raise ConfigError(
                f"expected {cfg.seq_len} positions, got {tokens.shape[1]}"
            )
        cache = {} if want_cache else None
        s = cfg.sqrt_shorten
        pre, mid, post = cfg.depths
        p = self.params

        x = self.embed(tokens, class_labels)
        x = np.ascontiguousarray(x, dtype=self.dtype)
        for i in range(pre):
            x = self._block_forward(x, f"pre.{i}", cfg.grid_shape, cache)

        residual = x
        xs = space_to_depth(x, cfg.grid_shape, s)
        y = xs.reshape(-1, xs.shape[-1]) @ p["down.w"] + p["down.b"]
        y = y.reshape(xs.shape[0], xs.shape[1], -1)
        y = self._block_forward(y, "down.post", cfg.short_grid, cache)
        for i in range(mid):
            y = self._block_forward(y, f"mid.{i}", cfg.short_grid, cache)

        z = y.reshape(-1, y.shape[-1]) @ p["up.w"] + p["up.b"]
        z = depth_to_space(z.reshape(y.shape[0], y.shape[1], -1), cfg.short_grid, s)
        x = z + residual
        x = self._block_forward(x, "up.post", cfg.grid_shape, cache)
        for i in range(post):
            x = self._block_forward(x, f"post.{i}", cfg.grid_shape, cache)

        xf, xhatf, rstdf = kernels.layernorm_forward(x, p["ln_f.g"], p["ln_f.b"])
        logits = xf.reshape(-1, cfg.model_dim) @ p["head.w"] + p["head.b"]
        logits = logits.reshape(tokens.shape[0], cfg.seq_len, cfg.vocab)
        if want_cache:
            cache["ln_f"] = {"xhat": xhatf, "rstd": rstdf, "xf": xf}
            cache["inputs"] = {"tokens": tokens, "labels": class_labels}
            cache["down.xs"] = xs
            cache["up.y"] = y
            return logits, cache
        return logits[0] if squeeze else logits

    def backward(self, cache, dlogits, grads=None):
        """Parameter gradients for a want_cache forward; accumulates into
        grads when given (unrolled training sums step gradients)."""
        cfg = self.config
        p = self.params
        if grads is None:
            grads = self.zero_grads()
        s = cfg.sqrt_shorten
        pre, mid, post = cfg.depths
        b = dlogits.shape[0] if dlogits.ndim == 3 else 1
        dlogits = dlogits.reshape(b, cfg.seq_len, cfg.vocab)

        cf = cache["ln_f"]
        dflat = dlogits.reshape(-1, cfg.vocab)
        grads["head.w"] += cf["xf"].reshape(-1, cfg.model_dim).T @ dflat
        grads["head.b"] += dflat.sum(axis=0)
        dxf = (dflat @ p["head.w"].T).reshape(b, cfg.seq_len, cfg.model_dim)
        dx, dg, db = kernels.layernorm_backward(dxf, cf["xhat"], cf["rstd"], p["ln_f.g"])
        grads["ln_f.g"] += dg
        grads["ln_f.b"] += db

        for i in reversed(range(post)):
            dx = self._block_backward(dx, f"post.{i}", grads, cache)
        dx = self._block_backward(dx, "up.post", grads, cache)

        dresidual = dx
        dzproj = space_to_depth(dx, cfg.grid_shape, s)
        kd = dzproj.shape[-1]
        y = cache["up.y"]
        grads["up.w"] += y.reshape(-1, cfg.model_dim).T @ dzproj.reshape(-1, kd)
        grads["up.b"] += dzproj.reshape(-1, kd).sum(axis=0)
        dy = (dzproj.reshape(-1, kd) @ p["up.w"].T).reshape(y.shape)

        for i in reversed(range(mid)):
            dy = self._block_backward(dy, f"mid.{i}", grads, cache)
        dy = self._block_backward(dy, "down.post", grads, cache)

        xs = cache["down.xs"]
        dyflat = dy.reshape(-1, cfg.model_dim)
        grads["down.w"] += xs.reshape(-1, kd).T @ dyflat
        grads["down.b"] += dyflat.sum(axis=0)
        dxs = (dyflat @ p["down.w"].T).reshape(xs.shape)
        dx = depth_to_space(dxs, cfg.short_grid, s) + dresidual

        for i in reversed(range(pre)):
            dx = self._block_backward(dx, f"pre.{i}", grads, cache)

        tokens = cache["inputs"]["tokens"]
        labels = cache["inputs"]["labels"]
        np.add.at(grads["tok_emb"], tokens.reshape(-1), dx.reshape(-1, cfg.model_dim))
        if labels is not None:
            np.add.at(grads["class_emb"], np.asarray(labels), dx.sum(axis=1))
        return grads

    # -- persistence -------------------------------------------------------

    def save(self, path, extra=None):
        formats.write_checkpoint(path, self.config.to_dict(), self.params, extra)

    @classmethod
    def load(cls, path):
        config, tensors, extra = formats.read_checkpoint(path)
        model_params = {k: v for k, v in tensors.items() if not k.startswith("opt.")}
        cfg = HourglassConfig.from_dict(config)
        dtype = next(iter(model_params.values())).dtype
        model = cls(cfg, params=model_params, dtype=dtype)
        return model, tensors, extra
