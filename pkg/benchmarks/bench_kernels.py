"""Benchmark: compiled kernel lane vs NumPy fallback.

Times each kernel at desk-scale shapes, then an end-to-end model forward and
training step under each lane. Matmuls hit the same BLAS in both lanes, so
end-to-end deltas come from the fused elementwise/reduction kernels only.

Usage: python benchmarks/bench_kernels.py [--repeats N]
"""

import argparse
import time

import numpy as np

from gridgen import kernels, training
from gridgen.codec import LatentDataset
from gridgen.model import HourglassConfig, HourglassModel


def timeit(fn, repeats, warmup=2):
    for _ in range(warmup):
        fn()
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - t0) / repeats


def kernel_cases(rng):
    x_attn = rng.normal(size=(8, 4, 256, 256)).astype(np.float32)
    p_attn = kernels.softmax(x_attn)
    dp = rng.normal(size=x_attn.shape).astype(np.float32)
    x_seq = rng.normal(size=(2048, 128)).astype(np.float32)
    g = np.ones(128, dtype=np.float32)
    b = np.zeros(128, dtype=np.float32)
    _, xhat, rstd = kernels.layernorm_forward(x_seq, g, b)
    x_mlp = rng.normal(size=(2048, 512)).astype(np.float32)
    qk = rng.normal(size=(32, 256, 32)).astype(np.float32)
    theta = rng.normal(size=(256, 16)).astype(np.float32)
    cos, sin = np.cos(theta), np.sin(theta)
    logits = rng.normal(size=(2048, 256)).astype(np.float32)
    targets = rng.integers(0, 256, 2048)
    points = rng.normal(size=(16384, 4)).astype(np.float32)
    cents = rng.normal(size=(64, 4)).astype(np.float32)
    probs = kernels.softmax(rng.normal(size=(8192, 16)).astype(np.float32))
    u = rng.random(8192)
    return [
        ("softmax (8,4,256,256)", lambda: kernels.softmax(x_attn)),
        ("softmax_backward", lambda: kernels.softmax_backward(p_attn, dp)),
        ("layernorm_fwd (2048,128)", lambda: kernels.layernorm_forward(x_seq, g, b)),
        ("layernorm_bwd", lambda: kernels.layernorm_backward(x_seq, xhat, rstd, g)),
        ("gelu (2048,512)", lambda: kernels.gelu(x_mlp)),
        ("gelu_backward", lambda: kernels.gelu_backward(x_mlp, x_mlp)),
        ("rotary (32,256,32)", lambda: kernels.rotary_apply(qk, cos, sin)),
        ("cross_entropy (2048,256)", lambda: kernels.cross_entropy(logits, targets)),
        ("kmeans_assign 16k x 64", lambda: kernels.kmeans_assign(points, cents)),
        ("categorical 8192x16", lambda: kernels.categorical_sample(probs, u)),
    ]


def end_to_end_cases(rng):
    cfg = HourglassConfig(vocab=4, grid_shape=(16, 16), model_dim=128,
                          depths=(2, 4, 2), shorten_factor=4, heads=4)
    model = HourglassModel(cfg, seed=0)
    toks = rng.integers(0, 4, (4, 256))
    ds = LatentDataset(vocab=4, grid_shape=(16, 16),
                       entries=rng.integers(0, 4, (32, 16, 16)).astype(np.uint16))
    tcfg = training.TrainConfig(total_steps=1, batch_size=4, learning_rate=1e-3)

    def forward():
        model.forward(toks)

    def train_step():
        z = ds.entries[:4].reshape(4, -1).astype(np.int64)
        step_rng = np.random.default_rng(0)
        z0, _, _ = training.corrupt(z, 4, step_rng)
        _, _, _, grads = training.unrolled_loss(model, z, z0, 2, step_rng)

    return [("model forward (B=4)", forward), ("train step (B=4, T=2)", train_step)]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeats", type=int, default=20)
    args = ap.parse_args()

    lanes = sorted(kernels.LANES)
    if len(lanes) < 2:
        print("compiled lane not available; nothing to compare")

    rng = np.random.default_rng(0)
    rows = []
    for name, fn in kernel_cases(rng) + end_to_end_cases(rng):
        times = {}
        for lane in lanes:
            kernels.use(lane)
            reps = args.repeats if "train step" not in name else max(3, args.repeats // 5)
            times[lane] = timeit(fn, reps)
        rows.append((name, times))
    kernels.use(lanes[-1])

    width = max(len(r[0]) for r in rows)
    header = f"{'case':<{width}} " + " ".join(f"{l:>12}" for l in lanes)
    if len(lanes) == 2:
        header += f" {'speedup':>9}"
    print(header)
    print("-" * len(header))
    for name, times in rows:
        line = f"{name:<{width}} " + " ".join(
            f"{times[l] * 1000:>9.3f} ms" for l in lanes
        )
        if len(lanes) == 2:
            line += f" {times['numpy'] / times['compiled']:>8.2f}x"
        print(line)


if __name__ == "__main__":
    main()
