"""Hourglass model tests: embedding, axial rotary, resampling, forward."""

import numpy as np
import pytest

from gridgen import kernels
from gridgen.errors import ConfigError, VocabError
from gridgen.model import (
    HourglassConfig,
    HourglassModel,
    depth_to_space,
    rotary_tables,
    space_to_depth,
)

import reference


def _f64_model(**overrides):
    kw = dict(vocab=5, grid_shape=(4, 4), model_dim=8, depths=(1, 1, 1),
              shorten_factor=4, heads=2)
    kw.update(overrides)
    return HourglassModel(HourglassConfig(**kw), seed=3, dtype=np.float64)


# -- config validation -------------------------------------------------------

def test_config_rejects_bad_shapes():
    with pytest.raises(ConfigError):
        HourglassConfig(vocab=4, grid_shape=(4, 4), shorten_factor=2)  # not square
    with pytest.raises(ConfigError):
        HourglassConfig(vocab=4, grid_shape=(3, 4), shorten_factor=4)  # 3 % 2
    with pytest.raises(ConfigError):
        HourglassConfig(vocab=4, grid_shape=(4, 4), model_dim=30, heads=4)
    with pytest.raises(ConfigError):
        HourglassConfig(vocab=4, grid_shape=(4, 4), model_dim=8, heads=4)  # hd=2
    with pytest.raises(ConfigError):
        HourglassConfig(vocab=1, grid_shape=(4, 4))
    with pytest.raises(ConfigError):
        HourglassConfig(vocab=4, grid_shape=(4, 4), depths=(1, 0, 1))


# -- embedding ---------------------------------------------------------------

def test_embed_constant_tokens_identical_rows():
    m = _f64_model()
    x = m.embed(np.zeros((2, 16), dtype=int))
    assert np.array_equal(x, np.broadcast_to(m.params["tok_emb"][0], x.shape))


def test_embed_class_shift_is_constant():
    m = _f64_model(class_count=4)
    toks = np.random.default_rng(0).integers(0, 5, (1, 16))
    xa = m.embed(np.vstack([toks, toks]), np.array([1, 3]))
    diff = xa[0] - xa[1]
    expect = m.params["class_emb"][1] - m.params["class_emb"][3]
    np.testing.assert_allclose(diff, np.broadcast_to(expect, diff.shape), atol=1e-12)


def test_embed_matches_table_lookup():
    m = _f64_model()
    toks = np.random.default_rng(1).integers(0, 5, (3, 16))
    x = m.embed(toks)
    for b in range(3):
        for p in range(16):
            assert np.array_equal(x[b, p], m.params["tok_emb"][toks[b, p]])


def test_embed_errors():
    m = _f64_model()
    with pytest.raises(ConfigError):
        m.embed(np.zeros((1, 16), dtype=int), np.array([0]))
    with pytest.raises(VocabError):
        m.forward(np.full((1, 16), 5))
    mc = _f64_model(class_count=2)
    with pytest.raises(ConfigError):
        mc.embed(np.zeros((1, 16), dtype=int), np.array([2]))


# -- rotary ------------------------------------------------------------------

def test_rotary_preserves_norm():
    cos, sin = rotary_tables((4, 4), 8, dtype=np.float32)
    rng = np.random.default_rng(2)
    q = rng.normal(size=(3, 16, 8)).astype(np.float32)
    qr = kernels.rotary_apply(q, cos, sin)
    np.testing.assert_allclose(
        np.linalg.norm(qr, axis=-1), np.linalg.norm(q, axis=-1), rtol=1e-6
    )


def test_rotary_relative_position_exhaustive():
    """dot(rot(q, p1), rot(k, p2)) depends only on the index offsets."""
    h = w = 4
    hd = 8
    cos, sin = rotary_tables((h, w), hd, dtype=np.float32)
    rng = np.random.default_rng(3)
    q = rng.normal(size=hd).astype(np.float32)
    k = rng.normal(size=hd).astype(np.float32)
    qs = kernels.rotary_apply(np.broadcast_to(q, (1, h * w, hd)).copy(), cos, sin)[0]
    ks = kernels.rotary_apply(np.broadcast_to(k, (1, h * w, hd)).copy(), cos, sin)[0]
    dots = {}
    for p1 in range(h * w):
        for p2 in range(h * w):
            off = (p1 // w - p2 // w, p1 % w - p2 % w)
            val = float(qs[p1] @ ks[p2])
            if off in dots:
                assert abs(val - dots[off]) <= 1e-5
            else:
                dots[off] = val


def test_rotary_single_cell_is_identity():
    cos, sin = rotary_tables((1, 1), 8, dtype=np.float64)
    np.testing.assert_array_equal(cos, np.ones((1, 4)))
    np.testing.assert_array_equal(sin, np.zeros((1, 4)))
    x = np.random.default_rng(4).normal(size=(2, 1, 8))
    assert np.array_equal(kernels.rotary_apply(x, cos, sin), x)


def test_rotary_matches_naive_rotation():
    cos, sin = rotary_tables((3, 5), 12, dtype=np.float64)
    angles = reference.rotary_angles((3, 5), 12)
    rng = np.random.default_rng(5)
    x = rng.normal(size=(1, 15, 12))
    got = kernels.rotary_apply(x, cos, sin)[0]
    for p in range(15):
        np.testing.assert_allclose(
            got[p], reference.rotate_vector(x[0, p], angles[p]), atol=1e-12
        )


# -- resampling algebra ------------------------------------------------------

@pytest.mark.parametrize("grid", [(2, 2), (4, 4), (4, 8)])
@pytest.mark.parametrize("k", [1, 4])
def test_depth_space_inverse_bit_exact(grid, k):
    s = int(np.sqrt(k))
    rng = np.random.default_rng(6)
    x = rng.normal(size=(2, grid[0] * grid[1], 6)).astype(np.float32)
    down = space_to_depth(x, grid, s)
    assert down.shape == (2, grid[0] * grid[1] // k, 6 * k)
    back = depth_to_space(down, (grid[0] // s, grid[1] // s), s)
    assert back.dtype == x.dtype and np.array_equal(back, x)


def test_space_to_depth_block_gathering():
    """Shortened cell (0,0) holds exactly fine positions {(0,0),(0,1),(1,0),(1,1)}."""
    h = w = 4
    x = np.arange(h * w, dtype=np.float32).reshape(1, h * w, 1)
    down = space_to_depth(x, (h, w), 2)
    assert sorted(down[0, 0].tolist()) == [0.0, 1.0, 4.0, 5.0]
    assert sorted(down[0, 1].tolist()) == [2.0, 3.0, 6.0, 7.0]
    assert sorted(down[0, 2].tolist()) == [8.0, 9.0, 12.0, 13.0]


def test_space_to_depth_matches_naive():
    rng = np.random.default_rng(7)
    x = rng.normal(size=(2, 4 * 8, 3))
    np.testing.assert_array_equal(
        space_to_depth(x, (4, 8), 2), reference.naive_space_to_depth(x, (4, 8), 2)
    )
    y = rng.normal(size=(2, 8, 12))
    np.testing.assert_array_equal(
        depth_to_space(y, (2, 4), 2), reference.naive_depth_to_space(y, (2, 4), 2)
    )


@pytest.mark.parametrize("grid,k", [((2, 2), 4), ((4, 4), 4), ((6, 9), 9), ((8, 4), 16)])
def test_shorten_shape_rule(grid, k):
    """Output grid is h/sqrt(k) x w/sqrt(k) with feature dim d*k."""
    s = int(np.sqrt(k))
    d = 6
    x = np.zeros((1, grid[0] * grid[1], d), dtype=np.float32)
    down = space_to_depth(x, grid, s)
    assert down.shape == (1, (grid[0] // s) * (grid[1] // s), d * k)


# -- shorten / upsample against naive composition ----------------------------

def _run_down_path(m, x):
    cfg = m.config
    s = cfg.sqrt_shorten
    xs = space_to_depth(x, cfg.grid_shape, s)
    y = xs.reshape(-1, xs.shape[-1]) @ m.params["down.w"] + m.params["down.b"]
    y = y.reshape(xs.shape[0], xs.shape[1], -1)
    return m._block_forward(y, "down.post", cfg.short_grid, None)


def test_shorten_k1_is_attention_of_projection():
    m = _f64_model(shorten_factor=1, grid_shape=(3, 3), vocab=4)
    rng = np.random.default_rng(8)
    x = rng.normal(size=(2, 9, 8))
    got = _run_down_path(m, x)
    proj = x @ m.params["down.w"] + m.params["down.b"]
    want = reference.naive_block(proj, m.params, "down.post", (3, 3), heads=2)
    np.testing.assert_allclose(got, want, atol=1e-9)


def test_shorten_matches_reference_composition():
    m = _f64_model()
    rng = np.random.default_rng(9)
    x = rng.normal(size=(2, 16, 8))
    got = _run_down_path(m, x)
    xs = reference.naive_space_to_depth(x, (4, 4), 2)
    proj = xs @ m.params["down.w"] + m.params["down.b"]
    want = reference.naive_block(proj, m.params, "down.post", (2, 2), heads=2)
    np.testing.assert_allclose(got, want, atol=1e-9)


def _run_up_path(m, y_short, residual):
    cfg = m.config
    s = cfg.sqrt_shorten
    z = y_short.reshape(-1, y_short.shape[-1]) @ m.params["up.w"] + m.params["up.b"]
    z = depth_to_space(z.reshape(y_short.shape[0], y_short.shape[1], -1),
                       cfg.short_grid, s)
    return m._block_forward(z + residual, "up.post", cfg.grid_shape, None)


def test_upsample_zero_projection_passes_residual():
    m = _f64_model()
    m.params["up.w"][:] = 0
    m.params["up.b"][:] = 0
    rng = np.random.default_rng(10)
    y = rng.normal(size=(1, 4, 8))
    r = rng.normal(size=(1, 16, 8))
    got = _run_up_path(m, y, r)
    want = reference.naive_block(r, m.params, "up.post", (4, 4), heads=2)
    np.testing.assert_allclose(got, want, atol=1e-9)


def test_upsample_matches_reference_composition():
    m = _f64_model()
    rng = np.random.default_rng(11)
    y = rng.normal(size=(2, 4, 8))
    r = rng.normal(size=(2, 16, 8))
    got = _run_up_path(m, y, r)
    z = y @ m.params["up.w"] + m.params["up.b"]
    z = reference.naive_depth_to_space(z, (2, 2), 2) + r
    want = reference.naive_block(z, m.params, "up.post", (4, 4), heads=2)
    np.testing.assert_allclose(got, want, atol=1e-9)


# -- full forward ------------------------------------------------------------

def test_forward_shape_contract():
    m = _f64_model(depths=(2, 2, 1), class_count=3)
    toks = np.random.default_rng(12).integers(0, 5, (3, 16))
    logits = m.forward(toks, np.array([0, 1, 2]))
    assert logits.shape == (3, 16, 5)
    single = m.forward(toks[0])
    assert single.shape == (16, 5)
    np.testing.assert_allclose(single, m.forward(toks)[0], atol=1e-12)


def test_forward_matches_full_reference_composition():
    m = _f64_model()
    rng = np.random.default_rng(13)
    toks = rng.integers(0, 5, (2, 16))
    got = m.forward(toks)

    p = m.params
    x = p["tok_emb"][toks]
    x = reference.naive_block(x, p, "pre.0", (4, 4), heads=2)
    xs = reference.naive_space_to_depth(x, (4, 4), 2)
    y = xs @ p["down.w"] + p["down.b"]
    y = reference.naive_block(y, p, "down.post", (2, 2), heads=2)
    y = reference.naive_block(y, p, "mid.0", (2, 2), heads=2)
    z = y @ p["up.w"] + p["up.b"]
    z = reference.naive_depth_to_space(z, (2, 2), 2) + x
    z = reference.naive_block(z, p, "up.post", (4, 4), heads=2)
    z = reference.naive_block(z, p, "post.0", (4, 4), heads=2)
    z = reference.naive_layernorm(z, p["ln_f.g"], p["ln_f.b"])
    want = z @ p["head.w"] + p["head.b"]
    np.testing.assert_allclose(got, want, atol=1e-9)


def test_forward_non_causal_witness():
    m = _f64_model()
    toks = np.random.default_rng(14).integers(0, 5, (1, 16))
    base = m.forward(toks)
    toks2 = toks.copy()
    toks2[0, 15] = (toks2[0, 15] + 1) % 5
    flipped = m.forward(toks2)
    assert np.abs(flipped[0, 0] - base[0, 0]).max() > 1e-9


def test_forward_vocab_permutation_symmetry():
    m = _f64_model()
    rng = np.random.default_rng(15)
    toks = rng.integers(0, 5, (2, 16))
    perm = rng.permutation(5)
    m2 = HourglassModel(m.config, params={**m.params, "tok_emb": m.params["tok_emb"][perm]},
                        dtype=np.float64)
    inv = np.argsort(perm)
    assert np.array_equal(m.forward(toks), m2.forward(inv[toks]))


def test_forward_bit_deterministic():
    m = _f64_model(depths=(2, 1, 2))
    toks = np.random.default_rng(16).integers(0, 5, (4, 16))
    assert np.array_equal(m.forward(toks), m.forward(toks))


def test_attention_rows_sum_to_one():
    m = _f64_model()
    toks = np.random.default_rng(17).integers(0, 5, (2, 16))
    _, cache = m.forward(toks, want_cache=True)
    for key, sub in cache.items():
        if key.endswith(".attn"):
            np.testing.assert_allclose(sub["probs"].sum(axis=-1), 1.0, atol=1e-6)


def test_wrong_length_input_rejected():
    m = _f64_model()
    with pytest.raises(ConfigError):
        m.forward(np.zeros((1, 9), dtype=int))


# -- persistence -------------------------------------------------------------

def test_checkpoint_roundtrip_bit_exact(tmp_path):
    m = HourglassModel(
        HourglassConfig(vocab=7, grid_shape=(4, 4), model_dim=16, depths=(1, 2, 1),
                        shorten_factor=4, heads=2, class_count=3),
        seed=9,
    )
    path = tmp_path / "model.ckpt"
    m.save(path, extra={"note": 1})
    m2, tensors, extra = HourglassModel.load(path)
    assert extra == {"note": 1}
    assert m2.config == m.config
    assert set(m2.params) == set(m.params)
    for k in m.params:
        assert m2.params[k].dtype == m.params[k].dtype
        assert np.array_equal(m2.params[k], m.params[k])
    toks = np.random.default_rng(18).integers(0, 7, (2, 16))
    assert np.array_equal(m.forward(toks), m2.forward(toks))
