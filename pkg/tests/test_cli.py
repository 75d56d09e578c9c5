"""End-to-end CLI tests via the console entry point (in-process main())."""

import hashlib

import numpy as np
import pytest

from gridgen import cli, codec, formats, textures
from gridgen.model import HourglassModel


def run_cli(capsys, *args):
    code = cli.main(list(args))
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture(scope="module")
def image_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("imgs")
    rng = np.random.default_rng(0)
    for i, img in enumerate(textures.stroke_images(rng, 12, (8, 8))):
        formats.write_pgm(d / f"img_{i:02d}.pgm", img)
    return d


@pytest.fixture(scope="module")
def digit_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("digits")
    rng = np.random.default_rng(1)
    for i in range(6):
        raw = rng.integers(0, 256, size=(28, 28)).astype(np.uint8)
        formats.write_pgm(d / f"d_{i}.pgm", raw / 255.0)
    return d


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    """A trained tiny direct-pixel checkpoint + dataset used by several tests."""
    work = tmp_path_factory.mktemp("tinyrun")
    imgdir = work / "imgs"
    imgdir.mkdir()
    rng = np.random.default_rng(3)
    grids = textures.markov_grids(rng, 24, (4, 4), 4)
    for i, g in enumerate(grids):
        formats.write_pgm(imgdir / f"t_{i:02d}.pgm", g / 3.0)
    ds_path = work / "toy.lds"
    assert cli.main(["build-dataset", "--images", str(imgdir), "--direct-pixels", "4",
                     "--out", str(ds_path)]) == 0
    out = work / "run"
    assert cli.main(["train", "--dataset", str(ds_path), "--out", str(out),
                     "--steps", "60", "--batch", "4", "--lr", "0.003",
                     "--dim", "16", "--depths", "1,1,1", "--shorten", "4",
                     "--heads", "2", "--seed", "4"]) == 0
    return {"dataset": ds_path, "ckpt": out / "model.ckpt", "work": work,
            "imgdir": imgdir}


# -- fit-codebook -------------------------------------------------------------

def test_fit_codebook_writes_cbk(image_dir, tmp_path, capsys):
    out = tmp_path / "cb.cbk"
    code, _, _ = run_cli(capsys, "fit-codebook", "--images", str(image_dir),
                         "--vocab", "16", "--patch", "2", "--seed", "1",
                         "--out", str(out))
    assert code == 0
    cb = formats.read_codebook(out)
    assert cb.vocab == 16 and cb.patch_size == 2


def test_fit_codebook_missing_dir_exit2(tmp_path, capsys):
    code, _, err = run_cli(capsys, "fit-codebook", "--images",
                           str(tmp_path / "nope"), "--vocab", "4",
                           "--out", str(tmp_path / "x.cbk"))
    assert code == 2
    line = err.strip().splitlines()[-1]
    assert line.startswith("error:")
    assert "nope" in line


def test_fit_codebook_deterministic(image_dir, tmp_path, capsys):
    digests = []
    for name in ("a.cbk", "b.cbk"):
        out = tmp_path / name
        assert run_cli(capsys, "fit-codebook", "--images", str(image_dir),
                       "--vocab", "8", "--patch", "2", "--seed", "7",
                       "--out", str(out))[0] == 0
        digests.append(hashlib.sha256(out.read_bytes()).hexdigest())
    assert digests[0] == digests[1]


# -- build-dataset ------------------------------------------------------------

def test_build_dataset_direct_pixels_256(digit_dir, tmp_path, capsys):
    out = tmp_path / "d.lds"
    code, _, _ = run_cli(capsys, "build-dataset", "--images", str(digit_dir),
                         "--direct-pixels", "256", "--out", str(out))
    assert code == 0
    ds = formats.read_latent_dataset(out)
    assert ds.vocab == 256 and ds.grid_shape == (28, 28)
    # q=256 keeps 8-bit pixel values intact
    img = formats.read_pgm(sorted(digit_dir.glob("*.pgm"))[0])
    np.testing.assert_array_equal(
        ds.entries[0], np.rint(img * 255).astype(np.uint16)
    )


def test_build_dataset_hflip_doubles(image_dir, tmp_path, capsys):
    cb_path = tmp_path / "cb.cbk"
    run_cli(capsys, "fit-codebook", "--images", str(image_dir), "--vocab", "8",
            "--patch", "2", "--seed", "0", "--out", str(cb_path))
    plain = tmp_path / "plain.lds"
    doubled = tmp_path / "doubled.lds"
    run_cli(capsys, "build-dataset", "--images", str(image_dir),
            "--codebook", str(cb_path), "--out", str(plain))
    run_cli(capsys, "build-dataset", "--images", str(image_dir),
            "--codebook", str(cb_path), "--hflip", "--out", str(doubled))
    assert len(formats.read_latent_dataset(doubled)) == \
        2 * len(formats.read_latent_dataset(plain))


def test_build_dataset_binary_quantization_thresholds(tmp_path, capsys):
    d = tmp_path / "bw"
    d.mkdir()
    img = np.zeros((4, 4), dtype=np.float32)
    img[:, 2:] = 1.0
    formats.write_pgm(d / "half.pgm", img)
    out = tmp_path / "bw.lds"
    run_cli(capsys, "build-dataset", "--images", str(d), "--direct-pixels", "2",
            "--out", str(out))
    ds = formats.read_latent_dataset(out)
    want = (img >= 0.5).astype(np.uint16)
    np.testing.assert_array_equal(ds.entries[0], want)


def test_build_dataset_labels(image_dir, tmp_path, capsys):
    labels = tmp_path / "labels.txt"
    labels.write_text("\n".join(str(i % 3) for i in range(12)) + "\n")
    out = tmp_path / "lab.lds"
    code, _, _ = run_cli(capsys, "build-dataset", "--images", str(image_dir),
                         "--direct-pixels", "4", "--labels", str(labels),
                         "--out", str(out))
    assert code == 0
    ds = formats.read_latent_dataset(out)
    np.testing.assert_array_equal(ds.labels, [i % 3 for i in range(12)])


def test_build_dataset_requires_one_codec(image_dir, tmp_path, capsys):
    code, _, err = run_cli(capsys, "build-dataset", "--images", str(image_dir),
                           "--out", str(tmp_path / "x.lds"))
    assert code == 3 and "error:" in err


# -- train ---------------------------------------------------------------------

def test_train_writes_outputs(tiny_run):
    assert tiny_run["ckpt"].exists()
    loss_csv = (tiny_run["ckpt"].parent / "loss.csv").read_text().splitlines()
    assert loss_csv[0] == "step,loss,L1,L2"
    assert len(loss_csv) == 61


def test_train_resume_matches_uninterrupted(tiny_run, tmp_path, capsys):
    ds = str(tiny_run["dataset"])
    base = ["--dataset", ds, "--batch", "4", "--lr", "0.003", "--dim", "16",
            "--depths", "1,1,1", "--shorten", "4", "--heads", "2", "--seed", "4"]
    full_dir = tmp_path / "full"
    assert run_cli(capsys, "train", *base, "--steps", "40", "--out", str(full_dir))[0] == 0
    half_dir = tmp_path / "half"
    assert run_cli(capsys, "train", *base, "--steps", "20", "--out", str(half_dir))[0] == 0
    resumed_dir = tmp_path / "resumed"
    assert run_cli(capsys, "train", *base, "--steps", "40",
                   "--resume", str(half_dir / "model.ckpt"),
                   "--out", str(resumed_dir))[0] == 0

    full_hist = (full_dir / "loss.csv").read_text().splitlines()
    half_hist = (half_dir / "loss.csv").read_text().splitlines()
    res_hist = (resumed_dir / "loss.csv").read_text().splitlines()
    assert full_hist == half_hist + res_hist[1:]
    # final checkpoints bit-identical
    assert (full_dir / "model.ckpt").read_bytes() == \
        (resumed_dir / "model.ckpt").read_bytes()


def test_train_zero_steps_writes_initial_checkpoint(tiny_run, tmp_path, capsys):
    out = tmp_path / "zero"
    code, _, _ = run_cli(capsys, "train", "--dataset", str(tiny_run["dataset"]),
                         "--steps", "0", "--out", str(out), "--dim", "16",
                         "--depths", "1,1,1", "--shorten", "4", "--heads", "2",
                         "--seed", "4")
    assert code == 0
    model, _, extra = HourglassModel.load(out / "model.ckpt")
    assert extra["step"] == 0
    fresh = HourglassModel(model.config, seed=4)
    for k in fresh.params:
        assert np.array_equal(fresh.params[k], model.params[k])


def test_train_vocab_mismatch_exit3(tiny_run, tmp_path, capsys):
    bigger = tmp_path / "v8.lds"
    ds = formats.read_latent_dataset(tiny_run["dataset"])
    ds.vocab = 8
    formats.write_latent_dataset(bigger, ds)
    code, _, err = run_cli(capsys, "train", "--dataset", str(bigger),
                           "--steps", "1", "--out", str(tmp_path / "o"),
                           "--resume", str(tiny_run["ckpt"]))
    assert code == 3
    line = err.strip().splitlines()[-1]
    assert "8" in line and "4" in line  # names both vocabs


# -- sample / inpaint -----------------------------------------------------------

def test_sample_writes_pgms_and_manifest(tiny_run, tmp_path, capsys):
    out = tmp_path / "samples"
    code, _, _ = run_cli(capsys, "sample", "--checkpoint", str(tiny_run["ckpt"]),
                         "--direct-pixels", "1", "--batch", "4", "--steps", "10",
                         "--seed", "5", "--out", str(out), "--trace")
    assert code == 0
    pgms = sorted(out.glob("sample_*.pgm"))
    assert len(pgms) == 4
    manifest = (out / "manifest.csv").read_text().splitlines()
    assert manifest[0] == "item,stop_step,frozen"
    assert len(manifest) == 5
    assert (out / "trace" / "step_0000" / "sample_000.pgm").exists()


def test_sample_seed_determinism(tiny_run, tmp_path, capsys):
    hashes = []
    for name in ("s1", "s2"):
        out = tmp_path / name
        assert run_cli(capsys, "sample", "--checkpoint", str(tiny_run["ckpt"]),
                       "--direct-pixels", "1", "--batch", "3", "--steps", "8",
                       "--seed", "11", "--out", str(out))[0] == 0
        hashes.append([hashlib.sha256(p.read_bytes()).hexdigest()
                       for p in sorted(out.glob("*.pgm"))])
    assert hashes[0] == hashes[1]


def test_inpaint_zero_mask_is_roundtrip(tiny_run, tmp_path, capsys):
    img_path = sorted(tiny_run["imgdir"].glob("*.pgm"))[0]
    mask_path = tmp_path / "mask0.pgm"
    formats.write_pgm(mask_path, np.zeros((4, 4)))
    out = tmp_path / "inp.pgm"
    code, _, _ = run_cli(capsys, "inpaint", "--checkpoint", str(tiny_run["ckpt"]),
                         "--direct-pixels", "1", "--image", str(img_path),
                         "--mask", str(mask_path), "--out", str(out))
    assert code == 0
    cb = codec.grayscale_codebook(4)
    img = formats.read_pgm(img_path)
    want = codec.decode_grid(codec.encode_grid(img, cb), cb)
    np.testing.assert_allclose(formats.read_pgm(out), want, atol=1 / 255 / 2 + 1e-6)


def test_inpaint_full_mask_matches_unconditional_sample(tiny_run, tmp_path, capsys):
    img_path = sorted(tiny_run["imgdir"].glob("*.pgm"))[0]
    mask_path = tmp_path / "mask1.pgm"
    formats.write_pgm(mask_path, np.ones((4, 4)))
    inp = tmp_path / "full.pgm"
    assert run_cli(capsys, "inpaint", "--checkpoint", str(tiny_run["ckpt"]),
                   "--direct-pixels", "1", "--image", str(img_path),
                   "--mask", str(mask_path), "--out", str(inp),
                   "--steps", "8", "--temp", "1.0:0.5", "--seed", "21")[0] == 0
    smp = tmp_path / "unc"
    assert run_cli(capsys, "sample", "--checkpoint", str(tiny_run["ckpt"]),
                   "--direct-pixels", "1", "--batch", "1", "--steps", "8",
                   "--temp", "1.0:0.5", "--seed", "21", "--out", str(smp))[0] == 0
    assert inp.read_bytes() == (smp / "sample_000.pgm").read_bytes()


def test_inpaint_block_mask_seeds_vary_masked_only(tiny_run, tmp_path, capsys):
    img_path = sorted(tiny_run["imgdir"].glob("*.pgm"))[1]
    mask = np.zeros((4, 4))
    mask[:2, :2] = 1.0
    mask_path = tmp_path / "block.pgm"
    formats.write_pgm(mask_path, mask)
    cb = codec.grayscale_codebook(4)
    img = formats.read_pgm(img_path)
    z_ref = codec.encode_grid(img, cb)
    outputs = []
    for seed in range(5):
        out = tmp_path / f"blk_{seed}.pgm"
        assert run_cli(capsys, "inpaint", "--checkpoint", str(tiny_run["ckpt"]),
                       "--direct-pixels", "1", "--image", str(img_path),
                       "--mask", str(mask_path), "--out", str(out),
                       "--steps", "6", "--seed", str(seed))[0] == 0
        tokens = codec.encode_grid(formats.read_pgm(out), cb)
        np.testing.assert_array_equal(tokens[mask == 0], z_ref[mask == 0])
        outputs.append(tokens.tobytes())
    assert len(set(outputs)) > 1


# -- eval ------------------------------------------------------------------------

def test_eval_reports_metrics(tiny_run, tmp_path, capsys):
    out_csv = tmp_path / "metrics.csv"
    code, out, _ = run_cli(capsys, "eval", "--checkpoint", str(tiny_run["ckpt"]),
                           "--dataset", str(tiny_run["dataset"]),
                           "--batch", "8", "--draws", "16", "--steps", "6",
                           "--seed", "2", "--out", str(out_csv))
    assert code == 0
    metrics = dict(line.split("=") for line in out.strip().splitlines()
                   if "=" in line and not line.startswith("#"))
    for key in ("loss_per_token", "marginal_tv", "mean_stop_step"):
        assert key in metrics
    header, values = out_csv.read_text().splitlines()
    assert "loss_per_token" in header and len(values.split(",")) == len(header.split(","))


def test_eval_vocab_mismatch_exit3(tiny_run, tmp_path, capsys):
    bigger = tmp_path / "v9.lds"
    ds = formats.read_latent_dataset(tiny_run["dataset"])
    ds.vocab = 9
    formats.write_latent_dataset(bigger, ds)
    code, _, err = run_cli(capsys, "eval", "--checkpoint", str(tiny_run["ckpt"]),
                           "--dataset", str(bigger))
    assert code == 3 and "9" in err and "4" in err


# -- config plumbing --------------------------------------------------------------

def _echo_block(out):
    lines = out.splitlines()
    start = next(i for i, l in enumerate(lines) if l.startswith("# gridgen"))
    end = next(i for i, l in enumerate(lines) if l == "# end config")
    return lines[start:end + 1]


def test_config_echo_roundtrip(tiny_run, tmp_path, capsys):
    out1 = tmp_path / "r1"
    code, stdout, _ = run_cli(capsys, "sample", "--checkpoint", str(tiny_run["ckpt"]),
                              "--direct-pixels", "1", "--batch", "2", "--steps", "5",
                              "--temp", "0.9:0.4", "--proportion", "0.5",
                              "--seed", "3", "--out", str(out1))
    assert code == 0
    block = _echo_block(stdout)
    cfg_file = tmp_path / "echo.cfg"
    cfg_file.write_text("\n".join(block) + "\n")

    out2 = tmp_path / "r2"
    # rerun from the echoed config alone, overriding only the output dir
    code, stdout2, _ = run_cli(capsys, "sample", "--config", str(cfg_file),
                               "--out", str(out2))
    assert code == 0
    b1 = [l for l in block if not l.startswith(("out=", "#"))]
    b2 = [l for l in _echo_block(stdout2) if not l.startswith(("out=", "#"))]
    assert b1 == b2
    # and the run itself is identical
    a = [p.read_bytes() for p in sorted(out1.glob("*.pgm"))]
    b = [p.read_bytes() for p in sorted(out2.glob("*.pgm"))]
    assert a == b


def test_config_file_parsing(tmp_path):
    from gridgen.config import parse_config_file

    f = tmp_path / "c.cfg"
    f.write_text("# comment\nsteps=50\n temp = 1.0:0.5 \n\nproportion=0.8 # tail\n")
    assert parse_config_file(f) == {"steps": "50", "temp": "1.0:0.5",
                                    "proportion": "0.8"}


def test_unknown_command_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["frobnicate"])
    assert exc.value.code == 2
