"""Command-line surface: fit-codebook, build-dataset, train, sample, inpaint,
eval. Every command echoes its effective configuration (re-parseable via
--config), is deterministic under --seed, and exits nonzero with a single
`error:` line on failure (2 = bad input/file, 3 = inconsistent configuration).
"""

import argparse
import pathlib
import sys

import numpy as np

from . import codec, evaluate, formats, sampling, training
from .config import Option, echo_config, parse_config_file, resolve
from .errors import (
    ConfigError,
    FitError,
    FormatError,
    GridgenError,
    ShapeError,
    SizeError,
    VocabError,
)
from .model import HourglassConfig, HourglassModel


def _list_images(dirpath):
    p = pathlib.Path(dirpath)
    if not p.is_dir():
        raise FileNotFoundError(f"image directory not found: {dirpath}")
    files = sorted(p.glob("*.pgm"))
    if not files:
        raise FitError(f"no .pgm images in {dirpath}")
    return files


def _load_images(dirpath):
    return [formats.read_pgm(f) for f in _list_images(dirpath)]


def _load_codebook_arg(eff, vocab_hint=None):
    if eff.get("codebook"):
        return formats.read_codebook(eff["codebook"])
    if eff.get("direct_pixels"):
        levels = eff["direct_pixels"] if eff["direct_pixels"] > 1 else vocab_hint
        return codec.grayscale_codebook(levels)
    raise ConfigError("need either codebook= or direct_pixels=")


def _schedule_from(eff):
    # short runs shouldn't trip over the default freeze warmup
    return sampling.SampleSchedule(
        max_steps=eff["steps"],
        min_steps=min(eff["min_steps"], eff["steps"]),
        temp_start=eff["temp"][0],
        temp_end=eff["temp"][1],
        proportion=eff["proportion"],
        seed=eff["seed"],
        freeze_enabled=not eff["no_freeze"],
    )


# -- commands ---------------------------------------------------------------


def cmd_fit_codebook(eff):
    images = _load_images(eff["images"])
    cb = codec.fit_codebook(
        images, eff["vocab"], eff["patch"], eff["seed"], max_iter=eff["max_iter"]
    )
    formats.write_codebook(eff["out"], cb)
    print(f"wrote codebook: {eff['out']} (vocab={cb.vocab}, patch={cb.patch_size})")
    return 0


def cmd_build_dataset(eff):
    if bool(eff["codebook"]) == bool(eff["direct_pixels"]):
        raise ConfigError("exactly one of codebook= / direct_pixels= is required")
    images = _load_images(eff["images"])
    cb = _load_codebook_arg(eff)
    labels = None
    if eff["labels"]:
        with open(eff["labels"], "r", encoding="utf-8") as fh:
            labels = [int(line) for line in fh if line.strip()]
        if len(labels) != len(images):
            raise ConfigError(
                f"labels file has {len(labels)} entries for {len(images)} images"
            )
    ds = codec.build_latent_dataset(images, cb, eff["hflip"], labels)
    formats.write_latent_dataset(eff["out"], ds)
    print(
        f"wrote dataset: {eff['out']} (count={len(ds)}, vocab={ds.vocab}, "
        f"grid={ds.grid_shape[0]}x{ds.grid_shape[1]})"
    )
    return 0


def cmd_train(eff):
    ds = formats.read_latent_dataset(eff["dataset"])
    outdir = pathlib.Path(eff["out"])
    outdir.mkdir(parents=True, exist_ok=True)
    ckpt_path = outdir / "model.ckpt"

    tcfg = training.TrainConfig(
        total_steps=eff["steps"],
        unroll_steps=eff["unroll"],
        batch_size=eff["batch"],
        learning_rate=eff["lr"],
        seed=eff["seed"],
        weight_decay=eff["weight_decay"],
        ckpt_every=eff["ckpt_every"],
    )
    resume_tensors = resume_extra = None
    if eff["resume"]:
        model, resume_tensors, resume_extra = HourglassModel.load(eff["resume"])
        if "step" not in resume_extra:
            raise ConfigError(f"{eff['resume']} is not a training checkpoint")
    else:
        mcfg = HourglassConfig(
            vocab=ds.vocab,
            grid_shape=ds.grid_shape,
            model_dim=eff["dim"],
            depths=eff["depths"],
            shorten_factor=eff["shorten"],
            heads=eff["heads"],
            class_count=eff["classes"],
        )
        model = HourglassModel(mcfg, seed=eff["seed"])
    if ds.vocab != model.config.vocab:
        raise ConfigError(
            f"vocab mismatch: dataset has {ds.vocab}, model has "
            f"{model.config.vocab}"
        )

    result = training.train(
        model, ds, tcfg,
        checkpoint_path=str(ckpt_path),
        resume_extra=resume_extra,
        resume_tensors=resume_tensors,
    )
    (outdir / "loss.csv").write_text(
        training.history_to_csv(result.history, tcfg.unroll_steps)
    )
    if len(result.history):
        print(
            f"trained to step {result.final_step}: "
            f"loss {result.history[-1, 1]:.4f}"
        )
    else:
        print(f"no steps to run (already at step {result.final_step})")
    print(f"wrote checkpoint: {ckpt_path}")
    return 0


def cmd_sample(eff):
    model, _, _ = HourglassModel.load(eff["checkpoint"])
    cb = _load_codebook_arg(eff, vocab_hint=model.config.vocab)
    schedule = _schedule_from(eff)
    labels = None if eff["class"] is None else np.full(eff["batch"], eff["class"])
    trace = sampling.sample(model, schedule, eff["batch"], labels)

    outdir = pathlib.Path(eff["out"])
    outdir.mkdir(parents=True, exist_ok=True)
    final = trace.final
    for i in range(eff["batch"]):
        formats.write_pgm(outdir / f"sample_{i:03d}.pgm", codec.decode_grid(final[i], cb))
    manifest = ["item,stop_step,frozen"]
    for i in range(eff["batch"]):
        manifest.append(f"{i},{int(trace.stop_steps[i])},{int(trace.frozen[i])}")
    (outdir / "manifest.csv").write_text("\n".join(manifest) + "\n")
    if eff["trace"]:
        for step in range(trace.steps_run + 1):
            stepdir = outdir / "trace" / f"step_{step:04d}"
            stepdir.mkdir(parents=True, exist_ok=True)
            images = sampling.decode_intermediate(trace, step, cb)
            for i, img in enumerate(images):
                formats.write_pgm(stepdir / f"sample_{i:03d}.pgm", img)
    print(
        f"wrote {eff['batch']} samples to {outdir} "
        f"(steps run: {trace.steps_run}, frozen: {int(trace.frozen.sum())})"
    )
    return 0


def cmd_inpaint(eff):
    model, _, _ = HourglassModel.load(eff["checkpoint"])
    cb = _load_codebook_arg(eff, vocab_hint=model.config.vocab)
    image = formats.read_pgm(eff["image"])
    mask = (formats.read_pgm(eff["mask"]) >= 0.5).astype(np.uint8)
    schedule = _schedule_from(eff)
    out = sampling.inpaint(model, image, mask, cb, schedule, eff["class"])
    formats.write_pgm(eff["out"], out)
    print(f"wrote inpainted image: {eff['out']}")
    return 0


def cmd_eval(eff):
    model, _, _ = HourglassModel.load(eff["checkpoint"])
    ds = formats.read_latent_dataset(eff["dataset"])
    if ds.vocab != model.config.vocab:
        raise ConfigError(
            f"vocab mismatch: dataset has {ds.vocab}, model has "
            f"{model.config.vocab}"
        )
    schedule = _schedule_from(eff)
    report = evaluate.eval_report(
        model, ds, schedule,
        sample_batch=eff["batch"],
        loss_draws=eff["draws"],
        unroll_steps=eff["unroll"],
        seed=eff["seed"],
        class_label=eff["class"],
    )
    lines = [f"{key}={value:.6f}" for key, value in report.items()]
    print("\n".join(lines))
    if eff["out"]:
        header = ",".join(report)
        values = ",".join(f"{v:.6f}" for v in report.values())
        pathlib.Path(eff["out"]).write_text(f"{header}\n{values}\n")
    return 0


# -- wiring -----------------------------------------------------------------

_SAMPLE_OPTS = [
    Option("steps", "int", 100, "sampling steps T"),
    Option("min_steps", "int", 10, "steps before freezing can start"),
    Option("temp", "temps", (1.0, 0.6), "temperature anneal start:end"),
    Option("proportion", "float", 0.8, "fraction of positions updated per step"),
    Option("no_freeze", "bool", False, "disable sample-wise self-stopping"),
    Option("seed", "int", 0, "RNG seed"),
]

COMMANDS = {
    "fit-codebook": (
        cmd_fit_codebook,
        [
            Option("images", "str", required=True, help="directory of .pgm images"),
            Option("vocab", "int", required=True, help="codebook size"),
            Option("patch", "int", 2, "patch size f"),
            Option("seed", "int", 0, "RNG seed"),
            Option("max_iter", "int", 50, "Lloyd iteration cap"),
            Option("out", "str", required=True, help="output .cbk path"),
        ],
    ),
    "build-dataset": (
        cmd_build_dataset,
        [
            Option("images", "str", required=True, help="directory of .pgm images"),
            Option("codebook", "str", help="CBK1 codebook path"),
            Option("direct_pixels", "int", choices=(2, 4, 16, 256),
                   help="pixel-token mode with q gray levels"),
            Option("hflip", "bool", False, "append horizontal mirror of each image"),
            Option("labels", "str", help="file of one class label per image"),
            Option("out", "str", required=True, help="output .lds path"),
        ],
    ),
    "train": (
        cmd_train,
        [
            Option("dataset", "str", required=True, help="LDS1 dataset path"),
            Option("out", "str", required=True, help="output directory"),
            Option("resume", "str", help="training checkpoint to continue from"),
            Option("steps", "int", 1000, "total optimization steps"),
            Option("batch", "int", 8, "batch size"),
            Option("lr", "float", 3e-4, "learning rate"),
            Option("unroll", "int", 2, "denoising unroll steps T"),
            Option("weight_decay", "float", 0.0, "decoupled weight decay"),
            Option("ckpt_every", "int", 0, "periodic checkpoint interval"),
            Option("seed", "int", 0, "RNG seed"),
            Option("dim", "int", 128, "model width"),
            Option("depths", "ints", (2, 4, 2), "pre,shortened,post depths"),
            Option("shorten", "int", 4, "sequence shortening factor k"),
            Option("heads", "int", 4, "attention heads"),
            Option("classes", "int", help="class count for conditioning"),
        ],
    ),
    "sample": (
        cmd_sample,
        [
            Option("checkpoint", "str", required=True, help="model checkpoint"),
            Option("codebook", "str", help="CBK1 codebook for decoding"),
            Option("direct_pixels", "int", 0,
                   help="decode as pixel tokens (value ignored, vocab used)"),
            Option("batch", "int", 16, "number of samples"),
            Option("class", "int", help="class label for conditional models"),
            Option("trace", "bool", False, "write per-step PGMs"),
            Option("out", "str", required=True, help="output directory"),
            *_SAMPLE_OPTS,
        ],
    ),
    "inpaint": (
        cmd_inpaint,
        [
            Option("checkpoint", "str", required=True, help="model checkpoint"),
            Option("codebook", "str", help="CBK1 codebook"),
            Option("direct_pixels", "int", 0,
                   help="decode as pixel tokens (value ignored, vocab used)"),
            Option("image", "str", required=True, help="input .pgm"),
            Option("mask", "str", required=True,
                   help="pixel mask .pgm (bright = regenerate)"),
            Option("class", "int", help="class label for conditional models"),
            Option("out", "str", required=True, help="output .pgm path"),
            Option("steps", "int", 100, "sampling steps T"),
            Option("min_steps", "int", 10, "steps before freezing can start"),
            Option("temp", "temps", (0.4, 0.4), "inpainting temperature"),
            Option("proportion", "float", 0.8, "fraction of masked positions per step"),
            Option("no_freeze", "bool", False, "disable self-stopping"),
            Option("seed", "int", 0, "RNG seed"),
        ],
    ),
    "eval": (
        cmd_eval,
        [
            Option("checkpoint", "str", required=True, help="model checkpoint"),
            Option("dataset", "str", required=True, help="LDS1 dataset path"),
            Option("batch", "int", 64, "sample count for marginal TV"),
            Option("draws", "int", 256, "corruption draws for the loss estimate"),
            Option("unroll", "int", 2, "unroll steps for the loss estimate"),
            Option("class", "int", help="class label for conditional sampling"),
            Option("out", "str", help="optional metrics CSV path"),
            *_SAMPLE_OPTS,
        ],
    ),
}


_COMMAND_HELP = {
    "fit-codebook": "fit a k-means patch codebook over a PGM corpus",
    "build-dataset": "encode a PGM corpus into a token-grid dataset",
    "train": "train the denoising model on a token-grid dataset",
    "sample": "draw unconditional or class-conditioned samples",
    "inpaint": "regenerate the masked region of an image",
    "eval": "desk-scale metrics: loss/token, exact NLL, marginal TV",
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="gridgen",
        description="Token-grid generative modeling pipeline.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (func, options) in COMMANDS.items():
        sp = sub.add_parser(name, help=_COMMAND_HELP[name])
        sp.add_argument("--config", default=None, help="key=value config file")
        for opt in options:
            flag = "--" + opt.name.replace("_", "-")
            if opt.typ == "bool":
                sp.add_argument(flag, dest=opt.name, action="store_true",
                                default=None, help=opt.help)
            else:
                sp.add_argument(flag, dest=opt.name, default=None, help=opt.help)
        sp.set_defaults(func=func, options=options, name=name)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        file_values = parse_config_file(args.config) if args.config else {}
        cli_values = {
            opt.name: getattr(args, opt.name)
            for opt in args.options
            if getattr(args, opt.name) is not None
        }
        eff = resolve(args.options, cli_values, file_values)
        print(echo_config(args.name, args.options, eff))
        return args.func(eff)
    except FileNotFoundError as exc:
        print(f"error: FileNotFound: {exc}", file=sys.stderr)
        return 2
    except (FormatError, ShapeError, FitError, SizeError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, VocabError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    except GridgenError as exc:  # pragma: no cover - safety net
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
