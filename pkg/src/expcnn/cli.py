"""Command-line interface: generate / train / eval / gradcheck / params.

Every subcommand is deterministic given its flags; all randomness flows
from explicit --seed values. Exit codes: 0 success, 1 runtime or data
error, 2 flag misuse.
"""

from __future__ import annotations

import argparse
import sys

from .data import load_directory, synth_generate
from .errors import ExpcnnError
from .layers import ModelConfig, default_conv_strides, param_count
from .model_io import load_model, save_model
from .training import TrainConfig, evaluate, gradient_check, render_report, train

# Published totals for two stock architectures, printed for scale context.
ALEXNET_PARAMS = 61_000_000
RESNET50_PARAMS = 25_600_000

TINY_CONV = ModelConfig("conv", (8, 8, 1), (4, 3), (1, 2))
TINY_DENSE = ModelConfig("dense", (4, 4, 1), dense_hidden=(5,))


def _int_list(text: str) -> tuple[int, ...]:
    try:
        values = tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not a comma-separated int list")
    if not values or any(v < 1 for v in values):
        raise argparse.ArgumentTypeError(f"{text!r} must list positive integers")
    return values


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="expcnn",
        description="Train and run a small exposure-distortion image classifier.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic pristine/distorted corpus")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--count", type=int, default=100, help="images per class")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=128, help="square image size")

    p = sub.add_parser("train", help="train a model on a directory of PPM images")
    p.add_argument("--data", required=True, help="directory of pri.*/exp.* PPM files")
    p.add_argument("--arch", choices=("conv", "dense"), default="conv")
    p.add_argument("--input-size", type=int, default=128)
    p.add_argument("--channels", type=_int_list, default=(768, 384),
                   help="conv feature maps, e.g. 768,384")
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--batch", type=int, default=128)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--split", type=float, default=0.8, help="train fraction")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="model file to write")
    p.add_argument("--report", help="TSV report file to write")

    p = sub.add_parser("eval", help="evaluate a saved model on a directory")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)

    p = sub.add_parser("gradcheck", help="finite-difference check of all gradients")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--arch", choices=("conv", "dense"),
                   help="check one variant (default: both)")

    p = sub.add_parser("params", help="print the exact learnable-parameter count")
    p.add_argument("--arch", choices=("conv", "dense"), default="conv")
    p.add_argument("--input-size", type=int, default=128)
    p.add_argument("--channels", type=_int_list, default=(768, 384))
    p.add_argument("--hidden", type=_int_list, default=(768,))
    return parser


def _model_config(arch: str, input_size: int, channels, hidden=(768,)) -> ModelConfig:
    size = (input_size, input_size, 3)
    if arch == "conv":
        return ModelConfig("conv", size, channels, default_conv_strides(len(channels)))
    return ModelConfig("dense", size, dense_hidden=hidden)


def cmd_generate(args) -> int:
    written = synth_generate(args.out, args.count, args.seed, args.size)
    print(f"wrote {written} image files and manifest.tsv under {args.out}")
    return 0


def cmd_train(args) -> int:
    dataset = load_directory(args.data, args.input_size)
    config = _model_config(args.arch, args.input_size, args.channels)
    train_config = TrainConfig(
        learning_rate=args.lr,
        batch_size=args.batch,
        epochs=args.epochs,
        train_fraction=args.split,
        seed=args.seed,
    )
    params, report = train(config, train_config, dataset)
    print(f"train\t{report.train_size}\ttest\t{report.test_size}")
    text = render_report(report)
    sys.stdout.write(text)
    if args.report:
        with open(args.report, "w", encoding="ascii") as fh:
            fh.write(text)
    if args.out:
        save_model(args.out, config, params)
    return 0


def cmd_eval(args) -> int:
    config, params = load_model(args.model)
    h, w, _ = config.input_size
    dataset = load_directory(args.data, (h, w))
    loss, accuracy = evaluate(config, params, dataset)
    print(f"{loss:.4f}\t{accuracy:.4f}")
    return 0


def cmd_gradcheck(args) -> int:
    configs = {"conv": TINY_CONV, "dense": TINY_DENSE}
    if args.arch:
        configs = {args.arch: configs[args.arch]}
    all_passed = True
    for variant, config in configs.items():
        report = gradient_check(config, args.seed)
        for layer, err in report.layer_errors.items():
            print(f"{variant}.{layer}\t{err:.3e}")
        all_passed = all_passed and report.passed
    return 0 if all_passed else 1


def cmd_params(args) -> int:
    config = _model_config(args.arch, args.input_size, args.channels, args.hidden)
    print(f"model_params\t{param_count(config)}")
    print(f"alexnet_reference\t{ALEXNET_PARAMS}")
    print(f"resnet50_reference\t{RESNET50_PARAMS}")
    return 0


_COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "params": cmd_params,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ExpcnnError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entrypoint() -> None:
    sys.exit(main())
