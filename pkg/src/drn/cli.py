"""``drn`` command line: train, eval, upscale, ablate, bounds, gradcheck, synth.

Exit codes: 0 success, 1 usage error, 2 runtime error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .config import ConfigError, load_config
from .errors import ContractError

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2
HELP_WIDTH = 88  # fixed so help text does not depend on the terminal


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage().rstrip()}")


def _formatter(prog):
    return argparse.HelpFormatter(prog, width=HELP_WIDTH, max_help_position=32)


@dataclass
class CliConfig:
    command: str
    settings: dict = field(default_factory=dict)  # TrainConfig keys after config file and flag overlay
    seed: int | None = None


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="drn", formatter_class=_formatter,
                description="Gradient-sensitive dual reconstruction super-resolution toolkit.")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    def cmd(name, help_):
        return sub.add_parser(name, help=help_, description=help_, formatter_class=_formatter)

    def train_flags(s):
        s.add_argument("--config", metavar="FILE", help="key = value settings file")
        s.add_argument("--preset", choices=("paper", "toy"), default="paper", help="base settings (default: paper)")
        s.add_argument("--scale", type=int, choices=(2, 4, 8), help="upscaling factor")
        s.add_argument("--seed", type=int, help="random seed")
        s.add_argument("--iterations", type=int, help="number of training iterations")
        s.add_argument("--data", metavar="DIR", required=True, help="folder of training images")

    s = cmd("train", "train a model")
    train_flags(s)
    s.add_argument("--no-dual", action="store_true", help="drop the dual regression branch")
    s.add_argument("--no-progressive", action="store_true", help="supervise only the final level")
    s.add_argument("--prefetch", type=int, help="batches prepared ahead in a thread (0: strict mode)")
    s.add_argument("--out", metavar="DIR", required=True, help="output folder for metrics.log and final.drn")
    s.add_argument("--log-every", type=int, default=100, metavar="N", help="print every N-th record (default: 100)")

    s = cmd("eval", "score a checkpoint and the bicubic baseline on an image folder")
    s.add_argument("--checkpoint", metavar="FILE", help="model checkpoint (omit for bicubic only)")
    s.add_argument("--data", metavar="DIR", required=True, help="folder of high-resolution images")
    s.add_argument("--scale", type=int, choices=(2, 4, 8), help="upscaling factor (default: checkpoint scale)")
    s.add_argument("--channel", choices=("luma", "rgb"), default="luma", help="scored channels (default: luma)")
    s.add_argument("--shave", type=int, metavar="N", help="border pixels ignored (default: scale)")

    s = cmd("upscale", "upscale one image with a checkpoint")
    s.add_argument("--checkpoint", metavar="FILE", required=True, help="model checkpoint")
    s.add_argument("--input", metavar="FILE", required=True, help="low-resolution image")
    s.add_argument("--output", metavar="FILE", required=True, help="output image (PNG or PNM)")

    s = cmd("ablate", "train and score the four plain/dual/progressive cells")
    train_flags(s)
    s.add_argument("--eval-data", metavar="DIR", required=True, help="folder of held-out images")
    s.add_argument("--report", metavar="FILE", help="also write the report table here")

    s = cmd("bounds", "generalization bounds for a loss table")
    s.add_argument("--table", metavar="FILE", required=True, help="loss table: 'm M' then one row per hypothesis")
    s.add_argument("--delta", type=float, default=0.05, help="confidence parameter (default: 0.05)")
    s.add_argument("--mode", choices=("exhaustive", "monte_carlo"), default="exhaustive",
                   help="complexity estimator (default: exhaustive)")
    s.add_argument("--draws", type=int, default=100_000, help="Monte-Carlo sign draws (default: 100000)")
    s.add_argument("--seed", type=int, default=0, help="Monte-Carlo seed (default: 0)")

    s = cmd("gradcheck", "compare autodiff with central differences")
    s.add_argument("--seed", type=int, default=0, help="seed for the random probes (default: 0)")
    s.add_argument("--step", type=float, default=1e-5, help="finite-difference step (default: 1e-5)")

    s = cmd("synth", "write seeded synthetic texture images")
    s.add_argument("--out", metavar="DIR", required=True, help="output folder")
    s.add_argument("--count", type=int, default=32, help="number of images (default: 32)")
    s.add_argument("--size", type=int, default=128, help="side length in pixels (default: 128)")
    s.add_argument("--seed", type=int, default=0, help="random seed (default: 0)")
    return p


def _train_settings(args) -> CliConfig:
    settings: dict = {}
    if args.config:
        try:
            settings.update(load_config(args.config))
        except OSError as exc:
            raise UsageError(f"cannot read config: {exc}") from None
    flags = {"scale": args.scale, "seed": args.seed, "iterations": args.iterations,
             "prefetch": getattr(args, "prefetch", None)}
    settings.update({k: v for k, v in flags.items() if v is not None})
    if getattr(args, "no_dual", False):
        settings["use_dual"] = False
    if getattr(args, "no_progressive", False):
        settings["progressive"] = False
    return CliConfig(args.command, settings, settings.get("seed"))


def _make_train_config(cli: CliConfig, preset_name: str):
    from .train import preset
    try:
        return preset(preset_name, **cli.settings)
    except ContractError as exc:
        raise UsageError(str(exc)) from None


def _cmd_train(args, out) -> int:
    from .data import Dataset
    from .train import train
    cfg = _make_train_config(_train_settings(args), args.preset)
    ds = Dataset.from_dir(args.data)
    every = max(1, args.log_every)

    def report(rec):
        if rec.iteration % every == 0 or rec.iteration == cfg.iterations - 1:
            print(rec.line(), file=out, flush=True)

    train(ds, cfg, reporter=report, out_dir=args.out)
    print(f"wrote {Path(args.out) / 'final.drn'}", file=out)
    return EXIT_OK


def _cmd_eval(args, out) -> int:
    from .metrics import ChannelMode, EvalConfig
    from .model import load_checkpoint
    from .train import evaluate
    model = load_checkpoint(args.checkpoint) if args.checkpoint else None
    scale = args.scale or (model.scale if model is not None else None)
    if scale is None:
        raise UsageError("eval: --scale is required without --checkpoint")
    if model is not None and scale != model.scale:
        raise UsageError(f"eval: --scale {scale} does not match checkpoint scale {model.scale}")
    shave = scale if args.shave is None else args.shave
    if shave < 0:
        raise UsageError("eval: --shave must be >= 0")
    cfg = EvalConfig(ChannelMode(args.channel), shave)
    out.write(evaluate(model, args.data, scale, cfg).table())
    return EXIT_OK


def _cmd_upscale(args, out) -> int:
    from .imaging import ImagePlane, load_image, save_image
    from .model import upscale, load_checkpoint
    model = load_checkpoint(args.checkpoint)
    v = load_image(args.input).values
    if v.shape[0] == 1:
        v = np.repeat(v, 3, axis=0)
    sr = upscale(model, v)
    save_image(ImagePlane(sr), args.output)
    print(f"wrote {args.output} ({sr.shape[2]}x{sr.shape[1]})", file=out)
    return EXIT_OK


def _cmd_ablate(args, out) -> int:
    from .data import Dataset
    from .train import ablate
    cfg = _make_train_config(_train_settings(args), args.preset)
    report = ablate(Dataset.from_dir(args.data), cfg, Dataset.from_dir(args.eval_data))
    text = report.table()
    out.write(text)
    if args.report:
        Path(args.report).write_text(text)
    return EXIT_OK


def _cmd_bounds(args, out) -> int:
    from .bounds import LossTable, summarize
    if args.draws < 1:
        raise UsageError("bounds: --draws must be >= 1")
    if not 0 < args.delta <= 1:
        raise UsageError("bounds: --delta must be in (0, 1]")
    table = LossTable.read(args.table)
    out.write(summarize(table, args.delta, args.mode, args.draws, args.seed).text())
    return EXIT_OK


def _cmd_gradcheck(args, out) -> int:
    from .gradcheck import THRESHOLD, run_all
    errors = run_all(args.seed, args.step)
    width = max(len(k) for k in errors)
    for name, err in errors.items():
        print(f"{name:<{width}}  {err:.3e}  {'ok' if err < THRESHOLD else 'FAIL'}", file=out)
    worst = max(errors.values())
    print(f"{'MAX':<{width}}  {worst:.3e}", file=out)
    return EXIT_OK if worst < THRESHOLD else EXIT_RUNTIME


def _cmd_synth(args, out) -> int:
    from .data import write_synthetic
    if args.count < 1 or args.size < 8:
        raise UsageError("synth: --count must be >= 1 and --size >= 8")
    paths = write_synthetic(args.out, args.count, args.size, args.seed)
    print(f"wrote {len(paths)} images to {args.out}", file=out)
    return EXIT_OK


COMMANDS = {
    "train": _cmd_train, "eval": _cmd_eval, "upscale": _cmd_upscale, "ablate": _cmd_ablate,
    "bounds": _cmd_bounds, "gradcheck": _cmd_gradcheck, "synth": _cmd_synth,
}


def run(argv=None, out=None, err=None) -> int:
    out = out if out is not None else sys.stdout
    err = err if err is not None else sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return COMMANDS[args.command](args, out)
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    except (UsageError, ConfigError) as exc:
        print(f"usage error: {exc}", file=err)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001
        print(f"error: {type(exc).__name__}: {exc}", file=err)
        return EXIT_RUNTIME


def config_defaults() -> dict:
    """Every accepted config key with its default, for documentation."""
    from .train import TrainConfig
    return asdict(TrainConfig())


def main() -> None:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    sys.exit(run())
