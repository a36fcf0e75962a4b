"""Command-line entry point.

Exit codes: 0 success, 1 user error (bad flags or input files), 2 internal failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import torch

from .evaluation import ABLATION_AXES, evaluate_benchmark, format_ablation, format_table, run_ablation, write_results
from .forward import MaskSet, compress, generate_masks, normalize_measurement
from .network import NetworkConfig, load_checkpoint
from .tensor_io import TensorFormatError, load_tensor, load_video, save_tensor
from .training import TrainingConfig, load_config, save_config, train

log = logging.getLogger("sci_unfold")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _existing(path: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise UsageError(f"input not found: {path}")
    return p


def _widths(text: str) -> tuple:
    try:
        w = tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"widths must be three comma-separated ints, got {text!r}")
    if len(w) != 3:
        raise argparse.ArgumentTypeError(f"widths must be three comma-separated ints, got {text!r}")
    return w


def build_parser() -> argparse.ArgumentParser:
    shared = _Parser(add_help=False)
    shared.add_argument("--seed", type=int, help="seed for every random draw (default: config value, else 0)")
    shared.add_argument("--config", help="JSON config with 'training' and/or 'network' sections")
    shared.add_argument("--device", default="cpu", help="torch device, e.g. cpu or cuda:0")
    shared.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="sci-unfold", description="Dense unfolding reconstruction for video snapshot compressive imaging")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("genmask", parents=[shared], help="generate random binary masks")
    p.add_argument("--frames", "-B", type=int, default=8)
    p.add_argument("--height", "-H", type=int, default=256)
    p.add_argument("--width", "-W", type=int, default=256)
    p.add_argument("--density", type=float, default=0.5)
    p.add_argument("--out", required=True)

    p = sub.add_parser("simulate", parents=[shared], help="synthesise a measurement from ground-truth frames")
    p.add_argument("--gt", required=True, help="frame directory or tensor file (B, H, W)")
    p.add_argument("--masks", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--out-norm", help="normalised measurement path (default: <out>_norm.ten)")
    p.add_argument("--noise-sigma", type=float, default=0.0)

    p = sub.add_parser("train", parents=[shared], help="train a network")
    p.add_argument("--corpus", help="directory tree of frame sequences (overrides training.source_dir)")
    p.add_argument("--masks", help="mask tensor; generated from --seed when absent")
    p.add_argument("--out", required=True, help="checkpoint/output directory")
    p.add_argument("--log", help="JSON-lines training log (default: <out>/train_log.jsonl)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--n-clips", type=int)
    p.add_argument("--max-steps", type=int)
    p.add_argument("--phases", "-K", type=int)
    p.add_argument("--widths", type=_widths)
    p.add_argument("--conv-mode", choices=("3d", "2d"))

    p = sub.add_parser("reconstruct", parents=[shared], help="reconstruct frames from a measurement")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--measurement", required=True)
    p.add_argument("--masks", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--clamp", action="store_true", help="clamp the output to [0, 1]")

    p = sub.add_parser("evaluate", parents=[shared], help="score a checkpoint on a benchmark directory")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--bench", required=True)
    p.add_argument("--json", help="write machine-readable results here")
    p.add_argument("--table", help="write the text table here as well as to stdout")
    p.add_argument("--per-measurement", action="store_true", help="PSNR over whole blocks instead of per frame")

    p = sub.add_parser("ablate", parents=[shared], help="materialise (and optionally train) an ablation grid")
    p.add_argument("--axis", required=True, choices=ABLATION_AXES)
    p.add_argument("--budget", type=int, default=0, help="optimizer steps per variant; 0 checks structure only")
    p.add_argument("--corpus")
    p.add_argument("--bench")
    p.add_argument("--masks")
    p.add_argument("--out", help="write the comparison table here")
    return parser


def _load_masks(path) -> MaskSet:
    try:
        return MaskSet(load_tensor(_existing(path)))
    except ValueError as exc:
        raise UsageError(f"bad mask file {path}: {exc}") from exc


def _configs(args) -> tuple[TrainingConfig, NetworkConfig]:
    if args.config:
        return load_config(_existing(args.config))
    return TrainingConfig(), NetworkConfig()


def _seed_of(args, default: int = 0) -> int:
    return args.seed if args.seed is not None else default


def _seed(seed: int) -> None:
    torch.manual_seed(seed)
    np.random.seed(seed % 2**32)


def cmd_genmask(args) -> None:
    masks = generate_masks(args.frames, args.height, args.width, args.density, _seed_of(args))
    save_tensor(args.out, masks.masks)
    log.info("wrote %s masks to %s", masks.shape, args.out)


def cmd_simulate(args) -> None:
    gt_path = _existing(args.gt)
    masks = _load_masks(args.masks)
    gt = load_video(gt_path).astype(np.float64)
    if gt.shape != masks.shape:
        raise UsageError(f"ground truth {gt.shape} does not match masks {masks.shape}")
    noise = None
    if args.noise_sigma > 0:
        noise = args.noise_sigma * np.random.default_rng(_seed_of(args)).standard_normal(gt.shape[1:])
    y = compress(gt, masks, noise)
    out = Path(args.out)
    out_norm = Path(args.out_norm) if args.out_norm else out.with_name(out.stem + "_norm" + (out.suffix or ".ten"))
    save_tensor(out, y.astype(np.float32))
    save_tensor(out_norm, normalize_measurement(y, masks).astype(np.float32))
    log.info("wrote measurement %s and normalised measurement %s", out, out_norm)


def cmd_train(args) -> None:
    tcfg, ncfg = _configs(args)
    overrides = {k: v for k, v in {
        "epochs": args.epochs, "batch": args.batch, "base_lr": args.lr, "n_clips": args.n_clips,
        "max_steps": args.max_steps, "seed": args.seed,
        "source_dir": args.corpus,
    }.items() if v is not None}
    tcfg = replace(tcfg, **overrides)
    net_over = {k: v for k, v in {"K": args.phases, "widths": args.widths, "conv_mode": args.conv_mode}.items()
                if v is not None}
    ncfg = replace(ncfg, **net_over)
    if not tcfg.source_dir:
        raise UsageError("no corpus given (--corpus or training.source_dir in --config)")
    _existing(tcfg.source_dir)
    if args.masks:
        masks = _load_masks(args.masks)
        mask_source = str(args.masks)
    else:
        masks = generate_masks(*tcfg.block, 0.5, tcfg.seed)
        mask_source = f"generated(seed={tcfg.seed})"
    log.info("training config: %s", json.dumps(tcfg.to_dict()))
    log.info("network config: %s", json.dumps(ncfg.to_dict()))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_tensor(out / "masks.ten", masks.masks)
    save_config(out / "config.json", tcfg, ncfg)
    _seed(tcfg.seed)
    train(tcfg, ncfg, masks, out_dir=out, log_path=args.log or out / "train_log.jsonl",
          device=args.device, mask_source=mask_source)


def cmd_reconstruct(args) -> None:
    ckpt = _existing(args.ckpt)
    y = load_tensor(_existing(args.measurement)).astype(np.float64)
    masks = _load_masks(args.masks)
    if y.shape != masks.shape[1:]:
        raise UsageError(f"measurement {y.shape} does not match masks {masks.shape}")
    _seed(_seed_of(args))
    net = load_checkpoint(ckpt, device=args.device)
    x = net.reconstruct(y, masks.masks, clamp=args.clamp).cpu().numpy()
    save_tensor(args.out, x.astype(np.float32))
    log.info("wrote reconstruction %s to %s", x.shape, args.out)


def cmd_evaluate(args) -> None:
    ckpt, bench = _existing(args.ckpt), _existing(args.bench)
    _seed(_seed_of(args))
    net = load_checkpoint(ckpt, device=args.device)
    results, avg = evaluate_benchmark(net, bench, per_measurement=args.per_measurement)
    table = format_table(results, avg)
    sys.stdout.write(table)
    if args.table:
        Path(args.table).write_text(table)
    if args.json:
        write_results(args.json, results, avg)


def cmd_ablate(args) -> None:
    tcfg, ncfg = _configs(args)
    tcfg = replace(tcfg, seed=_seed_of(args, tcfg.seed))
    masks = None
    if args.budget > 0:
        for flag in ("corpus", "bench"):
            if not getattr(args, flag):
                raise UsageError(f"--{flag} is required when --budget > 0")
            _existing(getattr(args, flag))
        masks = _load_masks(args.masks) if args.masks else generate_masks(*tcfg.block, 0.5, tcfg.seed)
    _seed(tcfg.seed)
    variants = run_ablation(args.axis, ncfg, args.budget, tcfg, masks, args.corpus, args.bench, args.device)
    table = format_ablation(args.axis, variants)
    sys.stdout.write(table)
    if args.out:
        Path(args.out).write_text(table)


COMMANDS = {
    "genmask": cmd_genmask,
    "simulate": cmd_simulate,
    "train": cmd_train,
    "reconstruct": cmd_reconstruct,
    "evaluate": cmd_evaluate,
    "ablate": cmd_ablate,
}


def run_command(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (FileNotFoundError, TensorFormatError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: invalid input: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        log.exception("internal failure")
        print(f"internal error: {exc}", file=sys.stderr)
        return 2
    return 0


def main() -> None:
    sys.exit(run_command(sys.argv[1:]))


if __name__ == "__main__":
    main()
