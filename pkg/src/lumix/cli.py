"""Command-line surface: gen-data, train, sample, decompose, bench.

Every command is deterministic given its seed when run single-threaded
(the default); numeric thread pools are pinned through environment
variables before numpy is first imported, which is why the heavy imports
happen inside the command handlers.

Exit codes: 0 success, 1 usage/config error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

__all__ = ["main"]

log = logging.getLogger("lumix")

_LOG_LEVELS = {"quiet": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems are exit code 1, not argparse's 2
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(1)


def _build_parser() -> _Parser:
    parser = _Parser(prog="lumix",
                     description="Structured multi-property diffusion toolkit.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("--threads", type=int, default=1,
                       help="numeric thread pool size (1 = deterministic)")

    p = sub.add_parser("gen-data", help="render a procedural intrinsic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    common(p)

    p = sub.add_parser("train", help="train a model from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--base", help="base checkpoint (two_phase regime)")
    common(p)

    p = sub.add_parser("sample", help="generate property stacks from a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=4)
    p.add_argument("--steps", type=int, default=None,
                   help="Euler steps (default: the checkpoint's sample_steps)")
    p.add_argument("--seed", type=int, default=0)
    common(p)

    p = sub.add_parser("decompose", help="infer the remaining maps from one map")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--condition", default="color")
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    common(p)

    p = sub.add_parser("bench", help="emit the parameter/FLOPs cost report")
    p.add_argument("--out", required=True)
    p.add_argument("--d", type=int, default=3072)
    p.add_argument("--tokens", type=int, default=1536)
    p.add_argument("--properties", type=int, default=5)
    p.add_argument("--heads", type=int, default=16)
    common(p)

    return parser


def _write_kv(path, pairs) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for key, value in pairs:
            f.write(f"{key}={value}\n")


def _write_maps(subdir, maps: dict) -> None:
    import numpy as np

    from . import ppm

    os.makedirs(subdir, exist_ok=True)
    for name, img in maps.items():
        if name == "depth":
            q = np.round(np.clip(img, 0.0, 1.0) * 65535.0).astype(np.uint16)
            ppm.write_pgm16(os.path.join(subdir, "depth.pgm"), q)
        else:
            ppm.write_ppm(os.path.join(subdir, f"{name}.ppm"), img)


def _metric_row(maps: dict) -> tuple[float, float]:
    import math

    from .metrics import alignment_score, lambertian_residual

    lam = math.nan
    if all(k in maps for k in ("color", "albedo", "irradiance")):
        lam = lambertian_residual(maps["color"], maps["albedo"], maps["irradiance"])
    edge = math.nan
    if "color" in maps and len(maps) > 1:
        edge = alignment_score(maps).mean
    return lam, edge


def _cmd_gen_data(args) -> None:
    from .scenes import generate_dataset, write_dataset

    samples = generate_dataset(args.seed, args.count, size=args.size)
    write_dataset(samples, args.out)
    log.info("wrote %d samples (%dx%d) to %s", args.count, args.size, args.size,
             args.out)


def _cmd_train(args) -> None:
    from .checkpoint import load_checkpoint, save_checkpoint
    from .config import RunConfig
    from .diffusion import DiTConfig, TrainConfig, train
    from .plots import save_loss_curve
    from .scenes import read_dataset

    with open(args.config, "r", encoding="utf-8") as f:
        run = RunConfig.parse(f.read())
    dataset = read_dataset(args.data)
    base_tensors = None
    if args.base is not None:
        _, base_tensors = load_checkpoint(args.base)

    every = max(run.steps // 20, 1)

    def progress(step, value):
        if step % every == 0 or step == run.steps - 1:
            log.info("step %d  loss %.5f", step, value)

    result = train(DiTConfig.from_run(run), TrainConfig.from_run(run), dataset,
                   base_tensors=base_tensors, log=progress)
    parent = os.path.dirname(args.out)
    if parent:
        os.makedirs(parent, exist_ok=True)
    save_checkpoint(args.out, run.canonical(), result.model.state_tensors())
    loss_path = args.out + ".loss.tsv"
    with open(loss_path, "w", encoding="utf-8") as f:
        f.write("step\tloss\n")
        for step, value in result.losses:
            f.write(f"{step}\t{value:.8e}\n")
    save_loss_curve(result.losses, args.out + ".loss.png")
    log.info("checkpoint %s, loss log %s", args.out, loss_path)


def _load_model(path):
    from .checkpoint import load_checkpoint
    from .config import RunConfig
    from .diffusion import DiT

    config_text, tensors = load_checkpoint(path)
    run = RunConfig.parse(config_text)
    return run, DiT.from_checkpoint(config_text, tensors)


def _cmd_sample(args) -> None:
    from .diffusion import sample_batch
    from .plots import save_contact_sheet
    from .rng import child_rng
    from .scenes import random_descriptor

    run, model = _load_model(args.ckpt)
    steps = run.sample_steps if args.steps is None else args.steps
    descriptors = [random_descriptor(child_rng(args.seed, "sample", "descriptor", str(i)))
                   for i in range(args.count)]
    outs = sample_batch(model, descriptors, steps=steps,
                        rng=child_rng(args.seed, "sample", "noise"))
    os.makedirs(args.out, exist_ok=True)
    rows = []
    for i, (desc, maps) in enumerate(zip(descriptors, outs)):
        sub = os.path.join(args.out, str(i))
        _write_maps(sub, maps)
        _write_kv(os.path.join(sub, "descriptor.txt"), [
            ("object_count", desc.object_count), ("shapes", ",".join(desc.shapes)),
            ("palette", desc.palette), ("light", desc.light),
            ("ambient", desc.ambient), ("seed", args.seed),
        ])
        lam, edge = _metric_row(maps)
        rows.append((i, lam, edge))
    with open(os.path.join(args.out, "metrics.tsv"), "w", encoding="utf-8") as f:
        f.write("scene\tlambertian_residual\tedge_alignment\n")
        for i, lam, edge in rows:
            f.write(f"{i}\t{lam:.6f}\t{edge:.6f}\n")
    save_contact_sheet(outs, run.properties, os.path.join(args.out, "contact_sheet.png"))
    log.info("wrote %d scenes to %s", args.count, args.out)


def _cmd_decompose(args) -> None:
    from .config import ConfigError
    from .diffusion import decompose
    from .plots import save_contact_sheet
    from .rng import child_rng
    from .scenes import MAX_DEPTH, read_dataset

    run, model = _load_model(args.ckpt)
    if args.condition not in run.properties:
        raise ConfigError(
            f"model has properties {', '.join(run.properties)}; cannot condition "
            f"on {args.condition!r}"
        )
    dataset = read_dataset(args.data)
    if not 0 <= args.index < len(dataset):
        raise ConfigError(f"--index {args.index} outside dataset of {len(dataset)}")
    s = dataset[args.index]
    if args.condition == "depth":
        given = s.depth / MAX_DEPTH
    elif args.condition == "normal":
        given = (s.normal + 1.0) / 2.0
    else:
        given = getattr(s, args.condition)
    steps = run.sample_steps if args.steps is None else args.steps
    maps = decompose(model, {args.condition: given}, s.descriptor, steps=steps,
                     rng=child_rng(args.seed, "decompose", "noise"))
    remaining = {k: v for k, v in maps.items() if k != args.condition}
    _write_maps(args.out, remaining)
    save_contact_sheet([maps], run.properties,
                       os.path.join(args.out, "contact_sheet.png"))
    log.info("wrote %d inferred maps to %s", len(remaining), args.out)


def _cmd_bench(args) -> None:
    from .metrics import cost_report, cost_report_tsv
    from .plots import save_cost_figure

    rows = cost_report(d=args.d, l_tokens=args.tokens, m=args.properties,
                       heads=args.heads)
    os.makedirs(args.out, exist_ok=True)
    tsv_path = os.path.join(args.out, "cost.tsv")
    with open(tsv_path, "w", encoding="utf-8") as f:
        f.write(cost_report_tsv(rows))
    save_cost_figure(rows, os.path.join(args.out, "cost.png"))
    log.info("wrote %s and cost.png", tsv_path)


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "sample": _cmd_sample,
    "decompose": _cmd_decompose,
    "bench": _cmd_bench,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(args.threads)
    level = os.environ.get("LUMIX_LOG", "info")
    if level not in _LOG_LEVELS:
        sys.stderr.write(f"lumix: LUMIX_LOG must be one of {sorted(_LOG_LEVELS)}\n")
        return 1
    logging.basicConfig(stream=sys.stderr, level=_LOG_LEVELS[level],
                        format="%(levelname)s %(message)s")

    from .checkpoint import CheckpointError
    from .config import ConfigError
    from .diffusion import TrainingDiverged
    from .scenes import DatasetError

    try:
        _COMMANDS[args.command](args)
        return 0
    except ConfigError as e:
        log.error("config error: %s", e)
        return 1
    except (CheckpointError, DatasetError, TrainingDiverged) as e:
        log.error("%s", e)
        return 2
    except (OSError, ValueError) as e:
        log.error("%s", e)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
