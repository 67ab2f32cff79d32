"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import data as data_mod
from . import losses as L
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .gradcheck import run_suite
from .netpbm import NetpbmError, extension_for, read_image, write_image
from .training import (OracleImputer, TrainConfig, evaluate, impute, metrics_csv, parse_key_values,
                       train)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3
SEPARATOR = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _print_config(command: str, values: dict) -> None:
    print(f"# {command}")
    for key, value in values.items():
        print(f"{key} = {value}")
    sys.stdout.flush()


def _prepare_out_dir(out: Path, force: bool) -> None:
    if out.exists() and any(out.iterdir()) and not force:
        raise FileExistsError(f"{out} exists and is not empty; pass --force to write into it")
    out.mkdir(parents=True, exist_ok=True)


def cmd_gen_data(args) -> int:
    _print_config("gen-data", {"out": args.out, "subjects": args.subjects, "domains": args.domains,
                               "size": args.size, "seed": args.seed, "force": args.force})
    out = Path(args.out)
    _prepare_out_dir(out, args.force)
    samples, registry = data_mod.synth_dataset(args.subjects, args.domains, args.size, args.size, seed=args.seed)
    data_mod.write_dataset(out, samples)
    lines = [f"seed = {args.seed}", f"size = {args.size}", f"domains = {args.domains}",
             "transforms = " + ",".join(registry.names),
             "subjects = " + ",".join(s.subject_id for s in samples)]
    (out / "manifest.txt").write_text("\n".join(lines) + "\n")
    print(f"wrote {len(samples) * args.domains} images to {out}")
    return EXIT_OK


def _load_config(args) -> TrainConfig:
    cfg = TrainConfig()
    if args.config:
        cfg = TrainConfig.from_text(Path(args.config).read_text(), cfg)
    overrides = {}
    for item in args.set or []:
        overrides.update(parse_key_values(item))
    if args.joint_steps is not None:
        overrides["joint_steps"] = args.joint_steps
    if args.seed is not None:
        overrides["seed"] = args.seed
    return cfg.updated(overrides)


def cmd_train(args) -> int:
    cfg = _load_config(args)
    samples = data_mod.load_dataset(args.data)
    first = samples[0].images
    cfg = cfg.updated({"n_domains": first.shape[0], "in_channels": first.shape[1], "image_size": first.shape[2]})
    _print_config("train", {"data": args.data, "out": args.out})
    print(cfg.to_text(), end="")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    split = data_mod.split_by_subject([s.subject_id for s in samples], seed=cfg.seed)
    train_set = data_mod.select(samples, split.train)
    val_set = data_mod.select(samples, split.validation)
    (out / "config.txt").write_text(cfg.to_text())
    (out / "split.txt").write_text("".join(f"{name} = {','.join(ids)}\n" for name, ids in
                                           (("train", split.train), ("validation", split.validation),
                                            ("test", split.test))))
    state, log = train(cfg, train_set, val_set, checkpoint_dir=out)
    save_checkpoint(out / "final.ckpt", state)
    (out / "metrics.csv").write_text(metrics_csv(log))
    print(f"trained {state.step} joint steps; checkpoint {out / 'final.ckpt'}")
    return EXIT_OK


def _parse_inputs(items: list[str]) -> dict[int, str]:
    """``DOMAIN=PATH`` pairs."""
    inputs = {}
    for item in items:
        domain, sep, path = item.partition("=")
        if not sep or not domain.isdigit():
            raise UsageError(f"--inputs entries must look like DOMAIN=PATH, got {item!r}")
        inputs[int(domain)] = path
    return inputs


def cmd_impute(args) -> int:
    inputs = _parse_inputs(args.inputs)
    _print_config("impute", {"ckpt": args.ckpt, "inputs": " ".join(f"{d}={p}" for d, p in sorted(inputs.items())),
                             "target": args.target, "null": ",".join(map(str, args.null)), "out": args.out})
    state = load_checkpoint(args.ckpt)
    N, C, S = state.config.n_domains, state.config.in_channels, state.config.image_size
    if not 0 <= args.target < N:
        raise ValueError(f"target {args.target} out of range for {N} domains")
    images = np.zeros((N, C, S, S))
    available = np.zeros(N, dtype=bool)
    for d, path in inputs.items():
        if not 0 <= d < N:
            raise ValueError(f"input domain {d} out of range for {N} domains")
        img = read_image(path)
        if img.shape != (C, S, S):
            raise ValueError(f"{path}: shape {img.shape} does not match the model's {(C, S, S)}")
        images[d] = img
        available[d] = d != args.target
    sample = data_mod.DomainSample("input", images, available)
    live = data_mod.live_flags(sample, args.target, args.null)
    result = impute(state, sample, args.target, args.null)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_image(out, result)
    lines = []
    for d in range(N):
        status = "target" if d == args.target else "live" if live[d] else \
            "nulled" if d in args.null and available[d] else "missing"
        lines.append(f"{d} {status}")
    out.with_suffix(".txt").write_text("\n".join(lines) + "\n")
    print(f"wrote {out}")
    return EXIT_OK


def montage(rows: list[list[np.ndarray]]) -> np.ndarray:
    """Tile rows of (C, H, W) images with white separators between cells and rows."""
    C, H, W = rows[0][0].shape
    cols = max(len(r) for r in rows)
    canvas = np.ones((C, len(rows) * (H + SEPARATOR) - SEPARATOR, cols * (W + SEPARATOR) - SEPARATOR))
    for i, row in enumerate(rows):
        for j, img in enumerate(row):
            y, x = i * (H + SEPARATOR), j * (W + SEPARATOR)
            canvas[:, y:y + H, x:x + W] = np.clip(img, 0.0, 1.0)
    return canvas


def cmd_evaluate(args) -> int:
    _print_config("evaluate", {"ckpt": args.ckpt, "data": args.data, "out": args.out, "oracle": args.oracle,
                               "montage_subjects": args.montage_subjects})
    if not args.oracle and not args.ckpt:
        raise UsageError("evaluate needs --ckpt unless --oracle is given")
    samples = data_mod.load_dataset(args.data)
    model = OracleImputer() if args.oracle else load_checkpoint(args.ckpt)
    table = evaluate(model, samples)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "eval.csv").write_text(table.to_csv())
    print(table.to_csv(), end="")
    rows = []
    shown = [i for i, s in enumerate(samples) if s.complete][:args.montage_subjects]
    N = samples[0].n_domains
    for k, preds in sorted(table.outputs.items()):
        subset = [i for i, s in enumerate(samples) if s.available[k]]
        for i in shown:
            s = samples[i]
            row = [s.images[d] for d in range(N) if d != k]
            rows.append(row + [preds[subset.index(i)], s.images[k]])
    if rows:
        image = montage(rows)
        write_image(out / f"montage{extension_for(image.shape[0])}", image)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    dtype = np.float64 if args.dtype == "float64" else np.float32
    tolerance = args.tolerance if args.tolerance is not None else (1e-5 if dtype == np.float64 else 1e-3)
    _print_config("gradcheck", {"seed": args.seed, "tolerance": tolerance, "dtype": args.dtype})
    results = run_suite(seed=args.seed, tolerance=tolerance, dtype=dtype)
    for r in results:
        print(f"{r.name:20s} {r.error:.3e} {'ok' if r.passed else 'FAIL'}")
    failed = [r for r in results if not r.passed]
    if failed:
        print("failed: " + ", ".join(f"{r.name} ({r.error:.3e})" for r in failed), file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def cmd_metrics(args) -> int:
    _print_config("metrics", {"a": args.a, "b": args.b})
    a, b = read_image(args.a), read_image(args.b)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    print(f"nmse={L.nmse(a, b):.6g} ssim={L.ssim(a, b):.6g}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="collagan", description="Missing-domain image imputation with a collaborative GAN.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="write a synthetic multi-domain dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--subjects", type=int, default=20)
    p.add_argument("--domains", type=int, default=4)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="pretrain the classifier, then train jointly")
    p.add_argument("--data", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--joint-steps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config entry")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("impute", help="impute one missing domain image")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--inputs", nargs="+", required=True, metavar="DOMAIN=PATH")
    p.add_argument("--target", type=int, required=True)
    p.add_argument("--null", type=int, nargs="*", default=[], help="available domains to null anyway")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_impute)

    p = sub.add_parser("evaluate", help="per-domain NMSE / SSIM table and montage")
    p.add_argument("--ckpt")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--oracle", action="store_true", help="score the ground truth itself")
    p.add_argument("--montage-subjects", type=int, default=2)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("gradcheck", help="finite-difference check of every layer and loss")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tolerance", type=float)
    p.add_argument("--dtype", choices=("float64", "float32"), default="float64")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("metrics", help="NMSE and mean SSIM between two images")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True, help="reference image")
    p.set_defaults(func=cmd_metrics)
    return parser


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except UsageError as err:
        print(err, file=sys.stderr)
        return EXIT_USAGE
    except FloatingPointError as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (OSError, ValueError, KeyError, NetpbmError, CheckpointError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
