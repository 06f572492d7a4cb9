"""Command-line entrypoint.

Subcommands: gen-data, pretrain, train, eval, ablate, edit, export-routes,
serve. Every run requires a seed (flag or config file) and writes
run_manifest.json with the fully resolved configuration.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import __version__
from .scenegen import DatasetConfig, build_dataset, load_dataset, load_png
from .training import TrainConfig, pretrain_autoencoder, train
from .evaluation import EvalConfig, evaluate, export_routes, run_ablation

ENV_DATA_ROOT = "TIMGAN_DATA_ROOT"


class UsageError(Exception):
    pass


def _data_root(args) -> Path:
    data = args.data or os.environ.get(ENV_DATA_ROOT)
    if not data:
        raise UsageError("no dataset path: pass --data or set TIMGAN_DATA_ROOT")
    return Path(data)


def _resolve_seed(args, config_seed=None) -> int:
    if args.seed is not None:
        return args.seed
    if config_seed is not None:
        return config_seed
    raise UsageError("no seed given: pass --seed or put one in the config file")


def _write_run_manifest(out_dir: Path, command: str, config: dict, seed: int) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "version": f"timgan-{__version__}",
        "seed": seed,
        "config": config,
    }
    (out_dir / "run_manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def _load_train_config(args) -> TrainConfig:
    if args.config:
        cfg = TrainConfig.from_json(args.config)
        seed = _resolve_seed(args, cfg.seed)
        cfg = replace(cfg, seed=seed)
    else:
        seed = _resolve_seed(args)
        cfg = TrainConfig(seed=seed)
    if args.tau is not None:
        cfg = replace(cfg, tau=args.tau)
    return cfg


def cmd_gen_data(args) -> int:
    if args.config:
        raw = json.loads(Path(args.config).read_text())
        raw["seed"] = _resolve_seed(args, raw.get("seed"))
    else:
        raw = {
            "train": args.train_size, "test": args.test_size,
            "seed": _resolve_seed(args), "canvas": 64,
        }
    cfg = DatasetConfig(**raw)
    root = _data_root(args) if (args.data or os.environ.get(ENV_DATA_ROOT)) else None
    out = Path(args.out) if args.out else root
    if out is None:
        raise UsageError("gen-data needs --out or --data")
    build_dataset(cfg, out)
    _write_run_manifest(out, "gen-data", asdict(cfg), cfg.seed)
    print(f"wrote dataset to {out}")
    return 0


def cmd_pretrain(args) -> int:
    cfg = _load_train_config(args)
    samples = load_dataset(_data_root(args), "train")
    out = Path(args.out)
    ckpt = pretrain_autoencoder(samples, cfg, out)
    _write_run_manifest(out, "pretrain", asdict(cfg), cfg.seed)
    print(f"pretrained autoencoder at {ckpt}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_train_config(args)
    samples = load_dataset(_data_root(args), "train")
    out = Path(args.out)
    if args.ckpt:
        pretrained = Path(args.ckpt)
    else:
        pretrained = pretrain_autoencoder(samples, cfg, out / "pretrain")
    ckpt = train(samples, cfg, pretrained, out)
    _write_run_manifest(out, "train", asdict(cfg), cfg.seed)
    print(f"trained model at {ckpt}")
    return 0


def cmd_eval(args) -> int:
    seed = _resolve_seed(args)
    samples = load_dataset(_data_root(args), args.split)
    cfg = EvalConfig(seed=seed, pool_size=args.pool_size)
    out = Path(args.out) if args.out else Path(args.ckpt).parent
    report = evaluate(args.ckpt, samples, cfg, report_path=out / "report.json")
    _write_run_manifest(out, "eval", {"pool_size": cfg.pool_size, "split": args.split}, seed)
    rs = " ".join(f"RS@{n}={v:.4f}" for n, v in report.rs.items())
    print(f"frechet={report.frechet:.6f} {rs}")
    return 0


def cmd_ablate(args) -> int:
    cfg = _load_train_config(args)
    root = _data_root(args)
    train_samples = load_dataset(root, "train")
    test_samples = load_dataset(root, "test")
    eval_cfg = EvalConfig(seed=cfg.seed, pool_size=args.pool_size)
    out = Path(args.out)
    report = run_ablation(
        args.variant, train_samples, test_samples, cfg, eval_cfg, out,
        pretrained=args.ckpt,
    )
    _write_run_manifest(out / args.variant, "ablate", asdict(cfg), cfg.seed)
    print(f"[{args.variant}] frechet={report.frechet:.6f} RS@1={report.rs[1]:.4f}")
    return 0


def cmd_edit(args) -> int:
    import torch
    from PIL import Image

    from .checkpoint import load_checkpoint

    seed = _resolve_seed(args)
    model = load_checkpoint(args.ckpt)
    model.config.hard_eval = True
    x = torch.from_numpy(load_png(args.image))
    result = model.edit(x, args.text, rng=None)

    out = Path(args.out)
    arr = np.round(result.y_hat.detach().numpy().transpose(1, 2, 0) * 255.0).astype(np.uint8)
    Image.fromarray(arr, "RGB").save(out, format="PNG")

    mask = result.mask.detach().numpy()[0]
    scale = model.config.canvas // mask.shape[0]
    mask_img = np.round(np.kron(mask, np.ones((scale, scale))) * 255.0).astype(np.uint8)
    mask_path = out.with_suffix(".mask.png")
    Image.fromarray(mask_img, "L").save(mask_path, format="PNG")
    _write_run_manifest(out.parent, "edit", {"text": args.text, "image": str(args.image)}, seed)
    print(f"wrote {out} and {mask_path}")
    return 0


def cmd_export_routes(args) -> int:
    seed = _resolve_seed(args)
    samples = load_dataset(_data_root(args), args.split)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    export_routes(args.ckpt, samples, out)
    _write_run_manifest(out.parent, "export-routes", {"split": args.split}, seed)
    print(f"wrote {out}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    seed = _resolve_seed(args)
    app = create_app(args.ckpt)
    _write_run_manifest(Path("."), "serve", {"host": args.host, "port": args.port}, seed)
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="timgan", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, data=True, ckpt=False, out=True):
        p.add_argument("--seed", type=int, default=None, help="master random seed")
        p.add_argument("--config", type=str, default=None, help="JSON config file")
        if data:
            p.add_argument("--data", type=str, default=None,
                           help=f"dataset root (default ${ENV_DATA_ROOT})")
        if ckpt:
            p.add_argument("--ckpt", type=str, default=None, help="checkpoint directory")
        if out:
            p.add_argument("--out", type=str, default=None, help="output path")

    p = sub.add_parser("gen-data", help="generate the synthetic edit dataset")
    common(p)
    p.add_argument("--train-size", type=int, default=2000)
    p.add_argument("--test-size", type=int, default=200)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("pretrain", help="pretrain the image autoencoder")
    common(p)
    p.add_argument("--tau", type=float, default=None)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("train", help="end-to-end conditional GAN training")
    common(p, ckpt=True)
    p.add_argument("--tau", type=float, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="compute frechet and RS@N on a split")
    common(p, ckpt=True)
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.add_argument("--pool-size", type=int, default=100)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train and evaluate an ablation variant")
    common(p, ckpt=True)
    p.add_argument("--variant", choices=("full", "no_where", "no_how", "no_text_adaptive"),
                   required=True)
    p.add_argument("--pool-size", type=int, default=100)
    p.add_argument("--tau", type=float, default=None)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("edit", help="apply one instruction to one image")
    common(p, data=False, ckpt=True)
    p.add_argument("--image", type=str, required=True, help="input PNG")
    p.add_argument("--text", type=str, required=True, help="instruction text")
    p.set_defaults(func=cmd_edit)

    p = sub.add_parser("export-routes", help="dump route parameters to CSV")
    common(p, ckpt=True)
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.set_defaults(func=cmd_export_routes)

    p = sub.add_parser("serve", help="run the interactive editing service")
    common(p, data=False, ckpt=True, out=False)
    p.add_argument("--host", type=str, default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    except Exception as exc:  # runtime failure
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
