"""Command-line entry point: ``fpie {train,enhance,eval,bench,gradcheck}``.

Every run-config key is also a flag (``--loss.tv 200``, ``--gen.blocks 3``);
flags override ``--config``, which overrides the defaults. Boolean keys accept
a bare flag (``--deterministic``) or an explicit value.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import bench, config, data, gradcheck, runtime, train, weightfile
from .metrics import evaluate
from .models import build_generator, enhance, load_model
from .tensor import make_rng

log = logging.getLogger("fpie")

GLOBAL_KEYS = ("seed", "threads", "deterministic")


class CliError(Exception):
    pass


def _add_config_flags(parser: argparse.ArgumentParser, keys) -> None:
    for key in keys:
        default = config.DEFAULTS[key]
        kwargs = {"dest": key, "default": argparse.SUPPRESS, "metavar": "V",
                  "help": f"(default: {config.format_value(default)})"}
        if isinstance(default, bool):
            kwargs.update(nargs="?", const="true")
        parser.add_argument(f"--{key}", **kwargs)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="key = value run-config file")
    _add_config_flags(common, GLOBAL_KEYS)
    run_keys = [k for k in config.DEFAULTS if k not in GLOBAL_KEYS]

    parser = argparse.ArgumentParser(prog="fpie", parents=[common],
                                     description="Train and benchmark photo-enhancement generators.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[common], help="adversarial training")
    _add_config_flags(p, run_keys)
    p.add_argument("--log", help="training log path (default: <out_dir>/train.log)")

    p = sub.add_parser("enhance", parents=[common], help="enhance one PNG")
    p.add_argument("weights")
    p.add_argument("input")
    p.add_argument("output")
    _add_config_flags(p, run_keys)

    p = sub.add_parser("eval", parents=[common], help="PSNR / SSIM / MS-SSIM on a dataset split")
    p.add_argument("weights")
    p.add_argument("dataset", help="dataset root holding <split>/phone and <split>/dslr")
    p.add_argument("--split", default="test", choices=data.SPLITS)
    _add_config_flags(p, run_keys)

    p = sub.add_parser("bench", parents=[common], help="cost / speed / quality frontier")
    p.add_argument("grid", help="grid file, one 'key=value ...' config per line")
    p.add_argument("image", nargs="?", help="PNG whose size (padded to a multiple of 4) sets the timing shape (default 1280x720)")
    p.add_argument("--macs-only", action="store_true", help="skip timing; report MACs/params/memory")
    p.add_argument("--test-data", help="dataset root; its test split adds PSNR / MS-SSIM columns")
    p.add_argument("--baseline", type=int, default=0, help="row index that speedups are relative to")
    p.add_argument("--out", help="directory for bench.tsv and bench.json (default: <out_dir>)")
    _add_config_flags(p, run_keys)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient suite")
    p.add_argument("--list", action="store_true", help="print the checked ops and losses and exit")
    p.add_argument("--only", nargs="+", metavar="NAME", help="run only these checks")
    return parser


def _run_config(args) -> dict:
    ns = vars(args)
    overrides = {k: ns[k] for k in config.DEFAULTS if k in ns}
    cfg = config.load(ns.get("config"), overrides)
    runtime.configure(threads=cfg["threads"], deterministic=cfg["deterministic"])
    return cfg


def _generator_from(weights_path: str, cfg: dict):
    """Build the generator described by the checkpoint manifest (or the run config) and load weights."""
    path = Path(weights_path)
    if not path.is_file():
        raise CliError(f"weight file not found: {path}")
    try:
        gen_cfg = train.read_manifest(path)["gen"]
    except FileNotFoundError:
        log.info("no manifest next to %s; using gen.* keys from the run config", path)
        gen_cfg = config.generator_config(cfg)
    model = build_generator(gen_cfg, make_rng(cfg["seed"]))
    return load_model(model, path)


def _dataset_root(path: str) -> Path:
    root = Path(path)
    if not root.is_dir():
        raise CliError(f"dataset directory not found: {root}")
    return root


# ---------------------------------------------------------------- commands

def cmd_train(args) -> int:
    cfg = _run_config(args)
    tcfg = train.TrainConfig.from_run(cfg)
    spec = data.DegradeSpec(cfg["data.blur_sigma"], cfg["data.saturation_scale"], cfg["data.noise_sigma"],
                            seed=cfg["seed"])
    if cfg["data.root"]:
        root = _dataset_root(cfg["data.root"])
        pairs = list(data.load_pairs(root, "train"))
        test = list(data.load_pairs(root, "test")) if (root / "test").is_dir() else []
    else:
        size = cfg["data.synthetic_size"]
        pairs = data.synthetic_pairs(cfg["data.synthetic_count"], size, seed=cfg["seed"], spec=spec)
        test_spec = data.DegradeSpec(spec.blur_sigma, spec.saturation_scale, spec.noise_sigma,
                                     seed=spec.seed + cfg["data.synthetic_count"])
        test = data.synthetic_pairs(cfg["data.test_count"], size, seed=cfg["seed"] + 1, spec=test_spec)
    out_dir = Path(cfg["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.txt").write_text(config.dump(cfg), encoding="utf-8")
    log_path = args.log or out_dir / "train.log"
    result = train.train(tcfg, pairs, test=test, out_dir=out_dir, log_path=log_path)
    last = result.log[-1]
    print(f"iterations\t{last.iteration}")
    print(f"final_total\t{last.losses.total:.6g}")
    for it, rep in result.evals:
        print(f"eval@{it}\t" + "\t".join(rep.row()))
    for ck in result.checkpoints:
        print(f"checkpoint\t{ck}")
    return 0


def cmd_enhance(args) -> int:
    cfg = _run_config(args)
    model = _generator_from(args.weights, cfg)
    image = data.read_png(args.input)
    out = enhance(model, image)
    data.write_png(args.output, out)
    print(f"{args.output}\t{out.shape[3]}x{out.shape[2]}")
    return 0


def cmd_eval(args) -> int:
    cfg = _run_config(args)
    model = _generator_from(args.weights, cfg)
    pairs = list(data.load_pairs(_dataset_root(args.dataset), args.split))
    if not pairs:
        raise CliError(f"no image pairs in {Path(args.dataset) / args.split}")
    report = evaluate(((enhance(model, p.phone), p.dslr) for p in pairs), mode=cfg["eval.mode"])
    print(report.table())
    return 0


def cmd_bench(args) -> int:
    cfg = _run_config(args)
    grid_path = Path(args.grid)
    if not grid_path.is_file():
        raise CliError(f"grid file not found: {grid_path}")
    configs, weights = bench.parse_grid(grid_path.read_text(encoding="utf-8"))
    shape = bench.HD_SHAPE
    if args.image:
        # generators see the reflection-padded frame, as in enhance
        n, c, h, w = data.read_png(args.image).shape
        m = max(g.multiple for g in configs)
        shape = (n, c, -(-h // m) * m, -(-w // m) * m)
    test = None
    if args.test_data:
        test = list(data.load_pairs(_dataset_root(args.test_data), "test"))
    if not 0 <= args.baseline < len(configs):
        raise CliError(f"--baseline {args.baseline} out of range for {len(configs)} configs")
    frontier = bench.frontier_report(configs, test, shape, repeats=cfg["bench.repeats"],
                                     threads=runtime.effective_threads() or 1, baseline=args.baseline,
                                     macs_only=args.macs_only, weights=weights, seed=cfg["seed"])
    table = frontier.table()
    print(table, end="")
    out = Path(args.out or cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    (out / "bench.tsv").write_text(table, encoding="utf-8")
    (out / "bench.json").write_text(frontier.to_json(), encoding="utf-8")
    if not args.macs_only:
        print("plot\t" + json.dumps(frontier.plot_data()))
    return 0


def cmd_gradcheck(args) -> int:
    names = args.only or list(gradcheck.CHECKS)
    unknown = [n for n in names if n not in gradcheck.CHECKS]
    if unknown:
        raise CliError(f"unknown gradient check(s): {', '.join(unknown)}")
    if args.list:
        print("\n".join(names))
        return 0
    cfg = _run_config(args)
    seeds = tuple(cfg["seed"] + i for i in range(len(gradcheck.DEFAULT_SEEDS)))
    failed = []
    for name in names:
        for seed in seeds:
            res = gradcheck.run_check(name, seed)
            print(res.line(), flush=True)
            if not res.ok:
                failed.append(res)
    if failed:
        worst = {}
        for r in failed:
            worst[r.name] = max(worst.get(r.name, 0.0), r.rel_error)
        for name, err in worst.items():
            print(f"gradient check failed: {name} (max relative error {err:.3e})", file=sys.stderr)
        return 1
    print(f"all {len(names) * len(seeds)} checks passed")
    return 0


COMMANDS = {"train": cmd_train, "enhance": cmd_enhance, "eval": cmd_eval,
            "bench": cmd_bench, "gradcheck": cmd_gradcheck}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (CliError, config.ConfigError, data.DatasetError, weightfile.WeightFileError,
            train.TrainingError, OSError, ValueError) as exc:
        print(f"fpie {args.command}: error: {exc}", file=sys.stderr)
        return 1
