"""Operator surface: data generation, training, distillation, probes, checks.

Subcommands: gen-data, train, distill, reconstruct, mask-stats, gradcheck.
Exit codes: 0 success, 2 usage/config error, 1 runtime failure. Every run
echoes its effective config into the output directory so it can be replayed
from (config, seed) alone.
"""

import argparse
import sys
from pathlib import Path

import numpy as np
import torch

from . import checkpoint, config, reconstruct as probe
from .errors import ConfigurationError, FormatError, TrainingAborted
from .gradcheck import TOLERANCE, run_gradcheck
from .masking import MODALITIES, ks_statistic, marginal_cdf, materialize_masks, sample_allocation
from .model import build_model
from .synthdata import random_scene, read_dataset, render, write_dataset
from .trainer import train


def _echo_config(out: Path, text: str) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(text)


def load_trained_model(path: str | Path):
    """Rebuild a model from a checkpoint's config snapshot and load its weights."""
    tensors, meta = checkpoint.load(path)
    values = config.from_text(meta["config"])
    model = build_model(config.model_config(values), seed=values["train.seed"])
    with torch.no_grad():
        for name, p in model.named_parameters():
            key = f"model.{name}"
            if key not in tensors:
                raise FormatError(f"checkpoint {path} is missing tensor {key!r}")
            p.copy_(torch.from_numpy(tensors[key]))
    return model, values, meta


def cmd_gen_data(args, parser) -> int:
    if args.count < 1:
        parser.error("--count must be >= 1")
    cfg = config.resolve(args.config, args.set, seed=args.seed)
    out = Path(args.out)
    _echo_config(out, config.render(cfg))
    samples = [
        render(random_scene(cfg["train.seed"] * 100003 + i, cfg["model.image_size"], cfg["data.n_points"]))
        for i in range(args.count)
    ]
    write_dataset(samples, out)
    read_dataset(out).verify_digests()
    print(f"wrote {len(samples)} samples to {out}")
    return 0


def _run_training(args, parser, mode: str) -> int:
    cfg = config.resolve(args.config, args.set, mode=mode, seed=args.seed)
    text = config.render(cfg)
    out = Path(args.out)
    _echo_config(out, text)
    if not cfg["data.path"]:
        raise ConfigurationError("data.path must point at a generated dataset")
    dataset = read_dataset(cfg["data.path"])

    teacher = None
    if mode == "distill":
        if not cfg["distill.teacher"]:
            raise ConfigurationError("distill.teacher must point at a teacher checkpoint")
        teacher, _, _ = load_trained_model(cfg["distill.teacher"])

    outcome = train(
        config.model_config(cfg),
        config.training_config(cfg),
        dataset,
        out,
        mode=mode,
        teacher=teacher,
        resume=args.resume,
        config_text=text,
    )
    print(f"finished step {outcome.final_step}; checkpoint at {outcome.checkpoint_path}")
    return 0


def cmd_train(args, parser) -> int:
    return _run_training(args, parser, "pretrain")


def cmd_distill(args, parser) -> int:
    return _run_training(args, parser, "distill")


def cmd_reconstruct(args, parser) -> int:
    model, values, _ = load_trained_model(args.checkpoint)
    model.eval()
    mcfg = config.model_config(values)
    dataset = read_dataset(values["data.path"] if not args.data else args.data)
    ids = list(dataset.manifest["ids"])
    if args.sample_id not in ids:
        raise ConfigurationError(f"sample id {args.sample_id!r} not in dataset ({ids[:4]} ...)")
    sample = dataset[ids.index(args.sample_id)]

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    budget = args.budget if args.budget is not None else values["mask.budget"]
    result = probe.run_probe(model, sample, mcfg, args.mode, args.source, budget, seed=args.seed or 0)
    for mod in ("rgb", "depth"):
        probe.write_ppm(out / f"{mod}_grid.ppm", result.panels[mod])
    probe.write_xyz(out / "pred_points.xyz", result.pred_points)
    for mod in ("rgb", "depth", "pc", "total"):
        print(f"masked {mod} mse: {result.metrics[mod]!r}")
    print(f"outputs in {out}")
    return 0


def cmd_mask_stats(args, parser) -> int:
    if args.draws < 1:
        parser.error("--draws must be >= 1")
    sizes = tuple(args.sizes)
    rng = np.random.default_rng(args.seed or 0)
    lams = np.empty((args.draws, 3))
    violations = 0
    for i in range(args.draws):
        plan = materialize_masks(sample_allocation(args.alpha, args.budget, sizes, rng), rng)
        lams[i] = plan.lam
        total = sum(int(m.sum()) for m in plan.masks.values())
        violations += total != args.budget

    lines = [f"draws={args.draws} alpha={args.alpha} budget={args.budget} sizes={sizes}"]
    lines.append(f"budget violations: {violations}")
    edges = np.linspace(0, 1, 11)
    for mod, col in zip(MODALITIES, lams.T):
        hist, _ = np.histogram(col, bins=edges)
        lines.append(f"{mod}: mean lambda = {col.mean():.4f}  hist " + " ".join(str(h) for h in hist))
    ks = ks_statistic(lams[:, 0], marginal_cdf(lams[:, 0], args.alpha))
    lines.append(f"KS distance of rgb lambda to Beta({args.alpha}, {2 * args.alpha}): {ks:.4f}")
    report = "\n".join(lines)
    print(report)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "mask_stats.txt").write_text(report + "\n")
    return 0


def cmd_gradcheck(args, parser) -> int:
    log = run_gradcheck(seed=args.seed or 0)
    width = max(len(k) for k in log.per_group)
    for name, err in sorted(log.per_group.items(), key=lambda kv: -kv[1]):
        print(f"{name:<{width}}  max rel err {err:.3e}")
    print(f"overall max rel err {log.max_rel_err:.3e} (tolerance {TOLERANCE:g})")
    print("PASS" if log.passed else "FAIL")
    return 0 if log.passed else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mmmae", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_out=True):
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config key (repeatable)")
        p.add_argument("--seed", type=int, default=None)
        if needs_out:
            p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("gen-data", help="render a synthetic RGB-D dataset")
    common(p)
    p.add_argument("--count", type=int, required=True)
    p.set_defaults(fn=cmd_gen_data)

    for name, fn in (("train", cmd_train), ("distill", cmd_distill)):
        p = sub.add_parser(name, help=f"run {name}")
        common(p)
        p.add_argument("--resume", action="store_true", help="continue from <out>/checkpoint.bin")
        p.set_defaults(fn=fn)

    p = sub.add_parser("reconstruct", help="cross-modal reconstruction probes")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--sample-id", required=True)
    p.add_argument("--mode", choices=probe.MODES, required=True)
    p.add_argument("--source", choices=MODALITIES, default="depth")
    p.add_argument("--budget", type=int, default=None, help="visible budget (defaults to the checkpoint's)")
    p.add_argument("--data", help="dataset dir (defaults to the checkpoint's data.path)")
    p.set_defaults(fn=cmd_reconstruct)

    p = sub.add_parser("mask-stats", help="Dirichlet allocation statistics")
    common(p, needs_out=False)
    p.add_argument("--out", default=None)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--budget", type=int, default=96)
    p.add_argument("--draws", type=int, default=10000)
    p.add_argument("--sizes", type=int, nargs=3, default=[196, 196, 196])
    p.set_defaults(fn=cmd_mask_stats)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    common(p, needs_out=False)
    p.set_defaults(fn=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args, parser)
    except (ConfigurationError, FormatError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (TrainingAborted, ValueError, OSError, RuntimeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
