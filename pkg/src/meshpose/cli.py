"""Command-line entry points.

Subcommands: synth, train, transfer, eval, lir-normalize, gradcheck.
``--seed``, ``--config`` (plain-text key=value file) and ``--out-dir``
are accepted everywhere; each command uses the ones it needs.
"""

import argparse
import os
import sys

from . import model, training


def _common(parser):
    parser.add_argument("--seed", type=int, default=None, help="override the seed")
    parser.add_argument("--config", default=None, help="key=value config file")
    parser.add_argument("--out-dir", default="out", help="directory for outputs")


def _load_config(args):
    cfg = (
        training.parse_config(args.config)
        if args.config
        else training.TrainConfig()
    )
    if args.seed is not None:
        from dataclasses import replace

        cfg = replace(cfg, seed=args.seed)
    return cfg


def cmd_synth(args):
    from .synthdata import SplitSpec, make_dataset

    split = SplitSpec(
        held_out_identities=args.held_out_identities,
        held_out_poses=args.held_out_poses,
        train_pairs=args.train_pairs,
        seen_pairs=args.seen_pairs,
        unseen_pairs=args.unseen_pairs,
    )
    ds = make_dataset(
        args.identities,
        args.poses,
        split,
        seed=args.seed if args.seed is not None else 0,
        out_dir=args.out_dir,
        resolution=args.resolution,
        regime=args.regime,
    )
    print(
        f"wrote {len(ds.train)} train / {len(ds.seen)} seen / "
        f"{len(ds.unseen)} unseen pairs under {ds.root}"
    )
    return 0


def cmd_train(args):
    from .synthdata import load_dataset

    cfg = _load_config(args)
    dataset = load_dataset(args.data_dir)
    ckpt, metrics = training.train(cfg, dataset, args.out_dir)
    print(f"checkpoint: {ckpt}")
    print(f"metrics:    {metrics}")
    return 0


def cmd_transfer(args):
    out_path = args.out or os.path.join(args.out_dir, "transfer.obj")
    os.makedirs(os.path.dirname(out_path) or ".", exist_ok=True)
    training.transfer(args.checkpoint, args.identity, args.pose, out_path)
    print(f"wrote {out_path}")
    return 0


def cmd_eval(args):
    from .synthdata import load_dataset

    params = model.load_checkpoint(args.checkpoint)
    dataset = load_dataset(args.data_dir)
    os.makedirs(args.out_dir, exist_ok=True)
    report_path = os.path.join(args.out_dir, f"eval_{args.split}.txt")
    report = training.evaluate(params, args.split, dataset, report_path)
    print(report.format())
    return 0


def cmd_lir_normalize(args):
    from .lir import LirConfig, lir_normalize
    from .mesh import load_obj, save_obj

    params = model.load_checkpoint(args.checkpoint)
    if os.path.isdir(args.targets):
        paths = sorted(
            os.path.join(args.targets, n)
            for n in os.listdir(args.targets)
            if n.endswith(".obj")
        )
    else:
        paths = [line.strip() for line in open(args.targets) if line.strip()]
    targets = [load_obj(p) for p in paths]
    source = load_obj(args.source)
    cfg = LirConfig(
        theta=args.theta,
        max_iters=args.max_iters,
        sample_seed=args.seed if args.seed is not None else 0,
    )
    normalized, report = lir_normalize(targets, source, params, cfg)
    mesh_dir = os.path.join(args.out_dir, "normalized")
    os.makedirs(mesh_dir, exist_ok=True)
    for path, mesh in zip(paths, normalized):
        save_obj(mesh, os.path.join(mesh_dir, os.path.basename(path)))
    report_path = os.path.join(args.out_dir, "lir_report.txt")
    with open(report_path, "w", encoding="ascii") as f:
        f.write(report.format() + "\n")
    print(report.format())
    return 0


def cmd_gradcheck(args):
    from .gradcheck import run_gradcheck

    report = run_gradcheck(seed=args.seed if args.seed is not None else 0)
    print(report.format())
    return 0 if report.passed else 1


def build_parser():
    parser = argparse.ArgumentParser(
        prog="meshpose", description="3D mesh pose transfer toolkit"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic body dataset")
    _common(p)
    p.add_argument("--identities", type=int, default=8)
    p.add_argument("--poses", type=int, default=40)
    p.add_argument("--held-out-identities", type=int, default=2)
    p.add_argument("--held-out-poses", type=int, default=8)
    p.add_argument("--train-pairs", type=int, default=320)
    p.add_argument("--seen-pairs", type=int, default=24)
    p.add_argument("--unseen-pairs", type=int, default=24)
    p.add_argument("--resolution", type=int, default=1)
    p.add_argument("--regime", choices=("wide", "narrow"), default="wide")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model on a synthesized dataset")
    _common(p)
    p.add_argument("--data-dir", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("transfer", help="apply a pose to an identity mesh")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--identity", required=True, help="identity (shape donor) OBJ")
    p.add_argument("--pose", required=True, help="pose donor OBJ")
    p.add_argument("--out", default=None, help="output OBJ (default out-dir/transfer.obj)")
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("eval", help="mean PMD of a checkpoint on a dataset split")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data-dir", required=True)
    p.add_argument("--split", choices=("seen", "unseen", "train"), default="seen")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser(
        "lir-normalize", help="pull a target mesh set toward a source pose space"
    )
    _common(p)
    p.add_argument("--checkpoint", required=True, help="LIR model checkpoint")
    p.add_argument("--source", required=True, help="source pose mesh OBJ")
    p.add_argument(
        "--targets", required=True, help="directory of OBJs or a list file"
    )
    p.add_argument("--theta", type=float, default=0.05)
    p.add_argument("--max-iters", type=int, default=10)
    p.set_defaults(func=cmd_lir_normalize)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    _common(p)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
