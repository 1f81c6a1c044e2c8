"""Command-line interface.

Exit codes: 0 success, 1 validation/usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .distributions import (
    DEFAULT_OUTER_FACTOR,
    baseline_edge_sampler,
    sample_reweighted_batch,
    sample_test_masks,
    sample_train_masks,
)
from .engine import LN2, TrainConfig, complete_batch, eval_joint_batch, train
from .exceptions import MACError, ParseError, ValidationError
from .harness import (
    AblationConfig,
    Dataset,
    dist_report,
    generate_synthetic,
    load_dataset,
    load_masked,
    load_train_config,
    marginal_nll_suite,
    run_ablation,
    save_dataset,
    save_masked,
)
from .lattice import LatticeSpec, masks_from_bool
from .model import NetworkModel, init_network, load_checkpoint, save_checkpoint
from .protocols import get_protocol, make_rng


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _write(path, text):
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def cmd_dist(args):
    spec = LatticeSpec(args.n)
    protocols = [p.strip() for p in args.protocols.split(",") if p.strip()]
    for p in protocols:
        get_protocol(p)
    mode = "exact" if args.exact else "mc"
    report = dist_report(spec, protocols=protocols, mode=mode, samples=args.samples, rng=make_rng(args.seed))
    _write(args.out, report.to_tsv())
    if args.out not in (None, "-"):
        sys.stdout.write(report.entropy_tsv())
    return 0


def cmd_sample_masks(args):
    spec = LatticeSpec(args.n)
    rng = make_rng(args.seed)
    if args.kind == "test":
        masks = sample_test_masks(args.batch, spec, rng)
    elif args.kind == "train":
        masks = sample_train_masks(args.batch, spec, rng, method=args.method)
    elif args.kind == "train-cr":
        masks = sample_reweighted_batch(args.batch, spec, args.outer_factor, rng, method=args.method)
    else:
        targets, masks = baseline_edge_sampler(args.batch, spec, rng)
    lines = [m.to_bitstring() for m in masks_from_bool(masks)]
    if args.kind == "baseline":
        lines = [f"{b}\t{t}" for b, t in zip(lines, targets.tolist())]
    _write(args.out, "\n".join(lines) + "\n")
    return 0


def cmd_gen_data(args):
    spec = LatticeSpec(args.n, args.k)
    params = {"alpha": args.alpha}
    if args.kind == "mixture":
        params["n_components"] = args.components
    rng = make_rng(args.seed)
    d = generate_synthetic(args.kind, spec, params, rng, args.count + args.test_count)
    save_dataset(Dataset(spec, d.instances[: args.count]), args.out)
    if args.test_out:
        save_dataset(Dataset(spec, d.instances[args.count:]), args.test_out)
    return 0


def cmd_train(args):
    cfg, hidden = load_train_config(args.config) if args.config else (TrainConfig(), (128,))
    if args.objective:
        if args.config and json.loads(Path(args.config).read_text()).get("objective") not in (None, args.objective):
            raise ValidationError("--objective contradicts the config file")
        cfg = TrainConfig(**{**cfg.to_dict(), "objective": args.objective})
    if args.deterministic:
        cfg = TrainConfig(**{**cfg.to_dict(), "record_wall_time": False})
    data = load_dataset(args.data)
    eval_data = load_dataset(args.eval_data).instances if args.eval_data else None
    params = init_network(data.spec, hidden, seed=cfg.seed)
    model, train_log = train(NetworkModel(params), data.instances, cfg, data.spec, make_rng(cfg.seed), eval_data)
    save_checkpoint(model.params, args.out)
    if args.log:
        Path(args.log).write_text(train_log.to_tsv())
    last = train_log.rows[-1]["train_loss"] if train_log.rows else float("nan")
    print(f"trained {cfg.objective} for {cfg.steps} steps; final train loss {last:.6f}")
    return 0


def cmd_eval(args):
    params = load_checkpoint(args.ckpt)
    data = load_dataset(args.data)
    if data.spec != params.spec:
        raise ValidationError("dataset does not match the checkpoint's n_vars/alphabet")
    model = NetworkModel(params)
    w = get_protocol(args.protocol)
    if args.metric == "marginal":
        res = marginal_nll_suite(model, data, w=w, trials=args.trials, rng=make_rng(args.seed))
        print(f"marginal_nll\t{res.nll:.6f}\tnats\tbpd\t{res.bpd:.6f}\tqueries\t{res.n_queries}")
    else:
        nll = -float(eval_joint_batch(model, data.instances, w, make_rng(args.seed)).mean())
        print(f"joint_nll\t{nll:.6f}\tnats\tbpd\t{nll / (data.spec.n_vars * LN2):.6f}")
    return 0


def cmd_complete(args):
    params = load_checkpoint(args.ckpt)
    spec, X, masks = load_masked(args.data)
    if spec != params.spec:
        raise ValidationError("masked data does not match the checkpoint's n_vars/alphabet")
    out = complete_batch(NetworkModel(params), X, masks, make_rng(args.seed))
    if args.out in (None, "-"):
        sys.stdout.write("\n".join(",".join(map(str, r)) for r in out.tolist()) + "\n")
    else:
        save_masked(spec, out, np.ones_like(masks), args.out)
    return 0


def cmd_ablate(args):
    doc = json.loads(Path(args.config).read_text()) if args.config else {}
    cfg = AblationConfig.from_dict(doc)
    report = run_ablation(cfg, n_jobs=1 if args.deterministic else args.jobs)
    _write(args.out, report.to_json() + "\n")
    for arm, v in report.mean_nll().items():
        print(f"{arm}\t{v:.6f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="macarm", description="Mask-tuned arbitrary conditional models over discrete variables")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    d = sub.add_parser("dist", help="induced mask distribution table")
    d.add_argument("--n", type=int, required=True)
    d.add_argument("--protocols", default="rnd,mac")
    g = d.add_mutually_exclusive_group()
    g.add_argument("--exact", action="store_true")
    g.add_argument("--samples", type=int, default=1_000_000)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--out")
    d.set_defaults(func=cmd_dist)

    s = sub.add_parser("sample-masks", help="draw masks from one of the samplers")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--kind", choices=("test", "train", "train-cr", "baseline"), default="test")
    s.add_argument("--batch", type=int, default=16)
    s.add_argument("--outer-factor", type=int, default=DEFAULT_OUTER_FACTOR)
    s.add_argument("--method", choices=("exact", "reference"), default="exact")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_sample_masks)

    gd = sub.add_parser("gen-data", help="synthetic dataset")
    gd.add_argument("--kind", choices=("product", "mixture"), default="mixture")
    gd.add_argument("--n", type=int, required=True)
    gd.add_argument("--k", type=int, default=2)
    gd.add_argument("--components", type=int, default=8)
    gd.add_argument("--alpha", type=float, default=0.5)
    gd.add_argument("--count", type=int, default=1000)
    gd.add_argument("--test-count", type=int, default=0)
    gd.add_argument("--test-out")
    gd.add_argument("--seed", type=int, default=0)
    gd.add_argument("--out", required=True)
    gd.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a network")
    t.add_argument("--objective", choices=("mac-cr", "mac-nocr", "rnd-cr", "rnd-nocr", "ardm"))
    t.add_argument("--data", required=True)
    t.add_argument("--eval-data")
    t.add_argument("--config")
    t.add_argument("--out", required=True)
    t.add_argument("--log")
    t.add_argument("--deterministic", action="store_true")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--metric", choices=("marginal", "joint"), default="marginal")
    e.add_argument("--protocol", default="mac")
    e.add_argument("--trials", type=int, default=1)
    e.add_argument("--seed", type=int, default=0)
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("complete", help="fill in '?' entries of a masked CSV")
    c.add_argument("--ckpt", required=True)
    c.add_argument("--data", required=True)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--out")
    c.set_defaults(func=cmd_complete)

    a = sub.add_parser("ablate", help="run the training-distribution ablation")
    a.add_argument("--config")
    a.add_argument("--out")
    a.add_argument("--jobs", type=int)
    a.add_argument("--deterministic", action="store_true")
    a.set_defaults(func=cmd_ablate)
    return p


def run_command(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_usage() + "macarm: error: a subcommand is required")
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except (ValidationError, ParseError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (MACError, OSError, RuntimeError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2


def main():
    sys.exit(run_command())


if __name__ == "__main__":
    main()
