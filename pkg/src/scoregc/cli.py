"""Command-line front end.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
Configuration comes from an optional JSON file (``--config``) with flags
taking precedence; every run writes the resolved configuration to
``<output>.config.json``.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import zlib
from pathlib import Path

import numpy as np

from .classifier import classify_dataset, read_predictions_csv, write_predictions_csv
from .data import (AnalyticGaussianScore, TensorFileError, gen_two_gaussians, gen_two_moons,
                   load_dataset, save_dataset)
from .likelihood import LikelihoodConfig, LikelihoodError, log_likelihood_multi
from .metrics import evaluation_report
from .score_model import CheckpointError, load_checkpoint, save_checkpoint
from .sde import SdeSpec
from .sweep import compare_sde_families, format_table
from .training import TrainConfig, train

log = logging.getLogger("scoregc")


class ConfigError(Exception):
    pass


SECTIONS = {
    "sde": {f.name for f in dataclasses.fields(SdeSpec)},
    "train": {f.name for f in dataclasses.fields(TrainConfig)},
    "likelihood": {f.name for f in dataclasses.fields(LikelihoodConfig)},
}
TOP_LEVEL = {"seed", "dataset", "test_dataset", "checkpoint", "output", "oracle", "classes", "families", "limit"}


def substream_seed(seed: int, name: str) -> int:
    """Derive an independent 32-bit seed for a named component."""
    ss = np.random.SeedSequence([int(seed), zlib.crc32(name.encode())])
    return int(ss.generate_state(1)[0])


def resolve_config(file_cfg: dict, overrides: dict) -> dict:
    """Merge file config and flag overrides (flags win), rejecting unknown keys."""
    cfg = {"seed": 0, "sde": {}, "train": {}, "likelihood": {}}
    for src in (file_cfg, overrides):
        for key, val in src.items():
            if key in SECTIONS:
                if not isinstance(val, dict):
                    raise ConfigError(f"config section {key!r} must be an object")
                bad = set(val) - SECTIONS[key]
                if bad:
                    raise ConfigError(f"unknown {key} config keys: {sorted(bad)}")
                cfg[key].update(val)
            elif key in TOP_LEVEL:
                cfg[key] = val
            else:
                raise ConfigError(f"unknown config key {key!r}")
    seed = cfg["seed"]
    cfg["train"].setdefault("seed", substream_seed(seed, "train"))
    cfg["likelihood"].setdefault("seed", substream_seed(seed, "probes"))
    try:
        sde = SdeSpec(**cfg["sde"])
        tr = TrainConfig(**cfg["train"])
        lk = LikelihoodConfig(**cfg["likelihood"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    cfg["sde"], cfg["train"], cfg["likelihood"] = sde.to_dict(), tr.to_dict(), lk.to_dict()
    return cfg


def _objects(cfg):
    return SdeSpec(**cfg["sde"]), TrainConfig(**cfg["train"]), LikelihoodConfig(**cfg["likelihood"])


def _dump_json(obj, path=None) -> str:
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if path is not None:
        Path(path).write_text(text)
    return text


def _echo_config(cfg: dict, output) -> None:
    _dump_json(cfg, f"{output}.config.json")


def _require_path(cfg, key, must_exist=True) -> Path:
    val = cfg.get(key)
    if not val:
        raise ConfigError(f"missing required setting {key!r}")
    p = Path(val)
    if must_exist and not p.exists():
        raise ConfigError(f"{key} path does not exist: {p}")
    return p


def _load_model(cfg):
    """(spec, score model) from a checkpoint or an analytic-oracle JSON."""
    if cfg.get("checkpoint") and cfg.get("oracle"):
        raise ConfigError("give either --checkpoint or --oracle, not both")
    if cfg.get("oracle"):
        spec = SdeSpec(**cfg["sde"])
        meta = json.loads(_require_path(cfg, "oracle").read_text())
        if "means" not in meta or "cov" not in meta:
            raise ConfigError(f"oracle file {cfg['oracle']} lacks 'means'/'cov'")
        return spec, AnalyticGaussianScore(spec, meta["means"], meta["cov"])
    path = _require_path(cfg, "checkpoint")
    net = load_checkpoint(path)
    cfg["sde"] = net.spec.to_dict()
    return net.spec, net


def _read_dataset(cfg, key="dataset"):
    path = _require_path(cfg, key)
    return load_dataset(path)


# ---------------------------------------------------------------- commands

def cmd_gen_toy(args) -> int:
    if args.n < 1:
        raise ConfigError("--n must be >= 1")
    if args.kind == "two-gaussians":
        means = [[float(v) for v in m.split(",")] for m in args.means.split(";")]
        ds = gen_two_gaussians(args.n, means, [float(v) for v in args.cov.split(",")], seed=args.seed)
    else:
        ds = gen_two_moons(args.n, args.noise, seed=args.seed)
    save_dataset(ds, args.out)
    _dump_json(ds.meta, f"{args.out}.meta.json")
    _echo_config({"command": "gen-toy", "kind": args.kind, "n": args.n, "seed": args.seed,
                  "means": args.means, "cov": args.cov, "noise": args.noise, "out": str(args.out)}, args.out)
    sys.stdout.write(_dump_json(ds.summary()))
    return 0


def cmd_train(cfg) -> int:
    spec, tcfg, _ = _objects(cfg)
    ds = _read_dataset(cfg)
    out = _require_path(cfg, "checkpoint", must_exist=False)
    _echo_config(cfg, out)
    net, report = train(ds, spec, tcfg)
    if any(not np.isfinite(e["train_loss"]) for e in report.epochs):
        print(f"error: training diverged (non-finite loss) on {ds.name}", file=sys.stderr)
        return 1
    save_checkpoint(net, out, extra={"best_epoch": report.best_epoch, "stop_reason": report.stop_reason})
    report.write_csv(f"{out}.report.csv")
    sys.stdout.write(_dump_json({
        "checkpoint": str(out), "n_params": net.n_params, "epochs": len(report.epochs),
        "best_epoch": report.best_epoch, "best_val_loss": report.best_val_loss,
        "stop_reason": report.stop_reason, "warnings": report.warnings,
    }))
    return 0


def _limited(ds, cfg):
    """First-come truncation would keep one class of a class-sorted file; take evenly spaced rows."""
    limit = cfg.get("limit")
    if not limit or int(limit) >= len(ds):
        return ds
    if int(limit) < 1:
        raise ConfigError("--limit must be >= 1")
    return ds.subset(np.unique(np.linspace(0, len(ds) - 1, int(limit)).round().astype(int)))


def cmd_classify(cfg) -> int:
    spec, net = _load_model(cfg)
    _, _, lcfg = _objects(cfg)
    ds = _limited(_read_dataset(cfg), cfg)
    n = int(cfg.get("classes") or net.num_classes)
    if n < 2:
        raise ConfigError("--classes must be >= 2")
    if n > net.num_classes:
        raise ConfigError(f"--classes {n} exceeds the model's {net.num_classes} classes")
    out = _require_path(cfg, "output", must_exist=False)
    _echo_config(cfg, out)
    results = classify_dataset(spec, net, ds, lcfg, n=n,
                               progress=lambda i, N: log.info("classified %d/%d", i, N))
    write_predictions_csv(results, out)
    acc = float(np.mean([r.predicted == r.ground_truth for r in results]))
    sys.stdout.write(_dump_json({"output": str(out), "n": len(results), "accuracy": acc}))
    return 0


def cmd_loglik(cfg) -> int:
    spec, net = _load_model(cfg)
    _, _, lcfg = _objects(cfg)
    ds = _limited(_read_dataset(cfg), cfg)
    n = int(cfg.get("classes") or net.num_classes)
    out = _require_path(cfg, "output", must_exist=False)
    _echo_config(cfg, out)
    with open(out, "w") as fh:
        fh.write(",".join(["index", "ground_truth"] + [f"log_like_{j}" for j in range(n)]) + "\n")
        for i, x in enumerate(ds.features):
            ll = log_likelihood_multi(spec, net, x, np.arange(n), lcfg, index=i)
            fh.write(",".join([str(i), str(int(ds.labels[i]))] + [repr(float(v)) for v in ll]) + "\n")
    return 0


def cmd_eval(cfg) -> int:
    path = _require_path(cfg, "predictions")
    results = read_predictions_csv(path)
    if not results:
        raise ConfigError(f"{path}: no predictions")
    if any(r.ground_truth is None for r in results):
        raise ConfigError(f"{path}: ground_truth column is empty; cannot evaluate")
    if len(results[0].posterior) != 2:
        raise ConfigError(f"{path}: evaluation supports binary predictions only")
    report = evaluation_report([r.predicted for r in results], [r.ground_truth for r in results],
                               [r.posterior[1] for r in results])
    text = _dump_json(report)
    if cfg.get("output"):
        Path(cfg["output"]).write_text(text)
        _echo_config(cfg, cfg["output"])
    sys.stdout.write(text)
    return 0


def cmd_sweep(cfg) -> int:
    spec, tcfg, lcfg = _objects(cfg)
    train_ds = _read_dataset(cfg)
    test_ds = _limited(_read_dataset(cfg, "test_dataset"), cfg)
    out = _require_path(cfg, "output", must_exist=False)
    _echo_config(cfg, out)
    families = cfg.get("families") or ["VE", "VP", "SubVP"]
    rows = compare_sde_families(train_ds, test_ds, families, tcfg, lcfg, spec)
    _dump_json(rows, out)
    sys.stdout.write(format_table(rows) + "\n")
    return 0


# ---------------------------------------------------------------- parser

def _add_sde_flags(p):
    g = p.add_argument_group("SDE")
    g.add_argument("--family", dest="sde.family", choices=["VE", "VP", "SubVP"])
    g.add_argument("--beta-min", dest="sde.beta_min", type=float)
    g.add_argument("--beta-max", dest="sde.beta_max", type=float)
    g.add_argument("--sigma-min", dest="sde.sigma_min", type=float)
    g.add_argument("--sigma-max", dest="sde.sigma_max", type=float)
    g.add_argument("--eps", dest="sde.eps", type=float)


def _add_train_flags(p):
    g = p.add_argument_group("training")
    g.add_argument("--batch-size", dest="train.batch_size", type=int)
    g.add_argument("--lr", dest="train.lr", type=float)
    g.add_argument("--gamma", dest="train.scheduler_gamma", type=float)
    g.add_argument("--scheduler-patience", dest="train.scheduler_patience", type=int)
    g.add_argument("--early-stop-patience", dest="train.early_stop_patience", type=int)
    g.add_argument("--max-epochs", dest="train.max_epochs", type=int)
    g.add_argument("--val-fraction", dest="train.val_fraction", type=float)
    g.add_argument("--hidden", dest="train.hidden", type=int)


def _add_lik_flags(p):
    g = p.add_argument_group("likelihood")
    g.add_argument("--divergence", dest="likelihood.divergence", choices=["exact", "hutchinson"])
    g.add_argument("--probe-dist", dest="likelihood.probe_dist", choices=["rademacher", "gaussian"])
    g.add_argument("--n-probes", dest="likelihood.n_probes", type=int)
    g.add_argument("--n-repeats", dest="likelihood.n_repeats", type=int)
    g.add_argument("--rtol", dest="likelihood.rtol", type=float)
    g.add_argument("--atol", dest="likelihood.atol", type=float)


def _add_common(p, output=True):
    p.add_argument("--config", type=Path, help="JSON config file; flags override it")
    p.add_argument("--seed", dest="seed", type=int)
    if output:
        p.add_argument("--output", "-o", dest="output")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scoregc", description="Score-based generative classifier")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-toy", help="generate a synthetic dataset")
    p.add_argument("kind", choices=["two-gaussians", "two-moons"])
    p.add_argument("--n", type=int, default=1000, help="samples per class")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--means", default="2,0;-2,0", help="class means, ';'-separated")
    p.add_argument("--cov", default="1", help="diagonal covariance, ','-separated or scalar")
    p.add_argument("--noise", type=float, default=0.1, help="two-moons noise std")

    p = sub.add_parser("train", help="train a conditional score network")
    _add_common(p, output=False)
    p.add_argument("--dataset", dest="dataset")
    p.add_argument("--checkpoint", dest="checkpoint")
    _add_sde_flags(p)
    _add_train_flags(p)

    for name, help_ in (("classify", "classify a dataset"), ("loglik", "per-class log-likelihood dump")):
        p = sub.add_parser(name, help=help_)
        _add_common(p)
        p.add_argument("--dataset", dest="dataset")
        p.add_argument("--checkpoint", dest="checkpoint")
        p.add_argument("--oracle", dest="oracle", help="JSON with Gaussian class 'means' and 'cov'")
        p.add_argument("--classes", dest="classes", type=int)
        p.add_argument("--limit", dest="limit", type=int, help="use N evenly spaced rows")
        _add_sde_flags(p)
        _add_lik_flags(p)

    p = sub.add_parser("eval", help="metrics from a predictions CSV")
    p.add_argument("predictions")
    p.add_argument("--output", "-o", dest="output")

    p = sub.add_parser("sweep", help="compare SDE families on one dataset")
    _add_common(p)
    p.add_argument("--dataset", dest="dataset")
    p.add_argument("--test-dataset", dest="test_dataset")
    p.add_argument("--families", dest="families", type=lambda s: s.split(","))
    p.add_argument("--limit", dest="limit", type=int, help="use N evenly spaced rows")
    _add_sde_flags(p)
    _add_train_flags(p)
    _add_lik_flags(p)
    return parser


def _overrides(ns) -> dict:
    out: dict = {}
    for key, val in vars(ns).items():
        if val is None or key in ("command", "config", "verbose"):
            continue
        if "." in key:
            sec, name = key.split(".", 1)
            out.setdefault(sec, {})[name] = val
        else:
            out[key] = val
    return out


COMMANDS = {"train": cmd_train, "classify": cmd_classify, "loglik": cmd_loglik, "sweep": cmd_sweep}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        if args.command == "gen-toy":
            return cmd_gen_toy(args)
        if args.command == "eval":
            return cmd_eval({"predictions": args.predictions, "output": args.output})
        file_cfg = {}
        if args.config is not None:
            if not args.config.exists():
                raise ConfigError(f"config file does not exist: {args.config}")
            try:
                file_cfg = json.loads(args.config.read_text())
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{args.config}: invalid JSON ({exc})") from exc
        overrides = _overrides(args)
        cfg = resolve_config(file_cfg, overrides)
        cfg["command"] = args.command
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"{parser.prog} {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (TensorFileError, CheckpointError, LikelihoodError, ValueError, RuntimeError, OSError) as exc:
        print(f"{parser.prog} {args.command}: failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
