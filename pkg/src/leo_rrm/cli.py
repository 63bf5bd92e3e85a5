"""Command-line entry point.

Every verb prints one JSON summary line on stdout; logs go to stderr.
Exit codes: 0 success, 1 configuration or runtime error, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .constellation import ConfigurationError, build_constellation, propagate, write_edge_csv
from .experiments import (STARLINK_SHAPES, TRAINABLE, ExperimentConfig, apply_overrides,
                          load_config, make_policy, plot_load, plot_metrics, run_episode,
                          save_config, sweep_load, sweep_scale, train)
from .policy import CheckpointError, TrainingError

EXIT_OK, EXIT_ERROR, EXIT_USAGE = 0, 1, 2

def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML experiment config (defaults apply to missing fields)")
    p.add_argument("--seed", type=int, help="master seed (overrides the config)")
    p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                   help="patch a config field, e.g. trainer.episodes=50 (repeatable)")
    p.add_argument("--out", help="output directory (overrides output_dir)")
    p.add_argument("--quiet", action="store_true", help="only log warnings and errors")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="leo-rrm",
        description="LEO network simulator with learned next-hop resource management.",
        epilog="Exit codes: 0 ok, 1 config/runtime error, 2 usage error.")
    sub = parser.add_subparsers(dest="verb", metavar="VERB", required=True)

    p = sub.add_parser("train", help="train tf-darm or mdg; writes metrics.csv and checkpoint.json")
    _common(p)
    p.add_argument("--policy", choices=TRAINABLE, help="policy kind to train")

    p = sub.add_parser("eval", help="greedy evaluation of a checkpoint or baseline")
    _common(p)
    p.add_argument("--checkpoint", help="checkpoint JSON of a trained policy")
    p.add_argument("--policy", choices=("spg", "ltg"), help="baseline to evaluate instead")
    p.add_argument("--episodes", type=int, default=1, help="number of evaluation episodes")
    p.add_argument("--trace", action="store_true", help="store a JSONL decision trace in --out")

    for verb, what in (("sweep-load", "completion rate versus requests per LEO"),
                       ("sweep-scale", "completion rate across constellation shapes")):
        p = sub.add_parser(verb, help=what)
        _common(p)
        p.add_argument("--policy", action="append", choices=("spg", "ltg"), default=[],
                       help="baseline to include (repeatable)")
        p.add_argument("--checkpoint", action="append", default=[], metavar="[NAME=]PATH",
                       help="trained policy to include; NAME defaults to tf-darm (repeatable)")
        p.add_argument("--episodes", type=int, default=1, help="evaluation episodes per cell")
        if verb == "sweep-load":
            p.add_argument("--loads", default="10,20,40", help="comma-separated requests per LEO")
        else:
            p.add_argument("--scales", default=",".join(f"{a}x{b}" for a, b in STARLINK_SHAPES),
                           help="comma-separated PLANESxSATS shapes")

    p = sub.add_parser("dump-topology", help="write the ISL edge list of each slot as CSV")
    _common(p)
    p.add_argument("--slots", type=int, help="number of slots (default: the planning cycle)")

    p = sub.add_parser("plot", help="PNG from a metrics CSV (or several) or a load-sweep CSV")
    p.add_argument("inputs", nargs="+", metavar="[NAME=]CSV")
    p.add_argument("--out", required=True, help="PNG file to write")
    p.add_argument("--quiet", action="store_true")
    return parser


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    cfg = apply_overrides(cfg, args.override)
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if getattr(args, "out", None):
        changes["output_dir"] = args.out
    if args.verb == "train" and args.policy:
        changes["policy"] = args.policy
    if changes:
        cfg = cfg.replace(**changes)
    cfg.validate()
    return cfg


def _named(items: Sequence[str], default_name: str) -> dict[str, str]:
    out = {}
    for item in items:
        name, sep, path = item.partition("=")
        if not sep:
            name, path = default_name, item
        out[name] = path
    return out


def _outdir(cfg: ExperimentConfig) -> Optional[Path]:
    if not cfg.output_dir:
        return None
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _cmd_train(args) -> dict:
    cfg = _config(args)
    out = _outdir(cfg)
    if out is not None:
        save_config(cfg, out / "config.yaml")
    res = train(cfg)
    rates = [m.completion_rate for m in res.metrics]
    return {"verb": "train", "policy": cfg.policy, "seed": cfg.seed, "episodes": len(rates),
            "final_completion_rate": float(np.mean(rates[-20:])),
            "checkpoint": str(res.checkpoint) if res.checkpoint else None,
            "metrics_csv": str(res.metrics_csv) if res.metrics_csv else None}


def _policies(args) -> dict:
    pols = {name: name for name in args.policy}
    pols.update(_named(args.checkpoint, "tf-darm"))
    if not pols:
        raise ConfigurationError("policy: give at least one --policy or --checkpoint")
    return pols


def _cmd_eval(args) -> dict:
    if bool(args.checkpoint) == bool(args.policy):
        raise ConfigurationError("policy: give exactly one of --checkpoint or --policy")
    cfg = _config(args)
    source = args.checkpoint or args.policy
    out = _outdir(cfg)
    policy = make_policy(source)
    rows = []
    for ep in range(args.episodes):
        trace = out / f"trace-ep{ep}.jsonl" if (args.trace and out is not None) else None
        rows.append(run_episode(cfg, policy, ep, trace_path=trace).row())
    summary = {"verb": "eval", "source": str(source), "seed": cfg.seed,
               "constellation": f"{cfg.constellation.planes}*{cfg.constellation.sats_per_plane}",
               "completion_rate": float(np.mean([r["completion_rate"] for r in rows])),
               "episodes": rows}
    if out is not None:
        (out / "eval.json").write_text(json.dumps(summary, indent=2))
    return summary


def _cmd_sweep_load(args) -> dict:
    cfg = _config(args)
    try:
        loads = [int(x) for x in args.loads.split(",") if x.strip()]
    except ValueError:
        raise ConfigurationError(f"loads: expected a comma-separated integer list, got {args.loads!r}")
    out = _outdir(cfg)
    rows = sweep_load(cfg, loads, _policies(args), range(args.episodes),
                      out_csv=out / "load.csv" if out else None)
    return {"verb": "sweep-load", "rows": rows}


def _cmd_sweep_scale(args) -> dict:
    cfg = _config(args)
    try:
        scales = [tuple(int(v) for v in s.lower().split("x")) for s in args.scales.split(",")]
        if any(len(s) != 2 for s in scales):
            raise ValueError
    except ValueError:
        raise ConfigurationError(f"scales: expected PLANESxSATS list, got {args.scales!r}")
    out = _outdir(cfg)
    rows = sweep_scale(cfg, scales, _policies(args), range(args.episodes),
                       out_csv=out / "scale.csv" if out else None)
    return {"verb": "sweep-scale", "rows": rows}


def _cmd_dump_topology(args) -> dict:
    cfg = _config(args)
    out = _outdir(cfg) or Path(".")
    roster = build_constellation(cfg.constellation)
    n_slots = args.slots if args.slots is not None else cfg.sim.n_slots
    if n_slots < 1:
        raise ConfigurationError("slots: must be >= 1")
    snaps = (propagate(roster, s, cfg.sim.tau_s) for s in range(n_slots))
    path = out / "topology.csv"
    edges = write_edge_csv(snaps, path)
    return {"verb": "dump-topology", "satellites": len(roster), "slots": n_slots,
            "edges": edges, "csv": str(path)}


def _cmd_plot(args) -> dict:
    named = {}
    for item in args.inputs:
        name, sep, path = item.partition("=")
        if not sep:
            path = item
            name = Path(path).parent.name or Path(path).stem
        if not Path(path).exists():
            raise FileNotFoundError(f"no such file: {path}")
        named[name] = path
    first = next(iter(named.values()))
    with open(first, newline="") as fh:
        header = next(csv.reader(fh), [])
    if "load" in header:
        png = plot_load(first, args.out)
    else:
        png = plot_metrics(named, args.out)
    return {"verb": "plot", "png": str(png)}


COMMANDS = {"train": _cmd_train, "eval": _cmd_eval, "sweep-load": _cmd_sweep_load,
            "sweep-scale": _cmd_sweep_scale, "dump-topology": _cmd_dump_topology,
            "plot": _cmd_plot}


def _error(kind: str, exc: BaseException) -> int:
    reason = str(exc).strip("'\"") or exc.__class__.__name__
    print(json.dumps({"ok": False, "error": kind, "reason": reason}))
    print(f"leo-rrm: {kind} error: {reason}", file=sys.stderr)
    return EXIT_ERROR


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s",
                        force=True)
    try:
        summary = COMMANDS[args.verb](args)
    except ConfigurationError as exc:
        return _error("config", exc)
    except (FileNotFoundError, CheckpointError) as exc:
        return _error("input", exc)
    except TrainingError as exc:
        return _error("training", exc)
    print(json.dumps({"ok": True, **summary}, default=str))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
