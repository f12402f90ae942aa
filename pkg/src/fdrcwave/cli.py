"""Batch command-line surface: train, simulate, rollout, compare, export.

Configs are UTF-8 JSON with sections "domain", "train", "sources" and
"cases"; unknown keys anywhere are rejected.  Binary formats are documented
in `fdrcwave.io`.  The env var FDRC_THREADS caps BLAS parallelism for CLI
runs; `--reproducible` forces single-threaded math so repeated runs are
bit-identical.  Only stdlib imports may appear at module level: thread caps
must be exported before numpy loads.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path


class ConfigError(Exception):
    pass


DOMAIN_KEYS = {"nx", "ny", "dx", "dy", "dt", "c", "rho0", "pml_thickness", "pml_R"}
TRAIN_KEYS = {
    "pool_size",
    "batch_size",
    "samples_per_epoch",
    "epochs",
    "reset_prob",
    "seed",
    "precision",
    "checkpoint_dir",
    "metrics_path",
}
SOURCE_KEYS = {"i0", "j0", "w", "h", "T", "bias"}
CASE_KEYS = {"label", "sources", "steps"}
TOP_KEYS = {"domain", "train", "sources", "cases"}


def _check_keys(mapping: dict, allowed: set, context: str) -> None:
    unknown = sorted(set(mapping) - allowed)
    if unknown:
        raise ConfigError(f"unknown keys in {context}: {', '.join(unknown)}")


def load_config(path) -> dict:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    try:
        cfg = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as err:
        raise ConfigError(f"{p}: invalid JSON ({err})") from err
    if not isinstance(cfg, dict):
        raise ConfigError(f"{p}: config must be a JSON object")
    _check_keys(cfg, TOP_KEYS, str(p))
    return cfg


def _domain_spec(cfg: dict):
    from .grid import DomainSpec

    if "domain" not in cfg:
        raise ConfigError("config is missing the 'domain' section")
    section = cfg["domain"]
    _check_keys(section, DOMAIN_KEYS, "'domain'")
    try:
        return DomainSpec(**section)
    except (TypeError, ValueError) as err:
        raise ConfigError(f"invalid 'domain' section: {err}") from err


def _sources(entries, context: str = "'sources'"):
    from .grid import SourceSpec

    out = []
    for i, entry in enumerate(entries):
        _check_keys(entry, SOURCE_KEYS, f"{context}[{i}]")
        try:
            out.append(SourceSpec(**entry))
        except (TypeError, ValueError) as err:
            raise ConfigError(f"invalid source {context}[{i}]: {err}") from err
    return out


def _train_config(cfg: dict, args):
    from .trainer import TrainConfig

    spec = _domain_spec(cfg)
    section = dict(cfg.get("train", {}))
    _check_keys(section, TRAIN_KEYS, "'train'")
    if args.seed is not None:
        section["seed"] = args.seed
    if args.precision is not None:
        section["precision"] = args.precision
    try:
        return TrainConfig(spec=spec, **section)
    except (TypeError, ValueError) as err:
        raise ConfigError(f"invalid 'train' section: {err}") from err


def _cases(cfg: dict, cases_path):
    from .eval import CompareCase

    if cases_path is not None:
        p = Path(cases_path)
        if not p.exists():
            raise ConfigError(f"cases file not found: {p}")
        raw = json.loads(p.read_text(encoding="utf-8"))
    else:
        raw = cfg.get("cases")
        if raw is None:
            raise ConfigError("no cases: pass --cases FILE or a 'cases' config section")
    if not isinstance(raw, list) or not raw:
        raise ConfigError("cases must be a non-empty JSON list")
    out = []
    for i, entry in enumerate(raw):
        _check_keys(entry, CASE_KEYS, f"'cases'[{i}]")
        if "steps" not in entry or "sources" not in entry:
            raise ConfigError(f"'cases'[{i}] needs 'sources' and 'steps'")
        out.append(
            CompareCase(
                label=str(entry.get("label", f"case{i + 1}")),
                sources=tuple(_sources(entry["sources"], f"'cases'[{i}].sources")),
                steps=int(entry["steps"]),
            )
        )
    return out


def _load_model(path, dtype=None):
    from . import io

    p = Path(path)
    if not p.exists():
        raise ConfigError(f"model checkpoint not found: {p}")
    try:
        params, _ = io.read_model(p, dtype=dtype)
    except io.FormatError as err:
        raise ConfigError(str(err)) from err
    return params


def _write_trajectory(traj, out_dir) -> None:
    from . import io

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for state in traj:
        io.write_snapshot(out / f"step_{state.step:06d}.wfld", state)


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    config = _train_config(cfg, args)
    from .trainer import train

    train(config, resume=args.resume, log=lambda msg: print(msg, file=sys.stderr))
    print(f"training complete; checkpoints in {config.checkpoint_dir}")
    return 0


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    spec = _domain_spec(cfg)
    sources = _sources(cfg.get("sources", []))
    from .fdm import simulate

    traj = simulate(spec, sources, steps=args.steps, snapshot_stride=args.stride)
    _write_trajectory(traj, args.out)
    print(f"wrote {len(traj)} snapshots to {args.out}")
    return 0


def cmd_rollout(args) -> int:
    cfg = load_config(args.config)
    spec = _domain_spec(cfg)
    sources = _sources(cfg.get("sources", []))
    params = _load_model(args.model)
    from .eval import rollout

    traj = rollout(params, spec, sources, steps=args.steps, snapshot_stride=args.stride)
    _write_trajectory(traj, args.out)
    print(f"wrote {len(traj)} snapshots to {args.out}")
    return 0


def cmd_compare(args) -> int:
    cfg = load_config(args.config)
    spec = _domain_spec(cfg)
    cases = _cases(cfg, args.cases)
    params = None if args.self_test else _load_model(args.model)
    if params is None and args.model is None and not args.self_test:
        raise ConfigError("compare needs --model or --self-test")
    from .eval import compare

    report = compare(params, spec, cases, snapshot_stride=args.stride)
    report.write_csv(args.out)
    failed = [c for c in report.cases if c.error]
    for c in report.cases:
        if c.error:
            print(f"{c.label}: FAILED ({c.error})", file=sys.stderr)
        else:
            print(f"{c.label}: mean MRE {c.mean_mre:.3f}%, mean loss {c.mean_loss:.3e}")
    print(f"report written to {args.out}")
    return 1 if failed else 0


def cmd_export(args) -> int:
    from . import io

    p = Path(args.snapshot)
    if not p.exists():
        raise ConfigError(f"snapshot not found: {p}")
    try:
        snap = io.read_snapshot(p)
    except io.FormatError as err:
        raise ConfigError(str(err)) from err
    fields = {"u": snap.u, "v": snap.v, "p": snap.p}
    if snap.sigma is not None:
        fields["sigma"] = snap.sigma
    if args.channel not in fields:
        raise ConfigError(
            f"channel {args.channel!r} not in snapshot (has: {', '.join(fields)})"
        )
    field = fields[args.channel]
    if args.format == "csv":
        io.export_csv(field, args.out)
    elif args.format == "pgm":
        io.export_pgm(field, args.out)
    else:
        raise ConfigError(f"unknown format {args.format!r}; supported: csv, pgm")
    print(f"exported {args.channel} to {args.out}")
    return 0


def _setup_threads(reproducible: bool) -> None:
    n = os.environ.get("FDRC_THREADS")
    if reproducible and not n:
        n = "1"
    if n:
        for var in (
            "OMP_NUM_THREADS",
            "OPENBLAS_NUM_THREADS",
            "MKL_NUM_THREADS",
            "NUMEXPR_NUM_THREADS",
        ):
            os.environ.setdefault(var, n)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fdrcwave",
        description="2D wave-equation surrogate: residual-constrained training, "
        "FDM oracle, evaluation and exports",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--reproducible", action="store_true",
                       help="single-threaded, bit-stable math")

    p = sub.add_parser("train", help="run the unsupervised training loop")
    p.add_argument("--config", required=True)
    p.add_argument("--resume", default=None, help="epoch checkpoint directory")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--precision", choices=("single", "double"), default=None)
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("simulate", help="run the finite-difference oracle")
    p.add_argument("--config", required=True)
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("rollout", help="roll the trained surrogate forward")
    p.add_argument("--model", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(func=cmd_rollout)

    p = sub.add_parser("compare", help="score the surrogate against the oracle")
    p.add_argument("--model", default=None)
    p.add_argument("--config", required=True)
    p.add_argument("--cases", default=None, help="JSON list of comparison cases")
    p.add_argument("--stride", type=int, default=60)
    p.add_argument("--out", required=True)
    p.add_argument("--self-test", action="store_true",
                   help="substitute the oracle for the network (expect 0% MRE)")
    common(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("export", help="convert a snapshot to csv or pgm")
    p.add_argument("--snapshot", required=True)
    p.add_argument("--format", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--channel", default="p", help="u, v, p or sigma (default p)")
    common(p)
    p.set_defaults(func=cmd_export)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _setup_threads(getattr(args, "reproducible", False))
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except (ValueError, RuntimeError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


def entry() -> None:
    sys.exit(main(sys.argv[1:]))
