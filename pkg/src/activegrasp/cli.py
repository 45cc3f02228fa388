"""Command-line front end.

Every subcommand writes into ``--out`` and leaves a ``manifest.json`` there with
the resolved config, the seed, the command line and a sha256 of each output.
All randomness comes from ``--seed`` through named streams, so two runs with
the same arguments produce byte-identical files (wall-clock columns stay zero
unless ``--timing`` is given).

Examples
--------
    activegrasp gen-world --seed 7 --objects 10 --out runs/world
    activegrasp bootstrap --seed 7 --out runs/boot
    activegrasp active --seed 7 --rounds 32 --per-round 8 --out runs/active
    activegrasp active --from runs/boot --out runs/active2
    activegrasp eval --model runs/active/model --out runs/eval
    activegrasp entropy --active runs/active/active.txt --heuristic runs/active/geodata.txt --out runs/ent
    activegrasp compare --seed 0 --config scripts/configs/desk.json --out runs/cmp
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig
from .core import FormatError, load_checkpoint, load_dataset, save_checkpoint, save_dataset
from .loop import write_arm_summary, write_round_log
from .metrics import PARTITIONS, diversity_report, write_entropy_report, write_eval_report
from .model import GraspModel
from .pipeline import (
    METHODS,
    active_phase,
    collect_geodata,
    compare,
    evaluate,
    make_eval_world,
    make_world,
    stream,
    train_passive,
)
from .world import World, load_world, save_world

log = logging.getLogger("activegrasp")

COMPARE_HEADER = ["scope", "key", *METHODS]
GRASP_ENTROPY_HEADER = ["method", "partition", "entropy", "grasps"]


class UsageError(Exception):
    pass


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(out: Path, command: str, args: argparse.Namespace, cfg: ExperimentConfig,
                   streams: list[str], inputs: dict | None = None) -> None:
    files = sorted(p for p in out.rglob("*") if p.is_file() and p.name != "manifest.json")
    manifest = {
        "command": command,
        "argv": [a for a in sys.argv[1:]] if args.argv is None else args.argv,
        "seed": args.seed,
        "streams": {name: [args.seed, name] for name in streams},
        "config": cfg.to_dict(),
        "inputs": inputs or {},
        "outputs": {str(p.relative_to(out)): _sha256(p) for p in files},
        "versions": {"activegrasp": __version__, "numpy": np.__version__, "python": platform.python_version()},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    if args.config is not None:
        path = Path(args.config)
        if not path.is_file():
            raise UsageError(f"config file not found: {path}")
        try:
            cfg = ExperimentConfig.load(path)
        except (ValueError, TypeError) as exc:
            raise UsageError(f"bad config {path}: {exc}") from exc
    else:
        cfg = ExperimentConfig()
    over = {k: getattr(args, a) for a, k in (("objects", "n_objects"), ("rounds", "rounds"),
                                             ("per_round", "per_round"), ("geodata", "n_geodata"),
                                             ("eval_objects", "eval_objects"), ("attempts", "eval_attempts"))
            if getattr(args, a, None) is not None}
    if getattr(args, "timing", False):
        over["timing"] = True
    try:
        return cfg.replace(**over) if over else cfg
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def save_model(model: GraspModel, cfg: ExperimentConfig, path: Path) -> None:
    save_checkpoint(model.state(), path, meta={"config": cfg.to_dict()})


def load_model(path) -> tuple[GraspModel, ExperimentConfig]:
    path = Path(path)
    if not path.with_suffix(".json").is_file():
        raise UsageError(f"checkpoint not found: {path}.json")
    params, meta = load_checkpoint(path)
    cfg = ExperimentConfig.from_dict(meta["config"])
    model = GraspModel.create(cfg.model_config(), np.random.default_rng(0))
    model.load_state(params)
    return model, cfg


def _bootstrap(cfg: ExperimentConfig, seed: int) -> tuple[World, object, GraspModel]:
    world = make_world(cfg, seed)
    geo = collect_geodata(cfg, world, seed)
    model = train_passive(cfg, world, geo, seed, "bootstrap")
    return world, geo, model


# -- subcommands ------------------------------------------------------------------------------


def cmd_gen_world(args, cfg, out):
    world = make_world(cfg, args.seed)
    save_world(world, out / "world.jsonl")
    write_manifest(out, "gen-world", args, cfg, ["world"])


def cmd_bootstrap(args, cfg, out):
    world, geo, model = _bootstrap(cfg, args.seed)
    save_world(world, out / "world.jsonl")
    save_dataset(geo, out / "geodata.txt")
    save_model(model, cfg, out / "model")
    write_manifest(out, "bootstrap", args, cfg, ["world", "geodata", "init-weights", "init-train"])


def cmd_active(args, cfg, out):
    inputs = {}
    if args.source:
        src = Path(args.source)
        try:
            world = load_world(src / "world.jsonl")
            geo = load_dataset(src / "geodata.txt")
        except (OSError, FormatError) as exc:
            raise UsageError(f"cannot read bootstrap run {src}: {exc}") from exc
        model, _ = load_model(src / "model")
        inputs = {"from": str(src)}
    else:
        world, geo, model = _bootstrap(cfg, args.seed)
    model, active, logs, state = active_phase(cfg, model, world, geo, args.seed)
    save_world(world, out / "world.jsonl")
    save_dataset(geo, out / "geodata.txt")
    save_dataset(active, out / "active.txt")
    write_round_log(logs, out / "rounds.csv")
    write_arm_summary(state, logs, out / "arms.csv")
    save_model(model, cfg, out / "model")
    write_manifest(out, "active", args, cfg, ["world", "geodata", "init-weights", "init-train", "active"], inputs)


def cmd_eval(args, cfg, out):
    model, model_cfg = load_model(args.model)
    if model_cfg.model_config() != cfg.model_config() and args.config is not None:
        log.warning("model architecture comes from the checkpoint, not from --config")
    cfg = cfg.replace(**{k: model_cfg.to_dict()[k] for k in ("dim", "resolution")})
    rep = evaluate(cfg, model, make_eval_world(cfg, args.seed), args.seed)
    write_eval_report(rep, out / "eval.csv")
    _write_grasp_entropy({"model": rep}, out / "grasp_entropy.csv")
    log.info("success rate %.3f over %d attempts", rep.rate, rep.attempts)
    write_manifest(out, "eval", args, cfg, ["eval-world", "eval"], {"model": str(args.model)})


def cmd_entropy(args, cfg, out):
    try:
        active, heur = load_dataset(args.active), load_dataset(args.heuristic)
    except (OSError, FormatError) as exc:
        raise UsageError(str(exc)) from exc
    try:
        rep = diversity_report(active, heur, stream(args.seed, "entropy"), cfg.entropy_subsets, cfg.ridge)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    write_entropy_report(rep, out / "entropy.csv")
    write_manifest(out, "entropy", args, cfg, ["entropy"], {"active": args.active, "heuristic": args.heuristic})


def _write_grasp_entropy(reports: dict, path: Path) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(GRASP_ENTROPY_HEADER)
        for name, rep in reports.items():
            for part in PARTITIONS:
                w.writerow([name, part, repr(float(rep.entropy.get(part, float("nan")))), len(rep.configs)])


def write_compare_table(reports: dict, path: Path) -> None:
    """One row per held-out object plus the aggregate, one rate column per method."""
    first = reports[METHODS[0]]
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COMPARE_HEADER)
        for oid in first.per_object:
            w.writerow(["object", oid, *(repr(reports[m].object_rate(oid)) for m in METHODS)])
        w.writerow(["all", "all", *(repr(reports[m].rate) for m in METHODS)])


def cmd_compare(args, cfg, out):
    res = compare(cfg, args.seed)
    write_compare_table(res.reports, out / "compare.csv")
    _write_grasp_entropy(res.reports, out / "grasp_entropy.csv")
    if res.diversity is not None:
        write_entropy_report(res.diversity, out / "entropy.csv")
    for name, rep in res.reports.items():
        write_eval_report(rep, out / f"eval_{name}.csv")
    save_dataset(res.geodata, out / "geodata.txt")
    save_dataset(res.active, out / "active.txt")
    write_round_log(res.logs, out / "rounds.csv")
    write_arm_summary(res.state, res.logs, out / "arms.csv")
    log.info("rates: %s", {m: round(r.rate, 3) for m, r in res.reports.items()})
    write_manifest(out, "compare", args, cfg,
                   ["world", "geodata", "init-weights", "init-train", "active", "eval-world", "eval", "entropy"])


COMMANDS = {
    "gen-world": cmd_gen_world,
    "bootstrap": cmd_bootstrap,
    "active": cmd_active,
    "eval": cmd_eval,
    "entropy": cmd_entropy,
    "compare": cmd_compare,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="root seed for every random stream (default: 0)")
    common.add_argument("--config", default=None, help="experiment config JSON; unknown keys are an error")
    common.add_argument("--out", required=True, help="run directory (created if missing)")
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging")

    parser = argparse.ArgumentParser(prog="activegrasp", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def counts(p, *names):
        if "objects" in names:
            p.add_argument("--objects", type=int, help="training object pool size")
        if "geodata" in names:
            p.add_argument("--geodata", type=int, help="number of heuristic grasps")
        if "rounds" in names:
            p.add_argument("--rounds", type=int, help="active rounds N")
            p.add_argument("--per-round", type=int, help="queries per round M")
            p.add_argument("--timing", action="store_true", help="record wall-clock times in the logs")
        if "eval" in names:
            p.add_argument("--eval-objects", type=int, help="held-out objects for evaluation")
            p.add_argument("--attempts", type=int, help="grasp attempts per held-out object")

    counts(sub.add_parser("gen-world", parents=[common], help="build the object pool"), "objects")
    counts(sub.add_parser("bootstrap", parents=[common], help="heuristic data and initial training"),
           "objects", "geodata")
    p = sub.add_parser("active", parents=[common], help="bandit active learning loop")
    p.add_argument("--from", dest="source", help="bootstrap run directory to start from")
    counts(p, "objects", "geodata", "rounds")
    p = sub.add_parser("eval", parents=[common], help="held-out success rate of a checkpoint")
    p.add_argument("--model", required=True, help="checkpoint path without suffix, e.g. runs/active/model")
    counts(p, "eval")
    p = sub.add_parser("entropy", parents=[common], help="active vs heuristic entropy table")
    p.add_argument("--active", required=True, help="active dataset file")
    p.add_argument("--heuristic", required=True, help="heuristic dataset file")
    counts(sub.add_parser("compare", parents=[common], help="active vs passive comparison"),
           "objects", "geodata", "rounds", "eval")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    args.argv = list(argv) if argv is not None else None
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](args, cfg, out)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"activegrasp: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
