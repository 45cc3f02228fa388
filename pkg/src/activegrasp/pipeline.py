"""End-to-end experiment stages with named, seed-derived random streams.

Every stage draws from ``stream(seed, name)`` so that changing one stage (say,
the amount of heuristic data) leaves the randomness of the others untouched.
"""
from __future__ import annotations

import logging
import zlib
from dataclasses import dataclass

import numpy as np

from .config import ExperimentConfig
from .core import Bounds, Dataset
from .loop import BanditState, LoopConfig, RoundLog, run_active
from .metrics import EntropyReport, EvalReport, diversity_report, eval_success_rate
from .model import GraspModel
from .world import World, bootstrap_geodata

log = logging.getLogger(__name__)

EVAL_ID_OFFSET = 100_000
METHODS = ("active", "passive_more", "passive_init")


def stream(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng([int(seed), zlib.crc32(name.encode())])


def make_world(cfg: ExperimentConfig, seed: int, n: int | None = None, name: str = "world",
               id_offset: int = 0) -> World:
    n = cfg.n_objects if n is None else n
    seeds = stream(seed, name).integers(0, 2**31 - 1, size=n)
    return World.generate(seeds, resolution=cfg.resolution, bounds=Bounds.box(cfg.dim),
                          noise=cfg.noise, id_offset=id_offset)


def make_eval_world(cfg: ExperimentConfig, seed: int) -> World:
    """Held-out objects, never part of any training pool."""
    return make_world(cfg, seed, cfg.eval_objects, "eval-world", EVAL_ID_OFFSET)


def collect_geodata(cfg: ExperimentConfig, world: World, seed: int, n: int | None = None) -> Dataset:
    n = cfg.n_geodata if n is None else n
    return bootstrap_geodata(n, world.pool, stream(seed, "geodata"), cfg.resolution, seed)


def train_passive(cfg: ExperimentConfig, world: World, data: Dataset, seed: int, tag: str = "passive") -> GraspModel:
    """Fresh model (seed-determined weights) trained supervised on ``data``."""
    model = GraspModel.create(cfg.model_config(), stream(seed, "init-weights"))
    model.train(data, world.views, cfg.init_train(), stream(seed, "init-train"), tag=tag)
    return model


def loop_config(cfg: ExperimentConfig) -> LoopConfig:
    return LoopConfig(cfg.rounds, cfg.per_round, cfg.retrain_period, cfg.epochs, cfg.switch_period)


def active_phase(cfg: ExperimentConfig, model: GraspModel, world: World, geodata: Dataset, seed: int):
    state = BanditState(offsets=tuple(cfg.offsets), ucb_c=cfg.ucb_c)
    return run_active(loop_config(cfg), model, world, geodata, stream(seed, "active"), state,
                      cfg.online_train(), cfg.inference(), cfg.n_cand, cfg.timing)


def evaluate(cfg: ExperimentConfig, model: GraspModel, eval_world: World, seed: int) -> EvalReport:
    # identical stream for every model: common random numbers across methods
    return eval_success_rate(model, eval_world, cfg.eval_attempts, stream(seed, "eval"),
                             cfg.inference(), cfg.ridge)


@dataclass
class CompareResult:
    reports: dict[str, EvalReport]
    diversity: EntropyReport | None
    geodata: Dataset
    active: Dataset
    logs: list[RoundLog]
    state: BanditState
    models: dict[str, GraspModel]


def compare(cfg: ExperimentConfig, seed: int) -> CompareResult:
    """Active vs passive with 2x heuristic data vs the passive initial model.

    The heuristic set for the larger passive model extends the initial one, and
    all three models share the weight-initialization and evaluation streams.
    """
    world = make_world(cfg, seed)
    geo_more = collect_geodata(cfg, world, seed, 2 * cfg.n_geodata)
    geo = geo_more.subset(geo_more.samples[: cfg.n_geodata])
    passive_init = train_passive(cfg, world, geo, seed, "passive_init")
    passive_more = train_passive(cfg, world, geo_more, seed, "passive_more")
    active_model = passive_init.copy()
    active_model, active, logs, state = active_phase(cfg, active_model, world, geo, seed)
    eval_world = make_eval_world(cfg, seed)
    models = {"active": active_model, "passive_more": passive_more, "passive_init": passive_init}
    reports = {name: evaluate(cfg, m, eval_world, seed) for name, m in models.items()}
    if len(active) > cfg.dim:
        div = diversity_report(active, geo, stream(seed, "entropy"), cfg.entropy_subsets, cfg.ridge)
    else:
        log.warning("only %d active samples in %d dimensions, skipping the entropy table", len(active), cfg.dim)
        div = None
    return CompareResult(reports, div, geo, active, logs, state, models)
