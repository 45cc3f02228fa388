"""UCB bandit over the three arms and the round-based active learning loop."""
from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .arms import Arm, ArmQuery, run_arm
from .core import Dataset, GraspSample, Source, concat_datasets
from .inference import InferenceOpts, prior_start
from .model import GraspModel, TrainOpts
from .world import World, oracle_label

log = logging.getLogger(__name__)

DEFAULT_OFFSETS = (0.35, -0.05, 0.6)
ARM_SOURCE = {Arm.SUCCESS: Source.ARM_SUCCESS, Arm.UNCERTAINTY: Source.ARM_UNCERTAINTY,
              Arm.EXPLORE: Source.ARM_EXPLORE}
ROUND_LOG_HEADER = ["round", "query_idx", "arm", "raw_reward", "offset_reward", "label",
                    "solve_iters", "wall_ms"]
ARM_SUMMARY_HEADER = ["arm", "mean_reward", "mean_time", "pulls"]


@dataclass
class BanditState:
    counts: np.ndarray = field(default_factory=lambda: np.zeros(3, dtype=np.int64))
    sums: np.ndarray = field(default_factory=lambda: np.zeros(3))
    offsets: tuple = DEFAULT_OFFSETS
    ucb_c: float = 1.0

    @property
    def t(self) -> int:
        return int(self.counts.sum())

    def means(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.counts > 0, self.sums / np.maximum(self.counts, 1), np.nan)


def ucb_select(state: BanditState) -> Arm:
    unpulled = np.flatnonzero(state.counts == 0)
    if unpulled.size:
        return Arm(int(unpulled[0]))
    bonus = state.ucb_c * np.sqrt(2.0 * math.log(state.t) / state.counts)
    return Arm(int(np.argmax(state.sums / state.counts + bonus)))


def update_arm(state: BanditState, arm, raw_reward: float) -> BanditState:
    """Record ``raw_reward`` plus the arm's offset; returns the same state."""
    if not 0.0 <= raw_reward <= 1.0:
        raise ValueError(f"raw reward {raw_reward} outside [0, 1]")
    arm = int(arm)
    state.counts[arm] += 1
    state.sums[arm] += raw_reward + state.offsets[arm]
    return state


@dataclass
class LoopConfig:
    rounds: int = 128
    per_round: int = 16
    retrain_period: int = 4
    epochs: int = 5
    switch_period: int = 5

    def __post_init__(self):
        for k, v in vars(self).items():
            if int(v) <= 0:
                raise ValueError(f"{k} must be a positive integer")


@dataclass
class QueryRecord:
    round: int
    query_idx: int
    object_id: int
    arm: Arm
    raw_reward: float
    offset_reward: float
    label: int
    solve_iters: int
    wall_ms: float
    failed: bool = False


@dataclass
class RoundLog:
    round: int
    records: list[QueryRecord]
    full_retrain: bool
    arm_means: list[float]
    train: dict


def _execute(arm, model, view, bounds, rng, inference, n_cand):
    try:
        return run_arm(arm, model, view, bounds, rng, inference, n_cand)
    except Exception as exc:  # noqa: BLE001 - any arm failure gets one retry
        log.warning("arm %s failed (%s), retrying with a fresh prior sample", arm.label, exc)
    try:
        return run_arm(arm, model, view, bounds, rng, inference, n_cand)
    except Exception as exc:  # noqa: BLE001
        log.warning("arm %s failed twice (%s), recording a failed query", arm.label, exc)
        return None


def run_active(
    cfg: LoopConfig,
    model: GraspModel,
    world: World,
    geodata: Dataset,
    rng: np.random.Generator,
    state: BanditState | None = None,
    train: TrainOpts | None = None,
    inference: InferenceOpts | None = None,
    n_cand: int = 50,
    timing: bool = False,
) -> tuple[GraspModel, Dataset, list[RoundLog], BanditState]:
    """Run ``cfg.rounds`` rounds of ``cfg.per_round`` bandit-selected queries.

    After every round the model is updated for ``cfg.epochs`` epochs: on
    GeoData plus all active data when the round index is a multiple of
    ``cfg.retrain_period``, otherwise on the current round only. ``model`` is
    updated in place and also returned.
    """
    state = state or BanditState()
    train = train or TrainOpts(epochs=cfg.epochs)
    train = replace(train, epochs=cfg.epochs)
    rng_arm, rng_label, rng_obj, rng_train = rng.spawn(4)
    bounds = world.bounds
    active = Dataset(dim=geodata.dim, resolution=geodata.resolution, seed=geodata.seed)
    logs: list[RoundLog] = []
    current = None
    n_query = 0
    for i in range(1, cfg.rounds + 1):
        cur = Dataset(dim=geodata.dim, resolution=geodata.resolution, seed=geodata.seed)
        records = []
        for j in range(cfg.per_round):
            if n_query % cfg.switch_period == 0:
                choices = [o for o in world.ids if o != current] or world.ids
                current = choices[int(rng_obj.integers(len(choices)))]
            n_query += 1
            obj, view = world.objects[current], world.views[current]
            arm = ucb_select(state)
            t0 = time.perf_counter()
            query = _execute(arm, model, view, bounds, rng_arm, inference, n_cand)
            wall = (time.perf_counter() - t0) * 1e3 if timing else 0.0
            failed = query is None
            if failed:
                fallback = prior_start(model.prior.mixture(view), bounds, rng_arm)
                query = ArmQuery(arm, fallback, 0.0, float("nan"))
                label = 0
            else:
                label = oracle_label(obj, query.config, rng_label)
            cur.append(GraspSample(current, query.config, label, ARM_SOURCE[arm], i))
            update_arm(state, arm, query.raw_reward)
            records.append(QueryRecord(i, j, current, arm, query.raw_reward,
                                       query.raw_reward + state.offsets[int(arm)], label,
                                       query.solve_iters, wall, failed))
        active.extend(cur.samples)
        full = i % cfg.retrain_period == 0
        slice_ = concat_datasets(geodata, active) if full else cur
        rec = model.train(slice_, world.views, train, rng_train, tag=f"round {i}")
        logs.append(RoundLog(i, records, full, state.means().tolist(), rec))
        log.info("round %d/%d: pulls %s, means %s%s", i, cfg.rounds, state.counts.tolist(),
                 np.round(state.means(), 3).tolist(), " (full retrain)" if full else "")
    return model, active, logs, state


def _fmt(x) -> str:
    return repr(float(x))


def write_round_log(logs: list[RoundLog], path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ROUND_LOG_HEADER)
        for rl in logs:
            for r in rl.records:
                w.writerow([r.round, r.query_idx, r.arm.label, _fmt(r.raw_reward), _fmt(r.offset_reward),
                            r.label, r.solve_iters, _fmt(r.wall_ms)])


def arm_summary(state: BanditState, logs: list[RoundLog]) -> list[dict]:
    rows = []
    records = [r for rl in logs for r in rl.records]
    for arm in Arm:
        mine = [r for r in records if r.arm == arm]
        n = int(state.counts[int(arm)])
        rows.append({
            "arm": arm.label,
            "mean_reward": float(state.sums[int(arm)] / n) if n else float("nan"),
            "mean_time": float(np.mean([r.wall_ms for r in mine]) / 1e3) if mine else float("nan"),
            "pulls": n,
        })
    return rows


def write_arm_summary(state: BanditState, logs: list[RoundLog], path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ARM_SUMMARY_HEADER)
        for row in arm_summary(state, logs):
            w.writerow([row["arm"], _fmt(row["mean_reward"]), _fmt(row["mean_time"]), row["pulls"]])
