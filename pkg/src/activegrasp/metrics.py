"""Diversity (fitted-Gaussian differential entropy) and grasp success evaluation."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import Dataset
from .inference import InferenceOpts, map_grasp
from .world import World, nearest_region, oracle_label

log = logging.getLogger(__name__)

DEFAULT_RIDGE = 1e-6
PARTITIONS = ("config", "pose", "joint")
ENTROPY_HEADER = ["partition", "active", "heuristic_mean", "heuristic_std", "ridge", "subsets", "subset_size"]
EVAL_HEADER = ["scope", "key", "attempts", "successes", "rate"]


def entropy_from_cov(cov: np.ndarray, ridge: float = 0.0) -> float:
    """0.5 * ln((2 pi e)^d det(cov + ridge I))."""
    cov = np.atleast_2d(np.asarray(cov, dtype=np.float64))
    d = cov.shape[0]
    sign, logdet = np.linalg.slogdet(cov + ridge * np.eye(d))
    if sign <= 0:
        return float("-inf")
    return 0.5 * (d * np.log(2.0 * np.pi * np.e) + logdet)


def gaussian_entropy(samples, ridge: float = DEFAULT_RIDGE) -> float:
    """Differential entropy of a Gaussian fit (sample mean and covariance) to ``samples``."""
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    n, d = x.shape
    if n < d + 1:
        raise ValueError(f"need at least {d + 1} samples of dimension {d}, got {n}")
    return entropy_from_cov(np.cov(x, rowvar=False), ridge)


def partition_slices(dim: int) -> dict[str, slice]:
    split = min(7, dim)
    return {"config": slice(0, dim), "pose": slice(0, split), "joint": slice(split, dim)}


@dataclass
class EntropyReport:
    rows: dict[str, dict[str, float]]
    ridge: float
    subsets: int
    subset_size: int

    def to_rows(self) -> list[list]:
        return [[p, r["active"], r["heuristic_mean"], r["heuristic_std"], self.ridge, self.subsets,
                 self.subset_size] for p, r in self.rows.items()]


def diversity_report(active: Dataset, heuristic: Dataset, rng: np.random.Generator, subsets: int = 4,
                     ridge: float = DEFAULT_RIDGE) -> EntropyReport:
    """Active-data entropy against same-size random heuristic subsets, per partition."""
    a, h = active.configs(), heuristic.configs()
    n = a.shape[0]
    if h.shape[0] < n:
        raise ValueError(f"heuristic data ({h.shape[0]}) smaller than active data ({n})")
    picks = [rng.choice(h.shape[0], size=n, replace=False) for _ in range(subsets)]
    rows = {}
    for name, sl in partition_slices(a.shape[1]).items():
        if sl.stop <= sl.start:
            continue
        hs = np.array([gaussian_entropy(h[idx, sl], ridge) for idx in picks])
        rows[name] = {"active": gaussian_entropy(a[:, sl], ridge),
                      "heuristic_mean": float(hs.mean()), "heuristic_std": float(hs.std())}
    return EntropyReport(rows, ridge, subsets, n)


def write_entropy_report(rep: EntropyReport, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ENTROPY_HEADER)
        for row in rep.to_rows():
            w.writerow([row[0], *(repr(float(v)) for v in row[1:5]), row[5], row[6]])


@dataclass
class EvalReport:
    per_object: dict[int, tuple[int, int]]
    per_side: dict[int, tuple[int, int]]
    configs: np.ndarray
    labels: np.ndarray
    failures: int = 0
    entropy: dict[str, float] = field(default_factory=dict)

    @property
    def attempts(self) -> int:
        return int(self.labels.size)

    @property
    def rate(self) -> float:
        return float(self.labels.mean()) if self.labels.size else float("nan")

    def object_rate(self, oid: int) -> float:
        n, k = self.per_object[oid]
        return k / n

    def rows(self) -> list[list]:
        out = [["object", oid, n, k, k / n] for oid, (n, k) in self.per_object.items()]
        out += [["side", s, n, k, k / n] for s, (n, k) in sorted(self.per_side.items())]
        out.append(["all", "all", self.attempts, int(self.labels.sum()), self.rate])
        return out


def eval_success_rate(model, world: World, attempts_per_object: int, rng: np.random.Generator,
                      inference: InferenceOpts | None = None, ridge: float = DEFAULT_RIDGE,
                      objects: list[int] | None = None) -> EvalReport:
    """Plan ``attempts_per_object`` MAP grasps per object and label them with the oracle.

    A planning exception gets one retry; a second exception counts as a failed
    attempt. Attempts are grouped by the success region nearest the planned
    grasp (side-analog breakdown).
    """
    objects = list(world.ids) if objects is None else objects
    per_object, per_side = {}, {}
    configs, labels = [], []
    failures = 0
    bounds = world.bounds
    for oid in objects:
        obj, view = world.objects[oid], world.views[oid]
        n_ok = 0
        for _ in range(attempts_per_object):
            q = None
            for _try in range(2):
                try:
                    q, _, _ = map_grasp(model, view, bounds, inference, rng)
                    break
                except Exception as exc:  # noqa: BLE001 - counted as a failed attempt
                    log.warning("inference failed on object %d: %s", oid, exc)
            if q is None:
                failures += 1
                labels.append(0)
                continue
            y = oracle_label(obj, q, rng)
            side = nearest_region(obj, q).side
            n, k = per_side.get(side, (0, 0))
            per_side[side] = (n + 1, k + y)
            configs.append(q)
            labels.append(y)
            n_ok += y
        per_object[oid] = (attempts_per_object, n_ok)
    configs = np.array(configs).reshape(-1, bounds.dim)
    rep = EvalReport(per_object, per_side, configs, np.array(labels, dtype=np.int64), failures)
    if configs.shape[0] > bounds.dim:
        rep.entropy = {name: gaussian_entropy(configs[:, sl], ridge)
                       for name, sl in partition_slices(bounds.dim).items() if sl.stop > sl.start}
    return rep


def write_eval_report(rep: EvalReport, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EVAL_HEADER)
        for scope, key, n, k, rate in rep.rows():
            w.writerow([scope, key, n, k, repr(float(rate))])
