"""Synthetic grasp world: procedural objects, voxelization, a box-region
success oracle, and a low-diversity heuristic planner for bootstrap data.

Success regions are axis-aligned boxes in configuration space. Every object
owns 2-4 of them, one per approach "side". Side 0 is always present. Region
centers are shared side templates shifted by a linear function of the object
extents and by a per-kind offset in the joint block, so a model that sees the
object size and voxels can transfer what it learned to unseen objects.

Each side has a few critical coordinates with tight tolerances; the rest are
loose. The heuristic planner adds isotropic noise, so its failures come mostly
from the critical coordinates.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import brentq
from scipy.special import erf

from .core import (
    DEFAULT_DIM,
    Bounds,
    Dataset,
    GraspSample,
    ObjectView,
    Source,
    clamp_to_bounds,
    validate_config,
    view_from_record,
    view_to_record,
)

GRID_WIDTH = 0.3
N_SIDES = 4
HEURISTIC_SIDES = (0, 1)
DEFAULT_NOISE = 0.02
TARGET_HEURISTIC_RATE = 1168 / 4578
EXTENT_RANGE = (0.05, 0.25)
N_CRITICAL = 2
CRITICAL_TOLERANCE = (0.08, 0.2)
LOOSE_TOLERANCE = (0.35, 0.5)
# side templates are world constants, shared by every object
TEMPLATE_SEED = 20210321
TEMPLATE_SPREAD = 0.45
SIZE_GAIN = 0.12
KIND_JOINT_SHIFT = {"Box": 0.0, "Cylinder": 0.08, "Ellipsoid": 0.16}


class Kind(str, enum.Enum):
    BOX = "Box"
    CYLINDER = "Cylinder"
    ELLIPSOID = "Ellipsoid"


@dataclass(frozen=True)
class SuccessRegion:
    side: int
    center: np.ndarray
    tolerance: np.ndarray

    def contains(self, q) -> bool:
        return bool(np.all(np.abs(np.asarray(q) - self.center) <= self.tolerance))

    def volume(self) -> float:
        return float(np.prod(2.0 * self.tolerance))


@dataclass(frozen=True)
class OracleSpec:
    regions: tuple[SuccessRegion, ...]
    noise: float = DEFAULT_NOISE

    def __post_init__(self):
        if not 0.0 <= self.noise <= 0.05:
            raise ValueError(f"label noise {self.noise} outside [0, 0.05]")
        for r in self.regions:
            if not np.all(r.tolerance > 0):
                raise ValueError("region tolerances must be positive")


@dataclass(frozen=True)
class SyntheticObject:
    object_id: int
    seed: int
    kind: Kind
    extents: np.ndarray
    oracle: OracleSpec
    bounds: Bounds

    @property
    def sides(self) -> tuple[int, ...]:
        return tuple(r.side for r in self.oracle.regions)

    def with_noise(self, noise: float) -> "SyntheticObject":
        return SyntheticObject(
            self.object_id, self.seed, self.kind, self.extents,
            OracleSpec(self.oracle.regions, noise), self.bounds,
        )


def side_templates(dim: int = DEFAULT_DIM) -> np.ndarray:
    """Canonical region centers, one row per side."""
    rng = np.random.default_rng([TEMPLATE_SEED, dim])
    return rng.uniform(-TEMPLATE_SPREAD, TEMPLATE_SPREAD, size=(N_SIDES, dim))


def critical_dims(dim: int = DEFAULT_DIM) -> np.ndarray:
    """Indices of the tight-tolerance coordinates, one row per side."""
    rng = np.random.default_rng([TEMPLATE_SEED, dim, 2])
    k = min(N_CRITICAL, dim)
    return np.stack([np.sort(rng.choice(dim, k, replace=False)) for _ in range(N_SIDES)])


def _size_coupling(dim: int) -> np.ndarray:
    rng = np.random.default_rng([TEMPLATE_SEED, dim, 1])
    return rng.uniform(-SIZE_GAIN, SIZE_GAIN, size=(N_SIDES, dim, 3))


def principal_size(extents) -> np.ndarray:
    """Object-frame size vector: extents sorted longest first."""
    return np.sort(np.asarray(extents, dtype=np.float64))[::-1].copy()


def occupancy(kind: Kind, extents, points: np.ndarray) -> np.ndarray:
    """Point-in-shape test for points given in the object's principal frame.

    ``extents`` are full side lengths along the principal axes. Cylinders have
    their axis along whichever principal axis carries the odd extent.
    """
    half = np.asarray(extents, dtype=np.float64) / 2.0
    p = np.asarray(points, dtype=np.float64)
    if kind == Kind.BOX:
        return np.all(np.abs(p) <= half, axis=-1)
    if kind == Kind.ELLIPSOID:
        return np.sum((p / half) ** 2, axis=-1) <= 1.0
    if kind == Kind.CYLINDER:
        axis = _cylinder_axis(half)
        radial = [i for i in range(3) if i != axis]
        r = np.sum((p[..., radial] / half[radial]) ** 2, axis=-1) <= 1.0
        return r & (np.abs(p[..., axis]) <= half[axis])
    raise ValueError(f"unknown object kind {kind!r}")


def _cylinder_axis(half: np.ndarray) -> int:
    # the two radial extents are equal; the axis is the remaining one
    diffs = [abs(half[(i + 1) % 3] - half[(i + 2) % 3]) for i in range(3)]
    return int(np.argmin(diffs))


def voxel_centers(resolution: int, width: float = GRID_WIDTH) -> np.ndarray:
    cell = width / resolution
    ticks = -width / 2 + cell * (np.arange(resolution) + 0.5)
    return np.stack(np.meshgrid(ticks, ticks, ticks, indexing="ij"), axis=-1)


def voxelize(kind: Kind, extents, resolution: int = 32, width: float = GRID_WIDTH) -> np.ndarray:
    return occupancy(kind, extents, voxel_centers(resolution, width))


def _region_center(side: int, kind: Kind, size: np.ndarray, dim: int) -> np.ndarray:
    centers = side_templates(dim)
    coupling = _size_coupling(dim)
    mid = sum(EXTENT_RANGE) / 2
    span = (EXTENT_RANGE[1] - EXTENT_RANGE[0]) / 2
    size_norm = (size - mid) / span
    c = centers[side] + coupling[side] @ size_norm
    joint = slice(min(7, dim), dim)
    c[joint] += KIND_JOINT_SHIFT[kind.value]
    return c


def generate_object(
    seed: int,
    object_id: int | None = None,
    resolution: int = 32,
    bounds: Bounds | None = None,
    noise: float = DEFAULT_NOISE,
    width: float = GRID_WIDTH,
) -> tuple[SyntheticObject, ObjectView]:
    """Build a deterministic synthetic object and its voxel view from ``seed``."""
    bounds = bounds or Bounds.box(DEFAULT_DIM)
    dim = bounds.dim
    rng = np.random.default_rng([seed, 0x0B1EC7])
    kind = list(Kind)[rng.integers(3)]
    lo, hi = EXTENT_RANGE
    if kind == Kind.CYLINDER:
        diameter, height = rng.uniform(lo, hi, size=2)
        extents = np.array([diameter, diameter, height])
    else:
        extents = rng.uniform(lo, hi, size=3)
    size = principal_size(extents)

    extra = rng.permutation(np.arange(1, N_SIDES))[: rng.integers(1, N_SIDES)]
    sides = sorted([0, *extra.tolist()])
    regions = []
    crit = critical_dims(dim)
    for side in sides:
        tol = rng.uniform(*LOOSE_TOLERANCE, size=dim)
        tol[crit[side]] = rng.uniform(*CRITICAL_TOLERANCE, size=crit.shape[1])
        center = _region_center(side, kind, size, dim)
        margin = 1e-3 * bounds.width
        center = np.clip(center, bounds.lower + tol + margin, bounds.upper - tol - margin)
        regions.append(SuccessRegion(side, center, tol))
    oid = seed if object_id is None else object_id
    obj = SyntheticObject(oid, seed, kind, size, OracleSpec(tuple(regions), noise), bounds)
    view = ObjectView(oid, voxelize(kind, size, resolution, width), size)
    return obj, view


def in_success_region(o: SyntheticObject, q) -> bool:
    return any(r.contains(q) for r in o.oracle.regions)


def oracle_label(o: SyntheticObject, q, rng: np.random.Generator) -> int:
    """Noisy ground-truth success label for grasp ``q`` on object ``o``."""
    if not validate_config(q, o.bounds):
        raise ValueError("grasp config lies outside the configuration bounds")
    hit = in_success_region(o, q)
    flip = rng.random() < o.oracle.noise
    return int(hit != flip)


def nearest_region(o: SyntheticObject, q) -> SuccessRegion:
    """Region minimizing the tolerance-normalized Chebyshev distance to ``q``."""
    q = np.asarray(q)
    return min(o.oracle.regions, key=lambda r: float(np.max(np.abs(q - r.center) / r.tolerance)))


def heuristic_sigma(region: SuccessRegion, noise: float = DEFAULT_NOISE,
                    target: float = TARGET_HEURISTIC_RATE) -> float:
    """Isotropic planner noise giving the target observed success rate on ``region``.

    In-region probability for noise ``s`` is ``prod_i erf(tol_i / (s sqrt 2))``;
    label noise then mixes it with its complement.
    """
    p_in = (target - noise) / (1.0 - 2.0 * noise)
    tol = region.tolerance

    def gap(s):
        return float(np.prod(erf(tol / (s * np.sqrt(2.0))))) - p_in

    return brentq(gap, 1e-6, 10.0 * float(tol.max()), xtol=1e-12)


def heuristic_plan(o: SyntheticObject, rng: np.random.Generator, spread: float = 1.0) -> np.ndarray:
    """Geometric-planner stand-in: a noisy grasp around a side-0/side-1 region.

    ``spread`` scales the calibrated noise (0 returns the region center).
    """
    candidates = [r for r in o.oracle.regions if r.side in HEURISTIC_SIDES]
    region = candidates[rng.integers(len(candidates))]
    sigma = spread * heuristic_sigma(region, o.oracle.noise)
    q = region.center + rng.normal(size=o.bounds.dim) * sigma
    return clamp_to_bounds(q, o.bounds)


def bootstrap_geodata(
    n: int,
    pool: list[SyntheticObject],
    rng: np.random.Generator,
    resolution: int = 32,
    seed: int | None = None,
) -> Dataset:
    """Label ``n`` heuristic grasps, visiting the object pool round-robin."""
    if n <= 0:
        raise ValueError("bootstrap_geodata needs n > 0")
    if not pool:
        raise ValueError("object pool is empty")
    d = Dataset(dim=pool[0].bounds.dim, resolution=resolution, seed=seed)
    for i in range(n):
        o = pool[i % len(pool)]
        q = heuristic_plan(o, rng)
        d.append(GraspSample(o.object_id, q, oracle_label(o, q, rng), Source.HEURISTIC, 0))
    return d


class World:
    """Object pool with views, keyed by object id."""

    def __init__(self, objects: list[SyntheticObject], views: list[ObjectView]):
        self.objects = {o.object_id: o for o in objects}
        self.views = {v.object_id: v for v in views}
        self.ids = [o.object_id for o in objects]

    @classmethod
    def generate(cls, seeds, resolution: int = 32, bounds: Bounds | None = None,
                 noise: float = DEFAULT_NOISE, id_offset: int = 0) -> "World":
        objs, views = [], []
        for i, s in enumerate(seeds):
            o, v = generate_object(int(s), object_id=id_offset + i, resolution=resolution,
                                   bounds=bounds, noise=noise)
            objs.append(o)
            views.append(v)
        return cls(objs, views)

    def __len__(self):
        return len(self.ids)

    @property
    def pool(self) -> list[SyntheticObject]:
        return [self.objects[i] for i in self.ids]

    @property
    def bounds(self) -> Bounds:
        return self.objects[self.ids[0]].bounds

    @property
    def resolution(self) -> int:
        return self.views[self.ids[0]].resolution


def object_to_record(o: SyntheticObject, view: ObjectView) -> dict:
    rec = view_to_record(view)
    rec.update({
        "seed": o.seed,
        "kind": o.kind.value,
        "extents": [float(v) for v in o.extents],
        "oracle": {
            "noise": o.oracle.noise,
            "regions": [
                {"side": r.side, "center": [float(v) for v in r.center],
                 "tolerance": [float(v) for v in r.tolerance]}
                for r in o.oracle.regions
            ],
        },
        "bounds": {"lower": [float(v) for v in o.bounds.lower],
                   "upper": [float(v) for v in o.bounds.upper]},
    })
    return rec


def object_from_record(rec: dict) -> tuple[SyntheticObject, ObjectView]:
    view = view_from_record(rec)
    bounds = Bounds(rec["bounds"]["lower"], rec["bounds"]["upper"])
    regions = tuple(
        SuccessRegion(r["side"], np.array(r["center"]), np.array(r["tolerance"]))
        for r in rec["oracle"]["regions"]
    )
    obj = SyntheticObject(rec["object_id"], rec["seed"], Kind(rec["kind"]), np.array(rec["extents"]),
                          OracleSpec(regions, rec["oracle"]["noise"]), bounds)
    return obj, view


def save_world(world: World, path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for oid in world.ids:
            fh.write(json.dumps(object_to_record(world.objects[oid], world.views[oid])) + "\n")


def load_world(path) -> World:
    objs, views = [], []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                o, v = object_from_record(json.loads(line))
                objs.append(o)
                views.append(v)
    return World(objs, views)
