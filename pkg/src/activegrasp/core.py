"""Domain types, box bounds, the append-only grasp dataset and its on-disk formats.

A grasp configuration is a plain 1-D float64 numpy array of length ``D``.
The default layout has a 7-entry pose block followed by an 8-entry joint
block.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

DEFAULT_DIM = 15
POSE_BLOCK = slice(0, 7)
JOINT_BLOCK = slice(7, 15)

DATASET_FORMAT = "activegrasp-dataset"
DATASET_VERSION = 1
CHECKPOINT_FORMAT = "activegrasp-checkpoint"
CHECKPOINT_VERSION = 1


class FormatError(ValueError):
    """Raised when a persisted file does not follow the expected schema."""


class Source(str, enum.Enum):
    HEURISTIC = "Heuristic"
    ARM_SUCCESS = "ArmSuccess"
    ARM_UNCERTAINTY = "ArmUncertainty"
    ARM_EXPLORE = "ArmExplore"


def make_config(values, dim: int | None = None) -> np.ndarray:
    """Return ``values`` as a fresh finite float64 grasp vector."""
    q = np.array(values, dtype=np.float64).reshape(-1)
    if dim is not None and q.shape[0] != dim:
        raise ValueError(f"grasp config has length {q.shape[0]}, expected {dim}")
    if not np.all(np.isfinite(q)):
        raise ValueError("grasp config contains non-finite entries")
    return q


@dataclass(frozen=True)
class Bounds:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=np.float64).reshape(-1)
        hi = np.asarray(self.upper, dtype=np.float64).reshape(-1)
        if lo.shape != hi.shape:
            raise ValueError("lower and upper bounds differ in length")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ValueError("bounds must be finite")
        if not np.all(lo < hi):
            raise ValueError("every lower bound must be strictly below its upper bound")
        lo.flags.writeable = False
        hi.flags.writeable = False
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    @classmethod
    def box(cls, dim: int = DEFAULT_DIM, low: float = -1.0, high: float = 1.0) -> "Bounds":
        return cls(np.full(dim, low), np.full(dim, high))

    def uniform(self, rng: np.random.Generator, n: int | None = None) -> np.ndarray:
        size = self.dim if n is None else (n, self.dim)
        return rng.uniform(self.lower, self.upper, size=size)


def _check_dim(q: np.ndarray, b: Bounds) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    if q.shape[-1] != b.dim:
        raise ValueError(f"config dimension {q.shape[-1]} does not match bounds dimension {b.dim}")
    return q


def validate_config(q, b: Bounds) -> bool:
    """True iff ``lower <= q <= upper`` holds in every coordinate."""
    q = _check_dim(q, b)
    return bool(np.all(q >= b.lower) and np.all(q <= b.upper))


def clamp_to_bounds(q, b: Bounds) -> np.ndarray:
    """Project ``q`` onto the box (elementwise clip)."""
    q = _check_dim(q, b)
    return np.minimum(b.upper, np.maximum(b.lower, q))


@dataclass(frozen=True)
class ObjectView:
    """Visual representation of an object: binary occupancy grid plus extents."""

    object_id: int
    voxels: np.ndarray
    size: np.ndarray

    def __post_init__(self):
        vox = np.asarray(self.voxels, dtype=bool)
        if vox.ndim != 3 or len(set(vox.shape)) != 1:
            raise ValueError(f"voxel grid must be a cube, got shape {vox.shape}")
        size = np.asarray(self.size, dtype=np.float64).reshape(-1)
        if size.shape != (3,) or not np.all(size > 0):
            raise ValueError("object size must be a positive 3-vector")
        object.__setattr__(self, "voxels", vox)
        object.__setattr__(self, "size", size)

    @property
    def resolution(self) -> int:
        return self.voxels.shape[0]


@dataclass(frozen=True)
class GraspSample:
    object_id: int
    config: np.ndarray
    label: int
    source: Source
    round: int = 0

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label!r}")
        object.__setattr__(self, "config", make_config(self.config))
        object.__setattr__(self, "source", Source(self.source))
        object.__setattr__(self, "label", int(self.label))
        object.__setattr__(self, "object_id", int(self.object_id))
        object.__setattr__(self, "round", int(self.round))

    def __eq__(self, other):
        if not isinstance(other, GraspSample):
            return NotImplemented
        return (
            self.object_id == other.object_id
            and self.label == other.label
            and self.source == other.source
            and self.round == other.round
            and np.array_equal(self.config, other.config)
        )

    def to_record(self) -> dict:
        return {
            "object_id": self.object_id,
            "round": self.round,
            "source": self.source.value,
            "label": self.label,
            "config": [float(v) for v in self.config],
        }

    @classmethod
    def from_record(cls, rec: dict) -> "GraspSample":
        return cls(
            object_id=rec["object_id"],
            config=rec["config"],
            label=rec["label"],
            source=Source(rec["source"]),
            round=rec["round"],
        )


@dataclass
class Dataset:
    """Ordered, append-only collection of labeled grasps."""

    dim: int = DEFAULT_DIM
    resolution: int = 32
    seed: int | None = None
    samples: list[GraspSample] = field(default_factory=list)

    def __len__(self):
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def append(self, sample: GraspSample) -> None:
        if sample.config.shape[0] != self.dim:
            raise ValueError(f"sample has dimension {sample.config.shape[0]}, dataset expects {self.dim}")
        self.samples.append(sample)

    def extend(self, samples) -> None:
        for s in samples:
            self.append(s)

    def configs(self) -> np.ndarray:
        if not self.samples:
            return np.zeros((0, self.dim))
        return np.stack([s.config for s in self.samples])

    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.samples], dtype=np.int64)

    def object_ids(self) -> np.ndarray:
        return np.array([s.object_id for s in self.samples], dtype=np.int64)

    def successes(self) -> "Dataset":
        return self.subset([s for s in self.samples if s.label == 1])

    def subset(self, samples) -> "Dataset":
        return Dataset(self.dim, self.resolution, self.seed, list(samples))

    def metadata(self) -> dict:
        return {"dim": self.dim, "resolution": self.resolution, "seed": self.seed}


def concat_datasets(*datasets: Dataset) -> Dataset:
    first = datasets[0]
    out = Dataset(first.dim, first.resolution, first.seed)
    for d in datasets:
        out.extend(d.samples)
    return out


def save_dataset(d: Dataset, path) -> None:
    path = Path(path)
    header = {"format": DATASET_FORMAT, "version": DATASET_VERSION, **d.metadata()}
    with path.open("w", encoding="utf-8") as fh:
        fh.write(json.dumps(header) + "\n")
        for s in d.samples:
            fh.write(json.dumps(s.to_record()) + "\n")


def load_dataset(path) -> Dataset:
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise FormatError(f"{path}: empty file, missing header")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}:1: malformed header: {exc}") from exc
    if header.get("format") != DATASET_FORMAT:
        raise FormatError(f"{path}:1: not a dataset file")
    if header.get("version") != DATASET_VERSION:
        raise FormatError(f"{path}:1: unsupported dataset version {header.get('version')!r}")
    d = Dataset(dim=header["dim"], resolution=header["resolution"], seed=header["seed"])
    for lineno, line in enumerate(lines[1:], start=2):
        try:
            d.append(GraspSample.from_record(json.loads(line)))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"{path}:{lineno}: malformed record: {exc}") from exc
    return d


# Voxel grids are stored as alternating run lengths, starting with a run of
# zeros, over the C-order flattening of the grid.

def rle_encode(voxels: np.ndarray) -> str:
    flat = np.asarray(voxels, dtype=bool).reshape(-1)
    if flat.size == 0:
        return ""
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    edges = np.concatenate([[0], change, [flat.size]])
    runs = np.diff(edges).tolist()
    if flat[0]:
        runs = [0] + runs
    return ".".join(str(r) for r in runs)


def rle_decode(text: str, resolution: int) -> np.ndarray:
    n = resolution**3
    flat = np.zeros(n, dtype=bool)
    pos, value = 0, False
    for tok in text.split(".") if text else []:
        run = int(tok)
        flat[pos:pos + run] = value
        pos += run
        value = not value
    if pos != n:
        raise FormatError(f"run-length code covers {pos} voxels, expected {n}")
    return flat.reshape(resolution, resolution, resolution)


def view_to_record(view: ObjectView) -> dict:
    return {
        "object_id": view.object_id,
        "size": [float(v) for v in view.size],
        "resolution": view.resolution,
        "voxels": rle_encode(view.voxels),
    }


def view_from_record(rec: dict) -> ObjectView:
    return ObjectView(
        object_id=rec["object_id"],
        voxels=rle_decode(rec["voxels"], rec["resolution"]),
        size=rec["size"],
    )


def save_checkpoint(params: dict[str, np.ndarray], path, meta: dict | None = None) -> None:
    """Write ``<path>.json`` (manifest) and ``<path>.bin`` (little-endian float64 blob)."""
    path = Path(path)
    entries, offset, chunks = [], 0, []
    for name, arr in params.items():
        raw = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        entries.append({"name": name, "shape": list(np.shape(arr)), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "dtype": "<f8",
        "params": entries,
        "meta": meta or {},
    }
    path.with_suffix(".bin").write_bytes(b"".join(chunks))
    path.with_suffix(".json").write_text(json.dumps(manifest, indent=1) + "\n", encoding="utf-8")


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    manifest = json.loads(path.with_suffix(".json").read_text(encoding="utf-8"))
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise FormatError(f"{path}: not a checkpoint manifest")
    if manifest.get("version") != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {manifest.get('version')!r}")
    blob = path.with_suffix(".bin").read_bytes()
    params = {}
    for e in manifest["params"]:
        chunk = blob[e["offset"]:e["offset"] + e["nbytes"]]
        if len(chunk) != e["nbytes"]:
            raise FormatError(f"{path}: truncated data for parameter {e['name']}")
        params[e["name"]] = np.frombuffer(chunk, dtype="<f8").astype(np.float64).reshape(e["shape"])
    return params, manifest["meta"]
