"""Experiment configuration: every tunable default in one JSON-serializable dataclass."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .inference import InferenceOpts
from .model import ModelConfig, TrainOpts
from .optim import SolverOpts


@dataclass
class ExperimentConfig:
    # grasp space and object representation
    dim: int = 15
    resolution: int = 32
    grid_width: float = 0.3
    noise: float = 0.02
    # networks
    filters: list = field(default_factory=lambda: [8, 16])
    trunk_width: int = 64
    q_width: int = 32
    head_width: int = 32
    n_components: int = 3
    sigma_floor: float = 1e-3
    q_scale: float = 5.0
    # online training
    lr: float = 1e-3
    mdn_lr: float = 1e-3
    momentum: float = 0.9
    batch_size: int = 32
    grad_clip: float = 5.0
    # initial supervised training on heuristic data
    init_epochs: int = 80
    init_lr: float = 1e-2
    init_mdn_lr: float = 1e-2
    # active loop
    rounds: int = 128
    per_round: int = 16
    retrain_period: int = 4
    epochs: int = 5
    switch_period: int = 5
    ucb_c: float = 1.0
    offsets: list = field(default_factory=lambda: [0.35, -0.05, 0.6])
    n_cand: int = 50
    # inference and solver
    prior_gain: float = 0.5
    n_restarts: int = 1
    solver_max_iter: int = 100
    solver_tol: float = 1e-5
    solver_memory: int = 10
    solver_backtrack: float = 0.5
    # data and evaluation
    n_objects: int = 10
    n_geodata: int = 1000
    eval_objects: int = 20
    eval_attempts: int = 5
    ridge: float = 1e-6
    entropy_subsets: int = 4
    # wall-clock columns in logs; off keeps outputs byte-reproducible
    timing: bool = False

    def __post_init__(self):
        for name in ("dim", "resolution", "rounds", "per_round", "retrain_period", "epochs",
                     "switch_period", "n_cand", "n_components", "batch_size", "n_objects"):
            if int(getattr(self, name)) <= 0:
                raise ValueError(f"config value {name} must be a positive integer")
        if len(self.offsets) != 3:
            raise ValueError("offsets needs one value per arm")

    def model_config(self) -> ModelConfig:
        return ModelConfig(dim=self.dim, resolution=self.resolution, filters=tuple(self.filters),
                           trunk_width=self.trunk_width, q_width=self.q_width, head_width=self.head_width,
                           n_components=self.n_components, sigma_floor=self.sigma_floor,
                           q_scale=self.q_scale)

    def solver(self) -> SolverOpts:
        return SolverOpts(max_iter=self.solver_max_iter, tol=self.solver_tol,
                          memory=self.solver_memory, backtrack=self.solver_backtrack)

    def inference(self) -> InferenceOpts:
        return InferenceOpts(prior_gain=self.prior_gain, n_restarts=self.n_restarts, solver=self.solver())

    def online_train(self) -> TrainOpts:
        return TrainOpts(epochs=self.epochs, lr=self.lr, mdn_lr=self.mdn_lr,
                         momentum=self.momentum, batch_size=self.batch_size, clip=self.grad_clip)

    def init_train(self) -> TrainOpts:
        return TrainOpts(epochs=self.init_epochs, lr=self.init_lr, mdn_lr=self.init_mdn_lr,
                         momentum=self.momentum, batch_size=self.batch_size, clip=self.grad_clip)

    def to_dict(self) -> dict:
        return asdict(self)

    def replace(self, **changes) -> "ExperimentConfig":
        return ExperimentConfig(**{**self.to_dict(), **changes})

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def desk_config(**changes) -> ExperimentConfig:
    """Desk-scale settings: 16^3 voxels, 32 rounds of 8 queries."""
    base = dict(resolution=16, rounds=32, per_round=8)
    base.update(changes)
    return ExperimentConfig(**base)
