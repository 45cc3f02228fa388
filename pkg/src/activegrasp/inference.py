"""MAP grasp planning: maximize log p(Y=1|q,z) + gain * log p(q|z) over the box."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .core import Bounds, ObjectView, clamp_to_bounds
from .model import ConditionedClassifier, GraspModel, MixtureParams
from .net import log_sigmoid, sigmoid
from .optim import SolveReport, SolverOpts, solve_bounded

log = logging.getLogger(__name__)


@dataclass
class InferenceOpts:
    prior_gain: float = 0.5
    n_restarts: int = 1
    solver: SolverOpts = field(default_factory=SolverOpts)

    def __post_init__(self):
        if self.prior_gain < 0:
            raise ValueError("prior_gain must be non-negative")
        if self.n_restarts < 1:
            raise ValueError("n_restarts must be at least 1")


def map_objective(clf: ConditionedClassifier, mix: MixtureParams, prior_gain: float):
    """J(q) and its gradient, with log-likelihood taken as log-sigmoid of the logit."""

    def value_and_grad(q):
        a, da = clf.logit_and_grad(q)
        lp, dlp = mix.log_pdf_and_grad(q)
        val = float(log_sigmoid(a)) + prior_gain * lp
        grad = float(sigmoid(-a)) * da + prior_gain * dlp
        return val, grad

    return value_and_grad


def prior_start(mix: MixtureParams, b: Bounds, rng: np.random.Generator) -> np.ndarray:
    """One prior sample clamped into the box; uniform in the box if the prior is degenerate."""
    if mix.is_finite():
        q = mix.sample(1, rng)[0]
        if np.all(np.isfinite(q)):
            return clamp_to_bounds(q, b)
    log.warning("prior sampling failed, falling back to a uniform start")
    return b.uniform(rng)


def map_grasp(model: GraspModel, view: ObjectView, b: Bounds, opts: InferenceOpts | None,
              rng: np.random.Generator, start=None) -> tuple[np.ndarray, float, SolveReport]:
    """Best of ``opts.n_restarts`` bounded solves, each started from a prior sample.

    ``start`` overrides the first initialization (for controlled comparisons).
    """
    opts = opts or InferenceOpts()
    clf = model.classifier.condition(view)
    mix = model.prior.mixture(view)
    obj = map_objective(clf, mix, opts.prior_gain)
    best = None
    for k in range(opts.n_restarts):
        q0 = clamp_to_bounds(start, b) if (k == 0 and start is not None) else prior_start(mix, b, rng)
        q, val, rep = solve_bounded(obj, q0, b, opts.solver)
        if best is None or val > best[1]:
            best = (q, val, rep)
    return best
