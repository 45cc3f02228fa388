"""The three query-synthesis arms: max success, max uncertainty, exploration.

Each arm returns an :class:`ArmQuery` whose ``raw_reward`` lies in [0, 1];
the bandit adds its per-arm offsets later.
"""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass

import numpy as np

from .core import Bounds, ObjectView, clamp_to_bounds
from .inference import InferenceOpts, map_grasp, prior_start
from .model import ConditionedClassifier, GraspModel, MixtureParams
from .net import sigmoid
from .optim import SolveReport, SolverOpts, Termination, solve_bounded

log = logging.getLogger(__name__)

N_CANDIDATES = 50


class Arm(enum.IntEnum):
    SUCCESS = 0
    UNCERTAINTY = 1
    EXPLORE = 2

    @property
    def label(self) -> str:
        return {0: "success", 1: "uncertainty", 2: "explore"}[int(self)]


@dataclass
class ArmQuery:
    arm: Arm
    config: np.ndarray
    raw_reward: float
    objective: float
    report: SolveReport | None = None

    @property
    def solve_iters(self) -> int:
        return 0 if self.report is None else self.report.iterations


def f_uncertainty(log_p):
    """Half the logistic of the log prior density; strictly inside (0, 0.5)."""
    return 0.5 * sigmoid(log_p)


def g_regularizer(p):
    """min(p, 1 - p), using the ``p <= 0.5`` branch at the tie."""
    p = np.asarray(p, dtype=np.float64)
    out = np.where(p <= 0.5, p, 1.0 - p)
    return float(out) if out.ndim == 0 else out


def uncertainty_objective(clf: ConditionedClassifier, mix: MixtureParams):
    def value_and_grad(q):
        a, da = clf.logit_and_grad(q)
        lp, dlp = mix.log_pdf_and_grad(q)
        s = float(sigmoid(lp))
        p = float(sigmoid(a))
        dp = p * (1.0 - p) * da
        val = 0.5 * s + g_regularizer(p)
        grad = 0.5 * s * (1.0 - s) * dlp + (dp if p <= 0.5 else -dp)
        return val, grad

    return value_and_grad


def uncertainty_query(model: GraspModel, view: ObjectView, b: Bounds, rng: np.random.Generator,
                      solver: SolverOpts | None = None) -> ArmQuery:
    clf = model.classifier.condition(view)
    mix = model.prior.mixture(view)
    q0 = prior_start(mix, b, rng)
    q, val, rep = solve_bounded(uncertainty_objective(clf, mix), q0, b, solver)
    if rep.reason == Termination.LINE_SEARCH_FAIL:
        log.debug("uncertainty arm: line search failed, keeping best-so-far")
    return ArmQuery(Arm.UNCERTAINTY, q, float(np.clip(val, 0.0, 1.0)), val, rep)


def success_query(model: GraspModel, view: ObjectView, b: Bounds, opts: InferenceOpts | None,
                  rng: np.random.Generator) -> ArmQuery:
    q, val, rep = map_grasp(model, view, b, opts, rng)
    return ArmQuery(Arm.SUCCESS, q, float(sigmoid(val)), val, rep)


def explore_candidates(mix: MixtureParams, b: Bounds, rng: np.random.Generator,
                       n_cand: int = N_CANDIDATES) -> np.ndarray:
    return clamp_to_bounds(mix.sample(n_cand, rng), b)


def explore_query(model: GraspModel, view: ObjectView, b: Bounds, rng: np.random.Generator,
                  n_cand: int = N_CANDIDATES) -> ArmQuery:
    """Lowest-density candidate among ``n_cand`` clamped prior samples."""
    mix = model.prior.mixture(view)
    cands = explore_candidates(mix, b, rng, n_cand)
    lp = mix.log_pdf(cands)
    i = int(np.argmin(lp))
    return ArmQuery(Arm.EXPLORE, cands[i], float(sigmoid(-lp[i])), float(lp[i]))


def run_arm(arm: Arm, model: GraspModel, view: ObjectView, b: Bounds, rng: np.random.Generator,
            inference: InferenceOpts | None = None, n_cand: int = N_CANDIDATES) -> ArmQuery:
    inference = inference or InferenceOpts()
    if arm == Arm.SUCCESS:
        return success_query(model, view, b, inference, rng)
    if arm == Arm.UNCERTAINTY:
        return uncertainty_query(model, view, b, rng, inference.solver)
    return explore_query(model, view, b, rng, n_cand)
