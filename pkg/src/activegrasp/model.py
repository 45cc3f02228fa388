"""Grasp model: voxel success classifier and mixture-density grasp prior.

Both networks share the same layout but not their weights: a 3D-conv voxel
trunk, the object size vector, and (classifier only) a dense branch on the
grasp configuration. The voxel trunk never sees ``q``, so for planning we
evaluate it once per object and optimize over the cheap remainder.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .core import Dataset, ObjectView
from .net import (
    ELU,
    SGD,
    Concat,
    Dense,
    DivergenceError,
    ParamSet,
    Sequential,
    log_sigmoid,
    sigmoid,
    softmax,
    voxel_trunk,
)

log = logging.getLogger(__name__)

SIZE_SCALE = 10.0
LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class ModelConfig:
    dim: int = 15
    resolution: int = 32
    filters: tuple[int, ...] = (8, 16)
    trunk_width: int = 64
    q_width: int = 32
    head_width: int = 32
    n_components: int = 3
    sigma_floor: float = 1e-3
    # fixed input gain on q; success regions are ~0.1 wide in a [-1, 1] box
    q_scale: float = 5.0


def view_tensor(views: list[ObjectView]) -> tuple[np.ndarray, np.ndarray]:
    vox = np.stack([v.voxels for v in views]).astype(np.float64)[:, None]
    sizes = np.stack([v.size for v in views]) * SIZE_SCALE
    return vox, sizes


def _gather(ids: np.ndarray, views: dict[int, ObjectView]):
    uniq, inv = np.unique(ids, return_inverse=True)
    vox, sizes = view_tensor([views[int(i)] for i in uniq])
    return vox, sizes, inv


# ---------------------------------------------------------------------------
# classifier


class Classifier:
    """p(Y=1 | q, z, W) with a sigmoid head; ``forward`` returns logits."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, prefix: str = "classifier"):
        self.cfg = cfg
        self.params = ParamSet()
        self.trunk, tw = voxel_trunk(self.params, f"{prefix}/trunk", cfg.resolution, rng,
                                     cfg.filters, cfg.trunk_width)
        self.qnet = Sequential([Dense(self.params, f"{prefix}/q.fc", cfg.dim, cfg.q_width, rng), ELU()])
        self.concat = Concat()
        self.head = Sequential([
            Dense(self.params, f"{prefix}/head.fc", tw + cfg.q_width + 3, cfg.head_width, rng),
            ELU(),
            Dense(self.params, f"{prefix}/head.out", cfg.head_width, 1, rng),
        ])
        self.out_layer = self.head.layers[-1]

    def features(self, vox: np.ndarray) -> np.ndarray:
        return self.trunk.forward(vox)

    def head_logits(self, feats: np.ndarray, sizes: np.ndarray, q: np.ndarray) -> np.ndarray:
        h = self.concat.forward(feats, self.qnet.forward(q * self.cfg.q_scale), sizes)
        return self.head.forward(h)[:, 0]

    def head_backward(self, dlogits: np.ndarray):
        dfeat, dqh, _ = self.concat.backward(self.head.backward(dlogits[:, None]))
        return dfeat, self.qnet.backward(dqh) * self.cfg.q_scale

    def forward(self, ids, q, views) -> np.ndarray:
        vox, sizes, inv = _gather(np.asarray(ids), views)
        feats = self.features(vox)
        self._inv, self._n_uniq = inv, feats.shape[0]
        return self.head_logits(feats[inv], sizes[inv], np.asarray(q, dtype=np.float64))

    def backward(self, dlogits: np.ndarray) -> np.ndarray:
        """Accumulate parameter gradients; returns d/dq."""
        dfeat, dq = self.head_backward(dlogits)
        dtrunk = np.zeros((self._n_uniq, dfeat.shape[1]))
        np.add.at(dtrunk, self._inv, dfeat)
        self.trunk.backward(dtrunk)
        return dq

    def zero_head(self) -> None:
        """Zero the output layer so the classifier predicts exactly 0.5 everywhere."""
        self.params[self.out_layer.w][...] = 0.0
        self.params[self.out_layer.b][...] = 0.0

    def condition(self, view: ObjectView) -> "ConditionedClassifier":
        return ConditionedClassifier(self, view)


class ConditionedClassifier:
    """Classifier with the object fixed: a cheap function of q alone."""

    def __init__(self, clf: Classifier, view: ObjectView):
        self.clf = clf
        vox, sizes = view_tensor([view])
        self.feat = clf.features(vox)
        self.size = sizes

    def logit(self, q) -> float:
        q = np.asarray(q, dtype=np.float64).reshape(1, -1)
        return float(self.clf.head_logits(self.feat, self.size, q)[0])

    def logit_and_grad(self, q) -> tuple[float, np.ndarray]:
        # parameter gradients accumulated here are discarded by the next zero_grad
        q = np.asarray(q, dtype=np.float64).reshape(1, -1)
        a = self.clf.head_logits(self.feat, self.size, q)
        _, dq = self.clf.head_backward(np.ones(1))
        return float(a[0]), dq[0]

    def logits(self, qs) -> np.ndarray:
        qs = np.atleast_2d(np.asarray(qs, dtype=np.float64))
        n = qs.shape[0]
        return self.clf.head_logits(np.repeat(self.feat, n, 0), np.repeat(self.size, n, 0), qs)


def predict_success(clf: Classifier, view: ObjectView, q) -> float:
    return float(sigmoid(clf.condition(view).logit(q)))


def predict_success_grad(clf: Classifier, view: ObjectView, q) -> tuple[float, np.ndarray]:
    """Success probability and its gradient with respect to ``q``."""
    a, da = clf.condition(view).logit_and_grad(q)
    p = float(sigmoid(a))
    return p, p * (1.0 - p) * da


def bce_with_logits(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    return -(labels * log_sigmoid(logits) + (1 - labels) * log_sigmoid(-logits))


def class_weights(labels: np.ndarray) -> np.ndarray:
    """Inverse-frequency weights, averaging to 1 over ``labels``."""
    labels = np.asarray(labels)
    n = labels.size
    counts = {c: int(np.sum(labels == c)) for c in (0, 1) if np.any(labels == c)}
    w = {c: n / (len(counts) * k) for c, k in counts.items()}
    return np.array([w[int(y)] for y in labels], dtype=np.float64)


def classifier_loss(clf: Classifier, ids, q, labels, weights, views) -> tuple[float, dict]:
    """Weighted mean BCE over one batch; leaves gradients in ``clf.params.grads``."""
    clf.params.zero_grad()
    logits = clf.forward(ids, q, views)
    per = bce_with_logits(logits, labels)
    n = len(labels)
    loss = float(np.sum(weights * per) / n)
    dlogits = weights * (sigmoid(logits) - labels) / n
    clf.backward(dlogits)
    return loss, clf.params.grads


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def train_classifier(
    clf: Classifier,
    data: Dataset,
    views: dict[int, ObjectView],
    epochs: int,
    lr: float = 1e-3,
    rng: np.random.Generator | None = None,
    momentum: float = 0.9,
    batch_size: int = 32,
    clip: float | None = None,
) -> list[float]:
    """Minibatch SGD on class-weighted binary cross-entropy; returns per-epoch mean loss."""
    if len(data) == 0:
        raise ValueError("cannot train the classifier on an empty dataset")
    rng = rng if rng is not None else np.random.default_rng(0)
    ids, q, y = data.object_ids(), data.configs(), data.labels().astype(np.float64)
    w = class_weights(y)
    opt = SGD(clf.params, lr, momentum, clip)
    trace = []
    for _ in range(epochs):
        total = 0.0
        for idx in _batches(len(y), batch_size, rng):
            loss, grads = classifier_loss(clf, ids[idx], q[idx], y[idx], w[idx], views)
            if not np.isfinite(loss):
                raise DivergenceError("classifier loss became non-finite")
            opt.step(grads)
            total += loss * len(idx)
        trace.append(total / len(y))
    return trace


# ---------------------------------------------------------------------------
# mixture density prior


@dataclass(frozen=True)
class MixtureParams:
    """Diagonal Gaussian mixture: weights (K,), means (K, D), std devs (K, D)."""

    pi: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray

    @property
    def n_components(self) -> int:
        return self.pi.shape[0]

    def component_log_pdf(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=np.float64)
        z = (q[..., None, :] - self.mu) / self.sigma
        return -0.5 * np.sum(z * z, axis=-1) - np.sum(np.log(self.sigma), axis=-1) - 0.5 * self.mu.shape[-1] * LOG_2PI

    def log_pdf(self, q) -> np.ndarray | float:
        with np.errstate(divide="ignore"):
            lp = logsumexp(np.log(self.pi) + self.component_log_pdf(q), axis=-1)
        return float(lp) if np.ndim(lp) == 0 else lp

    def log_pdf_and_grad(self, q) -> tuple[float, np.ndarray]:
        q = np.asarray(q, dtype=np.float64)
        with np.errstate(divide="ignore"):
            lc = np.log(self.pi) + self.component_log_pdf(q)
        lp = logsumexp(lc)
        r = np.exp(lc - lp)
        grad = -np.sum(r[:, None] * (q - self.mu) / self.sigma**2, axis=0)
        return float(lp), grad

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if n < 1:
            raise ValueError("need at least one sample")
        comp = rng.choice(self.n_components, size=n, p=self.pi)
        eps = rng.normal(size=(n, self.mu.shape[1]))
        return self.mu[comp] + self.sigma[comp] * eps

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.pi)) and np.all(np.isfinite(self.mu))
                    and np.all(np.isfinite(self.sigma)))


class MDNPrior:
    """p(q | z, Phi): a Gaussian mixture whose parameters come from the object view."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, prefix: str = "mdn"):
        self.cfg = cfg
        self.params = ParamSet()
        self.trunk, tw = voxel_trunk(self.params, f"{prefix}/trunk", cfg.resolution, rng,
                                     cfg.filters, cfg.trunk_width)
        self.concat = Concat()
        k, d = cfg.n_components, cfg.dim
        self.head = Sequential([
            Dense(self.params, f"{prefix}/head.fc", tw + 3, cfg.head_width, rng),
            ELU(),
            Dense(self.params, f"{prefix}/head.out", cfg.head_width, k * (1 + 2 * d), rng),
        ])

    def _split(self, out: np.ndarray):
        k, d = self.cfg.n_components, self.cfg.dim
        logits = out[:, :k]
        mu = out[:, k:k + k * d].reshape(-1, k, d)
        s = out[:, k + k * d:].reshape(-1, k, d)
        return logits, mu, s

    def _raw(self, vox, sizes):
        feats = self.trunk.forward(vox)
        return self.head.forward(self.concat.forward(feats, sizes))

    def _constrain(self, logits, mu, s):
        floor = self.cfg.sigma_floor
        sigma = np.maximum(np.exp(s), floor)
        return softmax(logits), mu, sigma

    def mixture(self, view: ObjectView) -> MixtureParams:
        vox, sizes = view_tensor([view])
        pi, mu, sigma = self._constrain(*self._split(self._raw(vox, sizes)))
        return MixtureParams(pi[0], mu[0], sigma[0])

    def forward(self, ids, views):
        vox, sizes, inv = _gather(np.asarray(ids), views)
        out = self._raw(vox, sizes)
        self._inv, self._n_uniq = inv, out.shape[0]
        return out[inv]

    def backward(self, dout: np.ndarray) -> None:
        du = np.zeros((self._n_uniq, dout.shape[1]))
        np.add.at(du, self._inv, dout)
        dfeat, _ = self.concat.backward(self.head.backward(du))
        self.trunk.backward(dfeat)


def mdn_nll(out: np.ndarray, q: np.ndarray, k: int, sigma_floor: float) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample mixture NLL and its gradient with respect to the raw head output.

    ``out`` rows hold [mixing logits (K) | means (K*D) | log std devs (K*D)];
    std devs below ``sigma_floor`` are clamped and receive no gradient.
    """
    n, d = q.shape
    logits = out[:, :k]
    mu = out[:, k:k + k * d].reshape(n, k, d)
    s = out[:, k + k * d:].reshape(n, k, d)
    raw_sigma = np.exp(s)
    free = raw_sigma > sigma_floor
    sigma = np.where(free, raw_sigma, sigma_floor)
    log_pi = logits - logsumexp(logits, axis=1, keepdims=True)
    z = (q[:, None, :] - mu) / sigma
    comp = -0.5 * np.sum(z * z, axis=2) - np.sum(np.log(sigma), axis=2) - 0.5 * d * LOG_2PI
    lc = log_pi + comp
    lse = logsumexp(lc, axis=1, keepdims=True)
    nll = -lse[:, 0]
    r = np.exp(lc - lse)
    d_logits = np.exp(log_pi) - r
    d_mu = -r[:, :, None] * z / sigma
    d_s = r[:, :, None] * (1.0 - z * z) * free
    grad = np.concatenate([d_logits, d_mu.reshape(n, -1), d_s.reshape(n, -1)], axis=1)
    return nll, grad


def mdn_loss(prior: MDNPrior, ids, q, views) -> tuple[float, dict]:
    prior.params.zero_grad()
    out = prior.forward(ids, views)
    q = np.asarray(q, dtype=np.float64)
    nll, dout = mdn_nll(out, q, prior.cfg.n_components, prior.cfg.sigma_floor)
    n = q.shape[0]
    prior.backward(dout / n)
    return float(nll.mean()), prior.params.grads


def train_mdn(
    prior: MDNPrior,
    data: Dataset,
    views: dict[int, ObjectView],
    epochs: int,
    lr: float = 1e-3,
    rng: np.random.Generator | None = None,
    momentum: float = 0.9,
    batch_size: int = 32,
    clip: float | None = None,
    on_step=None,
) -> list[float]:
    """Minibatch SGD on the mixture NLL of successful grasps; returns per-epoch mean NLL."""
    if len(data) == 0:
        raise ValueError("no successful grasps to fit the prior on")
    if np.any(data.labels() != 1):
        raise ValueError("the prior is trained on successful grasps only")
    rng = rng if rng is not None else np.random.default_rng(0)
    ids, q = data.object_ids(), data.configs()
    opt = SGD(prior.params, lr, momentum, clip)
    trace = []
    for _ in range(epochs):
        total = 0.0
        for idx in _batches(len(ids), batch_size, rng):
            loss, grads = mdn_loss(prior, ids[idx], q[idx], views)
            if not np.isfinite(loss):
                raise DivergenceError("mixture NLL became non-finite")
            opt.step(grads)
            if on_step is not None:
                on_step(prior)
            total += loss * len(idx)
        trace.append(total / len(ids))
    return trace


def log_prior(prior: MDNPrior, view: ObjectView, q) -> float:
    return prior.mixture(view).log_pdf(q)


def sample_prior(prior: MDNPrior, view: ObjectView, n: int, rng: np.random.Generator) -> np.ndarray:
    return prior.mixture(view).sample(n, rng)


# ---------------------------------------------------------------------------


@dataclass
class TrainOpts:
    epochs: int = 5
    lr: float = 1e-3
    mdn_lr: float = 1e-3
    momentum: float = 0.9
    batch_size: int = 32
    clip: float | None = 5.0


@dataclass
class GraspModel:
    classifier: Classifier
    prior: MDNPrior
    history: list = field(default_factory=list)

    @classmethod
    def create(cls, cfg: ModelConfig, rng: np.random.Generator) -> "GraspModel":
        return cls(Classifier(cfg, rng), MDNPrior(cfg, rng))

    @property
    def cfg(self) -> ModelConfig:
        return self.classifier.cfg

    def train(self, data: Dataset, views: dict[int, ObjectView], opts: TrainOpts,
              rng: np.random.Generator, tag: str = "") -> dict:
        """One training pass: classifier on everything, prior on the successes."""
        clf_trace = train_classifier(self.classifier, data, views, opts.epochs, opts.lr, rng,
                                     opts.momentum, opts.batch_size, opts.clip)
        good = data.successes()
        if len(good):
            mdn_trace = train_mdn(self.prior, good, views, opts.epochs, opts.mdn_lr, rng,
                                  opts.momentum, opts.batch_size, opts.clip)
        else:
            log.info("%s: no successful grasps in training slice, prior update skipped", tag or "train")
            mdn_trace = []
        rec = {"tag": tag, "n": len(data), "n_success": len(good),
               "classifier": clf_trace, "mdn": mdn_trace, "mdn_skipped": not len(good)}
        self.history.append(rec)
        return rec

    def state(self) -> dict[str, np.ndarray]:
        return {**self.classifier.params.state(), **self.prior.params.state()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        self.classifier.params.load_state({k: v for k, v in state.items() if k.startswith("classifier/")})
        self.prior.params.load_state({k: v for k, v in state.items() if k.startswith("mdn/")})

    def copy(self) -> "GraspModel":
        twin = GraspModel.create(self.cfg, np.random.default_rng(0))
        twin.load_state(self.state())
        return twin
