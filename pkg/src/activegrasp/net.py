"""A small numpy network kernel with hand-written backward passes.

Layers read their weights from a shared :class:`ParamSet` by name and
accumulate gradients into it, so checkpoints, optimizers and gradient checks
all work on one flat name -> array registry.
"""
from __future__ import annotations

from typing import Callable

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    pass


class DivergenceError(FloatingPointError):
    """Non-finite gradients or losses during training."""


class ParamSet:
    """Ordered registry of named parameter arrays and their gradients."""

    def __init__(self):
        self.arrays: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def add(self, name: str, value: np.ndarray) -> str:
        if name in self.arrays:
            raise KeyError(f"duplicate parameter name {name!r}")
        self.arrays[name] = np.array(value, dtype=np.float64)
        self.grads[name] = np.zeros_like(self.arrays[name])
        return name

    def __getitem__(self, name):
        return self.arrays[name]

    def __iter__(self):
        return iter(self.arrays)

    def __len__(self):
        return len(self.arrays)

    def names(self) -> list[str]:
        return list(self.arrays)

    def size(self) -> int:
        return int(sum(a.size for a in self.arrays.values()))

    def zero_grad(self) -> None:
        for g in self.grads.values():
            g.fill(0.0)

    def state(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.arrays.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self.arrays) - set(state)
        if missing:
            raise KeyError(f"state is missing parameters: {sorted(missing)}")
        for k, arr in self.arrays.items():
            new = np.asarray(state[k], dtype=np.float64)
            if new.shape != arr.shape:
                raise ShapeError(f"{k}: shape {new.shape} does not match {arr.shape}")
            arr[...] = new


class Layer:
    name = "layer"

    def forward(self, x):
        raise NotImplementedError

    def backward(self, grad):
        raise NotImplementedError

    def _cached(self):
        if self._cache is None:
            raise RuntimeError(f"{self.name}: backward called before forward")
        return self._cache


def he_normal(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)


class Dense(Layer):
    def __init__(self, params: ParamSet, name: str, n_in: int, n_out: int, rng: np.random.Generator):
        self.params, self.name = params, name
        self.n_in, self.n_out = n_in, n_out
        self.w = params.add(f"{name}.W", he_normal(rng, (n_in, n_out), n_in))
        self.b = params.add(f"{name}.b", np.zeros(n_out))
        self._cache = None

    def forward(self, x):
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise ShapeError(f"{self.name}: expected input (batch, {self.n_in}), got {x.shape}")
        self._cache = x
        return x @ self.params[self.w] + self.params[self.b]

    def backward(self, grad):
        x = self._cached()
        self.params.grads[self.w] += x.T @ grad
        self.params.grads[self.b] += grad.sum(axis=0)
        return grad @ self.params[self.w].T


def conv_output_size(size: int, stride: int) -> int:
    # kernel 3, zero padding 1: ceil(size / stride)
    return (size - 1) // stride + 1


class Conv3D(Layer):
    """3x3x3 convolution, zero padding 1, input layout (batch, channels, d, h, w)."""

    def __init__(self, params: ParamSet, name: str, c_in: int, c_out: int, stride: int,
                 rng: np.random.Generator):
        self.params, self.name = params, name
        self.c_in, self.c_out, self.stride = c_in, c_out, stride
        fan_in = c_in * 27
        self.w = params.add(f"{name}.W", he_normal(rng, (c_out, c_in, 3, 3, 3), fan_in))
        self.b = params.add(f"{name}.b", np.zeros(c_out))
        self._cache = None

    def forward(self, x):
        if x.ndim != 5 or x.shape[1] != self.c_in:
            raise ShapeError(f"{self.name}: expected input (batch, {self.c_in}, d, h, w), got {x.shape}")
        s = self.stride
        n, c, d, h, w = x.shape
        od, oh, ow = (conv_output_size(k, s) for k in (d, h, w))
        xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1), (1, 1)))
        win = sliding_window_view(xp, (3, 3, 3), axis=(2, 3, 4))[:, :, ::s, ::s, ::s]
        # (n, od, oh, ow, c, 3, 3, 3) -> rows of flattened receptive fields
        cols = win.transpose(0, 2, 3, 4, 1, 5, 6, 7).reshape(n * od * oh * ow, c * 27)
        wmat = self.params[self.w].reshape(self.c_out, -1)
        out = cols @ wmat.T + self.params[self.b]
        self._cache = (x.shape, xp.shape, cols, (od, oh, ow))
        return out.reshape(n, od, oh, ow, self.c_out).transpose(0, 4, 1, 2, 3)

    def backward(self, grad):
        xshape, xpshape, cols, (od, oh, ow) = self._cached()
        n, c = xshape[:2]
        s = self.stride
        g = grad.transpose(0, 2, 3, 4, 1).reshape(-1, self.c_out)
        self.params.grads[self.w] += (g.T @ cols).reshape(self.params[self.w].shape)
        self.params.grads[self.b] += g.sum(axis=0)
        dcols = (g @ self.params[self.w].reshape(self.c_out, -1)).reshape(n, od, oh, ow, c, 3, 3, 3)
        dxp = np.zeros(xpshape)
        for i in range(3):
            for j in range(3):
                for k in range(3):
                    dxp[:, :, i:i + s * od:s, j:j + s * oh:s, k:k + s * ow:s] += (
                        dcols[..., i, j, k].transpose(0, 4, 1, 2, 3)
                    )
        return dxp[:, :, 1:-1, 1:-1, 1:-1]


class ELU(Layer):
    def __init__(self, alpha: float = 1.0, name: str = "elu"):
        self.alpha, self.name = alpha, name
        self._cache = None

    def forward(self, x):
        neg = self.alpha * np.expm1(np.minimum(x, 0.0))
        out = np.where(x > 0, x, neg)
        self._cache = (x, neg)
        return out

    def backward(self, grad):
        x, neg = self._cached()
        return grad * np.where(x > 0, 1.0, neg + self.alpha)


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    # split branches so exp never overflows
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def log_sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    return np.minimum(x, 0.0) - np.log1p(np.exp(-np.abs(x)))


def softmax(x, axis=-1):
    z = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


class Sigmoid(Layer):
    def __init__(self, name: str = "sigmoid"):
        self.name = name
        self._cache = None

    def forward(self, x):
        self._cache = sigmoid(x)
        return self._cache

    def backward(self, grad):
        y = self._cached()
        return grad * y * (1.0 - y)


class Softmax(Layer):
    def __init__(self, name: str = "softmax"):
        self.name = name
        self._cache = None

    def forward(self, x):
        self._cache = softmax(x)
        return self._cache

    def backward(self, grad):
        y = self._cached()
        return y * (grad - np.sum(grad * y, axis=-1, keepdims=True))


class Flatten(Layer):
    def __init__(self, name: str = "flatten"):
        self.name = name
        self._cache = None

    def forward(self, x):
        self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad):
        return grad.reshape(self._cached())


class Concat:
    """Joins inputs along the feature axis; ``backward`` splits the gradient back."""

    def __init__(self, name: str = "concat"):
        self.name = name
        self._widths = None

    def forward(self, *xs):
        if len({x.shape[0] for x in xs}) != 1:
            raise ShapeError(f"{self.name}: inputs disagree on batch size")
        self._widths = [x.shape[1] for x in xs]
        return np.concatenate(xs, axis=1)

    def backward(self, grad):
        if self._widths is None:
            raise RuntimeError(f"{self.name}: backward called before forward")
        return np.split(grad, np.cumsum(self._widths)[:-1], axis=1)


class Sequential(Layer):
    def __init__(self, layers: list[Layer], name: str = "seq"):
        self.layers, self.name = layers, name

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, grad):
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad


def voxel_trunk(params: ParamSet, prefix: str, resolution: int, rng: np.random.Generator,
                filters=(8, 16), width: int = 64) -> tuple[Sequential, int]:
    """Conv3D(/2) -> ELU -> Conv3D(/2) -> ELU -> flatten -> Dense -> ELU."""
    layers: list[Layer] = []
    c_in, size = 1, resolution
    for i, f in enumerate(filters):
        layers += [Conv3D(params, f"{prefix}.conv{i}", c_in, f, 2, rng), ELU()]
        c_in, size = f, conv_output_size(size, 2)
    layers += [Flatten(), Dense(params, f"{prefix}.fc", c_in * size**3, width, rng), ELU()]
    return Sequential(layers, prefix), width


_STENCILS = {
    2: ((1.0, 0.5), (-1.0, -0.5)),
    4: ((2.0, -1.0 / 12), (1.0, 8.0 / 12), (-1.0, -8.0 / 12), (-2.0, 1.0 / 12)),
}


def grad_check(
    params: ParamSet,
    loss_fn: Callable[[], float],
    analytic: dict[str, np.ndarray],
    eps: float = 1e-5,
    max_params: int = 20000,
    floor: float = 1e-6,
    stencil: int = 2,
) -> float:
    """Max relative error between ``analytic`` gradients and central differences.

    ``loss_fn`` re-evaluates the loss from the current contents of ``params``;
    every entry is perturbed in place and restored. The error is
    ``|a - n| / max(floor, |a| + |n|)``: components far below the difference
    quotient's roundoff (~1e-11 at eps=1e-5) cannot be resolved relatively,
    so ``floor`` turns those into an absolute check.

    ``stencil=4`` uses the fourth-order central difference. Its truncation
    error is small enough to allow eps around 1e-3, which keeps roundoff down
    when the loss itself is large (steep mixture likelihoods).
    """
    if stencil not in _STENCILS:
        raise ValueError(f"stencil must be one of {sorted(_STENCILS)}")
    taps = _STENCILS[stencil]
    if params.size() > max_params:
        raise ValueError(f"{params.size()} parameters exceed the finite-difference cap {max_params}")
    worst = 0.0
    for name in params:
        arr = params[name]
        flat = arr.reshape(-1)
        num = np.empty(flat.size)
        for i in range(flat.size):
            orig = flat[i]
            acc = 0.0
            for step, w in taps:
                flat[i] = orig + step * eps
                acc += w * loss_fn()
            flat[i] = orig
            num[i] = acc / eps
        a = np.asarray(analytic[name]).reshape(-1)
        rel = np.abs(a - num) / np.maximum(floor, np.abs(a) + np.abs(num))
        worst = max(worst, float(rel.max(initial=0.0)))
    return worst


def clip_grad_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Rescale ``grads`` in place so their global L2 norm is at most ``max_norm``."""
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    if np.isfinite(norm) and norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


class SGD:
    """Plain SGD with heavy-ball momentum: v <- m v + g, p <- p - lr v.

    ``clip`` bounds the global gradient norm before each step (None disables).
    """

    def __init__(self, params: ParamSet, lr: float = 1e-3, momentum: float = 0.9,
                 clip: float | None = None):
        self.params, self.lr, self.momentum, self.clip = params, lr, momentum, clip
        self.velocity = {k: np.zeros_like(v) for k, v in params.arrays.items()}

    def step(self, grads: dict[str, np.ndarray] | None = None) -> None:
        grads = grads if grads is not None else self.params.grads
        if self.clip is not None:
            clip_grad_norm(grads, self.clip)
        sgd_step(self.params.arrays, grads, self.lr, self.momentum, self.velocity)


def sgd_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], lr: float,
             momentum: float = 0.0, velocity: dict[str, np.ndarray] | None = None) -> dict[str, np.ndarray]:
    """In-place momentum SGD update; raises before touching anything if a gradient is non-finite."""
    for k, g in grads.items():
        if g.shape != params[k].shape:
            raise ShapeError(f"{k}: gradient shape {g.shape} does not match parameter {params[k].shape}")
        if not np.all(np.isfinite(g)):
            raise DivergenceError(f"non-finite gradient for {k}")
    for k, g in grads.items():
        if velocity is not None and momentum:
            v = velocity.setdefault(k, np.zeros_like(g))
            v *= momentum
            v += g
            params[k] -= lr * v
        else:
            params[k] -= lr * g
    return params
