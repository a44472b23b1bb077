"""Dense numeric primitives shared by the model: activations, stable
softmax, parameter storage/initialization, and the finite-difference
gradient oracle used to validate every hand-written backward pass."""

import math
import os

import numpy as np

# TOPICCHAT_DEBUG=1 turns on finite-value assertions in the public model
# operations; off by default to keep the training loop hot path clean
DEBUG = bool(os.environ.get("TOPICCHAT_DEBUG"))


def check_finite(name, *arrays):
    if not DEBUG:
        return
    for arr in arrays:
        if arr is not None and not np.all(np.isfinite(arr)):
            raise FloatingPointError(f"non-finite values in {name}")


def sigmoid(x):
    """Numerically stable logistic function, elementwise."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def tanh(x):
    return np.tanh(np.asarray(x, dtype=np.float64))


def softmax(scores, axis=-1):
    """Softmax with max-subtraction; sums to 1 within 1e-12 per slice."""
    scores = np.asarray(scores, dtype=np.float64)
    shifted = scores - scores.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def log_sum_exp(scores, axis=-1):
    scores = np.asarray(scores, dtype=np.float64)
    m = scores.max(axis=axis, keepdims=True)
    return np.squeeze(m, axis=axis) + np.log(np.exp(scores - m).sum(axis=axis))


class ParamStore:
    """Named float64 parameter tensors plus the squared-gradient
    accumulators consumed by Adagrad.

    Mutated only by its single training owner; safe for concurrent reads
    afterwards.
    """

    def __init__(self, seed=0):
        self.seed = seed
        self.values = {}
        self.sq_grad = {}

    def add(self, name, array):
        if name in self.values:
            raise ValueError(f"duplicate parameter name: {name!r}")
        arr = np.asarray(array, dtype=np.float64)
        self.values[name] = arr
        self.sq_grad[name] = np.zeros_like(arr)

    def names(self):
        return list(self.values.keys())

    def zero_grads(self):
        return {name: np.zeros_like(v) for name, v in self.values.items()}

    def copy(self):
        other = ParamStore(self.seed)
        for name, v in self.values.items():
            other.values[name] = v.copy()
            other.sq_grad[name] = self.sq_grad[name].copy()
        return other

    def allclose(self, other, rtol=0.0, atol=0.0):
        if self.names() != other.names():
            return False
        return all(
            np.allclose(self.values[n], other.values[n], rtol=rtol, atol=atol)
            for n in self.names()
        )

    def __getitem__(self, name):
        return self.values[name]

    def __contains__(self, name):
        return name in self.values


def init_params(spec, seed):
    """Build a ParamStore from a list of (name, shape) entries.

    Matrices (2-d shapes) are drawn Uniform(-a, a) with
    a = sqrt(6 / (fan_in + fan_out)); vectors (1-d shapes) start at zero.
    Deterministic for a given seed and spec order.
    """
    rng = np.random.default_rng(seed)
    store = ParamStore(seed)
    for name, shape in spec:
        shape = tuple(int(s) for s in shape)
        if len(shape) == 1:
            store.add(name, np.zeros(shape))
        elif len(shape) == 2:
            a = math.sqrt(6.0 / (shape[0] + shape[1]))
            store.add(name, rng.uniform(-a, a, size=shape))
        else:
            raise ValueError(f"unsupported parameter rank for {name!r}: {shape}")
    return store


def fd_gradient_check(loss_fn, params, grads, h=1e-5, min_coords=200, seed=0):
    """Compare analytic gradients against central finite differences.

    Samples at least `min_coords` coordinates (stratified so every
    parameter tensor is hit), perturbs each by +/-h, and returns the
    maximum relative error |a - n| / max(|a|, |n|, 1e-8).

    `loss_fn` must be a deterministic function of `params`; `grads` maps
    parameter names to analytic gradient arrays of matching shape.
    """
    if not (1e-7 <= h <= 1e-3):
        raise ValueError(f"step size h={h} outside [1e-7, 1e-3]")
    base = loss_fn(params)
    if not np.isfinite(base):
        raise ValueError(f"loss is not finite: {base}")

    sizes = {name: params.values[name].size for name in params.names()}
    total = sum(sizes.values())
    target = min(min_coords, total)
    rng = np.random.default_rng(seed)

    max_rel = 0.0
    for name in params.names():
        size = sizes[name]
        n_take = max(1, math.ceil(target * size / total))
        idxs = rng.choice(size, size=min(n_take, size), replace=False)
        flat = params.values[name].reshape(-1)
        gflat = np.asarray(grads[name]).reshape(-1)
        for idx in idxs:
            orig = flat[idx]
            flat[idx] = orig + h
            lp = loss_fn(params)
            flat[idx] = orig - h
            lm = loss_fn(params)
            flat[idx] = orig
            if not (np.isfinite(lp) and np.isfinite(lm)):
                raise ValueError("loss is not finite during perturbation")
            numeric = (lp - lm) / (2.0 * h)
            analytic = gflat[idx]
            denom = max(abs(analytic), abs(numeric), 1e-8)
            rel = abs(analytic - numeric) / denom
            if rel > max_rel:
                max_rel = rel
    return max_rel
