"""Small numeric core: dense layers, activations, losses, Adam and gradient checking.

Gradients elsewhere in the package are derived by hand, so this module only
holds the primitives and the finite-difference harness used to verify them.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

LOG_EPS = 1e-12

Params = dict[str, np.ndarray]


def as_float(v) -> np.ndarray:
    """Array at float64 or wider; extended-precision input stays extended."""
    v = np.asarray(v)
    return v.astype(np.result_type(v.dtype, np.float64), copy=False)


@dataclass
class DenseLayer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)

    def __post_init__(self):
        self.weight = as_float(self.weight)
        self.bias = as_float(self.bias)
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ValueError(
                f"inconsistent dense shapes: weight {self.weight.shape}, bias {self.bias.shape}"
            )

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]

    @classmethod
    def zeros(cls, out_dim: int, in_dim: int) -> "DenseLayer":
        return cls(np.zeros((out_dim, in_dim)), np.zeros(out_dim))

    @classmethod
    def init(cls, out_dim: int, in_dim: int, rng: np.random.Generator, gain: float = 2.0):
        """He-style normal init with zero bias."""
        w = rng.normal(0.0, np.sqrt(gain / in_dim), size=(out_dim, in_dim))
        return cls(w, np.zeros(out_dim))


def dense_forward(layer: DenseLayer, x: np.ndarray) -> np.ndarray:
    """``weight @ x + bias``; ``x`` may be a vector or a batch of row vectors."""
    x = as_float(x)
    if x.shape[-1] != layer.in_dim:
        raise ValueError(f"expected input dim {layer.in_dim}, got {x.shape[-1]}")
    return x @ layer.weight.T + layer.bias


def relu(v: np.ndarray) -> np.ndarray:
    return np.maximum(as_float(v), 0.0)


def softmax(v: np.ndarray, axis: int = -1) -> np.ndarray:
    v = as_float(v)
    e = np.exp(v - np.max(v, axis=axis, keepdims=True))
    return e / np.sum(e, axis=axis, keepdims=True)


def sigmoid(v: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    v = as_float(v)
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return out


def cross_entropy(probs: np.ndarray, target_class: int) -> float:
    return float(-np.log(probs[target_class] + LOG_EPS))


def binary_cross_entropy(probs: np.ndarray, targets: np.ndarray) -> float:
    p = as_float(probs)
    t = as_float(targets)
    terms = t * np.log(p + LOG_EPS) + (1.0 - t) * np.log(1.0 - p + LOG_EPS)
    return float(-np.mean(terms))


def softmax_ce_grad(probs: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Gradient of ``-log(p[t] + eps)`` w.r.t. the logits, row-wise.

    ``probs`` is (M, C), ``targets`` (M,) integer classes.
    """
    m = probs.shape[0]
    onehot = np.zeros_like(probs)
    onehot[np.arange(m), targets] = 1.0
    pt = probs[np.arange(m), targets]
    return (pt / (pt + LOG_EPS))[:, None] * (probs - onehot)


def sigmoid_bce_grad(probs: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Elementwise gradient of the eps-clamped BCE term w.r.t. the logits."""
    dp = -targets / (probs + LOG_EPS) + (1.0 - targets) / (1.0 - probs + LOG_EPS)
    return dp * probs * (1.0 - probs)


@dataclass
class AdamState:
    first_moment: Params = field(default_factory=dict)
    second_moment: Params = field(default_factory=dict)
    step_count: int = 0


def adam_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 1e-5,
) -> tuple[Params, AdamState]:
    """One Adam update with bias correction and L2-coupled weight decay.

    Returns fresh parameter and state objects; inputs are left untouched.
    """
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    t = state.step_count + 1
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    new_params: Params = {}
    m_new: Params = {}
    v_new: Params = {}
    for name, p in params.items():
        g = as_float(grads[name])
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for {name}")
        if weight_decay:
            g = g + weight_decay * p
        m = beta1 * state.first_moment.get(name, np.zeros_like(p)) + (1.0 - beta1) * g
        v = beta2 * state.second_moment.get(name, np.zeros_like(p)) + (1.0 - beta2) * (g * g)
        new_params[name] = p - lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
        m_new[name] = m
        v_new[name] = v
    return new_params, AdamState(m_new, v_new, t)


def gradient_errors(
    loss_and_grad: Callable[[Params], tuple[float, Mapping[str, np.ndarray]]],
    params: Mapping[str, np.ndarray],
    epsilon: float = 1e-4,
    dtype=np.float64,
) -> dict[str, float]:
    """Per-parameter max relative error between analytic and central-difference gradients.

    Parameters are cast to ``dtype`` before probing. Passing ``np.longdouble``
    runs the whole check in extended precision, which keeps central-difference
    roundoff well below the 1e-8 floor of the error measure.
    """
    params = {k: np.array(v, dtype=dtype) for k, v in params.items()}
    _, analytic = loss_and_grad(params)
    errors = {}
    for name, p in params.items():
        worst = 0.0
        flat = p.reshape(-1)
        a_flat = np.asarray(analytic[name]).reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            fp, _ = loss_and_grad(params)
            flat[i] = orig - epsilon
            fm, _ = loss_and_grad(params)
            flat[i] = orig
            num = (fp - fm) / (2.0 * epsilon)
            a = a_flat[i]
            rel = abs(a - num) / max(abs(a), abs(num), 1e-8)
            worst = max(worst, float(rel))
        errors[name] = worst
    return errors


def finite_difference_check(
    loss_and_grad: Callable[[Params], tuple[float, Mapping[str, np.ndarray]]],
    params: Mapping[str, np.ndarray],
    epsilon: float = 1e-4,
    dtype=np.float64,
) -> float:
    """Largest relative gradient error over every entry of every parameter.

    ``loss_and_grad`` maps a parameter dict to ``(loss, grads)``; only the
    loss is used for the numeric side.
    """
    return max(gradient_errors(loss_and_grad, params, epsilon, dtype).values(), default=0.0)


def params_to_json(params: Mapping[str, np.ndarray]) -> str:
    doc = {
        name: {"shape": list(np.shape(arr)), "values": np.asarray(arr, dtype=np.float64).reshape(-1).tolist()}
        for name, arr in sorted(params.items())
    }
    return json.dumps(doc, indent=1, sort_keys=True)


def params_from_json(text: str) -> Params:
    doc = json.loads(text)
    out = {}
    for name, entry in doc.items():
        shape = tuple(entry["shape"])
        out[name] = np.asarray(entry["values"], dtype=np.float64).reshape(shape)
    return out


def save_params(params: Mapping[str, np.ndarray], path: str | Path) -> None:
    Path(path).write_text(params_to_json(params) + "\n")


def load_params(path: str | Path) -> Params:
    return params_from_json(Path(path).read_text())
