"""Fully connected network, its exact input derivative, and Adam."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad

DEFAULT_ARCH = (1, 20, 20, 20, 6)
ACTIVATIONS = ("tanh", "identity")


@dataclass
class MlpParams:
    weights: list          # W_i with shape (n_in, n_out); arrays or Tensors
    biases: list           # b_i with shape (1, n_out)
    activation: str = "tanh"

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("need one bias row per weight matrix")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            ws, bs = np.shape(ad.value_of(w)), np.shape(ad.value_of(b))
            if len(ws) != 2 or bs != (1, ws[1]):
                raise ValueError(f"layer {i}: weight {ws} and bias {bs} are not conformable")
            if i and ws[0] != np.shape(ad.value_of(self.weights[i - 1]))[1]:
                raise ValueError(f"layer {i} input size {ws[0]} does not match previous output")

    @property
    def architecture(self) -> tuple:
        shapes = [np.shape(ad.value_of(w)) for w in self.weights]
        return (shapes[0][0],) + tuple(s[1] for s in shapes)

    def arrays(self) -> list[np.ndarray]:
        """Flat list [W0, b0, W1, b1, ...] of plain arrays."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [np.asarray(ad.value_of(w)), np.asarray(ad.value_of(b))]
        return out

    @classmethod
    def from_arrays(cls, arrays, activation: str = "tanh") -> "MlpParams":
        return cls(list(arrays[0::2]), list(arrays[1::2]), activation)

    def as_tensors(self) -> "MlpParams":
        return MlpParams.from_arrays([ad.Tensor(a, requires_grad=True) for a in self.arrays()],
                                     self.activation)

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())


def glorot_init(architecture=DEFAULT_ARCH, seed: int = 0, activation: str = "tanh") -> MlpParams:
    rng = np.random.default_rng(seed)
    ws, bs = [], []
    for n_in, n_out in zip(architecture[:-1], architecture[1:]):
        lim = math.sqrt(6.0 / (n_in + n_out))
        ws.append(rng.uniform(-lim, lim, size=(n_in, n_out)))
        bs.append(np.zeros((1, n_out)))
    return MlpParams(ws, bs, activation)


def _act(p: MlpParams, z):
    return ad.tanh(z) if p.activation == "tanh" else z


def _column(t):
    if isinstance(t, ad.Tensor):
        return t if t.data.ndim == 2 else ad.Tensor(t.data.reshape(-1, 1))
    return np.asarray(t, dtype=float).reshape(-1, 1)


def mlp_forward(p: MlpParams, t):
    """Outputs for the scaled inputs ``t`` (scalar or 1-d), shape (n, n_out)."""
    h = _column(t)
    if not np.all(np.isfinite(ad.value_of(h))):
        raise ValueError("network input is not finite")
    last = len(p.weights) - 1
    for i, (w, b) in enumerate(zip(p.weights, p.biases)):
        z = h @ w + b
        h = z if i == last else _act(p, z)
    return h


def mlp_with_derivative(p: MlpParams, t):
    """Outputs and their exact derivative with respect to the input.

    A single forward-mode tangent is carried alongside the activations.  With
    Tensor parameters the tangent is itself a graph node, so the reverse pass
    can differentiate through it.
    """
    h = _column(t)
    dh = np.ones_like(ad.value_of(h))
    last = len(p.weights) - 1
    for i, (w, b) in enumerate(zip(p.weights, p.biases)):
        z = h @ w + b
        dz = dh @ w
        if i == last or p.activation == "identity":
            h, dh = z, dz
        else:
            h = ad.tanh(z)
            dh = (1.0 - h * h) * dz
    return h, dh


def mlp_time_derivative(p: MlpParams, t):
    return mlp_with_derivative(p, t)[1]


# Adam -------------------------------------------------------------------

@dataclass
class AdamState:
    m: list
    v: list
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params, **kw) -> "AdamState":
        return cls([np.zeros_like(a) for a in params], [np.zeros_like(a) for a in params], **kw)


def adam_step(state: AdamState, params: list, grads: list, lr: float) -> list:
    """One bias-corrected Adam update.  ``params`` are updated in place and returned."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("parameter, gradient and moment lists differ in length")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for i, (x, g) in enumerate(zip(params, grads)):
        if np.shape(x) != np.shape(g) or np.shape(x) != np.shape(state.m[i]):
            raise ValueError(f"shape mismatch for trainable {i}: {np.shape(x)} vs {np.shape(g)}")
        m, v = state.m[i], state.v[i]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        x -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params


# checkpoints --------------------------------------------------------------

def save_checkpoint(path, tensors: dict, architecture=None, meta: dict | None = None) -> None:
    doc = {"architecture": list(architecture) if architecture is not None else None,
           "meta": meta or {},
           "tensors": {k: {"shape": list(np.shape(v)), "values": np.ravel(v).tolist()}
                       for k, v in tensors.items()}}
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path) -> tuple[dict, list | None, dict]:
    doc = json.loads(Path(path).read_text())
    tensors = {k: np.array(e["values"], dtype=float).reshape(e["shape"])
               for k, e in doc["tensors"].items()}
    return tensors, doc.get("architecture"), doc.get("meta", {})


def mlp_to_dict(p: MlpParams) -> dict:
    return {f"{kind}{i}": a for i, (w, b) in enumerate(zip(p.weights, p.biases))
            for kind, a in (("W", ad.value_of(w)), ("b", ad.value_of(b)))}


def mlp_from_dict(d: dict, activation: str = "tanh") -> MlpParams:
    n = sum(1 for k in d if k.startswith("W"))
    return MlpParams([np.asarray(d[f"W{i}"]) for i in range(n)],
                     [np.asarray(d[f"b{i}"]) for i in range(n)], activation)


__all__ = ["DEFAULT_ARCH", "MlpParams", "glorot_init", "mlp_forward", "mlp_with_derivative",
           "mlp_time_derivative", "AdamState", "adam_step", "save_checkpoint",
           "load_checkpoint", "mlp_to_dict", "mlp_from_dict"]
