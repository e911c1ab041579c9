"""Minimal dense network engine with exact reverse-mode gradients.

Only what the appraisal model needs: affine layers with Mish or identity
activations, row-wise softmax, AdamW with decoupled weight decay, and a
central-difference gradient oracle for tests. Everything runs in float64.

Matrices are row-major batches: ``x`` has shape ``(batch, features)`` and a
layer computes ``x @ W.T + b`` with ``W`` of shape ``(out, in)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Literal, Mapping, MutableMapping, Optional, Sequence

import numpy as np
from numpy.typing import NDArray

from .errors import NumericalError

logger = logging.getLogger(__name__)

Array = NDArray[np.float64]
Activation = Literal["mish", "identity"]

FD_STEP = 1e-4


# ---------------------------------------------------------------------------
# Activations
# ---------------------------------------------------------------------------


def softplus(x: Array) -> Array:
    """``log(1 + exp(x))`` without overflow: ``max(x, 0) + log1p(exp(-|x|))``."""
    x = np.asarray(x, dtype=np.float64)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def mish(x: Array) -> Array:
    """``x * tanh(softplus(x))``; works on scalars and arrays."""
    x = np.asarray(x, dtype=np.float64)
    return x * np.tanh(softplus(x))


def mish_grad(x: Array) -> Array:
    """d mish / dx = tanh(sp(x)) + x * sech^2(sp(x)) * sigmoid(x)."""
    x = np.asarray(x, dtype=np.float64)
    t = np.tanh(softplus(x))
    sigmoid = 0.5 * (1.0 + np.tanh(0.5 * x))
    return t + x * (1.0 - t * t) * sigmoid


def softmax(logits: Array) -> Array:
    """Softmax over the last axis, max-subtracted for stability."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


# ---------------------------------------------------------------------------
# Layers
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class DenseLayer:
    weight: Array
    bias: Array
    activation: Activation = "mish"

    def __post_init__(self) -> None:
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ValueError(
                f"inconsistent layer shapes: weight {self.weight.shape}, bias {self.bias.shape}"
            )
        if self.activation not in ("mish", "identity"):
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def in_dim(self) -> int:
        return int(self.weight.shape[1])

    @property
    def out_dim(self) -> int:
        return int(self.weight.shape[0])

    @classmethod
    def glorot(
        cls, in_dim: int, out_dim: int, rng: np.random.Generator, activation: Activation = "mish"
    ) -> DenseLayer:
        """Uniform init in +-sqrt(6 / (fan_in + fan_out)); zero bias."""
        limit = np.sqrt(6.0 / (in_dim + out_dim))
        weight = rng.uniform(-limit, limit, size=(out_dim, in_dim))
        return cls(weight, np.zeros(out_dim), activation)


@dataclass(eq=False)
class Mlp:
    """Chain of dense layers."""

    layers: list[DenseLayer]

    def __post_init__(self) -> None:
        if not self.layers:
            raise ValueError("an Mlp needs at least one layer")
        for a, b in zip(self.layers, self.layers[1:]):
            if a.out_dim != b.in_dim:
                raise ValueError(f"layer dims do not chain: {a.out_dim} -> {b.in_dim}")

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    @classmethod
    def create(
        cls,
        dims: Sequence[int],
        rng: np.random.Generator,
        *,
        final_activation: Activation = "identity",
    ) -> Mlp:
        """``dims = [in, hidden..., out]``; Mish on hidden layers."""
        if len(dims) < 2 or any(d < 1 for d in dims):
            raise ValueError(f"invalid layer dims {list(dims)}")
        n = len(dims) - 1
        layers = [
            DenseLayer.glorot(
                dims[i], dims[i + 1], rng, "mish" if i < n - 1 else final_activation
            )
            for i in range(n)
        ]
        return cls(layers)

    def parameters(self, prefix: str) -> dict[str, Array]:
        out: dict[str, Array] = {}
        for i, layer in enumerate(self.layers):
            out[f"{prefix}.{i}.weight"] = layer.weight
            out[f"{prefix}.{i}.bias"] = layer.bias
        return out

    def __call__(self, x: Array) -> Array:
        return mlp_forward(self, x)[0]


@dataclass(eq=False)
class GradTape:
    """Activations cached by :func:`mlp_forward` for one backward pass."""

    net: Mlp
    inputs: list[Array] = field(default_factory=list)
    preacts: list[Array] = field(default_factory=list)
    consumed: bool = False


@dataclass(eq=False)
class LayerGrad:
    weight: Array
    bias: Array


def mlp_forward(net: Mlp, batch: Array) -> tuple[Array, GradTape]:
    """Run ``net`` on ``batch`` and record what the backward pass needs."""
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.in_dim:
        raise ValueError(f"input shape {x.shape} does not match layer input dim {net.in_dim}")
    tape = GradTape(net)
    for layer in net.layers:
        tape.inputs.append(x)
        z = x @ layer.weight.T + layer.bias
        tape.preacts.append(z)
        x = mish(z) if layer.activation == "mish" else z
    return x, tape


def mlp_backward(net: Mlp, tape: GradTape, grad_out: Array) -> tuple[list[LayerGrad], Array]:
    """Contract ``grad_out`` (dL/d output) back through ``net``.

    Returns per-layer parameter gradients (same order as ``net.layers``) and
    dL/d input.

    Raises
    ------
    RuntimeError
        The tape came from another network or was already consumed.
    """
    if tape.net is not net or len(tape.inputs) != len(net.layers):
        raise RuntimeError("gradient tape does not belong to this network")
    if tape.consumed:
        raise RuntimeError("gradient tape was already consumed by a backward pass")
    g = np.asarray(grad_out, dtype=np.float64)
    expected = (tape.inputs[0].shape[0], net.out_dim)
    if g.shape != expected:
        raise ValueError(f"grad_out shape {g.shape} does not match output shape {expected}")
    tape.consumed = True
    grads: list[LayerGrad] = []
    for layer, x, z in zip(reversed(net.layers), reversed(tape.inputs), reversed(tape.preacts)):
        if layer.activation == "mish":
            g = g * mish_grad(z)
        grads.append(LayerGrad(weight=g.T @ x, bias=g.sum(axis=0)))
        g = g @ layer.weight
    grads.reverse()
    return grads, g


# ---------------------------------------------------------------------------
# AdamW
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class AdamWState:
    """Optimizer moments keyed by parameter name.

    Moments are created lazily the first time a parameter receives a
    gradient, so frozen parameters never get state.
    """

    lr: float = 0.005
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    t: int = 0
    m: dict[str, Array] = field(default_factory=dict)
    v: dict[str, Array] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.lr < 0:
            raise ValueError(f"invalid learning rate {self.lr}")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError(f"invalid betas ({self.beta1}, {self.beta2})")
        if self.eps < 0 or self.weight_decay < 0:
            raise ValueError("eps and weight_decay must be >= 0")


def adamw_step(
    params: MutableMapping[str, Array],
    grads: Mapping[str, Array],
    state: AdamWState,
) -> tuple[MutableMapping[str, Array], AdamWState]:
    """One AdamW update, applied in place to every parameter present in ``grads``.

    ``p <- p - lr * m_hat / (sqrt(v_hat) + eps) - lr * weight_decay * p`` where
    the decay term uses the pre-update value of ``p``.

    Raises
    ------
    NumericalError
        A gradient block contains NaN or inf; nothing is updated.
    """
    for name in sorted(grads):
        if name not in params:
            raise KeyError(f"gradient for unknown parameter {name!r}")
        g = grads[name]
        if g.shape != params[name].shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {params[name].shape}")
        if not np.isfinite(g).all():
            raise NumericalError("non-finite gradient", {"parameter": name})

    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**state.t
    bc2 = 1.0 - b2**state.t
    for name in sorted(grads):
        p = params[name]
        g = grads[name]
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        m_hat = m / bc1
        v_hat = v / bc2
        step = m_hat / (np.sqrt(v_hat) + state.eps)
        update = state.lr * step + state.lr * state.weight_decay * p
        p -= update
    return params, state


# ---------------------------------------------------------------------------
# Gradient oracle
# ---------------------------------------------------------------------------


def numerical_gradient(
    loss_fn: Callable[[], float],
    params: Mapping[str, Array],
    h: float = FD_STEP,
    *,
    names: Optional[Sequence[str]] = None,
    max_coords: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> dict[str, Array]:
    """Central differences ``(f(p + h) - f(p - h)) / 2h`` per coordinate.

    ``loss_fn`` takes no arguments and reads the parameters in place, so the
    arrays in ``params`` are perturbed and restored one coordinate at a time.
    With ``max_coords`` only a random subset of coordinates per block is
    checked (the rest stay NaN), which keeps checks on larger models fast.
    """
    out: dict[str, Array] = {}
    for name in names if names is not None else sorted(params):
        p = params[name]
        grad = np.full(p.shape, np.nan)
        flat = p.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            gen = rng if rng is not None else np.random.default_rng(0)
            coords = np.sort(gen.choice(flat.size, size=max_coords, replace=False))
        gflat = grad.reshape(-1)
        for k in coords:
            orig = flat[k]
            flat[k] = orig + h
            f_plus = loss_fn()
            flat[k] = orig - h
            f_minus = loss_fn()
            flat[k] = orig
            gflat[k] = (f_plus - f_minus) / (2.0 * h)
        out[name] = grad
    return out


def max_relative_error(analytic: Array, numeric: Array, floor: float = 1e-6) -> float:
    """``max |a - b| / max(|a|, |b|, floor)`` over coordinates where ``numeric`` is set."""
    mask = ~np.isnan(numeric)
    a = analytic[mask]
    b = numeric[mask]
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom))
