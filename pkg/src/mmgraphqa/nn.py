"""Trainable layers: affine maps, 2-layer MLPs, batch/layer normalization."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, add, concat, matmul, mean, mul, power, relu, scale, sub

NORM_MODES = ("none", "batch", "layer")


@dataclass
class Linear:
    w: Tensor  # (d_in, d_out)
    b: Tensor  # (d_out,)

    @property
    def d_in(self) -> int:
        return self.w.shape[0]

    @property
    def d_out(self) -> int:
        return self.w.shape[1]


def affine(x: Tensor, layer: Linear) -> Tensor:
    if x.ndim != 2 or x.shape[1] != layer.d_in:
        raise ValueError(
            f"affine: input shape {x.shape} incompatible with weight {layer.w.shape}"
        )
    return add(matmul(x, layer.w), layer.b)


@dataclass
class Norm:
    """Scale/shift normalization state; ``kind`` selects the statistic axis."""

    kind: str  # "batch" (per feature over rows) or "layer" (per row)
    gamma: Tensor
    beta: Tensor
    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float = 1e-5
    momentum: float = 0.1


def batch_norm(x: Tensor, norm: Norm, train: bool, update_running: bool = False) -> Tensor:
    """Normalize per feature over the row axis.

    Rows are the nodes of a single graph, so the per-input statistics are
    meaningful at inference too; eval mode therefore also normalizes with
    the current rows and falls back to running statistics only when a
    single row leaves the batch statistics degenerate.
    """
    if train and x.shape[0] == 0:
        raise ValueError("batch_norm: empty batch in train mode")
    if train or x.shape[0] > 1:
        mu = mean(x, axis=0, keepdims=True)
        xc = sub(x, mu)
        var = mean(power(xc, 2.0), axis=0, keepdims=True)
        inv = power(add(var, norm.eps), -0.5)
        xhat = mul(xc, inv)
        if train and update_running:
            m = norm.momentum
            norm.running_mean = (1.0 - m) * norm.running_mean + m * mu.data.ravel()
            norm.running_var = (1.0 - m) * norm.running_var + m * var.data.ravel()
    else:
        inv = 1.0 / np.sqrt(norm.running_var + norm.eps)
        xhat = mul(sub(x, Tensor(norm.running_mean)), Tensor(inv))
    return add(mul(xhat, norm.gamma), norm.beta)


def layer_norm(x: Tensor, norm: Norm) -> Tensor:
    mu = mean(x, axis=1, keepdims=True)
    xc = sub(x, mu)
    var = mean(power(xc, 2.0), axis=1, keepdims=True)
    xhat = mul(xc, power(add(var, norm.eps), -0.5))
    return add(mul(xhat, norm.gamma), norm.beta)


def apply_norm(x: Tensor, norm: Norm | None, train: bool, update_running: bool = False) -> Tensor:
    if norm is None or norm.kind == "none":
        return x
    if norm.kind == "batch":
        return batch_norm(x, norm, train, update_running)
    if norm.kind == "layer":
        return layer_norm(x, norm)
    raise ValueError(f"unknown norm kind {norm.kind!r}")


@dataclass
class Mlp2:
    """Affine -> activation -> affine, with an optional output normalization."""

    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor
    activation: str = "relu"
    norm: Norm | None = None


def mlp2(x: Tensor, m: Mlp2, train: bool = True, update_running: bool = False) -> Tensor:
    h = affine(x, Linear(m.w1, m.b1))
    if m.activation == "relu":
        h = relu(h)
    elif m.activation != "identity":
        raise ValueError(f"unknown activation {m.activation!r}")
    y = affine(h, Linear(m.w2, m.b2))
    return apply_norm(y, m.norm, train, update_running)


# ---------------------------------------------------------------------------
# initialization (uniform +-1/sqrt(fan_in), seeded)


def init_linear(rng: np.random.Generator, d_in: int, d_out: int) -> Linear:
    bound = 1.0 / np.sqrt(d_in)
    w = Tensor(rng.uniform(-bound, bound, size=(d_in, d_out)), requires_grad=True)
    b = Tensor(rng.uniform(-bound, bound, size=(d_out,)), requires_grad=True)
    return Linear(w, b)


def init_norm(kind: str, d: int) -> Norm | None:
    if kind == "none":
        return None
    return Norm(
        kind=kind,
        gamma=Tensor(np.ones(d), requires_grad=True),
        beta=Tensor(np.zeros(d), requires_grad=True),
        running_mean=np.zeros(d),
        running_var=np.ones(d),
    )


def init_mlp2(
    rng: np.random.Generator,
    d_in: int,
    d_hidden: int,
    d_out: int,
    norm_kind: str = "none",
) -> Mlp2:
    l1 = init_linear(rng, d_in, d_hidden)
    l2 = init_linear(rng, d_hidden, d_out)
    return Mlp2(l1.w, l1.b, l2.w, l2.b, norm=init_norm(norm_kind, d_out))
