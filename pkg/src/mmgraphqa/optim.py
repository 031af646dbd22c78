"""AdamW with decoupled weight decay, plus the warmup/cosine LR multiplier."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor


def lr_schedule(epoch: int, warmup: int, total: int) -> float:
    """Linear ramp 0 -> 1 over [0, warmup], then cosine decay to 0 at ``total``."""
    if warmup <= 0:
        raise ValueError("warmup must be positive")
    if warmup > total:
        raise ValueError(f"warmup {warmup} exceeds total epochs {total}")
    if not 0 <= epoch <= total:
        raise ValueError(f"epoch {epoch} outside [0, {total}]")
    if epoch <= warmup:
        return epoch / warmup
    if total == warmup:
        return 1.0
    return 0.5 * (1.0 + math.cos(math.pi * (epoch - warmup) / (total - warmup)))


@dataclass
class ParamGroup:
    params: dict[str, Tensor]
    lr: float


class AdamW:
    """Decoupled-weight-decay Adam over named parameter groups."""

    def __init__(
        self,
        groups: list[ParamGroup],
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.01,
    ):
        names = [n for g in groups for n in g.params]
        if len(names) != len(set(names)):
            raise ValueError("parameter groups share a name")
        self.groups = groups
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m: dict[str, np.ndarray] = {
            n: np.zeros_like(p.data) for g in groups for n, p in g.params.items()
        }
        self.v: dict[str, np.ndarray] = {
            n: np.zeros_like(p.data) for g in groups for n, p in g.params.items()
        }

    def step(self, grads: dict[str, np.ndarray], lr_mult: float = 1.0) -> None:
        b1, b2 = self.betas
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - b1**t
        bc2 = 1.0 - b2**t
        for group in self.groups:
            lr = group.lr * lr_mult
            for name, p in group.params.items():
                g = grads.get(name)
                if g is None:
                    g = np.zeros_like(p.data)
                if g.shape != p.data.shape:
                    raise ValueError(
                        f"gradient shape {g.shape} != parameter shape {p.data.shape} for {name!r}"
                    )
                m = self.m[name] = b1 * self.m[name] + (1.0 - b1) * g
                v = self.v[name] = b2 * self.v[name] + (1.0 - b2) * g * g
                if self.weight_decay:
                    p.data -= lr * self.weight_decay * p.data
                p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {f"m.{n}": a for n, a in self.m.items()}
        out.update({f"v.{n}": a for n, a in self.v.items()})
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray], step_count: int) -> None:
        for n in self.m:
            self.m[n] = np.array(arrays[f"m.{n}"])
            self.v[n] = np.array(arrays[f"v.{n}"])
        self.step_count = step_count
