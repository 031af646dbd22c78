"""Central finite-difference verification of taped gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .autodiff import Tape, Tensor
from .errors import NumericError

# Relative error uses a floored denominator so agreement is judged on the
# absolute scale once both gradients are tiny; central differences at
# h=1e-5 resolve absolute deviations far below this floor.
_DENOM_FLOOR = 1e-3


@dataclass
class CheckResult:
    max_rel_err: float
    worst_param: str
    worst_index: tuple[int, ...]
    n_checked: int
    per_param: dict[str, float] = field(default_factory=dict)

    def passed(self, tol: float = 1e-4) -> bool:
        return self.max_rel_err < tol


def grad_check(
    f: Callable[[], Tensor],
    params: dict[str, Tensor],
    h: float = 1e-5,
) -> CheckResult:
    """Compare analytic gradients of ``f()`` against (f(p+h)-f(p-h))/(2h).

    ``f`` must rebuild its forward pass from the current parameter data on
    each call and be free of side effects.
    """
    with Tape() as tape:
        loss = f()
        grads = tape.backward(loss)
    if not np.isfinite(loss.data):
        raise NumericError("grad_check: non-finite loss at base point")

    analytic = {
        name: (grads.get(p) if grads.get(p) is not None else np.zeros_like(p.data))
        for name, p in params.items()
    }

    result = CheckResult(0.0, "", (), 0)
    for name, p in params.items():
        a = analytic[name]
        worst = 0.0
        flat = p.data.ravel()
        aflat = np.asarray(a).ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = float(f().data)
            flat[i] = orig - h
            down = float(f().data)
            flat[i] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise NumericError(f"grad_check: non-finite evaluation at {name}[{i}]")
            num = (up - down) / (2.0 * h)
            err = abs(aflat[i] - num) / max(abs(aflat[i]) + abs(num), _DENOM_FLOOR)
            result.n_checked += 1
            if err > worst:
                worst = err
            if err > result.max_rel_err:
                result.max_rel_err = err
                result.worst_param = name
                result.worst_index = np.unravel_index(i, p.data.shape)
        result.per_param[name] = worst
    return result
