"""Central finite-difference verification of tape gradients.

The numeric route perturbs each coordinate in place and re-evaluates the
function, so it is independent of the backward closures it checks. Meant to
run at float64; float32 rounding drowns the comparison.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward

# Relative-error denominator floor. Central differences at step 1e-5 carry
# roundoff noise around eps*|f|/step ~ 1e-10 absolute, so coordinates whose
# gradient sits below this floor are held to |a - n| < tolerance * floor
# instead of a pure ratio that the noise would dominate.
_DENOM_FLOOR = 1e-5


@dataclass
class GradCheckReport:
    max_rel_error: float
    tolerance: float
    per_tensor: list[float] = field(default_factory=list)
    worst_tensor: int = -1
    worst_coord: tuple = ()
    analytic_at_worst: float = 0.0
    numeric_at_worst: float = 0.0

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance

    def __str__(self) -> str:
        status = "pass" if self.passed else "FAIL"
        return (f"gradcheck {status}: max rel error {self.max_rel_error:.3e} "
                f"(tolerance {self.tolerance:.1e}) at tensor {self.worst_tensor} "
                f"coord {self.worst_coord}: analytic {self.analytic_at_worst:.6e} "
                f"vs numeric {self.numeric_at_worst:.6e}")


def check_gradient(f: Callable[[], Tensor], wrt: Sequence[Tensor] | Tensor,
                   step: float = 1e-5, tolerance: float = 1e-4) -> GradCheckReport:
    """Compare tape gradients of scalar-valued `f` against central differences.

    `f` takes no arguments and must read the current contents of the tensors
    in `wrt`; perturbation happens in place. `f` is evaluated twice up front
    and rejected if the two values differ, since finite differences are
    meaningless for a non-deterministic function.
    """
    tensors = [wrt] if isinstance(wrt, Tensor) else list(wrt)
    if not tensors:
        raise ValueError("check_gradient needs at least one tensor to differentiate")

    v1 = f()
    if v1.size != 1:
        raise ValueError(f"check_gradient expects a scalar function, got shape {v1.shape}")
    v2 = f()
    if v1.item() != v2.item():
        raise ValueError("f is not deterministic: two evaluations at the same point differ")

    for t in tensors:
        t.grad = None
    out = f()
    backward(out)
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in tensors]

    report = GradCheckReport(max_rel_error=0.0, tolerance=tolerance)
    for ti, t in enumerate(tensors):
        flat = t.data.reshape(-1)
        num = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            f_plus = f().item()
            flat[i] = orig - step
            f_minus = f().item()
            flat[i] = orig
            num[i] = (f_plus - f_minus) / (2.0 * step)
        ana = analytic[ti].reshape(-1)
        denom = np.maximum(np.maximum(np.abs(ana), np.abs(num)), _DENOM_FLOOR)
        rel = np.abs(ana - num) / denom
        worst = float(rel.max()) if rel.size else 0.0
        report.per_tensor.append(worst)
        if worst >= report.max_rel_error:
            j = int(rel.argmax()) if rel.size else 0
            report.max_rel_error = worst
            report.worst_tensor = ti
            report.worst_coord = np.unravel_index(j, t.data.shape) if rel.size else ()
            report.analytic_at_worst = float(ana[j]) if rel.size else 0.0
            report.numeric_at_worst = float(num[j]) if rel.size else 0.0
    return report
