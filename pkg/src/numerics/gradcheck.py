from dataclasses import dataclass, field
from typing import Callable, Dict, Optional

import numpy as np

from src.lib.errors import GradientCheckError


@dataclass
class GradCheckReport:
    """Result of comparing analytic gradients with central differences."""
    max_rel_error: float
    mean_rel_error: float
    per_param: Dict[str, float] = field(default_factory=dict)
    analytic: Dict[str, np.ndarray] = field(default_factory=dict)
    checked: int = 0
    tol: float = 1e-4

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tol


def relative_error(analytic: float, numeric: float, floor: float = 1e-6) -> float:
    return abs(analytic - numeric) / max(abs(analytic) + abs(numeric), floor)


def finite_diff_check(loss_fn: Callable[[], float], params: Dict[str, np.ndarray],
                      analytic: Dict[str, np.ndarray], h: float = 1e-5, tol: float = 1e-4,
                      max_entries: Optional[int] = None, rng: Optional[np.random.Generator] = None,
                      floor: float = 1e-6) -> GradCheckReport:
    """
    Compare analytic gradients against central differences.

    Each checked entry of each parameter is perturbed in place by +h and -h,
    the loss is re-evaluated, and the original value restored.

    Args:
        loss_fn: Zero-argument callable evaluating the scalar loss at the
                 current parameter values.
        params: Named parameter arrays (mutated temporarily).
        analytic: Analytic gradients with the same names and shapes.
        h: Finite-difference step.
        tol: Relative-error threshold for ``passed``.
        max_entries: Check at most this many randomly chosen entries per
                     parameter (None checks every entry).
        rng: Generator used to pick entries when ``max_entries`` is set.
        floor: Denominator floor so exactly-zero gradients compare absolutely.

    Returns:
        GradCheckReport

    Raises:
        GradientCheckError: if the loss is not finite at ``params``.
    """
    base = float(loss_fn())
    if not np.isfinite(base):
        raise GradientCheckError(f"loss is not finite at the check point ({base})")
    rng = rng or np.random.default_rng(0)

    errors = []
    per_param = {}
    for name, param in params.items():
        if name not in analytic:
            continue
        grad = analytic[name]
        flat = param.reshape(-1)
        flat_grad = grad.reshape(-1)
        indices = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            indices = rng.choice(flat.size, size=max_entries, replace=False)
        worst = 0.0
        for idx in indices:
            original = flat[idx]
            flat[idx] = original + h
            plus = float(loss_fn())
            flat[idx] = original - h
            minus = float(loss_fn())
            flat[idx] = original
            if not (np.isfinite(plus) and np.isfinite(minus)):
                raise GradientCheckError(f"loss became non-finite perturbing {name}[{idx}]")
            numeric = (plus - minus) / (2.0 * h)
            err = relative_error(float(flat_grad[idx]), numeric, floor)
            errors.append(err)
            worst = max(worst, err)
        per_param[name] = worst

    return GradCheckReport(
        max_rel_error=float(max(errors)) if errors else 0.0,
        mean_rel_error=float(np.mean(errors)) if errors else 0.0,
        per_param=per_param,
        analytic={name: analytic[name].copy() for name in per_param},
        checked=len(errors),
        tol=tol,
    )
