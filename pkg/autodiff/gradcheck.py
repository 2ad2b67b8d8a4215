"""
Central finite-difference check of analytic gradients.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional

import numpy as np

from autodiff.tensor import Graph, Tensor, backward, evaluate

logger = logging.getLogger(__name__)


@dataclass
class GradientReport:
    """Per-parameter maximum relative error between analytic and numeric gradients."""
    tolerance: float
    max_rel_error: Dict[str, float] = field(default_factory=dict)
    checked_entries: Dict[str, int] = field(default_factory=dict)

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.worst < self.tolerance


def relative_error(analytic: float, numeric: float, floor: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def check_gradients(
    graph: Graph,
    inputs: Mapping[str, Tensor],
    tolerance: float = 1e-4,
    params: Optional[Mapping[str, Tensor]] = None,
    loss_key: str = "loss",
    step: float = 1e-5,
    max_entries: Optional[int] = None,
    floor: float = 1e-6,
    seed: int = 0,
) -> GradientReport:
    """Compare backward() against central differences with the given step.

    ``params`` defaults to the inputs that require gradients. With
    ``max_entries`` only that many randomly chosen entries per parameter are
    perturbed. Errors are relative with an absolute floor on the denominator.
    Never raises on a mismatch; the report says whether it passed.
    """
    if params is None:
        params = {name: t for name, t in inputs.items() if t.requires_grad}
    for p in params.values():
        p.zero_grad()

    loss = evaluate(graph, inputs)[loss_key]
    backward(graph, loss)
    analytic = {
        name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data)).reshape(-1)
        for name, p in params.items()
    }

    def loss_at() -> float:
        return evaluate(graph, inputs)[loss_key].item()

    rng = np.random.default_rng(seed)
    report = GradientReport(tolerance=tolerance)
    for name, p in params.items():
        flat = p.data.reshape(-1)
        indices = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            indices = rng.choice(flat.size, size=max_entries, replace=False)
        worst = 0.0
        for i in indices:
            original = flat[i]
            flat[i] = original + step
            f_plus = loss_at()
            flat[i] = original - step
            f_minus = loss_at()
            flat[i] = original
            numeric = (f_plus - f_minus) / (2.0 * step)
            worst = max(worst, relative_error(float(analytic[name][i]), numeric, floor))
        report.max_rel_error[name] = worst
        report.checked_entries[name] = int(len(indices))

    for p in params.values():
        p.zero_grad()
    logger.debug("gradient check worst relative error %.3e", report.worst)
    return report
