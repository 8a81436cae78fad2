"""Central finite-difference gradient checks in 64-bit precision."""
import logging
from typing import Callable, List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, Field

from achelous.autograd.nn import Module
from achelous.autograd.tensor import Tensor, no_grad, precision

logger = logging.getLogger(__name__)


class GradCheckReport(BaseModel):
    max_rel_error: float = Field(..., description="Largest relative error over checked coordinates")
    tolerance: float = Field(..., description="Pass threshold")
    checked: int = Field(..., description="Number of coordinates compared")
    passed: bool


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-4) -> np.ndarray:
    """|a - n| / max(|a|, |n|, floor); the floor turns vanishing coordinates into absolute comparisons."""
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / scale


def _scalarize(out: Tensor, projection: Optional[np.ndarray]) -> Tensor:
    if projection is None:
        return out.sum() if out.size != 1 else out.reshape(())
    return (out * Tensor(projection)).sum()


def grad_check(
    fn: Callable[..., Tensor],
    inputs: Sequence[np.ndarray],
    tolerance: float = 1e-4,
    eps: float = 1e-5,
    wrt: Optional[Sequence[int]] = None,
    samples: Optional[int] = None,
    seed: int = 0,
) -> GradCheckReport:
    """Compare analytic gradients of ``fn`` with central differences.

    Non-scalar outputs are reduced with a fixed random projection so every
    output element contributes. ``wrt`` selects which inputs to check and
    ``samples`` limits the number of coordinates drawn per input.
    """
    rng = np.random.default_rng(seed)
    with precision(np.float64):
        tensors = [Tensor(np.array(a, dtype=np.float64), requires_grad=True) for a in inputs]
        out = fn(*tensors)
        projection = rng.standard_normal(out.shape) if out.size != 1 else None
        _scalarize(out, projection).backward()

        def evaluate() -> float:
            with no_grad():
                return _scalarize(fn(*tensors), projection).item()

        errors: List[float] = []
        for i in (range(len(tensors)) if wrt is None else wrt):
            t = tensors[i]
            analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
            flat = t.data.reshape(-1)
            coords = np.arange(flat.size)
            if samples is not None and samples < flat.size:
                coords = rng.choice(flat.size, size=samples, replace=False)
            for c in coords:
                original = flat[c]
                flat[c] = original + eps
                plus = evaluate()
                flat[c] = original - eps
                minus = evaluate()
                flat[c] = original
                numeric = (plus - minus) / (2 * eps)
                errors.append(float(relative_error(analytic.reshape(-1)[c], numeric)))

    worst = max(errors) if errors else 0.0
    return GradCheckReport(max_rel_error=worst, tolerance=tolerance, checked=len(errors), passed=worst < tolerance)


def check_module_gradients(
    loss_fn: Callable[[], Tensor],
    module: Module,
    samples: int = 10,
    tolerance: float = 1e-3,
    eps: float = 1e-5,
    seed: int = 0,
) -> GradCheckReport:
    """Sampled finite-difference check over all parameters of a float64 module.

    ``loss_fn`` must rebuild the scalar loss from the module's current parameters.
    """
    rng = np.random.default_rng(seed)
    named = list(module.named_parameters())
    module.zero_grad()
    loss_fn().backward()
    sizes = np.array([p.size for _, p in named])
    picks = rng.choice(sizes.sum(), size=min(samples, int(sizes.sum())), replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    errors = []
    for pick in picks:
        index = int(np.searchsorted(offsets, pick, side="right") - 1)
        name, p = named[index]
        c = pick - offsets[index]
        flat = p.data.reshape(-1)
        original = flat[c]
        with no_grad():
            flat[c] = original + eps
            plus = loss_fn().item()
            flat[c] = original - eps
            minus = loss_fn().item()
        flat[c] = original
        analytic = p.grad.reshape(-1)[c] if p.grad is not None else 0.0
        err = float(relative_error(np.float64(analytic), np.float64((plus - minus) / (2 * eps))))
        logger.debug(f"gradcheck {name}[{c}]: rel err {err:.2e}")
        errors.append(err)

    worst = max(errors) if errors else 0.0
    return GradCheckReport(max_rel_error=worst, tolerance=tolerance, checked=len(errors), passed=worst < tolerance)
