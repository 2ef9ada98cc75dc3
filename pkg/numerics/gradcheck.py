"""Central finite-difference oracle for the analytic backward rules."""
import logging
from dataclasses import dataclass

import numpy as np

from .exceptions import ContractError
from .tensor import Tape, Tensor, debug_checks

logger = logging.getLogger(__name__)


@dataclass
class GradCheckReport:
    max_rel_error: float
    tol: float
    checked: int
    worst: str = ""

    @property
    def passed(self):
        return self.max_rel_error <= self.tol


def relative_error(analytic, numeric):
    """|a - n| / max(|a|, |n|, 1): relative for large gradients, absolute below 1."""
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1.0)


def _scalar(out):
    if not isinstance(out, Tensor) or out.size != 1:
        shape = getattr(out, "shape", type(out).__name__)
        raise ContractError(f"grad_check needs a scalar-valued function, got {shape}")
    return float(out.data.reshape(()))


def grad_check(f, x, step=1e-6, tol=1e-5, max_coords=None, seed=0):
    """
    Compare the tape gradient of ``f(*xs)`` against central differences.

    ``x`` is a Tensor or a sequence of Tensors (all 64-bit). With
    ``max_coords`` only that many coordinates per tensor are perturbed,
    chosen with a seeded generator.
    """
    xs = [x] if isinstance(x, Tensor) else list(x)
    for t in xs:
        if t.dtype != np.float64:
            raise ContractError(f"grad_check needs 64-bit tensors, {t!r} is {t.dtype}")

    saved = [t.requires_grad for t in xs]
    rng = np.random.default_rng(seed)
    try:
        for t in xs:
            t.requires_grad = True
            t.grad = None
        with debug_checks():
            with Tape() as tape:
                out = f(*xs)
            _scalar(out)
            tape.backward(out)

            worst, where, checked = 0.0, "", 0
            for k, t in enumerate(xs):
                analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
                coords = np.arange(t.size)
                if max_coords is not None and t.size > max_coords:
                    coords = np.sort(rng.choice(t.size, size=max_coords, replace=False))
                original = t.data
                for i in coords:
                    probe = original.copy()
                    probe.flat[i] = original.flat[i] + step
                    t.data = probe
                    plus = _scalar(f(*xs))
                    probe.flat[i] = original.flat[i] - step
                    minus = _scalar(f(*xs))
                    t.data = original
                    numeric = (plus - minus) / (2.0 * step)
                    err = relative_error(float(analytic.flat[i]), numeric)
                    checked += 1
                    if err > worst:
                        label = t.name or f"input[{k}]"
                        worst, where = err, f"{label}[{np.unravel_index(i, t.shape)}]"
    finally:
        for t, flag in zip(xs, saved):
            t.requires_grad = flag

    report = GradCheckReport(max_rel_error=worst, tol=tol, checked=checked, worst=where)
    logger.debug("grad_check: %d coords, worst %.3e at %s", checked, worst, where or "-")
    return report
