"""Central finite-difference gradient checker.

The independent oracle for every analytic backward pass in the package.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .nn import Parameter


@dataclass
class GradCheckReport:
    """Worst-offender summary of an analytic-vs-numeric gradient comparison."""

    max_rel_err: float
    worst_param: str
    worst_index: tuple
    analytic: float
    numeric: float
    coords_checked: int

    def passed(self, tolerance: float) -> bool:
        return self.max_rel_err < tolerance

    def __str__(self):
        return (
            f"max rel err {self.max_rel_err:.3e} at {self.worst_param}{list(self.worst_index)} "
            f"(analytic {self.analytic:.6e}, numeric {self.numeric:.6e}, "
            f"{self.coords_checked} coordinates)"
        )


def relative_error(analytic: float, numeric: float, floor: float = 1e-4) -> float:
    """|a - n| scaled by max(|a|, |n|, floor).

    The floor keeps finite-difference noise on near-zero coordinates from
    registering as large relative errors.
    """
    diff = abs(analytic - numeric)
    if diff == 0.0:
        return 0.0
    return diff / max(abs(analytic), abs(numeric), floor)


def gradient_check(
    loss_and_grad: Callable[[], float],
    params: Sequence[Parameter],
    step: float = 1e-5,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
    floor: float = 1e-4,
) -> GradCheckReport:
    """Compare analytic gradients against central differences, per coordinate.

    ``loss_and_grad`` must zero the parameter gradients, run the forward and
    backward passes, and return the scalar loss; it is called repeatedly with
    perturbed parameter values, so it has to be a deterministic function of
    the current parameter state. ``max_coords`` subsamples coordinates of
    large parameters (seeded by ``rng``).
    """
    loss_and_grad()
    analytic = {id(p): p.grad.copy() for p in params}

    worst = GradCheckReport(0.0, "<none>", (), 0.0, 0.0, 0)
    for p in params:
        flat = p.value.reshape(-1)
        n = flat.size
        if max_coords is not None and n > max_coords:
            if rng is None:
                rng = np.random.default_rng(0)
            indices = rng.choice(n, size=max_coords, replace=False)
        else:
            indices = range(n)
        a_flat = analytic[id(p)].reshape(-1)
        for idx in indices:
            original = flat[idx]
            flat[idx] = original + step
            f_plus = loss_and_grad()
            flat[idx] = original - step
            f_minus = loss_and_grad()
            flat[idx] = original
            numeric = (f_plus - f_minus) / (2.0 * step)
            rel = relative_error(a_flat[idx], numeric, floor=floor)
            worst.coords_checked += 1
            if rel > worst.max_rel_err:
                worst.max_rel_err = rel
                worst.worst_param = p.name
                worst.worst_index = np.unravel_index(idx, p.value.shape)
                worst.analytic = float(a_flat[idx])
                worst.numeric = float(numeric)

    # Leave the analytic gradients in place for the caller.
    loss_and_grad()
    return worst
