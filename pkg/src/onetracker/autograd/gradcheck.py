"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


@dataclass
class GradCheckReport:
    max_rel_err: float
    worst: tuple[int, tuple[int, ...]] | None  # (input index, coordinate)
    n_checked: int
    rel_tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= self.rel_tol


def finite_diff_check(f: Callable, x: Tensor | Sequence[Tensor], step: float = 1e-5,
                      rel_tol: float = 1e-4, max_coords: int | None = None,
                      seed: int = 0) -> GradCheckReport:
    """Compare ``backward`` against central differences of ``f(x)``.

    Error per coordinate is ``|analytic - numeric| / max(1, |numeric|)``.
    ``x`` may be one tensor or a list (e.g. model parameters that ``f``
    closes over); entries are perturbed in place and restored. With
    ``max_coords`` a seeded random subset of coordinates is checked.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    xs = [x] if isinstance(x, Tensor) else list(x)
    saved_flags = [t.requires_grad for t in xs]
    for t in xs:
        t.requires_grad = True
        t.grad = None

    out = f(x)
    if not np.all(np.isfinite(out.data)):
        raise FloatingPointError("f returned a non-finite value at the base point")
    out.backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in xs]

    coords = [(i, c) for i, t in enumerate(xs) for c in np.ndindex(t.shape)]
    if max_coords is not None and len(coords) > max_coords:
        rng = np.random.default_rng(seed)
        pick = rng.choice(len(coords), size=max_coords, replace=False)
        coords = [coords[k] for k in sorted(pick)]

    worst_err, worst = 0.0, None
    for i, c in coords:
        t = xs[i]
        orig = t.data[c]
        t.data[c] = orig + step
        fp = float(f(x).data)
        t.data[c] = orig - step
        fm = float(f(x).data)
        t.data[c] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise FloatingPointError(f"non-finite value of f near input {i} coordinate {c}")
        numeric = (fp - fm) / (2.0 * step)
        err = abs(analytic[i][c] - numeric) / max(1.0, abs(numeric))
        if err > worst_err or worst is None:
            worst_err, worst = err, (i, c)

    for t, flag in zip(xs, saved_flags):
        t.requires_grad = flag
        t.grad = None
    return GradCheckReport(max_rel_err=float(worst_err), worst=worst, n_checked=len(coords), rel_tol=rel_tol)
