"""Finite-difference gradient verification.

The numeric side never touches the autodiff graph: it re-runs the forward
function with individual coordinates nudged by +/-eps and takes the central
difference. Run under float64 (see ``default_dtype``) or the differences
drown in rounding noise.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor

# Coordinates whose analytic and numeric gradients are both below this floor
# are compared absolutely rather than relatively.
REL_FLOOR = 1e-3


# One-sided slope disagreement above this (relative) marks a ReLU kink
# inside the probe interval. The kink's pollution of the central estimate
# is exactly |left-right|/2, so this bound keeps undetected pollution at
# 5e-5 of scale. Valid only for piecewise-linear functions, where benign
# curvature contributes ~0 to the disagreement.
KINK_TOL = 1e-4


def numeric_gradient(fn, param: Tensor, eps: float = 1e-3, coords=None,
                     skip_kinks: bool = False) -> np.ndarray:
    """Central-difference gradient of scalar ``fn()`` w.r.t. ``param``.

    ``fn`` must re-run the forward pass from ``param.data`` each call.
    ``coords`` optionally restricts to a subset of flat indices; indices
    not evaluated come back as NaN.

    A central difference is only a derivative estimate while the function
    stays differentiable across [x-eps, x+eps]. With ``skip_kinks`` the
    two one-sided slopes are compared and coordinates whose probe interval
    straddles a kink come back NaN as well; use it only on piecewise-linear
    functions (conv/relu stacks) where smooth curvature cannot trip it.
    """
    flat = param.data.reshape(-1)
    if coords is None:
        coords = range(flat.size)
    grad = np.full(flat.size, np.nan, dtype=np.float64)
    f0 = float(fn().data) if skip_kinks else 0.0
    for i in coords:
        orig = flat[i]
        flat[i] = orig + eps
        hi = float(fn().data)
        flat[i] = orig - eps
        lo = float(fn().data)
        flat[i] = orig
        center = (hi - lo) / (2.0 * eps)
        if skip_kinks:
            left = (f0 - lo) / eps
            right = (hi - f0) / eps
            if abs(left - right) > KINK_TOL * max(abs(left), abs(right), REL_FLOOR):
                continue
        grad[i] = center
    return grad.reshape(param.data.shape)


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max_i |a_i - n_i| / max(|a_i|, |n_i|, floor), NaN coords skipped."""
    a = np.asarray(analytic, dtype=np.float64).reshape(-1)
    n = np.asarray(numeric, dtype=np.float64).reshape(-1)
    keep = ~np.isnan(n)
    if not keep.any():
        return 0.0
    a, n = a[keep], n[keep]
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), REL_FLOOR)
    return float(np.max(np.abs(a - n) / denom))


def check_gradients(fn, params, eps: float = 1e-3, max_coords: int | None = None,
                    rng: np.random.Generator | None = None, skip_kinks: bool = False) -> float:
    """Compare backward() gradients of scalar ``fn()`` against central
    differences for every tensor in ``params``; returns the worst relative
    error across all checked coordinates.

    ``max_coords`` caps the number of coordinates sampled per tensor (the
    full set is used when it is None or the tensor is small). With
    ``skip_kinks`` coordinates whose probe interval straddles a kink are
    dropped; at least half of the probed coordinates must survive.
    """
    params = list(params)
    for p in params:
        p.zero_grad()
    out = fn()
    out.backward()
    analytic = []
    for p in params:
        if p.grad is None:
            raise AssertionError("parameter received no gradient")
        analytic.append(p.grad.copy())
        p.zero_grad()

    worst = 0.0
    for p, a in zip(params, analytic):
        size = p.data.size
        if max_coords is not None and size > max_coords:
            if rng is None:
                rng = np.random.default_rng(0)
            coords = rng.choice(size, size=max_coords, replace=False)
            probed = max_coords
        else:
            coords = None
            probed = size
        numeric = numeric_gradient(fn, p, eps=eps, coords=coords, skip_kinks=skip_kinks)
        valid = int(np.sum(~np.isnan(numeric)))
        if valid < max(1, probed // 2):
            raise AssertionError(f"too many kink-crossing coordinates ({probed - valid}/{probed} skipped)")
        worst = max(worst, relative_error(a, numeric))
    return worst
