"""Principal branch of the Lambert W function.

Two entry points:

* :func:`lambert_w0` evaluates W0(x), the inverse of w -> w*exp(w) on
  [-1/e, inf), for scalar or array input.
* :func:`lambert_w0_exp` evaluates W0(exp(y)) without ever forming
  exp(y), which is the quantity needed when the argument is the
  exponential of a large chemical-potential sum.

The algorithm follows Corless, Gonnet, Hare, Jeffrey and Knuth,
"On the Lambert W function", Adv. Comput. Math. 5 (1996): a piecewise
initial guess (branch-point series, small-argument series, log
asymptote) polished by Halley's iteration until the defining identity
holds to machine precision.
"""

import numpy as np

# Branch point of the principal branch and the slack allowed on input
# rounding at the boundary.
BRANCH_POINT = -np.exp(-1.0)
BRANCH_SLACK = 1e-15

_MAX_ITER = 50
_E = np.e


def _initial_guess(x):
    """Piecewise starting values for Halley's iteration."""
    w = np.empty_like(x)

    near_branch = x < -0.25
    if np.any(near_branch):
        # Series in p = sqrt(2(e*x + 1)) about the branch point; the
        # clamp absorbs rounding of e*x at x = -1/e itself.
        p = np.sqrt(np.maximum(2.0 * (1.0 + _E * x[near_branch]), 0.0))
        w[near_branch] = -1.0 + p * (1.0 - p * (1.0 / 3.0 - (11.0 / 72.0) * p))

    small = (x >= -0.25) & (x <= 1.0)
    w[small] = x[small] * (1.0 - x[small])

    # x*(1-x) turns sharply negative past x = 1 and Halley can then be
    # attracted below w = -1; bridge the gap to the log asymptote with
    # plain log(x), which stays within 0.6 of W0 on (1, e].
    mid = (x > 1.0) & (x <= _E)
    w[mid] = np.log(x[mid])

    large = x > _E
    if np.any(large):
        l1 = np.log(x[large])
        l2 = np.log(l1)
        w[large] = l1 - l2 + l2 / l1

    return w


def _halley(w, x):
    """Polish w in place until |w*exp(w) - x| <= 1e-15 * max(|x|, 1e-300)."""
    target = 1e-15 * np.maximum(np.abs(x), 1e-300)
    active = np.ones(x.shape, dtype=bool)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        for _ in range(_MAX_ITER):
            wa, xa = w[active], x[active]
            ew = np.exp(wa)
            f = wa * ew - xa
            done = np.abs(f) <= target[active]
            if np.all(done):
                break
            fp = ew * (wa + 1.0)
            # Halley step; fp vanishes only at the branch point, where f
            # is already zero and the element is masked out as done.
            denom = fp - f * (wa + 2.0) / (2.0 * (wa + 1.0))
            dw = np.where(done | (denom == 0.0), 0.0,
                          f / np.where(denom != 0.0, denom, 1.0))
            wa = wa - dw
            w[active] = wa
            still = ~done & (np.abs(dw) > 1e-17 * (1.0 + np.abs(wa)))
            active[active] = still
            if not np.any(active):
                break
    return w


def lambert_w0(x):
    """Principal branch W0 of the Lambert W function.

    Solves w * exp(w) = x for the branch with w >= -1. Accepts a scalar
    or an ndarray; returns the same shape. Inputs within ``BRANCH_SLACK``
    below -1/e are clamped to the branch point.

    Raises
    ------
    ValueError
        If any input is NaN or lies below -1/e - 1e-15.
    """
    arr = np.asarray(x, dtype=float)
    scalar = arr.ndim == 0
    flat = np.atleast_1d(arr).astype(float).ravel()

    if np.any(np.isnan(flat)) or np.any(flat < BRANCH_POINT - BRANCH_SLACK):
        raise ValueError(
            "lambert_w0 requires x >= -1/e (= %.17g)" % BRANCH_POINT)

    np.clip(flat, BRANCH_POINT, None, out=flat)

    w = np.empty_like(flat)
    inf_mask = np.isinf(flat)
    w[inf_mask] = np.inf

    # Arguments this large would overflow w*exp(w) inside the iteration;
    # solve the log-domain form w + log(w) = log(x) instead.
    huge = (~inf_mask) & (flat > 1e300)
    if np.any(huge):
        w[huge] = _w0_exp_core(np.log(flat[huge]))

    rest = ~(inf_mask | huge)
    if np.any(rest):
        xr = flat[rest]
        w[rest] = _halley(_initial_guess(xr), xr)

    if scalar:
        return float(w[0])
    return w.reshape(arr.shape)


def _w0_exp_core(y):
    """Solve w + log(w) = y for w >= 1 (valid for y >= 1).

    Newton's iteration from w = y - log(y) approaches the root from
    below and converges monotonically (the map is concave increasing),
    so log(w) is always evaluated at w >= 1.
    """
    w = np.maximum(y - np.log(np.maximum(y, 1.0)), 1.0)
    target = 1e-15 * np.maximum(np.abs(y), 1.0)
    for _ in range(_MAX_ITER):
        g = w + np.log(w) - y
        if np.all(np.abs(g) <= target):
            break
        w = w - g * w / (w + 1.0)
    return w


def lambert_w0_exp(y):
    """Evaluate W0(exp(y)) without forming exp(y).

    For y >= 1 this solves w + log(w) = y directly, so y may be far
    beyond the overflow threshold of exp. For y < 1, exp(y) < e is
    exactly representable and well conditioned, and the evaluation
    falls back to :func:`lambert_w0`.

    Raises
    ------
    ValueError
        If any input is not finite.
    """
    arr = np.asarray(y, dtype=float)
    scalar = arr.ndim == 0
    flat = np.atleast_1d(arr).astype(float).ravel()

    if np.any(~np.isfinite(flat)):
        raise ValueError("lambert_w0_exp requires finite y")

    w = np.empty_like(flat)
    lo = flat < 1.0
    if np.any(lo):
        w[lo] = lambert_w0(np.exp(flat[lo]))
    if np.any(~lo):
        w[~lo] = _w0_exp_core(flat[~lo])

    if scalar:
        return float(w[0])
    return w.reshape(arr.shape)
