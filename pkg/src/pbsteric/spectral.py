"""Legendre-Gauss-Lobatto collocation grid on [-1, 1].

The grid of order L consists of the endpoints and the L-1 roots of
P_L'(x), found by Newton's iteration from Chebyshev-Lobatto starting
points with Legendre values from the three-term recurrence. The
differentiation matrix is assembled from barycentric weights (computed
in log space so orders up to 2048 neither overflow nor underflow),
with the diagonal filled by the negative-sum trick so each row sums to
zero exactly. See Berrut & Trefethen, SIAM Rev. 46 (2004).
"""

from dataclasses import dataclass

import numpy as np

MAX_ORDER = 2048


@dataclass(frozen=True)
class SpectralGrid:
    """Collocation grid: order L, the L+1 nodes and the (L+1)x(L+1)
    differentiation matrix mapping nodal values to nodal derivatives of
    the degree-L interpolant."""

    L: int
    nodes: np.ndarray
    D: np.ndarray
    bary_weights: np.ndarray

    def interpolate(self, values, x_new):
        """Evaluate the degree-L interpolant of nodal ``values`` at
        ``x_new`` using the second barycentric formula."""
        xq = np.atleast_1d(np.asarray(x_new, dtype=float))
        values = np.asarray(values, dtype=float)
        diff = xq[:, None] - self.nodes[None, :]
        exact = diff == 0.0
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = self.bary_weights[None, :] / diff
            out = (ratio @ values) / np.sum(ratio, axis=1)
        hit_rows, hit_cols = np.nonzero(exact)
        out[hit_rows] = values[hit_cols]
        if np.ndim(x_new) == 0:
            return float(out[0])
        return out


def _legendre_pair(order, x):
    """P_order(x) and P_{order-1}(x) by the three-term recurrence."""
    p_prev = np.ones_like(x)
    p = x.copy()
    for k in range(2, order + 1):
        p_prev, p = p, ((2 * k - 1) * x * p - (k - 1) * p_prev) / k
    return p, p_prev


def lgl_grid(L):
    """Build the Legendre-Gauss-Lobatto grid of order L (1 <= L <= 2048).

    The returned nodes are strictly increasing with x_0 = -1 and
    x_L = 1, antisymmetric about 0; applying ``D`` to nodal samples of
    a polynomial of degree <= L reproduces its derivative to rounding
    accuracy.
    """
    if not isinstance(L, (int, np.integer)):
        raise ValueError("lgl_grid: L must be an integer")
    L = int(L)
    if not 1 <= L <= MAX_ORDER:
        raise ValueError("lgl_grid: L must satisfy 1 <= L <= %d" % MAX_ORDER)

    if L == 1:
        nodes = np.array([-1.0, 1.0])
    else:
        # Interior nodes: Newton on P_L' from Chebyshev-Lobatto guesses.
        x = -np.cos(np.pi * np.arange(1, L) / L)
        for _ in range(60):
            p, p_prev = _legendre_pair(L, x)
            dp = L * (x * p - p_prev) / (x * x - 1.0)
            d2p = (2.0 * x * dp - L * (L + 1) * p) / (1.0 - x * x)
            dx = dp / d2p
            x = x - dx
            if np.max(np.abs(dx)) < 1e-15:
                break
        x = 0.5 * (x - x[::-1])  # enforce antisymmetry exactly
        nodes = np.concatenate(([-1.0], x, [1.0]))

    # Barycentric weights in log space: log|w_j| = -sum_k log|x_j - x_k|
    # with alternating signs for increasing nodes. Averaging with the
    # reversed weight vector makes |w_j| = |w_{L-j}| bit-exact, which
    # together with the antisymmetric nodes gives an exactly
    # flip-antisymmetric off-diagonal D[i][j] = -D[L-i][L-j].
    diff = nodes[:, None] - nodes[None, :]
    np.fill_diagonal(diff, 1.0)
    log_w = -np.sum(np.log(np.abs(diff)), axis=1)
    log_w = 0.5 * (log_w + log_w[::-1])
    log_w -= np.max(log_w)
    w = np.exp(log_w) * (-1.0) ** np.arange(L + 1)

    d_mat = w[None, :] / (w[:, None] * diff)
    np.fill_diagonal(d_mat, 0.0)
    # Negative-sum diagonal keeps row sums at rounding level; the
    # flip-average makes the diagonal mirror exactly.
    diag = -np.sum(d_mat, axis=1)
    np.fill_diagonal(d_mat, 0.5 * (diag - diag[::-1]))

    for a in (nodes, d_mat, w):
        a.flags.writeable = False
    return SpectralGrid(L, nodes, d_mat, w)
