"""Independent reference computations used as test oracles.

Nothing here imports the code under test.
"""

import math

import numpy as np


def solve3(a, b):
    """Gaussian elimination with partial pivoting on a 3x3 system, pure Python."""
    m = [list(map(float, row)) + [float(bi)] for row, bi in zip(a, b)]
    n = len(m)
    for col in range(n):
        piv = max(range(col, n), key=lambda r: abs(m[r][col]))
        m[col], m[piv] = m[piv], m[col]
        for r in range(col + 1, n):
            f = m[r][col] / m[col][col]
            for c in range(col, n + 1):
                m[r][c] -= f * m[col][c]
    x = [0.0] * n
    for r in reversed(range(n)):
        x[r] = (m[r][n] - sum(m[r][c] * x[c] for c in range(r + 1, n))) / m[r][r]
    return x


def ar2_normal_equation_fit(y):
    """Stage-1 AR(2) coefficients from hand-built normal equations."""
    rows = [(1.0, y[t - 1], y[t - 2]) for t in range(2, len(y))]
    targets = [y[t] for t in range(2, len(y))]
    xtx = [[sum(r[i] * r[j] for r in rows) for j in range(3)] for i in range(3)]
    xty = [sum(r[i] * v for r, v in zip(rows, targets)) for i in range(3)]
    return solve3(xtx, xty)


def simulate_ar_arch(beta, alpha, n, seed, burn=200):
    """Scalar loop over the AR(2)-ARCH(1) recursion."""
    rng = np.random.default_rng(seed)
    b0, b1, b2 = beta
    a0, a1 = alpha
    mean = b0 / (1 - b1 - b2)
    v1 = v2 = mean
    eps = 0.0
    out = []
    for _ in range(n + burn):
        sigma = math.sqrt(a0 + a1 * eps * eps)
        eps = sigma * rng.standard_normal()
        v = b0 + b1 * v1 + b2 * v2 + eps
        out.append(v)
        v2, v1 = v1, v
    return out[burn:]


def brute_force_pop_order(entries):
    """entries: (policy_id, priority, tie_rank, seq). Sorted by the queue contract."""
    return [e[0] for e in sorted(entries, key=lambda e: (-e[1], e[2], e[3]))]


def sample_std(values):
    m = sum(values) / len(values)
    return math.sqrt(sum((v - m) ** 2 for v in values) / (len(values) - 1))
