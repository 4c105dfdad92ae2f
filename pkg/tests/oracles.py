"""Independent reference computations used by the tests.

Everything here is written from the textbook formulas with dense numpy
linear algebra and shares no code with the package.
"""

import math

import numpy as np


def k_dense(a, b, gamma, a1, a2):
    a = np.asarray(a, dtype=float)[:, None]
    b = np.asarray(b, dtype=float)[None, :]
    return a1 ** 2 * np.exp(-(a - b) ** 2 / (2 * gamma ** 2)) + a2 ** 2 * a * b


def centred(times, values):
    t = np.asarray(times, dtype=float)
    y = np.asarray(values, dtype=float)
    return t - t.mean(), y - y.mean(), t.mean(), y.mean()


def posterior_dense(times, values, query, gamma, a1, a2, jitter):
    """Conditional Gaussian of the query block given the observed block."""
    t, y, t0, y0 = centred(times, values)
    q = np.asarray(query, dtype=float) - t0
    joint = k_dense(np.concatenate([t, q]), np.concatenate([t, q]), gamma, a1, a2)
    m = len(t)
    s_tt = joint[:m, :m] + jitter * np.eye(m)
    s_qt = joint[m:, :m]
    s_qq = joint[m:, m:]
    mean = s_qt @ np.linalg.solve(s_tt, y) + y0
    cov = s_qq - s_qt @ np.linalg.solve(s_tt, s_qt.T)
    return mean, np.diag(cov)


def loo_dense(times, values, gamma, a1, a2, jitter):
    """Per-point log predictive probabilities with row/column i deleted."""
    t, y, _, _ = centred(times, values)
    k = k_dense(t, t, gamma, a1, a2) + jitter * np.eye(len(t))
    out = []
    for i in range(len(t)):
        rest = [j for j in range(len(t)) if j != i]
        k_rr = k[np.ix_(rest, rest)]
        k_ir = k[i, rest]
        mu = k_ir @ np.linalg.solve(k_rr, y[rest])
        var = k[i, i] - k_ir @ np.linalg.solve(k_rr, k_ir)
        out.append(-0.5 * math.log(2 * math.pi * var) - (y[i] - mu) ** 2 / (2 * var))
    return np.array(out)


def random_gp_case(rng, m_max=10):
    """A random window and hyperparameters with a well-conditioned Gram matrix."""
    m = int(rng.integers(2, m_max + 1))
    times = 10.0 + np.cumsum(rng.uniform(0.05, 0.5, m))
    values = rng.normal(0.0, 2.0, m) + rng.uniform(-1, 1) * times
    span = max(times[-1] - times[0], 0.1)
    gamma = span * math.exp(rng.uniform(-2.0, 0.5))
    a1 = math.exp(rng.uniform(-1.0, 1.5))
    a2 = math.exp(rng.uniform(-2.0, 0.5))
    jitter = 1e-4 * (a1 ** 2 + a2 ** 2 * span ** 2)
    return times, values, gamma, a1, a2, jitter


def binomial_ci99(n, p):
    """Normal-approximation 99% interval for a delivered count fraction."""
    z = 2.5758293035489004  # Phi^-1(0.995)
    half = z * math.sqrt(p * (1 - p) / n)
    return p - half, p + half


def dead_reckon(x0, y0, speeds, headings, dt=0.1):
    """Left-Riemann positions from speed/heading samples at t0, t0+dt, ..."""
    xs, ys = [], []
    x, y = x0, y0
    for v, h in zip(speeds, headings):
        x += dt * v * math.cos(h)
        y += dt * v * math.sin(h)
        xs.append(x)
        ys.append(y)
    return np.array(xs), np.array(ys)
