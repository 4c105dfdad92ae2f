"""Gaussian process regression on short speed / heading time series.

Covariance is an RBF plus a linear kernel::

    k(t, t') = alpha1**2 * exp(-(t - t')**2 / (2 gamma**2)) + alpha2**2 * t * t'

Hyperparameters are learned by maximising the leave-one-out (LOO)
predictive log probability. Windows are centred before use: the time axis
is shifted to the window's mean time and the value mean is subtracted, so
the zero-mean prior and the linear kernel's origin both sit in the middle
of the observed data.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular
from scipy.linalg.lapack import dpotrf, dpotri
from scipy.optimize import minimize

SERIES_KINDS = ("speed", "heading", "x", "y")

JITTER_REL = 1e-8
JITTER_REL_MAX = 1e-4
SCALE_FLOOR = 1e-6
LOG_BOUND = math.log(1e4)
LOG_2PI = math.log(2.0 * math.pi)


class IllConditionedKernelError(np.linalg.LinAlgError):
    """Gram matrix could not be factorised even after jitter escalation."""


class GpNumericalWarning(UserWarning):
    """A variance hit the jitter floor or an optimisation made no progress."""


@dataclass(frozen=True)
class GpHyperparams:
    gamma: float
    alpha1: float
    alpha2: float

    def __post_init__(self):
        for name in ("gamma", "alpha1", "alpha2"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be positive and finite, got {v}")

    def log(self) -> np.ndarray:
        return np.log([self.gamma, self.alpha1, self.alpha2])

    @classmethod
    def from_log(cls, v) -> "GpHyperparams":
        g, a1, a2 = np.exp(np.asarray(v, dtype=float))
        return cls(float(g), float(a1), float(a2))

    def as_array(self) -> np.ndarray:
        return np.array([self.gamma, self.alpha1, self.alpha2])


@dataclass(frozen=True, eq=False)
class TimeSeriesWindow:
    times: np.ndarray
    values: np.ndarray
    kind: str = "speed"

    def __post_init__(self):
        t = np.array(self.times, dtype=float).ravel()
        v = np.array(self.values, dtype=float).ravel()
        if len(t) != len(v):
            raise ValueError("times and values differ in length")
        if len(t) == 0:
            raise ValueError("empty time series window")
        if np.any(np.diff(t) <= 0):
            raise ValueError("window times must be strictly increasing")
        if self.kind not in SERIES_KINDS:
            raise ValueError(f"unknown series kind {self.kind!r}")
        t.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return len(self.times)

    @property
    def span(self) -> float:
        return float(self.times[-1] - self.times[0])


@dataclass(frozen=True)
class GpModel:
    kind: str
    theta: GpHyperparams
    loo_objective: float
    trained_window_span: float
    converged: bool = True

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "gamma": self.theta.gamma,
            "alpha1": self.theta.alpha1,
            "alpha2": self.theta.alpha2,
            "loo_objective": self.loo_objective,
            "trained_window_span": self.trained_window_span,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GpModel":
        return cls(
            kind=d["kind"],
            theta=GpHyperparams(float(d["gamma"]), float(d["alpha1"]), float(d["alpha2"])),
            loo_objective=float(d["loo_objective"]),
            trained_window_span=float(d["trained_window_span"]),
        )


@dataclass(frozen=True, eq=False)
class PredictiveSeries:
    times: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def __len__(self) -> int:
        return len(self.times)


# ---------------------------------------------------------------------------
# kernel algebra


def kernel(t, t_prime, theta: GpHyperparams):
    """Compound RBF + linear covariance; broadcasts over array inputs."""
    t = np.asarray(t, dtype=float)
    t_prime = np.asarray(t_prime, dtype=float)
    rbf = theta.alpha1 ** 2 * np.exp(-((t - t_prime) ** 2) / (2.0 * theta.gamma ** 2))
    out = rbf + theta.alpha2 ** 2 * t * t_prime
    return float(out) if out.ndim == 0 else out


def _cross(a: np.ndarray, b: np.ndarray, theta: GpHyperparams) -> np.ndarray:
    return kernel(a[:, None], b[None, :], theta)


def gram_matrix(times, theta: GpHyperparams, jitter: float = 0.0) -> np.ndarray:
    times = np.asarray(times, dtype=float)
    if np.any(np.diff(times) <= 0):
        raise ValueError("gram_matrix requires strictly increasing times")
    return _cross(times, times, theta) + jitter * np.eye(len(times))


def default_jitter(values) -> float:
    scale = max(float(np.std(values)), SCALE_FLOOR)
    return JITTER_REL * scale ** 2


def jitter_limit(k: np.ndarray, jitter: float) -> float:
    """Largest jitter tried when escalating from ``jitter``.

    Escalation normally stops at ``JITTER_REL_MAX / JITTER_REL`` times the
    starting value. A flat window has a tiny data-relative start, so the
    ceiling is also at least ``JITTER_REL_MAX`` of the mean prior variance.
    """
    scale = float(np.mean(np.diagonal(k, axis1=-2, axis2=-1)))
    return max(jitter * (JITTER_REL_MAX / JITTER_REL), JITTER_REL_MAX * scale) * (1 + 1e-9)


def factorize(times, theta: GpHyperparams, jitter: float) -> tuple[np.ndarray, float]:
    """Cholesky factor of the jittered Gram matrix.

    On failure the jitter is escalated x10 up to ``jitter_limit``.
    """
    k = gram_matrix(times, theta)
    eye = np.eye(len(k))
    j = jitter
    limit = jitter_limit(k, jitter)
    while True:
        try:
            return cholesky(k + j * eye, lower=True), j
        except np.linalg.LinAlgError:
            j *= 10.0
            if j > limit:
                raise IllConditionedKernelError(
                    f"kernel not positive definite with jitter {j / 10:.3g}") from None


def center_window(window: TimeSeriesWindow) -> tuple[np.ndarray, np.ndarray, float, float]:
    """Shift times to their mean and subtract the value mean."""
    t_ref = float(np.mean(window.times))
    v_ref = float(np.mean(window.values))
    return window.times - t_ref, window.values - v_ref, t_ref, v_ref


# ---------------------------------------------------------------------------
# leave-one-out objective


def _loo_terms(kinv: np.ndarray, y: np.ndarray, floor: float):
    d = np.diag(kinv).copy()
    alpha = kinv @ y
    var = 1.0 / d
    clamped = var < floor
    if clamped.any():
        warnings.warn("LOO variance clamped to jitter floor", GpNumericalWarning, stacklevel=3)
        var = np.maximum(var, floor)
        d = 1.0 / var
    mu = y - alpha / np.diag(kinv)
    terms = -0.5 * np.log(var) - (y - mu) ** 2 / (2.0 * var) - 0.5 * LOG_2PI
    return terms, alpha, d


def _inverse(times, theta, jitter):
    chol, j = factorize(times, theta, jitter)
    return cho_solve((chol, True), np.eye(len(times))), j


def loo_log_probability(window: TimeSeriesWindow, i: int, theta: GpHyperparams,
                        jitter: float | None = None) -> float:
    """Log predictive probability of point ``i`` given the rest of the window."""
    m = len(window)
    if m < 2:
        raise ValueError("LOO needs at least two observations")
    if not 0 <= i < m:
        raise IndexError(i)
    t, y, _, _ = center_window(window)
    jitter = default_jitter(window.values) if jitter is None else jitter
    kinv, j = _inverse(t, theta, jitter)
    terms, _, _ = _loo_terms(kinv, y, j)
    return float(terms[i])


class _LooProblem:
    """One centred window with the theta-independent pieces precomputed.

    The optimiser calls the objective a few hundred times per fit; at
    window sizes of tens of samples the per-call numpy overhead would
    otherwise swamp the cubic linear algebra.
    """

    def __init__(self, window: TimeSeriesWindow, jitter: float | None = None):
        t, y, _, _ = center_window(window)
        self.y = y
        self.r2 = (t[:, None] - t[None, :]) ** 2
        self.tt = np.outer(t, t)
        self.eye = np.eye(len(t))
        self.jitter = default_jitter(window.values) if jitter is None else jitter

    def _inverse(self, k: np.ndarray) -> tuple[np.ndarray, float]:
        j = self.jitter
        limit = jitter_limit(k, j)
        while True:
            chol, info = dpotrf(k + j * self.eye, lower=1, clean=1)
            if info == 0:
                break
            j *= 10.0
            if j > limit:
                raise IllConditionedKernelError(f"kernel not positive definite with jitter {j / 10:.3g}")
        inv, info = dpotri(chol, lower=1)
        if info != 0:
            raise IllConditionedKernelError("Cholesky factor is singular")
        # dpotri fills only the lower triangle
        return np.tril(inv) + np.tril(inv, -1).T, j

    def value_and_grad(self, theta: GpHyperparams) -> tuple[float, np.ndarray]:
        """LOO objective and its gradient with respect to log(gamma, alpha1, alpha2)."""
        g2, a1s, a2s = theta.gamma ** 2, theta.alpha1 ** 2, theta.alpha2 ** 2
        rbf = a1s * np.exp(-self.r2 / (2.0 * g2))
        kinv, j = self._inverse(rbf + a2s * self.tt)
        terms, alpha, d = _loo_terms(kinv, self.y, j)
        dk = np.stack([rbf * self.r2 / g2, 2.0 * rbf, 2.0 * a2s * self.tt])
        z = kinv @ dk
        zalpha = z @ alpha
        zkinv_diag = np.einsum("kij,ji->ki", z, kinv)
        grad = np.sum((alpha * zalpha - 0.5 * (1.0 + alpha ** 2 / d) * zkinv_diag) / d, axis=1)
        return float(terms.sum()), grad


def loo_objective_and_grad(window: TimeSeriesWindow, theta: GpHyperparams,
                           jitter: float | None = None) -> tuple[float, np.ndarray]:
    """LOO objective and its gradient with respect to log(gamma, alpha1, alpha2)."""
    if len(window) < 2:
        raise ValueError("LOO needs at least two observations")
    return _LooProblem(window, jitter).value_and_grad(theta)


def loo_objective(window: TimeSeriesWindow, theta: GpHyperparams,
                  jitter: float | None = None) -> float:
    """Sum of the LOO log probabilities over every point of the window."""
    return loo_objective_and_grad(window, theta, jitter)[0]


# ---------------------------------------------------------------------------
# fitting


def initial_theta(window: TimeSeriesWindow) -> GpHyperparams:
    span = max(window.span, 1e-3)
    std = max(float(np.std(window.values)), SCALE_FLOOR)
    return GpHyperparams(span / 2.0, std, std / span)


def fit(window: TimeSeriesWindow, restarts: int = 4, seed: int = 0,
        maxiter: int = 200) -> GpModel:
    """Fit hyperparameters by L-BFGS ascent on the LOO objective.

    Starts: the data-driven initial guess, the same guess with a ten times
    shorter length-scale (without a noise term, the long length-scale start
    tends to sit in an interpolate-the-noise basin), and ``restarts``
    perturbations of the initial log-parameters by N(0, 0.5^2). The search
    is boxed to four decades either side of the initial guess. When no start
    improves on the initial objective the initial parameters are returned
    with ``converged=False``.
    """
    if len(window) < 5:
        raise ValueError("fit needs at least 5 observations")
    theta0 = initial_theta(window)
    x0 = theta0.log()
    problem = _LooProblem(window)
    bounds = [(v - LOG_BOUND, v + LOG_BOUND) for v in x0]

    def neg(x):
        try:
            val, g = problem.value_and_grad(GpHyperparams.from_log(x))
        except (IllConditionedKernelError, ValueError):
            return 1e10, np.zeros(3)
        if not math.isfinite(val):
            return 1e10, np.zeros(3)
        return -val, -g

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", GpNumericalWarning)
        f0 = neg(x0)[0]
        rng = np.random.default_rng(seed)
        short = x0 + np.array([math.log(0.1), 0.0, 0.0])
        lo, hi = np.array(bounds).T
        starts = [x0, short] + [np.clip(x0 + rng.normal(0.0, 0.5, 3), lo, hi) for _ in range(restarts)]
        best_x, best_f = x0, f0
        for xs in starts:
            res = minimize(neg, xs, jac=True, method="L-BFGS-B", bounds=bounds,
                           options={"maxiter": maxiter, "ftol": 1e-10, "gtol": 1e-6})
            if res.fun < best_f - 1e-12:
                best_x, best_f = res.x, float(res.fun)
    converged = best_f < f0
    if not converged:
        warnings.warn("GP fit did not improve on the initial hyperparameters",
                      GpNumericalWarning, stacklevel=2)
    return GpModel(window.kind, GpHyperparams.from_log(best_x), -best_f, window.span, converged)


# ---------------------------------------------------------------------------
# prediction and likelihood


def posterior(window: TimeSeriesWindow, theta: GpHyperparams, query_times,
              jitter: float | None = None) -> PredictiveSeries:
    """Posterior marginals at arbitrary query times (no ordering constraint)."""
    t, y, t_ref, v_ref = center_window(window)
    q = np.asarray(query_times, dtype=float)
    jitter = default_jitter(window.values) if jitter is None else jitter
    chol, _ = factorize(t, theta, jitter)
    k1 = _cross(q - t_ref, t, theta)
    mean = k1 @ cho_solve((chol, True), y) + v_ref
    v = solve_triangular(chol, k1.T, lower=True)
    var = kernel(q - t_ref, q - t_ref, theta) - np.sum(v ** 2, axis=0)
    return PredictiveSeries(q, np.asarray(mean), np.maximum(np.asarray(var), 0.0))


def predict(window: TimeSeriesWindow, model: GpModel | GpHyperparams, horizon_times,
            jitter: float | None = None) -> PredictiveSeries:
    """Predictive distribution at future times (all after the last observation)."""
    theta = model.theta if isinstance(model, GpModel) else model
    q = np.asarray(horizon_times, dtype=float)
    if q.size and np.any(q <= window.times[-1]):
        raise ValueError("horizon times must follow the last observation")
    return posterior(window, theta, q, jitter)


def log_marginal_likelihood(window: TimeSeriesWindow, theta: GpHyperparams,
                            jitter: float | None = None) -> float:
    t, y, _, _ = center_window(window)
    jitter = default_jitter(window.values) if jitter is None else jitter
    chol, _ = factorize(t, theta, jitter)
    a = solve_triangular(chol, y, lower=True)
    return float(-0.5 * len(y) * LOG_2PI - 0.5 * a @ a - np.sum(np.log(np.diag(chol))))


def _batch_gram(t: np.ndarray, thetas: np.ndarray) -> np.ndarray:
    r2 = (t[:, None] - t[None, :]) ** 2
    g, a1, a2 = thetas[:, 0, None, None], thetas[:, 1, None, None], thetas[:, 2, None, None]
    return a1 ** 2 * np.exp(-r2 / (2.0 * g ** 2)) + a2 ** 2 * np.outer(t, t)


def _batch_cholesky(k: np.ndarray, jitter: float) -> list[np.ndarray | None]:
    eye = np.eye(k.shape[-1])
    try:
        chols = np.linalg.cholesky(k + jitter * eye)
        return list(chols)
    except np.linalg.LinAlgError:
        pass
    out = []
    for kb in k:
        j = jitter
        chol = None
        limit = jitter_limit(kb, jitter)
        while j <= limit:
            try:
                chol = np.linalg.cholesky(kb + j * eye)
                break
            except np.linalg.LinAlgError:
                j *= 10.0
        out.append(chol)
    return out


def batch_log_marginal(window: TimeSeriesWindow, thetas) -> np.ndarray:
    """Log marginal likelihood of the centred window under each theta row.

    Rows whose Gram matrix cannot be factorised get ``-inf``.
    """
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    t, y, _, _ = center_window(window)
    k = _batch_gram(t, thetas)
    chols = _batch_cholesky(k, default_jitter(window.values))
    out = np.full(len(thetas), -np.inf)
    for b, chol in enumerate(chols):
        if chol is None:
            continue
        a = solve_triangular(chol, y, lower=True)
        out[b] = -0.5 * len(y) * LOG_2PI - 0.5 * a @ a - np.sum(np.log(np.diag(chol)))
    return out


def batch_posterior(window: TimeSeriesWindow, thetas, query_times) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Posterior means and variances for a stack of hyperparameter rows.

    Returns ``(means, variances, ok)`` with shapes (B, Q), (B, Q), (B,).
    """
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    t, y, t_ref, v_ref = center_window(window)
    q = np.asarray(query_times, dtype=float) - t_ref
    g, a1, a2 = thetas[:, 0, None, None], thetas[:, 1, None, None], thetas[:, 2, None, None]
    k = _batch_gram(t, thetas)
    k1 = a1 ** 2 * np.exp(-((q[:, None] - t[None, :]) ** 2) / (2.0 * g ** 2)) + a2 ** 2 * np.outer(q, t)
    prior = thetas[:, 1, None] ** 2 + thetas[:, 2, None] ** 2 * q[None, :] ** 2
    chols = _batch_cholesky(k, default_jitter(window.values))
    ok = np.array([c is not None for c in chols])
    means = np.full((len(thetas), len(q)), np.nan)
    variances = np.full((len(thetas), len(q)), np.nan)
    if ok.all():
        chol = np.stack(chols)
        a = np.linalg.solve(chol, np.broadcast_to(y, (len(thetas), len(y)))[..., None])
        alpha = np.linalg.solve(np.swapaxes(chol, 1, 2), a)[..., 0]
        means = np.einsum("bqm,bm->bq", k1, alpha) + v_ref
        v = np.linalg.solve(chol, np.swapaxes(k1, 1, 2))
        variances = np.maximum(prior - np.sum(v ** 2, axis=1), 0.0)
        return means, variances, ok
    for b, c in enumerate(chols):
        if c is None:
            continue
        alpha = cho_solve((c, True), y)
        means[b] = k1[b] @ alpha + v_ref
        v = solve_triangular(c, k1[b].T, lower=True)
        variances[b] = np.maximum(prior[b] - np.sum(v ** 2, axis=0), 0.0)
    return means, variances, ok
