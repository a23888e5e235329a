"""Gaussian mixture density machinery.

Components are diagonal-covariance Gaussians: within a component the d
feature dimensions are independent, so a component's log-density is the sum
of per-dimension univariate log-densities

    log N(x | m, v) = -1/2 log(2 pi v) - (x - m)^2 / (2 v)

and the mixture log-density is a log-sum-exp over components of
log(weight_k) + component log-density. All arithmetic stays in log space:
a 10-dimensional density product underflows double precision exactly for
the outliers the decision engine must rank, so raw densities are never
materialized here.

Fitting maximizes the data log-likelihood with expectation-maximization.
The E-step computes responsibilities r[i,k] = P(component k | x_i); the
M-step re-estimates weights, means, and variances from the weighted data.
Each full iteration cannot decrease the log-likelihood; a decrease beyond
slack is reported as an internal error rather than papered over.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

LOG_2PI = math.log(2.0 * math.pi)

#: Floor applied to component variances (on delta^2).
VARIANCE_FLOOR = 1e-6

#: Tolerance on the mixture-weight simplex: weights must sum to 1 this tightly.
SIMPLEX_TOL = 1e-12

#: Slack allowed on the per-iteration log-likelihood monotonicity guarantee.
MONOTONE_SLACK = 1e-9

#: A component whose responsibility mass falls below this fraction of N is
#: considered empty and gets reseeded at the lowest-density record.
EMPTY_MASS_FRACTION = 1e-10


class GmmError(Exception):
    pass


class EmDivergenceError(GmmError):
    """The log-likelihood decreased across an EM iteration: internal bug."""


@dataclass(frozen=True)
class GaussianComponent:
    mean: np.ndarray  # (d,)
    var: np.ndarray  # (d,), diagonal covariance, floored

    def __post_init__(self):
        if self.mean.shape != self.var.shape or self.mean.ndim != 1:
            raise GmmError(f"inconsistent component shapes: {self.mean.shape} vs {self.var.shape}")
        if np.any(self.var < VARIANCE_FLOOR * (1 - 1e-12)):
            raise GmmError(f"component variance below floor {VARIANCE_FLOOR}")


@dataclass(frozen=True)
class MixtureModel:
    """K weighted diagonal Gaussians over d dimensions."""

    weights: np.ndarray  # (K,)
    components: tuple[GaussianComponent, ...]

    def __post_init__(self):
        if len(self.components) != self.weights.shape[0] or not self.components:
            raise GmmError("weights and components disagree on K")
        if np.any(self.weights < 0):
            raise GmmError("mixture weights must be non-negative")
        if abs(float(self.weights.sum()) - 1.0) > SIMPLEX_TOL:
            raise GmmError(f"mixture weights sum to {self.weights.sum()!r}, not 1")
        dims = {c.mean.shape[0] for c in self.components}
        if len(dims) != 1:
            raise GmmError(f"components disagree on dimensionality: {sorted(dims)}")

    @property
    def k(self) -> int:
        return len(self.components)

    @property
    def d(self) -> int:
        return self.components[0].mean.shape[0]

    def means(self) -> np.ndarray:
        return np.stack([c.mean for c in self.components])

    def variances(self) -> np.ndarray:
        return np.stack([c.var for c in self.components])


@dataclass(frozen=True)
class EmConfig:
    n_components: int
    max_iter: int = 200
    tol: float = 1e-6  # relative log-likelihood improvement threshold
    seed: int = 0
    variance_floor: float = VARIANCE_FLOOR

    def __post_init__(self):
        if self.n_components < 1:
            raise GmmError("n_components must be >= 1")
        if self.max_iter < 1:
            raise GmmError("max_iter must be >= 1")
        if self.tol <= 0:
            raise GmmError("tol must be positive")
        if self.variance_floor <= 0:
            raise GmmError("variance_floor must be positive")


@dataclass(frozen=True)
class FitReport:
    """Outcome of one EM fit. The trace holds mean log-likelihood per pass."""

    iterations: int
    final_log_likelihood: float  # per-record average
    converged: bool
    trace: tuple[float, ...]
    reseeds: int = 0


def gaussian_logpdf_1d(x: float, mean: float, var: float) -> float:
    """Log-density of the univariate Gaussian at x. ``var`` is delta^2."""
    if var <= 0:
        raise GmmError(f"variance must be positive, got {var}")
    return -0.5 * (LOG_2PI + math.log(var)) - (x - mean) ** 2 / (2.0 * var)


def _component_log_densities(x: np.ndarray, means: np.ndarray, variances: np.ndarray) -> np.ndarray:
    """(N, K) per-component joint log-density of each row of x."""
    diff = x[:, None, :] - means[None, :, :]
    quad = np.sum(diff * diff / variances[None, :, :], axis=2)
    logdet = np.sum(np.log(variances), axis=1)  # (K,)
    return -0.5 * (x.shape[1] * LOG_2PI + logdet[None, :] + quad)


def _weighted_log_densities(x: np.ndarray, model: MixtureModel) -> np.ndarray:
    """(N, K) array of log(weight_k) + component log-density."""
    with np.errstate(divide="ignore"):  # zero weights contribute -inf terms
        logw = np.log(model.weights)
    return logw[None, :] + _component_log_densities(x, model.means(), model.variances())


def _logsumexp_rows(terms: np.ndarray) -> np.ndarray:
    """Row-wise log(sum(exp(...))) with max shift; never overflows."""
    shift = np.max(terms, axis=1)
    finite = np.isfinite(shift)
    out = np.full(terms.shape[0], -np.inf)
    if np.any(finite):
        t = terms[finite] - shift[finite, None]
        out[finite] = shift[finite] + np.log(np.sum(np.exp(t), axis=1))
    return out


_SCORE_CHUNK = 8192


def score_records(data: np.ndarray, model: MixtureModel) -> np.ndarray:
    """Mixture log-density of every row of ``data``; shape (N,).

    Each row's value depends only on that row, so scores are identical no
    matter how the data is batched or partitioned.
    """
    x = _as_matrix(data, model.d)
    out = np.empty(x.shape[0])
    for start in range(0, x.shape[0], _SCORE_CHUNK):
        block = x[start : start + _SCORE_CHUNK]
        out[start : start + _SCORE_CHUNK] = _logsumexp_rows(_weighted_log_densities(block, model))
    return out


def mixture_logpdf(x: Sequence[float] | np.ndarray, model: MixtureModel) -> float:
    """Mixture log-density of a single length-d observation."""
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1 or v.shape[0] != model.d:
        raise GmmError(f"observation has shape {v.shape}, model expects ({model.d},)")
    return float(score_records(v[None, :], model)[0])


def log_likelihood(data: np.ndarray, model: MixtureModel) -> float:
    """Total log-likelihood: the sum of per-record mixture log-densities."""
    x = _as_matrix(data, model.d)
    if x.shape[0] < 1:
        raise GmmError("log_likelihood needs at least one record")
    return float(np.sum(score_records(x, model)))


def _as_matrix(data: np.ndarray, d: int) -> np.ndarray:
    x = np.asarray(data, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != d:
        raise GmmError(f"data has shape {x.shape}, model expects (N, {d})")
    return x


def _farthest_point_means(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Greedy seeding: random first record, then repeatedly the record
    farthest from the chosen set. Deterministic under a fixed generator."""
    n = x.shape[0]
    chosen = [int(rng.integers(n))]
    min_d2 = np.sum((x - x[chosen[0]]) ** 2, axis=1)
    for _ in range(1, k):
        nxt = int(np.argmax(min_d2))
        chosen.append(nxt)
        d2 = np.sum((x - x[nxt]) ** 2, axis=1)
        min_d2 = np.minimum(min_d2, d2)
    return x[chosen].copy()


def fit_em(
    data: np.ndarray,
    cfg: EmConfig,
    *,
    on_m_step: Callable[[int, np.ndarray], None] | None = None,
) -> tuple[MixtureModel, FitReport]:
    """Maximum-likelihood fit of a K-component mixture via EM.

    Initialization is seeded farthest-point: means start at well-spread
    records, variances at the global per-column variance, weights uniform.
    Stops when the relative improvement of the mean log-likelihood drops
    below ``cfg.tol`` or after ``cfg.max_iter`` iterations. Identical
    (data, cfg) inputs produce bitwise-identical models.

    ``on_m_step`` is called as ``on_m_step(iteration, weights)`` right after
    each M-step, mainly so tests can audit the weight simplex.
    """
    x = np.asarray(data, dtype=np.float64)
    if x.ndim != 2:
        raise GmmError(f"training data must be 2-d, got shape {x.shape}")
    n, d = x.shape
    k = cfg.n_components
    if n < k:
        raise GmmError(f"need at least as many records as components: N={n} < K={k}")

    floor = cfg.variance_floor
    rng = np.random.default_rng(cfg.seed)
    global_var = np.maximum(x.var(axis=0), floor)

    means = _farthest_point_means(x, k, rng)
    variances = np.tile(global_var, (k, 1))
    weights = np.full(k, 1.0 / k)

    def current_model() -> MixtureModel:
        comps = tuple(
            GaussianComponent(means[i].copy(), variances[i].copy()) for i in range(k)
        )
        return MixtureModel(weights.copy(), comps)

    def e_step():
        terms = np.empty((n, k))
        lse = np.empty(n)
        with np.errstate(divide="ignore"):
            logw = np.log(weights)
        for start in range(0, n, _SCORE_CHUNK):
            stop = min(start + _SCORE_CHUNK, n)
            t = logw[None, :] + _component_log_densities(x[start:stop], means, variances)
            terms[start:stop] = t
            lse[start:stop] = _logsumexp_rows(t)
        return terms, lse

    terms, lse = e_step()
    ll = float(np.mean(lse))
    trace = [ll]
    converged = False
    reseeds = 0
    iterations = 0

    for it in range(1, cfg.max_iter + 1):
        resp = np.exp(terms - lse[:, None])
        mass = resp.sum(axis=0)  # (K,)

        empty = np.flatnonzero(mass < EMPTY_MASS_FRACTION * n)
        reseeded_now = empty.size > 0
        raw_weights = mass / n
        new_means = np.empty_like(means)
        new_vars = np.empty_like(variances)
        healthy = [i for i in range(k) if i not in set(empty.tolist())]
        for i in healthy:
            mu = resp[:, i] @ x / mass[i]
            centered = x - mu
            var = resp[:, i] @ (centered * centered) / mass[i]
            new_means[i] = mu
            new_vars[i] = np.maximum(var, floor)
        if reseeded_now:
            # Reseed dead components at the records the mixture explains worst.
            order = np.argsort(lse)
            for slot, i in enumerate(empty):
                new_means[i] = x[order[min(slot, n - 1)]]
                new_vars[i] = global_var
                raw_weights[i] = 1.0 / k
            reseeds += empty.size
        weights = raw_weights / raw_weights.sum()
        means, variances = new_means, new_vars
        iterations = it
        if on_m_step is not None:
            on_m_step(it, weights.copy())

        terms, lse = e_step()
        new_ll = float(np.mean(lse))
        trace.append(new_ll)

        if reseeded_now:
            # A reseed is not an EM update; the monotonicity guarantee and
            # the convergence comparison restart from the new parameters.
            ll = new_ll
            continue
        if new_ll < ll - MONOTONE_SLACK:
            raise EmDivergenceError(
                f"log-likelihood decreased at iteration {it}: {ll!r} -> {new_ll!r}"
            )
        improvement = new_ll - ll
        rel = improvement / max(abs(ll), 1e-300)
        ll = new_ll
        if rel < cfg.tol:
            converged = True
            break

    report = FitReport(
        iterations=iterations,
        final_log_likelihood=ll,
        converged=converged,
        trace=tuple(trace),
        reseeds=reseeds,
    )
    return current_model(), report
