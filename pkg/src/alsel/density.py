"""Box-size density estimation and regression uncertainty.

A Gaussian mixture is fit by EM on (long side, short side) features of
labeled boxes; the clipped log-density of a predicted box is mapped
through a piecewise-linear curve so boxes of popular sizes score high
and size outliers score low.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import IO, Iterable, NamedTuple, Sequence

import numpy as np

from .errors import DomainError

LOG_DENSITY_CLIP = -99.0
REG_EPSILON_SCALE = 1e-6
REG_EPSILON_MIN = 1e-9


class SizeFeature(NamedTuple):
    long: float
    short: float


@dataclass(frozen=True)
class LogDensity:
    raw: float
    clipped: float


@dataclass(frozen=True)
class GmmModel:
    """A fitted mixture over (long, short) box-size features."""

    k: int
    mix_weights: np.ndarray  # (k,)
    means: np.ndarray  # (k, 2)
    covariances: np.ndarray  # (k, 2, 2)
    reg_epsilon: float
    seed: int
    n_features: int

    def to_json(self) -> str:
        return json.dumps(
            {
                "k": self.k,
                "mix_weights": self.mix_weights.tolist(),
                "means": self.means.tolist(),
                "covariances": self.covariances.reshape(self.k, 4).tolist(),
                "reg_epsilon": self.reg_epsilon,
                "seed": self.seed,
                "n_features": self.n_features,
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "GmmModel":
        data = json.loads(text)
        k = int(data["k"])
        return cls(
            k=k,
            mix_weights=np.asarray(data["mix_weights"], dtype=np.float64),
            means=np.asarray(data["means"], dtype=np.float64),
            covariances=np.asarray(data["covariances"], dtype=np.float64).reshape(k, 2, 2),
            reg_epsilon=float(data["reg_epsilon"]),
            seed=int(data["seed"]),
            n_features=int(data["n_features"]),
        )


@dataclass(frozen=True)
class FitResult:
    model: GmmModel
    log_likelihoods: tuple[float, ...]  # total loglik after each EM iteration
    converged: bool


def extract_size_feature(w: float, h: float) -> SizeFeature:
    if w <= 0 or h <= 0:
        raise DomainError(f"box sides must be positive, got ({w}, {h})")
    return SizeFeature(max(w, h), min(w, h))


def _features_array(features: Iterable[SizeFeature]) -> np.ndarray:
    arr = np.asarray([(f[0], f[1]) for f in features], dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise DomainError("empty feature set")
    return arr


def _component_log_probs(x: np.ndarray, model_means, model_covs, model_weights) -> np.ndarray:
    """Weighted log N(x; mu_j, Sigma_j), shape (n, k)."""
    n = x.shape[0]
    k = model_means.shape[0]
    out = np.empty((n, k))
    for j in range(k):
        chol = np.linalg.cholesky(model_covs[j])
        diff = x - model_means[j]
        sol = np.linalg.solve(chol, diff.T)  # (2, n)
        maha = np.sum(sol * sol, axis=0)
        log_det = 2.0 * np.sum(np.log(np.diag(chol)))
        out[:, j] = -np.log(2.0 * np.pi) - 0.5 * log_det - 0.5 * maha
    return out + np.log(model_weights)[None, :]


def _logsumexp(a: np.ndarray, axis: int) -> np.ndarray:
    m = np.max(a, axis=axis, keepdims=True)
    return (m + np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True))).squeeze(axis)


def _kmeanspp_centers(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    centers = [x[rng.integers(x.shape[0])]]
    for _ in range(1, k):
        d2 = np.min(
            [np.sum((x - c) ** 2, axis=1) for c in centers], axis=0
        )
        total = d2.sum()
        if total <= 0:
            centers.append(x[rng.integers(x.shape[0])])
            continue
        centers.append(x[rng.choice(x.shape[0], p=d2 / total)])
    return np.asarray(centers)


def default_reg_epsilon(x: np.ndarray) -> float:
    return max(REG_EPSILON_SCALE * float(np.mean(np.var(x, axis=0))), REG_EPSILON_MIN)


def fit_gmm(
    features: Sequence[SizeFeature] | np.ndarray,
    k: int,
    seed: int,
    max_iters: int = 200,
    tol: float = 1e-8,
    reg_epsilon: float | None = None,
) -> FitResult:
    """EM fit from a k-means++-seeded start; deterministic given seed.

    Covariances get reg_epsilon added to their diagonals after every
    M-step so they stay positive-definite.
    """
    x = features if isinstance(features, np.ndarray) else _features_array(features)
    n = x.shape[0]
    if k < 1:
        raise DomainError("k must be >= 1")
    if n < k:
        raise DomainError(f"need at least k={k} feature points, got {n}")
    eps = default_reg_epsilon(x) if reg_epsilon is None else reg_epsilon

    rng = np.random.default_rng(seed)
    means = _kmeanspp_centers(x, k, rng)
    base_cov = np.cov(x.T, bias=True) if n > 1 else np.zeros((2, 2))
    base_cov = np.atleast_2d(base_cov) + eps * np.eye(2)
    covs = np.repeat(base_cov[None, :, :], k, axis=0)
    weights = np.full(k, 1.0 / k)

    trace: list[float] = []
    converged = False
    prev = -np.inf
    for _ in range(max_iters):
        log_probs = _component_log_probs(x, means, covs, weights)
        log_norm = _logsumexp(log_probs, axis=1)
        loglik = float(np.sum(log_norm))
        trace.append(loglik)
        if loglik - prev < tol and np.isfinite(prev):
            converged = True
            break
        prev = loglik

        resp = np.exp(log_probs - log_norm[:, None])
        nk = np.maximum(resp.sum(axis=0), 1e-12)
        weights = nk / n
        means = (resp.T @ x) / nk[:, None]
        for j in range(k):
            diff = x - means[j]
            covs[j] = (resp[:, j][:, None] * diff).T @ diff / nk[j] + eps * np.eye(2)

    model = GmmModel(
        k=k,
        mix_weights=weights,
        means=means,
        covariances=covs,
        reg_epsilon=eps,
        seed=seed,
        n_features=n,
    )
    return FitResult(model=model, log_likelihoods=tuple(trace), converged=converged)


def bic(result: FitResult) -> float:
    k = result.model.k
    n = result.model.n_features
    params = (k - 1) + 2 * k + 3 * k  # weights + means + symmetric 2x2 covs
    return -2.0 * result.log_likelihoods[-1] + params * np.log(n)


def select_k(
    features: Sequence[SizeFeature] | np.ndarray,
    k_min: int,
    k_max: int,
    seed: int,
    max_iters: int = 200,
    tol: float = 1e-8,
) -> int:
    """Pick the component count minimizing BIC; ties go to the smaller k."""
    if not 1 <= k_min <= k_max:
        raise DomainError("need k_max >= k_min >= 1")
    if k_min == k_max:
        return k_min
    x = features if isinstance(features, np.ndarray) else _features_array(features)
    best_k, best_bic = k_min, np.inf
    for k in range(k_min, min(k_max, x.shape[0]) + 1):
        score = bic(fit_gmm(x, k, seed, max_iters=max_iters, tol=tol))
        if score < best_bic:
            best_k, best_bic = k, score
    return best_k


def log_density(model: GmmModel, feature: SizeFeature) -> LogDensity:
    """Natural-log mixture density at one feature, via log-sum-exp."""
    raw = float(log_density_many(model, np.asarray([[feature.long, feature.short]]))[0])
    return LogDensity(raw=raw, clipped=max(raw, LOG_DENSITY_CLIP))


def log_density_many(model: GmmModel, x: np.ndarray) -> np.ndarray:
    log_probs = _component_log_probs(x, model.means, model.covariances, model.mix_weights)
    return _logsumexp(log_probs, axis=1)


def regression_uncertainty(density: LogDensity | float) -> float:
    """Piecewise-linear map from clipped log-density to uncertainty.

    Continuous at -10 (both branches give 0.5) and monotone
    non-decreasing on [-99, inf); not capped above 1.
    """
    clipped = density.clipped if isinstance(density, LogDensity) else max(float(density), LOG_DENSITY_CLIP)
    if clipped >= -10.0:
        return 0.05 * (clipped + 10.0) + 0.5
    return 0.5 * (clipped + 100.0) / 90.0


def save_model(model: GmmModel, stream: IO) -> None:
    stream.write(model.to_json() + "\n")


def load_model(stream: IO) -> GmmModel:
    return GmmModel.from_json(stream.read())
