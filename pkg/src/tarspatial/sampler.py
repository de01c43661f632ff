"""Direct (MCMC-free) posterior sampling for the TAR/CAR/SAR hierarchical model.

The posterior factorizes as ``f(beta | s2, theta, y) f(s2 | theta, y) f(theta | y)``
with a flat prior on beta, ``s2 ~ IG(a, b)`` and a discrete uniform prior
on theta (delta for TAR, rho for CAR/SAR). Only the observed-block
precision ``O Q O'`` is used, so no n_O x n_O matrix is ever inverted:
``f(theta | y)`` needs one sparse Cholesky log-determinant per grid value
and products with ``Q_o``.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.special import logsumexp

from ._linalg import SparseCholesky
from .errors import InvalidInputError, InvalidMaskError, SingularDesignError
from .model import Family, PrecisionModel


@dataclass(eq=False)
class Dataset:
    """Response, design matrix and observation mask (the incidence map).

    ``truth`` optionally keeps the true response at missing regions
    (simulation or hold-out mode); ``y`` there is NaN otherwise.
    """

    y: np.ndarray
    X: np.ndarray
    observed: np.ndarray
    columns: tuple[str, ...] = ()
    truth: np.ndarray | None = None
    coords: np.ndarray | None = None

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float).ravel()
        self.X = np.asarray(self.X, dtype=float)
        if self.X.ndim == 1:
            self.X = self.X[:, None]
        self.observed = np.asarray(self.observed, dtype=bool).ravel()
        n = self.y.size
        if self.X.shape[0] != n or self.observed.size != n:
            raise InvalidInputError("y, X and the observation mask must have matching rows")
        if not self.columns:
            self.columns = tuple(f"beta_{j}" for j in range(self.p))
        if len(self.columns) != self.p:
            raise InvalidInputError("one column name per covariate is required")
        if self.truth is not None:
            self.truth = np.asarray(self.truth, dtype=float).ravel()
        if not np.all(np.isfinite(self.y[self.observed])):
            raise InvalidInputError("observed responses must be finite")

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def n_obs(self) -> int:
        return int(self.observed.sum())

    @property
    def n_missing(self) -> int:
        return self.n - self.n_obs

    @property
    def missing_ids(self) -> np.ndarray:
        return np.flatnonzero(~self.observed)

    @property
    def y_obs(self) -> np.ndarray:
        return self.y[self.observed]

    @property
    def X_obs(self) -> np.ndarray:
        return self.X[self.observed]


@dataclass(frozen=True)
class PriorConfig:
    """Inverse-gamma ``(a, b)`` for sigma2; the theta grid lives on the model."""

    a: float = 0.01
    b: float = 0.01

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0):
            raise InvalidInputError("inverse-gamma hyperparameters must be positive")


def observed_precision(Q, observed) -> sp.csr_matrix:
    """Principal submatrix ``O Q O'`` at the observed regions."""
    observed = np.asarray(observed, dtype=bool)
    if observed.ndim != 1 or observed.size != Q.shape[0]:
        raise InvalidMaskError("mask length must match the precision matrix")
    if not observed.any():
        raise InvalidMaskError("mask has no observed regions")
    idx = np.flatnonzero(observed)
    Q = sp.csr_matrix(Q)
    return sp.csr_matrix(Q[idx][:, idx])


def check_design(X_obs: np.ndarray) -> None:
    """Reject rank-deficient observed designs (the flat beta prior needs full rank)."""
    n_obs, p = X_obs.shape
    if n_obs < p + 1:
        raise SingularDesignError(f"need at least p + 1 = {p + 1} observations, got {n_obs}")
    _, R, _ = sla.qr(X_obs, mode="economic", pivoting=True)
    tol = 1e-10 * max(np.linalg.norm(X_obs), 1e-300)
    rank = int(np.sum(np.abs(np.diag(R)) > tol))
    if rank < p:
        raise SingularDesignError(f"observed design has rank {rank} < p = {p}")


@dataclass(frozen=True, eq=False)
class GridTerms:
    """Per-theta sufficient quantities, computed once and reused by every draw."""

    theta: float
    log_joint: float
    shape: float  # a + (n_O - p)/2
    scale: float  # b + residual/2
    beta_hat: np.ndarray
    xqx_chol: np.ndarray  # upper Cholesky of X_O' Q_o X_O


def grid_terms(data: Dataset, Q_o, prior: PriorConfig, theta: float = float("nan"),
               log_prior: float = 0.0) -> GridTerms:
    y, X = data.y_obs, data.X_obs
    n_o, p = X.shape
    chol = SparseCholesky(Q_o)
    Qy = Q_o @ y
    QX = Q_o @ X
    XQX = X.T @ QX
    try:
        U = sla.cholesky(XQX, lower=False)
    except np.linalg.LinAlgError as exc:
        raise SingularDesignError("X_O' Q_o X_O is not positive definite") from exc
    XQy = X.T @ Qy
    beta_hat = sla.cho_solve((U, False), XQy)
    resid = float(y @ Qy - XQy @ beta_hat)
    resid = max(resid, 0.0)  # projection residual; clamps round-off
    shape = prior.a + 0.5 * (n_o - p)
    scale = prior.b + 0.5 * resid
    log_joint = (0.5 * chol.logdet() - float(np.sum(np.log(np.diag(U))))
                 - shape * np.log(scale) + log_prior)
    return GridTerms(theta=float(theta), log_joint=float(log_joint), shape=shape, scale=scale,
                     beta_hat=beta_hat, xqx_chol=U)


def log_joint_theta(data: Dataset, Q_o, prior: PriorConfig, log_prior: float = 0.0) -> float:
    """``log f(theta, y_O)`` up to a theta-free constant."""
    check_design(data.X_obs)
    return grid_terms(data, Q_o, prior, log_prior=log_prior).log_joint


@dataclass(eq=False)
class PosteriorDraws:
    beta: np.ndarray  # (G, p)
    sigma2: np.ndarray  # (G,)
    theta: np.ndarray  # (G,)
    grid: np.ndarray
    log_weights: np.ndarray  # log f(theta, y_O) per grid value
    seed: int
    family: Family
    columns: tuple[str, ...] = ()
    runtime: float = float("nan")
    terms: dict = field(default_factory=dict, repr=False)

    @property
    def G(self) -> int:
        return self.sigma2.size

    @property
    def posterior_mass(self) -> np.ndarray:
        return np.exp(self.log_weights - logsumexp(self.log_weights))

    def summary(self, level: float = 0.95) -> dict:
        lo, hi = 50 * (1 - level), 50 * (1 + level)

        def describe(x):
            return {"mean": float(np.mean(x)),
                    "lower": float(np.percentile(x, lo)),
                    "upper": float(np.percentile(x, hi))}

        out = {
            "family": self.family.value,
            "draws": self.G,
            "seed": self.seed,
            "level": level,
            "beta": {name: describe(self.beta[:, j]) for j, name in enumerate(self.columns)},
            "sigma2": describe(self.sigma2),
            "theta": describe(self.theta),
            "theta_posterior": [{"value": float(v), "mass": float(m)}
                                for v, m in zip(self.grid, self.posterior_mass)],
        }
        if np.isfinite(self.runtime):
            out["model_runtime_sec"] = self.runtime
        return out

    def write_csv(self, path) -> None:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["draw", *[f"beta_{j}" for j in range(self.beta.shape[1])], "sigma2", "theta"])
            for g in range(self.G):
                w.writerow([g, *(repr(float(v)) for v in self.beta[g]),
                            repr(float(self.sigma2[g])), repr(float(self.theta[g]))])

    def write_summary(self, path, level: float = 0.95) -> None:
        Path(path).write_text(json.dumps(self.summary(level), indent=2) + "\n")

    @classmethod
    def read_csv(cls, path, family, grid=None, seed: int = 0) -> "PosteriorDraws":
        rows = np.atleast_2d(np.loadtxt(path, delimiter=",", skiprows=1))
        beta = rows[:, 1:-2]
        theta = rows[:, -1]
        grid = np.unique(theta) if grid is None else np.asarray(grid, dtype=float)
        return cls(beta=beta, sigma2=rows[:, -2], theta=theta, grid=grid,
                   log_weights=np.zeros(grid.size), seed=seed, family=Family.parse(family),
                   columns=tuple(f"beta_{j}" for j in range(beta.shape[1])))


def _streams(seed: int, shards: int):
    """Three independent child streams (theta, sigma2, beta) per shard."""
    root = np.random.SeedSequence(seed)
    return [[np.random.default_rng(s) for s in child.spawn(3)] for child in root.spawn(shards)]


def sample_posterior(data: Dataset, model: PrecisionModel, prior: PriorConfig | None = None,
                     G: int = 500, seed: int = 0, shards: int = 1) -> PosteriorDraws:
    """Exact joint draws of ``(beta, sigma2, theta)``.

    The per-theta terms (log-determinant, GLS fit, IG parameters) are
    computed once; draws are then split into ``shards`` contiguous blocks,
    each with its own spawned RNG streams, so output depends only on
    ``(inputs, seed, shards)``.
    """
    if G < 1:
        raise InvalidInputError("G must be >= 1")
    prior = prior or PriorConfig()
    t0 = time.perf_counter()
    check_design(data.X_obs)
    grid = np.asarray(model.grid, dtype=float)
    log_prior = -np.log(grid.size)
    terms = []
    for theta in grid:
        Q_o = observed_precision(model.precision(theta), data.observed)
        terms.append(grid_terms(data, Q_o, prior, theta, log_prior))
    logw = np.array([t.log_joint for t in terms])
    probs = np.exp(logw - logsumexp(logw))
    probs /= probs.sum()

    p = data.p
    beta = np.empty((G, p))
    sigma2 = np.empty(G)
    idx = np.empty(G, dtype=np.intp)
    blocks = np.array_split(np.arange(G), shards)
    for block, (r_theta, r_sigma, r_beta) in zip(blocks, _streams(seed, shards)):
        if block.size == 0:
            continue
        k = r_theta.choice(grid.size, size=block.size, p=probs)
        shape = np.array([terms[j].shape for j in k])
        scale = np.array([terms[j].scale for j in k])
        s2 = scale / r_sigma.gamma(shape)  # IG(shape, scale)
        z = r_beta.standard_normal((block.size, p))
        for row, j, s, zz in zip(block, k, s2, z):
            t = terms[j]
            # beta ~ N(beta_hat, s (X'QX)^{-1}); (X'QX)^{-1} = U^{-1} U^{-T}
            beta[row] = t.beta_hat + np.sqrt(s) * sla.solve_triangular(t.xqx_chol, zz, lower=False)
        sigma2[block] = s2
        idx[block] = k
    return PosteriorDraws(beta=beta, sigma2=sigma2, theta=grid[idx], grid=grid, log_weights=logw,
                          seed=seed, family=model.family, columns=data.columns,
                          runtime=time.perf_counter() - t0,
                          terms={t.theta: t for t in terms})


def sample_posterior_car_sar(data: Dataset, model: PrecisionModel,
                             prior: PriorConfig | None = None, G: int = 500, seed: int = 0,
                             shards: int = 1) -> PosteriorDraws:
    """Same direct sampler with rho in place of delta for the CAR/SAR baselines."""
    if model.family not in (Family.CAR, Family.SAR):
        raise InvalidInputError("sample_posterior_car_sar expects a CAR or SAR model")
    return sample_posterior(data, model, prior, G, seed, shards)


def posterior_theta_mass(data: Dataset, model: PrecisionModel,
                         prior: PriorConfig | None = None) -> np.ndarray:
    """Normalized ``f(theta | y_O)`` over the model grid."""
    prior = prior or PriorConfig()
    check_design(data.X_obs)
    logw = np.array([grid_terms(data, observed_precision(model.precision(t), data.observed),
                                prior).log_joint for t in model.grid])
    return np.exp(logw - logsumexp(logw))


def equal_tailed_interval(x: Sequence[float], level: float = 0.95) -> tuple[float, float]:
    x = np.asarray(x)
    return (float(np.percentile(x, 50 * (1 - level))), float(np.percentile(x, 50 * (1 + level))))
