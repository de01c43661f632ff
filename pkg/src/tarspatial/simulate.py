"""Synthetic lattice datasets, replicate comparison studies and the truncation demo."""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy.special import ndtr, ndtri

from ._linalg import SparseCholesky
from .errors import InvalidInputError, ParameterRangeError
from .graph import AdjacencyGraph, build_grid_graph, grid_coordinates
from .metrics import frobenius_distance, score_predictions
from .model import Family, PrecisionModel, grid_values
from .predict import NeumannConfig, kriging_predict
from .sampler import Dataset, PriorConfig, sample_posterior

# Named lattice designs: (generating family, dependence parameter).
ITEMS = {
    "a": (Family.CAR, -0.606),
    "b": (Family.TAR_C, 1.0),
    "c": (Family.SAR, -0.606),
    "d": (Family.TAR_S, 1.0),
}

RHO_GRID = "-0.99:0.99:0.02"

# Metrics emitted per (replicate, family) in the long-format comparison table.
COMPARISON_METRICS = ("beta_0", "beta_1", "sigma2", "mae", "rmse", "crps", "int_score",
                      "frobenius")


@dataclass(frozen=True)
class MissingSpec:
    """Random cells plus one axis-aligned block.

    With ``total`` set, the random cells fill up to ``total`` after the
    block is placed; otherwise ``round(fraction * n)`` random cells are
    added outside the block.
    """

    fraction: float = 0.16
    block: tuple[int, int] = (15, 15)
    total: int | None = 480

    def __post_init__(self):
        if not 0 <= self.fraction < 1:
            raise InvalidInputError("missing fraction must lie in [0, 1)")
        if len(self.block) != 2 or min(self.block) < 0:
            raise InvalidInputError("block must be a pair of non-negative sizes")
        if self.total is not None and self.total < 0:
            raise InvalidInputError("total must be non-negative")

    @property
    def empty(self) -> bool:
        return self.fraction == 0 and (self.block[0] == 0 or self.block[1] == 0) and not self.total


def missing_mask(rows: int, cols: int, spec: MissingSpec, rng: np.random.Generator) -> np.ndarray:
    """Boolean observation mask (True = observed), row-major."""
    n = rows * cols
    missing = np.zeros((rows, cols), dtype=bool)
    br, bc = spec.block
    if br > 0 and bc > 0:
        if br > rows or bc > cols:
            raise InvalidInputError(f"block {spec.block} does not fit a {rows}x{cols} grid")
        r0 = int(rng.integers(0, rows - br + 1))
        c0 = int(rng.integers(0, cols - bc + 1))
        missing[r0:r0 + br, c0:c0 + bc] = True
    missing = missing.ravel()
    n_block = int(missing.sum())
    extra = (spec.total - n_block) if spec.total is not None else int(round(spec.fraction * n))
    if spec.total is not None and extra < 0:
        raise InvalidInputError("total missing count is smaller than the block")
    pool = np.flatnonzero(~missing)
    if extra > pool.size:
        raise InvalidInputError("more missing cells requested than the grid holds")
    missing[rng.choice(pool, size=extra, replace=False)] = True
    return ~missing


@dataclass(frozen=True)
class SimulationDesign:
    family: Family = Family.TAR_C
    rows: int = 40
    cols: int = 40
    beta: tuple[float, ...] = (2.0, 5.0)
    sigma2: float = 0.5
    theta: float = 1.0  # delta for TAR families, rho for CAR/SAR
    missing: MissingSpec = field(default_factory=MissingSpec)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "family", Family.parse(self.family))
        object.__setattr__(self, "beta", tuple(float(b) for b in self.beta))
        if self.family is Family.NNGP_TAR:
            raise InvalidInputError("lattice designs support tar-c, tar-s, car and sar")
        if not self.sigma2 > 0:
            raise ParameterRangeError("sigma2 must be positive")
        if not self.beta:
            raise InvalidInputError("beta must be non-empty")

    @classmethod
    def item(cls, name: str, **overrides) -> "SimulationDesign":
        """One of the four standard lattice settings ``"a"``-``"d"``."""
        key = name.strip().lower().strip("()")
        if key not in ITEMS:
            raise InvalidInputError(f"unknown design item {name!r}; choose from a, b, c, d")
        family, theta = ITEMS[key]
        return cls(**{"family": family, "theta": theta, **overrides})

    @property
    def n(self) -> int:
        return self.rows * self.cols

    @property
    def p(self) -> int:
        return len(self.beta)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["family"] = self.family.cli_name
        d["beta"] = list(self.beta)
        d["missing"] = {"fraction": self.missing.fraction, "block": list(self.missing.block),
                        "total": self.missing.total}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SimulationDesign":
        d = dict(d)
        base = {}
        if "item" in d:
            fam, th = ITEMS.get(str(d.pop("item")).lower(), (None, None))
            if fam is None:
                raise InvalidInputError("unknown design item")
            base = {"family": fam, "theta": th}
        miss = d.pop("missing", None)
        if miss is not None:
            if not isinstance(miss, dict):
                raise InvalidInputError("missing must be an object")
            miss = MissingSpec(fraction=float(miss.get("fraction", 0.16)),
                               block=tuple(int(v) for v in miss.get("block", (15, 15))),
                               total=miss.get("total", None))
            base["missing"] = miss
        unknown = set(d) - {"family", "rows", "cols", "beta", "sigma2", "theta", "seed"}
        if unknown:
            raise InvalidInputError(f"unknown design keys: {sorted(unknown)}")
        try:
            return cls(**{**base, **d})
        except TypeError as exc:
            raise InvalidInputError(str(exc)) from exc

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "SimulationDesign":
        try:
            raw = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise InvalidInputError(f"malformed design JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise InvalidInputError("design JSON must be an object")
        return cls.from_dict(raw)


def design_precision(design: SimulationDesign, graph: AdjacencyGraph | None = None):
    graph = graph or build_grid_graph(design.rows, design.cols)
    model = PrecisionModel(design.family, (design.theta,), graph=graph)
    return model.precision(design.theta, design.sigma2), graph


def simulate_dataset(design: SimulationDesign, graph: AdjacencyGraph | None = None) -> Dataset:
    """``y ~ N(X beta, Q^{-1})`` with uniform covariates; truth kept at every cell."""
    Q, graph = design_precision(design, graph)
    r_x, r_z, r_mask = (np.random.default_rng(s)
                        for s in np.random.SeedSequence(design.seed).spawn(3))
    X = r_x.uniform(0.0, 1.0, size=(design.n, design.p))
    z = r_z.standard_normal(design.n)
    y_full = X @ np.asarray(design.beta) + SparseCholesky(Q).solve_upper(z)
    observed = missing_mask(design.rows, design.cols, design.missing, r_mask)
    if observed.sum() < design.p + 1:
        raise InvalidInputError("missing pattern leaves fewer than p + 1 observations")
    y = np.where(observed, y_full, np.nan)
    return Dataset(y=y, X=X, observed=observed, truth=y_full,
                   coords=grid_coordinates(design.rows, design.cols))


def default_fit_grid(family) -> tuple[float, ...]:
    """Known delta = 1 for TAR fits; the uniform rho grid on (-1, 1) for CAR/SAR."""
    fam = Family.parse(family)
    return (1.0,) if fam.is_tar else grid_values(RHO_GRID)


@dataclass(frozen=True, eq=False)
class FitResult:
    family: Family
    scores: dict
    estimates: dict
    frobenius: float


def fit_and_score(data: Dataset, graph: AdjacencyGraph, family, grid=None, *,
                  true_cov: np.ndarray | None = None, prior: PriorConfig | None = None,
                  G: int = 500, seed: int = 0, alpha: float = 0.05,
                  cfg: NeumannConfig | None = None) -> FitResult:
    fam = Family.parse(family)
    model = PrecisionModel(fam, default_fit_grid(fam) if grid is None else grid, graph=graph)
    draws = sample_posterior(data, model, prior, G=G, seed=seed)
    pred = kriging_predict(data, model, draws, cfg, alpha=alpha, seed=seed + 1)
    truth = data.truth[pred.ids]
    card = score_predictions(truth, pred.point, pred.samples, pred.lower, pred.upper, alpha)
    est = {f"beta_{j}": float(draws.beta[:, j].mean()) for j in range(data.p)}
    est["sigma2"] = float(draws.sigma2.mean())
    est["theta"] = float(draws.theta.mean())
    frob = float("nan")
    if true_cov is not None:
        fitted = PrecisionModel(fam, (est["theta"],), graph=graph)
        cov = SparseCholesky(fitted.precision(est["theta"], est["sigma2"])).inverse()
        frob = frobenius_distance(true_cov, cov)
    return FitResult(family=fam, scores=card.to_dict(), estimates=est, frobenius=frob)


def replicate_study(design: SimulationDesign, families: Sequence, R: int = 20, G: int = 500,
                    seed: int = 0, alpha: float = 0.05, prior: PriorConfig | None = None,
                    cfg: NeumannConfig | None = None, grids: dict | None = None) -> list[dict]:
    """Simulate ``R`` replicates, fit every family to each, and score them.

    Returns long-format rows ``{replicate, family, metric, value}``. All
    families in a replicate share the data and the sampler/prediction
    seeds.
    """
    if R < 1:
        raise InvalidInputError("R must be >= 1")
    fams = [Family.parse(f) for f in families]
    graph = build_grid_graph(design.rows, design.cols)
    children = np.random.SeedSequence(seed).spawn(R)
    rows: list[dict] = []
    for r, child in enumerate(children):
        data_seed, fit_seed = (int(v) for v in child.generate_state(2) % (2 ** 31))
        d = replace(design, seed=data_seed)
        data = simulate_dataset(d, graph)
        Q_true, _ = design_precision(d, graph)
        true_cov = SparseCholesky(Q_true).inverse()
        for fam in fams:
            grid = (grids or {}).get(fam)
            res = fit_and_score(data, graph, fam, grid, true_cov=true_cov, prior=prior, G=G,
                                seed=fit_seed, alpha=alpha, cfg=cfg)
            values = {**res.estimates, **res.scores, "frobenius": res.frobenius}
            for metric in COMPARISON_METRICS:
                rows.append({"replicate": r, "family": fam.cli_name, "metric": metric,
                             "value": values[metric]})
    return rows


def median_by(rows: list[dict], family: str, metric: str) -> float:
    fam = Family.parse(family).cli_name
    vals = [row["value"] for row in rows if row["family"] == fam and row["metric"] == metric]
    if not vals:
        raise InvalidInputError(f"no rows for {fam}/{metric}")
    return float(np.median(vals))


def write_long_csv(rows: list[dict], path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["replicate", "family", "metric", "value"])
        w.writeheader()
        for row in rows:
            w.writerow({**row, "value": repr(float(row["value"]))})


def write_wide_csv(rows: list[dict], path) -> None:
    """One line per (replicate, family) with a column per metric."""
    table: dict[tuple, dict] = {}
    for row in rows:
        table.setdefault((row["replicate"], row["family"]), {})[row["metric"]] = row["value"]
    metrics = list(dict.fromkeys(row["metric"] for row in rows))
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["replicate", "family", *metrics])
        for (r, fam), vals in table.items():
            w.writerow([r, fam, *(repr(float(vals[m])) for m in metrics)])


@dataclass(frozen=True, eq=False)
class ConstraintSet:
    """``|x_i - (B x)_i| < sqrt(k)`` for every row of a weighted proximity matrix."""

    B: sp.csr_matrix
    k: float

    def __post_init__(self):
        if not self.k > 0:
            raise ParameterRangeError("k must be positive")
        B = sp.csr_matrix(self.B, dtype=float)
        if B.shape[0] != B.shape[1]:
            raise InvalidInputError("B must be square")
        if B.nnz and (B.data.min() < 0 or B.data.max() > 1):
            raise InvalidInputError("B entries must lie in [0, 1]")
        object.__setattr__(self, "B", B)

    @classmethod
    def from_grid(cls, side: int, k: float) -> "ConstraintSet":
        return cls(build_grid_graph(side, side).A, k)

    @property
    def n(self) -> int:
        return self.B.shape[0]

    def margins(self, x: np.ndarray) -> np.ndarray:
        """``sqrt(k) - |x - Bx|`` per row (last axis); feasible when all are >= 0."""
        r = x - (self.B @ x.T).T if x.ndim == 2 else x - self.B @ x
        return np.sqrt(self.k) - np.abs(r)


def _truncated_standard_normal(lo: np.ndarray, hi: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF draw on ``[lo, hi]``, working in the lighter tail for stability."""
    flip = lo > 0
    a = np.where(flip, -hi, lo)
    b = np.where(flip, -lo, hi)
    Fa, Fb = ndtr(a), ndtr(b)
    x = ndtri(Fa + u * (Fb - Fa))
    x = np.where(np.isfinite(x), x, 0.5 * (a + b))
    x = np.clip(x, a, b)
    return np.where(flip, -x, x)


def motivation_experiment(n: int = 100, replicates: int = 1000, k: float = 0.5, seed: int = 0,
                          burn_in: int = 100, thin: int = 10, chains: int = 50,
                          constraints: ConstraintSet | None = None,
                          return_draws: bool = False):
    """Empirical correlation of a standard normal truncated to a proximity constraint.

    Coordinate-wise Gibbs: each full conditional is a standard normal
    restricted to the intersection of the intervals from every constraint
    row touching that coordinate. ``chains`` independent chains start at
    ``x = 0`` (always feasible), run ``burn_in`` sweeps, then keep one state
    every ``thin`` sweeps until ``replicates`` states are collected.
    """
    if constraints is None:
        side = int(round(np.sqrt(n)))
        if side * side != n:
            raise InvalidInputError("n must be a perfect square (side x side grid)")
        constraints = ConstraintSet.from_grid(side, k)
    cs = constraints
    n = cs.n
    if replicates < 2:
        raise InvalidInputError("need at least two replicates")
    if replicates < 30:
        warnings.warn("few replicates; correlations will be noisy", UserWarning, stacklevel=2)
    chains = max(1, min(chains, replicates))
    per_chain = -(-replicates // chains)
    bound = float(np.sqrt(cs.k))
    # Row i residual is sum_j coef[i, j] x_j with coef = I - B.
    coef = sp.csc_matrix(sp.identity(n, format="csr") - cs.B)
    touch = [(coef.indices[coef.indptr[j]:coef.indptr[j + 1]],
              coef.data[coef.indptr[j]:coef.indptr[j + 1]]) for j in range(n)]
    rng = np.random.default_rng(seed)
    x = np.zeros((chains, n))
    resid = np.zeros((chains, n))

    def sweep():
        u_all = rng.random((chains, n))
        for j in range(n):
            rows, a = touch[j]
            rest = resid[:, rows] - a * x[:, j:j + 1]
            e1 = (-bound - rest) / a
            e2 = (bound - rest) / a
            lo = np.minimum(e1, e2).max(axis=1)
            hi = np.maximum(e1, e2).min(axis=1)
            new = _truncated_standard_normal(lo, hi, u_all[:, j])
            resid[:, rows] += a * (new - x[:, j])[:, None]
            x[:, j] = new

    for _ in range(burn_in):
        sweep()
    kept = []
    for _ in range(per_chain):
        for _ in range(thin):
            sweep()
        kept.append(x.copy())
    draws = np.stack(kept, axis=1).reshape(-1, n)[:replicates]
    corr = np.corrcoef(draws, rowvar=False)
    corr = 0.5 * (corr + corr.T)
    np.fill_diagonal(corr, 1.0)
    return (corr, draws) if return_draws else corr


def neighbor_correlation_summary(corr: np.ndarray, graph: AdjacencyGraph) -> tuple[float, float]:
    """Mean correlation over adjacent pairs and mean |correlation| over the rest."""
    W = graph.W.toarray().astype(bool)
    off = ~np.eye(graph.n, dtype=bool)
    return float(corr[W].mean()), float(np.abs(corr[off & ~W]).mean())


def write_matrix_csv(M: np.ndarray, path) -> None:
    np.savetxt(path, M, delimiter=",", fmt="%.10g")
