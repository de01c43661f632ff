"""Sparse precision matrices for TAR_C, TAR_S, CAR, SAR and NNGP-TAR.

Every constructor takes the marginal scale ``sigma2`` last and satisfies
``Q(sigma2) == Q(1) / sigma2`` exactly; the nugget enters through
``delta = tau2 / sigma2``.
"""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from ._linalg import SparseCholesky
from .errors import (
    IllConditionedCorrelationError,
    InvalidInputError,
    ParameterRangeError,
    RepresentationMismatchError,
)
from .graph import AdjacencyGraph, DirectedNeighborSets, car_rho_range


class Family(str, enum.Enum):
    TAR_C = "TAR_C"
    TAR_S = "TAR_S"
    CAR = "CAR"
    SAR = "SAR"
    NNGP_TAR = "NNGP_TAR"

    @classmethod
    def parse(cls, name: "str | Family") -> "Family":
        if isinstance(name, Family):
            return name
        key = str(name).strip().upper().replace("-", "_")
        try:
            return cls(key)
        except ValueError:
            raise InvalidInputError(f"unknown model family {name!r}") from None

    @property
    def is_tar(self) -> bool:
        return self in (Family.TAR_C, Family.TAR_S, Family.NNGP_TAR)

    @property
    def cli_name(self) -> str:
        return self.value.lower().replace("_", "-")


def _check_scale(sigma2: float) -> float:
    sigma2 = float(sigma2)
    if not sigma2 > 0 or not np.isfinite(sigma2):
        raise ParameterRangeError(f"sigma2 must be positive and finite, got {sigma2}")
    return sigma2


def _check_delta(delta: float) -> float:
    delta = float(delta)
    if not delta > 0 or np.isnan(delta):
        raise ParameterRangeError(f"delta must be positive, got {delta}")
    return delta


def _identity(n: int) -> sp.csr_matrix:
    return sp.identity(n, format="csr")


def car_kernel(g: AdjacencyGraph) -> sp.csr_matrix:
    """Intrinsic CAR kernel ``D_w - W`` (singular)."""
    return sp.csr_matrix(g.D - g.W)


def sar_kernel(g: AdjacencyGraph) -> sp.csr_matrix:
    """``(I - A)'(I - A)`` (singular)."""
    IA = _identity(g.n) - g.A
    return sp.csr_matrix(IA.T @ IA)


def precision_tar_c(g: AdjacencyGraph, delta: float, sigma2: float = 1.0) -> sp.csr_matrix:
    """``(1/sigma2) [ (1/delta) D_w + (D_w - W) ]``."""
    delta, sigma2 = _check_delta(delta), _check_scale(sigma2)
    Q = (1.0 / delta) * g.D + car_kernel(g)
    return sp.csr_matrix(Q / sigma2)


def precision_tar_s(g: AdjacencyGraph, delta: float, sigma2: float = 1.0) -> sp.csr_matrix:
    """``(1/sigma2) [ (1/delta) I + (I - A)'(I - A) ]``."""
    delta, sigma2 = _check_delta(delta), _check_scale(sigma2)
    Q = (1.0 / delta) * _identity(g.n) + sar_kernel(g)
    return sp.csr_matrix(Q / sigma2)


def precision_car(g: AdjacencyGraph, rho: float, sigma2: float = 1.0,
                  certify: bool = True) -> sp.csr_matrix:
    """``(1/sigma2) (D_w - rho W)``.

    With ``certify`` a Cholesky factorization is attempted and
    :class:`NotPositiveDefiniteError` surfaces for ``rho`` outside the
    admissible range.
    """
    sigma2 = _check_scale(sigma2)
    Q = sp.csr_matrix((g.D - float(rho) * g.W) / sigma2)
    if certify:
        SparseCholesky(Q)
    return Q


def precision_sar(g: AdjacencyGraph, rho: float, sigma2: float = 1.0) -> sp.csr_matrix:
    """``(1/sigma2) (I - rho A)'(I - rho A)`` for ``|rho| < 1``."""
    sigma2 = _check_scale(sigma2)
    rho = float(rho)
    if not abs(rho) < 1:
        raise ParameterRangeError(f"SAR requires |rho| < 1, got {rho}")
    IA = _identity(g.n) - rho * g.A
    return sp.csr_matrix((IA.T @ IA) / sigma2)


@dataclass(frozen=True)
class CorrelationSpec:
    """Exponential correlation ``exp(-phi * ||s - s'||)``."""

    phi: float
    kind: str = "exponential"

    def __post_init__(self):
        if self.kind != "exponential":
            raise InvalidInputError(f"unsupported correlation kind {self.kind!r}")
        if not self.phi > 0:
            raise ParameterRangeError("range parameter phi must be positive")

    def __call__(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        a = np.atleast_2d(a)
        b = np.atleast_2d(b)
        d = np.linalg.norm(a[:, None, :] - b[None, :, :], axis=-1)
        return np.exp(-self.phi * d)


def nngp_factors(ns: DirectedNeighborSets, coords, cs: CorrelationSpec,
                 cond_limit: float = 1e12) -> tuple[sp.csr_matrix, np.ndarray]:
    """Sparse ``B`` (nonzero only on ``(i, S_i)``) and the diagonal of ``F``."""
    coords = np.asarray(coords, dtype=float)
    n = ns.n
    if coords.shape[0] != n:
        raise InvalidInputError("coords and neighbour sets disagree on n")
    rows, cols, vals = [], [], []
    f = np.ones(n)
    for i in range(n):
        S = list(ns.neighbors[i])
        if not S:
            continue
        C_SS = cs(coords[S], coords[S])
        c_iS = cs(coords[[i]], coords[S]).ravel()
        if np.linalg.cond(C_SS) > cond_limit:
            raise IllConditionedCorrelationError(
                f"neighbour correlation block of point {i} is numerically singular")
        b = np.linalg.solve(C_SS, c_iS)
        f_i = 1.0 - b @ c_iS
        if not f_i > 0:
            raise IllConditionedCorrelationError(f"non-positive conditional variance at {i}")
        rows.extend([i] * len(S))
        cols.extend(S)
        vals.extend(b.tolist())
        f[i] = f_i
    B = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    return B, f


def nngp_kernel(B: sp.csr_matrix, f: np.ndarray) -> sp.csr_matrix:
    """NNGP precision ``(I - B)' F^{-1} (I - B)``."""
    IB = _identity(B.shape[0]) - B
    return sp.csr_matrix(IB.T @ sp.diags(1.0 / f) @ IB)


def precision_nngp_tar(ns: DirectedNeighborSets, coords, cs: CorrelationSpec, delta: float,
                       sigma2: float = 1.0) -> sp.csr_matrix:
    """``(1/sigma2) [ (1/delta) I + (I - B)' F^{-1} (I - B) ]``."""
    delta, sigma2 = _check_delta(delta), _check_scale(sigma2)
    B, f = nngp_factors(ns, coords, cs)
    Q = (1.0 / delta) * _identity(ns.n) + nngp_kernel(B, f)
    return sp.csr_matrix(Q / sigma2)


@dataclass(eq=False)
class PrecisionModel:
    """A model family over a fixed spatial structure plus its discrete grid.

    ``grid`` holds delta values for the TAR families and rho values for
    CAR/SAR. NNGP_TAR needs ``neighbor_sets``, ``coords`` and
    ``correlation`` instead of (or in addition to) ``graph``.
    """

    family: Family
    grid: tuple[float, ...]
    graph: AdjacencyGraph | None = None
    neighbor_sets: DirectedNeighborSets | None = None
    coords: np.ndarray | None = None
    correlation: CorrelationSpec | None = None
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.family = Family.parse(self.family)
        self.grid = tuple(float(v) for v in np.atleast_1d(self.grid))
        if not self.grid:
            raise InvalidInputError("parameter grid must be non-empty")
        if self.family is Family.NNGP_TAR:
            if self.neighbor_sets is None or self.coords is None or self.correlation is None:
                raise InvalidInputError("NNGP_TAR needs neighbor_sets, coords and correlation")
        elif self.graph is None:
            raise InvalidInputError(f"{self.family.value} needs an adjacency graph")
        g = np.asarray(self.grid)
        if self.family.is_tar:
            if np.any(~(g > 0)):
                raise ParameterRangeError("delta grid values must be positive")
        elif self.family is Family.SAR:
            if np.any(np.abs(g) >= 1):
                raise ParameterRangeError("SAR rho grid values must lie in (-1, 1)")
        else:
            lo, hi = self.rho_range
            if np.any((g <= lo) | (g >= hi)):
                raise ParameterRangeError(
                    f"CAR rho grid values must lie strictly inside ({lo:.6g}, {hi:.6g})")

    @cached_property
    def rho_range(self) -> tuple[float, float]:
        if self.family is Family.SAR:
            return (-1.0, 1.0)
        return car_rho_range(self.graph)

    @property
    def n(self) -> int:
        return self.neighbor_sets.n if self.family is Family.NNGP_TAR else self.graph.n

    @cached_property
    def _nngp(self):
        return nngp_factors(self.neighbor_sets, self.coords, self.correlation)

    def precision(self, theta: float, sigma2: float = 1.0) -> sp.csr_matrix:
        """``Q(theta, sigma2)``; unit-scale matrices are cached per theta."""
        theta = float(theta)
        Q1 = self._cache.get(theta)
        if Q1 is None:
            Q1 = self._unit_precision(theta)
            self._cache[theta] = Q1
        return Q1 if sigma2 == 1.0 else sp.csr_matrix(Q1 / _check_scale(sigma2))

    def _unit_precision(self, theta: float) -> sp.csr_matrix:
        fam = self.family
        if fam is Family.TAR_C:
            return precision_tar_c(self.graph, theta)
        if fam is Family.TAR_S:
            return precision_tar_s(self.graph, theta)
        if fam is Family.CAR:
            return precision_car(self.graph, theta, certify=False)
        if fam is Family.SAR:
            return precision_sar(self.graph, theta)
        B, f = self._nngp
        return sp.csr_matrix((1.0 / _check_delta(theta)) * _identity(self.n) + nngp_kernel(B, f))


@dataclass(frozen=True, eq=False)
class CarRepresentation:
    """``Q^{-1} = (I - C)^{-1} M`` with ``M`` diagonal."""

    C: sp.csr_matrix
    M: np.ndarray  # diagonal of M
    residual: float


def car_representation(g: AdjacencyGraph, family, delta: float, sigma2: float = 1.0,
                       verify: bool = True, tol: float = 1e-8) -> CarRepresentation:
    """CAR-form decomposition of a TAR_C or TAR_S precision.

    TAR_C: ``C = tau2/(tau2+sigma2) A`` and ``M = [(1/tau2 + 1/sigma2) D_w]^{-1}``.
    TAR_S: split ``Q = D - R`` into diagonal and off-diagonal parts, then
    ``C = D^{-1} R`` and ``M = D^{-1}``.

    With ``verify`` the conditions (positive diagonal M, zero diagonal C,
    ``c_ij/m_ii = c_ji/m_jj``, positive spectrum of ``I - C``) and the dense
    identity ``(I - C)^{-1} M = Q^{-1}`` are checked; violations raise
    :class:`RepresentationMismatchError`.
    """
    family = Family.parse(family)
    delta, sigma2 = _check_delta(delta), _check_scale(sigma2)
    tau2 = delta * sigma2
    if family is Family.TAR_C:
        C = sp.csr_matrix((tau2 / (tau2 + sigma2)) * g.A)
        M = 1.0 / ((1.0 / tau2 + 1.0 / sigma2) * g.degrees.astype(float))
        Q = precision_tar_c(g, delta, sigma2)
    elif family is Family.TAR_S:
        AtA = sp.csr_matrix(g.A.T @ g.A)
        D1 = AtA.diagonal()
        D2 = AtA - sp.diags(D1)
        Ddiag = (1.0 / tau2 + 1.0 / sigma2) + D1 / sigma2
        R = (g.A + g.A.T - D2) / sigma2
        C = sp.csr_matrix(sp.diags(1.0 / Ddiag) @ R)
        C.eliminate_zeros()
        M = 1.0 / Ddiag
        Q = precision_tar_s(g, delta, sigma2)
    else:
        raise InvalidInputError("CAR representation is defined for TAR_C and TAR_S only")
    residual = float("nan")
    if verify:
        residual = _verify_car_representation(C, M, Q, tol)
    return CarRepresentation(C=C, M=M, residual=residual)


def _verify_car_representation(C, M, Q, tol) -> float:
    n = C.shape[0]
    if not np.all(M > 0):
        raise RepresentationMismatchError("M must have a strictly positive diagonal")
    if np.any(C.diagonal() != 0):
        raise RepresentationMismatchError("C must have a zero diagonal")
    Cd = C.toarray()
    scaled = Cd / M[:, None]
    if not np.allclose(scaled, scaled.T, rtol=0, atol=tol * max(1.0, np.abs(scaled).max())):
        raise RepresentationMismatchError("symmetry condition c_ij/m_ii = c_ji/m_jj fails")
    IC = np.eye(n) - Cd
    if np.min(np.linalg.eigvals(IC).real) <= 0:
        raise RepresentationMismatchError("I - C must have positive eigenvalues")
    lhs = np.linalg.solve(IC, np.diag(M))
    rhs = np.linalg.inv(Q.toarray())
    residual = float(np.max(np.abs(lhs - rhs)))
    if residual > tol:
        raise RepresentationMismatchError(f"(I-C)^-1 M differs from Q^-1 by {residual:.3g}")
    return residual


# --------------------------------------------------------------------------
# auxiliary-variable oracle
# --------------------------------------------------------------------------

class OraclePrecisionWarning(UserWarning):
    pass


@dataclass(frozen=True)
class OracleEstimate:
    value: float
    stderr: float  # Monte Carlo standard error, or deterministic bound for quadrature
    method: str


_QUAD_POINTS = {1: 1_000_000, 2: 2000, 3: 160}


def _indicator_integral(residual: np.ndarray, scale2: np.ndarray, draws: int, rng,
                        method: str) -> tuple[float, float, str]:
    """Integrate ``prod_i 1(|r_i| < sqrt(-2 s_i log u_i))`` over ``u`` in the unit cube."""
    k = residual.size
    if method == "auto":
        method = "quadrature" if k <= 3 else "monte-carlo"
    r2 = residual ** 2

    def inside(u):  # u: (N, k)
        with np.errstate(divide="ignore"):
            bound2 = -2.0 * scale2 * np.log(u)
        return np.all(r2 < bound2, axis=1)

    if method == "quadrature":
        if k > 3:
            raise InvalidInputError("product quadrature is limited to 3 dimensions")
        m = _QUAD_POINTS[k]
        nodes = (np.arange(m) + 0.5) / m
        total = 0
        # chunk over the first axis to bound memory
        rest = np.stack(np.meshgrid(*([nodes] * (k - 1)), indexing="ij"), -1).reshape(-1, k - 1) \
            if k > 1 else np.empty((1, 0))
        for u0 in np.array_split(nodes, max(1, m ** k // 500_000)):
            u = np.concatenate([np.repeat(u0, rest.shape[0])[:, None],
                                np.tile(rest, (u0.size, 1))], axis=1)
            total += int(np.count_nonzero(inside(u)))
        value = total / m ** k
        return value, k / (2.0 * m), method
    if method == "monte-carlo":
        hits = 0
        done = 0
        while done < draws:
            batch = min(250_000, draws - done)
            hits += int(np.count_nonzero(inside(rng.random((batch, k)))))
            done += batch
        p = hits / draws
        return p, float(np.sqrt(p * (1 - p) / draws)), method
    raise InvalidInputError(f"unknown oracle method {method!r}")


def truncation_density_oracle(family, y_tilde, delta: float, sigma2: float = 1.0,
                              graph: AdjacencyGraph | None = None, *, index: int = 0,
                              neighbor_sets: DirectedNeighborSets | None = None,
                              coords=None, correlation: CorrelationSpec | None = None,
                              method: str = "auto", draws: int = 1_000_000, seed: int = 0,
                              rel_tol: float | None = None) -> OracleEstimate:
    """Numerically integrate the uniform auxiliary bounds out of a truncated kernel.

    TAR_C: the full-conditional kernel of coordinate ``index`` (one auxiliary
    variable, with the symmetrizing scales ``tau2/d_i`` and ``sigma2/d_i``).
    TAR_S and NNGP_TAR: the joint kernel over ``u`` in ``(0,1)^n``.
    Only meant as a test oracle for tiny ``n``.
    """
    family = Family.parse(family)
    y = np.asarray(y_tilde, dtype=float)
    delta, sigma2 = _check_delta(delta), _check_scale(sigma2)
    tau2 = delta * sigma2
    rng = np.random.default_rng(seed)
    if family is Family.TAR_C:
        if graph is None:
            raise InvalidInputError("TAR_C oracle needs the graph")
        d = float(graph.degrees[index])
        tau2_i, sigma2_i = tau2 / d, sigma2 / d
        r = np.array([y[index] - (graph.A[[index]] @ y)[0]])
        pre = np.exp(-y[index] ** 2 / (2 * tau2_i))
        p, se, used = _indicator_integral(r, np.array([sigma2_i]), draws, rng, method)
    elif family is Family.TAR_S:
        if graph is None:
            raise InvalidInputError("TAR_S oracle needs the graph")
        if graph.n > 6:
            raise InvalidInputError("oracle is limited to n <= 6")
        r = y - graph.A @ y
        pre = np.exp(-(y @ y) / (2 * tau2))
        p, se, used = _indicator_integral(r, np.full(y.size, sigma2), draws, rng, method)
    elif family is Family.NNGP_TAR:
        if neighbor_sets is None or coords is None or correlation is None:
            raise InvalidInputError("NNGP_TAR oracle needs neighbor sets, coords, correlation")
        if neighbor_sets.n > 6:
            raise InvalidInputError("oracle is limited to n <= 6")
        B, f = nngp_factors(neighbor_sets, coords, correlation)
        r = y - B @ y
        pre = np.exp(-(y @ y) / (2 * tau2))
        p, se, used = _indicator_integral(r, sigma2 * f, draws, rng, method)
    else:
        raise InvalidInputError("oracle is defined for TAR_C, TAR_S and NNGP_TAR")
    est = OracleEstimate(value=float(pre * p), stderr=float(pre * se), method=used)
    if rel_tol is not None and est.stderr > rel_tol * max(est.value, 1e-300):
        warnings.warn(f"oracle standard error {est.stderr:.3g} exceeds tolerance",
                      OraclePrecisionWarning, stacklevel=2)
    return est


def closed_form_kernel(family, y_tilde, delta: float, sigma2: float = 1.0,
                       graph: AdjacencyGraph | None = None, *, index: int = 0,
                       neighbor_sets=None, coords=None, correlation=None) -> float:
    """Unnormalized Gaussian kernel the oracle should reproduce."""
    family = Family.parse(family)
    y = np.asarray(y_tilde, dtype=float)
    if family is Family.TAR_C:
        d = float(graph.degrees[index])
        tau2, s2 = delta * sigma2 / d, sigma2 / d
        r = y[index] - (graph.A[[index]] @ y)[0]
        return float(np.exp(-y[index] ** 2 / (2 * tau2) - float(r) ** 2 / (2 * s2)))
    if family is Family.TAR_S:
        Q = precision_tar_s(graph, delta, sigma2)
    elif family is Family.NNGP_TAR:
        Q = precision_nngp_tar(neighbor_sets, coords, correlation, delta, sigma2)
    else:
        raise InvalidInputError("closed form defined for TAR_C, TAR_S and NNGP_TAR")
    return float(np.exp(-0.5 * y @ (Q @ y)))


def grid_values(spec: str | Sequence[float]) -> tuple[float, ...]:
    """Parse ``"0.1:10:0.1"`` (inclusive range), ``"1,2,3"`` or a sequence."""
    if not isinstance(spec, str):
        return tuple(float(v) for v in spec)
    s = spec.strip()
    if not s:
        raise InvalidInputError("empty grid specification")
    try:
        if ":" in s:
            start, stop, step = (float(t) for t in s.split(":"))
            if step <= 0 or stop < start:
                raise ValueError
            count = int(np.floor((stop - start) / step + 1e-9)) + 1
            return tuple(float(v) for v in np.round(start + step * np.arange(count), 12))
        return tuple(float(t) for t in s.split(","))
    except ValueError:
        raise InvalidInputError(f"cannot parse grid specification {spec!r}") from None
