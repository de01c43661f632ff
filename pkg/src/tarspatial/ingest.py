"""Reading and writing tabular inputs: data CSVs, edge lists, coordinates."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import IngestionError, InvalidEdgeError
from .graph import AdjacencyGraph, build_graph_from_edges
from .sampler import Dataset

_MISSING_TOKENS = {"", "na", "nan", "null"}


@dataclass(frozen=True)
class FormulaSpec:
    """Which columns form the response and design matrix.

    The categorical column, if any, becomes reference-coded 0/1 dummies
    (one per non-reference level, in sorted order). ``id_column`` aligns
    rows to adjacency indices ``0..n-1``; without it, file order is used.
    """

    response: str = "y"
    covariates: tuple[str, ...] = ()
    categorical: str | None = None
    reference: str | None = None
    log_response: bool = False
    intercept: bool = True
    id_column: str | None = "id"

    def __post_init__(self):
        object.__setattr__(self, "covariates", tuple(self.covariates))
        if self.categorical is not None and self.reference is None:
            raise IngestionError("a categorical column needs a declared reference level")

    @classmethod
    def from_dict(cls, d: dict) -> "FormulaSpec":
        allowed = set(cls.__dataclass_fields__)
        unknown = set(d) - allowed
        if unknown:
            raise IngestionError(f"unknown formula keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "FormulaSpec":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except json.JSONDecodeError as exc:
            raise IngestionError(f"malformed formula JSON: {exc}") from exc

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=2) + "\n")


def read_edge_list(path, n: int | None = None) -> AdjacencyGraph:
    """Whitespace-separated ``i j`` pairs (0-based); ``#`` starts a comment.

    ``n`` defaults to one more than the largest index seen.
    """
    edges = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.replace(",", " ").split()
        if len(parts) != 2:
            raise InvalidEdgeError(f"{path}:{lineno}: expected two indices, got {line!r}")
        try:
            edges.append((int(parts[0]), int(parts[1])))
        except ValueError as exc:
            raise InvalidEdgeError(f"{path}:{lineno}: non-integer index in {line!r}") from exc
    if n is None:
        if not edges:
            raise InvalidEdgeError(f"{path}: no edges")
        n = max(max(e) for e in edges) + 1
    return build_graph_from_edges(n, edges)


def write_edge_list(graph: AdjacencyGraph, path) -> None:
    with Path(path).open("w") as fh:
        fh.write(f"# {graph.n} regions, {graph.n_edges} undirected edges\n")
        for i, j in graph.edges():
            fh.write(f"{i} {j}\n")


def write_triplets(M, path) -> None:
    """Sparse matrix as ``i j value`` lines (upper and lower entries both listed)."""
    coo = M.tocoo()
    order = np.lexsort((coo.col, coo.row))
    with Path(path).open("w") as fh:
        for k in order:
            fh.write(f"{int(coo.row[k])} {int(coo.col[k])} {float(coo.data[k])!r}\n")


def read_coordinates(path) -> np.ndarray:
    """CSV with header ``id,x,y``; returns an ``(n, 2)`` array ordered by id."""
    rows = _read_rows(path)
    try:
        ids = np.array([int(r["id"]) for r in rows])
        xy = np.array([[float(r["x"]), float(r["y"])] for r in rows])
    except (KeyError, ValueError) as exc:
        raise IngestionError(f"{path}: coordinates need numeric id,x,y columns ({exc})") from exc
    if not np.array_equal(np.sort(ids), np.arange(ids.size)):
        raise IngestionError(f"{path}: ids must be 0..n-1")
    out = np.empty_like(xy)
    out[ids] = xy
    return out


def _read_rows(path) -> list[dict]:
    try:
        with Path(path).open(newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None:
                raise IngestionError(f"{path}: empty file")
            return [dict(r) for r in reader]
    except FileNotFoundError as exc:
        raise IngestionError(f"{path}: file not found") from exc


def _number(raw: str, row: int, col: str) -> float:
    try:
        return float(raw)
    except (TypeError, ValueError) as exc:
        raise IngestionError(f"row {row}, column {col!r}: non-numeric value {raw!r}") from exc


def ingest_dataset(data_csv, adjacency: AdjacencyGraph | str | Path | None,
                   formula: FormulaSpec) -> tuple[Dataset, AdjacencyGraph | None]:
    """Build a :class:`Dataset` from a headed CSV.

    Empty or NA responses mark unobserved regions. Returns the dataset and
    the adjacency graph (read from an edge list when a path is given).
    """
    rows = _read_rows(data_csv)
    if not rows:
        raise IngestionError(f"{data_csv}: no data rows")
    header = list(rows[0].keys())
    covariates = formula.covariates or tuple(
        c for c in header
        if c not in {formula.response, formula.id_column, formula.categorical, "observed"})
    needed = [formula.response, *covariates]
    if formula.categorical:
        needed.append(formula.categorical)
    if formula.id_column and formula.id_column in header:
        needed.append(formula.id_column)
    unknown = [c for c in needed if c not in header]
    if unknown:
        raise IngestionError(f"unknown column(s) {unknown}; header is {header}")

    n = len(rows)
    if formula.id_column and formula.id_column in header:
        ids = np.array([int(_number(r[formula.id_column], i + 2, formula.id_column))
                        for i, r in enumerate(rows)])
        if not np.array_equal(np.sort(ids), np.arange(n)):
            raise IngestionError(f"column {formula.id_column!r} must hold each of 0..{n - 1} once")
        order = np.argsort(ids)
        rows = [rows[k] for k in order]

    y = np.full(n, np.nan)
    observed = np.zeros(n, dtype=bool)
    for i, r in enumerate(rows):
        raw = (r[formula.response] or "").strip()
        if raw.lower() in _MISSING_TOKENS:
            continue
        v = _number(raw, i + 2, formula.response)
        if formula.log_response:
            if not v > 0:
                raise IngestionError(f"row {i + 2}: response {v} is not positive; cannot log")
            v = math.log(v)
        y[i] = v
        observed[i] = True

    cols: list[np.ndarray] = []
    names: list[str] = []
    if formula.intercept:
        cols.append(np.ones(n))
        names.append("intercept")
    for c in covariates:
        cols.append(np.array([_number(r[c], i + 2, c) for i, r in enumerate(rows)]))
        names.append(c)
    if formula.categorical:
        values = [(r[formula.categorical] or "").strip() for r in rows]
        levels = sorted(set(values))
        if formula.reference not in levels:
            raise IngestionError(f"reference level {formula.reference!r} absent from column "
                                 f"{formula.categorical!r} (levels {levels})")
        for lev in levels:
            if lev == formula.reference:
                continue
            cols.append(np.array([1.0 if v == lev else 0.0 for v in values]))
            names.append(lev)
    if not cols:
        raise IngestionError("design matrix has no columns")
    X = np.column_stack(cols)

    graph = adjacency
    if isinstance(adjacency, (str, Path)):
        graph = read_edge_list(adjacency, n=n)
    if graph is not None and graph.n != n:
        raise IngestionError(f"adjacency has {graph.n} regions but the data has {n} rows")
    return Dataset(y=y, X=X, observed=observed, columns=tuple(names)), graph


def write_dataset_csv(data: Dataset, path, names: Sequence[str] | None = None) -> None:
    """``id,y,<covariates>`` with an empty ``y`` at unobserved regions."""
    names = list(names or data.columns)
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "y", *names])
        for i in range(data.n):
            yv = repr(float(data.y[i])) if data.observed[i] else ""
            w.writerow([i, yv, *(repr(float(v)) for v in data.X[i])])


def write_vector_csv(path, name: str, values, ids=None) -> None:
    values = np.asarray(values)
    ids = np.arange(values.size) if ids is None else ids
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", name])
        for i, v in zip(ids, values):
            w.writerow([int(i), int(v) if values.dtype == bool else repr(float(v))])


def read_vector_csv(path, name: str, n: int | None = None) -> np.ndarray:
    rows = _read_rows(path)
    try:
        ids = np.array([int(r["id"]) for r in rows])
        vals = np.array([float(r[name]) if (r[name] or "").strip().lower() not in _MISSING_TOKENS
                         else np.nan for r in rows])
    except (KeyError, ValueError) as exc:
        raise IngestionError(f"{path}: expected columns id,{name} ({exc})") from exc
    size = n if n is not None else (ids.max() + 1 if ids.size else 0)
    out = np.full(size, np.nan)
    out[ids] = vals
    return out
