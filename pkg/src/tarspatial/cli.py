"""Command-line entry point: ``tarspatial <command> [options]``.

Exit status: 0 on success, 2 for configuration or input problems, 3 for
numerical failures. Output files depend only on the inputs and the seed;
wall-clock timings are appended to ``run.log`` in the output directory.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import logging
import sys
import time
import warnings
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .errors import NumericalFailureError, TarError
from .graph import build_grid_graph, build_neighbor_sets
from .ingest import (
    FormulaSpec,
    ingest_dataset,
    read_coordinates,
    read_vector_csv,
    write_dataset_csv,
    write_edge_list,
    write_vector_csv,
)
from .metrics import score_predictions
from .model import CorrelationSpec, Family, PrecisionModel, grid_values
from .predict import (
    NeumannConfig,
    benchmark_covariance_paths,
    kriging_predict,
    residual_map,
    write_residuals_csv,
)
from .sampler import PosteriorDraws, PriorConfig, sample_posterior
from .simulate import (
    MissingSpec,
    SimulationDesign,
    motivation_experiment,
    replicate_study,
    simulate_dataset,
    write_long_csv,
    write_matrix_csv,
    write_wide_csv,
)

log = logging.getLogger("tarspatial")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
FAMILY_CHOICES = [f.cli_name for f in Family]


class ConfigError(Exception):
    pass


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _runlog(out: Path, command: str, **timings) -> None:
    entry = {"time": _dt.datetime.now().isoformat(timespec="seconds"), "command": command,
             **{k: round(v, 6) for k, v in timings.items()}}
    with (out / "run.log").open("a") as fh:
        fh.write(json.dumps(entry) + "\n")


def _require(path, what: str) -> Path:
    if path is None:
        raise ConfigError(f"--{what} is required")
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"{what} file not found: {p}")
    return p


def _formula(args) -> FormulaSpec:
    base = {}
    if args.formula:
        base = json.loads(_require(args.formula, "formula").read_text())
    if args.response:
        base["response"] = args.response
    if args.covariates:
        base["covariates"] = [c for c in args.covariates.split(",") if c]
    if args.categorical:
        base["categorical"] = args.categorical
    if args.reference:
        base["reference"] = args.reference
    if args.log_response:
        base["log_response"] = True
    if args.no_intercept:
        base["intercept"] = False
    return FormulaSpec.from_dict(base)


def _load_data(args):
    data_path = _require(args.data, "data")
    adj = _require(args.adjacency, "adjacency")
    data, graph = ingest_dataset(data_path, adj, _formula(args))
    if args.truth:
        data.truth = read_vector_csv(_require(args.truth, "truth"), "truth", n=data.n)
    return data, graph


def _model(args, family: Family, graph, grid):
    if family is Family.NNGP_TAR:
        coords = read_coordinates(_require(args.coords, "coords"))
        ns = build_neighbor_sets(coords, args.neighbors)
        return PrecisionModel(family, grid, graph=graph, neighbor_sets=ns, coords=coords,
                              correlation=CorrelationSpec(args.phi))
    return PrecisionModel(family, grid, graph=graph)


def _grid(args, family: Family):
    if args.grid:
        return grid_values(args.grid)
    return (1.0,) if family.is_tar else grid_values("-0.99:0.99:0.02")


def _neumann(args) -> NeumannConfig:
    return NeumannConfig(tail_tol=args.neumann_tol)


def _design(args) -> SimulationDesign:
    if args.design:
        design = SimulationDesign.load(_require(args.design, "design"))
    else:
        design = SimulationDesign.item(args.item)
    if args.seed is not None:
        design = replace(design, seed=args.seed)
    if args.missing_fraction is not None:
        design = replace(design, missing=MissingSpec(fraction=args.missing_fraction,
                                                     block=(0, 0), total=None))
    return design


def cmd_simulate(args) -> None:
    design = _design(args)
    out = _outdir(args)
    t0 = time.perf_counter()
    data = simulate_dataset(design)
    graph = build_grid_graph(design.rows, design.cols)
    names = [f"x_{j}" for j in range(design.p)]
    write_dataset_csv(data, out / "dataset.csv", names)
    write_vector_csv(out / "truth.csv", "truth", data.truth)
    write_vector_csv(out / "mask.csv", "observed", data.observed)
    write_edge_list(graph, out / "adjacency.txt")
    design.save(out / "design.json")
    FormulaSpec(response="y", covariates=tuple(names), intercept=False).save(out / "formula.json")
    with (out / "coords.csv").open("w") as fh:
        fh.write("id,x,y\n")
        for i, (x, y) in enumerate(data.coords):
            fh.write(f"{i},{float(x)!r},{float(y)!r}\n")
    _runlog(out, "simulate", seconds=time.perf_counter() - t0)
    print(f"simulated {data.n} regions, {data.n_missing} missing -> {out}")


def cmd_fit(args) -> None:
    data, graph = _load_data(args)
    family = Family.parse(args.family)
    model = _model(args, family, graph, _grid(args, family))
    out = _outdir(args)
    draws = sample_posterior(data, model, PriorConfig(args.prior_a, args.prior_b),
                             G=args.draws, seed=args.seed or 0, shards=args.threads)
    draws.write_csv(out / "posterior.csv")
    summary = draws.summary()
    runtime = summary.pop("model_runtime_sec", float("nan"))
    if args.timings:
        summary["model_runtime_sec"] = runtime
    summary["columns"] = list(data.columns)
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    _runlog(out, "fit", model_runtime_sec=runtime)
    print(f"fit {family.cli_name}: {draws.G} draws -> {out}")


def cmd_predict(args) -> None:
    data, graph = _load_data(args)
    family = Family.parse(args.family)
    post_path = Path(args.posterior) if args.posterior else Path(args.out) / "posterior.csv"
    if not post_path.exists():
        raise ConfigError(f"posterior draws not found: {post_path} (run fit first)")
    draws = PosteriorDraws.read_csv(post_path, family)
    if draws.beta.shape[1] != data.p:
        raise ConfigError("posterior draws do not match the design matrix width")
    model = _model(args, family, graph, tuple(np.unique(draws.theta)))
    out = _outdir(args)
    if data.n_missing == 0:
        warnings.warn("no missing regions; writing an empty predictions file", UserWarning)
    pred = kriging_predict(data, model, draws, _neumann(args), alpha=args.alpha,
                           seed=args.seed or 0, workers=args.threads)
    pred.write_csv(out / "predictions.csv")
    if args.samples:
        pred.write_samples_csv(out / "predictive_samples.csv")
    timings = {"prediction_sec": pred.runtime}
    if data.truth is not None and pred.ids.size:
        resid = residual_map(data, pred)
        write_residuals_csv(out / "residuals.csv", pred.ids, resid)
        card = score_predictions(data.truth[pred.ids], pred.point, pred.samples, pred.lower,
                                 pred.upper, args.alpha)
        extra = {"prediction_time_sec": pred.runtime} if args.timings else None
        card.write_json(out / "scorecard.json", extra)
    _runlog(out, "predict", **timings)
    print(f"predicted {pred.ids.size} regions -> {out}")


def cmd_compare(args) -> None:
    design = _design(args)
    try:
        families = [Family.parse(f) for f in args.families.split(",") if f]
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    out = _outdir(args)
    t0 = time.perf_counter()
    rows = replicate_study(design, families, R=args.replicates, G=args.draws,
                           seed=args.seed or 0, alpha=args.alpha,
                           prior=PriorConfig(args.prior_a, args.prior_b), cfg=_neumann(args))
    write_wide_csv(rows, out / "replicates.csv")
    write_long_csv(rows, out / "comparison_long.csv")
    _runlog(out, "compare", seconds=time.perf_counter() - t0)
    print(f"compared {len(families)} families over {args.replicates} replicates -> {out}")


def cmd_motivate(args) -> None:
    out = _outdir(args)
    t0 = time.perf_counter()
    corr = motivation_experiment(n=args.n, replicates=args.replicates, k=args.k,
                                 seed=args.seed or 0)
    write_matrix_csv(corr, out / "correlation.csv")
    _runlog(out, "motivate", seconds=time.perf_counter() - t0)
    print(f"wrote {corr.shape[0]}x{corr.shape[1]} correlation matrix -> {out}")


def cmd_benchmark(args) -> None:
    graph = build_grid_graph(args.rows, args.cols)
    deltas = grid_values(args.grid or "0.1:2:0.1")
    res = benchmark_covariance_paths(graph, deltas, _neumann(args))
    out = _outdir(args)
    (out / "benchmark.json").write_text(json.dumps(res, indent=2) + "\n")
    _runlog(out, "benchmark", **res)
    print(json.dumps(res))


def _common(p: argparse.ArgumentParser, *, data=False, model=False) -> None:
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--threads", type=int, default=1, help="worker cap")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--neumann-tol", type=float, default=1e-8)
    p.add_argument("--timings", action="store_true",
                   help="also write wall-clock times into result files")
    if data:
        p.add_argument("--data", help="CSV with header; empty response = missing")
        p.add_argument("--adjacency", help="edge list, one 'i j' pair per line")
        p.add_argument("--truth", help="CSV id,truth for scoring held-out regions")
        p.add_argument("--formula", help="JSON file naming response and covariate columns")
        p.add_argument("--response")
        p.add_argument("--covariates", help="comma-separated numeric columns")
        p.add_argument("--categorical")
        p.add_argument("--reference", help="reference level of the categorical column")
        p.add_argument("--log-response", action="store_true")
        p.add_argument("--no-intercept", action="store_true")
    if model:
        p.add_argument("--family", choices=FAMILY_CHOICES, default="tar-c")
        p.add_argument("--grid", help="start:stop:step or comma list")
        p.add_argument("--prior-a", type=float, default=0.01)
        p.add_argument("--prior-b", type=float, default=0.01)
        p.add_argument("--draws", type=int, default=500, metavar="G")
        p.add_argument("--coords", help="CSV id,x,y (nngp-tar only)")
        p.add_argument("--neighbors", type=int, default=5, help="nngp-tar neighbour cap")
        p.add_argument("--phi", type=float, default=3.0, help="exponential decay (nngp-tar)")


def _design_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--design", help="design JSON")
    p.add_argument("--item", default="b", help="built-in design a, b, c or d")
    p.add_argument("--missing-fraction", type=float, default=None,
                   help="replace the missing pattern with this random fraction only")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tarspatial", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a lattice dataset")
    _common(p)
    _design_args(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="draw from the posterior")
    _common(p, data=True, model=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="Kriging draws at missing regions")
    _common(p, data=True, model=True)
    p.add_argument("--posterior", help="posterior CSV (default: OUT/posterior.csv)")
    p.add_argument("--samples", action="store_true", help="also write the sample matrix")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("compare", help="replicate study across families")
    _common(p, model=True)
    _design_args(p)
    p.add_argument("--families", default="tar-c,car")
    p.add_argument("--replicates", type=int, default=20)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("motivate", help="truncated-normal correlation demo")
    _common(p)
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--replicates", type=int, default=1000)
    p.add_argument("--k", type=float, default=0.5)
    p.set_defaults(func=cmd_motivate)

    p = sub.add_parser("benchmark", help="Neumann vs dense covariance timing")
    _common(p)
    p.add_argument("--rows", type=int, default=40)
    p.add_argument("--cols", type=int, default=40)
    p.add_argument("--grid", help="delta values")
    p.set_defaults(func=cmd_benchmark)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already printed usage
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except NumericalFailureError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (TarError, ConfigError, ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
