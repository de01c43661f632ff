"""Acceptance suite: one PASS/FAIL line per criterion, then a hard assertion.

Run with ``pytest tests/test_acceptance.py`` or ``python tests/test_acceptance.py``.
"""

import sys
import time
from pathlib import Path

import numpy as np
import pytest
import scipy.sparse as sp

sys.path.insert(0, str(Path(__file__).parent))
from oracles import (  # noqa: E402
    quadrature_theta_posterior,
    random_small_graph,
    random_tiny_dataset,
    total_variation,
)

from tarspatial._linalg import SparseCholesky  # noqa: E402
from tarspatial.errors import NotPositiveDefiniteError  # noqa: E402
from tarspatial.graph import (  # noqa: E402
    build_graph_from_edges,
    build_grid_graph,
    build_neighbor_sets,
    car_rho_range,
    grid_coordinates,
)
from tarspatial.metrics import score_predictions  # noqa: E402
from tarspatial.model import (  # noqa: E402
    CorrelationSpec,
    PrecisionModel,
    car_kernel,
    car_representation,
    closed_form_kernel,
    grid_values,
    nngp_factors,
    nngp_kernel,
    precision_car,
    precision_nngp_tar,
    precision_tar_c,
    precision_tar_s,
    sar_kernel,
    truncation_density_oracle,
)
from tarspatial.predict import (  # noqa: E402
    NeumannBasis,
    NeumannConfig,
    benchmark_covariance_paths,
    covariance_with_method,
    kriging_predict,
)
from tarspatial.sampler import PriorConfig, posterior_theta_mass, sample_posterior  # noqa: E402
from tarspatial.simulate import (  # noqa: E402
    SimulationDesign,
    median_by,
    motivation_experiment,
    neighbor_correlation_summary,
    replicate_study,
    simulate_dataset,
)


@pytest.fixture
def report(capsys):
    """Print the verdict line unbuffered, then fail the test if any check failed."""

    def _report(k: int, checks: dict, detail: str = "") -> None:
        ok = all(checks.values())
        failed = [name for name, v in checks.items() if not v]
        line = f"ACCEPTANCE {k}: {'PASS' if ok else 'FAIL'}"
        if detail:
            line += f"  {detail}"
        if failed:
            line += f"  failed: {', '.join(failed)}"
        with capsys.disabled():
            print("\n" + line, flush=True)
        assert ok, line

    return _report


def _random_graphs(rng, count, max_side=10):
    graphs = []
    for i in range(count):
        if i % 2 == 0:
            graphs.append(build_grid_graph(int(rng.integers(2, max_side + 1)),
                                           int(rng.integers(2, max_side + 1))))
        else:
            graphs.append(random_small_graph(rng, int(rng.integers(3, max_side ** 2 // 2))))
    return graphs


def test_1_direct_sampler_exact(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(5):
        n = int(rng.integers(3, 7))
        g = random_small_graph(rng, n)
        data = random_tiny_dataset(rng, n, p=1)
        fam = ("tar-c", "tar-s")[int(rng.integers(2))]
        grid = tuple(np.sort(rng.uniform(0.1, 5.0, 2)))
        model = PrecisionModel(fam, grid, graph=g)
        prior = PriorConfig()
        p = posterior_theta_mass(data, model, prior)
        q = quadrature_theta_posterior(data, [model.precision(v) for v in grid], prior.a, prior.b)
        worst = max(worst, total_variation(p, q))
    dt = time.perf_counter() - t0
    report(1, {"tv<1e-3": worst < 1e-3, "runtime<10s": dt < 10},
           f"max TV {worst:.2e}, {dt:.1f}s")


def test_2_positive_definiteness(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    deltas = np.logspace(-2, 2, 200)
    rng.shuffle(deltas)
    failures = 0
    for k in range(200):
        rows, cols = (int(v) for v in rng.integers(3, 21, 2))
        g = build_grid_graph(rows, cols)
        delta = float(deltas[k])
        kind = k % 3
        try:
            if kind == 0:
                SparseCholesky(precision_tar_c(g, delta))
            elif kind == 1:
                SparseCholesky(precision_tar_s(g, delta))
            else:
                coords = grid_coordinates(rows, cols) / max(rows, cols)
                ns = build_neighbor_sets(coords, int(rng.integers(1, 6)))
                cs = CorrelationSpec(float(rng.uniform(3.0, 30.0)))
                SparseCholesky(precision_nngp_tar(ns, coords, cs, delta))
        except NotPositiveDefiniteError:
            failures += 1
    car_ok = 0
    for g in _random_graphs(rng, 20):
        hi = car_rho_range(g)[1]
        inside = outside_fails = True
        try:
            precision_car(g, hi - 1e-3)
        except NotPositiveDefiniteError:
            inside = False
        try:
            precision_car(g, hi + 1e-3)
            outside_fails = False
        except NotPositiveDefiniteError:
            pass
        car_ok += inside and outside_fails
    dt = time.perf_counter() - t0
    report(2, {"tar/nngp cholesky": failures == 0, "car boundary": car_ok == 20,
               "runtime<30s": dt < 30},
           f"{200 - failures}/200 TAR/NNGP factorized, CAR boundary {car_ok}/20, {dt:.1f}s")


def test_3_car_representation(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    worst, count = 0.0, 0
    for g in _random_graphs(rng, 20):
        assert g.n <= 100
        delta = float(10 ** rng.uniform(-2, 2))
        sigma2 = float(rng.uniform(0.1, 3.0))
        for fam in ("tar-c", "tar-s"):
            # verification raises on any failed structural condition
            rep = car_representation(g, fam, delta, sigma2, verify=True, tol=1e-8)
            worst = max(worst, rep.residual)
            count += 1
    dt = time.perf_counter() - t0
    report(3, {"residual<1e-8": worst < 1e-8, "runtime<30s": dt < 30},
           f"{count} decompositions, max residual {worst:.1e}, {dt:.1f}s")


def test_4_limit_laws(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(4)
    big = 1e8
    worst = 0.0
    for k in range(10):
        rows, cols = (int(v) for v in rng.integers(3, 16, 2))
        g = build_grid_graph(rows, cols)
        pairs = [(precision_tar_c(g, big), car_kernel(g)), (precision_tar_s(g, big), sar_kernel(g))]
        coords = rng.uniform(size=(rows * cols, 2))
        ns = build_neighbor_sets(coords, int(rng.integers(1, 6)))
        cs = CorrelationSpec(float(rng.uniform(3.0, 30.0)))
        B, f = nngp_factors(ns, coords, cs)
        pairs.append((precision_nngp_tar(ns, coords, cs, big), nngp_kernel(B, f)))
        for Q, K in pairs:
            worst = max(worst, sp.linalg.norm(Q - K) / sp.linalg.norm(K))
    dt = time.perf_counter() - t0
    report(4, {"rel<1e-7": worst < 1e-7, "runtime<5s": dt < 5},
           f"max relative distance {worst:.1e}, {dt:.1f}s")


def _tiny_graphs():
    return {
        "edge": build_graph_from_edges(2, [(0, 1)]),
        "path3": build_graph_from_edges(3, [(0, 1), (1, 2)]),
        "triangle": build_graph_from_edges(3, [(0, 1), (1, 2), (0, 2)]),
    }


def test_5_auxiliary_oracle(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    cases = []
    for name, g in _tiny_graphs().items():
        for i in range(g.n):
            cases.append(("tar-c", name, {"graph": g, "index": i}))
        cases.append(("tar-s", name, {"graph": g}))
    for n, m in ((2, 1), (3, 1), (3, 2)):
        coords = rng.uniform(size=(n, 2))
        kw = {"neighbor_sets": build_neighbor_sets(coords, m), "coords": coords,
              "correlation": CorrelationSpec(2.0)}
        cases.append(("nngp-tar", f"n{n}m{m}", kw))
    bad, total = [], 0
    for fam, name, kw in cases:
        n = (kw.get("graph") or kw["neighbor_sets"]).n
        for _ in range(20):
            y = rng.normal(0, 1.0, n)
            delta = float(10 ** rng.uniform(-1, 1))
            sigma2 = float(rng.uniform(0.3, 2.0))
            est = truncation_density_oracle(fam, y, delta, sigma2, **kw)
            exact = closed_form_kernel(fam, y, delta, sigma2, **kw)
            total += 1
            if abs(est.value - exact) > 3 * est.stderr:
                bad.append(f"{fam}/{name}")
    dt = time.perf_counter() - t0
    report(5, {"within 3 SE": not bad, "runtime<60s": dt < 60},
           f"{total - len(bad)}/{total} within 3 SE over {len(cases)} cases, {dt:.1f}s")


def test_6_neumann_fidelity(report):
    t0 = time.perf_counter()
    g = build_grid_graph(20, 20)
    Q = precision_tar_c(g, 1.0)
    res = covariance_with_method(Q, NeumannConfig(tail_tol=1e-8), family="tar-c", theta=1.0,
                                 basis=NeumannBasis(g))
    err = float(np.max(np.abs(res.matrix - np.linalg.inv(Q.toarray()))))
    dt = time.perf_counter() - t0
    report(6, {"neumann path": res.method == "neumann", "max diff<1e-6": err < 1e-6,
               "runtime<5s": dt < 5},
           f"order {res.order}, max diff {err:.1e}, {dt:.2f}s")


def _reproduce(item, family, seed=0, G=500):
    t0 = time.perf_counter()
    design = SimulationDesign.item(item, seed=seed)
    data = simulate_dataset(design)
    model = PrecisionModel(family, (1.0,), graph=build_grid_graph(design.rows, design.cols))
    draws = sample_posterior(data, model, G=G, seed=seed)
    pred = kriging_predict(data, model, draws, seed=seed)
    truth = data.truth[pred.ids]
    card = score_predictions(truth, pred.point, pred.samples, pred.lower, pred.upper, 0.05)
    return draws, card, time.perf_counter() - t0


def test_7_item_b_reproduction(report):
    draws, card, dt = _reproduce("b", "tar-c")
    b0, b1 = draws.beta.mean(axis=0)
    s2 = float(draws.sigma2.mean())
    checks = {
        "beta_0": abs(b0 - 2) <= 0.1, "beta_1": abs(b1 - 5) <= 0.1, "sigma2": abs(s2 - 0.5) <= 0.1,
        "rmse": 0.10 <= card.rmse <= 0.25, "mae": 0.08 <= card.mae <= 0.20,
        "cvg": 0.88 <= card.cvg <= 0.99, "r2": card.r2 > 0.97, "runtime<60s": dt < 60,
    }
    report(7, checks, f"beta ({b0:.3f}, {b1:.3f}), sigma2 {s2:.3f}, RMSE {card.rmse:.3f}, "
                      f"MAE {card.mae:.3f}, CVG {card.cvg:.3f}, R2 {card.r2:.3f}, {dt:.1f}s")


def test_8_item_d_reproduction(report):
    draws, card, dt = _reproduce("d", "tar-s")
    s2 = float(draws.sigma2.mean())
    checks = {"sigma2": abs(s2 - 0.5) <= 0.1, "rmse": 0.35 <= card.rmse <= 0.65,
              "cvg": 0.90 <= card.cvg <= 0.99, "runtime<60s": dt < 60}
    report(8, checks, f"sigma2 {s2:.3f}, RMSE {card.rmse:.3f}, CVG {card.cvg:.3f}, {dt:.1f}s")


def test_9_comparison_direction(report):
    t0 = time.perf_counter()
    R = 10
    study = {
        "b": ("tar-c", "car"),
        "a": ("tar-c", "car"),
        "d": ("tar-s", "sar"),
        "c": ("tar-s", "sar"),
    }
    med = {}
    for item, fams in study.items():
        rows = replicate_study(SimulationDesign.item(item), fams, R=R, seed=0)
        for fam in fams:
            for metric in ("rmse", "frobenius"):
                med[item, fam, metric] = median_by(rows, fam, metric)
    dt = time.perf_counter() - t0
    checks = {
        "b rmse": med["b", "tar-c", "rmse"] <= med["b", "car", "rmse"],
        "b frob": med["b", "tar-c", "frobenius"] <= med["b", "car", "frobenius"],
        "a rmse": med["a", "car", "rmse"] <= med["a", "tar-c", "rmse"],
        "d rmse": med["d", "tar-s", "rmse"] <= med["d", "sar", "rmse"],
        "d frob": med["d", "tar-s", "frobenius"] <= med["d", "sar", "frobenius"],
        "c rmse": med["c", "sar", "rmse"] <= med["c", "tar-s", "rmse"],
        "runtime<15min": dt < 900,
    }
    detail = "; ".join(
        f"{item}: " + ", ".join(f"{fam} rmse {med[item, fam, 'rmse']:.4f} "
                                f"frob {med[item, fam, 'frobenius']:.3f}" for fam in fams)
        for item, fams in study.items())
    report(9, checks, f"{detail}; {dt:.0f}s")


def test_10_motivation(report):
    t0 = time.perf_counter()
    corr = motivation_experiment(n=100, replicates=1000, k=0.5, seed=0)
    nb, rest = neighbor_correlation_summary(corr, build_grid_graph(10, 10))
    dt = time.perf_counter() - t0
    checks = {"neighbour>0.05": nb > 0.05, "non-neighbour<0.05": rest < 0.05,
              "symmetric": bool(np.array_equal(corr, corr.T)),
              "unit diagonal": bool(np.all(np.diag(corr) == 1.0)), "runtime<60s": dt < 60}
    report(10, checks, f"neighbour {nb:.3f}, non-neighbour {rest:.3f}, {dt:.1f}s")


def test_11_performance(report):
    data = simulate_dataset(SimulationDesign.item("b", seed=0))
    g = build_grid_graph(40, 40)
    model = PrecisionModel("tar-c", grid_values("0.1:10:0.1"), graph=g)
    t0 = time.perf_counter()
    draws = sample_posterior(data, model, G=500, seed=0)
    fit_sec = time.perf_counter() - t0
    t0 = time.perf_counter()
    pred = kriging_predict(data, model, draws, seed=0)
    pred_sec = time.perf_counter() - t0
    bench = benchmark_covariance_paths(build_grid_graph(20, 20), grid_values("0.1:2:0.1"))
    checks = {"fit<10s": fit_sec < 10, "predict<10s": pred_sec < 10,
              "480 predicted": pred.ids.size == 480, "cached powers faster": bench["speedup"] > 1}
    report(11, checks, f"fit {fit_sec:.2f}s over 100 deltas, predict {pred_sec:.2f}s, "
                       f"Neumann speedup {bench['speedup']:.2f}x on 20x20")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
