import json

import numpy as np
import pytest

from tarspatial.errors import InvalidInputError, ParameterRangeError
from tarspatial.graph import build_grid_graph
from tarspatial.model import precision_tar_s
from tarspatial.simulate import (
    COMPARISON_METRICS,
    ConstraintSet,
    MissingSpec,
    SimulationDesign,
    median_by,
    missing_mask,
    motivation_experiment,
    neighbor_correlation_summary,
    replicate_study,
    simulate_dataset,
    write_long_csv,
    write_wide_csv,
)


def test_item_b_missing_counts():
    data = simulate_dataset(SimulationDesign.item("b"))
    assert data.n == 1600 and data.n_obs == 1120 and data.n_missing == 480
    assert np.all(np.isfinite(data.truth))
    assert np.all(np.isnan(data.y[~data.observed]))


def test_block_is_contiguous_and_random_part_outside():
    rng = np.random.default_rng(0)
    obs = missing_mask(40, 40, MissingSpec(), rng).reshape(40, 40)
    miss = ~obs
    # some 15x15 window is fully missing
    found = any(miss[r:r + 15, c:c + 15].all() for r in range(26) for c in range(26))
    assert found and miss.sum() == 480


def test_fraction_only_pattern():
    obs = missing_mask(10, 10, MissingSpec(fraction=0.3, block=(0, 0), total=None),
                       np.random.default_rng(1))
    assert (~obs).sum() == 30
    none = missing_mask(10, 10, MissingSpec(fraction=0.0, block=(0, 0), total=None),
                        np.random.default_rng(1))
    assert none.all()


def test_mask_determinism():
    a = simulate_dataset(SimulationDesign.item("d", seed=5))
    b = simulate_dataset(SimulationDesign.item("d", seed=5))
    c = simulate_dataset(SimulationDesign.item("d", seed=6))
    assert np.array_equal(a.observed, b.observed) and np.array_equal(a.truth, b.truth)
    assert not np.array_equal(a.observed, c.observed)


def test_vanishing_noise_returns_mean():
    d = SimulationDesign.item("b", rows=10, cols=10, sigma2=1e-12,
                              missing=MissingSpec(fraction=0.2, block=(3, 3), total=None))
    data = simulate_dataset(d)
    assert np.max(np.abs(data.truth - data.X @ np.array(d.beta))) < 1e-4


def test_monte_carlo_covariance_matches_precision_inverse():
    d0 = SimulationDesign(family="tar-s", rows=4, cols=4, beta=(0.0,), sigma2=0.7, theta=0.8,
                          missing=MissingSpec(fraction=0.0, block=(0, 0), total=None))
    g = build_grid_graph(4, 4)
    N = 5_000
    Y = np.array([simulate_dataset(SimulationDesign(**{**d0.__dict__, "seed": s}), g).truth
                  for s in range(N)])
    emp = Y.T @ Y / N  # mean is exactly zero
    S = np.linalg.inv(precision_tar_s(g, 0.8, 0.7).toarray())
    se = np.sqrt((np.outer(np.diag(S), np.diag(S)) + S ** 2) / N)
    assert np.all(np.abs(emp - S) < 5 * se)


@pytest.mark.parametrize("kw", [
    {"family": "sar", "theta": 1.0},
    {"family": "tar-c", "theta": 0.0},
    {"family": "car", "theta": 1.5},
    {"family": "tar-s", "theta": 1.0, "sigma2": 0.0},
])
def test_invalid_design_parameters(kw):
    with pytest.raises(ParameterRangeError):
        simulate_dataset(SimulationDesign(rows=5, cols=5, **kw))


def test_design_json_roundtrip(tmp_path):
    d = SimulationDesign.item("c", seed=3)
    d.save(tmp_path / "d.json")
    assert SimulationDesign.load(tmp_path / "d.json") == d
    (tmp_path / "bad.json").write_text("{nope")
    with pytest.raises(InvalidInputError):
        SimulationDesign.load(tmp_path / "bad.json")
    (tmp_path / "extra.json").write_text(json.dumps({"item": "a", "colour": 1}))
    with pytest.raises(InvalidInputError):
        SimulationDesign.load(tmp_path / "extra.json")
    assert SimulationDesign.from_dict({"item": "a"}).theta == -0.606
    with pytest.raises(InvalidInputError):
        SimulationDesign.item("e")


def test_block_too_large():
    with pytest.raises(InvalidInputError):
        simulate_dataset(SimulationDesign(rows=5, cols=5))


def test_replicate_study_small():
    d = SimulationDesign.item("b", rows=12, cols=12,
                              missing=MissingSpec(fraction=0.2, block=(4, 4), total=None))
    rows = replicate_study(d, ["tar-c", "car"], R=2, G=100, seed=1)
    assert len(rows) == 2 * 2 * len(COMPARISON_METRICS)
    assert {r["family"] for r in rows} == {"tar-c", "car"}
    frob = [r["value"] for r in rows if r["metric"] == "frobenius"]
    assert all(v >= 0 for v in frob)
    again = replicate_study(d, ["tar-c", "car"], R=2, G=100, seed=1)
    assert rows == again
    assert np.isfinite(median_by(rows, "car", "rmse"))
    with pytest.raises(InvalidInputError):
        replicate_study(d, ["tar-c"], R=0)


def test_replicate_study_recovers_parameters():
    d = SimulationDesign.item("d", rows=30, cols=30,
                              missing=MissingSpec(fraction=0.1, block=(5, 5), total=None))
    rows = replicate_study(d, ["tar-s"], R=1, G=300, seed=2)
    est = {r["metric"]: r["value"] for r in rows}
    assert abs(est["beta_0"] - 2) < 0.3 and abs(est["beta_1"] - 5) < 0.3
    assert abs(est["sigma2"] - 0.5) < 0.15


def test_comparison_csv_outputs(tmp_path):
    rows = [{"replicate": 0, "family": "tar-c", "metric": m, "value": 1.0}
            for m in COMPARISON_METRICS]
    write_long_csv(rows, tmp_path / "long.csv")
    write_wide_csv(rows, tmp_path / "wide.csv")
    long = (tmp_path / "long.csv").read_text().splitlines()
    wide = (tmp_path / "wide.csv").read_text().splitlines()
    assert long[0] == "replicate,family,metric,value" and len(long) == 1 + len(COMPARISON_METRICS)
    assert len(wide) == 2 and wide[0].startswith("replicate,family,")


def test_constraint_set_validation():
    with pytest.raises(ParameterRangeError):
        ConstraintSet.from_grid(3, 0.0)
    with pytest.raises(InvalidInputError):
        ConstraintSet(np.array([[0.0, 2.0], [1.0, 0.0]]), 1.0)
    cs = ConstraintSet.from_grid(4, 0.5)
    assert np.all(cs.margins(np.zeros(16)) > 0)


def test_gibbs_draws_satisfy_constraints():
    corr, draws = motivation_experiment(n=36, replicates=200, k=0.3, seed=4, burn_in=20,
                                        return_draws=True)
    cs = ConstraintSet.from_grid(6, 0.3)
    assert np.all(cs.margins(draws) >= 0)
    assert np.array_equal(corr, corr.T)
    assert np.all(np.diag(corr) == 1.0)


def test_inactive_constraints_give_independence():
    R = 1000
    corr = motivation_experiment(n=25, replicates=R, k=1e9, seed=0, burn_in=5)
    off = corr[~np.eye(25, dtype=bool)]
    assert np.all(np.abs(off) < 4 / np.sqrt(R))


def test_motivation_structure():
    corr = motivation_experiment(n=100, replicates=1000, k=0.5, seed=0)
    nb, rest = neighbor_correlation_summary(corr, build_grid_graph(10, 10))
    assert nb > 0.05 and rest < 0.05


def test_motivation_errors():
    with pytest.raises(InvalidInputError):
        motivation_experiment(n=10)
    with pytest.raises(ParameterRangeError):
        motivation_experiment(n=9, k=-1.0)
    with pytest.warns(UserWarning):
        motivation_experiment(n=9, replicates=2, burn_in=1)
