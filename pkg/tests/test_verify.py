import json

import numpy as np
import pytest

from meritopt.verify import (
    VerificationReport,
    check_neighborhood_convergence,
    check_optimizer_invariants,
    check_variance_bound,
    default_delta_scenario,
    estimate_delta,
    ideal_weights,
    simplex_grid,
)
from meritopt.weight_solver import phi_value


def test_ideal_weights():
    np.testing.assert_array_equal(ideal_weights([True, True, False]), [0.5, 0.5, 0.0])
    np.testing.assert_array_equal(ideal_weights([False, True]), [0.0, 1.0])
    with pytest.raises(ValueError, match="no source"):
        ideal_weights([False, False])


def test_simplex_grid_structure():
    grid = simplex_grid(3, 0.5)
    assert grid.shape == (6, 3)
    np.testing.assert_allclose(grid.sum(axis=1), 1.0, rtol=0, atol=1e-12)
    rows = {tuple(r) for r in grid}
    assert (1.0, 0.0, 0.0) in rows and (0.5, 0.5, 0.0) in rows

    fine = simplex_grid(2, 0.01)
    assert fine.shape == (101, 2)
    assert np.all(fine >= 0)

    with pytest.raises(ValueError, match="evenly divide"):
        simplex_grid(3, 0.3)
    with pytest.raises(ValueError, match="at least two"):
        simplex_grid(1, 0.5)


def test_simplex_grid_counts_match_combinatorics():
    # number of grid points is C(k + n - 1, n - 1)
    from math import comb

    for n, step in [(2, 0.25), (3, 0.2), (4, 0.5)]:
        k = round(1.0 / step)
        grid = simplex_grid(n, step)
        assert grid.shape[0] == comb(k + n - 1, n - 1)
        assert len({tuple(r) for r in grid}) == grid.shape[0]


def test_variance_bound_check_passes():
    report = check_variance_bound(trials=10_000)
    assert report.passed
    assert 0.2 <= report.observed["ratio"] <= 0.3
    assert report.check == "variance"


def test_variance_bound_scales_with_group_size():
    report = check_variance_bound(group_size=2, trials=10_000)
    assert report.passed
    assert abs(report.observed["ratio"] - 0.5) <= 0.1


def test_delta_estimate_on_default_scenario():
    problem, cfg, ideal = default_delta_scenario()
    report = estimate_delta(problem, cfg, ideal=ideal)
    assert report.passed
    assert report.observed["delta_hat"] >= report.thresholds["min_delta"]
    # the dense grid can only do at least as well as the hand-picked split
    assert report.observed["phi_grid_min"] <= report.observed["phi_ideal"] + 1e-9
    w_md = np.asarray(report.observed["w_md"], dtype=float)
    assert abs(w_md.sum() - 1.0) <= 1e-9
    assert phi_value(problem, w_md) == report.observed["phi_md"]


def test_delta_estimate_rejects_large_grids():
    problem, cfg, _ = default_delta_scenario()
    problem.grads.grads = np.vstack([problem.grads.grads] * 2)
    problem.grads.source_ids = tuple("abcdef")
    with pytest.raises(ValueError, match="at most 4"):
        estimate_delta(problem, cfg)


def test_neighborhood_convergence_check():
    report = check_neighborhood_convergence(steps=800)
    assert report.passed
    assert report.observed["deterministic_final_grad_norm"] <= 1e-6
    assert (
        report.observed["stochastic_min_grad_norm"]
        <= report.observed["stochastic_first_grad_norm"]
    )


def test_optimizer_invariants_check():
    report = check_optimizer_invariants()
    assert report.passed
    assert report.observed["adagrad_b_monotone"] is True
    assert report.observed["adagrad_unit_stream_exact"] is True
    assert report.observed["rmsprop_min_divisor"] >= 1e-8


def test_report_serializes_to_json():
    report = VerificationReport(
        check="demo",
        passed=True,
        observed={"vec": np.array([1.0, 2.0]), "num": np.float64(3.5), "n": np.int64(2)},
        thresholds={"cap": 1.0},
        notes="round trip",
    )
    payload = json.dumps(report.to_dict())
    back = json.loads(payload)
    assert back["observed"]["vec"] == [1.0, 2.0]
    assert back["observed"]["num"] == 3.5
    assert back["observed"]["n"] == 2
    assert back["passed"] is True
