import itertools

import numpy as np
import pytest

from app.core_types import (
    CenterSet,
    SearchSpaceTooLargeError,
    WeightedPointSet,
    cost,
    nearest_centers,
)
from app.transport import (
    TransportMap,
    candidate_center_sets,
    coreset_check,
    transport_implies_coreset,
    mt_bruteforce,
    mt_with_map,
    transport_cost_bounds,
)


def test_identity_map_on_same_set_costs_nothing(square):
    assert mt_with_map(TransportMap.identity(square), square, square) == 0.0
    value, _ = mt_bruteforce(square, square)
    assert value == 0.0


def test_short_move_beats_mismatch():
    S = WeightedPointSet.from_points([[0.0, 0.0]])
    S2 = WeightedPointSet.from_points([[0.5, 0.0]])
    value, psi = mt_bruteforce(S, S2)
    assert value == pytest.approx(0.25)
    assert np.allclose(psi.targets, [[0.5, 0.0]])


def test_long_move_loses_to_mismatch():
    S = WeightedPointSet.from_points([[-0.9, 0.0]])
    S2 = WeightedPointSet.from_points([[0.9, 0.0]])
    value, psi = mt_bruteforce(S, S2)
    assert value == pytest.approx(2.0)
    assert np.allclose(psi.targets, S.points)


def test_mass_mismatch_is_charged():
    S = WeightedPointSet.from_points([[0.2, 0.0]], [3.0])
    S2 = WeightedPointSet.from_points([[0.2, 0.0]], [1.0])
    assert mt_with_map(TransportMap.identity(S), S, S2) == pytest.approx(2.0)


def test_empty_source_pays_target_weight(square):
    value, psi = mt_bruteforce(WeightedPointSet.empty(2), square)
    assert value == pytest.approx(4.0)
    assert psi.targets.shape == (0, 2)


def test_bruteforce_is_no_worse_than_identity(rng, ball_points):
    S = WeightedPointSet.from_points(ball_points(rng, 4, 2), rng.integers(1, 4, 4))
    S2 = WeightedPointSet.from_points(ball_points(rng, 3, 2), rng.integers(1, 4, 3))
    value, psi = mt_bruteforce(S, S2)
    assert value == pytest.approx(mt_with_map(psi, S, S2))
    assert value <= mt_with_map(TransportMap.identity(S), S, S2) + 1e-12


def test_bruteforce_guard(rng, ball_points):
    S = WeightedPointSet.from_points(ball_points(rng, 8, 2))
    S2 = WeightedPointSet.from_points(ball_points(rng, 10, 2))
    with pytest.raises(SearchSpaceTooLargeError):
        mt_bruteforce(S, S2)


def _enumerated_maps(S, S2):
    options = [list(S2.points) + [y] for y in S.points]
    for choice in itertools.product(*options):
        yield TransportMap(np.array(choice))


def test_bruteforce_is_the_minimum_over_enumerated_maps(rng, ball_points):
    for _ in range(5):
        S = WeightedPointSet.from_points(ball_points(rng, 4, 2), rng.integers(1, 4, 4))
        S2 = WeightedPointSet.from_points(ball_points(rng, 3, 2), rng.integers(1, 4, 3))
        best, _ = mt_bruteforce(S, S2)
        values = [mt_with_map(psi, S, S2) for psi in _enumerated_maps(S, S2)]
        assert len(values) == 4**4
        assert best <= min(values) + 1e-12
        assert best == pytest.approx(min(values))


def test_bruteforce_beats_random_maps(rng, ball_points):
    S = WeightedPointSet.from_points(ball_points(rng, 4, 2), rng.integers(1, 4, 4))
    S2 = WeightedPointSet.from_points(ball_points(rng, 3, 2), rng.integers(1, 4, 3))
    best, _ = mt_bruteforce(S, S2)
    for _ in range(50):
        # arbitrary targets, some snapped onto support(S2)
        targets = ball_points(rng, 4, 2)
        snap = rng.random(4) < 0.5
        targets[snap] = S2.points[rng.integers(0, S2.size, int(snap.sum()))]
        assert best <= mt_with_map(TransportMap(targets), S, S2) + 1e-12


# -----------------------------
# Coreset checks
# -----------------------------
def test_set_is_its_own_exact_coreset(square):
    cands = candidate_center_sets(square, square, 2)
    report = coreset_check(square, square, 2, 0.0, 0.0, cands)
    assert report.passed
    assert report.t_observed == pytest.approx(0.0)


def test_doubled_weights_violate_tight_coreset(square):
    doubled = square.with_weights(square.weights * 2)
    cands = [CenterSet([[0.5, 0.5]])]
    report = coreset_check(square, doubled, 1, 0.5, 0.0, cands)
    assert not report.passed
    assert report.witnesses[0].side == "upper"
    assert report.gamma_observed == pytest.approx(1.0)

    loose = coreset_check(square, doubled, 1, 1.0, 0.0, cands)
    assert loose.passed
    schema = report.to_schema()
    assert schema.passed is False
    assert schema.witnesses[0].centers == [[0.5, 0.5]]


def test_coreset_check_rejects_wrong_k(square):
    with pytest.raises(ValueError):
        coreset_check(square, square, 2, 0.1, 0.0, [CenterSet([[0.0, 0.0]])])


def test_candidate_sets_have_k_centers(square):
    cands = candidate_center_sets(square, square, 3, limit=500)
    assert cands
    assert all(C.k == 3 for C in cands)
    assert len(cands) <= 500


def test_transport_inequalities_hold(rng, ball_points):
    xi = 0.5
    for _ in range(5):
        S = WeightedPointSet.from_points(ball_points(rng, 4, 2), rng.integers(1, 3, 4))
        S2 = WeightedPointSet.from_points(ball_points(rng, 3, 2), rng.integers(1, 3, 3))
        C = CenterSet(ball_points(rng, 2, 2))
        _, psi = mt_bruteforce(S, S2)
        (lhs1, rhs1), (lhs2, rhs2) = transport_cost_bounds(
            S, S2, psi, lambda P: nearest_centers(P, C.centers), C, xi
        )
        assert lhs1 <= rhs1 + 1e-9
        assert lhs2 <= rhs2 + 1e-9
        assert lhs2 == pytest.approx(cost(S2, C))


def test_small_transport_implies_coreset():
    S = WeightedPointSet.from_points([[-0.6, 0.0], [-0.5, 0.0], [0.5, 0.1], [0.6, 0.0]])
    # nudge one point a little
    S2 = WeightedPointSet.from_points([[-0.6, 0.0], [-0.5, 0.0], [0.5, 0.12], [0.6, 0.0]])
    assert transport_implies_coreset(S, S2, xi=0.5, t=0.01, k=2)


@pytest.mark.parametrize("xi", [0.1, 0.25, 0.5, 0.9])
@pytest.mark.parametrize("t", [0.0, 0.01, 0.1, 1.0])
def test_transport_implies_coreset_across_parameters(xi, t):
    rng = np.random.default_rng(int(xi * 100) + int(t * 1000))
    for _ in range(3):
        base = np.array([[-0.6, 0.0], [-0.5, 0.1], [0.5, 0.0], [0.6, -0.1]])
        pts = base + rng.normal(scale=0.05, size=base.shape)
        S = WeightedPointSet.from_points(pts, rng.integers(1, 3, 4))
        S2 = WeightedPointSet.from_points(pts + rng.normal(scale=0.02, size=pts.shape), S.weights)
        cands = candidate_center_sets(S, S2, 2, limit=2000)
        assert transport_implies_coreset(S, S2, xi=xi, t=t, k=2, candidates=cands)
