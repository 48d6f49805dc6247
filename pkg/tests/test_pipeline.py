import json
import math

import numpy as np
import pytest

from app.config import settings
from app.core_types import (
    CenterSet,
    Partition,
    WeightedPointSet,
    centroid,
    cost,
    kmeans_pp,
    partition_opt_cost,
)
from app.dp_oracles.exact import ExactOracle, slot_keys
from app.dp_oracles.randomness import SharedRandomness
from app.dp_oracles.shuffle import residue_table, run_shuffle_bvs
from app.pipeline import (
    PhaseTimer,
    ProjectionConfig,
    chain_slots,
    decode,
    derive_params,
    encode_user,
    encode_users,
    objectives,
    run_exact,
    run_local,
    run_pipeline,
    run_shuffle,
    shuffle_config,
    to_result,
)


# -----------------------------
# Parameters
# -----------------------------
def test_derived_constants():
    cfg = derive_params(1000, 50, 8, 2.0, 0.0, 1.0, 0.1, seed=0, dprime_override=2)
    assert cfg.xi == pytest.approx(0.1)
    assert cfg.alpha_tilde == pytest.approx(0.1)
    assert cfg.beta_tilde == pytest.approx(0.01)
    assert cfg.hist_privacy.epsilon == pytest.approx(1.0)
    assert cfg.vec_privacy.epsilon == pytest.approx(1.0)
    assert cfg.projection.d_prime == 2
    assert cfg.oracle_beta == pytest.approx(0.01 / cfg.tree.node_budget)


def test_projected_dimension_formula():
    cfg = ProjectionConfig.derive(1000, 10_000, 8, 0.1, 0.01, 0.1, seed=0, c_dprime=0.01, floor=4)
    # ceil(0.01 * log2(800) / 0.01) = 10
    assert cfg.d_prime == 10
    small = ProjectionConfig.derive(1000, 3, 8, 0.1, 0.01, 0.1, seed=0)
    assert small.d_prime == 3


def test_two_users_give_one_level():
    cfg = derive_params(2, 4, 1, 1.0, 0.0, 1.0, 0.1, dprime_override=2)
    assert cfg.tree.Gamma == 1
    assert cfg.T == 1


@pytest.mark.parametrize("alpha", [0.0, 1.5])
def test_alpha_range(alpha):
    with pytest.raises(ValueError):
        derive_params(10, 4, 2, 1.0, 0.0, alpha, 0.1, dprime_override=2)


def test_projection_basis_is_orthonormal_and_seeded():
    a = ProjectionConfig.derive(500, 12, 2, 0.1, 0.01, 0.1, seed=5, override=4)
    b = ProjectionConfig.derive(500, 12, 2, 0.1, 0.01, 0.1, seed=5, override=4)
    assert np.allclose(a.P @ a.P.T, np.eye(4), atol=1e-9)
    assert np.array_equal(a.basis, b.basis)
    assert a.Lambda > 0


def test_projection_preserves_cost_on_average(rng, ball_points):
    d, d_prime, alpha_tilde = 60, 30, 0.1
    S = WeightedPointSet.from_points(ball_points(rng, 120, d))
    phi = Partition(rng.integers(0, 3, S.size), 3)
    base = partition_opt_cost(S, phi)[0]
    ratios = []
    for seed in range(50):
        proj = ProjectionConfig.derive(120, d, 3, alpha_tilde, 0.01, 0.1, seed=seed, override=d_prime)
        projected = WeightedPointSet(proj.project(S.points), S.weights)
        ratios.append(d * partition_opt_cost(projected, phi)[0] / (d_prime * base))
    ratios = np.array(ratios)
    spread = 3.0 * ratios.std()
    assert abs(ratios.mean() - 1.0) <= spread / math.sqrt(len(ratios))
    assert ratios.min() >= 1.0 / (1.0 + alpha_tilde) - spread
    assert ratios.max() <= 1.0 + alpha_tilde + spread


def test_rescaling_scales_cost_by_lambda_squared(rng, ball_points):
    proj = ProjectionConfig.derive(500, 40, 2, 0.1, 0.01, 0.1, seed=3, override=4)
    projected = proj.project(ball_points(rng, 200, 40))
    scaled, clipped = proj.rescale(projected)
    assert np.all(np.linalg.norm(scaled, axis=1) <= 1.0 + 1e-12)
    kept = ~clipped
    assert kept.any()
    S_proj = WeightedPointSet.from_points(projected[kept])
    S_scaled = WeightedPointSet.from_points(scaled[kept])
    C = CenterSet(rng.standard_normal((2, 4)) * 0.1)
    C_scaled = CenterSet(proj.Lambda * C.centers)
    assert cost(S_scaled, C_scaled) == pytest.approx(proj.Lambda**2 * cost(S_proj, C))
    # centers found on the scaled points map back with the same cost ratio
    back = CenterSet(C_scaled.centers / proj.Lambda)
    assert cost(S_proj, back) == pytest.approx(cost(S_scaled, C_scaled) / proj.Lambda**2)


def test_rescale_clips_long_projections():
    proj = ProjectionConfig(d=2, d_prime=2, Lambda=2.0, c_dprime=8.0, basis=np.eye(2))
    out, clipped = proj.rescale(np.array([[0.6, 0.0], [0.1, 0.0]]))
    assert clipped.tolist() == [True, False]
    assert np.allclose(out, [[0.0, 0.0], [0.2, 0.0]])


def test_shuffle_config_counts_basic_users():
    cfg = derive_params(64, 4, 2, 1.0, 1e-6, 1.0, 0.1, dprime_override=2)
    scfg = shuffle_config(cfg)
    assert scfg.n == 64 * cfg.T
    assert scfg.d == 4
    assert scfg.s == int(np.ceil(2 * 64 * cfg.T / cfg.beta_tilde))


# -----------------------------
# Encoder
# -----------------------------
def test_clipped_user_takes_the_origin_chain(Z, rng):
    cfg = derive_params(64, 4, 2, 1.0, 0.0, 1.0, 0.1, dprime_override=2)
    chains = chain_slots(cfg.family, np.zeros((1, 2)))
    assert np.all(chains[0, :, 1:] == 0)
    assert chains[0, :, 0].tolist() == list(range(1, cfg.T + 1))
    enc = encode_user(np.array([0.5, 0.0, 0.0, 0.0]), 3, cfg, Z, rng)
    assert enc.hist.shape == (1, cfg.T)
    assert enc.vectors.shape == (1, cfg.T, 4)
    assert not enc.clipped[0]


def test_encoder_rejects_points_outside_ball(Z, rng):
    cfg = derive_params(64, 2, 2, 1.0, 0.0, 1.0, 0.1, dprime_override=2)
    with pytest.raises(ValueError):
        encode_users(np.array([[1.2, 0.0]]), np.array([0]), cfg, Z, rng)


def test_shuffle_encoder_needs_config(Z, rng):
    cfg = derive_params(64, 2, 2, 1.0, 1e-6, 1.0, 0.1, dprime_override=2)
    with pytest.raises(ValueError):
        encode_users(np.array([[0.1, 0.0]]), np.array([0]), cfg, Z, rng, model="shuffle")


def test_shuffle_encoder_emits_all_slots(Z, rng):
    cfg = derive_params(4, 2, 1, 1.0, 1e-3, 1.0, 0.1, dprime_override=2)
    scfg = shuffle_config(cfg)
    enc = encode_user(np.array([0.3, 0.1]), 0, cfg, Z, rng, model="shuffle", shuffle_cfg=scfg)
    assert enc.messages[0].size == cfg.T * scfg.s * scfg.d * scfg.m


def test_shuffle_encoder_and_protocol_run_agree(Z, rng, ball_points):
    cfg = derive_params(4, 2, 1, 1.0, 1e-3, 1.0, 0.1, dprime_override=2)
    scfg = shuffle_config(cfg, noise=False)
    X = ball_points(rng, 4, 2, radius=0.9)
    enc = encode_users(X, np.arange(4), cfg, Z, rng, model="shuffle", shuffle_cfg=scfg)
    table = residue_table(np.concatenate(enc.messages), scfg)
    expected, _ = run_shuffle_bvs(
        np.repeat(X, cfg.T, axis=0), slot_keys(enc.chains), scfg, Z, np.random.default_rng(0), materialize_limit=0
    )
    assert np.array_equal(table, expected.dense())


# -----------------------------
# Decoder
# -----------------------------
def test_decode_with_exact_oracles_recovers_the_mean(rng, ball_points):
    X = ball_points(rng, 40, 4, radius=0.9)
    cfg = derive_params(40, 4, 1, 1.0, 0.0, 1.0, 0.1, seed=1, dprime_override=2)
    Z = SharedRandomness.from_seed(1)
    enc = encode_users(X, np.arange(40), cfg, Z, rng, model="exact")
    oracle = ExactOracle(enc.chains, X)
    result = decode(oracle, oracle, cfg, seed=3)
    assert np.allclose(result.centers.centers[0], X.mean(axis=0))
    assert result.cluster_weights.sum() == pytest.approx(40.0)
    assert result.representatives.total_weight == pytest.approx(40.0)


def test_exact_run_single_cluster(small_mixture):
    outcome = run_exact(small_mixture, k=1, alpha=1.0, beta=0.1, seed=2, dprime_override=2)
    assert np.allclose(outcome.result.centers.centers[0], centroid(small_mixture))
    assert outcome.transcript is None
    assert set(outcome.timings) == {"encode", "aggregate", "decode"}


def test_exact_run_objective_is_close_to_kmeans(small_mixture):
    outcome = run_exact(small_mixture, k=2, alpha=1.0, beta=0.1, seed=0, dprime_override=2)
    result = to_result(outcome, small_mixture, "exact", 0)
    reference = cost(small_mixture, kmeans_pp(small_mixture, 2, seed=0))
    assert result.objective <= 2.0 * reference + result.quantization_bound
    assert result.params.epsilon == 1.0


def test_local_run_shapes_and_determinism(small_mixture):
    a = run_local(small_mixture, k=2, epsilon=1.0, alpha=1.0, beta=0.1, seed=4, dprime_override=2)
    b = run_local(small_mixture, k=2, epsilon=1.0, alpha=1.0, beta=0.1, seed=4, dprime_override=2)
    C = a.result.centers.centers
    assert C.shape == (2, small_mixture.dimension)
    assert np.all(np.linalg.norm(C, axis=1) <= 1.0 + 1e-12)
    assert np.array_equal(C, b.result.centers.centers)
    n = int(small_mixture.total_weight)
    assert a.transcript.bits.shape == (n, a.cfg.T)
    assert a.transcript.vectors.shape == (n, a.cfg.T, small_mixture.dimension)
    assert len(a.result.tree) <= a.cfg.tree.node_budget


def test_result_json_is_reproducible(small_mixture):
    runs = [
        to_result(run_local(small_mixture, 2, 2.0, 1.0, 0.1, seed=8, dprime_override=2), small_mixture, "local", 8)
        for _ in range(2)
    ]
    assert runs[0].to_json() == runs[1].to_json()
    body = json.loads(runs[0].to_json())
    assert body["params"]["d_prime"] == 2
    assert "timings" not in body


def test_large_budget_shuffle_run(small_mixture):
    outcome = run_shuffle(
        small_mixture, k=1, epsilon=1e6, delta=1e-6, alpha=1.0, beta=0.1, seed=3,
        dprime_override=2, shuffle_noise=False,
    )
    # histogram noise vanishes at this budget, so the tree sees exact counts
    assert outcome.result.cluster_weights.sum() == pytest.approx(small_mixture.total_weight)
    assert np.linalg.norm(outcome.result.centers.centers[0]) <= 1.0 + 1e-12
    # above the materialization limit the residue table is simulated
    assert outcome.shuffled is None


def test_small_shuffle_run_keeps_messages(monkeypatch):
    monkeypatch.setattr(settings, "shuffle_materialize_limit", 10**9)
    data = WeightedPointSet.from_points([[0.2, 0.1], [0.1, -0.3], [-0.4, 0.2], [0.0, 0.5]])
    outcome = run_shuffle(data, k=1, epsilon=1.0, delta=1e-3, alpha=1.0, beta=0.1, seed=1, dprime_override=2)
    assert outcome.shuffled is not None
    scfg = shuffle_config(outcome.cfg)
    assert residue_table(outcome.shuffled, scfg).shape == (scfg.s, scfg.d)


def test_shuffle_model_needs_delta(small_mixture):
    with pytest.raises(ValueError):
        run_shuffle(small_mixture, 2, 1.0, 0.0, 1.0, 0.1, dprime_override=2)


def test_objectives_against_origin(square):
    obj, norm, trivial = objectives(square, CenterSet([[0.5, 0.5]]))
    assert obj == pytest.approx(2.0)
    assert norm == pytest.approx(0.5)
    assert trivial == pytest.approx(4.0 / 4)


def test_phase_timer_accumulates():
    timer = PhaseTimer()
    for _ in range(2):
        with timer.phase("work"):
            pass
    assert list(timer.phases) == ["work"]
    assert timer.phases["work"] >= 0.0


# -----------------------------
# Exact mode against the non-private solver
# -----------------------------
def _exact_mode_check(k, d, n, seeds):
    from app.bench_service import MixtureConfig, generate_mixture

    for seed in seeds:
        data = generate_mixture(MixtureConfig(k_true=k, n=n, d=d, r=16.0, seed=seed))
        outcome = run_pipeline(data, "exact", k, 1.0, 0.0, 1.0, 0.1, seed=seed, dprime_override=2)
        result = to_result(outcome, data, "exact", seed)
        reference = cost(data, kmeans_pp(data, k, seed=seed))
        assert result.objective <= 2.0 * reference + result.quantization_bound


def test_exact_mode_bound_small():
    _exact_mode_check(k=2, d=6, n=80, seeds=range(3))


@pytest.mark.slow
def test_exact_mode_bound_full():
    _exact_mode_check(k=4, d=20, n=2000, seeds=range(10))
