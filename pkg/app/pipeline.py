# app/pipeline.py
"""
One-round private k-means: the user-side encoder (project, rescale, clip,
representative chain, feed both oracles) and the analyst-side decoder
(build the net tree, cluster its representative set, average the
high-dimensional vector sums per cluster).
"""

from __future__ import annotations

import logging
import math
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Iterator, Literal

import numpy as np

from app.config import settings
from app.core_types import (
    CenterSet,
    WeightedPointSet,
    check_in_unit_ball,
    cost,
    kmeans_pp,
    nearest_centers,
)
from app.dp_oracles.base import FrequencyOracle, PrivacyParams, VectorSumOracle
from app.dp_oracles.exact import ExactOracle, slot_keys
from app.dp_oracles.local import (
    LocalFrequencyOracle,
    LocalVectorOracle,
    basic_user,
    explicit_hist_encode_batch,
    explicit_hist_vector_encode_batch,
    key_level,
)
from app.dp_oracles.randomness import RunStreams, SharedRandomness
from app.dp_oracles.shuffle import (
    CentralNoiseFrequencyOracle,
    ShuffleConfig,
    ShuffleVectorOracle,
    run_shuffle_bvs,
    shuffle_bvs_encode,
)
from app.dp_oracles.wire import LocalTranscript
from app.net_tree import (
    NetTree,
    TreeParams,
    build_tree,
    quantization_bound,
    representative_set,
)
from app.nets import NetFamily
from schemas.results import ClusterOut, RunParamsOut, RunResult

logger = logging.getLogger(__name__)

Model = Literal["local", "shuffle", "exact"]


# -----------------------------
# Parameters
# -----------------------------
@dataclass(frozen=True)
class ProjectionConfig:
    d: int
    d_prime: int
    Lambda: float
    c_dprime: float
    basis: np.ndarray  # d x d' with orthonormal columns; P = basis.T

    @classmethod
    def derive(
        cls,
        n: int,
        d: int,
        k: int,
        alpha_tilde: float,
        beta_tilde: float,
        beta: float,
        seed: np.random.SeedSequence | int,
        c_dprime: float = 8.0,
        floor: int = 4,
        override: int | None = None,
    ) -> "ProjectionConfig":
        if override is not None:
            d_prime = min(d, max(1, int(override)))
        else:
            want = math.ceil(c_dprime * math.log2(k / beta_tilde) / alpha_tilde**2)
            d_prime = min(d, max(floor, want))
        Lambda = math.sqrt(0.01 / math.log(max(n, 1) / beta) * d / d_prime)
        g = np.random.default_rng(seed).standard_normal((d, d_prime))
        q, r = np.linalg.qr(g)
        # fix column signs so the basis is a function of the seed alone
        q = q * np.where(np.diag(r) < 0, -1.0, 1.0)[None, :]
        return cls(d=d, d_prime=d_prime, Lambda=Lambda, c_dprime=c_dprime, basis=q)

    @property
    def P(self) -> np.ndarray:
        return self.basis.T

    def project(self, X: np.ndarray) -> np.ndarray:
        return np.atleast_2d(np.asarray(X, dtype=float)) @ self.basis

    def rescale(self, X_proj: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Lambda * x when ||x|| <= 1/Lambda, the origin otherwise; also the clip mask."""
        norms = np.linalg.norm(X_proj, axis=1)
        clipped = norms > 1.0 / self.Lambda
        out = self.Lambda * X_proj
        out[clipped] = 0.0
        return out, clipped


@dataclass(frozen=True)
class PipelineConfig:
    n: int
    d: int
    k: int
    privacy: PrivacyParams
    alpha: float
    xi: float
    alpha_tilde: float
    beta_tilde: float
    oracle_beta: float
    tree: TreeParams
    family: NetFamily
    projection: ProjectionConfig
    hist_privacy: PrivacyParams
    vec_privacy: PrivacyParams
    share_constant: float = 3.0
    lloyd_iters: int = 10
    materialize_limit: int = 2_000_000

    @property
    def T(self) -> int:
        return self.family.levels

    def echo(self, model: Model, seed: int) -> RunParamsOut:
        tp = self.tree
        return RunParamsOut(
            model=model,
            variant="net-tree",
            n=self.n,
            d=self.d,
            k=self.k,
            epsilon=self.privacy.epsilon,
            delta=self.privacy.delta,
            alpha=self.alpha,
            beta=self.privacy.beta,
            seed=seed,
            xi=self.xi,
            alpha_tilde=self.alpha_tilde,
            beta_tilde=self.beta_tilde,
            oracle_beta=self.oracle_beta,
            c_dprime=self.projection.c_dprime,
            d_prime=self.projection.d_prime,
            Lambda=self.projection.Lambda,
            gamma=tp.gamma,
            theta=tp.theta,
            a=tp.a,
            T=tp.T,
            Gamma=tp.Gamma,
            node_budget=tp.node_budget,
        )


def derive_params(
    n: int,
    d: int,
    k: int,
    epsilon: float,
    delta: float,
    alpha: float,
    beta: float,
    seed: np.random.SeedSequence | int = 0,
    c_dprime: float | None = None,
    dprime_floor: int | None = None,
    dprime_override: int | None = None,
) -> PipelineConfig:
    if n < 1 or d < 1 or k < 1:
        raise ValueError("n, d and k must be >= 1")
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    privacy = PrivacyParams(epsilon, delta, beta)

    xi = 0.1 * alpha
    alpha_tilde = 0.1 * alpha
    beta_tilde = 0.1 * beta
    projection = ProjectionConfig.derive(
        n,
        d,
        k,
        alpha_tilde,
        beta_tilde,
        beta,
        seed,
        c_dprime=settings.dprime_constant if c_dprime is None else c_dprime,
        floor=settings.dprime_floor if dprime_floor is None else dprime_floor,
        override=settings.dprime_override if dprime_override is None else dprime_override,
    )
    tree, family = TreeParams.for_run(n, k, xi, projection.d_prime)
    half = privacy.scaled(0.5)
    cfg = PipelineConfig(
        n=n,
        d=d,
        k=k,
        privacy=privacy,
        alpha=alpha,
        xi=xi,
        alpha_tilde=alpha_tilde,
        beta_tilde=beta_tilde,
        oracle_beta=0.1 * beta / tree.node_budget,
        tree=tree,
        family=family,
        projection=projection,
        hist_privacy=half,
        vec_privacy=half,
        share_constant=settings.share_constant,
        lloyd_iters=settings.lloyd_iters,
        materialize_limit=settings.shuffle_materialize_limit,
    )
    logger.info(
        "PARAMS: n=%s d=%s k=%s d_prime=%s Lambda=%.6g T=%s Gamma=%s",
        n,
        d,
        k,
        projection.d_prime,
        projection.Lambda,
        tree.T,
        tree.Gamma,
    )
    return cfg


def shuffle_config(cfg: PipelineConfig, noise: bool = True) -> ShuffleConfig:
    """Vector-summation protocol over n*T basic users at (eps/2T, delta/2T)."""
    per_slot = cfg.vec_privacy.split(cfg.T)
    per_slot = PrivacyParams(per_slot.epsilon, per_slot.delta, cfg.beta_tilde)
    return ShuffleConfig.derive(cfg.n * cfg.T, cfg.d, per_slot, cfg.share_constant, noise=noise)


# -----------------------------
# Encoder
# -----------------------------
def chain_slots(family: NetFamily, X_scaled: np.ndarray) -> np.ndarray:
    """Key rows [level, grid...] of the chain nodes at levels 1..T, shape (n, T, d'+1)."""
    chain = family.decode_chain(X_scaled)
    n = chain[0].shape[0]
    out = np.empty((n, family.levels, family.dimension + 1), dtype=np.int64)
    for level in range(1, family.levels + 1):
        out[:, level - 1, 0] = level
        out[:, level - 1, 1:] = chain[level]
    return out


def level_slot(key: bytes) -> int:
    return key_level(key) - 1


@dataclass
class EncodedUsers:
    """Encoder outputs for a batch of users; rows are users."""

    chains: np.ndarray  # (n, T, d'+1) key rows
    clipped: np.ndarray  # (n,) bool
    hist: np.ndarray | None = None  # (n, T) signs, local model
    vectors: np.ndarray | None = None  # (n, T, d) privatized, local model
    messages: list[np.ndarray] = field(default_factory=list)  # shuffle model, per user


def _scaled_points(X: np.ndarray, cfg: PipelineConfig) -> tuple[np.ndarray, np.ndarray]:
    return cfg.projection.rescale(cfg.projection.project(X))


def encode_users(
    X: np.ndarray,
    users: np.ndarray,
    cfg: PipelineConfig,
    Z: SharedRandomness,
    rng: np.random.Generator,
    model: Model = "local",
    shuffle_cfg: ShuffleConfig | None = None,
) -> EncodedUsers:
    """
    Every output row depends only on that user's point, index, the public
    configuration, Z and encoder randomness.

    `model="shuffle"` emits each user's full message set. `run_pipeline` skips
    it and hands the same (point, slot key) rows to `run_shuffle_bvs`, which
    aggregates to the identical residue table.
    """
    pts = np.atleast_2d(np.asarray(X, dtype=float))
    check_in_unit_ball(pts)
    users = np.asarray(users, dtype=np.int64)
    scaled, clipped = _scaled_points(pts, cfg)
    chains = chain_slots(cfg.family, scaled)
    out = EncodedUsers(chains=chains, clipped=clipped)
    n, T = chains.shape[0], cfg.T

    if model == "local":
        keys = slot_keys(chains)
        hashes = Z.bucket_hashes(keys)
        basic = basic_user(np.repeat(users, T), np.tile(np.arange(T), n), T)
        eps_h = cfg.hist_privacy.split(T).epsilon
        eps_v = cfg.vec_privacy.split(T).epsilon
        out.hist = explicit_hist_encode_batch(hashes, basic, eps_h, Z, rng).reshape(n, T)
        out.vectors = explicit_hist_vector_encode_batch(
            hashes, np.repeat(pts, T, axis=0), basic, eps_v, Z, rng
        ).reshape(n, T, cfg.d)
    elif model == "shuffle":
        if shuffle_cfg is None:
            raise ValueError("the shuffle model needs a ShuffleConfig")
        for row in range(n):
            keys = slot_keys(chains[row])
            out.messages.append(
                np.concatenate(
                    [
                        shuffle_bvs_encode(
                            pts[row], key, int(basic_user(users[row], t, T)), shuffle_cfg, Z, rng
                        )
                        for t, key in enumerate(keys)
                    ]
                )
            )
    return out


def encode_user(
    x: np.ndarray,
    user: int,
    cfg: PipelineConfig,
    Z: SharedRandomness,
    rng: np.random.Generator,
    model: Model = "local",
    shuffle_cfg: ShuffleConfig | None = None,
) -> EncodedUsers:
    return encode_users(np.asarray(x, dtype=float)[None, :], np.array([user]), cfg, Z, rng, model, shuffle_cfg)


# -----------------------------
# Decoder
# -----------------------------
@dataclass
class ClusteringResult:
    centers: CenterSet
    cluster_weights: np.ndarray
    cluster_norms: np.ndarray
    tree: NetTree | None = None
    representatives: WeightedPointSet | None = None
    quantization: float = 0.0


def decode(
    freq_oracle: FrequencyOracle,
    vec_oracle: VectorSumOracle,
    cfg: PipelineConfig,
    seed: np.random.SeedSequence | int,
) -> ClusteringResult:
    tree = build_tree(cfg.family, cfg.tree, freq_oracle, root_frequency=cfg.n)
    reps = representative_set(tree)
    proposal = kmeans_pp(reps, cfg.k, seed=seed, lloyd_iters=cfg.lloyd_iters)

    leaf_idx = tree.leaf_indices()
    labels = nearest_centers(reps.points, proposal.centers)
    leaf_keys = [tree.nodes[i].key for i in leaf_idx]
    bucket_mask = np.array([tree.nodes[i].level > 0 for i in leaf_idx], dtype=bool)

    sums = np.zeros((len(leaf_idx), cfg.d))
    if np.any(bucket_mask):
        # the root is not a bucket; a root leaf only occurs for an empty run
        sums[bucket_mask] = vec_oracle.vector_sums([k for k, b in zip(leaf_keys, bucket_mask) if b])

    weights = np.zeros(cfg.k)
    vsums = np.zeros((cfg.k, cfg.d))
    np.add.at(weights, labels, reps.weights)
    np.add.at(vsums, labels, sums)

    centers = vsums / np.maximum(1.0, weights)[:, None]
    norms = np.linalg.norm(centers, axis=1)
    over = norms > 1.0
    centers[over] /= norms[over, None]

    quant = quantization_bound(tree, cfg.family)
    logger.info("DECODE: leaves=%s clusters=%s quantization=%.6g", len(leaf_idx), cfg.k, quant)
    return ClusteringResult(
        centers=CenterSet(centers),
        cluster_weights=weights,
        cluster_norms=np.linalg.norm(vsums, axis=1),
        tree=tree,
        representatives=reps,
        quantization=quant,
    )


# -----------------------------
# End-to-end runs
# -----------------------------
class PhaseTimer:
    def __init__(self) -> None:
        self.phases: dict[str, float] = {}

    @contextmanager
    def phase(self, name: str) -> Iterator[None]:
        start = time.perf_counter()
        try:
            yield
        finally:
            self.phases[name] = self.phases.get(name, 0.0) + time.perf_counter() - start
            logger.info("TIMING: phase=%s seconds=%.3f", name, self.phases[name])


@dataclass
class RunOutcome:
    result: ClusteringResult
    cfg: PipelineConfig
    encoded: EncodedUsers
    timings: dict[str, float]
    transcript: LocalTranscript | None = None
    shuffled: np.ndarray | None = None


def _users_of(dataset: WeightedPointSet) -> np.ndarray:
    X = dataset.as_users()
    check_in_unit_ball(X)
    return X


def run_pipeline(
    dataset: WeightedPointSet,
    model: Model,
    k: int,
    epsilon: float,
    delta: float,
    alpha: float,
    beta: float,
    seed: int = 0,
    dprime_override: int | None = None,
    shuffle_noise: bool = True,
) -> RunOutcome:
    """Encode every user independently, then decode once."""
    timer = PhaseTimer()
    streams = RunStreams.from_seed(seed)
    X = _users_of(dataset)
    n = X.shape[0]
    cfg = derive_params(
        max(n, 1), dataset.dimension, k, epsilon, delta, alpha, beta, streams.projection, dprime_override=dprime_override
    )
    Z = streams.shared
    rng = np.random.default_rng(streams.encoder)
    users = np.arange(n)

    with timer.phase("encode"):
        encoded = encode_users(X, users, cfg, Z, rng, model="local" if model == "local" else "exact")

    transcript = None
    shuffled = None
    with timer.phase("aggregate"):
        if model == "exact":
            exact = ExactOracle(encoded.chains, X)
            freq_oracle, vec_oracle = exact, exact
        elif model == "local":
            transcript = LocalTranscript(encoded.hist, encoded.vectors)
            freq_oracle = LocalFrequencyOracle(encoded.hist, cfg.hist_privacy.split(cfg.T), Z, level_slot)
            vec_oracle = LocalVectorOracle(encoded.vectors, Z, level_slot)
        else:
            exact = ExactOracle(encoded.chains, dimension=cfg.d)
            freq_oracle = CentralNoiseFrequencyOracle(exact, cfg.hist_privacy, cfg.T, Z)
            scfg = shuffle_config(cfg, noise=shuffle_noise)
            residues, shuffled = run_shuffle_bvs(
                np.repeat(X, cfg.T, axis=0),
                slot_keys(encoded.chains),
                scfg,
                Z,
                rng,
                cfg.materialize_limit,
            )
            vec_oracle = ShuffleVectorOracle(residues, scfg, Z)

    with timer.phase("decode"):
        result = decode(freq_oracle, vec_oracle, cfg, streams.algorithm)

    logger.info("RUN: model=%s n=%s clipped=%s", model, n, int(encoded.clipped.sum()))
    return RunOutcome(result, cfg, encoded, timer.phases, transcript, shuffled)


def run_local(dataset: WeightedPointSet, k: int, epsilon: float, alpha: float, beta: float, seed: int = 0, **kw) -> RunOutcome:
    return run_pipeline(dataset, "local", k, epsilon, 0.0, alpha, beta, seed, **kw)


def run_shuffle(
    dataset: WeightedPointSet, k: int, epsilon: float, delta: float, alpha: float, beta: float, seed: int = 0, **kw
) -> RunOutcome:
    return run_pipeline(dataset, "shuffle", k, epsilon, delta, alpha, beta, seed, **kw)


def run_exact(
    dataset: WeightedPointSet, k: int, alpha: float, beta: float, seed: int = 0, epsilon: float = 1.0, **kw
) -> RunOutcome:
    """Both oracles exact; `epsilon` is only echoed."""
    return run_pipeline(dataset, "exact", k, epsilon, 0.0, alpha, beta, seed, **kw)


def objectives(dataset: WeightedPointSet, centers: CenterSet) -> tuple[float, float, float]:
    """(objective, normalized objective, trivial normalized objective)."""
    n = max(dataset.total_weight, 1.0)
    obj = cost(dataset, centers) if dataset.size else 0.0
    origin = CenterSet(np.zeros((1, dataset.dimension)))
    trivial = cost(dataset, origin) if dataset.size else 0.0
    return obj, obj / n, trivial / n


def to_result(
    outcome: RunOutcome,
    dataset: WeightedPointSet,
    model: Model,
    seed: int,
    timings: bool = False,
) -> RunResult:
    res = outcome.result
    obj, norm_obj, trivial = objectives(dataset, res.centers)
    cfg = outcome.cfg
    scale = cfg.d / (cfg.projection.d_prime * cfg.projection.Lambda**2)
    return RunResult(
        centers=res.centers.as_lists(),
        normalized_objective=norm_obj,
        objective=obj,
        trivial_objective=trivial,
        params=cfg.echo(model, seed),
        tree=res.tree.stats() if res.tree is not None else None,
        clusters=[
            ClusterOut(weight=float(w), vector_norm=float(v))
            for w, v in zip(res.cluster_weights, res.cluster_norms)
        ],
        clipped=int(outcome.encoded.clipped.sum()),
        quantization_bound=scale * res.quantization,
        timings=dict(outcome.timings) if timings else None,
    )
