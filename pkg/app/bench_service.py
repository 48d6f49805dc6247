# app/bench_service.py
"""
Benchmark side: Gaussian-mixture datasets, the SimHash-forest variant,
baseline arms and experiment sweeps with CSV and gnuplot output.
"""

from __future__ import annotations

import itertools
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable

import numpy as np
import pandas as pd

from app.config import settings
from app.core_types import CenterSet, WeightedPointSet, check_in_unit_ball, kmeans_pp
from app.dp_oracles.exact import ExactOracle, slot_keys
from app.dp_oracles.local import (
    explicit_hist_decode_many,
    explicit_hist_encode_batch,
    explicit_hist_vector_decode_many,
    explicit_hist_vector_encode_batch,
)
from app.dp_oracles.randomness import RunStreams
from app.pipeline import ClusteringResult, PhaseTimer, objectives, run_pipeline, to_result
from schemas.results import BaselineResult, ClusterOut, RunParamsOut, RunResult
from schemas.trees import TreeStatsOut

logger = logging.getLogger(__name__)


# -----------------------------
# Datasets
# -----------------------------
@dataclass(frozen=True)
class MixtureConfig:
    k_true: int
    n: int
    d: int
    r: float
    seed: int = 0

    def __post_init__(self) -> None:
        if self.k_true < 1 or self.n < 1 or self.d < 1:
            raise ValueError("mixture needs k_true, n, d >= 1")
        if not self.r > 2:
            raise ValueError(f"separation ratio must exceed 2, got {self.r}")


def mixture_points(cfg: MixtureConfig) -> tuple[np.ndarray, np.ndarray]:
    """Raw points in generation order plus their component labels."""
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(1)[0])
    radius = 1.0 - 2.0 / cfg.r
    dirs = rng.standard_normal((cfg.k_true, cfg.d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    centers = radius * dirs

    labels = np.arange(cfg.n) % cfg.k_true
    noise = rng.standard_normal((cfg.n, cfg.d)) * ((1.0 / cfg.r) / math.sqrt(cfg.d))
    X = centers[labels] + noise
    norms = np.linalg.norm(X, axis=1)
    X /= np.maximum(norms, 1.0)[:, None]
    return X, labels


def generate_mixture(cfg: MixtureConfig) -> WeightedPointSet:
    X, _ = mixture_points(cfg)
    return WeightedPointSet.from_points(X)


# -----------------------------
# SimHash forest
# -----------------------------
@dataclass(frozen=True)
class LshConfig:
    d: int
    k: int
    seed: int = 0
    levels: int = 0
    threshold_factor: float = 1.5
    hist_fraction: float = 0.1
    vec_fraction: float = 0.9
    split_levels: bool = False
    hyperplanes: np.ndarray = field(default=None, repr=False)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        if self.levels <= 0:
            object.__setattr__(self, "levels", math.ceil(math.log2(self.k)) + 3 if self.k > 1 else 3)
        if self.hyperplanes is None:
            rng = np.random.default_rng(np.random.SeedSequence(self.seed).spawn(2)[1])
            object.__setattr__(self, "hyperplanes", rng.standard_normal((self.levels, self.d)))
        if not math.isclose(self.hist_fraction + self.vec_fraction, 1.0):
            raise ValueError("budget fractions must sum to 1")
        if self.threshold_factor <= 0:
            raise ValueError("threshold factor must be positive")

    def threshold(self, n_level: int) -> float:
        return self.threshold_factor * (n_level // self.k)


def simhash_bits(X: np.ndarray, cfg: LshConfig) -> np.ndarray:
    return (np.atleast_2d(np.asarray(X, dtype=float)) @ cfg.hyperplanes.T > 0).astype(np.int64)


def simhash_chain(x, cfg: LshConfig) -> list[tuple[int, ...]]:
    """Level-i signature is the first i sign bits; level 0 is empty."""
    bits = simhash_bits(np.asarray(x, dtype=float).reshape(1, -1), cfg)[0]
    return [tuple(int(b) for b in bits[:i]) for i in range(cfg.levels + 1)]


def _lsh_key_rows(bits: np.ndarray, level: int, levels: int) -> np.ndarray:
    """[level, b_1..b_level, 0...] so keys are injective across levels."""
    rows = np.zeros((bits.shape[0], levels + 1), dtype=np.int64)
    rows[:, 0] = level
    rows[:, 1 : level + 1] = bits[:, :level]
    return rows


@dataclass
class LshOutcome:
    result: ClusteringResult
    stats: TreeStatsOut
    n_by_level: list[int]


def lsh_private_kmeans(
    dataset: WeightedPointSet,
    k: int,
    epsilon: float,
    cfg: LshConfig,
    seed: int = 0,
    exact: bool = False,
    lloyd_iters: int | None = None,
) -> LshOutcome:
    """
    SimHash tree with frequency-threshold branching; node centers are noisy
    means and k-means++ runs on the weighted leaf centers.
    """
    X = dataset.as_users()
    check_in_unit_ball(X)
    n, T = X.shape[0], cfg.levels
    streams = RunStreams.from_seed(seed)
    Z = streams.shared
    rng = np.random.default_rng(streams.encoder)
    bits = simhash_bits(X, cfg)

    if cfg.split_levels:
        groups = np.array_split(rng.permutation(n), T)
        eps_h, eps_v = cfg.hist_fraction * epsilon, cfg.vec_fraction * epsilon
    else:
        groups = [np.arange(n)] * T
        eps_h, eps_v = cfg.hist_fraction * epsilon / T, cfg.vec_fraction * epsilon / T

    # per level: contributing users, their basic indices and encoded messages
    levels: list[dict[str, Any]] = []
    for level in range(1, T + 1):
        members = np.sort(groups[level - 1])
        keys = slot_keys(_lsh_key_rows(bits[members], level, T))
        basic = members * T + (level - 1)
        entry: dict[str, Any] = {"n": int(members.size), "basic": basic}
        if exact:
            entry["oracle"] = ExactOracle(_lsh_key_rows(bits[members], level, T)[:, None, :], X[members])
        else:
            hashes = Z.bucket_hashes(keys)
            entry["hist"] = explicit_hist_encode_batch(hashes, basic, eps_h, Z, rng)
            entry["vec"] = explicit_hist_vector_encode_batch(hashes, X[members], basic, eps_v, Z, rng)
        levels.append(entry)

    def query(level: int, keys: list[bytes]) -> tuple[np.ndarray, np.ndarray]:
        e = levels[level - 1]
        if exact:
            return e["oracle"].frequencies(keys), e["oracle"].vector_sums(keys)
        f = explicit_hist_decode_many(keys, e["hist"], eps_h, Z, e["basic"])
        v = explicit_hist_vector_decode_many(keys, e["vec"], Z, e["basic"])
        return f, v

    # breadth-first growth; the root always expands
    frontier = [np.zeros(0, dtype=np.int64)]
    leaf_sigs: list[tuple[int, np.ndarray]] = []
    leaf_f: list[float] = []
    leaf_v: list[np.ndarray] = []
    total_nodes = 1
    depth = 0
    for level in range(1, T + 1):
        sigs = [np.append(p, b) for p in frontier for b in (0, 1)]
        rows = np.array(sigs, dtype=np.int64).reshape(len(sigs), level)
        keys = slot_keys(_lsh_key_rows(rows, level, T))
        f, v = query(level, keys)
        total_nodes += len(sigs)
        depth = level
        cut = cfg.threshold(levels[level - 1]["n"])
        frontier = []
        for sig, fi, vi in zip(sigs, f, v):
            if level < T and fi >= cut:
                frontier.append(sig)
            else:
                leaf_sigs.append((level, sig))
                leaf_f.append(float(fi))
                leaf_v.append(vi)
        logger.info("LSH: level=%s nodes=%s expanded=%s threshold=%s", level, len(sigs), len(frontier), cut)
        if not frontier:
            break

    f_arr = np.maximum(np.array(leaf_f), 0.0)
    v_arr = np.array(leaf_v)
    node_centers = v_arr / np.maximum(1.0, np.array(leaf_f))[:, None]
    norms = np.linalg.norm(node_centers, axis=1)
    node_centers[norms > 1.0] /= norms[norms > 1.0, None]

    reps = WeightedPointSet.from_points(node_centers, f_arr)
    centers = kmeans_pp(
        reps,
        k,
        seed=streams.algorithm,
        lloyd_iters=settings.lloyd_iters if lloyd_iters is None else lloyd_iters,
    )
    c = centers.centers.copy()
    cn = np.linalg.norm(c, axis=1)
    c[cn > 1.0] /= cn[cn > 1.0, None]

    labels = np.argmin(((node_centers[:, None, :] - c[None, :, :]) ** 2).sum(axis=2), axis=1)
    weights = np.zeros(k)
    vsums = np.zeros((k, X.shape[1]))
    np.add.at(weights, labels, f_arr)
    np.add.at(vsums, labels, v_arr)
    stats = TreeStatsOut(nodes=total_nodes, leaves=len(leaf_sigs), depth=depth, taus=[], node_budget=0)
    result = ClusteringResult(CenterSet(c), weights, np.linalg.norm(vsums, axis=1), representatives=reps)
    return LshOutcome(result, stats, [e["n"] for e in levels])


def lsh_result(
    outcome: LshOutcome,
    dataset: WeightedPointSet,
    cfg: LshConfig,
    k: int,
    epsilon: float,
    seed: int,
    exact: bool = False,
    timings: dict[str, float] | None = None,
) -> RunResult:
    obj, norm_obj, trivial = objectives(dataset, outcome.result.centers)
    n = int(round(dataset.total_weight))
    return RunResult(
        centers=outcome.result.centers.as_lists(),
        normalized_objective=norm_obj,
        objective=obj,
        trivial_objective=trivial,
        params=RunParamsOut(
            model="exact" if exact else "local",
            variant="lsh",
            n=n,
            d=dataset.dimension,
            k=k,
            epsilon=epsilon,
            delta=0.0,
            alpha=1.0,
            beta=0.1,
            seed=seed,
            lsh_levels=cfg.levels,
            branch_threshold=cfg.threshold(n),
            split_levels=cfg.split_levels,
        ),
        tree=outcome.stats,
        clusters=[
            ClusterOut(weight=float(w), vector_norm=float(v))
            for w, v in zip(outcome.result.cluster_weights, outcome.result.cluster_norms)
        ],
        timings=timings,
    )


# -----------------------------
# Single runs
# -----------------------------
def execute_run(
    dataset: WeightedPointSet,
    model: str,
    k: int,
    epsilon: float,
    delta: float = 0.0,
    alpha: float = 1.0,
    beta: float = 0.1,
    seed: int = 0,
    variant: str = "net-tree",
    dprime: int | None = None,
    split_levels: bool = False,
    timings: bool = False,
) -> RunResult:
    """One run of either variant, reported as a result file."""
    if model not in ("local", "shuffle", "exact"):
        raise ValueError(f"unknown model {model!r}")
    if variant == "net-tree":
        outcome = run_pipeline(dataset, model, k, epsilon, delta, alpha, beta, seed, dprime_override=dprime)
        return to_result(outcome, dataset, model, seed, timings=timings)
    if variant != "lsh":
        raise ValueError(f"unknown variant {variant!r}")
    if model == "shuffle":
        raise ValueError("the lsh variant runs in the local or exact model only")

    timer = PhaseTimer()
    cfg = LshConfig(d=dataset.dimension, k=k, seed=seed, split_levels=split_levels)
    with timer.phase("lsh"):
        lsh = lsh_private_kmeans(dataset, k, epsilon, cfg, seed=seed, exact=model == "exact")
    return lsh_result(lsh, dataset, cfg, k, epsilon, seed, exact=model == "exact", timings=timer.phases if timings else None)


# -----------------------------
# Baselines
# -----------------------------
def trivial_baseline(dataset: WeightedPointSet) -> CenterSet:
    return CenterSet(np.zeros((1, dataset.dimension)))


def naive_sigma(epsilon: float, delta: float) -> float:
    if not delta > 0:
        raise ValueError("the Gaussian baseline needs delta > 0")
    return 2.0 * math.sqrt(2.0 * math.log(1.25 / delta)) / epsilon


def naive_baseline(
    dataset: WeightedPointSet, k: int, epsilon: float, delta: float, seed: int = 0
) -> CenterSet:
    """Each user perturbs its own point; k-means++ on the noisy points."""
    X = dataset.as_users()
    streams = RunStreams.from_seed(seed)
    rng = np.random.default_rng(streams.encoder)
    noisy = X + rng.standard_normal(X.shape) * naive_sigma(epsilon, delta)
    centers = kmeans_pp(WeightedPointSet.from_points(noisy), k, seed=streams.algorithm).centers.copy()
    norms = np.linalg.norm(centers, axis=1)
    centers[norms > 1.0] /= norms[norms > 1.0, None]
    return CenterSet(centers)


def baseline_result(
    dataset: WeightedPointSet,
    arm: str,
    k: int,
    epsilon: float | None,
    delta: float | None,
    seed: int,
) -> BaselineResult:
    if arm == "trivial":
        centers = trivial_baseline(dataset)
    elif arm == "naive":
        centers = naive_baseline(dataset, k, float(epsilon), float(delta), seed)
    else:
        raise ValueError(f"unknown baseline arm {arm!r}")
    obj, norm_obj, trivial = objectives(dataset, centers)
    return BaselineResult(
        arm=arm,
        centers=centers.as_lists(),
        normalized_objective=norm_obj,
        objective=obj,
        trivial_objective=trivial,
        n=int(round(dataset.total_weight)),
        d=dataset.dimension,
        k=centers.k,
        epsilon=epsilon if arm == "naive" else None,
        delta=delta if arm == "naive" else None,
        seed=seed,
    )


# -----------------------------
# Sweeps
# -----------------------------
PLAN_DEFAULTS: dict[str, Any] = {
    "variant": "lsh",
    "model": "local",
    "n": 10_000,
    "d": 100,
    "k": 8,
    "k_true": None,
    "r": 100.0,
    "epsilon": 1.0,
    "delta": 1e-6,
    "alpha": 1.0,
    "beta": 0.1,
    "split_levels": False,
    "dprime": None,
}
_INT_KEYS = {"n", "d", "k", "k_true", "dprime"}
_FLOAT_KEYS = {"r", "epsilon", "delta", "alpha", "beta"}


def _parse_value(key: str, raw: str) -> Any:
    raw = raw.strip()
    if key in _INT_KEYS:
        return int(float(raw))
    if key in _FLOAT_KEYS:
        return float(raw)
    if key == "split_levels":
        return raw.lower() in ("1", "true", "yes", "on")
    return raw


def parse_plan(text: str) -> list[dict[str, Any]]:
    """
    `key = v1, v2, ...` lines; '#' starts a comment. The plan is the cartesian
    product of all listed values, in line order.
    """
    axes: dict[str, list[Any]] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"plan line {lineno}: expected key = values")
        key, values = (part.strip() for part in line.split("=", 1))
        if key not in PLAN_DEFAULTS:
            raise ValueError(f"plan line {lineno}: unknown key {key!r}")
        items = [v for v in values.split(",") if v.strip()]
        if not items:
            raise ValueError(f"plan line {lineno}: no values for {key!r}")
        axes[key] = [_parse_value(key, v) for v in items]
    if not axes:
        return []

    keys = list(axes)
    plan = []
    for combo in itertools.product(*(axes[k] for k in keys)):
        setting = dict(PLAN_DEFAULTS)
        setting.update(zip(keys, combo))
        if setting["k_true"] is None:
            setting["k_true"] = setting["k"]
        plan.append(setting)
    return plan


def run_seed(base_seed: int, setting_index: int, run: int) -> int:
    ss = np.random.SeedSequence([base_seed, setting_index, run])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def run_setting(setting: dict[str, Any], seed: int) -> dict[str, float]:
    """One seeded run of one setting: dataset, private arm, both baselines."""
    data = generate_mixture(
        MixtureConfig(setting["k_true"], setting["n"], setting["d"], setting["r"], seed=seed)
    )
    k, eps = setting["k"], setting["epsilon"]
    if setting["variant"] == "lsh":
        cfg = LshConfig(d=setting["d"], k=k, seed=seed, split_levels=setting["split_levels"])
        outcome = lsh_private_kmeans(data, k, eps, cfg, seed=seed, exact=setting["model"] == "exact")
        centers = outcome.result.centers
    else:
        outcome = run_pipeline(
            data,
            setting["model"],
            k,
            eps,
            setting["delta"],
            setting["alpha"],
            setting["beta"],
            seed,
            dprime_override=setting["dprime"],
        )
        centers = outcome.result.centers
    _, objective, trivial = objectives(data, centers)
    _, naive, _ = objectives(data, naive_baseline(data, k, eps, setting["delta"], seed))
    return {"objective": objective, "trivial_objective": trivial, "naive_objective": naive}


@dataclass
class ExperimentResult:
    rows: pd.DataFrame
    summary: pd.DataFrame

    def write(self, out_dir: str | Path, stem: str = "sweep") -> tuple[Path, Path, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        rows_path = out / f"{stem}_runs.csv"
        summary_path = out / f"{stem}_summary.csv"
        self.rows.to_csv(rows_path, index=False, lineterminator="\n", float_format="%.10g")
        self.summary.to_csv(summary_path, index=False, lineterminator="\n", float_format="%.10g")
        script_path = out / f"{stem}.gp"
        script_path.write_text(gnuplot_script(self.summary, summary_path.name))
        logger.info("SWEEP: wrote %s, %s, %s", rows_path, summary_path, script_path)
        return rows_path, summary_path, script_path


SETTING_COLUMNS = list(PLAN_DEFAULTS)
METRICS = ["objective", "trivial_objective", "naive_objective"]


def _run_job(job: tuple[int, dict[str, Any], int, int]) -> dict[str, Any]:
    idx, setting, run, seed = job
    metrics = run_setting(setting, seed)
    return {"setting": idx, **setting, "run": run, "seed": seed, **metrics}


def sweep(
    plan: Iterable[dict[str, Any]], repeats: int = 10, base_seed: int = 0, workers: int = 1
) -> ExperimentResult:
    """
    `repeats` seeded runs per setting. With workers > 1 the (setting, run)
    pairs run in a process pool; rows keep plan order either way.
    """
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    jobs = [
        (idx, setting, run, run_seed(base_seed, idx, run))
        for idx, setting in enumerate(plan)
        for run in range(repeats)
    ]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_run_job, jobs))
    else:
        records = [_run_job(job) for job in jobs]
    for rec in records:
        logger.info("SWEEP: setting=%s run=%s objective=%.6g", rec["setting"], rec["run"], rec["objective"])

    rows = pd.DataFrame.from_records(records, columns=["setting", *SETTING_COLUMNS, "run", "seed", *METRICS])
    if rows.empty:
        return ExperimentResult(rows, pd.DataFrame(columns=["setting", *SETTING_COLUMNS, "runs"]))
    grouped = rows.groupby("setting", sort=True)
    summary = grouped[SETTING_COLUMNS].first()
    summary["runs"] = grouped["run"].count()
    for metric in METRICS:
        summary[f"{metric}_mean"] = grouped[metric].mean()
        # population std so a single run reports 0
        summary[f"{metric}_std"] = grouped[metric].std(ddof=0)
    return ExperimentResult(rows, summary.reset_index())


def gnuplot_script(summary: pd.DataFrame, data_file: str) -> str:
    """Mean objective with std error bars against the first varying column."""
    varying = [c for c in SETTING_COLUMNS if c in summary and summary[c].nunique(dropna=False) > 1]
    x_col = varying[0] if varying else "setting"
    columns = list(summary.columns)
    x = columns.index(x_col) + 1
    lines = [
        "set datafile separator ','",
        "set key autotitle columnhead",
        f"set xlabel '{x_col}'",
        "set ylabel 'normalized k-means objective'",
    ]
    if x_col == "n":
        lines.append("set logscale x")
    plots = [
        f"'{data_file}' using {x}:{columns.index(m + '_mean') + 1}:{columns.index(m + '_std') + 1} "
        f"with yerrorlines title '{m}'"
        for m in METRICS
    ]
    lines.append("plot " + ", \\\n     ".join(plots))
    return "\n".join(lines) + "\n"


__all__ = [
    "MixtureConfig",
    "LshConfig",
    "ExperimentResult",
    "generate_mixture",
    "mixture_points",
    "simhash_chain",
    "lsh_private_kmeans",
    "lsh_result",
    "execute_run",
    "trivial_baseline",
    "naive_baseline",
    "baseline_result",
    "parse_plan",
    "sweep",
]
