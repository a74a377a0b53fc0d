"""ObjectGoal episodes, SPL / success metrics with bootstrap intervals and the method suite"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import stats

from app.config.hyperparameters import EVAL_CONFIG, QLEARN_CONFIG
from app.exceptions import EmptyDataset, InvalidParams, QuotaUnsatisfiable, ShapeMismatch
from app.models.detection_model import DetectorConfig
from app.models.evaluation_model import Difficulty, Episode, EpisodeResult, EvalConfig, MethodSpec, MetricSummary
from app.models.navigation_model import EpisodeMode, NavConfig, PolicyWeights, StopConfig
from app.models.sim_model import N_HEADINGS, TURN_DEGREES
from app.models.world_model import Category, GridWorld
from app.services import sim_service
from app.services.navigation_service import run_episode, run_reactive_episode
from app.services.world_service import category_field, oracle_pose_value, pose_graph

logger = logging.getLogger(__name__)

DIFFICULTIES = (Difficulty.EASY, Difficulty.MEDIUM, Difficulty.HARD)


# ---------------------------------------------------------------------------
# Episodes
# ---------------------------------------------------------------------------

def difficulty_quotas(n_per_class: int) -> Dict[Difficulty, int]:
    """Split a per-category quota over easy / medium / hard as evenly as possible, easier buckets first"""
    base, extra = divmod(n_per_class, len(DIFFICULTIES))
    return {d: base + (1 if i < extra else 0) for i, d in enumerate(DIFFICULTIES)}


def sample_episodes(
    worlds: Sequence[GridWorld],
    cfg: Optional[EvalConfig] = None,
    edges: Tuple[float, float, float] = EVAL_CONFIG["difficulty_edges"],
) -> List[Episode]:
    """Rejection-sample start poses until every category x difficulty cell meets its quota"""
    cfg = cfg or EvalConfig()
    if not worlds:
        raise InvalidParams("episode sampling needs at least one world")
    quotas = difficulty_quotas(cfg.n_per_class)
    episodes: List[Episode] = []
    for category in Category:
        rng = np.random.default_rng([cfg.seed, int(category)])
        candidates = [i for i, w in enumerate(worlds) if category in w.categories_present()]
        if not candidates:
            raise QuotaUnsatisfiable(f"no world contains a {category.slug}")
        filled = {d: 0 for d in DIFFICULTIES}
        attempts = 0
        while any(filled[d] < quotas[d] for d in DIFFICULTIES):
            attempts += 1
            if attempts > cfg.max_start_attempts:
                missing = {d.value: quotas[d] - filled[d] for d in DIFFICULTIES if filled[d] < quotas[d]}
                raise QuotaUnsatisfiable(f"{category.slug}: quota not met after {cfg.max_start_attempts} attempts, missing {missing}")
            world_index = candidates[int(rng.integers(len(candidates)))]
            world = worlds[world_index]
            free = world.free_cells()
            cell = free[int(rng.integers(len(free)))]
            heading = int(rng.integers(N_HEADINGS)) * TURN_DEGREES
            start = sim_service.cell_pose(world, cell, heading)
            if not sim_service.pose_is_valid(world, start):
                continue
            distance = float(category_field(world, category)[cell])
            difficulty = Difficulty.of(distance, edges)
            if difficulty is None or filled[difficulty] >= quotas[difficulty]:
                continue
            filled[difficulty] += 1
            episodes.append(Episode(
                episode_id=len(episodes),
                world_index=world_index,
                start=start,
                category=category,
                shortest_distance=distance,
                difficulty=difficulty,
                seed=int(rng.integers(2 ** 31 - 1)),
            ))
        logger.info(f"Sampled {sum(filled.values())} {category.slug} episodes in {attempts} attempts")
    return episodes


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

def spl_value(success: bool, shortest: float, path_length: float) -> float:
    """S * l / max(p, l); a success with l = 0 counts fully"""
    if not success:
        return 0.0
    if shortest <= 0.0:
        return 1.0
    return shortest / max(path_length, shortest)


def spl_values(results: Sequence[EpisodeResult], episodes: Sequence[Episode]) -> np.ndarray:
    if len(results) != len(episodes):
        raise ShapeMismatch(f"{len(results)} results for {len(episodes)} episodes")
    return np.array([spl_value(r.success, e.shortest_distance, r.path_length) for r, e in zip(results, episodes)])


def spl(results: Sequence[EpisodeResult], episodes: Sequence[Episode]) -> float:
    if not results:
        raise EmptyDataset("SPL of zero episodes")
    return float(np.mean(spl_values(results, episodes)))


def sr(results: Sequence[EpisodeResult]) -> float:
    if not results:
        raise EmptyDataset("success rate of zero episodes")
    return float(np.mean([r.success for r in results]))


def bootstrap_ci(
    values: Sequence[float],
    samples: int = EVAL_CONFIG["bootstrap_samples"],
    level: float = EVAL_CONFIG["ci_level"],
    seed: int = 0,
) -> Tuple[float, float]:
    """Percentile bootstrap of the mean over episode resamples"""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise EmptyDataset("bootstrap of zero values")
    rng = np.random.default_rng(seed)
    index = rng.integers(0, values.size, size=(samples, values.size))
    means = values[index].mean(axis=1)
    tail = 100.0 * (1.0 - level) / 2.0
    lo, hi = np.percentile(means, [tail, 100.0 - tail])
    return float(lo), float(hi)


def paired_bootstrap_pvalue(
    a: Sequence[float],
    b: Sequence[float],
    samples: int = EVAL_CONFIG["bootstrap_samples"],
    seed: int = 0,
) -> float:
    """One-sided p-value for mean(a) > mean(b) on paired per-episode values"""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatch("paired bootstrap needs equally long samples")
    if a.size == 0:
        raise EmptyDataset("bootstrap of zero values")
    rng = np.random.default_rng(seed)
    index = rng.integers(0, a.size, size=(samples, a.size))
    differences = (a - b)[index].mean(axis=1)
    return float(np.mean(differences <= 0.0))


def summarize(values: pd.DataFrame, cfg: Optional[EvalConfig] = None) -> MetricSummary:
    cfg = cfg or EvalConfig()
    return MetricSummary(
        spl=float(values["spl"].mean()),
        spl_ci=bootstrap_ci(values["spl"].to_numpy(), cfg.bootstrap_samples, cfg.ci_level, cfg.seed),
        sr=float(values["success"].mean()),
        sr_ci=bootstrap_ci(values["success"].to_numpy(dtype=np.float64), cfg.bootstrap_samples, cfg.ci_level, cfg.seed),
        n=int(len(values)),
    )


# ---------------------------------------------------------------------------
# Suite
# ---------------------------------------------------------------------------

def standard_methods() -> List[MethodSpec]:
    """Baselines and the full method; value_source names the model each one reads"""
    return [
        MethodSpec(name="TopologicalExploration", weights=PolicyWeights.of((0, 0, 1))),
        MethodSpec(name="DetectionSeeker", weights=PolicyWeights.of((0, 1, 1))),
        MethodSpec(name="VLV", weights=PolicyWeights.of((1, 1, 1)), value_source="q"),
        MethodSpec(name="BC", value_source="bc", reactive=True),
        MethodSpec(name="StrongSupervision", weights=PolicyWeights.of((1, 1, 1)), value_source="strong"),
        MethodSpec(name="StrongSupervision+VLV", weights=PolicyWeights.of((1, 1, 1)), value_source="strong_vlv"),
    ]


def run_method_episode(
    method: MethodSpec,
    episode: Episode,
    worlds: Sequence[GridWorld],
    models: Dict[str, object],
    mode: EpisodeMode,
    stop_cfg: Optional[StopConfig] = None,
    nav_cfg: Optional[NavConfig] = None,
    det_cfg: Optional[DetectorConfig] = None,
) -> EpisodeResult:
    world = worlds[episode.world_index]
    model = models.get(method.value_source) if method.value_source else None
    if method.value_source and model is None:
        raise InvalidParams(f"method {method.name} needs the {method.value_source} model")
    if method.reactive:
        return run_reactive_episode(
            world, episode.start, episode.category, model, stop_cfg, mode, nav_cfg, det_cfg,
            seed=episode.seed, episode_id=episode.episode_id,
        )
    return run_episode(
        world, episode.start, episode.category, model, method.weights, stop_cfg, mode, nav_cfg, det_cfg,
        seed=episode.seed, episode_id=episode.episode_id,
    )


def run_suite(
    methods: Sequence[MethodSpec],
    episodes: Sequence[Episode],
    worlds: Sequence[GridWorld],
    models: Dict[str, object],
    mode: EpisodeMode = EpisodeMode.ORACLE_STOP,
    stop_cfg: Optional[StopConfig] = None,
    nav_cfg: Optional[NavConfig] = None,
    det_cfg: Optional[DetectorConfig] = None,
    jobs: int = 1,
) -> pd.DataFrame:
    """One row per (method, episode); episodes run in parallel, rows come back in canonical order"""
    if not episodes:
        raise EmptyDataset("no episodes to evaluate")
    rows = []
    for method in methods:
        tasks = [(method, ep) for ep in episodes]
        with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
            results = list(pool.map(
                lambda task: run_method_episode(task[0], task[1], worlds, models, mode, stop_cfg, nav_cfg, det_cfg),
                tasks,
            ))
        for ep, result in zip(episodes, results):
            rows.append({
                "mode": mode.value,
                "method": method.name,
                "episode_id": ep.episode_id,
                "category": ep.category.slug,
                "difficulty": ep.difficulty.value,
                "shortest": ep.shortest_distance,
                "success": bool(result.success),
                "spl": spl_value(result.success, ep.shortest_distance, result.path_length),
                "path_length": result.path_length,
                "steps": result.steps,
                "stop_event": result.stop_event,
            })
        done = [r for r in rows if r["method"] == method.name]
        logger.info(f"{mode.value} {method.name}: SPL {np.mean([r['spl'] for r in done]):.3f}, SR {np.mean([r['success'] for r in done]):.3f}")
    return pd.DataFrame(rows)


def report_entries(frame: pd.DataFrame, cfg: Optional[EvalConfig] = None) -> Tuple[Dict[str, str], str]:
    """Flat `mode.method.metric` keys plus an aligned per-category table"""
    cfg = cfg or EvalConfig()
    entries: Dict[str, str] = {}
    table_rows = []
    for (mode, method), group in frame.groupby(["mode", "method"], sort=False):
        summary = summarize(group, cfg)
        prefix = f"{mode}.{method}"
        entries[f"{prefix}.spl"] = f"{summary.spl:.4f}"
        entries[f"{prefix}.spl_ci_lo"] = f"{summary.spl_ci[0]:.4f}"
        entries[f"{prefix}.spl_ci_hi"] = f"{summary.spl_ci[1]:.4f}"
        entries[f"{prefix}.sr"] = f"{summary.sr:.4f}"
        entries[f"{prefix}.sr_ci_lo"] = f"{summary.sr_ci[0]:.4f}"
        entries[f"{prefix}.sr_ci_hi"] = f"{summary.sr_ci[1]:.4f}"
        entries[f"{prefix}.n"] = str(summary.n)
        for column in ("category", "difficulty"):
            breakdown = group.groupby(column, sort=True).agg(spl=("spl", "mean"), sr=("success", "mean"))
            for key, row in breakdown.iterrows():
                entries[f"{prefix}.{column}.{key}.spl"] = f"{row['spl']:.4f}"
                entries[f"{prefix}.{column}.{key}.sr"] = f"{row['sr']:.4f}"
        per_category = group.groupby("category", sort=True)["spl"].mean()
        table_rows.append({"mode": mode, "method": method, "SPL": summary.spl, "SR": summary.sr, **per_category.to_dict()})
    table = pd.DataFrame(table_rows).to_string(index=False, float_format=lambda v: f"{v:.3f}") if table_rows else ""
    return entries, table


def ordering_entries(frame: pd.DataFrame, pairs: Sequence[Tuple[str, str]], cfg: Optional[EvalConfig] = None) -> Dict[str, str]:
    """Paired one-sided bootstrap p-values for `better > worse` on per-episode SPL"""
    cfg = cfg or EvalConfig()
    entries = {}
    for mode, group in frame.groupby("mode", sort=False):
        spl_by_method = group.pivot(index="episode_id", columns="method", values="spl")
        for better, worse in pairs:
            if better in spl_by_method and worse in spl_by_method:
                p = paired_bootstrap_pvalue(spl_by_method[better], spl_by_method[worse], cfg.bootstrap_samples, cfg.seed)
                entries[f"{mode}.ordering.{better}>{worse}.p"] = f"{p:.4f}"
    return entries


# ---------------------------------------------------------------------------
# Value fidelity
# ---------------------------------------------------------------------------

def value_fidelity(
    model,
    worlds: Sequence[GridWorld],
    n_poses: int = EVAL_CONFIG["fidelity_poses"],
    seed: int = 0,
    gamma: float = QLEARN_CONFIG["gamma"],
) -> float:
    """Spearman correlation between learned values and the oracle over random pose-graph nodes"""
    if not worlds:
        raise InvalidParams("value fidelity needs at least one world")
    rng = np.random.default_rng([seed, 3])
    learned, oracle = [], []
    for _ in range(n_poses):
        world = worlds[int(rng.integers(len(worlds)))]
        graph = pose_graph(world)
        node = int(rng.integers(graph.n_nodes))
        pose = graph.node_pose(node)
        values = model.values(graph.observations[node])[0]
        for category in world.categories_present():
            learned.append(values[int(category)])
            oracle.append(oracle_pose_value(world, pose, category, gamma))
    if len(learned) < 2:
        raise EmptyDataset("too few poses for a rank correlation")
    rho = stats.spearmanr(learned, oracle)[0]
    return 0.0 if math.isnan(rho) else float(rho)
