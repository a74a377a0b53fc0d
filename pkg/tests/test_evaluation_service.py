from collections import Counter

import numpy as np
import pandas as pd
import pytest

from app.exceptions import EmptyDataset, InvalidParams, QuotaUnsatisfiable, ShapeMismatch
from app.models.detection_model import DetectorConfig
from app.models.evaluation_model import Difficulty, Episode, EpisodeResult, EvalConfig, MethodSpec
from app.models.navigation_model import EpisodeMode, PolicyWeights, StopConfig
from app.models.training_model import QTrainConfig
from app.models.world_model import Category
from app.services import detector_service, evaluation_service, sim_service, valuelearn_service

EDGES = (0.5, 1.0, 15.0)


def _episode(world, episode_id=0):
    return Episode(
        episode_id=episode_id,
        world_index=0,
        start=sim_service.cell_pose(world, (2, 1), 0),
        category=Category.DINING_TABLE,
        shortest_distance=3.25,
        difficulty=Difficulty.MEDIUM,
        seed=episode_id,
    )


def _frame():
    return pd.DataFrame({
        "mode": ["oracle_stop"] * 8,
        "method": ["VLV"] * 4 + ["TopologicalExploration"] * 4,
        "episode_id": [0, 1, 2, 3] * 2,
        "category": ["bed", "bed", "chair", "chair"] * 2,
        "difficulty": ["easy", "hard", "easy", "hard"] * 2,
        "spl": [1.0, 0.5, 0.5, 0.0, 0.5, 0.0, 0.25, 0.0],
        "success": [True, True, True, False, True, False, True, False],
    })


def test_difficulty_quotas():
    quotas = evaluation_service.difficulty_quotas(20)
    assert [quotas[d] for d in (Difficulty.EASY, Difficulty.MEDIUM, Difficulty.HARD)] == [7, 7, 6]
    assert sum(evaluation_service.difficulty_quotas(1).values()) == 1
    assert evaluation_service.difficulty_quotas(1)[Difficulty.EASY] == 1


def test_difficulty_buckets():
    assert Difficulty.of(3.0) == Difficulty.EASY
    assert Difficulty.of(3.01) == Difficulty.MEDIUM
    assert Difficulty.of(15.0) == Difficulty.HARD
    assert Difficulty.of(15.1) is None
    assert Difficulty.of(0.0) is None


def test_spl_value():
    assert evaluation_service.spl_value(True, 5.0, 10.0) == 0.5
    assert evaluation_service.spl_value(True, 5.0, 4.0) == 1.0
    assert evaluation_service.spl_value(False, 5.0, 5.0) == 0.0
    assert evaluation_service.spl_value(True, 0.0, 3.0) == 1.0


def test_spl_and_success_rate(corridor_world):
    episodes = [_episode(corridor_world, i) for i in range(4)]
    results = [
        EpisodeResult(success=True, path_length=3.25),
        EpisodeResult(success=True, path_length=6.5),
        EpisodeResult(success=False, path_length=1.0),
        EpisodeResult(success=False, path_length=0.0),
    ]
    assert evaluation_service.spl(results, episodes) == pytest.approx(0.375)
    assert evaluation_service.sr(results) == 0.5
    with pytest.raises(ShapeMismatch):
        evaluation_service.spl(results[:3], episodes)
    with pytest.raises(EmptyDataset):
        evaluation_service.sr([])


def test_bootstrap_ci():
    assert evaluation_service.bootstrap_ci([0.4] * 10) == pytest.approx((0.4, 0.4))
    values = np.random.default_rng(0).uniform(size=200)
    lo, hi = evaluation_service.bootstrap_ci(values, samples=500, level=0.9, seed=1)
    assert lo < values.mean() < hi
    assert evaluation_service.bootstrap_ci(values, samples=500, level=0.9, seed=1) == (lo, hi)
    with pytest.raises(EmptyDataset):
        evaluation_service.bootstrap_ci([])


def test_paired_bootstrap_pvalue():
    b = np.linspace(0.0, 0.5, 30)
    assert evaluation_service.paired_bootstrap_pvalue(b + 0.2, b) == 0.0
    assert evaluation_service.paired_bootstrap_pvalue(b, b) == 1.0
    with pytest.raises(ShapeMismatch):
        evaluation_service.paired_bootstrap_pvalue(b, b[:-1])


def test_sample_episodes_meets_quotas(generated_world):
    cfg = EvalConfig(n_per_class=3, seed=2)
    episodes = evaluation_service.sample_episodes([generated_world], cfg, edges=EDGES)
    assert len(episodes) == 15
    assert Counter(e.category for e in episodes) == {c: 3 for c in Category}
    for category in Category:
        assert Counter(e.difficulty for e in episodes if e.category == category) == {d: 1 for d in Difficulty}
    for e in episodes:
        assert sim_service.pose_is_valid(generated_world, e.start)
        assert Difficulty.of(e.shortest_distance, EDGES) == e.difficulty
    again = evaluation_service.sample_episodes([generated_world], cfg, edges=EDGES)
    assert [e.start for e in again] == [e.start for e in episodes]


def test_sample_episodes_needs_every_category(room_world):
    with pytest.raises(QuotaUnsatisfiable):
        evaluation_service.sample_episodes([room_world], EvalConfig(n_per_class=3))


def test_report_entries():
    entries, table = evaluation_service.report_entries(_frame(), EvalConfig(bootstrap_samples=50))
    assert entries["oracle_stop.VLV.spl"] == "0.5000"
    assert entries["oracle_stop.VLV.sr"] == "0.7500"
    assert entries["oracle_stop.VLV.n"] == "4"
    assert entries["oracle_stop.VLV.category.bed.spl"] == "0.7500"
    assert entries["oracle_stop.TopologicalExploration.difficulty.hard.sr"] == "0.0000"
    assert float(entries["oracle_stop.VLV.spl_ci_lo"]) <= 0.5 <= float(entries["oracle_stop.VLV.spl_ci_hi"])
    assert "VLV" in table and "bed" in table


def test_ordering_entries():
    entries = evaluation_service.ordering_entries(_frame(), [("VLV", "TopologicalExploration"), ("VLV", "BC")])
    assert list(entries) == ["oracle_stop.ordering.VLV>TopologicalExploration.p"]
    assert float(entries["oracle_stop.ordering.VLV>TopologicalExploration.p"]) < 0.1


def test_run_suite_rows_in_order(corridor_world):
    methods = [
        MethodSpec(name="TopologicalExploration", weights=PolicyWeights.of((0, 0, 1))),
        MethodSpec(name="DetectionSeeker", weights=PolicyWeights.of((0, 1, 1))),
    ]
    frame = evaluation_service.run_suite(
        methods, [_episode(corridor_world)], [corridor_world], {},
        det_cfg=detector_service.perfect_detector(), jobs=2,
    )
    assert frame["method"].tolist() == ["TopologicalExploration", "DetectionSeeker"]
    assert frame["success"].all()
    assert (frame["spl"] <= 1.0).all()


def test_method_without_its_model(corridor_world):
    method = MethodSpec(name="VLV", value_source="q")
    with pytest.raises(InvalidParams):
        evaluation_service.run_method_episode(method, _episode(corridor_world), [corridor_world], {}, EpisodeMode.ORACLE_STOP)


def test_standard_methods():
    names = [m.name for m in evaluation_service.standard_methods()]
    assert names[:3] == ["TopologicalExploration", "DetectionSeeker", "VLV"]
    assert "BC" in names


def test_value_fidelity_of_exhaustive_table(corridor_world):
    quads = valuelearn_service.exhaustive_quadruples(corridor_world)
    q = valuelearn_service.train_q(quads, QTrainConfig(gamma=0.99, tabular=True))
    rho = evaluation_service.value_fidelity(q, [corridor_world], n_poses=150, seed=1, gamma=0.99)
    assert rho > 0.5
    with pytest.raises(InvalidParams):
        evaluation_service.value_fidelity(q, [])


def test_oracle_stop_bounds_policy_stop(corridor_world):
    """Both modes follow the same trajectory until the oracle ends it, so oracle stopping never scores lower"""
    methods = [
        MethodSpec(name="TopologicalExploration", weights=PolicyWeights.of((0, 0, 1))),
        MethodSpec(name="DetectionSeeker", weights=PolicyWeights.of((0, 1, 1))),
    ]
    episodes = []
    for episode_id, (cell, heading) in enumerate([((2, 1), 0), ((1, 3), 180), ((3, 2), 90), ((1, 8), 270)]):
        episode = _episode(corridor_world, episode_id)
        episodes.append(episode.model_copy(update={"start": sim_service.cell_pose(corridor_world, cell, heading)}))
    common = dict(stop_cfg=StopConfig(tau_c=0.3), det_cfg=DetectorConfig(seed=1))
    oracle = evaluation_service.run_suite(methods, episodes, [corridor_world], {}, mode=EpisodeMode.ORACLE_STOP, **common)
    policy = evaluation_service.run_suite(methods, episodes, [corridor_world], {}, mode=EpisodeMode.POLICY_STOP, **common)
    assert oracle["episode_id"].tolist() == policy["episode_id"].tolist()
    assert (oracle["spl"].to_numpy() >= policy["spl"].to_numpy() - 1e-12).all()
    assert (oracle["success"].to_numpy() >= policy["success"].to_numpy()).all()
    for method in ("TopologicalExploration", "DetectionSeeker"):
        assert oracle[oracle["method"] == method]["spl"].mean() >= policy[policy["method"] == method]["spl"].mean()
