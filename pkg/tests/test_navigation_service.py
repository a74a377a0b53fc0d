import math

import numpy as np
import pytest

from app.exceptions import HeapExhausted, InvalidParams
from app.models.detection_model import Detection
from app.models.evaluation_model import EpisodeResult
from app.models.navigation_model import (
    EpisodeMode,
    NavConfig,
    NavOutcome,
    PolicyWeights,
    ReasoningRecord,
    StopConfig,
)
from app.models.sim_model import N_HEADINGS, OBS_DIM, Pose
from app.models.world_model import Category
from app.services import detector_service, nn_service, navigation_service, sim_service
from app.services.navigation_service import TopologicalGraph, score_direction
from app.services.occupancy_service import OccupancyGrid
from app.services.valuelearn_service import BCPolicy

WEIGHTS = PolicyWeights(lambda1=1.0, lambda2=1.0, lambda3=1.0)
NO_VIEWS = np.zeros((N_HEADINGS, OBS_DIM))


def test_score_direction():
    assert score_direction(0.8, 0.8, 6.0, WEIGHTS) == pytest.approx(2.8)
    assert score_direction(0.7, 0.4, 6.0, WEIGHTS) == pytest.approx(0.9)
    assert score_direction(0.8, 0.8, 12.0, WEIGHTS) == pytest.approx(2.6)
    assert score_direction(0.8, 0.8, math.inf, WEIGHTS) == pytest.approx(2.6)


def test_score_direction_gate_is_inclusive():
    assert score_direction(0.0, 0.5, math.inf, WEIGHTS) == pytest.approx(1.5)


def test_stopping_check():
    cfg = StopConfig(tau_c=0.75, d_c={"bed": 1.0})

    def bed(confidence, distance):
        return Detection(category=Category.BED, confidence=confidence, est_distance=distance)

    assert navigation_service.stopping_check([bed(0.8, 0.9)], cfg, Category.BED)
    assert not navigation_service.stopping_check([bed(0.8, 1.1)], cfg, Category.BED)
    assert not navigation_service.stopping_check([bed(0.7, 0.5)], cfg, Category.BED)
    assert not navigation_service.stopping_check([bed(0.9, 0.5)], cfg, Category.CHAIR)


def test_heap_pops_best_score_then_lowest_ids():
    graph = TopologicalGraph()
    pose = Pose(x=1.0, y=1.0, heading=0)
    first = [0.1] * N_HEADINGS
    first[3] = 0.9
    second = [0.1] * N_HEADINGS
    second[0] = 0.9
    graph.add_node(pose, NO_VIEWS, first)
    graph.add_node(pose, NO_VIEWS, second)

    order = [(e.node_id, e.direction) for e in (graph.pop(), graph.pop(), graph.pop())]
    assert order == [(0, 3), (1, 0), (0, 0)]
    assert graph.log[0].heap_size == 2 * N_HEADINGS


def test_heap_size_grows_by_eleven_per_node():
    graph = TopologicalGraph()
    rng = np.random.default_rng(0)
    for n in range(1, 6):
        graph.add_node(Pose(x=float(n), y=1.0, heading=0), NO_VIEWS, rng.uniform(size=N_HEADINGS).tolist())
        graph.pop()
        assert graph.log[-1].heap_size == 11 * n + 1


def test_heap_size_counts_every_pop():
    """A retry after an infeasible direction pops without adding a node"""
    graph = TopologicalGraph()
    pose = Pose(x=1.0, y=1.0, heading=0)
    graph.add_node(pose, NO_VIEWS, [0.5] * N_HEADINGS)
    graph.pop()
    graph.pop()
    graph.add_node(pose, NO_VIEWS, [0.5] * N_HEADINGS)
    graph.pop()
    assert [e.heap_size for e in graph.log] == [12, 11, 22]
    for entry in graph.log:
        assert entry.heap_size == N_HEADINGS * entry.nodes - entry.pops_before


def test_heap_exhaustion():
    graph = TopologicalGraph()
    graph.add_node(Pose(x=1.0, y=1.0, heading=0), NO_VIEWS, [0.0] * N_HEADINGS)
    for _ in range(N_HEADINGS):
        graph.pop()
    with pytest.raises(HeapExhausted):
        graph.pop()


def test_add_node_needs_twelve_scores():
    with pytest.raises(InvalidParams):
        TopologicalGraph().add_node(Pose(x=1.0, y=1.0, heading=0), NO_VIEWS, [0.0] * 11)


def test_sample_goals_follow_the_node_heading():
    graph = TopologicalGraph()
    node = graph.add_node(Pose(x=5.0, y=5.0, heading=90), NO_VIEWS, [0.0] * N_HEADINGS)
    goals = navigation_service.sample_goals(node, 1, np.random.default_rng(3), NavConfig(k_goals=200))
    assert len(goals) == 200
    for x, y in goals:
        angle = math.degrees(math.atan2(y - 5.0, x - 5.0)) % 360
        radius = math.hypot(x - 5.0, y - 5.0)
        assert 113.0 - 1e-9 <= angle <= 127.0 + 1e-9
        assert 1.0 - 1e-9 <= radius <= 2.0 + 1e-9


def test_low_level_reaches_goal_on_known_map(corridor_world):
    grid = OccupancyGrid.for_world(corridor_world)
    grid.cells = corridor_world.cells.astype(np.int8)
    pose = sim_service.cell_pose(corridor_world, (2, 5), 0)
    goal = (10.5 * 0.25, 2.5 * 0.25)
    result = navigation_service.low_level_navigate(corridor_world, pose, [goal], grid)
    assert result.outcome == NavOutcome.SUCCESS
    assert result.goal == goal
    assert math.hypot(result.pose.x - goal[0], result.pose.y - goal[1]) <= 0.25 + 1e-9
    assert result.steps in (4, 5)
    assert result.path_length == pytest.approx(0.25 * result.steps)


def test_low_level_infeasible_across_wall(sealed_world):
    grid = OccupancyGrid.for_world(sealed_world, inflation=0)
    grid.cells = sealed_world.cells.astype(np.int8)
    pose = sim_service.cell_pose(sealed_world, (3, 2), 0)
    result = navigation_service.low_level_navigate(sealed_world, pose, [(9.5 * 0.25, 1.5 * 0.25)], grid)
    assert result.outcome == NavOutcome.INFEASIBLE
    assert result.steps == 0


def test_low_level_needs_goals(corridor_world):
    grid = OccupancyGrid.for_world(corridor_world)
    with pytest.raises(InvalidParams):
        navigation_service.low_level_navigate(corridor_world, sim_service.cell_pose(corridor_world, (2, 5)), [], grid)


def test_oracle_stop_episode_in_corridor(corridor_world):
    """Straight corridor toward the table: the episode ends inside the success region"""
    start = sim_service.cell_pose(corridor_world, (2, 1), 0)
    result = navigation_service.run_episode(
        corridor_world, start, Category.DINING_TABLE, None, WEIGHTS,
        det_cfg=detector_service.perfect_detector(), seed=1,
    )
    assert result.success
    assert result.stop_event == "oracle_stop"
    assert result.final_distance == 0.0
    assert [s.event for s in result.trajectory[1:13]] == ["panorama"] * 12
    assert result.trajectory[0].action == "start"
    assert result.n_nodes >= 1
    for entry in result.heap_log:
        assert entry.heap_size == N_HEADINGS * entry.nodes - entry.pops_before


def test_episode_in_sealed_world_fails(sealed_world):
    start = sim_service.cell_pose(sealed_world, (3, 2), 0)
    result = navigation_service.run_episode(
        sealed_world, start, Category.DINING_TABLE, None, WEIGHTS,
        nav_cfg=NavConfig(budget=150), det_cfg=detector_service.perfect_detector(),
    )
    assert not result.success
    assert result.steps <= 150
    assert result.stop_event in ("budget", "heap_exhausted")
    assert math.isinf(result.final_distance)


def test_episode_rejects_blocked_start(corridor_world):
    with pytest.raises(InvalidParams):
        navigation_service.run_episode(corridor_world, Pose(x=0.1, y=0.1, heading=0), Category.BED, None, WEIGHTS)


def test_calibration_mode_logs_reasoning(corridor_world):
    start = sim_service.cell_pose(corridor_world, (2, 1), 0)
    result = navigation_service.run_episode(
        corridor_world, start, Category.DINING_TABLE, None, WEIGHTS,
        mode=EpisodeMode.CALIBRATION, nav_cfg=NavConfig(budget=60),
        det_cfg=detector_service.perfect_detector(),
    )
    assert result.reasoning
    assert result.reasoning[0].steps == N_HEADINGS
    assert result.stop_event in ("budget", "heap_exhausted")


def test_reactive_episode_spends_budget(corridor_world):
    net = nn_service.init_mlp((OBS_DIM + 5, 8, 3), np.random.default_rng(0))
    start = sim_service.cell_pose(corridor_world, (2, 1), 180)
    result = navigation_service.run_reactive_episode(
        corridor_world, start, Category.DINING_TABLE, BCPolicy(net=net), nav_cfg=NavConfig(budget=20),
    )
    assert result.steps == 20
    assert result.stop_event == "budget"
    assert len(result.trajectory) == 21


def _calibration_run():
    records = [
        ReasoningRecord(steps=12, path_length=2.0, true_distance=1.0, detections=[(0.9, 1.8)]),
        ReasoningRecord(steps=30, path_length=3.0, true_distance=0.0, detections=[(0.9, 0.9)]),
    ]
    return EpisodeResult(reasoning=records)


def test_replay_policy_stop():
    run = _calibration_run()
    assert navigation_service.replay_policy_stop(run.reasoning, 2.5, 0.75, 1.0) == pytest.approx(2.5 / 3.0)
    assert navigation_service.replay_policy_stop(run.reasoning, 2.5, 0.75, 2.0) == 0.0
    assert navigation_service.replay_policy_stop(run.reasoning, 2.5, 0.95, 1.0) == 0.0


def test_calibrate_dc_picks_best_grid_value():
    cfg = navigation_service.calibrate_dc({Category.BED: [(2.5, _calibration_run())]}, grid=(0.5, 1.0, 2.0))
    assert cfg.d_c[Category.BED] == 1.0
    assert cfg.d_c[Category.CHAIR] == 1.0
    with pytest.raises(InvalidParams):
        navigation_service.calibrate_dc({}, grid=())


def test_stop_config_file(tmp_path):
    cfg = StopConfig(tau_c=0.8, d_c={"bed": 1.25, "toilet": 0.5})
    path = tmp_path / "stop.txt"
    navigation_service.save_stop_config(cfg, str(path), "abcdefabcdef")
    loaded, config_hash = navigation_service.load_stop_config(str(path))
    assert config_hash == "abcdefabcdef"
    assert loaded.tau_c == 0.8
    assert loaded.d_c[Category.BED] == 1.25
    assert loaded.d_c[Category.TOILET] == 0.5
