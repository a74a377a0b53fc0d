"""Hierarchical test-time policy: topological direction heap, FMM low-level control and stopping"""
import heapq
import logging
import math
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from app.config.hyperparameters import NAV_CONFIG
from app.exceptions import FormatError, GoalInObstacle, HeapExhausted, InvalidParams
from app.models.detection_model import Detection, DetectorConfig
from app.models.evaluation_model import EpisodeResult
from app.models.navigation_model import (
    DirectionEntry,
    EpisodeMode,
    HeapLogEntry,
    NavConfig,
    NavOutcome,
    NavResult,
    PolicyWeights,
    ReasoningRecord,
    StopConfig,
    TopoNode,
    TrajectoryStep,
)
from app.models.sim_model import Action, N_HEADINGS, OBS_DIM, Pose, TURN_DEGREES
from app.models.world_model import Category, GridWorld
from app.services import detector_service, sim_service
from app.services.artifact_service import header_line, parse_header, read_lines, write_lines
from app.services.occupancy_service import OccupancyGrid, fmm_distance_field, sample_field
from app.services.valuelearn_service import BCPolicy, ValueModel, direction_values
from app.services.video_service import observe
from app.services.world_service import distance_to_success

logger = logging.getLogger(__name__)

DISTANCE_HORIZON = 10.0
DISTANCE_WEIGHT = 0.05
TURN_EPSILON = 1e-9

# on_step(new_pose, action) -> True to interrupt the low-level controller
StepHook = Callable[[Pose, Action], bool]


def score_direction(f_val: float, det_conf: float, est_geodesic_d: float, w: PolicyWeights,
                    detection_gate: float = NAV_CONFIG["detection_gate"]) -> float:
    """lambda1 f + lambda2 [det >= gate] (1 + det) + 0.05 lambda3 max(10 - d, 0)"""
    detector_term = (1.0 + det_conf) if det_conf >= detection_gate else 0.0
    distance_term = DISTANCE_WEIGHT * max(DISTANCE_HORIZON - est_geodesic_d, 0.0)
    return w.lambda1 * f_val + w.lambda2 * detector_term + w.lambda3 * distance_term


def stopping_check(detections: Sequence[Detection], cfg: StopConfig, category: Category) -> bool:
    """A confident detection of the target closer than its per-category stopping distance"""
    limit = cfg.d_c.get(category, NAV_CONFIG["default_d_c"])
    return any(
        d.category == category and d.confidence >= cfg.tau_c and d.est_distance <= limit
        for d in detections
    )


def _euclidean(a: Pose, b: Pose) -> float:
    return math.hypot(a.x - b.x, a.y - b.y)


# ---------------------------------------------------------------------------
# High level: topological graph and direction heap
# ---------------------------------------------------------------------------

class TopologicalGraph:
    """Reasoning nodes with a max-heap over their 12N exploration directions.

    At every pop the heap holds 12N - pops entries. When each reasoning step adds
    one node and pops once this is 11N + 1; an infeasible low-level result pops
    again without adding a node, so episodes only keep the general form.
    """

    def __init__(self):
        self.nodes: List[TopoNode] = []
        self.heap: List[Tuple[float, int, int]] = []
        self.pops = 0
        self.log: List[HeapLogEntry] = []

    def add_node(self, pose: Pose, views: np.ndarray, scores: Sequence[float]) -> TopoNode:
        if len(scores) != N_HEADINGS:
            raise InvalidParams(f"a node needs {N_HEADINGS} direction scores")
        node = TopoNode(node_id=len(self.nodes), pose=pose, views=views, scores=[float(s) for s in scores])
        self.nodes.append(node)
        for direction, score in enumerate(node.scores):
            heapq.heappush(self.heap, DirectionEntry(node_id=node.node_id, direction=direction, score=score).heap_key())
        return node

    def pop(self) -> DirectionEntry:
        if not self.heap:
            raise HeapExhausted(f"all {N_HEADINGS * len(self.nodes)} directions consumed")
        self.log.append(HeapLogEntry(nodes=len(self.nodes), pops_before=self.pops, heap_size=len(self.heap)))
        neg_score, node_id, direction = heapq.heappop(self.heap)
        self.pops += 1
        return DirectionEntry(node_id=node_id, direction=direction, score=-neg_score, popped=True)


def sample_goals(
    node: TopoNode,
    direction: int,
    rng: np.random.Generator,
    cfg: NavConfig,
) -> List[Tuple[float, float]]:
    """k points uniform in the sector of view `direction` +- half width, radius in [min, max] around the node"""
    center = node.pose.heading + direction * TURN_DEGREES
    angles = center + rng.uniform(-cfg.sector_half_width, cfg.sector_half_width, size=cfg.k_goals)
    radii = rng.uniform(cfg.goal_min_radius, cfg.goal_max_radius, size=cfg.k_goals)
    theta = np.radians(angles)
    xs = node.pose.x + radii * np.cos(theta)
    ys = node.pose.y + radii * np.sin(theta)
    return list(zip(xs.tolist(), ys.tolist()))


def high_level_step(
    graph: TopologicalGraph,
    rng: np.random.Generator,
    cfg: Optional[NavConfig] = None,
) -> Tuple[DirectionEntry, List[Tuple[float, float]]]:
    """Pop the best direction and sample candidate short-term goals in it; raises HeapExhausted"""
    cfg = cfg or NavConfig()
    entry = graph.pop()
    return entry, sample_goals(graph.nodes[entry.node_id], entry.direction, rng, cfg)


# ---------------------------------------------------------------------------
# Low level: FMM descent on the agent's own map
# ---------------------------------------------------------------------------

def choose_action(field: np.ndarray, pose: Pose, cell_size: float, step: float = sim_service.FORWARD_STEP) -> Action:
    """Action whose look-ahead point has the lowest field value; ties keep Forward"""
    def lookahead(heading: float) -> float:
        dx, dy = sim_service.direction(heading)
        return sample_field(field, pose.x + step * dx, pose.y + step * dy, cell_size)

    best, best_value = Action.FORWARD, lookahead(pose.heading)
    for action, turn in ((Action.LEFT, -TURN_DEGREES), (Action.RIGHT, TURN_DEGREES)):
        candidate = lookahead(pose.heading + turn) + TURN_EPSILON
        if candidate < best_value:
            best, best_value = action, candidate
    return best


def _goal_field(grid: OccupancyGrid, goal: Tuple[float, float], agent_cell) -> Optional[np.ndarray]:
    try:
        return fmm_distance_field(grid, grid.cell_of(*goal), agent_cell)
    except GoalInObstacle:
        return None


def low_level_navigate(
    world: GridWorld,
    pose: Pose,
    goals: Sequence[Tuple[float, float]],
    grid: OccupancyGrid,
    cfg: Optional[NavConfig] = None,
    max_steps: Optional[int] = None,
    on_step: Optional[StepHook] = None,
) -> NavResult:
    """Pursue the first goal reachable on the current map, replanning whenever the map changes"""
    cfg = cfg or NavConfig()
    if not goals:
        raise InvalidParams("low-level navigation needs at least one goal")
    max_steps = cfg.budget if max_steps is None else max_steps
    s = grid.cell_size

    agent_cell = grid.cell_of(pose.x, pose.y)
    goal, field, d0 = None, None, math.inf
    for candidate in goals:
        candidate_field = _goal_field(grid, candidate, agent_cell)
        if candidate_field is None:
            continue
        estimate = sample_field(candidate_field, pose.x, pose.y, s)
        if math.isfinite(estimate):
            goal, field, d0 = candidate, candidate_field, estimate
            break
    if goal is None:
        return NavResult(outcome=NavOutcome.INFEASIBLE, pose=pose)

    target = Pose(x=goal[0], y=goal[1], heading=0)
    timeout = math.ceil(cfg.timeout_factor * (d0 / sim_service.FORWARD_STEP + 3))
    limit = cfg.infeasible_factor * max(d0, s)
    version = grid.version
    steps, path = 0, 0.0

    def result(outcome: NavOutcome) -> NavResult:
        return NavResult(outcome=outcome, pose=pose, steps=steps, path_length=path, goal=goal)

    while True:
        if _euclidean(pose, target) <= cfg.goal_tolerance:
            return result(NavOutcome.SUCCESS)
        if steps >= timeout:
            return result(NavOutcome.TIMEOUT)
        if steps >= max_steps:
            return result(NavOutcome.INTERRUPTED)
        agent_cell = grid.cell_of(pose.x, pose.y)
        if grid.version != version:
            field = _goal_field(grid, goal, agent_cell)
            version = grid.version
            if field is None:
                return result(NavOutcome.INFEASIBLE)
        estimate = sample_field(field, pose.x, pose.y, s)
        if not estimate <= limit:
            return result(NavOutcome.INFEASIBLE)

        action = choose_action(field, pose, s)
        moved = sim_service.step(world, pose, action)
        if action == Action.FORWARD and moved == pose:
            grid.mark_bump(pose)
        path += _euclidean(pose, moved)
        pose = moved
        steps += 1
        grid.observe(world, pose)
        if on_step is not None and on_step(pose, action):
            return result(NavOutcome.INTERRUPTED)


# ---------------------------------------------------------------------------
# Episodes
# ---------------------------------------------------------------------------

class _EpisodeState:
    """Mutable bookkeeping shared by the reasoning loop and the low-level step hook"""

    def __init__(self, world: GridWorld, start: Pose, category: Category, mode: EpisodeMode, budget: int):
        self.world = world
        self.category = category
        self.mode = mode
        self.budget = budget
        self.pose = start
        self.steps = 0
        self.path = 0.0
        self.success = False
        self.stop_event = ""
        self.trajectory: List[TrajectoryStep] = [
            TrajectoryStep(step=0, x=start.x, y=start.y, heading=start.heading, action="start")
        ]

    def record(self, pose: Pose, action: Action, event: str = "") -> bool:
        """Book one executed action; True when the episode must end"""
        self.path += _euclidean(self.pose, pose)
        self.pose = pose
        self.steps += 1
        self.trajectory.append(
            TrajectoryStep(step=self.steps, x=pose.x, y=pose.y, heading=pose.heading, action=action.name.lower(), event=event)
        )
        if self.mode == EpisodeMode.ORACLE_STOP and distance_to_success(self.world, pose, self.category) == 0.0:
            self.finish(True, "oracle_stop")
            return True
        if self.steps >= self.budget:
            self.finish(False, "budget")
            return True
        return False

    def finish(self, success: bool, event: str) -> None:
        self.success = success
        self.stop_event = event
        self.trajectory[-1].event = event


def _view_detections(views: np.ndarray, det_cfg: DetectorConfig, seed: int, step: int) -> List[List[Detection]]:
    return [detector_service.detect(view, det_cfg, (seed, step, j)) for j, view in enumerate(views)]


def _direction_scores(
    model: Optional[ValueModel],
    views: np.ndarray,
    detections: List[List[Detection]],
    grid: OccupancyGrid,
    pose: Pose,
    category: Category,
    weights: PolicyWeights,
    cfg: NavConfig,
) -> List[float]:
    if model is not None and weights.lambda1 > 0:
        f_values = direction_values(model, views)[:, int(category)]
    else:
        f_values = np.zeros(N_HEADINGS)
    agent_cell = grid.cell_of(pose.x, pose.y)
    field = fmm_distance_field(grid, agent_cell, agent_cell)
    scores = []
    for j in range(N_HEADINGS):
        confidences = [d.confidence for d in detections[j] if d.category == category]
        det_conf = max(confidences) if confidences else 0.0
        dx, dy = sim_service.direction(pose.heading + j * TURN_DEGREES)
        d = sample_field(field, pose.x + cfg.candidate_distance * dx, pose.y + cfg.candidate_distance * dy, grid.cell_size)
        scores.append(score_direction(float(f_values[j]), det_conf, d, weights, cfg.detection_gate))
    return scores


def run_episode(
    world: GridWorld,
    start: Pose,
    category: Category,
    value_fn: Optional[ValueModel],
    weights: PolicyWeights,
    stop_cfg: Optional[StopConfig] = None,
    mode: EpisodeMode = EpisodeMode.ORACLE_STOP,
    nav_cfg: Optional[NavConfig] = None,
    det_cfg: Optional[DetectorConfig] = None,
    seed: int = 0,
    episode_id: int = 0,
) -> EpisodeResult:
    """Reason at a node (panorama, score, push), pop a direction, execute, repeat until stop or budget"""
    nav_cfg = nav_cfg or NavConfig()
    stop_cfg = stop_cfg or StopConfig()
    det_cfg = det_cfg or DetectorConfig(seed=seed)
    if not sim_service.pose_is_valid(world, start):
        raise InvalidParams(f"start pose ({start.x}, {start.y}) is not collision free")

    rng = np.random.default_rng([seed, 1])
    state = _EpisodeState(world, start, category, mode, nav_cfg.budget)
    graph = TopologicalGraph()
    grid = OccupancyGrid.for_world(world, nav_cfg.inflation_cells)
    grid.observe(world, start)
    reasoning: List[ReasoningRecord] = []
    last_node_pose: Optional[Pose] = None

    if mode == EpisodeMode.ORACLE_STOP and distance_to_success(world, start, category) == 0.0:
        state.finish(True, "oracle_stop")

    while not state.stop_event:
        if last_node_pose is None or _euclidean(last_node_pose, state.pose) > 1e-9:
            # the panorama is captured by turning in place through all 12 headings
            ended = False
            for _ in range(N_HEADINGS):
                turned = sim_service.step(world, state.pose, Action.RIGHT)
                grid.observe(world, turned)
                if state.record(turned, Action.RIGHT, "panorama"):
                    ended = True
                    break
            if ended:
                break
            views = sim_service.panorama(world, state.pose).views
            detections = _view_detections(views, det_cfg, seed, state.steps)
            target = [d for view in detections for d in view if d.category == category]
            if mode == EpisodeMode.CALIBRATION:
                reasoning.append(ReasoningRecord(
                    steps=state.steps,
                    path_length=state.path,
                    true_distance=distance_to_success(world, state.pose, category),
                    detections=[(d.confidence, d.est_distance) for d in target],
                ))
            if mode == EpisodeMode.POLICY_STOP and stopping_check(target, stop_cfg, category):
                state.finish(distance_to_success(world, state.pose, category) == 0.0, "policy_stop")
                break
            scores = _direction_scores(value_fn, views, detections, grid, state.pose, category, weights, nav_cfg)
            graph.add_node(state.pose, views, scores)
            last_node_pose = state.pose

        try:
            _, goals = high_level_step(graph, rng, nav_cfg)
        except HeapExhausted:
            state.finish(False, "heap_exhausted")
            break
        low_level_navigate(
            world,
            state.pose,
            goals,
            grid,
            nav_cfg,
            max_steps=nav_cfg.budget - state.steps,
            on_step=lambda pose, action: state.record(pose, action),
        )

    final = distance_to_success(world, state.pose, category)
    logger.debug(f"Episode {episode_id}: {state.stop_event} after {state.steps} steps, {len(graph.nodes)} nodes")
    return EpisodeResult(
        episode_id=episode_id,
        success=state.success,
        path_length=state.path,
        steps=state.steps,
        stop_event=state.stop_event,
        final_distance=final,
        n_nodes=len(graph.nodes),
        trajectory=state.trajectory,
        reasoning=reasoning,
        heap_log=graph.log,
    )


def run_reactive_episode(
    world: GridWorld,
    start: Pose,
    category: Category,
    policy: BCPolicy,
    stop_cfg: Optional[StopConfig] = None,
    mode: EpisodeMode = EpisodeMode.ORACLE_STOP,
    nav_cfg: Optional[NavConfig] = None,
    det_cfg: Optional[DetectorConfig] = None,
    seed: int = 0,
    episode_id: int = 0,
) -> EpisodeResult:
    """Behavior-cloned policy acting on the current observation; stopping is checked every step"""
    nav_cfg = nav_cfg or NavConfig()
    stop_cfg = stop_cfg or StopConfig()
    det_cfg = det_cfg or DetectorConfig(seed=seed)
    rng = np.random.default_rng([seed, 2])
    panoramic = policy.obs_dim != OBS_DIM
    state = _EpisodeState(world, start, category, mode, nav_cfg.budget)

    if mode == EpisodeMode.ORACLE_STOP and distance_to_success(world, start, category) == 0.0:
        state.finish(True, "oracle_stop")
    while not state.stop_event:
        if mode == EpisodeMode.POLICY_STOP:
            view = sim_service.render(world, state.pose)
            if stopping_check(detector_service.detect(view, det_cfg, (seed, state.steps)), stop_cfg, category):
                state.finish(distance_to_success(world, state.pose, category) == 0.0, "policy_stop")
                break
        action = Action(policy.act(observe(world, state.pose, panoramic), category, rng))
        state.record(sim_service.step(world, state.pose, action), action)

    return EpisodeResult(
        episode_id=episode_id,
        success=state.success,
        path_length=state.path,
        steps=state.steps,
        stop_event=state.stop_event,
        final_distance=distance_to_success(world, state.pose, category),
        trajectory=state.trajectory,
    )


# ---------------------------------------------------------------------------
# Stop calibration
# ---------------------------------------------------------------------------

def replay_policy_stop(reasoning: Sequence[ReasoningRecord], shortest: float, tau_c: float, d_c: float) -> float:
    """SPL the episode would have scored under Policy Stop with this d_c"""
    for record in reasoning:
        if any(conf >= tau_c and dist <= d_c for conf, dist in record.detections):
            if record.true_distance > 0.0:
                return 0.0
            return 1.0 if shortest <= 0.0 else shortest / max(record.path_length, shortest)
    return 0.0


def calibrate_dc(
    calibration: Dict[Category, Sequence[Tuple[float, EpisodeResult]]],
    grid: Sequence[float] = NAV_CONFIG["d_c_grid"],
    tau_c: float = NAV_CONFIG["tau_c"],
) -> StopConfig:
    """Per category, the grid value with the best replayed Policy-Stop SPL; ties keep the smaller d_c.

    ``calibration`` maps a category to (shortest distance, CALIBRATION-mode result) pairs.
    """
    if not grid:
        raise InvalidParams("d_c grid is empty")
    chosen: Dict[Category, float] = {}
    for category in Category:
        runs = calibration.get(category, [])
        if not runs:
            chosen[category] = NAV_CONFIG["default_d_c"]
            continue
        best_dc, best_spl = None, -1.0
        for d_c in sorted(grid):
            spl = float(np.mean([replay_policy_stop(r.reasoning, l, tau_c, d_c) for l, r in runs]))
            if spl > best_spl + 1e-12:
                best_dc, best_spl = d_c, spl
        chosen[category] = best_dc
        logger.info(f"Calibrated d_c for {category.slug}: {best_dc} m (SPL {best_spl:.3f} over {len(runs)} episodes)")
    return StopConfig(tau_c=tau_c, d_c=chosen)


# ---------------------------------------------------------------------------
# Files
# ---------------------------------------------------------------------------

def trajectory_lines(result: EpisodeResult) -> List[str]:
    return [
        f"{s.step} {s.x!r} {s.y!r} {s.heading} {s.action} {s.event or '-'}"
        for s in result.trajectory
    ]


def save_trajectory(result: EpisodeResult, path: str) -> None:
    write_lines(path, trajectory_lines(result))


def save_stop_config(cfg: StopConfig, path: str, config_hash: str = "") -> None:
    lines = [header_line("VLVSTOP", config_hash), f"tau_c = {cfg.tau_c!r}"]
    lines.extend(f"d_c.{category.slug} = {distance!r}" for category, distance in sorted(cfg.d_c.items()))
    write_lines(path, lines)


def load_stop_config(path: str) -> Tuple[StopConfig, str]:
    lines = read_lines(path)
    _, extra = parse_header(lines, "VLVSTOP")
    values: Dict[str, float] = {}
    for number, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        key, sep, raw = line.partition("=")
        if not sep:
            raise FormatError("expected key = value", number)
        try:
            values[key.strip()] = float(raw)
        except ValueError:
            raise FormatError(f"not a number: {raw.strip()}", number)
    d_c = {key[len("d_c."):]: v for key, v in values.items() if key.startswith("d_c.")}
    cfg = StopConfig(tau_c=values.get("tau_c", NAV_CONFIG["tau_c"]), **({"d_c": d_c} if d_c else {}))
    return cfg, extra[0] if extra else ""
