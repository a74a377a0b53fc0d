"""Branching-corridor experiment: Q-learning versus policy evaluation on a skewed video mix"""
import logging
from typing import Dict, List, Optional, Tuple

import numpy as np

from app.models.evaluation_model import BranchingConfig
from app.models.sim_model import Action, MOVE_ACTIONS, N_HEADINGS, Pose, TURN_DEGREES
from app.models.training_model import InverseTrainConfig, QTrainConfig, ValueTrainConfig
from app.models.video_model import Trajectory, VideoConfig, VideoDataset
from app.models.world_model import BranchingWorld, Category
from app.services import inverse_service, sim_service
from app.services.detector_service import true_reward_label
from app.services.valuelearn_service import (
    policy_evaluation_mc,
    policy_evaluation_td0,
    train_q,
)
from app.services.video_service import collect_interaction
from app.services.world_service import generate_branching_world, success_cells

logger = logging.getLogger(__name__)

UP_HEADING = 270
TARGET = Category.BED
WORLD_ID = "branching"
METHODS = ("Q", "TD0", "MC")


def _turn_toward(heading: int, target: int) -> List[Action]:
    """Shortest rotation sequence; a half-turn goes Left"""
    clockwise = ((target - heading) % 360) // TURN_DEGREES
    counter = ((heading - target) % 360) // TURN_DEGREES
    if clockwise < counter:
        return [Action.RIGHT] * clockwise
    return [Action.LEFT] * counter


def scripted_video(branching: BranchingWorld, kind: int, rng: np.random.Generator, traj_id: int) -> Trajectory:
    """kind 1: near arm with a full spin at every arm cell; 2: far arm directly; 3: near arm directly.

    The video ends at the first frame inside the goal's success region.
    """
    world = branching.world
    start_cell = branching.start_disc_s[int(rng.integers(len(branching.start_disc_s)))]
    pose = sim_service.cell_pose(world, start_cell, int(rng.integers(N_HEADINGS)) * TURN_DEGREES)
    near = kind in (1, 3)
    arm_heading = branching.near_heading if near else branching.far_heading
    region = set(success_cells(world, branching.g_near if near else branching.g_far))

    frames, actions, poses = [sim_service.render(world, pose)], [], [pose]

    def act(action: Action) -> bool:
        nonlocal pose
        pose = sim_service.step(world, pose, action)
        actions.append(int(action))
        frames.append(sim_service.render(world, pose))
        poses.append(pose)
        return world.cell_of(pose.x, pose.y) in region

    for action in _turn_toward(pose.heading, UP_HEADING):
        act(action)
    while world.cell_of(pose.x, pose.y) != branching.branch_b:
        act(Action.FORWARD)
    for action in _turn_toward(pose.heading, arm_heading):
        act(action)
    while True:
        if act(Action.FORWARD):
            break
        if kind == 1:
            for _ in range(N_HEADINGS):
                act(Action.RIGHT)
    return Trajectory.build(
        traj_id=traj_id,
        world_id=WORLD_ID,
        observations=np.stack(frames),
        true_actions=actions,
        true_poses=[(p.x, p.y, float(p.heading)) for p in poses],
    )


def branching_videos(branching: BranchingWorld, cfg: BranchingConfig) -> Tuple[VideoDataset, Dict[int, int]]:
    rng = np.random.default_rng([cfg.seed, 4])
    kinds = rng.choice([1, 2, 3], size=cfg.n_videos, p=list(cfg.mix))
    trajectories = [scripted_video(branching, int(kind), rng, i) for i, kind in enumerate(kinds)]
    counts = {k: int(np.sum(kinds == k)) for k in (1, 2, 3)}
    logger.info(f"Branching videos: {counts[1]} T1, {counts[2]} T2, {counts[3]} T3")
    dataset = VideoDataset.create(privileged=True, kind="video", trajectories=trajectories, seed=cfg.seed)
    return dataset, counts


def _label(videos: VideoDataset, branching: BranchingWorld, cfg: BranchingConfig) -> VideoDataset:
    if cfg.action_source == "true":
        return inverse_service.with_true_labels(videos)
    interaction = collect_interaction(
        [branching.world], n_frames=VideoConfig().interaction_frames, seed=cfg.seed, world_ids=[WORLD_ID]
    )
    model = inverse_service.train_inverse(interaction, InverseTrainConfig(seed=cfg.seed))
    return inverse_service.pseudo_label(model, videos)


def _greedy_action(method: str, model, pose: Pose, branching: BranchingWorld) -> Action:
    world = branching.world
    if method == "Q":
        q = model.q_values(sim_service.render(world, pose))[0, :, int(TARGET)]
        return Action(int(np.argmax(q)))
    # value baselines look one simulated step ahead
    scores = [model.values(sim_service.render(world, sim_service.step(world, pose, a)))[0, int(TARGET)] for a in MOVE_ACTIONS]
    return MOVE_ACTIONS[int(np.argmax(scores))]


def rollout(method: str, model, branching: BranchingWorld, start: Pose, budget: int) -> str:
    """Greedy rollout; returns near, far or none"""
    world = branching.world
    near = set(success_cells(world, branching.g_near))
    far = set(success_cells(world, branching.g_far))
    pose = start
    for _ in range(budget):
        cell = world.cell_of(pose.x, pose.y)
        if cell in near:
            return "near"
        if cell in far:
            return "far"
        pose = sim_service.step(world, pose, _greedy_action(method, model, pose, branching))
    cell = world.cell_of(pose.x, pose.y)
    return "near" if cell in near else "far" if cell in far else "none"


def branch_values(model, branching: BranchingWorld) -> Tuple[float, float]:
    """Value at the junction facing the near arm and facing the far arm"""
    world = branching.world
    near_pose = sim_service.cell_pose(world, branching.branch_b, branching.near_heading)
    far_pose = sim_service.cell_pose(world, branching.branch_b, branching.far_heading)
    obs = np.stack([sim_service.render(world, near_pose), sim_service.render(world, far_pose)])
    values = model.values(obs)[:, int(TARGET)]
    return float(values[0]), float(values[1])


def branching_experiment(cfg: Optional[BranchingConfig] = None, gamma: float = QTrainConfig().gamma) -> Dict[str, str]:
    """Train tabular Q, TD(0) and MC on the same videos and compare greedy rollouts and junction values"""
    cfg = cfg or BranchingConfig()
    branching = generate_branching_world(cfg.corridor_len, cfg.branch_offset)
    videos, counts = branching_videos(branching, cfg)
    labeled = _label(videos, branching, cfg)
    quads = true_reward_label(labeled, branching.world)

    models = {
        "Q": train_q(quads, QTrainConfig(gamma=gamma, tabular=True, seed=cfg.seed)),
        "TD0": policy_evaluation_td0(quads, ValueTrainConfig(gamma=gamma, tabular=True, seed=cfg.seed)),
        "MC": policy_evaluation_mc(quads, ValueTrainConfig(gamma=gamma, tabular=True, seed=cfg.seed)),
    }

    rng = np.random.default_rng([cfg.seed, 5])
    starts = []
    for _ in range(cfg.n_rollouts):
        cell = branching.start_disc_s[int(rng.integers(len(branching.start_disc_s)))]
        starts.append(sim_service.cell_pose(branching.world, cell, int(rng.integers(N_HEADINGS)) * TURN_DEGREES))

    entries: Dict[str, str] = {
        "branching.mix": ",".join(repr(m) for m in cfg.mix),
        "branching.videos.t1": str(counts[1]),
        "branching.videos.t2": str(counts[2]),
        "branching.videos.t3": str(counts[3]),
        "branching.n_rollouts": str(cfg.n_rollouts),
    }
    for method in METHODS:
        outcomes = [rollout(method, models[method], branching, start, cfg.rollout_budget) for start in starts]
        near_value, far_value = branch_values(models[method], branching)
        entries[f"branching.{method}.reach_near"] = f"{outcomes.count('near') / len(outcomes):.4f}"
        entries[f"branching.{method}.reach_far"] = f"{outcomes.count('far') / len(outcomes):.4f}"
        entries[f"branching.{method}.value_toward_near"] = f"{near_value:.6f}"
        entries[f"branching.{method}.value_toward_far"] = f"{far_value:.6f}"
        logger.info(f"Branching {method}: near {outcomes.count('near')}/{len(outcomes)}, junction values near {near_value:.4f} far {far_value:.4f}")
    return entries
