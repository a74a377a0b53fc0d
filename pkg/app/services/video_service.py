"""Synthetic video tours, random interaction data and the dataset file format"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from typing import List, Optional, Sequence, Tuple

import numpy as np

from app.exceptions import FormatError, InvalidParams
from app.models.sim_model import Action, MOVE_ACTIONS, Pose, N_HEADINGS, TURN_DEGREES
from app.models.video_model import Trajectory, VideoConfig, VideoDataset
from app.models.world_model import GridWorld
from app.services import sim_service
from app.services.artifact_service import (
    format_floats,
    header_line,
    parse_floats,
    parse_header,
    parse_key_values,
    read_lines,
    write_lines,
)
from app.services.world_service import pose_graph, success_cells, geodesic_field, SUCCESS_RADIUS

logger = logging.getLogger(__name__)

REVISIT_PENALTY = 2.0


def observe(world: GridWorld, pose: Pose, panoramic: bool = False) -> np.ndarray:
    if panoramic:
        return sim_service.panoramic_vector(sim_service.panorama(world, pose).views, 0)
    return sim_service.render(world, pose)


def random_pose(world: GridWorld, rng: np.random.Generator) -> Pose:
    graph = pose_graph(world)
    cell = graph.cells[int(rng.integers(len(graph.cells)))]
    return sim_service.cell_pose(world, cell, int(rng.integers(N_HEADINGS)) * TURN_DEGREES)


def _pose_row(pose: Pose) -> Tuple[float, float, float]:
    return (pose.x, pose.y, float(pose.heading))


def _subsample(frames: List[np.ndarray], actions: List[int], poses: List[Pose], stride: int):
    if stride <= 1:
        return frames, actions, poses
    keep = list(range(0, len(frames), stride))
    if keep[-1] != len(frames) - 1:
        keep.append(len(frames) - 1)
    return [frames[i] for i in keep], [actions[i] for i in keep[:-1]], [poses[i] for i in keep]


def tour(
    world: GridWorld,
    cfg: VideoConfig,
    rng: np.random.Generator,
) -> Tuple[List[np.ndarray], List[int], List[Pose]]:
    """Walk from a random start toward a random free target, replanning after every (possibly random) action"""
    graph = pose_graph(world)
    pose = random_pose(world, rng)
    start_cell = world.cell_of(pose.x, pose.y)
    distances = geodesic_field(world, [start_cell])
    far_enough = [cell for cell in graph.cells if math.isfinite(distances[cell]) and distances[cell] >= cfg.min_target_distance]
    if not far_enough:
        far_enough = [cell for cell in graph.cells if math.isfinite(distances[cell]) and cell != start_cell]
    target = far_enough[int(rng.integers(len(far_enough)))]
    region = set(success_cells(world, [target], SUCCESS_RADIUS))
    goal_mask = np.zeros(graph.n_nodes, dtype=bool)
    for cell in region:
        base = graph.node(cell, 0)
        goal_mask[base:base + N_HEADINGS] = True
    to_goal = graph.steps_to(goal_mask)

    frames, actions, poses = [], [], []
    visits: dict = {}
    for _ in range(cfg.max_steps):
        frames.append(observe(world, pose, cfg.panoramic))
        poses.append(pose)
        node = graph.node_of(pose)
        visits[node] = visits.get(node, 0) + 1
        if world.cell_of(pose.x, pose.y) in region and len(frames) >= 2:
            break
        if rng.random() < cfg.noise_p:
            action = MOVE_ACTIONS[int(rng.integers(len(MOVE_ACTIONS)))]
        else:
            best, action = math.inf, Action.LEFT
            for candidate in MOVE_ACTIONS:
                nxt = sim_service.step(world, pose, candidate)
                if nxt == pose:
                    continue
                succ = graph.node_of(nxt)
                cost = to_goal[succ] + REVISIT_PENALTY * visits.get(succ, 0)
                if cost < best:
                    best, action = cost, candidate
        actions.append(int(action))
        pose = sim_service.step(world, pose, action)
    else:
        frames.append(observe(world, pose, cfg.panoramic))
        poses.append(pose)
    return frames, actions, poses


def _video_job(args) -> Trajectory:
    world, world_idx, world_id, traj_idx, cfg, seed = args
    rng = np.random.default_rng([seed, world_idx, traj_idx])
    frames, actions, poses = tour(world, cfg, rng)
    frames, actions, poses = _subsample(frames, actions, poses, cfg.stride)
    return Trajectory.build(
        traj_id=world_idx * cfg.n_traj_per_world + traj_idx,
        world_id=world_id,
        observations=np.stack(frames),
        true_actions=actions,
        true_poses=[_pose_row(p) for p in poses],
    )


def generate_videos(
    worlds: Sequence[GridWorld],
    cfg: Optional[VideoConfig] = None,
    seed: int = 0,
    world_ids: Optional[Sequence[str]] = None,
    jobs: int = 1,
    config_hash: str = "",
) -> VideoDataset:
    """Action-free tours; true actions and poses are kept hidden behind the capability flag"""
    cfg = cfg or VideoConfig()
    if not worlds:
        raise InvalidParams("generate_videos needs at least one world")
    world_ids = list(world_ids) if world_ids is not None else [str(i) for i in range(len(worlds))]
    tasks = [
        (world, w, world_ids[w], t, cfg, seed)
        for w, world in enumerate(worlds)
        for t in range(cfg.n_traj_per_world)
    ]
    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        trajectories = list(pool.map(_video_job, tasks))

    dataset = VideoDataset.create(
        privileged=True,
        kind="video",
        trajectories=trajectories,
        noise_p=cfg.noise_p,
        seed=seed,
        stride=cfg.stride,
        config_hash=config_hash,
    )
    logger.info(f"Generated {len(trajectories)} videos over {len(worlds)} worlds, mean length {dataset.mean_length():.1f}")
    return dataset


def _interaction_job(args) -> Trajectory:
    worlds, world_ids, episode, length, seed, panoramic = args
    rng = np.random.default_rng([seed, episode])
    world_idx = episode % len(worlds)
    world = worlds[world_idx]
    pose = random_pose(world, rng)
    frames, actions, poses = [observe(world, pose, panoramic)], [], [pose]
    for _ in range(length):
        action = MOVE_ACTIONS[int(rng.integers(len(MOVE_ACTIONS)))]
        pose = sim_service.step(world, pose, action)
        actions.append(int(action))
        frames.append(observe(world, pose, panoramic))
        poses.append(pose)
    return Trajectory.build(
        traj_id=episode,
        world_id=world_ids[world_idx],
        observations=np.stack(frames),
        actions=actions,
        true_actions=actions,
        true_poses=[_pose_row(p) for p in poses],
    )


def collect_interaction(
    worlds: Sequence[GridWorld],
    n_frames: int = 40000,
    seed: int = 0,
    cfg: Optional[VideoConfig] = None,
    world_ids: Optional[Sequence[str]] = None,
    jobs: int = 1,
    config_hash: str = "",
) -> VideoDataset:
    """Uniform random Forward/Left/Right from random resets; yields exactly n_frames labeled transitions"""
    cfg = cfg or VideoConfig()
    if n_frames < 1:
        raise InvalidParams("n_frames must be at least 1")
    if not worlds:
        raise InvalidParams("collect_interaction needs at least one world")
    world_ids = list(world_ids) if world_ids is not None else [str(i) for i in range(len(worlds))]
    episode_len = cfg.interaction_episode_length
    n_episodes = -(-n_frames // episode_len)
    tasks = []
    for episode in range(n_episodes):
        length = min(episode_len, n_frames - episode * episode_len)
        tasks.append((list(worlds), world_ids, episode, length, seed, False))
    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        trajectories = list(pool.map(_interaction_job, tasks))

    dataset = VideoDataset.create(
        privileged=True,
        kind="interaction",
        trajectories=trajectories,
        seed=seed,
        config_hash=config_hash,
    )
    logger.info(f"Collected {dataset.n_pairs} interaction transitions in {len(trajectories)} episodes")
    return dataset


# ---------------------------------------------------------------------------
# Dataset files
# ---------------------------------------------------------------------------

def dataset_lines(dataset: VideoDataset) -> List[str]:
    lines = [
        header_line("VLVDATA", dataset.kind, dataset.config_hash),
        f"META dim={dataset.obs_dim} noise_p={dataset.noise_p!r} seed={dataset.seed} "
        f"stride={dataset.stride} privileged={int(dataset.privileged)}",
    ]
    for index, traj in enumerate(dataset.trajectories):
        lines.append(f"TRAJ {traj.traj_id} {traj.world_id or '-'} {traj.length}")
        hidden_actions = dataset.hidden_actions(index) if dataset.privileged else None
        hidden_poses = dataset.hidden_poses(index) if dataset.privileged else None
        for t in range(traj.length):
            parts = [str(traj.traj_id), str(t), format_floats(traj.observations[t])]
            if traj.actions is not None and t < traj.length - 1:
                parts.append(f"A:{int(traj.actions[t])}")
            if hidden_actions is not None and t < traj.length - 1:
                parts.append(f"T:{int(hidden_actions[t])}")
            if hidden_poses is not None:
                x, y, h = hidden_poses[t]
                parts.append(f"P:{x!r} {y!r} {int(h)}")
            lines.append(" ".join(parts))
    lines.append(f"END {dataset.n_frames}")
    return lines


def save_dataset(dataset: VideoDataset, path: str) -> None:
    write_lines(path, dataset_lines(dataset))
    logger.info(f"Saved {dataset.kind} dataset ({len(dataset.trajectories)} trajectories, {dataset.n_frames} frames) to {path}")


def _parse_frame(tokens: List[str], number: int, dim: int):
    if len(tokens) < 2 + dim:
        raise FormatError(f"frame line needs {dim} observation values", number)
    obs = parse_floats(tokens[2:2 + dim], number)
    label = hidden = pose = None
    rest = tokens[2 + dim:]
    i = 0
    while i < len(rest):
        token = rest[i]
        try:
            if token.startswith("A:"):
                label = int(token[2:])
            elif token.startswith("T:"):
                hidden = int(token[2:])
            elif token.startswith("P:"):
                pose = (float(token[2:]), float(rest[i + 1]), float(rest[i + 2]))
                i += 2
            else:
                raise FormatError(f"unexpected field {token!r}", number)
        except (ValueError, IndexError):
            raise FormatError(f"malformed field {token!r}", number)
        i += 1
    return obs, label, hidden, pose


def parse_dataset(lines: List[str]) -> VideoDataset:
    _, extra = parse_header(lines, "VLVDATA")
    if not extra:
        raise FormatError("dataset header lacks a kind", 1)
    kind = extra[0]
    config_hash = extra[1] if len(extra) > 1 else ""
    if len(lines) < 2 or not lines[1].startswith("META "):
        raise FormatError("missing META line", 2)
    meta = parse_key_values(lines[1].split()[1:], 2)
    try:
        dim = int(meta["dim"])
        noise_p = float(meta.get("noise_p", "0.0"))
        seed = int(meta.get("seed", "0"))
        stride = int(meta.get("stride", "1"))
        privileged = meta.get("privileged", "0") == "1"
    except (KeyError, ValueError) as e:
        raise FormatError(f"bad META line: {str(e)}", 2)

    trajectories: List[Trajectory] = []
    number = 2
    n_lines = len(lines)
    while True:
        number += 1
        if number > n_lines:
            raise FormatError("truncated file: missing END record", number)
        tokens = lines[number - 1].split()
        if not tokens:
            raise FormatError("blank line", number)
        if tokens[0] == "END":
            try:
                expected = int(tokens[1])
            except (IndexError, ValueError):
                raise FormatError("END needs the frame count", number)
            total = sum(t.length for t in trajectories)
            if expected != total:
                raise FormatError(f"END announces {expected} frames, found {total}", number)
            break
        if tokens[0] != "TRAJ" or len(tokens) != 4:
            raise FormatError("expected `TRAJ <id> <world_id> <length>`", number)
        try:
            traj_id, length = int(tokens[1]), int(tokens[3])
        except ValueError:
            raise FormatError("TRAJ id and length must be integers", number)
        world_id = "" if tokens[2] == "-" else tokens[2]
        frames, labels, hidden, poses = [], [], [], []
        for t in range(length):
            number += 1
            if number > n_lines:
                raise FormatError("truncated file inside a trajectory", number)
            row = lines[number - 1].split()
            if len(row) < 2 or row[0] != str(traj_id) or row[1] != str(t):
                raise FormatError(f"expected frame {t} of trajectory {traj_id}", number)
            obs, label, truth, pose = _parse_frame(row, number, dim)
            frames.append(obs)
            if t < length - 1:
                labels.append(label)
                hidden.append(truth)
            poses.append(pose)
        try:
            trajectories.append(
                Trajectory.build(
                    traj_id=traj_id,
                    world_id=world_id,
                    observations=np.stack(frames),
                    actions=labels if labels and all(v is not None for v in labels) else None,
                    true_actions=hidden if hidden and all(v is not None for v in hidden) else None,
                    true_poses=poses if all(p is not None for p in poses) else None,
                )
            )
        except ValueError as e:
            raise FormatError(f"invalid trajectory {traj_id}: {str(e)}", number)

    return VideoDataset.create(
        privileged=privileged,
        kind=kind,
        trajectories=trajectories,
        noise_p=noise_p,
        seed=seed,
        stride=stride,
        config_hash=config_hash,
    )


def load_dataset(path: str) -> VideoDataset:
    return parse_dataset(read_lines(path))
