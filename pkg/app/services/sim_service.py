"""Agent kinematics, collision checking and the raycast sensor"""
import logging
import math
from typing import Dict, List, NamedTuple, Tuple

import numpy as np

from app.config.hyperparameters import SENSOR_CONFIG
from app.models.sim_model import (
    Action,
    Pose,
    Panorama,
    N_RAYS,
    N_SEMANTIC,
    NONE_CLASS,
    OBS_DIM,
    RAY_FEATURES,
    N_HEADINGS,
    TURN_DEGREES,
)
from app.models.world_model import GridWorld, Category, Cell

logger = logging.getLogger(__name__)

MAX_DEPTH = SENSOR_CONFIG["max_depth"]
FOV = SENSOR_CONFIG["fov_degrees"]
ROBOT_RADIUS = SENSOR_CONFIG["robot_radius"]
FORWARD_STEP = SENSOR_CONFIG["forward_step"]
SWEEP_RESOLUTION = 0.05
RAY_OFFSETS = tuple(-FOV / 2 + FOV * i / (N_RAYS - 1) for i in range(N_RAYS))

# Plain-list copies of world grids keyed by fingerprint; list indexing beats numpy scalar access in the ray loop
_cache: Dict[str, Tuple[List[List[int]], List[List[int]]]] = {}
_CACHE_MAX = 64


class Visibility(NamedTuple):
    visible: bool
    distance: float


def _grids(world: GridWorld) -> Tuple[List[List[int]], List[List[int]]]:
    key = world.fingerprint()
    cached = _cache.get(key)
    if cached is None:
        if len(_cache) >= _CACHE_MAX:
            _cache.pop(next(iter(_cache)))
        cached = (world.cells.tolist(), world.semantic.tolist())
        _cache[key] = cached
    return cached


def direction(heading: float) -> Tuple[float, float]:
    """Unit vector (dx, dy) for a heading in degrees"""
    theta = math.radians(heading)
    return math.cos(theta), math.sin(theta)


def disc_blocked(world: GridWorld, x: float, y: float, radius: float = ROBOT_RADIUS) -> bool:
    """True when a disc at (x, y) overlaps an Occupied or out-of-bounds cell"""
    s = world.cell_size
    occupied, _ = _grids(world)
    r0, r1 = math.floor((y - radius) / s), math.floor((y + radius) / s)
    c0, c1 = math.floor((x - radius) / s), math.floor((x + radius) / s)
    for r in range(r0, r1 + 1):
        for c in range(c0, c1 + 1):
            if 0 <= r < world.height and 0 <= c < world.width and occupied[r][c] == 0:
                continue
            nx = min(max(x, c * s), (c + 1) * s)
            ny = min(max(y, r * s), (r + 1) * s)
            if math.hypot(x - nx, y - ny) < radius - 1e-12:
                return True
    return False


def pose_is_valid(world: GridWorld, pose: Pose) -> bool:
    r, c = world.cell_of(pose.x, pose.y)
    return world.is_free(r, c) and not disc_blocked(world, pose.x, pose.y)


def cell_pose(world: GridWorld, cell: Cell, heading: int = 0) -> Pose:
    x, y = world.cell_center(*cell)
    return Pose(x=x, y=y, heading=heading)


def step(world: GridWorld, pose: Pose, action: Action) -> Pose:
    """Apply one action; a blocked Forward leaves the pose unchanged"""
    if action == Action.LEFT:
        return pose.rotated(-TURN_DEGREES)
    if action == Action.RIGHT:
        return pose.rotated(TURN_DEGREES)
    if action != Action.FORWARD:
        return pose
    dx, dy = direction(pose.heading)
    n_samples = int(round(FORWARD_STEP / SWEEP_RESOLUTION))
    for k in range(1, n_samples + 1):
        t = FORWARD_STEP * k / n_samples
        if disc_blocked(world, pose.x + t * dx, pose.y + t * dy):
            return pose
    return Pose(
        x=round(pose.x + FORWARD_STEP * dx, 12),
        y=round(pose.y + FORWARD_STEP * dy, 12),
        heading=pose.heading,
    )


def cast_ray(world: GridWorld, x: float, y: float, angle: float, max_depth: float = MAX_DEPTH) -> Tuple[float, int]:
    """Amanatides-Woo traversal; returns (depth to first Occupied cell boundary, category code or -1)"""
    s = world.cell_size
    occupied, semantic = _grids(world)
    dx, dy = direction(angle)
    c, r = math.floor(x / s), math.floor(y / s)

    if abs(dx) < 1e-12:
        step_c, t_max_x, t_delta_x = 0, math.inf, math.inf
    elif dx > 0:
        step_c, t_max_x, t_delta_x = 1, ((c + 1) * s - x) / dx, s / dx
    else:
        step_c, t_max_x, t_delta_x = -1, (c * s - x) / dx, -s / dx
    if abs(dy) < 1e-12:
        step_r, t_max_y, t_delta_y = 0, math.inf, math.inf
    elif dy > 0:
        step_r, t_max_y, t_delta_y = 1, ((r + 1) * s - y) / dy, s / dy
    else:
        step_r, t_max_y, t_delta_y = -1, (r * s - y) / dy, -s / dy

    while True:
        if t_max_x < t_max_y:
            c += step_c
            t = t_max_x
            t_max_x += t_delta_x
        else:
            r += step_r
            t = t_max_y
            t_max_y += t_delta_y
        if t >= max_depth:
            return max_depth, -1
        if not (0 <= r < world.height and 0 <= c < world.width):
            return t, -1
        if occupied[r][c]:
            return t, semantic[r][c]


def scan(world: GridWorld, pose: Pose) -> List[Tuple[float, float, int]]:
    """(ray angle, depth, category code) for the 15 sensor rays, left to right"""
    hits = []
    for offset in RAY_OFFSETS:
        angle = pose.heading + offset
        depth, category = cast_ray(world, pose.x, pose.y, angle)
        hits.append((angle, depth, category))
    return hits


def render(world: GridWorld, pose: Pose) -> np.ndarray:
    """Flattened (depth / max_depth, 6-way one-hot) per ray"""
    obs = np.zeros(OBS_DIM, dtype=np.float64)
    for i, (_, depth, category) in enumerate(scan(world, pose)):
        base = i * RAY_FEATURES
        obs[base] = depth / MAX_DEPTH
        obs[base + 1 + (NONE_CLASS if category < 0 else category)] = 1.0
    return obs


def decode(obs: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Split an observation into depths in meters and per-ray class indices (5 = none)"""
    rays = np.asarray(obs, dtype=np.float64)[:OBS_DIM].reshape(N_RAYS, RAY_FEATURES)
    return rays[:, 0] * MAX_DEPTH, np.argmax(rays[:, 1:], axis=1)


def panorama(world: GridWorld, pose: Pose) -> Panorama:
    views = np.stack([render(world, pose.rotated(TURN_DEGREES * j)) for j in range(N_HEADINGS)])
    return Panorama(pose=pose, views=views)


def panoramic_vector(views: np.ndarray, start: int = 0) -> np.ndarray:
    """Concatenate the 12 views beginning with direction `start`"""
    return np.roll(np.asarray(views), -start, axis=0).reshape(-1)


def visible(world: GridWorld, pose: Pose, category: Category) -> Visibility:
    depths, classes = decode(render(world, pose))
    hitting = depths[(classes == int(category)) & (depths < MAX_DEPTH)]
    if hitting.size == 0:
        return Visibility(False, math.inf)
    return Visibility(True, float(np.median(hitting)))


def visible_categories(obs: np.ndarray) -> np.ndarray:
    """Boolean mask over categories hit by at least one ray of an observation"""
    depths, classes = decode(obs)
    mask = np.zeros(N_SEMANTIC - 1, dtype=bool)
    for depth, cls in zip(depths, classes):
        if cls != NONE_CLASS and depth < MAX_DEPTH:
            mask[cls] = True
    return mask
