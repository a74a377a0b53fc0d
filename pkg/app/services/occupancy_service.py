"""Agent-built occupancy map and fast-marching distance fields over it"""
import logging
import math
from typing import List, Optional, Tuple

import numpy as np
import skfmm
from numpy import ma
from scipy import ndimage

from app.config.hyperparameters import NAV_CONFIG
from app.exceptions import GoalInObstacle
from app.models.sim_model import Pose
from app.models.world_model import Cell, GridWorld
from app.services import sim_service

logger = logging.getLogger(__name__)

UNKNOWN = -1
FREE = 0
OCCUPIED = 1
RAY_SAMPLE = 0.02  # meters between samples along a sensor ray
INFLATION_STRUCTURE = np.ones((3, 3), dtype=bool)
FMM_CONNECTIVITY = ndimage.generate_binary_structure(2, 1)


class OccupancyGrid:
    """Unknown / Free / Occupied per cell in world coordinates (localization is perfect).

    Occupied is sticky: later free-space evidence never clears it.
    """

    def __init__(self, height: int, width: int, cell_size: float, inflation: int = NAV_CONFIG["inflation_cells"]):
        self.height = height
        self.width = width
        self.cell_size = cell_size
        self.inflation = inflation
        self.cells = np.full((height, width), UNKNOWN, dtype=np.int8)
        self.version = 0

    @classmethod
    def for_world(cls, world: GridWorld, inflation: int = NAV_CONFIG["inflation_cells"]) -> "OccupancyGrid":
        return cls(world.height, world.width, world.cell_size, inflation)

    def cell_of(self, x: float, y: float) -> Cell:
        s = self.cell_size
        return int(math.floor(round(y / s, 9))), int(math.floor(round(x / s, 9)))

    def in_bounds(self, r: int, c: int) -> bool:
        return 0 <= r < self.height and 0 <= c < self.width

    def mark_free(self, r: int, c: int) -> None:
        if self.in_bounds(r, c) and self.cells[r, c] == UNKNOWN:
            self.cells[r, c] = FREE
            self.version += 1

    def mark_occupied(self, r: int, c: int) -> None:
        if self.in_bounds(r, c) and self.cells[r, c] != OCCUPIED:
            self.cells[r, c] = OCCUPIED
            self.version += 1

    def integrate_scan(self, pose: Pose, hits: List[Tuple[float, float, int]]) -> None:
        """Cells along each ray become Free, the cell at a ray's hit point Occupied"""
        for angle, depth, _ in hits:
            dx, dy = sim_service.direction(angle)
            ts = np.arange(0.0, depth, RAY_SAMPLE)
            rows = np.floor(np.round((pose.y + ts * dy) / self.cell_size, 9)).astype(int)
            cols = np.floor(np.round((pose.x + ts * dx) / self.cell_size, 9)).astype(int)
            for r, c in set(zip(rows.tolist(), cols.tolist())):
                self.mark_free(r, c)
            if depth < sim_service.MAX_DEPTH:
                # nudge past the boundary into the hit cell
                self.mark_occupied(*self.cell_of(pose.x + (depth + 1e-6) * dx, pose.y + (depth + 1e-6) * dy))
        self.mark_free(*self.cell_of(pose.x, pose.y))

    def observe(self, world: GridWorld, pose: Pose) -> None:
        self.integrate_scan(pose, sim_service.scan(world, pose))

    def mark_bump(self, pose: Pose) -> Optional[Cell]:
        """A blocked Forward marks the first cell ahead outside the agent's own cell"""
        here = self.cell_of(pose.x, pose.y)
        dx, dy = sim_service.direction(pose.heading)
        for k in range(1, 11):
            t = self.cell_size * k / 5.0
            ahead = self.cell_of(pose.x + t * dx, pose.y + t * dy)
            if ahead != here:
                self.mark_occupied(*ahead)
                return ahead
        return None

    def traversable(self, agent_cell: Optional[Cell] = None) -> np.ndarray:
        """Not-Occupied after inflating obstacles; Unknown counts as traversable and the agent's cell always is"""
        blocked = self.cells == OCCUPIED
        if self.inflation > 0 and blocked.any():
            blocked = ndimage.binary_dilation(blocked, structure=INFLATION_STRUCTURE, iterations=self.inflation)
        free = ~blocked
        if agent_cell is not None and self.in_bounds(*agent_cell):
            free[agent_cell] = True
        return free


def fmm_distance_field(grid: OccupancyGrid, goal: Cell, agent_cell: Optional[Cell] = None) -> np.ndarray:
    """Unit-speed arrival times (meters) from the goal cell over traversable cells; inf elsewhere"""
    traversable = grid.traversable(agent_cell)
    if not grid.in_bounds(*goal) or not traversable[goal]:
        raise GoalInObstacle(f"goal cell {goal} is occupied or outside the map")
    phi = np.ones(traversable.shape)
    phi[goal] = 0.0
    distance = skfmm.distance(ma.masked_array(phi, ~traversable), dx=grid.cell_size)
    field = ma.filled(distance, np.inf).astype(np.float64)
    labels, _ = ndimage.label(traversable, structure=FMM_CONNECTIVITY)
    field[labels != labels[goal]] = np.inf
    field[goal] = 0.0
    return field


def sample_field(field: np.ndarray, x: float, y: float, cell_size: float) -> float:
    """Bilinear interpolation between cell centers, using only finite neighbors; inf inside untraversable cells"""
    height, width = field.shape
    r, c = int(math.floor(round(y / cell_size, 9))), int(math.floor(round(x / cell_size, 9)))
    if not (0 <= r < height and 0 <= c < width) or not np.isfinite(field[r, c]):
        return math.inf
    u, v = x / cell_size - 0.5, y / cell_size - 0.5
    c0, r0 = int(math.floor(u)), int(math.floor(v))
    fu, fv = u - c0, v - r0
    total, weight = 0.0, 0.0
    for dr, wr in ((0, 1.0 - fv), (1, fv)):
        for dc, wc in ((0, 1.0 - fu), (1, fu)):
            rr, cc = r0 + dr, c0 + dc
            w = wr * wc
            if w <= 0.0 or not (0 <= rr < height and 0 <= cc < width) or not np.isfinite(field[rr, cc]):
                continue
            total += w * field[rr, cc]
            weight += w
    return total / weight if weight > 0.0 else float(field[r, c])
