import math

import numpy as np
import pytest

from app.exceptions import GoalInObstacle
from app.services import sim_service, world_service
from app.services.occupancy_service import (
    FREE,
    OCCUPIED,
    UNKNOWN,
    OccupancyGrid,
    fmm_distance_field,
    sample_field,
)


@pytest.fixture
def open_grid() -> OccupancyGrid:
    return OccupancyGrid(21, 21, 0.25, inflation=0)


def test_unknown_space_is_traversable(open_grid):
    assert np.all(open_grid.cells == UNKNOWN)
    assert open_grid.traversable().all()


def test_open_field_approximates_euclidean(open_grid):
    field = fmm_distance_field(open_grid, (10, 10))
    assert field[10, 10] == 0.0
    assert field[10, 18] == pytest.approx(2.0, rel=0.1)
    assert field[2, 10] == pytest.approx(2.0, rel=0.1)
    assert field[4, 4] == pytest.approx(math.hypot(1.5, 1.5), rel=0.15)


def test_goal_in_obstacle(open_grid):
    open_grid.mark_occupied(10, 10)
    with pytest.raises(GoalInObstacle):
        fmm_distance_field(open_grid, (10, 10))
    with pytest.raises(GoalInObstacle):
        fmm_distance_field(open_grid, (30, 0))


def test_inflation_blocks_neighbors():
    grid = OccupancyGrid(9, 9, 0.25, inflation=1)
    grid.mark_occupied(4, 4)
    traversable = grid.traversable()
    assert not traversable[3:6, 3:6].any()
    assert traversable[2, 4] and traversable[4, 6]
    assert grid.traversable(agent_cell=(4, 5))[4, 5]


def test_wall_cuts_the_field(open_grid):
    for r in range(open_grid.height):
        open_grid.mark_occupied(r, 12)
    field = fmm_distance_field(open_grid, (10, 5))
    assert np.isinf(field[10, 15])
    assert np.isinf(field[10, 12])
    assert np.isfinite(field[10, 8])


def test_sample_field_interpolates_between_centers(open_grid):
    field = fmm_distance_field(open_grid, (10, 10))
    s = open_grid.cell_size
    at_center = sample_field(field, 14.5 * s, 10.5 * s, s)
    assert at_center == pytest.approx(field[10, 14])
    between = sample_field(field, 15.0 * s, 10.5 * s, s)
    assert between == pytest.approx(0.5 * (field[10, 14] + field[10, 15]))
    assert math.isinf(sample_field(field, -1.0, 0.5, s))


def test_sample_field_inside_blocked_cell(open_grid):
    open_grid.mark_occupied(3, 3)
    field = fmm_distance_field(open_grid, (10, 10))
    s = open_grid.cell_size
    assert math.isinf(sample_field(field, 3.5 * s, 3.5 * s, s))


def test_scan_marks_only_real_obstacles(corridor_world):
    grid = OccupancyGrid.for_world(corridor_world)
    pose = sim_service.cell_pose(corridor_world, (2, 12), 0)
    grid.observe(corridor_world, pose)
    assert grid.version > 0
    assert grid.cells[2, 12] == FREE
    assert grid.cells[2, 18] == OCCUPIED
    assert np.all(corridor_world.cells[grid.cells == OCCUPIED] == 1)
    assert np.all(corridor_world.cells[grid.cells == FREE] == 0)


def test_occupied_is_sticky(corridor_world):
    grid = OccupancyGrid.for_world(corridor_world)
    grid.mark_occupied(2, 15)
    grid.observe(corridor_world, sim_service.cell_pose(corridor_world, (2, 12), 0))
    assert grid.cells[2, 15] == OCCUPIED


def test_repeated_scan_leaves_version_unchanged(corridor_world):
    grid = OccupancyGrid.for_world(corridor_world)
    pose = sim_service.cell_pose(corridor_world, (2, 12), 0)
    grid.observe(corridor_world, pose)
    version = grid.version
    grid.observe(corridor_world, pose)
    assert grid.version == version


def test_bump_marks_cell_ahead(corridor_world):
    grid = OccupancyGrid.for_world(corridor_world)
    pose = sim_service.cell_pose(corridor_world, (2, 17), 0)
    assert grid.mark_bump(pose) == (2, 18)
    assert grid.cells[2, 18] == OCCUPIED


@pytest.mark.parametrize("world_name, goal", [("room_world", (7, 7)), ("corridor_world", (2, 1)), ("sealed_world", (3, 2))])
def test_fmm_field_is_bracketed_by_dijkstra(request, world_name, goal):
    """Within one cell diagonal of the 8-connected Dijkstra distance, and unreachable exactly where Dijkstra is"""
    world = request.getfixturevalue(world_name)
    grid = OccupancyGrid.for_world(world, inflation=0)
    grid.cells = world.cells.astype(np.int8)
    fmm = fmm_distance_field(grid, goal)
    dijkstra = world_service.geodesic_field(world, [goal])
    assert np.array_equal(np.isinf(fmm), np.isinf(dijkstra))
    finite = np.isfinite(dijkstra)
    slack = math.sqrt(2.0) * grid.cell_size
    assert np.all(fmm[finite] >= dijkstra[finite] - slack)
    assert np.all(fmm[finite] <= dijkstra[finite] + slack)
