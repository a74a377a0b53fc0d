import math

import numpy as np
import pytest
from scipy import ndimage

from app.exceptions import FormatError, InvalidParams
from app.models.world_model import Category, WorldParams
from app.services import world_service

GAMMA = 0.9


def test_generation_is_deterministic(generated_world, small_params):
    """Same seed and parameters give the same world"""
    again = world_service.generate_world(3, small_params)
    assert again == generated_world
    assert again.fingerprint() == generated_world.fingerprint()


def test_generated_world_is_connected_with_every_category(generated_world):
    free = generated_world.cells == 0
    _, count = ndimage.label(free, structure=ndimage.generate_binary_structure(2, 1))
    assert count == 1
    assert generated_world.categories_present() == list(Category)
    for instance in generated_world.objects:
        assert all(generated_world.cells[r, c] == 1 for r, c in instance.cells)


def test_every_category_reachable_from_navigable_space(generated_world):
    navigable = world_service.navigable_mask(generated_world)
    for category in Category:
        field = world_service.category_field(generated_world, category)
        assert np.any(field[navigable] == 0.0), category


def test_rejects_tiny_grid():
    with pytest.raises(InvalidParams):
        world_service.generate_world(0, WorldParams(width=10, height=10, max_room_size=6, min_room_size=4))


def test_corridor_geodesic_distance(corridor_world):
    """From the west end the nearest cell within 1 m of the table is 13 cells away"""
    assert world_service.geodesic_distance(corridor_world, (2, 1), [(2, 18)]) == pytest.approx(3.25)
    assert world_service.geodesic_distance(corridor_world, (2, 14), [(2, 18)]) == 0.0


def test_geodesic_distance_unreachable(sealed_world):
    table = sealed_world.category_cells(Category.DINING_TABLE)
    assert math.isinf(world_service.geodesic_distance(sealed_world, (3, 2), table))


def test_geodesic_distance_rejects_occupied_start(corridor_world):
    with pytest.raises(InvalidParams):
        world_service.geodesic_distance(corridor_world, (0, 0), [(2, 18)])


def test_success_cells_respect_radius(corridor_world):
    cells = world_service.success_cells(corridor_world, [(2, 18)], 1.0)
    assert (2, 14) in cells and (1, 15) in cells
    assert (1, 14) not in cells
    assert (2, 18) not in cells  # occupied


def test_distance_to_success(corridor_world):
    from app.services.sim_service import cell_pose

    near = cell_pose(corridor_world, (2, 16))
    far = cell_pose(corridor_world, (2, 1))
    assert world_service.distance_to_success(corridor_world, near, Category.DINING_TABLE) == 0.0
    assert world_service.distance_to_success(corridor_world, far, Category.DINING_TABLE) == pytest.approx(3.25)
    assert math.isinf(world_service.distance_to_success(corridor_world, far, Category.BED))


def test_oracle_value_decreases_with_distance(corridor_world):
    values = [world_service.oracle_value(corridor_world, (2, c), Category.DINING_TABLE, GAMMA) for c in (1, 5, 9)]
    assert values[0] <= values[1] <= values[2] <= 1.0
    assert world_service.oracle_value(corridor_world, (2, 1), Category.BED, GAMMA) == 0.0


def test_oracle_value_validates_inputs(corridor_world):
    with pytest.raises(InvalidParams):
        world_service.oracle_value(corridor_world, (2, 1), Category.DINING_TABLE, 1.0)
    with pytest.raises(InvalidParams):
        world_service.oracle_value(corridor_world, (0, 0), Category.DINING_TABLE, GAMMA)


def test_value_iteration_matches_oracle_steps(corridor_world):
    """max_a Q(n, a) = gamma**(s(n) - 1) for every node that does not already see the target"""
    category = Category.DINING_TABLE
    q = world_service.value_iteration(corridor_world, category, GAMMA)
    steps = world_service.oracle_steps(corridor_world, category)
    graph = world_service.pose_graph(corridor_world)
    assert q.shape == (graph.n_nodes, 3)
    checked = 0
    for node in range(graph.n_nodes):
        s = steps[node]
        if np.isfinite(s) and s >= 1:
            assert q[node].max() == pytest.approx(GAMMA ** (s - 1), abs=1e-9)
            checked += 1
    assert checked > 0
    assert np.all((q >= 0.0) & (q <= 1.0))


def test_pose_graph_turns_and_blocked_forward(corridor_world):
    graph = world_service.pose_graph(corridor_world)
    node = graph.node((2, 1), 6)  # facing west into the wall
    assert graph.successors[node, 0] == node
    assert graph.successors[node, 1] == graph.node((2, 1), 5)
    assert graph.successors[node, 2] == graph.node((2, 1), 7)
    east = graph.node((2, 1), 0)
    assert graph.successors[east, 0] == graph.node((2, 2), 0)


def test_branching_world_near_goal_is_closer():
    branching = world_service.generate_branching_world(12, 6)
    world = branching.world
    d_near = world_service.geodesic_distance(world, branching.branch_b, branching.g_near)
    d_far = world_service.geodesic_distance(world, branching.branch_b, branching.g_far)
    assert d_near < d_far
    assert all(world.is_free(*cell) for cell in branching.start_disc_s)


def test_branching_world_rejects_short_corridor():
    with pytest.raises(InvalidParams):
        world_service.generate_branching_world(corridor_len=8)
    with pytest.raises(InvalidParams):
        world_service.generate_branching_world(corridor_len=12, branch_offset=0)


def test_world_file_round_trip(tmp_path, generated_world):
    path = tmp_path / "world.txt"
    world_service.save_world(generated_world, str(path), "abc123def456")
    loaded, config_hash = world_service.load_world(str(path))
    assert loaded == generated_world
    assert config_hash == "abc123def456"


def test_parse_world_reports_bad_row(corridor_world):
    lines = world_service.world_lines(corridor_world)
    lines[4] = lines[4][:-1]
    with pytest.raises(FormatError) as excinfo:
        world_service.parse_world(lines)
    assert excinfo.value.line == 5


def test_parse_world_rejects_wrong_magic():
    with pytest.raises(FormatError) as excinfo:
        world_service.parse_world(["VLVQUAD 1", "2 2 0.25", "..", ".."])
    assert excinfo.value.line == 1


def test_geodesic_distance_is_a_metric(generated_world):
    """Symmetry and the triangle inequality on random triples of free cells"""
    free = np.argwhere(generated_world.cells == 0)
    rng = np.random.default_rng(11)

    def d(a, b):
        return world_service.geodesic_distance(generated_world, a, [b], radius=0.0)

    for _ in range(15):
        a, b, c = (tuple(int(v) for v in free[i]) for i in rng.choice(len(free), size=3, replace=False))
        assert d(a, b) == pytest.approx(d(b, a), abs=1e-9)
        assert d(a, c) <= d(a, b) + d(b, c) + 1e-9
        assert d(a, a) == 0.0
