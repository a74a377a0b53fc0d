"""Procedural worlds, geodesic distances and the pose-graph value oracle"""
import heapq
import logging
import math
from collections import deque
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Any

import numpy as np
from scipy import ndimage

from app.config.hyperparameters import SENSOR_CONFIG
from app.exceptions import GenerationFailed, InvalidParams, FormatError
from app.models.sim_model import Action, Pose, N_HEADINGS, TURN_DEGREES, OBS_DIM
from app.models.world_model import (
    BranchingWorld,
    Category,
    Cell,
    CellState,
    GridWorld,
    ObjectInstance,
    WorldParams,
    N_CATEGORIES,
)
from app.services import sim_service
from app.services.artifact_service import header_line, parse_header, read_lines, write_lines

logger = logging.getLogger(__name__)

SUCCESS_RADIUS = SENSOR_CONFIG["success_radius"]
SQRT2 = math.sqrt(2.0)
FOUR_CONNECTED = ndimage.generate_binary_structure(2, 1)
EIGHT_CONNECTED = ndimage.generate_binary_structure(2, 2)

# Per-world derived data keyed by fingerprint
_cache: Dict[str, Dict[Any, Any]] = {
    "pose_graphs": {},
    "fields": {},
}
CACHE_MAX_ENTRIES = 64


def _get_cache(cache_type: str, key) -> Optional[Any]:
    return _cache[cache_type].get(key)


def _set_cache(cache_type: str, key, value) -> None:
    entries = _cache[cache_type]
    if len(entries) >= CACHE_MAX_ENTRIES:
        entries.pop(next(iter(entries)))
    entries[key] = value


def clear_cache() -> None:
    for entries in _cache.values():
        entries.clear()


# ---------------------------------------------------------------------------
# Generation
# ---------------------------------------------------------------------------

class _Retry(Exception):
    pass


def _validate_params(params: WorldParams) -> None:
    if params.width < 20 or params.height < 20:
        raise InvalidParams(f"grid must be at least 20x20 cells, got {params.width}x{params.height}")
    if params.rooms < 1 or params.min_room_size < 3 or params.max_room_size < params.min_room_size:
        raise InvalidParams("room count and sizes must be positive with min <= max")
    if params.cell_size <= 0 or params.object_density < 0 or params.corridor_width < 1 or params.max_retries < 1:
        raise InvalidParams("cell size, density, corridor width and retries must be positive")
    if params.max_room_size > min(params.width, params.height) - 2:
        raise InvalidParams("rooms must fit inside the outer wall")


def generate_world(seed: int, params: Optional[WorldParams] = None) -> GridWorld:
    """Rooms joined by corridors with objects placed against the walls; deterministic per (seed, params)"""
    params = params or WorldParams()
    _validate_params(params)
    rng = np.random.default_rng(seed)

    for attempt in range(params.max_retries):
        try:
            world = _attempt_world(rng, seed, params)
            logger.debug(f"World seed {seed} generated on attempt {attempt + 1}")
            return world
        except _Retry as e:
            logger.debug(f"World seed {seed} attempt {attempt + 1} rejected: {str(e)}")

    raise GenerationFailed(f"could not generate a connected world for seed {seed} after {params.max_retries} attempts")


def _place_rooms(rng: np.random.Generator, params: WorldParams) -> List[Tuple[int, int, int, int]]:
    rooms: List[Tuple[int, int, int, int]] = []
    for _ in range(params.rooms):
        for _ in range(100):
            h = int(rng.integers(params.min_room_size, params.max_room_size + 1))
            w = int(rng.integers(params.min_room_size, params.max_room_size + 1))
            r0 = int(rng.integers(1, params.height - h))
            c0 = int(rng.integers(1, params.width - w))
            # one wall cell between rooms
            if all(r0 > rr + rh or rr > r0 + h or c0 > rc + rw or rc > c0 + w for rr, rc, rh, rw in rooms):
                rooms.append((r0, c0, h, w))
                break
        else:
            raise _Retry("room placement")
    return rooms


def _carve_corridor(cells: np.ndarray, a: Cell, b: Cell, width: int) -> None:
    height, grid_width = cells.shape
    offsets = range(-(width // 2), width - width // 2)
    (ra, ca), (rb, cb) = a, b
    for o in offsets:
        r = min(max(ra + o, 1), height - 2)
        cells[r, min(ca, cb):max(ca, cb) + 1] = CellState.FREE
        c = min(max(cb + o, 1), grid_width - 2)
        cells[min(ra, rb):max(ra, rb) + 1, c] = CellState.FREE
    # square elbow so the corner keeps the full width
    for dr in offsets:
        for dc in offsets:
            cells[min(max(ra + dr, 1), height - 2), min(max(cb + dc, 1), grid_width - 2)] = CellState.FREE


def _free_is_connected(cells: np.ndarray) -> bool:
    _, count = ndimage.label(cells == CellState.FREE, structure=FOUR_CONNECTED)
    return count == 1


def _object_candidate(rng: np.random.Generator, room: Tuple[int, int, int, int]) -> List[Cell]:
    r0, c0, h, w = room
    side = int(rng.integers(4))
    length = int(rng.integers(1, 5))
    if side in (0, 1):  # top / bottom wall
        length = min(length, w)
        start = int(rng.integers(c0, c0 + w - length + 1))
        row = r0 if side == 0 else r0 + h - 1
        return [(row, c) for c in range(start, start + length)]
    length = min(length, h)
    start = int(rng.integers(r0, r0 + h - length + 1))
    col = c0 if side == 2 else c0 + w - 1
    return [(r, col) for r in range(start, start + length)]


def _against_wall(cells: np.ndarray, candidate: List[Cell], room: Tuple[int, int, int, int]) -> bool:
    r0, c0, h, w = room
    for r, c in candidate:
        outward = []
        if r == r0:
            outward.append((r - 1, c))
        if r == r0 + h - 1:
            outward.append((r + 1, c))
        if c == c0:
            outward.append((r, c - 1))
        if c == c0 + w - 1:
            outward.append((r, c + 1))
        if not outward or any(cells[rr, cc] == CellState.FREE for rr, cc in outward):
            return False
    return True


def _attempt_world(rng: np.random.Generator, seed: int, params: WorldParams) -> GridWorld:
    cells = np.full((params.height, params.width), CellState.OCCUPIED, dtype=np.uint8)
    rooms = _place_rooms(rng, params)
    for r0, c0, h, w in rooms:
        cells[r0:r0 + h, c0:c0 + w] = CellState.FREE
    centers = [(r0 + h // 2, c0 + w // 2) for r0, c0, h, w in rooms]
    for a, b in zip(centers, centers[1:]):
        _carve_corridor(cells, a, b, params.corridor_width)
    if not _free_is_connected(cells):
        raise _Retry("disconnected free space")

    room_area = sum(h * w for _, _, h, w in rooms)
    n_objects = max(N_CATEGORIES, int(round(params.object_density * room_area)))
    extra = [Category(int(v)) for v in rng.integers(0, N_CATEGORIES, size=n_objects - N_CATEGORIES)]
    order = [list(Category)[i] for i in rng.permutation(N_CATEGORIES)] + extra

    objects: List[ObjectInstance] = []
    taken = np.zeros_like(cells, dtype=bool)
    for category in order:
        for _ in range(200):
            room = rooms[int(rng.integers(len(rooms)))]
            candidate = _object_candidate(rng, room)
            if any(cells[r, c] != CellState.FREE for r, c in candidate):
                continue
            if any(taken[max(r - 1, 0):r + 2, max(c - 1, 0):c + 2].any() for r, c in candidate):
                continue
            if not _against_wall(cells, candidate, room):
                continue
            trial = cells.copy()
            for r, c in candidate:
                trial[r, c] = CellState.OCCUPIED
            if not _free_is_connected(trial):
                continue
            cells = trial
            for r, c in candidate:
                taken[r, c] = True
            objects.append(ObjectInstance(category=category, cells=tuple(candidate)))
            break
        else:
            raise _Retry(f"could not place {category.slug}")

    world = GridWorld(
        width=params.width,
        height=params.height,
        cell_size=params.cell_size,
        cells=cells,
        objects=tuple(objects),
        seed=seed,
    )
    navigable = navigable_mask(world)
    for category in Category:
        if not np.any(category_field(world, category)[navigable] == 0.0):
            raise _Retry(f"no navigable cell within success radius of {category.slug}")
    return world


def navigable_mask(world: GridWorld, inflation: int = 1) -> np.ndarray:
    """Largest connected component of free cells that survive obstacle inflation"""
    occupied = world.cells == CellState.OCCUPIED
    if inflation > 0:
        inflated = ndimage.binary_dilation(occupied, structure=EIGHT_CONNECTED, iterations=inflation)
    else:
        inflated = occupied
    free = ~inflated
    labels, count = ndimage.label(free, structure=FOUR_CONNECTED)
    if count == 0:
        return np.zeros_like(free)
    sizes = ndimage.sum(free, labels, index=range(1, count + 1))
    return labels == (int(np.argmax(sizes)) + 1)


def generate_branching_world(corridor_len: int = 12, branch_offset: int = 6) -> BranchingWorld:
    """T-shaped one-cell corridors: a stem from the start area up to a junction, a short arm and a long arm"""
    if corridor_len < 10:
        raise InvalidParams(f"corridor_len must be at least 10, got {corridor_len}")
    if branch_offset < 1:
        raise InvalidParams("branch_offset must be positive so the two goals sit at different distances")
    near_len = corridor_len // 2
    far_len = near_len + branch_offset
    width = near_len + far_len + 5
    height = corridor_len + 3
    bc = near_len + 2

    cells = np.full((height, width), CellState.OCCUPIED, dtype=np.uint8)
    cells[1, bc - near_len:bc + far_len + 1] = CellState.FREE
    cells[2:corridor_len + 2, bc] = CellState.FREE
    near_bed = ((1, bc - near_len - 1),)
    far_bed = ((1, bc + far_len + 1),)
    world = GridWorld(
        width=width,
        height=height,
        cell_size=SENSOR_CONFIG["forward_step"],
        cells=cells,
        objects=(
            ObjectInstance(category=Category.BED, cells=near_bed),
            ObjectInstance(category=Category.BED, cells=far_bed),
        ),
        seed=0,
    )
    start = tuple((r, bc) for r in range(corridor_len - 1, corridor_len + 2))
    branching = BranchingWorld(world=world, g_near=near_bed, g_far=far_bed, branch_b=(1, bc), start_disc_s=start)

    d_near = geodesic_distance(world, branching.branch_b, near_bed)
    d_far = geodesic_distance(world, branching.branch_b, far_bed)
    if not d_near < d_far:
        raise InvalidParams("near goal must be strictly closer to the junction than the far goal")
    logger.info(f"Branching world {width}x{height}: junction->near {d_near:.2f} m, junction->far {d_far:.2f} m")
    return branching


# ---------------------------------------------------------------------------
# Geodesics
# ---------------------------------------------------------------------------

def success_cells(world: GridWorld, targets: Iterable[Cell], radius: float = SUCCESS_RADIUS) -> List[Cell]:
    """Free cells whose centers lie within `radius` of a target cell center (the targets themselves when radius is 0)"""
    targets = list(targets)
    if radius <= 0:
        return sorted({tuple(t) for t in targets if world.is_free(*t)})
    reach = int(math.floor(radius / world.cell_size + 1e-9))
    limit = (radius / world.cell_size) ** 2 + 1e-9
    goals = set()
    for tr, tc in targets:
        for dr in range(-reach, reach + 1):
            for dc in range(-reach, reach + 1):
                if dr * dr + dc * dc <= limit and world.is_free(tr + dr, tc + dc):
                    goals.add((tr + dr, tc + dc))
    return sorted(goals)


def geodesic_field(world: GridWorld, goal_cells: Iterable[Cell]) -> np.ndarray:
    """Multi-source Dijkstra over 8-connected free cells (no corner cutting); meters, inf where unreachable"""
    s = world.cell_size
    field = np.full((world.height, world.width), np.inf)
    free = world.cells == CellState.FREE
    heap: List[Tuple[float, int, int]] = []
    for r, c in goal_cells:
        if world.is_free(r, c) and field[r, c] > 0:
            field[r, c] = 0.0
            heap.append((0.0, r, c))
    heapq.heapify(heap)
    moves = [(-1, 0, s), (1, 0, s), (0, -1, s), (0, 1, s),
             (-1, -1, SQRT2 * s), (-1, 1, SQRT2 * s), (1, -1, SQRT2 * s), (1, 1, SQRT2 * s)]
    while heap:
        d, r, c = heapq.heappop(heap)
        if d > field[r, c]:
            continue
        for dr, dc, cost in moves:
            nr, nc = r + dr, c + dc
            if not (0 <= nr < world.height and 0 <= nc < world.width) or not free[nr, nc]:
                continue
            if dr and dc and not (free[r + dr, c] and free[r, c + dc]):
                continue
            nd = d + cost
            if nd < field[nr, nc]:
                field[nr, nc] = nd
                heapq.heappush(heap, (nd, nr, nc))
    return field


def geodesic_distance(world: GridWorld, frm: Cell, targets: Iterable[Cell], radius: float = SUCCESS_RADIUS) -> float:
    """Shortest free path from `frm` to any cell within `radius` of a target; inf if unreachable"""
    targets = list(targets)
    if not targets:
        raise InvalidParams("geodesic_distance needs at least one target")
    if not world.is_free(*frm):
        raise InvalidParams(f"start cell {frm} is not free")
    field = geodesic_field(world, success_cells(world, targets, radius))
    return float(field[frm])


def category_field(world: GridWorld, category: Category, radius: float = SUCCESS_RADIUS) -> np.ndarray:
    """Cached distance field to the success region of a category"""
    key = (world.fingerprint(), int(category), radius)
    field = _get_cache("fields", key)
    if field is None:
        field = geodesic_field(world, success_cells(world, world.category_cells(category), radius))
        field.setflags(write=False)
        _set_cache("fields", key, field)
    return field


def distance_to_success(world: GridWorld, pose: Pose, category: Category) -> float:
    """Geodesic meters from the pose's cell to the nearest cell within 1 m of the category; 0 means success"""
    r, c = world.cell_of(pose.x, pose.y)
    if not world.in_bounds(r, c):
        return math.inf
    return float(category_field(world, category)[r, c])


# ---------------------------------------------------------------------------
# Pose graph and oracle values
# ---------------------------------------------------------------------------

class PoseGraph:
    """Nodes are (free cell, heading index); successor of each node under Forward/Left/Right"""

    def __init__(self, world: GridWorld):
        self.world = world
        self.cells: List[Cell] = world.free_cells()
        self.cell_index = np.full((world.height, world.width), -1, dtype=np.int64)
        for i, (r, c) in enumerate(self.cells):
            self.cell_index[r, c] = i
        n = len(self.cells) * N_HEADINGS
        self.n_nodes = n
        successors = np.empty((n, 3), dtype=np.int64)
        for i, cell in enumerate(self.cells):
            for j in range(N_HEADINGS):
                node = i * N_HEADINGS + j
                pose = sim_service.cell_pose(world, cell, j * TURN_DEGREES)
                moved = sim_service.step(world, pose, Action.FORWARD)
                if moved == pose:
                    successors[node, Action.FORWARD] = node
                else:
                    target = int(self.cell_index[world.cell_of(moved.x, moved.y)])
                    successors[node, Action.FORWARD] = node if target < 0 else target * N_HEADINGS + j
                successors[node, Action.LEFT] = i * N_HEADINGS + (j - 1) % N_HEADINGS
                successors[node, Action.RIGHT] = i * N_HEADINGS + (j + 1) % N_HEADINGS
        self.successors = successors
        self._observations: Optional[np.ndarray] = None
        self._visible: Optional[np.ndarray] = None
        self._predecessors: Optional[List[List[int]]] = None

    @property
    def observations(self) -> np.ndarray:
        """(n_nodes, OBS_DIM) render at every node's cell-center pose"""
        if self._observations is None:
            obs = np.empty((self.n_nodes, OBS_DIM))
            for node in range(self.n_nodes):
                obs[node] = sim_service.render(self.world, self.node_pose(node))
            obs.setflags(write=False)
            self._observations = obs
        return self._observations

    @property
    def visible(self) -> np.ndarray:
        """(n_nodes, 5) whether each category is in view from the node"""
        if self._visible is None:
            self._visible = np.array([sim_service.visible_categories(o) for o in self.observations])
        return self._visible

    def node(self, cell: Cell, heading_index: int) -> int:
        index = self.cell_index[cell] if self.world.in_bounds(*cell) else -1
        return -1 if index < 0 else int(index) * N_HEADINGS + heading_index

    def node_of(self, pose: Pose) -> int:
        return self.node(self.world.cell_of(pose.x, pose.y), pose.heading_index)

    def node_pose(self, node: int) -> Pose:
        cell = self.cells[node // N_HEADINGS]
        return sim_service.cell_pose(self.world, cell, (node % N_HEADINGS) * TURN_DEGREES)

    def node_cell(self, node: int) -> Cell:
        return self.cells[node // N_HEADINGS]

    def steps_to(self, goal_mask: np.ndarray) -> np.ndarray:
        """Fewest actions from every node to any goal node (reverse BFS); inf if unreachable"""
        if self._predecessors is None:
            preds: List[List[int]] = [[] for _ in range(self.n_nodes)]
            for node in range(self.n_nodes):
                for succ in set(self.successors[node].tolist()):
                    if succ != node:
                        preds[succ].append(node)
            self._predecessors = preds
        steps = np.full(self.n_nodes, np.inf)
        queue = deque()
        for node in np.flatnonzero(goal_mask):
            steps[node] = 0
            queue.append(int(node))
        while queue:
            node = queue.popleft()
            for prev in self._predecessors[node]:
                if steps[prev] == np.inf:
                    steps[prev] = steps[node] + 1
                    queue.append(prev)
        return steps


def pose_graph(world: GridWorld) -> PoseGraph:
    key = world.fingerprint()
    graph = _get_cache("pose_graphs", key)
    if graph is None:
        graph = PoseGraph(world)
        _set_cache("pose_graphs", key, graph)
        logger.debug(f"Built pose graph with {graph.n_nodes} nodes")
    return graph


def oracle_steps(world: GridWorld, category: Category) -> np.ndarray:
    graph = pose_graph(world)
    key = (world.fingerprint(), "steps", int(category))
    steps = _get_cache("fields", key)
    if steps is None:
        steps = graph.steps_to(graph.visible[:, int(category)])
        _set_cache("fields", key, steps)
    return steps


def _check_gamma(gamma: float) -> None:
    if not 0.0 < gamma < 1.0:
        raise InvalidParams(f"gamma must lie in (0, 1), got {gamma}")


def oracle_value(world: GridWorld, cell: Cell, category: Category, gamma: float) -> float:
    """gamma**s with s the fewest steps from any heading at `cell` to a pose that sees the category; 0 if unreachable"""
    _check_gamma(gamma)
    if not world.is_free(*cell):
        raise InvalidParams(f"cell {cell} is not free")
    graph = pose_graph(world)
    base = graph.node(cell, 0)
    s = float(np.min(oracle_steps(world, category)[base:base + N_HEADINGS]))
    return 0.0 if math.isinf(s) else gamma ** s


def oracle_pose_value(world: GridWorld, pose: Pose, category: Category, gamma: float) -> float:
    _check_gamma(gamma)
    node = pose_graph(world).node_of(pose)
    if node < 0:
        return 0.0
    s = float(oracle_steps(world, category)[node])
    return 0.0 if math.isinf(s) else gamma ** s


def value_iteration(world: GridWorld, category: Category, gamma: float, tol: float = 0.0, max_iter: int = 100000) -> np.ndarray:
    """Q fixed point of the clipped next-frame-reward MDP on the pose graph; shape (n_nodes, 3)"""
    _check_gamma(gamma)
    graph = pose_graph(world)
    succ = graph.successors
    reward = graph.visible[:, int(category)].astype(np.float64)[succ]
    q = np.zeros(succ.shape)
    for _ in range(max_iter):
        updated = np.clip(reward + gamma * q.max(axis=1)[succ], 0.0, 1.0)
        delta = float(np.max(np.abs(updated - q))) if q.size else 0.0
        q = updated
        if delta <= tol:
            break
    return q


# ---------------------------------------------------------------------------
# World files
# ---------------------------------------------------------------------------

def world_lines(world: GridWorld, config_hash: str = "") -> List[str]:
    lines = [header_line("VLVWORLD", config_hash), f"{world.width} {world.height} {world.cell_size!r}"]
    for row in world.cells:
        lines.append("".join("#" if v else "." for v in row))
    for inst in world.objects:
        lines.append(f"OBJ {inst.category.slug} " + ";".join(f"{r},{c}" for r, c in inst.cells))
    lines.append(f"SEED {world.seed}")
    return lines


def save_world(world: GridWorld, path: str, config_hash: str = "") -> None:
    write_lines(path, world_lines(world, config_hash))


def parse_world(lines: Sequence[str]) -> Tuple[GridWorld, str]:
    _, extra = parse_header(list(lines), "VLVWORLD")
    config_hash = extra[0] if extra else ""
    if len(lines) < 2:
        raise FormatError("missing dimension line", 2)
    dims = lines[1].split()
    try:
        width, height, cell_size = int(dims[0]), int(dims[1]), float(dims[2])
    except (IndexError, ValueError):
        raise FormatError("expected `<width> <height> <cell_size>`", 2)
    if len(lines) < 2 + height:
        raise FormatError("file ends inside the cell rows", len(lines) + 1)
    cells = np.zeros((height, width), dtype=np.uint8)
    for r in range(height):
        row = lines[2 + r]
        if len(row) != width or set(row) - {".", "#"}:
            raise FormatError(f"row must have {width} characters of '.' or '#'", 3 + r)
        cells[r] = [1 if ch == "#" else 0 for ch in row]
    objects, seed = [], 0
    for offset, line in enumerate(lines[2 + height:]):
        number = 3 + height + offset
        tokens = line.split()
        if not tokens:
            continue
        try:
            if tokens[0] == "OBJ":
                cells_list = [tuple(int(v) for v in part.split(",")) for part in tokens[2].split(";")]
                objects.append(ObjectInstance(category=Category.parse(tokens[1]), cells=tuple(cells_list)))
            elif tokens[0] == "SEED":
                seed = int(tokens[1])
            else:
                raise FormatError(f"unexpected record {tokens[0]}", number)
        except (IndexError, ValueError) as e:
            raise FormatError(f"bad record: {str(e)}", number)
    try:
        world = GridWorld(width=width, height=height, cell_size=cell_size, cells=cells, objects=tuple(objects), seed=seed)
    except ValueError as e:
        raise FormatError(f"inconsistent world: {str(e)}", 2)
    return world, config_hash


def load_world(path: str) -> Tuple[GridWorld, str]:
    """Returns the world and the config hash recorded in its header"""
    return parse_world(read_lines(path))
