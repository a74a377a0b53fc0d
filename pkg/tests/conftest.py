"""Shared fixtures: small hand-drawn worlds that keep the tests fast"""
from typing import Dict, List

import numpy as np
import pytest

from app.models.world_model import Category, GridWorld, ObjectInstance, WorldParams
from app.services import world_service

# Letters mark occupied object cells; all cells with the same letter form one instance
LETTERS: Dict[str, Category] = {
    "B": Category.BED,
    "C": Category.CHAIR,
    "S": Category.COUCH,
    "T": Category.DINING_TABLE,
    "W": Category.TOILET,
}

CORRIDOR = [
    "####################",
    "#..................#",
    "#.................T#",
    "#..................#",
    "####################",
]

ROOM = [
    "###############",
    "#.....TT......#",
    "#.............#",
    "#.............#",
    "#.............#",
    "#.............#",
    "#.............#",
    "#.............#",
    "#.............#",
    "#.............#",
    "#.............#",
    "#.............#",
    "#.............#",
    "#...........B.#",
    "###############",
]

SEALED = [
    "##############",
    "#....#.......#",
    "#....#.......#",
    "#....#.....T.#",
    "#....#.......#",
    "#....#.......#",
    "##############",
]

EMPTY = [
    "########",
    "#......#",
    "#......#",
    "#......#",
    "#......#",
    "########",
]

HALL = [
    "#" * 42,
    "#" + "." * 40 + "#",
    "#" + "." * 39 + "B#",
    "#" + "." * 40 + "#",
    "#" * 42,
]


def make_world(rows: List[str], seed: int = 0) -> GridWorld:
    height, width = len(rows), len(rows[0])
    cells = np.zeros((height, width), dtype=np.uint8)
    instances: Dict[str, list] = {}
    for r, row in enumerate(rows):
        for c, ch in enumerate(row):
            if ch != ".":
                cells[r, c] = 1
            if ch in LETTERS:
                instances.setdefault(ch, []).append((r, c))
    objects = tuple(ObjectInstance(category=LETTERS[ch], cells=tuple(cs)) for ch, cs in instances.items())
    return GridWorld(width=width, height=height, cell_size=0.25, cells=cells, objects=objects, seed=seed)


@pytest.fixture
def corridor_world() -> GridWorld:
    """3-cell-wide corridor with a dining table at the east end"""
    return make_world(CORRIDOR)


@pytest.fixture
def room_world() -> GridWorld:
    return make_world(ROOM)


@pytest.fixture
def sealed_world() -> GridWorld:
    """Two compartments without a door; the table is in the east one"""
    return make_world(SEALED)


@pytest.fixture
def empty_world() -> GridWorld:
    """A walled room without objects"""
    return make_world(EMPTY)


@pytest.fixture(scope="session")
def small_params() -> WorldParams:
    return WorldParams(width=24, height=24, rooms=2, min_room_size=7, max_room_size=10)


@pytest.fixture(scope="session")
def generated_world(small_params) -> GridWorld:
    return world_service.generate_world(3, small_params)


@pytest.fixture
def hall_world() -> GridWorld:
    """A corridor longer than the detector range with a bed at its east end"""
    return make_world(HALL)
