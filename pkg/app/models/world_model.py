from enum import IntEnum
from typing import Optional, Tuple, List
import hashlib

import numpy as np
from pydantic import BaseModel, Field, PrivateAttr, field_validator

from app.config.hyperparameters import WORLD_CONFIG

Cell = Tuple[int, int]


class Category(IntEnum):
    """ObjectGoal categories with stable integer codes"""

    BED = 0
    CHAIR = 1
    COUCH = 2
    DINING_TABLE = 3
    TOILET = 4

    @property
    def slug(self) -> str:
        return self.name.lower()

    @classmethod
    def parse(cls, text: str) -> "Category":
        """Accept `dining_table`, `DiningTable`, `dining-table` or an integer code"""
        key = str(text).strip().replace("-", "_")
        if key.isdigit():
            return cls(int(key))
        normalized = key.replace("_", "").lower()
        for member in cls:
            if member.name.replace("_", "").lower() == normalized:
                return member
        raise ValueError(f"Unknown category: {text}")


N_CATEGORIES = len(Category)


class CellState(IntEnum):
    FREE = 0
    OCCUPIED = 1


class ObjectInstance(BaseModel):
    """One semantic object instance occupying a few grid cells"""

    category: Category = Field(..., description="Object category")
    cells: Tuple[Cell, ...] = Field(..., description="Grid cells (row, col) covered by the instance")

    class Config:
        frozen = True

    @field_validator("cells")
    @classmethod
    def _nonempty(cls, value):
        if not value:
            raise ValueError("object instance needs at least one cell")
        return tuple(sorted(tuple(int(v) for v in cell) for cell in value))


class WorldParams(BaseModel):
    """Parameters of the procedural indoor world generator"""

    width: int = Field(WORLD_CONFIG["width"], description="Grid width in cells")
    height: int = Field(WORLD_CONFIG["height"], description="Grid height in cells")
    cell_size: float = Field(WORLD_CONFIG["cell_size"], description="Cell edge length in meters")
    rooms: int = Field(WORLD_CONFIG["rooms"], description="Number of rooms")
    min_room_size: int = Field(WORLD_CONFIG["min_room_size"], description="Minimum room edge in cells")
    max_room_size: int = Field(WORLD_CONFIG["max_room_size"], description="Maximum room edge in cells")
    object_density: float = Field(WORLD_CONFIG["object_density"], description="Objects per free room cell")
    corridor_width: int = Field(WORLD_CONFIG["corridor_width"], description="Corridor width in cells")
    max_retries: int = Field(WORLD_CONFIG["max_retries"], description="Generation attempts before giving up")


class GridWorld(BaseModel):
    """Occupancy grid plus semantic object instances; immutable after construction"""

    width: int
    height: int
    cell_size: float = 0.25
    cells: np.ndarray = Field(..., description="(height, width) uint8 array, 1 = Occupied")
    objects: Tuple[ObjectInstance, ...] = ()
    seed: int = 0

    _semantic: np.ndarray = PrivateAttr()
    _fingerprint: Optional[str] = PrivateAttr(default=None)

    class Config:
        frozen = True
        arbitrary_types_allowed = True

    @field_validator("cells", mode="before")
    @classmethod
    def _freeze_cells(cls, value):
        array = np.array(value, dtype=np.uint8, copy=True)
        if array.ndim != 2:
            raise ValueError("cells must be a 2-D array")
        array.setflags(write=False)
        return array

    def model_post_init(self, __context) -> None:
        if self.cells.shape != (self.height, self.width):
            raise ValueError(f"cells shape {self.cells.shape} does not match {self.height}x{self.width}")
        semantic = np.full((self.height, self.width), -1, dtype=np.int8)
        for instance in self.objects:
            for r, c in instance.cells:
                if not self.in_bounds(r, c):
                    raise ValueError(f"object cell {(r, c)} out of bounds")
                semantic[r, c] = int(instance.category)
        semantic.setflags(write=False)
        self._semantic = semantic

    def __eq__(self, other) -> bool:
        return isinstance(other, GridWorld) and self.fingerprint() == other.fingerprint()

    def __hash__(self) -> int:
        return hash(self.fingerprint())

    @property
    def semantic(self) -> np.ndarray:
        """Per-cell category code, -1 where no object"""
        return self._semantic

    def in_bounds(self, r: int, c: int) -> bool:
        return 0 <= r < self.height and 0 <= c < self.width

    def is_free(self, r: int, c: int) -> bool:
        return self.in_bounds(r, c) and self.cells[r, c] == CellState.FREE

    def free_cells(self) -> List[Cell]:
        rows, cols = np.nonzero(self.cells == CellState.FREE)
        return [(int(r), int(c)) for r, c in zip(rows, cols)]

    def category_cells(self, category: Category) -> List[Cell]:
        return sorted(cell for inst in self.objects if inst.category == category for cell in inst.cells)

    def categories_present(self) -> List[Category]:
        return sorted({inst.category for inst in self.objects})

    def cell_of(self, x: float, y: float) -> Cell:
        # rounding absorbs float noise from repeated 0.25 m steps landing on cell boundaries
        return int(np.floor(round(y / self.cell_size, 9))), int(np.floor(round(x / self.cell_size, 9)))

    def cell_center(self, r: int, c: int) -> Tuple[float, float]:
        return (c + 0.5) * self.cell_size, (r + 0.5) * self.cell_size

    def fingerprint(self) -> str:
        if self._fingerprint is None:
            digest = hashlib.sha256()
            digest.update(f"{self.width} {self.height} {self.cell_size!r} {self.seed}".encode())
            digest.update(self.cells.tobytes())
            for inst in self.objects:
                digest.update(f"{int(inst.category)}:{inst.cells}".encode())
            self._fingerprint = digest.hexdigest()
        return self._fingerprint


class BranchingWorld(BaseModel):
    """T-shaped corridor world with a near and a far goal behind one branch point"""

    world: GridWorld
    g_near: Tuple[Cell, ...] = Field(..., description="Cells of the goal instance on the short arm")
    g_far: Tuple[Cell, ...] = Field(..., description="Cells of the goal instance on the long arm")
    branch_b: Cell = Field(..., description="Junction cell")
    start_disc_s: Tuple[Cell, ...] = Field(..., description="Start cells at the bottom of the stem")
    near_heading: int = Field(180, description="Heading at the junction that faces the short arm")
    far_heading: int = Field(0, description="Heading at the junction that faces the long arm")

    class Config:
        frozen = True
        arbitrary_types_allowed = True
