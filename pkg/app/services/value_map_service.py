"""Top-down value maps rendered as plain-text PGM images"""
import logging
from typing import List, Tuple

import numpy as np

from app.exceptions import FormatError
from app.models.sim_model import N_HEADINGS, OBS_DIM, TURN_DEGREES
from app.models.world_model import Category, GridWorld
from app.services import sim_service
from app.services.artifact_service import read_lines, write_lines
from app.services.valuelearn_service import ValueModel

logger = logging.getLogger(__name__)

MAX_GRAY = 255
FLAT_GRAY = 128


def cell_values(world: GridWorld, model: ValueModel, category: Category) -> np.ndarray:
    """Max over the 12 headings of the learned value at each free cell center; NaN on occupied cells"""
    values = np.full((world.height, world.width), np.nan)
    panoramic = model.input_size != OBS_DIM
    for cell in world.free_cells():
        pose = sim_service.cell_pose(world, cell, 0)
        if not sim_service.pose_is_valid(world, pose):
            continue
        if panoramic:
            views = sim_service.panorama(world, pose).views
            rows = np.stack([sim_service.panoramic_vector(views, j) for j in range(N_HEADINGS)])
        else:
            rows = np.stack([sim_service.render(world, pose.rotated(j * TURN_DEGREES)) for j in range(N_HEADINGS)])
        values[cell] = float(np.max(model.values(rows)[:, int(category)]))
    return values


def to_gray(values: np.ndarray) -> np.ndarray:
    """Linear map of finite values onto 0..255; a flat map becomes mid-gray, NaN cells black"""
    gray = np.zeros(values.shape, dtype=np.int64)
    finite = np.isfinite(values)
    if not finite.any():
        return gray
    lo, hi = float(values[finite].min()), float(values[finite].max())
    if hi - lo < 1e-12:
        gray[finite] = FLAT_GRAY
    else:
        gray[finite] = np.rint((values[finite] - lo) / (hi - lo) * MAX_GRAY).astype(np.int64)
    return gray


def pgm_lines(gray: np.ndarray, config_hash: str = "") -> List[str]:
    height, width = gray.shape
    lines = ["P2"]
    if config_hash:
        lines.append(f"# config {config_hash}")
    lines.append(f"{width} {height}")
    lines.append(str(MAX_GRAY))
    lines.extend(" ".join(str(int(v)) for v in row) for row in gray)
    return lines


def value_map(world: GridWorld, model: ValueModel, category: Category, path: str, config_hash: str = "") -> np.ndarray:
    gray = to_gray(cell_values(world, model, category))
    write_lines(path, pgm_lines(gray, config_hash))
    logger.info(f"Wrote {category.slug} value map ({world.width}x{world.height}) to {path}")
    return gray


def parse_pgm(lines: List[str]) -> Tuple[np.ndarray, int]:
    """Plain PGM reader; comments are skipped"""
    tokens = []
    for line in lines:
        tokens.extend(line.split("#", 1)[0].split())
    if not tokens or tokens[0] != "P2":
        raise FormatError("not a plain PGM (P2) file", 1)
    try:
        width, height, max_value = int(tokens[1]), int(tokens[2]), int(tokens[3])
        pixels = np.array([int(t) for t in tokens[4:]], dtype=np.int64)
    except (IndexError, ValueError):
        raise FormatError("malformed PGM header or pixel data", 1)
    if pixels.size != width * height:
        raise FormatError(f"expected {width * height} pixels, found {pixels.size}", len(lines))
    return pixels.reshape(height, width), max_value


def load_pgm(path: str) -> Tuple[np.ndarray, int]:
    return parse_pgm(read_lines(path))
