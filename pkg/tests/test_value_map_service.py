import numpy as np
import pytest

from app.exceptions import FormatError
from app.models.sim_model import OBS_DIM
from app.models.world_model import Category
from app.services import nn_service, value_map_service, world_service
from app.services.valuelearn_service import QFunction


def test_to_gray_scales_finite_values():
    gray = value_map_service.to_gray(np.array([[0.0, 0.5], [1.0, np.nan]]))
    assert gray.tolist() == [[0, 128], [255, 0]]


def test_to_gray_flat_map():
    gray = value_map_service.to_gray(np.array([[0.3, 0.3], [np.nan, 0.3]]))
    assert gray.tolist() == [[128, 128], [0, 128]]
    assert not value_map_service.to_gray(np.full((2, 2), np.nan)).any()


def test_pgm_file_round_trip(tmp_path, corridor_world):
    model = QFunction(net=nn_service.init_mlp((OBS_DIM, 8, 15), np.random.default_rng(0)))
    path = tmp_path / "map.pgm"
    gray = value_map_service.value_map(corridor_world, model, Category.DINING_TABLE, str(path), "0123456789ab")
    assert gray.shape == (corridor_world.height, corridor_world.width)
    assert path.read_text().splitlines()[:2] == ["P2", "# config 0123456789ab"]
    loaded, max_value = value_map_service.load_pgm(str(path))
    assert max_value == 255
    assert np.array_equal(loaded, gray)
    # zero-initialized heads give a flat map on free cells and black walls
    assert np.all(gray[corridor_world.cells == 1] == 0)
    assert np.all(gray[2, 1:18] == 128)


def test_pgm_pixel_count_mismatch():
    with pytest.raises(FormatError):
        value_map_service.parse_pgm(["P2", "2 2", "255", "0 1 2"])
    with pytest.raises(FormatError):
        value_map_service.parse_pgm(["P5", "1 1", "255", "0"])


def test_oracle_map_falls_off_along_the_shortest_path(hall_world):
    """Walking west from the bed, past the detector range, the oracle map never brightens"""
    values = np.full((hall_world.height, hall_world.width), np.nan)
    for cell in hall_world.free_cells():
        values[cell] = world_service.oracle_value(hall_world, cell, Category.BED, 0.99)
    gray, _ = value_map_service.parse_pgm(value_map_service.pgm_lines(value_map_service.to_gray(values)))

    path = [(2, c) for c in range(39, 0, -1)]
    along = np.array([values[cell] for cell in path])
    assert np.all(np.diff(along) <= 0.0)
    assert along[0] == 1.0 and along[-1] < along[0]
    assert np.all(np.diff([int(gray[cell]) for cell in path]) <= 0)
    assert gray[path[0]] == 255
