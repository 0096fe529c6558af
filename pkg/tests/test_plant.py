import sys
import textwrap

import numpy as np
import pytest

from safesynth.errors import CollectionError, DatasetFormatError, GeometryError
from safesynth.plant import (
    Dataset,
    ExternalProcessPlant,
    Role,
    RoomTemperaturePlant,
    collect,
    load_dataset,
    make_plant,
    save_dataset,
    step_room,
)


def test_step_room_cooling():
    assert step_room(25.0, 0.0) == pytest.approx(24.6)


def test_step_room_full_heat():
    assert step_room(25.0, 1.0) == pytest.approx(24.96)


def test_step_room_ambient_fixed_point():
    assert step_room(15.0, 0.0) == 15.0


def test_collect_deterministic(room_space):
    plant = RoomTemperaturePlant()
    a = collect(plant, room_space, 50, 7)
    b = collect(plant, room_space, 50, 7)
    assert a == b
    c = collect(plant, room_space, 50, 8)
    assert a != c


def test_collect_singleton_replayable(room_space):
    plant = RoomTemperaturePlant()
    a = collect(plant, room_space, 1, 99)
    b = collect(plant, room_space, 1, 99)
    assert len(a) == 1 and a == b


def test_collect_next_state_matches_step(room_space):
    plant = RoomTemperaturePlant()
    data = collect(plant, room_space, 200, 21)
    for i in (0, 57, 199):
        s = data[i]
        assert s.x_next[0] == pytest.approx(step_room(s.x[0], s.u[0]), abs=0.0)


def test_collect_rejects_zero_count(room_space):
    with pytest.raises(GeometryError):
        collect(RoomTemperaturePlant(), room_space, 0, 1)


def test_dataset_roundtrip(tmp_path, room_space):
    plant = RoomTemperaturePlant()
    data = collect(plant, room_space, 120, 42, Role.VALIDATION)
    path = tmp_path / "data.csv"
    save_dataset(data, str(path))
    loaded = load_dataset(str(path))
    assert loaded == data
    assert loaded.role is Role.VALIDATION
    assert loaded.seed == 42
    assert loaded.space is not None and loaded.space.n == room_space.n
    assert np.array_equal(loaded.space.box.lower_arr, room_space.box.lower_arr)


def test_dataset_header_format(tmp_path, room_space):
    data = collect(RoomTemperaturePlant(), room_space, 3, 42)
    path = tmp_path / "data.csv"
    save_dataset(data, str(path))
    header = path.read_text().splitlines()[0]
    assert header.startswith("# n=1 m=1 role=scenario seed=42")


def test_dataset_truncated_row_rejected(tmp_path, room_space):
    data = collect(RoomTemperaturePlant(), room_space, 5, 1)
    path = tmp_path / "data.csv"
    save_dataset(data, str(path))
    lines = path.read_text().splitlines()
    lines[3] = lines[3].rsplit(",", 1)[0]  # drop one field
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(DatasetFormatError, match="line 4"):
        load_dataset(str(path))


def test_dataset_missing_header_rejected(tmp_path):
    path = tmp_path / "data.csv"
    path.write_text("1.0,0.5,1.1\n")
    with pytest.raises(DatasetFormatError, match="line 1"):
        load_dataset(str(path))


def test_dataset_non_numeric_rejected(tmp_path, room_space):
    data = collect(RoomTemperaturePlant(), room_space, 2, 1)
    path = tmp_path / "data.csv"
    save_dataset(data, str(path))
    text = path.read_text().replace(text_first_float(path), "abc", 1)
    path.write_text(text)
    with pytest.raises(DatasetFormatError):
        load_dataset(str(path))


def text_first_float(path):
    return path.read_text().splitlines()[1].split(",")[0]


EXTERNAL_PLANT_SCRIPT = textwrap.dedent(
    """
    import sys
    for line in sys.stdin:
        vals = [float(v) for v in line.split()]
        x, u = vals[0], vals[1]
        out = x + 5.0 * (8e-3 * (15.0 - x) + 3.6e-3 * (45.0 - x) * u)
        print(f"{out:.17g}", flush=True)
    """
)


def test_external_process_plant_matches_builtin(tmp_path, room_space):
    script = tmp_path / "plant.py"
    script.write_text(EXTERNAL_PLANT_SCRIPT)
    with ExternalProcessPlant([sys.executable, str(script)], 1, 1) as ext:
        data_ext = collect(ext, room_space, 25, 5)
    data_builtin = collect(RoomTemperaturePlant(), room_space, 25, 5)
    assert np.allclose(data_ext.x_nexts, data_builtin.x_nexts, rtol=0, atol=1e-15)


def test_external_process_plant_failure_names_index(tmp_path, room_space):
    script = tmp_path / "bad_plant.py"
    script.write_text("import sys\nsys.stdin.readline()\n")  # dies after one query
    with ExternalProcessPlant([sys.executable, str(script)], 1, 1) as ext:
        with pytest.raises(CollectionError, match="sample \\d+"):
            collect(ext, room_space, 10, 5)


def test_make_plant_rejects_unknown_name():
    with pytest.raises(CollectionError):
        make_plant("fusion-reactor")


def test_dataset_dimension_checks():
    with pytest.raises(DatasetFormatError):
        Dataset(np.zeros((3, 1)), np.zeros((2, 1)), np.zeros((3, 1)), 0, Role.SCENARIO)
