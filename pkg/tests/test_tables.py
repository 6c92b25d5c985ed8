import numpy as np
import pytest

from kamforce import tables
from kamforce.semiconcave import GridFunction


def test_kernel_roundtrip(pendulum_64, tmp_path):
    k, _ = pendulum_64
    path = tmp_path / "k.bin"
    tables.write_table(path, tables.kernel_table(k))
    tab = tables.read_table(path)
    assert tab.kind == "kernel" and tab.sizes == (64,) and tab.M == 8
    np.testing.assert_array_equal(tab.data, k.table)
    assert np.isinf(tab.data).any() == np.isinf(k.table).any()


def test_function_roundtrip_and_csv(pendulum_64, tmp_path):
    k, _ = pendulum_64
    u = GridFunction(k.grid, np.linspace(0, 1, 64))
    tables.write_table(tmp_path / "u.bin", tables.function_table(u, [0.5], 8))
    tab = tables.read_table(tmp_path / "u.bin")
    np.testing.assert_array_equal(tab.data[0], u.values)
    np.testing.assert_array_equal(tab.c, [0.5])
    tables.grid_function_csv(tmp_path / "u.csv", u)
    data = np.loadtxt(tmp_path / "u.csv", delimiter=",", skiprows=1)
    np.testing.assert_array_equal(data[:, 1], u.values)


def test_bad_magic(tmp_path):
    path = tmp_path / "x.bin"
    path.write_bytes(b"NOTATABLE" + bytes(40))
    with pytest.raises(ValueError):
        tables.read_table(path)


def test_empty_csv_has_header(tmp_path):
    tables.write_csv(tmp_path / "e.csv", ["a", "b"], [])
    assert (tmp_path / "e.csv").read_text().strip() == "a,b"
