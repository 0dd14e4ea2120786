import os

import numpy as np
import pytest

from roughstab.errors import StructuralError
from roughstab.gaussian_paths import FbmSpec, TimeGrid, lift_piecewise_linear, sample_fbm
from roughstab.io import atomic_write, lift_to_csv, path_to_csv, read_lift_csv, read_path_csv


def test_path_csv_roundtrip(tmp_path):
    path = sample_fbm(FbmSpec(0.45, 2), TimeGrid.uniform(0, 1, 33), 4)
    f = tmp_path / "p.csv"
    atomic_write(f, path_to_csv(path))
    back = read_path_csv(f)
    np.testing.assert_array_equal(back.values, path.values)
    np.testing.assert_array_equal(back.times, path.times)
    assert f.read_text().splitlines()[0] == "t,x1,x2"


def test_lift_csv_roundtrip(tmp_path):
    path = sample_fbm(FbmSpec(0.4, 3), TimeGrid.uniform(0, 1, 17), 1)
    rp = lift_piecewise_linear(path)
    f = tmp_path / "l.csv"
    atomic_write(f, lift_to_csv(rp))
    back = read_lift_csv(f, path)
    np.testing.assert_array_equal(back.step_areas(), rp.step_areas())
    assert back.geometric


def test_malformed_csv(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("time,x\n0,1\n")
    with pytest.raises(StructuralError):
        read_path_csv(bad)
    bad.write_text("t,x1\n0,abc\n")
    with pytest.raises(StructuralError):
        read_path_csv(bad)
    with pytest.raises(OSError):
        read_path_csv(tmp_path / "missing.csv")


def test_atomic_write_leaves_no_partial_file(tmp_path):
    target = tmp_path / "out.txt"
    with pytest.raises(TypeError):
        atomic_write(target, 12345)
    assert not target.exists()
    assert os.listdir(tmp_path) == []
    atomic_write(target, "a")
    atomic_write(target, "b")
    assert target.read_text() == "b"
