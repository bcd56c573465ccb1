import numpy as np
import pytest

from ticklstm.columnar import MAGIC, read_columns, write_columns
from ticklstm.errors import CorruptFile, VersionMismatch


@pytest.fixture
def cols():
    rng = np.random.default_rng(0)
    return {"a": rng.standard_normal(50), "b": np.arange(50.0), "ünï": np.full(50, np.nan)}


def test_round_trip(cols, tmp_path):
    write_columns(tmp_path / "c.bin", cols, {"x": 1})
    got, meta = read_columns(tmp_path / "c.bin")
    assert list(got) == list(cols)
    for k in cols:
        np.testing.assert_array_equal(got[k], cols[k])
    assert meta == {"x": 1}


def test_empty(tmp_path):
    write_columns(tmp_path / "c.bin", {"a": np.empty(0)})
    got, meta = read_columns(tmp_path / "c.bin")
    assert len(got["a"]) == 0 and meta == {}


def test_bad_magic(tmp_path):
    (tmp_path / "c.bin").write_bytes(b"garbage" * 10)
    with pytest.raises(CorruptFile):
        read_columns(tmp_path / "c.bin")


def test_truncated(cols, tmp_path):
    write_columns(tmp_path / "c.bin", cols)
    data = (tmp_path / "c.bin").read_bytes()
    (tmp_path / "c.bin").write_bytes(data[:-3])
    with pytest.raises(CorruptFile):
        read_columns(tmp_path / "c.bin")


def test_version(cols, tmp_path):
    write_columns(tmp_path / "c.bin", cols)
    data = bytearray((tmp_path / "c.bin").read_bytes())
    data[len(MAGIC)] = 99
    (tmp_path / "c.bin").write_bytes(bytes(data))
    with pytest.raises(VersionMismatch):
        read_columns(tmp_path / "c.bin")


def test_ragged_rejected(tmp_path):
    with pytest.raises(ValueError):
        write_columns(tmp_path / "c.bin", {"a": np.zeros(3), "b": np.zeros(4)})
