import io
import pytest
import numpy as np

from unetslim import read_mvdt
from unetslim.core.utils import to_tensor
from unetslim.core.exceptions import TensorFileError


@pytest.fixture(scope="module")
def tensor():
    values = np.random.default_rng(0).standard_normal((2, 3, 4))
    return to_tensor(values, dims=("T", "C", "H"), name="latent")


def _header(*extents):
    return b"MVDT" + np.array([len(extents), *extents], dtype="<u4").tobytes()


def test_write_read(tensor, tmpdir):
    filename = str(tmpdir / "tensor.mvdt")
    tensor.tensor.to_mvdt(filename)
    darr = read_mvdt(filename, dims=("T", "C", "H"))
    assert darr.dims == ("T", "C", "H")
    assert np.array_equal(darr.values, tensor.values)
    assert darr.tensor.digest() == tensor.tensor.digest()


def test_layout(tensor, tmpdir):
    filename = str(tmpdir / "tensor.mvdt")
    tensor.tensor.to_mvdt(filename)
    with open(filename, "rb") as stream:
        data = stream.read()
    assert data[:4] == bytes([0x4D, 0x56, 0x44, 0x54])
    assert np.frombuffer(data[4:20], dtype="<u4").tolist() == [3, 2, 3, 4]
    assert len(data) == 20 + 8 * 24
    assert np.frombuffer(data[20:28], dtype="<f8")[0] == tensor.values[0, 0, 0]


def test_file_object():
    payload = np.arange(6, dtype="<f8")
    darr = read_mvdt(io.BytesIO(_header(2, 3) + payload.tobytes()))
    assert darr.shape == (2, 3)
    assert darr.dims == ("dim_0", "dim_1")
    assert darr.values[1, 2] == 5.0


@pytest.mark.parametrize(
    "data, match",
    [
        (b"NOPE" + bytes(8), "magic"),
        (b"MVD", "magic"),
        (b"MVDT", "header"),
        (_header(2, 3)[:10], "extents"),
        (_header(2, 0), "extents"),
        (_header(2, 3) + bytes(8 * 5), "payload"),
        (_header(2, 3) + bytes(8 * 7), "payload"),
    ],
)
def test_malformed(data, match):
    with pytest.raises(TensorFileError, match=match):
        read_mvdt(io.BytesIO(data))


def test_missing_file(tmpdir):
    filename = str(tmpdir / "missing.mvdt")
    with pytest.raises(TensorFileError) as excinfo:
        read_mvdt(filename)
    assert filename in str(excinfo.value)
    assert isinstance(excinfo.value, OSError)
