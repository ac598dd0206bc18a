import io
import json
import pytest
import numpy as np

from unetslim import read_json
from unetslim.core.utils import to_tensor
from unetslim.core.exceptions import TensorFileError


class TestJson:
    """Test json serialisation."""

    @pytest.mark.parametrize(
        "values, dims, name",
        [
            (np.array([0.1, 1.0 / 3.0, 2.0]), ("L",), "q"),
            (np.random.default_rng(1).standard_normal((3, 2)), ("O", "I"), "W1"),
            (np.random.default_rng(2).standard_normal((2, 1, 2, 2)), None, None),
        ],
    )
    def test_to_json(self, values, dims, name, tmpdir):
        filename = str(tmpdir / "tensor.json")
        tensor = to_tensor(values, dims=dims, name=name)
        tensor.tensor.to_json(filename)
        darr = read_json(filename)
        assert np.array_equal(darr.values, values)
        assert darr.dims == tensor.dims
        assert darr.name == name

    def test_keys_sorted(self, tmpdir):
        filename = str(tmpdir / "tensor.json")
        to_tensor([1.0, 2.0], name="p").tensor.to_json(filename)
        with open(filename) as fp:
            text = fp.read()
        assert list(json.loads(text)) == ["data", "dims", "name", "shape"]

    def test_read_minimal(self):
        darr = read_json(io.StringIO('{"shape": [2, 2], "data": [1, 2, 3, 4]}'), name="q")
        assert darr.shape == (2, 2)
        assert darr.values[1, 0] == 3.0
        assert darr.name == "q"
        assert darr.attrs["standard_name"] == "importance_value"

    @pytest.mark.parametrize(
        "text",
        [
            "{",
            '{"data": [1, 2]}',
            '{"shape": [3], "data": [1, 2]}',
            '{"shape": [2], "data": ["a", "b"]}',
        ],
    )
    def test_malformed(self, text):
        with pytest.raises(TensorFileError):
            read_json(io.StringIO(text))

    def test_missing_file(self, tmpdir):
        with pytest.raises(TensorFileError, match="missing.json"):
            read_json(str(tmpdir / "missing.json"))

    def test_malformed_file(self, tmpdir):
        filename = str(tmpdir / "q.json")
        with open(filename, "w") as fp:
            fp.write("{not json")
        with pytest.raises(TensorFileError, match="q.json"):
            read_json(filename)
