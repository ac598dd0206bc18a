"""Read small tensors from json."""
import json

import numpy as np

from unetslim.core.utils import to_tensor
from unetslim.core.exceptions import TensorFileError


def read_json(filename_or_obj, dims=None, name=None):
    """Read a tensor from json.

    The json form is produced from `TensorArray.to_json`, `{"shape": [...],
    "data": [...]}` with data flattened in row-major order. Optional `dims` and
    `name` entries are used when not given as arguments.

    Args:
        - filename_or_obj (str, fileobj): Name of json file or file object to read.
        - dims (sequence of str): Axis labels.
        - name (str): Tensor name.

    Returns:
        - tensor (DataArray): Float64 tensor.

    """
    path = getattr(filename_or_obj, "name", filename_or_obj)
    try:
        if hasattr(filename_or_obj, "read"):
            tensor_dict = json.load(filename_or_obj)
        else:
            with open(filename_or_obj) as fp:
                tensor_dict = json.load(fp)
    except FileNotFoundError as exc:
        raise TensorFileError("File not found", path=path) from exc
    except json.JSONDecodeError as exc:
        raise TensorFileError(f"Invalid json ({exc})", path=path) from exc
    try:
        shape = tuple(int(n) for n in tensor_dict["shape"])
        values = np.asarray(tensor_dict["data"], dtype="float64")
    except (KeyError, TypeError, ValueError) as exc:
        raise TensorFileError(f"Expected keys `shape` and `data` ({exc})", path=path) from exc
    if values.size != int(np.prod(shape, dtype=np.int64)):
        raise TensorFileError(
            f"{values.size} values do not fill shape {list(shape)}", path=path
        )
    dims = dims or tensor_dict.get("dims")
    name = name or tensor_dict.get("name")
    return to_tensor(values.reshape(shape), dims=dims, name=name)
