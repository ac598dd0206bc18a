"""Read tensors in the MVDT binary format.

Layout, all little-endian:
    - bytes 0-3: magic `4D 56 44 54` (b"MVDT")
    - u32: rank
    - rank x u32: extents
    - prod(extents) x f64: values in row-major order

"""
import numpy as np

from unetslim.core.utils import to_tensor
from unetslim.core.exceptions import TensorFileError
from unetslim.input import open_binary

MAGIC = b"MVDT"


def read_mvdt(filename_or_obj, dims=None, name=None):
    """Read a tensor from an MVDT file.

    Args:
        - filename_or_obj (str, fileobj): MVDT file to read.
        - dims (sequence of str): Axis labels, generic `dim_i` if not provided.
        - name (str): Tensor name.

    Returns:
        - tensor (DataArray): Float64 tensor.

    """
    path = getattr(filename_or_obj, "name", filename_or_obj)
    data = open_binary(filename_or_obj)
    if data[:4] != MAGIC:
        raise TensorFileError("Not an MVDT file, bad magic bytes", path=path)
    if len(data) < 8:
        raise TensorFileError("Truncated MVDT header", path=path)
    rank = int(np.frombuffer(data, dtype="<u4", count=1, offset=4)[0])
    offset = 8 + 4 * rank
    if len(data) < offset:
        raise TensorFileError("Truncated MVDT extents", path=path)
    shape = tuple(int(n) for n in np.frombuffer(data, dtype="<u4", count=rank, offset=8))
    if any(n < 1 for n in shape):
        raise TensorFileError(f"Invalid MVDT extents {shape}", path=path)
    size = int(np.prod(shape, dtype=np.int64))
    if len(data) != offset + 8 * size:
        raise TensorFileError(
            f"MVDT payload has {len(data) - offset} bytes, expected {8 * size}", path=path
        )
    values = np.frombuffer(data, dtype="<f8", count=size, offset=offset).astype("float64")
    return to_tensor(values.reshape(shape), dims=dims, name=name)
