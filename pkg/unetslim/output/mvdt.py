"""MVDT output plugin."""
import numpy as np

MAGIC = b"MVDT"


def to_mvdt(self, filename):
    """Write tensor in the MVDT binary format.

    Args:
        - filename (str): name of output MVDT file.

    """
    values = np.ascontiguousarray(self._obj.values, dtype="<f8")
    header = np.array([values.ndim, *values.shape], dtype="<u4")
    with open(filename, "wb") as stream:
        stream.write(MAGIC)
        stream.write(header.tobytes())
        stream.write(values.tobytes(order="C"))
