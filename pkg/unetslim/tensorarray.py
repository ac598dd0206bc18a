"""Tensor object based on DataArray with axis checks, digests and writers."""
import os
import re
import types
import hashlib

import numpy as np
import xarray as xr

from unetslim.core.attributes import attrs
from unetslim.core.exceptions import ShapeError

here = os.path.dirname(os.path.abspath(__file__))


class Plugin(type):
    """Add all the export functions at class creation time."""

    def __new__(cls, name, bases, dct):
        modules = [
            __import__(
                f"unetslim.output.{os.path.splitext(fname)[0]}",
                fromlist=["*"],
            )
            for fname in sorted(os.listdir(os.path.join(here, "output")))
            if fname.endswith(".py") and fname != "__init__.py"
        ]
        for module in modules:
            for module_attr in dir(module):
                function = getattr(module, module_attr)
                if isinstance(function, types.FunctionType) and module_attr.startswith(
                    "to_"
                ):
                    dct[function.__name__] = function
        return type.__new__(cls, name, bases, dct)


@xr.register_dataarray_accessor("tensor")
class TensorArray(metaclass=Plugin):
    """Extends DataArray with tensor helpers.

    Plugin functions defined in unetslim/output/<module>
    are attached as methods in this accessor class.

    """

    def __init__(self, xarray_obj):
        self._obj = xarray_obj

    def __repr__(self):
        return re.sub(r"<([^\s]+)", f"<{self.__class__.__name__}", str(self._obj))

    @property
    def values(self):
        """Float64 numpy values."""
        return np.asarray(self._obj.values, dtype="float64")

    @property
    def labelled(self):
        """True if every axis has a semantic label."""
        return all(dim in attrs.AXES for dim in self._obj.dims)

    def digest(self):
        """Sha256 hex digest of the rank, extents and little-endian f64 payload.

        Equal digests mean bit-identical tensors, axis labels are not hashed.
        """
        values = np.ascontiguousarray(self.values, dtype="<f8")
        sha = hashlib.sha256()
        sha.update(np.array([values.ndim, *values.shape], dtype="<u8").tobytes())
        sha.update(values.tobytes(order="C"))
        return sha.hexdigest()

    def max_abs_diff(self, other):
        """Largest absolute difference with another tensor of the same shape."""
        other = np.asarray(getattr(other, "values", other), dtype="float64")
        if other.shape != self._obj.shape:
            raise ShapeError(f"Cannot compare shapes {self._obj.shape} and {other.shape}")
        if not other.size:
            return 0.0
        return float(np.max(np.abs(self.values - other)))

    def check_dims(self, *dims):
        """Raise ShapeError unless the tensor has exactly these axis labels."""
        if tuple(self._obj.dims) != tuple(dims):
            raise ShapeError(f"Expected axes {dims}, got {self._obj.dims}")
        return self._obj
