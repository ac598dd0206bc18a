"""Utility functions."""
import numpy as np
import xarray as xr

from unetslim.core.attributes import attrs, set_attributes
from unetslim.core.exceptions import ShapeError, DomainError


def as_array(array, ndim=None, name="array", finite=True):
    """Float64 numpy view of an array-like, with rank and finiteness checks.

    Args:
        - array (ndarray, DataArray, list): Values to convert.
        - ndim (int): Required number of dimensions, not checked if None.
        - name (str): Name used in error messages.
        - finite (bool): Raise DomainError if any value is NaN or Inf.

    Returns:
        - out (ndarray): float64 array.

    """
    if isinstance(array, xr.DataArray):
        array = array.values
    out = np.asarray(array, dtype="float64")
    if ndim is not None and out.ndim != ndim:
        raise ShapeError(f"{name} must be {ndim}-dimensional, got shape {out.shape}")
    if finite and not np.all(np.isfinite(out)):
        raise DomainError(f"{name} has non-finite entries")
    return out


def as_matrix(array, name="A"):
    """Finite 2D float64 array."""
    return as_array(array, ndim=2, name=name)


def to_tensor(array, dims=None, name=None):
    """Create a Tensor, i.e. a DataArray with semantic axis labels.

    Args:
        - array (list, ndarray): Tensor values.
        - dims (sequence of str): Axis labels, generic `dim_i` if not provided.
        - name (str): Tensor name, sets metadata attributes when known.

    Returns:
        - tensor (DataArray): Float64 tensor.

    """
    values = as_array(array, name=name or "tensor")
    if dims is not None:
        dims = tuple(dims)
        if len(dims) != values.ndim:
            raise ShapeError(f"{len(dims)} axis labels for a {values.ndim}-D tensor")
        unknown = [d for d in dims if d not in attrs.AXES and not d.startswith("dim_")]
        if unknown:
            raise ShapeError(f"Unknown axis labels {unknown}, valid are {attrs.AXES}")
    tensor = xr.DataArray(values, dims=dims, name=name)
    set_attributes(tensor)
    return tensor


def as_generator(rng=None):
    """Numpy Generator from an int seed, a SeedSequence or an existing Generator."""
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def spawn_seeds(seed, count):
    """Deterministic child seed sequences for `count` independent sub-tasks."""
    return np.random.SeedSequence(seed).spawn(count)


def fun_width(fun_factor, c_inner):
    """Reduced inner width c' = max(1, round(fun_factor * c_inner)).

    Halves round up. A fun_factor below 1 always removes at least one channel.
    """
    width = max(1, int(np.floor(fun_factor * c_inner + 0.5)))
    if fun_factor < 1 and c_inner > 1:
        width = min(width, c_inner - 1)
    return width
