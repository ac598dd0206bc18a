"""Axis labels and variable metadata shared by tensors, clips and reports.

The labels and the `standard_name` and `units` of each known variable live in
`attributes.yml` and are exposed through the module level `attrs` mapping, e.g.
`attrs.TIMENAME` or `attrs.ATTRS.area.units`.
"""
import os
import yaml
import xarray as xr

HERE = os.path.dirname(os.path.abspath(__file__))


class AttrDict(dict):
    """Dict with attribute access, nested dicts are converted on assignment.

    Missing keys resolve to a new empty AttrDict stored under that key.
    """

    MARKER = object()

    def __init__(self, value=None):
        if value is None:
            return
        if not isinstance(value, dict):
            raise TypeError(f"AttrDict expects a dict, got {type(value).__name__}")
        for key, item in value.items():
            self[key] = item

    def __setitem__(self, key, value):
        if isinstance(value, dict) and not isinstance(value, AttrDict):
            value = AttrDict(value)
        super().__setitem__(key, value)

    def __getitem__(self, key):
        found = self.get(key, AttrDict.MARKER)
        if found is AttrDict.MARKER:
            found = AttrDict()
            super().__setitem__(key, found)
        return found

    __setattr__, __getattr__ = __setitem__, __getitem__


with open(os.path.join(HERE, "attributes.yml")) as stream:
    attrs = AttrDict(yaml.load(stream, yaml.SafeLoader))


def set_attributes(dset):
    """Attach the registered metadata to a named DataArray or to each Dataset variable."""
    if isinstance(dset, xr.DataArray):
        names = [dset.name]
    elif isinstance(dset, xr.Dataset):
        names = list(dset.data_vars)
    else:
        return dset
    for name in names:
        if name not in attrs.ATTRS:
            continue
        if isinstance(dset, xr.DataArray):
            dset.attrs = dict(attrs.ATTRS[name])
        else:
            dset[name].attrs = dict(attrs.ATTRS[name])
    return dset
