"""Json output plugin."""
import json


def to_json(self, filename, mode="w"):
    """Write tensor in json format.

    Values are flattened in row-major order and written with 17 significant digits
    so they read back bit-identical.

    Args:
        - filename (str): name of output json file.
        - mode (str): file mode, by default `w` (create or overwrite).

    """
    darr = self._obj
    tensor_dict = {
        "shape": list(darr.shape),
        "data": [float(v) for v in darr.values.ravel()],
        "dims": list(darr.dims),
    }
    if darr.name is not None:
        tensor_dict["name"] = str(darr.name)
    with open(filename, mode=mode) as fp:
        json.dump(tensor_dict, fp, sort_keys=True)
