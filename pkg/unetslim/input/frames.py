"""Read clips stored as directories of raw 8-bit RGB frames.

The directory holds one file per frame, sorted by name, each with
height x width x 3 bytes in row-major (H, W, RGB) order, and a json sidecar
`clip.json` with the `fps`, `height` and `width` of the frames.

"""
import os
import json
import glob
import logging

import numpy as np

from unetslim.core.attributes import attrs
from unetslim.core.utils import to_tensor
from unetslim.core.exceptions import TensorFileError

logger = logging.getLogger(__name__)

SIDECAR = "clip.json"


def read_frames(dirname, pattern="*.rgb"):
    """Read a clip from a directory of raw RGB frames.

    Args:
        - dirname (str): Directory with the frame files and the sidecar.
        - pattern (str): Glob pattern of the frame files.

    Returns:
        - frames (DataArray): Frames (T, C, H, W) scaled to [0, 1], with the
          native frame rate in the `fps` attribute.

    """
    sidecar = os.path.join(dirname, SIDECAR)
    try:
        with open(sidecar) as fp:
            meta = json.load(fp)
        fps, height, width = float(meta["fps"]), int(meta["height"]), int(meta["width"])
    except FileNotFoundError as exc:
        raise TensorFileError("Missing clip sidecar", path=sidecar) from exc
    except (KeyError, ValueError, TypeError) as exc:
        raise TensorFileError(f"Sidecar needs fps, height and width ({exc})", path=sidecar) from exc
    filenames = sorted(glob.glob(os.path.join(dirname, pattern)))
    if not filenames:
        raise TensorFileError(f"No frame files matching {pattern}", path=dirname)
    frames = []
    for filename in filenames:
        with open(filename, "rb") as stream:
            data = stream.read()
        if len(data) != height * width * 3:
            raise TensorFileError(
                f"Frame has {len(data)} bytes, expected {height * width * 3}", path=filename
            )
        frames.append(np.frombuffer(data, dtype=np.uint8).reshape(height, width, 3))
    logger.debug(f"Read {len(frames)} frames from {dirname}")
    values = np.stack(frames).transpose(0, 3, 1, 2) / 255.0
    dims = (attrs.TIMENAME, attrs.CHANNAME, attrs.HEIGHTNAME, attrs.WIDTHNAME)
    darr = to_tensor(values, dims=dims, name="frames")
    darr.attrs["fps"] = fps
    return darr
