"""Micro-conditioning heuristics: motion area of a clip and frame striding.

The motion area of a clip is obtained by converting frames to grey, downsampling
them, stacking the flattened frames as the rows of a T x (H' W') matrix and
averaging the normalized cumulative sum of its singular values. A static clip
gives a rank-1 matrix and an area of 1, more motion spreads the spectrum and
lowers the area.

"""
import logging
from dataclasses import dataclass, field

import numpy as np
import xarray as xr

from unetslim.core.attributes import attrs
from unetslim.core.linalg import PINV_RTOL, svd
from unetslim.core.utils import as_array, as_generator
from unetslim.core.exceptions import ArgumentError, DomainError, ShapeError

logger = logging.getLogger(__name__)


LUMA = np.array([0.299, 0.587, 0.114])
TARGET_FRAMES = 14
MAX_STRIDE = 4
BUCKET_MAX = 255
BUCKET_DEFAULT = 127
ORIENTATIONS = ("area", "motion")


@dataclass(frozen=True)
class Clip:
    """Video frames (T, C, H, W) with values in [0, 1] and their native fps."""

    frames: np.ndarray
    native_fps: float = 24.0

    def __post_init__(self):
        frames = as_array(self.frames, ndim=4, name="frames")
        if frames.shape[0] < 1:
            raise ArgumentError("Clip has no frames")
        if frames.shape[1] not in (1, 3):
            raise ShapeError(f"Clip must have 1 or 3 channels, got {frames.shape[1]}")
        if self.native_fps <= 0:
            raise ArgumentError(f"native_fps must be positive, got {self.native_fps}")
        object.__setattr__(self, "frames", frames)

    @property
    def nframes(self):
        return self.frames.shape[0]

    def to_dataarray(self):
        """Frames as a DataArray with (T, C, H, W) dims and the fps attribute."""
        dims = (attrs.TIMENAME, attrs.CHANNAME, attrs.HEIGHTNAME, attrs.WIDTHNAME)
        darr = xr.DataArray(self.frames, dims=dims, name="frames")
        darr.attrs.update(attrs.ATTRS.frames)
        darr.attrs["fps"] = float(self.native_fps)
        return darr

    @classmethod
    def from_dataarray(cls, darr, fps=None):
        fps = fps or darr.attrs.get("fps", 24.0)
        return cls(frames=darr.values, native_fps=float(fps))


@dataclass(frozen=True)
class MotionDescriptor:
    """Singular values of a clip and the area of their normalized cumulative sum."""

    singular_values: np.ndarray
    area: float
    bucket_resolution: tuple = (128, 64)
    cumulative: np.ndarray = field(default=None, compare=False)

    def to_dict(self):
        return {
            "singular_values": [float(s) for s in self.singular_values],
            "cumulative": [float(c) for c in self.cumulative],
            "area": float(self.area),
            "bucket_resolution": list(self.bucket_resolution),
        }

    def to_dataset(self):
        """Descriptor as a Dataset with metadata from the attributes file."""
        dset = xr.Dataset(
            {
                "singular_values": ((attrs.COMPNAME,), self.singular_values),
                "cumulative_share": ((attrs.COMPNAME,), self.cumulative),
                "area": ((), self.area),
            }
        )
        for name in dset.data_vars:
            dset[name].attrs.update(attrs.ATTRS[name])
        return dset


def to_gray(frames):
    """Luma (BT.601) of frames (T, C, H, W), returned as (T, H, W)."""
    if frames.shape[1] == 1:
        return frames[:, 0]
    return np.einsum("c,tchw->thw", LUMA, frames)


def area_downsample(image, height, width):
    """Area-averaging resize of the last two axes to (height, width).

    Each output pixel averages the input area it covers, with fractional
    overlaps weighted, so any input size can be mapped to any output size.
    """

    def weights(n_in, n_out):
        edges_out = np.arange(n_out + 1) * n_in / n_out
        lo = np.maximum(edges_out[:-1, None], np.arange(n_in)[None, :])
        hi = np.minimum(edges_out[1:, None], np.arange(1, n_in + 1)[None, :])
        return np.clip(hi - lo, 0.0, None) * n_out / n_in

    rows = weights(image.shape[-2], height)
    cols = weights(image.shape[-1], width)
    return np.einsum("yh,...hw,xw->...yx", rows, image, cols, optimize=True)


def motion_descriptor(clip, height=128, width=64):
    """Motion area of a clip.

    Args:
        - clip (Clip): Frames in [0, 1].
        - height (int): Height H' of the downsampled frames.
        - width (int): Width W' of the downsampled frames.

    Returns:
        - descriptor (MotionDescriptor): Singular values, normalized cumulative sum
          and its mean, the area, in [1/T, 1].

    """
    if not isinstance(clip, Clip):
        clip = Clip(frames=clip)
    gray = area_downsample(to_gray(clip.frames), height, width)
    matrix = gray.reshape(clip.nframes, -1)
    S = svd(matrix).S
    if S.size:
        S = np.where(S > PINV_RTOL * max(matrix.shape) * S[0], S, 0.0)
    total = S.sum()
    if total <= 0:
        raise DomainError("Clip is all zero, motion area is undefined")
    cumulative = np.cumsum(S) / total
    cumulative = np.concatenate([cumulative, np.ones(clip.nframes - S.size)])
    area = float(cumulative.mean())
    logger.debug(f"Motion area {area} from {clip.nframes} frames")
    return MotionDescriptor(
        singular_values=S,
        area=area,
        bucket_resolution=(height, width),
        cumulative=cumulative,
    )


def fps_stride(clip, k, nframes=TARGET_FRAMES):
    """Keep every k-th frame and adjust the fps.

    Args:
        - clip (Clip): Source clip with at least k * nframes frames.
        - k (int): Stride in 1..4.
        - nframes (int): Number of frames kept.

    Returns:
        - clip (Clip): Frames 0, k, ..., (nframes-1) k at native_fps / k.

    """
    if int(k) != k or not 1 <= k <= MAX_STRIDE:
        raise ArgumentError(f"Stride must be an integer in 1..{MAX_STRIDE}, got {k}")
    k = int(k)
    needed = k * nframes
    if clip.nframes < needed:
        raise ArgumentError(
            f"Stride {k} over {nframes} frames needs {needed} frames, clip has {clip.nframes}"
        )
    index = np.arange(nframes) * k
    return Clip(frames=clip.frames[index].copy(), native_fps=clip.native_fps / k)


def sample_fps_stride(clip, rng=None, nframes=TARGET_FRAMES):
    """Stride drawn uniformly among the strides the clip is long enough for."""
    rng = as_generator(rng)
    strides = [k for k in range(1, MAX_STRIDE + 1) if clip.nframes >= k * nframes]
    if not strides:
        raise ArgumentError(f"Clip has {clip.nframes} frames, fewer than {nframes}")
    return fps_stride(clip, int(rng.choice(strides)), nframes=nframes)


def motion_bucket_id(area, orientation="motion", lo=0.0, hi=1.0):
    """Integer bucket id in [0, 255] from a motion area.

    Args:
        - area (float): Motion area, None for an unconditioned clip.
        - orientation (str): `area` maps larger areas to larger ids, `motion` maps
          more motion (smaller areas) to larger ids.
        - lo, hi (float): Area range mapped onto the id range.

    Returns:
        - bucket (int): Rescaled id, 127 when area is None.

    """
    if area is None:
        return BUCKET_DEFAULT
    if orientation not in ORIENTATIONS:
        raise ArgumentError(f"orientation must be one of {ORIENTATIONS}")
    if not hi > lo:
        raise ArgumentError(f"Invalid area range [{lo}, {hi}]")
    scaled = np.clip((area - lo) / (hi - lo), 0.0, 1.0)
    if orientation == "motion":
        scaled = 1.0 - scaled
    return int(np.floor(scaled * BUCKET_MAX + 0.5))


def median_motion_area(clips, height=128, width=64):
    """Median motion area over a collection of clips."""
    areas = [motion_descriptor(clip, height, width).area for clip in clips]
    if not areas:
        raise ArgumentError("No clips given")
    return float(np.median(areas))


def static_clip(frame, nframes=TARGET_FRAMES, native_fps=24.0):
    """Clip repeating a single frame (C, H, W)."""
    frame = as_array(frame, ndim=3, name="frame")
    return Clip(frames=np.repeat(frame[None], nframes, axis=0), native_fps=native_fps)


def orthogonal_clip(nframes=TARGET_FRAMES, height=128, width=64, value=0.5):
    """Grey clip whose frames light disjoint bands of equal size.

    At the descriptor resolution the flattened frames are orthogonal with equal
    norms, so all singular values are equal and the area is (T + 1) / (2 T).
    """
    rows = height // nframes
    if rows < 1:
        raise ArgumentError(f"Cannot fit {nframes} disjoint bands in {height} rows")
    frames = np.zeros((nframes, 1, height, width))
    for t in range(nframes):
        frames[t, 0, t * rows : (t + 1) * rows] = value
    return Clip(frames=frames)


def moving_square_clip(nframes=TARGET_FRAMES, height=128, width=64, size=16, step=4):
    """RGB clip of a bright square moving right over a dark background."""
    frames = np.full((nframes, 3, height, width), 0.2)
    top = (height - size) // 2
    for t in range(nframes):
        left = (t * step) % max(width - size, 1)
        frames[t, :, top : top + size, left : left + size] = 0.9
    return Clip(frames=frames)
