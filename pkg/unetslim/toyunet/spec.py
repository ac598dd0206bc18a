"""Configuration of the toy spatio-temporal UNet."""
import json
import logging
from dataclasses import dataclass, asdict, fields

import yaml

from unetslim.core.exceptions import ArgumentError, ShapeError

logger = logging.getLogger(__name__)


TEMPORAL_BLOCKS = ("temporal_attention", "temporal_conv")
MULTISCALING = ("none", "temporal", "spatial", "both")
DOWNSCALE_MODES = ("average", "strided")


@dataclass(frozen=True)
class ToyUNetSpec:
    """Layout of the toy UNet.

    Args:
        - frames (int): Number of latent frames T.
        - height (int): Latent height H.
        - width (int): Latent width W.
        - in_channels (int): Latent channels.
        - channels (tuple): Channel width per stage, the last one reused by deeper blocks.
        - down_blocks (int): Number of down blocks, each followed by a 2x spatial pooling.
        - mid_blocks (int): Number of middle blocks.
        - up_blocks (int): Number of up blocks, must equal down_blocks.
        - temporal_block (str): `temporal_attention` or `temporal_conv`.
        - multiscaling (str): `none`, `temporal`, `spatial` or `both`.
        - downscale (str): Multiscaling downscale operator, `average` or `strided`.
        - context_width (int): Width of the single conditioning token.
        - heads (int): Attention heads, dividing every channel width.
        - optimized_cross_attention (bool): Use the single-token cross-attention rewrite.
        - seed (int): Seed of the weight initialization.

    """

    frames: int = 14
    height: int = 32
    width: int = 16
    in_channels: int = 4
    channels: tuple = (16, 32, 64)
    down_blocks: int = 4
    mid_blocks: int = 1
    up_blocks: int = 4
    temporal_block: str = "temporal_attention"
    multiscaling: str = "none"
    downscale: str = "average"
    context_width: int = 32
    heads: int = 2
    optimized_cross_attention: bool = False
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        for name in ("frames", "height", "width", "in_channels", "context_width", "heads"):
            if int(getattr(self, name)) < 1:
                raise ShapeError(f"{name} must be a positive integer, got {getattr(self, name)}")
        if not self.channels or min(self.channels) < 1:
            raise ShapeError(f"Invalid channel widths {self.channels}")
        if any(c % self.heads for c in self.channels):
            raise ShapeError(f"Channel widths {self.channels} not divisible by {self.heads} heads")
        if self.down_blocks < 1 or self.down_blocks != self.up_blocks:
            raise ShapeError(
                f"down_blocks ({self.down_blocks}) and up_blocks ({self.up_blocks}) "
                "must be equal and positive"
            )
        if self.mid_blocks < 0:
            raise ShapeError(f"mid_blocks must be >= 0, got {self.mid_blocks}")
        if self.temporal_block not in TEMPORAL_BLOCKS:
            raise ArgumentError(f"temporal_block must be one of {TEMPORAL_BLOCKS}")
        if self.multiscaling not in MULTISCALING:
            raise ArgumentError(f"multiscaling must be one of {MULTISCALING}")
        if self.downscale not in DOWNSCALE_MODES:
            raise ArgumentError(f"downscale must be one of {DOWNSCALE_MODES}")

    @property
    def temporal_multiscaling(self):
        return self.multiscaling in ("temporal", "both")

    @property
    def spatial_multiscaling(self):
        return self.multiscaling in ("spatial", "both")

    @property
    def nblocks(self):
        return self.down_blocks + self.mid_blocks + self.up_blocks

    @property
    def ntemporal(self):
        """Number of temporal blocks N, two per UNet block."""
        return 2 * self.nblocks

    @property
    def latent_shape(self):
        return (self.frames, self.in_channels, self.height, self.width)

    def stage_width(self, index):
        """Channel width of down block `index`."""
        return self.channels[min(index, len(self.channels) - 1)]

    def replace(self, **kwargs):
        """New spec with some fields changed."""
        return ToyUNetSpec(**{**asdict(self), **kwargs})

    def to_dict(self):
        out = asdict(self)
        out["channels"] = list(self.channels)
        return out

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ArgumentError(f"Unknown spec fields {sorted(unknown)}, valid are {sorted(known)}")
        return cls(**data)

    @classmethod
    def from_file(cls, filename):
        """Spec from a JSON or YAML file (JSON is valid YAML)."""
        with open(filename) as stream:
            data = yaml.safe_load(stream) or {}
        logger.debug(f"Loaded toy spec from {filename}")
        return cls.from_dict(data)

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def svd_like(cls, **kwargs):
        """Preset with stable-video-diffusion-sized widths and latent."""
        defaults = dict(
            frames=14,
            height=64,
            width=32,
            channels=(320, 640, 1280),
            context_width=1024,
            heads=8,
        )
        return cls(**{**defaults, **kwargs})
