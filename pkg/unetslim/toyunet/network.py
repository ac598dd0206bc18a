"""Forward-only toy spatio-temporal UNet hosting the compression transforms.

Layout: conv_in, `down_blocks` down blocks each followed by a 2x spatial average
pooling, `mid_blocks` middle blocks, `up_blocks` up blocks each preceded by a
nearest upsampling to the matching skip and a channel concatenation, conv_out.
Every block holds a ResBlock, a temporal block, a spatial transformer and a
second temporal block, giving N = 2 * (down + mid + up) temporal blocks.

Multiscaling halves the frames (temporal) or the spatial extent (spatial) right
after the first down block and restores it right before the last up block.

Transforms (`inject_funnels`, `merge_funnels`, `inject_gates`, `set_gates`,
`prune`) never modify their input and return a new network.

"""
import copy
import logging
import warnings

import numpy as np

from unetslim.core.utils import as_array, as_generator
from unetslim.core.exceptions import ArgumentError, ShapeError
from unetslim.funnel.csi import csi_conv_pair, csi_heads
from unetslim.funnel.pairs import activation, conv2d
from unetslim.pruning.inclusion import solve_inclusion
from unetslim.pruning.sampling import GateSample, sample_fixed_size
from unetslim.pruning.gates import select_top_n
from unetslim.toyunet.spec import ToyUNetSpec, DOWNSCALE_MODES
from unetslim.toyunet.layers import (
    Attention,
    ResBlock,
    SpatialTransformer,
    TemporalBlock,
    UNetBlock,
    init_weights,
)

logger = logging.getLogger(__name__)


FUNNEL_TARGETS = ("qk", "vo", "conv")


def downscale_axis(x, axis, mode="average"):
    """Halve one axis, averaging adjacent pairs or keeping every other entry.

    An odd trailing entry passes through unpaired, the output has ceil(n/2) entries.
    """
    if mode not in DOWNSCALE_MODES:
        raise ArgumentError(f"mode must be one of {DOWNSCALE_MODES}, got {mode}")
    x = np.moveaxis(x, axis, 0)
    n = x.shape[0]
    if mode == "strided":
        out = x[::2]
    else:
        pairs = n // 2
        out = 0.5 * (x[0 : 2 * pairs : 2] + x[1 : 2 * pairs : 2])
        if n % 2:
            out = np.concatenate([out, x[-1:]], axis=0)
    return np.moveaxis(out, 0, axis)


def upscale_axis(x, axis, size):
    """Nearest-neighbour 2x upscaling along one axis, truncated to `size`."""
    out = np.repeat(x, 2, axis=axis)
    return np.take(out, np.arange(size), axis=axis)


def apply_temporal_multiscaling(latent, direction="down", frames=None, mode="average"):
    """Temporal down or upscaling of an internal latent (T, C, H, W).

    Args:
        - latent (4darray): Internal latent.
        - direction (str): `down` halves the frames, `up` doubles them.
        - frames (int): Frame count to restore when upscaling, 2 T if None.
        - mode (str): Downscale operator, `average` or `strided`.

    Returns:
        - latent (4darray): ceil(T/2) frames down, `frames` frames up.

    """
    latent = as_array(latent, ndim=4, name="latent")
    if direction == "down":
        if latent.shape[0] < 2:
            warnings.warn("Temporal multiscaling needs at least 2 frames, skipping")
            return latent
        return downscale_axis(latent, 0, mode=mode)
    elif direction == "up":
        frames = 2 * latent.shape[0] if frames is None else frames
        return upscale_axis(latent, 0, frames)
    raise ArgumentError(f"direction must be `down` or `up`, got {direction}")


def apply_spatial_multiscaling(latent, direction="down", size=None, mode="average"):
    """Spatial counterpart of `apply_temporal_multiscaling` over (H, W)."""
    latent = as_array(latent, ndim=4, name="latent")
    if direction == "down":
        for axis in (2, 3):
            latent = downscale_axis(latent, axis, mode=mode)
        return latent
    elif direction == "up":
        size = size or (2 * latent.shape[2], 2 * latent.shape[3])
        return upscale_axis(upscale_axis(latent, 2, size[0]), 3, size[1])
    raise ArgumentError(f"direction must be `down` or `up`, got {direction}")


def spatial_pool(h):
    return apply_spatial_multiscaling(h, "down")


class ToyUNet:
    """Randomly initialized toy UNet.

    Args:
        - spec (ToyUNetSpec): Layout.
        - conv_in (4darray): Input convolution kernel (3, 3, c0, in_channels).
        - blocks (list): UNetBlock instances in forward order.
        - temporal (list): TemporalBlock per index, None once pruned.
        - conv_out (4darray): Output convolution kernel (3, 3, in_channels, c_last).

    """

    def __init__(self, spec, conv_in, blocks, temporal, conv_out):
        self.spec = spec
        self.conv_in = conv_in
        self.blocks = blocks
        self.temporal = temporal
        self.conv_out = conv_out
        self.gates = None
        self.gate_sample = None

    def __repr__(self):
        return (
            f"<ToyUNet blocks={len(self.blocks)} temporal={self.ntemporal_active}/"
            f"{len(self.temporal)} multiscaling={self.spec.multiscaling}>"
        )

    @property
    def ntemporal_active(self):
        return sum(block is not None for block in self.temporal)

    @property
    def removed(self):
        """Indices of deleted temporal blocks."""
        return tuple(i for i, block in enumerate(self.temporal) if block is None)

    @property
    def alpha(self):
        """Mixing weights of all temporal blocks, NaN where deleted."""
        return np.array([np.nan if b is None else b.alpha for b in self.temporal])

    def copy(self):
        return copy.deepcopy(self)

    def _temporal(self, h, index):
        block = self.temporal[index]
        if block is None:
            return h
        zhat = 1.0 if self.gates is None else self.gates[index]
        return block(h, zhat=zhat)

    def _block(self, block, h, context):
        h = block.res(h)
        h = self._temporal(h, block.temporal[0])
        h = block.transformer(h, context, optimized=self.spec.optimized_cross_attention)
        return self._temporal(h, block.temporal[1])

    def forward(self, latent, context, hook=None):
        """Denoiser evaluation of one latent.

        Args:
            - latent (4darray, DataArray): Latent (T, C, H, W) matching the spec.
            - context (2darray): Conditioning token (1, context_width).
            - hook (callable): Called as hook(name, h) on internal activations.

        Returns:
            - out (4darray): Array with the latent shape.

        """
        spec = self.spec
        latent = as_array(latent, ndim=4, name="latent")
        context = as_array(context, ndim=2, name="context")
        if latent.shape[1:] != spec.latent_shape[1:]:
            raise ShapeError(
                f"Latent shape {latent.shape} does not match (T, {spec.latent_shape[1:]})"
            )
        if context.shape != (1, spec.context_width):
            raise ShapeError(f"Context must have shape (1, {spec.context_width})")

        def report(name, h):
            if hook is not None:
                hook(name, h)

        frames = latent.shape[0]
        h = conv2d(latent, self.conv_in)
        report("conv_in", h)
        down = self.blocks[: spec.down_blocks]
        mid = self.blocks[spec.down_blocks : spec.down_blocks + spec.mid_blocks]
        up = self.blocks[spec.down_blocks + spec.mid_blocks :]

        skips = []
        multiscale_size = None
        for index, block in enumerate(down):
            h = self._block(block, h, context)
            report(block.name, h)
            skips.append(h)
            h = spatial_pool(h)
            if index == 0:
                if spec.temporal_multiscaling:
                    h = apply_temporal_multiscaling(h, "down", mode=spec.downscale)
                if spec.spatial_multiscaling:
                    multiscale_size = h.shape[2:]
                    h = apply_spatial_multiscaling(h, "down", mode=spec.downscale)
                report("multiscale_down", h)
        for block in mid:
            h = self._block(block, h, context)
            report(block.name, h)
        for index, block in enumerate(up):
            if index == len(up) - 1:
                if spec.spatial_multiscaling:
                    h = apply_spatial_multiscaling(h, "up", size=multiscale_size)
                if spec.temporal_multiscaling:
                    h = apply_temporal_multiscaling(h, "up", frames=frames)
                report("multiscale_up", h)
            skip = skips[-1 - index]
            h = apply_spatial_multiscaling(h, "up", size=skip.shape[2:])
            h = np.concatenate([h, skip], axis=1)
            h = self._block(block, h, context)
            report(block.name, h)
        out = conv2d(activation(h, "silu"), self.conv_out)
        report("out", out)
        return out

    __call__ = forward

    def nparams(self):
        """Number of weights of the network, deleted temporal blocks excluded."""
        total = self.conv_in.size + self.conv_out.size
        for block in self.blocks:
            res = block.res
            total += res.pair.K1.size + res.pair.K2.size
            total += 0 if res.skip is None else res.skip.size
            for attn in (block.transformer.self_attn, block.transformer.cross_attn):
                layer = attn.layer
                total += layer.Wq.size + layer.Wk.size + layer.Wv.size + layer.Wo.size
        total += sum(b.nparams() for b in self.temporal if b is not None)
        return int(total)


def build(spec=None):
    """Build a toy UNet with deterministic weights drawn from `spec.seed`.

    Weights are N(0, 1/fan_in), residual branch outputs scaled by 0.5, and the
    temporal mixing weights alpha are drawn uniformly in [0.2, 0.8].

    """
    spec = spec or ToyUNetSpec()
    rng = np.random.default_rng(spec.seed)
    heads, c_ctx = spec.heads, spec.context_width

    def unet_block(name, c_in, c_out, index):
        res = ResBlock.init(rng, c_in, c_out)
        transformer = SpatialTransformer.init(rng, c_out, c_ctx, heads)
        for _ in range(2):
            alpha = float(rng.uniform(0.2, 0.8))
            temporal.append(
                TemporalBlock.init(rng, c_out, heads, spec.temporal_block, alpha)
            )
        return UNetBlock(
            name=name, res=res, transformer=transformer, temporal=(2 * index, 2 * index + 1)
        )

    temporal, blocks = [], []
    c0 = spec.stage_width(0)
    conv_in = init_weights(rng, (3, 3, c0, spec.in_channels), 9 * spec.in_channels)
    c_prev, skip_widths = c0, []
    for b in range(spec.down_blocks):
        c_out = spec.stage_width(b)
        blocks.append(unet_block(f"down{b}", c_prev, c_out, len(blocks)))
        skip_widths.append(c_out)
        c_prev = c_out
    for b in range(spec.mid_blocks):
        blocks.append(unet_block(f"mid{b}", c_prev, c_prev, len(blocks)))
    for b in range(spec.up_blocks):
        c_skip = skip_widths[-1 - b]
        blocks.append(unet_block(f"up{b}", c_prev + c_skip, c_skip, len(blocks)))
        c_prev = c_skip
    conv_out = init_weights(rng, (3, 3, spec.in_channels, c_prev), 9 * c_prev)
    net = ToyUNet(spec, conv_in, blocks, temporal, conv_out)
    logger.debug(f"Built {net}")
    return net


def _attention_layers(net):
    """(owner, attribute, Attention) for every attention layer of the network."""
    for index, block in enumerate(net.blocks):
        yield ("block", index, "self_attn"), block.transformer.self_attn
        yield ("block", index, "cross_attn"), block.transformer.cross_attn
    for index, block in enumerate(net.temporal):
        if block is not None and block.attn is not None:
            yield ("temporal", index, "attn"), block.attn


def _set_attention(net, key, attn):
    owner, index, name = key
    if owner == "temporal":
        block = net.temporal[index]
        net.temporal[index] = TemporalBlock(alpha=block.alpha, attn=attn)
        return
    block = net.blocks[index]
    transformer = block.transformer
    if name == "self_attn":
        transformer = SpatialTransformer(self_attn=attn, cross_attn=transformer.cross_attn)
    else:
        transformer = SpatialTransformer(self_attn=transformer.self_attn, cross_attn=attn)
    net.blocks[index] = UNetBlock(
        name=block.name, res=block.res, transformer=transformer, temporal=block.temporal
    )


def inject_funnels(net, fun_factor=0.5, targets=("qk", "vo")):
    """Install CSI funnels on every matching layer pair.

    Attention funnels are fitted per head. Conv funnels adapt the two
    convolutions of every ResBlock.

    Args:
        - net (ToyUNet): Network to adapt.
        - fun_factor (float): Ratio c'/c_inner in (0, 1].
        - targets (sequence): Any of `qk`, `vo`, `conv`.

    Returns:
        - net (ToyUNet): Copy with unmerged funnels installed.

    """
    if not 0 < fun_factor <= 1:
        raise ArgumentError(f"fun_factor must be in (0, 1], got {fun_factor}")
    targets = tuple(targets)
    unknown = set(targets) - set(FUNNEL_TARGETS)
    if unknown:
        raise ArgumentError(f"Unknown funnel targets {sorted(unknown)}, valid are {FUNNEL_TARGETS}")
    out = net.copy()
    installed = 0
    for key, attn in list(_attention_layers(out)):
        layer, heads = attn.layer, attn.layer.heads
        name = ".".join(str(k) for k in key)
        qk, vo = attn.qk, attn.vo
        if "qk" in targets:
            qk = csi_heads(layer.projections, heads, fun_factor, kind="qk", target=name)
            installed += 1
        if "vo" in targets:
            vo = csi_heads(layer.projections, heads, fun_factor, kind="vo", target=name)
            installed += 1
        _set_attention(out, key, Attention(layer=layer, qk=qk, vo=vo, cross=attn.cross))
    if "conv" in targets:
        for index, block in enumerate(out.blocks):
            res = block.res
            funnel = csi_conv_pair(res.pair, fun_factor, target=f"{block.name}.res")
            out.blocks[index] = UNetBlock(
                name=block.name,
                res=ResBlock(pair=res.pair, skip=res.skip, funnel=funnel),
                transformer=block.transformer,
                temporal=block.temporal,
            )
            installed += 1
    if not installed:
        warnings.warn(f"No layer pairs matching targets {targets}, no funnel installed")
    logger.info(f"Installed {installed} funnels with fun_factor={fun_factor}")
    return out


def merge_funnels(net):
    """Fold all installed funnels into their layers, giving a narrower network."""
    out = net.copy()
    for index, block in enumerate(out.blocks):
        out.blocks[index] = UNetBlock(
            name=block.name,
            res=block.res.merged(),
            transformer=block.transformer.merged(),
            temporal=block.temporal,
        )
    out.temporal = [None if b is None else b.merged() for b in out.temporal]
    return out


def _check_importance(net, q, n):
    q = as_array(q, ndim=1, name="q")
    N = len(net.temporal)
    if q.size != N:
        raise ShapeError(f"Expected {N} importance values, got {q.size}")
    if int(n) != n or not 0 <= n <= N:
        raise ArgumentError(f"n must be an integer in [0, {N}], got {n}")
    return q, int(n)


def set_gates(net, z):
    """Copy of the network with gate values zhat wired into the temporal blocks."""
    z = as_array(z, ndim=1, name="z")
    if z.size != len(net.temporal):
        raise ShapeError(f"Expected {len(net.temporal)} gates, got {z.size}")
    out = net.copy()
    out.gates = z
    return out


def inject_gates(net, q, n, rng=None, method="brewer"):
    """Sample n of the N temporal blocks and wire the straight-through gates.

    Args:
        - net (ToyUNet): Network.
        - q (1darray): Importance of each temporal block.
        - n (int): Number of blocks kept.
        - rng (int, SeedSequence, Generator): Random state of the sampler.
        - method (str): Sampling design.

    Returns:
        - net (ToyUNet): Copy with `gates` and `gate_sample` set.

    """
    q, n = _check_importance(net, q, n)
    N = q.size
    if n == N:
        sample = GateSample(z=np.ones(N, dtype=int), p=np.ones(N), n=n, method=method)
    elif n == 0:
        sample = GateSample(z=np.zeros(N, dtype=int), p=np.zeros(N), n=n, method=method)
    else:
        p = solve_inclusion(q, n).p
        sample = sample_fixed_size(p, n, rng=as_generator(rng), method=method)
    out = set_gates(net, sample.zhat)
    out.gate_sample = sample
    return out


def prune(net, q, n):
    """Delete every temporal block outside the n most important ones."""
    q, n = _check_importance(net, q, n)
    keep = set(select_top_n(q, n).tolist())
    out = net.copy()
    out.temporal = [b if i in keep else None for i, b in enumerate(out.temporal)]
    logger.info(f"Pruned temporal blocks {out.removed}")
    return out
