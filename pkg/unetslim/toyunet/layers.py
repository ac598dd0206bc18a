"""Layers of the toy UNet acting on latents with axes (T, C, H, W).

All layers are bias-free and normalization-free. Residual branches have their
output weights scaled by 0.5 at initialization so activations stay of order one
through the network.

"""
from dataclasses import dataclass, replace

import numpy as np

from unetslim.attention import CrossAttnLayer, multi_head_attention, attention_flops
from unetslim.funnel.pairs import ConvPair, FunnelPair, activation, channel_mix, conv2d
from unetslim.funnel.merge import merge_attention_qk, merge_value_output, merge_conv


BRANCH_GAIN = 0.5


def init_weights(rng, shape, fan_in, gain=1.0):
    """N(0, gain^2 / fan_in) weights."""
    return rng.normal(0.0, gain / np.sqrt(fan_in), size=shape)


def conv_flops(kh, kw, c_in, c_out, positions):
    """Multiply-adds of a convolution, 2 Kh Kw c_in c_out per output position."""
    return int(2 * kh * kw * c_in * c_out * positions)


def linear_flops(c_in, c_out, positions):
    """Multiply-adds of a linear layer, 2 c_in c_out per position."""
    return int(2 * c_in * c_out * positions)


def layer_count(kind, flops, softmax=0):
    return {"class": kind, "flops": int(flops), "softmax": int(softmax)}


@dataclass(frozen=True)
class Attention:
    """Attention layer with optional (unmerged) query/key and value/output funnels.

    Args:
        - layer (CrossAttnLayer): Projections, Wk and Wv read the context (or X itself).
        - qk (FunnelPair): Query/key funnel.
        - vo (FunnelPair): Value/output funnel.
        - cross (bool): Keys and values come from a single context token.

    """

    layer: CrossAttnLayer
    qk: FunnelPair = None
    vo: FunnelPair = None
    cross: bool = False

    @classmethod
    def init(cls, rng, c, c_ctx, heads, cross=False):
        return cls(
            layer=CrossAttnLayer(
                Wq=init_weights(rng, (c, c), c),
                Wk=init_weights(rng, (c_ctx, c), c_ctx),
                Wv=init_weights(rng, (c_ctx, c), c_ctx),
                Wo=init_weights(rng, (c, c), c, gain=BRANCH_GAIN),
                heads=heads,
            ),
            cross=cross,
        )

    @property
    def qk_width(self):
        return self.layer.c_head if self.qk is None else self.qk.width

    @property
    def v_width(self):
        return self.layer.c_v if self.vo is None else self.vo.width

    def _value(self, source):
        V = source @ self.layer.Wv
        if self.vo is not None:
            V = V @ self.vo.F1.T
        return V

    def _output(self, out):
        if self.vo is not None:
            out = out @ self.vo.F2.T
        return out @ self.layer.Wo

    def __call__(self, X, context=None, optimized=False):
        """Attend from tokens X (..., L, c) to `context` (1, c_ctx) or to X itself."""
        if self.cross and optimized:
            y = self._output(self._value(context))
            return np.broadcast_to(y, X.shape[:-1] + (y.shape[-1],)).copy()
        source = X if context is None else context
        Q = X @ self.layer.Wq
        K = source @ self.layer.Wk
        if self.qk is not None:
            Q = Q @ self.qk.Fq
            K = K @ self.qk.Fk
        out = multi_head_attention(
            Q, K, self._value(source), heads=self.layer.heads, scale=self.layer.scale
        )
        return self._output(out)

    def merged(self):
        """Fold installed funnels into the projections."""
        proj = self.layer.projections
        if self.qk is not None:
            proj = merge_attention_qk(proj, self.qk)
        if self.vo is not None:
            proj = merge_value_output(proj, self.vo)
        return Attention(layer=self.layer.replace(proj), cross=self.cross)

    def count(self, L, m, batch, optimized=False):
        """Counted cost for `batch` sequences of L queries and m keys."""
        layer = self.layer
        if self.cross and optimized:
            flops = linear_flops(layer.c_ctx, self.v_width, 1)
            flops += linear_flops(self.v_width, layer.c_out, 1)
            return layer_count("attention", flops, 0)
        count = attention_flops(
            L, m, layer.c_in, layer.c_ctx, self.qk_width, self.v_width, layer.c_out,
            heads=layer.heads,
        )
        return layer_count("attention", batch * count["flops"], batch * count["softmax"])


@dataclass(frozen=True)
class ResBlock:
    """Residual convolution block h + K2 * silu(K1 * silu(h)), 3x3 kernels.

    A 1x1 skip projection is used when input and output widths differ.
    """

    pair: ConvPair
    skip: np.ndarray = None
    funnel: FunnelPair = None

    @classmethod
    def init(cls, rng, c_in, c_out):
        K1 = init_weights(rng, (3, 3, c_out, c_in), 9 * c_in)
        K2 = init_weights(rng, (3, 3, c_out, c_out), 9 * c_out, gain=BRANCH_GAIN)
        skip = None if c_in == c_out else init_weights(rng, (c_out, c_in), c_in)
        return cls(pair=ConvPair(K1=K1, K2=K2, nonlinearity="silu"), skip=skip)

    @property
    def c_in(self):
        return self.pair.K1.shape[3]

    @property
    def c_out(self):
        return self.pair.K2.shape[2]

    def __call__(self, h):
        branch = self.pair.forward(activation(h, "silu"), funnel=self.funnel)
        shortcut = h if self.skip is None else channel_mix(h, self.skip)
        return shortcut + branch

    def merged(self):
        if self.funnel is None:
            return self
        return ResBlock(pair=merge_conv(self.pair, self.funnel), skip=self.skip)

    def count(self, T, H, W):
        positions = T * H * W
        c_mid = self.pair.c_mid if self.funnel is None else self.funnel.width
        kh, kw = self.pair.K1.shape[:2]
        flops = conv_flops(kh, kw, self.c_in, c_mid, positions)
        flops += conv_flops(kh, kw, c_mid, self.c_out, positions)
        if self.skip is not None:
            flops += linear_flops(self.c_in, self.c_out, positions)
        return layer_count("conv", flops)


@dataclass(frozen=True)
class SpatialTransformer:
    """Per-frame self-attention over the H W tokens followed by cross-attention."""

    self_attn: Attention
    cross_attn: Attention

    @classmethod
    def init(cls, rng, c, c_ctx, heads):
        return cls(
            self_attn=Attention.init(rng, c, c, heads),
            cross_attn=Attention.init(rng, c, c_ctx, heads, cross=True),
        )

    def __call__(self, h, context, optimized=False):
        T, C, H, W = h.shape
        tokens = h.reshape(T, C, H * W).transpose(0, 2, 1)
        tokens = tokens + self.self_attn(tokens)
        tokens = tokens + self.cross_attn(tokens, context, optimized=optimized)
        return tokens.transpose(0, 2, 1).reshape(T, C, H, W)

    def merged(self):
        return SpatialTransformer(
            self_attn=self.self_attn.merged(), cross_attn=self.cross_attn.merged()
        )

    def counts(self, T, H, W, optimized=False):
        L = H * W
        return {
            "self_attn": self.self_attn.count(L, L, T),
            "cross_attn": self.cross_attn.count(L, 1, T, optimized=optimized),
        }


def temporal_conv(h, kernel):
    """Zero-padded 3-tap convolution along frames.

    Args:
        - h (4darray): Latent (T, c_in, H, W).
        - kernel (3darray): Taps (3, c_out, c_in), tap 1 at the current frame.

    """
    padded = np.pad(h, ((1, 1), (0, 0), (0, 0), (0, 0)))
    windows = np.lib.stride_tricks.sliding_window_view(padded, 3, axis=0)
    return np.einsum("tchwk,koc->tohw", windows, kernel, optimize=True)


@dataclass(frozen=True)
class TemporalBlock:
    """Temporal block producing the residual r_t mixed as x_s + zhat (1 - alpha) r_t.

    Args:
        - alpha (float): Mixing weight in (0, 1).
        - attn (Attention): Self-attention across frames for `temporal_attention`.
        - K1, K2 (3darray): Temporal conv taps (3, c, c) for `temporal_conv`.

    """

    alpha: float
    attn: Attention = None
    K1: np.ndarray = None
    K2: np.ndarray = None

    @classmethod
    def init(cls, rng, c, heads, kind, alpha):
        if kind == "temporal_attention":
            return cls(alpha=alpha, attn=Attention.init(rng, c, c, heads))
        K1 = init_weights(rng, (3, c, c), 3 * c)
        K2 = init_weights(rng, (3, c, c), 3 * c, gain=BRANCH_GAIN)
        return cls(alpha=alpha, K1=K1, K2=K2)

    @property
    def kind(self):
        return "temporal_attention" if self.attn is not None else "temporal_conv"

    def residual(self, h):
        """Temporal residual r_t of the spatial output h (T, C, H, W)."""
        if self.attn is None:
            return temporal_conv(activation(temporal_conv(h, self.K1), "silu"), self.K2)
        T, C, H, W = h.shape
        tokens = h.transpose(2, 3, 0, 1).reshape(H * W, T, C)
        out = self.attn(tokens)
        return out.reshape(H, W, T, C).transpose(2, 3, 0, 1)

    def __call__(self, h, zhat=1.0):
        if zhat == 0:
            return h
        return h + zhat * (1.0 - self.alpha) * self.residual(h)

    def merged(self):
        if self.attn is None:
            return self
        return replace(self, attn=self.attn.merged())

    def count(self, T, H, W):
        if self.attn is None:
            c_out, c_in = self.K1.shape[1:]
            flops = conv_flops(3, 1, c_in, c_out, T * H * W)
            flops += conv_flops(3, 1, c_out, self.K2.shape[1], T * H * W)
            return layer_count("temporal_conv", flops)
        return self.attn.count(T, T, H * W)

    def nparams(self):
        if self.attn is None:
            return int(self.K1.size + self.K2.size)
        layer = self.attn.layer
        return int(layer.Wq.size + layer.Wk.size + layer.Wv.size + layer.Wo.size)


@dataclass(frozen=True)
class UNetBlock:
    """ResBlock, temporal block, transformer, temporal block.

    Args:
        - name (str): Block name, e.g. `down0`, `mid0`, `up3`.
        - res (ResBlock): Residual convolutions.
        - transformer (SpatialTransformer): Spatial attention layers.
        - temporal (tuple): Indices of the two temporal blocks in the network.

    """

    name: str
    res: ResBlock
    transformer: SpatialTransformer
    temporal: tuple
