"""Analytic multiply-add counts of the toy UNet.

Counted layer classes:
    - conv: 2 Kh Kw c_in c_out H W T.
    - linear: 2 c_in c_out positions.
    - attention: projections, 2 L m c for Q K^T and 2 L m c for the weighted
      values, softmax rows counted separately.
    - temporal_conv: two 3-tap convolutions along frames.

Pooling, upsampling, concatenation, activations and the temporal mixing are
element-wise and not counted. Funnels that are installed but not merged are
counted at their merged width.

"""
import logging
import warnings

import numpy as np

from unetslim.attention import attention_flops, optimized_cross_attention_flops
from unetslim.pruning.gates import importance_from_alpha
from unetslim.pruning.inclusion import budget_from_rate
from unetslim.toyunet.spec import ToyUNetSpec
from unetslim.toyunet.network import build, inject_funnels, prune
from unetslim.toyunet.layers import conv_flops, linear_flops, layer_count

logger = logging.getLogger(__name__)


REFERENCE_REDUCTIONS = {"temporal": 0.34, "spatial": 0.51}


def _half(n):
    return -(-n // 2)


def block_plan(spec, frames=None):
    """Channel widths and extents of every UNet block in forward order.

    Returns:
        - plan (list): Tuples (name, c_in, c_out, (T, H, W), temporal indices).

    """
    frames = frames or spec.frames
    T, H, W = frames, spec.height, spec.width
    plan, skips = [], []
    c_prev = spec.stage_width(0)
    multiscale_size = None
    for b in range(spec.down_blocks):
        c_out = spec.stage_width(b)
        plan.append((f"down{b}", c_prev, c_out, (T, H, W)))
        skips.append((c_out, H, W))
        c_prev = c_out
        H, W = _half(H), _half(W)
        if b == 0:
            if spec.temporal_multiscaling and T >= 2:
                T = _half(T)
            if spec.spatial_multiscaling:
                multiscale_size = (H, W)
                H, W = _half(H), _half(W)
    for b in range(spec.mid_blocks):
        plan.append((f"mid{b}", c_prev, c_prev, (T, H, W)))
    for b in range(spec.up_blocks):
        if b == spec.up_blocks - 1:
            T = frames
            H, W = multiscale_size or (H, W)
        c_skip, H, W = skips[-1 - b]
        plan.append((f"up{b}", c_prev + c_skip, c_skip, (T, H, W)))
        c_prev = c_skip
    return [
        (name, c_in, c_out, extent, (2 * i, 2 * i + 1))
        for i, (name, c_in, c_out, extent) in enumerate(plan)
    ]


def _spec_layers(spec, frames):
    """Layer counts from the spec alone, without building weights."""
    heads, c_ctx = spec.heads, spec.context_width
    layers = {}
    for name, c_in, c, (T, H, W), temporal in block_plan(spec, frames):
        positions, L = T * H * W, H * W
        res = conv_flops(3, 3, c_in, c, positions) + conv_flops(3, 3, c, c, positions)
        if c_in != c:
            res += linear_flops(c_in, c, positions)
        layers[f"{name}.res"] = layer_count("conv", res)
        count = attention_flops(L, L, c, c, c, c, c, heads)
        layers[f"{name}.self_attn"] = layer_count(
            "attention", T * count["flops"], T * count["softmax"]
        )
        if spec.optimized_cross_attention:
            count = optimized_cross_attention_flops(c_ctx, c, c)
            layers[f"{name}.cross_attn"] = layer_count("attention", count["flops"], 0)
        else:
            count = attention_flops(L, 1, c, c_ctx, c, c, c, heads)
            layers[f"{name}.cross_attn"] = layer_count(
                "attention", T * count["flops"], T * count["softmax"]
            )
        for index in temporal:
            if spec.temporal_block == "temporal_attention":
                count = attention_flops(T, T, c, c, c, c, c, heads)
                entry = layer_count("attention", L * count["flops"], L * count["softmax"])
            else:
                entry = layer_count("temporal_conv", 2 * conv_flops(3, 1, c, c, positions))
            layers[f"{name}.temporal{index}"] = entry
    return layers


def _net_layers(net, frames):
    spec = net.spec
    layers = {}
    for block, (name, _, _, (T, H, W), _) in zip(net.blocks, block_plan(spec, frames)):
        layers[f"{name}.res"] = block.res.count(T, H, W)
        counts = block.transformer.counts(T, H, W, optimized=spec.optimized_cross_attention)
        for key, value in counts.items():
            layers[f"{name}.{key}"] = value
        for index in block.temporal:
            temporal = net.temporal[index]
            if temporal is not None:
                layers[f"{name}.temporal{index}"] = temporal.count(T, H, W)
    return layers


def count_flops(net_or_spec, frames=None):
    """Counted multiply-adds of a toy UNet or of a spec.

    Args:
        - net_or_spec (ToyUNet, ToyUNetSpec): Network (with its funnels and pruned
          blocks) or layout only.
        - frames (int): Number of frames, spec.frames if None.

    Returns:
        - count (dict): `total` and `softmax` integers, `layers` per layer,
          `blocks` per block and `temporal` per temporal block index.

    """
    if isinstance(net_or_spec, ToyUNetSpec):
        spec = net_or_spec
        layers = _spec_layers(spec, frames)
    else:
        spec = net_or_spec.spec
        layers = _net_layers(net_or_spec, frames)
    frames = frames or spec.frames
    c0, positions = spec.stage_width(0), frames * spec.height * spec.width
    layers["conv_in"] = layer_count("conv", conv_flops(3, 3, spec.in_channels, c0, positions))
    layers["conv_out"] = layer_count(
        "conv", conv_flops(3, 3, c0, spec.in_channels, positions)
    )

    blocks, temporal = {}, {}
    for name, entry in layers.items():
        block = name.split(".")[0]
        agg = blocks.setdefault(block, {"flops": 0, "softmax": 0})
        agg["flops"] += entry["flops"]
        agg["softmax"] += entry["softmax"]
        if ".temporal" in name:
            temporal[int(name.rsplit("temporal", 1)[1])] = entry["flops"]
    return {
        "total": int(sum(entry["flops"] for entry in layers.values())),
        "softmax": int(sum(entry["softmax"] for entry in layers.values())),
        "layers": dict(sorted(layers.items())),
        "blocks": dict(sorted(blocks.items())),
        "temporal": dict(sorted(temporal.items())),
    }


def reduction(base, other):
    """Relative reduction 1 - other/base of two totals."""
    return float(1.0 - other / base)


def stacked_flops(spec=None, rate=0.7, fun_factor=0.5):
    """Cumulative counted FLOPs of the stacked optimizations.

    Stages: base, + optimized cross-attention, + temporal multiscaling,
    + temporal block pruning at `rate`, + attention funnels at `fun_factor`.
    Pruning keeps the blocks with the largest 1 - alpha.

    Returns:
        - rows (list): Dicts with `stage`, `flops`, `softmax` and `reduction`.

    """
    spec = (spec or ToyUNetSpec()).replace(multiscaling="none", optimized_cross_attention=False)
    stages = []
    net = build(spec)
    stages.append(("base", net))
    net = build(spec.replace(optimized_cross_attention=True))
    stages.append(("+optimized_cross_attention", net))
    net = build(spec.replace(optimized_cross_attention=True, multiscaling="temporal"))
    stages.append(("+temporal_multiscaling", net))
    q = importance_from_alpha(net.alpha).q
    net = prune(net, q, budget_from_rate(rate, len(net.temporal)))
    stages.append((f"+pruning_{int(round(rate * 100))}", net))
    net = inject_funnels(net, fun_factor, targets=("qk", "vo"))
    stages.append((f"+funnels_{fun_factor}", net))

    rows, base = [], None
    for stage, stage_net in stages:
        count = count_flops(stage_net)
        base = base or count["total"]
        rows.append(
            {
                "stage": stage,
                "flops": count["total"],
                "softmax": count["softmax"],
                "reduction": reduction(base, count["total"]),
            }
        )
    return rows


def multiscaling_reductions(spec=None):
    """Counted FLOPs reductions of temporal, spatial and combined multiscaling.

    Works from the layout only, so large presets never allocate weights.
    """
    spec = spec or ToyUNetSpec()
    base = count_flops(spec.replace(multiscaling="none"))["total"]
    out = {}
    for variant in ("temporal", "spatial", "both"):
        total = count_flops(spec.replace(multiscaling=variant))["total"]
        out[variant] = reduction(base, total)
    for variant, reference in REFERENCE_REDUCTIONS.items():
        logger.info(
            f"{variant} multiscaling reduction {out[variant]:.3f} "
            f"(full-size model reference {reference:.2f})"
        )
    if np.isclose(out["temporal"], 0.0):
        warnings.warn("Temporal multiscaling does not reduce the counted FLOPs")
    return out
