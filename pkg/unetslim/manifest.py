"""Layer and funnel bundles stored as a json manifest plus one tensor file per weight.

Layers manifest:

    {"kind": "layers", "version": 1,
     "layers": {"<name>": {"type": "linear", "nonlinearity": "relu",
                           "tensors": {"W1": "<name>.W1.mvdt", "W2": "<name>.W2.mvdt"}}}}

Layer types are `linear` (W1, W2), `conv` (K1, K2) and `attention` (Wq, Wk, Wv, Wo,
with `heads` and the logit `scale`). Funnels manifest:

    {"kind": "funnels", "version": 1,
     "funnels": {"<name>": {"target": "<layer name>", "type": "qk", "fun_factor": 0.5,
                            "heads": 2, "tensors": {"F1": "...", "F2": "..."}}}}

Tensor paths are relative to the manifest directory, files ending in `.json`
are read as json tensors and anything else as MVDT.

"""
import os
import json
import logging

import numpy as np
from scipy.linalg import block_diag

from unetslim.core.attributes import attrs
from unetslim.core.utils import to_tensor, fun_width, spawn_seeds
from unetslim.core.exceptions import ArgumentError, TensorFileError
from unetslim.attention import CrossAttnLayer
from unetslim.funnel.pairs import LinearPair, ConvPair, FunnelPair
from unetslim.funnel.csi import csi_linear_pair, csi_conv_pair, csi_heads
from unetslim.funnel.merge import merge_funnel
from unetslim.funnel.baselines import he_init_baseline
from unetslim.input.mvdt import read_mvdt
from unetslim.input.json import read_json
from unetslim.toyunet.layers import Attention

logger = logging.getLogger(__name__)


VERSION = 1
LAYER_TENSORS = {
    "linear": ("W1", "W2"),
    "conv": ("K1", "K2"),
    "attention": ("Wq", "Wk", "Wv", "Wo"),
}
FUNNEL_TYPES = ("linear", "conv", "qk", "vo")
INITS = ("csi", "he")

_MAT = (attrs.OUTNAME, attrs.INNAME)
_KERNEL = (attrs.KHNAME, attrs.KWNAME, attrs.OUTNAME, attrs.INNAME)
_PROJ = (attrs.INNAME, attrs.OUTNAME)
DIMS = {
    "W1": _MAT, "W2": _MAT, "F1": _MAT, "F2": _MAT,
    "K1": _KERNEL, "K2": _KERNEL,
    "Wq": _PROJ, "Wk": _PROJ, "Wv": _PROJ, "Wo": _PROJ,
}


def read_tensor(filename, name=None):
    """Tensor from a MVDT or json file, chosen by the file extension."""
    dims = DIMS.get(name)
    if str(filename).endswith(".json"):
        darr = read_json(filename, name=name)
    else:
        darr = read_mvdt(filename, name=name)
    if dims is not None and darr.ndim == len(dims):
        darr = darr.rename(dict(zip(darr.dims, dims)))
    return darr


def _load_manifest(filename, kind):
    try:
        with open(filename) as fp:
            manifest = json.load(fp)
    except FileNotFoundError as exc:
        raise TensorFileError("Manifest not found", path=filename) from exc
    except json.JSONDecodeError as exc:
        raise TensorFileError(f"Invalid manifest json ({exc})", path=filename) from exc
    if not isinstance(manifest, dict) or manifest.get("kind") != kind or kind not in manifest:
        raise TensorFileError(f"Not a {kind} manifest", path=filename)
    return manifest


def _tensors(entry, names, dirname, filename):
    try:
        paths = entry["tensors"]
        return {
            name: read_tensor(os.path.join(dirname, paths[name]), name).values for name in names
        }
    except (KeyError, TypeError) as exc:
        raise TensorFileError(f"Manifest entry misses tensor {exc}", path=filename) from exc


def read_layers(filename):
    """Read a layers manifest.

    Args:
        - filename (str): Manifest json file.

    Returns:
        - layers (dict): LinearPair, ConvPair or CrossAttnLayer by name, sorted by name.

    """
    manifest = _load_manifest(filename, "layers")
    dirname = os.path.dirname(os.path.abspath(filename))
    layers = {}
    for name, entry in sorted(manifest["layers"].items()):
        kind = entry.get("type")
        if kind not in LAYER_TENSORS:
            raise TensorFileError(f"Layer {name} has unknown type {kind}", path=filename)
        tensors = _tensors(entry, LAYER_TENSORS[kind], dirname, filename)
        if kind == "linear":
            layers[name] = LinearPair(nonlinearity=entry.get("nonlinearity", "identity"), **tensors)
        elif kind == "conv":
            layers[name] = ConvPair(nonlinearity=entry.get("nonlinearity", "silu"), **tensors)
        else:
            scale = entry.get("scale")
            layers[name] = CrossAttnLayer(
                heads=int(entry.get("heads", 1)),
                scale=None if scale is None else float(scale),
                **tensors,
            )
    logger.info(f"Read {len(layers)} layers from {filename}")
    return layers


def layer_type(layer):
    """Manifest type of a layer object."""
    if isinstance(layer, LinearPair):
        return "linear"
    elif isinstance(layer, ConvPair):
        return "conv"
    elif isinstance(layer, CrossAttnLayer):
        return "attention"
    raise ArgumentError(f"Cannot store layer of type {type(layer).__name__}")


def _write_tensors(dirname, prefix, tensors):
    paths = {}
    for name, values in tensors.items():
        path = f"{prefix}.{name}.mvdt"
        to_tensor(values, dims=DIMS[name], name=name).tensor.to_mvdt(os.path.join(dirname, path))
        paths[name] = path
    return paths


def _dump(manifest, filename):
    with open(filename, "w") as fp:
        json.dump(manifest, fp, sort_keys=True, indent=2)


def write_layers(layers, filename):
    """Write layers as a manifest plus MVDT tensors next to it.

    Args:
        - layers (dict): Layer objects by name.
        - filename (str): Manifest json file to create.

    """
    dirname = os.path.dirname(os.path.abspath(filename))
    os.makedirs(dirname, exist_ok=True)
    entries = {}
    for name, layer in sorted(layers.items()):
        kind = layer_type(layer)
        tensors = {key: getattr(layer, key) for key in LAYER_TENSORS[kind]}
        entry = {"type": kind, "tensors": _write_tensors(dirname, name, tensors)}
        if kind == "attention":
            entry["heads"] = layer.heads
            entry["scale"] = float(layer.scale)
        else:
            entry["nonlinearity"] = layer.nonlinearity
        entries[name] = entry
    _dump({"kind": "layers", "version": VERSION, "layers": entries}, filename)


def read_funnels(filename):
    """Read a funnels manifest.

    Returns:
        - funnels (dict): FunnelPair by name, sorted by name.

    """
    manifest = _load_manifest(filename, "funnels")
    dirname = os.path.dirname(os.path.abspath(filename))
    funnels = {}
    for name, entry in sorted(manifest["funnels"].items()):
        kind = entry.get("type")
        if kind not in FUNNEL_TYPES or "target" not in entry:
            raise TensorFileError(f"Funnel {name} needs a target and a valid type", path=filename)
        tensors = _tensors(entry, ("F1", "F2"), dirname, filename)
        funnels[name] = FunnelPair(
            fun_factor=float(entry.get("fun_factor", 1.0)),
            target=entry["target"],
            kind=kind,
            meta={"heads": int(entry.get("heads", 1))},
            **tensors,
        )
    return funnels


def write_funnels(funnels, filename):
    """Write funnels as a manifest plus MVDT tensors next to it."""
    dirname = os.path.dirname(os.path.abspath(filename))
    os.makedirs(dirname, exist_ok=True)
    entries = {}
    for name, funnel in sorted(funnels.items()):
        entries[name] = {
            "target": funnel.target,
            "type": funnel.kind,
            "fun_factor": funnel.fun_factor,
            "heads": funnel.meta.get("heads", 1),
            "tensors": _write_tensors(
                dirname, f"funnel.{name}", {"F1": funnel.F1, "F2": funnel.F2}
            ),
        }
    _dump({"kind": "funnels", "version": VERSION, "funnels": entries}, filename)


def _he_funnel(c_inner, fun_factor, seed, target, kind, heads=1):
    d = c_inner // heads
    width = fun_width(fun_factor, d)
    blocks = [
        he_init_baseline((width, d), (d, width), child, target=target, kind=kind)
        for child in seed.spawn(heads)
    ]
    return FunnelPair(
        F1=block_diag(*[b.F1 for b in blocks]),
        F2=block_diag(*[b.F2 for b in blocks]),
        fun_factor=fun_factor,
        target=target,
        kind=kind,
        meta={"heads": heads},
    )


def fit_funnels(layers, fun_factor=0.5, init="csi", seed=None):
    """Funnels for every layer of a bundle.

    Attention layers get a `<name>.qk` and a `<name>.vo` funnel, per head.

    Args:
        - layers (dict): Layer objects by name.
        - fun_factor (float): Ratio c'/c_inner in (0, 1].
        - init (str): `csi` or `he`.
        - seed (int): Seed of the He initialization, one spawned child per funnel.

    Returns:
        - funnels (dict): FunnelPair by funnel name.

    """
    if init not in INITS:
        raise ArgumentError(f"init must be one of {INITS}, got {init}")
    if not 0 < fun_factor <= 1:
        raise ArgumentError(f"fun_factor must be in (0, 1], got {fun_factor}")
    seeds = iter(spawn_seeds(seed, 2 * len(layers)))
    funnels = {}
    for name, layer in sorted(layers.items()):
        kind = layer_type(layer)
        if kind == "attention":
            for sub, c_inner in (("qk", layer.c_head), ("vo", layer.c_v)):
                if init == "csi":
                    funnel = csi_heads(layer.projections, layer.heads, fun_factor, sub, target=name)
                else:
                    funnel = _he_funnel(
                        c_inner, fun_factor, next(seeds), name, sub, heads=layer.heads
                    )
                funnels[f"{name}.{sub}"] = funnel
        elif init == "he":
            c_inner = layer.c_inner if kind == "linear" else layer.c_mid
            funnels[name] = _he_funnel(c_inner, fun_factor, next(seeds), name, kind)
        elif kind == "linear":
            funnels[name] = csi_linear_pair(layer, fun_factor, target=name)
        else:
            funnels[name] = csi_conv_pair(layer, fun_factor, target=name)
    return funnels


def _check_targets(layers, funnels):
    for name, funnel in funnels.items():
        if funnel.target not in layers:
            raise ArgumentError(f"Funnel {name} targets unknown layer '{funnel.target}'")
        kind = layer_type(layers[funnel.target])
        allowed = ("qk", "vo") if kind == "attention" else (kind,)
        if funnel.kind not in allowed:
            raise ArgumentError(
                f"Funnel {name} of type {funnel.kind} cannot adapt {kind} layer {funnel.target}"
            )


def merge_layers(layers, funnels):
    """Fold funnels into the layers they target.

    Args:
        - layers (dict): Layer objects by name.
        - funnels (dict): FunnelPair by name.

    Returns:
        - merged (dict): Layers with funnels merged, untouched layers passed through.

    """
    _check_targets(layers, funnels)
    merged = dict(layers)
    for name, funnel in sorted(funnels.items()):
        layer = merged[funnel.target]
        if isinstance(layer, CrossAttnLayer):
            merged[funnel.target] = layer.replace(merge_funnel(layer.projections, funnel))
        else:
            merged[funnel.target] = merge_funnel(layer, funnel)
        logger.debug(f"Merged funnel {name} into {funnel.target}")
    return merged


def _by_target(funnels):
    grouped = {}
    for funnel in funnels.values():
        grouped.setdefault(funnel.target, {})[funnel.kind] = funnel
    return grouped


def _forward_pair(layer, merged, grouped, rng, batch):
    """Funneled and merged outputs of one layer on the same random inputs."""
    if isinstance(layer, LinearPair):
        x = rng.standard_normal((layer.c_in, batch))
        return layer.forward(x, grouped.get("linear")), merged.forward(x)
    elif isinstance(layer, ConvPair):
        x = rng.standard_normal((batch, layer.K1.shape[3], 8, 8))
        return layer.forward(x, grouped.get("conv")), merged.forward(x)
    X = rng.standard_normal((batch, 6, layer.c_in))
    context = rng.standard_normal((batch, 4, layer.c_ctx))
    funneled = Attention(layer=layer, qk=grouped.get("qk"), vo=grouped.get("vo"))
    return funneled(X, context), Attention(layer=merged)(X, context)


def merge_equivalence(layers, funnels, merged, seed=None, batch=100):
    """Max-abs difference between funneled and merged forwards per funneled layer.

    Args:
        - layers (dict): Unmerged layers.
        - funnels (dict): Funnels applied.
        - merged (dict): Result of `merge_layers`.
        - seed (int): Seed of the random inputs, one spawned child per layer.
        - batch (int): Number of random inputs per layer.

    Returns:
        - diffs (dict): Max-abs output difference by layer name.

    """
    grouped = _by_target(funnels)
    names = sorted(grouped)
    diffs = {}
    for name, child in zip(names, spawn_seeds(seed, len(names))):
        funneled, out = _forward_pair(
            layers[name], merged[name], grouped[name], np.random.default_rng(child), batch
        )
        diffs[name] = float(np.max(np.abs(funneled - out)))
    return diffs


def layer_digests(layers):
    """Sha256 digest of every tensor of every layer."""
    digests = {}
    for name, layer in sorted(layers.items()):
        for key in LAYER_TENSORS[layer_type(layer)]:
            digests[f"{name}.{key}"] = to_tensor(getattr(layer, key)).tensor.digest()
    return digests
