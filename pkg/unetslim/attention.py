"""Multi-head attention and the single-token cross-attention rewrite.

With a context made of a single token every softmax row has one logit, so all
attention weights are exactly one and the output is the projected context value
broadcast over the query positions:

    softmax(Q K^T / sqrt(d)) V Wo = 1 (c Wv Wo)

The query and key projections and the softmax can therefore be removed.

"""
import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import softmax

from unetslim.core.utils import as_matrix, as_generator, spawn_seeds
from unetslim.core.exceptions import ArgumentError, ContractError, ShapeError
from unetslim.funnel.pairs import AttentionProjections

logger = logging.getLogger(__name__)


REWRITE_TOL = 1e-10


@dataclass(frozen=True)
class CrossAttnLayer:
    """Bias-free multi-head cross-attention.

    Args:
        - Wq (2darray): Query projection, c_in x c_head.
        - Wk (2darray): Key projection, c_ctx x c_head.
        - Wv (2darray): Value projection, c_ctx x c_v.
        - Wo (2darray): Output projection, c_v x c_out.
        - heads (int): Number of heads, dividing c_head and c_v.
        - scale (float): Logit scale, 1/sqrt(c_head/heads) if not provided.

    """

    Wq: np.ndarray
    Wk: np.ndarray
    Wv: np.ndarray
    Wo: np.ndarray
    heads: int = 1
    scale: float = None

    def __post_init__(self):
        proj = AttentionProjections(Wq=self.Wq, Wk=self.Wk, Wv=self.Wv, Wo=self.Wo)
        for name in ("Wq", "Wk", "Wv", "Wo"):
            object.__setattr__(self, name, getattr(proj, name))
        if self.heads < 1 or self.Wq.shape[1] % self.heads or self.Wv.shape[1] % self.heads:
            raise ShapeError(
                f"Inner widths {self.Wq.shape[1]}, {self.Wv.shape[1]} are not divisible "
                f"by {self.heads} heads"
            )
        if self.scale is None:
            object.__setattr__(self, "scale", 1.0 / np.sqrt(self.Wq.shape[1] // self.heads))

    @property
    def projections(self):
        return AttentionProjections(Wq=self.Wq, Wk=self.Wk, Wv=self.Wv, Wo=self.Wo)

    @property
    def c_in(self):
        return self.Wq.shape[0]

    @property
    def c_ctx(self):
        return self.Wk.shape[0]

    @property
    def c_head(self):
        return self.Wq.shape[1]

    @property
    def c_v(self):
        return self.Wv.shape[1]

    @property
    def c_out(self):
        return self.Wo.shape[1]

    def replace(self, proj):
        """New layer with the projections of `proj`, keeping heads and scale."""
        return CrossAttnLayer(
            Wq=proj.Wq, Wk=proj.Wk, Wv=proj.Wv, Wo=proj.Wo, heads=self.heads, scale=self.scale
        )


def random_cross_attn_layer(
    seed=None, c_in=8, c_ctx=6, c_head=8, c_out=8, heads=2, c_v=None
):
    """Layer with N(0, 1/fan_in) weights."""
    rng = as_generator(seed)
    c_v = c_head if c_v is None else c_v

    def draw(fan_in, fan_out):
        return rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_in, fan_out))

    return CrossAttnLayer(
        Wq=draw(c_in, c_head),
        Wk=draw(c_ctx, c_head),
        Wv=draw(c_ctx, c_v),
        Wo=draw(c_v, c_out),
        heads=heads,
    )


def multi_head_attention(Q, K, V, heads=1, scale=None, return_weights=False):
    """softmax(Q K^T * scale) V computed independently per head.

    Args:
        - Q (ndarray): Queries (..., L, c_qk).
        - K (ndarray): Keys (..., m, c_qk).
        - V (ndarray): Values (..., m, c_v).
        - heads (int): Number of heads splitting c_qk and c_v.
        - scale (float): Logit scale, 1/sqrt(c_qk/heads) if None.
        - return_weights (bool): Also return the attention weights (..., heads, L, m).

    Returns:
        - out (ndarray): (..., L, c_v), heads concatenated along the last axis.

    """
    *batch, L, c_qk = Q.shape
    m, c_v = V.shape[-2:]
    if scale is None:
        scale = 1.0 / np.sqrt(c_qk // heads)

    def split(x):
        return np.moveaxis(x.reshape(*x.shape[:-1], heads, -1), -2, -3)

    logits = np.einsum("...hld,...hmd->...hlm", split(Q), split(K)) * scale
    weights = softmax(logits, axis=-1)
    out = np.einsum("...hlm,...hmd->...hld", weights, split(V))
    out = np.moveaxis(out, -3, -2).reshape(*batch, L, c_v)
    if return_weights:
        return out, weights
    return out


def _check_inputs(layer, X, context):
    X = as_matrix(X, name="X")
    context = as_matrix(context, name="context")
    if X.shape[1] != layer.c_in:
        raise ShapeError(f"X has {X.shape[1]} channels, layer expects {layer.c_in}")
    if context.shape[1] != layer.c_ctx:
        raise ShapeError(
            f"context has {context.shape[1]} channels, layer expects {layer.c_ctx}"
        )
    if context.shape[0] < 1:
        raise ShapeError("context must hold at least one token")
    return X, context


def full_cross_attention(layer, X, context, return_weights=False):
    """Reference multi-head cross-attention.

    Args:
        - layer (CrossAttnLayer): Projections.
        - X (2darray): Query tokens, L x c_in.
        - context (2darray): Context tokens, m x c_ctx.
        - return_weights (bool): Also return attention weights (heads, L, m).

    Returns:
        - out (2darray): L x c_out.

    """
    X, context = _check_inputs(layer, X, context)
    out, weights = multi_head_attention(
        X @ layer.Wq,
        context @ layer.Wk,
        context @ layer.Wv,
        heads=layer.heads,
        scale=layer.scale,
        return_weights=True,
    )
    out = out @ layer.Wo
    if return_weights:
        return out, weights
    return out


def optimized_cross_attention(layer, X, context):
    """Cross-attention for a single context token without Q, K nor softmax.

    Args:
        - layer (CrossAttnLayer): Projections, Wq and Wk are not used.
        - X (2darray): Query tokens, L x c_in, only their count matters.
        - context (2darray): Exactly one context token, 1 x c_ctx.

    Returns:
        - out (2darray): L x c_out, every row equal to context Wv Wo.

    """
    X, context = _check_inputs(layer, X, context)
    if context.shape[0] != 1:
        raise ContractError(
            f"The rewrite requires a single context token, got {context.shape[0]}"
        )
    y = (context @ layer.Wv) @ layer.Wo
    return np.repeat(y, X.shape[0], axis=0)


def attention_flops(L, m, c_in, c_ctx, c_qk, c_v, c_out, heads=1):
    """Multiply-add count of a bias-free attention layer.

    Args:
        - L (int): Query tokens.
        - m (int): Key/value tokens.
        - c_in, c_ctx (int): Query and context widths.
        - c_qk, c_v (int): Query/key and value inner widths.
        - c_out (int): Output width.
        - heads (int): Number of heads.

    Returns:
        - count (dict): `flops` and `softmax` (number of softmax rows).

    """
    flops = (
        2 * L * c_in * c_qk
        + 2 * m * c_ctx * c_qk
        + 2 * m * c_ctx * c_v
        + 2 * L * m * c_qk
        + 2 * L * m * c_v
        + 2 * L * c_v * c_out
    )
    return {"flops": int(flops), "softmax": int(heads * L)}


def optimized_cross_attention_flops(c_ctx, c_v, c_out):
    """Multiply-add count of the single-token rewrite, computed once and broadcast."""
    return {"flops": int(2 * c_ctx * c_v + 2 * c_v * c_out), "softmax": 0}


def cross_attention_flops(layer, L, optimized=False):
    """Counted cost of `layer` for L query tokens and a single context token."""
    if optimized:
        return optimized_cross_attention_flops(layer.c_ctx, layer.c_v, layer.c_out)
    return attention_flops(
        L, 1, layer.c_in, layer.c_ctx, layer.c_head, layer.c_v, layer.c_out, layer.heads
    )


def rewrite_equivalence_check(layer=None, trials=100, seed=None, L=16, perturb=0.0):
    """Paired evaluations of the reference and the optimized cross-attention.

    Args:
        - layer (CrossAttnLayer): Layer to check, a new random layer per trial if None.
        - trials (int): Number of paired evaluations.
        - seed (int): Seed of the random layers and inputs.
        - L (int): Number of query tokens.
        - perturb (float): Standard deviation of a perturbation added to Wv in the
          optimized path only, for fault injection.

    Returns:
        - report (dict): Deviation, FLOPs and softmax counts and the pass flag.

    """
    if trials < 1:
        raise ArgumentError(f"trials must be >= 1, got {trials}")
    deviation = 0.0
    flops_full = flops_optimized = 0
    softmax_full = softmax_optimized = 0
    for child in spawn_seeds(seed, trials):
        rng = as_generator(child)
        trial_layer = layer
        if trial_layer is None:
            heads = int(rng.integers(1, 4))
            trial_layer = random_cross_attn_layer(
                rng,
                c_in=int(rng.integers(1, 17)),
                c_ctx=int(rng.integers(1, 17)),
                c_head=heads * int(rng.integers(1, 5)),
                c_out=int(rng.integers(1, 17)),
                heads=heads,
            )
        X = rng.standard_normal((L, trial_layer.c_in))
        context = rng.standard_normal((1, trial_layer.c_ctx))
        reference = full_cross_attention(trial_layer, X, context)
        candidate = trial_layer
        if perturb:
            Wv = trial_layer.Wv + perturb * rng.standard_normal(trial_layer.Wv.shape)
            candidate = trial_layer.replace(
                AttentionProjections(Wq=trial_layer.Wq, Wk=trial_layer.Wk, Wv=Wv, Wo=trial_layer.Wo)
            )
        optimized = optimized_cross_attention(candidate, X, context)
        deviation = max(deviation, float(np.max(np.abs(reference - optimized))))
        full = cross_attention_flops(trial_layer, L)
        opt = cross_attention_flops(trial_layer, L, optimized=True)
        flops_full += full["flops"]
        flops_optimized += opt["flops"]
        softmax_full += full["softmax"]
        softmax_optimized += opt["softmax"]
    passed = deviation <= REWRITE_TOL and flops_optimized < flops_full and softmax_optimized == 0
    logger.info(f"Cross-attention rewrite: max deviation {deviation}, passed {passed}")
    return {
        "trials": int(trials),
        "max_abs_deviation": deviation,
        "flops_full": int(flops_full),
        "flops_optimized": int(flops_optimized),
        "flops_delta": int(flops_full - flops_optimized),
        "softmax_full": int(softmax_full),
        "softmax_optimized": int(softmax_optimized),
        "passed": bool(passed),
    }
