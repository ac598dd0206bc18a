"""Fold funnel matrices into their neighbouring layers for inference.

Merging is plain re-association of matrix products: the merged pair has inner
width c' and evaluates the funneled network up to floating point rounding.
"""
import numpy as np

from unetslim.core.exceptions import ShapeError
from unetslim.funnel.pairs import LinearPair, ConvPair, AttentionProjections


def _check_inner(funnel, c_inner, what):
    if funnel.c_inner != c_inner:
        raise ShapeError(
            f"Funnel '{funnel.target}' has c_inner={funnel.c_inner} but {what} "
            f"has inner width {c_inner}"
        )


def merge_linear(pair, funnel):
    """Merge a funnel into a linear pair.

    Args:
        - pair (LinearPair): Pair with W1 (c_inner x c_in) and W2 (c_out x c_inner).
        - funnel (FunnelPair): Funnel fitted on this pair.

    Returns:
        - merged (LinearPair): W1' = F1 W1 (c' x c_in), W2' = W2 F2 (c_out x c').

    """
    _check_inner(funnel, pair.c_inner, "linear pair")
    return LinearPair(
        W1=funnel.F1 @ pair.W1, W2=pair.W2 @ funnel.F2, nonlinearity=pair.nonlinearity
    )


def merge_conv(pair, funnel):
    """Merge a funnel into a convolution pair.

    Args:
        - pair (ConvPair): Pair with K1 (Kh x Kw x c_mid x c_in), K2 (Kh x Kw x c_out x c_mid).
        - funnel (FunnelPair): Funnel fitted on this pair.

    Returns:
        - merged (ConvPair): K1' (Kh x Kw x c' x c_in) and K2' (Kh x Kw x c_out x c').

    """
    _check_inner(funnel, pair.c_mid, "conv pair")
    K1 = np.einsum("aj,yxji->yxai", funnel.F1, pair.K1)
    K2 = np.einsum("yxom,mj->yxoj", pair.K2, funnel.F2)
    return ConvPair(K1=K1, K2=K2, nonlinearity=pair.nonlinearity)


def merge_attention_qk(proj, funnel):
    """Fold a query/key funnel, Wq' = Wq Fq and Wk' = Wk Fk."""
    _check_inner(funnel, proj.Wq.shape[1], "query/key projections")
    return AttentionProjections(
        Wq=proj.Wq @ funnel.Fq, Wk=proj.Wk @ funnel.Fk, Wv=proj.Wv, Wo=proj.Wo
    )


def merge_value_output(proj, funnel):
    """Fold a value/output funnel, Wv' = Wv F1^T and Wo' = F2^T Wo."""
    _check_inner(funnel, proj.Wv.shape[1], "value/output projections")
    return AttentionProjections(
        Wq=proj.Wq, Wk=proj.Wk, Wv=proj.Wv @ funnel.F1.T, Wo=funnel.F2.T @ proj.Wo
    )


def merge_funnel(layer, funnel):
    """Dispatch to the merge matching the funnel kind."""
    if funnel.kind == "linear":
        return merge_linear(layer, funnel)
    elif funnel.kind == "conv":
        return merge_conv(layer, funnel)
    elif funnel.kind == "qk":
        return merge_attention_qk(layer, funnel)
    elif funnel.kind == "vo":
        return merge_value_output(layer, funnel)
    raise ValueError(f"Unknown funnel kind {funnel.kind}")
