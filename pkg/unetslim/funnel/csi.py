"""Coupled singular initialization (CSI) of channel funnels.

The non-linearity between the two layers is ignored and the funnels are chosen so
that the effective product of the funneled pair is the best rank-c' approximation
of the original product: with left @ right = U S V^T,

    F2 = left^+ U_c' S_c'^1/2,    F1 = S_c'^1/2 V_c'^T right^+

which gives left F2 F1 right = U_c' S_c' V_c'^T whenever left has full column rank
and right has full row rank.

"""
import logging

import numpy as np
from scipy.linalg import block_diag

from unetslim.core.linalg import svd, pinv, truncation_residual
from unetslim.core.utils import fun_width
from unetslim.core.exceptions import ArgumentError
from unetslim.funnel.pairs import FunnelPair, AttentionProjections

logger = logging.getLogger(__name__)


def _check_fun_factor(fun_factor):
    if not 0 < fun_factor <= 1:
        raise ArgumentError(f"fun_factor must be in (0, 1], got {fun_factor}")


def coupled_singular_init(left, right, width):
    """Funnel matrices for an effective product `left @ right`.

    Args:
        - left (2darray): Matrix applied after the funnel expansion, a x c_inner.
        - right (2darray): Matrix applied before the funnel reduction, c_inner x b.
        - width (int): Reduced inner width c'.

    Returns:
        - F1 (2darray): c' x c_inner.
        - F2 (2darray): c_inner x c'.

    Note:
        - If c' exceeds min(a, b) the extra funnel channels are zero.

    """
    U, S, V = svd(left @ right)
    k = min(width, S.size)
    root = np.sqrt(S[:k])
    F2 = np.zeros((left.shape[1], width))
    F1 = np.zeros((width, right.shape[0]))
    F2[:, :k] = pinv(left) @ (U[:, :k] * root)
    F1[:k, :] = (root[:, None] * V[:, :k].T) @ pinv(right)
    return F1, F2


def csi_linear_pair(pair, fun_factor=0.5, target="linear"):
    """CSI funnel for two linear layers y = W2 sigma(W1 x).

    Args:
        - pair (LinearPair): Layer pair to adapt.
        - fun_factor (float): Ratio c'/c_inner in (0, 1].
        - target (str): Name recorded in the funnel.

    Returns:
        - funnel (FunnelPair): F1 (c' x c_inner), F2 (c_inner x c').

    """
    _check_fun_factor(fun_factor)
    width = fun_width(fun_factor, pair.c_inner)
    F1, F2 = coupled_singular_init(pair.W2, pair.W1, width)
    logger.debug(f"CSI linear funnel {target}: c_inner={pair.c_inner} -> {width}")
    return FunnelPair(F1=F1, F2=F2, fun_factor=fun_factor, target=target, kind="linear")


def csi_attention_qk(proj, fun_factor=0.5, target="qk"):
    """CSI funnel for the query/key bilinear map X Wq (X Wk)^T.

    The decomposed matrix is Wq Wk^T, and the funnels are
    Fq = Wq^+ U_c' S_c'^1/2 and Fk = Wk^+ V_c' S_c'^1/2.

    Args:
        - proj (AttentionProjections): Attention projections.
        - fun_factor (float): Ratio c'/c_inner in (0, 1].
        - target (str): Name recorded in the funnel.

    Returns:
        - funnel (FunnelPair): F2 = Fq (c_inner x c'), F1 = Fk^T (c' x c_inner).

    """
    _check_fun_factor(fun_factor)
    width = fun_width(fun_factor, proj.c_inner)
    F1, F2 = coupled_singular_init(proj.Wq, proj.Wk.T, width)
    return FunnelPair(F1=F1, F2=F2, fun_factor=fun_factor, target=target, kind="qk")


def csi_value_output(proj, fun_factor=0.5, target="vo"):
    """CSI funnel for the value/output projections.

    No non-linearity separates Wv and Wo, so this is the linear-pair CSI on
    W1 = Wv^T, W2 = Wo^T, exact whenever c' >= rank(Wv Wo).

    Args:
        - proj (AttentionProjections): Attention projections.
        - fun_factor (float): Ratio c'/c_inner in (0, 1].
        - target (str): Name recorded in the funnel.

    Returns:
        - funnel (FunnelPair): Column-convention funnel, row-form Wv F1^T F2^T Wo.

    """
    funnel = csi_linear_pair(proj.value_output_pair(), fun_factor, target=target)
    return FunnelPair(
        F1=funnel.F1, F2=funnel.F2, fun_factor=fun_factor, target=target, kind="vo"
    )


def csi_conv_pair(pair, fun_factor=0.5, target="conv"):
    """CSI funnel for two convolutions within a residual block.

    The first kernel is viewed as a matrix A (c_mid x Kh*Kw*c_in) acting on flattened
    input patches, the second as B (Kh*Kw*c_out x c_mid) acting on each pixel, and
    CSI is applied to B A. F1 and F2 act as 1x1 channel mixes around the nonlinearity.

    Args:
        - pair (ConvPair): Convolution pair to adapt.
        - fun_factor (float): Ratio c'/c_mid in (0, 1].
        - target (str): Name recorded in the funnel.

    Returns:
        - funnel (FunnelPair): F1 (c' x c_mid), F2 (c_mid x c').

    """
    _check_fun_factor(fun_factor)
    width = fun_width(fun_factor, pair.c_mid)
    F1, F2 = coupled_singular_init(
        pair.output_collection_matrix(), pair.input_patch_matrix(), width
    )
    return FunnelPair(F1=F1, F2=F2, fun_factor=fun_factor, target=target, kind="conv")


def csi_heads(proj, heads, fun_factor=0.5, kind="qk", target=""):
    """Per-head CSI funnels assembled block-diagonally so heads are never mixed.

    Args:
        - proj (AttentionProjections): Projections whose inner width splits in `heads`.
        - heads (int): Number of attention heads.
        - fun_factor (float): Ratio c'/d applied to each head width d.
        - kind (str): `qk` or `vo`.
        - target (str): Name recorded in the funnel.

    Returns:
        - funnel (FunnelPair): Block-diagonal funnel, width = heads * c'_head.

    """
    dq = proj.Wq.shape[1] // heads
    dv = proj.Wv.shape[1] // heads
    blocks = []
    for head in range(heads):
        sq = slice(head * dq, (head + 1) * dq)
        sv = slice(head * dv, (head + 1) * dv)
        sub = AttentionProjections(
            Wq=proj.Wq[:, sq], Wk=proj.Wk[:, sq], Wv=proj.Wv[:, sv], Wo=proj.Wo[sv, :]
        )
        if kind == "qk":
            blocks.append(csi_attention_qk(sub, fun_factor))
        elif kind == "vo":
            blocks.append(csi_value_output(sub, fun_factor))
        else:
            raise ArgumentError(f"kind must be `qk` or `vo`, got {kind}")
    F1 = block_diag(*[b.F1 for b in blocks])
    F2 = block_diag(*[b.F2 for b in blocks])
    return FunnelPair(
        F1=F1,
        F2=F2,
        fun_factor=fun_factor,
        target=target,
        kind=kind,
        meta={"heads": heads},
    )


def funnel_factors(layer, kind):
    """Matrices (left, right) whose product a funnel of `kind` approximates.

    The funneled effective matrix is always left @ F2 @ F1 @ right.
    """
    if kind == "linear":
        return layer.W2, layer.W1
    elif kind == "conv":
        return layer.output_collection_matrix(), layer.input_patch_matrix()
    proj = getattr(layer, "projections", layer)
    if kind == "qk":
        return proj.Wq, proj.Wk.T
    elif kind == "vo":
        return proj.Wo.T, proj.Wv.T
    raise ArgumentError(f"Unknown funnel kind {kind}")


def effective_residual(layer, funnel):
    """Residual of the funneled effective matrix and its truncated-SVD oracle.

    Per-head funnels are compared head by head and the squared residuals summed.

    Args:
        - layer (LinearPair, ConvPair, AttentionProjections, CrossAttnLayer): Adapted layer.
        - funnel (FunnelPair): Funnel fitted on the layer.

    Returns:
        - residual (float): ||left F2 F1 right - left right||_F.
        - oracle (float): Best rank-c' residual sqrt(sum_{i>c'} S_i^2) of left right.

    """
    left, right = funnel_factors(layer, funnel.kind)
    heads = funnel.meta.get("heads", 1)
    d, w = funnel.c_inner // heads, funnel.width // heads
    residual2, oracle2 = 0.0, 0.0
    for head in range(heads):
        inner, outer = slice(head * d, (head + 1) * d), slice(head * w, (head + 1) * w)
        product = left[:, inner] @ right[inner, :]
        effective = left[:, inner] @ funnel.F2[inner, outer] @ funnel.F1[outer, inner]
        effective = effective @ right[inner, :]
        residual2 += float(np.sum((effective - product) ** 2))
        oracle2 += truncation_residual(svd(product).S, w) ** 2
    return float(np.sqrt(residual2)), float(np.sqrt(oracle2))
