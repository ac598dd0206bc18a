"""Width-reduction baselines compared against CSI funnels.

- Truncated singular decomposition of an individual layer into a low-rank product.
- Funnels with He (Kaiming) normal initialization.

Reference:
    - He, K., Zhang, X., Ren, S., Sun, J. (2015). Delving deep into rectifiers:
      surpassing human-level performance on ImageNet classification. ICCV.

"""
import numpy as np

from unetslim.core.linalg import svd
from unetslim.core.utils import as_matrix, as_generator
from unetslim.core.exceptions import ArgumentError, ShapeError
from unetslim.funnel.pairs import FunnelPair


def truncated_layer_baseline(W, r):
    """Replace one layer by the low-rank product of two thinner layers.

    Args:
        - W (2darray): Layer weights, c_out x c_in.
        - r (float): Rank reduction rate in (0, 1].

    Returns:
        - W1 (2darray): rc x c_in.
        - W2 (2darray): c_out x rc, with W2 W1 the best rank-rc approximation of W.

    Note:
        - rc = max(1, round(r * min(c_in, c_out))).
        - For square layers the parameter count only drops if r < 0.5.

    """
    W = as_matrix(W, name="W")
    if not 0 < r <= 1:
        raise ArgumentError(f"r must be in (0, 1], got {r}")
    rc = max(1, int(np.floor(r * min(W.shape) + 0.5)))
    U, S, V = svd(W)
    root = np.sqrt(S[:rc])
    W1 = root[:, None] * V[:, :rc].T
    W2 = U[:, :rc] * root
    return W1, W2


def he_init_baseline(shape_F1, shape_F2, seed=None, target="", kind="linear"):
    """Funnel matrices drawn i.i.d. from N(0, 2 / fan_in).

    Args:
        - shape_F1 (tuple): (c', c_inner).
        - shape_F2 (tuple): (c_inner, c').
        - seed (int, SeedSequence, Generator): Random state.
        - target (str): Name recorded in the funnel.
        - kind (str): Funnel kind.

    Returns:
        - funnel (FunnelPair): He-initialized funnel, fan_in is the column count.

    """
    shape_F1, shape_F2 = tuple(shape_F1), tuple(shape_F2)
    if len(shape_F1) != 2 or shape_F1[::-1] != shape_F2 or min(shape_F1) < 1:
        raise ShapeError(f"Invalid funnel shapes F1{shape_F1}, F2{shape_F2}")
    rng = as_generator(seed)
    F1 = rng.normal(0.0, np.sqrt(2.0 / shape_F1[1]), size=shape_F1)
    F2 = rng.normal(0.0, np.sqrt(2.0 / shape_F2[1]), size=shape_F2)
    fun_factor = shape_F1[0] / shape_F1[1]
    return FunnelPair(
        F1=F1, F2=F2, fun_factor=min(fun_factor, 1.0), target=target, kind=kind
    )


def count_params(*matrices):
    """Total number of weights in a set of arrays."""
    return int(sum(np.size(m) for m in matrices))
