"""Layer pairs that channel funnels adapt, and the funnel matrices themselves.

Orientation conventions:
    - LinearPair and ConvPair act on column vectors, y = W2 sigma(W1 x).
    - AttentionProjections act on row vectors, Q = X Wq, out = A X Wv Wo.

"""
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from unetslim.core.utils import as_array, as_matrix
from unetslim.core.exceptions import ArgumentError, ShapeError


NONLINEARITIES = ("identity", "relu", "silu")


def activation(x, nonlinearity="identity"):
    """Apply one of the supported elementwise nonlinearities."""
    if nonlinearity == "identity":
        return x
    elif nonlinearity == "relu":
        return np.maximum(x, 0.0)
    elif nonlinearity == "silu":
        return x * expit(x)
    raise ArgumentError(f"nonlinearity must be one of {NONLINEARITIES}, got {nonlinearity}")


@dataclass(frozen=True)
class LinearPair:
    """Two consecutive linear layers y = W2 sigma(W1 x).

    Args:
        - W1 (2darray): First layer weights, c_inner x c_in.
        - W2 (2darray): Second layer weights, c_out x c_inner.
        - nonlinearity (str): One of `identity`, `relu`, `silu`.

    """

    W1: np.ndarray
    W2: np.ndarray
    nonlinearity: str = "identity"

    def __post_init__(self):
        object.__setattr__(self, "W1", as_matrix(self.W1, name="W1"))
        object.__setattr__(self, "W2", as_matrix(self.W2, name="W2"))
        if self.W2.shape[1] != self.W1.shape[0]:
            raise ShapeError(
                f"Inner dimensions disagree: W1 {self.W1.shape}, W2 {self.W2.shape}"
            )
        if self.nonlinearity not in NONLINEARITIES:
            raise ArgumentError(f"Unknown nonlinearity {self.nonlinearity}")

    @property
    def c_in(self):
        return self.W1.shape[1]

    @property
    def c_inner(self):
        return self.W1.shape[0]

    @property
    def c_out(self):
        return self.W2.shape[0]

    @property
    def nparams(self):
        return self.W1.size + self.W2.size

    def forward(self, x, funnel=None):
        """Evaluate the pair on column vectors x (c_in or c_in x batch).

        If a funnel is given the funneled network W2 F2 sigma(F1 W1 x) is evaluated.
        """
        hidden = self.W1 @ x
        if funnel is not None:
            hidden = funnel.F1 @ hidden
        hidden = activation(hidden, self.nonlinearity)
        if funnel is not None:
            hidden = funnel.F2 @ hidden
        return self.W2 @ hidden


@dataclass(frozen=True)
class AttentionProjections:
    """Row-vector attention projections.

    Args:
        - Wq (2darray): Query projection, c_in x c_inner.
        - Wk (2darray): Key projection, c_ctx x c_inner (c_ctx = c_in for self-attention).
        - Wv (2darray): Value projection, c_ctx x c_inner.
        - Wo (2darray): Output projection, c_inner x c_out.

    """

    Wq: np.ndarray
    Wk: np.ndarray
    Wv: np.ndarray
    Wo: np.ndarray

    def __post_init__(self):
        for name in ("Wq", "Wk", "Wv", "Wo"):
            object.__setattr__(self, name, as_matrix(getattr(self, name), name=name))
        if self.Wq.shape[1] != self.Wk.shape[1]:
            raise ShapeError(
                f"Wq and Wk must share the inner width: {self.Wq.shape}, {self.Wk.shape}"
            )
        if self.Wv.shape[1] != self.Wo.shape[0]:
            raise ShapeError(
                f"Wv and Wo inner widths disagree: {self.Wv.shape}, {self.Wo.shape}"
            )

    @property
    def c_inner(self):
        return self.Wq.shape[1]

    def value_output_pair(self):
        """The V/O pair in column-vector convention, W1 = Wv^T, W2 = Wo^T."""
        return LinearPair(W1=self.Wv.T, W2=self.Wo.T, nonlinearity="identity")


@dataclass(frozen=True)
class ConvPair:
    """Two stride-1, same-padded 2D convolutions around a nonlinearity.

    Args:
        - K1 (4darray): First kernel, Kh x Kw x c_mid x c_in.
        - K2 (4darray): Second kernel, Kh x Kw x c_out x c_mid.
        - nonlinearity (str): One of `identity`, `relu`, `silu`.

    """

    K1: np.ndarray
    K2: np.ndarray
    nonlinearity: str = "silu"

    def __post_init__(self):
        object.__setattr__(self, "K1", as_array(self.K1, ndim=4, name="K1"))
        object.__setattr__(self, "K2", as_array(self.K2, ndim=4, name="K2"))
        if self.K2.shape[3] != self.K1.shape[2]:
            raise ShapeError(
                f"Channel chaining broken: K1 {self.K1.shape}, K2 {self.K2.shape}"
            )
        if self.nonlinearity not in NONLINEARITIES:
            raise ArgumentError(f"Unknown nonlinearity {self.nonlinearity}")

    @property
    def c_mid(self):
        return self.K1.shape[2]

    @property
    def nparams(self):
        return self.K1.size + self.K2.size

    def input_patch_matrix(self):
        """K1 as c_mid x (Kh*Kw*c_in), applied to flattened input patches."""
        kh, kw, c_mid, c_in = self.K1.shape
        return self.K1.transpose(2, 0, 1, 3).reshape(c_mid, kh * kw * c_in)

    def output_collection_matrix(self):
        """K2 as (Kh*Kw*c_out) x c_mid, applied to each input pixel."""
        return self.K2.reshape(-1, self.c_mid)

    def forward(self, x, funnel=None):
        """Evaluate the pair on images x (..., c_in, H, W)."""
        hidden = conv2d(x, self.K1)
        if funnel is not None:
            hidden = channel_mix(hidden, funnel.F1)
        hidden = activation(hidden, self.nonlinearity)
        if funnel is not None:
            hidden = channel_mix(hidden, funnel.F2)
        return conv2d(hidden, self.K2)


@dataclass(frozen=True)
class FunnelPair:
    """Funnel matrices (F1, F2) inserted into a layer pair.

    Args:
        - F1 (2darray): c' x c_inner reduction applied after the first layer.
        - F2 (2darray): c_inner x c' expansion applied before the second layer.
        - fun_factor (float): Ratio c'/c_inner requested.
        - target (str): Name of the adapted pair.
        - kind (str): `linear`, `qk`, `vo` or `conv`.

    Note:
        - For `qk` funnels F2 is Fq and F1 is Fk^T, so that the adapted similarity
          matrix reads Wq F2 F1 Wk^T = Wq Fq Fk^T Wk^T.

    """

    F1: np.ndarray
    F2: np.ndarray
    fun_factor: float = 1.0
    target: str = ""
    kind: str = "linear"
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "F1", as_matrix(self.F1, name="F1"))
        object.__setattr__(self, "F2", as_matrix(self.F2, name="F2"))
        if self.F1.shape[::-1] != self.F2.shape:
            raise ShapeError(f"F1 {self.F1.shape} and F2 {self.F2.shape} do not chain")
        if not 0 < self.fun_factor <= 1:
            raise ArgumentError(f"fun_factor must be in (0, 1], got {self.fun_factor}")

    @property
    def width(self):
        """Reduced inner width c'."""
        return self.F1.shape[0]

    @property
    def c_inner(self):
        return self.F1.shape[1]

    @property
    def Fq(self):
        return self.F2

    @property
    def Fk(self):
        return self.F1.T

    @classmethod
    def identity(cls, c_inner, target="", kind="linear"):
        """Funnel that changes nothing, F1 = F2 = I."""
        eye = np.eye(c_inner)
        return cls(F1=eye, F2=eye.copy(), fun_factor=1.0, target=target, kind=kind)


def conv2d(x, kernel):
    """Stride-1 zero-padded 2D cross-correlation preserving spatial size.

    Args:
        - x (ndarray): Images with shape (..., c_in, H, W).
        - kernel (4darray): Kh x Kw x c_out x c_in, the offset (0, 0) at the centre.

    Returns:
        - y (ndarray): Images with shape (..., c_out, H, W).

    """
    kh, kw = kernel.shape[:2]
    ph, pw = kh // 2, kw // 2
    pad = [(0, 0)] * (x.ndim - 2) + [(ph, kh - 1 - ph), (pw, kw - 1 - pw)]
    windows = np.lib.stride_tricks.sliding_window_view(
        np.pad(x, pad), (kh, kw), axis=(-2, -1)
    )
    return np.einsum("...chwyx,yxoc->...ohw", windows, kernel, optimize=True)


def channel_mix(x, matrix):
    """Apply a 1x1 channel mixing matrix (c_out x c_in) to images (..., c_in, H, W)."""
    return np.einsum("oc,...chw->...ohw", matrix, x, optimize=True)
