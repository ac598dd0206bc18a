import pytest
import numpy as np

from unetslim.core.linalg import svd
from unetslim.core.exceptions import ArgumentError, ShapeError
from unetslim.funnel import (
    LinearPair,
    ConvPair,
    FunnelPair,
    truncated_layer_baseline,
    he_init_baseline,
    count_params,
    csi_linear_pair,
    effective_residual,
)


def test_truncated_full_rank():
    W = np.random.default_rng(0).standard_normal((6, 6))
    W1, W2 = truncated_layer_baseline(W, 1.0)
    assert np.max(np.abs(W2 @ W1 - W)) <= 1e-9


def test_truncated_diagonal():
    W1, W2 = truncated_layer_baseline(np.diag([3.0, 2.0, 1.0, 0.5]), 0.5)
    assert W1.shape == (2, 4)
    assert np.allclose(W2 @ W1, np.diag([3.0, 2.0, 0.0, 0.0]), atol=1e-12)


def test_truncated_params_and_residual():
    W = np.random.default_rng(1).standard_normal((8, 8))
    W1, W2 = truncated_layer_baseline(W, 0.25)
    S = svd(W).S
    assert count_params(W1, W2) == 32 < count_params(W)
    assert np.isclose(np.linalg.norm(W2 @ W1 - W), np.sqrt(np.sum(S[2:] ** 2)))


@pytest.mark.parametrize("r, reduces", [(0.25, True), (0.375, True), (0.5, False), (0.75, False)])
def test_truncated_reduction_threshold(r, reduces):
    W = np.random.default_rng(2).standard_normal((8, 8))
    W1, W2 = truncated_layer_baseline(W, r)
    assert (count_params(W1, W2) < W.size) == reduces


@pytest.mark.parametrize("r", [0.0, 1.5])
def test_truncated_bad_rate(r):
    with pytest.raises(ArgumentError):
        truncated_layer_baseline(np.eye(3), r)


def test_he_deterministic():
    a = he_init_baseline((4, 8), (8, 4), seed=7)
    b = he_init_baseline((4, 8), (8, 4), seed=7)
    assert np.array_equal(a.F1, b.F1) and np.array_equal(a.F2, b.F2)
    assert a.fun_factor == 0.5


def test_he_variance():
    funnel = he_init_baseline((250, 400), (400, 250), seed=0)
    assert abs(funnel.F1.var() / (2.0 / 400) - 1.0) < 0.05
    assert abs(funnel.F2.var() / (2.0 / 250) - 1.0) < 0.05
    assert abs(funnel.F1.mean()) < 0.01


def test_he_bad_shapes():
    with pytest.raises(ShapeError):
        he_init_baseline((4, 8), (4, 8))


def test_he_worse_than_csi():
    rng = np.random.default_rng(3)
    worse = 0
    for _ in range(100):
        pair = LinearPair(W1=rng.standard_normal((8, 12)), W2=rng.standard_normal((10, 8)))
        csi, _ = effective_residual(pair, csi_linear_pair(pair, 0.5))
        he, _ = effective_residual(pair, he_init_baseline((4, 8), (8, 4), seed=rng))
        worse += he > csi
    assert worse >= 95


def test_count_params():
    assert count_params(np.zeros((2, 3)), np.zeros(4)) == 10
    assert count_params() == 0


def test_pair_validation():
    with pytest.raises(ShapeError):
        LinearPair(W1=np.zeros((3, 4)), W2=np.zeros((2, 4)))
    with pytest.raises(ArgumentError):
        LinearPair(W1=np.zeros((3, 4)), W2=np.zeros((2, 3)), nonlinearity="tanh")
    with pytest.raises(ShapeError):
        ConvPair(K1=np.zeros((3, 3, 4, 2)), K2=np.zeros((3, 3, 2, 5)))
    with pytest.raises(ShapeError):
        FunnelPair(F1=np.zeros((2, 4)), F2=np.zeros((3, 2)))
    with pytest.raises(ArgumentError):
        FunnelPair(F1=np.zeros((2, 4)), F2=np.zeros((4, 2)), fun_factor=0.0)


def test_funnel_pair_identity():
    funnel = FunnelPair.identity(5, target="x")
    assert funnel.width == funnel.c_inner == 5
    assert np.array_equal(funnel.Fq, np.eye(5)) and np.array_equal(funnel.Fk, np.eye(5))
