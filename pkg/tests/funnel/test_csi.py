import pytest
import numpy as np

from unetslim.core.linalg import svd, truncated_approx
from unetslim.core.exceptions import ArgumentError
from unetslim.funnel import (
    LinearPair,
    AttentionProjections,
    ConvPair,
    csi_linear_pair,
    csi_attention_qk,
    csi_value_output,
    csi_conv_pair,
    csi_heads,
    effective_residual,
)
from unetslim.funnel.csi import funnel_factors, coupled_singular_init


@pytest.fixture(scope="module")
def rng():
    return np.random.default_rng(1234)


def effective(pair, funnel):
    return pair.W2 @ funnel.F2 @ funnel.F1 @ pair.W1


class TestLinear:

    def test_rank_one_lossless(self, rng):
        W1 = np.outer(rng.standard_normal(3), rng.standard_normal(5))
        pair = LinearPair(W1=W1, W2=rng.standard_normal((4, 3)))
        funnel = csi_linear_pair(pair, fun_factor=0.25)
        assert funnel.width == 1
        assert np.max(np.abs(effective(pair, funnel) - pair.W2 @ pair.W1)) <= 1e-9

    def test_full_width_exact(self, rng):
        pair = LinearPair(W1=rng.standard_normal((4, 6)), W2=rng.standard_normal((5, 4)))
        funnel = csi_linear_pair(pair, fun_factor=1.0)
        assert funnel.width == 4
        assert np.max(np.abs(effective(pair, funnel) - pair.W2 @ pair.W1)) <= 1e-9

    def test_truncation_residual(self, rng):
        pair = LinearPair(W1=rng.standard_normal((4, 6)), W2=rng.standard_normal((5, 4)))
        funnel = csi_linear_pair(pair, fun_factor=0.5)
        S = svd(pair.W2 @ pair.W1).S
        residual = np.linalg.norm(effective(pair, funnel) - pair.W2 @ pair.W1)
        assert funnel.width == 2
        assert abs(residual - np.sqrt(S[2] ** 2 + S[3] ** 2)) <= 1e-8

    @pytest.mark.parametrize("fun_factor", [0.25, 0.5, 0.75, 1.0])
    def test_effective_residual_is_optimal(self, rng, fun_factor):
        pair = LinearPair(W1=rng.standard_normal((8, 12)), W2=rng.standard_normal((10, 8)))
        residual, oracle = effective_residual(pair, csi_linear_pair(pair, fun_factor))
        assert abs(residual - oracle) <= 1e-8 * max(1.0, np.linalg.norm(pair.W2 @ pair.W1))

    @pytest.mark.parametrize("fun_factor", [0.0, -0.5, 1.01])
    def test_bad_fun_factor(self, rng, fun_factor):
        pair = LinearPair(W1=rng.standard_normal((4, 6)), W2=rng.standard_normal((5, 4)))
        with pytest.raises(ArgumentError):
            csi_linear_pair(pair, fun_factor)

    def test_extra_width_is_zero(self, rng):
        F1, F2 = coupled_singular_init(rng.standard_normal((2, 4)), rng.standard_normal((4, 3)), 3)
        assert np.all(F1[2] == 0) and np.all(F2[:, 2] == 0)


class TestAttention:

    def test_identity_projections(self):
        eye = np.eye(4)
        proj = AttentionProjections(Wq=eye, Wk=eye, Wv=eye, Wo=eye)
        funnel = csi_attention_qk(proj, fun_factor=1.0)
        assert np.allclose(proj.Wq @ funnel.Fq @ funnel.Fk.T @ proj.Wk.T, eye, atol=1e-12)

    def test_logits_preserved_at_rank(self, rng):
        Wq, Wk = rng.standard_normal((8, 4)), rng.standard_normal((8, 4))
        proj = AttentionProjections(Wq=Wq, Wk=Wk, Wv=Wk, Wo=Wk.T)
        funnel = csi_attention_qk(proj, fun_factor=1.0)
        X = rng.standard_normal((6, 8))
        logits = X @ Wq @ Wk.T @ X.T
        adapted = X @ Wq @ funnel.Fq @ funnel.Fk.T @ Wk.T @ X.T
        assert np.max(np.abs(adapted - logits)) <= 1e-8

    def test_similarity_truncated(self, rng):
        Wq, Wk = rng.standard_normal((8, 4)), rng.standard_normal((8, 4))
        proj = AttentionProjections(Wq=Wq, Wk=Wk, Wv=Wk, Wo=Wk.T)
        funnel = csi_attention_qk(proj, fun_factor=0.5)
        similarity = Wq @ funnel.Fq @ funnel.Fk.T @ Wk.T
        assert funnel.width == 2
        assert np.linalg.norm(similarity - truncated_approx(Wq @ Wk.T, 2)) <= 1e-8

    def test_value_output_full_width(self, rng):
        Wv, Wo = rng.standard_normal((6, 4)), rng.standard_normal((4, 6))
        proj = AttentionProjections(Wq=Wv, Wk=Wv, Wv=Wv, Wo=Wo)
        funnel = csi_value_output(proj, fun_factor=1.0)
        X = rng.standard_normal((5, 6))
        out = X @ Wv @ funnel.F1.T @ funnel.F2.T @ Wo
        assert funnel.kind == "vo"
        assert np.max(np.abs(out - X @ Wv @ Wo)) <= 1e-9

    def test_value_output_at_rank(self, rng):
        Wv = rng.standard_normal((6, 2)) @ rng.standard_normal((2, 4))
        Wo = rng.standard_normal((4, 6))
        proj = AttentionProjections(Wq=Wv, Wk=Wv, Wv=Wv, Wo=Wo)
        funnel = csi_value_output(proj, fun_factor=0.5)
        X = rng.standard_normal((5, 6))
        out = X @ Wv @ funnel.F1.T @ funnel.F2.T @ Wo
        assert np.max(np.abs(out - X @ Wv @ Wo)) <= 1e-8

    def test_value_output_rank_one(self, rng):
        Wv, Wo = rng.standard_normal((6, 4)), rng.standard_normal((4, 6))
        proj = AttentionProjections(Wq=Wv, Wk=Wv, Wv=Wv, Wo=Wo)
        funnel = csi_value_output(proj, fun_factor=0.25)
        X = rng.standard_normal((5, 6))
        error = np.linalg.norm(X @ Wv @ funnel.F1.T @ funnel.F2.T @ Wo - X @ Wv @ Wo)
        oracle = np.linalg.norm(X @ truncated_approx(Wv @ Wo, 1) - X @ Wv @ Wo)
        assert funnel.width == 1
        assert abs(error - oracle) <= 1e-8

    @pytest.mark.parametrize("kind", ["qk", "vo"])
    def test_heads_block_diagonal(self, rng, kind):
        proj = AttentionProjections(
            Wq=rng.standard_normal((8, 8)),
            Wk=rng.standard_normal((6, 8)),
            Wv=rng.standard_normal((6, 8)),
            Wo=rng.standard_normal((8, 8)),
        )
        funnel = csi_heads(proj, heads=2, fun_factor=0.5, kind=kind)
        assert funnel.F1.shape == (4, 8)
        assert np.all(funnel.F1[:2, 4:] == 0) and np.all(funnel.F2[4:, :2] == 0)
        residual, oracle = effective_residual(proj, funnel)
        assert abs(residual - oracle) <= 1e-8 * max(1.0, oracle)

    def test_heads_bad_kind(self, rng):
        proj = AttentionProjections(*(rng.standard_normal((4, 4)) for _ in range(4)))
        with pytest.raises(ArgumentError):
            csi_heads(proj, heads=2, kind="conv")


class TestConv:

    def test_one_by_one_matches_linear(self, rng):
        pair = ConvPair(K1=rng.standard_normal((1, 1, 4, 5)), K2=rng.standard_normal((1, 1, 6, 4)))
        conv = csi_conv_pair(pair, fun_factor=0.5)
        linear = csi_linear_pair(LinearPair(W1=pair.K1[0, 0], W2=pair.K2[0, 0]), fun_factor=0.5)
        assert np.allclose(conv.F1, linear.F1, atol=1e-12)
        assert np.allclose(conv.F2, linear.F2, atol=1e-12)

    def test_rank_one_lossless(self, rng):
        K1 = np.repeat(rng.standard_normal((3, 3, 1, 2)), 4, axis=2)
        pair = ConvPair(K1=K1, K2=rng.standard_normal((3, 3, 5, 4)))
        funnel = csi_conv_pair(pair, fun_factor=0.25)
        B, A = funnel_factors(pair, "conv")
        assert funnel.width == 1
        assert np.max(np.abs(B @ funnel.F2 @ funnel.F1 @ A - B @ A)) <= 1e-9

    def test_random_truncation(self, rng):
        pair = ConvPair(K1=rng.standard_normal((3, 3, 6, 4)), K2=rng.standard_normal((3, 3, 5, 6)))
        funnel = csi_conv_pair(pair, fun_factor=0.5)
        B, A = pair.output_collection_matrix(), pair.input_patch_matrix()
        assert funnel.width == 3
        assert np.linalg.norm(B @ funnel.F2 @ funnel.F1 @ A - truncated_approx(B @ A, 3)) <= 1e-8
        residual, oracle = effective_residual(pair, funnel)
        assert abs(residual - oracle) <= 1e-8 * max(1.0, np.linalg.norm(B @ A))


def test_funnel_factors_bad_kind(rng):
    pair = LinearPair(W1=rng.standard_normal((4, 6)), W2=rng.standard_normal((5, 4)))
    with pytest.raises(ArgumentError):
        funnel_factors(pair, "nope")
