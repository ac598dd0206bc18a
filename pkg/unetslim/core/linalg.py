"""Dense linear algebra kernels on float64 numpy arrays.

All funnel, attention and motion computations rest on these few functions. They
accept numpy arrays or DataArrays and always return numpy arrays.

Reference:
    - Eckart, C., Young, G. (1936). The approximation of one matrix by another of
      lower rank. Psychometrika 1, 211-218.

"""
from typing import NamedTuple

import numpy as np

from unetslim.core.utils import as_array, as_matrix
from unetslim.core.exceptions import ArgumentError, ShapeError, SingularMatrixError


PINV_RTOL = 1e-12
SINGULAR_TOL = 1e-14


class SvdResult(NamedTuple):
    """Thin singular value decomposition A = U diag(S) V^T.

    U is m x r, S has r non-increasing entries, V is n x r, r = min(m, n).
    """

    U: np.ndarray
    S: np.ndarray
    V: np.ndarray

    def reconstruct(self, k=None):
        """U_k diag(S_k) V_k^T, the full product if k is None."""
        k = self.S.size if k is None else k
        return (self.U[:, :k] * self.S[:k]) @ self.V[:, :k].T


def svd(A):
    """Thin singular value decomposition with a deterministic sign convention.

    Args:
        - A (2darray): Finite m x n matrix.

    Returns:
        - result (SvdResult): U (m x r), S (r), V (n x r) with r = min(m, n).

    Note:
        - Signs are fixed so the largest-magnitude entry of each column of U is
          positive, ties broken by the lowest row index; V columns follow U.

    """
    A = as_matrix(A)
    U, S, Vt = np.linalg.svd(A, full_matrices=False)
    V = Vt.T.copy()
    if U.size:
        ipeak = np.argmax(np.abs(U), axis=0)
        signs = np.sign(U[ipeak, np.arange(U.shape[1])])
        signs[signs == 0] = 1.0
        U = U * signs
        V = V * signs
    return SvdResult(U=U, S=S, V=V)


def pinv(A):
    """Moore-Penrose pseudoinverse.

    Args:
        - A (2darray): Finite m x n matrix.

    Returns:
        - Ainv (2darray): n x m pseudoinverse.

    Note:
        - Singular values below `1e-12 * max(m, n) * max(S)` are treated as zero.

    """
    U, S, V = svd(A)
    m, n = np.shape(A)
    cutoff = PINV_RTOL * max(m, n) * (S.max() if S.size else 0.0)
    keep = S > cutoff
    sinv = np.zeros_like(S)
    sinv[keep] = 1.0 / S[keep]
    return (V * sinv) @ U.T


def truncated_approx(A, k):
    """Best rank-k approximation U_k diag(S_k) V_k^T of A in Frobenius norm.

    Args:
        - A (2darray): Finite m x n matrix.
        - k (int): Rank of the approximation, 1 <= k <= min(m, n).

    Returns:
        - Ak (2darray): m x n rank-k approximation.

    """
    A = as_matrix(A)
    if int(k) != k or not 1 <= k <= min(A.shape):
        raise ArgumentError(f"k must be an integer in [1, {min(A.shape)}], got {k}")
    return svd(A).reconstruct(int(k))


def truncation_residual(S, k):
    """Frobenius residual sqrt(sum_{i>k} S_i^2) of a rank-k truncation."""
    S = as_array(S, ndim=1, name="S")
    return float(np.sqrt(np.sum(S[k:] ** 2)))


def solve_2x2(M, b):
    """Solve a 2 x 2 linear system by Cramer's rule.

    Args:
        - M (2darray): 2 x 2 matrix.
        - b (1darray): Right-hand side with 2 entries.

    Returns:
        - x (1darray): Solution of M x = b.

    """
    M = as_matrix(M, name="M")
    b = as_array(b, ndim=1, name="b")
    if M.shape != (2, 2) or b.shape != (2,):
        raise ShapeError(f"Expected 2x2 system, got M{M.shape} and b{b.shape}")
    det = M[0, 0] * M[1, 1] - M[0, 1] * M[1, 0]
    if abs(det) <= SINGULAR_TOL * np.sum(M**2):
        raise SingularMatrixError(f"Near-singular 2x2 system with det={det!r}", det=det)
    return np.array(
        [
            (M[1, 1] * b[0] - M[0, 1] * b[1]) / det,
            (M[0, 0] * b[1] - M[1, 0] * b[0]) / det,
        ]
    )
