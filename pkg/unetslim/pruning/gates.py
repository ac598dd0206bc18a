"""Straight-through gates, temporal mixing weights and inference selection.

A temporal block mixes the spatial output x_s with the temporal output
x_t = x_s + r_t as alpha x_s + (1 - alpha) x_t = x_s + (1 - alpha) r_t. During
pruning-aware training a binary gate z_i multiplies the residual and gradients
reach the inclusion probability through z_hat = p + stop_gradient(z - p).

"""
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logit

from unetslim.core.utils import as_array
from unetslim.core.exceptions import ArgumentError, DomainError

TEMPERATURE = 0.1


@dataclass(frozen=True)
class ImportanceVector:
    """Importance logits of N temporal blocks.

    Args:
        - theta (1darray): Logits, q = sigmoid(theta / temperature).
        - temperature (float): Sigmoid temperature.

    """

    theta: np.ndarray
    temperature: float = TEMPERATURE

    def __post_init__(self):
        theta = as_array(self.theta, ndim=1, name="theta")
        if theta.size < 2:
            raise ArgumentError(f"At least 2 importance values are required, got {theta.size}")
        if self.temperature <= 0:
            raise ArgumentError(f"temperature must be positive, got {self.temperature}")
        object.__setattr__(self, "theta", theta)

    @property
    def q(self):
        return expit(self.theta / self.temperature)

    def __len__(self):
        return self.theta.size


@dataclass(frozen=True)
class TemporalMixWeights:
    """Mixing weights alpha of N temporal blocks, each strictly inside (0, 1)."""

    alpha: np.ndarray

    def __post_init__(self):
        alpha = as_array(self.alpha, ndim=1, name="alpha")
        if np.any(alpha <= 0) or np.any(alpha >= 1):
            raise DomainError("Temporal mix weights must lie strictly inside (0, 1)")
        object.__setattr__(self, "alpha", alpha)

    @classmethod
    def from_logits(cls, logits, temperature=TEMPERATURE):
        """Weights parametrized as alpha = sigmoid(logits / temperature)."""
        return cls(alpha=expit(as_array(logits, ndim=1, name="logits") / temperature))

    def __len__(self):
        return self.alpha.size


def gate_forward(z, p):
    """Straight-through gate value, equal to z exactly.

    Args:
        - z (int, 1darray): Binary gates.
        - p (float, 1darray): Inclusion probabilities, only used in the backward pass.

    """
    z = np.asarray(z)
    if np.any((z != 0) & (z != 1)):
        raise ArgumentError("Gates must be 0 or 1")
    if np.any(np.asarray(p) < 0) or np.any(np.asarray(p) > 1):
        raise ArgumentError("Inclusion probabilities must lie in [0, 1]")
    return z.astype(float)


def gate_grad(p=None):
    """Derivative of the gate value with respect to p, identically one."""
    if p is None:
        return 1.0
    return np.ones_like(np.asarray(p, dtype=float))


def temporal_update(x_s, r_t, alpha, zhat=1.0):
    """Gated temporal block output x_s + zhat (1 - alpha) r_t."""
    return x_s + zhat * (1.0 - alpha) * r_t


def temporal_mix(x_s, x_t, alpha):
    """Convex mix alpha x_s + (1 - alpha) x_t of spatial and temporal outputs."""
    return alpha * x_s + (1.0 - alpha) * x_t


def temporal_update_grad(r_t, alpha):
    """Derivative of the gated block output with respect to p, (1 - alpha) r_t.

    The straight-through gate passes gradients unchanged, so the derivative with
    respect to p equals the derivative with respect to zhat.
    """
    return gate_grad() * (1.0 - alpha) * np.asarray(r_t)


def select_top_n(q, n):
    """Indices of the n largest importances, ties broken by the lowest index.

    Returns:
        - indices (1darray): Selected indices in increasing order.

    """
    q = as_array(q, ndim=1, name="q")
    if int(n) != n or not 0 <= n <= q.size:
        raise ArgumentError(f"n must be an integer in [0, {q.size}], got {n}")
    order = np.argsort(-q, kind="stable")
    return np.sort(order[: int(n)])


def l1_gate_loss(alpha, lam):
    """L1 regularization lam * sum(1 - alpha) of the temporal block weights."""
    if isinstance(alpha, TemporalMixWeights):
        alpha = alpha.alpha
    if lam < 0:
        raise ArgumentError(f"lambda must be non-negative, got {lam}")
    return float(lam * np.sum(1.0 - as_array(alpha, name="alpha")))


def importance_from_alpha(alpha, temperature=TEMPERATURE):
    """Importance logits initialized from the block weights, q = 1 - alpha.

    Args:
        - alpha (1darray, TemporalMixWeights): Weights strictly inside (0, 1).
        - temperature (float): Sigmoid temperature.

    Returns:
        - importance (ImportanceVector): theta = temperature * logit(1 - alpha).

    """
    if isinstance(alpha, TemporalMixWeights):
        alpha = alpha.alpha
    alpha = as_array(alpha, ndim=1, name="alpha")
    if np.any(alpha <= 0) or np.any(alpha >= 1):
        raise DomainError("alpha must lie strictly inside (0, 1)")
    return ImportanceVector(theta=temperature * logit(1.0 - alpha), temperature=temperature)
