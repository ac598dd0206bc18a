"""Fixed-size sampling without replacement with prescribed inclusion probabilities.

Two designs are provided:
    - `brewer`: Brewer's draw-by-draw method.
    - `systematic`: Systematic probability-proportional-to-size sampling on a
      randomly permuted population, used as an independent reference.

Both select exactly n units and each unit i is included with probability p_i.

"""
import logging
from dataclasses import dataclass

import numpy as np

from unetslim.core.utils import as_array, as_generator
from unetslim.core.exceptions import ArgumentError

logger = logging.getLogger(__name__)


FORCE_TOL = 1e-12
SUM_TOL = 1e-9
METHODS = ("brewer", "systematic")


@dataclass(frozen=True)
class GateSample:
    """Binary gates drawn from inclusion probabilities.

    Args:
        - z (1darray): Gates in {0, 1}, exactly n ones.
        - p (1darray): Inclusion probabilities the gates were drawn with.
        - n (int): Sample size.
        - method (str): Sampling design.

    """

    z: np.ndarray
    p: np.ndarray
    n: int
    method: str = "brewer"

    @property
    def selected(self):
        """Indices of the included units in increasing order."""
        return np.flatnonzero(self.z)

    @property
    def zhat(self):
        """Straight-through gate values, numerically equal to z."""
        return self.z.astype(float)


def _validate(p, n):
    p = as_array(p, ndim=1, name="p")
    if np.any(p < -FORCE_TOL) or np.any(p > 1 + FORCE_TOL):
        raise ArgumentError("Inclusion probabilities must lie in [0, 1]")
    if int(n) != n or not 0 <= n <= p.size:
        raise ArgumentError(f"Sample size must be an integer in [0, {p.size}], got {n}")
    if abs(p.sum() - n) > SUM_TOL:
        raise ArgumentError(f"Inclusion probabilities sum to {p.sum()}, expected {n}")
    return np.clip(p, 0.0, 1.0), int(n)


def brewer_sample(pik, n, rng, size=1):
    """Brewer draw-by-draw selection of n units among probabilities pik < 1.

    At draw i a unit k not yet selected is chosen with probability proportional to

        pik_k (n - a - pik_k) / (n - a - pik_k (n - i + 1))

    where a is the sum of pik over the units already selected.

    Args:
        - pik (1darray): Inclusion probabilities strictly inside (0, 1), summing to n.
        - n (int): Number of draws.
        - rng (Generator): Random generator.
        - size (int): Number of independent samples.

    Returns:
        - selected (2darray): Boolean masks (size, N) with n True values per row.

    """
    N = pik.size
    rows = np.arange(size)
    selected = np.zeros((size, N), dtype=bool)
    for draw in range(1, n + 1):
        left = n - (pik * selected).sum(axis=1, keepdims=True)
        with np.errstate(divide="ignore", invalid="ignore"):
            weights = pik * (left - pik) / (left - pik * (n - draw + 1))
        weights = np.where(selected | ~np.isfinite(weights), 0.0, np.maximum(weights, 0.0))
        empty = weights.sum(axis=1) <= 0
        if empty.any():
            # Only reachable through rounding on the last draws
            weights[empty] = np.where(selected[empty], 0.0, pik)
        cumulative = np.cumsum(weights, axis=1)
        u = rng.random((size, 1)) * cumulative[:, -1:]
        unit = (cumulative <= u).sum(axis=1)
        last = N - 1 - np.argmax(weights[:, ::-1] > 0, axis=1)
        selected[rows, np.minimum(unit, last)] = True
    return selected


def systematic_sample(pik, n, rng, size=1):
    """Systematic PPS selection of n units on random permutations of pik.

    Args:
        - pik (1darray): Inclusion probabilities in (0, 1), summing to n.
        - n (int): Sample size.
        - rng (Generator): Random generator.
        - size (int): Number of independent samples.

    Returns:
        - selected (2darray): Boolean masks (size, N) with n True values per row.

    """
    N = pik.size
    selected = np.zeros((size, N), dtype=bool)
    if n == 0:
        return selected
    perm = rng.permuted(np.tile(np.arange(N), (size, 1)), axis=1)
    edges = np.concatenate([np.zeros((size, 1)), np.cumsum(pik[perm], axis=1)], axis=1)
    edges *= n / edges[:, -1:]
    points = rng.random((size, 1)) + np.arange(n)
    positions = (edges[:, None, :] <= points[:, :, None]).sum(axis=-1) - 1
    positions = np.clip(positions, 0, N - 1)
    selected[np.arange(size)[:, None], np.take_along_axis(perm, positions, axis=1)] = True
    return selected


def draw_fixed_size(p, n, size=1, rng=None, method="brewer"):
    """Draw `size` independent fixed-size samples with inclusion probabilities p.

    Units with p >= 1 - 1e-12 are always selected and units with p <= 1e-12 never.

    Args:
        - p (1darray): Inclusion probabilities in [0, 1] summing to n.
        - n (int): Sample size.
        - size (int): Number of samples.
        - rng (int, SeedSequence, Generator): Random state.
        - method (str): `brewer` or `systematic`.

    Returns:
        - z (2darray): Gates (size, N) in {0, 1}, exactly n ones per row.

    """
    if method not in METHODS:
        raise ArgumentError(f"method must be one of {METHODS}, got {method}")
    if int(size) != size or size < 1:
        raise ArgumentError(f"size must be a positive integer, got {size}")
    p, n = _validate(p, n)
    rng = as_generator(rng)
    z = np.zeros((int(size), p.size), dtype=int)
    forced = p >= 1 - FORCE_TOL
    free = np.flatnonzero(~forced & (p > FORCE_TOL))
    z[:, forced] = 1
    remaining = n - int(forced.sum())
    if remaining < 0 or remaining > free.size:
        raise ArgumentError(f"Cannot select {n} units from probabilities {p}")
    if remaining > 0:
        draw = brewer_sample if method == "brewer" else systematic_sample
        z[:, free] = draw(p[free], remaining, rng, size=int(size))
    return z


def sample_fixed_size(p, n, rng=None, method="brewer"):
    """Draw exactly n binary gates with inclusion probabilities p.

    Args:
        - p (1darray): Inclusion probabilities in [0, 1] summing to n.
        - n (int): Sample size.
        - rng (int, SeedSequence, Generator): Random state.
        - method (str): `brewer` or `systematic`.

    Returns:
        - sample (GateSample): Gates and the probabilities used.

    """
    z = draw_fixed_size(p, n, size=1, rng=rng, method=method)[0]
    logger.debug(f"Sampled gates {z.tolist()} with method {method}")
    p = np.clip(as_array(p, ndim=1, name="p"), 0.0, 1.0)
    return GateSample(z=z, p=p, n=int(n), method=method)


def empirical_inclusion(p, n, trials, seed=None, method="brewer"):
    """Inclusion frequencies over independent repetitions of the sampler.

    Args:
        - p (1darray): Inclusion probabilities.
        - n (int): Sample size.
        - trials (int): Number of repetitions.
        - seed (int): Seed of the repetitions.
        - method (str): Sampling design.

    Returns:
        - freq (1darray): Fraction of trials each unit was selected in.

    """
    z = draw_fixed_size(p, n, size=trials, rng=seed, method=method)
    return z.mean(axis=0)
