"""Keyed random streams.

Every random draw in the package comes from a Philox generator whose key is
derived from a tuple of integers (base seed, outer iteration, ...).  Draws
therefore depend only on the key, never on how particles are scheduled
across workers.
"""

import numpy as np


def stream(*keys):
    """Return a fresh Philox-backed Generator keyed by ``keys`` (non-negative ints)."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(k) for k in keys])))


def antithetic_perturbations(base_seed, outer_iter, n_particles, dim, sigma):
    """Draw N/2 Gaussian perturbations and interleave them as (+eps, -eps) pairs.

    Row ``j`` of the underlying draw belongs to pair ``j`` and is a function of
    (base_seed, outer_iter, j) only, so it does not change with N.  Particle
    ``2j`` receives ``+eps_j`` and particle ``2j + 1`` receives ``-eps_j``.
    """
    n_pairs = n_particles // 2
    half = stream(base_seed, outer_iter).standard_normal((n_pairs, dim)) * sigma
    perts = np.empty((n_particles, dim))
    perts[0::2] = half
    perts[1::2] = -half
    return perts


def rademacher(gen, size):
    return gen.integers(0, 2, size=size).astype(np.float64) * 2.0 - 1.0
