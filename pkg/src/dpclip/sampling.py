"""Batch plans and dataset splits.

A plan assigns sample indices to rounds: each round's batch holds ``m``
micro-batches of ``s`` indices.  Shuffling (SH) cuts one random permutation
per epoch into disjoint batches; subsampling (SS) draws every batch
uniformly with replacement, so batches may intersect.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from . import rng as rngmod


@dataclass(frozen=True)
class BatchPlan:
    """Per-epoch assignment of sample indices to micro-batches.

    ``indices`` has shape (rounds, m, s): round b, micro-batch h holds the
    sample indices ``indices[b, h]``.  ``permutation`` is set for shuffled
    plans only.
    """

    epoch: int
    mode: str  # "sh" | "ss"
    indices: np.ndarray
    permutation: np.ndarray | None = None

    @property
    def rounds(self):
        return self.indices.shape[0]

    @property
    def m(self):
        return self.indices.shape[1]

    @property
    def s(self):
        return self.indices.shape[2]

    def batch(self, b):
        """All sm indices of round b, micro-batch order preserved."""
        return self.indices[b].reshape(-1)


@dataclass(frozen=True)
class SplitSpec:
    public_fraction: float
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.public_fraction < 1.0:
            raise ConfigurationError(
                f"public_fraction must be in (0, 1), got {self.public_fraction}"
            )


def shuffle_partition(N, s, m, rng, epoch=0):
    """Shuffled (SH) plan: a uniform permutation of {0..N-1} cut into
    floor(N/(sm)) consecutive batches of m micro-batches of s.

    The trailing ``N mod (sm)`` indices of the permutation are dropped, so
    batches within the epoch are pairwise disjoint.
    """
    _check_sizes(s, m)
    if N < s * m:
        raise ConfigurationError(f"dataset size {N} smaller than batch size {s * m}")
    perm = rng.permutation(N)
    rounds = N // (s * m)
    used = perm[: rounds * s * m]
    return BatchPlan(
        epoch=epoch,
        mode="sh",
        indices=used.reshape(rounds, m, s).copy(),
        permutation=perm,
    )


def subsample(N, s, m, rounds, rng, epoch=0):
    """Subsampled (SS) plan: each of ``rounds`` batches draws its sm indices
    uniformly at random with replacement; batches may intersect."""
    _check_sizes(s, m)
    if N < 1:
        raise ConfigurationError(f"dataset size must be positive, got {N}")
    if rounds < 0:
        raise ConfigurationError(f"rounds must be non-negative, got {rounds}")
    idx = rng.integers(0, N, size=(rounds, m, s))
    return BatchPlan(epoch=epoch, mode="ss", indices=idx)


def _check_sizes(s, m):
    if s < 1 or m < 1:
        raise ConfigurationError(f"micro-batch size s={s} and count m={m} must be >= 1")


def split_public(N, spec):
    """Disjoint, exhaustive (train, public) index split.

    ``round(N * public_fraction)`` indices go to the public part; the split
    is a pure function of (N, spec.seed).
    """
    n_pub = int(round(N * spec.public_fraction))
    if n_pub < 1:
        raise ConfigurationError(
            f"public fraction {spec.public_fraction} of {N} samples yields an empty public set"
        )
    if n_pub >= N:
        raise ConfigurationError(
            f"public fraction {spec.public_fraction} of {N} samples yields an empty train set"
        )
    gen = rngmod.stream(spec.seed, "split")
    perm = gen.permutation(N)
    public = np.sort(perm[:n_pub])
    train = np.sort(perm[n_pub:])
    return train, public
