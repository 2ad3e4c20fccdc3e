"""Diversity and distribution diagnostics: AFD, MSE, energy distance, slopes."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np
from scipy.spatial.distance import cdist


@dataclass(frozen=True)
class Identity:
    kind = "identity"


@dataclass
class AffineProjection:
    """Fixed linear feature map y -> y @ matrix.T."""

    matrix: np.ndarray

    kind = "affine_projection"

    def __post_init__(self):
        self.matrix = np.atleast_2d(np.asarray(self.matrix, dtype=np.float64))


FeatureMap = Union[Identity, AffineProjection]


def random_projection(d_in: int, d_out: int, seed: int) -> AffineProjection:
    """Seeded random projection emulating a latent feature space."""
    gen = np.random.default_rng(seed)
    return AffineProjection(gen.standard_normal((d_out, d_in)) / np.sqrt(d_in))


@dataclass
class ConditionedSamples:
    """Replicate groups, one group of outputs per conditioning input."""

    groups: Sequence[np.ndarray]
    feature_map: FeatureMap = Identity()

    def __post_init__(self):
        self.groups = tuple(np.atleast_2d(np.asarray(g, dtype=np.float64)) for g in self.groups)
        if not self.groups:
            raise ValueError("at least one replicate group is required")
        if len({g.shape[1] for g in self.groups}) != 1:
            raise ValueError("all groups must share one feature dimension")

    def features(self) -> tuple[np.ndarray, ...]:
        if isinstance(self.feature_map, Identity):
            return self.groups
        return tuple(g @ self.feature_map.matrix.T for g in self.groups)


@dataclass(frozen=True)
class AFDReport:
    afd: float
    per_group: tuple[float, ...]


def afd(cs: ConditionedSamples) -> AFDReport:
    """Mean pairwise feature distance within each group, averaged over groups.

    Per group with L replicates: sum of ||F(y_k) - F(y_l)|| over ordered pairs
    k != l, divided by L^2 - L.
    """
    per_group = []
    for i, feats in enumerate(cs.features()):
        n = feats.shape[0]
        if n < 2:
            raise ValueError(f"group {i} has {n} replicate(s), need at least 2 for afd")
        dists = cdist(feats, feats)
        per_group.append(float(dists.sum() / (n * n - n)))
    return AFDReport(float(np.mean(per_group)), tuple(per_group))


def mse(batch: np.ndarray, reference: np.ndarray) -> float:
    batch = np.asarray(batch, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    if batch.shape != reference.shape:
        raise ValueError(f"shape mismatch: {batch.shape} vs {reference.shape}")
    return float(np.mean((batch - reference) ** 2))


def energy_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Two-sample energy statistic 2 E||A-B|| - E||A-A'|| - E||B-B'||.

    Within-sample means are U-statistics (off-diagonal pairs), so a sample
    tested against itself comes out at most 0, with O(1/n) magnitude.
    """
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    n, m = a.shape[0], b.shape[0]
    if n < 2 or m < 2:
        raise ValueError(f"energy_distance needs at least 2 samples per side, got {n} and {m}")
    cross = float(cdist(a, b).mean())
    within_a = float(cdist(a, a).sum() / (n * (n - 1)))
    within_b = float(cdist(b, b).sum() / (m * (m - 1)))
    return 2.0 * cross - within_a - within_b


def energy_permutation_quantile(
    a: np.ndarray,
    b: np.ndarray,
    n_permutations: int = 200,
    seed: int = 0,
    q: float = 0.95,
) -> float:
    """Permutation-null quantile of the energy statistic for samples a, b."""
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    n, m = a.shape[0], b.shape[0]
    if n < 2 or m < 2:
        raise ValueError("permutation test needs at least 2 samples per side")
    pool = np.concatenate([a, b], axis=0)
    dists = cdist(pool, pool)
    gen = np.random.default_rng(seed)
    stats = np.empty(n_permutations)
    for p in range(n_permutations):
        perm = gen.permutation(n + m)
        ia, ib = perm[:n], perm[n:]
        cross = dists[np.ix_(ia, ib)].mean()
        within_a = dists[np.ix_(ia, ia)].sum() / (n * (n - 1))
        within_b = dists[np.ix_(ib, ib)].sum() / (m * (m - 1))
        stats[p] = 2.0 * cross - within_a - within_b
    return float(np.quantile(stats, q))


def convergence_slope(dts: Sequence[float], errors: Sequence[float]) -> float:
    """Least-squares slope of log error against log step size."""
    dts = np.asarray(dts, dtype=np.float64)
    errors = np.asarray(errors, dtype=np.float64)
    if dts.shape != errors.shape or dts.ndim != 1 or dts.shape[0] < 3:
        raise ValueError("need matching 1-d sequences of length >= 3")
    if np.any(dts <= 0) or np.any(errors <= 0):
        raise ValueError("step sizes and errors must be positive for a log-log fit")
    return float(np.polyfit(np.log(dts), np.log(errors), 1)[0])
