"""Independent references the learned partitioner is audited against.

Exhaustive enumeration gives the exact optimum of the hard partition cost on
tiny instances; k-means gives a classical clustering baseline; the adjusted
Rand index compares any two labelings. Nothing here shares code with the
gradient-trained path.
"""

from __future__ import annotations

import itertools
import math
from pathlib import Path

import numpy as np

from .errors import CapacityError, DomainError, ParseError, ShapeError

BRUTE_FORCE_CAP = 12


def brute_force_partition(
    dists: np.ndarray, k: int, cap: int = BRUTE_FORCE_CAP
) -> tuple[np.ndarray, float]:
    """Exact minimizer of the hard partition cost by enumerating all labelings.

    The cost of a labeling is the sum of d_ij over ordered same-label pairs,
    matching partition_cost on a one-hot assignment. The first medium's label
    is fixed to 0 (costs are label-permutation invariant), and ties resolve
    to the lexicographically smallest labeling. Instances larger than `cap`
    raise CapacityError.
    """
    d = np.asarray(dists, dtype=np.float64)
    n = d.shape[0]
    if d.ndim != 2 or d.shape != (n, n):
        raise ShapeError(f"distance matrix must be square, got {d.shape}")
    if n == 0:
        raise DomainError("cannot partition an empty instance")
    if k < 1:
        raise DomainError(f"need at least one part, got k={k}")
    if n > cap:
        raise CapacityError(
            f"{n} media exceeds the enumeration cap of {cap} ({k}^{n - 1} labelings)"
        )
    best_labels, best_value = None, math.inf
    labels = np.empty(n, dtype=np.int64)
    labels[0] = 0
    for rest in itertools.product(range(k), repeat=n - 1):
        labels[1:] = rest
        same = labels[:, None] == labels[None, :]
        value = float(d[same].sum())
        if value < best_value:
            best_labels, best_value = labels.copy(), value
    return best_labels, best_value


def kmeans(
    x: np.ndarray, k: int, seed: int = 0, max_iters: int = 100
) -> tuple[np.ndarray, np.ndarray]:
    """Lloyd's algorithm with k-means++ seeding; returns (labels, centers).

    Converges when assignments stop changing, with a hard iteration cap.
    Ties in assignment go to the lowest center index; a cluster left empty
    keeps its previous center. Deterministic for a fixed seed.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"expected (n, d) points, got {x.shape}")
    n = x.shape[0]
    if k < 1:
        raise DomainError(f"need at least one cluster, got k={k}")
    if n < k:
        raise DomainError(f"cannot place {k} clusters on {n} points")
    rng = np.random.default_rng(seed)

    centers = np.empty((k, x.shape[1]))
    centers[0] = x[int(rng.integers(0, n))]
    closest = ((x - centers[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = closest.sum()
        if total > 0:
            idx = int(rng.choice(n, p=closest / total))
        else:
            idx = int(rng.integers(0, n))
        centers[j] = x[idx]
        closest = np.minimum(closest, ((x - centers[j]) ** 2).sum(axis=1))

    labels = np.full(n, -1, dtype=np.int64)
    for _ in range(max_iters):
        d2 = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_labels = np.argmin(d2, axis=1)
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for j in range(k):
            members = x[labels == j]
            if members.shape[0] > 0:
                centers[j] = members.mean(axis=0)
    return labels, centers


def ari(p: np.ndarray, q: np.ndarray) -> float:
    """Adjusted Rand index between two labelings of the same items.

    Computed from the contingency table; 1.0 for identical partitions up to
    relabeling, ~0 for independent ones. When the adjustment denominator is
    zero (both partitions trivial in the same way) the index is 1.0.
    """
    p = np.asarray(p).ravel()
    q = np.asarray(q).ravel()
    if p.shape != q.shape:
        raise ShapeError(f"labelings differ in length: {p.shape} vs {q.shape}")
    n = p.size
    if n == 0:
        raise DomainError("cannot compare empty labelings")
    _, pi = np.unique(p, return_inverse=True)
    _, qi = np.unique(q, return_inverse=True)
    table = np.zeros((pi.max() + 1, qi.max() + 1), dtype=np.int64)
    np.add.at(table, (pi, qi), 1)

    def pairs(counts: np.ndarray) -> int:
        return sum(math.comb(int(c), 2) for c in counts.ravel())

    index = pairs(table)
    sum_a = pairs(table.sum(axis=1))
    sum_b = pairs(table.sum(axis=0))
    total = math.comb(n, 2)
    expected = sum_a * sum_b / total if total else 0.0
    maximum = (sum_a + sum_b) / 2.0
    if maximum == expected:
        return 1.0
    return float((index - expected) / (maximum - expected))


def load_distance_csv(path: str | Path) -> np.ndarray:
    """Read a square, symmetric, non-negative distance matrix from plain CSV."""
    path = Path(path)
    try:
        d = np.loadtxt(path, delimiter=",", ndmin=2, dtype=np.float64)
    except (OSError, ValueError) as exc:
        raise ParseError(f"{path}: not a numeric CSV matrix: {exc}") from None
    if d.ndim != 2 or d.shape[0] != d.shape[1]:
        raise DomainError(f"{path}: matrix must be square, got {d.shape}")
    if not np.isfinite(d).all():
        raise DomainError(f"{path}: matrix contains non-finite entries")
    if (d < 0).any():
        raise DomainError(f"{path}: distances must be non-negative")
    if not np.allclose(d, d.T, atol=1e-8):
        raise DomainError(f"{path}: matrix is not symmetric")
    return d
