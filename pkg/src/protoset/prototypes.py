"""Prototype discovery over an encoded set.

A small head on top of the encoder predicts, for every medium, a soft
assignment over k prototype slots. Row-normalized assignments weight a table
of per-slot feature gates; each medium's encoding is linearly transformed,
gated, and projected to unit length. The partition cost tr(Z~^T D Z~) rewards
assignments that group media which are close in the reconstructed space: for
hard assignments it is exactly the sum of squared distances between same-slot
media, i.e. the complement of a dense-subgraph objective on the affinity
graph.

All backward functions return analytic gradients; tests audit them against
central finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DomainError, ShapeError

ROW_SUM_FLOOR = 1e-8
NORM_FLOOR = 1e-12

_distance_evals = 0


def distance_evals() -> int:
    """Running count of scalar distance evaluations since the last reset."""
    return _distance_evals


def reset_distance_evals() -> None:
    global _distance_evals
    _distance_evals = 0


@dataclass(eq=False)
class PrototypeParams:
    """predictor (d, k) assignment weights, transform (d, d), gate_logits (k, d)."""

    predictor: np.ndarray
    transform: np.ndarray
    gate_logits: np.ndarray

    def __post_init__(self):
        d, k = self.predictor.shape
        if self.transform.shape != (d, d):
            raise ShapeError(f"transform must be ({d}, {d}), got {self.transform.shape}")
        if self.gate_logits.shape != (k, d):
            raise ShapeError(f"gate_logits must be ({k}, {d}), got {self.gate_logits.shape}")

    @property
    def d(self) -> int:
        return self.predictor.shape[0]

    @property
    def k(self) -> int:
        return self.predictor.shape[1]


def init_prototypes(
    d: int, k: int, rng: np.random.Generator, std: float = 1e-3
) -> PrototypeParams:
    """Gaussian predictor and transform; gate logits start at zero (gates half-open)."""
    if d < 1 or k < 1:
        raise ConfigError(f"need d >= 1 and k >= 1, got d={d}, k={k}")
    return PrototypeParams(
        predictor=std * rng.standard_normal((d, k)),
        transform=std * rng.standard_normal((d, d)),
        gate_logits=np.zeros((k, d)),
    )


@dataclass(eq=False)
class PrototypeAssignment:
    """Per-medium slot scores: raw sigmoid outputs and their row-normalized form."""

    raw: np.ndarray
    norm: np.ndarray


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def predict_assignment(params: PrototypeParams, feats: np.ndarray) -> PrototypeAssignment:
    """Soft slot assignment for each encoded medium.

    Raw scores are sigmoid(F W); rows are normalized to sum to one with the
    sum floored at ROW_SUM_FLOOR. A zero predictor yields raw scores of 0.5
    and a uniform normalized assignment.
    """
    feats = np.asarray(feats, dtype=np.float64)
    if feats.ndim != 2 or feats.shape[1] != params.d:
        raise ShapeError(f"expected (n, {params.d}) features, got {feats.shape}")
    raw = _sigmoid(feats @ params.predictor)
    denom = np.maximum(raw.sum(axis=1, keepdims=True), ROW_SUM_FLOOR)
    return PrototypeAssignment(raw=raw, norm=raw / denom)


def predict_assignment_backward(
    params: PrototypeParams,
    feats: np.ndarray,
    assign: PrototypeAssignment,
    d_norm: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Gradient of a scalar loss through predict_assignment.

    Takes d(loss)/d(norm) and returns (d_feats, d_predictor).
    """
    raw = assign.raw
    sums = raw.sum(axis=1, keepdims=True)
    denom = np.maximum(sums, ROW_SUM_FLOOR)
    live = sums >= ROW_SUM_FLOOR
    d_raw = d_norm / denom
    d_raw -= np.where(live, (d_norm * assign.norm).sum(axis=1, keepdims=True) / denom, 0.0)
    d_logits = d_raw * raw * (1.0 - raw)
    return d_logits @ params.predictor.T, feats.T @ d_logits


def reconstruct_forward(
    params: PrototypeParams, feats: np.ndarray, assign_norm: np.ndarray
) -> tuple[np.ndarray, dict]:
    """Gated, transformed, unit-normalized features; returns (Fhat, cache).

    Each medium's gate vector is its normalized assignment times the sigmoid
    gate table, so media sharing slots share gates. With identity transform
    and fully-open gates this reduces to plain unit normalization.
    """
    feats = np.asarray(feats, dtype=np.float64)
    if assign_norm.shape != (feats.shape[0], params.k):
        raise ShapeError(
            f"assignment {assign_norm.shape} does not match {feats.shape[0]} media x {params.k} slots"
        )
    gate_table = _sigmoid(params.gate_logits)
    gates = assign_norm @ gate_table
    transformed = feats @ params.transform
    v = gates * transformed
    raw_norm = np.linalg.norm(v, axis=1, keepdims=True)
    r = np.maximum(raw_norm, NORM_FLOOR)
    fhat = v / r
    cache = {
        "feats": feats,
        "assign_norm": assign_norm,
        "gate_table": gate_table,
        "gates": gates,
        "transformed": transformed,
        "raw_norm": raw_norm,
        "r": r,
        "fhat": fhat,
    }
    return fhat, cache


def reconstruct_backward(
    params: PrototypeParams, cache: dict, d_fhat: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Gradients through reconstruct_forward.

    Returns (d_feats, d_assign_norm, d_transform, d_gate_logits).
    """
    fhat, r = cache["fhat"], cache["r"]
    live = cache["raw_norm"] >= NORM_FLOOR
    d_v = d_fhat / r
    d_v -= np.where(live, (d_fhat * fhat).sum(axis=1, keepdims=True) * fhat / r, 0.0)
    d_gates = d_v * cache["transformed"]
    d_transformed = d_v * cache["gates"]
    d_assign = d_gates @ cache["gate_table"].T
    d_table = cache["assign_norm"].T @ d_gates
    d_gate_logits = d_table * cache["gate_table"] * (1.0 - cache["gate_table"])
    d_transform = cache["feats"].T @ d_transformed
    d_feats = d_transformed @ params.transform.T
    return d_feats, d_assign, d_transform, d_gate_logits


def pairwise_distances(fa: np.ndarray, fb: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances between rows of fa (n, d) and fb (m, d)."""
    global _distance_evals
    fa = np.asarray(fa, dtype=np.float64)
    fb = np.asarray(fb, dtype=np.float64)
    if fa.ndim != 2 or fb.ndim != 2 or fa.shape[1] != fb.shape[1]:
        raise ShapeError(f"incompatible shapes {fa.shape} and {fb.shape}")
    diff = fa[:, None, :] - fb[None, :, :]
    _distance_evals += fa.shape[0] * fb.shape[0]
    return np.einsum("ijd,ijd->ij", diff, diff)


def pairwise_distances_backward(
    fa: np.ndarray, fb: np.ndarray, d_dist: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of a scalar loss through pairwise_distances.

    When fa and fb are the same matrix, add the two returned gradients.
    """
    row = d_dist.sum(axis=1, keepdims=True)
    col = d_dist.sum(axis=0)[:, None]
    d_fa = 2.0 * (row * fa - d_dist @ fb)
    d_fb = 2.0 * (col * fb - d_dist.T @ fa)
    return d_fa, d_fb


def partition_cost(assign_norm: np.ndarray, dists: np.ndarray) -> float:
    """tr(Z~^T D Z~): distance mass kept inside shared prototype slots.

    Counts ordered pairs; both (i, j) and (j, i) contribute. Zero for hard
    assignments that never co-locate distant media.
    """
    n, k = assign_norm.shape
    if dists.shape != (n, n):
        raise ShapeError(f"distance matrix {dists.shape} does not match {n} media")
    return float(np.sum(assign_norm * (dists @ assign_norm)))


def partition_cost_backward(
    assign_norm: np.ndarray, dists: np.ndarray, upstream: float = 1.0
) -> tuple[np.ndarray, np.ndarray]:
    """Returns (d_assign_norm, d_dists) for the partition cost."""
    d_assign = upstream * ((dists + dists.T) @ assign_norm)
    d_dists = upstream * (assign_norm @ assign_norm.T)
    return d_assign, d_dists


def harden(assign_norm: np.ndarray) -> np.ndarray:
    """Argmax slot per row; ties resolve to the smallest slot index."""
    if assign_norm.ndim != 2 or assign_norm.shape[0] == 0:
        raise ShapeError("harden expects a non-empty (n, k) assignment")
    return np.argmax(assign_norm, axis=1)


def affinity(dists: np.ndarray, delta: float) -> np.ndarray:
    """Gaussian affinity exp(-d / delta^2) from squared distances."""
    if delta <= 0:
        raise DomainError(f"bandwidth must be positive, got {delta}")
    return np.exp(-np.asarray(dists, dtype=np.float64) / (delta * delta))


def median_bandwidth(dists: np.ndarray) -> float:
    """Median off-diagonal distance turned into an affinity bandwidth."""
    d = np.asarray(dists, dtype=np.float64)
    off = d[~np.eye(d.shape[0], dtype=bool)]
    if off.size == 0:
        raise DomainError("need at least two media for a median bandwidth")
    med = float(np.median(off))
    if med <= 0:
        raise DomainError("median off-diagonal distance is not positive")
    return float(np.sqrt(med))


def project_rows_to_simplex(y: np.ndarray) -> np.ndarray:
    """Euclidean projection of each row onto the probability simplex."""
    n, k = y.shape
    u = np.sort(y, axis=1)[:, ::-1]
    css = np.cumsum(u, axis=1) - 1.0
    ind = np.arange(1, k + 1)
    rho = np.count_nonzero(u - css / ind > 0, axis=1)
    theta = css[np.arange(n), rho - 1] / rho
    return np.maximum(y - theta[:, None], 0.0)


def minimize_partition_cost(
    dists: np.ndarray,
    k: int,
    iters: int = 300,
    restarts: int = 8,
    seed: int = 0,
) -> tuple[np.ndarray, float, np.ndarray]:
    """Projected gradient descent on the relaxed partition cost, then harden.

    Rows of the assignment live on the probability simplex. Returns (labels,
    hardened cost, best relaxed assignment); deterministic for a fixed seed.
    """
    dists = np.asarray(dists, dtype=np.float64)
    n = dists.shape[0]
    if dists.ndim != 2 or dists.shape != (n, n):
        raise ShapeError(f"distance matrix must be square, got {dists.shape}")
    if k < 1:
        raise DomainError(f"need at least one slot, got k={k}")
    if iters < 1 or restarts < 1:
        raise DomainError("iters and restarts must be positive")
    rng = np.random.default_rng(seed)
    sym = dists + dists.T
    lip = float(np.abs(sym).sum(axis=1).max())
    step = 1.0 / lip if lip > 0 else 1.0

    best_labels, best_value, best_z = None, np.inf, None
    for restart in range(restarts):
        if restart == 0:
            z = np.full((n, k), 1.0 / k) + 1e-3 * rng.standard_normal((n, k))
        else:
            z = rng.uniform(size=(n, k))
        z = project_rows_to_simplex(z)
        for _ in range(iters):
            z = project_rows_to_simplex(z - step * (sym @ z))
        labels = harden(z)
        onehot = np.zeros((n, k))
        onehot[np.arange(n), labels] = 1.0
        value = partition_cost(onehot, dists)
        if value < best_value:
            best_labels, best_value, best_z = labels, value, z
    return best_labels, best_value, best_z
