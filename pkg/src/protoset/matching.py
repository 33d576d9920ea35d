"""Set-pair scoring: softmax-weighted match energy and the pair ranking loss.

The energy of a cross-set distance matrix is a smooth proxy for its maximum:
a softmax-weighted average with sharpness beta. Genuine pairs are pushed to
low energy, imposter pairs to energy above a margin. Scoring can run at media
level (every medium against every medium, faithful to training) or at
prototype level (pooled representatives, the cheap inference path).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from .data import MediaSet
from .errors import DomainError, ShapeError
from .model import Model, set_forward
from .prototypes import NORM_FLOOR, pairwise_distances

Mode = Literal["media", "proto"]
MODES = ("media", "proto")


@dataclass(eq=False)
class MatchEnergy:
    """Scalar pair energy with the sharpness and scoring mode that produced it."""

    value: float
    beta: float
    mode: str = "media"


def energy(dists: np.ndarray, beta: float, mode: str = "media") -> MatchEnergy:
    """Softmax-weighted average distance: E = sum d_ij e^(beta d_ij) / sum e^(beta d_ij).

    beta = 0 is the plain mean; beta -> infinity approaches the maximum.
    Computed with a max-shift so large beta cannot overflow.
    """
    d = np.asarray(dists, dtype=np.float64)
    if d.size == 0:
        raise DomainError("energy needs at least one distance")
    if not np.isfinite(beta):
        raise DomainError(f"beta must be finite, got {beta}")
    if mode not in MODES:
        raise DomainError(f"mode must be one of {MODES}, got {mode!r}")
    flat = d.reshape(-1)
    shifted = beta * (flat - flat.max())
    w = np.exp(shifted)
    value = float((flat * w).sum() / w.sum())
    return MatchEnergy(value=value, beta=beta, mode=mode)


def energy_backward(dists: np.ndarray, beta: float, upstream: float = 1.0) -> np.ndarray:
    """d(energy)/d(dists): w_ij (1 + beta (d_ij - E)) with softmax weights w."""
    d = np.asarray(dists, dtype=np.float64)
    flat = d.reshape(-1)
    w = np.exp(beta * (flat - flat.max()))
    w /= w.sum()
    e = float((flat * w).sum())
    grad = w * (1.0 + beta * (flat - e))
    return upstream * grad.reshape(d.shape)


def ranking_loss(e: float, label: int, tau: float) -> float:
    """Pair loss: the energy itself for genuine pairs, hinge max(0, tau - E) for imposters."""
    if label not in (0, 1):
        raise DomainError(f"label must be 0 or 1, got {label}")
    if tau < 0:
        raise DomainError(f"margin must be non-negative, got {tau}")
    if label == 0:
        return float(e)
    return float(max(0.0, tau - e))


def ranking_loss_backward(e: float, label: int, tau: float) -> float:
    """d(loss)/d(energy). On the hinge boundary e == tau the gradient is 0."""
    if label == 0:
        return 1.0
    return -1.0 if e < tau else 0.0


@dataclass(eq=False)
class PrototypeSummary:
    """Surviving prototype representatives (unit rows), their masses, slot indices."""

    representatives: np.ndarray
    masses: np.ndarray
    indices: np.ndarray


def prototype_pool(
    fhat: np.ndarray, assign_norm: np.ndarray, eps_mass: float = 0.5
) -> PrototypeSummary:
    """Pool reconstructed features into per-slot representatives.

    Slot mass is the column sum of the normalized assignment. Slots below
    eps_mass are dropped, except that the heaviest slot always survives, so
    the summary is never empty. Representatives are mass-weighted means
    projected back to unit length.
    """
    fhat = np.asarray(fhat, dtype=np.float64)
    if fhat.ndim != 2 or assign_norm.shape[0] != fhat.shape[0]:
        raise ShapeError(
            f"features {fhat.shape} and assignment {assign_norm.shape} do not align"
        )
    if fhat.shape[0] == 0:
        raise DomainError("cannot pool an empty set")
    masses = assign_norm.sum(axis=0)
    keep = masses >= eps_mass
    if not keep.any():
        keep[np.argmax(masses)] = True
    indices = np.flatnonzero(keep)
    reps = (assign_norm[:, indices].T @ fhat) / masses[indices][:, None]
    norms = np.maximum(np.linalg.norm(reps, axis=1, keepdims=True), NORM_FLOOR)
    return PrototypeSummary(representatives=reps / norms, masses=masses[indices], indices=indices)


@dataclass(eq=False)
class SetTemplate:
    """Precomputed matchable features for one set (media rows or prototype rows)."""

    features: np.ndarray
    mode: str


def prepare_set(model: Model, s: MediaSet, mode: str = "proto") -> SetTemplate:
    """Run the model over a set once and keep only what scoring needs."""
    if mode not in MODES:
        raise DomainError(f"mode must be one of {MODES}, got {mode!r}")
    fwd = set_forward(model, s.matrix())
    if mode == "media":
        return SetTemplate(features=fwd.fhat, mode=mode)
    summary = prototype_pool(fwd.fhat, fwd.assign.norm, model.eps_mass)
    return SetTemplate(features=summary.representatives, mode=mode)


def score_templates(ta: SetTemplate, tb: SetTemplate, beta: float) -> float:
    """Match score between two prepared templates: negated energy, higher is better."""
    if ta.mode != tb.mode:
        raise DomainError(f"cannot score across modes {ta.mode!r} and {tb.mode!r}")
    dists = pairwise_distances(ta.features, tb.features)
    return -energy(dists, beta, mode=ta.mode).value


def match_sets(a: MediaSet, b: MediaSet, model: Model, mode: str = "proto",
               beta: float | None = None) -> float:
    """End-to-end score for two raw media sets; symmetric in its arguments."""
    if beta is None:
        beta = model.beta
    return score_templates(prepare_set(model, a, mode), prepare_set(model, b, mode), beta)
