"""Verification and identification metrics over set-pair scores.

Thresholds are always drawn from the observed scores plus a sentinel above
the maximum: the reported operating point is the smallest candidate whose
false accept (or positive identification) rate is at or below the target,
with ties at the threshold counting as accepts. All rates are plain
fractions; scores are higher-is-better.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import MediaSet, SetPair
from .errors import ConfigError, DomainError, ShapeError
from .matching import prepare_set, score_templates
from .model import Model

THREADS_ENV = "PROTO_SET_THREADS"


def worker_threads() -> int:
    """Worker-thread cap for batch scoring, from PROTO_SET_THREADS (default 1)."""
    raw = os.environ.get(THREADS_ENV)
    if raw is None:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"{THREADS_ENV} must be at least 1, got {n}")
    return n


@dataclass(eq=False)
class ScoreSample:
    """One scored comparison with its ground truth."""

    score: float
    genuine: bool


@dataclass(eq=False)
class MetricReport:
    """Operating-point metrics plus full curves for plotting."""

    tar_at_far: dict[float, float] = field(default_factory=dict)
    auc: float | None = None
    fnir_at_fpir: dict[float, float] = field(default_factory=dict)
    rank_n: dict[int, float] = field(default_factory=dict)
    roc_curve: tuple[np.ndarray, np.ndarray] | None = None
    cmc_curve: tuple[np.ndarray, np.ndarray] | None = None

    def summary(self) -> dict:
        """Plain nested dict (stringified keys) for JSON output."""
        out: dict = {}
        if self.tar_at_far:
            out["tar_at_far"] = {repr(k): v for k, v in sorted(self.tar_at_far.items())}
        if self.auc is not None:
            out["auc"] = self.auc
        if self.fnir_at_fpir:
            out["fnir_at_fpir"] = {repr(k): v for k, v in sorted(self.fnir_at_fpir.items())}
        if self.rank_n:
            out["rank_n"] = {str(k): v for k, v in sorted(self.rank_n.items())}
        return out


def _smallest_feasible(candidates: np.ndarray, neg_sorted: np.ndarray, rate: float) -> float:
    # First candidate (ascending) whose fraction of negatives >= it is <= rate.
    counts = neg_sorted.size - np.searchsorted(neg_sorted, candidates, side="left")
    feasible = counts / neg_sorted.size <= rate
    return float(candidates[int(np.argmax(feasible))])


def verification_metrics(
    samples: list[ScoreSample], far_points: tuple[float, ...] = (1e-1, 1e-2, 1e-3)
) -> MetricReport:
    """TAR at the requested FAR points plus the trapezoidal ROC AUC.

    Needs at least one genuine and one imposter sample, finite scores, and
    FAR targets in [0, 1].
    """
    gen = np.array([s.score for s in samples if s.genuine], dtype=np.float64)
    imp = np.array([s.score for s in samples if not s.genuine], dtype=np.float64)
    if gen.size == 0 or imp.size == 0:
        raise DomainError("verification needs both genuine and imposter samples")
    if not (np.isfinite(gen).all() and np.isfinite(imp).all()):
        raise DomainError("scores must be finite")
    for x in far_points:
        if not 0.0 <= x <= 1.0:
            raise DomainError(f"FAR target {x} outside [0, 1]")

    all_scores = np.concatenate([gen, imp])
    candidates = np.unique(all_scores)
    candidates = np.append(candidates, candidates[-1] + 1.0)
    imp_sorted = np.sort(imp)
    gen_sorted = np.sort(gen)

    report = MetricReport()
    for x in far_points:
        t = _smallest_feasible(candidates, imp_sorted, x)
        tar = (gen_sorted.size - np.searchsorted(gen_sorted, t, side="left")) / gen_sorted.size
        report.tar_at_far[float(x)] = float(tar)

    # Sweep thresholds from high to low: both rates are then non-decreasing,
    # which is the path the trapezoid rule must integrate along.
    sweep = candidates[::-1]
    far_curve = (imp_sorted.size - np.searchsorted(imp_sorted, sweep, side="left")) / imp_sorted.size
    tar_curve = (gen_sorted.size - np.searchsorted(gen_sorted, sweep, side="left")) / gen_sorted.size
    report.roc_curve = (far_curve, tar_curve)
    report.auc = float(np.trapezoid(tar_curve, far_curve))
    return report


def score_pairs(
    pairs: list[SetPair], model: Model, mode: str = "proto", beta: float | None = None
) -> list[ScoreSample]:
    """Score labeled pairs with the model; order follows the input."""
    if beta is None:
        beta = model.beta
    out = []
    for p in pairs:
        s = score_templates(prepare_set(model, p.a, mode), prepare_set(model, p.b, mode), beta)
        out.append(ScoreSample(score=s, genuine=p.label == 0))
    return out


def score_matrix(
    gallery: list[MediaSet], probes: list[MediaSet], model: Model,
    mode: str = "proto", beta: float | None = None
) -> np.ndarray:
    """(probes, gallery) score matrix; each set is encoded exactly once.

    Probe rows are scored on a thread pool capped by PROTO_SET_THREADS.
    Results are order-stable regardless of thread count.
    """
    if beta is None:
        beta = model.beta
    t_gallery = [prepare_set(model, s, mode) for s in gallery]
    t_probes = [prepare_set(model, s, mode) for s in probes]

    def row(tp):
        return [score_templates(tp, tg, beta) for tg in t_gallery]

    threads = worker_threads()
    if threads == 1:
        rows = [row(tp) for tp in t_probes]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(row, t_probes))
    return np.asarray(rows, dtype=np.float64)


def identification_metrics_from_scores(
    scores: np.ndarray,
    gallery_subjects: np.ndarray,
    probe_subjects: np.ndarray,
    ranks: tuple[int, ...] = (1, 5, 10),
    fpir_points: tuple[float, ...] = (1e-1, 1e-2),
    top_l: int = 20,
) -> MetricReport:
    """Closed-set CMC and open-set FNIR@FPIR from a precomputed score matrix.

    A probe is mated when its subject appears in the gallery. FNIR counts a
    mated probe as missed when its best mate score falls below the threshold
    or outside the top `top_l` candidates. Needs both mated and non-mated
    probes.
    """
    scores = np.asarray(scores, dtype=np.float64)
    gallery_subjects = np.asarray(gallery_subjects)
    probe_subjects = np.asarray(probe_subjects)
    if scores.shape != (probe_subjects.size, gallery_subjects.size):
        raise ShapeError(
            f"score matrix {scores.shape} does not match {probe_subjects.size} probes "
            f"x {gallery_subjects.size} gallery entries"
        )
    if top_l < 1:
        raise DomainError(f"top_l must be at least 1, got {top_l}")
    mated = np.isin(probe_subjects, gallery_subjects)
    if not mated.any():
        raise DomainError("no mated probes: every probe subject is outside the gallery")
    if mated.all():
        raise DomainError("no non-mated probes: open-set rates are undefined")

    mate_best = np.empty(int(mated.sum()))
    mate_rank = np.empty(int(mated.sum()), dtype=np.int64)
    for i, p in enumerate(np.flatnonzero(mated)):
        mine = gallery_subjects == probe_subjects[p]
        best = scores[p, mine].max()
        mate_best[i] = best
        mate_rank[i] = 1 + int((scores[p, ~mine] > best).sum())

    report = MetricReport()
    all_ranks = np.arange(1, gallery_subjects.size + 1)
    cmc = np.array([(mate_rank <= r).mean() for r in all_ranks])
    report.cmc_curve = (all_ranks, cmc)
    for r in ranks:
        if r < 1:
            raise DomainError(f"rank targets must be at least 1, got {r}")
        report.rank_n[int(r)] = float((mate_rank <= r).mean())

    neg_best = scores[~mated].max(axis=1)
    neg_sorted = np.sort(neg_best)
    candidates = np.unique(np.concatenate([neg_best, mate_best]))
    candidates = np.append(candidates, candidates[-1] + 1.0)
    for x in fpir_points:
        if not 0.0 <= x <= 1.0:
            raise DomainError(f"FPIR target {x} outside [0, 1]")
        t = _smallest_feasible(candidates, neg_sorted, x)
        fnir = ((mate_best < t) | (mate_rank > top_l)).mean()
        report.fnir_at_fpir[float(x)] = float(fnir)
    return report


def identification_metrics(
    gallery: list[MediaSet],
    probes: list[MediaSet],
    model: Model,
    mode: str = "proto",
    ranks: tuple[int, ...] = (1, 5, 10),
    fpir_points: tuple[float, ...] = (1e-1, 1e-2),
    top_l: int = 20,
    beta: float | None = None,
) -> MetricReport:
    """Score gallery against probes with the model, then rank and threshold."""
    if not gallery:
        raise DomainError("gallery is empty")
    scores = score_matrix(gallery, probes, model, mode, beta)
    return identification_metrics_from_scores(
        scores,
        np.array([s.subject_id for s in gallery]),
        np.array([s.subject_id for s in probes]),
        ranks,
        fpir_points,
        top_l,
    )


def identification_protocol(
    ds, rng: np.random.Generator, exclude_fraction: float = 0.25
) -> tuple[list[MediaSet], list[MediaSet]]:
    """Split subjects into gallery and probe halves for open-set identification.

    For each subject, its first set with at least two media is halved at
    random: one half enrolls in the gallery, the other becomes a probe. A
    fraction of subjects (at least one, never all) skip enrollment so their
    probes are non-mated searches.
    """
    if not 0.0 < exclude_fraction < 1.0:
        raise DomainError("exclude_fraction must lie strictly between 0 and 1")
    eligible = []
    for sid in ds.subjects():
        for s in ds.sets_for(sid):
            if len(s) >= 2:
                eligible.append(s)
                break
    if len(eligible) < 2:
        raise DomainError("need at least two subjects with two or more media")
    n_excl = int(round(exclude_fraction * len(eligible)))
    n_excl = min(max(n_excl, 1), len(eligible) - 1)
    excluded = set(rng.permutation(len(eligible))[:n_excl].tolist())
    gallery, probes = [], []
    for i, s in enumerate(eligible):
        perm = rng.permutation(len(s))
        cut = (len(s) + 1) // 2
        probes.append(
            MediaSet(-(2 * i + 2), s.subject_id, [s.media[j] for j in sorted(perm[cut:])])
        )
        if i not in excluded:
            gallery.append(
                MediaSet(-(2 * i + 1), s.subject_id, [s.media[j] for j in sorted(perm[:cut])])
            )
    return gallery, probes


def export_curves(report: MetricReport, out_dir: str | Path) -> tuple[Path, Path]:
    """Write roc.csv (far,tar) and cmc.csv (rank,rate) operating points.

    Rows are the requested operating points in ascending order; re-exporting
    the same report is byte-identical.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    roc_path = out_dir / "roc.csv"
    cmc_path = out_dir / "cmc.csv"
    roc_lines = ["far,tar"]
    roc_lines += [f"{repr(k)},{repr(v)}" for k, v in sorted(report.tar_at_far.items())]
    roc_path.write_text("\n".join(roc_lines) + "\n")
    cmc_lines = ["rank,rate"]
    cmc_lines += [f"{k},{repr(v)}" for k, v in sorted(report.rank_n.items())]
    cmc_path.write_text("\n".join(cmc_lines) + "\n")
    return roc_path, cmc_path
