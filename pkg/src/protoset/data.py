"""Synthetic media-set generation, set balancing, pair sampling, and text I/O.

Dataset file format (one file per dataset):

    PSET v1 dim=<d>
    <subject_id> <set_id> <media_id> <modality> <v_1> ... <v_d> [#mode=<m>]

modality is 0 for a still image and 1 for a video frame. The trailing #mode
token records the planted mixture component a medium was drawn from and is
optional per set. Pair files hold one `<set_id_a> <set_id_b> <label>` triple
per line with label 0 for genuine (same subject) and 1 for imposter.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DomainError, FormatError, ParseError

MODALITIES = ("image", "video_frame")

GENUINE = 0
IMPOSTER = 1


@dataclass(eq=False)
class MediaFeature:
    """One media item: a raw feature vector plus identity bookkeeping."""

    media_id: int
    modality: str
    vector: np.ndarray

    def __post_init__(self):
        if self.modality not in MODALITIES:
            raise DomainError(f"unknown modality {self.modality!r}")
        self.vector = np.asarray(self.vector, dtype=np.float64)
        if self.vector.ndim != 1:
            raise DomainError("media vector must be one-dimensional")


@dataclass(eq=False)
class MediaSet:
    """An unordered collection of media belonging to one subject."""

    set_id: int
    subject_id: int
    media: list[MediaFeature]
    planted_mode: list[int] | None = None

    def __post_init__(self):
        if self.planted_mode is not None and len(self.planted_mode) != len(self.media):
            raise DomainError("planted_mode length must match media count")

    def __len__(self) -> int:
        return len(self.media)

    def matrix(self) -> np.ndarray:
        """Media vectors stacked into an (n, d) array, preserving list order."""
        if not self.media:
            raise DomainError(f"set {self.set_id} has no media")
        return np.stack([m.vector for m in self.media])


@dataclass(eq=False)
class SetPair:
    """Two media sets with a ground-truth label: 0 genuine, 1 imposter."""

    a: MediaSet
    b: MediaSet
    label: int

    def __post_init__(self):
        if self.label not in (GENUINE, IMPOSTER):
            raise DomainError(f"pair label must be 0 or 1, got {self.label}")
        same = self.a.subject_id == self.b.subject_id
        if same != (self.label == GENUINE):
            raise DomainError(
                f"label {self.label} inconsistent with subjects "
                f"{self.a.subject_id} and {self.b.subject_id}"
            )


@dataclass(eq=False)
class Dataset:
    """A collection of media sets sharing one raw feature dimension."""

    dim: int
    sets: list[MediaSet] = field(default_factory=list)

    def set_by_id(self, set_id: int) -> MediaSet:
        for s in self.sets:
            if s.set_id == set_id:
                return s
        raise DomainError(f"no set with id {set_id}")

    def subjects(self) -> list[int]:
        """Distinct subject ids in first-appearance order."""
        seen: dict[int, None] = {}
        for s in self.sets:
            seen.setdefault(s.subject_id, None)
        return list(seen)

    def sets_for(self, subject_id: int) -> list[MediaSet]:
        return [s for s in self.sets if s.subject_id == subject_id]


@dataclass
class SynthConfig:
    """Parameters for the planted multi-mode generator (one set per subject)."""

    n_subjects: int = 20
    modes_per_subject: int = 3
    media_range: tuple[int, int] = (12, 24)
    dim: int = 16
    mode_noise: float = 0.05
    mode_offset: float = 0.5
    seed: int = 0

    def validate(self) -> None:
        if self.n_subjects < 1:
            raise ConfigError("n_subjects must be at least 1")
        if self.modes_per_subject < 1:
            raise ConfigError("modes_per_subject must be at least 1")
        lo, hi = self.media_range
        if lo < 1 or hi < lo:
            raise ConfigError(f"media_range {self.media_range} must satisfy 1 <= lo <= hi")
        if self.dim < 1:
            raise ConfigError("dim must be at least 1")
        if self.mode_noise < 0 or self.mode_offset < 0:
            raise ConfigError("mode_noise and mode_offset must be non-negative")


def _unit(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    if n == 0.0:
        raise DomainError("cannot normalize a zero vector")
    return v / n


def generate_synthetic(cfg: SynthConfig) -> Dataset:
    """Draw a dataset where each subject's media cluster around planted modes.

    A subject is a random unit direction; each of its modes is the renormalized
    sum of that direction and a scaled Gaussian offset; each medium is its mode
    plus isotropic noise. Deterministic for a fixed config.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    ds = Dataset(dim=cfg.dim)
    media_id = 0
    for subject in range(cfg.n_subjects):
        center = _unit(rng.standard_normal(cfg.dim))
        modes = np.stack(
            [
                _unit(center + cfg.mode_offset * rng.standard_normal(cfg.dim))
                for _ in range(cfg.modes_per_subject)
            ]
        )
        lo, hi = cfg.media_range
        n_media = int(rng.integers(lo, hi + 1))
        assigned = rng.integers(0, cfg.modes_per_subject, size=n_media)
        media = []
        for mode_idx in assigned:
            vec = modes[mode_idx] + cfg.mode_noise * rng.standard_normal(cfg.dim)
            modality = MODALITIES[int(rng.integers(0, 2))]
            media.append(MediaFeature(media_id, modality, vec))
            media_id += 1
        ds.sets.append(
            MediaSet(
                set_id=subject,
                subject_id=subject,
                media=media,
                planted_mode=[int(m) for m in assigned],
            )
        )
    return ds


def balance_set(
    s: MediaSet, r: int, jitter: float = 0.01, rng: np.random.Generator | None = None
) -> MediaSet:
    """Return a copy of `s` with exactly `r` media.

    Oversized sets are subsampled uniformly without replacement (original order
    kept); undersized sets keep every original and append uniformly resampled
    duplicates with additive Gaussian jitter. With jitter 0 the duplicates are
    exact copies. `r = len(s)` is the identity.
    """
    if r <= 0:
        raise DomainError(f"target size must be positive, got {r}")
    if len(s) == 0:
        raise DomainError(f"set {s.set_id} has no media")
    if jitter < 0:
        raise DomainError("jitter must be non-negative")
    if rng is None:
        rng = np.random.default_rng()
    modes = s.planted_mode
    if len(s) == r:
        return MediaSet(s.set_id, s.subject_id, list(s.media), None if modes is None else list(modes))
    if len(s) > r:
        keep = np.sort(rng.choice(len(s), size=r, replace=False))
        media = [s.media[i] for i in keep]
        kept_modes = None if modes is None else [modes[i] for i in keep]
        return MediaSet(s.set_id, s.subject_id, media, kept_modes)
    media = list(s.media)
    new_modes = None if modes is None else list(modes)
    for i in rng.integers(0, len(s), size=r - len(s)):
        src = s.media[i]
        vec = src.vector + jitter * rng.standard_normal(src.vector.shape[0])
        media.append(MediaFeature(src.media_id, src.modality, vec))
        if new_modes is not None:
            new_modes.append(modes[i])
    return MediaSet(s.set_id, s.subject_id, media, new_modes)


def _split_set(s: MediaSet, rng: np.random.Generator, fresh_id: int) -> tuple[MediaSet, MediaSet]:
    # Disjoint random halves of one set, tagged with ephemeral negative ids.
    perm = rng.permutation(len(s))
    cut = (len(s) + 1) // 2
    halves = []
    for part, sid in ((perm[:cut], fresh_id), (perm[cut:], fresh_id - 1)):
        idx = np.sort(part)
        media = [s.media[i] for i in idx]
        modes = None if s.planted_mode is None else [s.planted_mode[i] for i in idx]
        halves.append(MediaSet(sid, s.subject_id, media, modes))
    return halves[0], halves[1]


def sample_pairs(
    ds: Dataset,
    n_pairs: int,
    genuine_fraction: float = 0.5,
    rng: np.random.Generator | None = None,
) -> list[SetPair]:
    """Sample labeled set pairs from a dataset.

    Genuine pairs use two sets of one subject when available, otherwise two
    disjoint halves of a single set (at least 2 media). Imposter pairs use sets
    of two distinct subjects. The requested genuine fraction is met to within
    rounding.
    """
    if n_pairs < 0:
        raise DomainError("n_pairs must be non-negative")
    if not 0.0 <= genuine_fraction <= 1.0:
        raise DomainError("genuine_fraction must lie in [0, 1]")
    if rng is None:
        rng = np.random.default_rng()
    n_genuine = int(round(genuine_fraction * n_pairs))
    n_imposter = n_pairs - n_genuine

    by_subject: dict[int, list[MediaSet]] = {}
    for s in ds.sets:
        by_subject.setdefault(s.subject_id, []).append(s)
    subjects = list(by_subject)
    eligible = [
        sid
        for sid, sets in by_subject.items()
        if len(sets) >= 2 or any(len(s) >= 2 for s in sets)
    ]
    if n_genuine > 0 and not eligible:
        raise DomainError("no subject supports a genuine pair")
    if n_imposter > 0 and len(subjects) < 2:
        raise DomainError("imposter pairs need at least two subjects")

    pairs: list[SetPair] = []
    fresh_id = -1
    for _ in range(n_genuine):
        sid = eligible[int(rng.integers(0, len(eligible)))]
        sets = by_subject[sid]
        if len(sets) >= 2:
            i, j = rng.choice(len(sets), size=2, replace=False)
            pairs.append(SetPair(sets[int(i)], sets[int(j)], GENUINE))
        else:
            splittable = [s for s in sets if len(s) >= 2]
            src = splittable[int(rng.integers(0, len(splittable)))]
            a, b = _split_set(src, rng, fresh_id)
            fresh_id -= 2
            pairs.append(SetPair(a, b, GENUINE))
    for _ in range(n_imposter):
        i, j = rng.choice(len(subjects), size=2, replace=False)
        sa = by_subject[subjects[int(i)]]
        sb = by_subject[subjects[int(j)]]
        a = sa[int(rng.integers(0, len(sa)))]
        b = sb[int(rng.integers(0, len(sb)))]
        pairs.append(SetPair(a, b, IMPOSTER))
    order = rng.permutation(len(pairs))
    return [pairs[i] for i in order]


def save_dataset(ds: Dataset, path: str | Path) -> None:
    """Write a dataset in the PSET v1 text format (floats via repr, exact round-trip)."""
    lines = [f"PSET v1 dim={ds.dim}"]
    for s in ds.sets:
        for i, m in enumerate(s.media):
            if m.vector.shape[0] != ds.dim:
                raise FormatError(
                    f"media {m.media_id} has dim {m.vector.shape[0]}, dataset has {ds.dim}"
                )
            tokens = [
                str(s.subject_id),
                str(s.set_id),
                str(m.media_id),
                str(MODALITIES.index(m.modality)),
            ]
            tokens += [repr(float(v)) for v in m.vector]
            if s.planted_mode is not None:
                tokens.append(f"#mode={s.planted_mode[i]}")
            lines.append(" ".join(tokens))
    Path(path).write_text("\n".join(lines) + "\n")


def load_dataset(path: str | Path) -> Dataset:
    """Read a PSET v1 file; raises ParseError/FormatError naming the bad line."""
    path = Path(path)
    raw = path.read_text().splitlines()
    if not raw:
        raise FormatError(f"{path}: empty file, expected PSET v1 header")
    header = raw[0].split()
    if len(header) != 3 or header[0] != "PSET" or header[1] != "v1" or not header[2].startswith("dim="):
        raise FormatError(f"{path}: line 1: bad header {raw[0]!r}")
    try:
        dim = int(header[2][4:])
    except ValueError:
        raise FormatError(f"{path}: line 1: bad dim in header {raw[0]!r}") from None
    if dim < 1:
        raise FormatError(f"{path}: line 1: dim must be positive")

    order: list[int] = []
    subject_of: dict[int, int] = {}
    media_of: dict[int, list[MediaFeature]] = {}
    modes_of: dict[int, list[int | None]] = {}
    seen_media: set[int] = set()
    for lineno, line in enumerate(raw[1:], start=2):
        if not line.strip():
            continue
        tokens = line.split()
        mode: int | None = None
        if tokens and tokens[-1].startswith("#mode="):
            try:
                mode = int(tokens[-1][6:])
            except ValueError:
                raise ParseError(f"{path}: line {lineno}: bad mode tag {tokens[-1]!r}") from None
            tokens = tokens[:-1]
        if len(tokens) < 4 + dim:
            raise ParseError(
                f"{path}: line {lineno}: truncated record, expected {4 + dim} fields, got {len(tokens)}"
            )
        if len(tokens) > 4 + dim:
            raise FormatError(
                f"{path}: line {lineno}: record carries {len(tokens) - 4} coordinates, dataset dim is {dim}"
            )
        try:
            subject_id, set_id, media_id, modality_code = (int(t) for t in tokens[:4])
            vector = np.array([float(t) for t in tokens[4:]], dtype=np.float64)
        except ValueError:
            raise ParseError(f"{path}: line {lineno}: non-numeric field") from None
        if modality_code not in (0, 1):
            raise ParseError(f"{path}: line {lineno}: modality must be 0 or 1")
        if media_id in seen_media:
            raise FormatError(f"{path}: line {lineno}: duplicate media id {media_id}")
        seen_media.add(media_id)
        if set_id in subject_of:
            if subject_of[set_id] != subject_id:
                raise FormatError(
                    f"{path}: line {lineno}: set {set_id} reassigned to subject {subject_id}"
                )
        else:
            subject_of[set_id] = subject_id
            order.append(set_id)
            media_of[set_id] = []
            modes_of[set_id] = []
        media_of[set_id].append(MediaFeature(media_id, MODALITIES[modality_code], vector))
        modes_of[set_id].append(mode)

    ds = Dataset(dim=dim)
    for set_id in order:
        modes = modes_of[set_id]
        with_mode = [m for m in modes if m is not None]
        if with_mode and len(with_mode) != len(modes):
            raise FormatError(f"{path}: set {set_id} mixes tagged and untagged media")
        ds.sets.append(
            MediaSet(
                set_id,
                subject_of[set_id],
                media_of[set_id],
                with_mode if with_mode else None,
            )
        )
    return ds


def save_pairs(pairs: list[SetPair], path: str | Path) -> None:
    """Write pairs as `<set_id_a> <set_id_b> <label>` lines."""
    lines = [f"{p.a.set_id} {p.b.set_id} {p.label}" for p in pairs]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def load_pairs(path: str | Path, ds: Dataset) -> list[SetPair]:
    """Resolve a pairs file against a dataset; unresolvable ids are parse errors."""
    path = Path(path)
    pairs = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        tokens = line.split()
        if len(tokens) != 3:
            raise ParseError(f"{path}: line {lineno}: expected 3 fields, got {len(tokens)}")
        try:
            ia, ib, label = (int(t) for t in tokens)
        except ValueError:
            raise ParseError(f"{path}: line {lineno}: non-integer field") from None
        try:
            a, b = ds.set_by_id(ia), ds.set_by_id(ib)
        except DomainError as exc:
            raise ParseError(f"{path}: line {lineno}: {exc}") from None
        try:
            pairs.append(SetPair(a, b, label))
        except DomainError as exc:
            raise FormatError(f"{path}: line {lineno}: {exc}") from None
    return pairs
