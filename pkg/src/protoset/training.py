"""Joint training of the encoder and prototype head on labeled set pairs.

One iteration samples a set pair, balances both sets to a fixed size, runs
the shared forward pass, and descends the joint loss

    joint = ranking + lambda * partition

with SGD plus momentum and weight decay. The ranking term acts on the
cross-set match energy; the partition term is computed within each set and
summed. All gradients are analytic; grad_check audits them coordinate-wise
against central finite differences.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import Dataset, SetPair, balance_set, sample_pairs
from .errors import ConfigError, NumericsError, ParseError
from .matching import energy, energy_backward, ranking_loss, ranking_loss_backward
from .model import Model, init_model, named_tensors, set_forward
from .encoder import encode_backward
from .prototypes import (
    pairwise_distances,
    pairwise_distances_backward,
    partition_cost,
    partition_cost_backward,
    predict_assignment_backward,
    reconstruct_backward,
)

# Config file keys, in serialization order. "lambda" is a keyword, hence lam.
CONFIG_KEYS = (
    ("r", int), ("k", int), ("beta", float), ("tau", float), ("lambda", float),
    ("lr", float), ("momentum", float), ("weight_decay", float), ("epochs", int),
    ("seed", int), ("d_in", int), ("d", int), ("hidden", int),
    ("eps_mass", float), ("jitter", float),
)
_ATTR_OF = {key: ("lam" if key == "lambda" else key) for key, _ in CONFIG_KEYS}


@dataclass
class TrainConfig:
    """Training hyperparameters; the file format covers the first 15 fields."""

    r: int = 128
    k: int = 500
    beta: float = 10.0
    tau: float = 0.8
    lam: float = 0.01
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 0.0005
    epochs: int = 1
    seed: int = 0
    d_in: int = 16
    d: int = 32
    hidden: int = 64
    eps_mass: float = 0.5
    jitter: float = 0.01
    batch_size: int = 1
    pairs_per_epoch: int = 100
    genuine_fraction: float = 0.5
    lr_drop_iter: int | None = None
    balance_mode: str = "pair"
    init_std: float = 1e-3
    alpha: float = 0.25

    @classmethod
    def desk(cls, **overrides) -> "TrainConfig":
        """Shrunken sizes for desk-scale runs: k=8, r=16, 16-wide features."""
        base = dict(r=16, k=8, d_in=16, hidden=32, d=16)
        base.update(overrides)
        return cls(**base)

    def validate(self) -> None:
        for name in ("r", "k", "epochs", "d_in", "d", "hidden", "batch_size", "pairs_per_epoch"):
            v = getattr(self, name)
            low = 0 if name == "epochs" else 1
            if v < low:
                raise ConfigError(f"{name} must be >= {low}, got {v}")
        for name in ("tau", "lam", "weight_decay", "eps_mass", "jitter", "init_std"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if self.lr < 0:
            raise ConfigError(f"lr must be non-negative, got {self.lr}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must lie in [0, 1), got {self.momentum}")
        if not 0.0 <= self.genuine_fraction <= 1.0:
            raise ConfigError("genuine_fraction must lie in [0, 1]")
        if not np.isfinite(self.beta):
            raise ConfigError(f"beta must be finite, got {self.beta}")
        if self.balance_mode not in ("pair", "epoch"):
            raise ConfigError(f"balance_mode must be 'pair' or 'epoch', got {self.balance_mode!r}")
        if self.lr_drop_iter is not None and self.lr_drop_iter < 0:
            raise ConfigError("lr_drop_iter must be non-negative when set")


def load_config(path: str | Path, base: TrainConfig | None = None) -> TrainConfig:
    """Parse a flat key=value config file over defaults (or over `base`)."""
    path = Path(path)
    cfg = copy.deepcopy(base) if base is not None else TrainConfig()
    seen = set()
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        text = line.strip()
        if not text or text.startswith("#"):
            continue
        if "=" not in text:
            raise ParseError(f"{path}: line {lineno}: expected key=value, got {text!r}")
        key, _, value = text.partition("=")
        key, value = key.strip(), value.strip()
        if key not in _ATTR_OF:
            raise ConfigError(f"{path}: line {lineno}: unknown key {key!r}")
        if key in seen:
            raise ConfigError(f"{path}: line {lineno}: duplicate key {key!r}")
        seen.add(key)
        caster = dict(CONFIG_KEYS)[key]
        try:
            setattr(cfg, _ATTR_OF[key], caster(value))
        except ValueError:
            raise ConfigError(
                f"{path}: line {lineno}: {key} needs a {caster.__name__}, got {value!r}"
            ) from None
    cfg.validate()
    return cfg


def save_config(cfg: TrainConfig, path: str | Path) -> None:
    """Write the file-format fields as key=value lines in a fixed order."""
    lines = [f"{key}={getattr(cfg, _ATTR_OF[key])!r}" if isinstance(getattr(cfg, _ATTR_OF[key]), float)
             else f"{key}={getattr(cfg, _ATTR_OF[key])}" for key, _ in CONFIG_KEYS]
    Path(path).write_text("\n".join(lines) + "\n")


@dataclass
class LossReport:
    """Losses observed at one iteration, before the parameter update."""

    iteration: int
    ranking: float
    partition: float
    joint: float
    energy: float


def save_history(history: list[LossReport], path: str | Path) -> None:
    """Loss history CSV with the fixed header iter,ranking,dsg,joint."""
    lines = ["iter,ranking,dsg,joint"]
    lines += [f"{h.iteration},{h.ranking!r},{h.partition!r},{h.joint!r}" for h in history]
    Path(path).write_text("\n".join(lines) + "\n")


def _pair_terms(model: Model, xa: np.ndarray, xb: np.ndarray, label: int, cfg: TrainConfig):
    fa = set_forward(model, xa)
    fb = set_forward(model, xb)
    d_cross = pairwise_distances(fa.fhat, fb.fhat)
    e = energy(d_cross, cfg.beta).value
    rank = ranking_loss(e, label, cfg.tau)
    d_within = [pairwise_distances(f.fhat, f.fhat) for f in (fa, fb)]
    part = sum(partition_cost(f.assign.norm, dw) for f, dw in zip((fa, fb), d_within))
    return fa, fb, d_cross, d_within, e, rank, part


def pair_loss(
    model: Model, xa: np.ndarray, xb: np.ndarray, label: int, cfg: TrainConfig
) -> tuple[float, float, float, float]:
    """Forward-only joint loss on balanced arrays: (ranking, partition, joint, energy)."""
    *_, e, rank, part = _pair_terms(model, xa, xb, label, cfg)
    return rank, part, rank + cfg.lam * part, e


def pair_gradients(
    model: Model, xa: np.ndarray, xb: np.ndarray, label: int, cfg: TrainConfig
) -> tuple[tuple[float, float, float, float], dict[str, np.ndarray]]:
    """Joint loss and its analytic gradient for every trainable tensor."""
    fa, fb, d_cross, d_within, e, rank, part = _pair_terms(model, xa, xb, label, cfg)

    d_energy = ranking_loss_backward(e, label, cfg.tau)
    d_dcross = energy_backward(d_cross, cfg.beta, d_energy)
    cross_a, cross_b = pairwise_distances_backward(fa.fhat, fb.fhat, d_dcross)

    grads = {name: np.zeros_like(t) for name, t in named_tensors(model).items()}
    for fwd, dw, d_fhat_cross, x in ((fa, d_within[0], cross_a, xa), (fb, d_within[1], cross_b, xb)):
        d_assign_part, d_dw = partition_cost_backward(fwd.assign.norm, dw, cfg.lam)
        w1, w2 = pairwise_distances_backward(fwd.fhat, fwd.fhat, d_dw)
        d_fhat = d_fhat_cross + w1 + w2
        d_feats_r, d_assign_r, d_transform, d_gates = reconstruct_backward(
            model.proto, fwd.recon_cache, d_fhat
        )
        d_feats_a, d_predictor = predict_assignment_backward(
            model.proto, fwd.feats, fwd.assign, d_assign_part + d_assign_r
        )
        _, d_ws, d_bs = encode_backward(model.encoder, fwd.enc_cache, d_feats_r + d_feats_a)
        for i, (dw_i, db_i) in enumerate(zip(d_ws, d_bs)):
            grads[f"enc_w{i}"] += dw_i
            grads[f"enc_b{i}"] += db_i
        grads["predictor"] += d_predictor
        grads["transform"] += d_transform
        grads["gate_logits"] += d_gates
    return (rank, part, rank + cfg.lam * part, e), grads


def balanced_arrays(
    pair: SetPair, cfg: TrainConfig, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Balance both sets of a pair to cfg.r media and stack their vectors."""
    xa = balance_set(pair.a, cfg.r, cfg.jitter, rng).matrix()
    xb = balance_set(pair.b, cfg.r, cfg.jitter, rng).matrix()
    return xa, xb


def forward_pair(
    model: Model, pair: SetPair, cfg: TrainConfig,
    rng: np.random.Generator | None = None, iteration: int = 0
) -> LossReport:
    """Balance, run the model, and report all loss terms for one pair."""
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    xa, xb = balanced_arrays(pair, cfg, rng)
    rank, part, joint, e = pair_loss(model, xa, xb, pair.label, cfg)
    return LossReport(iteration, rank, part, joint, e)


def _check_finite(report: LossReport) -> None:
    for term in ("energy", "ranking", "partition", "joint"):
        if not np.isfinite(getattr(report, term)):
            raise NumericsError(
                f"non-finite {term} term at iteration {report.iteration}; aborting training"
            )


def train(model: Model, ds: Dataset, cfg: TrainConfig) -> list[LossReport]:
    """SGD with momentum and weight decay over sampled set pairs.

    Each epoch samples cfg.pairs_per_epoch labeled pairs; sets are rebalanced
    per visit ("pair" mode) or once per epoch ("epoch" mode). Losses are
    recorded before each update. Batches above size 1 average losses and
    gradients. Aborts with a diagnostic if any loss term goes non-finite.
    """
    cfg.validate()
    if ds.dim != cfg.d_in:
        raise ConfigError(f"dataset dim {ds.dim} does not match config d_in {cfg.d_in}")
    rng = np.random.default_rng(cfg.seed)
    tensors = named_tensors(model)
    velocity = {name: np.zeros_like(t) for name, t in tensors.items()}
    history: list[LossReport] = []
    iteration = 0
    for _ in range(cfg.epochs):
        pairs = sample_pairs(ds, cfg.pairs_per_epoch, cfg.genuine_fraction, rng)
        if cfg.balance_mode == "epoch":
            prepared = [(*balanced_arrays(p, cfg, rng), p.label) for p in pairs]
        else:
            prepared = None
        for start in range(0, len(pairs), cfg.batch_size):
            batch = range(start, min(start + cfg.batch_size, len(pairs)))
            sums = np.zeros(4)
            acc: dict[str, np.ndarray] | None = None
            for idx in batch:
                if prepared is not None:
                    xa, xb, label = prepared[idx]
                else:
                    xa, xb = balanced_arrays(pairs[idx], cfg, rng)
                    label = pairs[idx].label
                losses, grads = pair_gradients(model, xa, xb, label, cfg)
                sums += np.array(losses)
                if acc is None:
                    acc = grads
                else:
                    for name in acc:
                        acc[name] += grads[name]
            scale = 1.0 / len(batch)
            iteration += 1
            report = LossReport(iteration, *(float(v) for v in scale * sums))
            _check_finite(report)
            history.append(report)
            lr = cfg.lr
            if cfg.lr_drop_iter is not None and iteration > cfg.lr_drop_iter:
                lr = cfg.lr * 0.1
            for name, t in tensors.items():
                velocity[name] = cfg.momentum * velocity[name] + (
                    scale * acc[name] + cfg.weight_decay * t
                )
                t -= lr * velocity[name]
    return history


def fit(ds: Dataset, cfg: TrainConfig) -> tuple[Model, list[LossReport]]:
    """Initialize a model from the config and train it on the dataset."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    model = init_model(
        cfg.d_in, cfg.hidden, cfg.d, cfg.k, rng,
        std=cfg.init_std, alpha=cfg.alpha, beta=cfg.beta, eps_mass=cfg.eps_mass,
    )
    history = train(model, ds, cfg)
    return model, history


@dataclass
class TensorCheck:
    name: str
    max_rel_err: float
    checked: int
    passed: bool


@dataclass
class GradCheckReport:
    tensors: list[TensorCheck] = field(default_factory=list)
    tolerance: float = 1e-4
    step: float = 1e-5

    @property
    def passed(self) -> bool:
        return all(t.passed for t in self.tensors)


def fd_gradient_errors(
    model: Model,
    xa: np.ndarray,
    xb: np.ndarray,
    label: int,
    cfg: TrainConfig,
    grads: dict[str, np.ndarray],
    n_coords: int = 100,
    step: float = 1e-5,
    rng: np.random.Generator | None = None,
) -> dict[str, tuple[float, int]]:
    """Max relative error between given gradients and central differences.

    Samples up to n_coords coordinates per tensor. Relative error uses the
    guarded denominator max(|analytic|, |numeric|, 1e-4) so finite-difference
    roundoff on near-zero gradients cannot dominate.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    tensors = named_tensors(model)
    out: dict[str, tuple[float, int]] = {}
    for name, t in tensors.items():
        flat = t.reshape(-1)
        count = min(n_coords, flat.size)
        coords = rng.choice(flat.size, size=count, replace=False)
        worst = 0.0
        for c in coords:
            keep = flat[c]
            flat[c] = keep + step
            up = pair_loss(model, xa, xb, label, cfg)[2]
            flat[c] = keep - step
            down = pair_loss(model, xa, xb, label, cfg)[2]
            flat[c] = keep
            numeric = (up - down) / (2.0 * step)
            analytic = grads[name].reshape(-1)[c]
            denom = max(abs(analytic), abs(numeric), 1e-4)
            worst = max(worst, abs(analytic - numeric) / denom)
        out[name] = (worst, count)
    return out


def grad_check(
    model: Model,
    xa: np.ndarray,
    xb: np.ndarray,
    label: int,
    cfg: TrainConfig,
    n_coords: int = 100,
    step: float = 1e-5,
    tolerance: float = 1e-4,
    seed: int = 0,
) -> GradCheckReport:
    """Audit every tensor's analytic gradient on one balanced pair."""
    _, grads = pair_gradients(model, xa, xb, label, cfg)
    errors = fd_gradient_errors(
        model, xa, xb, label, cfg, grads, n_coords, step, np.random.default_rng(seed)
    )
    report = GradCheckReport(tolerance=tolerance, step=step)
    for name, (worst, count) in errors.items():
        report.tensors.append(TensorCheck(name, worst, count, worst <= tolerance))
    return report


def _kink_clearance(model: Model, x: np.ndarray) -> float:
    """Smallest |pre-activation| across the encoder layers for one media array."""
    a = x
    clearance = np.inf
    for w, b in zip(model.encoder.weights, model.encoder.biases):
        z = a @ w + b
        clearance = min(clearance, float(np.abs(z).min()))
        a = np.where(z > 0, z, model.encoder.alpha * z)
    return clearance


def audit_case(
    seed: int,
    d_in: int = 16,
    hidden: int = 32,
    d: int = 16,
    k: int = 8,
    n_a: int = 12,
    n_b: int = 10,
    std: float = 0.3,
) -> tuple[Model, np.ndarray, np.ndarray, int, TrainConfig]:
    """A random model and balanced pair for gradient auditing.

    Weights are drawn at std ~0.3 rather than the training init so the loss
    surface is well conditioned for finite differences. Draws that sit within
    1e-3 of a nondifferentiable point (an activation kink, or the hinge
    boundary for imposter pairs) are resampled, since central differences do
    not measure a derivative there.
    """
    rng = np.random.default_rng(seed)
    cfg = TrainConfig.desk(d_in=d_in, hidden=hidden, d=d, k=k)
    for _ in range(100):
        model = init_model(d_in, hidden, d, k, rng, std=std)
        xa = rng.standard_normal((n_a, d_in))
        xb = rng.standard_normal((n_b, d_in))
        label = int(rng.integers(0, 2))
        margin = min(_kink_clearance(model, xa), _kink_clearance(model, xb))
        if label == 1:
            e = pair_loss(model, xa, xb, label, cfg)[3]
            margin = min(margin, abs(cfg.tau - e))
        if margin > 1e-3:
            return model, xa, xb, label, cfg
    raise NumericsError(f"no finite-difference-friendly draw near seed {seed}")
