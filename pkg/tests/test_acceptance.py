"""Acceptance suite: one test per headline behavior of the package.

Each test prints a single bracketed PASS/FAIL line with the measured
quantities so a `pytest -v -s` run doubles as an acceptance report. The
trained-model tests pin exact datasets, schedules, and seeds; every quantity
in this file is deterministic on a given machine.
"""

import json
import time

import numpy as np
import pytest

from protoset import cli
from protoset.data import (
    MediaFeature,
    MediaSet,
    SynthConfig,
    generate_synthetic,
    sample_pairs,
)
from protoset.matching import energy, match_sets, prepare_set, score_templates
from protoset.metrics import score_pairs, verification_metrics
from protoset.model import init_model, set_forward
from protoset.oracle import ari, brute_force_partition, kmeans
from protoset.prototypes import (
    distance_evals,
    harden,
    minimize_partition_cost,
    pairwise_distances,
    partition_cost,
    reset_distance_evals,
)
from protoset.training import TrainConfig, audit_case, fit, grad_check

# Recovery experiment: planted-mode dataset and schedule (criterion: hardened
# assignments should rediscover the modes).
RECOVERY_DATA = SynthConfig(
    n_subjects=20, modes_per_subject=3, media_range=(16, 28),
    mode_offset=1.0, mode_noise=0.01, seed=0,
)
RECOVERY_CFG = dict(
    epochs=25, pairs_per_epoch=100, init_std=1.0, lr=0.02,
    weight_decay=0.0, lam=0.01, seed=0,
)

# Ablation experiment: joint loss vs ranking-only on a noisier generator,
# compared over three paired training seeds on a fixed 2000-pair benchmark.
# The efficiency test reuses one of the joint-loss models.
ABLATION_TRAIN = SynthConfig(
    n_subjects=20, modes_per_subject=3, mode_offset=0.5, mode_noise=0.15, seed=0,
)
ABLATION_EVAL = SynthConfig(
    n_subjects=20, modes_per_subject=3, mode_offset=0.5, mode_noise=0.15, seed=100,
)
ABLATION_CFG = dict(epochs=5, pairs_per_epoch=100, init_std=0.1)
ABLATION_SEEDS = (0, 1, 2)
EFFICIENCY_SEED = 2
BENCH_PAIRS = 2000
BENCH_BETA = None  # None scores with the model's own beta


def _line(ok: bool, name: str, detail: str) -> None:
    print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")


@pytest.fixture(scope="module")
def recovery():
    """Model trained on the planted-mode dataset, plus that dataset."""
    ds = generate_synthetic(RECOVERY_DATA)
    cfg = TrainConfig.desk(**RECOVERY_CFG)
    model, history = fit(ds, cfg)
    return ds, cfg, model, history


@pytest.fixture(scope="module")
def ablation():
    """Joint-loss and ranking-only models per seed, plus the shared benchmark."""
    train_ds = generate_synthetic(ABLATION_TRAIN)
    eval_ds = generate_synthetic(ABLATION_EVAL)
    pairs = sample_pairs(eval_ds, BENCH_PAIRS, 0.5, np.random.default_rng(123))
    models = {}
    for seed in ABLATION_SEEDS:
        for lam in (0.01, 0.0):
            cfg = TrainConfig.desk(lam=lam, seed=seed, **ABLATION_CFG)
            models[(seed, lam)] = fit(train_ds, cfg)[0]
    return models, pairs


def _benchmark_tar(model, pairs, mode):
    samples = score_pairs(pairs, model, mode, beta=BENCH_BETA)
    report = verification_metrics(samples, far_points=(0.01,))
    return report.tar_at_far[0.01]


def _medium(rng, media_id):
    return MediaFeature(media_id, "image", rng.standard_normal(16))


def _time_once(ta, tb, beta):
    t0 = time.perf_counter()
    score_templates(ta, tb, beta)
    return time.perf_counter() - t0


def test_gradient_audit():
    t0 = time.perf_counter()
    worst = 0.0
    labels = set()
    for seed in range(20):
        model, xa, xb, label, cfg = audit_case(seed)
        labels.add(label)
        report = grad_check(model, xa, xb, label, cfg, n_coords=512, seed=seed)
        worst = max(worst, max(t.max_rel_err for t in report.tensors))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-4 and elapsed < 120.0
    _line(ok, "gradient audit", f"20 draws (both pair labels: {sorted(labels)}), "
          f"worst rel err {worst:.3e} (tol 1e-4), {elapsed:.1f}s (budget 120s)")
    assert labels == {0, 1}
    assert worst <= 1e-4
    assert elapsed < 120.0


def test_energy_bounds_and_beta_sweep():
    betas = (0.0, 0.5, 1.0, 2.0, 5.0, 10.0, 100.0)
    worst_mean = worst_mono = worst_top = 0.0
    for case in range(100):
        rng = np.random.default_rng(2000 + case)
        n, m = (int(v) for v in rng.integers(1, 13, size=2))
        dists = rng.uniform(0.0, 4.0, size=(n, m))
        lo, hi = float(dists.min()), float(dists.max())
        values = [energy(dists, b).value for b in betas]
        assert all(lo - 1e-12 <= v <= hi + 1e-12 for v in values)
        worst_mean = max(worst_mean, abs(values[0] - dists.mean()))
        worst_mono = max(worst_mono, max(
            values[i] - values[i + 1] for i in range(len(values) - 1)))
        shortfall = hi - energy(dists, 1000.0).value
        if hi > lo:
            worst_top = max(worst_top, shortfall / (hi - lo))
        assert abs(values[0] - dists.mean()) <= 1e-9
        assert all(values[i + 1] >= values[i] - 1e-12 for i in range(len(values) - 1))
        assert shortfall <= 1e-3 * (hi - lo) + 1e-12
    _line(True, "energy properties", "100 matrices in bounds; beta=0 off mean by "
          f"{worst_mean:.1e} (tol 1e-9); worst monotonicity slip {worst_mono:.1e}; "
          f"beta=1000 within {worst_top:.1e} of max (tol 1e-3, range units)")


def test_partition_descent_matches_brute_force():
    t0 = time.perf_counter()
    hits = 0
    ratios = []
    for case in range(50):
        rng = np.random.default_rng(3000 + case)
        n = int(rng.integers(4, 9))
        n1 = int(rng.integers(1, n))
        labels = np.array([0] * n1 + [1] * (n - n1))
        same = labels[:, None] == labels[None, :]
        d = np.where(same, rng.uniform(0.02, 0.2, (n, n)),
                     rng.uniform(1.0, 2.0, (n, n)))
        d = d + 0.05 * rng.standard_normal((n, n))
        d = np.clip((d + d.T) / 2.0, 0.0, None)
        np.fill_diagonal(d, 0.0)
        _, opt = brute_force_partition(d, 2)
        _, value, _ = minimize_partition_cost(d, 2, seed=case)
        ratios.append(value / opt if opt > 0 else 1.0)
        if value <= 1.05 * opt + 1e-9:
            hits += 1
    elapsed = time.perf_counter() - t0
    ok = hits >= 45 and elapsed < 60.0
    _line(ok, "partition vs brute force", f"{hits}/50 within 5% of the exact "
          f"optimum (need 45), worst ratio {max(ratios):.4f}, "
          f"{elapsed:.1f}s (budget 60s)")
    assert hits >= 45
    assert elapsed < 60.0


def test_planted_mode_recovery(recovery):
    ds, cfg, model, history = recovery
    assert len(history) <= 5000
    scores, baseline = [], []
    for s in ds.sets:
        x = s.matrix()
        fwd = set_forward(model, x)
        modes = np.asarray(s.planted_mode)
        scores.append(ari(harden(fwd.assign.norm), modes))
        baseline.append(ari(kmeans(x, cfg.k, seed=0)[0], modes))
    mean_ari = float(np.mean(scores))
    km = float(np.mean(baseline))
    ok = mean_ari >= 0.8
    _line(ok, "planted-mode recovery", f"mean ARI {mean_ari:.3f} over "
          f"{len(ds.sets)} sets after {len(history)} iterations (bar 0.80); "
          f"k-means on raw features {km:.3f} (reported, no bar)")
    assert mean_ari >= 0.8


def test_joint_loss_improves_verification(ablation):
    models, pairs = ablation
    gaps = []
    for seed in ABLATION_SEEDS:
        joint = _benchmark_tar(models[(seed, 0.01)], pairs, "proto")
        ranking = _benchmark_tar(models[(seed, 0.0)], pairs, "proto")
        gaps.append(joint - ranking)
    mean_gap = float(np.mean(gaps))
    ok = mean_gap >= 0.02
    _line(ok, "joint-loss ablation", "TAR@FAR=0.01 gap (lam 0.01 minus lam 0) "
          f"per seed {['%+.3f' % g for g in gaps]}, mean {mean_gap:+.3f} "
          f"(need +0.020)")
    assert mean_gap >= 0.02


def test_prototype_matching_efficiency(ablation):
    models, pairs = ablation
    model = models[(EFFICIENCY_SEED, 0.01)]

    rng = np.random.default_rng(6)
    big_a = MediaSet(0, 0, [_medium(rng, i) for i in range(256)])
    big_b = MediaSet(1, 0, [_medium(rng, 256 + i) for i in range(256)])
    templates = {m: (prepare_set(model, big_a, m), prepare_set(model, big_b, m))
                 for m in ("proto", "media")}
    counts = {}
    for mode, (ta, tb) in templates.items():
        reset_distance_evals()
        score_templates(ta, tb, model.beta)
        counts[mode] = distance_evals()
    k_a, k_b = (len(templates["proto"][i].features) for i in (0, 1))
    assert counts["proto"] == k_a * k_b
    assert counts["media"] == 256 * 256

    timings = {}
    for mode, (ta, tb) in templates.items():
        best = min(_time_once(ta, tb, model.beta) for _ in range(20))
        timings[mode] = best
    speedup = timings["media"] / timings["proto"]

    tar_proto = _benchmark_tar(model, pairs, "proto")
    tar_media = _benchmark_tar(model, pairs, "media")
    delta = abs(tar_proto - tar_media)

    ok = (counts["proto"] <= 64 and counts["media"] == 65536
          and speedup >= 5.0 and delta <= 0.02)
    _line(ok, "prototype matching efficiency", f"256-media sets: "
          f"{counts['proto']} distance evals ({k_a}x{k_b} prototypes) vs "
          f"{counts['media']}; scoring speedup {speedup:.0f}x (need 5x); "
          f"benchmark TAR proto {tar_proto:.3f} vs media {tar_media:.3f}, "
          f"delta {delta:.3f} (cap 0.020)")
    assert counts["proto"] <= 64
    assert counts["media"] == 65536
    assert speedup >= 5.0
    assert delta <= 0.02


def test_train_eval_determinism(tmp_path):
    outputs = []
    for tag in ("first", "second"):
        root = tmp_path / tag
        root.mkdir()
        data = root / "data.csv"
        assert cli.main(["gen-data", "--out", str(data), "--seed", "7",
                         "--n-subjects", "10"]) == 0
        assert cli.main(["train", "--dataset", str(data), "--out",
                         str(root / "train"), "--desk", "--epochs", "2",
                         "--pairs-per-epoch", "50", "--seed", "3"]) == 0
        assert cli.main(["eval", "--dataset", str(data), "--checkpoint",
                         str(root / "train" / "checkpoint.npz"), "--out",
                         str(root / "eval"), "--seed", "5",
                         "--n-pairs", "300"]) == 0
        outputs.append(root)
    compared = ["train/loss_history.csv", "eval/metrics.json",
                "eval/roc.csv", "eval/cmc.csv"]
    mismatched = [rel for rel in compared
                  if (outputs[0] / rel).read_bytes() != (outputs[1] / rel).read_bytes()]
    metrics = json.loads((outputs[0] / "eval/metrics.json").read_text())
    ok = not mismatched
    _line(ok, "train+eval determinism", "two identical-seed runs, "
          f"{len(compared)} files byte-compared, mismatches {mismatched or 'none'}; "
          f"TAR@FAR=0.01 {metrics['tar_at_far']['0.01']:.3f}")
    assert not mismatched


def test_permutation_and_norm_invariances():
    rng = np.random.default_rng(77)
    ds = generate_synthetic(SynthConfig(n_subjects=6, modes_per_subject=3, seed=21))
    model = init_model(16, 32, 16, 8, np.random.default_rng(5), std=0.5)

    worst_perm = 0.0
    for _ in range(8):
        ia, ib = rng.choice(len(ds.sets), size=2, replace=False)
        sa, sb = ds.sets[ia], ds.sets[ib]
        order = rng.permutation(len(sa.media))
        shuffled = MediaSet(sa.set_id, sa.subject_id,
                            [sa.media[i] for i in order],
                            [sa.planted_mode[i] for i in order])
        for mode in ("media", "proto"):
            base = match_sets(sa, sb, model, mode)
            moved = match_sets(shuffled, sb, model, mode)
            worst_perm = max(worst_perm, abs(base - moved))

    worst_col = 0.0
    worst_norm = 0.0
    for s in ds.sets:
        fwd = set_forward(model, s.matrix())
        d = pairwise_distances(fwd.fhat, fwd.fhat)
        cost = partition_cost(fwd.assign.norm, d)
        for _ in range(4):
            cols = rng.permutation(fwd.assign.norm.shape[1])
            worst_col = max(worst_col, abs(
                partition_cost(fwd.assign.norm[:, cols], d) - cost))
        norms = np.linalg.norm(fwd.fhat, axis=1)
        worst_norm = max(worst_norm, float(np.abs(norms - 1.0).max()))
        reps = prepare_set(model, s, "proto").features
        rep_norms = np.linalg.norm(reps, axis=1)
        worst_norm = max(worst_norm, float(np.abs(rep_norms - 1.0).max()))

    ok = worst_perm <= 1e-9 and worst_col <= 1e-9 and worst_norm <= 1e-9
    _line(ok, "invariance suite", f"media shuffle moves scores by {worst_perm:.1e} "
          f"(tol 1e-9); slot column shuffle moves partition cost by {worst_col:.1e}; "
          f"unit-norm outputs off by {worst_norm:.1e}")
    assert worst_perm <= 1e-9
    assert worst_col <= 1e-9
    assert worst_norm <= 1e-9
