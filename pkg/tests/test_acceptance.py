"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line in the terminal summary.

Criteria 9-11 share one training sweep (3 seeds x {SCT, SCMT} x {stage 1, stage 2} plus ICT stage 1)
on a rendered toy corpus; it is built once per session. Set SCMTSED_ACCEPTANCE_DIR to keep the
corpus and sweep results between sessions.
"""

import copy
import json
import math
import os
import time
from pathlib import Path

import numpy as np
import pytest
import torch
from scipy.spatial.distance import cdist

from conftest import AffineModel, PerFrameModel, make_batch, record_criterion
from test_events import HAND_CASES, oracle_counts, prf, random_case
from scmtsed.adapt import domain_loss
from scmtsed.analysis import silhouette
from scmtsed.augment import ShiftSpec
from scmtsed.cli import main as cli_main
from scmtsed.data import extract_features
from scmtsed.datagen import SPLITS, DatasetConfig, build_dataset
from scmtsed.events import EventLabel, event_f1
from scmtsed.features import N_FRAMES, N_MELS
from scmtsed.model import build_model, load_checkpoint
from scmtsed.report import analysis_clips, domain_gap_report
from scmtsed.ssl import ema_update, ict_loss, ramp_up, sct_loss
from scmtsed.train import TrainingConfig, evaluate_f1, load_train_data, train_stage1, train_stage2

SEEDS = (0, 1, 2)
CORPUS_SEED = 0
CORPUS_COUNTS = {"strong_synthetic": 160, "weak_real": 120, "unlabeled_real": 200, "validation": 80}
STAGE1_STEPS = 400
STAGE2_STEPS = 150
BATCH = (2, 2, 4)  # strong synthetic, weak real, unlabeled real
SWEEP_BUDGET_SECONDS = 30 * 60


def check(n: int, passed: bool, detail: str):
    record_criterion(n, passed, detail)
    assert passed, f"criterion {n}: {detail}"


# 1 -------------------------------------------------------------------------


def oracle_silhouette(X, labels):
    D = cdist(X, X)
    labels = np.asarray(labels)
    s = np.zeros(len(X))
    for i in range(len(X)):
        own = labels == labels[i]
        if own.sum() < 2:
            continue
        a = D[i, own].sum() / (own.sum() - 1)
        b = min(D[i, labels == c].mean() for c in np.unique(labels) if c != labels[i])
        if max(a, b) > 0:
            s[i] = (b - a) / max(a, b)
    return s.mean()


def test_criterion_01_silhouette_oracle():
    rng = np.random.default_rng(2024)
    worst, elapsed = 0.0, 0.0
    for _ in range(50):
        n, k, d = int(rng.integers(5, 201)), int(rng.integers(2, 5)), int(rng.integers(1, 17))
        labels = rng.integers(0, k, size=n)
        labels[:k] = np.arange(k)
        X = rng.normal(size=(n, d)) + rng.uniform(0, 2) * labels[:, None]
        t0 = time.perf_counter()
        got = silhouette(X, labels).score
        elapsed += time.perf_counter() - t0
        worst = max(worst, abs(got - oracle_silhouette(X, labels)))
    check(1, worst <= 1e-9 and elapsed < 10, f"max |diff| {worst:.2e}, runtime {elapsed:.3f} s")


# 2 -------------------------------------------------------------------------


def test_criterion_02_grl_sign_rule():
    lam = 0.37
    model = build_model("tiny", seed=0).eval()
    x = torch.randn(4, N_FRAMES, N_MELS, generator=torch.Generator().manual_seed(1))
    domain = torch.tensor([0.0, 1.0, 0.0, 1.0])

    out = model(x)
    loss, _ = domain_loss(model.discriminate_frames(out.embedding, 1.0), domain)
    (lam * loss).backward()
    theta_f = model.parameter_groups()["theta_f"]
    names = {id(p): n for n, p in model.named_parameters()}

    ref = copy.deepcopy(model).double()
    ref_params = dict(ref.named_parameters())

    def unreversed_loss():
        with torch.no_grad():
            o = ref(x.double())
            return domain_loss(ref.discriminator(o.embedding), domain.double())[0].item()

    rng = np.random.default_rng(7)
    worst, h = 0.0, 1e-6
    for _ in range(20):
        p = theta_f[int(rng.integers(len(theta_f)))]
        idx = tuple(int(rng.integers(s)) for s in p.shape)
        q = ref_params[names[id(p)]]
        orig = q.data[idx].item()
        q.data[idx] = orig + h
        up = unreversed_loss()
        q.data[idx] = orig - h
        down = unreversed_loss()
        q.data[idx] = orig
        fd = (up - down) / (2 * h)
        expected = -lam * fd
        got = p.grad[idx].item()
        worst = max(worst, abs(got - expected) / max(abs(expected), 1e-8))
    check(2, worst < 1e-3, f"max relative error {worst:.2e} over 20 coordinates")


# 3 -------------------------------------------------------------------------


def test_criterion_03_ramp_up():
    T = 1000
    start_err = abs(ramp_up(0, T) - math.exp(-5))
    end_err = abs(ramp_up(T, T) - 1.0)
    ts = np.sort(np.random.default_rng(3).choice(np.arange(T + 1), size=1000, replace=False))
    vals = [ramp_up(int(t), T) for t in ts]
    monotone = all(b > a for a, b in zip(vals, vals[1:]))
    check(3, start_err <= 1e-12 and end_err <= 1e-12 and monotone,
          f"|r(0)-e^-5| {start_err:.1e}, |r(T)-1| {end_err:.1e}, strictly increasing: {monotone}")


# 4 -------------------------------------------------------------------------


def test_criterion_04_ict_affine():
    model = AffineModel()
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(100):
        u = torch.from_numpy(rng.normal(size=(2, 8, 16)))
        worst = max(worst, ict_loss(model, model, u, float(rng.uniform()), perm=[1, 0]).item())
    check(4, worst < 1e-9, f"max ICT loss {worst:.2e}")


# 5 -------------------------------------------------------------------------


def test_criterion_05_shift_consistency():
    model = PerFrameModel()
    batch = make_batch(n=2)
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(100):
        tau = int(rng.integers(-N_FRAMES, N_FRAMES))
        lb = sct_loss(model, batch, ShiftSpec(tau, 0), 10, 10)
        worst = max(worst, lb["L_st_mse"].item())
    check(5, worst < 1e-9, f"max L_st_mse {worst:.2e}")


# 6 -------------------------------------------------------------------------


def test_criterion_06_ema():
    s = build_model("tiny", seed=0)
    t = copy.deepcopy(s)
    ema_update(s, t, 0.999)
    fixed = all(torch.equal(a, b) for a, b in zip(s.parameters(), t.parameters()))
    rng = np.random.default_rng(6)
    student = [rng.normal(size=(5, 3)), rng.normal(size=7)]
    teacher = [rng.normal(size=(5, 3)), rng.normal(size=7)]
    gap = lambda: math.sqrt(sum(np.sum((a - b) ** 2) for a, b in zip(teacher, student)))
    alpha, worst = 0.9, 0.0
    prev = gap()
    for _ in range(100):
        teacher = ema_update(student, teacher, alpha)
        now = gap()
        worst = max(worst, abs(now - alpha * prev))
        prev = now
    check(6, fixed and worst <= 1e-9, f"fixed point: {fixed}, max per-step contraction error {worst:.1e}")


# 7 -------------------------------------------------------------------------


def test_criterion_07_event_f1_oracle():
    cases = [([EventLabel(*e) for e in p], [EventLabel(*e) for e in r]) for p, r in HAND_CASES]
    rng = np.random.default_rng(7)
    cases += [random_case(rng) for _ in range(100)]
    mismatches = 0
    for pred, ref in cases:
        micro = event_f1(pred, ref).micro
        if (micro.precision, micro.recall, micro.f1) != prf(*oracle_counts(pred, ref)):
            mismatches += 1
    ref = [EventLabel(0, 1.0, 2.0), EventLabel(4, 3.0, 5.0)]
    perfect = event_f1(ref, ref).macro_f1 == 1.0
    empty = event_f1([], ref).macro_f1 == 0.0
    check(7, mismatches == 0 and perfect and empty and len(cases) == 130,
          f"{mismatches} mismatches in {len(cases)} cases, perfect=1.0: {perfect}, empty=0: {empty}")


# shared toy corpus and sweep ---------------------------------------------------


@pytest.fixture(scope="session")
def acceptance_root(tmp_path_factory):
    env = os.environ.get("SCMTSED_ACCEPTANCE_DIR")
    root = Path(env) if env else tmp_path_factory.mktemp("acceptance")
    root.mkdir(parents=True, exist_ok=True)
    return root


@pytest.fixture(scope="session")
def corpus(acceptance_root):
    data, cache = acceptance_root / "data", acceptance_root / "data" / "features"
    if not (cache / "stats.json").exists():
        build_dataset(data, DatasetConfig(counts=dict(CORPUS_COUNTS)), seed=CORPUS_SEED)
        extract_features(data, cache)
    return data, cache


def _sweep_cfg(strategy, seed):
    return TrainingConfig(strategy=strategy, steps=STAGE1_STEPS, T=STAGE1_STEPS // 2, ema_alpha=0.99,
                          batch_composition=BATCH, seed=seed)


@pytest.fixture(scope="session")
def sweep(corpus, acceptance_root):
    """{(strategy, seed, stage): {"projection": s, "raw": s, "f1": f}} for the directional criteria."""
    cache_file = acceptance_root / f"sweep_{STAGE1_STEPS}_{STAGE2_STEPS}_{'-'.join(map(str, BATCH))}.json"
    if cache_file.exists():
        raw = json.loads(cache_file.read_text())
        return {tuple(json.loads(k)): v for k, v in raw["results"].items()}, raw["seconds"]
    data = load_train_data(*corpus, n_out_frames=81)
    clips = analysis_clips(data.sources[0], data.validation)
    runs = acceptance_root / "runs"
    results = {}

    def score(ckpt):
        model, _, _ = load_checkpoint(ckpt)
        rep = domain_gap_report(model, clips, perplexity=30, seed=0)
        f1 = evaluate_f1(model, data.validation).macro_f1
        return {"projection": rep.projection_silhouette, "raw": rep.raw_silhouette, "f1": f1}

    t0 = time.perf_counter()
    for seed in SEEDS:
        for strategy in ("sct", "scmt", "ict"):
            cfg = _sweep_cfg(strategy, seed)
            r1 = train_stage1(cfg, data, runs / f"{strategy}_{seed}_s1")
            results[(strategy, seed, 1)] = score(r1["checkpoint"])
            if strategy != "ict":
                r2 = train_stage2(r1["checkpoint"], cfg, data, runs / f"{strategy}_{seed}_s2", steps=STAGE2_STEPS)
                results[(strategy, seed, 2)] = score(r2["checkpoint"])
    seconds = time.perf_counter() - t0
    cache_file.write_text(json.dumps({"seconds": seconds,
                                      "results": {json.dumps(list(k)): v for k, v in results.items()}}, indent=1))
    return results, seconds


# 8 -------------------------------------------------------------------------


def test_criterion_08_feature_shape(corpus):
    _, cache = corpus
    shapes = {split: np.load(cache / f"{split}.npy", mmap_mode="r").shape for split in SPLITS}
    total = sum(CORPUS_COUNTS.values())
    ok = all(s[1:] == (N_FRAMES, N_MELS) for s in shapes.values()) and sum(s[0] for s in shapes.values()) == total
    check(8, ok, f"{total} clips, per-split shapes {sorted(set(s[1:] for s in shapes.values()))}")


# 9-11 ----------------------------------------------------------------------


@pytest.mark.slow
def test_criterion_09_ada_lowers_silhouette(sweep):
    results, seconds = sweep
    lines, ok = [], seconds <= SWEEP_BUDGET_SECONDS
    for strategy in ("sct", "scmt"):
        wins = sum(results[(strategy, s, 2)]["projection"] < results[(strategy, s, 1)]["projection"] for s in SEEDS)
        ok &= wins >= 2
        pairs = ", ".join(f"{results[(strategy, s, 1)]['projection']:.3f}->{results[(strategy, s, 2)]['projection']:.3f}"
                          for s in SEEDS)
        lines.append(f"{strategy.upper()} lower in {wins}/3 ({pairs})")
    check(9, ok, "; ".join(lines) + f"; sweep {seconds / 60:.1f} min")


@pytest.mark.slow
def test_criterion_10_ict_widens_gap(sweep):
    results, _ = sweep
    ict = np.mean([results[("ict", s, 1)]["projection"] for s in SEEDS])
    scmt = np.mean([results[("scmt", s, 1)]["projection"] for s in SEEDS])
    check(10, ict >= scmt, f"mean projection silhouette ICT {ict:.4f} vs SCMT {scmt:.4f}")


@pytest.mark.slow
def test_criterion_11_scmt_f1(sweep):
    results, _ = sweep
    f1 = lambda strategy, stage: float(np.mean([results[(strategy, s, stage)]["f1"] for s in SEEDS]))
    sct, scmt, scmt_ada = f1("sct", 1), f1("scmt", 1), f1("scmt", 2)
    ok = scmt >= sct - 0.01 and scmt_ada >= scmt - 0.01
    check(11, ok, f"mean F1 SCT {sct:.4f}, SCMT {scmt:.4f}, SCMT+ADA {scmt_ada:.4f}")


# 12 ------------------------------------------------------------------------


def test_criterion_12_reproducibility(tmp_path):
    counts = ["6", "6", "8", "4"]
    for name in ("a", "b"):
        assert cli_main(["make-dataset", "--out", str(tmp_path / name), "--seed", "11", "--counts", *counts]) == 0
    manifests_equal = all(
        (tmp_path / "a" / "metadata" / f"{s}.tsv").read_bytes() == (tmp_path / "b" / "metadata" / f"{s}.tsv").read_bytes()
        for s in SPLITS
    )
    audio_equal = all(
        p.read_bytes() == (tmp_path / "b" / p.relative_to(tmp_path / "a")).read_bytes()
        for p in (tmp_path / "a" / "audio").rglob("*.wav")
    )
    assert cli_main(["extract-features", "--data", str(tmp_path / "a")]) == 0
    logs = []
    for stage_dir in ("r1", "r2"):
        args = ["--data", str(tmp_path / "a"), "--batch", "2", "2", "2", "--seed", "3"]
        assert cli_main(["train", "--strategy", "scmt", "--steps", "3", "--T", "6", "--out",
                         str(tmp_path / stage_dir / "s1"), *args]) == 0
        assert cli_main(["train", "--stage", "2", "--from", str(tmp_path / stage_dir / "s1" / "checkpoint.pt"),
                         "--steps-stage2", "2", "--out", str(tmp_path / stage_dir / "s2"), *args]) == 0
        logs.append([(tmp_path / stage_dir / s / "metrics.jsonl").read_bytes() for s in ("s1", "s2")])
    logs_equal = logs[0] == logs[1]
    check(12, manifests_equal and audio_equal and logs_equal,
          f"manifests identical: {manifests_equal}, audio identical: {audio_equal}, "
          f"stage-1/2 metric logs identical: {logs_equal}")
