"""Acceptance suite: one test per criterion, each reporting a PASS/FAIL line."""

import filecmp
import math
import time

import numpy as np

from conftest import TINY, record_acceptance
from oracles import auc_mann_whitney, brute_force_lap_total, forward_scalar, hsic_unbiased_loop
from weightprint import (
    BlockRotation,
    ForgeConfig,
    KernelPair,
    ManipulationSpec,
    ScoreSet,
    apply_manipulation,
    auc,
    brute_force_assignment,
    cka_biased,
    compare,
    forward_reference,
    generate_base,
    gram_linear,
    hsic_unbiased,
    pauc,
    roc_points,
    run_testbed,
    solve_max_assignment,
    tpr_at_fpr,
    ucka,
)
from weightprint.cli import main
from weightprint.evaluation import default_testbed_config

EQUIV_CONFIG = ForgeConfig(vocab_size=64, hidden=16, layers=3, head_dim=8, ffn_dim=32)


def _random_spec(r: np.random.Generator) -> ManipulationSpec:
    magnitude = math.exp(r.uniform(math.log(0.2), math.log(5.0)))
    return ManipulationSpec(
        scale=float(magnitude * r.choice([-1.0, 1.0])),
        perm_seed=int(r.integers(2**31)),
        sign_seed=int(r.integers(2**31)),
        rotation_seed=int(r.integers(2**31)),
    )


def _equivalence_pairs():
    pairs = []
    for seed in range(25):
        base = generate_base(EQUIV_CONFIG.with_seed(seed))
        spec = _random_spec(np.random.default_rng(10_000 + seed))
        pairs.append((base, spec, apply_manipulation(base, spec)))
    return pairs


def test_criterion_1_cka_invariance():
    start = time.perf_counter()
    worst_u = worst_b = 0.0
    for seed in range(100):
        r = np.random.default_rng(seed)
        m = int(r.integers(4, 65))
        n = 2 * int(r.integers(1, 9))
        x = r.normal(size=(m, n))
        c = 0.0
        while c == 0.0:
            c = float(r.uniform(-10, 10))
        u = BlockRotation.random(n, r).matrix()
        y = c * x @ u
        worst_u = max(worst_u, abs(ucka(x, y) - 1))
        worst_b = max(worst_b, abs(cka_biased(x, y) - cka_biased(x, x)))
    elapsed = time.perf_counter() - start
    ok = worst_u < 1e-8 and worst_b < 1e-8 and elapsed < 5
    record_acceptance(1, ok, f"max |ucka-1|={worst_u:.2e}, max biased diff={worst_b:.2e}, {elapsed:.2f}s")
    assert ok


def test_criterion_2_unbiased_hsic_oracle():
    worst = 0.0
    for seed in range(200):
        r = np.random.default_rng(seed)
        m = int(r.integers(4, 17))
        k1 = gram_linear(r.normal(size=(m, int(r.integers(1, 9)))))
        k2 = gram_linear(r.normal(size=(m, int(r.integers(1, 9)))))
        got = hsic_unbiased(KernelPair(k1, k2))
        worst = max(worst, abs(got - hsic_unbiased_loop(k1.tolist(), k2.tolist())))
    ok = worst < 1e-12
    record_acceptance(2, ok, f"200 pairs, max diff={worst:.2e}")
    assert ok


def test_criterion_3_assignment_oracle():
    mismatches = 0
    worst_oracle = 0.0
    for seed in range(200):
        r = np.random.default_rng(seed)
        p, q = (int(v) for v in r.integers(1, 8, size=2))
        w = r.normal(size=(p, q)) if seed % 2 else r.integers(0, 4, size=(p, q)).astype(float)
        got = solve_max_assignment(w)
        if got.total_weight != brute_force_assignment(w).total_weight:
            mismatches += 1
        worst_oracle = max(worst_oracle, abs(got.total_weight - brute_force_lap_total(w.tolist())))
    w = np.abs(np.random.default_rng(0).uniform(-1, 1, size=(512, 512)))
    start = time.perf_counter()
    solve_max_assignment(w)
    elapsed = time.perf_counter() - start
    ok = mismatches == 0 and worst_oracle < 1e-12 and elapsed < 10
    record_acceptance(3, ok, f"{mismatches} mismatches in 200, 512x512 in {elapsed:.2f}s")
    assert ok


def test_criterion_4_functional_equivalence():
    start = time.perf_counter()
    worst = 0.0
    for seed, (base, _, derived) in enumerate(_equivalence_pairs()):
        r = np.random.default_rng(20_000 + seed)
        for _ in range(5):
            toks = r.integers(0, EQUIV_CONFIG.vocab_size, size=12)
            a = forward_reference(base, toks).logits
            b = forward_reference(derived, toks).logits
            worst = max(worst, float(np.max(np.abs(a - b))))
    elapsed = time.perf_counter() - start
    ok = worst < 1e-6 and elapsed < 30
    record_acceptance(4, ok, f"25 models x 5 sequences, max logit divergence={worst:.2e}, {elapsed:.2f}s")
    assert ok


def test_criterion_5_recovery():
    lowest = 1.0
    exact = 0
    for base, spec, derived in _equivalence_pairs():
        rep = compare(base, derived)
        planted = spec.resolve(base)
        lowest = min(lowest, rep.similarity)
        al = rep.alignment
        if np.array_equal(al.as_perm(), planted.perm) and np.array_equal(al.signs, planted.signs[al.source]):
            exact += 1
    ok = lowest > 1 - 1e-6 and exact == 25
    record_acceptance(5, ok, f"min similarity={lowest:.12f}, exact P/D recovery {exact}/25")
    assert ok


def test_criterion_6_default_testbed():
    start = time.perf_counter()
    rep = run_testbed(default_testbed_config())
    elapsed = time.perf_counter() - start
    min_z = min(rep.z_per_positive)
    ok = (
        rep.auc == 1.0
        and rep.pauc == 1.0
        and rep.tpr_at_1pct_fpr == 1.0
        and min_z > 10
        and not rep.errors
        and len(rep.z_per_positive) == 20
        and elapsed < 300
    )
    record_acceptance(
        6,
        ok,
        f"auc={rep.auc} pauc={rep.pauc} tpr@1%={rep.tpr_at_1pct_fpr} min|Z|={min_z:.1f} "
        f"errors={len(rep.errors)} {elapsed:.1f}s",
    )
    assert ok


def test_criterion_7_forward_oracle():
    worst = 0.0
    for seed in range(10):
        bundle = generate_base(TINY.with_seed(seed))
        toks = np.random.default_rng(seed).integers(0, TINY.vocab_size, size=8).tolist()
        got = forward_reference(bundle, toks).logits
        worst = max(worst, float(np.max(np.abs(got - np.array(forward_scalar(bundle, toks))))))
    ok = worst < 1e-10
    record_acceptance(7, ok, f"10 tiny models, max diff={worst:.2e}")
    assert ok


def test_criterion_8_metric_oracles():
    worst = 0.0
    for seed in range(100):
        r = np.random.default_rng(seed)
        pos = np.round(r.uniform(0.2, 1.0, size=int(r.integers(1, 26))), 2).tolist()
        neg = np.round(r.uniform(0.0, 0.8, size=int(r.integers(1, 26))), 2).tolist()
        got = auc(roc_points(ScoreSet.from_scores(pos, neg)))
        worst = max(worst, abs(got - auc_mann_whitney(pos, neg)))
    roc = roc_points(ScoreSet.from_scores([0.9, 0.4], [0.6, 0.1]))
    hand = (
        roc == [(0.0, 0.0), (0.0, 0.5), (0.5, 0.5), (0.5, 1.0), (1.0, 1.0)]
        and abs(auc(roc) - 0.75) < 1e-12
        and abs(pauc(roc) - 0.5) < 1e-12
        and abs(tpr_at_fpr(roc, 0.01) - 0.5) < 1e-12
    )
    ok = worst < 1e-12 and hand
    record_acceptance(8, ok, f"U-statistic max diff={worst:.2e}, hand case {'ok' if hand else 'wrong'}")
    assert ok


def test_criterion_9_eval_determinism(tmp_path):
    dirs = [tmp_path / "run1", tmp_path / "run2"]
    codes = [main(["eval", "default", str(d)]) for d in dirs]
    names = ["eval_report.json", "roc.csv", "scores.csv"]
    same = all(filecmp.cmp(dirs[0] / n, dirs[1] / n, shallow=False) for n in names)
    ok = codes == [0, 0] and same
    record_acceptance(9, ok, f"exit codes {codes}, report files byte-identical={same}")
    assert ok
