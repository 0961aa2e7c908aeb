"""Acceptance suite: one test per criterion, each printing a PASS line with
its measured numbers (run with -s to see them)."""

import itertools
import json
import os
import time

import numpy as np
import pytest

from bfiki import nn
from bfiki.capture import (DEFAULT_PAYMENT_IP, DEFAULT_VICTIM_MAC,
                           make_attack_capture, write_fixture)
from bfiki.config import PipelineConfig
from bfiki.errors import InsufficientPeaks, MalformedReport
from bfiki.frames import encode_capture, parse_action_noack, reconstruct_v
from bfiki.inference import (classify, new_ki_model, numeric_layout,
                             rank_passwords, top_n_accuracy, train_adversarial,
                             PasswordCandidate)
from bfiki.pcap import CaptureRecord
from bfiki.pipeline import dump_report, run_attack
from bfiki.segmenter import SegmentationParams, cfar_peaks, select_topk
from bfiki.series import BfiSeries
from bfiki.sra import corrupt, gen_bernoulli_mask, recover, rmse_relative
from bfiki.synth import (SynthConfig, apply_traffic, make_domain_benchmark,
                         synth_dataset, synth_keystroke_series,
                         synth_sine_dataset)
from tests.test_frames import brute_force_v, random_frame
from tests.test_nn import assert_gradients_match
from tests.test_segmenter import brute_force_cfar

pytestmark = pytest.mark.acceptance

CLOSED_LOOP_SYNTH = SynthConfig(cps_range=(0.6, 1.4))
E2E_SYNTH = SynthConfig(cps_range=(0.8, 1.2), noise_sigma=0.01)


def report(criterion, detail):
    print(f"\nACCEPTANCE {criterion}: PASS — {detail}")


# ---------------------------------------------------------------------------
# 1. parser round-trip and truncation fuzz
# ---------------------------------------------------------------------------

def test_criterion_1_parser_round_trip_and_fuzz():
    start = time.time()
    rng = np.random.default_rng(20240803)
    for i in range(1000):
        frame = random_frame(rng, ts=i)
        parsed = parse_action_noack(encode_capture(frame))
        assert parsed is not None
        assert parsed.phi_q == frame.phi_q and parsed.psi_q == frame.psi_q
        assert (parsed.n_rows, parsed.n_cols, parsed.codebook) == \
            (frame.n_rows, frame.n_cols, frame.codebook)
    outcomes = {"malformed": 0, "none": 0, "parsed": 0}
    for i in range(1000):
        frame = random_frame(rng)
        payload = encode_capture(frame).payload
        cut = int(rng.integers(0, len(payload) + 1))
        try:
            got = parse_action_noack(CaptureRecord(0, payload[:cut]))
        except MalformedReport:
            outcomes["malformed"] += 1
            continue
        outcomes["parsed" if got is not None else "none"] += 1
    elapsed = time.time() - start
    assert elapsed < 5.0
    report(1, f"1000 frames bit-exact; truncation outcomes {outcomes}; "
              f"{elapsed:.2f}s (< 5s)")


# ---------------------------------------------------------------------------
# 2. steering-matrix correctness
# ---------------------------------------------------------------------------

def test_criterion_2_steering_matrix_oracle():
    rng = np.random.default_rng(77)
    worst_oracle = 0.0
    worst_gram = 0.0
    for _ in range(500):
        frame = random_frame(rng)
        v = reconstruct_v(frame)
        worst_oracle = max(worst_oracle, float(np.max(np.abs(v - brute_force_v(frame)))))
        gram = v.conj().T @ v
        worst_gram = max(worst_gram,
                         float(np.linalg.norm(gram - np.eye(frame.n_cols))))
    assert worst_oracle < 1e-9
    assert worst_gram < 1e-9
    report(2, f"500 frames: oracle max dev {worst_oracle:.2e}, "
              f"orthonormality max dev {worst_gram:.2e} (both < 1e-9)")


# ---------------------------------------------------------------------------
# 3. gradient checks
# ---------------------------------------------------------------------------

def test_criterion_3_gradient_checks():
    start = time.time()
    rng = np.random.default_rng(5150)
    checks = 0
    for _ in range(100):
        c_in, c_out, k = (int(rng.integers(1, 4)) for _ in range(3))
        dil = int(rng.integers(1, 3))
        x = rng.normal(size=(c_in, int(rng.integers(dil * (k - 1) + 1, 12))))
        w = rng.normal(size=(c_out, c_in, k))
        b = rng.normal(size=c_out)
        target = np.zeros((c_out, x.shape[1]))
        assert_gradients_match(
            lambda X, W, B: nn.mse(nn.conv1d(X, W, B, dilation=dil), target),
            x, w, b)
        checks += 1
    for _ in range(100):
        c = int(rng.integers(1, 4))
        x = rng.normal(size=(c, int(rng.integers(1, 14))))
        out_len = int(rng.integers(1, 8))
        assert_gradients_match(
            lambda X: nn.mse(nn.adaptive_avg_pool1d(X, out_len),
                             np.zeros((c, out_len))), x)
        checks += 1
    for _ in range(100):
        n_in, n_out = int(rng.integers(1, 9)), int(rng.integers(1, 9))
        x = rng.normal(size=n_in) + 0.15
        w = rng.normal(size=(n_out, n_in))
        b = rng.normal(size=n_out)
        assert_gradients_match(
            lambda X, W, B: nn.mse(nn.relu(nn.linear(X, W, B)),
                                   np.zeros(n_out)), x, w, b)
        checks += 1
    for _ in range(100):
        n = int(rng.integers(2, 10))
        logits = rng.normal(size=n)
        label = int(rng.integers(n))
        assert_gradients_match(lambda L: nn.cross_entropy(L, label), logits)
        checks += 1
    for _ in range(100):
        x = rng.normal(size=int(rng.integers(1, 9)))
        scale = float(rng.uniform(0.1, 2.0))
        assert_gradients_match(
            lambda X: nn.mse(nn.grad_reverse(X, scale), np.zeros(x.shape)),
            x, flip=-scale)
        checks += 1
    for _ in range(100):
        c = int(rng.integers(1, 4))
        x = rng.normal(size=(c, int(rng.integers(1, 8))))
        out_len = int(rng.integers(1, 14))
        assert_gradients_match(
            lambda X: nn.mse(nn.upsample_linear(X, out_len),
                             np.zeros((c, out_len))), x)
        checks += 1
    elapsed = time.time() - start
    assert elapsed < 30.0
    report(3, f"{checks} gradient checks, rel err < 1e-4 at 64-bit; "
              f"{elapsed:.1f}s (< 30s)")


# ---------------------------------------------------------------------------
# 4. CFAR oracle equivalence and segmentation closed loop
# ---------------------------------------------------------------------------

def test_criterion_4_cfar_oracle_and_closed_loop():
    rng = np.random.default_rng(404)
    params = SegmentationParams(k_keys=6)
    for trial in range(1000):
        values = rng.random(512)
        series = BfiSeries(40.0, values, 0, np.zeros(512, dtype=bool))
        assert cfar_peaks(series, params) == brute_force_cfar(series, params)

    recovered = 0
    total = 0
    for k in (4, 6, 8):
        for seed in range(100):
            pw = "".join(np.random.default_rng([k, seed]).choice(
                list("0123456789"), k))
            lab = synth_keystroke_series(pw, CLOSED_LOOP_SYNTH, seed=seed * 31 + k)
            p = SegmentationParams(k_keys=k)
            peaks = select_topk(cfar_peaks(lab.series, p), lab.series, k, p)
            total += 1
            assert np.abs(np.asarray(peaks) - lab.peak_indices).max() <= 2
            recovered += 1
    report(4, f"CFAR == oracle on 1000 random series (len 512); closed loop "
              f"{recovered}/{total} seeds recover all K peaks within ±2")


# ---------------------------------------------------------------------------
# 5. sparse recovery quality
# ---------------------------------------------------------------------------

def test_criterion_5_sra_recovery(sra_model_full):
    start = time.time()
    held = synth_sine_dataset(16, 240, seed=77)

    # gapless passthrough is exact
    out = recover(sra_model_full, held[0])
    assert np.array_equal(out.values, held[0].values)

    means = {}
    for frac in (0.2, 0.4, 0.6):
        errs = []
        for seed in range(50):
            for i, s in enumerate(held):
                mask = gen_bernoulli_mask(len(s), 1.0 - frac,
                                          seed=seed * 1000 + i)
                sparse = corrupt(s, mask)
                rec = recover(sra_model_full, sparse)
                assert np.array_equal(rec.values[~sparse.gap_mask],
                                      sparse.values[~sparse.gap_mask])
                errs.append(rmse_relative(rec, s))
        means[frac] = float(np.mean(errs))
    assert means[0.6] <= 0.10
    assert means[0.2] <= means[0.4] + 1e-9
    assert means[0.4] <= means[0.6] + 1e-9
    elapsed = time.time() - start
    report(5, "relative RMSE mean "
              + ", ".join(f"{f:.0%}: {means[f]:.4f}" for f in means)
              + f" (60% ≤ 0.10, monotone); passthrough exact; eval {elapsed:.0f}s")


# ---------------------------------------------------------------------------
# 6. adversarial benefit on the multi-domain benchmark
# ---------------------------------------------------------------------------

def accuracy(model, segments):
    hits = sum(model.layout.keys[int(np.argmax(classify(model, s)))] == s.key_label
               for s in segments)
    return hits / len(segments)


def test_criterion_6_adversarial_benefit():
    start = time.time()
    cfg = SynthConfig(cps_range=(0.6, 1.4), transition_gain=0.16,
                      noise_sigma=0.01)
    bench = make_domain_benchmark(cfg, per_key_domain=30,
                                  seen_per_key_domain=10, heldout_per_key=40,
                                  seed=3)
    n_total = len(bench.train) + len(bench.seen_test) + len(bench.heldout)
    assert n_total == 2000

    layout = numeric_layout()
    adv_unseen, base_unseen, adv_seen = [], [], []
    for seed in range(5):
        adv = new_ki_model(layout, seed=seed, lambda_=0.5)
        train_adversarial(bench.train, adv, epochs=14, lr=5e-4, batch=16,
                          seed=seed)
        base = new_ki_model(layout, seed=seed, lambda_=0.0,
                            with_discriminator=False)
        train_adversarial(bench.train, base, epochs=14, lr=5e-4, batch=16,
                          seed=seed)
        adv_seen.append(accuracy(adv, bench.seen_test))
        adv_unseen.append(accuracy(adv, bench.heldout))
        base_unseen.append(accuracy(base, bench.heldout))

    mean_adv = float(np.mean(adv_unseen))
    mean_base = float(np.mean(base_unseen))
    mean_seen = float(np.mean(adv_seen))
    elapsed = time.time() - start
    assert mean_adv >= mean_base + 0.05, (adv_unseen, base_unseen)
    assert mean_adv > 0.30 and mean_base > 0.30
    assert mean_seen >= 0.85
    assert elapsed < 600.0
    report(6, f"unseen-domain accuracy adv {mean_adv:.3f} vs baseline "
              f"{mean_base:.3f} (gap {mean_adv - mean_base:+.3f} ≥ +0.05); "
              f"seen {mean_seen:.3f} ≥ 0.85; {elapsed:.0f}s (< 600s)")


# ---------------------------------------------------------------------------
# 7. ranking exactness and monotone top-n
# ---------------------------------------------------------------------------

def test_criterion_7_ranking_exactness():
    rng = np.random.default_rng(1007)
    keys = tuple("0123456789")
    for _ in range(100):
        dists = []
        for _ in range(4):
            d = rng.random(10)
            d /= d.sum()
            dists.append(d)
        top = rank_passwords(dists, keys, 50)
        grid = np.einsum("i,j,k,l->ijkl", *dists).ravel()
        words = ["".join(w) for w in itertools.product(keys, repeat=4)]
        order = sorted(range(10_000), key=lambda i: (-grid[i], words[i]))[:50]
        assert [c.password for c in top] == [words[i] for i in order]
        for c, i in zip(top, order):
            assert abs(c.probability - grid[i]) < 1e-12

    results = []
    for i in range(40):
        listed = [PasswordCandidate(f"{j:04d}", 1.0 / (j + 1)) for j in range(60)]
        truth = f"{int(rng.integers(80)):04d}"
        results.append((listed, truth))
    curve = [top_n_accuracy(results, n) for n in (1, 5, 10, 20, 50, 100)]
    assert all(a <= b + 1e-12 for a, b in zip(curve, curve[1:]))
    report(7, f"top-50 equals brute force on 100 random sets of 10^4; "
              f"top-n curve monotone {['%.2f' % c for c in curve]}")


# ---------------------------------------------------------------------------
# 8. traffic / missed-keystroke trend
# ---------------------------------------------------------------------------

def test_criterion_8_missed_keystroke_trend():
    base = [synth_keystroke_series(
        "".join(np.random.default_rng([8, i]).choice(list("0123456789"), 6)),
        CLOSED_LOOP_SYNTH, seed=800 + i) for i in range(20)]
    means = []
    for ratio in (0.2, 0.4, 0.6, 0.8, 1.0):
        missed = 0
        trials = 0
        for i, lab in enumerate(base):
            for seed in range(10):     # 20 series x 10 masks = 200 seeds
                _, lost = apply_traffic(lab, ratio, seed=seed * 131 + i)
                missed += len(lost)
                trials += 1
        means.append(missed / trials)
    assert trials == 200
    assert 1.0 <= means[0] <= 3.0
    assert all(a >= b - 1e-9 for a, b in zip(means, means[1:]))
    report(8, "mean missed keystrokes by ratio "
              + ", ".join(f"{r}: {m:.2f}" for r, m in
                          zip((0.2, 0.4, 0.6, 0.8, 1.0), means))
              + " (ratio 0.2 in [1,3], monotone)")


# ---------------------------------------------------------------------------
# 9. end-to-end attack on self-generated captures
# ---------------------------------------------------------------------------

def test_criterion_9_end_to_end_attack(tmp_path, sra_model_full, ki_model_e2e):
    start = time.time()
    db = frozenset({DEFAULT_PAYMENT_IP})
    cfg = PipelineConfig()
    hits = 0
    ranks = []
    for i in range(10):
        lab = synth_dataset({6: 1}, E2E_SYNTH, seed=5000 + i)[0]
        path = str(tmp_path / f"fixture{i}.pcap")
        write_fixture(path, make_attack_capture(lab))
        result = run_attack(path, DEFAULT_VICTIM_MAC, db, sra_model_full,
                            ki_model_e2e, cfg, k_keys=6)
        candidates = [c["password"]
                      for c in result["windows"][0]["candidates"]]
        if lab.password in candidates:
            hits += 1
            ranks.append(candidates.index(lab.password) + 1)
        if i == 0:
            again = run_attack(path, DEFAULT_VICTIM_MAC, db, sra_model_full,
                               ki_model_e2e, cfg, k_keys=6)
            assert dump_report(result) == dump_report(again)
    elapsed = time.time() - start
    assert hits >= 8
    report(9, f"true password in top-100 for {hits}/10 fixtures "
              f"(ranks {ranks}); reports byte-identical; {elapsed:.0f}s")
