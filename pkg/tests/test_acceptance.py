"""Acceptance gate: each criterion prints one PASS/FAIL line.

Run: pytest tests/test_acceptance.py -v -s
The desk-scale training runs (criteria 5-6) dominate the runtime; they
share one module-scoped set of trained models. Criterion 5's stated
runtime budget assumes 4 CPU cores; the wall-clock bound is scaled
accordingly when fewer cores are available (the measured times are
printed either way).
"""

import os
import time
from pathlib import Path

import numpy as np
import pytest
from scipy.stats import chisquare

import denoisekit.diffgraph as dg
from denoisekit import datamix as dm
from denoisekit import enhancer as en
from denoisekit import losses as lo
from denoisekit import metrics as me
from denoisekit import recognizer as rec
from denoisekit import trainer as tr
from denoisekit.audio import Waveform
from denoisekit.cochlea import FilterBankConfig, build_filter_bank, cochleagram
from denoisekit.gradcheck import run_suite

pytestmark = pytest.mark.acceptance

RATE = 8000
SEGMENT_S = 2.0
FB40 = FilterBankConfig(n_filters=40, f_min_hz=20.0, f_max_hz=3600.0,
                        sample_rate_hz=RATE, downsample_to_hz=RATE // 2)
TRAIN_BUDGET_S = 30 * 60 * (4 / min(os.cpu_count() or 1, 4))


def report(criterion, name, passed, detail=""):
    print(f"\nACCEPTANCE {criterion} [{name}]: {'PASS' if passed else 'FAIL'}  {detail}")
    assert passed, f"criterion {criterion} ({name}) failed: {detail}"


# ---------------------------------------------------------------------------
# shared desk-scale fixtures


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("acceptance-corpus")
    path = dm.build_toy_corpus(root, n_speech=120, sample_rate_hz=RATE,
                               clip_s=4.0, seed=7)
    return dm.CorpusManifest.load(path)


@pytest.fixture(scope="module")
def loss_recognizer(corpus):
    """Toy-trained recognizer at the corpus rate, for the deep-feature loss."""
    fb = rec.word_task_filter_bank(RATE)
    words = rec.build_toy_word_corpus(fb, n_train_per_class=12, n_val_per_class=3,
                                      seed=3, clip_s=1.0)
    model = rec.build(rec.loss_net_config(RATE, seed=3))
    result = rec.train_toy_words(model, words, steps=1200, lr=1e-3, seed=3,
                                 val_every=200, target_accuracy=0.85)
    clips = [corpus.read(e).samples[: int(2 * RATE)]
             for e in corpus.select(kind="speech", split="train")[:16]]
    weights = lo.calibrate_layer_weights(result.model, clips)
    member = lo.DeepFeatureMember(model=result.model, layer_weights=tuple(weights))
    return result, member


def desk_train(corpus, spec, seed=2):
    sampler = dm.TrainingSampler(corpus, segment_s=SEGMENT_S,
                                 snr_range=(-20.0, 10.0), seed=11)
    model = en.build(en.WaveUNetConfig(depth=4, base_filters=8,
                                       output_mode="residual"), seed=1)
    cfg = tr.TrainConfig(steps=2000, batch=4, lr=1e-4, seed=seed, checkpoint_every=0)
    run = tr.train(model, spec, sampler, cfg)
    return model, run


def heldout_panel(corpus, model, n_clips=10):
    """SI-SDR delta plus waveform/cochlear distances on val clips at 0 dB."""
    val = corpus.select(kind="speech", split="val")[:n_clips]
    noise = corpus.read(corpus.select(kind="noise", split="val", label="ssn")[0])
    rng = np.random.default_rng(3)
    seg = int(SEGMENT_S * RATE)
    deltas, wl1s, cochs = [], [], []
    for e in val:
        sp = corpus.read(e).samples[:seg]
        off = rng.integers(0, len(noise) - seg)
        mix = dm.mix_at_snr(sp, noise.samples[off:off + seg], 0.0)
        est = en.enhance(model, Waveform(mix.mixture, RATE))
        deltas.append(me.sdr(mix.clean, est.samples, "scale_invariant")
                      - me.sdr(mix.clean, mix.mixture, "scale_invariant"))
        wl1s.append(lo.waveform_loss(est.samples, mix.clean))
        cochs.append(lo.cochlear_loss(est.samples, mix.clean, FB40))
    return float(np.mean(deltas)), float(np.mean(wl1s)), float(np.mean(cochs))


@pytest.fixture(scope="module")
def trained_models(corpus, loss_recognizer):
    _, member = loss_recognizer
    specs = {
        "waveform_l1": lo.LossSpec(kind="waveform_l1"),
        "cochlear": lo.LossSpec(kind="cochlear", filter_bank=FB40),
        "deep_feature": lo.LossSpec(kind="deep_features", members=(member,)),
    }
    out = {}
    for name, spec in specs.items():
        t0 = time.time()
        model, run = desk_train(corpus, spec)
        out[name] = {"model": model, "run": run, "wall_s": time.time() - t0}
        print(f"\n[trained {name}: {out[name]['wall_s']:.0f}s]")
    return out


# ---------------------------------------------------------------------------
# criteria


def test_criterion_1_gradient_integrity():
    t0 = time.time()
    results = run_suite("all", tolerance=1e-5, h=1e-6, probes=100)
    wall = time.time() - t0
    failed = [r for r in results if not r.passed]
    worst = max(results, key=lambda r: r.max_error)
    report(1, "gradient integrity",
           not failed and wall < 600 * (4 / min(os.cpu_count() or 1, 4)),
           f"{len(results)} op families, worst {worst.name} at {worst.max_error:.2e}, "
           f"{wall:.0f}s on {os.cpu_count()} cores")


def test_criterion_2_filter_bank_physics():
    problems = []
    for n in (5, 10, 20, 40, 80, 160):
        cfg = FilterBankConfig(n_filters=n, f_min_hz=20.0, f_max_hz=10000.0,
                               sample_rate_hz=20000, downsample_to_hz=10000)
        bank = build_filter_bank(cfg)
        h = bank.response_matrix(20000)
        freqs = np.fft.rfftfreq(20000, 1 / 20000)
        lo_f = bank.cutoff_freqs_hz[1][0] if n > 2 else bank.cutoff_freqs_hz[0][0]
        hi_f = bank.cutoff_freqs_hz[-2][1] if n > 2 else bank.cutoff_freqs_hz[-1][1]
        inside = (freqs >= lo_f) & (freqs <= hi_f)
        tile_db = 10 * np.log10((h ** 2).sum(axis=0)[inside] + 1e-300)
        if np.max(np.abs(tile_db)) >= 0.5:
            problems.append(f"N={n} tiling ripple {np.max(np.abs(tile_db)):.3f} dB")

        t = np.arange(40000) / 20000
        probes = np.unique(np.linspace(0, n - 1, min(20, n)).astype(int))
        hits = 0
        for k in probes:
            tone = 0.3 * np.sin(2 * np.pi * bank.center_freqs_hz[k] * t)
            feats = cochleagram(Waveform(tone, 20000), cfg)
            hits += int(np.argmax(feats.values.mean(axis=1)) == k)
        if hits != len(probes):
            problems.append(f"N={n}: {hits}/{len(probes)} probe tones landed")

    rev = build_filter_bank(FilterBankConfig(n_filters=40, spacing="reversed_erb",
                                             sample_rate_hz=20000))
    if not np.all(np.diff(rev.bandwidths_hz()) < 0):
        problems.append("reversed bank bandwidths not monotone decreasing")
    report(2, "filter-bank physics", not problems, "; ".join(problems) or
           "6 bank sizes tiled, probes landed, reversed bank monotone")


def test_criterion_3_mixing_exactness(corpus):
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(1000):
        s = rng.uniform(-0.5, 0.5, 400) + rng.uniform(0.01, 0.1)
        n = rng.uniform(-0.5, 0.5, 400) + rng.uniform(0.01, 0.1)
        snr = rng.uniform(-20, 10)
        mix = dm.mix_at_snr(s, n, snr)
        worst = max(worst, abs(dm.measured_snr_db(mix) - snr))

    sampler = dm.TrainingSampler(corpus, segment_s=1.0, snr_range=(-20, 10), seed=1)
    snrs = []
    step = 0
    while len(snrs) < 10000:
        for noisy, clean in sampler(step, 8):
            noise = noisy - clean
            snrs.append(20 * np.log10(np.linalg.norm(clean) / np.linalg.norm(noise)))
        step += 1
    hist, _ = np.histogram(snrs[:10000], bins=20, range=(-20, 10))
    pvalue = chisquare(hist).pvalue
    report(3, "mixing exactness", worst < 1e-9 and pvalue > 0.01,
           f"max SNR error {worst:.2e} dB over 1000 mixes; chi^2 p={pvalue:.3f} on 10k draws")


def test_criterion_4_metric_oracles(corpus):
    problems = []
    rng = np.random.default_rng(0)
    s = rng.standard_normal(2000)
    s /= np.linalg.norm(s)
    u = rng.standard_normal(2000)
    u -= (u @ s) * s
    u /= np.linalg.norm(u)
    si = me.sdr(s, s + 0.1 * u, "scale_invariant")
    if abs(si - 20.0) > 0.01:
        problems.append(f"orthogonal SI-SDR {si:.4f} != 20")
    est = s + 0.1 * u
    if me.sdr(s, 4.0 * est) != me.sdr(s, est):
        problems.append("SI-SDR not exact under power-of-two estimate scaling")
    if abs(me.sdr(s, 3.7 * est) - me.sdr(s, est)) > 1e-9:
        problems.append("SI-SDR drifts under arbitrary estimate scaling")

    from denoisekit.toysignals import toy_speech
    stoi_checks = 0
    for seed in range(5):
        sp = Waveform(toy_speech(3.0, np.random.default_rng(seed), 10000), 10000)
        if abs(me.stoi(sp, sp) - 1.0) > 1e-6:
            problems.append(f"stoi(x,x) != 1 for clip {seed}")
        ssn = dm.speech_shaped_noise([sp], 3.0, seed=100 + seed)
        scores = []
        for snr in (20, 10, 0, -10):
            mix = dm.mix_at_snr(sp.samples, ssn.samples, snr)
            scores.append(me.stoi(Waveform(mix.clean, 10000),
                                  Waveform(mix.mixture, 10000)))
        if not all(a >= b for a, b in zip(scores, scores[1:])):
            problems.append(f"stoi not non-increasing for clip {seed}: {scores}")
        stoi_checks += 1

    identity = en.build(en.WaveUNetConfig(depth=2, base_filters=4,
                                          output_mode="residual"), seed=0)
    identity.params["final.w"][:] = 0
    identity.params["final.b"][:] = 0
    rep = me.evaluate(identity, corpus, snr_levels=(-6, 0, 6), noise_types=("ssn",),
                      split="test", segment_s=2.0)
    for (noise, snr), agg in rep.aggregates.items():
        if noise == "all":
            continue
        if abs(agg["sdr_db"] - snr) > 1.0:
            problems.append(f"identity SDR at {snr} dB came out {agg['sdr_db']:.2f}")
    report(4, "metric oracles", not problems,
           "; ".join(problems) or f"SI-SDR/STOI oracles hold over {stoi_checks} clips")


def test_criterion_5_desk_scale_training(corpus, trained_models):
    problems = []
    details = []
    for name, entry in trained_models.items():
        ema = [e for _, _, e in entry["run"].loss_curve]
        ratio = ema[-1] / ema[49]
        details.append(f"{name}: ema ratio {ratio:.3f}, {entry['wall_s']:.0f}s")
        if ratio > 0.5:
            problems.append(f"{name} EMA fell only {100 * (1 - ratio):.1f}% (<50%)")
        if entry["wall_s"] > TRAIN_BUDGET_S:
            problems.append(f"{name} took {entry['wall_s']:.0f}s > {TRAIN_BUDGET_S:.0f}s budget")

    for name in ("waveform_l1", "cochlear"):
        delta, _, _ = heldout_panel(corpus, trained_models[name]["model"])
        details.append(f"{name}: dSI-SDR {delta:+.2f} dB")
        if delta < 3.0:
            problems.append(f"{name} held-out SI-SDR gain {delta:+.2f} dB < +3 dB")
    report(5, "desk-scale training", not problems, "; ".join(problems + details))


def test_criterion_6_loss_target_specificity(corpus, trained_models):
    _, w_wl1, w_coch = heldout_panel(corpus, trained_models["waveform_l1"]["model"])
    _, c_wl1, c_coch = heldout_panel(corpus, trained_models["cochlear"]["model"])
    coch_margin = (w_coch - c_coch) / w_coch
    wl1_margin = (c_wl1 - w_wl1) / c_wl1
    ok = coch_margin >= 0.05 and wl1_margin >= 0.05
    report(6, "loss-target specificity", ok,
           f"cochlear distance: coch-model {c_coch:.5f} vs wave-model {w_coch:.5f} "
           f"(margin {100 * coch_margin:.1f}%); waveform L1: wave-model {w_wl1:.5f} "
           f"vs coch-model {c_wl1:.5f} (margin {100 * wl1_margin:.1f}%)")


def test_criterion_7_recognizer_word_task():
    fb = rec.word_task_filter_bank(20000)
    words = rec.build_toy_word_corpus(fb, n_train_per_class=20, n_val_per_class=5,
                                      seed=0, clip_s=1.0)
    model = rec.build(rec.RecognizerConfig(
        layers=rec.WORD_TASK_CONFIG.layers, n_classes=16, seed=0, filter_bank=fb))
    chance = rec.accuracy(model, words.val_features, words.val_words)
    result = rec.train_toy_words(model, words, steps=3000, lr=1e-3, seed=0,
                                 val_every=200, target_accuracy=0.92)
    steps_used = result.accuracy_curve[-1][0]
    ok = result.final_val_accuracy > 0.90 and abs(chance - 1 / 16) <= 0.05
    report(7, "recognizer word task", ok,
           f"val accuracy {result.final_val_accuracy:.3f} after {steps_used} steps "
           f"(chance baseline {chance:.3f})")


def test_criterion_8_anchor_and_protocol_fixtures(tmp_path):
    problems = []
    grid = np.linspace(-1, 1, 40001)
    q = dm.quantize_anchor(Waveform(grid, RATE), 4)
    max_err = np.max(np.abs(q.samples - grid))
    if abs(max_err - 0.0625) > 1e-12:
        problems.append(f"quantizer max error {max_err} != 0.0625")

    # protocol fixture: reuse the scripted 10-participant experiment
    from tests.test_listen_service import (oracle_table, run_scripted_experiment,
                                           CLIPS, SNRS, N_CONDITIONS)
    from denoisekit.listen import build_manifest
    from denoisekit.listen.experiment import ANCHOR_HIGH, ANCHOR_LOW
    from denoisekit.errors import ManifestValidationError
    from denoisekit.audio import write_wav
    from denoisekit.datamix import quantize_anchor as qa
    from denoisekit.toysignals import toy_speech

    rng = np.random.default_rng(0)
    conds = {}
    for c in range(N_CONDITIONS):
        d = tmp_path / f"model{c}"
        d.mkdir()
        conds[f"model{c}"] = str(d)
        for k in CLIPS:
            write_wav(Waveform(rng.uniform(-0.3, 0.3, 2000), RATE), d / f"{k}.wav")
    hi = tmp_path / "hi"
    lo_dir = tmp_path / "lo"
    hi.mkdir()
    lo_dir.mkdir()
    for k in CLIPS:
        w = Waveform(toy_speech(0.5, rng, RATE), RATE)
        write_wav(w, hi / f"{k}.wav")
        write_wav(qa(w, 4), lo_dir / f"{k}.wav")
    manifest = build_manifest("exp-main", conds, hi, lo_dir, CLIPS,
                              snr_by_clip=SNRS, seed=3)

    # invariants enforced
    broken = build_manifest("exp-bad", conds, hi, lo_dir, CLIPS, seed=3)
    broken.trials[0].stimuli = broken.trials[0].stimuli[:6]
    try:
        broken.validate()
        problems.append("7-stimulus invariant not enforced")
    except ManifestValidationError:
        pass
    broken2 = build_manifest("exp-bad2", conds, hi, lo_dir, CLIPS, seed=3)
    broken2.catch_trials = broken2.catch_trials[:2]
    try:
        broken2.validate()
        problems.append("3-catch-trial invariant not enforced")
    except ManifestValidationError:
        pass

    client = run_scripted_experiment(manifest, tmp_path / "store")
    doc = client.get("/experiments/exp-main/results").json()
    if (doc["n_sessions"], doc["n_included"], doc["n_excluded_catch"]) != (10, 8, 2):
        problems.append(f"inclusion counts off: {doc}")
    table, overall = oracle_table(manifest)
    got = {c["condition"]: c for c in doc["conditions"]}
    for (cond, snr), (mean, sem, n) in table.items():
        cell = next(x for x in got[cond]["per_snr"] if x["snr_db"] == snr)
        if not np.isclose(cell["mean"], mean, rtol=1e-12):
            problems.append(f"{cond}@{snr}: mean {cell['mean']} != {mean}")
        if sem is not None and not np.isclose(cell["sem"], sem, rtol=1e-12):
            problems.append(f"{cond}@{snr}: sem {cell['sem']} != {sem}")
    for cond, (mean, sem) in overall.items():
        if not np.isclose(got[cond]["overall"]["mean"], mean, rtol=1e-12):
            problems.append(f"{cond} overall mean mismatch")
    report(8, "anchors and protocol fixtures", not problems,
           "; ".join(problems) or
           "quantizer exact; 10-rater fixture reproduced (8 included, 2 catch-excluded)")


def test_criterion_9_adam():
    problems = []
    for g0 in (0.5, -0.25, 3.0):
        p = {"w": np.array([1.0])}
        st = tr.AdamState.for_params(p)
        tr.adam_step(p, {"w": np.array([g0])}, st, tr.TrainConfig(lr=1e-4))
        delta = p["w"][0] - 1.0
        if abs(abs(delta) - 1e-4) > 1e-9:
            problems.append(f"first-step magnitude {abs(delta):.3e} for g={g0}")
        if np.sign(delta) != -np.sign(g0):
            problems.append(f"first step moved with the gradient for g={g0}")

    rng = np.random.default_rng(1)
    p = {"w": rng.standard_normal(128)}
    st = tr.AdamState.for_params(p)
    cfg = tr.TrainConfig(lr=2e-3)
    m = np.zeros(128)
    v = np.zeros(128)
    ref = p["w"].copy()
    worst = 0.0
    for t in range(1, 51):
        g = rng.standard_normal(128)
        tr.adam_step(p, {"w": g.copy()}, st, cfg)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        ref -= cfg.lr * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + cfg.epsilon)
        worst = max(worst, float(np.max(np.abs(ref - p["w"]))))
    if worst >= 1e-12:
        problems.append(f"reference mismatch {worst:.2e}")
    report(9, "ADAM oracle", not problems,
           "; ".join(problems) or f"first-step exact, 50-step reference match {worst:.1e}")
