"""Command-line entry point: one binary, subcommand per pipeline stage.

Machine-readable outputs go to the paths given by flags; progress and
diagnostics go to stderr. Every run is reproducible from its config
plus seed, and `train` echoes the resolved config into the run
directory. Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import os
import struct
import sys
from pathlib import Path

import numpy as np

from . import datamix, enhancer, losses, metrics, recognizer, trainer
from .audio import Waveform, read_wav, write_wav
from .cochlea import FilterBankConfig, cochleagram
from .errors import DenoiseKitError
from .gradcheck import run_suite

CGRM_MAGIC = b"CGRM"
CGRM_VERSION = 1

RUN_CONFIG_SCHEMA = {
    "type": "object",
    "required": ["corpus", "model", "train", "loss"],
    "properties": {
        "seed": {"type": "integer"},
        "corpus": {"type": "string"},
        "segment_s": {"type": "number", "exclusiveMinimum": 0},
        "snr_range": {"type": "array", "items": {"type": "number"},
                      "minItems": 2, "maxItems": 2},
        "out_dir": {"type": "string"},
        "model": {
            "type": "object",
            "properties": {
                "depth": {"type": "integer", "minimum": 1},
                "base_filters": {"type": "integer", "minimum": 1},
                "growth_factor": {"type": "number"},
                "channel_cap": {"type": "integer"},
                "kernel_down": {"type": "integer"},
                "kernel_up": {"type": "integer"},
                "leaky_slope": {"type": "number"},
                "output_mode": {"enum": ["direct_tanh", "residual"]},
            },
            "additionalProperties": False,
        },
        "train": {
            "type": "object",
            "properties": {
                "steps": {"type": "integer", "minimum": 0},
                "batch": {"type": "integer", "minimum": 1},
                "lr": {"type": "number", "exclusiveMinimum": 0},
                "betas": {"type": "array", "items": {"type": "number"},
                          "minItems": 2, "maxItems": 2},
                "epsilon": {"type": "number"},
                "checkpoint_every": {"type": "integer"},
                "workers": {"type": "integer", "minimum": 1},
            },
            "additionalProperties": False,
        },
        "loss": {"type": "object", "required": ["kind"]},
    },
}


def _fb_flags(p: argparse.ArgumentParser):
    p.add_argument("--filters", type=int, default=40)
    p.add_argument("--spacing", choices=["erb", "linear", "reversed_erb"], default="erb")
    p.add_argument("--fmin", type=float, default=20.0)
    p.add_argument("--fmax", type=float, default=None, help="default: 0.45 * rate")
    p.add_argument("--downsample", type=int, default=None, help="default: rate / 2")
    p.add_argument("--envelope", choices=["off", "lowpass"], default="off")
    p.add_argument("--envelope-cutoff", type=float, default=100.0)


def _fb_config(args, rate) -> FilterBankConfig:
    return FilterBankConfig(
        n_filters=args.filters, spacing=args.spacing, f_min_hz=args.fmin,
        f_max_hz=args.fmax if args.fmax else 0.45 * rate,
        sample_rate_hz=rate,
        downsample_to_hz=args.downsample if args.downsample else rate // 2,
        envelope_mode=args.envelope, envelope_cutoff_hz=args.envelope_cutoff)


def write_cgrm(features, path):
    """Flat binary cochleagram: CGRM header + row-major float32, little-endian."""
    vals = np.ascontiguousarray(features.values, dtype="<f4")
    with open(path, "wb") as f:
        f.write(CGRM_MAGIC)
        f.write(struct.pack("<IIII", CGRM_VERSION, vals.shape[0], vals.shape[1],
                            features.rate_hz))
        f.write(vals.tobytes())


def read_cgrm(path):
    from .cochlea import CochlearFeatures
    with open(path, "rb") as f:
        if f.read(4) != CGRM_MAGIC:
            raise DenoiseKitError(f"{path}: not a CGRM file")
        version, n_filters, n_frames, rate = struct.unpack("<IIII", f.read(16))
        if version != CGRM_VERSION:
            raise DenoiseKitError(f"{path}: unsupported CGRM version {version}")
        data = np.frombuffer(f.read(4 * n_filters * n_frames), dtype="<f4")
    return CochlearFeatures(data.reshape(n_filters, n_frames).astype(np.float64), rate)


def _log(msg):
    print(msg, file=sys.stderr, flush=True)


# ---------------------------------------------------------------------------
# subcommand handlers


def cmd_cochleagram(args):
    w = read_wav(args.input)
    cfg = _fb_config(args, w.sample_rate_hz)
    feats = cochleagram(w, cfg)
    write_cgrm(feats, args.out)
    _log(f"wrote {feats.values.shape[0]}x{feats.values.shape[1]} features to {args.out}")
    if args.dump_text:
        np.savetxt(args.dump_text, feats.values, fmt="%.6g")
    return 0


def cmd_mix(args):
    s = read_wav(args.speech)
    n = read_wav(args.noise)
    if n.sample_rate_hz != s.sample_rate_hz:
        raise DenoiseKitError("speech and noise sample rates differ")
    length = min(len(s), len(n))
    mix = datamix.mix_at_snr(s.samples[:length], n.samples[:length], args.snr)
    write_wav(Waveform(mix.mixture, s.sample_rate_hz), args.out)
    if args.clean_out:
        write_wav(Waveform(mix.clean, s.sample_rate_hz), args.clean_out)
    _log(f"mixed at {args.snr:+.1f} dB (noise gain {mix.noise_gain:.4f}, "
         f"rescale {mix.rescale:.4f})")
    return 0


def _speech_pool(args):
    if args.manifest:
        m = datamix.CorpusManifest.load(args.manifest)
        return [m.read(e) for e in m.select(kind="speech", split="train")]
    root = Path(args.speech_dir)
    return [read_wav(p) for p in sorted(root.glob("*.wav"))]


def _write_noise(w, level, path):
    scale = min(level, 0.95 / np.max(np.abs(w.samples)))
    write_wav(Waveform(scale * w.samples, w.sample_rate_hz), path, encoding="float32")


def cmd_ssn(args):
    refs = _speech_pool(args)
    out = datamix.speech_shaped_noise(refs, args.duration, seed=args.seed)
    _write_noise(out, args.level, args.out)
    _log(f"wrote {args.duration}s speech-shaped noise to {args.out}")
    return 0


def cmd_babble(args):
    voices = _speech_pool(args)
    out = datamix.babble(voices, n_voices=args.voices, duration_s=args.duration,
                         seed=args.seed)
    _write_noise(out, args.level, args.out)
    _log(f"wrote {args.voices}-voice babble to {args.out}")
    return 0


def cmd_anchors(args):
    in_dir, out_dir = Path(args.in_dir), Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    n = 0
    for p in sorted(in_dir.glob("*.wav")):
        write_wav(datamix.quantize_anchor(read_wav(p), args.bits), out_dir / p.name)
        n += 1
    _log(f"quantized {n} clips to {args.bits}-bit anchors in {out_dir}")
    return 0


def cmd_make_toy_corpus(args):
    path = datamix.build_toy_corpus(args.out, n_speech=args.clips,
                                    sample_rate_hz=args.rate,
                                    clip_s=args.clip_seconds, seed=args.seed)
    _log(f"toy corpus manifest: {path}")
    return 0


def cmd_train(args):
    import jsonschema
    doc = json.loads(Path(args.config).read_text())
    jsonschema.validate(doc, RUN_CONFIG_SCHEMA)
    seed = doc.get("seed", 0)
    manifest = datamix.CorpusManifest.load(doc["corpus"])
    sampler = datamix.TrainingSampler(
        manifest, segment_s=doc.get("segment_s", 2.0),
        snr_range=tuple(doc.get("snr_range", (-20.0, 10.0))), seed=seed)
    model = enhancer.build(enhancer.WaveUNetConfig(**doc["model"]), seed=seed)
    tdoc = dict(doc["train"])
    if "betas" in tdoc:
        tdoc["betas"] = tuple(tdoc["betas"])
    # DENOISEKIT_THREADS sets the default batch-parallel worker count
    tdoc.setdefault("workers", int(os.environ.get("DENOISEKIT_THREADS", "1")))
    tcfg = trainer.TrainConfig(seed=seed, **tdoc)
    spec = losses.loss_spec_from_json(doc["loss"])
    out_dir = Path(args.out or doc.get("out_dir", "run"))
    _log(f"training {tcfg.steps} steps into {out_dir}")
    run = trainer.train(model, spec, sampler, tcfg, run_dir=out_dir)
    final = run.loss_curve[-1]
    _log(f"done in {run.wall_time_s:.0f}s; final loss {final[1]:.5f} (ema {final[2]:.5f})")
    return 0


def cmd_enhance(args):
    model, _ = trainer.load_checkpoint(args.model)
    if not isinstance(model, enhancer.EnhancerModel):
        raise DenoiseKitError(f"{args.model} is not an enhancer checkpoint")
    w = read_wav(args.input)
    out = enhancer.enhance(model, w)
    write_wav(out, args.out)
    _log(f"enhanced {args.input} -> {args.out} ({w.duration_s:.2f}s)")
    return 0


def cmd_eval(args):
    model, _ = trainer.load_checkpoint(args.model)
    testset = datamix.CorpusManifest.load(args.testset)
    snrs = [float(s) for s in args.snrs.split(",")]
    noises = args.noises.split(",")
    report = metrics.evaluate(model, testset, snr_levels=snrs, noise_types=noises,
                              split=args.split, seed=args.seed)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    report.to_csv(out_dir / "report.csv")
    report.to_json(out_dir / "summary.json")
    for key, agg in report.aggregates.items():
        _log(f"{key}: si_sdr {agg['si_sdr_db']:+.2f} dB, sdr {agg['sdr_db']:+.2f} dB, "
             f"stoi {agg['stoi']:.3f} (n={agg['n']})")
    return 0


def cmd_gradcheck(args):
    results = run_suite(args.suite, report=_log)
    failed = [r for r in results if not r.passed]
    _log(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return 1 if failed else 0


def cmd_train_recognizer(args):
    fb = recognizer.word_task_filter_bank(args.rate)
    _log(f"building toy word corpus at {args.rate} Hz (seed {args.seed})")
    corpus = recognizer.build_toy_word_corpus(
        fb, n_train_per_class=args.train_per_class,
        n_val_per_class=args.val_per_class, seed=args.seed)
    cfg = recognizer.RecognizerConfig(
        layers=recognizer.WORD_TASK_CONFIG.layers,
        n_classes=recognizer.WORD_TASK_CONFIG.n_classes,
        seed=args.seed, filter_bank=fb)
    model = recognizer.build(cfg)
    result = recognizer.train_toy_words(model, corpus, steps=args.steps,
                                        lr=args.lr, seed=args.seed, task=args.task,
                                        target_accuracy=args.target_accuracy)
    trainer.save_checkpoint(result.model, None, args.out)
    _log(f"val accuracy {result.final_val_accuracy:.3f}; checkpoint: {args.out}")
    return 0


def cmd_calibrate(args):
    model, _ = trainer.load_checkpoint(args.model)
    manifest = datamix.CorpusManifest.load(args.corpus)
    entries = manifest.select(kind="speech", split="train")[:args.clips]
    rate = model.config.filter_bank.sample_rate_hz
    clips = []
    for e in entries:
        w = manifest.read(e)
        if w.sample_rate_hz != rate:
            raise DenoiseKitError(f"{e.path}: rate {w.sample_rate_hz} != model rate {rate}")
        clips.append(w.samples[: int(2.0 * rate)])
    weights = losses.calibrate_layer_weights(model, clips)
    spec = losses.LossSpec(
        kind="deep_features",
        members=(losses.DeepFeatureMember(checkpoint=str(args.model),
                                          layer_weights=tuple(weights)),))
    Path(args.out).write_text(json.dumps(losses.loss_spec_to_json(spec), indent=2))
    _log(f"layer weights {np.array2string(weights, precision=4)} -> {args.out}")
    return 0


def cmd_serve(args):
    import uvicorn
    from .listen import create_app
    app = create_app(args.store, cors_origins=args.cors.split(","),
                     ui_dir=args.ui or None)
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="denoisekit",
                                 description="speech enhancement toolkit")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("cochleagram", help="waveform -> CGRM feature file")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dump-text", default=None)
    _fb_flags(p)
    p.set_defaults(fn=cmd_cochleagram)

    p = sub.add_parser("mix", help="mix speech and noise at an exact SNR")
    p.add_argument("--speech", required=True)
    p.add_argument("--noise", required=True)
    p.add_argument("--snr", type=float, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--clean-out", default=None)
    p.set_defaults(fn=cmd_mix)

    for name, fn, extra in (("ssn", cmd_ssn, False), ("babble", cmd_babble, True)):
        p = sub.add_parser(name, help=f"synthesize {name} noise")
        p.add_argument("--speech-dir", default=None)
        p.add_argument("--manifest", default=None)
        p.add_argument("--duration", type=float, default=30.0)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--level", type=float, default=0.3)
        p.add_argument("--out", required=True)
        if extra:
            p.add_argument("--voices", type=int, default=8)
        p.set_defaults(fn=fn)

    p = sub.add_parser("anchors", help="4-bit-quantize clips for the low anchor")
    p.add_argument("--in-dir", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--bits", type=int, default=4)
    p.set_defaults(fn=cmd_anchors)

    p = sub.add_parser("make-toy-corpus", help="write the built-in toy corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--clips", type=int, default=120)
    p.add_argument("--rate", type=int, default=8000)
    p.add_argument("--clip-seconds", type=float, default=4.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_make_toy_corpus)

    p = sub.add_parser("train", help="train an enhancer from a run config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None, help="run directory (overrides config)")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("enhance", help="run a trained model over a WAV")
    p.add_argument("--model", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_enhance)

    p = sub.add_parser("eval", help="objective metric sweep")
    p.add_argument("--model", required=True)
    p.add_argument("--testset", required=True)
    p.add_argument("--snrs", default="-18,-12,-6,0,6")
    p.add_argument("--noises", default="ssn,babble")
    p.add_argument("--split", default="test")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--suite", choices=["all", "quick"], default="all")
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("train-recognizer", help="train the toy word/texture net")
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, default=3000)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--rate", type=int, default=20000)
    p.add_argument("--task", choices=["word", "texture"], default="word")
    p.add_argument("--train-per-class", type=int, default=20)
    p.add_argument("--val-per-class", type=int, default=5)
    p.add_argument("--target-accuracy", type=float, default=None)
    p.set_defaults(fn=cmd_train_recognizer)

    p = sub.add_parser("calibrate", help="calibrate deep-feature layer weights")
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--clips", type=int, default=16)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_calibrate)

    p = sub.add_parser("serve", help="run the listening-test service")
    p.add_argument("--store", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--cors", default="*")
    p.add_argument("--ui", default=None, help="serve a built frontend from this dir at /ui")
    p.set_defaults(fn=cmd_serve)

    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except DenoiseKitError as e:
        _log(f"error: {e}")
        return 1
    except Exception as e:  # jsonschema, IO, ...
        _log(f"error: {type(e).__name__}: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
