import json
import struct

import numpy as np
import pytest

from denoisekit import cli, enhancer as en, trainer as tr, toysignals as ts
from denoisekit.audio import Waveform, read_wav, write_wav


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    rng = np.random.default_rng(0)
    speech = ts.toy_speech(2.0, rng, 8000)
    write_wav(Waveform(speech, 8000), d / "speech.wav", encoding="float32")
    write_wav(Waveform(rng.uniform(-0.3, 0.3, 16000), 8000), d / "noise.wav",
              encoding="float32")
    (d / "clips").mkdir()
    for i in range(3):
        write_wav(Waveform(ts.toy_speech(1.0, rng, 8000), 8000),
                  d / "clips" / f"c{i}.wav", encoding="float32")
    m = en.build(en.WaveUNetConfig(depth=2, base_filters=4), seed=0)
    tr.save_checkpoint(m, None, d / "model.pdck")
    return d


def test_usage_error_exit_code():
    with pytest.raises(SystemExit) as e:
        cli.main(["definitely-not-a-command"])
    assert e.value.code == 2


def test_cochleagram_writes_cgrm(workdir):
    out = workdir / "feat.cgm"
    rc = cli.main(["cochleagram", "--in", str(workdir / "speech.wav"),
                   "--out", str(out), "--filters", "12"])
    assert rc == 0
    raw = out.read_bytes()
    assert raw[:4] == b"CGRM"
    version, n_filters, n_frames, rate = struct.unpack("<IIII", raw[4:20])
    assert (version, n_filters, rate) == (1, 12, 4000)
    assert len(raw) == 20 + 4 * n_filters * n_frames
    feats = cli.read_cgrm(out)
    assert feats.values.shape == (12, n_frames)


def test_mix_hits_requested_snr(workdir):
    out = workdir / "mix.wav"
    clean = workdir / "mixclean.wav"
    rc = cli.main(["mix", "--speech", str(workdir / "speech.wav"),
                   "--noise", str(workdir / "noise.wav"), "--snr", "3.5",
                   "--out", str(out), "--clean-out", str(clean)])
    assert rc == 0
    mixture = read_wav(out).samples
    ref = read_wav(clean).samples
    noise = mixture - ref
    snr = 20 * np.log10(np.linalg.norm(ref) / np.linalg.norm(noise))
    assert snr == pytest.approx(3.5, abs=0.01)  # pcm16 quantization


def test_ssn_and_babble_and_anchors(workdir):
    rc = cli.main(["ssn", "--speech-dir", str(workdir / "clips"),
                   "--duration", "2", "--out", str(workdir / "ssn.wav")])
    assert rc == 0
    assert read_wav(workdir / "ssn.wav").duration_s == pytest.approx(2.0)

    rc = cli.main(["babble", "--speech-dir", str(workdir / "clips"), "--voices", "3",
                   "--duration", "2", "--out", str(workdir / "bab.wav")])
    assert rc == 0

    rc = cli.main(["anchors", "--in-dir", str(workdir / "clips"),
                   "--out-dir", str(workdir / "anch")])
    assert rc == 0
    q = read_wav(workdir / "anch" / "c0.wav")
    levels = np.unique(np.round(q.samples * 8 - 0.5))
    assert len(levels) <= 16


def test_enhance_preserves_duration(workdir):
    out = workdir / "enh.wav"
    rc = cli.main(["enhance", "--model", str(workdir / "model.pdck"),
                   "--in", str(workdir / "speech.wav"), "--out", str(out)])
    assert rc == 0
    assert len(read_wav(out)) == len(read_wav(workdir / "speech.wav"))


def test_gradcheck_quick_gate():
    assert cli.main(["gradcheck", "--suite", "quick"]) == 0


def test_train_and_eval_round_trip(workdir, toy_corpus):
    manifest_path = toy_corpus.root / "manifest.json"
    config = {
        "seed": 1,
        "corpus": str(manifest_path),
        "segment_s": 1.0,
        "snr_range": [-10, 10],
        "model": {"depth": 2, "base_filters": 4},
        "train": {"steps": 8, "batch": 2, "lr": 1e-4, "checkpoint_every": 8},
        "loss": {"kind": "waveform_l1"},
    }
    cfg_path = workdir / "run.json"
    cfg_path.write_text(json.dumps(config))
    run_dir = workdir / "run"
    assert cli.main(["train", "--config", str(cfg_path), "--out", str(run_dir)]) == 0
    ckpts = sorted(run_dir.glob("ckpt-*.pdck"))
    assert ckpts
    assert (run_dir / "config.json").exists()
    assert (run_dir / "loss_curve.csv").read_text().count("\n") == 9

    out_dir = workdir / "eval"
    rc = cli.main(["eval", "--model", str(ckpts[-1]), "--testset", str(manifest_path),
                   "--snrs", "0,6", "--noises", "ssn", "--out", str(out_dir)])
    assert rc == 0
    rows = (out_dir / "report.csv").read_text().strip().splitlines()
    n_clips = len(toy_corpus.select(kind="speech", split="test"))
    assert len(rows) == 1 + n_clips * 1 * 2
    assert json.loads((out_dir / "summary.json").read_text())["n_failed"] == 0


def test_train_rejects_bad_config(workdir):
    bad = {"corpus": "x", "model": {"depth": "deep"}, "train": {}, "loss": {"kind": "waveform_l1"}}
    p = workdir / "bad.json"
    p.write_text(json.dumps(bad))
    assert cli.main(["train", "--config", str(p)]) == 1


def test_serve_app_constructs(tmp_path):
    from denoisekit.listen import create_app
    app = create_app(tmp_path / "store")
    routes = {r.path for r in app.routes}
    assert "/experiments" in routes
    assert "/sessions/{sid}/next" in routes
