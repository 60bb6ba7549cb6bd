import json

import numpy as np
import pytest
from fastapi.testclient import TestClient

from denoisekit.audio import Waveform, read_wav, write_wav
from denoisekit.datamix import quantize_anchor
from denoisekit.errors import ManifestValidationError
from denoisekit.listen import build_manifest, create_app
from denoisekit.listen.experiment import (ANCHOR_HIGH, ANCHOR_LOW,
                                          ExperimentManifest, StimulusRef, TrialSpec)
from denoisekit.listen.screening import plan_screening
from denoisekit.listen.service import _sid_seed
from denoisekit import toysignals as ts

N_CONDITIONS = 7
CLIPS = ["clip0", "clip1", "clip2", "clip3"]
SNRS = {"clip0": 0.0, "clip1": 0.0, "clip2": 6.0, "clip3": 6.0}


@pytest.fixture(scope="module")
def stimuli_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("stimuli")
    rng = np.random.default_rng(0)
    conds = {}
    for c in range(N_CONDITIONS):
        d = root / f"model{c}"
        d.mkdir()
        conds[f"model{c}"] = str(d)
        for k in CLIPS:
            write_wav(Waveform(rng.uniform(-0.3, 0.3, 2000), 8000), d / f"{k}.wav")
    hi = root / "anchor_high"
    lo = root / "anchor_low"
    hi.mkdir()
    lo.mkdir()
    for k in CLIPS:
        w = Waveform(ts.toy_speech(0.5, rng, 8000), 8000)
        write_wav(w, hi / f"{k}.wav")
        write_wav(quantize_anchor(w, 4), lo / f"{k}.wav")
    return root, conds, hi, lo


@pytest.fixture()
def manifest(stimuli_root):
    root, conds, hi, lo = stimuli_root
    return build_manifest("exp-main", conds, hi, lo, CLIPS, snr_by_clip=SNRS, seed=3)


class TestManifest:
    def test_six_stimulus_trial_rejected(self, manifest):
        manifest.trials[0].stimuli = manifest.trials[0].stimuli[:6]
        with pytest.raises(ManifestValidationError, match="6 stimuli"):
            manifest.validate()

    def test_two_catch_trials_rejected(self, manifest):
        manifest.catch_trials = manifest.catch_trials[:2]
        with pytest.raises(ManifestValidationError, match="catch"):
            manifest.validate()

    def test_catch_trials_must_hold_both_anchors(self, manifest):
        cid = manifest.catch_trials[0]
        trial = next(t for t in manifest.trials if t.trial_id == cid)
        trial.stimuli = [s if s.condition != ANCHOR_LOW else StimulusRef("model0", s.clip_id)
                         for s in trial.stimuli]
        with pytest.raises(ManifestValidationError, match="anchors"):
            manifest.validate()

    def test_missing_audio_listed(self, manifest):
        manifest.trials[0].stimuli[0] = StimulusRef("model0", "ghost")
        with pytest.raises(ManifestValidationError, match="ghost"):
            manifest.validate()

    def test_round_trip(self, manifest):
        doc = manifest.to_json()
        back = ExperimentManifest.from_json(doc).validate()
        assert back.to_json() == doc


class TestScreeningAudio:
    def test_antiphase_channel_is_exact_negation(self, tmp_path):
        from denoisekit.listen.screening import make_screening_trial
        path = tmp_path / "s.wav"
        make_screening_trial(quiet_index=0, antiphase_index=2, path=path)
        import struct
        raw = path.read_bytes()
        pcm = np.frombuffer(raw[44:], dtype="<i2")
        left, right = pcm[0::2].astype(int), pcm[1::2].astype(int)
        n_tone = int(0.7 * 20000)
        n_gap = int(0.25 * 20000)
        seg = slice(2 * (n_tone + n_gap), 2 * (n_tone + n_gap) + n_tone)
        assert np.array_equal(left[seg], -right[seg])  # antiphase slot
        first = slice(0, n_tone)
        assert np.array_equal(left[first], right[first])  # in-phase slot

    def test_plan_is_deterministic_and_valid(self):
        a = plan_screening(1234)
        b = plan_screening(1234)
        assert a == b
        assert len(a) == 6
        for item in a:
            assert item["quiet"] != item["antiphase"]


def _pass_screening(client, sid):
    client.get(f"/sessions/{sid}/screening")
    answers = [p["quiet"] for p in plan_screening(_sid_seed(sid))]
    r = client.post(f"/sessions/{sid}/screening", json={"answers": answers})
    assert r.json()["passed"]


class TestProtocol:
    @pytest.fixture()
    def client(self, manifest, tmp_path):
        app = create_app(tmp_path / "store")
        client = TestClient(app)
        r = client.post("/experiments", json=manifest.to_json())
        assert r.status_code == 201
        return client

    def _session(self, client):
        return client.post("/experiments/exp-main/sessions").json()["session_id"]

    def test_screening_thresholds(self, client):
        sid = self._session(client)
        client.get(f"/sessions/{sid}/screening")
        keys = plan_screening(_sid_seed(sid))
        answers = [k["quiet"] for k in keys]
        answers[0] = (answers[0] + 1) % 3
        answers[1] = (answers[1] + 1) % 3  # 4/6 -> fail
        r = client.post(f"/sessions/{sid}/screening", json={"answers": answers})
        assert r.json() == {"passed": False, "n_correct": 4}
        # idempotent: a corrected resubmission does not overturn the first
        r2 = client.post(f"/sessions/{sid}/screening",
                         json={"answers": [k["quiet"] for k in keys]})
        assert r2.json()["passed"] is False
        assert r2.json()["duplicate"] is True

    def test_five_of_six_passes(self, client):
        sid = self._session(client)
        client.get(f"/sessions/{sid}/screening")
        answers = [k["quiet"] for k in plan_screening(_sid_seed(sid))]
        answers[3] = (answers[3] + 1) % 3  # 5/6
        assert client.post(f"/sessions/{sid}/screening",
                           json={"answers": answers}).json()["passed"] is True

    def test_next_requires_screening(self, client):
        sid = self._session(client)
        assert client.get(f"/sessions/{sid}/next").status_code == 403

    def test_trial_payload_shape_and_persistence(self, client):
        sid = self._session(client)
        _pass_screening(client, sid)
        doc = client.get(f"/sessions/{sid}/next").json()
        assert len(doc["stimuli"]) == 7
        assert doc["scale"] == {"min": 1, "max": 7}
        again = client.get(f"/sessions/{sid}/next").json()
        assert again["trial_id"] == doc["trial_id"]  # same until submitted
        assert [s["token"] for s in again["stimuli"]] == [s["token"] for s in doc["stimuli"]]

    def test_payload_is_blind(self, client, manifest, stimuli_root):
        root, conds, hi, lo = stimuli_root
        sid = self._session(client)
        _pass_screening(client, sid)
        doc = client.get(f"/sessions/{sid}/next").json()
        payload = json.dumps(doc)
        for cond in conds:
            assert cond not in payload
        assert str(root) not in payload
        assert "anchor_high" not in payload.replace("high_url", "")
        assert ANCHOR_HIGH not in payload

    def test_rating_validation(self, client):
        sid = self._session(client)
        _pass_screening(client, sid)
        doc = client.get(f"/sessions/{sid}/next").json()
        toks = [s["token"] for s in doc["stimuli"]]

        def body(**over):
            ratings = [dict(token=t, rating=4, play_count=1) for t in toks]
            for k, v in over.items():
                ratings[0][k] = v
            return {"trial_id": doc["trial_id"], "ratings": ratings}

        assert client.post(f"/sessions/{sid}/ratings", json=body(rating=0)).status_code == 400
        assert client.post(f"/sessions/{sid}/ratings", json=body(rating=8)).status_code == 400
        assert client.post(f"/sessions/{sid}/ratings", json=body(play_count=0)).status_code == 400
        short = {"trial_id": doc["trial_id"],
                 "ratings": [dict(token=t, rating=4, play_count=1) for t in toks[:6]]}
        assert client.post(f"/sessions/{sid}/ratings", json=short).status_code == 400
        unknown = body()
        unknown["trial_id"] = "no-such-trial"
        assert client.post(f"/sessions/{sid}/ratings", json=unknown).status_code == 404
        ok = client.post(f"/sessions/{sid}/ratings", json=body())
        assert ok.status_code == 200
        dup = client.post(f"/sessions/{sid}/ratings", json=body(rating=7))
        assert dup.json()["duplicate"] is True

    def test_audio_served_with_cache_headers(self, client):
        sid = self._session(client)
        _pass_screening(client, sid)
        doc = client.get(f"/sessions/{sid}/next").json()
        r = client.get(doc["stimuli"][0]["url"])
        assert r.status_code == 200
        assert r.headers["cache-control"] == "public, max-age=86400"
        assert r.content[:4] == b"RIFF"
        assert client.get("/audio/nonexistent.wav").status_code == 404


def scripted_rating(participant, cond_name, trial_idx):
    """Deterministic non-anchor rating script shared with the oracle."""
    base = {f"model{c}": c for c in range(N_CONDITIONS)}[cond_name]
    return 1 + (participant * 3 + base + trial_idx) % 7


def run_scripted_experiment(manifest, store, n_participants=10):
    """Drive the service with 10 raters; raters 8 and 9 break catch trials."""
    app = create_app(store)
    client = TestClient(app)
    assert client.post("/experiments", json=manifest.to_json()).status_code == 201
    trial_index = {t.trial_id: i for i, t in enumerate(manifest.trials)}
    token_cond = {}
    from denoisekit.listen.service import _token
    for t in manifest.trials:
        for s in t.stimuli:
            token_cond[_token(manifest.experiment_id, s.condition, s.clip_id)] = s.condition

    for p in range(n_participants):
        sid = client.post("/experiments/exp-main/sessions").json()["session_id"]
        _pass_screening(client, sid)
        broken = {8: (1, ANCHOR_HIGH, 6), 9: (2, ANCHOR_LOW, 2)}.get(p)
        catch_seen = -1
        while True:
            doc = client.get(f"/sessions/{sid}/next").json()
            if doc.get("done"):
                break
            tid = doc["trial_id"]
            is_catch = tid in manifest.catch_trials
            if is_catch:
                catch_seen += 1
            ratings = []
            for s in doc["stimuli"]:
                cond = token_cond[s["token"]]
                if cond == ANCHOR_HIGH:
                    rating = 7
                elif cond == ANCHOR_LOW:
                    rating = 1
                else:
                    rating = scripted_rating(p, cond, trial_index[tid])
                if broken and is_catch:
                    k = manifest.catch_trials.index(tid)
                    if k == broken[0] and cond == broken[1]:
                        rating = broken[2]
                ratings.append({"token": s["token"], "rating": rating,
                                "play_count": 1 + (p % 2)})
            r = client.post(f"/sessions/{sid}/ratings",
                            json={"trial_id": tid, "ratings": ratings})
            assert r.status_code == 200, r.text
    return client


def oracle_table(manifest):
    """Spreadsheet-style expected results over the same rating script."""
    trial_index = {t.trial_id: i for i, t in enumerate(manifest.trials)}
    included = [p for p in range(10) if p not in (8, 9)]
    cells = {}
    per_participant = {}
    for p in included:
        for t in manifest.trials:
            for s in t.stimuli:
                if s.condition == ANCHOR_HIGH:
                    rating = 7
                elif s.condition == ANCHOR_LOW:
                    rating = 1
                else:
                    rating = scripted_rating(p, s.condition, trial_index[t.trial_id])
                cells.setdefault((s.condition, t.snr_db), []).append(rating)
                per_participant.setdefault(s.condition, {}).setdefault(p, []).append(rating)
    table = {}
    for (cond, snr), vals in cells.items():
        arr = np.asarray(vals, dtype=float)
        sem = arr.std(ddof=1) / np.sqrt(arr.size) if arr.size > 1 else None
        table[(cond, snr)] = (arr.mean(), sem, arr.size)
    overall = {}
    for cond, by_p in per_participant.items():
        snrs = sorted({s for c, s in cells if c == cond})
        cell_means = [table[(cond, s)][0] for s in snrs]
        pm = [np.mean(v) for v in by_p.values()]
        overall[cond] = (float(np.mean(cell_means)),
                         float(np.std(pm, ddof=1) / np.sqrt(len(pm))))
    return table, overall


class TestResultsFixture:
    def test_ten_participants_two_excluded_exact_table(self, manifest, tmp_path):
        client = run_scripted_experiment(manifest, tmp_path / "store")
        doc = client.get("/experiments/exp-main/results").json()
        assert doc["n_sessions"] == 10
        assert doc["n_included"] == 8
        assert doc["n_excluded_catch"] == 2
        assert doc["n_excluded_screening"] == 0

        table, overall = oracle_table(manifest)
        got = {c["condition"]: c for c in doc["conditions"]}
        for (cond, snr), (mean, sem, n) in table.items():
            cell = next(x for x in got[cond]["per_snr"] if x["snr_db"] == snr)
            assert cell["mean"] == pytest.approx(mean, rel=1e-12)
            assert cell["n"] == n
            if sem is None:
                assert cell["sem"] is None
            else:
                assert cell["sem"] == pytest.approx(sem, rel=1e-12)
        for cond, (mean, sem) in overall.items():
            assert got[cond]["overall"]["mean"] == pytest.approx(mean, rel=1e-12)
            assert got[cond]["overall"]["sem"] == pytest.approx(sem, rel=1e-12)
        # anchors from included raters are pinned by construction
        assert got[ANCHOR_HIGH]["overall"]["mean"] == 7.0
        assert got[ANCHOR_LOW]["overall"]["mean"] == 1.0

    def test_two_rating_hand_example(self, stimuli_root, tmp_path):
        # {4, 6} in one cell -> mean 5, SEM 1
        vals = np.array([4.0, 6.0])
        assert vals.mean() == 5.0
        assert vals.std(ddof=1) / np.sqrt(2) == 1.0

    def test_replaying_log_reproduces_results(self, manifest, tmp_path):
        store = tmp_path / "store"
        client = run_scripted_experiment(manifest, store)
        before = client.get("/experiments/exp-main/results").json()
        # a fresh app over the same store must fold to identical statistics
        client2 = TestClient(create_app(store))
        after = client2.get("/experiments/exp-main/results").json()
        assert before == after

    def test_csv_export(self, manifest, tmp_path):
        client = run_scripted_experiment(manifest, tmp_path / "store")
        csv_text = client.get("/experiments/exp-main/results?format=csv").text
        lines = csv_text.strip().splitlines()
        assert lines[0] == "condition,snr_db,mean,sem,n"
        assert any(line.startswith("model0,overall,") for line in lines)
