"""A complete listening-test lifecycle against an in-process service.

Builds stimuli for seven conditions plus anchors, creates the
experiment, scripts three simulated raters through screening and all
trials, and prints the inclusion-filtered result table. The same
endpoints serve the browser UI in `frontend/`.
"""

import tempfile
from pathlib import Path

import numpy as np
from fastapi.testclient import TestClient

from denoisekit.audio import Waveform, write_wav
from denoisekit.datamix import quantize_anchor
from denoisekit.listen import build_manifest, create_app
from denoisekit.listen.experiment import ANCHOR_HIGH, ANCHOR_LOW
from denoisekit.listen.screening import plan_screening
from denoisekit.listen.service import _sid_seed, _token
from denoisekit.toysignals import toy_speech

tmp = Path(tempfile.mkdtemp(prefix="listen-demo-"))
rng = np.random.default_rng(0)
clips = [f"clip{i}" for i in range(3)]
conditions = {}
for c in range(7):
    d = tmp / f"system{c}"
    d.mkdir()
    conditions[f"system{c}"] = str(d)
    for k in clips:
        write_wav(Waveform(rng.uniform(-0.3, 0.3, 4000), 8000), d / f"{k}.wav")
hi, lo = tmp / "hi", tmp / "lo"
hi.mkdir(), lo.mkdir()
for k in clips:
    w = Waveform(toy_speech(0.5, rng, 8000), 8000)
    write_wav(w, hi / f"{k}.wav")
    write_wav(quantize_anchor(w, 4), lo / f"{k}.wav")

manifest = build_manifest("demo-exp", conditions, hi, lo, clips,
                          snr_by_clip={k: 0.0 for k in clips}, seed=1)
client = TestClient(create_app(tmp / "store"))
print("create experiment:", client.post("/experiments", json=manifest.to_json()).json())

token_cond = {_token("demo-exp", s.condition, s.clip_id): s.condition
              for t in manifest.trials for s in t.stimuli}

for p in range(3):
    sid = client.post("/experiments/demo-exp/sessions").json()["session_id"]
    client.get(f"/sessions/{sid}/screening")
    answers = [item["quiet"] for item in plan_screening(_sid_seed(sid))]
    passed = client.post(f"/sessions/{sid}/screening", json={"answers": answers}).json()
    print(f"rater {p}: screening {passed}")
    while True:
        doc = client.get(f"/sessions/{sid}/next").json()
        if doc.get("done"):
            break
        ratings = []
        for s in doc["stimuli"]:
            cond = token_cond[s["token"]]
            rating = 7 if cond == ANCHOR_HIGH else 1 if cond == ANCHOR_LOW \
                else 2 + (p + int(cond[-1])) % 5
            ratings.append({"token": s["token"], "rating": rating, "play_count": 1})
        client.post(f"/sessions/{sid}/ratings",
                    json={"trial_id": doc["trial_id"], "ratings": ratings})

results = client.get("/experiments/demo-exp/results").json()
print(f"\nincluded {results['n_included']} of {results['n_sessions']} raters")
for cond in results["conditions"]:
    o = cond["overall"]
    sem = "n/a" if o["sem"] is None else f"{o['sem']:.3f}"
    print(f"  {cond['condition']:>18}: mean {o['mean']:.2f}  sem {sem}")
