"""HTTP service for MUSHRA-style naturalness experiments.

Endpoints (JSON unless noted):
  POST /experiments                     create from a manifest document
  POST /experiments/{eid}/sessions      open a participant session
  GET  /sessions/{sid}/screening        six three-tone headphone trials
  POST /sessions/{sid}/screening        submit answers -> pass/fail
  GET  /sessions/{sid}/next             current trial (7 anonymized stimuli)
  POST /sessions/{sid}/ratings          submit a complete rating record
  GET  /experiments/{eid}/results       inclusion-filtered statistics (json|csv)
  GET  /audio/{token}.wav               stimulus audio (tokens only, cacheable)

Clients never see condition names or file paths; stimulus URLs carry
opaque tokens. All mutations append to a per-experiment JSON-lines log,
and results are a pure fold over that log.
"""

from __future__ import annotations

import hashlib
import json
import uuid
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException, Response
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import FileResponse
from pydantic import BaseModel, Field

from ..errors import ManifestValidationError
from . import screening as scr
from .experiment import ANCHOR_HIGH, ANCHOR_LOW, ExperimentManifest
from .results import compute_results, fold_sessions, results_csv
from .store import EventLog


def _sid_seed(sid: str) -> int:
    return int.from_bytes(hashlib.sha256(sid.encode()).digest()[:8], "little")


def _token(eid: str, condition: str, clip_id: str) -> str:
    return hashlib.sha256(f"{eid}|{condition}|{clip_id}".encode()).hexdigest()[:20]


class _Experiment:
    def __init__(self, root: Path, manifest: ExperimentManifest):
        self.root = root
        self.manifest = manifest
        self.log = EventLog(root / "events.jsonl")
        self.tokens = {}       # token -> (condition, clip_id, path-str)
        for ref in manifest.all_stimuli():
            tok = _token(manifest.experiment_id, ref.condition, ref.clip_id)
            self.tokens[tok] = (ref.condition, ref.clip_id,
                                str(manifest.stimulus_path(ref)))
        (root / "tokens.json").write_text(json.dumps(self.tokens, indent=1))
        self.sessions = {}

    def rebuild_sessions(self):
        self.sessions = fold_sessions(self.log.replay())

    def trial_order(self, sid: str) -> list:
        rng = np.random.default_rng(_sid_seed(sid))
        ids = [t.trial_id for t in self.manifest.trials]
        return [ids[i] for i in rng.permutation(len(ids))]

    def current_trial(self, sid: str):
        done = set(self.sessions[sid]["ratings"])
        for tid in self.trial_order(sid):
            if tid not in done:
                return tid
        return None


class ScreeningAnswers(BaseModel):
    answers: list[int]


class StimulusRating(BaseModel):
    token: str
    rating: int
    play_count: int = Field(ge=0)


class RatingRecord(BaseModel):
    trial_id: str
    ratings: list[StimulusRating]


def create_app(store_root, cors_origins=("*",), ui_dir=None) -> FastAPI:
    store_root = Path(store_root)
    (store_root / "experiments").mkdir(parents=True, exist_ok=True)
    app = FastAPI(title="denoisekit listening tests")
    app.add_middleware(CORSMiddleware, allow_origins=list(cors_origins),
                       allow_methods=["*"], allow_headers=["*"])
    if ui_dir is not None and Path(ui_dir).exists():
        from fastapi.staticfiles import StaticFiles
        app.mount("/ui", StaticFiles(directory=ui_dir, html=True), name="ui")

    experiments: dict = {}
    session_to_exp: dict = {}
    screening_files: dict = {}  # token -> path

    def _load_existing():
        for d in sorted((store_root / "experiments").glob("*")):
            mf = d / "manifest.json"
            if mf.exists():
                manifest = ExperimentManifest.from_json(json.loads(mf.read_text()))
                exp = _Experiment(d, manifest)
                exp.rebuild_sessions()
                experiments[manifest.experiment_id] = exp
                for sid in exp.sessions:
                    session_to_exp[sid] = manifest.experiment_id

    _load_existing()

    def _exp(eid) -> _Experiment:
        if eid not in experiments:
            raise HTTPException(404, f"unknown experiment {eid}")
        return experiments[eid]

    def _session(sid) -> tuple:
        eid = session_to_exp.get(sid)
        if eid is None:
            raise HTTPException(404, f"unknown session {sid}")
        exp = experiments[eid]
        return exp, exp.sessions[sid]

    @app.post("/experiments", status_code=201)
    def create_experiment(doc: dict):
        try:
            manifest = ExperimentManifest.from_json(doc).validate()
        except (ManifestValidationError, KeyError, TypeError) as e:
            raise HTTPException(400, f"invalid manifest: {e}")
        eid = manifest.experiment_id
        if eid in experiments:
            raise HTTPException(409, f"experiment {eid} already exists")
        root = store_root / "experiments" / eid
        root.mkdir(parents=True, exist_ok=True)
        (root / "manifest.json").write_text(json.dumps(manifest.to_json(), indent=1))
        exp = _Experiment(root, manifest)
        exp.log.append({"event": "experiment_created", "experiment_id": eid,
                        "n_trials": len(manifest.trials)})
        experiments[eid] = exp
        return {"experiment_id": eid, "n_trials": len(manifest.trials)}

    @app.post("/experiments/{eid}/sessions", status_code=201)
    def create_session(eid: str):
        exp = _exp(eid)
        sid = uuid.uuid4().hex
        exp.sessions[sid] = {"passed": None, "ratings": {}}
        session_to_exp[sid] = eid
        exp.log.append({"event": "session_created", "experiment_id": eid,
                        "session_id": sid})
        return {"session_id": sid, "n_trials": len(exp.manifest.trials)}

    @app.get("/sessions/{sid}/screening")
    def get_screening(sid: str):
        exp, _ = _session(sid)
        out_dir = exp.root / "sessions" / sid
        plan = scr.assign_screening(_sid_seed(sid), out_dir)
        trials = []
        for item in plan:
            tok = f"scr-{sid}-{item['index']}"
            screening_files[tok] = out_dir / item["file"]
            trials.append({"index": item["index"], "url": f"/audio/{tok}.wav",
                           "n_tones": 3})
        return {"trials": trials, "instructions":
                "for each trial, pick the index (0-2) of the quietest tone"}

    @app.post("/sessions/{sid}/screening")
    def post_screening(sid: str, body: ScreeningAnswers):
        exp, state = _session(sid)
        if state["passed"] is not None:  # idempotent: first submission decides
            return {"passed": state["passed"], "duplicate": True}
        plan = scr.plan_screening(_sid_seed(sid))
        try:
            correct, passed = scr.grade(body.answers, plan)
        except ValueError as e:
            raise HTTPException(400, str(e))
        state["passed"] = passed
        exp.log.append({"event": "screening_submitted", "session_id": sid,
                        "answers": list(body.answers), "n_correct": correct,
                        "passed": passed})
        return {"passed": passed, "n_correct": correct}

    @app.get("/sessions/{sid}/next")
    def next_trial(sid: str):
        exp, state = _session(sid)
        if not state["passed"]:
            raise HTTPException(403, "screening not passed")
        manifest = exp.manifest
        tid = exp.current_trial(sid)
        total = len(manifest.trials)
        if tid is None:
            return {"done": True, "completed": total, "total": total}
        trial = next(t for t in manifest.trials if t.trial_id == tid)
        order = np.random.default_rng(
            (_sid_seed(sid), sum(tid.encode()))).permutation(len(trial.stimuli))
        stimuli = []
        for slot, idx in enumerate(order):
            ref = trial.stimuli[int(idx)]
            tok = _token(manifest.experiment_id, ref.condition, ref.clip_id)
            stimuli.append({"slot": slot, "token": tok, "url": f"/audio/{tok}.wav"})
        anchor_clip = trial.stimuli[0].clip_id
        return {
            "done": False,
            "trial_id": tid,
            "stimuli": stimuli,
            "scale": {"min": manifest.scale_min, "max": manifest.scale_max},
            "anchors": {
                "high_url": f"/audio/{_token(manifest.experiment_id, ANCHOR_HIGH, anchor_clip)}.wav",
                "low_url": f"/audio/{_token(manifest.experiment_id, ANCHOR_LOW, anchor_clip)}.wav",
            },
            "progress": {"completed": len(state["ratings"]), "total": total},
        }

    @app.post("/sessions/{sid}/ratings")
    def submit_rating(sid: str, body: RatingRecord):
        exp, state = _session(sid)
        if not state["passed"]:
            raise HTTPException(403, "screening not passed")
        manifest = exp.manifest
        if body.trial_id in state["ratings"]:
            return {"accepted": True, "duplicate": True}
        current = exp.current_trial(sid)
        trial = next((t for t in manifest.trials if t.trial_id == body.trial_id), None)
        if trial is None:
            raise HTTPException(404, f"unknown trial {body.trial_id}")
        if body.trial_id != current:
            raise HTTPException(409, f"trial {body.trial_id} is not the served trial")
        expected = {_token(manifest.experiment_id, s.condition, s.clip_id)
                    for s in trial.stimuli}
        got = {r.token for r in body.ratings}
        if got != expected or len(body.ratings) != len(trial.stimuli):
            raise HTTPException(400, "ratings must cover exactly the served stimuli")
        for r in body.ratings:
            if not (manifest.scale_min <= r.rating <= manifest.scale_max):
                raise HTTPException(400, f"rating {r.rating} outside "
                                         f"[{manifest.scale_min}, {manifest.scale_max}]")
            if r.play_count < 1:
                raise HTTPException(400, "every stimulus must be played before rating")
        record = [{"token": r.token, "rating": r.rating, "play_count": r.play_count}
                  for r in body.ratings]
        state["ratings"][body.trial_id] = record
        exp.log.append({"event": "rating_submitted", "session_id": sid,
                        "trial_id": body.trial_id, "ratings": record})
        remaining = sum(1 for t in manifest.trials if t.trial_id not in state["ratings"])
        return {"accepted": True, "remaining": remaining}

    @app.get("/experiments/{eid}/results")
    def results(eid: str, format: str = "json"):
        exp = _exp(eid)
        token_to_ref = {tok: (cond, clip) for tok, (cond, clip, _) in exp.tokens.items()}
        doc = compute_results(exp.manifest, exp.log.replay(), token_to_ref)
        if format == "csv":
            return Response(results_csv(doc), media_type="text/csv")
        return doc

    @app.get("/audio/{name}")
    def audio(name: str):
        tok = name.removesuffix(".wav")
        path = None
        if tok in screening_files:
            path = screening_files[tok]
        else:
            for exp in experiments.values():
                if tok in exp.tokens:
                    path = Path(exp.tokens[tok][2])
                    break
        if path is None or not Path(path).exists():
            raise HTTPException(404, "unknown stimulus")
        return FileResponse(path, media_type="audio/wav",
                            headers={"Cache-Control": "public, max-age=86400"})

    return app
