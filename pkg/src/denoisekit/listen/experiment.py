"""Experiment manifests: conditions, trials, anchors, catch trials.

Every trial presents exactly seven stimuli. Catch trials are ordinary
trials except that two of their stimuli are the two anchors (clean
speech and 4-bit-quantized speech); raters must pin those to the scale
endpoints to stay in the analysis.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from ..errors import ManifestValidationError

ANCHOR_HIGH = "__anchor_high__"
ANCHOR_LOW = "__anchor_low__"
STIMULI_PER_TRIAL = 7
N_CATCH_TRIALS = 3


@dataclass(frozen=True)
class StimulusRef:
    condition: str
    clip_id: str


@dataclass
class TrialSpec:
    trial_id: str
    stimuli: list
    snr_db: float = None


@dataclass
class ExperimentManifest:
    experiment_id: str
    conditions: dict          # condition name -> directory of <clip_id>.wav
    anchors: dict             # {"high": dir, "low": dir}
    trials: list
    catch_trials: list
    scale_min: int = 1
    scale_max: int = 7

    def stimulus_path(self, ref: StimulusRef, root: Path = None) -> Path:
        if ref.condition == ANCHOR_HIGH:
            base = self.anchors["high"]
        elif ref.condition == ANCHOR_LOW:
            base = self.anchors["low"]
        else:
            base = self.conditions[ref.condition]
        p = Path(base) / f"{ref.clip_id}.wav"
        if root is not None and not p.is_absolute():
            p = Path(root) / p
        return p

    def all_stimuli(self):
        seen = set()
        for t in self.trials:
            for s in t.stimuli:
                if s not in seen:
                    seen.add(s)
                    yield s

    def validate(self, root: Path = None) -> "ExperimentManifest":
        if not self.trials:
            raise ManifestValidationError("experiment has no trials")
        trial_ids = [t.trial_id for t in self.trials]
        if len(set(trial_ids)) != len(trial_ids):
            raise ManifestValidationError("duplicate trial ids")
        for t in self.trials:
            if len(t.stimuli) != STIMULI_PER_TRIAL:
                raise ManifestValidationError(
                    f"trial {t.trial_id} has {len(t.stimuli)} stimuli, need {STIMULI_PER_TRIAL}")
        if len(self.catch_trials) != N_CATCH_TRIALS:
            raise ManifestValidationError(
                f"need exactly {N_CATCH_TRIALS} catch trials, got {len(self.catch_trials)}")
        by_id = {t.trial_id: t for t in self.trials}
        for cid in self.catch_trials:
            t = by_id.get(cid)
            if t is None:
                raise ManifestValidationError(f"catch trial {cid} is not in the trial list")
            conds = {s.condition for s in t.stimuli}
            if ANCHOR_HIGH not in conds or ANCHOR_LOW not in conds:
                raise ManifestValidationError(
                    f"catch trial {cid} must contain both anchors")
        if "high" not in self.anchors or "low" not in self.anchors:
            raise ManifestValidationError("manifest needs high and low anchor directories")
        if not (self.scale_min == 1 and self.scale_max == 7):
            raise ManifestValidationError("rating scale is fixed at 1..7")
        missing = [str(self.stimulus_path(s, root)) for s in self.all_stimuli()
                   if not self.stimulus_path(s, root).exists()]
        if missing:
            raise ManifestValidationError(
                "missing stimulus audio: " + ", ".join(sorted(missing)[:10]))
        return self

    def to_json(self) -> dict:
        return {
            "experiment_id": self.experiment_id,
            "conditions": dict(self.conditions),
            "anchors": dict(self.anchors),
            "scale": {"min": self.scale_min, "max": self.scale_max},
            "trials": [{"trial_id": t.trial_id,
                        "snr_db": t.snr_db,
                        "stimuli": [[s.condition, s.clip_id] for s in t.stimuli]}
                       for t in self.trials],
            "catch_trials": list(self.catch_trials),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "ExperimentManifest":
        trials = [TrialSpec(t["trial_id"],
                            [StimulusRef(c, k) for c, k in t["stimuli"]],
                            t.get("snr_db"))
                  for t in doc["trials"]]
        scale = doc.get("scale", {"min": 1, "max": 7})
        return cls(doc["experiment_id"], doc["conditions"], doc["anchors"],
                   trials, doc["catch_trials"],
                   scale_min=scale["min"], scale_max=scale["max"])


def build_manifest(experiment_id: str, conditions: dict, anchor_high_dir,
                   anchor_low_dir, clip_ids, snr_by_clip: dict = None,
                   seed: int = 0) -> ExperimentManifest:
    """One trial per clip with all seven conditions, plus three catch trials.

    Catch trials reuse three clips but swap two randomly chosen
    conditions for the two anchors.
    """
    conditions = dict(conditions)
    if len(conditions) != STIMULI_PER_TRIAL:
        raise ManifestValidationError(
            f"need exactly {STIMULI_PER_TRIAL} conditions, got {len(conditions)}")
    snr_by_clip = snr_by_clip or {}
    rng = np.random.default_rng(seed)
    names = sorted(conditions)
    trials = []
    for clip in clip_ids:
        trials.append(TrialSpec(f"trial-{clip}",
                                [StimulusRef(c, clip) for c in names],
                                snr_by_clip.get(clip)))
    catch_ids = []
    picks = rng.choice(len(clip_ids), size=min(N_CATCH_TRIALS, len(clip_ids)), replace=False)
    for i, pick in enumerate(picks):
        clip = clip_ids[int(pick)]
        drop = rng.choice(len(names), size=2, replace=False)
        stimuli = [StimulusRef(c, clip) for j, c in enumerate(names) if j not in drop]
        stimuli += [StimulusRef(ANCHOR_HIGH, clip), StimulusRef(ANCHOR_LOW, clip)]
        tid = f"catch-{i}-{clip}"
        trials.append(TrialSpec(tid, stimuli, snr_by_clip.get(clip)))
        catch_ids.append(tid)
    return ExperimentManifest(experiment_id, conditions,
                              {"high": str(anchor_high_dir), "low": str(anchor_low_dir)},
                              trials, catch_ids)
