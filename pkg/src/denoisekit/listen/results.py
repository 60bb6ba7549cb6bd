"""Inclusion filtering and naturalness statistics.

A participant is included iff they passed screening AND, on all three
catch trials, rated the high anchor 7 and the low anchor 1. Per-cell
statistics (condition x SNR) use mean and SEM = sample std / sqrt(n);
the overall row per condition averages cell means (not pooled ratings),
with SEM taken across participants' per-condition means.
"""

from __future__ import annotations

import numpy as np

from .experiment import ANCHOR_HIGH, ANCHOR_LOW, ExperimentManifest


def fold_sessions(events: list) -> dict:
    """Replay the event log into per-session state."""
    sessions = {}
    for ev in events:
        kind = ev.get("event")
        sid = ev.get("session_id")
        if kind == "session_created":
            sessions[sid] = {"passed": None, "ratings": {}}
        elif kind == "screening_submitted" and sid in sessions:
            if sessions[sid]["passed"] is None:  # idempotent: first result kept
                sessions[sid]["passed"] = bool(ev["passed"])
        elif kind == "rating_submitted" and sid in sessions:
            sessions[sid]["ratings"].setdefault(ev["trial_id"], ev["ratings"])
    return sessions


def included_sessions(manifest: ExperimentManifest, sessions: dict,
                      token_to_ref: dict) -> tuple:
    """Partition sessions into (included, excluded_screening, excluded_catch)."""
    included, excl_screen, excl_catch = [], [], []
    for sid, state in sessions.items():
        if not state["passed"]:
            excl_screen.append(sid)
            continue
        ok = True
        for cid in manifest.catch_trials:
            ratings = state["ratings"].get(cid)
            if ratings is None:
                ok = False
                break
            for r in ratings:
                cond = token_to_ref[r["token"]][0]
                if cond == ANCHOR_HIGH and r["rating"] != manifest.scale_max:
                    ok = False
                if cond == ANCHOR_LOW and r["rating"] != manifest.scale_min:
                    ok = False
        (included if ok else excl_catch).append(sid)
    return included, excl_screen, excl_catch


def _mean_sem(values):
    arr = np.asarray(values, dtype=np.float64)
    mean = float(arr.mean())
    sem = float(arr.std(ddof=1) / np.sqrt(arr.size)) if arr.size > 1 else None
    return mean, sem


def compute_results(manifest: ExperimentManifest, events: list,
                    token_to_ref: dict) -> dict:
    sessions = fold_sessions(events)
    included, excl_screen, excl_catch = included_sessions(manifest, sessions, token_to_ref)

    trial_snr = {t.trial_id: t.snr_db for t in manifest.trials}
    # cell ratings: (condition, snr) -> list; participant means: condition -> sid -> list
    cells = {}
    per_participant = {}
    for sid in included:
        for trial_id, ratings in sessions[sid]["ratings"].items():
            snr = trial_snr.get(trial_id)
            for r in ratings:
                cond = token_to_ref[r["token"]][0]
                cells.setdefault((cond, snr), []).append(r["rating"])
                per_participant.setdefault(cond, {}).setdefault(sid, []).append(r["rating"])

    conditions = sorted({c for c, _ in cells})
    out_conditions = []
    for cond in conditions:
        snrs = sorted({s for c, s in cells if c == cond and s is not None})
        per_snr = []
        cell_means = []
        for s in snrs:
            mean, sem = _mean_sem(cells[(cond, s)])
            per_snr.append({"snr_db": s, "mean": mean, "sem": sem,
                            "n": len(cells[(cond, s)])})
            cell_means.append(mean)
        if (cond, None) in cells:
            mean, sem = _mean_sem(cells[(cond, None)])
            per_snr.append({"snr_db": None, "mean": mean, "sem": sem,
                            "n": len(cells[(cond, None)])})
            cell_means.append(mean)
        overall_mean = float(np.mean(cell_means))
        participant_means = [float(np.mean(v)) for v in per_participant[cond].values()]
        _, overall_sem = _mean_sem(participant_means)
        out_conditions.append({
            "condition": cond,
            "overall": {"mean": overall_mean, "sem": overall_sem,
                        "n_participants": len(participant_means)},
            "per_snr": per_snr,
        })

    return {
        "experiment_id": manifest.experiment_id,
        "n_sessions": len(sessions),
        "n_included": len(included),
        "n_excluded_screening": len(excl_screen),
        "n_excluded_catch": len(excl_catch),
        "conditions": out_conditions,
    }


def results_csv(doc: dict) -> str:
    lines = ["condition,snr_db,mean,sem,n"]
    for c in doc["conditions"]:
        for cell in c["per_snr"]:
            sem = "" if cell["sem"] is None else f"{cell['sem']:.6g}"
            snr = "" if cell["snr_db"] is None else cell["snr_db"]
            lines.append(f"{c['condition']},{snr},{cell['mean']:.6g},{sem},{cell['n']}")
        o = c["overall"]
        sem = "" if o["sem"] is None else f"{o['sem']:.6g}"
        lines.append(f"{c['condition']},overall,{o['mean']:.6g},{sem},{o['n_participants']}")
    return "\n".join(lines) + "\n"
