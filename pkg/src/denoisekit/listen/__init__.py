"""MUSHRA-style naturalness listening tests over HTTP."""

from .experiment import ExperimentManifest, StimulusRef, TrialSpec, build_manifest
from .service import create_app

__all__ = ["ExperimentManifest", "StimulusRef", "TrialSpec", "build_manifest", "create_app"]
