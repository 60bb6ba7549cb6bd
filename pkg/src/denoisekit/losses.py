"""The three loss families: waveform, cochlear-model, and deep-feature.

All distances reduce by mean (not sum) so magnitudes are invariant to
clip length; layer-balancing calibration absorbs the constants. Losses
are symmetric in value; gradients are taken w.r.t. the first argument
when used in training graphs.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from . import diffgraph as dg
from . import recognizer as rec
from .audio import Waveform
from .cochlea import FilterBankConfig, cochleagram, cochleagram_op, _cached_bank
from .errors import CalibrationError, ConfigError, ContractError, ShapeError

__all__ = ["LossSpec", "DeepFeatureMember", "waveform_loss", "cochlear_loss",
           "deep_feature_loss", "calibrate_layer_weights", "compile_loss",
           "loss_spec_to_json", "loss_spec_from_json"]


@dataclass(frozen=True)
class DeepFeatureMember:
    model: object = None          # RecognizerModel (in memory)
    checkpoint: str = None        # or a path to one
    layer_weights: tuple = None   # calibrated weights, frozen

    def resolved(self):
        if self.model is not None:
            return self.model
        if self.checkpoint is None:
            raise ConfigError("deep-feature member needs a model or checkpoint path")
        from .trainer import load_checkpoint  # circular at module scope
        model, _ = load_checkpoint(self.checkpoint)
        if not isinstance(model, rec.RecognizerModel):
            raise ConfigError(f"{self.checkpoint} is not a recognizer checkpoint")
        return model


@dataclass(frozen=True)
class LossSpec:
    """Declarative description of what to optimize."""

    kind: str  # waveform_l1 | waveform_l2 | cochlear | deep_features | sum_of
    filter_bank: FilterBankConfig = None
    members: tuple = ()      # DeepFeatureMember entries
    components: tuple = ()   # (weight, LossSpec) pairs

    def validate(self):
        if self.kind in ("waveform_l1", "waveform_l2"):
            pass
        elif self.kind == "cochlear":
            if self.filter_bank is None:
                raise ConfigError("cochlear loss needs a filter_bank")
            self.filter_bank.validate()
        elif self.kind == "deep_features":
            if not self.members:
                raise ConfigError("deep_features loss needs at least one member")
        elif self.kind == "sum_of":
            if not self.components:
                raise ConfigError("sum_of needs at least one component")
            for w, spec in self.components:
                if not np.isfinite(w) or w < 0:
                    raise ConfigError("component weights must be finite and >= 0")
                spec.validate()
        else:
            raise ConfigError(f"unknown loss kind {self.kind!r}")
        return self


# ---------------------------------------------------------------------------
# direct (non-graph) evaluation


def waveform_loss(y_hat, y, norm: str = "l1") -> float:
    """Mean |diff| or mean diff^2 between equal-length sample arrays."""
    a = np.asarray(y_hat, dtype=np.float64)
    b = np.asarray(y, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"waveform loss shapes differ: {a.shape} vs {b.shape}")
    if norm == "l1":
        return float(np.mean(np.abs(a - b)))
    if norm == "l2":
        return float(np.mean((a - b) ** 2))
    raise ConfigError(f"unknown norm {norm!r}")


def cochlear_loss(y_hat, y, cfg: FilterBankConfig, rate_hz: int = None) -> float:
    """Mean elementwise L1 distance between the two cochleagrams."""
    a = _as_waveform(y_hat, cfg, rate_hz)
    b = _as_waveform(y, cfg, rate_hz)
    if len(a) != len(b):
        raise ShapeError("cochlear loss needs equal-length signals")
    fa = cochleagram(a, cfg).values
    fb = cochleagram(b, cfg).values
    return float(np.mean(np.abs(fa - fb)))


def deep_feature_loss(y_hat, y, ensemble) -> float:
    """Sum over models of layer-weighted L1 feature distances."""
    total = 0.0
    for member in _as_members(ensemble):
        model = member.resolved()
        weights = _checked_weights(member, model)
        cfg = model.config.filter_bank
        fa = rec.features(model, cochleagram(_as_waveform(y_hat, cfg), cfg))
        fb = rec.features(model, cochleagram(_as_waveform(y, cfg), cfg))
        total += sum(w * float(np.mean(np.abs(pa - pb)))
                     for w, pa, pb in zip(weights, fa, fb))
    return total


def _as_waveform(x, cfg, rate_hz=None):
    if isinstance(x, Waveform):
        if x.sample_rate_hz != cfg.sample_rate_hz:
            raise ConfigError(
                f"waveform rate {x.sample_rate_hz} != loss filter bank rate {cfg.sample_rate_hz}")
        return x
    if rate_hz is not None and rate_hz != cfg.sample_rate_hz:
        raise ConfigError(f"rate {rate_hz} != loss filter bank rate {cfg.sample_rate_hz}")
    return Waveform(np.asarray(x, dtype=np.float64).reshape(-1), cfg.sample_rate_hz)


def _as_members(ensemble):
    out = []
    for m in ensemble:
        if isinstance(m, DeepFeatureMember):
            out.append(m)
        else:  # (model, weights) pair
            model, w = m
            out.append(DeepFeatureMember(model=model,
                                         layer_weights=None if w is None else tuple(w)))
    return out


def _checked_weights(member, model):
    if member.layer_weights is None:
        raise ContractError(
            "deep-feature member has no calibrated layer weights; "
            "run calibrate_layer_weights first")
    w = np.asarray(member.layer_weights, dtype=np.float64)
    if w.size != len(model.config.layers):
        raise ContractError(
            f"{w.size} layer weights for a {len(model.config.layers)}-layer model")
    return w


def calibrate_layer_weights(model: rec.RecognizerModel, calibration_clips) -> np.ndarray:
    """w_l = 1 / mean-over-clips of mean |activation_l|, frozen thereafter."""
    if len(calibration_clips) < 8:
        raise ContractError(f"calibration needs >= 8 clips, got {len(calibration_clips)}")
    cfg = model.config.filter_bank
    sums = np.zeros(len(model.config.layers))
    for clip in calibration_clips:
        feats = rec.features(model, cochleagram(_as_waveform(clip, cfg), cfg))
        sums += [float(np.mean(np.abs(f))) for f in feats]
    means = sums / len(calibration_clips)
    if np.any(means == 0):
        dead = int(np.argmin(means))
        raise CalibrationError(f"layer {dead} has zero mean activation (degenerate feature)")
    return 1.0 / means


# ---------------------------------------------------------------------------
# training graphs


class CompiledLoss:
    """LossSpec bound to its models/banks, ready to build training graphs."""

    def __init__(self, spec: LossSpec):
        self.spec = spec.validate()
        self._bank = None
        self._members = None
        if spec.kind == "cochlear":
            self._bank = _cached_bank(spec.filter_bank)
        elif spec.kind == "deep_features":
            self._members = []
            for m in _as_members(spec.members):
                model = m.resolved()
                self._members.append((model, _checked_weights(m, model),
                                      _cached_bank(model.config.filter_bank)))
        elif spec.kind == "sum_of":
            self._children = [(w, CompiledLoss(s)) for w, s in spec.components]

    def graph(self, y_hat: dg.Value, clean: np.ndarray) -> dg.Value:
        """Scalar loss Value; y_hat and clean are (..., 1, T) or (T,)."""
        kind = self.spec.kind
        if kind == "waveform_l1":
            return dg.l1_distance(y_hat, dg.const(clean.astype(y_hat.data.dtype)))
        if kind == "waveform_l2":
            d = dg.sub(y_hat, dg.const(clean.astype(y_hat.data.dtype)))
            return dg.mean(dg.mul(d, d))
        if kind == "cochlear":
            return self._per_item(y_hat, clean, self._cochlear_item)
        if kind == "deep_features":
            return self._per_item(y_hat, clean, self._deep_item)
        parts = [dg.scalar_mul(child.graph(y_hat, clean), w)
                 for w, child in self._children]
        total = parts[0]
        for p in parts[1:]:
            total = dg.add(total, p)
        return total

    def number(self, y_hat: np.ndarray, clean: np.ndarray) -> float:
        return float(self.graph(dg.const(y_hat), np.asarray(clean)).data)

    # -- helpers

    def _per_item(self, y_hat, clean, item_fn):
        """Average an item-level loss over the leading batch axis, if any."""
        if y_hat.data.ndim == 1:
            return item_fn(y_hat, clean.reshape(-1))
        flat = dg.reshape(y_hat, (-1, y_hat.data.shape[-1]))
        clean2 = clean.reshape(-1, clean.shape[-1])
        n = flat.data.shape[0]
        total = None
        for i in range(n):
            item = dg.reshape(dg.crop(flat, 0, i, i + 1), (flat.data.shape[-1],))
            term = item_fn(item, clean2[i])
            total = term if total is None else dg.add(total, term)
        return dg.scalar_mul(total, 1.0 / n)

    def _cochlear_item(self, item: dg.Value, clean: np.ndarray) -> dg.Value:
        target = cochleagram(Waveform(np.asarray(clean, dtype=np.float64),
                                      self._bank.config.sample_rate_hz),
                             self._bank.config).values
        feats = cochleagram_op(item, self._bank)
        return dg.l1_distance(feats, dg.const(target.astype(feats.data.dtype)))

    def _deep_item(self, item: dg.Value, clean: np.ndarray) -> dg.Value:
        total = None
        for model, weights, bank in self._members:
            target_feats = rec.features(
                model, cochleagram(Waveform(np.asarray(clean, dtype=np.float64),
                                            bank.config.sample_rate_hz), bank.config))
            feats = cochleagram_op(item, bank)
            vals = {k: dg.const(v) for k, v in model.params.items()}
            taps, _ = rec.features_graph(vals, model.running, model.config, feats,
                                         taps_only=True)
            for w, tap, tgt in zip(weights, taps, target_feats):
                term = dg.scalar_mul(
                    dg.l1_distance(tap, dg.const(tgt.astype(tap.data.dtype))), float(w))
                total = term if total is None else dg.add(total, term)
        return total


def compile_loss(spec: LossSpec) -> CompiledLoss:
    return CompiledLoss(spec)


# ---------------------------------------------------------------------------
# JSON (run-config) serialization


def loss_spec_to_json(spec: LossSpec) -> dict:
    if spec.kind in ("waveform_l1", "waveform_l2"):
        return {"kind": spec.kind}
    if spec.kind == "cochlear":
        return {"kind": "cochlear", "filter_bank": asdict(spec.filter_bank)}
    if spec.kind == "deep_features":
        members = []
        for m in _as_members(spec.members):
            if m.checkpoint is None:
                raise ConfigError("only checkpoint-backed members are serializable")
            members.append({"checkpoint": m.checkpoint,
                            "layer_weights": None if m.layer_weights is None
                            else list(m.layer_weights)})
        return {"kind": "deep_features", "members": members}
    if spec.kind == "sum_of":
        return {"kind": "sum_of",
                "components": [{"weight": w, "spec": loss_spec_to_json(s)}
                               for w, s in spec.components]}
    raise ConfigError(f"unknown loss kind {spec.kind!r}")


def loss_spec_from_json(doc: dict) -> LossSpec:
    kind = doc.get("kind")
    if kind in ("waveform_l1", "waveform_l2"):
        return LossSpec(kind=kind)
    if kind == "cochlear":
        return LossSpec(kind="cochlear",
                        filter_bank=FilterBankConfig(**doc["filter_bank"]))
    if kind == "deep_features":
        members = tuple(
            DeepFeatureMember(checkpoint=m["checkpoint"],
                              layer_weights=None if m.get("layer_weights") is None
                              else tuple(m["layer_weights"]))
            for m in doc["members"])
        return LossSpec(kind="deep_features", members=members)
    if kind == "sum_of":
        return LossSpec(kind="sum_of",
                        components=tuple((c["weight"], loss_spec_from_json(c["spec"]))
                                         for c in doc["components"]))
    raise ConfigError(f"unknown loss kind {kind!r}")
