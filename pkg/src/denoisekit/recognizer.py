"""Feed-forward CNN over cochleagrams.

Each stage is conv2d -> rectification -> batch norm -> Hann-weighted
average pooling; a global-average head classifies. Feature taps for the
deep-feature loss are the rectified conv outputs (post-activation,
pre-normalization/pooling). The toy word task trains the net to
separate 16 synthetic harmonic "words"; a texture task over the same
clips stands in for environmental-sound training.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from . import diffgraph as dg
from . import toysignals
from .audio import Waveform
from .cochlea import FilterBankConfig, cochleagram, CochlearFeatures
from .errors import ConfigError, ShapeError, TrainingError

__all__ = ["LayerSpec", "RecognizerConfig", "RecognizerModel", "build",
           "features", "features_graph", "logits_graph", "accuracy",
           "ToyWordCorpus", "build_toy_word_corpus", "train_toy_words",
           "WORD_TASK_CONFIG", "loss_net_config"]


@dataclass(frozen=True)
class LayerSpec:
    channels: int
    kernel_freq: int
    kernel_time: int
    pool_stride_freq: int = 1
    pool_stride_time: int = 1


@dataclass(frozen=True)
class RecognizerConfig:
    layers: tuple
    n_classes: int = 16
    seed: int = 0
    filter_bank: FilterBankConfig = field(default_factory=FilterBankConfig)

    def validate(self):
        if not (4 <= len(self.layers) <= 8):
            raise ConfigError(f"recognizer needs 4..8 conv layers, got {len(self.layers)}")
        for l in self.layers:
            if l.channels < 1:
                raise ConfigError("layer channels must be >= 1")
        if self.n_classes < 2:
            raise ConfigError("need at least two classes")
        return self


@dataclass
class RecognizerModel:
    config: RecognizerConfig
    params: dict        # trainable tensors
    running: dict       # batch-norm running mean/var (state, not trained)
    trained: bool = False

    def config_dict(self):
        d = asdict(self.config)
        d["layers"] = [asdict(l) for l in self.config.layers]
        d["trained"] = self.trained
        return d


def build(cfg: RecognizerConfig, init: str = "random") -> RecognizerModel:
    """He-initialized model, bitwise deterministic for a given seed."""
    cfg.validate()
    if init != "random":
        raise ConfigError("use trainer.load_checkpoint for persisted models")
    rng = np.random.default_rng(cfg.seed)
    params, running = {}, {}
    c_prev = 1
    for i, l in enumerate(cfg.layers):
        shape = (l.channels, c_prev, l.kernel_freq, l.kernel_time)
        fan_in = c_prev * l.kernel_freq * l.kernel_time
        params[f"conv{i}.w"] = (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(np.float32)
        params[f"conv{i}.b"] = np.zeros(l.channels, dtype=np.float32)
        params[f"bn{i}.gamma"] = np.ones(l.channels, dtype=np.float32)
        params[f"bn{i}.beta"] = np.zeros(l.channels, dtype=np.float32)
        running[f"bn{i}.mean"] = np.zeros(l.channels, dtype=np.float32)
        running[f"bn{i}.var"] = np.ones(l.channels, dtype=np.float32)
        c_prev = l.channels
    params["head.w"] = (rng.standard_normal((cfg.n_classes, c_prev))
                        * np.sqrt(2.0 / c_prev)).astype(np.float32)
    params["head.b"] = np.zeros(cfg.n_classes, dtype=np.float32)
    return RecognizerModel(cfg, params, running)


def features_graph(param_values: dict, running: dict, cfg: RecognizerConfig,
                   x: dg.Value, mode: str = "frozen", update_running: bool = False,
                   taps_only: bool = False):
    """Differentiable stack; returns (taps, logits).

    x: (..., F, T) cochleagram Value (channel axis inserted here).
    Taps are the rectified conv outputs of each layer. With `taps_only`
    the normalize/pool/head stages after the last tap are skipped
    (the deep-feature loss reads the taps alone).
    """
    if x.data.shape[-2] < 1:
        raise ShapeError("empty frequency axis")
    h = dg.Value(x.data[..., None, :, :], x.requires_grad, (x,),
                 (lambda g: (g[..., 0, :, :],)) if x.requires_grad else None)
    taps = []
    last = len(cfg.layers) - 1
    for i, l in enumerate(cfg.layers):
        h = dg.conv2d(h, param_values[f"conv{i}.w"], param_values[f"conv{i}.b"],
                      stride=(1, 1), padding="same")
        h = dg.relu(h)
        taps.append(h)
        if taps_only and i == last:
            return taps, None
        h = dg.batch_norm(h, param_values[f"bn{i}.gamma"], param_values[f"bn{i}.beta"],
                          running[f"bn{i}.mean"], running[f"bn{i}.var"],
                          axis=-3, mode=mode if mode == "batch" else "frozen",
                          update_running=update_running)
        if l.pool_stride_time > 1:
            h = dg.hann_pool(h, l.pool_stride_time, axis=-1)
        if l.pool_stride_freq > 1:
            h = dg.hann_pool(h, l.pool_stride_freq, axis=-2)
    pooled = dg.mean(dg.mean(h, axis=-1), axis=-1)  # global average over (F, T)
    logits = dg.linear(pooled, param_values["head.w"], param_values["head.b"])
    return taps, logits


def _values(model: RecognizerModel, trainable: bool):
    wrap = dg.param if trainable else dg.const
    return {k: wrap(v) for k, v in model.params.items()}


def features(model: RecognizerModel, features_in) -> list:
    """Per-layer activation arrays for one cochleagram (frozen mode)."""
    x = features_in.values if isinstance(features_in, CochlearFeatures) else np.asarray(features_in)
    if x.ndim != 2:
        raise ShapeError("expected a 2-D (n_filters x time) feature array")
    if x.shape[0] != model.config.filter_bank.n_filters:
        raise ShapeError(
            f"expected {model.config.filter_bank.n_filters} bands, got {x.shape[0]}")
    if x.dtype not in (np.float32, np.float64):
        x = x.astype(np.float64)
    taps, _ = features_graph(_values(model, False), model.running, model.config,
                             dg.const(x), taps_only=True)
    return [t.data for t in taps]


def logits_graph(model: RecognizerModel, x: dg.Value, mode="frozen", trainable=False,
                 update_running=False):
    vals = _values(model, trainable)
    taps, logits = features_graph(vals, model.running, model.config, x,
                                  mode=mode, update_running=update_running)
    return vals, taps, logits


def accuracy(model: RecognizerModel, examples, labels) -> float:
    """Fraction of argmax-correct predictions (frozen mode)."""
    correct = 0
    for x, y in zip(examples, labels):
        _, _, logits = logits_graph(model, dg.const(np.asarray(x, dtype=np.float32)))
        correct += int(np.argmax(logits.data) == y)
    return correct / max(1, len(labels))


# ---------------------------------------------------------------------------
# toy corpora


@dataclass
class ToyWordCorpus:
    """Precomputed cochleagrams with word and texture labels."""

    train_features: list
    train_words: np.ndarray
    train_textures: np.ndarray
    val_features: list
    val_words: np.ndarray
    val_textures: np.ndarray
    filter_bank: FilterBankConfig

    def labels(self, task: str, split: str) -> np.ndarray:
        arr = {("word", "train"): self.train_words,
               ("word", "val"): self.val_words,
               ("texture", "train"): self.train_textures,
               ("texture", "val"): self.val_textures}.get((task, split))
        if arr is None:
            raise ConfigError(f"unknown task/split {task}/{split}")
        return arr


def build_toy_word_corpus(fb: FilterBankConfig, n_train_per_class: int = 24,
                          n_val_per_class: int = 6, seed: int = 0,
                          clip_s: float = 1.0) -> ToyWordCorpus:
    """Synthesize word-in-texture clips and precompute their cochleagrams."""
    sr = fb.sample_rate_hz
    rng = np.random.default_rng(seed)

    def make_split(n_per_class, base):
        feats, words, textures = [], [], []
        for w in range(toysignals.N_WORD_CLASSES):
            for j in range(n_per_class):
                tex = int(rng.integers(0, toysignals.N_TEXTURE_CLASSES))
                x = toysignals.toy_word_example(w, tex, seed=base + 1000 * w + j,
                                                sr=sr, clip_s=clip_s)
                c = cochleagram(Waveform(x, sr), fb)
                feats.append(c.values.astype(np.float32))
                words.append(w)
                textures.append(tex)
        return feats, np.array(words), np.array(textures)

    tr = make_split(n_train_per_class, base=seed * 913 + 1)
    va = make_split(n_val_per_class, base=seed * 913 + 7_000_000)
    return ToyWordCorpus(*tr, *va, filter_bank=fb)


@dataclass
class ToyTrainResult:
    model: RecognizerModel
    accuracy_curve: list
    final_val_accuracy: float
    loss_curve: list


def train_toy_words(model: RecognizerModel, corpus: ToyWordCorpus, steps: int,
                    lr: float = 1e-3, batch_size: int = 8, seed: int = 0,
                    task: str = "word", val_every: int = 250,
                    target_accuracy: float = None) -> ToyTrainResult:
    """Cross-entropy ADAM training on the toy corpus.

    Stops early once `target_accuracy` is reached on the validation
    split (checked every `val_every` steps). Marks the model trained.
    """
    from .trainer import AdamState, adam_step, TrainConfig  # late import; trainer uses losses

    if corpus.filter_bank != model.config.filter_bank:
        raise ConfigError("corpus and model use different filter banks")
    y_train = corpus.labels(task, "train")
    y_val = corpus.labels(task, "val")
    if steps == 0:
        return ToyTrainResult(model, [], accuracy(model, corpus.val_features, y_val), [])

    rng = np.random.default_rng(seed)
    state = AdamState.for_params(model.params)
    opt_cfg = TrainConfig(steps=steps, lr=lr)
    acc_curve, loss_curve = [], []
    n = len(corpus.train_features)
    for step in range(steps):
        idx = rng.integers(0, n, size=batch_size)
        xb = np.stack([corpus.train_features[i] for i in idx]).astype(np.float32)
        vals, _, logits = logits_graph(model, dg.const(xb), mode="batch",
                                       trainable=True, update_running=True)
        loss = dg.cross_entropy_logits(logits, y_train[idx])
        if not np.isfinite(loss.data):
            raise TrainingError(f"toy-word training diverged at step {step}")
        dg.backward(loss)
        grads = {k: v.grad for k, v in vals.items()}
        adam_step(model.params, grads, state, opt_cfg)
        loss_curve.append(float(loss.data))
        if (step + 1) % val_every == 0 or step == steps - 1:
            acc = accuracy(model, corpus.val_features, y_val)
            acc_curve.append((step + 1, acc))
            if target_accuracy is not None and acc >= target_accuracy:
                break
    model.trained = True
    return ToyTrainResult(model, acc_curve, acc_curve[-1][1] if acc_curve else float("nan"),
                          loss_curve)


# ---------------------------------------------------------------------------
# stock configurations


def word_task_filter_bank(sample_rate_hz: int = 20000) -> FilterBankConfig:
    """40-band front end with envelope extraction at a CNN-friendly rate."""
    return FilterBankConfig(
        n_filters=40, f_min_hz=20.0, f_max_hz=0.45 * sample_rate_hz,
        sample_rate_hz=sample_rate_hz, downsample_to_hz=_frame_rate(sample_rate_hz),
        envelope_mode="lowpass", envelope_cutoff_hz=100.0)


def _frame_rate(sr):
    for cand in (500, 400, 250, 200):
        if sr % cand == 0:
            return cand
    return sr // 40


WORD_TASK_CONFIG = RecognizerConfig(
    layers=(
        LayerSpec(16, 3, 7, pool_stride_freq=2, pool_stride_time=4),
        LayerSpec(32, 3, 5, pool_stride_freq=2, pool_stride_time=5),
        LayerSpec(32, 3, 3, pool_stride_freq=2, pool_stride_time=5),
        LayerSpec(64, 3, 3, pool_stride_freq=5, pool_stride_time=5),
    ),
    n_classes=toysignals.N_WORD_CLASSES,
    seed=0,
    filter_bank=word_task_filter_bank(20000),
)


def loss_net_config(sample_rate_hz: int, n_classes: int = toysignals.N_WORD_CLASSES,
                    seed: int = 0) -> RecognizerConfig:
    """Compact net used as a deep-feature loss at a given audio rate."""
    return RecognizerConfig(
        layers=(
            LayerSpec(12, 3, 5, pool_stride_freq=2, pool_stride_time=4),
            LayerSpec(16, 3, 5, pool_stride_freq=2, pool_stride_time=4),
            LayerSpec(24, 3, 3, pool_stride_freq=2, pool_stride_time=3),
            LayerSpec(32, 3, 3, pool_stride_freq=5, pool_stride_time=4),
        ),
        n_classes=n_classes,
        seed=seed,
        filter_bank=word_task_filter_bank(sample_rate_hz),
    )
