"""ADAM optimization, the training loop, and checkpoint persistence.

Parameters and moments live in float32 for speed; loss and gradient
accumulation happen in float64. The checkpoint format is shared by the
enhancer and recognizer (dispatch on a model-kind tag).
"""

from __future__ import annotations

import csv
import json
import struct
import time
from dataclasses import dataclass, asdict

import numpy as np

from . import diffgraph as dg
from . import enhancer as enh
from . import recognizer as rec
from .cochlea import FilterBankConfig
from .errors import CheckpointFormatError, ConfigError, TrainingError
from .losses import LossSpec, compile_loss, loss_spec_to_json

__all__ = ["TrainConfig", "AdamState", "adam_step", "train", "TrainRun",
           "save_checkpoint", "load_checkpoint"]

_MAGIC = b"PDCK"
_VERSION = 1
_DTYPES = {0: np.float32, 1: np.float64}
_DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


@dataclass
class TrainConfig:
    steps: int = 2000
    batch: int = 4
    lr: float = 1e-4
    betas: tuple = (0.9, 0.999)
    epsilon: float = 1e-8
    seed: int = 0
    checkpoint_every: int = 500
    loss: LossSpec = None
    workers: int = 1  # >1 trades bitwise determinism for speed

    def validate(self):
        if self.steps < 0:
            raise ConfigError("steps must be >= 0")
        if self.lr <= 0:
            raise ConfigError("learning rate must be positive")
        b1, b2 = self.betas
        if not (0 <= b1 < 1 and 0 <= b2 < 1):
            raise ConfigError("betas must lie in [0, 1)")
        return self


@dataclass
class AdamState:
    m: dict
    v: dict
    step: int = 0

    @classmethod
    def for_params(cls, params: dict) -> "AdamState":
        return cls({k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()}, 0)


def adam_step(params: dict, grads: dict, state: AdamState, cfg: TrainConfig):
    """Standard bias-corrected ADAM update, in place."""
    b1, b2 = cfg.betas
    state.step += 1
    t = state.step
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient in tensor {name!r}")
        g = g.astype(p.dtype, copy=False)
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        p -= cfg.lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.epsilon)
    return params, state


@dataclass
class TrainRun:
    model: object
    state: AdamState
    loss_curve: list        # (step, loss, ema) tuples
    checkpoints: list
    wall_time_s: float


def train(model: enh.EnhancerModel, loss: LossSpec, data, cfg: TrainConfig,
          run_dir=None) -> TrainRun:
    """Optimize the enhancer under a compiled loss.

    `data` is a callable (step, batch, rng) -> list of (noisy, clean)
    equal-length sample arrays. Loss values are EMA-smoothed (0.99) for
    convergence reporting; a non-finite loss aborts with the last good
    checkpoint on disk.
    """
    cfg.validate()
    compiled = compile_loss(loss)
    rng = np.random.default_rng(cfg.seed)
    state = AdamState.for_params(model.params)
    curve = []
    checkpoints = []
    ema = None
    t0 = time.time()

    if run_dir is not None:
        run_dir.mkdir(parents=True, exist_ok=True)
        (run_dir / "config.json").write_text(json.dumps({
            "train": {k: v for k, v in asdict(cfg).items() if k != "loss"},
            "loss": loss_spec_to_json(loss),
            "model": model.config_dict(),
        }, indent=2))

    dtype = next(iter(model.params.values())).dtype

    def chunk_pass(noisy, clean):
        values = model.as_values()
        y_hat = enh.forward_graph(values, model.config, dg.const(noisy))
        loss_node = compiled.graph(y_hat, clean)
        dg.backward(loss_node)
        return float(loss_node.data), {k: v.grad for k, v in values.items()}

    for step in range(cfg.steps):
        batch = data(step, cfg.batch, rng)
        noisy = np.stack([np.asarray(n, dtype=dtype) for n, _ in batch])[:, None, :]
        clean = np.stack([np.asarray(c, dtype=dtype) for _, c in batch])[:, None, :]

        if cfg.workers > 1 and len(batch) > 1:
            # fan the batch out; trades bitwise determinism for speed
            from concurrent.futures import ThreadPoolExecutor
            splits = np.array_split(np.arange(len(batch)), min(cfg.workers, len(batch)))
            with ThreadPoolExecutor(max_workers=len(splits)) as pool:
                parts = list(pool.map(
                    lambda idx: chunk_pass(noisy[idx], clean[idx]), splits))
            loss_val = float(np.mean([p[0] for p in parts]))
            grads = {}
            for k in model.params:
                acc = None
                for (_, g), idx in zip(parts, splits):
                    piece = g[k].astype(np.float64) * (len(idx) / len(batch))
                    acc = piece if acc is None else acc + piece
                grads[k] = acc
        else:
            loss_val, grads = chunk_pass(noisy, clean)

        if not np.isfinite(loss_val):
            path = checkpoints[-1] if (run_dir is not None and checkpoints) else None
            raise TrainingError(
                f"loss became non-finite at step {step}"
                + (f"; last good checkpoint: {path}" if path else ""))
        adam_step(model.params, grads, state, cfg)

        ema = loss_val if ema is None else 0.99 * ema + 0.01 * loss_val
        curve.append((step + 1, loss_val, ema))

        if run_dir is not None and cfg.checkpoint_every > 0 \
                and ((step + 1) % cfg.checkpoint_every == 0 or step + 1 == cfg.steps):
            path = run_dir / f"ckpt-{step + 1:06d}.pdck"
            save_checkpoint(model, state, path)
            checkpoints.append(path)

    if run_dir is not None:
        with open(run_dir / "loss_curve.csv", "w", newline="") as f:
            wr = csv.writer(f)
            wr.writerow(["step", "loss", "ema"])
            wr.writerows(curve)

    return TrainRun(model, state, curve, checkpoints, time.time() - t0)


# ---------------------------------------------------------------------------
# checkpoint format: PDCK


def _write_tensor(f, name: str, arr: np.ndarray):
    code = _DTYPE_CODES.get(arr.dtype)
    if code is None:
        raise CheckpointFormatError(f"tensor {name!r} has unsupported dtype {arr.dtype}")
    nb = name.encode()
    f.write(struct.pack("<H", len(nb)))
    f.write(nb)
    f.write(struct.pack("<BB", code, arr.ndim))
    f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    f.write(np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<")).tobytes())


def _read_tensor(f):
    (nlen,) = struct.unpack("<H", _read(f, 2))
    name = _read(f, nlen).decode()
    code, ndim = struct.unpack("<BB", _read(f, 2))
    shape = struct.unpack(f"<{ndim}I", _read(f, 4 * ndim)) if ndim else ()
    dtype = _DTYPES.get(code)
    if dtype is None:
        raise CheckpointFormatError(f"unknown dtype code {code}")
    n = int(np.prod(shape)) if shape else 1
    data = np.frombuffer(_read(f, n * np.dtype(dtype).itemsize),
                         dtype=np.dtype(dtype).newbyteorder("<"))
    return name, data.astype(dtype).reshape(shape)


def _read(f, n):
    b = f.read(n)
    if len(b) != n:
        raise CheckpointFormatError("truncated checkpoint file")
    return b


def save_checkpoint(model, state: AdamState, path) -> None:
    """Binary checkpoint: header, named tensors, optional ADAM state."""
    if isinstance(model, enh.EnhancerModel):
        kind, extra = "enhancer", {}
    elif isinstance(model, rec.RecognizerModel):
        kind, extra = "recognizer", {"running": model.running}
    else:
        raise CheckpointFormatError(f"cannot checkpoint {type(model).__name__}")
    config_blob = json.dumps(model.config_dict()).encode()

    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<I", _VERSION))
        kb = kind.encode()
        f.write(struct.pack("<H", len(kb)))
        f.write(kb)
        f.write(struct.pack("<I", len(config_blob)))
        f.write(config_blob)

        tensors = list(model.params.items())
        tensors += [(f"running:{k}", v) for k, v in extra.get("running", {}).items()]
        f.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors:
            _write_tensor(f, name, arr)

        if state is None:
            f.write(struct.pack("<B", 0))
        else:
            f.write(struct.pack("<B", 1))
            f.write(struct.pack("<Q", state.step))
            f.write(struct.pack("<I", len(state.m)))
            for name, arr in state.m.items():
                _write_tensor(f, f"adam.m:{name}", arr)
            for name, arr in state.v.items():
                _write_tensor(f, f"adam.v:{name}", arr)


def _rebuild_recognizer_config(d: dict) -> rec.RecognizerConfig:
    layers = tuple(rec.LayerSpec(**l) for l in d["layers"])
    fb = FilterBankConfig(**d["filter_bank"])
    return rec.RecognizerConfig(layers=layers, n_classes=d["n_classes"],
                                seed=d["seed"], filter_bank=fb)


def load_checkpoint(path):
    """Returns (model, AdamState or None); validates magic and version."""
    with open(path, "rb") as f:
        if _read(f, 4) != _MAGIC:
            raise CheckpointFormatError(f"{path}: bad magic (not a PDCK checkpoint)")
        (version,) = struct.unpack("<I", _read(f, 4))
        if version != _VERSION:
            raise CheckpointFormatError(f"{path}: unsupported version {version}")
        (klen,) = struct.unpack("<H", _read(f, 2))
        kind = _read(f, klen).decode()
        (clen,) = struct.unpack("<I", _read(f, 4))
        config = json.loads(_read(f, clen).decode())

        (n_tensors,) = struct.unpack("<I", _read(f, 4))
        tensors = dict(_read_tensor(f) for _ in range(n_tensors))

        (has_state,) = struct.unpack("<B", _read(f, 1))
        state = None
        if has_state:
            (step,) = struct.unpack("<Q", _read(f, 8))
            (n_state,) = struct.unpack("<I", _read(f, 4))
            m, v = {}, {}
            for _ in range(n_state):
                name, arr = _read_tensor(f)
                m[name.removeprefix("adam.m:")] = arr
            for _ in range(n_state):
                name, arr = _read_tensor(f)
                v[name.removeprefix("adam.v:")] = arr
            state = AdamState(m, v, step)

    params = {k: v for k, v in tensors.items() if not k.startswith("running:")}
    running = {k.removeprefix("running:"): v for k, v in tensors.items()
               if k.startswith("running:")}

    if kind == "enhancer":
        cfg = enh.WaveUNetConfig(**config)
        model = enh.EnhancerModel(cfg, params)
    elif kind == "recognizer":
        trained = config.pop("trained", False)
        cfg = _rebuild_recognizer_config(config)
        model = rec.RecognizerModel(cfg, params, running, trained=trained)
    else:
        raise CheckpointFormatError(f"{path}: unknown model kind {kind!r}")

    _check_shapes(model, kind)
    return model, state


def _check_shapes(model, kind):
    """Every named tensor must match its config-derived shape."""
    if kind == "enhancer":
        fresh = enh.build(model.config, seed=0)
        ref = fresh.params
    else:
        fresh = rec.build(model.config)
        ref = dict(fresh.params)
        ref.update({k: v for k, v in fresh.running.items()})
    have = dict(model.params)
    if kind == "recognizer":
        have.update(model.running)
    if set(have) != set(ref):
        missing = set(ref) ^ set(have)
        raise CheckpointFormatError(f"tensor set mismatch: {sorted(missing)}")
    for k, v in have.items():
        if v.shape != ref[k].shape:
            raise CheckpointFormatError(
                f"tensor {k!r} has shape {v.shape}, config implies {ref[k].shape}")
