"""Epsilon-prediction denoisers, their training loop and checkpoint files.

The network is a patch-stem MLP: a non-overlapping ``p x p`` convolution
turns the image into per-patch features, a stack of dense (residual where the
width allows) ReLU layers mixes them, and a dense head predicts the noise in
pixel layout. Timestep and condition enter every hidden layer as an additive
bias computed from a shared embedding vector::

    s = silu(sinusoid(t) @ We + be)
    e = s + cond_table[c]
    h_l = relu(h_{l-1} @ W_l + b_l + e @ U_l) (+ h_{l-1})
    eps = h_L @ W_head + b_head + (s @ w_skip + b_skip) * x

The trunk is narrower than the image, so the timestep-gated input skip in the
last line carries the near-identity part of the noise estimate at high noise.

Row ``NULL_CONDITION`` of ``cond_table`` is the learned unconditional
embedding used by classifier-free guidance. At inference the ``e @ U_l`` terms
are tabulated per timestep and per condition, so a forward pass costs only the
stem, trunk and head matmuls counted by :func:`flops_per_step`.
"""

from __future__ import annotations

import json
import logging
import math
import os
import struct
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .dataset import IMAGE_SHAPE, NULL_CONDITION, NUM_CONDITIONS, Condition, data_fingerprint
from .schedule import NoiseSchedule, make_schedule

log = logging.getLogger(__name__)

MAGIC = b"SRDF"
FORMAT_VERSION = 1


class CheckpointError(Exception):
    pass


class FingerprintError(CheckpointError):
    pass


class TrainingDivergedError(RuntimeError):
    pass


@dataclass(frozen=True)
class DenoiserConfig:
    widths: tuple[int, ...]
    input_shape: tuple[int, int, int] = IMAGE_SHAPE
    kind: str = "patch_mlp"
    patch: int = 4
    stem_channels: int = 16
    emb_dim: int = 128
    time_dim: int = 64
    num_conditions: int = NUM_CONDITIONS
    num_timesteps: int = 1000

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))
        if self.kind != "patch_mlp":
            raise ValueError(f"unknown architecture kind {self.kind!r}")
        if len(self.input_shape) != 3:
            raise ValueError("input_shape must be [C, H, W]")
        _, h, w = self.input_shape
        if self.stem_channels and (h % self.patch or w % self.patch):
            raise ValueError("patch size must divide the image height and width")
        if any(wd < 1 for wd in self.widths) or self.stem_channels < 0:
            raise ValueError("widths must be positive")
        if self.time_dim % 2:
            raise ValueError("time_dim must be even")

    @property
    def depth(self) -> int:
        return len(self.widths)

    @property
    def n_patches(self) -> int:
        _, h, w = self.input_shape
        return (h // self.patch) * (w // self.patch)

    @property
    def pixels(self) -> int:
        c, h, w = self.input_shape
        return c * h * w

    @property
    def trunk_input(self) -> int:
        return self.n_patches * self.stem_channels if self.stem_channels else self.pixels

    def param_shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        if self.depth == 0:
            return []
        c = self.input_shape[0]
        shapes: list[tuple[str, tuple[int, ...]]] = []
        if self.stem_channels:
            shapes += [("stem.w", (c * self.patch**2, self.stem_channels)), ("stem.b", (self.stem_channels,))]
        shapes += [
            ("emb.w", (self.time_dim, self.emb_dim)),
            ("emb.b", (self.emb_dim,)),
            ("emb.cond", (self.num_conditions + 1, self.emb_dim)),
            ("skip.w", (self.emb_dim,)),
            ("skip.b", (1,)),
        ]
        fan_in = self.trunk_input
        for i, wd in enumerate(self.widths):
            shapes += [(f"l{i}.w", (fan_in, wd)), (f"l{i}.b", (wd,)), (f"l{i}.u", (self.emb_dim, wd))]
            fan_in = wd
        shapes += [("head.w", (fan_in, self.pixels)), ("head.b", (self.pixels,))]
        return shapes

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["widths"] = list(self.widths)
        d["input_shape"] = list(self.input_shape)
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "DenoiserConfig":
        return cls(**{**d, "widths": tuple(d["widths"]), "input_shape": tuple(d["input_shape"])})


SKETCH_CONFIG = DenoiserConfig(widths=(448, 448, 448))
RENDER_CONFIG = DenoiserConfig(widths=(72, 72))


def param_count(config: DenoiserConfig) -> int:
    return sum(int(np.prod(s)) for _, s in config.param_shapes())


def flops_per_step(config: DenoiserConfig) -> int:
    """FLOPs of one network evaluation on one sample (multiply-add = 2).

    Counts the stem, trunk and head matmuls. Embedding projections are
    tabulated ahead of time and bias/activation work is elementwise, so
    neither enters the count.
    """
    if config.depth == 0:
        return 0
    macs = 0
    if config.stem_channels:
        macs += config.n_patches * config.input_shape[0] * config.patch**2 * config.stem_channels
    fan_in = config.trunk_input
    for wd in config.widths:
        macs += fan_in * wd
        fan_in = wd
    macs += fan_in * config.pixels
    return 2 * macs


def sinusoidal_embedding(t: np.ndarray, dim: int) -> np.ndarray:
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half, dtype=np.float64) / half)
    args = np.asarray(t, dtype=np.float64)[:, None] * freqs[None, :]
    return np.concatenate([np.sin(args), np.cos(args)], axis=1)


def _silu(x):
    return x / (1.0 + np.exp(-x))


def _dsilu(x):
    s = 1.0 / (1.0 + np.exp(-x))
    return s * (1.0 + x * (1.0 - s))


def _residual(config: DenoiserConfig, i: int) -> bool:
    return i > 0 and config.widths[i] == config.widths[i - 1]


def init_params(config: DenoiserConfig, seed: int) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(seed)
    params: dict[str, np.ndarray] = {}
    for name, shape in config.param_shapes():
        if name == "skip.b":
            arr = np.full(shape, 0.5)
        elif name.endswith(".b") or name == "skip.w":
            arr = np.zeros(shape)
        elif name == "emb.cond":
            arr = rng.normal(0.0, 0.5, shape)
        elif name == "head.w":
            arr = rng.normal(0.0, 0.1 * math.sqrt(1.0 / shape[0]), shape)
        elif name.endswith(".u"):
            arr = rng.normal(0.0, 0.5 / math.sqrt(shape[0]), shape)
        elif name == "emb.w":
            arr = rng.normal(0.0, 1.0 / math.sqrt(shape[0]), shape)
        else:
            gain = 0.5 if name[0] == "l" and _residual(config, int(name[1 : name.index(".")])) else 1.0
            arr = rng.normal(0.0, gain * math.sqrt(2.0 / shape[0]), shape)
        params[name] = arr.astype(np.float32)
    return params


class Denoiser:
    """A denoiser with fixed weights; safe to share between readers."""

    def __init__(self, config: DenoiserConfig, params: dict[str, np.ndarray], fingerprint: str | None = None):
        expected = dict(config.param_shapes())
        if set(params) != set(expected):
            raise ValueError("parameter names do not match config")
        for name, shape in expected.items():
            if tuple(params[name].shape) != shape:
                raise ValueError(f"{name}: expected shape {shape}, got {params[name].shape}")
        self.config = config
        self.fingerprint = fingerprint or data_fingerprint(config.input_shape)
        self.params = {k: np.ascontiguousarray(v, dtype=np.float32) for k, v in params.items()}
        for v in self.params.values():
            v.setflags(write=False)
        self._build_tables()

    def _build_tables(self) -> None:
        cfg, p = self.config, self.params
        self._time_bias: list[np.ndarray] = []
        self._cond_bias: list[np.ndarray] = []
        if cfg.depth == 0:
            return
        t = np.arange(cfg.num_timesteps + 1)
        e_t = _silu(sinusoidal_embedding(t, cfg.time_dim) @ p["emb.w"].astype(np.float64) + p["emb.b"])
        self._skip = (e_t @ p["skip.w"].astype(np.float64) + p["skip.b"]).astype(np.float32)
        for i in range(cfg.depth):
            u = p[f"l{i}.u"].astype(np.float64)
            self._time_bias.append((e_t @ u + p[f"l{i}.b"]).astype(np.float32))
            self._cond_bias.append((p["emb.cond"].astype(np.float64) @ u).astype(np.float32))

    def predict(self, x: np.ndarray, t: int, cond_ids: np.ndarray) -> np.ndarray:
        """Noise prediction for a batch ``x[B, C, H, W]`` sharing timestep ``t``."""
        cfg, p = self.config, self.params
        x = np.asarray(x, dtype=np.float32)
        b = x.shape[0]
        if x.shape[1:] != cfg.input_shape:
            raise ValueError(f"input shape {x.shape[1:]} does not match model {cfg.input_shape}")
        if not 0 <= t <= cfg.num_timesteps:
            raise ValueError(f"timestep {t} outside [0, {cfg.num_timesteps}]")
        if cfg.depth == 0:
            return np.zeros_like(x)
        if cfg.stem_channels:
            c, hh, ww = cfg.input_shape
            k = cfg.patch
            patches = x.reshape(b, c, hh // k, k, ww // k, k).transpose(0, 2, 4, 1, 3, 5).reshape(b, -1, c * k * k)
            h = np.maximum(patches @ p["stem.w"] + p["stem.b"], 0.0).reshape(b, -1)
        else:
            h = x.reshape(b, -1)
        for i in range(cfg.depth):
            bias = self._time_bias[i][t] + self._cond_bias[i][cond_ids]
            a = np.maximum(h @ p[f"l{i}.w"] + bias, 0.0)
            h = a + h if _residual(cfg, i) else a
        out = h @ p["head.w"] + p["head.b"] + self._skip[t] * x.reshape(b, -1)
        return out.reshape(x.shape)

    def flat_weights(self) -> np.ndarray:
        return flatten_params(self.config, self.params)


def _cond_id(condition: Condition | int | None, num_conditions: int) -> int:
    if condition is None:
        return NULL_CONDITION
    cid = condition.id if isinstance(condition, Condition) else int(condition)
    if not 0 <= cid < num_conditions:
        raise ValueError(f"unknown condition id {cid}")
    return cid


def init_denoiser(config: DenoiserConfig, seed: int) -> Denoiser:
    return Denoiser(config, init_params(config, seed))


def denoise(model: Denoiser, x_t: np.ndarray, t: int, condition: Condition | int | None) -> np.ndarray:
    """Predict the noise in a single latent ``x_t[C, H, W]``; ``None`` is unconditional."""
    x_t = np.asarray(x_t)
    if x_t.shape != model.config.input_shape:
        raise ValueError(f"latent shape {x_t.shape} does not match model {model.config.input_shape}")
    cid = _cond_id(condition, model.config.num_conditions)
    return model.predict(x_t[None], int(t), np.array([cid]))[0]


def flatten_params(config: DenoiserConfig, params: dict[str, np.ndarray]) -> np.ndarray:
    if config.depth == 0:
        return np.zeros(0, dtype=np.float32)
    return np.concatenate([params[n].ravel() for n, _ in config.param_shapes()]).astype(np.float32)


def unflatten_params(config: DenoiserConfig, flat: np.ndarray) -> dict[str, np.ndarray]:
    out, off = {}, 0
    for name, shape in config.param_shapes():
        n = int(np.prod(shape))
        out[name] = np.asarray(flat[off : off + n], dtype=np.float32).reshape(shape)
        off += n
    if off != flat.size:
        raise ValueError(f"expected {off} weights, got {flat.size}")
    return out


# --------------------------------------------------------------------------- training

def forward_train(config: DenoiserConfig, params: dict[str, np.ndarray], x, t, c):
    """General forward pass with per-sample timesteps; returns (out, cache)."""
    b = x.shape[0]
    cache: dict[str, Any] = {"x_shape": x.shape}
    if config.stem_channels:
        ch, hh, ww = config.input_shape
        k = config.patch
        patches = x.reshape(b, ch, hh // k, k, ww // k, k).transpose(0, 2, 4, 1, 3, 5).reshape(b, -1, ch * k * k)
        s = patches @ params["stem.w"] + params["stem.b"]
        h = np.maximum(s, 0.0).reshape(b, -1)
        cache.update(patches=patches, stem_pre=s)
    else:
        h = x.reshape(b, -1)
    temb = sinusoidal_embedding(t, config.time_dim).astype(params["emb.w"].dtype)
    g = temb @ params["emb.w"] + params["emb.b"]
    s_t = _silu(g)
    e = s_t + params["emb.cond"][c]
    skip = s_t @ params["skip.w"] + params["skip.b"]
    x_flat = x.reshape(b, -1)
    cache.update(temb=temb, g=g, s_t=s_t, e=e, c=c, hs=[h], pres=[], x_flat=x_flat)
    for i in range(config.depth):
        pre = h @ params[f"l{i}.w"] + params[f"l{i}.b"] + e @ params[f"l{i}.u"]
        a = np.maximum(pre, 0.0)
        h = a + h if _residual(config, i) else a
        cache["pres"].append(pre)
        cache["hs"].append(h)
    out = h @ params["head.w"] + params["head.b"] + skip[:, None] * x_flat
    return out.reshape(x.shape), cache


def backward_train(config: DenoiserConfig, params, cache, dout) -> dict[str, np.ndarray]:
    grads: dict[str, np.ndarray] = {}
    b = dout.shape[0]
    dout = dout.reshape(b, -1)
    hs, pres, e = cache["hs"], cache["pres"], cache["e"]
    grads["head.w"] = hs[-1].T @ dout
    grads["head.b"] = dout.sum(0)
    dh = dout @ params["head.w"].T
    de = np.zeros_like(e)
    for i in reversed(range(config.depth)):
        dpre = dh * (pres[i] > 0)
        grads[f"l{i}.w"] = hs[i].T @ dpre
        grads[f"l{i}.b"] = dpre.sum(0)
        grads[f"l{i}.u"] = e.T @ dpre
        de += dpre @ params[f"l{i}.u"].T
        dh_prev = dpre @ params[f"l{i}.w"].T
        dh = dh_prev + dh if _residual(config, i) else dh_prev
    dskip = (dout * cache["x_flat"]).sum(1)
    grads["skip.w"] = cache["s_t"].T @ dskip
    grads["skip.b"] = np.array([dskip.sum()], dtype=dout.dtype)
    dg = (de + dskip[:, None] * params["skip.w"]) * _dsilu(cache["g"])
    grads["emb.w"] = cache["temb"].T @ dg
    grads["emb.b"] = dg.sum(0)
    dcond = np.zeros_like(params["emb.cond"])
    np.add.at(dcond, cache["c"], de)
    grads["emb.cond"] = dcond
    if config.stem_channels:
        s = cache["stem_pre"]
        ds = dh.reshape(s.shape) * (s > 0)
        patches = cache["patches"]
        grads["stem.w"] = patches.reshape(-1, patches.shape[-1]).T @ ds.reshape(-1, s.shape[-1])
        grads["stem.b"] = ds.sum((0, 1))
    return grads


def eps_loss(config, params, x_t, t, c, eps):
    """Mean-squared noise-prediction error and its gradient."""
    out, cache = forward_train(config, params, x_t, t, c)
    diff = out - eps
    loss = float(np.mean(diff * diff))
    grads = backward_train(config, params, cache, 2.0 * diff / diff.size)
    return loss, grads


@dataclass
class TrainHyperparams:
    epochs: int = 40
    batch_size: int = 128
    learning_rate: float = 1e-3
    uncond_dropout_prob: float = 0.1
    ema_decay: float = 0.999
    warmup_steps: int = 200
    grad_clip: float = 1.0
    val_size: int = 256
    eval_every: int = 100
    curve_tail: int = 60
    seed: int = 0

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


@dataclass
class Checkpoint:
    config: DenoiserConfig
    weights: np.ndarray
    metadata: dict[str, Any] = field(default_factory=dict)
    fingerprint: str = ""

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float32).ravel()
        expected = param_count(self.config)
        if self.weights.size != expected:
            raise CheckpointError(f"weights length {self.weights.size} does not match config ({expected})")
        if not self.fingerprint:
            self.fingerprint = data_fingerprint(self.config.input_shape)

    def model(self) -> Denoiser:
        return Denoiser(self.config, unflatten_params(self.config, self.weights), self.fingerprint)


def _lr_at(step: int, total: int, hp: TrainHyperparams) -> float:
    if step < hp.warmup_steps:
        return hp.learning_rate * (step + 1) / hp.warmup_steps
    frac = (step - hp.warmup_steps) / max(1, total - hp.warmup_steps)
    return hp.learning_rate * (0.05 + 0.95 * 0.5 * (1.0 + math.cos(math.pi * min(frac, 1.0))))


def val_mse(config, params, val) -> float:
    x_t, t, c, eps = val
    out, _ = forward_train(config, params, x_t, t, c)
    return float(np.mean((out - eps) ** 2))


def _make_val(x0, c, schedule, seed):
    rng = np.random.default_rng(seed + 7919)
    t = rng.integers(1, schedule.T + 1, size=len(x0))
    eps = rng.standard_normal(x0.shape).astype(np.float32)
    ab = schedule.alpha_bars[t - 1].astype(np.float32)[:, None, None, None]
    return np.sqrt(ab) * x0 + np.sqrt(1 - ab) * eps, t, c, eps


def train(
    config: DenoiserConfig,
    dataset: tuple[np.ndarray, np.ndarray],
    hyperparams: TrainHyperparams | None = None,
    schedule: NoiseSchedule | None = None,
    init: Denoiser | None = None,
    init_seed: int = 0,
    dataset_info: dict[str, Any] | None = None,
    progress: bool = False,
) -> Checkpoint:
    """Train an epsilon-prediction denoiser.

    ``dataset`` is ``(x0[n, C, H, W], condition_ids[n])`` in model space; the
    last ``val_size`` samples are held out for validation. Conditions are
    replaced by the null id with probability ``uncond_dropout_prob``. The
    returned checkpoint holds the EMA weights.
    """
    hp = hyperparams or TrainHyperparams()
    schedule = schedule or make_schedule("linear_beta", config.num_timesteps)
    if schedule.T != config.num_timesteps:
        raise ValueError("schedule length does not match config.num_timesteps")
    if not 0.0 <= hp.uncond_dropout_prob < 1.0:
        raise ValueError("uncond_dropout_prob must lie in [0, 1)")
    x_all, c_all = dataset
    x_all = np.asarray(x_all, dtype=np.float32)
    c_all = np.asarray(c_all, dtype=np.int64)
    if len(x_all) == 0:
        raise ValueError("dataset is empty")
    n_val = min(hp.val_size, len(x_all) // 5)
    x_tr, c_tr = x_all[: len(x_all) - n_val], c_all[: len(x_all) - n_val]
    val = _make_val(x_all[len(x_all) - n_val :], c_all[len(x_all) - n_val :], schedule, hp.seed) if n_val else None

    params = {k: v.astype(np.float32).copy() for k, v in (init.params if init else init_params(config, init_seed)).items()}
    ema = {k: v.copy() for k, v in params.items()}
    m = {k: np.zeros_like(v) for k, v in params.items()}
    v2 = {k: np.zeros_like(v) for k, v in params.items()}
    rng = np.random.default_rng(hp.seed)
    steps_per_epoch = max(1, len(x_tr) // hp.batch_size) if config.depth else 0
    total = hp.epochs * steps_per_epoch
    untrained = val_mse(config, params, val) if val else None
    curve: list[float] = []
    train_losses: list[float] = []
    ab_table = schedule.alpha_bars.astype(np.float32)
    step = 0
    b1, b2 = 0.9, 0.999
    for epoch in range(hp.epochs if config.depth else 0):
        order = rng.permutation(len(x_tr))
        for j in range(steps_per_epoch):
            idx = order[j * hp.batch_size : (j + 1) * hp.batch_size]
            x0 = x_tr[idx]
            c = c_tr[idx].copy()
            c[rng.random(len(idx)) < hp.uncond_dropout_prob] = NULL_CONDITION
            t = rng.integers(1, schedule.T + 1, size=len(idx))
            eps = rng.standard_normal(x0.shape, dtype=np.float32)
            ab = ab_table[t - 1][:, None, None, None]
            x_t = np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps
            loss, grads = eps_loss(config, params, x_t, t, c, eps)
            if not math.isfinite(loss):
                raise TrainingDivergedError(f"loss became {loss} at step {step} (epoch {epoch})")
            gnorm = math.sqrt(sum(float(np.vdot(g, g)) for g in grads.values()))
            scale = min(1.0, hp.grad_clip / (gnorm + 1e-12)) if hp.grad_clip else 1.0
            lr = _lr_at(step, total, hp)
            step += 1
            bc1, bc2 = 1 - b1**step, 1 - b2**step
            for k in params:
                g = grads[k] * scale
                m[k] *= b1
                m[k] += (1 - b1) * g
                v2[k] *= b2
                v2[k] += (1 - b2) * g * g
                params[k] -= (lr / bc1) * m[k] / (np.sqrt(v2[k] / bc2) + 1e-8)
                ema[k] *= hp.ema_decay
                ema[k] += (1 - hp.ema_decay) * params[k]
            train_losses.append(loss)
            if val and step % hp.eval_every == 0:
                curve.append(val_mse(config, ema, val))
                if progress:
                    log.info("step %d/%d train %.4f val(ema) %.4f", step, total, loss, curve[-1])
    final = val_mse(config, ema, val) if val else None
    meta = {
        "dataset": dict(dataset_info or {}),
        "epochs": hp.epochs if config.depth else 0,
        "steps": step,
        "hyperparams": hp.to_dict(),
        "init_seed": init_seed,
        "schedule": schedule.to_dict(),
        "untrained_val_mse": untrained,
        "final_val_mse": final,
        "val_curve_tail": curve[-hp.curve_tail :],
        "train_loss_tail": [float(np.mean(train_losses[i : i + hp.eval_every])) for i in range(0, len(train_losses), hp.eval_every)][-hp.curve_tail :],
    }
    return Checkpoint(config, flatten_params(config, ema), meta, data_fingerprint(config.input_shape))


# --------------------------------------------------------------------------- persistence

def _header(ckpt: Checkpoint) -> bytes:
    doc = {
        "config": ckpt.config.to_dict(),
        "metadata": ckpt.metadata,
        "fingerprint": ckpt.fingerprint,
        "params": [[n, list(s)] for n, s in ckpt.config.param_shapes()],
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("utf-8")


def checkpoint_bytes(ckpt: Checkpoint) -> bytes:
    header = _header(ckpt)
    return b"".join([
        MAGIC,
        struct.pack("<II", FORMAT_VERSION, len(header)),
        header,
        ckpt.weights.astype("<f4").tobytes(),
    ])


def atomic_write(path: str | Path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    atomic_write(path, checkpoint_bytes(ckpt))


def load_checkpoint(path: str | Path, expected_shape: tuple[int, ...] | None = None) -> Checkpoint:
    """Read a checkpoint; ``expected_shape`` enforces the data-space fingerprint."""
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    version, hlen = struct.unpack("<II", raw[4:12])
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    if 12 + hlen > len(raw):
        raise CheckpointError(f"{path}: truncated header")
    try:
        doc = json.loads(raw[12 : 12 + hlen].decode("utf-8"))
        config = DenoiserConfig.from_dict(doc["config"])
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: corrupt header ({exc})") from None
    if not doc.get("fingerprint"):
        raise FingerprintError(f"{path}: checkpoint carries no data-space fingerprint")
    n = param_count(config)
    body = raw[12 + hlen :]
    if len(body) != 4 * n:
        raise CheckpointError(f"{path}: expected {4 * n} weight bytes, found {len(body)} (truncated or corrupt)")
    weights = np.frombuffer(body, dtype="<f4").astype(np.float32)
    if expected_shape is not None and doc["fingerprint"] != data_fingerprint(tuple(expected_shape)):
        raise FingerprintError(
            f"{path}: fingerprint {doc['fingerprint']} does not match the requested data space {tuple(expected_shape)}"
        )
    return Checkpoint(config, weights, doc.get("metadata", {}), doc["fingerprint"])
