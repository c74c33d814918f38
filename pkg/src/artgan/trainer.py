"""Adversarial training loop: Adam updates, checkpointing, resume, FID watch.

Checkpoint layout (all integers little-endian):

    magic "AGFK" | u32 version=1 | u64 config-JSON length | config JSON |
    tensor records | RNG state (u64 x 4) | CRC32 of all preceding bytes

    tensor record: u32 name length | name UTF-8 | u8 rank | u64 dims... |
                   f32 little-endian data

Records carry no count field; they fill the span between the config JSON
and the trailing 36 bytes.  Parameters and optimizer moments are snapped to
float32-representable values after every update, so the f32 storage is
lossless and a resumed run is bit-for-bit the same as an uninterrupted one.
"""

from __future__ import annotations

import json
import logging
import os
import struct
import tempfile
import zlib
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from . import metrics as met
from . import model as mdl
from .autodiff import Tensor
from .errors import (CheckpointWriteError, ConfigError, CorruptionError,
                     DivergedTrainingError, FormatError)
from .rng import Rng, derive_seed

logger = logging.getLogger("artgan.trainer")

MAGIC = b"AGFK"
VERSION = 1


@dataclass
class TrainConfig:
    resolution: int = 64
    batch_size: int = 16
    learning_rate_g: float = 2e-3
    learning_rate_d: float = 2e-3
    adam_beta1: float = 0.0
    adam_beta2: float = 0.99
    adam_eps: float = 1e-8
    total_iterations: int = 2000
    checkpoint_interval: int = 5
    fid_monitor_interval: int = 100
    fid_monitor_samples: int = 64
    seed: int = 0
    augment_flip: bool = False
    r1_gamma: float = 1.0
    r1_interval: int = 16
    dim_z: int = 64
    dim_w: int = 64
    mapping_layers: int = 4
    channel_base: int = 128
    channel_max: int = 128
    extractor: str = "pool"
    stop_patience: int = 10
    stop_min_delta: float = 0.0

    def __post_init__(self):
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2")
        if min(self.learning_rate_g, self.learning_rate_d) <= 0:
            raise ConfigError("learning rates must be > 0")
        for name in ("checkpoint_interval", "fid_monitor_interval", "r1_interval",
                     "total_iterations", "stop_patience"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.fid_monitor_samples < 2:
            raise ConfigError("fid_monitor_samples must be >= 2")

    @property
    def adam_betas(self) -> tuple[float, float]:
        return (self.adam_beta1, self.adam_beta2)

    def model_config(self) -> mdl.ModelConfig:
        return mdl.ModelConfig(resolution=self.resolution, dim_z=self.dim_z,
                               dim_w=self.dim_w, mapping_layers=self.mapping_layers,
                               channel_base=self.channel_base,
                               channel_max=self.channel_max)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "TrainConfig":
        try:
            doc = json.loads(text)
        except ValueError as exc:
            raise FormatError(f"bad config JSON in checkpoint: {exc}") from None
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(doc) - known
        if unknown:
            raise FormatError(f"unknown config keys in checkpoint: {sorted(unknown)}")
        return cls(**doc)


class AdamState:
    """First/second moment buffers mirroring one named parameter set."""

    def __init__(self, named_params):
        self.m = {name: np.zeros_like(t.data) for name, t in named_params}
        self.v = {name: np.zeros_like(t.data) for name, t in named_params}
        self.step = 0


def _quantize(arr: np.ndarray) -> np.ndarray:
    # snap to float32-representable values; keeps f32 checkpoints lossless
    return arr.astype(np.float32).astype(np.float64)


def _f32(x: float) -> float:
    return float(np.float32(x))


def adam_update(named_params, grads, state: AdamState, lr: float,
                betas: tuple[float, float], eps: float) -> None:
    b1, b2 = betas
    state.step += 1
    t = state.step
    for name, p in named_params:
        g = grads[p].data
        state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        state.v[name] = b2 * state.v[name] + (1.0 - b2) * g * g
        m_hat = state.m[name] / (1.0 - b1 ** t)
        v_hat = state.v[name] / (1.0 - b2 ** t)
        p.data = _quantize(p.data - lr * m_hat / (np.sqrt(v_hat) + eps))
        state.m[name] = _quantize(state.m[name])
        state.v[name] = _quantize(state.v[name])


class TrainState:
    def __init__(self, config: TrainConfig):
        mcfg = config.model_config()
        self.rng = Rng(config.seed)
        self.gen = mdl.GeneratorParams(mcfg, self.rng)
        self.disc = mdl.DiscriminatorParams(mcfg, self.rng)
        for _, t in self.gen.tensors() + self.disc.tensors():
            t.data = _quantize(t.data)
        self.adam_g = AdamState(self.gen.tensors())
        self.adam_d = AdamState(self.disc.tensors())
        self.iteration = 0
        self.loss_d_history: list[float] = []
        self.loss_g_history: list[float] = []
        self.fid_history: list[tuple[int, float]] = []


def init_train_state(config: TrainConfig) -> TrainState:
    return TrainState(config)


def train_step(state: TrainState, batch: np.ndarray, config: TrainConfig) -> TrainState:
    """One discriminator update on (real batch + fresh fakes), then one
    generator update on fresh fakes.  Raises on non-finite losses, carrying
    the last finite state."""
    n = batch.shape[0]
    if batch.shape[2] != config.resolution:
        raise ConfigError(f"batch resolution {batch.shape[2]} != config {config.resolution}")
    r1_step = config.r1_gamma > 0 and state.iteration % config.r1_interval == 0

    # discriminator phase: fakes are constants, no generator gradients needed
    z_d = state.rng.normal((n, config.dim_z))
    fakes = mdl.generator_forward_batch(Tensor(z_d), state.gen, state.rng).data
    with ad.Tape() as tape:
        x_real = Tensor(batch)
        d_real = mdl.discriminator_forward(x_real, state.disc)
        d_fake = mdl.discriminator_forward(Tensor(fakes), state.disc)
        loss_d = mdl.discriminator_loss(d_real, d_fake)
        if r1_step:
            loss_d = ad.add(loss_d, mdl.r1_penalty(tape, d_real, x_real, config.r1_gamma))
        grads = ad.backward(tape, loss_d)
    if not np.isfinite(loss_d.data):
        raise DivergedTrainingError(
            f"discriminator loss became non-finite at iteration {state.iteration}",
            last_state=state)
    adam_update(state.disc.tensors(), grads, state.adam_d, config.learning_rate_d,
                config.adam_betas, config.adam_eps)

    # generator phase on fresh fakes
    z_g = state.rng.normal((n, config.dim_z))
    with ad.Tape() as tape:
        fake2 = mdl.generator_forward_batch(Tensor(z_g), state.gen, state.rng)
        d_fake2 = mdl.discriminator_forward(fake2, state.disc)
        loss_g = mdl.generator_loss(d_fake2)
        grads = ad.backward(tape, loss_g)
    if not np.isfinite(loss_g.data):
        raise DivergedTrainingError(
            f"generator loss became non-finite at iteration {state.iteration}",
            last_state=state)
    adam_update(state.gen.tensors(), grads, state.adam_g, config.learning_rate_g,
                config.adam_betas, config.adam_eps)

    state.loss_d_history.append(_f32(float(loss_d.data)))
    state.loss_g_history.append(_f32(float(loss_g.data)))
    state.iteration += 1
    return state


# ---------------------------------------------------------------------------
# checkpoint serialization


def _named_state_tensors(state: TrainState) -> list[tuple[str, np.ndarray]]:
    out = [("meta/iteration", np.asarray(float(state.iteration)))]
    for name, t in state.gen.tensors():
        out.append((f"gen/{name}", t.data))
    for name, t in state.disc.tensors():
        out.append((f"disc/{name}", t.data))
    for prefix, adam in (("adam_g", state.adam_g), ("adam_d", state.adam_d)):
        out.append((f"{prefix}/step", np.asarray(float(adam.step))))
        for name in adam.m:
            out.append((f"{prefix}/m/{name}", adam.m[name]))
        for name in adam.v:
            out.append((f"{prefix}/v/{name}", adam.v[name]))
    out.append(("hist/loss_d", np.asarray(state.loss_d_history)))
    out.append(("hist/loss_g", np.asarray(state.loss_g_history)))
    out.append(("hist/fid_iter", np.asarray([float(i) for i, _ in state.fid_history])))
    out.append(("hist/fid_value", np.asarray([v for _, v in state.fid_history])))
    return out


def _encode_record(name: str, arr: np.ndarray) -> bytes:
    nb = name.encode("utf-8")
    parts = [struct.pack("<I", len(nb)), nb, struct.pack("<B", arr.ndim)]
    parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
    parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def checkpoint_bytes(state: TrainState, config: TrainConfig) -> bytes:
    cfg_json = config.to_json().encode("utf-8")
    body = [MAGIC, struct.pack("<I", VERSION), struct.pack("<Q", len(cfg_json)), cfg_json]
    for name, arr in _named_state_tensors(state):
        body.append(_encode_record(name, arr))
    body.append(struct.pack("<4Q", *state.rng.state_words()))
    blob = b"".join(body)
    return blob + struct.pack("<I", zlib.crc32(blob) & 0xFFFFFFFF)


def save_checkpoint(state: TrainState, config: TrainConfig, path) -> None:
    """Atomic write: temp file in the target directory, then rename."""
    blob = checkpoint_bytes(state, config)
    directory = os.path.dirname(os.path.abspath(path)) or "."
    try:
        fd, tmp = tempfile.mkstemp(prefix=".ckpt-", dir=directory)
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(blob)
            os.replace(tmp, path)
        except BaseException:
            os.unlink(tmp)
            raise
    except OSError as exc:
        raise CheckpointWriteError(f"cannot write checkpoint {path}: {exc}") from exc


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise CorruptionError("checkpoint truncated")
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out


def _parse_records(reader: _Reader, end: int) -> dict[str, np.ndarray]:
    records = {}
    while reader.pos < end:
        (name_len,) = struct.unpack("<I", reader.take(4))
        if reader.pos + name_len > end:
            raise CorruptionError("tensor record overruns checkpoint body")
        name = reader.take(name_len).decode("utf-8")
        (rank,) = struct.unpack("<B", reader.take(1))
        dims = struct.unpack(f"<{rank}Q", reader.take(8 * rank))
        count = int(np.prod(dims)) if rank else 1
        data = np.frombuffer(reader.take(4 * count), dtype="<f4").astype(np.float64)
        records[name] = data.reshape(dims)
    if reader.pos != end:
        raise CorruptionError("tensor records misaligned with checkpoint body")
    return records


def load_checkpoint(path) -> tuple[TrainState, TrainConfig]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 4 + 4 + 8 + 32 + 4:
        raise CorruptionError(f"{path}: too short to be a checkpoint")
    if blob[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic bytes")
    (stored_crc,) = struct.unpack("<I", blob[-4:])
    if zlib.crc32(blob[:-4]) & 0xFFFFFFFF != stored_crc:
        raise CorruptionError(f"{path}: CRC mismatch, file is corrupt")
    reader = _Reader(blob)
    reader.take(4)
    (version,) = struct.unpack("<I", reader.take(4))
    if version != VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    (cfg_len,) = struct.unpack("<Q", reader.take(8))
    config = TrainConfig.from_json(reader.take(cfg_len).decode("utf-8"))
    records = _parse_records(reader, len(blob) - 36)
    rng_words = struct.unpack("<4Q", reader.take(32))

    state = TrainState.__new__(TrainState)
    mcfg = config.model_config()
    state.gen = mdl.GeneratorParams(mcfg)
    state.disc = mdl.DiscriminatorParams(mcfg)
    state.rng = Rng.from_state_words(rng_words)
    state.adam_g = AdamState(state.gen.tensors())
    state.adam_d = AdamState(state.disc.tensors())

    def pull(name: str, like: np.ndarray) -> np.ndarray:
        if name not in records:
            raise FormatError(f"{path}: checkpoint misses tensor {name!r}")
        arr = records.pop(name)
        if arr.shape != like.shape:
            raise FormatError(f"{path}: tensor {name!r} has shape {arr.shape}, "
                              f"expected {like.shape}")
        return arr

    state.iteration = int(pull("meta/iteration", np.asarray(0.0)))
    for name, t in state.gen.tensors():
        t.data = pull(f"gen/{name}", t.data)
    for name, t in state.disc.tensors():
        t.data = pull(f"disc/{name}", t.data)
    for prefix, adam in (("adam_g", state.adam_g), ("adam_d", state.adam_d)):
        adam.step = int(pull(f"{prefix}/step", np.asarray(0.0)))
        for name in adam.m:
            adam.m[name] = pull(f"{prefix}/m/{name}", adam.m[name])
            adam.v[name] = pull(f"{prefix}/v/{name}", adam.v[name])
    state.loss_d_history = [float(v) for v in records.pop("hist/loss_d",
                                                          np.empty(0)).reshape(-1)]
    state.loss_g_history = [float(v) for v in records.pop("hist/loss_g",
                                                          np.empty(0)).reshape(-1)]
    fid_iter = records.pop("hist/fid_iter", np.empty(0)).reshape(-1)
    fid_value = records.pop("hist/fid_value", np.empty(0)).reshape(-1)
    state.fid_history = [(int(i), float(v)) for i, v in zip(fid_iter, fid_value)]
    if records:
        raise FormatError(f"{path}: unexpected tensors in checkpoint: "
                          f"{sorted(records)[:5]}")
    return state, config


def resume(path) -> tuple[TrainState, TrainConfig]:
    """Load a checkpoint for continued training."""
    return load_checkpoint(path)


# ---------------------------------------------------------------------------
# monitoring and the outer loop


def sample_images(state: TrainState, config: TrainConfig, count: int, rng: Rng) -> np.ndarray:
    """Generate ``count`` images (linear output) without recording gradients."""
    out = []
    step = max(1, config.batch_size)
    for start in range(0, count, step):
        k = min(step, count - start)
        z = Tensor(rng.normal((k, config.dim_z)))
        out.append(mdl.generator_forward_batch(z, state.gen, rng).data)
    return np.concatenate(out, axis=0)


def monitor_fid(state: TrainState, real_features: met.FeatureSet,
                config: TrainConfig, sample_fn=None) -> float:
    """FID of the current generator against precomputed real features.

    Sampling uses a stream derived from (seed, iteration) so monitoring
    never perturbs the training RNG.
    """
    rng = Rng(derive_seed(config.seed, "fid-monitor", state.iteration))
    n = config.fid_monitor_samples
    if sample_fn is not None:
        images = sample_fn(n, rng)
    else:
        images = sample_images(state, config, n, rng)
    feats = met.extract_features(images, real_features.extractor_id)
    value = met.fid(met.gaussian_stats(real_features), met.gaussian_stats(feats))
    state.fid_history.append((state.iteration, _f32(value)))
    return value


def stop_rule(fid_history, patience: int, min_delta: float) -> bool:
    """True when the best FID has not improved by >= min_delta over the last
    ``patience`` monitor points."""
    if patience < 1:
        raise ConfigError("patience must be >= 1")
    values = [v for _, v in fid_history] if fid_history and isinstance(
        fid_history[0], tuple) else list(fid_history)
    if len(values) <= patience:
        return False
    best_before = min(values[:-patience])
    best_recent = min(values[-patience:])
    return (best_before - best_recent) < min_delta


def train_loop(state: TrainState, config: TrainConfig, batcher,
               checkpoint_dir=None, real_features=None,
               use_stop_rule: bool = False, progress=None) -> TrainState:
    """Run train_step until total_iterations or the FID stop rule fires.

    Writes ``ckpt-NNNNNN.bin`` into ``checkpoint_dir`` every
    ``checkpoint_interval`` iterations; a failed write is logged and training
    continues.
    """
    if real_features is not None and not state.fid_history:
        monitor_fid(state, real_features, config)
    while state.iteration < config.total_iterations:
        batch = batcher(state.iteration)
        train_step(state, batch, config)
        it = state.iteration
        if checkpoint_dir is not None and it % config.checkpoint_interval == 0:
            try:
                save_checkpoint(state, config,
                                os.path.join(str(checkpoint_dir), f"ckpt-{it:06d}.bin"))
            except CheckpointWriteError as exc:
                logger.warning("checkpoint skipped: %s", exc)
        if real_features is not None and it % config.fid_monitor_interval == 0:
            fid_value = monitor_fid(state, real_features, config)
            if progress:
                progress(it, fid_value)
            if use_stop_rule and stop_rule(state.fid_history, config.stop_patience,
                                           config.stop_min_delta):
                logger.info("FID improvement below threshold; stopping at %d", it)
                break
    return state
