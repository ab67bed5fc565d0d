"""Training loop with decoupled-weight-decay Adam, warmup + cosine schedule,
and the binary checkpoint format.

Runs are deterministic for a fixed seed: shuffling, dropout streams, and
reduction order are all pinned.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .model import Batch, ModelConfig, loss_and_grads, param_shapes


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 3000
    batch_size: int = 5
    lr: float = 3e-4
    warmup_steps: int = 100
    decay_steps: int = 3000       # cosine horizon, measured from step 1
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    log_every: int = 50
    checkpoint_every: int = 0     # 0 disables intermediate checkpoints


def learning_rate_at(step: int, cfg: TrainConfig) -> float:
    """Schedule value at 1-based ``step``: linear warmup then cosine decay."""
    if step <= cfg.warmup_steps:
        return cfg.lr * step / cfg.warmup_steps
    span = max(1, cfg.decay_steps - cfg.warmup_steps)
    frac = min(1.0, (step - cfg.warmup_steps) / span)
    return cfg.lr * 0.5 * (1.0 + np.cos(np.pi * frac))


class AdamW:
    """Adam with decoupled weight decay; state mirrors the parameter dict."""

    def __init__(self, params: dict[str, np.ndarray], cfg: TrainConfig):
        self.cfg = cfg
        self.step_count = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]):
        self.step_count += 1
        lr = learning_rate_at(self.step_count, self.cfg)
        c = self.cfg
        bc1 = 1.0 - c.beta1 ** self.step_count
        bc2 = 1.0 - c.beta2 ** self.step_count
        for name in sorted(params):
            g = grads[name]
            self.m[name] = c.beta1 * self.m[name] + (1.0 - c.beta1) * g
            self.v[name] = c.beta2 * self.v[name] + (1.0 - c.beta2) * g * g
            mhat = self.m[name] / bc1
            vhat = self.v[name] / bc2
            params[name] -= lr * (mhat / (np.sqrt(vhat) + c.adam_eps)
                                  + c.weight_decay * params[name])
        return lr


def make_batch(examples: list[dict], pad_heads: tuple[str, ...]) -> Batch:
    """Pad per-example arrays to a common length and stack them.

    Each example dict carries coord_ids (T,3), type_ids (T,), is_molecule
    (T,), and per-head targets/masks of length T.
    """
    T = max(len(e["type_ids"]) for e in examples)
    B = len(examples)
    coord = np.zeros((B, T, 3), dtype=np.int64)
    types = np.zeros((B, T), dtype=np.int64)
    is_mol = np.zeros((B, T), dtype=bool)
    targets = {h: np.zeros((B, T), dtype=np.int64) for h in pad_heads}
    masks = {h: np.zeros((B, T), dtype=bool) for h in pad_heads}
    for b, e in enumerate(examples):
        t = len(e["type_ids"])
        coord[b, :t] = e["coord_ids"]
        types[b, :t] = e["type_ids"]
        is_mol[b, :t] = e["is_molecule"]
        for h in pad_heads:
            targets[h][b, :t] = e["targets"][h]
            masks[h][b, :t] = e["masks"][h]
    return Batch(coord, types, is_mol, targets, masks)


def train(dataset: list[dict], model_cfg: ModelConfig, train_cfg: TrainConfig,
          params: dict[str, np.ndarray], seed: int = 0,
          log_fn=None, checkpoint_fn=None) -> list[tuple[int, float, dict]]:
    """Optimize ``params`` in place over shuffled mini-batches.

    Returns the metrics log as (step, total loss, per-head losses) tuples.
    ``log_fn(step, loss)`` fires every step; ``checkpoint_fn(step, params)``
    at the configured interval. Aborts on non-finite loss.
    """
    if not dataset:
        raise ValueError("empty training dataset")
    from .model import HEAD_NAMES
    shuffle_rng = np.random.default_rng(seed)
    dropout_rng = np.random.default_rng(seed + 1)
    opt = AdamW(params, train_cfg)
    metrics = []
    order: list[int] = []
    for step in range(1, train_cfg.steps + 1):
        take = []
        while len(take) < train_cfg.batch_size:
            if not order:
                order = list(shuffle_rng.permutation(len(dataset)))
            take.append(order.pop(0))
        batch = make_batch([dataset[i] for i in take], HEAD_NAMES)
        loss, per_head, grads = loss_and_grads(params, model_cfg, batch, dropout_rng)
        if not np.isfinite(loss):
            raise RuntimeError(
                f"non-finite loss {loss} at step {step}; per-head: {per_head}")
        opt.step(params, grads)
        metrics.append((step, loss, per_head))
        if log_fn is not None:
            log_fn(step, loss)
        if (checkpoint_fn is not None and train_cfg.checkpoint_every
                and step % train_cfg.checkpoint_every == 0):
            checkpoint_fn(step, params)
    return metrics


CHECKPOINT_MAGIC = b"EDMG"
CHECKPOINT_VERSION = 1


def save_checkpoint(params: dict[str, np.ndarray], path: str):
    """Binary little-endian checkpoint: magic, version, then named f32 tensors."""
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(params)))
        for name in sorted(params):
            data = np.ascontiguousarray(params[name], dtype="<f4")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", data.ndim))
            fh.write(struct.pack(f"<{data.ndim}I", *data.shape))
            fh.write(data.tobytes())


def load_checkpoint(path: str, cfg: ModelConfig | None = None) -> dict[str, np.ndarray]:
    """Read a checkpoint; with ``cfg`` given, shapes are validated against it."""
    with open(path, "rb") as fh:
        raw = fh.read()
    view = memoryview(raw)
    offset = 0

    def take(n: int) -> memoryview:
        nonlocal offset
        if offset + n > len(raw):
            raise CheckpointError(f"truncated checkpoint at byte {offset}")
        chunk = view[offset:offset + n]
        offset += n
        return chunk

    if bytes(take(4)) != CHECKPOINT_MAGIC:
        raise CheckpointError("bad magic: not an EDMG checkpoint")
    version, count = struct.unpack("<II", take(8))
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    params: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2))
        name = bytes(take(name_len)).decode("utf-8")
        (rank,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{rank}I", take(4 * rank))
        n_values = int(np.prod(shape)) if rank else 1
        data = np.frombuffer(take(4 * n_values), dtype="<f4").reshape(shape)
        params[name] = data.astype(np.float64)
    if offset != len(raw):
        raise CheckpointError(f"{len(raw) - offset} trailing bytes after tensors")

    if cfg is not None:
        expected = param_shapes(cfg)
        missing = set(expected) - set(params)
        extra = set(params) - set(expected)
        if missing or extra:
            raise CheckpointError(
                f"tensor set mismatch: missing {sorted(missing)}, extra {sorted(extra)}")
        for name, shape in expected.items():
            if params[name].shape != shape:
                raise CheckpointError(
                    f"tensor {name}: checkpoint shape {params[name].shape}, "
                    f"config expects {shape}")
    return params
