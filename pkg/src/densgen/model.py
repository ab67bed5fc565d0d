"""Decoder-only transformer over point-cloud + molecule token sequences.

Inputs sum three coordinate embeddings (shared between the two segments) with
either a point-class embedding (cloud positions) or a token embedding
(molecule positions), plus a learned positional table. Pre-LayerNorm blocks
with strictly causal attention feed seven linear classification heads:
token, x, y, z, bond length, bond angle, dihedral.

Gradients are hand-written reverse mode for this fixed architecture; the
finite-difference tests keep them honest. Parameters live in float64.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields, asdict

import numpy as np

HEAD_NAMES = ("token", "x", "y", "z", "l", "theta", "phi")


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    n_layer: int = 2
    n_head: int = 4
    n_embd: int = 64
    n_ctx: int = 256
    token_vocab: int = 300
    coord_vocab: int = 300
    l_vocab: int = 200
    theta_vocab: int = 200
    phi_vocab: int = 200
    point_class_vocab: int = 4
    resid_pdrop: float = 0.0
    embd_pdrop: float = 0.0
    attn_pdrop: float = 0.0
    init_range: float = 0.02
    layer_norm_eps: float = 1e-5

    def __post_init__(self):
        if self.n_embd % self.n_head != 0:
            raise ModelError(f"n_embd {self.n_embd} not divisible by n_head {self.n_head}")

    @property
    def head_dim(self) -> int:
        return self.n_embd // self.n_head

    def head_sizes(self) -> dict[str, int]:
        return {"token": self.token_vocab, "x": self.coord_vocab,
                "y": self.coord_vocab, "z": self.coord_vocab,
                "l": self.l_vocab, "theta": self.theta_vocab, "phi": self.phi_vocab}

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "ModelConfig":
        data = json.loads(text)
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ModelError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)


def toy_config() -> ModelConfig:
    return ModelConfig()


def paper_config() -> ModelConfig:
    """Full-scale preset matching the published hyperparameter table."""
    return ModelConfig(n_layer=24, n_head=16, n_embd=1024, n_ctx=1024,
                       resid_pdrop=0.1, embd_pdrop=0.1, attn_pdrop=0.1)


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    d = cfg.n_embd
    shapes: dict[str, tuple[int, ...]] = {
        "emb.coord_x": (cfg.coord_vocab, d),
        "emb.coord_y": (cfg.coord_vocab, d),
        "emb.coord_z": (cfg.coord_vocab, d),
        "emb.token": (cfg.token_vocab, d),
        "emb.point_class": (cfg.point_class_vocab, d),
        "emb.pos": (cfg.n_ctx, d),
    }
    for i in range(cfg.n_layer):
        pre = f"layer{i}."
        shapes.update({
            pre + "ln1.g": (d,), pre + "ln1.b": (d,),
            pre + "attn.w_qkv": (d, 3 * d), pre + "attn.b_qkv": (3 * d,),
            pre + "attn.w_o": (d, d), pre + "attn.b_o": (d,),
            pre + "ln2.g": (d,), pre + "ln2.b": (d,),
            pre + "mlp.w1": (d, 4 * d), pre + "mlp.b1": (4 * d,),
            pre + "mlp.w2": (4 * d, d), pre + "mlp.b2": (d,),
        })
    shapes.update({"ln_f.g": (d,), "ln_f.b": (d,)})
    for name, size in cfg.head_sizes().items():
        shapes[f"head.{name}"] = (d, size)
    return shapes


def init_params(cfg: ModelConfig, seed: int = 0, scheme: str = "normal",
                zero_heads: bool = False) -> dict[str, np.ndarray]:
    """Fresh parameters. Values are float32-representable so checkpoints
    round-trip bit-exactly."""
    rng = np.random.default_rng(seed)
    params: dict[str, np.ndarray] = {}
    for name, shape in param_shapes(cfg).items():
        if name.endswith((".b", ".b_qkv", ".b_o", ".b1", ".b2")) or name.endswith("ln1.b") \
                or name.endswith("ln2.b") or name == "ln_f.b":
            params[name] = np.zeros(shape)
        elif name.endswith(".g"):
            params[name] = np.ones(shape)
        elif name.startswith("head.") and zero_heads:
            params[name] = np.zeros(shape)
        else:
            if scheme == "uniform":
                w = rng.uniform(-cfg.init_range, cfg.init_range, size=shape)
            elif scheme == "normal":
                w = rng.normal(0.0, cfg.init_range, size=shape)
            else:
                raise ModelError(f"unknown init scheme {scheme!r}")
            params[name] = w.astype(np.float32).astype(np.float64)
    return params


@dataclass
class Batch:
    """Padded arrays for a batch of cloud + molecule sequences.

    ``type_ids`` holds point-class ids on cloud positions and token ids on
    molecule positions. Targets at position t describe element t+1 (next-step
    prediction); masks are False on cloud positions, padding, non-atom
    geometric fields, and fields absent for the first atoms of a sequence.
    """

    coord_ids: np.ndarray             # (B, T, 3) int
    type_ids: np.ndarray              # (B, T) int
    is_molecule: np.ndarray           # (B, T) bool
    targets: dict[str, np.ndarray] = field(default_factory=dict)   # per head (B, T)
    masks: dict[str, np.ndarray] = field(default_factory=dict)     # per head (B, T) bool

    @property
    def shape(self) -> tuple[int, int]:
        return self.type_ids.shape


def gelu_new(x: np.ndarray) -> np.ndarray:
    c = math.sqrt(2.0 / math.pi)
    return 0.5 * x * (1.0 + np.tanh(c * (x + 0.044715 * x ** 3)))


def _gelu_new_grad(x: np.ndarray) -> np.ndarray:
    c = math.sqrt(2.0 / math.pi)
    inner = c * (x + 0.044715 * x ** 3)
    t = np.tanh(inner)
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t ** 2) * c * (1.0 + 3 * 0.044715 * x ** 2)


def _layer_norm(x: np.ndarray, g: np.ndarray, b: np.ndarray, eps: float):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv
    return g * xhat + b, (xhat, inv)


def _layer_norm_backward(dy: np.ndarray, g: np.ndarray, cache):
    xhat, inv = cache
    dg = (dy * xhat).sum(axis=tuple(range(dy.ndim - 1)))
    db = dy.sum(axis=tuple(range(dy.ndim - 1)))
    dxhat = dy * g
    m1 = dxhat.mean(axis=-1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
    dx = inv * (dxhat - m1 - xhat * m2)
    return dx, dg, db


def _dropout(x: np.ndarray, rate: float, rng: np.random.Generator | None):
    if rate <= 0.0 or rng is None:
        return x, None
    keep = rng.random(x.shape) >= rate
    scale = 1.0 / (1.0 - rate)
    return x * keep * scale, keep * scale


_NEG = -1e30  # additive mask; exp underflows to exactly 0 after shift


def forward(params: dict[str, np.ndarray], cfg: ModelConfig, batch: Batch,
            train: bool = False, dropout_rng: np.random.Generator | None = None):
    """Run the network. Returns (logits per head, cache or None).

    In evaluation mode (train=False) the pass is a pure deterministic
    function of (params, batch). The cache returned in training mode holds
    every intermediate needed by ``backward``.
    """
    nf, cache = _trunk(params, cfg, batch, train, dropout_rng)
    logits = {name: nf @ params[f"head.{name}"] for name in HEAD_NAMES}
    return logits, cache


def _trunk(params: dict[str, np.ndarray], cfg: ModelConfig, batch: Batch,
           train: bool = False, dropout_rng: np.random.Generator | None = None):
    """Embeddings + transformer blocks + final LayerNorm (no heads)."""
    B, T = batch.shape
    if T > cfg.n_ctx:
        raise ModelError(f"sequence length {T} exceeds n_ctx {cfg.n_ctx}")
    rng = dropout_rng if train else None

    cx, cy, cz = (batch.coord_ids[..., k] for k in range(3))
    is_mol = batch.is_molecule
    tok_idx = np.where(is_mol, batch.type_ids, 0)
    cls_idx = np.where(is_mol, 0, batch.type_ids)
    h = (params["emb.coord_x"][cx] + params["emb.coord_y"][cy]
         + params["emb.coord_z"][cz]
         + np.where(is_mol[..., None], params["emb.token"][tok_idx],
                    params["emb.point_class"][cls_idx])
         + params["emb.pos"][:T][None, :, :])
    h, emb_drop = _dropout(h, cfg.embd_pdrop if train else 0.0, rng)

    nh, hd = cfg.n_head, cfg.head_dim
    causal = np.tril(np.ones((T, T), dtype=bool))
    cache: dict = {"layers": [], "emb_drop": emb_drop,
                   "tok_idx": tok_idx, "cls_idx": cls_idx}

    for i in range(cfg.n_layer):
        pre = f"layer{i}."
        x0 = h
        n1, ln1c = _layer_norm(x0, params[pre + "ln1.g"], params[pre + "ln1.b"],
                               cfg.layer_norm_eps)
        qkv = n1 @ params[pre + "attn.w_qkv"] + params[pre + "attn.b_qkv"]
        q, k, v = np.split(qkv, 3, axis=-1)
        q = q.reshape(B, T, nh, hd).transpose(0, 2, 1, 3)
        k = k.reshape(B, T, nh, hd).transpose(0, 2, 1, 3)
        v = v.reshape(B, T, nh, hd).transpose(0, 2, 1, 3)
        scores = q @ k.transpose(0, 1, 3, 2) / math.sqrt(hd)
        scores = np.where(causal, scores, _NEG)
        scores -= scores.max(axis=-1, keepdims=True)
        e = np.exp(scores)
        probs = e / e.sum(axis=-1, keepdims=True)
        probs_d, attn_drop = _dropout(probs, cfg.attn_pdrop if train else 0.0, rng)
        ctx = (probs_d @ v).transpose(0, 2, 1, 3).reshape(B, T, cfg.n_embd)
        att = ctx @ params[pre + "attn.w_o"] + params[pre + "attn.b_o"]
        att, r1_drop = _dropout(att, cfg.resid_pdrop if train else 0.0, rng)
        x1 = x0 + att
        n2, ln2c = _layer_norm(x1, params[pre + "ln2.g"], params[pre + "ln2.b"],
                               cfg.layer_norm_eps)
        u = n2 @ params[pre + "mlp.w1"] + params[pre + "mlp.b1"]
        a = gelu_new(u)
        mlp = a @ params[pre + "mlp.w2"] + params[pre + "mlp.b2"]
        mlp, r2_drop = _dropout(mlp, cfg.resid_pdrop if train else 0.0, rng)
        h = x1 + mlp
        if train:
            cache["layers"].append({
                "x0": x0, "n1": n1, "ln1c": ln1c, "q": q, "k": k, "v": v,
                "probs": probs, "probs_d": probs_d, "attn_drop": attn_drop,
                "ctx": ctx, "r1_drop": r1_drop, "x1": x1, "n2": n2,
                "ln2c": ln2c, "u": u, "a": a, "r2_drop": r2_drop,
            })

    nf, lnfc = _layer_norm(h, params["ln_f.g"], params["ln_f.b"], cfg.layer_norm_eps)
    if train:
        cache.update({"nf": nf, "lnfc": lnfc, "batch": batch})
        return nf, cache
    return nf, None


def loss_from_logits(logits: dict[str, np.ndarray], batch: Batch):
    """Summed per-head mean cross-entropies, plus softmax grads for backward.

    Each head's cross-entropy is averaged over its own unmasked positions;
    the heads are then summed with unit weights.
    """
    total = 0.0
    per_head: dict[str, float] = {}
    dlogits: dict[str, np.ndarray] = {}
    any_positions = False
    for name in HEAD_NAMES:
        lg = logits[name]
        mask = batch.masks[name]
        count = int(mask.sum())
        shifted = lg - lg.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
        z = e.sum(axis=-1, keepdims=True)
        logp = shifted - np.log(z)
        sm = e / z
        tgt = batch.targets[name]
        if count == 0:
            per_head[name] = 0.0
            dlogits[name] = np.zeros_like(lg)
            continue
        any_positions = True
        picked = np.take_along_axis(logp, tgt[..., None], axis=-1)[..., 0]
        per_head[name] = float(-(picked * mask).sum() / count)
        grad = sm.copy()
        np.put_along_axis(grad, tgt[..., None],
                          np.take_along_axis(grad, tgt[..., None], axis=-1) - 1.0,
                          axis=-1)
        dlogits[name] = grad * (mask[..., None] / count)
        total += per_head[name]
    if not any_positions:
        raise ModelError("batch has no unmasked positions")
    return total, per_head, dlogits


def backward(params: dict[str, np.ndarray], cfg: ModelConfig, cache: dict,
             dlogits: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    """Analytic gradients of the loss for every parameter tensor."""
    d = cfg.n_embd
    grads = {name: np.zeros_like(p) for name, p in params.items()}
    nf = cache["nf"]
    flat_nf = nf.reshape(-1, d)
    dnf = np.zeros_like(nf)
    for name in HEAD_NAMES:
        dl = dlogits[name]
        grads[f"head.{name}"] += flat_nf.T @ dl.reshape(-1, dl.shape[-1])
        dnf += dl @ params[f"head.{name}"].T
    _trunk_backward(params, cfg, cache, dnf, grads)
    return grads


def _trunk_backward(params: dict[str, np.ndarray], cfg: ModelConfig, cache: dict,
                    dnf: np.ndarray, grads: dict[str, np.ndarray]):
    """Accumulate gradients below the heads, given d(loss)/d(final LN out)."""
    batch: Batch = cache["batch"]
    B, T = batch.shape
    nh, hd, d = cfg.n_head, cfg.head_dim, cfg.n_embd

    dh, dg, db = _layer_norm_backward(dnf, params["ln_f.g"], cache["lnfc"])
    grads["ln_f.g"] += dg
    grads["ln_f.b"] += db

    for i in reversed(range(cfg.n_layer)):
        pre = f"layer{i}."
        c = cache["layers"][i]
        dmlp = dh if c["r2_drop"] is None else dh * c["r2_drop"]
        dx1 = dh.copy()
        grads[pre + "mlp.w2"] += c["a"].reshape(-1, 4 * d).T @ dmlp.reshape(-1, d)
        grads[pre + "mlp.b2"] += dmlp.sum(axis=(0, 1))
        da = dmlp @ params[pre + "mlp.w2"].T
        du = da * _gelu_new_grad(c["u"])
        grads[pre + "mlp.w1"] += c["n2"].reshape(-1, d).T @ du.reshape(-1, 4 * d)
        grads[pre + "mlp.b1"] += du.sum(axis=(0, 1))
        dn2 = du @ params[pre + "mlp.w1"].T
        dx1_ln, dg, db = _layer_norm_backward(dn2, params[pre + "ln2.g"], c["ln2c"])
        grads[pre + "ln2.g"] += dg
        grads[pre + "ln2.b"] += db
        dx1 += dx1_ln

        datt = dx1 if c["r1_drop"] is None else dx1 * c["r1_drop"]
        dx0 = dx1.copy()
        grads[pre + "attn.w_o"] += c["ctx"].reshape(-1, d).T @ datt.reshape(-1, d)
        grads[pre + "attn.b_o"] += datt.sum(axis=(0, 1))
        dctx = (datt @ params[pre + "attn.w_o"].T).reshape(B, T, nh, hd).transpose(0, 2, 1, 3)
        dprobs_d = dctx @ c["v"].transpose(0, 1, 3, 2)
        dv = c["probs_d"].transpose(0, 1, 3, 2) @ dctx
        dprobs = dprobs_d if c["attn_drop"] is None else dprobs_d * c["attn_drop"]
        p = c["probs"]
        ds = p * (dprobs - (dprobs * p).sum(axis=-1, keepdims=True))
        ds /= math.sqrt(hd)
        dq = ds @ c["k"]
        dk = ds.transpose(0, 1, 3, 2) @ c["q"]
        dqkv = np.concatenate([
            dq.transpose(0, 2, 1, 3).reshape(B, T, d),
            dk.transpose(0, 2, 1, 3).reshape(B, T, d),
            dv.transpose(0, 2, 1, 3).reshape(B, T, d)], axis=-1)
        grads[pre + "attn.w_qkv"] += c["n1"].reshape(-1, d).T @ dqkv.reshape(-1, 3 * d)
        grads[pre + "attn.b_qkv"] += dqkv.sum(axis=(0, 1))
        dn1 = dqkv @ params[pre + "attn.w_qkv"].T
        dx0_ln, dg, db = _layer_norm_backward(dn1, params[pre + "ln1.g"], c["ln1c"])
        grads[pre + "ln1.g"] += dg
        grads[pre + "ln1.b"] += db
        dh = dx0 + dx0_ln

    if cache["emb_drop"] is not None:
        dh = dh * cache["emb_drop"]
    cx, cy, cz = (batch.coord_ids[..., k] for k in range(3))
    np.add.at(grads["emb.coord_x"], cx.ravel(), dh.reshape(-1, d))
    np.add.at(grads["emb.coord_y"], cy.ravel(), dh.reshape(-1, d))
    np.add.at(grads["emb.coord_z"], cz.ravel(), dh.reshape(-1, d))
    is_mol = batch.is_molecule
    mol_rows = dh * is_mol[..., None]
    cloud_rows = dh * (~is_mol)[..., None]
    np.add.at(grads["emb.token"], cache["tok_idx"].ravel(), mol_rows.reshape(-1, d))
    np.add.at(grads["emb.point_class"], cache["cls_idx"].ravel(), cloud_rows.reshape(-1, d))
    grads["emb.pos"][:T] += dh.sum(axis=0)


def loss_and_grads(params: dict[str, np.ndarray], cfg: ModelConfig, batch: Batch,
                   dropout_rng: np.random.Generator | None = None):
    """One training pass. Head projections and cross-entropies run only on
    rows some head actually supervises, which is what dominates the cost."""
    nf, cache = _trunk(params, cfg, batch, train=True, dropout_rng=dropout_rng)
    union = np.zeros(batch.shape, dtype=bool)
    for name in HEAD_NAMES:
        union |= batch.masks[name]
    if not union.any():
        raise ModelError("batch has no unmasked positions")
    rows = nf[union]                       # (K, d)
    total = 0.0
    per_head: dict[str, float] = {}
    grads = {name: np.zeros_like(p) for name, p in params.items()}
    drows = np.zeros_like(rows)
    for name in HEAD_NAMES:
        w = params[f"head.{name}"]
        logits = rows @ w
        mask = batch.masks[name][union]
        count = int(mask.sum())
        tgt = batch.targets[name][union]
        shifted = logits - logits.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
        z = e.sum(axis=-1, keepdims=True)
        if count == 0:
            per_head[name] = 0.0
            continue
        logp = shifted - np.log(z)
        picked = np.take_along_axis(logp, tgt[:, None], axis=-1)[:, 0]
        per_head[name] = float(-(picked * mask).sum() / count)
        total += per_head[name]
        dlog = e / z
        np.put_along_axis(dlog, tgt[:, None],
                          np.take_along_axis(dlog, tgt[:, None], axis=-1) - 1.0,
                          axis=-1)
        dlog *= mask[:, None] / count
        grads[f"head.{name}"] += rows.T @ dlog
        drows += dlog @ w.T
    dnf = np.zeros_like(nf)
    dnf[union] = drows
    _trunk_backward(params, cfg, cache, dnf, grads)
    return total, per_head, grads


def evaluate_loss(params: dict[str, np.ndarray], cfg: ModelConfig, batch: Batch):
    logits, _ = forward(params, cfg, batch, train=False)
    total, per_head, _ = loss_from_logits(logits, batch)
    return total, per_head


def last_position_logits(params: dict[str, np.ndarray], cfg: ModelConfig,
                         batch: Batch) -> dict[str, np.ndarray]:
    """Head logits at the final sequence position only (generation step)."""
    nf, _ = _trunk(params, cfg, batch, train=False)
    last = nf[:, -1, :]
    return {name: last @ params[f"head.{name}"] for name in HEAD_NAMES}
