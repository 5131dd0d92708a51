"""Noise-prediction MLP eps(x_t, t, c), its hand-written backward pass, Adam and training.

Architecture: ``[x_t | time embedding | class embedding] -> H -> H -> d`` with SiLU
activations and (inverted) dropout after each hidden layer. The class embedding
table has G + 1 rows; row G is the unconditional token.
"""
from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.special import expit

from . import diffusion
from .io import atomic_write_bytes

log = logging.getLogger(__name__)

PARAM_NAMES = ("class_emb", "W1", "b1", "W2", "b2", "W3", "b3")
ADAM_BETA1, ADAM_BETA2, ADAM_EPS = 0.9, 0.999, 1e-8


class TrainingDivergedError(RuntimeError):
    def __init__(self, epoch: int, last_finite_epoch: int):
        super().__init__(f"non-finite loss at epoch {epoch}; last finite epoch {last_finite_epoch}")
        self.epoch = epoch
        self.last_finite_epoch = last_finite_epoch


@dataclass
class DenoiserParams:
    class_emb: np.ndarray  # (G + 1, e)
    W1: np.ndarray  # (d + 2e, H)
    b1: np.ndarray
    W2: np.ndarray  # (H, H)
    b2: np.ndarray
    W3: np.ndarray  # (H, d)
    b3: np.ndarray
    T_prime: int
    p_uncond: float = 0.1

    def __post_init__(self):
        e, H = self.e, self.hidden
        if e % 2:
            raise ValueError("embedding dim must be even")
        expect = {
            "W1": (self.d + 2 * e, H),
            "b1": (H,),
            "W2": (H, H),
            "b2": (H,),
            "W3": (H, self.d),
            "b3": (self.d,),
        }
        for name, shape in expect.items():
            if getattr(self, name).shape != shape:
                raise ValueError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")

    @property
    def d(self) -> int:
        return self.b3.shape[0]

    @property
    def G(self) -> int:
        return self.class_emb.shape[0] - 1

    @property
    def e(self) -> int:
        return self.class_emb.shape[1]

    @property
    def hidden(self) -> int:
        return self.b1.shape[0]

    def tensors(self) -> dict[str, np.ndarray]:
        return {k: getattr(self, k) for k in PARAM_NAMES}

    def copy(self) -> "DenoiserParams":
        return replace(self, **{k: v.copy() for k, v in self.tensors().items()})

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.tensors().values())


def init_params(d: int, G: int, e: int = 32, hidden: int = 128, seed: int = 0, T_prime: int = 2,
                p_uncond: float = 0.1) -> DenoiserParams:
    if min(d, G, e, hidden) < 1:
        raise ValueError("all dimensions must be >= 1")
    rng = np.random.default_rng(seed)

    def uniform(fan_in, shape):
        lim = 1.0 / math.sqrt(fan_in)
        return rng.uniform(-lim, lim, size=shape)

    return DenoiserParams(
        class_emb=uniform(1, (G + 1, e)),
        W1=uniform(d + 2 * e, (d + 2 * e, hidden)),
        b1=np.zeros(hidden),
        W2=uniform(hidden, (hidden, hidden)),
        b2=np.zeros(hidden),
        W3=uniform(hidden, (hidden, d)),
        b3=np.zeros(d),
        T_prime=T_prime,
        p_uncond=p_uncond,
    )


def time_embedding(t: np.ndarray, T_prime: int, e: int) -> np.ndarray:
    """Sinusoidal features of the normalized step t / T'."""
    half = e // 2
    freqs = np.geomspace(1.0, 1000.0, half) if half > 1 else np.ones(1)
    ang = (np.asarray(t, dtype=np.float64) / T_prime)[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


def _silu(a):
    s = expit(a)
    return a * s, s


def dropout_masks(rng: np.random.Generator, batch: int, hidden: int, rate: float):
    """Inverted-dropout masks for the two hidden layers, or None when rate is 0."""
    if rate <= 0:
        return None
    keep = 1.0 - rate
    return tuple((rng.random((batch, hidden)) < keep) / keep for _ in range(2))


def _forward(params: DenoiserParams, x, t, c, dropout_mask=None):
    x = np.asarray(x, dtype=np.float64)
    t = np.asarray(t, dtype=np.int64)
    c = np.asarray(c, dtype=np.int64)
    n = x.shape[0]
    if x.ndim != 2 or x.shape[1] != params.d or t.shape != (n,) or c.shape != (n,):
        raise ValueError(f"shape mismatch: x {x.shape}, t {t.shape}, c {c.shape}, d={params.d}")
    if np.any(t < 1) or np.any(t > params.T_prime):
        raise ValueError(f"step out of range [1, {params.T_prime}]")
    if np.any(c < 0) or np.any(c > params.G):
        raise ValueError(f"class id out of range [0, {params.G}]")
    h0 = np.concatenate([x, time_embedding(t, params.T_prime, params.e), params.class_emb[c]], axis=1)
    a1 = h0 @ params.W1 + params.b1
    s1_act, sig1 = _silu(a1)
    h1 = s1_act if dropout_mask is None else s1_act * dropout_mask[0]
    a2 = h1 @ params.W2 + params.b2
    s2_act, sig2 = _silu(a2)
    h2 = s2_act if dropout_mask is None else s2_act * dropout_mask[1]
    out = h2 @ params.W3 + params.b3
    return out, (h0, a1, sig1, h1, a2, sig2, h2, c)


def forward(params: DenoiserParams, x_t, t, c, dropout_mask=None) -> np.ndarray:
    return _forward(params, x_t, t, c, dropout_mask)[0]


def loss_simple(params, x0, t, eps, c, sched, dropout_mask=None) -> float:
    """Batch mean of ||eps - eps_theta(sqrt(abar) x0 + sqrt(1 - abar) eps, t, c)||^2."""
    xt = diffusion.forward_sample(x0, t, eps, sched)
    pred = forward(params, xt, t, c, dropout_mask)
    return float(np.mean(np.sum((pred - eps) ** 2, axis=1)))


def gradient(params, x0, t, eps, c, sched, dropout_mask=None) -> tuple[float, dict[str, np.ndarray]]:
    """Loss and its gradient w.r.t. every tensor in PARAM_NAMES."""
    xt = diffusion.forward_sample(x0, t, eps, sched)
    pred, (h0, a1, sig1, h1, a2, sig2, h2, c) = _forward(params, xt, t, c, dropout_mask)
    n = pred.shape[0]
    diff = pred - eps
    loss = float(np.mean(np.sum(diff**2, axis=1)))

    g_out = (2.0 / n) * diff
    gW3 = h2.T @ g_out
    gb3 = g_out.sum(axis=0)
    g_h2 = g_out @ params.W3.T
    if dropout_mask is not None:
        g_h2 = g_h2 * dropout_mask[1]
    g_a2 = g_h2 * (sig2 * (1.0 + a2 * (1.0 - sig2)))
    gW2 = h1.T @ g_a2
    gb2 = g_a2.sum(axis=0)
    g_h1 = g_a2 @ params.W2.T
    if dropout_mask is not None:
        g_h1 = g_h1 * dropout_mask[0]
    g_a1 = g_h1 * (sig1 * (1.0 + a1 * (1.0 - sig1)))
    gW1 = h0.T @ g_a1
    gb1 = g_a1.sum(axis=0)
    g_h0 = g_a1 @ params.W1.T
    g_emb = np.zeros_like(params.class_emb)
    np.add.at(g_emb, c, g_h0[:, params.d + params.e :])
    return loss, {"class_emb": g_emb, "W1": gW1, "b1": gb1, "W2": gW2, "b2": gb2, "W3": gW3, "b3": gb3}


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, params: DenoiserParams) -> "AdamState":
        return cls(
            m={k: np.zeros_like(v) for k, v in params.tensors().items()},
            v={k: np.zeros_like(v) for k, v in params.tensors().items()},
        )


def adam_step(params: DenoiserParams, grads: dict, state: AdamState, lr: float):
    """One bias-corrected Adam update; returns new (params, state) and leaves the inputs intact."""
    step = state.step + 1
    c1 = 1.0 - ADAM_BETA1**step
    c2 = 1.0 - ADAM_BETA2**step
    new_t, new_m, new_v = {}, {}, {}
    for k, p in params.tensors().items():
        g = grads[k]
        m = ADAM_BETA1 * state.m[k] + (1.0 - ADAM_BETA1) * g
        v = ADAM_BETA2 * state.v[k] + (1.0 - ADAM_BETA2) * g * g
        new_t[k] = p - lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)
        new_m[k], new_v[k] = m, v
    return replace(params, **new_t), AdamState(new_m, new_v, step)


# ---------------------------------------------------------------------------
# Training


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    dropout_rate: float = 0.0
    epochs: int = 2000
    batch_size: int = 256
    p_uncond: float = 0.1
    checkpoint_every: int = 100
    validation_fraction: float = 0.1
    seed: int = 0
    embed_dim: int = 32
    hidden: int = 128

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if self.epochs < 1 or self.batch_size < 1 or self.checkpoint_every < 1:
            raise ValueError("epochs, batch_size and checkpoint_every must be >= 1")
        if not 0.0 <= self.p_uncond < 1.0:
            raise ValueError("p_uncond must lie in [0, 1)")
        if not 0.0 < self.validation_fraction <= 0.5:
            raise ValueError("validation_fraction must lie in (0, 0.5]")
        if self.embed_dim < 2 or self.embed_dim % 2 or self.hidden < 1:
            raise ValueError("embed_dim must be even and >= 2; hidden >= 1")

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


@dataclass
class Checkpoint:
    params: DenoiserParams
    epoch: int
    f1: float | None = None

    def __post_init__(self):
        if self.f1 is not None and not 0.0 <= self.f1 <= 1.0:
            raise ValueError("checkpoint F1 must lie in [0, 1]")


@dataclass
class TrainResult:
    best: Checkpoint
    final: DenoiserParams
    losses: list[float] = field(default_factory=list)
    probes: list[tuple[int, float]] = field(default_factory=list)


Probe = Callable[[DenoiserParams, int], float]


def train(
    features: np.ndarray,
    group_ids: np.ndarray,
    group_count: int,
    sched,
    cfg: TrainConfig,
    probe: Probe | None = None,
) -> TrainResult:
    """Minimize L_simple with Adam.

    With a probe, it is called every ``checkpoint_every`` epochs (and after the last
    epoch) and the highest-scoring snapshot is kept, first maximum winning ties.
    Without one, the final parameters are returned as the best checkpoint.
    """
    X = np.asarray(features, dtype=np.float64)
    gids = np.asarray(group_ids, dtype=np.int64)
    n, d = X.shape
    if gids.shape != (n,) or np.any(gids < 0) or np.any(gids >= group_count):
        raise ValueError("group ids must be one per row in [0, G)")
    rng = np.random.default_rng(cfg.seed)
    params = init_params(d, group_count, cfg.embed_dim, cfg.hidden, seed=int(rng.integers(2**63)),
                         T_prime=sched.T_prime, p_uncond=cfg.p_uncond)
    state = AdamState.zeros_like(params)
    T = sched.T_prime
    bs = min(cfg.batch_size, n)

    losses: list[float] = []
    probes: list[tuple[int, float]] = []
    best: Checkpoint | None = None
    for epoch in range(1, cfg.epochs + 1):
        perm = rng.permutation(n)
        total = 0.0
        for start in range(0, n, bs):
            idx = perm[start : start + bs]
            b = idx.size
            t = rng.integers(1, T + 1, size=b)
            eps = rng.standard_normal((b, d))
            c = gids[idx].copy()
            if cfg.p_uncond > 0:
                c[rng.random(b) < cfg.p_uncond] = group_count
            mask = dropout_masks(rng, b, cfg.hidden, cfg.dropout_rate)
            loss, grads = gradient(params, X[idx], t, eps, c, sched, mask)
            if not math.isfinite(loss):
                raise TrainingDivergedError(epoch, epoch - 1)
            params, state = adam_step(params, grads, state, cfg.learning_rate)
            total += loss * b
        losses.append(total / n)
        if probe is not None and (epoch % cfg.checkpoint_every == 0 or epoch == cfg.epochs):
            score = float(probe(params, epoch))
            probes.append((epoch, score))
            log.info("epoch %d loss %.4f probe F1 %.4f", epoch, losses[-1], score)
            if best is None or score > best.f1:
                best = Checkpoint(params.copy(), epoch, score)
    if best is None:
        best = Checkpoint(params.copy(), cfg.epochs, None)
    return TrainResult(best=best, final=params, losses=losses, probes=probes)


# ---------------------------------------------------------------------------
# Checkpoint files

MAGIC = b"MCRAGECK"
FORMAT_VERSION = 1
# magic, version, d, G, e, hidden, T', epoch, p_uncond, f1 (NaN when unset)
_HEADER = struct.Struct("<8sIIIIIIIdd")


def save_checkpoint(path, ckpt: Checkpoint, sched) -> None:
    """Header followed by little-endian float64 tensors: PARAM_NAMES then beta."""
    p = ckpt.params
    if sched.T_prime != p.T_prime:
        raise ValueError("schedule length does not match the model")
    f1 = float("nan") if ckpt.f1 is None else ckpt.f1
    blob = [_HEADER.pack(MAGIC, FORMAT_VERSION, p.d, p.G, p.e, p.hidden, p.T_prime, ckpt.epoch, p.p_uncond, f1)]
    for k in PARAM_NAMES:
        blob.append(np.ascontiguousarray(getattr(p, k), dtype="<f8").tobytes())
    blob.append(np.ascontiguousarray(sched.beta, dtype="<f8").tobytes())
    atomic_write_bytes(path, b"".join(blob))


def load_checkpoint(path):
    """Returns (Checkpoint, NoiseSchedule)."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated checkpoint header")
    magic, version, d, G, e, H, T, epoch, p_uncond, f1 = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    shapes = {
        "class_emb": (G + 1, e),
        "W1": (d + 2 * e, H),
        "b1": (H,),
        "W2": (H, H),
        "b2": (H,),
        "W3": (H, d),
        "b3": (d,),
    }
    off = _HEADER.size
    tensors = {}
    for k in PARAM_NAMES:
        size = math.prod(shapes[k])
        tensors[k] = np.frombuffer(raw, dtype="<f8", count=size, offset=off).astype(np.float64).reshape(shapes[k])
        off += 8 * size
    beta = np.frombuffer(raw, dtype="<f8", count=T, offset=off).astype(np.float64)
    off += 8 * T
    if off != len(raw):
        raise ValueError(f"{path}: checkpoint size mismatch")
    params = DenoiserParams(**tensors, T_prime=T, p_uncond=p_uncond)
    ckpt = Checkpoint(params, epoch, None if math.isnan(f1) else f1)
    return ckpt, diffusion.NoiseSchedule(beta)
