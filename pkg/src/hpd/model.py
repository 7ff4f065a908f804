"""Tiny deterministic decoder-only transformer.

The model is deliberately desk-scale: float32 numpy end to end, seeded weight
init that is bit-reproducible for a given (config, seed), rotary position
embeddings driven by explicit per-token position ids, and an append-only
KV cache whose entries carry logical position ids and live flags.

Attention is computed by gathering, per query, exactly the keys its mask
row allows before any reduction happens. Masked or padded entries are
therefore absent from the softmax normalizer and the value sum rather
than downweighted, and the surviving summation runs in key-index order
over identical operands no matter how the surrounding batch is padded or
chunked. That is what makes the cache/no-cache and batched/unbatched
equivalence checks exact instead of tolerance-fitting.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import CapacityError, ConfigError, ContractError
from .tokens import MIN_VOCAB, PAD

_F32 = np.float32


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int = 260
    num_layers: int = 4
    hidden_dim: int = 64
    num_heads: int = 4
    head_dim: int = 16
    mlp_dim: int = 128
    rope_base: float = 10000.0
    max_position: int = 8192
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("vocab_size", "num_layers", "hidden_dim", "num_heads",
                     "head_dim", "mlp_dim", "max_position"):
            if int(getattr(self, name)) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.hidden_dim != self.num_heads * self.head_dim:
            raise ConfigError(
                f"hidden_dim {self.hidden_dim} != num_heads*head_dim "
                f"{self.num_heads}*{self.head_dim}")
        if self.head_dim % 2 != 0:
            raise ConfigError("head_dim must be even for rotary pairing")
        if self.vocab_size < MIN_VOCAB:
            raise ConfigError(f"vocab_size must be >= {MIN_VOCAB} "
                              "(256 byte tokens plus control tokens)")
        if self.rope_base <= 1.0:
            raise ConfigError("rope_base must exceed 1.0")


@dataclass
class LayerWeights:
    ln1: np.ndarray
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    ln2: np.ndarray
    w1: np.ndarray
    w2: np.ndarray


class Model:
    """Weights plus config; all arrays float32, derived from config.seed."""

    def __init__(self, config: ModelConfig):
        self.config = config
        rng = np.random.default_rng(config.seed)
        d, v = config.hidden_dim, config.vocab_size
        # residual-branch outputs shrink with depth to keep activations tame
        out_std = 0.02 / math.sqrt(2.0 * config.num_layers)

        def draw(shape: tuple[int, ...], std: float) -> np.ndarray:
            return rng.standard_normal(shape, dtype=_F32) * _F32(std)

        self.embed = draw((v, d), 0.02)
        self.layers: list[LayerWeights] = []
        for _ in range(config.num_layers):
            self.layers.append(LayerWeights(
                ln1=np.ones(d, dtype=_F32),
                wq=draw((d, d), 0.02),
                wk=draw((d, d), 0.02),
                wv=draw((d, d), 0.02),
                wo=draw((d, d), out_std),
                ln2=np.ones(d, dtype=_F32),
                w1=draw((d, config.mlp_dim), 0.02),
                w2=draw((config.mlp_dim, d), out_std),
            ))
        self.ln_final = np.ones(d, dtype=_F32)
        self.lm_head = draw((d, v), 0.02)

    def weight_digest(self) -> str:
        """sha256 over all weights in a fixed order; bit-level identity probe."""
        h = hashlib.sha256()
        h.update(self.embed.tobytes())
        for lw in self.layers:
            for arr in (lw.ln1, lw.wq, lw.wk, lw.wv, lw.wo, lw.ln2, lw.w1, lw.w2):
                h.update(arr.tobytes())
        h.update(self.ln_final.tobytes())
        h.update(self.lm_head.tobytes())
        return h.hexdigest()


def init_model(config: ModelConfig) -> Model:
    return Model(config)


class KvCache:
    """Append-only per-layer key/value store with logical positions.

    Entries are appended in memory order, one per forwarded token, and are
    never reordered or deleted. Position ids need not be monotone in memory
    order; `live` is False exactly for PAD entries, which stay dead forever.
    """

    def __init__(self, config: ModelConfig, batch_size: int = 1):
        if batch_size <= 0:
            raise ContractError("batch_size must be positive")
        self.config = config
        self.batch_size = batch_size
        self.count = 0
        self._capacity = 0
        shape = (batch_size, 0, config.num_heads, config.head_dim)
        self._keys = [np.empty(shape, dtype=_F32) for _ in range(config.num_layers)]
        self._values = [np.empty(shape, dtype=_F32) for _ in range(config.num_layers)]
        self.positions = np.empty((batch_size, 0), dtype=np.int64)
        self.live = np.empty((batch_size, 0), dtype=bool)

    def _grow(self, needed: int) -> None:
        if needed <= self._capacity:
            return
        cap = max(64, needed, 2 * self._capacity)
        b, h, hd = self.batch_size, self.config.num_heads, self.config.head_dim

        def regrow(old: np.ndarray, width_shape: tuple[int, ...]) -> np.ndarray:
            fresh = np.zeros(width_shape, dtype=old.dtype)
            fresh[:, : old.shape[1]] = old
            return fresh

        self._keys = [regrow(a, (b, cap, h, hd)) for a in self._keys]
        self._values = [regrow(a, (b, cap, h, hd)) for a in self._values]
        self.positions = regrow(self.positions, (b, cap))
        self.live = regrow(self.live, (b, cap))
        self._capacity = cap

    def reserve(self, positions: np.ndarray, live: np.ndarray) -> int:
        """Claim slots for one forwarded block; returns the block's start index."""
        b, n = positions.shape
        if b != self.batch_size:
            raise ContractError("cache batch size mismatch")
        start = self.count
        self._grow(start + n)
        self.positions[:, start:start + n] = positions
        self.live[:, start:start + n] = live
        self.count = start + n
        return start

    def write(self, layer: int, start: int, k: np.ndarray, v: np.ndarray) -> None:
        n = k.shape[1]
        self._keys[layer][:, start:start + n] = k
        self._values[layer][:, start:start + n] = v

    def keys(self, layer: int) -> np.ndarray:
        return self._keys[layer][:, : self.count]

    def values(self, layer: int) -> np.ndarray:
        return self._values[layer][:, : self.count]

    def positions_view(self) -> np.ndarray:
        return self.positions[:, : self.count]

    def live_view(self) -> np.ndarray:
        return self.live[:, : self.count]


def _rmsnorm(x: np.ndarray, weight: np.ndarray) -> np.ndarray:
    ms = np.mean(np.square(x), axis=-1, keepdims=True)
    return (x / np.sqrt(ms + _F32(1e-5))) * weight


def _silu(x: np.ndarray) -> np.ndarray:
    return x * (_F32(1.0) / (_F32(1.0) + np.exp(-x)))


def _rope_tables(positions: np.ndarray, head_dim: int, base: float
                 ) -> tuple[np.ndarray, np.ndarray]:
    # angles in float64, tables cast to float32 before application
    half = head_dim // 2
    inv_freq = base ** (-(np.arange(half, dtype=np.float64) * 2.0) / head_dim)
    ang = positions[..., None].astype(np.float64) * inv_freq
    return np.cos(ang).astype(_F32), np.sin(ang).astype(_F32)


def _apply_rope(x: np.ndarray, cos: np.ndarray, sin: np.ndarray) -> np.ndarray:
    half = x.shape[-1] // 2
    x1, x2 = x[..., :half], x[..., half:]
    c, s = cos[:, :, None, :], sin[:, :, None, :]
    return np.concatenate([x1 * c - x2 * s, x1 * s + x2 * c], axis=-1)


def forward(model: Model, new_tokens, position_ids, mask, cache: KvCache
            ) -> np.ndarray:
    """Run one forwarded block through the model, appending to `cache`.

    new_tokens/position_ids: (n,) for a single row or (b, n) batched.
    mask: boolean, (n, nk) or (b, n, nk) with nk == cache.count + n; keys
    are the cache entries in memory order followed by this block's tokens.
    Returns logits of shape (n, vocab) or (b, n, vocab) to match the input.
    """
    cfg = model.config
    tokens = np.asarray(new_tokens, dtype=np.int64)
    positions = np.asarray(position_ids, dtype=np.int64)
    single = tokens.ndim == 1
    if single:
        tokens = tokens[None, :]
        positions = positions[None, :]
    if tokens.ndim != 2 or tokens.shape != positions.shape:
        raise ContractError("tokens and position_ids must share shape (b, n)")
    b, n = tokens.shape
    if n == 0:
        raise ContractError("forward requires at least one token")
    if b != cache.batch_size:
        raise ContractError(f"batch size {b} != cache batch size {cache.batch_size}")
    if cache.config is not cfg and cache.config != cfg:
        raise ContractError("cache was built for a different model config")
    if tokens.min() < 0 or tokens.max() >= cfg.vocab_size:
        raise ContractError("token id outside vocabulary")
    if positions.min() < 0:
        raise ContractError("negative position id")
    if positions.max() >= cfg.max_position:
        raise CapacityError(
            f"position id {int(positions.max())} >= max_position {cfg.max_position}")

    allowed = np.asarray(mask)
    if allowed.dtype != bool:
        raise ContractError("mask must be boolean")
    if allowed.ndim == 2:
        allowed = allowed[None, :, :] if b == 1 else allowed
    expect = (b, n, cache.count + n)
    if allowed.shape != expect:
        raise ContractError(f"mask shape {allowed.shape} != expected {expect}")
    rows_ok = allowed.any(axis=2)
    if not rows_ok.all():
        r, i = np.argwhere(~rows_ok)[0]
        raise ContractError(f"query (row {r}, token {i}) attends to no key")

    start = cache.reserve(positions, live=(tokens != PAD))

    h_dim, heads, hd = cfg.hidden_dim, cfg.num_heads, cfg.head_dim
    scale = _F32(1.0 / math.sqrt(hd))
    cos, sin = _rope_tables(positions, hd, cfg.rope_base)
    x = model.embed[tokens]

    for layer_idx, lw in enumerate(model.layers):
        h = _rmsnorm(x, lw.ln1)
        q = np.einsum("bnd,de->bne", h, lw.wq).reshape(b, n, heads, hd)
        k = np.einsum("bnd,de->bne", h, lw.wk).reshape(b, n, heads, hd)
        v = np.einsum("bnd,de->bne", h, lw.wv).reshape(b, n, heads, hd)
        q = _apply_rope(q, cos, sin)
        k = _apply_rope(k, cos, sin)
        cache.write(layer_idx, start, k, v)
        all_k = cache.keys(layer_idx)
        all_v = cache.values(layer_idx)

        attn = np.empty((b, n, h_dim), dtype=_F32)
        for r in range(b):
            row_k, row_v = all_k[r], all_v[r]
            for i in range(n):
                idx = np.nonzero(allowed[r, i])[0]
                gk = row_k[idx]
                gv = row_v[idx]
                scores = np.einsum("hd,mhd->hm", q[r, i], gk) * scale
                peak = scores.max(axis=1, keepdims=True)
                w = np.exp(scores - peak)
                w /= w.sum(axis=1, keepdims=True)
                attn[r, i] = np.einsum("hm,mhd->hd", w, gv).reshape(h_dim)
        x = x + np.einsum("bnd,de->bne", attn, lw.wo)

        h2 = _rmsnorm(x, lw.ln2)
        inner = _silu(np.einsum("bnd,dm->bnm", h2, lw.w1))
        x = x + np.einsum("bnm,md->bnd", inner, lw.w2)

    h_final = _rmsnorm(x, model.ln_final)
    logits = np.einsum("bnd,dv->bnv", h_final, model.lm_head)
    return logits[0] if single else logits
