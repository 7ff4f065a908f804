from __future__ import annotations

import numpy as np
import pytest

from hpd.errors import CapacityError, ConfigError, ContractError
from hpd.masks import inference_mask
from hpd.model import (KvCache, ModelConfig, _rope_tables, forward,
                       init_model)
from hpd.tokens import PAD


def _causal(n: int) -> np.ndarray:
    return np.tril(np.ones((n, n), dtype=bool))


def test_config_rejects_inconsistent_dimensions():
    with pytest.raises(ConfigError):
        ModelConfig(hidden_dim=65)
    with pytest.raises(ConfigError):
        ModelConfig(head_dim=15, hidden_dim=60)
    with pytest.raises(ConfigError):
        ModelConfig(vocab_size=259)
    with pytest.raises(ConfigError):
        ModelConfig(num_layers=0)
    with pytest.raises(ConfigError):
        ModelConfig(rope_base=1.0)


def test_same_seed_means_identical_weights():
    a = init_model(ModelConfig(seed=3))
    b = init_model(ModelConfig(seed=3))
    c = init_model(ModelConfig(seed=4))
    assert a.weight_digest() == b.weight_digest()
    assert a.weight_digest() != c.weight_digest()


def test_weights_are_float32():
    model = init_model(ModelConfig())
    assert model.embed.dtype == np.float32
    assert model.lm_head.dtype == np.float32
    for lw in model.layers:
        assert lw.wq.dtype == np.float32
        assert lw.w2.dtype == np.float32


def test_rope_tables_are_unit_rotations():
    pos = np.arange(50, dtype=np.int64)[None, :]
    cos, sin = _rope_tables(pos, 16, 10000.0)
    norm = cos.astype(np.float64) ** 2 + sin.astype(np.float64) ** 2
    assert np.allclose(norm, 1.0, atol=1e-6)


def test_forward_shapes_single_and_batched(tiny_model):
    toks = np.array([257, 72, 105], dtype=np.int64)
    pos = np.arange(3, dtype=np.int64)
    out1 = forward(tiny_model, toks, pos, _causal(3), KvCache(tiny_model.config))
    assert out1.shape == (3, tiny_model.config.vocab_size)
    out2 = forward(tiny_model, toks[None, :], pos[None, :], _causal(3),
                   KvCache(tiny_model.config, batch_size=1))
    assert out2.shape == (1, 3, tiny_model.config.vocab_size)
    assert np.array_equal(out1, out2[0])


def test_cache_accumulates_blocks(tiny_model):
    cache = KvCache(tiny_model.config)
    toks = np.array([257, 65, 66, 67], dtype=np.int64)
    pos = np.arange(4, dtype=np.int64)
    forward(tiny_model, toks, pos, _causal(4), cache)
    assert cache.count == 4
    mask = inference_mask(np.array([4]), np.arange(5), np.ones(5, dtype=bool))
    forward(tiny_model, np.array([68]), np.array([4]), mask, cache)
    assert cache.count == 5
    assert cache.positions_view().tolist() == [[0, 1, 2, 3, 4]]
    assert cache.live_view().all()


def test_incremental_matches_one_shot(tiny_model):
    """Chunked prefill is bitwise identical to the single block forward."""
    rng = np.random.default_rng(11)
    for _ in range(5):
        n = int(rng.integers(6, 24))
        cut = int(rng.integers(1, n))
        toks = rng.integers(0, 256, size=n)
        pos = np.arange(n, dtype=np.int64)
        whole = forward(tiny_model, toks, pos, _causal(n),
                        KvCache(tiny_model.config))
        cache = KvCache(tiny_model.config)
        forward(tiny_model, toks[:cut], pos[:cut], _causal(cut), cache)
        tail_mask = inference_mask(pos[cut:], pos, np.ones(n, dtype=bool))
        tail = forward(tiny_model, toks[cut:], pos[cut:], tail_mask, cache)
        assert np.array_equal(tail, whole[cut:])


def test_pad_keys_are_dead_in_the_cache(tiny_model):
    cache = KvCache(tiny_model.config)
    toks = np.array([257, 70, PAD, 71], dtype=np.int64)
    pos = np.array([0, 1, 0, 2], dtype=np.int64)
    mask = inference_mask(pos, pos, toks != PAD)
    forward(tiny_model, toks, pos, mask, cache)
    assert cache.live_view().tolist() == [[True, True, False, True]]


def test_forward_validates_inputs(tiny_model):
    cache = KvCache(tiny_model.config)
    pos = np.arange(2, dtype=np.int64)
    ok = _causal(2)
    with pytest.raises(ContractError):
        forward(tiny_model, np.array([0, 999]), pos, ok, cache)
    with pytest.raises(ContractError):
        forward(tiny_model, np.array([0, 1]), np.array([-1, 0]), ok,
                KvCache(tiny_model.config))
    with pytest.raises(CapacityError):
        forward(tiny_model, np.array([0, 1]), np.array([0, 8192]), ok,
                KvCache(tiny_model.config))
    with pytest.raises(ContractError):
        forward(tiny_model, np.array([0, 1]), pos, ok.astype(np.int8),
                KvCache(tiny_model.config))
    with pytest.raises(ContractError):
        forward(tiny_model, np.array([0, 1]), pos, np.zeros((2, 2), dtype=bool),
                KvCache(tiny_model.config))
    with pytest.raises(ContractError):
        forward(tiny_model, np.array([0, 1]), pos, _causal(3),
                KvCache(tiny_model.config))


def test_masked_key_truly_absent_not_downweighted(tiny_model):
    """Changing a masked-out key's token must not move any logit bit.

    This is the distinction between gathering allowed keys and adding a
    large negative number before softmax: the latter still leaks the
    masked entry into the normalizer at float32.
    """
    n = 6
    pos = np.arange(n, dtype=np.int64)
    mask = _causal(n)
    mask[:, 3] = False
    mask[3, 3] = True
    a = np.array([257, 65, 66, 90, 67, 68], dtype=np.int64)
    b = a.copy()
    b[3] = 200
    out_a = forward(tiny_model, a, pos, mask, KvCache(tiny_model.config))
    out_b = forward(tiny_model, b, pos, mask, KvCache(tiny_model.config))
    keep = [0, 1, 2, 4, 5]
    assert np.array_equal(out_a[keep], out_b[keep])
    assert not np.array_equal(out_a[3], out_b[3])
