"""Decode loops: hyper-parallel value decoding and the autoregressive baseline.

The HPD loop prefilled once over the whole skeleton samples one next
token per slot anchor, then keeps forwarding only the tokens that
survived the previous step, each at its slot's next in-gap position. A
DELIM prunes its slot before the token is ever forwarded, so delimiters
never occupy cache; a slot that fills its gap is truncated. The loop
therefore runs at most k_max passes regardless of how many values are
being decoded at once.

Both loops speak either backend: a Model (real forwards through the
masked transformer) or a ScriptTable (planted values, no tensors), and
both fill the same DecodeTrace so pass/token accounting is comparable.

Two oracles guard the cached path: oracle_full_recompute replays a
decode with no KV cache by re-forwarding the entire assembled sequence
every step, and oracle_independent decodes one slot on its own with
plain causal attention. Greedy decoding makes both comparisons exact,
not approximate.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError
from .masks import inference_mask
from .model import KvCache, Model, forward
from .scheduler import (ACTIVE, TRUNCATED, ArPrompt, StackedPrompt, ValueSlot,
                        advance, pad_batch, render_ar_text)
from .scripted import ScriptTable, scripted_next
from .tokens import DELIM, PAD, detokenize_text, tokenize


@dataclass(frozen=True)
class DecodeConfig:
    k_max: int = 30
    docs_per_prompt: int = 6
    batch_size: int = 1
    temperature: float | None = None
    seed: int = 0
    max_new_tokens: int | None = None

    def __post_init__(self) -> None:
        if self.k_max < 1:
            raise ContractError("k_max must be >= 1")
        if self.docs_per_prompt < 1 or self.batch_size < 1:
            raise ContractError("docs_per_prompt and batch_size must be >= 1")
        if self.temperature is not None and not self.temperature > 0:
            raise ContractError("temperature must be positive when set")
        if self.max_new_tokens is not None and self.max_new_tokens < 0:
            raise ContractError("max_new_tokens must be >= 0")


@dataclass
class DecodeTrace:
    """Counters for one decode run.

    tokens_emitted_per_pass counts sampled tokens (delimiters included);
    steps_excluding_delimiter counts passes that emitted at least one
    non-DELIM token. peak_cache_entries totals cache entries across all
    batch rows, padding included.
    """
    mode: str
    forward_passes: int = 0
    tokens_emitted_per_pass: list[int] = field(default_factory=list)
    steps_excluding_delimiter: int = 0
    wall_clock_seconds: float = 0.0
    peak_cache_entries: int = 0

    @property
    def emitted_total(self) -> int:
        return sum(self.tokens_emitted_per_pass)

    def record_pass(self, sampled: list[int]) -> None:
        self.forward_passes += 1
        self.tokens_emitted_per_pass.append(len(sampled))
        if any(t != DELIM for t in sampled):
            self.steps_excluding_delimiter += 1

    def merge(self, other: "DecodeTrace") -> None:
        if other.mode != self.mode:
            raise ContractError("cannot merge traces from different modes")
        self.forward_passes += other.forward_passes
        self.tokens_emitted_per_pass.extend(other.tokens_emitted_per_pass)
        self.steps_excluding_delimiter += other.steps_excluding_delimiter
        self.wall_clock_seconds += other.wall_clock_seconds
        self.peak_cache_entries = max(self.peak_cache_entries,
                                      other.peak_cache_entries)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "forward_passes": self.forward_passes,
            "tokens_emitted_per_pass": list(self.tokens_emitted_per_pass),
            "steps_excluding_delimiter": self.steps_excluding_delimiter,
            "wall_clock_seconds": self.wall_clock_seconds,
            "peak_cache_entries": self.peak_cache_entries,
        }


@dataclass
class ExtractionResult:
    """Per (document id, attribute name) value or None; truncated pairs flagged."""
    values: dict[str, dict[str, str | None]]
    truncated: set[tuple[str, str]] = field(default_factory=set)


def sample(logits_row: np.ndarray, temperature: float | None = None,
           rng: np.random.Generator | None = None) -> int:
    """Greedy argmax (ties to the lowest token id) or temperature sampling."""
    row = np.asarray(logits_row)
    if row.ndim != 1:
        raise ContractError("sample expects a single logits row")
    if temperature is None:
        return int(np.argmax(row))
    if not temperature > 0:
        raise ContractError("temperature must be positive")
    if rng is None:
        raise ContractError("temperature sampling needs an explicit rng")
    z = (row - row.max()) / np.float32(temperature)
    p = np.exp(z)
    p = p.astype(np.float64)
    p /= p.sum()
    cdf = np.cumsum(p)
    return int(min(np.searchsorted(cdf, rng.random(), side="right"), row.size - 1))


def _value_of(emitted: list[int]) -> str | None:
    text = detokenize_text(emitted)
    return None if text in ("", "null") else text


def _collect_result(stacked: StackedPrompt, slots: list[ValueSlot]
                    ) -> ExtractionResult:
    layout = stacked.layout
    values: dict[str, dict[str, str | None]] = {d.id: {} for d in layout.docs}
    truncated: set[tuple[str, str]] = set()
    for slot in slots:
        doc_id = layout.docs[slot.doc_index].id
        attr = layout.attributes.names[slot.attr_index]
        values[doc_id][attr] = _value_of(slot.emitted)
        if slot.state == TRUNCATED:
            truncated.add((doc_id, attr))
    return ExtractionResult(values=values, truncated=truncated)


def _masked_forward(model: Model, cache: KvCache,
                    rows: list[tuple[list[int], list[int]]]):
    """Pad rows, build per-row inference masks over cache + block, forward."""
    padded = pad_batch(rows)
    b, w = padded.tokens.shape
    cache_pos = cache.positions_view()
    cache_live = cache.live_view()
    mask = np.empty((b, w, cache.count + w), dtype=bool)
    for r in range(b):
        key_pos = np.concatenate([cache_pos[r], padded.positions[r]])
        # tokens != PAD rather than ~pad: a sampled PAD is as unattendable
        # as a padding slot, matching the liveness the cache records
        key_live = np.concatenate([cache_live[r], padded.tokens[r] != PAD])
        mask[r] = inference_mask(padded.positions[r], key_pos, key_live)
    logits = forward(model, padded.tokens, padded.positions, mask, cache)
    return logits, padded


@dataclass
class PrefillResult:
    slots: list[ValueSlot]
    sampled: list[int]
    anchor_logits: np.ndarray


def hpd_prefill(model: Model, stacked: StackedPrompt, cache: KvCache,
                temperature: float | None = None,
                rng: np.random.Generator | None = None) -> PrefillResult:
    """Forward the full layout, sample one first token per slot anchor."""
    if not stacked.layout.slots:
        raise ContractError("prefill with zero value slots")
    if cache.count != 0:
        raise ContractError("prefill requires an empty cache")
    if cache.batch_size != 1:
        raise ContractError("hpd_prefill is single-row; use hpd_decode for batches")
    slots = stacked.make_slots()
    logits, _ = _masked_forward(
        model, cache,
        [(stacked.layout.tokens, list(stacked.plan.position_ids))])
    anchor_logits = np.stack([logits[0, s.anchor] for s in slots])
    sampled = [sample(anchor_logits[i], temperature, rng)
               for i in range(len(slots))]
    advance(slots, sampled, stacked.plan.k_max)
    return PrefillResult(slots=slots, sampled=sampled, anchor_logits=anchor_logits)


def hpd_step(model: Model, slots: list[ValueSlot], cache: KvCache, k_max: int,
             temperature: float | None = None,
             rng: np.random.Generator | None = None) -> list[int]:
    """Forward the surviving slots' latest tokens; sample and fold one step."""
    active = [s for s in slots if s.state == ACTIVE]
    if not active:
        raise ContractError("hpd_step with no active slots")
    if cache.batch_size != 1:
        raise ContractError("hpd_step is single-row; use hpd_decode for batches")
    toks = [s.emitted[-1] for s in active]
    pos = [s.anchor_position + len(s.emitted) for s in active]
    logits, _ = _masked_forward(model, cache, [(toks, pos)])
    sampled = [sample(logits[0, i], temperature, rng) for i in range(len(active))]
    advance(slots, sampled, k_max)
    return sampled


def _check_prompts(prompts: list[StackedPrompt], config: DecodeConfig) -> None:
    if not prompts:
        raise ContractError("hpd_decode needs at least one prompt")
    for p in prompts:
        if not p.layout.slots:
            raise ContractError("prompt with zero value slots")
        if p.plan.k_max != config.k_max:
            raise ContractError(
                f"prompt planned with k_max={p.plan.k_max}, "
                f"decode configured with {config.k_max}")


def hpd_decode(backend, prompts: list[StackedPrompt], config: DecodeConfig
               ) -> tuple[list[ExtractionResult], DecodeTrace]:
    """Decode every prompt's slots in parallel; prompts form the batch rows."""
    _check_prompts(prompts, config)
    if isinstance(backend, ScriptTable):
        return _hpd_decode_scripted(backend, prompts, config)
    return _hpd_decode_model(backend, prompts, config)


def _hpd_decode_model(model: Model, prompts: list[StackedPrompt],
                      config: DecodeConfig):
    b = len(prompts)
    cache = KvCache(model.config, batch_size=b)
    rng = np.random.default_rng(config.seed)
    trace = DecodeTrace(mode="hpd")
    row_slots = [p.make_slots() for p in prompts]
    started = time.perf_counter()

    rows = [(p.layout.tokens, list(p.plan.position_ids)) for p in prompts]
    logits, _ = _masked_forward(model, cache, rows)
    pass_tokens: list[int] = []
    for r, slots in enumerate(row_slots):
        sampled = [sample(logits[r, s.anchor], config.temperature, rng)
                   for s in slots]
        advance(slots, sampled, config.k_max)
        pass_tokens.extend(sampled)
    trace.record_pass(pass_tokens)

    while trace.forward_passes < config.k_max:
        active_rows = [[s for s in slots if s.state == ACTIVE]
                       for slots in row_slots]
        if not any(active_rows):
            break
        rows = [([s.emitted[-1] for s in act],
                 [s.anchor_position + len(s.emitted) for s in act])
                for act in active_rows]
        logits, _ = _masked_forward(model, cache, rows)
        pass_tokens = []
        for r, act in enumerate(active_rows):
            if not act:
                continue
            sampled = [sample(logits[r, i], config.temperature, rng)
                       for i in range(len(act))]
            advance(row_slots[r], sampled, config.k_max)
            pass_tokens.extend(sampled)
        trace.record_pass(pass_tokens)

    for slots in row_slots:
        for s in slots:
            if s.state == ACTIVE:
                s.state = TRUNCATED
    trace.wall_clock_seconds = time.perf_counter() - started
    trace.peak_cache_entries = b * cache.count
    results = [_collect_result(p, slots) for p, slots in zip(prompts, row_slots)]
    return results, trace


def _hpd_decode_scripted(script: ScriptTable, prompts: list[StackedPrompt],
                         config: DecodeConfig):
    b = len(prompts)
    trace = DecodeTrace(mode="hpd")
    row_slots = [p.make_slots() for p in prompts]
    started = time.perf_counter()
    # mirror the tensor path's padded cache growth for comparable accounting
    entries = max(len(p.layout.tokens) for p in prompts)

    def propose(p: StackedPrompt, slot: ValueSlot) -> int:
        doc_id = p.layout.docs[slot.doc_index].id
        attr = p.layout.attributes.names[slot.attr_index]
        return scripted_next(script, doc_id, attr, slot.emitted)

    first = True
    while trace.forward_passes < config.k_max:
        active_rows = [[s for s in slots if s.state == ACTIVE]
                       for slots in row_slots]
        if not any(active_rows):
            break
        if not first:
            entries += max(len(act) for act in active_rows)
        first = False
        pass_tokens: list[int] = []
        for p, slots, act in zip(prompts, row_slots, active_rows):
            sampled = [propose(p, s) for s in act]
            advance(slots, sampled, config.k_max)
            pass_tokens.extend(sampled)
        trace.record_pass(pass_tokens)

    for slots in row_slots:
        for s in slots:
            if s.state == ACTIVE:
                s.state = TRUNCATED
    trace.wall_clock_seconds = time.perf_counter() - started
    trace.peak_cache_entries = b * entries
    results = [_collect_result(p, slots) for p, slots in zip(prompts, row_slots)]
    return results, trace


def _ar_cap(prompt: ArPrompt, config: DecodeConfig) -> int:
    if config.max_new_tokens is not None:
        return config.max_new_tokens
    n_attrs = len(prompt.attributes.names)
    return len(prompt.docs) * n_attrs * (config.k_max + 8)


def _close_token(prompt: ArPrompt) -> int | None:
    close = prompt.template.block_close
    return tokenize(close)[-1] if close else None


def ar_decode(backend, prompt: ArPrompt, config: DecodeConfig
              ) -> tuple[list[int], DecodeTrace]:
    """Plain autoregressive generation of the full output text, one prompt."""
    outs, trace = ar_decode_batch(backend, [prompt], config)
    return outs[0], trace


def ar_decode_batch(backend, prompts: list[ArPrompt], config: DecodeConfig
                    ) -> tuple[list[list[int]], DecodeTrace]:
    """Batched baseline: padded prefill, then one token per live row per pass.

    A row stops once it has closed every document's output block (counted
    by the template's final block_close byte) or hits its new-token cap.
    """
    if not prompts:
        raise ContractError("ar_decode needs at least one prompt")
    if isinstance(backend, ScriptTable):
        return _ar_decode_scripted(backend, prompts, config)
    return _ar_decode_model(backend, prompts, config)


def _ar_decode_model(model: Model, prompts: list[ArPrompt],
                     config: DecodeConfig):
    b = len(prompts)
    cache = KvCache(model.config, batch_size=b)
    rng = np.random.default_rng(config.seed)
    trace = DecodeTrace(mode="ar")
    caps = [_ar_cap(p, config) for p in prompts]
    closers = [_close_token(p) for p in prompts]
    want_close = [len(p.docs) for p in prompts]
    outputs: list[list[int]] = [[] for _ in prompts]
    closed = [0] * b
    started = time.perf_counter()

    rows = [(p.tokens, list(range(len(p.tokens)))) for p in prompts]
    next_pos = [len(p.tokens) for p in prompts]
    logits, _ = _masked_forward(model, cache, rows)

    def done(r: int) -> bool:
        if len(outputs[r]) >= caps[r]:
            return True
        return closers[r] is not None and closed[r] >= want_close[r]

    def take(r: int, row_logits: np.ndarray) -> None:
        tok = sample(row_logits, config.temperature, rng)
        outputs[r].append(tok)
        if closers[r] is not None and tok == closers[r]:
            closed[r] += 1

    pass_tokens: list[int] = []
    for r in range(b):
        if caps[r] > 0:
            take(r, logits[r, len(prompts[r].tokens) - 1])
            pass_tokens.append(outputs[r][-1])
    trace.record_pass(pass_tokens)

    while True:
        live = [r for r in range(b) if not done(r)]
        if not live:
            break
        rows = []
        for r in range(b):
            if r in live:
                rows.append(([outputs[r][-1]], [next_pos[r]]))
                next_pos[r] += 1
            else:
                rows.append(([], []))
        logits, _ = _masked_forward(model, cache, rows)
        pass_tokens = []
        for r in live:
            take(r, logits[r, 0])
            pass_tokens.append(outputs[r][-1])
        trace.record_pass(pass_tokens)

    trace.wall_clock_seconds = time.perf_counter() - started
    trace.peak_cache_entries = b * cache.count
    return outputs, trace


def _ar_decode_scripted(script: ScriptTable, prompts: list[ArPrompt],
                        config: DecodeConfig):
    trace = DecodeTrace(mode="ar")
    started = time.perf_counter()
    caps = [_ar_cap(p, config) for p in prompts]
    targets = [tokenize(render_ar_text(p.docs, p.attributes, script, p.template))
               for p in prompts]
    outputs = [t[:cap] for t, cap in zip(targets, caps)]
    passes = max(1, max((len(o) for o in outputs), default=0))
    for step in range(passes):
        trace.record_pass([o[step] for o in outputs if len(o) > step])
    width = max(len(p.tokens) for p in prompts)
    trace.peak_cache_entries = len(prompts) * (width + passes - 1)
    trace.wall_clock_seconds = time.perf_counter() - started
    return outputs, trace


def oracle_full_recompute(model: Model, stacked: StackedPrompt,
                          config: DecodeConfig
                          ) -> tuple[ExtractionResult, DecodeTrace]:
    """Replay an HPD decode with no KV cache at all.

    Every step re-forwards the entire assembled sequence (layout plus all
    generated tokens in memory order) through a fresh cache and reads
    logits at each active slot's latest token. Greedy decoding must
    reproduce hpd_decode token for token; any cache bookkeeping bug
    surfaces as a divergence here.
    """
    if config.temperature is not None:
        raise ContractError("the recompute oracle is defined for greedy decoding")
    _check_prompts([stacked], config)
    trace = DecodeTrace(mode="hpd")
    slots = stacked.make_slots()
    mem_tokens = list(stacked.layout.tokens)
    mem_pos = list(stacked.plan.position_ids)
    # arrival = slot-token index, 0 for the layout; a replayed row may only
    # see rows that already existed when the cached path first computed it,
    # which the position ordering alone does not imply across slots
    mem_arrival = [0] * len(mem_tokens)
    query_rows = [(s, s.anchor) for s in slots]
    started = time.perf_counter()

    while trace.forward_passes < config.k_max:
        fresh = KvCache(model.config, batch_size=1)
        pos = np.asarray(mem_pos, dtype=np.int64)
        arrival = np.asarray(mem_arrival, dtype=np.int64)
        toks = np.asarray(mem_tokens, dtype=np.int64)
        allowed = ((pos[None, :] <= pos[:, None])
                   & (arrival[None, :] <= arrival[:, None])
                   & (toks != PAD)[None, :])
        logits = forward(model, toks, pos, allowed, fresh)
        sampled = [sample(logits[row]) for _, row in query_rows]
        active = [s for s, _ in query_rows]
        advance(slots, sampled, config.k_max)
        trace.record_pass(sampled)
        next_rows: list[tuple[ValueSlot, int]] = []
        for s in active:
            if s.state != ACTIVE:
                continue
            mem_tokens.append(s.emitted[-1])
            mem_pos.append(s.anchor_position + len(s.emitted))
            mem_arrival.append(len(s.emitted))
            next_rows.append((s, len(mem_tokens) - 1))
        if not next_rows:
            break
        query_rows = next_rows

    for s in slots:
        if s.state == ACTIVE:
            s.state = TRUNCATED
    trace.wall_clock_seconds = time.perf_counter() - started
    trace.peak_cache_entries = len(mem_tokens)
    return _collect_result(stacked, slots), trace


def oracle_independent(model: Model, stacked: StackedPrompt, slot_index: int,
                       config: DecodeConfig) -> list[int]:
    """Decode one slot alone, autoregressively, with plain causal attention.

    The layout is cut right after the slot's anchor and positions follow
    the gapped plan prefix, so the first sampled token must equal the
    slot's hpd_prefill sample exactly. Later tokens may legitimately
    diverge for N > 1 (parallel decoding conditions on siblings' prefixes).
    """
    if config.temperature is not None:
        raise ContractError("the independence oracle is defined for greedy decoding")
    if not 0 <= slot_index < len(stacked.layout.slots):
        raise ContractError(f"slot index {slot_index} out of range")
    slot = stacked.layout.slots[slot_index]
    anchor_pos = stacked.plan.position_ids[slot.anchor]
    toks = list(stacked.layout.tokens[: slot.anchor + 1])
    pos = list(stacked.plan.position_ids[: slot.anchor + 1])
    cache = KvCache(model.config, batch_size=1)
    logits, _ = _masked_forward(model, cache, [(toks, pos)])
    last = logits[0, len(toks) - 1]
    emitted: list[int] = []
    while len(emitted) < config.k_max:
        tok = sample(last)
        if tok == DELIM:
            break
        emitted.append(tok)
        if len(emitted) == config.k_max:
            break
        logits, _ = _masked_forward(
            model, cache, [([tok], [anchor_pos + len(emitted)])])
        last = logits[0, 0]
    return emitted
