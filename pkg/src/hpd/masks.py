"""Attention mask construction and the inference/training equivalence check.

Inference rule: a query may attend a key iff the key is live (not PAD)
and key_position <= query_position. Because generated value tokens sit in
per-slot position gaps, this single rule yields causal attention over the
logical order even though cache memory order interleaves slots.

Training rule (for fine-tuning sequences laid out in regular order with
gold values inline): the same position-ordered causal mask, additionally
blocking value token v[n,k] from value keys v[n',k'] with n' < n, k' > k,
and blocking every layout (attribute/structure/prompt) token from every
value token. Those extra blocks reproduce what inference-time cache
availability enforces for free: at the step where v[n,k] is a query,
later tokens of earlier slots do not exist yet, and at prefill no value
exists at all. mask_equivalence_check() verifies exactly that by
replaying decode-order availability and comparing allowed key sets.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError
from .tokens import DELIM
from .scheduler import PositionPlan, SkeletonLayout, slot_position

LayoutKind = tuple[str, int]
ValueKind = tuple[str, int, int]
Kind = LayoutKind | ValueKind


def inference_mask(query_positions, key_positions, key_live) -> np.ndarray:
    """Boolean (nq, nk) relation: live key and key_pos <= query_pos.

    With strictly increasing key positions and queries == keys this
    degenerates to the standard lower-triangular causal mask.
    """
    q = np.asarray(query_positions, dtype=np.int64)
    k = np.asarray(key_positions, dtype=np.int64)
    live = np.asarray(key_live, dtype=bool)
    if q.ndim != 1 or k.ndim != 1 or live.shape != k.shape:
        raise ContractError("positions must be 1-d and key_live must match keys")
    return live[None, :] & (k[None, :] <= q[:, None])


@dataclass
class TrainingSequence:
    """Fine-tuning ordering: layout tokens with gold values spliced in after
    their anchors. `kinds[i]` identifies token i as ("layout", layout_index)
    or ("value", slot_index, k) with k counting from 1."""
    tokens: list[int]
    positions: list[int]
    kinds: list[Kind]


def _check_gold(layout: SkeletonLayout, plan: PositionPlan,
                gold_values: list[list[int]]) -> None:
    if len(gold_values) != len(layout.slots):
        raise ContractError(
            f"{len(gold_values)} gold values for {len(layout.slots)} slots")
    for s, value in enumerate(gold_values):
        if len(value) > plan.k_max:
            raise ContractError(
                f"gold value for slot {s} has {len(value)} tokens, gap is {plan.k_max}")
        if DELIM in value:
            raise ContractError(f"gold value for slot {s} contains DELIM")


def training_sequence(layout: SkeletonLayout, plan: PositionPlan,
                      gold_values: list[list[int]]) -> TrainingSequence:
    _check_gold(layout, plan, gold_values)
    insert_after = {slot.anchor: s for s, slot in enumerate(layout.slots)}
    tokens: list[int] = []
    positions: list[int] = []
    kinds: list[Kind] = []
    for i, tok in enumerate(layout.tokens):
        tokens.append(tok)
        positions.append(plan.position_ids[i])
        kinds.append(("layout", i))
        s = insert_after.get(i)
        if s is None:
            continue
        for k, vtok in enumerate(gold_values[s], start=1):
            tokens.append(vtok)
            positions.append(slot_position(layout.slots[s], k, plan))
            kinds.append(("value", s, k))
    return TrainingSequence(tokens=tokens, positions=positions, kinds=kinds)


def training_mask(layout: SkeletonLayout, plan: PositionPlan,
                  gold_values: list[list[int]]) -> np.ndarray:
    """Mask over training_sequence() order implementing the module rules."""
    seq = training_sequence(layout, plan, gold_values)
    return _training_mask_for(seq)


def _training_mask_for(seq: TrainingSequence) -> np.ndarray:
    n = len(seq.tokens)
    pos = np.asarray(seq.positions, dtype=np.int64)
    allowed = pos[None, :] <= pos[:, None]
    for qi, qkind in enumerate(seq.kinds):
        for ki, kkind in enumerate(seq.kinds):
            if kkind[0] != "value":
                continue
            if qkind[0] == "layout":
                allowed[qi, ki] = False
            else:
                _, qs, qk = qkind
                _, ks, kk = kkind
                if ks < qs and kk > qk:
                    allowed[qi, ki] = False
    return allowed


@dataclass
class MaskMismatch:
    query: Kind
    key: Kind
    in_training: bool
    in_replay: bool


@dataclass
class MaskEquivalenceReport:
    equal: bool
    num_queries: int
    mismatches: list[MaskMismatch] = field(default_factory=list)

    def describe(self) -> str:
        if self.equal:
            return f"masks agree over {self.num_queries} queries"
        lines = [f"{len(self.mismatches)} disagreeing (query, key) pairs:"]
        for m in self.mismatches[:20]:
            lines.append(f"  query={m.query} key={m.key} "
                         f"training={m.in_training} replay={m.in_replay}")
        if len(self.mismatches) > 20:
            lines.append(f"  ... {len(self.mismatches) - 20} more")
        return "\n".join(lines)


def _replay_allowed_sets(layout: SkeletonLayout, plan: PositionPlan,
                         gold_values: list[list[int]]) -> dict[Kind, set[Kind]]:
    """Key sets each token could actually attend during an HPD decode.

    Layout tokens are queried once, at prefill, when only layout exists.
    Value token v[s,k] is queried at the pass where all surviving slots
    forward their k-th token; the cache then holds layout plus tokens
    1..k-1 of every slot, and the forwarded batch supplies the k-th
    tokens themselves. The inference position rule filters on top.
    """
    layout_pos = {("layout", i): plan.position_ids[i]
                  for i in range(len(layout.tokens))}
    value_pos: dict[Kind, int] = {}
    for s, value in enumerate(gold_values):
        for k in range(1, len(value) + 1):
            value_pos[("value", s, k)] = slot_position(layout.slots[s], k, plan)

    layout_kinds = list(layout_pos)
    out: dict[Kind, set[Kind]] = {}
    for qkind, qpos in layout_pos.items():
        out[qkind] = {kk for kk, kp in layout_pos.items() if kp <= qpos}
    for qkind, qpos in value_pos.items():
        _, qs, qk = qkind
        available = set(layout_kinds)
        for s, value in enumerate(gold_values):
            top = min(qk, len(value))
            available.update(("value", s, k) for k in range(1, top + 1))
        out[qkind] = {kk for kk in available
                      if (layout_pos.get(kk) if kk[0] == "layout"
                          else value_pos[kk]) <= qpos}
    return out


def mask_equivalence_check(layout: SkeletonLayout, plan: PositionPlan,
                           gold_values: list[list[int]],
                           training: np.ndarray | None = None
                           ) -> MaskEquivalenceReport:
    """Compare the training mask against replayed decode availability.

    `training` overrides the computed mask (same ordering) so callers can
    probe corrupted masks; the report pinpoints every disagreeing pair.
    """
    seq = training_sequence(layout, plan, gold_values)
    t_mask = _training_mask_for(seq) if training is None else np.asarray(training)
    n = len(seq.tokens)
    if t_mask.shape != (n, n):
        raise ContractError(f"training mask shape {t_mask.shape} != ({n}, {n})")

    replay = _replay_allowed_sets(layout, plan, gold_values)
    mismatches: list[MaskMismatch] = []
    for qi, qkind in enumerate(seq.kinds):
        replay_set = replay[qkind]
        for ki, kkind in enumerate(seq.kinds):
            in_train = bool(t_mask[qi, ki])
            in_rep = kkind in replay_set
            if in_train != in_rep:
                mismatches.append(MaskMismatch(qkind, kkind, in_train, in_rep))
    return MaskEquivalenceReport(equal=not mismatches, num_queries=n,
                                 mismatches=mismatches)


def mask_to_pbm(mask: np.ndarray, comment: str = "") -> str:
    """Render a boolean mask as a plain PBM (P1) text grid, allowed = 1.

    The result pastes straight into any netpbm viewer and diffs cleanly
    line by line, one query per row.
    """
    m = np.asarray(mask)
    if m.ndim != 2:
        raise ContractError("mask_to_pbm expects a 2-d mask")
    lines = ["P1"]
    if comment:
        lines.append(f"# {comment}")
    lines.append(f"{m.shape[1]} {m.shape[0]}")
    for row in m.astype(int):
        lines.append(" ".join(str(v) for v in row))
    return "\n".join(lines) + "\n"
