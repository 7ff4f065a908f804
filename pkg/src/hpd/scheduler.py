"""Prompt construction and decode scheduling.

A skeleton prompt lays out the instruction, the documents, and one
templated output block per document in which every attribute row ends at
an anchor token followed by an empty value field. Value tokens are never
part of the layout; they are generated later and assigned position ids
inside a gap of k_max positions reserved after each anchor:

    position_id[t] = t + k_max * (number of anchors strictly before t)

so anchors keep their nominal position, every token after an anchor is
pushed past that anchor's gap, and structure tokens between a value
field and the next attribute belong to the next slot's offset group.
Generated token k of a slot then lives at anchor_position + k, which is
where slot_position() places it and where the attention rules in
masks.py read it from.

Everything here is textual bookkeeping; no model math happens in this
module.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CapacityError, ConfigError, ContractError
from .scripted import ScriptTable
from .tokens import BOS, DELIM, PAD, tokenize

ACTIVE = "active"
PRUNED = "pruned"
TRUNCATED = "truncated"


@dataclass(frozen=True)
class Document:
    id: str
    category: str
    text: str

    def __post_init__(self) -> None:
        if not self.id:
            raise ContractError("document id must be non-empty")
        if self.id.startswith("_"):
            raise ContractError(
                f"document id {self.id!r} may not start with '_' "
                "(reserved for result metadata)")


@dataclass(frozen=True)
class AttributeSet:
    category: str
    names: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.names:
            raise ContractError("attribute set must contain at least one name")
        if len(set(self.names)) != len(self.names):
            raise ContractError("attribute names must be unique")
        for name in self.names:
            if not name or '"' in name or "\n" in name:
                raise ContractError(f"attribute name {name!r} is not templatable")


@dataclass(frozen=True)
class PromptTemplate:
    """Text patterns the skeleton is assembled from.

    `prompt` must contain {outputs}; {instruction}, {attributes} and
    {documents} are substituted when present. `row` must contain {value}
    preceded by at least one character; the token right before {value}
    becomes the slot anchor. Text after {value} (none by default) lands
    beyond the slot's position gap.
    """

    prompt: str = "{instruction}\nAttributes: {attributes}\n{documents}\nOutput:\n{outputs}"
    document: str = "Document {index}: {text}"
    row: str = '"{attribute}": {value}'
    block_open: str = "{"
    block_close: str = "}"
    block_sep: str = "\n"

    def __post_init__(self) -> None:
        if "{outputs}" not in self.prompt:
            raise ConfigError("prompt template must contain {outputs}")
        if "{value}" not in self.row:
            raise ConfigError("row template must contain {value}")
        if not self.row.split("{value}", 1)[0]:
            raise ConfigError("row template needs text before {value} to anchor on")
        if "{text}" not in self.document:
            raise ConfigError("document template must contain {text}")

    @classmethod
    def from_file(cls, path: str | Path) -> "PromptTemplate":
        """Load from a sectioned text file.

        Lines of the form [prompt], [document], [row], [block_open],
        [block_close], [block_sep] start a section; the lines until the
        next header are that field's text (joined with newlines). Missing
        sections keep their defaults.
        """
        known = {"prompt", "document", "row", "block_open", "block_close", "block_sep"}
        sections: dict[str, list[str]] = {}
        current: list[str] | None = None
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            stripped = line.strip()
            if stripped.startswith("[") and stripped.endswith("]"):
                name = stripped[1:-1]
                if name not in known:
                    raise ConfigError(f"unknown template section [{name}] in {path}")
                current = sections.setdefault(name, [])
            elif current is not None:
                current.append(line)
            elif stripped:
                raise ConfigError(f"text before first [section] header in {path}")
        fields = {name: "\n".join(lines) for name, lines in sections.items()}
        return cls(**fields)


DEFAULT_TEMPLATE = PromptTemplate()
DEFAULT_INSTRUCTION = (
    "Extract the value of each attribute from every document below. "
    "Write null if a value is not stated.")


@dataclass(frozen=True)
class SlotRef:
    """A value slot's place in the layout: which doc, which attribute, anchor index."""
    doc_index: int
    attr_index: int
    anchor: int


@dataclass
class SkeletonLayout:
    tokens: list[int]
    slots: list[SlotRef]
    structure_spans: list[tuple[int, int]]
    docs: tuple[Document, ...]
    attributes: AttributeSet
    template: PromptTemplate
    instruction: str


@dataclass
class ArPrompt:
    """Skeleton-free prompt for the autoregressive baseline."""
    tokens: list[int]
    docs: tuple[Document, ...]
    attributes: AttributeSet
    template: PromptTemplate
    instruction: str


def _render_header(instruction: str, docs: tuple[Document, ...],
                   attributes: AttributeSet, template: PromptTemplate
                   ) -> tuple[str, str]:
    doc_lines = "\n".join(
        template.document.replace("{index}", str(i + 1)).replace("{text}", d.text)
        for i, d in enumerate(docs))
    filled = (template.prompt
              .replace("{instruction}", instruction)
              .replace("{attributes}", ", ".join(attributes.names))
              .replace("{documents}", doc_lines))
    head, tail = filled.split("{outputs}", 1)
    return head, tail


def _check_prompt_inputs(docs, attributes) -> tuple[Document, ...]:
    docs = tuple(docs)
    if not docs:
        raise ContractError("at least one document is required")
    ids = [d.id for d in docs]
    if len(set(ids)) != len(ids):
        raise ContractError("duplicate document id within one prompt")
    for d in docs:
        if d.category != attributes.category:
            raise ContractError(
                f"document {d.id!r} has category {d.category!r}, "
                f"attribute set is for {attributes.category!r}")
    return docs


def build_skeleton(instruction: str, docs, attributes: AttributeSet,
                   template: PromptTemplate = DEFAULT_TEMPLATE) -> SkeletonLayout:
    """Assemble the templated prompt with one anchored row per (doc, attribute).

    Slots come out ordered by (doc_index, attr_index), which is the order
    every downstream loop iterates in.
    """
    docs = _check_prompt_inputs(docs, attributes)
    head, tail = _render_header(instruction, docs, attributes, template)
    row_prefix_t, row_suffix_t = template.row.split("{value}", 1)

    toks: list[int] = [BOS]
    toks.extend(tokenize(head))
    slots: list[SlotRef] = []
    spans: list[tuple[int, int]] = []
    for j, _doc in enumerate(docs):
        block_start = len(toks)
        if j > 0:
            toks.extend(tokenize(template.block_sep))
        toks.extend(tokenize(template.block_open))
        for n, name in enumerate(attributes.names):
            toks.extend(tokenize(row_prefix_t.replace("{attribute}", name)))
            slots.append(SlotRef(doc_index=j, attr_index=n, anchor=len(toks) - 1))
            toks.extend(tokenize(row_suffix_t.replace("{attribute}", name)))
        toks.extend(tokenize(template.block_close))
        spans.append((block_start, len(toks)))
    toks.extend(tokenize(tail))
    return SkeletonLayout(tokens=toks, slots=slots, structure_spans=spans,
                          docs=docs, attributes=attributes, template=template,
                          instruction=instruction)


def build_ar_prompt(instruction: str, docs, attributes: AttributeSet,
                    template: PromptTemplate = DEFAULT_TEMPLATE) -> ArPrompt:
    """Prompt for the baseline: same header, no skeleton; the model writes it all."""
    docs = _check_prompt_inputs(docs, attributes)
    head, tail = _render_header(instruction, docs, attributes, template)
    toks = [BOS] + tokenize(head + tail)
    return ArPrompt(tokens=toks, docs=docs, attributes=attributes,
                    template=template, instruction=instruction)


def render_ar_text(docs, attributes: AttributeSet, script: ScriptTable,
                   template: PromptTemplate = DEFAULT_TEMPLATE) -> str:
    """The output text a perfectly format-following model would generate.

    Used as the scripted baseline's emission source and as the counting
    oracle for baseline pass totals. Absent script entries are written as
    the literal null the instruction asks for.
    """
    row_prefix_t, row_suffix_t = template.row.split("{value}", 1)
    blocks = []
    for doc in docs:
        parts = [template.block_open]
        for name in attributes.names:
            value = script.entries.get((doc.id, name), "null")
            parts.append(row_prefix_t.replace("{attribute}", name)
                         + value + "\n"
                         + row_suffix_t.replace("{attribute}", name))
        parts.append(template.block_close)
        blocks.append("".join(parts))
    return template.block_sep.join(blocks)


@dataclass(frozen=True)
class PositionPlan:
    position_ids: tuple[int, ...]
    k_max: int


def assign_position_ids(layout: SkeletonLayout, k_max: int) -> PositionPlan:
    """Gap-shifted position ids for every layout token (see module docstring)."""
    if k_max <= 0:
        raise ConfigError(f"k_max must be >= 1, got {k_max}")
    anchors = [s.anchor for s in layout.slots]
    if anchors != sorted(anchors) or len(set(anchors)) != len(anchors):
        raise ContractError("slot anchors must be strictly increasing")
    ids = []
    passed = 0
    for t in range(len(layout.tokens)):
        while passed < len(anchors) and anchors[passed] < t:
            passed += 1
        ids.append(t + k_max * passed)
    return PositionPlan(position_ids=tuple(ids), k_max=k_max)


@dataclass
class ValueSlot:
    """Decode-time state of one value slot."""
    doc_index: int
    attr_index: int
    anchor: int
    anchor_position: int
    state: str = ACTIVE
    emitted: list[int] = field(default_factory=list)

    @property
    def next_position(self) -> int:
        return self.anchor_position + len(self.emitted) + 1


def slot_position(slot, k: int, plan: PositionPlan) -> int:
    """Position id of a slot's k-th generated token (k counts from 1)."""
    if k < 1:
        raise ContractError(f"value token index k must be >= 1, got {k}")
    if k > plan.k_max:
        raise CapacityError(f"k={k} exceeds the slot gap k_max={plan.k_max}")
    if isinstance(slot, ValueSlot):
        return slot.anchor_position + k
    return plan.position_ids[slot.anchor] + k


@dataclass
class StackedPrompt:
    """A skeleton layout plus its position plan; ready to decode."""
    layout: SkeletonLayout
    plan: PositionPlan

    def make_slots(self) -> list[ValueSlot]:
        return [ValueSlot(doc_index=s.doc_index, attr_index=s.attr_index,
                          anchor=s.anchor,
                          anchor_position=self.plan.position_ids[s.anchor])
                for s in self.layout.slots]


def stack_documents(instruction: str, docs, attributes: AttributeSet, k_max: int,
                    template: PromptTemplate = DEFAULT_TEMPLATE) -> StackedPrompt:
    layout = build_skeleton(instruction, docs, attributes, template)
    plan = assign_position_ids(layout, k_max)
    return StackedPrompt(layout=layout, plan=plan)


def advance(slots: list[ValueSlot], sampled: list[int], k_max: int
            ) -> list[tuple[ValueSlot, str]]:
    """Fold one step's sampled tokens into slot state, in slot order.

    A DELIM prunes its slot without storing the token; anything else is
    appended, and filling the gap truncates. Returns the (slot, new_state)
    pairs that left the active state this step.
    """
    active = [s for s in slots if s.state == ACTIVE]
    if len(sampled) != len(active):
        raise ContractError(
            f"{len(sampled)} sampled tokens for {len(active)} active slots")
    events: list[tuple[ValueSlot, str]] = []
    for slot, token in zip(active, sampled):
        if token == DELIM:
            slot.state = PRUNED
            events.append((slot, PRUNED))
            continue
        slot.emitted.append(int(token))
        if len(slot.emitted) >= k_max:
            slot.state = TRUNCATED
            events.append((slot, TRUNCATED))
    return events


@dataclass
class PaddedBatch:
    """Rectangular token/position block with PAD fill; pad marks fill cells."""
    tokens: np.ndarray
    positions: np.ndarray
    pad: np.ndarray

    @property
    def width(self) -> int:
        return self.tokens.shape[1]


def pad_batch(rows: list[tuple[list[int], list[int]]]) -> PaddedBatch:
    """Right-pad ragged per-row (tokens, positions) to a rectangle.

    PAD cells carry position 0; they are masked both as queries and keys
    by the engine, so the value is arbitrary but must stay in range.
    """
    if not rows:
        raise ContractError("pad_batch needs at least one row")
    width = max(len(toks) for toks, _ in rows)
    if width == 0:
        raise ContractError("pad_batch needs at least one non-empty row")
    b = len(rows)
    tokens = np.full((b, width), PAD, dtype=np.int64)
    positions = np.zeros((b, width), dtype=np.int64)
    pad = np.ones((b, width), dtype=bool)
    for r, (toks, pos) in enumerate(rows):
        if len(toks) != len(pos):
            raise ContractError("row tokens and positions differ in length")
        n = len(toks)
        tokens[r, :n] = toks
        positions[r, :n] = pos
        pad[r, :n] = False
    return PaddedBatch(tokens=tokens, positions=positions, pad=pad)
