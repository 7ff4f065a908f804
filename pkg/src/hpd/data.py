"""Dataset records, results files, synthetic corpus, and output parsing."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .engine import ExtractionResult
from .errors import ContractError
from .scheduler import ArPrompt, AttributeSet
from .scripted import ScriptTable
from .tokens import detokenize_text

Mapping = dict[str, dict[str, str | None]]


@dataclass
class DatasetRecord:
    id: str
    category: str
    text: str
    labels: dict[str, str | None] | None = None
    extra: dict = field(default_factory=dict)


def load_jsonl(path: str | Path) -> list[DatasetRecord]:
    """Strict JSONL loading; every complaint names its line number."""
    records: list[DatasetRecord] = []
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ContractError(f"{path}:{lineno}: invalid JSON ({exc})") from exc
            if not isinstance(obj, dict):
                raise ContractError(f"{path}:{lineno}: record must be an object")
            for key in ("id", "category", "text"):
                if not isinstance(obj.get(key), str) or not obj.get(key):
                    raise ContractError(
                        f"{path}:{lineno}: field {key!r} must be a non-empty string")
            rec_id = obj["id"]
            if rec_id.startswith("_"):
                raise ContractError(
                    f"{path}:{lineno}: id {rec_id!r} may not start with '_'")
            if rec_id in seen:
                raise ContractError(f"{path}:{lineno}: duplicate id {rec_id!r}")
            seen.add(rec_id)
            labels = obj.get("labels")
            if labels is not None:
                if not isinstance(labels, dict):
                    raise ContractError(f"{path}:{lineno}: labels must be an object")
                for attr, value in labels.items():
                    if not isinstance(attr, str) or not attr:
                        raise ContractError(
                            f"{path}:{lineno}: label keys must be non-empty strings")
                    if value is not None and not isinstance(value, str):
                        raise ContractError(
                            f"{path}:{lineno}: label {attr!r} must be string or null")
            extra = {k: v for k, v in obj.items()
                     if k not in ("id", "category", "text", "labels")}
            records.append(DatasetRecord(id=rec_id, category=obj["category"],
                                         text=obj["text"], labels=labels,
                                         extra=extra))
    return records


def save_jsonl(path: str | Path, records: list[DatasetRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            obj = {"id": rec.id, "category": rec.category, "text": rec.text,
                   "labels": rec.labels, **rec.extra}
            fh.write(json.dumps(obj, ensure_ascii=False) + "\n")


def attribute_sets(records: list[DatasetRecord]) -> dict[str, AttributeSet]:
    """Per-category attribute sets in first-seen label order."""
    names: dict[str, list[str]] = {}
    for rec in records:
        bucket = names.setdefault(rec.category, [])
        for attr in rec.labels or {}:
            if attr not in bucket:
                bucket.append(attr)
    out: dict[str, AttributeSet] = {}
    for category, bucket in names.items():
        if not bucket:
            raise ContractError(
                f"category {category!r} has no labeled attributes to extract")
        out[category] = AttributeSet(category=category, names=tuple(bucket))
    return out


def gold_mapping(records: list[DatasetRecord]) -> Mapping:
    return {rec.id: dict(rec.labels or {}) for rec in records}


def save_results(path: str | Path, values: Mapping, trace_dict: dict) -> None:
    payload: dict = {doc_id: attrs for doc_id, attrs in values.items()}
    payload["_trace"] = trace_dict
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, ensure_ascii=False)
        fh.write("\n")


def load_results(path: str | Path) -> tuple[Mapping, dict | None]:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    if not isinstance(payload, dict):
        raise ContractError(f"{path}: results file must be a JSON object")
    trace = payload.get("_trace")
    values = {k: v for k, v in payload.items() if not k.startswith("_")}
    return values, trace


# ---------------------------------------------------------------- synthetic

_ATTR_POOL = (
    "brand", "color", "material", "size", "weight", "width", "height", "depth",
    "voltage", "power", "model", "series", "finish", "capacity", "speed",
    "length", "style", "origin", "grade", "shape", "pattern", "texture",
    "rating", "gauge",
)
_CATEGORY_POOL = ("televisions", "kettles", "routers", "lamps", "drills", "chairs")
_VALUE_CHARS = "abcdefghijklmnopqrstuvwxyz0123456789"


def synth_corpus(seed: int = 0, categories: int = 2, products_per_category: int = 6,
                 attrs_per_category: int = 12, absent_fraction: float = 0.2,
                 value_len: tuple[int, int] = (2, 6),
                 ) -> tuple[list[DatasetRecord], ScriptTable]:
    """Deterministic corpus with planted values and a matching script table.

    Each product's text embeds every present attribute value verbatim;
    absent attributes (gold null) are simply never mentioned and never
    scripted, so the scripted backend delimits them away immediately.
    value_len bounds are inclusive byte lengths; the default averages 4.
    """
    if not 0.0 <= absent_fraction < 1.0:
        raise ContractError("absent_fraction must be in [0, 1)")
    if categories < 1 or products_per_category < 1 or attrs_per_category < 1:
        raise ContractError("corpus dimensions must be positive")
    lo, hi = value_len
    if lo < 1 or hi < lo:
        raise ContractError("value_len must be (lo, hi) with 1 <= lo <= hi")
    rng = np.random.default_rng(seed)
    records: list[DatasetRecord] = []
    for c in range(categories):
        category = (_CATEGORY_POOL[c] if c < len(_CATEGORY_POOL)
                    else f"category{c}")
        names = [(_ATTR_POOL[i] if i < len(_ATTR_POOL) else f"attr{i}")
                 for i in range(attrs_per_category)]
        for p in range(products_per_category):
            doc_id = f"{category}-{p:03d}"
            labels: dict[str, str | None] = {}
            chunks = [f"The {category} unit {p}."]
            for attr in names:
                if rng.random() < absent_fraction:
                    labels[attr] = None
                    continue
                n = int(rng.integers(lo, hi + 1))
                value = "".join(_VALUE_CHARS[int(i)] for i in
                                rng.integers(0, len(_VALUE_CHARS), size=n))
                labels[attr] = value
                chunks.append(f"{attr} is {value}.")
            records.append(DatasetRecord(id=doc_id, category=category,
                                         text=" ".join(chunks), labels=labels))
    return records, ScriptTable.from_records(records)


# ------------------------------------------------------------------ parsing

_ROW_RE = re.compile(r'^\s*"([^"\n]+)"\s*:\s*(.*)$')


def _clean_value(raw: str) -> str | None:
    value = raw.strip()
    if value.endswith(","):
        value = value[:-1].rstrip()
    if len(value) >= 2 and value.startswith('"') and value.endswith('"'):
        value = value[1:-1]
    return None if value in ("", "null") else value


def parse_output(output, source) -> tuple[Mapping, int]:
    """Turn decoder output into the per-document value mapping.

    HPD results pass through directly (slots are read positionally, so
    there is nothing to parse). Baseline token output is parsed leniently
    line by line; every anomaly (an unparseable row, an unterminated or
    surplus block, a document whose block never appeared) bumps the
    warning count instead of raising, and whatever parsed cleanly before
    the damage is kept.
    """
    if isinstance(output, ExtractionResult):
        return {doc: dict(attrs) for doc, attrs in output.values.items()}, 0
    if not isinstance(source, ArPrompt):
        raise ContractError("token output needs the ArPrompt it came from")
    return _parse_ar_tokens(output, source)


def _parse_ar_tokens(token_ids: list[int], prompt: ArPrompt) -> tuple[Mapping, int]:
    text = detokenize_text(token_ids)
    attrs = prompt.attributes.names
    mapping: Mapping = {d.id: {a: None for a in attrs} for d in prompt.docs}
    warnings = 0
    open_mark = prompt.template.block_open
    close_mark = prompt.template.block_close

    blocks: list[dict[str, str | None]] = []
    current: dict[str, str | None] | None = None
    for line in text.split("\n"):
        if current is None:
            if open_mark and line.startswith(open_mark):
                current = {}
                line = line[len(open_mark):]
            elif line.strip():
                warnings += 1
                continue
            else:
                continue
        if close_mark and line.strip() == close_mark:
            blocks.append(current)
            current = None
            continue
        if not line.strip():
            continue
        m = _ROW_RE.match(line)
        if m is None:
            warnings += 1
            continue
        attr = m.group(1)
        if attr not in attrs:
            warnings += 1
            continue
        current[attr] = _clean_value(m.group(2))
    if current is not None:
        blocks.append(current)
        warnings += 1

    for doc, block in zip(prompt.docs, blocks):
        mapping[doc.id].update(block)
    if len(blocks) > len(prompt.docs):
        warnings += len(blocks) - len(prompt.docs)
    elif len(blocks) < len(prompt.docs):
        warnings += len(prompt.docs) - len(blocks)
    return mapping, warnings
