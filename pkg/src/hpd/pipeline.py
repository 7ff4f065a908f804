"""Corpus-level extraction runs: chunking, batching, and result merging."""

from __future__ import annotations

from dataclasses import dataclass, field

from .data import DatasetRecord, attribute_sets, parse_output
from .engine import DecodeConfig, DecodeTrace, ar_decode_batch, hpd_decode
from .errors import ContractError
from .scheduler import (DEFAULT_INSTRUCTION, DEFAULT_TEMPLATE, Document,
                        PromptTemplate, build_ar_prompt, stack_documents)

Mapping = dict[str, dict[str, str | None]]


@dataclass
class RunResult:
    values: Mapping
    trace: DecodeTrace
    warnings: int = 0
    truncated: set[tuple[str, str]] = field(default_factory=set)


def _chunked(items: list, size: int) -> list[list]:
    return [items[i:i + size] for i in range(0, len(items), size)]


def _grouped(records: list[DatasetRecord]) -> list[tuple[str, list[Document]]]:
    order: list[str] = []
    docs: dict[str, list[Document]] = {}
    for rec in records:
        if rec.category not in docs:
            order.append(rec.category)
            docs[rec.category] = []
        docs[rec.category].append(
            Document(id=rec.id, category=rec.category, text=rec.text))
    return [(category, docs[category]) for category in order]


def run_extraction(records: list[DatasetRecord], backend, mode: str,
                   config: DecodeConfig,
                   instruction: str = DEFAULT_INSTRUCTION,
                   template: PromptTemplate = DEFAULT_TEMPLATE) -> RunResult:
    """Extract every record's attributes with the requested decode mode.

    Records are grouped by category, chunked to config.docs_per_prompt
    documents per prompt, and prompts are decoded config.batch_size at a
    time. Traces from all batches merge into one; the wall clock covers
    decode work only, never prompt assembly or parsing.
    """
    if mode not in ("ar", "hpd"):
        raise ContractError(f"unknown mode {mode!r}; expected 'ar' or 'hpd'")
    if not records:
        raise ContractError("no records to extract from")
    attrs = attribute_sets(records)
    result = RunResult(values={}, trace=DecodeTrace(mode=mode))

    if mode == "hpd":
        prompts = [stack_documents(instruction, chunk, attrs[category],
                                   config.k_max, template)
                   for category, docs in _grouped(records)
                   for chunk in _chunked(docs, config.docs_per_prompt)]
        for batch in _chunked(prompts, config.batch_size):
            outputs, trace = hpd_decode(backend, batch, config)
            result.trace.merge(trace)
            for out in outputs:
                mapping, _ = parse_output(out, None)
                result.values.update(mapping)
                result.truncated.update(out.truncated)
        return result

    prompts = [build_ar_prompt(instruction, chunk, attrs[category], template)
               for category, docs in _grouped(records)
               for chunk in _chunked(docs, config.docs_per_prompt)]
    for batch in _chunked(prompts, config.batch_size):
        outputs, trace = ar_decode_batch(backend, batch, config)
        result.trace.merge(trace)
        for prompt, tokens in zip(batch, outputs):
            mapping, warnings = parse_output(tokens, prompt)
            result.values.update(mapping)
            result.warnings += warnings
    return result
