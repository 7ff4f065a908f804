"""Throughput sweep over prompt width and batch size, with CSV output."""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path

from .data import DatasetRecord
from .engine import DecodeConfig
from .errors import ContractError
from .metrics import DEFAULT_HOURLY_RATE, DEFAULT_NUM_GPUS, cost_per_1k
from .pipeline import run_extraction
from .scheduler import DEFAULT_INSTRUCTION, DEFAULT_TEMPLATE, PromptTemplate

CSV_FIELDS = ("j", "b", "mode", "products_per_s", "forward_passes", "tokens",
              "speedup")


@dataclass(frozen=True)
class BenchRow:
    j: int
    b: int
    mode: str
    products_per_s: float
    forward_passes: int
    tokens: int
    speedup: float

    def as_csv(self) -> list:
        return [self.j, self.b, self.mode, f"{self.products_per_s:.6g}",
                self.forward_passes, self.tokens, f"{self.speedup:.6g}"]

    def cost(self, hourly_rate: float = DEFAULT_HOURLY_RATE,
             num_gpus: int = DEFAULT_NUM_GPUS) -> float:
        return cost_per_1k(self.products_per_s, hourly_rate, num_gpus)


def bench_sweep(records: list[DatasetRecord], backend,
                sweep_docs: list[int], sweep_batch: list[int],
                config: DecodeConfig,
                instruction: str = DEFAULT_INSTRUCTION,
                template: PromptTemplate = DEFAULT_TEMPLATE) -> list[BenchRow]:
    """Run the baseline once, then the parallel mode over the full grid.

    The baseline row decodes one document per prompt at the widest batch
    in sweep_batch; its per-product forward-pass count anchors the speedup
    column, so its own speedup is exactly 1. Wall clock covers the decode
    loops only.
    """
    if not sweep_docs or not sweep_batch:
        raise ContractError("sweep_docs and sweep_batch must be non-empty")
    if any(j < 1 for j in sweep_docs) or any(b < 1 for b in sweep_batch):
        raise ContractError("sweep values must be positive")
    products = len(records)
    if products == 0:
        raise ContractError("no records to benchmark")

    ar_config = replace(config, docs_per_prompt=1, batch_size=max(sweep_batch))
    ar_run = run_extraction(records, backend, "ar", ar_config,
                            instruction=instruction, template=template)
    ar_passes_per_product = ar_run.trace.forward_passes / products
    rows = [BenchRow(j=1, b=ar_config.batch_size, mode="ar",
                     products_per_s=_rate(products, ar_run.trace.wall_clock_seconds),
                     forward_passes=ar_run.trace.forward_passes,
                     tokens=ar_run.trace.emitted_total, speedup=1.0)]

    for j in sweep_docs:
        for b in sweep_batch:
            cfg = replace(config, docs_per_prompt=j, batch_size=b)
            run = run_extraction(records, backend, "hpd", cfg,
                                 instruction=instruction, template=template)
            passes_per_product = run.trace.forward_passes / products
            rows.append(BenchRow(
                j=j, b=b, mode="hpd",
                products_per_s=_rate(products, run.trace.wall_clock_seconds),
                forward_passes=run.trace.forward_passes,
                tokens=run.trace.emitted_total,
                speedup=ar_passes_per_product / passes_per_product))
    return rows


def _rate(products: int, seconds: float) -> float:
    return products / max(seconds, 1e-9)


def write_csv(path: str | Path, rows: list[BenchRow]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_FIELDS)
        for row in rows:
            writer.writerow(row.as_csv())


def read_csv(path: str | Path) -> list[BenchRow]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_FIELDS:
            raise ContractError(f"{path}: unexpected CSV header")
        return [BenchRow(j=int(r["j"]), b=int(r["b"]), mode=r["mode"],
                         products_per_s=float(r["products_per_s"]),
                         forward_passes=int(r["forward_passes"]),
                         tokens=int(r["tokens"]), speedup=float(r["speedup"]))
                for r in reader]
