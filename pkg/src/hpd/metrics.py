"""Extraction quality metrics and serving-cost arithmetic."""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ContractError

DEFAULT_HOURLY_RATE = 30.13
DEFAULT_NUM_GPUS = 8


@dataclass(frozen=True)
class MetricsReport:
    precision: float
    recall: float
    f1: float
    tp: int = 0
    fp: int = 0
    fn: int = 0
    degenerate: bool = False

    def to_dict(self) -> dict:
        return {"precision": self.precision, "recall": self.recall,
                "f1": self.f1, "tp": self.tp, "fp": self.fp, "fn": self.fn,
                "degenerate": self.degenerate}


def normalize_value(value: str) -> str:
    return " ".join(value.split()).casefold()


def _harmonic(precision: float, recall: float) -> float:
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def exact_f1(pred: dict[str, dict[str, str | None]],
             gold: dict[str, dict[str, str | None]]) -> MetricsReport:
    """Exact-match F1 over the gold (document, attribute) universe.

    Values are compared after whitespace collapse and casefolding. Pairs
    where both sides are null are excluded from every count; a non-null
    mismatch charges both a false positive and a false negative.
    Predictions outside the gold universe count as false positives.
    """
    tp = fp = fn = 0
    for doc_id, gold_attrs in gold.items():
        pred_attrs = pred.get(doc_id, {})
        for attr, gold_value in gold_attrs.items():
            pred_value = pred_attrs.get(attr)
            if gold_value is None and pred_value is None:
                continue
            if pred_value is None:
                fn += 1
            elif gold_value is None:
                fp += 1
            elif normalize_value(pred_value) == normalize_value(gold_value):
                tp += 1
            else:
                fp += 1
                fn += 1
    for doc_id, pred_attrs in pred.items():
        for attr, pred_value in pred_attrs.items():
            if pred_value is None:
                continue
            if doc_id not in gold or attr not in gold[doc_id]:
                fp += 1
    degenerate = (tp + fp == 0) or (tp + fn == 0)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    return MetricsReport(precision=precision, recall=recall,
                         f1=_harmonic(precision, recall), tp=tp, fp=fp, fn=fn,
                         degenerate=degenerate)


@dataclass(frozen=True)
class JudgeCounts:
    """Five-way judgement tallies for the lenient scoring mode.

    correct and correct_null both credit the system; incorrect hurts both
    precision and recall, hallucinated only precision, missing only recall.
    """

    correct: int
    correct_null: int
    incorrect: int
    missing: int
    hallucinated: int

    _KEYS = ("C", "CN", "I", "M", "H")

    def __post_init__(self) -> None:
        for name in ("correct", "correct_null", "incorrect", "missing",
                     "hallucinated"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 0:
                raise ContractError(f"{name} must be a non-negative integer")

    @classmethod
    def from_dict(cls, obj: dict) -> "JudgeCounts":
        extra = set(obj) - set(cls._KEYS)
        if extra:
            raise ContractError(f"unknown judge count keys: {sorted(extra)}")
        missing = [k for k in cls._KEYS if k not in obj]
        if missing:
            raise ContractError(f"judge counts missing keys: {missing}")
        return cls(correct=obj["C"], correct_null=obj["CN"], incorrect=obj["I"],
                   missing=obj["M"], hallucinated=obj["H"])


def judge_f1(counts: JudgeCounts) -> MetricsReport:
    credit = counts.correct + counts.correct_null
    p_denom = credit + counts.hallucinated + counts.incorrect
    r_denom = credit + counts.missing + counts.incorrect
    precision = credit / p_denom if p_denom else 0.0
    recall = credit / r_denom if r_denom else 0.0
    return MetricsReport(precision=precision, recall=recall,
                         f1=_harmonic(precision, recall),
                         degenerate=(p_denom == 0 or r_denom == 0))


def cost_per_1k(products_per_second_per_gpu: float,
                hourly_rate: float = DEFAULT_HOURLY_RATE,
                num_gpus: int = DEFAULT_NUM_GPUS) -> float:
    """Dollars per thousand products at a given per-GPU throughput."""
    if products_per_second_per_gpu <= 0.0:
        raise ContractError("throughput must be positive")
    if hourly_rate < 0.0 or num_gpus < 1:
        raise ContractError("need hourly_rate >= 0 and num_gpus >= 1")
    per_gpu_second = (hourly_rate / num_gpus) / 3600.0
    return per_gpu_second / products_per_second_per_gpu * 1000.0


def rate_for_cost(cost: float, hourly_rate: float = DEFAULT_HOURLY_RATE,
                  num_gpus: int = DEFAULT_NUM_GPUS) -> float:
    """Per-GPU throughput needed to hit a target cost; inverse of cost_per_1k."""
    if cost <= 0.0:
        raise ContractError("cost must be positive")
    per_gpu_second = (hourly_rate / num_gpus) / 3600.0
    return per_gpu_second / cost * 1000.0
