"""Hyper-parallel value decoding on a verifiable desk-scale transformer."""

from .engine import (DecodeConfig, DecodeTrace, ExtractionResult, ar_decode,
                     ar_decode_batch, hpd_decode, hpd_prefill, hpd_step,
                     oracle_full_recompute, oracle_independent)
from .errors import CapacityError, ConfigError, ContractError, HpdError
from .masks import inference_mask, mask_equivalence_check, training_mask
from .metrics import JudgeCounts, MetricsReport, cost_per_1k, exact_f1, judge_f1
from .model import KvCache, Model, ModelConfig, forward, init_model
from .scheduler import (AttributeSet, Document, PromptTemplate,
                        SkeletonLayout, StackedPrompt, assign_position_ids,
                        build_ar_prompt, build_skeleton, stack_documents)
from .scripted import ScriptTable, scripted_next
from .tokens import BOS, DELIM, PAD, detokenize, detokenize_text, tokenize

__version__ = "0.1.0"

__all__ = [
    "AttributeSet", "BOS", "CapacityError", "ConfigError", "ContractError",
    "DELIM", "DecodeConfig", "DecodeTrace", "Document", "ExtractionResult",
    "HpdError", "JudgeCounts", "KvCache", "MetricsReport", "Model",
    "ModelConfig", "PAD", "PromptTemplate", "ScriptTable", "SkeletonLayout",
    "StackedPrompt", "__version__", "ar_decode", "ar_decode_batch",
    "assign_position_ids", "build_ar_prompt", "build_skeleton", "cost_per_1k",
    "detokenize", "detokenize_text", "exact_f1", "forward", "hpd_decode",
    "hpd_prefill", "hpd_step", "inference_mask", "init_model", "judge_f1",
    "mask_equivalence_check", "oracle_full_recompute", "oracle_independent",
    "scripted_next", "stack_documents", "tokenize", "training_mask",
]
