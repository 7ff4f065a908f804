"""Acceptance gate: every guarantee the package advertises, at full strength.

Each test runs one verification check at its full sample counts and
prints the check's PASS/FAIL line outside pytest's capture so the
one-line-per-criterion report always reaches the terminal. Tests run in
file order, which is the order the checks are defined in.
"""

from __future__ import annotations

import time

from hpd import verify


def _report(result, capfd) -> None:
    with capfd.disabled():
        print(f"\n{result.line()}", flush=True)
    assert result.ok, result.detail


def test_cached_decode_equals_full_recompute_within_a_minute(capfd):
    started = time.perf_counter()
    result = verify.check_cache_vs_recompute()
    elapsed = time.perf_counter() - started
    _report(result, capfd)
    assert elapsed < 60.0, f"recompute comparison took {elapsed:.1f}s"


def test_single_slot_decode_is_plain_greedy_decoding(capfd):
    _report(verify.check_single_slot_degeneracy(), capfd)


def test_first_step_logits_ignore_everything_after_the_anchor(capfd):
    _report(verify.check_first_step_independence(), capfd)


def test_training_mask_equals_replayed_decode_availability(capfd):
    _report(verify.check_mask_equivalence(), capfd)


def test_pass_accounting_is_consistent_and_matches_closed_forms(capfd):
    _report(verify.check_trace_consistency(), capfd)


def test_wide_prompts_save_at_least_tenfold_passes(capfd):
    _report(verify.check_pass_savings(), capfd)


def test_batched_decode_matches_single_prompt_decode(capfd):
    _report(verify.check_batch_isolation(), capfd)


def test_judge_metrics_and_cost_match_exact_arithmetic(capfd):
    _report(verify.check_judge_and_cost(), capfd)


def test_position_shift_and_chunked_prefill_stay_within_tolerance(capfd):
    _report(verify.check_rope_and_chunking(), capfd)


def test_scripted_pipeline_recovers_every_planted_value(capfd):
    _report(verify.check_end_to_end_scripted(), capfd)
