"""Command-line entry points."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .bench import bench_sweep, write_csv
from .data import (attribute_sets, gold_mapping, load_jsonl, load_results,
                   save_jsonl, save_results, synth_corpus)
from .engine import DecodeConfig
from .errors import HpdError
from .metrics import (DEFAULT_HOURLY_RATE, DEFAULT_NUM_GPUS, JudgeCounts,
                      cost_per_1k, exact_f1, judge_f1)
from .model import ModelConfig, init_model
from .pipeline import run_extraction
from .scheduler import DEFAULT_INSTRUCTION, PromptTemplate
from .scripted import ScriptTable
from .verify import run_all


def _int_list(text: str) -> list[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated ints: {text!r}")


def _add_synth_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--categories", type=int, default=2)
    p.add_argument("--products", type=int, default=6,
                   help="products per category")
    p.add_argument("--attrs", type=int, default=12,
                   help="attributes per category")
    p.add_argument("--absent", type=float, default=0.2,
                   help="fraction of attributes left unstated (gold null)")
    p.add_argument("--corpus-seed", type=int, default=0)


def _synth_from_args(args) -> tuple[list, ScriptTable]:
    return synth_corpus(seed=args.corpus_seed, categories=args.categories,
                        products_per_category=args.products,
                        attrs_per_category=args.attrs,
                        absent_fraction=args.absent)


def _load_corpus(args):
    """Records plus the script table backing the scripted backend."""
    if args.dataset:
        records = load_jsonl(args.dataset)
        return records, ScriptTable.from_records(records)
    return _synth_from_args(args)


def _decode_config(args) -> DecodeConfig:
    return DecodeConfig(k_max=args.kmax, docs_per_prompt=args.docs_per_prompt,
                        batch_size=args.batch, temperature=args.temperature,
                        seed=args.seed, max_new_tokens=args.max_new_tokens)


def _backend_from_args(args, script: ScriptTable):
    if args.backend == "scripted":
        if not script.entries:
            raise HpdError("scripted backend needs labeled records")
        return script
    return init_model(ModelConfig(seed=args.model_seed))


def _template_from_args(args) -> PromptTemplate | None:
    return PromptTemplate.from_file(args.template) if args.template else None


def _cmd_extract(args) -> int:
    records, script = _load_corpus(args)
    backend = _backend_from_args(args, script)
    template = _template_from_args(args)
    kwargs = {"instruction": args.instruction}
    if template is not None:
        kwargs["template"] = template
    run = run_extraction(records, backend, args.mode, _decode_config(args),
                         **kwargs)
    if args.out:
        save_results(args.out, run.values, run.trace.to_dict())
        print(f"wrote {args.out}")
    trace = run.trace
    print(f"mode={args.mode} products={len(records)} "
          f"passes={trace.forward_passes} tokens={trace.emitted_total} "
          f"steps={trace.steps_excluding_delimiter} "
          f"peak_cache={trace.peak_cache_entries} "
          f"wall={trace.wall_clock_seconds:.3f}s warnings={run.warnings}")
    if any(rec.labels for rec in records):
        rep = exact_f1(run.values, gold_mapping(records))
        print(f"exact match vs gold: precision={rep.precision:.4f} "
              f"recall={rep.recall:.4f} f1={rep.f1:.4f}")
    return 0


def _cmd_bench(args) -> int:
    records, script = _load_corpus(args)
    backend = _backend_from_args(args, script)
    config = DecodeConfig(k_max=args.kmax, temperature=args.temperature,
                          seed=args.seed, max_new_tokens=args.max_new_tokens)
    rows = bench_sweep(records, backend, args.sweep_docs, args.sweep_batch,
                       config, instruction=args.instruction)
    write_csv(args.csv, rows)
    print(f"wrote {args.csv}")
    if args.plot != "none":
        from .plots import render_bench_figure
        plot_path = (Path(args.csv).with_suffix(".png")
                     if args.plot == "auto" else Path(args.plot))
        render_bench_figure(rows, plot_path)
        print(f"wrote {plot_path}")
    header = f"{'j':>3} {'b':>3} {'mode':<5} {'prod/s':>12} " \
             f"{'passes':>8} {'tokens':>8} {'speedup':>8} {'$/1k':>8}"
    print(header)
    for row in rows:
        cost = row.cost(args.hourly_rate, args.num_gpus)
        print(f"{row.j:>3} {row.b:>3} {row.mode:<5} "
              f"{row.products_per_s:>12.3f} {row.forward_passes:>8} "
              f"{row.tokens:>8} {row.speedup:>8.2f} {cost:>8.4f}")
    return 0


def _cmd_verify(args) -> int:
    results = run_all(fast=args.fast)
    for result in results:
        print(result.line())
    failed = sum(1 for r in results if not r.ok)
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return 1 if failed else 0


def _cmd_score(args) -> int:
    pred, _trace = load_results(args.pred)
    gold = gold_mapping(load_jsonl(args.gold))
    rep = exact_f1(pred, gold)
    print(json.dumps(rep.to_dict(), indent=2))
    return 0


def _cmd_judge_score(args) -> int:
    with open(args.counts, "r", encoding="utf-8") as fh:
        counts = JudgeCounts.from_dict(json.load(fh))
    rep = judge_f1(counts)
    out = rep.to_dict()
    if args.rate is not None:
        out["cost_per_1k"] = cost_per_1k(args.rate, args.hourly_rate,
                                         args.num_gpus)
    print(json.dumps(out, indent=2))
    return 0


def _cmd_synth(args) -> int:
    records, _script = _synth_from_args(args)
    save_jsonl(args.out, records)
    n_labels = sum(len(r.labels or {}) for r in records)
    print(f"wrote {args.out}: {len(records)} records, {n_labels} labeled slots, "
          f"{len(attribute_sets(records))} categories")
    return 0


def _add_decode_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--kmax", type=int, default=30,
                   help="position budget per value slot")
    p.add_argument("--seed", type=int, default=0, help="sampling seed")
    p.add_argument("--temperature", type=float, default=None,
                   help="sampling temperature (default: greedy)")
    p.add_argument("--max-new-tokens", type=int, default=None)
    p.add_argument("--backend", choices=("tiny", "scripted"),
                   default="scripted")
    p.add_argument("--model-seed", type=int, default=0,
                   help="weight init seed for the tiny backend")
    p.add_argument("--instruction", default=DEFAULT_INSTRUCTION)
    p.add_argument("--dataset", default=None, help="JSONL corpus path")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hpd",
        description="Parallel attribute-value decoding with a verifiable "
                    "tiny-model testbed")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="run extraction over a corpus")
    _add_decode_args(p)
    _add_synth_args(p)
    p.add_argument("--mode", choices=("ar", "hpd"), default="hpd")
    p.add_argument("--docs-per-prompt", type=int, default=6)
    p.add_argument("--batch", type=int, default=1)
    p.add_argument("--template", default=None,
                   help="prompt template file (sectioned text)")
    p.add_argument("--out", default=None, help="results JSON path")
    p.set_defaults(func=_cmd_extract)

    p = sub.add_parser("bench", help="sweep prompt width and batch size")
    _add_decode_args(p)
    _add_synth_args(p)
    p.add_argument("--sweep-docs", type=_int_list, default=[1, 2, 4, 6])
    p.add_argument("--sweep-batch", type=_int_list, default=[1, 4])
    p.add_argument("--csv", default="bench.csv")
    p.add_argument("--plot", default="auto",
                   help="figure path, or 'none' to skip rendering")
    p.add_argument("--hourly-rate", type=float, default=DEFAULT_HOURLY_RATE)
    p.add_argument("--num-gpus", type=int, default=DEFAULT_NUM_GPUS)
    p.set_defaults(func=_cmd_bench)

    p = sub.add_parser("verify", help="run the correctness checks")
    p.add_argument("--fast", action="store_true",
                   help="smaller sample counts for a quick look")
    p.set_defaults(func=_cmd_verify)

    p = sub.add_parser("score", help="exact-match F1 of saved results")
    p.add_argument("--pred", required=True, help="results JSON from extract")
    p.add_argument("--gold", required=True, help="labeled JSONL corpus")
    p.set_defaults(func=_cmd_score)

    p = sub.add_parser("judge-score", help="precision/recall/F1 from judge counts")
    p.add_argument("--counts", required=True,
                   help="JSON file with keys C, CN, I, M, H")
    p.add_argument("--rate", type=float, default=None,
                   help="products/s/GPU; adds cost_per_1k to the output")
    p.add_argument("--hourly-rate", type=float, default=DEFAULT_HOURLY_RATE)
    p.add_argument("--num-gpus", type=int, default=DEFAULT_NUM_GPUS)
    p.set_defaults(func=_cmd_judge_score)

    p = sub.add_parser("synth", help="write a synthetic labeled corpus")
    _add_synth_args(p)
    p.add_argument("--out", required=True, help="JSONL output path")
    p.set_defaults(func=_cmd_synth)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except HpdError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
