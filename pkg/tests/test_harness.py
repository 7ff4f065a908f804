from __future__ import annotations

import pytest

from hpd.bench import BenchRow, bench_sweep, read_csv, write_csv
from hpd.data import (DatasetRecord, attribute_sets, gold_mapping, load_jsonl,
                      load_results, parse_output, save_jsonl, save_results,
                      synth_corpus)
from hpd.engine import DecodeConfig, ExtractionResult
from hpd.errors import ContractError
from hpd.metrics import (JudgeCounts, cost_per_1k, exact_f1, judge_f1,
                         normalize_value, rate_for_cost)
from hpd.pipeline import run_extraction
from hpd.scheduler import AttributeSet, Document, build_ar_prompt
from hpd.scripted import ScriptTable
from hpd.tokens import tokenize


def _ar_prompt(attr_names=("brand", "size"), ndocs=1):
    attrs = AttributeSet(category="c", names=tuple(attr_names))
    docs = tuple(Document(id=f"c-{i}", category="c", text=f"item {i}")
                 for i in range(ndocs))
    return build_ar_prompt("Extract.", docs, attrs)


# ------------------------------------------------------------------- dataset


def test_load_jsonl_happy_path(tmp_path):
    path = tmp_path / "corpus.jsonl"
    path.write_text(
        '{"id": "a-1", "category": "mugs", "text": "blue mug",'
        ' "labels": {"color": "blue", "size": null}, "note": 7}\n'
        "\n"
        '{"id": "a-2", "category": "mugs", "text": "plain mug"}\n',
        encoding="utf-8")
    records = load_jsonl(path)
    assert [r.id for r in records] == ["a-1", "a-2"]
    assert records[0].labels == {"color": "blue", "size": None}
    assert records[0].extra == {"note": 7}
    assert records[1].labels is None


def test_load_jsonl_reports_the_offending_line(tmp_path):
    ok = '{"id": "a-1", "category": "c", "text": "t"}\n'
    cases = [
        (ok + "not json\n", "2: invalid JSON"),
        ("[1, 2]\n", "1: record must be an object"),
        ('{"id": "x", "category": "c"}\n', "'text'"),
        ('{"id": "", "category": "c", "text": "t"}\n', "'id'"),
        ('{"id": "_x", "category": "c", "text": "t"}\n', "may not start"),
        (ok + ok, "duplicate id 'a-1'"),
        ('{"id": "x", "category": "c", "text": "t", "labels": [1]}\n',
         "labels must be an object"),
        ('{"id": "x", "category": "c", "text": "t", "labels": {"a": 3}}\n',
         "must be string or null"),
    ]
    for i, (content, hint) in enumerate(cases):
        path = tmp_path / f"bad{i}.jsonl"
        path.write_text(content, encoding="utf-8")
        with pytest.raises(ContractError) as exc:
            load_jsonl(path)
        assert hint in str(exc.value)


def test_save_load_jsonl_roundtrip(tmp_path):
    records = [DatasetRecord(id="r-1", category="c", text="hello",
                             labels={"a": "x", "b": None}, extra={"k": [1]}),
               DatasetRecord(id="r-2", category="c", text="bye")]
    path = tmp_path / "out.jsonl"
    save_jsonl(path, records)
    back = load_jsonl(path)
    assert [(r.id, r.category, r.text, r.labels, r.extra) for r in back] == \
        [(r.id, r.category, r.text, r.labels, r.extra) for r in records]


def test_results_file_roundtrip(tmp_path):
    values = {"d-1": {"a": "x", "b": None}}
    trace = {"mode": "hpd", "forward_passes": 3}
    path = tmp_path / "results.json"
    save_results(path, values, trace)
    loaded_values, loaded_trace = load_results(path)
    assert loaded_values == values
    assert loaded_trace == trace

    bare = tmp_path / "list.json"
    bare.write_text("[1]", encoding="utf-8")
    with pytest.raises(ContractError):
        load_results(bare)


def test_synth_corpus_is_deterministic_and_plants_values():
    records, script = synth_corpus(seed=9)
    again, _ = synth_corpus(seed=9)
    assert [(r.id, r.text, r.labels) for r in records] == \
        [(r.id, r.text, r.labels) for r in again]

    nulls = total = 0
    for rec in records:
        for attr, value in rec.labels.items():
            total += 1
            if value is None:
                nulls += 1
                assert f"{attr} is" not in rec.text
            else:
                assert f"{attr} is {value}." in rec.text
                assert 2 <= len(value) <= 6
                assert script.entries[(rec.id, attr)] == value
    assert 0.05 < nulls / total < 0.4
    assert len({r.category for r in records}) == 2


def test_synth_corpus_validation():
    for kwargs in (dict(absent_fraction=1.0), dict(categories=0),
                   dict(value_len=(0, 3)), dict(value_len=(4, 2))):
        with pytest.raises(ContractError):
            synth_corpus(**kwargs)


def test_attribute_sets_first_seen_order():
    records = [
        DatasetRecord(id="1", category="c", text="t", labels={"b": "1", "a": "2"}),
        DatasetRecord(id="2", category="c", text="t", labels={"c": "3", "a": "4"}),
    ]
    sets_ = attribute_sets(records)
    assert sets_["c"].names == ("b", "a", "c")
    assert gold_mapping(records)["2"] == {"c": "3", "a": "4"}

    unlabeled = [DatasetRecord(id="3", category="d", text="t")]
    with pytest.raises(ContractError):
        attribute_sets(unlabeled)


def test_script_table_from_records_skips_nulls():
    records = [DatasetRecord(id="1", category="c", text="t",
                             labels={"a": "x", "b": None})]
    script = ScriptTable.from_records(records)
    assert script.entries == {("1", "a"): "x"}
    assert script.target_tokens("1", "b") == []
    assert script.target_tokens("1", "a") == tokenize("x")


# ------------------------------------------------------------------- parsing


def test_parse_output_passthrough_copies():
    result = ExtractionResult(values={"d": {"a": "x"}})
    mapping, warnings = parse_output(result, None)
    assert warnings == 0
    mapping["d"]["a"] = "changed"
    assert result.values["d"]["a"] == "x"


def test_parse_output_token_list_needs_its_prompt():
    with pytest.raises(ContractError):
        parse_output([65, 66], None)


def test_ar_parse_clean_and_lenient_values():
    prompt = _ar_prompt()
    cases = [
        ('{"brand": acme\n"size": null\n}', {"brand": "acme", "size": None}, 0),
        ('{"brand": "ac me",\n"size": 7,\n}', {"brand": "ac me", "size": "7"}, 0),
        ('{"brand": ""\n\n"size": null\n}', {"brand": None, "size": None}, 0),
    ]
    for text, expected, warn in cases:
        mapping, warnings = parse_output(tokenize(text), prompt)
        assert mapping == {"c-0": expected}, text
        assert warnings == warn, text


def test_ar_parse_counts_anomalies_without_raising():
    prompt = _ar_prompt()
    cases = [
        ('{"brand": acme\n"size": 4', {"brand": "acme", "size": "4"}, 1),
        ('{"brand": acme\n"flavor": x\n"size": null\n}',
         {"brand": "acme", "size": None}, 1),
        ('{"brand": acme\nnot a row\n"size": null\n}',
         {"brand": "acme", "size": None}, 1),
        ("", {"brand": None, "size": None}, 1),
        ('hello\n{"brand": acme\n"size": null\n}',
         {"brand": "acme", "size": None}, 1),
        ('{"brand": a\n}\n{"brand": b\n}', {"brand": "a", "size": None}, 1),
    ]
    for text, expected, warn in cases:
        mapping, warnings = parse_output(tokenize(text), prompt)
        assert mapping == {"c-0": expected}, text
        assert warnings == warn, text


def test_ar_parse_assigns_blocks_to_documents_in_order():
    prompt = _ar_prompt(attr_names=("brand",), ndocs=2)
    mapping, warnings = parse_output(
        tokenize('{"brand": a\n}\n{"brand": b\n}'), prompt)
    assert mapping == {"c-0": {"brand": "a"}, "c-1": {"brand": "b"}}
    assert warnings == 0


# ------------------------------------------------------------------- metrics


def test_normalize_value_collapses_space_and_case():
    assert normalize_value("  Mixed   Case\tvalue ") == "mixed case value"


def test_exact_f1_frozen_mixed_case():
    gold = {"d": {"a": "x", "b": "y", "c": None, "d": None, "e": "w"}}
    pred = {"d": {"a": " X ", "b": "z", "c": "q", "d": None, "e": None}}
    report = exact_f1(pred, gold)
    assert (report.tp, report.fp, report.fn) == (1, 2, 2)
    assert report.precision == pytest.approx(1 / 3)
    assert report.recall == pytest.approx(1 / 3)
    assert report.f1 == pytest.approx(1 / 3)
    assert not report.degenerate


def test_exact_f1_out_of_universe_predictions_are_false_positives():
    gold = {"d": {"a": "x"}}
    pred = {"d": {"a": "x", "zz": "extra"}, "other": {"a": "v", "b": None}}
    report = exact_f1(pred, gold)
    assert (report.tp, report.fp, report.fn) == (1, 2, 0)


def test_exact_f1_degenerate_cases():
    gold = {"d": {"a": "x"}}
    report = exact_f1({"d": {"a": None}}, gold)
    assert report.degenerate and report.f1 == 0.0
    both_null = exact_f1({"d": {"a": None}}, {"d": {"a": None}})
    assert both_null.degenerate
    assert (both_null.tp, both_null.fp, both_null.fn) == (0, 0, 0)


def test_judge_f1_worked_example():
    counts = JudgeCounts(correct=8, correct_null=2, incorrect=1, missing=1,
                         hallucinated=0)
    report = judge_f1(counts)
    assert report.precision == pytest.approx(10 / 11, abs=1e-12)
    assert report.recall == pytest.approx(10 / 12, abs=1e-12)
    assert report.f1 == pytest.approx(20 / 23, abs=1e-12)


def test_judge_counts_from_dict_validation():
    good = {"C": 1, "CN": 0, "I": 0, "M": 0, "H": 0}
    assert judge_f1(JudgeCounts.from_dict(good)).f1 == 1.0
    for bad in ({"C": 1}, {**good, "X": 1}, {**good, "C": -1},
                {**good, "C": 1.5}):
        with pytest.raises(ContractError):
            JudgeCounts.from_dict(bad)
    assert judge_f1(JudgeCounts.from_dict(
        {k: 0 for k in ("C", "CN", "I", "M", "H")})).degenerate


def test_cost_per_1k_bracket_and_inverse():
    cost = cost_per_1k(1.17, 30.13, 8)
    assert 0.885 <= cost <= 0.905
    assert cost_per_1k(1.17) == cost
    assert rate_for_cost(cost, 30.13, 8) == pytest.approx(1.17, rel=1e-12)
    for call in (lambda: cost_per_1k(0.0), lambda: cost_per_1k(1.0, -1.0),
                 lambda: cost_per_1k(1.0, 1.0, 0), lambda: rate_for_cost(0.0)):
        with pytest.raises(ContractError):
            call()


# ------------------------------------------------------- pipeline and bench


def test_run_extraction_scripted_recovers_all_labels():
    records, script = synth_corpus(seed=3, categories=2,
                                   products_per_category=4,
                                   attrs_per_category=5)
    gold = gold_mapping(records)
    config = DecodeConfig(k_max=30, docs_per_prompt=2, batch_size=2)

    hpd_run = run_extraction(records, script, "hpd", config)
    assert exact_f1(hpd_run.values, gold).f1 == 1.0
    assert hpd_run.warnings == 0
    assert hpd_run.truncated == set()
    assert hpd_run.trace.mode == "hpd"

    ar_run = run_extraction(records, script, "ar", config)
    assert exact_f1(ar_run.values, gold).f1 == 1.0
    assert ar_run.warnings == 0
    assert ar_run.trace.forward_passes > hpd_run.trace.forward_passes


def test_run_extraction_validation():
    records, script = synth_corpus(seed=1, categories=1,
                                   products_per_category=1,
                                   attrs_per_category=2)
    config = DecodeConfig(k_max=30)
    with pytest.raises(ContractError):
        run_extraction(records, script, "turbo", config)
    with pytest.raises(ContractError):
        run_extraction([], script, "hpd", config)


def test_bench_sweep_scripted_grid():
    records, script = synth_corpus(seed=5, categories=1,
                                   products_per_category=4,
                                   attrs_per_category=6)
    rows = bench_sweep(records, script, [2, 4], [1, 2], DecodeConfig(k_max=30))
    assert len(rows) == 5
    base = rows[0]
    assert (base.mode, base.j, base.b, base.speedup) == ("ar", 1, 2, 1.0)
    for row in rows[1:]:
        assert row.mode == "hpd"
        assert row.speedup == pytest.approx(
            base.forward_passes / row.forward_passes)
        assert row.speedup > 1.0
        assert row.products_per_s > 0.0
        assert row.cost(30.13, 8) > 0.0


def test_bench_sweep_validation():
    records, script = synth_corpus(seed=5, categories=1,
                                   products_per_category=2,
                                   attrs_per_category=2)
    config = DecodeConfig(k_max=30)
    for docs, batch in (([], [1]), ([1], []), ([0], [1]), ([1], [0])):
        with pytest.raises(ContractError):
            bench_sweep(records, script, docs, batch, config)
    with pytest.raises(ContractError):
        bench_sweep([], script, [1], [1], config)


def test_bench_csv_roundtrip(tmp_path):
    rows = [BenchRow(j=1, b=4, mode="ar", products_per_s=123.456,
                     forward_passes=500, tokens=520, speedup=1.0),
            BenchRow(j=6, b=4, mode="hpd", products_per_s=4567.89,
                     forward_passes=30, tokens=520, speedup=16.6667)]
    path = tmp_path / "bench.csv"
    write_csv(path, rows)
    back = read_csv(path)
    assert len(back) == 2
    for a, b in zip(back, rows):
        assert (a.j, a.b, a.mode, a.forward_passes, a.tokens) == \
            (b.j, b.b, b.mode, b.forward_passes, b.tokens)
        assert a.products_per_s == pytest.approx(b.products_per_s, rel=1e-4)
        assert a.speedup == pytest.approx(b.speedup, rel=1e-4)

    tampered = tmp_path / "bad.csv"
    tampered.write_text("x,y\n1,2\n", encoding="utf-8")
    with pytest.raises(ContractError):
        read_csv(tampered)


def test_render_bench_figure_writes_png(tmp_path):
    from hpd.plots import render_bench_figure
    rows = [BenchRow(j=1, b=2, mode="ar", products_per_s=10.0,
                     forward_passes=100, tokens=100, speedup=1.0),
            BenchRow(j=2, b=1, mode="hpd", products_per_s=50.0,
                     forward_passes=20, tokens=100, speedup=5.0),
            BenchRow(j=4, b=1, mode="hpd", products_per_s=80.0,
                     forward_passes=12, tokens=100, speedup=8.3),
            BenchRow(j=2, b=2, mode="hpd", products_per_s=60.0,
                     forward_passes=20, tokens=100, speedup=5.0),
            BenchRow(j=4, b=2, mode="hpd", products_per_s=90.0,
                     forward_passes=12, tokens=100, speedup=8.3)]
    out = render_bench_figure(rows, tmp_path / "bench.png")
    data = out.read_bytes()
    assert data[:8] == b"\x89PNG\r\n\x1a\n"
