from __future__ import annotations

import argparse
import json

import pytest

from hpd.cli import _int_list, main


def _synth(tmp_path, name="corpus.jsonl", **knobs):
    path = tmp_path / name
    argv = ["synth", "--out", str(path), "--categories", "1",
            "--products", "3", "--attrs", "4", "--corpus-seed", "2"]
    for flag, value in knobs.items():
        argv += [f"--{flag}", str(value)]
    assert main(argv) == 0
    return path


def test_synth_extract_score_pipeline(tmp_path, capsys):
    corpus = _synth(tmp_path)
    assert "wrote" in capsys.readouterr().out

    results = tmp_path / "results.json"
    code = main(["extract", "--dataset", str(corpus), "--mode", "hpd",
                 "--backend", "scripted", "--docs-per-prompt", "2",
                 "--batch", "2", "--out", str(results)])
    out = capsys.readouterr().out
    assert code == 0
    assert "mode=hpd" in out
    assert "f1=1.0000" in out
    assert results.exists()

    assert main(["score", "--pred", str(results), "--gold", str(corpus)]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["f1"] == 1.0
    assert not report["degenerate"]


def test_extract_ar_mode(tmp_path, capsys):
    corpus = _synth(tmp_path)
    capsys.readouterr()
    assert main(["extract", "--dataset", str(corpus), "--mode", "ar",
                 "--backend", "scripted"]) == 0
    out = capsys.readouterr().out
    assert "mode=ar" in out
    assert "f1=1.0000" in out


def test_extract_tiny_backend_smoke(tmp_path, capsys):
    corpus = _synth(tmp_path, name="small.jsonl", attrs="2", products="1")
    capsys.readouterr()
    assert main(["extract", "--dataset", str(corpus), "--backend", "tiny",
                 "--kmax", "4"]) == 0
    assert "mode=hpd" in capsys.readouterr().out


def test_extract_with_template_file(tmp_path, capsys):
    corpus = _synth(tmp_path)
    template = tmp_path / "template.txt"
    template.write_text("[prompt]\n{instruction}\n{documents}\n{outputs}\n"
                        "[row]\n{attribute} = {value}\n", encoding="utf-8")
    capsys.readouterr()
    assert main(["extract", "--dataset", str(corpus), "--backend", "scripted",
                 "--template", str(template)]) == 0
    assert "f1=1.0000" in capsys.readouterr().out


def test_judge_score_with_rate(tmp_path, capsys):
    counts = tmp_path / "counts.json"
    counts.write_text(json.dumps({"C": 8, "CN": 2, "I": 1, "M": 1, "H": 0}),
                      encoding="utf-8")
    assert main(["judge-score", "--counts", str(counts),
                 "--rate", "1.17"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["f1"] == pytest.approx(20 / 23, abs=1e-9)
    assert 0.885 <= report["cost_per_1k"] <= 0.905


def test_bench_writes_csv_table_and_figure(tmp_path, capsys):
    csv_path = tmp_path / "bench.csv"
    png_path = tmp_path / "bench-figure.png"
    code = main(["bench", "--categories", "1", "--products", "3",
                 "--attrs", "3", "--sweep-docs", "1,3", "--sweep-batch", "1",
                 "--csv", str(csv_path), "--plot", str(png_path)])
    out = capsys.readouterr().out
    assert code == 0
    assert csv_path.exists()
    assert png_path.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
    assert "speedup" in out
    lines = csv_path.read_text(encoding="utf-8").strip().splitlines()
    assert len(lines) == 4


def test_bench_plot_none_skips_the_figure(tmp_path, capsys):
    csv_path = tmp_path / "bench.csv"
    assert main(["bench", "--categories", "1", "--products", "2",
                 "--attrs", "2", "--sweep-docs", "2", "--sweep-batch", "1",
                 "--csv", str(csv_path), "--plot", "none"]) == 0
    capsys.readouterr()
    assert csv_path.exists()
    assert not csv_path.with_suffix(".png").exists()


def test_contract_failures_exit_nonzero(tmp_path, capsys):
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"id": "a", "category": "c", "text": "t"}\n'
                   '{"id": "a", "category": "c", "text": "t"}\n',
                   encoding="utf-8")
    assert main(["extract", "--dataset", str(bad)]) == 1
    assert "duplicate id" in capsys.readouterr().err

    unlabeled = tmp_path / "unlabeled.jsonl"
    unlabeled.write_text('{"id": "a", "category": "c", "text": "t"}\n',
                         encoding="utf-8")
    assert main(["extract", "--dataset", str(unlabeled)]) == 1
    assert "labeled records" in capsys.readouterr().err


def test_int_list_parsing():
    assert _int_list("1,2, 6") == [1, 2, 6]
    with pytest.raises(argparse.ArgumentTypeError):
        _int_list("1,x")


def test_verify_fast_runs_every_check(capsys):
    assert main(["verify", "--fast"]) == 0
    out = capsys.readouterr().out
    assert "10/10 checks passed" in out
    assert out.count("PASS") == 10
