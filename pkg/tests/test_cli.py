"""CLI: subcommand wiring, exit codes, config precedence, artifact writing."""

from __future__ import annotations

import json

import pytest

from intentbench.cli import main
from intentbench.gguf import GgmlQuantType, GgufValueType, KvPair, TensorSpec, write_fixture_gguf


def _gen(tmp_path, name="ds.jsonl", n=30, extra=()):
    out = tmp_path / name
    code = main(["gen", "--n", str(n), "--seed", "42", "--out", str(out), *extra])
    assert code == 0
    return out


# ---------------------------------------------------------------------- gen

def test_gen_writes_expected_lines(tmp_path, capsys):
    out = _gen(tmp_path, n=30)
    lines = out.read_text(encoding="utf-8").splitlines()
    assert len(lines) == 30
    assert all(json.loads(line)["output"]["quantity"] >= 1 for line in lines)
    assert "wrote 30 examples" in capsys.readouterr().out


def test_gen_is_deterministic(tmp_path):
    a = _gen(tmp_path, "a.jsonl", n=60)
    b = _gen(tmp_path, "b.jsonl", n=60)
    assert a.read_bytes() == b.read_bytes()


def test_gen_seed_changes_output(tmp_path):
    a = _gen(tmp_path, "a.jsonl", n=30)
    out = tmp_path / "c.jsonl"
    assert main(["gen", "--n", "30", "--seed", "43", "--out", str(out)]) == 0
    assert a.read_bytes() != out.read_bytes()


def test_gen_split_outputs(tmp_path):
    train = tmp_path / "train.jsonl"
    val = tmp_path / "val.jsonl"
    code = main([
        "gen", "--n", "50", "--seed", "1", "--out", str(tmp_path / "all.jsonl"),
        "--train-out", str(train), "--val-out", str(val), "--train-fraction", "0.9",
    ])
    assert code == 0
    assert len(train.read_text().splitlines()) == 45
    assert len(val.read_text().splitlines()) == 5


# --------------------------------------------------------------------- eval

def test_eval_oracle_clean_accuracy_one(tmp_path, capsys):
    ds = _gen(tmp_path, extra=["--clean"])
    report_path = tmp_path / "report.json"
    csv_path = tmp_path / "items.csv"
    code = main([
        "eval", "--dataset", str(ds), "--backend", "oracle",
        "--out", str(report_path), "--csv", str(csv_path), "--name", "oracle-clean",
    ])
    assert code == 0
    out = capsys.readouterr().out
    assert "1.000" in out
    payload = json.loads(report_path.read_text(encoding="utf-8"))
    assert payload["accuracy"] == 1.0
    assert payload["name"] == "oracle-clean"
    assert payload["effective_config"]["backend"] == "oracle"
    assert csv_path.read_text().splitlines()[0].startswith("id,")


def test_eval_rerun_artifact_byte_identical(tmp_path):
    ds = _gen(tmp_path, extra=["--clean"])
    path = tmp_path / "report.json"
    reports = []
    for _ in range(2):
        assert main(["eval", "--dataset", str(ds), "--backend", "oracle",
                     "--out", str(path)]) == 0
        reports.append(path.read_bytes())
    assert reports[0] == reports[1]


def test_eval_missing_dataset_flag_is_usage_error(tmp_path):
    assert main(["eval", "--backend", "oracle"]) == 2


def test_eval_nonexistent_dataset_is_runtime_error(tmp_path, capsys):
    code = main(["eval", "--dataset", str(tmp_path / "nope.jsonl"), "--backend", "oracle"])
    assert code == 1
    assert "not found" in capsys.readouterr().err


# -------------------------------------------------------------------- bench

def test_bench_subprocess_echo(tmp_path, capsys):
    prompts = tmp_path / "prompts.txt"
    prompts.write_text("hello\nworld\n", encoding="utf-8")
    out = tmp_path / "perf.json"
    code = main([
        "bench", "--backend", "subprocess", "--command", "printf 'a b c' {prompt} >/dev/null; printf 'a b c'",
        "--prompts", str(prompts), "--runs", "2", "--warmup", "0",
        "--variant", "echo", "--out", str(out),
    ])
    assert code == 0
    payload = json.loads(out.read_text(encoding="utf-8"))
    assert payload["variant"] == "echo"
    assert payload["tokens_generated"] == 3 * 2 * 2
    assert payload["effective_config"]["runs"] == 2


def test_bench_failing_backend_exits_one(tmp_path, capsys):
    prompts = tmp_path / "prompts.txt"
    prompts.write_text("x\n", encoding="utf-8")
    code = main([
        "bench", "--backend", "subprocess", "--command", "printf %s {prompt}; exit 7",
        "--prompts", str(prompts), "--runs", "1", "--warmup", "0",
    ])
    assert code == 1
    assert "error:" in capsys.readouterr().err


# ------------------------------------------------------------------ inspect

def test_inspect_fixture(tmp_path, capsys):
    path = tmp_path / "model.gguf"
    write_fixture_gguf(
        path,
        [KvPair("general.name", GgufValueType.STRING, "tiny")],
        [TensorSpec("t", (256,), GgmlQuantType.Q4_K)],
    )
    json_out = tmp_path / "inspect.json"
    assert main(["inspect", str(path), "--json", str(json_out)]) == 0
    out = capsys.readouterr().out
    assert "Q4_K" in out
    assert "bits per weight" in out
    payload = json.loads(json_out.read_text(encoding="utf-8"))
    assert payload["footprint"]["total_bytes"] == 144


def test_inspect_truncated_file_exits_one(tmp_path, capsys):
    path = tmp_path / "model.gguf"
    write_fixture_gguf(path, [], [TensorSpec("t", (256,), GgmlQuantType.Q4_K)])
    path.write_bytes(path.read_bytes()[:40])
    assert main(["inspect", str(path)]) == 1
    assert "error:" in capsys.readouterr().err


# ------------------------------------------------------------------- pareto

def test_pareto_fixture_recommendations(tmp_path, capsys):
    path = tmp_path / "points.csv"
    path.write_text(
        "name,accuracy,speed_tps,memory_bytes,on_frontier,dominated_by\n"
        "FP16,0.99,2.6,15450842726,,\n"
        "Q3_K_M,0.60,40.0,1288490189,,\n"
        "Q4_K_M,0.89,47.9,1234803098,,\n"
        "Q5_K_M,0.99,42.0,1621295972,,\n",
        encoding="utf-8",
    )
    assert main(["pareto", "--points", str(path)]) == 0
    out = capsys.readouterr().out
    assert "max accuracy): Q5_K_M" in out
    assert "max speed)   : Q4_K_M" in out

    json_out = tmp_path / "tradeoff.json"
    assert main(["pareto", "--points", str(path), "--format", "json", "--out", str(json_out)]) == 0
    payload = json.loads(json_out.read_text(encoding="utf-8"))
    assert payload["recommendations"] == {"max_accuracy": "Q5_K_M", "max_speed": "Q4_K_M"}


def test_pareto_memory_objective(tmp_path, capsys):
    path = tmp_path / "points.csv"
    path.write_text(
        "name,accuracy,speed_tps,memory_bytes,on_frontier,dominated_by\n"
        "Q4_K_M,0.89,47.9,1234803098,,\n"
        "Q5_K_M,0.99,42.0,1621295972,,\n",
        encoding="utf-8",
    )
    assert main(["pareto", "--points", str(path), "--objectives", "accuracy:max,memory:min",
                 "--format", "csv", "--out", str(tmp_path / "o.csv")]) == 0
    rows = (tmp_path / "o.csv").read_text().splitlines()
    assert rows[0] == "name,accuracy,speed_tps,memory_bytes,on_frontier,dominated_by"
    assert all(line.endswith(",True,") for line in rows[1:])


# ------------------------------------------------------------------- report

def test_report_joins_artifacts(tmp_path, capsys):
    ds = _gen(tmp_path, extra=["--clean"])
    eval_out = tmp_path / "eval.json"
    main(["eval", "--dataset", str(ds), "--backend", "oracle", "--out", str(eval_out),
          "--name", "oracle"])

    perf_a = tmp_path / "fp16.json"
    perf_a.write_text(json.dumps({
        "variant": "FP16", "tokens_generated": 260, "elapsed_s": 100.0,
        "load_s": 16.95, "peak_mem_bytes": 15450842726, "energy_j": None,
        "exact_tokens": True, "run_count": 3, "per_run_tok_s": [2.6, 2.6, 2.6],
    }), encoding="utf-8")
    perf_b = tmp_path / "q4.json"
    perf_b.write_text(json.dumps({
        "variant": "Q4_K_M", "tokens_generated": 4790, "elapsed_s": 100.0,
        "load_s": 1.12, "peak_mem_bytes": 1234803098, "energy_j": None,
        "exact_tokens": True, "run_count": 3, "per_run_tok_s": [47.9, 47.9, 47.9],
    }), encoding="utf-8")

    points = tmp_path / "points.csv"
    points.write_text(
        "name,accuracy,speed_tps,memory_bytes,on_frontier,dominated_by\n"
        "Q4_K_M,0.89,47.9,1234803098,,\n"
        "Q5_K_M,0.99,42.0,1621295972,,\n",
        encoding="utf-8",
    )
    pareto_out = tmp_path / "pareto.json"
    main(["pareto", "--points", str(points), "--format", "json", "--out", str(pareto_out)])

    combined = tmp_path / "combined.json"
    code = main([
        "report", "--eval", str(eval_out), "--perf", str(perf_a), "--perf", str(perf_b),
        "--pareto", str(pareto_out), "--baseline", "FP16", "--out", str(combined),
    ])
    assert code == 0
    out = capsys.readouterr().out
    assert "oracle" in out and "FP16" in out and "Q4_K_M" in out
    payload = json.loads(combined.read_text(encoding="utf-8"))
    assert payload["accuracy"][0]["accuracy"] == 1.0
    assert payload["comparisons"][0]["speedup_x"] == "18.4x"
    assert payload["tradeoff"]["recommendations"]["max_speed"] == "Q4_K_M"


def test_report_unknown_baseline(tmp_path):
    perf = tmp_path / "p.json"
    perf.write_text(json.dumps({
        "variant": "A", "tokens_generated": 10, "elapsed_s": 1.0,
    }), encoding="utf-8")
    assert main(["report", "--perf", str(perf), "--baseline", "NOPE"]) == 2


# ----------------------------------------------------------- config handling

def test_config_file_values_and_precedence(tmp_path):
    config = tmp_path / "run.ini"
    config.write_text("[gen]\nn = 40\nseed = 42\n", encoding="utf-8")
    out_a = tmp_path / "a.jsonl"
    assert main(["gen", "--config", str(config), "--out", str(out_a)]) == 0
    assert len(out_a.read_text().splitlines()) == 40

    # CLI flag overrides the config value
    out_b = tmp_path / "b.jsonl"
    assert main(["gen", "--config", str(config), "--n", "10", "--out", str(out_b)]) == 0
    assert len(out_b.read_text().splitlines()) == 10


def test_config_unknown_key_rejected(tmp_path, capsys):
    config = tmp_path / "run.ini"
    config.write_text("[gen]\nbanana = 7\n", encoding="utf-8")
    assert main(["gen", "--config", str(config), "--out", str(tmp_path / "x.jsonl")]) == 1
    assert "unknown keys" in capsys.readouterr().err


def test_config_unknown_section_rejected(tmp_path):
    config = tmp_path / "run.ini"
    config.write_text("[wat]\nx = 1\n", encoding="utf-8")
    assert main(["gen", "--config", str(config), "--out", str(tmp_path / "x.jsonl")]) == 1


# -------------------------------------------------------------- exit codes

def test_help_exits_zero(capsys):
    for argv in (["--help"], ["gen", "--help"], ["eval", "--help"], ["bench", "--help"],
                 ["inspect", "--help"], ["pareto", "--help"], ["report", "--help"]):
        with pytest.raises(SystemExit) as exc:
            main(argv)
        assert exc.value.code == 0
        assert capsys.readouterr().out


def test_unknown_subcommand_exits_two(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2


def test_failed_run_leaves_no_artifact(tmp_path):
    bad_ds = tmp_path / "bad.jsonl"
    bad_ds.write_text("{ not json\n", encoding="utf-8")
    out = tmp_path / "report.json"
    assert main(["eval", "--dataset", str(bad_ds), "--backend", "oracle",
                 "--out", str(out)]) == 1
    assert not out.exists()
    assert not list(tmp_path.glob("*.tmp*"))
