"""Command-line surface: TOML config handling, dotted-path overrides,
artifact emission, rerun reproducibility, and exit codes."""

import json
import os

import pytest

from zoserve.cli import (
    ExperimentConfig,
    apply_overrides,
    config_from_dict,
    load_config,
    main,
    render_toml,
)
from zoserve.numerics import ConfigError

MICRO = {
    "model.vocab": 16,
    "model.dim": 8,
    "model.n_layers": 1,
    "model.n_heads": 2,
    "model.prompt_len": 6,
    "task.train_size": 32,
    "task.dev_size": 8,
    "task.val_size": 8,
    "zo.batch_size": 4,
    "run.steps": 4,
    "run.eval_every": 2,
}


def _flags(**extra):
    merged = {**MICRO, **extra}
    out = []
    for k, v in merged.items():
        if isinstance(v, bool):
            v = "true" if v else "false"
        elif isinstance(v, str):
            v = json.dumps(v)
        out += ["--set", f"{k}={v}"]
    return out


def _train(out_dir, **extra):
    return main(["train", "--out-dir", str(out_dir), *_flags(**extra)])


# ---------------------------------------------------------------------------
# Configuration.
# ---------------------------------------------------------------------------


def test_defaults_without_config_file():
    cfg = load_config(None)
    assert cfg.model.dim == 32
    assert cfg.task.vocab == cfg.model.vocab  # derived, not independent
    assert cfg.task.prompt_len == cfg.model.prompt_len
    assert cfg.zo.estimator == "lozo_lazy"
    assert cfg.run.steps == 300
    assert cfg.digest() == load_config(None).digest()


def test_toml_echo_roundtrip(tmp_path):
    cfg = load_config(None, ["zo.rank=4", 'run.path="serving"'])
    path = tmp_path / "exp.toml"
    path.write_text(render_toml(cfg.to_dict()))
    again = load_config(str(path))
    assert again == cfg
    assert again.digest() == cfg.digest()


def test_set_overrides_parse_as_toml_scalars():
    cfg = load_config(
        None,
        [
            "run.steps=20",
            "zo.epsilon=1e-4",
            "zo.divide_by_r=true",
            'zo.estimator="factorized_sqrt_r"',
            "run.out_dir=plain/path",  # not valid TOML -> taken as a bare string
        ],
    )
    assert cfg.run.steps == 20 and isinstance(cfg.run.steps, int)
    assert cfg.zo.epsilon == 1e-4
    assert cfg.zo.divide_by_r is True
    assert cfg.zo.estimator == "factorized_sqrt_r"
    assert cfg.run.out_dir == "plain/path"


def test_set_override_syntax_errors():
    with pytest.raises(ConfigError):
        apply_overrides({}, ["run.steps"])  # no '='
    with pytest.raises(ConfigError):
        apply_overrides({}, ["=5"])  # empty key
    with pytest.raises(ConfigError):
        apply_overrides({}, ["run.steps=5", "run.steps.x=1"])  # scalar crossed


def test_unknown_fields_are_rejected():
    with pytest.raises(ConfigError, match=r"\[model\] unknown"):
        load_config(None, ["model.hidden_size=1"])
    with pytest.raises(ConfigError, match="derived"):
        load_config(None, ["task.vocab=32"])  # follows [model], not settable
    with pytest.raises(ConfigError, match="unknown config section"):
        load_config(None, ["bogus.x=1"])


def test_schema_is_versioned(tmp_path):
    path = tmp_path / "exp.toml"
    path.write_text("schema = 2\n")
    with pytest.raises(ConfigError, match="schema"):
        load_config(str(path))
    with pytest.raises(ConfigError, match="schema"):
        config_from_dict({})


def test_run_section_validation():
    for bad in ("run.steps=0", 'run.path="sideways"', 'run.precision="real16"',
                "run.eval_every=0"):
        with pytest.raises(ConfigError):
            load_config(None, [bad])


def test_config_digest_tracks_content():
    a = load_config(None)
    b = load_config(None, ["zo.seed=43"])
    assert isinstance(ExperimentConfig.digest(a), str)
    assert a.digest() != b.digest()


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def test_train_writes_artifacts(tmp_path, capsys):
    assert _train(tmp_path) == 0
    for name in (
        "trajectory-baseline.jsonl",
        "trajectory-serving.jsonl",
        "eval-baseline.csv",
        "eval-serving.csv",
        "summary.json",
        "config-echo.toml",
        "strict-compare.json",
        "strict-compare.txt",
    ):
        assert (tmp_path / name).exists(), name
    with open(tmp_path / "summary.json") as f:
        summary = json.load(f)
    assert "config_digest" in summary
    assert {r["kind"] for r in summary["runs"]} == {"baseline", "serving"}
    assert all("meter" in r and "final_params_digest" in r for r in summary["runs"])
    with open(tmp_path / "strict-compare.json") as f:
        strict = json.load(f)
    assert strict["accepted"] == strict["steps"] == 4
    echo = (tmp_path / "config-echo.toml").read_text()
    assert echo.startswith("# config digest: ")
    assert "accepted" in capsys.readouterr().out


def test_train_rerun_is_bit_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert _train(a) == 0
    assert _train(b) == 0
    for name in ("trajectory-baseline.jsonl", "trajectory-serving.jsonl", "config-echo.toml"):
        assert (a / name).read_bytes() == (b / name).read_bytes(), name


def test_train_single_path(tmp_path):
    assert _train(tmp_path, **{"run.path": "serving"}) == 0
    assert (tmp_path / "trajectory-serving.jsonl").exists()
    assert not (tmp_path / "trajectory-baseline.jsonl").exists()
    assert not (tmp_path / "strict-compare.json").exists()


def test_train_config_file_plus_set(tmp_path):
    cfg = load_config(None, _strip(_flags()))
    path = tmp_path / "exp.toml"
    path.write_text(render_toml(cfg.to_dict()))
    out = tmp_path / "out"
    code = main(
        ["train", "--config", str(path), "--set", "run.steps=2",
         "--set", 'run.path="baseline"', "--out-dir", str(out)]
    )
    assert code == 0
    with open(out / "summary.json") as f:
        assert json.load(f)["runs"][0]["steps"] == 2


def _strip(flags):
    return [flags[i + 1] for i in range(0, len(flags), 2)]


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------


def test_verify_identical_files_accept(tmp_path, capsys):
    assert _train(tmp_path) == 0
    traj = str(tmp_path / "trajectory-serving.jsonl")
    assert main(["verify", traj, traj]) == 0
    out = capsys.readouterr().out
    assert "accepted          4/4" in out
    assert "sign match" in out


def test_verify_twin_paths_accept(tmp_path):
    assert _train(tmp_path) == 0
    a = str(tmp_path / "trajectory-baseline.jsonl")
    b = str(tmp_path / "trajectory-serving.jsonl")
    assert main(["verify", a, b]) == 0


def test_verify_flags_divergent_runs(tmp_path, capsys):
    assert _train(tmp_path / "a") == 0
    assert _train(tmp_path / "b", **{"zo.seed": 43}) == 0
    code = main(
        ["verify", str(tmp_path / "a" / "trajectory-serving.jsonl"),
         str(tmp_path / "b" / "trajectory-serving.jsonl")]
    )
    assert code == 1  # same model/task, different directions -> rejected steps
    capsys.readouterr()


def test_verify_refuses_mismatched_model(tmp_path, capsys):
    assert _train(tmp_path / "a") == 0
    assert _train(tmp_path / "b", **{"model.init_seed": 8}) == 0
    a = str(tmp_path / "a" / "trajectory-serving.jsonl")
    b = str(tmp_path / "b" / "trajectory-serving.jsonl")
    assert main(["verify", a, b]) == 2
    assert "model_digest" in capsys.readouterr().err
    # forced comparison proceeds and judges the steps on their merits
    assert main(["verify", a, b, "--force"]) == 1


def test_verify_writes_reports(tmp_path):
    assert _train(tmp_path) == 0
    traj = str(tmp_path / "trajectory-baseline.jsonl")
    out = tmp_path / "reports"
    assert main(["verify", traj, traj, "--out", str(out)]) == 0
    with open(out / "verify-report.json") as f:
        report = json.load(f)
    assert report["strict"]["accepted"] == 4
    assert report["sign"]["overall_fraction"] == 1.0
    assert (out / "verify-report.txt").exists()


def test_verify_loss_tol_flag(tmp_path):
    assert _train(tmp_path / "a") == 0
    assert _train(tmp_path / "b", **{"run.precision": "real32"}) == 0
    a = str(tmp_path / "a" / "trajectory-serving.jsonl")
    b = str(tmp_path / "b" / "trajectory-serving.jsonl")
    assert main(["verify", a, b]) == 1  # default tolerance is same-precision
    assert main(["verify", a, b, "--loss-tol", "0.05"]) == 0


# ---------------------------------------------------------------------------
# bench / sim
# ---------------------------------------------------------------------------


def test_bench_prints_counter_checked_table(capsys):
    code = main(["bench", "--m", "32", "--n", "24", "--rank", "2",
                 "--nu", "5", "--steps", "6"])
    assert code == 0
    out = capsys.readouterr().out
    assert "speedup" in out
    assert str(6 * 4 * 32 * 24) in out  # baseline closed form appears


def test_bench_with_run(tmp_path, capsys):
    code = main(["bench", "--m", "16", "--n", "16", "--rank", "2", "--steps", "4",
                 "--with-run", "--run-steps", "3", *_flags()])
    assert code == 0
    out = capsys.readouterr().out
    assert "baseline path" in out and "serving path" in out
    assert "scoring" in out


def test_sim_synthetic(tmp_path, capsys):
    out = tmp_path / "sim"
    code = main(["sim", "--events", "60", "--capacity", "8", "--probes", "20",
                 "--check", "--out", str(out)])
    assert code == 0
    for name in ("schedule.csv", "latency.json", "trace.csv"):
        assert (out / name).exists(), name
    with open(out / "latency.json") as f:
        latency = json.load(f)
    assert latency["hp_p99_increase"] == 0  # probes cannot delay requests
    assert latency["with_probes"]["hp"] == latency["probe_free"]["hp"]
    assert "brute-force replay agrees" in capsys.readouterr().out


def test_sim_reads_trace_csv(tmp_path, capsys):
    from zoserve.runtime import synthetic_trace, write_trace_csv

    trace_path = tmp_path / "input.csv"
    write_trace_csv(synthetic_trace(30, capacity=4, seed=1), str(trace_path))
    out = tmp_path / "sim"
    code = main(["sim", "--trace", str(trace_path), "--capacity", "4",
                 "--probes", "5", "--out", str(out)])
    assert code == 0
    assert (out / "schedule.csv").exists()
    assert not (out / "trace.csv").exists()  # input trace is not re-emitted
    capsys.readouterr()


# ---------------------------------------------------------------------------
# Exit codes.
# ---------------------------------------------------------------------------


def test_config_error_exits_2(capsys):
    assert main(["train", "--set", "run.steps=0"]) == 2
    assert "error:" in capsys.readouterr().err


def test_missing_config_file_exits_2(tmp_path, capsys):
    missing = str(tmp_path / "nope.toml")
    assert main(["train", "--config", missing]) == 2
    assert "error:" in capsys.readouterr().err


def test_missing_trajectory_exits_2(tmp_path, capsys):
    missing = str(tmp_path / "nope.jsonl")
    assert main(["verify", missing, missing]) == 2
    capsys.readouterr()
