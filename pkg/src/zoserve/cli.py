"""Command-line entry points.

    zoserve train  [--config exp.toml] [--set run.steps=20 ...]
    zoserve verify A.jsonl B.jsonl [--loss-tol 1e-12] [--tau 0.005] [--force]
    zoserve bench  [--m 512 --n 512 --rank 4 --nu 50] [--with-run]
    zoserve sim    [--trace trace.csv | --events 10000] [--probes 500]

Configs are TOML with a versioned ``schema`` field and [model]/[task]/
[zo]/[run] sections; every field has a default, and ``--set`` overrides
use dotted paths (values parsed as TOML scalars).  All randomness flows
from the three config seeds — model init, task, ZO — so two invocations
with equal configs produce byte-identical trajectory files.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

try:
    import tomllib
except ModuleNotFoundError:  # python 3.10
    import tomli as tomllib  # type: ignore[no-redef]

from .baseline_loop import compare_ready_export, run_baseline
from .model import ModelConfig, TaskConfig, generate_task
from .numerics import ConfigError, InputError, digest_hex, digest_text
from .runtime import (
    SlackPolicy,
    brute_force_check,
    cost_report,
    cost_report_text,
    read_trace_csv,
    run_serving_path,
    slack_schedule,
    synthetic_trace,
    write_microbench,
    write_schedule_csv,
    write_trace_csv,
)
from .verify import (
    record_deltas,
    sign_match,
    strict_compare,
    trajectory_report,
    write_eval_csv,
)
from .zo_engine import ZoConfig, read_trajectory

__all__ = ["ExperimentConfig", "load_config", "main"]

CONFIG_SCHEMA = 1
PATHS = ("baseline", "serving", "both")
PRECISIONS = ("real64", "real32")


# ---------------------------------------------------------------------------
# Experiment configuration.
# ---------------------------------------------------------------------------


@dataclasses.dataclass(frozen=True)
class RunSection:
    path: str = "both"
    steps: int = 300
    eval_every: int = 50
    precision: str = "real64"
    out_dir: str = "runs/default"

    def __post_init__(self) -> None:
        if self.path not in PATHS:
            raise ConfigError(f"run.path must be one of {PATHS}, got {self.path!r}")
        if self.steps < 1:
            raise ConfigError(f"run.steps must be >= 1, got {self.steps}")
        if self.eval_every < 1:
            raise ConfigError(f"run.eval_every must be >= 1, got {self.eval_every}")
        if self.precision not in PRECISIONS:
            raise ConfigError(
                f"run.precision must be one of {PRECISIONS}, got {self.precision!r}"
            )


@dataclasses.dataclass(frozen=True)
class ExperimentConfig:
    """Everything that determines a run.  Equal configs (equal digests)
    produce equal trajectory digests."""

    model: ModelConfig
    task: TaskConfig
    zo: ZoConfig
    run: RunSection

    def to_dict(self) -> dict:
        task = dataclasses.asdict(self.task)
        task.pop("vocab")  # derived from [model]
        task.pop("prompt_len")
        return {
            "schema": CONFIG_SCHEMA,
            "model": dataclasses.asdict(self.model),
            "task": task,
            "zo": dataclasses.asdict(self.zo),
            "run": dataclasses.asdict(self.run),
        }

    def digest(self) -> str:
        return digest_hex(digest_text(json.dumps(self.to_dict(), sort_keys=True)))


def _build_section(cls, section: dict, name: str, **derived):
    allowed = {f.name for f in dataclasses.fields(cls)} - set(derived)
    unknown = sorted(set(section) - allowed)
    if unknown:
        hint = " (derived from [model])" if set(unknown) & set(derived) else ""
        raise ConfigError(f"[{name}] unknown field(s): {', '.join(unknown)}{hint}")
    return cls(**{**section, **derived})


def config_from_dict(d: dict) -> ExperimentConfig:
    if d.get("schema") != CONFIG_SCHEMA:
        raise ConfigError(
            f"config schema must be {CONFIG_SCHEMA}, got {d.get('schema')!r}"
        )
    known = {"schema", "model", "task", "zo", "run"}
    unknown = sorted(set(d) - known)
    if unknown:
        raise ConfigError(f"unknown config section(s): {', '.join(unknown)}")
    model = _build_section(ModelConfig, d.get("model", {}), "model")
    task = _build_section(
        TaskConfig, d.get("task", {}), "task",
        vocab=model.vocab, prompt_len=model.prompt_len,
    )
    zo = _build_section(ZoConfig, d.get("zo", {}), "zo")
    run = _build_section(RunSection, d.get("run", {}), "run")
    return ExperimentConfig(model=model, task=task, zo=zo, run=run)


def apply_overrides(d: dict, assignments) -> dict:
    """Dotted-path --set overrides, e.g. ``run.steps=20`` or
    ``zo.estimator="dense_mezo"``.  Values parse as TOML scalars; anything
    that does not parse is taken as a bare string."""
    for item in assignments:
        key, sep, raw = item.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"--set needs key=value, got {item!r}")
        try:
            value = tomllib.loads(f"v = {raw}")["v"]
        except tomllib.TOMLDecodeError:
            value = raw
        node = d
        parts = key.strip().split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"--set path {key!r} crosses a non-section value")
        node[parts[-1]] = value
    return d


def load_config(path: str | None, sets=()) -> ExperimentConfig:
    if path is None:
        d: dict = {"schema": CONFIG_SCHEMA}
    else:
        with open(path, "rb") as f:
            d = tomllib.load(f)
    apply_overrides(d, sets or ())
    return config_from_dict(d)


def _toml_scalar(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return repr(v)
    if isinstance(v, str):
        return json.dumps(v)
    raise ConfigError(f"cannot render {type(v).__name__} as a TOML scalar")


def render_toml(d: dict) -> str:
    lines = [f"{k} = {_toml_scalar(v)}" for k, v in d.items() if not isinstance(v, dict)]
    for k, v in d.items():
        if isinstance(v, dict):
            lines.append("")
            lines.append(f"[{k}]")
            lines.extend(f"{kk} = {_toml_scalar(vv)}" for kk, vv in v.items())
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Subcommands.
# ---------------------------------------------------------------------------


def cmd_train(args) -> int:
    cfg = load_config(args.config, args.set)
    out_dir = args.out_dir or cfg.run.out_dir
    os.makedirs(out_dir, exist_ok=True)
    task = generate_task(cfg.task)
    paths = ("baseline", "serving") if cfg.run.path == "both" else (cfg.run.path,)
    extra = {"config_digest": cfg.digest()}
    runs = []
    for p in paths:
        runner = run_baseline if p == "baseline" else run_serving_path
        run = runner(cfg.model, task, cfg.zo, cfg.run.steps,
                     cfg.run.precision, cfg.run.eval_every)
        compare_ready_export(run, os.path.join(out_dir, f"trajectory-{p}.jsonl"), extra)
        runs.append(run)
        final = run.eval_curve[-1]
        print(
            f"{p}: {run.steps_completed} steps, final eval loss {final.loss:.4f}, "
            f"acc {final.acc:.3f}, wall {run.train_wall_s:.2f}s, "
            f"weight writes {run.weight_write_count}"
        )

    summary = trajectory_report(runs, out_dir=None)
    summary["config_digest"] = cfg.digest()
    for entry, run in zip(summary["runs"], runs):
        write_eval_csv(run.eval_curve, os.path.join(out_dir, f"eval-{entry['name']}.csv"))
        entry["meter"] = run.meter.to_dict()
        entry["weight_writes"] = run.weight_write_count
        entry["final_params_digest"] = run.final_params_digest
    with open(os.path.join(out_dir, "summary.json"), "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
        f.write("\n")
    with open(os.path.join(out_dir, "config-echo.toml"), "w") as f:
        f.write(f"# config digest: {cfg.digest()}\n")
        f.write(render_toml(cfg.to_dict()))

    if len(paths) == 2:
        traj_a = read_trajectory(os.path.join(out_dir, "trajectory-baseline.jsonl"))
        traj_b = read_trajectory(os.path.join(out_dir, "trajectory-serving.jsonl"))
        tol = 1e-12 if cfg.run.precision == "real64" else 0.05
        report = strict_compare(traj_a, traj_b, tol)
        with open(os.path.join(out_dir, "strict-compare.json"), "w") as f:
            json.dump(report.to_dict(), f, indent=2, sort_keys=True)
            f.write("\n")
        with open(os.path.join(out_dir, "strict-compare.txt"), "w") as f:
            f.write(report.to_text() + "\n")
        print(report.to_text())
    print(f"artifacts in {out_dir}/ (config digest {cfg.digest()})")
    return 0


def cmd_verify(args) -> int:
    traj_a = read_trajectory(args.traj_a)
    traj_b = read_trajectory(args.traj_b)
    header_a, records_a, _ = traj_a
    header_b, records_b, _ = traj_b
    for key in ("model_digest", "task_digest"):
        if header_a.get(key) != header_b.get(key) and not args.force:
            print(
                f"refusing to compare: {key} differs "
                f"({header_a.get(key)} vs {header_b.get(key)}); use --force to override",
                file=sys.stderr,
            )
            return 2
    strict = strict_compare(traj_a, traj_b, args.loss_tol)
    sign = sign_match(record_deltas(records_a), record_deltas(records_b), args.tau)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "verify-report.json"), "w") as f:
            json.dump({"strict": strict.to_dict(), "sign": sign.to_dict(),
                       "a": args.traj_a, "b": args.traj_b}, f, indent=2, sort_keys=True)
            f.write("\n")
        with open(os.path.join(args.out, "verify-report.txt"), "w") as f:
            f.write(strict.to_text() + "\n\n" + sign.to_text() + "\n")
    print(strict.to_text())
    print()
    print(sign.to_text())
    return 0 if strict.accepted == strict.steps else 1


def cmd_bench(args) -> int:
    res = write_microbench(args.m, args.n, args.rank, args.nu, args.steps, args.seed)
    print(
        f"write microbench: {res['m']}x{res['n']} matrix, rank {res['rank']}, "
        f"window {res['nu']}, {res['steps']} steps (scoring stubbed out)"
    )
    print("path        per-step       writes counted   writes closed-form")
    for p in ("baseline", "serving"):
        print(
            f"{p:<10} {res[f'{p}_per_step_s'] * 1e3:9.3f} ms {res[f'{p}_writes']:>16}"
            f" {res[f'{p}_writes_expected']:>20}"
        )
    print(f"measured per-step speedup: {res['speedup']:.1f}x")
    counters_ok = (
        res["baseline_writes"] == res["baseline_writes_expected"]
        and res["serving_writes"] == res["serving_writes_expected"]
    )
    if not counters_ok:
        print("write counters disagree with closed forms", file=sys.stderr)
        return 1

    if args.with_run:
        cfg = load_config(args.config, args.set)
        task = generate_task(cfg.task)
        for name, runner in (("baseline", run_baseline), ("serving", run_serving_path)):
            run = runner(cfg.model, task, cfg.zo, args.run_steps,
                         cfg.run.precision, max(args.run_steps, 1))
            print(f"\n{name} path, {args.run_steps} steps, measured cost breakdown:")
            print(cost_report_text(cost_report(run.meter, run)))
    return 0


def cmd_sim(args) -> int:
    if args.trace:
        trace = read_trace_csv(args.trace, args.capacity)
    else:
        trace = synthetic_trace(args.events, args.capacity, args.occupancy, args.seed)
    policy = SlackPolicy(probe_cost=args.probe_cost)
    probes = list(range(args.probes))
    result = slack_schedule(trace, probes, policy)
    probe_free = slack_schedule(trace, [], policy)
    if args.check:
        audit = brute_force_check(trace, probes, policy)
        print(f"brute-force replay agrees over {audit['events']} events")

    os.makedirs(args.out, exist_ok=True)
    write_schedule_csv(result, os.path.join(args.out, "schedule.csv"))
    if not args.trace:
        write_trace_csv(trace, os.path.join(args.out, "trace.csv"))
    latency = {
        "with_probes": result.to_summary(),
        "probe_free": probe_free.to_summary(),
        "hp_p99_increase": result.hp_stats.p99 - probe_free.hp_stats.p99,
    }
    with open(os.path.join(args.out, "latency.json"), "w") as f:
        json.dump(latency, f, indent=2, sort_keys=True)
        f.write("\n")

    print(
        f"{len(trace.arrivals)} requests + {len(probes)} probes, "
        f"capacity {trace.capacity}, {result.ticks} ticks, "
        f"utilization {result.utilization:.1%}"
    )
    print("class    count      mean    p50    p90    p99    max")
    for name, stats in (("hp", result.hp_stats), ("probe", result.probe_stats)):
        print(
            f"{name:<8} {stats.count:>5} {stats.mean:>9.2f} {stats.p50:>6} "
            f"{stats.p90:>6} {stats.p99:>6} {stats.max:>6}"
        )
    print(
        f"hp p99 increase vs probe-free: {latency['hp_p99_increase']} ticks; "
        f"probe residual throughput {result.probe_throughput:.1%}"
    )
    return 0


# ---------------------------------------------------------------------------
# Argument parsing.
# ---------------------------------------------------------------------------


def _add_config_flags(p) -> None:
    p.add_argument("--config", help="TOML experiment config (defaults apply without it)")
    p.add_argument(
        "--set", action="append", default=[], metavar="KEY=VALUE",
        help="dotted-path config override, e.g. run.steps=20",
    )


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="zoserve",
        description="Zeroth-order fine-tuning run as an inference-side workload.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run the baseline and/or serving path")
    _add_config_flags(p)
    p.add_argument("--out-dir", help="override run.out_dir")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("verify", help="compare two trajectory files")
    p.add_argument("traj_a")
    p.add_argument("traj_b")
    p.add_argument("--loss-tol", type=float, default=1e-12,
                   help="per-step paired-loss tolerance (use 0.05 across precisions)")
    p.add_argument("--tau", type=float, default=0.005, help="high-signal threshold")
    p.add_argument("--force", action="store_true",
                   help="compare even when model/task digests differ")
    p.add_argument("--out", help="directory for JSON/text reports")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("bench", help="write-path microbenchmark and cost breakdown")
    p.add_argument("--m", type=int, default=512)
    p.add_argument("--n", type=int, default=512)
    p.add_argument("--rank", type=int, default=4)
    p.add_argument("--nu", type=int, default=50)
    p.add_argument("--steps", type=int, default=50)
    p.add_argument("--seed", type=int, default=202)
    p.add_argument("--with-run", action="store_true",
                   help="also run both paths briefly and print measured cost reports")
    p.add_argument("--run-steps", type=int, default=50)
    _add_config_flags(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("sim", help="slack-scheduler simulation over a request trace")
    p.add_argument("--trace", help="arrival CSV (arrival_time,cost); synthetic if omitted")
    p.add_argument("--events", type=int, default=10_000)
    p.add_argument("--capacity", type=int, default=8)
    p.add_argument("--occupancy", type=float, default=0.4)
    p.add_argument("--seed", type=int, default=303)
    p.add_argument("--probes", type=int, default=500)
    p.add_argument("--probe-cost", type=int, default=1)
    p.add_argument("--check", action="store_true",
                   help="run the brute-force replay audit (small traces)")
    p.add_argument("--out", default=".", help="output directory")
    p.set_defaults(func=cmd_sim)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, InputError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
