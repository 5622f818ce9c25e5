"""Serving-style execution path and its scheduling/cost instrumentation.

The serving path never materializes a probe: scoring composes adapter
views, updates land on compact U factors, and dense weights are touched
only at window folds.  A slack scheduler shows how the paired probe jobs
ride in residual batch capacity underneath high-priority inference
traffic, and a CostMeter pins the write/scoring decomposition that the
acceptance laws check.
"""

from __future__ import annotations

import csv
import math
import time
from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

from .adapter import AdapterState, fold_window, state_digest
from .model import (
    EvalPoint,
    Minibatch,
    ModelConfig,
    TaskData,
    evaluate_split,
    forward_score,
    init_params,
    matrix_ids,
    params_digest,
    sample_minibatch,
)
from .numerics import (
    FNV_OFFSET_BASIS,
    ConfigError,
    InputError,
    Role,
    StreamKey,
    axpy_dense,
    axpy_outer,
    dense_product,
    digest_array,
    digest_hex,
    restore_matrix,
    weight_writes,
)
from .zo_engine import (
    ZoConfig,
    ZoStepRecord,
    factorized_step,
    lozo_direction,
    lozo_step,
)

__all__ = [
    "CostMeter",
    "ProbePair",
    "ScoringAbort",
    "ServingRun",
    "run_serving_path",
    "InferenceTrace",
    "SlackPolicy",
    "ScheduleEntry",
    "LatencyStats",
    "ScheduleResult",
    "slack_schedule",
    "brute_force_check",
    "cost_report",
    "cost_report_text",
    "write_microbench",
    "synthetic_trace",
    "read_trace_csv",
    "write_trace_csv",
    "write_schedule_csv",
]


# ---------------------------------------------------------------------------
# Cost accounting.
# ---------------------------------------------------------------------------


@dataclass
class CostMeter:
    """Counts of what a run spent, split by phase.

    ``weight_writes`` is the total of the counted kernel traffic;
    probe/update/fold split it by what the write was for.  Scoring is
    tracked in calls and cost units (examples scored).  Monotone during a
    run; reset only at run boundaries (fresh meter per run).
    """

    weight_writes: int = 0
    scoring_calls: int = 0
    scoring_cost_units: int = 0
    writes_probe: int = 0
    writes_update: int = 0
    writes_fold: int = 0
    time_scoring_s: float = 0.0
    time_probe_s: float = 0.0
    time_update_s: float = 0.0
    time_fold_s: float = 0.0

    def add_scoring(self, calls: int, units: int, secs: float) -> None:
        self.scoring_calls += calls
        self.scoring_cost_units += units
        self.time_scoring_s += secs

    def add_writes(self, kind: str, n: int, secs: float = 0.0) -> None:
        self.weight_writes += n
        if kind == "probe":
            self.writes_probe += n
            self.time_probe_s += secs
        elif kind == "update":
            self.writes_update += n
            self.time_update_s += secs
        elif kind == "fold":
            self.writes_fold += n
            self.time_fold_s += secs
        else:
            raise ConfigError(f"unknown write kind {kind!r}")

    def to_dict(self) -> dict:
        return {
            "weight_writes": self.weight_writes,
            "scoring_calls": self.scoring_calls,
            "scoring_cost_units": self.scoring_cost_units,
            "writes_probe": self.writes_probe,
            "writes_update": self.writes_update,
            "writes_fold": self.writes_fold,
            "time_scoring_s": self.time_scoring_s,
            "time_probe_s": self.time_probe_s,
            "time_update_s": self.time_update_s,
            "time_fold_s": self.time_fold_s,
        }


@contextmanager
def _write_phase(meter: CostMeter, kind: str):
    w0 = weight_writes()
    t0 = time.perf_counter()
    yield
    meter.add_writes(kind, weight_writes() - w0, time.perf_counter() - t0)


class ScoringAbort(RuntimeError):
    """Injected scoring failure (tests exercise step transactionality)."""


class _MeteredScorer:
    """Wraps the model scorer with meter bookkeeping and optional fault
    injection.  The write-counter delta across each scoring call lands in
    the probe category; composition being a pure view, it stays at zero —
    a live assertion of the serving path's zero-write probing.  (1-D probe
    swings under full scope happen between scoring calls and are counted
    as update-phase maintenance.)"""

    def __init__(self, params, mcfg, state, precision, meter, abort_at=None):
        self.params = params
        self.mcfg = mcfg
        self.state = state
        self.precision = precision
        self.meter = meter
        self.abort_at = abort_at
        self.step = -1

    def __call__(self, batch: Minibatch) -> float:
        if self.abort_at is not None and self.step == self.abort_at:
            raise ScoringAbort(f"injected failure at step {self.step}")
        w0 = weight_writes()
        t0 = time.perf_counter()
        view = self.state.view() if self.state is not None else None
        loss = forward_score(self.params, self.mcfg, batch, view=view, precision=self.precision)
        self.meter.add_scoring(1, batch.prompts.shape[0], time.perf_counter() - t0)
        self.meter.add_writes("probe", weight_writes() - w0, 0.0)
        return loss


# ---------------------------------------------------------------------------
# Probe pairs.
# ---------------------------------------------------------------------------

_STATUS_ORDER = ("queued", "scored", "applied")


@dataclass
class ProbePair:
    """The +eps/-eps scoring job pair of one step: direction stream
    handles plus lifecycle status.  Applied at most once, in step order."""

    step: int
    handles: dict[str, dict[str, StreamKey]]
    minibatch_id: str
    status: str = "queued"

    def advance(self, status: str) -> None:
        if _STATUS_ORDER.index(status) != _STATUS_ORDER.index(self.status) + 1:
            raise ConfigError(f"illegal probe status transition {self.status} -> {status}")
        self.status = status


def _probe_handles(params, zcfg: ZoConfig, step: int) -> dict:
    window_start = (step // zcfg.nu) * zcfg.nu if zcfg.estimator == "lozo_lazy" else step
    handles = {}
    for lid in matrix_ids(params):
        handles[lid] = {
            "u": StreamKey(zcfg.seed, step, lid, Role.U),
            "v": StreamKey(zcfg.seed, window_start, lid, Role.V),
        }
    return handles


# ---------------------------------------------------------------------------
# Serving run.
# ---------------------------------------------------------------------------


@dataclass
class ServingRun:
    config: ZoConfig
    model_config: ModelConfig
    trajectory: list[ZoStepRecord]
    eval_curve: list[EvalPoint]
    meter: CostMeter
    weight_write_count: int
    final_params_digest: str
    params: dict
    state: AdapterState
    probe_pairs: list[ProbePair]
    train_wall_s: float
    precision: str
    steps_completed: int
    model_digest: str
    task_digest: str
    pre_fold_digest: str
    pre_fold_params_digest: str
    aborted: bool = False
    kind: str = "serving"


def _fold_all(state: AdapterState, params, meter: CostMeter) -> None:
    with _write_phase(meter, "fold"):
        for lid in sorted(state.entries):
            entry = state.entries[lid]
            for slot in entry.update_slots:
                fold_window(slot, params[lid])
            entry.update_slots = []
            if entry.window_slot is not None:
                fold_window(entry.window_slot, params[lid])


def run_serving_path(
    mcfg: ModelConfig,
    task: TaskData,
    zcfg: ZoConfig,
    steps: int,
    precision: str = "real64",
    eval_every: int = 50,
    fold_on_eval: bool = False,
    abort_at: int | None = None,
    params: dict | None = None,
) -> ServingRun:
    """Run ZO fine-tuning the serving way: probes are composed views (zero
    weight writes), updates accumulate on U factors, dense weights are
    written only at window folds and run end.

    Each step is transactional: an injected or real scoring failure rolls
    back probes and vector perturbations, applies no update, and ends the
    run with ``aborted=True`` and no run-end fold, leaving the state
    exactly as the previous step left it.
    """
    if steps < 1:
        raise ConfigError("steps must be >= 1")
    if zcfg.estimator == "dense_mezo":
        raise ConfigError(
            "dense_mezo has no serving-path form (no compact update factor); "
            "use the baseline path for it"
        )
    if params is None:
        params = init_params(mcfg)
    model_digest = params_digest(params)
    task_digest = task.digest()
    state = AdapterState(epsilon=zcfg.epsilon)
    meter = CostMeter()
    scorer = _MeteredScorer(params, mcfg, state, precision, meter, abort_at)
    step_fn = lozo_step if zcfg.estimator == "lozo_lazy" else factorized_step

    trajectory: list[ZoStepRecord] = []
    probe_pairs: list[ProbePair] = []
    eval_curve: list[EvalPoint] = []
    train_wall = 0.0
    aborted = False

    def do_eval(at_step: int) -> None:
        if fold_on_eval:
            _fold_all(state, params, meter)
        loss, acc = evaluate_split(params, mcfg, task, "dev", state.view(), precision)
        eval_curve.append(EvalPoint(at_step, train_wall * 1e3, loss, acc))

    do_eval(0)
    completed = 0
    for t in range(steps):
        batch = sample_minibatch(task, "train", zcfg.seed, t, zcfg.batch_size)
        pair = ProbePair(t, _probe_handles(params, zcfg, t), batch.batch_id)
        probe_pairs.append(pair)
        scorer.step = t
        t0 = time.perf_counter()
        w0 = weight_writes()
        scoring_t0 = meter.time_scoring_s
        probe_w0 = meter.writes_probe
        try:
            record = step_fn(params, mcfg, state, zcfg, t, batch, precision, scorer)
        except ScoringAbort:
            probe_pairs.pop()
            aborted = True
            break
        pair.advance("scored")
        pair.advance("applied")
        elapsed = time.perf_counter() - t0
        scoring_elapsed = meter.time_scoring_s - scoring_t0
        update_writes = (weight_writes() - w0) - (meter.writes_probe - probe_w0)
        meter.add_writes("update", update_writes, max(elapsed - scoring_elapsed, 0.0))
        train_wall += elapsed
        trajectory.append(record)
        completed = t + 1
        if zcfg.estimator == "lozo_lazy" and (t + 1) % zcfg.nu == 0:
            f0 = time.perf_counter()
            _fold_all(state, params, meter)
            train_wall += time.perf_counter() - f0
        if (t + 1) % eval_every == 0 and (t + 1) != steps:
            do_eval(t + 1)
    pre_fold_digest = state_digest(state)
    pre_fold_params_digest = params_digest(params)
    if not aborted:
        f0 = time.perf_counter()
        _fold_all(state, params, meter)
        train_wall += time.perf_counter() - f0
        do_eval(completed)
    return ServingRun(
        config=zcfg,
        model_config=mcfg,
        trajectory=trajectory,
        eval_curve=eval_curve,
        meter=meter,
        weight_write_count=meter.weight_writes,
        final_params_digest=params_digest(params),
        params=params,
        state=state,
        probe_pairs=probe_pairs,
        train_wall_s=train_wall,
        precision=precision,
        steps_completed=completed,
        model_digest=model_digest,
        task_digest=task_digest,
        pre_fold_digest=pre_fold_digest,
        pre_fold_params_digest=pre_fold_params_digest,
        aborted=aborted,
    )


# ---------------------------------------------------------------------------
# Slack scheduler.
# ---------------------------------------------------------------------------


@dataclass
class InferenceTrace:
    """High-priority request stream: (arrival_tick, cost_units) rows plus
    the per-tick batch capacity."""

    arrivals: list[tuple[int, int]]
    capacity: int

    def __post_init__(self) -> None:
        last = None
        for arrival, cost in self.arrivals:
            if cost < 1:
                raise InputError("request cost must be >= 1")
            if arrival < 0:
                raise InputError("arrival time must be >= 0")
            if last is not None and arrival < last:
                raise InputError("arrival times must be nondecreasing")
            last = arrival
        if self.capacity < 1:
            raise InputError("capacity must be >= 1")
        if self.arrivals and self.capacity < max(c for _, c in self.arrivals):
            raise InputError("capacity must cover the largest single request")


@dataclass
class SlackPolicy:
    probe_cost: int = 1

    def __post_init__(self) -> None:
        if self.probe_cost < 1:
            raise InputError("probe cost must be >= 1")


@dataclass
class ScheduleEntry:
    tick: int
    kind: str  # "hp" | "probe"
    index: int
    cost: int


@dataclass
class LatencyStats:
    count: int
    mean: float
    p50: int
    p90: int
    p99: int
    max: int

    @classmethod
    def of(cls, latencies: list[int]) -> "LatencyStats":
        if not latencies:
            return cls(0, 0.0, 0, 0, 0, 0)
        s = sorted(latencies)

        def pct(p: float) -> int:
            return s[max(0, math.ceil(p * len(s)) - 1)]

        return cls(len(s), sum(s) / len(s), pct(0.50), pct(0.90), pct(0.99), s[-1])

    def to_dict(self) -> dict:
        return {"count": self.count, "mean": self.mean, "p50": self.p50,
                "p90": self.p90, "p99": self.p99, "max": self.max}


@dataclass
class ScheduleResult:
    entries: list[ScheduleEntry]
    hp_latencies: list[int]
    probe_latencies: list[int]
    hp_stats: LatencyStats
    probe_stats: LatencyStats
    ticks: int
    utilization: float
    probe_throughput: float
    capacity: int

    def to_summary(self) -> dict:
        return {
            "ticks": self.ticks,
            "capacity": self.capacity,
            "utilization": self.utilization,
            "probe_throughput": self.probe_throughput,
            "hp": self.hp_stats.to_dict(),
            "probe": self.probe_stats.to_dict(),
        }


def slack_schedule(
    trace: InferenceTrace, probes: list, policy: SlackPolicy | None = None
) -> ScheduleResult:
    """Tick-driven batch simulation: every tick admits waiting high-priority
    requests first (strict FIFO, no skip-ahead), then fills leftover
    capacity with probe jobs.  Probes therefore never displace or delay a
    high-priority request: the high-priority schedule is identical to a
    probe-free replay by construction, and the interesting outputs are the
    residual-capacity utilization and the probe completion profile.

    Latency of a request served in tick t is t - arrival + 1 ticks; probe
    jobs are all available from tick 0.
    """
    policy = policy or SlackPolicy()
    if policy.probe_cost > trace.capacity:
        raise InputError("probe cost exceeds batch capacity")
    n_hp = len(trace.arrivals)
    n_probes = len(probes)
    entries: list[ScheduleEntry] = []
    hp_latencies: list[int] = [0] * n_hp
    probe_latencies: list[int] = [0] * n_probes
    next_hp = 0  # FIFO front of the high-priority queue
    next_probe = 0
    tick = 0
    used_units = 0
    probe_units = 0
    residual_while_pending = 0
    while next_hp < n_hp or next_probe < n_probes:
        room = trace.capacity
        while next_hp < n_hp:
            arrival, cost = trace.arrivals[next_hp]
            if arrival > tick or cost > room:
                break
            entries.append(ScheduleEntry(tick, "hp", next_hp, cost))
            hp_latencies[next_hp] = tick - arrival + 1
            room -= cost
            used_units += cost
            next_hp += 1
        if next_probe < n_probes:
            residual_while_pending += room
            while next_probe < n_probes and policy.probe_cost <= room:
                entries.append(ScheduleEntry(tick, "probe", next_probe, policy.probe_cost))
                probe_latencies[next_probe] = tick + 1
                room -= policy.probe_cost
                used_units += policy.probe_cost
                probe_units += policy.probe_cost
                next_probe += 1
        tick += 1
    ticks = tick
    utilization = used_units / (ticks * trace.capacity) if ticks else 0.0
    throughput = probe_units / residual_while_pending if residual_while_pending else 1.0
    return ScheduleResult(
        entries=entries,
        hp_latencies=hp_latencies,
        probe_latencies=probe_latencies,
        hp_stats=LatencyStats.of(hp_latencies),
        probe_stats=LatencyStats.of(probe_latencies),
        ticks=ticks,
        utilization=utilization,
        probe_throughput=throughput,
        capacity=trace.capacity,
    )


def brute_force_check(
    trace: InferenceTrace, probes: list, policy: SlackPolicy | None = None
) -> dict:
    """Independent naive replay plus invariant audit for small traces.

    Re-derives the schedule by scanning the full request list every tick
    (no queues), then asserts: identical assignments to slack_schedule,
    per-tick capacity respected, FIFO order within each class, probes only
    behind same-tick high-priority work, and a high-priority schedule
    identical to the probe-free replay.  Returns a small audit summary;
    raises AssertionError with a diagnostic on any violation.
    """
    policy = policy or SlackPolicy()
    result = slack_schedule(trace, probes, policy)

    # naive re-derivation: repeated full scans, no incremental state
    served_hp: dict[int, int] = {}
    served_probe: dict[int, int] = {}
    tick = 0
    naive: list[tuple[int, str, int, int]] = []
    while len(served_hp) < len(trace.arrivals) or len(served_probe) < len(probes):
        room = trace.capacity
        for i, (arrival, cost) in enumerate(trace.arrivals):
            if i in served_hp or arrival > tick:
                continue
            if any(j not in served_hp for j in range(i)):  # FIFO: all earlier served
                break
            if cost > room:
                break
            served_hp[i] = tick
            naive.append((tick, "hp", i, cost))
            room -= cost
        for i in range(len(probes)):
            if i in served_probe:
                continue
            if policy.probe_cost > room:
                break
            served_probe[i] = tick
            naive.append((tick, "probe", i, policy.probe_cost))
            room -= policy.probe_cost
        tick += 1
        assert tick < 10_000_000, "naive replay did not terminate"

    got = [(e.tick, e.kind, e.index, e.cost) for e in result.entries]
    assert got == naive, f"schedule mismatch: {got[:5]}... vs {naive[:5]}..."

    per_tick: dict[int, int] = {}
    for e in result.entries:
        per_tick[e.tick] = per_tick.get(e.tick, 0) + e.cost
    assert all(v <= trace.capacity for v in per_tick.values()), "capacity exceeded"

    for kind in ("hp", "probe"):
        ticks_of = [e.tick for e in result.entries if e.kind == kind]
        order_of = [e.index for e in result.entries if e.kind == kind]
        assert order_of == sorted(order_of), f"{kind} served out of FIFO order"
        assert ticks_of == sorted(ticks_of), f"{kind} tick order broken"

    probe_free = slack_schedule(trace, [], policy)
    hp_only = [(e.tick, e.index) for e in result.entries if e.kind == "hp"]
    hp_free = [(e.tick, e.index) for e in probe_free.entries if e.kind == "hp"]
    assert hp_only == hp_free, "probes perturbed the high-priority schedule"
    assert result.hp_latencies == probe_free.hp_latencies, "hp latencies changed"

    return {
        "events": len(trace.arrivals) + len(probes),
        "ticks": result.ticks,
        "agrees": True,
    }


# ---------------------------------------------------------------------------
# Cost reporting and the write-path microbenchmark.
# ---------------------------------------------------------------------------


def cost_report(meter: CostMeter, run=None) -> dict:
    """Scoring vs update vs fold decomposition, by instrumented cost units
    (examples scored / elements written) and by wall-clock share.

    Probe maintenance wall (the baseline's perturb/restore traffic) is
    reported under "update": both are weight-maintenance work, and the
    serving path's probes cost no writes at all.
    """
    times = {
        "scoring": meter.time_scoring_s,
        "update": meter.time_update_s + meter.time_probe_s,
        "fold": meter.time_fold_s,
    }
    total_time = sum(times.values())
    wall_shares = {
        k: (v / total_time if total_time > 0 else 0.0) for k, v in times.items()
    }
    report = {
        "units": {
            "scoring_cost_units": meter.scoring_cost_units,
            "scoring_calls": meter.scoring_calls,
            "writes_probe": meter.writes_probe,
            "writes_update": meter.writes_update,
            "writes_fold": meter.writes_fold,
            "weight_writes_total": meter.weight_writes,
        },
        "wall_s": times,
        "wall_share": wall_shares,
    }
    if run is not None:
        report["steps"] = getattr(run, "steps_completed", None) or len(run.trajectory)
        report["train_wall_s"] = run.train_wall_s
        report["kind"] = run.kind
    return report


def cost_report_text(report: dict) -> str:
    lines = ["component      wall_s      share    units"]
    units = report["units"]
    unit_of = {
        "scoring": f"{units['scoring_cost_units']} examples / {units['scoring_calls']} calls",
        "update": f"{units['writes_probe'] + units['writes_update']} writes",
        "fold": f"{units['writes_fold']} writes",
    }
    for k in ("scoring", "update", "fold"):
        lines.append(
            f"{k:<12} {report['wall_s'][k]:>9.4f} {report['wall_share'][k]:>9.1%}    {unit_of[k]}"
        )
    return "\n".join(lines)


def write_microbench(
    m: int = 512,
    n: int = 512,
    rank: int = 4,
    nu: int = 50,
    steps: int = 50,
    seed: int = 202,
) -> dict:
    """Per-step wall time of the two write paths with scoring stubbed out.

    Both loops sample real directions, build real step records, and move
    real bytes through the counted kernels; only the scorer is replaced by
    a constant, so what remains is exactly the weight/record traffic the
    paths disagree on.  Returns per-step means, the measured ratio, and the
    counter-verified closed-form write counts.
    """
    if min(m, n) < rank:
        raise ConfigError("rank must not exceed matrix dims")
    zcfg = ZoConfig(seed=seed, rank=rank, nu=nu)
    layer = "bench.w"

    # baseline: materialize, 4 dense writes per step
    w_base = np.zeros((m, n))
    writes0 = weight_writes()
    t0 = time.perf_counter()
    for t in range(steps):
        u, v = lozo_direction(seed, t, layer, m, n, rank, nu)
        p = dense_product(u, v)
        saved = w_base.copy()
        axpy_dense(w_base, zcfg.epsilon, p)
        axpy_dense(w_base, -2.0 * zcfg.epsilon, p)
        restore_matrix(w_base, saved)
        axpy_dense(w_base, -(zcfg.learning_rate * 0.0), p)
        _digest_step(seed, t, layer, u, v)
    baseline_s = time.perf_counter() - t0
    baseline_writes = weight_writes() - writes0

    # serving: accumulate on U, fold once per window
    w_serve = np.zeros((m, n))
    acc = np.zeros((m, rank))
    v_win = None
    writes0 = weight_writes()
    t0 = time.perf_counter()
    for t in range(steps):
        u, v = lozo_direction(seed, t, layer, m, n, rank, nu)
        if t % nu == 0:
            v_win = v
        axpy_dense(acc, -(zcfg.learning_rate * 0.0), u)
        _digest_step(seed, t, layer, u, v)
        if (t + 1) % nu == 0 or (t + 1) == steps:
            axpy_outer(w_serve, 1.0, acc, v_win)
            acc[...] = 0.0
    serving_s = time.perf_counter() - t0
    serving_writes = weight_writes() - writes0

    windows = math.ceil(steps / nu)
    return {
        "m": m, "n": n, "rank": rank, "nu": nu, "steps": steps,
        "baseline_per_step_s": baseline_s / steps,
        "serving_per_step_s": serving_s / steps,
        "speedup": baseline_s / serving_s if serving_s > 0 else float("inf"),
        "baseline_writes": baseline_writes,
        "serving_writes": serving_writes,
        "baseline_writes_expected": steps * 4 * m * n,
        "serving_writes_expected": steps * m * rank + windows * m * n,
    }


def _digest_step(seed: int, t: int, layer: str, u: np.ndarray, v: np.ndarray) -> ZoStepRecord:
    hu = digest_array(u, FNV_OFFSET_BASIS)
    hv = digest_array(v, FNV_OFFSET_BASIS)
    return ZoStepRecord(
        step=t, loss_plus=1.0, loss_minus=1.0, coefficient=0.0, beta=0.0,
        seed=seed, u_digest=digest_hex(hu), v_digest=digest_hex(hv), minibatch_id="bench",
    )


# ---------------------------------------------------------------------------
# Trace / schedule file formats.
# ---------------------------------------------------------------------------


def synthetic_trace(
    n_events: int,
    capacity: int = 8,
    occupancy: float = 0.4,
    seed: int = 303,
    max_cost: int | None = None,
) -> InferenceTrace:
    """Random high-priority arrival trace with a target offered load.

    Costs are uniform integers in [1, max_cost] (default capacity // 2);
    exponential inter-arrival gaps are tuned so the mean offered work per
    tick is ``occupancy * capacity``.
    """
    if not 0.0 < occupancy <= 1.0:
        raise ConfigError("occupancy must be in (0, 1]")
    if n_events < 0:
        raise ConfigError("n_events must be >= 0")
    max_cost = max(1, capacity // 2) if max_cost is None else max_cost
    if max_cost > capacity:
        raise ConfigError(f"max_cost {max_cost} exceeds capacity {capacity}")
    rng = np.random.default_rng(seed)
    costs = rng.integers(1, max_cost + 1, size=n_events)
    mean_cost = (1 + max_cost) / 2.0
    lam = occupancy * capacity / mean_cost  # target arrivals per tick
    gaps = rng.exponential(1.0 / lam, size=n_events)
    times = np.floor(np.cumsum(gaps)).astype(np.int64)
    return InferenceTrace(
        arrivals=list(zip(times.tolist(), costs.tolist())), capacity=capacity
    )


def read_trace_csv(path: str, capacity: int) -> InferenceTrace:
    arrivals = []
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None or not {"arrival_time", "cost"} <= set(reader.fieldnames):
            raise InputError(f"{path}: expected header arrival_time,cost")
        for row in reader:
            arrivals.append((int(row["arrival_time"]), int(row["cost"])))
    return InferenceTrace(arrivals=arrivals, capacity=capacity)


def write_trace_csv(trace: InferenceTrace, path: str) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["arrival_time", "cost"])
        writer.writerows(trace.arrivals)


def write_schedule_csv(result: ScheduleResult, path: str) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["tick", "kind", "index", "cost"])
        for e in result.entries:
            writer.writerow([e.tick, e.kind, e.index, e.cost])
