"""Conventional training-loop reference path: materialize the probe, write
the dense weights four times per matrix per step.

This is the correctness oracle the serving path is compared against and
the cost comparand it is benchmarked against.  Directions, minibatches,
and records come from the same keyed streams as the serving path, so the
two trajectories line up step for step.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .model import (
    EvalPoint,
    ModelConfig,
    TaskData,
    evaluate_split,
    forward_score,
    init_params,
    params_digest,
    sample_minibatch,
)
from .numerics import (
    ConfigError,
    axpy_dense,
    axpy_outer,
    dense_product,
    restore_matrix,
    weight_writes,
)
from .runtime import CostMeter
from .zo_engine import (
    VectorProbe,
    ZoConfig,
    ZoStepRecord,
    make_step_record,
    step_directions,
    write_trajectory,
)

__all__ = ["BaselineRun", "run_baseline", "compare_ready_export", "run_header"]


@dataclass
class BaselineRun:
    config: ZoConfig
    model_config: ModelConfig
    trajectory: list[ZoStepRecord]
    eval_curve: list[EvalPoint]
    weight_write_count: int
    meter: CostMeter
    final_params_digest: str
    params: dict
    train_wall_s: float
    precision: str
    steps_completed: int
    model_digest: str
    task_digest: str
    recompute_products: bool
    kind: str = "baseline"
    probe_pairs: list = field(default_factory=list)  # symmetry with ServingRun


class _Probe:
    """Per-step materialized low-rank perturbation of one matrix.

    Cached mode builds the rank-r product once, reuses it for all four
    writes, and restores the saved pre-step bits (the +eps/-2eps/+eps
    pattern does not cancel bitwise in floating point, so the restore is a
    copy of the cached bits — still one counted m*n write).  Recompute mode
    re-derives the product at every write and restores arithmetically,
    deliberately reproducing the extra-additions degradation that the
    cached pattern avoids.
    """

    def __init__(self, w: np.ndarray, u: np.ndarray, v: np.ndarray, scale: float, recompute: bool):
        self.w = w
        self.u = u
        self.v = v
        self.scale = scale
        self.recompute = recompute
        self.product = None if recompute else dense_product(u, v)
        self.saved = None if recompute else w.copy()

    def apply(self, alpha: float) -> None:
        if self.recompute:
            axpy_outer(self.w, alpha * self.scale, self.u, self.v)
        else:
            axpy_dense(self.w, alpha * self.scale, self.product)

    def restore(self, eps: float) -> None:
        if self.recompute:
            self.apply(eps)  # arithmetic +eps: not bit-exact, by design
        else:
            restore_matrix(self.w, self.saved)


class _DenseProbe:
    """Same four-write pattern with a dense direction, any parameter shape
    (the dense estimator perturbs everything this way)."""

    def __init__(self, w: np.ndarray, z: np.ndarray, recompute: bool):
        self.w = w
        self.z = z
        self.recompute = recompute
        self.saved = None if recompute else w.copy()

    def apply(self, alpha: float) -> None:
        axpy_dense(self.w, alpha, self.z)

    def restore(self, eps: float) -> None:
        if self.recompute:
            self.apply(eps)
        else:
            restore_matrix(self.w, self.saved)


def run_baseline(
    mcfg: ModelConfig,
    task: TaskData,
    zcfg: ZoConfig,
    steps: int,
    precision: str = "real64",
    eval_every: int = 50,
    recompute_products: bool = False,
    params: dict | None = None,
) -> BaselineRun:
    """Full-weight perturb/score/restore/update loop.

    Per step and per perturbed matrix: W += eps*P (m*n write), score L+;
    W -= 2eps*P (m*n write), score L-; restore (m*n write); W -= eta*c*P
    (m*n write) — 4*m*n counted writes per matrix per step, plus four
    1-D writes per vector parameter under full scope.  All three
    estimators run here; the dense one perturbs every parameter densely.
    """
    if steps < 1:
        raise ConfigError("steps must be >= 1")
    if params is None:
        params = init_params(mcfg)
    model_digest = params_digest(params)
    task_digest = task.digest()
    meter = CostMeter()
    eps = zcfg.epsilon
    eta = zcfg.learning_rate

    def scorer(batch) -> float:
        t0 = time.perf_counter()
        loss = forward_score(params, mcfg, batch, view=None, precision=precision)
        meter.add_scoring(1, batch.prompts.shape[0], time.perf_counter() - t0)
        return loss

    trajectory: list[ZoStepRecord] = []
    eval_curve: list[EvalPoint] = []
    train_wall = 0.0
    writes_start = weight_writes()

    def do_eval(at_step: int) -> None:
        loss, acc = evaluate_split(params, mcfg, task, "dev", None, precision)
        eval_curve.append(EvalPoint(at_step, train_wall * 1e3, loss, acc))

    do_eval(0)
    for t in range(steps):
        batch = sample_minibatch(task, "train", zcfg.seed, t, zcfg.batch_size)
        t0 = time.perf_counter()
        dirs = step_directions(params, zcfg, t)
        probes: list = []
        vec_probe = None
        if zcfg.estimator == "dense_mezo":
            for lid, z in {**dirs.matrices, **dirs.vectors}.items():
                probes.append(_DenseProbe(params[lid], z, recompute_products))
        else:
            for lid, (u, v) in dirs.matrices.items():
                probes.append(_Probe(params[lid], u, v, dirs.scale, recompute_products))
            if dirs.vectors:
                vec_probe = VectorProbe(params, dirs.vectors, eps)

        probe_w0 = weight_writes()
        probe_secs = 0.0

        m0 = time.perf_counter()
        for p in probes:
            p.apply(eps)
        if vec_probe:
            vec_probe.set_sign(+1)
        probe_secs += time.perf_counter() - m0
        lp = scorer(batch)

        m0 = time.perf_counter()
        for p in probes:
            p.apply(-2.0 * eps)
        if vec_probe:
            vec_probe.set_sign(-1)
        probe_secs += time.perf_counter() - m0
        lm = scorer(batch)

        m0 = time.perf_counter()
        for p in probes:
            p.restore(eps)
        if vec_probe:
            vec_probe.set_sign(0)
        probe_secs += time.perf_counter() - m0
        meter.add_writes("probe", weight_writes() - probe_w0, probe_secs)

        c = (lp - lm) / (2.0 * eps)
        c_used = c / zcfg.rank if (zcfg.divide_by_r and zcfg.estimator == "lozo_lazy") else c
        update_w0 = weight_writes()
        u0 = time.perf_counter()
        for p in probes:
            p.apply(-(eta * c_used))
        if vec_probe:
            vec_probe.update(eta, c)  # dense 1-D updates carry no rank factor
        meter.add_writes("update", weight_writes() - update_w0, time.perf_counter() - u0)

        trajectory.append(make_step_record(zcfg, t, lp, lm, -(eta * c_used), dirs, batch))
        train_wall += time.perf_counter() - t0
        if (t + 1) % eval_every == 0 and (t + 1) != steps:
            do_eval(t + 1)
    do_eval(steps)

    return BaselineRun(
        config=zcfg,
        model_config=mcfg,
        trajectory=trajectory,
        eval_curve=eval_curve,
        weight_write_count=weight_writes() - writes_start,
        meter=meter,
        final_params_digest=params_digest(params),
        params=params,
        train_wall_s=train_wall,
        precision=precision,
        steps_completed=steps,
        model_digest=model_digest,
        task_digest=task_digest,
        recompute_products=recompute_products,
    )


def run_header(run, path_name: str, extra: dict | None = None) -> dict:
    """Trajectory-file header shared by both execution paths."""
    header = {
        "path": path_name,
        "precision": run.precision,
        "steps": run.steps_completed,
        "seed": run.config.seed,
        "estimator": run.config.estimator,
        "scope": run.config.scope,
        "zo_digest": run.config.digest(),
        "model_digest": run.model_digest,
        "task_digest": run.task_digest,
    }
    if extra:
        header.update(extra)
    return header


def compare_ready_export(run, path: str, extra_header: dict | None = None) -> str:
    """Write a run in the shared JSON-lines trajectory format (header line,
    step records, final summary line).  Returns the path."""
    final_eval = run.eval_curve[-1]
    final = {
        "eval_loss": final_eval.loss,
        "eval_acc": final_eval.acc,
        "params_digest": run.final_params_digest,
        "weight_writes": run.weight_write_count,
    }
    write_trajectory(path, run_header(run, run.kind, extra_header), run.trajectory, final)
    return path
