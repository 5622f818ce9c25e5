"""Two-point zeroth-order estimators and their update rules.

Three estimators share one step shape — perturb, score twice, update:

* ``dense_mezo``: full Gaussian directions, in-place perturb/restore of
  every parameter (the memory-efficient classic, used as the comparison
  anchor).
* ``lozo_lazy``: per-matrix rank-r directions U V^T where V is frozen for
  ``nu``-step windows and U is fresh each step; updates accumulate on the
  window slot's A factor so the dense weight is only touched at folds.
* ``factorized_sqrt_r``: rank-r directions U V^T / sqrt(r) whose entries
  have unit variance for any r (and approach a Gaussian as r grows); r may
  exceed the matrix dimensions.

All directions come from keyed streams, so a step's randomness is a pure
function of (seed, step, layer_id, role) and both execution paths replay
identical directions.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .adapter import AdapterState, LoraSlot, accumulate_on_U
from .model import Minibatch, ModelConfig, forward_score, matrix_ids, vector_ids
from .numerics import (
    ConfigError,
    FNV_OFFSET_BASIS,
    InputError,
    Role,
    StreamKey,
    axpy_dense,
    axpy_outer,
    digest_array,
    digest_hex,
    digest_text,
    gaussian_vector,
    restore_matrix,
    sample_gaussian,
)

__all__ = [
    "SCOPES",
    "ESTIMATORS",
    "ZoConfig",
    "ZoStepRecord",
    "write_trajectory",
    "read_trajectory",
    "lozo_direction",
    "factorized_direction",
    "dense_direction",
    "StepDirections",
    "step_directions",
    "estimate_coefficient",
    "VectorProbe",
    "make_step_record",
    "lozo_step",
    "factorized_step",
    "dense_mezo_step",
    "estimator_expectation",
]

SCOPES = ("lora_only", "full")
ESTIMATORS = ("dense_mezo", "lozo_lazy", "factorized_sqrt_r")


@dataclass(frozen=True)
class ZoConfig:
    seed: int = 42
    epsilon: float = 1e-3
    learning_rate: float = 1e-3
    rank: int = 2
    nu: int = 50
    divide_by_r: bool = False
    scope: str = "lora_only"
    estimator: str = "lozo_lazy"
    batch_size: int = 16

    def __post_init__(self) -> None:
        if self.epsilon <= 0:
            raise ConfigError("epsilon must be > 0")
        if self.nu < 1 or self.rank < 1:
            raise ConfigError("nu and rank must be >= 1")
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be >= 0")
        if self.scope not in SCOPES:
            raise ConfigError(f"scope must be one of {SCOPES}, got {self.scope!r}")
        if self.estimator not in ESTIMATORS:
            raise ConfigError(f"estimator must be one of {ESTIMATORS}, got {self.estimator!r}")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")

    def digest(self) -> str:
        return digest_hex(digest_text(json.dumps(asdict(self), sort_keys=True)))


@dataclass
class ZoStepRecord:
    """One step's audit trail: the paired losses, the coefficient, and the
    fingerprints needed to replay or cross-check the step."""

    step: int
    loss_plus: float
    loss_minus: float
    coefficient: float  # (loss_plus - loss_minus) / (2 epsilon), as computed
    beta: float  # effective slot weight applied this step (-eta * c, after any 1/r)
    seed: int
    u_digest: str
    v_digest: str
    minibatch_id: str

    def to_dict(self) -> dict:
        d = {"record": "step"}
        d.update(asdict(self))
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ZoStepRecord":
        fields = {k: d[k] for k in (
            "step", "loss_plus", "loss_minus", "coefficient", "beta",
            "seed", "u_digest", "v_digest", "minibatch_id",
        )}
        return cls(**fields)


def write_trajectory(
    path: str, header: dict, records: list[ZoStepRecord], final: dict | None = None
) -> None:
    """JSON-lines trajectory: one header line, one line per step, and an
    optional final summary line.  Float fields round-trip exactly."""
    with open(path, "w") as f:
        head = {"record": "header", "schema": 1}
        head.update(header)
        f.write(json.dumps(head, sort_keys=True) + "\n")
        for rec in records:
            f.write(json.dumps(rec.to_dict(), sort_keys=True) + "\n")
        if final is not None:
            tail = {"record": "final"}
            tail.update(final)
            f.write(json.dumps(tail, sort_keys=True) + "\n")


def read_trajectory(path: str) -> tuple[dict, list[ZoStepRecord], dict | None]:
    with open(path) as f:
        lines = [json.loads(line) for line in f if line.strip()]
    if not lines or lines[0].get("record") != "header":
        raise InputError(f"{path}: not a trajectory file (missing header line)")
    header = lines[0]
    records = [ZoStepRecord.from_dict(d) for d in lines[1:] if d.get("record") == "step"]
    finals = [d for d in lines[1:] if d.get("record") == "final"]
    return header, records, finals[-1] if finals else None


# ---------------------------------------------------------------------------
# Direction sampling.
# ---------------------------------------------------------------------------


def lozo_direction(
    seed: int, step: int, layer_id: str, m: int, n: int, rank: int, nu: int
) -> tuple[np.ndarray, np.ndarray]:
    """Lazy low-rank direction factors for one matrix at one step.

    V is keyed by the window start (step // nu * nu), so every step of a
    window sees identical V bits; U is keyed by the step itself.
    """
    if rank > min(m, n):
        raise ConfigError(f"rank {rank} exceeds min dim of {m}x{n} matrix")
    if rank < 1 or nu < 1:
        raise ConfigError("rank and nu must be >= 1")
    window_start = (step // nu) * nu
    v = sample_gaussian(StreamKey(seed, window_start, layer_id, Role.V), n, rank)
    u = sample_gaussian(StreamKey(seed, step, layer_id, Role.U), m, rank)
    return u, v


def factorized_direction(
    seed: int, step: int, layer_id: str, m: int, n: int, rank: int
) -> LoraSlot:
    """Rank-r direction slot U V^T / sqrt(r); entries have mean 0 and
    variance 1 for every r, so r may exceed the matrix dimensions.  Never
    materialized dense during scoring."""
    if rank < 1:
        raise ConfigError("rank must be >= 1")
    u = sample_gaussian(StreamKey(seed, step, layer_id, Role.U), m, rank)
    v = sample_gaussian(StreamKey(seed, step, layer_id, Role.V), n, rank)
    return LoraSlot(u, v, 1.0 / math.sqrt(rank))


def dense_direction(seed: int, step: int, layer_id: str, shape: tuple[int, ...]) -> np.ndarray:
    key = StreamKey(seed, step, layer_id, Role.DENSE_Z)
    if len(shape) == 1:
        return gaussian_vector(key, shape[0])
    return sample_gaussian(key, shape[0], shape[1])


@dataclass
class StepDirections:
    """All directions for one step plus their chained fingerprints.

    ``matrices`` maps layer id to (U, V) factor pairs (V scaled at use for
    the factorized estimator) or to a dense z for the dense estimator;
    ``vectors`` holds dense 1-D directions.  The U digest chains the U (or
    dense) arrays in sorted layer order, vectors last; the V digest chains
    the V arrays (the dense estimator has no V part and records the empty
    digest).
    """

    matrices: dict
    vectors: dict
    u_digest: str
    v_digest: str
    scale: float = 1.0  # direction scale applied at use (1/sqrt(r) for factorized)


def _chain(h: int, layer_id: str, a: np.ndarray) -> int:
    return digest_array(a, digest_text(layer_id, h))


def step_directions(params, zcfg: ZoConfig, step: int) -> StepDirections:
    """Sample every direction this step needs, in one place, so both
    execution paths and the record digests agree by construction."""
    mids = matrix_ids(params)
    vids = vector_ids(params)
    hu = FNV_OFFSET_BASIS
    hv = FNV_OFFSET_BASIS
    matrices: dict = {}
    vectors: dict = {}
    scale = 1.0

    if zcfg.estimator == "dense_mezo":
        for lid in mids:
            z = dense_direction(zcfg.seed, step, lid, params[lid].shape)
            matrices[lid] = z
            hu = _chain(hu, lid, z)
        for lid in vids:
            z = dense_direction(zcfg.seed, step, lid, params[lid].shape)
            vectors[lid] = z
            hu = _chain(hu, lid, z)
        return StepDirections(matrices, vectors, digest_hex(hu), digest_hex(hv))

    for lid in mids:
        m, n = params[lid].shape
        if zcfg.estimator == "lozo_lazy":
            u, v = lozo_direction(zcfg.seed, step, lid, m, n, zcfg.rank, zcfg.nu)
        else:
            slot = factorized_direction(zcfg.seed, step, lid, m, n, zcfg.rank)
            u, v, scale = slot.A, slot.B, slot.scale
        matrices[lid] = (u, v)
        hu = _chain(hu, lid, u)
        hv = _chain(hv, lid, v)
    if zcfg.scope == "full":
        for lid in vids:
            z = dense_direction(zcfg.seed, step, lid, params[lid].shape)
            vectors[lid] = z
            hu = _chain(hu, lid, z)
    return StepDirections(matrices, vectors, digest_hex(hu), digest_hex(hv), scale)


# ---------------------------------------------------------------------------
# Coefficient estimation.
# ---------------------------------------------------------------------------


class VectorProbe:
    """In-place +/- epsilon probing of 1-D parameters with bit-exact
    restore, shared by both execution paths so their vector trajectories
    agree bit-for-bit."""

    def __init__(self, params, vectors: dict, epsilon: float):
        self.params = params
        self.vectors = vectors
        self.epsilon = epsilon
        self._saved = {lid: params[lid].copy() for lid in vectors}
        self._sign = 0

    def set_sign(self, sign: int) -> None:
        if sign == self._sign:
            return
        for lid, z in self.vectors.items():
            if sign == 0:
                restore_matrix(self.params[lid], self._saved[lid])
            else:
                axpy_dense(self.params[lid], (sign - self._sign) * self.epsilon, z)
        self._sign = sign

    def update(self, eta: float, c: float) -> None:
        if self._sign != 0:
            raise ConfigError("cannot update while a vector probe is active")
        for lid, z in self.vectors.items():
            axpy_dense(self.params[lid], -(eta * c), z)


def estimate_coefficient(
    scorer,
    state: AdapterState,
    epsilon: float,
    batch,
    on_sign=None,
) -> tuple[float, float, float]:
    """Two-point coefficient via the adapter's probe switch.

    Scores with perturb_sign=+1 then -1, restores sign 0, and returns
    ``c = (L_plus - L_minus) / (2 epsilon)`` with the two losses.  Exactly
    two scoring calls; no weight writes (composition is a view).  The
    optional ``on_sign`` hook lets the caller swing in-place 1-D probes in
    lockstep with the slot sign (full scope); the hook's writes belong to
    the caller's accounting, not to this operation.
    """
    if epsilon <= 0:
        raise ConfigError("epsilon must be > 0")
    if not any(e.perturb_slot is not None for e in state.entries.values()):
        raise ConfigError("no active perturbation slot installed")
    try:
        state.set_sign(+1)
        if on_sign is not None:
            on_sign(+1)
        loss_plus = float(scorer(batch))
        state.set_sign(-1)
        if on_sign is not None:
            on_sign(-1)
        loss_minus = float(scorer(batch))
    finally:
        state.set_sign(0)
        if on_sign is not None:
            on_sign(0)
    c = (loss_plus - loss_minus) / (2.0 * epsilon)
    return c, loss_plus, loss_minus


# ---------------------------------------------------------------------------
# Step transactions.
# ---------------------------------------------------------------------------


def _default_scorer(params, mcfg: ModelConfig, state: AdapterState | None, precision: str):
    view = state.view() if state is not None else None

    def scorer(batch: Minibatch) -> float:
        return forward_score(params, mcfg, batch, view=view, precision=precision)

    return scorer


def make_step_record(
    zcfg: ZoConfig, step: int, lp: float, lm: float, beta: float, dirs: StepDirections, batch
) -> ZoStepRecord:
    """Build the audit record; the coefficient is recomputed from the
    recorded losses so record and arithmetic can never disagree."""
    c = (lp - lm) / (2.0 * zcfg.epsilon)
    return ZoStepRecord(
        step=step,
        loss_plus=lp,
        loss_minus=lm,
        coefficient=c,
        beta=beta,
        seed=zcfg.seed,
        u_digest=dirs.u_digest,
        v_digest=dirs.v_digest,
        minibatch_id=batch.batch_id,
    )


def lozo_step(
    params,
    mcfg: ModelConfig,
    state: AdapterState,
    zcfg: ZoConfig,
    step: int,
    batch: Minibatch,
    precision: str = "real64",
    scorer=None,
) -> ZoStepRecord:
    """One lazy low-rank step against the adapter: install probe slots,
    estimate the shared coefficient from paired scoring, accumulate
    ``-eta*c`` (times 1/r when divide_by_r is on) on each window slot's A
    factor.  Dense weights are untouched; folds are the caller's policy.

    Window bookkeeping at each window start is value-neutral: a window slot
    that still carries unfolded mass is frozen into the update-slot list
    (merged down under the slot cap) before V changes.  On scoring failure
    the probes and any vector perturbation are rolled back and no update is
    applied.
    """
    dirs = step_directions(params, zcfg, step)
    for lid, (u, v) in dirs.matrices.items():
        m, n = params[lid].shape
        entry = state.ensure_entry(lid, m, n)
        if entry.window_slot is None:
            entry.window_slot = LoraSlot(np.zeros((m, zcfg.rank)), v.copy(), 1.0)
        elif step % zcfg.nu == 0:
            if np.any(entry.window_slot.A):
                state.add_frozen_slot(lid, entry.window_slot.copy())
                entry.window_slot.A[...] = 0.0
            entry.window_slot.B = v.copy()
        state.set_probe(lid, u, v)
    vec_probe = VectorProbe(params, dirs.vectors, zcfg.epsilon) if dirs.vectors else None
    if scorer is None:
        scorer = _default_scorer(params, mcfg, state, precision)
    try:
        c, lp, lm = estimate_coefficient(
            scorer, state, zcfg.epsilon, batch,
            on_sign=vec_probe.set_sign if vec_probe else None,
        )
    finally:
        state.clear_probes()
    c_used = c / zcfg.rank if zcfg.divide_by_r else c
    for lid, (u, _v) in dirs.matrices.items():
        accumulate_on_U(state.entries[lid].window_slot, zcfg.learning_rate, c_used, u)
    if vec_probe is not None:
        # dense 1-D directions carry no rank normalization
        vec_probe.update(zcfg.learning_rate, c)
    return make_step_record(zcfg, step, lp, lm, -(zcfg.learning_rate * c_used), dirs, batch)


def factorized_step(
    params,
    mcfg: ModelConfig,
    state: AdapterState,
    zcfg: ZoConfig,
    step: int,
    batch: Minibatch,
    precision: str = "real64",
    scorer=None,
) -> ZoStepRecord:
    """One sqrt(r)-normalized factorized step.  The probe is slot-shaped
    (scale 1/sqrt(r), never materialized for scoring); the update folds
    straight into the dense base, one counted m*n write per matrix, since
    fresh V every step leaves nothing for a window slot to share.
    divide_by_r does not apply to this estimator."""
    dirs = step_directions(params, zcfg, step)
    for lid, (u, v) in dirs.matrices.items():
        entry = state.ensure_entry(lid, *params[lid].shape)
        entry.perturb_slot = LoraSlot(u, v, dirs.scale)
    vec_probe = VectorProbe(params, dirs.vectors, zcfg.epsilon) if dirs.vectors else None
    if scorer is None:
        scorer = _default_scorer(params, mcfg, state, precision)
    try:
        c, lp, lm = estimate_coefficient(
            scorer, state, zcfg.epsilon, batch,
            on_sign=vec_probe.set_sign if vec_probe else None,
        )
    finally:
        state.clear_probes()
    for lid, (u, v) in dirs.matrices.items():
        axpy_outer(params[lid], -(zcfg.learning_rate * c) * dirs.scale, u, v)
    if vec_probe is not None:
        vec_probe.update(zcfg.learning_rate, c)
    return make_step_record(zcfg, step, lp, lm, -(zcfg.learning_rate * c), dirs, batch)


def _dense_probe_coefficient(
    params, dirs: StepDirections, epsilon: float, scorer, batch
) -> tuple[float, float, float]:
    """Perturb every parameter by +eps z, score, swing to -eps z, score,
    restore the saved bits.  Returns (c, L+, L-)."""
    every = {**dirs.matrices, **dirs.vectors}
    saved = {lid: params[lid].copy() for lid in every}
    try:
        for lid, z in every.items():
            axpy_dense(params[lid], epsilon, z)
        lp = float(scorer(batch))
        for lid, z in every.items():
            axpy_dense(params[lid], -2.0 * epsilon, z)
        lm = float(scorer(batch))
    finally:
        for lid in every:
            restore_matrix(params[lid], saved[lid])
    return (lp - lm) / (2.0 * epsilon), lp, lm


def dense_mezo_step(
    params,
    mcfg: ModelConfig,
    zcfg: ZoConfig,
    step: int,
    batch: Minibatch,
    precision: str = "real64",
    scorer=None,
) -> ZoStepRecord:
    """One dense two-point step: full Gaussian z over every parameter
    (scope is ignored — this estimator is the all-dense anchor), in-place
    probing with bit-exact restore, then theta <- theta - eta*c*z."""
    dirs = step_directions(params, zcfg, step)
    if scorer is None:
        scorer = _default_scorer(params, mcfg, None, precision)
    c, lp, lm = _dense_probe_coefficient(params, dirs, zcfg.epsilon, scorer, batch)
    for lid, z in {**dirs.matrices, **dirs.vectors}.items():
        axpy_dense(params[lid], -(zcfg.learning_rate * c), z)
    return make_step_record(zcfg, step, lp, lm, -(zcfg.learning_rate * c), dirs, batch)


def estimator_expectation(
    params,
    mcfg: ModelConfig,
    zcfg: ZoConfig,
    batch: Minibatch,
    n_directions: int,
    precision: str = "real64",
) -> dict[str, np.ndarray]:
    """Mean of c*z over fresh dense directions at fixed parameters — the
    empirical estimator expectation, comparable against a finite-difference
    gradient.  Parameters are left untouched."""
    scorer = _default_scorer(params, mcfg, None, precision)
    sums: dict[str, np.ndarray] = {lid: np.zeros_like(p) for lid, p in params.items()}
    dense_cfg = ZoConfig(
        seed=zcfg.seed, epsilon=zcfg.epsilon, learning_rate=0.0,
        estimator="dense_mezo", batch_size=zcfg.batch_size,
    )
    for k in range(n_directions):
        dirs = step_directions(params, dense_cfg, k)
        c, _, _ = _dense_probe_coefficient(params, dirs, zcfg.epsilon, scorer, batch)
        for lid, z in {**dirs.matrices, **dirs.vectors}.items():
            sums[lid] += c * z
    return {lid: s / n_directions for lid, s in sums.items()}
