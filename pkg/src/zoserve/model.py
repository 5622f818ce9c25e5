"""Tiny deterministic decoder-only scorer and its synthetic option task.

The model exists to produce losses for zeroth-order probes, so everything is
organized around a pure scoring call: parameters in, scalar loss out, no
state.  Weights are float64; a real32 emulation mode casts the composed
weights and runs the whole pipeline in float32 to study precision effects
without changing the stored parameters.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .numerics import (
    ConfigError,
    DimensionError,
    InputError,
    Role,
    StreamKey,
    canonical_mean,
    digest_array,
    digest_bytes,
    digest_hex,
    digest_text,
    sample_gaussian,
    sample_indices,
)

__all__ = [
    "ModelConfig",
    "init_params",
    "params_digest",
    "matrix_ids",
    "vector_ids",
    "pos_encoding",
    "forward_score",
    "eval_accuracy",
    "full_gradient_fd",
    "TaskConfig",
    "TaskData",
    "generate_task",
    "save_task",
    "load_task",
    "Minibatch",
    "sample_minibatch",
    "EvalPoint",
    "evaluate_split",
]

# Composed-weight views are plain callables so the adapter layer can stay
# decoupled from the model: view(layer_id, base) -> effective matrix.
WeightView = Callable[[str, np.ndarray], np.ndarray]

_GELU_C = math.sqrt(2.0 / math.pi)


@dataclass(frozen=True)
class ModelConfig:
    vocab: int = 64
    dim: int = 32
    n_layers: int = 2
    n_heads: int = 2
    prompt_len: int = 16
    init_seed: int = 7
    init_scale: float = 0.08

    def __post_init__(self) -> None:
        if self.dim % self.n_heads != 0:
            raise ConfigError(f"dim {self.dim} not divisible by n_heads {self.n_heads}")
        if self.vocab < 8:
            raise ConfigError("vocab must leave room for control tokens (>= 8)")
        if min(self.dim, self.n_layers, self.n_heads, self.prompt_len) < 1:
            raise ConfigError("model dimensions must be positive")

    def digest(self) -> str:
        return digest_hex(digest_text(json.dumps(self.__dict__, sort_keys=True)))


def init_params(cfg: ModelConfig) -> dict[str, np.ndarray]:
    """Fresh parameter dict keyed by layer id.

    Matrices draw from per-layer INIT streams scaled by ``init_scale``;
    layer-norm vectors start at identity (scale 1, shift 0).  The same
    config always reproduces the same bits.
    """
    d = cfg.dim

    def mat(layer_id: str, rows: int, cols: int) -> np.ndarray:
        key = StreamKey(cfg.init_seed, 0, layer_id, Role.INIT)
        return cfg.init_scale * sample_gaussian(key, rows, cols)

    params: dict[str, np.ndarray] = {"embed": mat("embed", cfg.vocab, d)}
    for i in range(cfg.n_layers):
        params[f"blk{i}.qkv"] = mat(f"blk{i}.qkv", d, 3 * d)
        params[f"blk{i}.attn_out"] = mat(f"blk{i}.attn_out", d, d)
        params[f"blk{i}.ff_up"] = mat(f"blk{i}.ff_up", d, 4 * d)
        params[f"blk{i}.ff_down"] = mat(f"blk{i}.ff_down", 4 * d, d)
        for ln in ("ln1", "ln2"):
            params[f"blk{i}.{ln}.scale"] = np.ones(d)
            params[f"blk{i}.{ln}.shift"] = np.zeros(d)
    params["ln_f.scale"] = np.ones(d)
    params["ln_f.shift"] = np.zeros(d)
    return params


def params_digest(params: Mapping[str, np.ndarray]) -> str:
    """Chained digest over layer ids and weights in sorted-id order."""
    h = digest_text("params")
    for lid in sorted(params):
        h = digest_text(lid, h)
        h = digest_array(params[lid], h)
    return digest_hex(h)


def matrix_ids(params: Mapping[str, np.ndarray]) -> list[str]:
    return sorted(k for k, v in params.items() if v.ndim == 2)


def vector_ids(params: Mapping[str, np.ndarray]) -> list[str]:
    return sorted(k for k, v in params.items() if v.ndim == 1)


def pos_encoding(length: int, dim: int) -> np.ndarray:
    """Fixed sinusoidal position table, (length, dim) float64."""
    pos = np.arange(length)[:, None].astype(np.float64)
    idx = np.arange(dim)[None, :]
    angle = pos / np.power(10000.0, (2.0 * (idx // 2)) / dim)
    pe = np.zeros((length, dim))
    pe[:, 0::2] = np.sin(angle[:, 0::2])
    pe[:, 1::2] = np.cos(angle[:, 1::2])
    return pe


def _layer_norm(x: np.ndarray, scale: np.ndarray, shift: np.ndarray) -> np.ndarray:
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + 1e-5) * scale + shift


def _gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + np.tanh(_GELU_C * (x + 0.044715 * x**3)))


def _precision_dtype(precision: str) -> np.dtype:
    if precision == "real64":
        return np.dtype(np.float64)
    if precision == "real32":
        return np.dtype(np.float32)
    raise ConfigError(f"unknown precision {precision!r}")


def _effective_weights(
    params: Mapping[str, np.ndarray],
    view: WeightView | None,
    dtype: np.dtype,
) -> dict[str, np.ndarray]:
    eff: dict[str, np.ndarray] = {}
    for lid, w in params.items():
        if view is not None and w.ndim == 2:
            w = view(lid, w)
        eff[lid] = w if w.dtype == dtype else w.astype(dtype)
    return eff


def _forward_logits(
    eff: Mapping[str, np.ndarray], cfg: ModelConfig, tokens: np.ndarray
) -> np.ndarray:
    """Logits at every position, (B, T, vocab), in the dtype of ``eff``."""
    B, T = tokens.shape
    d, H = cfg.dim, cfg.n_heads
    dh = d // H
    emb = eff["embed"]
    dtype = emb.dtype

    x = emb[tokens] + pos_encoding(T, d).astype(dtype)
    causal = np.triu(np.ones((T, T), dtype=bool), k=1)
    for i in range(cfg.n_layers):
        h = _layer_norm(x, eff[f"blk{i}.ln1.scale"], eff[f"blk{i}.ln1.shift"])
        qkv = h @ eff[f"blk{i}.qkv"]
        q, k, v = qkv[..., :d], qkv[..., d : 2 * d], qkv[..., 2 * d :]
        q = q.reshape(B, T, H, dh).transpose(0, 2, 1, 3)
        k = k.reshape(B, T, H, dh).transpose(0, 2, 1, 3)
        v = v.reshape(B, T, H, dh).transpose(0, 2, 1, 3)
        s = q @ k.transpose(0, 1, 3, 2) / math.sqrt(dh)
        s = np.where(causal, -np.inf, s)
        s = s - s.max(axis=-1, keepdims=True)
        a = np.exp(s)
        a = a / a.sum(axis=-1, keepdims=True)
        ctx = (a @ v).transpose(0, 2, 1, 3).reshape(B, T, d)
        x = x + ctx @ eff[f"blk{i}.attn_out"]
        h = _layer_norm(x, eff[f"blk{i}.ln2.scale"], eff[f"blk{i}.ln2.shift"])
        x = x + _gelu(h @ eff[f"blk{i}.ff_up"]) @ eff[f"blk{i}.ff_down"]
    x = _layer_norm(x, eff["ln_f.scale"], eff["ln_f.shift"])
    return x @ emb.T


def _option_nll(
    logits: np.ndarray, option_tokens: np.ndarray, prompt_len: int
) -> np.ndarray:
    """Per-example NLL of the given option tokens, teacher-forced after
    the prompt.  ``option_tokens`` is (B, L); logits cover prompt+option."""
    B, L = option_tokens.shape
    nll = np.zeros(B, dtype=logits.dtype)
    for j in range(L):
        pos = prompt_len - 1 + j
        row = logits[:, pos, :]
        m = row.max(axis=-1)
        lse = m + np.log(np.exp(row - m[:, None]).sum(axis=-1))
        nll = nll + (lse - row[np.arange(B), option_tokens[:, j]])
    return nll


def _check_tokens(tokens: np.ndarray, vocab: int) -> None:
    if tokens.min() < 0 or tokens.max() >= vocab:
        raise InputError(f"token id outside [0, {vocab})")


def forward_score(
    params: Mapping[str, np.ndarray],
    cfg: ModelConfig,
    batch: "Minibatch",
    view: WeightView | None = None,
    precision: str = "real64",
) -> float:
    """Mean NLL of each example's gold option, teacher-forced after its
    prompt.  Pure: same params/batch/view/precision -> same bits.

    Per-example scores are computed in the requested precision; the batch
    reduction is always the float64 canonical mean, so duplicating a batch
    leaves the score unchanged bit-for-bit.
    """
    dtype = _precision_dtype(precision)
    eff = _effective_weights(params, view, dtype)
    gold_tokens = batch.option_array()[batch.golds]
    seq = np.concatenate([batch.prompts, gold_tokens], axis=1)
    _check_tokens(seq, cfg.vocab)
    logits = _forward_logits(eff, cfg, seq)
    nll = _option_nll(logits, gold_tokens, cfg.prompt_len)
    return canonical_mean(nll.astype(np.float64))


def eval_accuracy(
    params: Mapping[str, np.ndarray],
    cfg: ModelConfig,
    prompts: np.ndarray,
    golds: np.ndarray,
    options: tuple[tuple[int, ...], ...],
    view: WeightView | None = None,
    precision: str = "real64",
) -> float:
    """Fraction of examples whose gold option has the highest total
    log-probability.  Ties resolve to the lowest option index."""
    dtype = _precision_dtype(precision)
    eff = _effective_weights(params, view, dtype)
    B = prompts.shape[0]
    scores = np.zeros((B, len(options)))
    for j, opt in enumerate(options):
        opt_tokens = np.tile(np.asarray(opt, dtype=np.int64), (B, 1))
        seq = np.concatenate([prompts, opt_tokens], axis=1)
        _check_tokens(seq, cfg.vocab)
        logits = _forward_logits(eff, cfg, seq)
        scores[:, j] = -_option_nll(logits, opt_tokens, cfg.prompt_len).astype(np.float64)
    picks = np.argmax(scores, axis=1)  # first max wins ties
    return float(np.mean(picks == np.asarray(golds)))


def full_gradient_fd(
    params: dict[str, np.ndarray],
    cfg: ModelConfig,
    batch: "Minibatch",
    delta: float = 1e-5,
) -> dict[str, np.ndarray]:
    """Central-difference gradient of forward_score over every parameter.

    Cost is two scoring calls per scalar, so this is only usable on micro
    models; it is the reference the estimator family is checked against.
    Parameters are restored bit-for-bit.
    """
    grads: dict[str, np.ndarray] = {}
    for lid in sorted(params):
        w = params[lid]
        g = np.zeros_like(w)
        flat = w.reshape(-1)
        gflat = g.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + delta
            lp = forward_score(params, cfg, batch)
            flat[idx] = orig - delta
            lm = forward_score(params, cfg, batch)
            flat[idx] = orig
            gflat[idx] = (lp - lm) / (2.0 * delta)
        grads[lid] = g
    return grads


# ---------------------------------------------------------------------------
# Synthetic marker-detection task.
#
# Each prompt is a fixed-length token string; the label is whether a marker
# token appears in it, and the two candidate options are single reserved
# tokens.  Splits are balanced by construction so any seed gives usable
# class frequencies.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TaskConfig:
    seed: int = 11
    vocab: int = 64
    prompt_len: int = 16
    train_size: int = 256
    dev_size: int = 64
    val_size: int = 128
    marker_token: int = 3

    def __post_init__(self) -> None:
        if self.vocab < 8:
            raise ConfigError("task vocab too small for markers and options")
        if min(self.train_size, self.dev_size, self.val_size) < 2:
            raise ConfigError("split sizes must be >= 2")

    @property
    def options(self) -> tuple[tuple[int, ...], ...]:
        # last two vocab slots are the candidate answers: (absent, present)
        return ((self.vocab - 2,), (self.vocab - 1,))

    @property
    def alphabet(self) -> tuple[int, int]:
        # filler tokens: above the control range, below the option tokens
        return (4, self.vocab - 2)


@dataclass
class TaskData:
    config: TaskConfig
    splits: dict[str, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)

    def digest(self) -> str:
        h = digest_text("task")
        h = digest_text(json.dumps(self.config.__dict__, sort_keys=True), h)
        for name in sorted(self.splits):
            prompts, golds = self.splits[name]
            h = digest_text(name, h)
            h = digest_bytes(prompts.astype("<i8").tobytes(), h)
            h = digest_bytes(golds.astype("<i8").tobytes(), h)
        return digest_hex(h)


def _gen_split(cfg: TaskConfig, name: str, size: int) -> tuple[np.ndarray, np.ndarray]:
    g = StreamKey(cfg.seed, 0, f"task.{name}", Role.INIT).generator()
    lo, hi = cfg.alphabet
    prompts = g.integers(lo, hi, size=(size, cfg.prompt_len), dtype=np.int64)
    labels = np.zeros(size, dtype=np.int64)
    labels[: size // 2] = 1  # balanced by construction
    labels = labels[g.permutation(size)]
    where = g.integers(0, cfg.prompt_len, size=size)
    for i in range(size):
        if labels[i] == 1:
            prompts[i, where[i]] = cfg.marker_token
    return prompts, labels


def generate_task(cfg: TaskConfig) -> TaskData:
    """Deterministic train/dev/val splits of the marker-detection task.

    The gold option index equals the label: option 0 when the marker is
    absent, option 1 when present.
    """
    data = TaskData(config=cfg)
    for name, size in (("train", cfg.train_size), ("dev", cfg.dev_size), ("val", cfg.val_size)):
        data.splits[name] = _gen_split(cfg, name, size)
    return data


def save_task(data: TaskData, path: str) -> None:
    doc = {
        "config": data.config.__dict__,
        "splits": {
            name: {"prompts": p.tolist(), "golds": g.tolist()}
            for name, (p, g) in sorted(data.splits.items())
        },
    }
    with open(path, "w") as f:
        json.dump(doc, f, sort_keys=True)


def load_task(path: str) -> TaskData:
    with open(path) as f:
        doc = json.load(f)
    cfg = TaskConfig(**doc["config"])
    data = TaskData(config=cfg)
    for name, split in doc["splits"].items():
        data.splits[name] = (
            np.asarray(split["prompts"], dtype=np.int64),
            np.asarray(split["golds"], dtype=np.int64),
        )
    return data


@dataclass
class Minibatch:
    """Indices plus materialized examples for one scoring call."""

    prompts: np.ndarray  # (B, prompt_len) int64
    golds: np.ndarray  # (B,) int64 option indices
    options: tuple[tuple[int, ...], ...]
    indices: np.ndarray  # (B,) int64 rows of the source split

    def __post_init__(self) -> None:
        lens = {len(o) for o in self.options}
        if len(lens) != 1:
            raise InputError("candidate options must share one token length")
        if self.golds.min() < 0 or self.golds.max() >= len(self.options):
            raise InputError("gold option index out of range")

    def option_array(self) -> np.ndarray:
        return np.asarray(self.options, dtype=np.int64)

    @property
    def batch_id(self) -> str:
        return digest_hex(digest_bytes(self.indices.astype("<i8").tobytes()))


@dataclass
class EvalPoint:
    """One point on an evaluation curve; wall_ms is cumulative training
    time (evaluation time itself is excluded)."""

    step: int
    wall_ms: float
    loss: float
    acc: float

    def to_dict(self) -> dict:
        return {"step": self.step, "wall_ms": self.wall_ms, "loss": self.loss, "acc": self.acc}


def evaluate_split(
    params: Mapping[str, np.ndarray],
    cfg: ModelConfig,
    data: TaskData,
    split: str = "dev",
    view: WeightView | None = None,
    precision: str = "real64",
) -> tuple[float, float]:
    """(loss, accuracy) over one whole split, scored as a single batch."""
    prompts, golds = data.splits[split]
    batch = Minibatch(
        prompts=prompts, golds=golds, options=data.config.options,
        indices=np.arange(prompts.shape[0], dtype=np.int64),
    )
    loss = forward_score(params, cfg, batch, view=view, precision=precision)
    acc = eval_accuracy(params, cfg, prompts, golds, data.config.options, view, precision)
    return loss, acc


def sample_minibatch(
    data: TaskData, split: str, seed: int, step: int, batch_size: int
) -> Minibatch:
    """Minibatch drawn from the (seed, step) stream: both execution paths
    call this with the same arguments and therefore score identical data."""
    prompts, golds = data.splits[split]
    if batch_size < 1 or batch_size > prompts.shape[0]:
        raise DimensionError(f"batch_size {batch_size} not in [1, {prompts.shape[0]}]")
    key = StreamKey(seed, step, f"task.{split}", Role.MINIBATCH)
    idx = sample_indices(key, batch_size, prompts.shape[0])
    return Minibatch(
        prompts=prompts[idx], golds=golds[idx], options=data.config.options, indices=idx
    )
