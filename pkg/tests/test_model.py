"""Scoring-model and synthetic-task behavior.

The core check is an independent scalar re-implementation of the forward
pass (pure Python lists, per-position loops, no shared helpers), which the
vectorized model must match to float64 accumulation noise.
"""

import math

import numpy as np
import pytest

from zoserve.model import (
    Minibatch,
    ModelConfig,
    TaskConfig,
    eval_accuracy,
    evaluate_split,
    forward_score,
    full_gradient_fd,
    generate_task,
    init_params,
    load_task,
    matrix_ids,
    params_digest,
    pos_encoding,
    sample_minibatch,
    save_task,
    vector_ids,
)
from zoserve.numerics import ConfigError, DimensionError, InputError

MICRO = ModelConfig(vocab=16, dim=4, n_layers=1, n_heads=2, prompt_len=4, init_seed=5)


def _micro_batch(n=3, seed=0):
    rng = np.random.default_rng(seed)
    prompts = rng.integers(4, MICRO.vocab - 2, size=(n, MICRO.prompt_len), dtype=np.int64)
    golds = rng.integers(0, 2, size=n, dtype=np.int64)
    options = ((MICRO.vocab - 2,), (MICRO.vocab - 1,))
    return Minibatch(prompts=prompts, golds=golds, options=options,
                     indices=np.arange(n, dtype=np.int64))


# ---------------------------------------------------------------------------
# Independent scalar-loop oracle.
# ---------------------------------------------------------------------------


def _oracle_pe(T, d):
    pe = [[0.0] * d for _ in range(T)]
    for t in range(T):
        for j in range(d):
            angle = t / (10000.0 ** ((2 * (j // 2)) / d))
            pe[t][j] = math.sin(angle) if j % 2 == 0 else math.cos(angle)
    return pe


def _oracle_ln(vec, scale, shift):
    d = len(vec)
    mu = sum(vec) / d
    var = sum((t - mu) ** 2 for t in vec) / d
    s = math.sqrt(var + 1e-5)
    return [(t - mu) / s * sc + sh for t, sc, sh in zip(vec, scale, shift)]


def _oracle_gelu(x):
    c = math.sqrt(2.0 / math.pi)
    return 0.5 * x * (1.0 + math.tanh(c * (x + 0.044715 * x**3)))


def _oracle_matvec(vec, w):
    rows, cols = w.shape
    return [sum(vec[a] * w[a, b] for a in range(rows)) for b in range(cols)]


def _oracle_example_nll(params, cfg, seq, option_tokens):
    d, H = cfg.dim, cfg.n_heads
    dh = d // H
    T = len(seq)
    pe = _oracle_pe(T, d)
    emb = params["embed"]
    x = [[float(emb[seq[t], j]) + pe[t][j] for j in range(d)] for t in range(T)]

    for i in range(cfg.n_layers):
        pre = [_oracle_ln(x[t], params[f"blk{i}.ln1.scale"], params[f"blk{i}.ln1.shift"])
               for t in range(T)]
        qkv = [_oracle_matvec(pre[t], params[f"blk{i}.qkv"]) for t in range(T)]
        ctx = [[0.0] * d for _ in range(T)]
        for hh in range(H):
            lo = hh * dh
            for t in range(T):
                q_t = qkv[t][lo : lo + dh]
                weights = []
                for u in range(t + 1):
                    k_u = qkv[u][d + lo : d + lo + dh]
                    weights.append(
                        sum(a * b for a, b in zip(q_t, k_u)) / math.sqrt(dh)
                    )
                zmax = max(weights)
                expw = [math.exp(wgt - zmax) for wgt in weights]
                tot = sum(expw)
                for u in range(t + 1):
                    v_u = qkv[u][2 * d + lo : 2 * d + lo + dh]
                    for j in range(dh):
                        ctx[t][lo + j] += (expw[u] / tot) * v_u[j]
        proj = [_oracle_matvec(ctx[t], params[f"blk{i}.attn_out"]) for t in range(T)]
        x = [[x[t][j] + proj[t][j] for j in range(d)] for t in range(T)]
        pre = [_oracle_ln(x[t], params[f"blk{i}.ln2.scale"], params[f"blk{i}.ln2.shift"])
               for t in range(T)]
        up = [[_oracle_gelu(z) for z in _oracle_matvec(pre[t], params[f"blk{i}.ff_up"])]
              for t in range(T)]
        down = [_oracle_matvec(up[t], params[f"blk{i}.ff_down"]) for t in range(T)]
        x = [[x[t][j] + down[t][j] for j in range(d)] for t in range(T)]

    x = [_oracle_ln(x[t], params["ln_f.scale"], params["ln_f.shift"]) for t in range(T)]
    nll = 0.0
    for j, tok in enumerate(option_tokens):
        pos = cfg.prompt_len - 1 + j
        logits = [sum(x[pos][a] * emb[w, a] for a in range(d)) for w in range(cfg.vocab)]
        zmax = max(logits)
        lse = zmax + math.log(sum(math.exp(z - zmax) for z in logits))
        nll += lse - logits[tok]
    return nll


def test_forward_matches_scalar_oracle():
    params = init_params(MICRO)
    batch = _micro_batch()
    got = forward_score(params, MICRO, batch)
    opts = batch.option_array()
    per_example = [
        _oracle_example_nll(
            params, MICRO,
            list(batch.prompts[b]) + list(opts[batch.golds[b]]),
            list(opts[batch.golds[b]]),
        )
        for b in range(batch.prompts.shape[0])
    ]
    want = sum(per_example) / len(per_example)
    assert got == pytest.approx(want, rel=1e-12, abs=1e-12)


def test_forward_matches_scalar_oracle_two_layers():
    cfg = ModelConfig(vocab=16, dim=4, n_layers=2, n_heads=1, prompt_len=4, init_seed=9)
    params = init_params(cfg)
    batch = _micro_batch(n=2, seed=1)
    got = forward_score(params, cfg, batch)
    opts = batch.option_array()
    per_example = [
        _oracle_example_nll(
            params, cfg,
            list(batch.prompts[b]) + list(opts[batch.golds[b]]),
            list(opts[batch.golds[b]]),
        )
        for b in range(2)
    ]
    assert got == pytest.approx(sum(per_example) / 2, rel=1e-12, abs=1e-12)


# ---------------------------------------------------------------------------
# Model basics.
# ---------------------------------------------------------------------------


def test_init_is_deterministic_and_shaped():
    cfg = ModelConfig()
    a, b = init_params(cfg), init_params(cfg)
    assert sorted(a) == sorted(b)
    for k in a:
        assert np.array_equal(a[k], b[k])
    assert a["embed"].shape == (64, 32)
    assert a["blk0.qkv"].shape == (32, 96)
    assert a["blk1.ff_down"].shape == (128, 32)
    assert a["ln_f.scale"].shape == (32,)
    assert set(matrix_ids(a)) & set(vector_ids(a)) == set()
    assert len(matrix_ids(a)) == 9  # embed + 4 per block
    assert len(vector_ids(a)) == 10  # 4 per block + final pair


def test_params_digest_tracks_content():
    params = init_params(ModelConfig())
    d0 = params_digest(params)
    assert d0 == params_digest(init_params(ModelConfig()))
    params["blk0.qkv"][0, 0] += 1e-9
    assert params_digest(params) != d0


def test_fresh_model_scores_near_uniform():
    cfg = ModelConfig()
    params = init_params(cfg)
    task = generate_task(TaskConfig())
    loss, acc = evaluate_split(params, cfg, task, "dev")
    assert abs(loss - math.log(cfg.vocab)) < 0.15
    assert 0.0 <= acc <= 1.0


def test_pos_encoding_values():
    pe = pos_encoding(3, 4)
    assert np.array_equal(pe[0], [0.0, 1.0, 0.0, 1.0])
    assert pe[1, 0] == pytest.approx(math.sin(1.0))
    assert pe[1, 1] == pytest.approx(math.cos(1.0))
    assert pe[2, 2] == pytest.approx(math.sin(2.0 / 100.0))


def test_score_is_pure_and_duplication_invariant():
    params = init_params(MICRO)
    batch = _micro_batch()
    s1 = forward_score(params, MICRO, batch)
    s2 = forward_score(params, MICRO, batch)
    assert s1 == s2
    doubled = Minibatch(
        prompts=np.concatenate([batch.prompts, batch.prompts]),
        golds=np.concatenate([batch.golds, batch.golds]),
        options=batch.options,
        indices=np.concatenate([batch.indices, batch.indices]),
    )
    assert forward_score(params, MICRO, doubled) == s1


def test_real32_emulation_close_but_not_identical():
    params = init_params(ModelConfig())
    task = generate_task(TaskConfig())
    batch = sample_minibatch(task, "train", 0, 0, 8)
    cfg = ModelConfig()
    s64 = forward_score(params, cfg, batch, precision="real64")
    s32 = forward_score(params, cfg, batch, precision="real32")
    assert s64 != s32
    assert abs(s64 - s32) < 1e-3


def test_unknown_precision_rejected():
    params = init_params(MICRO)
    with pytest.raises(ConfigError):
        forward_score(params, MICRO, _micro_batch(), precision="real16")


def test_token_range_checked():
    params = init_params(MICRO)
    batch = _micro_batch()
    batch.prompts[0, 0] = MICRO.vocab  # out of range
    with pytest.raises(InputError):
        forward_score(params, MICRO, batch)


def test_config_validation():
    with pytest.raises(ConfigError):
        ModelConfig(dim=30, n_heads=4)
    with pytest.raises(ConfigError):
        ModelConfig(vocab=4)


def test_fd_gradient_predicts_directional_derivative():
    params = init_params(MICRO)
    batch = _micro_batch(n=2, seed=3)
    grads = full_gradient_fd(params, MICRO, batch, delta=1e-5)
    rng = np.random.default_rng(7)
    z = {k: rng.standard_normal(v.shape) for k, v in params.items()}
    dot = sum(float(np.sum(grads[k] * z[k])) for k in params)
    eps = 1e-5
    saved = {k: v.copy() for k, v in params.items()}
    for k in params:
        params[k] += eps * z[k]
    lp = forward_score(params, MICRO, batch)
    for k in params:
        np.copyto(params[k], saved[k])
        params[k] -= eps * z[k]
    lm = forward_score(params, MICRO, batch)
    for k in params:
        np.copyto(params[k], saved[k])
    assert (lp - lm) / (2 * eps) == pytest.approx(dot, rel=1e-4, abs=1e-7)
    # and the FD sweep restored every parameter bit-for-bit
    for k in params:
        assert np.array_equal(params[k], saved[k])


def test_accuracy_tie_breaks_to_first_option():
    cfg = MICRO
    params = init_params(cfg)
    zeroed = {k: np.zeros_like(v) for k, v in params.items()}
    task_cfg = TaskConfig(vocab=cfg.vocab, prompt_len=cfg.prompt_len)
    task = generate_task(task_cfg)
    prompts, golds = task.splits["dev"]
    # all-zero weights make every option equally likely -> argmax picks 0
    acc = eval_accuracy(zeroed, cfg, prompts, golds, task_cfg.options)
    assert acc == pytest.approx(np.mean(golds == 0))


# ---------------------------------------------------------------------------
# Task generation.
# ---------------------------------------------------------------------------


def test_task_is_balanced_and_marked():
    cfg = TaskConfig()
    task = generate_task(cfg)
    for name, size in (("train", 256), ("dev", 64), ("val", 128)):
        prompts, golds = task.splits[name]
        assert prompts.shape == (size, cfg.prompt_len)
        assert golds.sum() == size // 2
        has_marker = (prompts == cfg.marker_token).any(axis=1)
        assert np.array_equal(has_marker, golds == 1)


def test_task_alphabet_avoids_reserved_tokens():
    task = generate_task(TaskConfig())
    lo, hi = task.config.alphabet
    for prompts, golds in task.splits.values():
        fill = prompts[golds == 0]
        assert fill.min() >= lo and fill.max() < hi


def test_task_roundtrip(tmp_path):
    task = generate_task(TaskConfig(seed=23))
    p = tmp_path / "task.json"
    save_task(task, str(p))
    loaded = load_task(str(p))
    assert loaded.digest() == task.digest()
    for name in task.splits:
        assert np.array_equal(loaded.splits[name][0], task.splits[name][0])
        assert np.array_equal(loaded.splits[name][1], task.splits[name][1])


def test_task_digest_tracks_seed():
    assert generate_task(TaskConfig(seed=1)).digest() != generate_task(TaskConfig(seed=2)).digest()


def test_minibatch_sampling_deterministic():
    task = generate_task(TaskConfig())
    a = sample_minibatch(task, "train", 42, 3, 16)
    b = sample_minibatch(task, "train", 42, 3, 16)
    assert np.array_equal(a.indices, b.indices)
    assert a.batch_id == b.batch_id
    c = sample_minibatch(task, "train", 42, 4, 16)
    assert a.batch_id != c.batch_id
    with pytest.raises(DimensionError):
        sample_minibatch(task, "train", 42, 0, 10_000)


def test_minibatch_validation():
    with pytest.raises(InputError):
        Minibatch(
            prompts=np.zeros((2, 4), dtype=np.int64),
            golds=np.zeros(2, dtype=np.int64),
            options=((1,), (2, 3)),  # unequal option lengths
            indices=np.arange(2),
        )
    with pytest.raises(InputError):
        Minibatch(
            prompts=np.zeros((2, 4), dtype=np.int64),
            golds=np.array([0, 2]),  # option index out of range
            options=((1,), (2,)),
            indices=np.arange(2),
        )
