"""Deterministic numeric kernels: keyed random streams, content digests,
and the counted write primitives every weight mutation must go through.

All randomness in the package is drawn from counter-based streams keyed by
(seed, step, layer_id, role).  Keys are stateless: the same key always
yields the same draw regardless of call order, which is what makes the
baseline and serving execution paths replayable against each other.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

__all__ = [
    "DimensionError",
    "ConfigError",
    "InputError",
    "Role",
    "StreamKey",
    "sample_gaussian",
    "gaussian_vector",
    "sample_indices",
    "FNV_OFFSET_BASIS",
    "digest_bytes",
    "digest_array",
    "digest_text",
    "digest_hex",
    "axpy_outer",
    "axpy_dense",
    "restore_matrix",
    "dense_product",
    "canonical_mean",
    "weight_writes",
]


class DimensionError(ValueError):
    """A shape or rank argument is out of its legal range."""


class ConfigError(ValueError):
    """A configuration value is malformed or inconsistent."""


class InputError(ValueError):
    """Input data violates a documented precondition."""


# ---------------------------------------------------------------------------
# FNV-1a 64-bit digest over raw bytes.
#
# Digests are used for direction-stream fingerprints and file/manifest
# identity, so they sit on the per-step hot path.  The kernel is compiled
# with numba when available; the pure-Python fallback is bit-identical.
# ---------------------------------------------------------------------------

FNV_OFFSET_BASIS = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_U64_MASK = 0xFFFFFFFFFFFFFFFF


def _fnv1a_py(buf: np.ndarray, h: int) -> int:
    h = int(h)
    for b in buf.tobytes():
        h = ((h ^ b) * _FNV_PRIME) & _U64_MASK
    return h


try:  # pragma: no cover - exercised indirectly; fallback path is tested
    from numba import njit, types

    _sig = types.uint64(types.Array(types.uint8, 1, "C", readonly=True), types.uint64)

    @njit(_sig, cache=True, nogil=True)
    def _fnv1a_nb(buf, h):  # uint64 arithmetic wraps mod 2**64
        for i in range(buf.size):
            h = (h ^ np.uint64(buf[i])) * np.uint64(0x100000001B3)
        return h

    def _fnv1a(buf: np.ndarray, h: int) -> int:
        return int(_fnv1a_nb(buf, np.uint64(h)))

    HAVE_NUMBA = True
except Exception:  # pragma: no cover
    _fnv1a = _fnv1a_py
    HAVE_NUMBA = False


def _as_byte_view(a: np.ndarray) -> np.ndarray:
    """Little-endian float64 byte view of an array, copying only if needed."""
    arr = np.ascontiguousarray(a, dtype="<f8")
    return arr.reshape(-1).view(np.uint8)


def digest_bytes(data: bytes, h: int = FNV_OFFSET_BASIS) -> int:
    """FNV-1a-64 over raw bytes, chained from ``h``."""
    buf = np.frombuffer(data, dtype=np.uint8)
    return _fnv1a(buf, h)


def digest_array(a: np.ndarray, h: int = FNV_OFFSET_BASIS) -> int:
    """FNV-1a-64 over the little-endian float64 bytes of ``a``.

    Chaining: pass the previous digest as ``h`` to fold several arrays into
    one fingerprint.  The chained value depends on array order, which is why
    callers always iterate layer ids in sorted order.
    """
    return _fnv1a(_as_byte_view(a), h)


def digest_text(s: str, h: int = FNV_OFFSET_BASIS) -> int:
    return digest_bytes(s.encode("utf-8"), h)


def digest_hex(h: int) -> str:
    """Render a digest as 16 lowercase hex digits."""
    return f"{h & _U64_MASK:016x}"


# ---------------------------------------------------------------------------
# Keyed random streams.
# ---------------------------------------------------------------------------


class Role(enum.IntEnum):
    """What a random draw is for.  Part of the stream key, so draws for
    different purposes never alias even at the same (seed, step, layer)."""

    U = 0
    V = 1
    DENSE_Z = 2
    MINIBATCH = 3
    INIT = 4


@dataclass(frozen=True)
class StreamKey:
    """Address of one deterministic random stream.

    ``layer_id`` is hashed into the key material, so any printable name
    works; streams for distinct names are independent.
    """

    seed: int
    step: int
    layer_id: str
    role: Role

    def __post_init__(self) -> None:
        if self.seed < 0 or self.step < 0:
            raise ConfigError("seed and step must be non-negative")

    def generator(self) -> np.random.Generator:
        entropy = [self.seed, self.step, digest_text(self.layer_id), int(self.role)]
        return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def sample_gaussian(key: StreamKey, rows: int, cols: int) -> np.ndarray:
    """Standard-normal (rows, cols) float64 matrix for ``key``.

    Pure function of the key: repeated calls return identical bits.
    """
    if rows < 1 or cols < 1:
        raise DimensionError(f"gaussian sample needs rows, cols >= 1, got {rows}x{cols}")
    return key.generator().standard_normal((rows, cols))


def gaussian_vector(key: StreamKey, n: int) -> np.ndarray:
    if n < 1:
        raise DimensionError(f"gaussian vector needs n >= 1, got {n}")
    return key.generator().standard_normal(n)


def sample_indices(key: StreamKey, count: int, upper: int) -> np.ndarray:
    """``count`` int64 indices uniform over [0, upper), for minibatch picks."""
    if count < 1 or upper < 1:
        raise DimensionError("index sample needs count >= 1 and upper >= 1")
    return key.generator().integers(0, upper, size=count, dtype=np.int64)


# ---------------------------------------------------------------------------
# Counted write kernels.
#
# Every mutation of model weights or adapter factors goes through one of
# these, and each call adds the size of the mutated target to a module
# counter.  Cost accounting (and the write-count laws the tests pin) reads
# that counter via snapshots, so the kernels are the single source of truth
# for "how many weights were written".
# ---------------------------------------------------------------------------

_write_count = 0


def weight_writes() -> int:
    """Monotonic count of weight elements written so far in this process."""
    return _write_count


def _count(n: int) -> None:
    global _write_count
    _write_count += n


def _axpy_outer_raw(target: np.ndarray, alpha: float, left: np.ndarray, right: np.ndarray) -> None:
    # Canonical accumulation order: columns k ascending, alpha applied per
    # term.  Both execution paths and the adapter algebra share this order,
    # so rank-k contributions built anywhere in the package agree bitwise.
    for k in range(left.shape[1]):
        target += alpha * np.multiply.outer(left[:, k], right[:, k])


def _check_outer_shapes(target: np.ndarray, left: np.ndarray, right: np.ndarray) -> None:
    if left.ndim != 2 or right.ndim != 2 or target.ndim != 2:
        raise DimensionError("axpy_outer operands must be 2-D")
    if left.shape[1] != right.shape[1]:
        raise DimensionError(
            f"factor rank mismatch: left has {left.shape[1]} columns, right has {right.shape[1]}"
        )
    if target.shape != (left.shape[0], right.shape[0]):
        raise DimensionError(
            f"target shape {target.shape} != outer shape ({left.shape[0]}, {right.shape[0]})"
        )


def axpy_outer(target: np.ndarray, alpha: float, left: np.ndarray, right: np.ndarray) -> None:
    """target += alpha * left @ right.T, counted as one write of target.size.

    ``left`` is (m, k), ``right`` is (n, k), ``target`` is (m, n).
    """
    _check_outer_shapes(target, left, right)
    _axpy_outer_raw(target, alpha, left, right)
    _count(target.size)


def axpy_dense(target: np.ndarray, alpha: float, update: np.ndarray) -> None:
    """target += alpha * update elementwise, counted as one write of target.size."""
    if target.shape != update.shape:
        raise DimensionError(f"shape mismatch: {target.shape} vs {update.shape}")
    target += alpha * update
    _count(target.size)


def restore_matrix(target: np.ndarray, saved: np.ndarray) -> None:
    """Write ``saved`` back into ``target`` bit-for-bit, counted as one write.

    Adding the arithmetic inverse of a perturbation does not round-trip in
    floating point, so restores copy the cached pre-perturbation bits.
    """
    if target.shape != saved.shape:
        raise DimensionError(f"shape mismatch: {target.shape} vs {saved.shape}")
    np.copyto(target, saved)
    _count(target.size)


def dense_product(left: np.ndarray, right: np.ndarray) -> np.ndarray:
    """left @ right.T accumulated in the canonical column order (uncounted).

    Scratch builder for paths that materialize a low-rank product before
    applying it; produces the same bits as axpy_outer into a zero target.
    """
    if left.ndim != 2 or right.ndim != 2 or left.shape[1] != right.shape[1]:
        raise DimensionError("dense_product expects (m, k) and (n, k) factors")
    out = np.zeros((left.shape[0], right.shape[0]))
    _axpy_outer_raw(out, 1.0, left, right)
    return out


def canonical_mean(values: np.ndarray) -> float:
    """Mean by recursive halving, so concatenating a batch with itself
    reproduces the same value bit-for-bit regardless of length."""
    v = np.asarray(values, dtype=np.float64).reshape(-1)
    if v.size == 0:
        raise DimensionError("canonical_mean of empty batch")
    return _pairwise_sum(v) / v.size


def _pairwise_sum(v: np.ndarray) -> float:
    if v.size == 1:
        return float(v[0])
    half = v.size // 2
    return _pairwise_sum(v[:half]) + _pairwise_sum(v[half:])
