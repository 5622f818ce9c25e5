"""LoRA-slot algebra: accumulated updates and temporary probe perturbations
as composable low-rank blocks over a dense (or int8-quantized) base.

A slot contributes ``scale * A @ B.T``.  Composition never mutates weights:
it builds the slot contribution into a scratch matrix (canonical slot order,
probe last) and adds the base once, so the contribution bits are identical
whatever the base is.  Mutations happen only through the counted kernels:
``accumulate_on_U`` (m*k writes per step) and ``fold_window`` (one m*n burst).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .numerics import (
    DimensionError,
    ConfigError,
    InputError,
    FNV_OFFSET_BASIS,
    _axpy_outer_raw,
    axpy_dense,
    axpy_outer,
    digest_array,
    digest_bytes,
    digest_hex,
    digest_text,
)

__all__ = [
    "LoraSlot",
    "AdapterEntry",
    "AdapterState",
    "QuantizedBase",
    "compose_probe",
    "merge_slots",
    "accumulate_on_U",
    "fold_window",
    "quantize_base",
    "save_adapter",
    "load_adapter",
    "adapter_manifest",
    "state_digest",
]

_MAGIC = b"ZOAD"
_VERSION = 1


@dataclass
class LoraSlot:
    """One low-rank block: contribution = scale * A @ B.T.

    A is (m, k), B is (n, k).  k = 0 is the empty slot (zero contribution),
    produced by merging an empty list; content slots have k >= 1.
    """

    A: np.ndarray
    B: np.ndarray
    scale: float = 1.0

    def __post_init__(self) -> None:
        if self.A.ndim != 2 or self.B.ndim != 2:
            raise DimensionError("slot factors must be 2-D")
        if self.A.shape[1] != self.B.shape[1]:
            raise DimensionError(
                f"slot rank mismatch: A has {self.A.shape[1]} columns, B has {self.B.shape[1]}"
            )

    @property
    def rank(self) -> int:
        return self.A.shape[1]

    @property
    def out_shape(self) -> tuple[int, int]:
        return (self.A.shape[0], self.B.shape[0])

    def to_dense(self) -> np.ndarray:
        """Materialized contribution (scratch; not a counted weight write)."""
        out = np.zeros(self.out_shape)
        _axpy_outer_raw(out, self.scale, self.A, self.B)
        return out

    def copy(self) -> "LoraSlot":
        return LoraSlot(self.A.copy(), self.B.copy(), self.scale)


@dataclass
class QuantizedBase:
    """Per-tensor symmetric int8 base: dequantized value = q * scale."""

    q: np.ndarray  # int8
    scale: float

    def dequantize(self) -> np.ndarray:
        return self.q.astype(np.float64) * self.scale

    @property
    def shape(self) -> tuple[int, ...]:
        return self.q.shape


def quantize_base(w0: np.ndarray) -> QuantizedBase:
    """Symmetric int8 quantization with scale max|W|/127 (1.0 for all-zero)."""
    if not np.all(np.isfinite(w0)):
        raise InputError("cannot quantize non-finite weights")
    peak = float(np.max(np.abs(w0))) if w0.size else 0.0
    scale = peak / 127.0 if peak > 0.0 else 1.0
    q = np.clip(np.rint(w0 / scale), -127, 127).astype(np.int8)
    return QuantizedBase(q=q, scale=scale)


@dataclass
class AdapterEntry:
    """Adapter bookkeeping for one trainable matrix.

    ``window_slot`` is the live slot the current lazy window accumulates
    into; ``update_slots`` holds older frozen blocks that have not been
    folded yet.  Canonical composition order is frozen slots (oldest
    first), then the window slot, then the probe.
    """

    m: int
    n: int
    update_slots: list[LoraSlot] = field(default_factory=list)
    window_slot: LoraSlot | None = None
    perturb_slot: LoraSlot | None = None

    def active_slots(self) -> list[LoraSlot]:
        slots = list(self.update_slots)
        if self.window_slot is not None:
            slots.append(self.window_slot)
        return slots


@dataclass
class AdapterState:
    """All adapter entries plus the shared probe switch.

    ``perturb_sign`` gates every installed probe slot at once: +1 and -1
    select the two probe compositions, 0 deactivates them.  Single-writer
    contract: the step loop mutates, scorers only read between mutations.
    """

    epsilon: float
    perturb_sign: int = 0
    slot_cap: int = 4
    entries: dict[str, AdapterEntry] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.epsilon < 0:
            raise ConfigError("epsilon must be >= 0")
        if self.slot_cap < 1:
            raise ConfigError("slot_cap must be >= 1")

    def ensure_entry(self, layer_id: str, m: int, n: int) -> AdapterEntry:
        entry = self.entries.get(layer_id)
        if entry is None:
            entry = AdapterEntry(m=m, n=n)
            self.entries[layer_id] = entry
        elif (entry.m, entry.n) != (m, n):
            raise DimensionError(f"entry {layer_id} registered as {entry.m}x{entry.n}")
        return entry

    def set_sign(self, sign: int) -> None:
        if sign not in (-1, 0, 1):
            raise ConfigError(f"perturb_sign must be -1, 0, or +1, got {sign}")
        self.perturb_sign = sign

    def set_probe(self, layer_id: str, left: np.ndarray, right: np.ndarray) -> None:
        entry = self.ensure_entry(layer_id, left.shape[0], right.shape[0])
        entry.perturb_slot = LoraSlot(left, right, 1.0)

    def clear_probes(self) -> None:
        for entry in self.entries.values():
            entry.perturb_slot = None

    def view(self):
        """Weight view for scoring: layer_id, base -> composed effective weight."""

        def _view(layer_id: str, base: np.ndarray) -> np.ndarray:
            entry = self.entries.get(layer_id)
            if entry is None:
                return base
            return compose_probe(base, entry, self.perturb_sign, self.epsilon)

        return _view

    def add_frozen_slot(self, layer_id: str, slot: LoraSlot) -> None:
        """Append a frozen update slot, merging down when the cap is hit."""
        entry = self.entries[layer_id]
        entry.update_slots.append(slot)
        if len(entry.update_slots) > self.slot_cap:
            entry.update_slots = [merge_slots(entry.update_slots)]


def compose_probe(
    base: np.ndarray | QuantizedBase,
    entry: AdapterEntry | None,
    sign: int = 0,
    epsilon: float = 0.0,
) -> np.ndarray:
    """Effective weight: base + sum(update slots) + sign*eps*probe.

    Pure (no write-counter traffic).  The slot contribution is accumulated
    in canonical order into a zero matrix and added to the base in one
    elementwise add, so the contribution bits never depend on the base:
    swapping a full-precision base for its quantized dequantization changes
    only the base term.  With no active slots the base array itself is
    returned (callers treat views as read-only).
    """
    if sign not in (-1, 0, 1):
        raise ConfigError(f"perturb_sign must be -1, 0, or +1, got {sign}")
    w0 = base.dequantize() if isinstance(base, QuantizedBase) else base
    if entry is None:
        return w0
    slots = [s for s in entry.active_slots() if s.rank > 0]
    probe = entry.perturb_slot if (sign != 0 and entry.perturb_slot is not None) else None
    if not slots and (probe is None or probe.rank == 0):
        return w0
    shape = w0.shape
    contrib = np.zeros(shape)
    for slot in slots:
        if slot.out_shape != shape:
            raise DimensionError(f"slot shape {slot.out_shape} != base shape {shape}")
        _axpy_outer_raw(contrib, slot.scale, slot.A, slot.B)
    if probe is not None and probe.rank > 0:
        if probe.out_shape != shape:
            raise DimensionError(f"probe shape {probe.out_shape} != base shape {shape}")
        _axpy_outer_raw(contrib, (sign * epsilon) * probe.scale, probe.A, probe.B)
    return w0 + contrib


def merge_slots(slots: list[LoraSlot]) -> LoraSlot:
    """Concatenate slots into one: scales folded into the A columns, B
    unscaled, result scale 1.  An empty list merges to the rank-0 slot."""
    content = [s for s in slots if s.rank > 0]
    if not content:
        return LoraSlot(np.zeros((0, 0)), np.zeros((0, 0)), 1.0)
    shape = content[0].out_shape
    for s in content:
        if s.out_shape != shape:
            raise DimensionError("merge requires slots of one output shape")
    merged_a = np.hstack([s.scale * s.A for s in content])
    merged_b = np.hstack([s.B for s in content])
    return LoraSlot(merged_a, merged_b, 1.0)


def accumulate_on_U(slot: LoraSlot, eta: float, c: float, g: np.ndarray) -> None:
    """slot.A <- slot.A - eta*c*g, counted as an m*k write (the direct
    update path: the dense weight is untouched until the next fold)."""
    if g.shape != slot.A.shape:
        raise DimensionError(f"update shape {g.shape} != slot A shape {slot.A.shape}")
    axpy_dense(slot.A, -(eta * c), g)


def fold_window(slot: LoraSlot, target: np.ndarray) -> None:
    """Materialize the slot into ``target`` (one counted m*n write burst)
    and reset the slot to zero contribution.

    The slot object survives with A zeroed so its layer keeps a stable
    identity across windows; the zero-reset is slot bookkeeping, not part
    of the counted weight-write traffic.
    """
    if slot.rank == 0:
        return
    axpy_outer(target, slot.scale, slot.A, slot.B)
    slot.A[...] = 0.0


# ---------------------------------------------------------------------------
# Serialization: versioned binary file + digest manifest.
# ---------------------------------------------------------------------------


def _pack_slot(slot: LoraSlot) -> bytes:
    head = struct.pack("<Id", slot.rank, slot.scale)
    return head + slot.A.astype("<f8").tobytes() + slot.B.astype("<f8").tobytes()


def _unpack_slot(buf: memoryview, off: int, m: int, n: int) -> tuple[LoraSlot, int]:
    k, scale = struct.unpack_from("<Id", buf, off)
    off += struct.calcsize("<Id")
    a = np.frombuffer(buf, dtype="<f8", count=m * k, offset=off).reshape(m, k).copy()
    off += m * k * 8
    b = np.frombuffer(buf, dtype="<f8", count=n * k, offset=off).reshape(n, k).copy()
    off += n * k * 8
    return LoraSlot(a, b, float(scale)), off


def _entry_slots_for_io(entry: AdapterEntry) -> list[tuple[int, LoraSlot]]:
    # window slot is serialized as the last update slot; kind flag keeps
    # the distinction: 0 = frozen, 1 = window, 2 = probe
    out = [(0, s) for s in entry.update_slots]
    if entry.window_slot is not None:
        out.append((1, entry.window_slot))
    if entry.perturb_slot is not None:
        out.append((2, entry.perturb_slot))
    return out


def save_adapter(state: AdapterState, path: str) -> dict:
    """Write the adapter to a versioned binary file and a sidecar manifest
    (``<path>.manifest.json``) carrying content digests.  Returns the
    manifest dict."""
    blob = bytearray()
    blob += _MAGIC
    blob += struct.pack("<IdbI", _VERSION, state.epsilon, state.perturb_sign, len(state.entries))
    for lid in sorted(state.entries):
        entry = state.entries[lid]
        lid_bytes = lid.encode("utf-8")
        slots = _entry_slots_for_io(entry)
        blob += struct.pack("<H", len(lid_bytes)) + lid_bytes
        blob += struct.pack("<III", entry.m, entry.n, len(slots))
        for kind, slot in slots:
            blob += struct.pack("<B", kind)
            blob += _pack_slot(slot)
    data = bytes(blob)
    with open(path, "wb") as f:
        f.write(data)
    manifest = adapter_manifest(state)
    manifest["file_digest"] = digest_hex(digest_bytes(data))
    with open(path + ".manifest.json", "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
    return manifest


def load_adapter(path: str, check_manifest: bool = True) -> AdapterState:
    """Read an adapter file back.  If the sidecar manifest exists and
    ``check_manifest`` is set, the file digest is verified first."""
    with open(path, "rb") as f:
        data = f.read()
    if check_manifest:
        try:
            with open(path + ".manifest.json") as f:
                manifest = json.load(f)
        except FileNotFoundError:
            manifest = None
        if manifest is not None:
            got = digest_hex(digest_bytes(data))
            if manifest.get("file_digest") != got:
                raise InputError(f"adapter file digest {got} does not match manifest")
    if data[:4] != _MAGIC:
        raise InputError("not an adapter file (bad magic)")
    off = 4
    version, epsilon, sign, n_entries = struct.unpack_from("<IdbI", data, off)
    off += struct.calcsize("<IdbI")
    if version != _VERSION:
        raise InputError(f"unsupported adapter file version {version}")
    state = AdapterState(epsilon=float(epsilon), perturb_sign=int(sign))
    buf = memoryview(data)
    for _ in range(n_entries):
        (lid_len,) = struct.unpack_from("<H", buf, off)
        off += 2
        lid = bytes(buf[off : off + lid_len]).decode("utf-8")
        off += lid_len
        m, n, n_slots = struct.unpack_from("<III", buf, off)
        off += struct.calcsize("<III")
        entry = state.ensure_entry(lid, m, n)
        for _ in range(n_slots):
            (kind,) = struct.unpack_from("<B", buf, off)
            off += 1
            slot, off = _unpack_slot(buf, off, m, n)
            if kind == 0:
                entry.update_slots.append(slot)
            elif kind == 1:
                entry.window_slot = slot
            else:
                entry.perturb_slot = slot
    return state


def _digest_slot(slot: LoraSlot, h: int) -> int:
    h = digest_bytes(struct.pack("<Id", slot.rank, slot.scale), h)
    h = digest_array(slot.A, h)
    h = digest_array(slot.B, h)
    return h


def state_digest(state: AdapterState) -> str:
    """Digest of the full adapter state (slots, probes, sign, epsilon)."""
    h = digest_text("adapter")
    h = digest_bytes(struct.pack("<db", state.epsilon, state.perturb_sign), h)
    for lid in sorted(state.entries):
        entry = state.entries[lid]
        h = digest_text(lid, h)
        for kind, slot in _entry_slots_for_io(entry):
            h = digest_bytes(bytes([kind]), h)
            h = _digest_slot(slot, h)
    return digest_hex(h)


def adapter_manifest(state: AdapterState) -> dict:
    layers = {}
    for lid in sorted(state.entries):
        entry = state.entries[lid]
        h = FNV_OFFSET_BASIS
        for kind, slot in _entry_slots_for_io(entry):
            h = digest_bytes(bytes([kind]), h)
            h = _digest_slot(slot, h)
        layers[lid] = {
            "shape": [entry.m, entry.n],
            "slots": len(_entry_slots_for_io(entry)),
            "digest": digest_hex(h),
        }
    return {
        "version": _VERSION,
        "epsilon": state.epsilon,
        "perturb_sign": state.perturb_sign,
        "state_digest": state_digest(state),
        "layers": layers,
    }
