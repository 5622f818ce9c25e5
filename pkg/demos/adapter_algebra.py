"""Adapter-slot algebra: probing by composition instead of by mutation.

A ZO probe is just a temporary rank-r LoRA slot gated by a shared sign
switch: composing W_eff = W + sum(scale * A B^T) + sign*eps*(u v^T) at
scoring time means the +eps/-eps swing never touches stored weights --
the write counter literally stays at zero -- and the same algebra carries
the accumulated update until it is folded back once per window.
"""

import numpy as np

from zoserve.adapter import (
    AdapterState,
    LoraSlot,
    accumulate_on_U,
    compose_probe,
    fold_window,
    quantize_base,
    state_digest,
)
from zoserve.numerics import weight_writes
from zoserve.zo_engine import lozo_direction

rng = np.random.default_rng(0)
m, n, rank = 12, 10, 2
base = rng.standard_normal((m, n))

state = AdapterState(epsilon=1e-3)
entry = state.ensure_entry("demo.w", m, n)
u, v = lozo_direction(42, 0, "demo.w", m, n, rank, nu=5)
state.set_probe("demo.w", u, v)

# -- probing is free: compose under +eps and -eps, count writes --------------
view = state.view()
w0 = weight_writes()
state.set_sign(+1)
plus = view("demo.w", base)
state.set_sign(-1)
minus = view("demo.w", base)
state.set_sign(0)
print(f"weight writes during the probe pair: {weight_writes() - w0}")
print(f"probe swing |W+ - W-| = {np.linalg.norm(plus - minus):.6e}  "
      f"(2 eps |u v^T| = {2e-3 * np.linalg.norm(u @ v.T):.6e})")

# -- composition is base + contribution, and the contribution bits never
#    depend on the base: swap the base for its int8 dequantization and the
#    composed weight is exactly deq + (the very same contribution) ------------
contribution = compose_probe(np.zeros((m, n)), entry, +1, 1e-3)
qbase = quantize_base(base)
full_ok = np.array_equal(compose_probe(base, entry, +1, 1e-3), base + contribution)
quant_ok = np.array_equal(
    compose_probe(qbase, entry, +1, 1e-3), qbase.dequantize() + contribution
)
print(f"\ncompose(base) == base + compose(zeros), bitwise: {full_ok}")
print(f"same law over an int8 base (scale {qbase.scale:.4f}):  {quant_ok}")

# -- updates accumulate on the U factor (m*r writes), fold once per window ---
entry.window_slot = LoraSlot(np.zeros((m, rank)), v, 1.0)  # lazy V for window 0
for step, c in enumerate((0.8, -0.3, 1.1)):
    u, _ = lozo_direction(42, step, "demo.w", m, n, rank, nu=5)
    accumulate_on_U(entry.window_slot, 1e-2, c, u)

live = compose_probe(base, entry)        # what scoring sees before the fold
digest_before = state_digest(state)
w = base.copy()
fold_window(entry.window_slot, w)
print("\nfolding the window slot into the dense weight:")
print(f"  |composed view - folded weight| max = {np.abs(live - w).max():.2e}")
print("  (the fold accumulates rank-by-rank into w, a different summation")
print("   order than the composed view's one-shot add: equal to roundoff)")
after_first = w.copy()
fold_window(entry.window_slot, w)  # the slot was reset to zero contribution
print(f"  folding twice is bitwise a no-op:     {np.array_equal(w, after_first)}")
print(f"  state digest moved with the fold:     {digest_before != state_digest(state)}")
