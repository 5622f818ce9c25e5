"""Zeroth-order fine-tuning run as an inference-serving workload.

The package is organized around a small deterministic scoring model
(`model`), a LoRA-style adapter algebra (`adapter`), a family of two-point
zeroth-order estimators (`zo_engine`), two execution paths that must agree
(`baseline_loop`, `runtime`), and a verification harness (`verify`).
"""

__version__ = "0.1.0"

from . import adapter, baseline_loop, model, numerics, runtime, verify, zo_engine  # noqa: F401
