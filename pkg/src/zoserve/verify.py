"""Post-hoc verification over completed trajectories.

Everything here is a pure function of finished run artifacts: sign
agreement of the two-point loss differences between two runs, strict
step-by-step equivalence (seeds, direction digests, paired losses),
low-rank audits of accumulated weight deltas, and CSV/JSON report
emission.  Nothing in this module mutates a run.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .numerics import InputError
from .zo_engine import ZoStepRecord

__all__ = [
    "SignMatchReport",
    "sign_match",
    "record_deltas",
    "StrictCompareReport",
    "strict_compare",
    "rank_check",
    "trajectory_report",
    "write_eval_csv",
]


# ---------------------------------------------------------------------------
# Sign agreement.
# ---------------------------------------------------------------------------

_BIN_ORDER = ("zero", "(0,1e-4)", "[1e-4,1e-3)", "[1e-3,1e-2)", "[1e-2,1e-1)", "[1e-1,inf)")


def _sign(x: float) -> int:
    return (x > 0) - (x < 0)


def _bin_label(delta: float) -> str:
    a = abs(delta)
    if a == 0.0:
        return "zero"
    if a < 1e-4:
        return "(0,1e-4)"
    if a < 1e-3:
        return "[1e-4,1e-3)"
    if a < 1e-2:
        return "[1e-3,1e-2)"
    if a < 1e-1:
        return "[1e-2,1e-1)"
    return "[1e-1,inf)"


@dataclass
class SignMatchReport:
    """Agreement of sign(L+ - L-) between two aligned runs.

    The population is every recorded step of the compared runs.  Zero is
    its own sign: a zero-difference step matches only a zero-difference
    step.  ``high_signal`` restricts to steps where the reference run's
    |L+ - L-| is at least ``tau``; an empty high-signal subset reports
    fraction 1.0 (vacuous).
    """

    total: int
    matches: int
    tau: float
    high_signal_pairs: int
    high_signal_matches: int
    bins: list[dict] = field(default_factory=list)

    @property
    def overall_fraction(self) -> float:
        return self.matches / self.total if self.total else 1.0

    @property
    def high_signal_fraction(self) -> float:
        if self.high_signal_pairs == 0:
            return 1.0
        return self.high_signal_matches / self.high_signal_pairs

    def to_dict(self) -> dict:
        return {
            "total": self.total,
            "matches": self.matches,
            "overall_fraction": self.overall_fraction,
            "tau": self.tau,
            "high_signal_pairs": self.high_signal_pairs,
            "high_signal_matches": self.high_signal_matches,
            "high_signal_fraction": self.high_signal_fraction,
            "bins": self.bins,
        }

    def to_text(self) -> str:
        lines = [
            f"sign match over {self.total} steps (population: all recorded steps)",
            f"  overall      {self.matches}/{self.total}  ({self.overall_fraction:.1%})",
            f"  high-signal  {self.high_signal_matches}/{self.high_signal_pairs}"
            f"  ({self.high_signal_fraction:.1%})   [|delta| >= {self.tau:g}]",
            "  |delta| bin     pairs  matches  fraction",
        ]
        for b in self.bins:
            frac = f"{b['fraction']:.1%}" if b["pairs"] else "-"
            lines.append(
                f"  {b['label']:<14} {b['pairs']:>6} {b['matches']:>8}  {frac:>8}"
            )
        return "\n".join(lines)


def record_deltas(records: list[ZoStepRecord]) -> list[float]:
    """The two-point loss differences L+ - L- of a trajectory, in step order."""
    return [r.loss_plus - r.loss_minus for r in records]


def sign_match(deltas_a, deltas_b, tau: float = 0.005) -> SignMatchReport:
    """Compare sign(L+ - L-) between two step-aligned difference lists.

    List A is the reference: the high-signal subset and the magnitude bins
    are keyed by |delta_a|.
    """
    deltas_a = list(deltas_a)
    deltas_b = list(deltas_b)
    if len(deltas_a) != len(deltas_b):
        raise InputError(
            f"sign_match needs aligned runs: {len(deltas_a)} vs {len(deltas_b)} steps"
        )
    counts = {label: [0, 0] for label in _BIN_ORDER}  # pairs, matches
    matches = 0
    hs_pairs = 0
    hs_matches = 0
    for da, db in zip(deltas_a, deltas_b):
        hit = _sign(da) == _sign(db)
        matches += hit
        bin_ = counts[_bin_label(da)]
        bin_[0] += 1
        bin_[1] += hit
        if abs(da) >= tau:
            hs_pairs += 1
            hs_matches += hit
    bins = [
        {
            "label": label,
            "pairs": pairs,
            "matches": m,
            "fraction": (m / pairs) if pairs else None,
        }
        for label, (pairs, m) in counts.items()
    ]
    return SignMatchReport(
        total=len(deltas_a),
        matches=matches,
        tau=tau,
        high_signal_pairs=hs_pairs,
        high_signal_matches=hs_matches,
        bins=bins,
    )


# ---------------------------------------------------------------------------
# Strict step-by-step comparison.
# ---------------------------------------------------------------------------


@dataclass
class StrictCompareReport:
    """Step-by-step equivalence audit of two trajectories.

    A step is accepted iff the seed matches, both direction digests match,
    and both paired losses agree within ``loss_tol``.  Mismatch step lists
    are kept so a single injected fault can be located exactly.
    """

    steps: int
    accepted: int
    seed_mismatches: int
    digest_mismatches: int
    max_dloss_plus: float
    max_dloss_minus: float
    loss_tol: float
    final_loss_difference: float | None
    seed_mismatch_steps: list[int] = field(default_factory=list)
    digest_mismatch_steps: list[int] = field(default_factory=list)
    loss_mismatch_steps: list[int] = field(default_factory=list)

    @property
    def rejected(self) -> int:
        return self.steps - self.accepted

    def to_dict(self) -> dict:
        return {
            "steps": self.steps,
            "accepted": self.accepted,
            "rejected": self.rejected,
            "seed_mismatches": self.seed_mismatches,
            "digest_mismatches": self.digest_mismatches,
            "max_dloss_plus": self.max_dloss_plus,
            "max_dloss_minus": self.max_dloss_minus,
            "loss_tol": self.loss_tol,
            "final_loss_difference": self.final_loss_difference,
            "seed_mismatch_steps": self.seed_mismatch_steps,
            "digest_mismatch_steps": self.digest_mismatch_steps,
            "loss_mismatch_steps": self.loss_mismatch_steps,
        }

    def to_text(self) -> str:
        final = (
            f"{self.final_loss_difference:.6f}"
            if self.final_loss_difference is not None
            else "n/a"
        )
        lines = [
            f"strict compare over {self.steps} steps (loss_tol={self.loss_tol:g})",
            f"  accepted          {self.accepted}/{self.steps}",
            f"  seed mismatches   {self.seed_mismatches}",
            f"  digest mismatches {self.digest_mismatches}",
            f"  max |dL+|         {self.max_dloss_plus:.3e}",
            f"  max |dL-|         {self.max_dloss_minus:.3e}",
            f"  final loss diff   {final}",
        ]
        for name, steps in (
            ("seed", self.seed_mismatch_steps),
            ("digest", self.digest_mismatch_steps),
            ("loss", self.loss_mismatch_steps),
        ):
            if steps:
                shown = ", ".join(str(s) for s in steps[:8])
                more = "" if len(steps) <= 8 else f" (+{len(steps) - 8} more)"
                lines.append(f"  {name} mismatch steps: {shown}{more}")
        return "\n".join(lines)


def strict_compare(traj_a, traj_b, loss_tol: float = 1e-12) -> StrictCompareReport:
    """Audit two trajectories step by step.

    Inputs are (header, records, final) triples as returned by
    ``read_trajectory``.  The default tolerance suits same-precision
    comparisons; cross-precision runs need a loose tolerance (0.05 is the
    working value for the real32 emulation).
    """
    header_a, records_a, final_a = traj_a
    header_b, records_b, final_b = traj_b
    if header_a.get("schema") != header_b.get("schema"):
        raise InputError(
            f"trajectory schema mismatch: {header_a.get('schema')} vs {header_b.get('schema')}"
        )
    if len(records_a) != len(records_b):
        raise InputError(
            f"step count mismatch: {len(records_a)} vs {len(records_b)}"
        )
    accepted = 0
    seed_bad: list[int] = []
    digest_bad: list[int] = []
    loss_bad: list[int] = []
    max_dp = 0.0
    max_dm = 0.0
    for ra, rb in zip(records_a, records_b):
        if ra.step != rb.step:
            raise InputError(f"step misalignment: {ra.step} vs {rb.step}")
        ok = True
        if ra.seed != rb.seed:
            seed_bad.append(ra.step)
            ok = False
        if ra.u_digest != rb.u_digest or ra.v_digest != rb.v_digest:
            digest_bad.append(ra.step)
            ok = False
        dp = abs(ra.loss_plus - rb.loss_plus)
        dm = abs(ra.loss_minus - rb.loss_minus)
        max_dp = max(max_dp, dp)
        max_dm = max(max_dm, dm)
        if dp > loss_tol or dm > loss_tol:
            loss_bad.append(ra.step)
            ok = False
        accepted += ok
    final_diff = None
    if final_a is not None and final_b is not None:
        if "eval_loss" in final_a and "eval_loss" in final_b:
            final_diff = abs(final_a["eval_loss"] - final_b["eval_loss"])
    return StrictCompareReport(
        steps=len(records_a),
        accepted=accepted,
        seed_mismatches=len(seed_bad),
        digest_mismatches=len(digest_bad),
        max_dloss_plus=max_dp,
        max_dloss_minus=max_dm,
        loss_tol=loss_tol,
        final_loss_difference=final_diff,
        seed_mismatch_steps=seed_bad,
        digest_mismatch_steps=digest_bad,
        loss_mismatch_steps=loss_bad,
    )


# ---------------------------------------------------------------------------
# Rank audit.
# ---------------------------------------------------------------------------


def rank_check(delta_w: np.ndarray, r: int) -> float:
    """Tail ratio sigma_{r+1} / sigma_1 of a weight delta.

    Zero for an exactly rank-<=r delta (up to SVD roundoff); 1 for a delta
    with flat spectrum.  A zero matrix has no direction at all and reports
    0 by definition; r at or past the spectrum length likewise.
    """
    delta_w = np.asarray(delta_w, dtype=np.float64)
    if delta_w.ndim != 2:
        raise InputError(f"rank_check needs a matrix, got ndim={delta_w.ndim}")
    if not np.any(delta_w):
        return 0.0
    s = np.linalg.svd(delta_w, compute_uv=False)
    if r >= s.size or s[0] == 0.0:
        return 0.0
    return float(s[r] / s[0])


# ---------------------------------------------------------------------------
# Curves and summary.
# ---------------------------------------------------------------------------


def write_eval_csv(eval_curve, path: str) -> None:
    """Per-run evaluation curve: step, cumulative train wall-ms at the eval
    point, dev loss, dev accuracy."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["step", "wall_ms", "eval_loss", "eval_acc"])
        for p in eval_curve:
            w.writerow([p.step, repr(p.wall_ms), repr(p.loss), repr(p.acc)])


def trajectory_report(runs, out_dir: str | None = None) -> dict:
    """Summary of one or more finished runs, plus optional CSV emission.

    Writes eval-<kind>.csv per run when ``out_dir`` is given.  When both a
    baseline-kind and a serving-kind run are present, the summary includes
    the measured wall-clock speedup (baseline / serving) and the absolute
    final-eval-loss difference.
    """
    summary: dict = {"runs": []}
    seen: dict[str, int] = {}
    by_kind: dict[str, object] = {}
    for run in runs:
        kind = run.kind
        seen[kind] = seen.get(kind, 0) + 1
        name = kind if seen[kind] == 1 else f"{kind}-{seen[kind]}"
        final = run.eval_curve[-1]
        summary["runs"].append(
            {
                "name": name,
                "kind": kind,
                "precision": run.precision,
                "steps": run.steps_completed,
                "final_eval_loss": final.loss,
                "final_eval_acc": final.acc,
                "train_wall_s": run.train_wall_s,
            }
        )
        by_kind.setdefault(kind, run)
        if out_dir is not None:
            write_eval_csv(run.eval_curve, os.path.join(out_dir, f"eval-{name}.csv"))
    if "baseline" in by_kind and "serving" in by_kind:
        base, serve = by_kind["baseline"], by_kind["serving"]
        if serve.train_wall_s > 0:
            summary["speedup"] = base.train_wall_s / serve.train_wall_s
        summary["final_loss_difference"] = abs(
            base.eval_curve[-1].loss - serve.eval_curve[-1].loss
        )
    if out_dir is not None:
        with open(os.path.join(out_dir, "summary.json"), "w") as f:
            json.dump(summary, f, indent=2, sort_keys=True)
            f.write("\n")
    return summary
