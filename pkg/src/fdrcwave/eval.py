"""Surrogate rollout, oracle comparison, and the mean-relative-error metric.

MRE between prediction X and ground truth Y over a cell set M:

    MRE = sum_{i in M} |X_i - Y_i| / sum_{i in M} |Y_i| * 100%

Comparisons score the pressure field over interior cells only (waves
physically propagate there; the PML band is machinery), and aggregate
per-snapshot values by their mean.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .fdm import (
    NonFiniteFieldError,
    cfl_number,
    check_cfl,
    fdm_step,
    require_finite,
    simulate,
)
from .fdrc import masked_mean_sq, residual_fields
from .grid import DomainSpec, FieldGrid, SourceSpec, build_sigma, interior_mask, zero_state
from .nn import ModelParams, predict_step


def rollout(
    params: ModelParams,
    spec: DomainSpec,
    sources=(),
    steps: int = 0,
    snapshot_stride: int = 1,
    initial=None,
) -> list:
    """Autoregressive surrogate trajectory from the zero state (or `initial`);
    snapshot selection mirrors fdm.simulate.  Aborts with the failing step
    index if a field diverges."""
    if steps < 0:
        raise ValueError("steps must be non-negative")
    if snapshot_stride < 1:
        raise ValueError("snapshot_stride must be at least 1")
    if not check_cfl(spec):
        raise ValueError(
            f"CFL number {cfl_number(spec):.6g} exceeds 1; shrink dt or coarsen the grid"
        )
    sigma = build_sigma(spec)
    state = zero_state(spec, dtype=params.dtype) if initial is None else initial
    last = state.step + steps
    traj = [state]
    for _ in range(steps):
        state = predict_step(params, state, sigma, spec, sources)
        require_finite(state)
        if state.step % snapshot_stride == 0 or state.step == last:
            traj.append(state)
    return traj


def mre(pred: FieldGrid, truth: FieldGrid, mask=None) -> float:
    """Mean relative error in percent over mask cells (default: all cells)."""
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {truth.shape}")
    if mask is not None:
        sel = np.asarray(mask, bool)
        pred, truth = pred[sel], truth[sel]
    denom = np.abs(truth).sum()
    if denom == 0:
        raise ValueError("MRE undefined: ground truth is all zero over the mask")
    return float(np.abs(pred - truth).sum() / denom * 100.0)


@dataclass(frozen=True)
class CompareCase:
    label: str
    sources: tuple[SourceSpec, ...]
    steps: int

    @property
    def period(self) -> float:
        return float(np.mean([s.T for s in self.sources])) if self.sources else 0.0


@dataclass
class SnapshotMetric:
    step: int
    mre_p: float
    fdrc_loss: float  # mean residual loss over the stride window ending here


@dataclass
class CaseReport:
    label: str
    n_sources: int
    period: float
    snapshots: list[SnapshotMetric] = field(default_factory=list)
    mean_mre: float = float("nan")
    mean_loss: float = float("nan")
    error: str | None = None


@dataclass
class ComparisonReport:
    cases: list[CaseReport]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(("case_id", "sources", "T", "step", "mre_p_percent", "fdrc_loss"))
            for c in self.cases:
                for s in c.snapshots:
                    w.writerow(
                        (
                            c.label,
                            c.n_sources,
                            f"{c.period:.17g}",
                            s.step,
                            f"{s.mre_p:.17g}",
                            f"{s.fdrc_loss:.17g}",
                        )
                    )


def _mre_or_zero(pred, truth, sel) -> float:
    # identical fields (both all-zero included) count as a perfect 0%
    if np.array_equal(pred[sel], truth[sel]):
        return 0.0
    return mre(pred, truth, sel)


def _run_case(params, spec, case: CompareCase, snapshot_stride: int) -> CaseReport:
    report = CaseReport(case.label, len(case.sources), case.period)
    truth = simulate(spec, case.sources, case.steps, snapshot_stride)
    truth_by_step = {s.step: s for s in truth}

    sigma = build_sigma(spec)
    sel = interior_mask(spec).astype(bool)
    loss_mask = np.ones(spec.shape, bool)
    for s in case.sources:
        loss_mask[s.cells] = False
    n_unmasked = loss_mask.sum()

    state = zero_state(spec, dtype=np.float64 if params is None else params.dtype)
    window_losses: list[float] = []
    for _ in range(case.steps):
        prev = state
        if params is None:
            state = fdm_step(prev, sigma, spec, case.sources)  # oracle self-test
        else:
            state = predict_step(params, prev, sigma, spec, case.sources)
        require_finite(state)
        r_u, r_v, r_p = residual_fields(
            prev.u, prev.v, prev.p, state.u, state.v, state.p, sigma, spec
        )
        window_losses.append(
            float(
                masked_mean_sq(r_u, loss_mask, n_unmasked)
                + masked_mean_sq(r_v, loss_mask, n_unmasked)
                + masked_mean_sq(r_p, loss_mask, n_unmasked)
            )
        )
        if state.step % snapshot_stride == 0 or state.step == case.steps:
            ref = truth_by_step.get(state.step)
            if ref is not None and (
                not report.snapshots or report.snapshots[-1].step != state.step
            ):
                report.snapshots.append(
                    SnapshotMetric(
                        state.step,
                        _mre_or_zero(state.p, ref.p, sel),
                        float(np.mean(window_losses)),
                    )
                )
                window_losses = []
    if report.snapshots:
        report.mean_mre = float(np.mean([s.mre_p for s in report.snapshots]))
        report.mean_loss = float(np.mean([s.fdrc_loss for s in report.snapshots]))
    return report


def compare(
    params: ModelParams | None,
    spec: DomainSpec,
    cases,
    snapshot_stride: int = 60,
) -> ComparisonReport:
    """Roll the surrogate and the oracle from identical initial conditions for
    each case; `params=None` substitutes the oracle for the network (self-test).
    A failing case is recorded and the remaining cases still run."""
    reports = []
    for case in cases:
        try:
            reports.append(_run_case(params, spec, case, snapshot_stride))
        except (NonFiniteFieldError, ValueError) as err:
            reports.append(
                CaseReport(
                    case.label,
                    len(case.sources),
                    case.period,
                    error=f"{type(err).__name__}: {err}",
                )
            )
    return ComparisonReport(reports)
