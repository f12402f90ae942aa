"""Finite-difference residual constraint: residuals, scalar loss, exact adjoint.

For a prediction (u^, v^, p^) one step after (u, v, p):

    r_u = (u^ - u)/dt + sigma u^ + (p - p_left)/(rho0 dx)
    r_v = (v^ - v)/dt + sigma v^ + (p - p_below)/(rho0 dy)
    r_p = (p^ - p)/dt + sigma p^ + rho0 c^2 ((u^_right - u^)/dx + (v^_above - v^)/dy)

The u and v residuals drive on the previous pressure; the p residual closes on
the predicted velocities.  The loss is the mean of r^2 over unmasked cells,
summed over the three terms.  Hard-source cells are masked out: injection
overwrites p there, so the discrete equations cannot hold.

All field functions broadcast over leading batch axes; the grid axes are the
trailing two.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fdm import backward_difference, forward_difference
from .grid import DomainSpec, FieldGrid, SigmaField, WaveState


@dataclass
class ResidualSet:
    """Pointwise residuals plus the mask of loss-participating cells."""

    r_u: FieldGrid
    r_v: FieldGrid
    r_p: FieldGrid
    mask: np.ndarray

    def __post_init__(self):
        if not (self.r_u.shape == self.r_v.shape == self.r_p.shape == self.mask.shape):
            raise ValueError("residual grids and mask must share one shape")


def residual_fields(u, v, p, uh, vh, ph, sigma, spec: DomainSpec):
    """Raw residual grids for prediction (uh, vh, ph) against (u, v, p)."""
    dt, rho0 = spec.dt, spec.rho0
    ru = (uh - u) / dt + sigma * uh + backward_difference(spec.dx).apply(p, -2) / rho0
    rv = (vh - v) / dt + sigma * vh + backward_difference(spec.dy).apply(p, -1) / rho0
    rp = (ph - p) / dt + sigma * ph + (rho0 * spec.c**2) * (
        forward_difference(spec.dx).apply(uh, -2)
        + forward_difference(spec.dy).apply(vh, -1)
    )
    return ru, rv, rp


def masked_mean_sq(r: np.ndarray, mask: np.ndarray, n) -> np.ndarray:
    """Mean of r^2 over mask (trailing two axes); n = mask.sum over those axes."""
    rm = np.where(mask, r, 0)
    return np.einsum("...ij,...ij->...", rm, rm) / n


def residuals(
    prev: WaveState,
    pred: WaveState,
    sigma: SigmaField,
    spec: DomainSpec,
    mask: np.ndarray | None = None,
) -> ResidualSet:
    if prev.step + 1 != pred.step:
        raise ValueError(
            f"prediction must be one step ahead of prev (got {prev.step} -> {pred.step})"
        )
    if prev.shape != pred.shape:
        raise ValueError("prev and pred grids differ in shape")
    mask = np.ones(prev.shape, bool) if mask is None else np.asarray(mask, bool)
    ru, rv, rp = residual_fields(
        prev.u, prev.v, prev.p, pred.u, pred.v, pred.p, sigma, spec
    )
    return ResidualSet(ru, rv, rp, mask)


def fdrc_loss(res: ResidualSet) -> tuple[float, dict[str, float]]:
    """Total loss and the {L_u, L_v, L_p} split; total is their plain sum."""
    n = int(res.mask.sum())
    if n == 0:
        raise ValueError("loss mask excludes every cell")
    per_term = {
        "L_u": float(masked_mean_sq(res.r_u, res.mask, n)),
        "L_v": float(masked_mean_sq(res.r_v, res.mask, n)),
        "L_p": float(masked_mean_sq(res.r_p, res.mask, n)),
    }
    return per_term["L_u"] + per_term["L_v"] + per_term["L_p"], per_term


def grad_fields(u, v, p, uh, vh, ph, sigma, spec: DomainSpec, mask):
    """d(total)/d(uh, vh, ph), normalized per instance by its mask count.

    uh feeds both r_u and (via the forward difference) r_p, so its gradient
    carries the transposed stencil; likewise vh.  ph appears only in r_p.
    """
    n = mask.sum(axis=(-2, -1), keepdims=True)
    if (n == 0).any():
        raise ValueError("loss mask excludes every cell")
    ru, rv, rp = residual_fields(u, v, p, uh, vh, ph, sigma, spec)
    ru = np.where(mask, ru, 0)
    rv = np.where(mask, rv, 0)
    rp = np.where(mask, rp, 0)
    w = 1.0 / spec.dt + sigma
    scale = 2.0 / n
    cc = spec.rho0 * spec.c**2
    gu = scale * (ru * w + cc * forward_difference(spec.dx).apply_adjoint(rp, -2))
    gv = scale * (rv * w + cc * forward_difference(spec.dy).apply_adjoint(rp, -1))
    gp = scale * (rp * w)
    return gu, gv, gp


def loss_grad_wrt_pred(
    prev: WaveState,
    pred: WaveState,
    sigma: SigmaField,
    spec: DomainSpec,
    mask: np.ndarray | None = None,
):
    """Exact gradient of fdrc_loss(residuals(prev, pred, ...)) in pred."""
    if prev.step + 1 != pred.step:
        raise ValueError(
            f"prediction must be one step ahead of prev (got {prev.step} -> {pred.step})"
        )
    mask = np.ones(prev.shape, bool) if mask is None else np.asarray(mask, bool)
    return grad_fields(
        prev.u, prev.v, prev.p, pred.u, pred.v, pred.p, sigma, spec, mask
    )
