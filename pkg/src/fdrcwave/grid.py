"""Domain geometry, staggered-field storage, PML absorption profile, sources.

Index convention: a field is an (nx, ny) array indexed [i, j] with i along x
and j along y.  Pressure p(i, j) sits at the cell center, u(i, j) at the
cell's left x-face (between p(i-1, j) and p(i, j)) and v(i, j) at its bottom
y-face; stencil reads past the array edge are taken as zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# A FieldGrid is a plain (nx, ny) ndarray; a SigmaField is the absorption
# coefficient sampled on the same lattice.
FieldGrid = np.ndarray
SigmaField = np.ndarray

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class DomainSpec:
    """Geometry, discretization, medium and PML parameters of one domain."""

    nx: int
    ny: int
    dx: float = 2.0
    dy: float = 2.0
    dt: float = 1.0
    c: float = 1.0
    rho0: float = 1.0
    pml_thickness: int = 30
    pml_R: float = 1e-3

    def __post_init__(self):
        if min(self.dx, self.dy, self.dt, self.c, self.rho0) <= 0:
            raise ValueError("dx, dy, dt, c and rho0 must all be positive")
        if not 0.0 < self.pml_R < 1.0:
            raise ValueError(f"pml_R must lie in (0, 1), got {self.pml_R}")
        if self.pml_thickness < 0:
            raise ValueError("pml_thickness must be non-negative")
        if self.nx < 2 * self.pml_thickness + 4 or self.ny < 2 * self.pml_thickness + 4:
            raise ValueError(
                f"{self.nx}x{self.ny} grid leaves no interior for "
                f"pml_thickness={self.pml_thickness}"
            )

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nx, self.ny)

    @property
    def interior(self) -> tuple[slice, slice]:
        """(i, j) slices covering the non-PML region."""
        t = self.pml_thickness
        return slice(t, self.nx - t), slice(t, self.ny - t)


@dataclass
class WaveState:
    """Staggered fields (u, v, p) at one time level; time = step * dt."""

    u: FieldGrid
    v: FieldGrid
    p: FieldGrid
    step: int = 0

    def __post_init__(self):
        if not (self.u.shape == self.v.shape == self.p.shape):
            raise ValueError("u, v and p must share one grid shape")

    @property
    def shape(self) -> tuple[int, int]:
        return self.p.shape

    @property
    def dtype(self):
        return self.p.dtype

    def time(self, dt: float) -> float:
        return self.step * dt

    def copy(self) -> "WaveState":
        return WaveState(self.u.copy(), self.v.copy(), self.p.copy(), self.step)


def zero_state(spec: DomainSpec, dtype=np.float64) -> WaveState:
    shape = spec.shape
    return WaveState(
        np.zeros(shape, dtype), np.zeros(shape, dtype), np.zeros(shape, dtype)
    )


@dataclass(frozen=True)
class SourceSpec:
    """Rectangular hard source: after every time advance, p over the
    rectangle is overwritten with sin(2*pi*t/T + bias)."""

    i0: int
    j0: int
    w: int
    h: int
    T: float
    bias: float = 0.0

    def __post_init__(self):
        if self.w < 1 or self.h < 1:
            raise ValueError("source rectangle must be at least 1x1")
        if self.T <= 0:
            raise ValueError(f"source period must be positive, got {self.T}")

    @property
    def cells(self) -> tuple[slice, slice]:
        return slice(self.i0, self.i0 + self.w), slice(self.j0, self.j0 + self.h)

    def validate(self, spec: DomainSpec) -> None:
        t = spec.pml_thickness
        inside = (
            t <= self.i0
            and self.i0 + self.w <= spec.nx - t
            and t <= self.j0
            and self.j0 + self.h <= spec.ny - t
        )
        if not inside:
            raise ValueError(f"source rectangle {self} leaves the interior region")

    def overlaps(self, other: "SourceSpec") -> bool:
        return not (
            self.i0 + self.w <= other.i0
            or other.i0 + other.w <= self.i0
            or self.j0 + self.h <= other.j0
            or other.j0 + other.h <= self.j0
        )


def _band_depth(n: int, thickness: int, cell: float) -> np.ndarray:
    """Physical penetration depth into the PML band along one axis.

    Zero on interior cells; cell widths count from the interior edge, so the
    outermost cell sits at full depth thickness*cell."""
    idx = np.arange(n)
    left = np.maximum(thickness - idx, 0)
    right = np.maximum(idx - (n - 1 - thickness), 0)
    return (left + right) * cell


def build_sigma(spec: DomainSpec) -> SigmaField:
    """Absorption field sigma(i, j) = s(l_x) + s(l_y) with the quadratic ramp

        s(l) = log(1/R) * 3c/(2 delta) * (l/delta)^2,   delta = thickness*cell,

    where l is the depth into the band (zero outside it).  Corner cells get
    both axis contributions."""
    t = spec.pml_thickness
    if t == 0:
        return np.zeros(spec.shape)
    amp = math.log(1.0 / spec.pml_R) * 1.5 * spec.c
    dx_band = t * spec.dx
    dy_band = t * spec.dy
    sx = (amp / dx_band) * (_band_depth(spec.nx, t, spec.dx) / dx_band) ** 2
    sy = (amp / dy_band) * (_band_depth(spec.ny, t, spec.dy) / dy_band) ** 2
    return sx[:, None] + sy[None, :]


def interior_mask(spec: DomainSpec) -> FieldGrid:
    """1 on interior cells, 0 on PML cells; mask == 1 exactly where sigma == 0."""
    m = np.zeros(spec.shape)
    m[spec.interior] = 1.0
    return m


def source_value(src: SourceSpec, time: float) -> float:
    return math.sin(TWO_PI * time / src.T + src.bias)


def check_disjoint(sources) -> None:
    srcs = list(sources)
    for a in range(len(srcs)):
        for b in range(a + 1, len(srcs)):
            if srcs[a].overlaps(srcs[b]):
                raise ValueError(
                    f"source rectangles overlap: {srcs[a]} and {srcs[b]}"
                )


def inject_sources(state: WaveState, sources, spec: DomainSpec) -> WaveState:
    """Overwrite p over each source rectangle at the state's own time.

    u and v are untouched; overlapping rectangles are rejected because the
    overwrite would be ambiguous."""
    sources = list(sources)
    if not sources:
        return state
    for s in sources:
        s.validate(spec)
    check_disjoint(sources)
    p = state.p.copy()
    t = state.time(spec.dt)
    for s in sources:
        p[s.cells] = source_value(s, t)
    return WaveState(state.u, state.v, p, state.step)


def new_domain(
    spec: DomainSpec,
    rng: np.random.Generator,
    *,
    max_sources: int = 4,
    source_size: tuple[int, int] = (5, 5),
    margin: int = 10,
    period_range: tuple[float, float] = (20.0, 100.0),
    dtype=np.float64,
):
    """Fresh zero-field domain with 1..max_sources random disjoint sources.

    Periods are uniform over period_range, phases uniform over [0, 2pi);
    positions are uniform in the interior, kept `margin` cells off the PML
    (shrunk automatically on small grids)."""
    w, h = source_size
    t = spec.pml_thickness
    m = max(0, min(margin, (spec.nx - 2 * t - w) // 2, (spec.ny - 2 * t - h) // 2))
    lo_i, hi_i = t + m, spec.nx - t - m - w
    lo_j, hi_j = t + m, spec.ny - t - m - h
    if hi_i < lo_i or hi_j < lo_j:
        raise ValueError(
            f"interior of {spec.nx}x{spec.ny} grid cannot hold a {w}x{h} source"
        )
    count = int(rng.integers(1, max_sources + 1))
    sources: list[SourceSpec] = []
    attempts = 0
    while len(sources) < count and attempts < 200:
        attempts += 1
        cand = SourceSpec(
            i0=int(rng.integers(lo_i, hi_i + 1)),
            j0=int(rng.integers(lo_j, hi_j + 1)),
            w=w,
            h=h,
            T=float(rng.uniform(*period_range)),
            bias=float(rng.uniform(0.0, TWO_PI)),
        )
        if not any(cand.overlaps(s) for s in sources):
            sources.append(cand)
    return zero_state(spec, dtype), sources
