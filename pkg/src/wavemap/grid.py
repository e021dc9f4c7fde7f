"""Uniform tensor grids, time grids and inclusion masks for irregular domains.

Fields live on grids of shape ``points`` and are flattened row-major (first
axis slowest).  Non-periodic grids include both box endpoints; periodic grids
drop the right endpoint so that they can be fed to FFT based solvers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class GridError(ValueError):
    """Raised for malformed grids, masks or mismatched field sizes."""


@dataclass(frozen=True)
class GridSpec:
    lower: tuple[float, ...]
    upper: tuple[float, ...]
    points: tuple[int, ...]
    periodic: bool = False

    def __post_init__(self) -> None:
        lower = tuple(float(v) for v in np.atleast_1d(self.lower))
        upper = tuple(float(v) for v in np.atleast_1d(self.upper))
        points = tuple(int(v) for v in np.atleast_1d(self.points))
        if not (len(lower) == len(upper) == len(points)) or len(lower) == 0:
            raise GridError("lower, upper and points must have the same positive length")
        if not all(np.isfinite(lower + upper)):
            raise GridError("grid bounds must be finite")
        if any(hi <= lo for lo, hi in zip(lower, upper)):
            raise GridError("upper bound must exceed lower bound on every axis")
        if any(n < 2 for n in points):
            raise GridError("every axis needs at least 2 points")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "points", points)

    @classmethod
    def box(cls, lo: float, hi: float, n: int, dim: int = 1, periodic: bool = False) -> GridSpec:
        """Same interval and point count on every axis."""
        return cls((lo,) * dim, (hi,) * dim, (n,) * dim, periodic)

    @property
    def dim(self) -> int:
        return len(self.points)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.points

    @property
    def size(self) -> int:
        return int(np.prod(self.points))

    @property
    def lengths(self) -> tuple[float, ...]:
        return tuple(hi - lo for lo, hi in zip(self.lower, self.upper))

    @property
    def spacing(self) -> tuple[float, ...]:
        div = (lambda n: n) if self.periodic else (lambda n: n - 1)
        return tuple(length / div(n) for length, n in zip(self.lengths, self.points))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    def to_dict(self) -> dict:
        return {
            "lower": list(self.lower),
            "upper": list(self.upper),
            "points": list(self.points),
            "periodic": self.periodic,
        }

    @classmethod
    def from_dict(cls, data: dict) -> GridSpec:
        return cls(tuple(data["lower"]), tuple(data["upper"]), tuple(data["points"]), bool(data["periodic"]))


def build_grid(spec: GridSpec) -> list[np.ndarray]:
    """Return one coordinate array per axis."""
    axes = []
    for lo, hi, n in zip(spec.lower, spec.upper, spec.points):
        if spec.periodic:
            axes.append(lo + (hi - lo) * np.arange(n) / n)
        else:
            axes.append(np.linspace(lo, hi, n))
    return axes


def mesh(spec: GridSpec) -> list[np.ndarray]:
    """Coordinate arrays broadcast to the full grid shape (``ij`` indexing)."""
    return np.meshgrid(*build_grid(spec), indexing="ij")


@dataclass(frozen=True)
class TimeGrid:
    t0: float
    T: float
    steps: int

    def __post_init__(self) -> None:
        if not self.T > self.t0:
            raise GridError("time grid needs T > t0")
        if self.steps < 1:
            raise GridError("time grid needs at least one step")

    @property
    def dt(self) -> float:
        return (self.T - self.t0) / self.steps

    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.steps + 1)

    def step_index(self, t: float, rtol: float = 1e-9) -> int:
        """Integer step count at which time ``t`` is reached."""
        x = (t - self.t0) / self.dt
        n = int(round(x))
        if abs(x - n) > rtol * max(1.0, abs(x)) or not 0 <= n <= self.steps:
            raise GridError(f"time {t} does not fall on the time grid")
        return n


@dataclass(frozen=True)
class DomainMask:
    kind: str
    params: dict = field(compare=False)
    flags: np.ndarray = field(compare=False, repr=False)

    @property
    def count(self) -> int:
        return int(np.count_nonzero(self.flags))

    def to_dict(self) -> dict:
        return {"kind": self.kind, **self.params}


def build_mask(spec: GridSpec, kind: str = "full", **params) -> DomainMask:
    """Inclusion mask over the flattened grid.

    ``kind`` is ``"full"``, ``"disk"`` (``radius``, optional ``center``) or
    ``"lshape"`` (optional ``cut_lower``/``cut_upper`` of the removed closed
    sub-box; defaults to the upper-right quadrant of the box).
    """
    coords = [c.ravel() for c in mesh(spec)]
    center_default = [0.5 * (lo + hi) for lo, hi in zip(spec.lower, spec.upper)]
    if kind == "full":
        flags = np.ones(spec.size, dtype=bool)
        params = {}
    elif kind == "disk":
        radius = float(params["radius"])
        center = [float(c) for c in params.get("center", center_default)]
        if radius <= 0:
            raise GridError("disk radius must be positive")
        for c, lo, hi in zip(center, spec.lower, spec.upper):
            if c - radius < lo - 1e-12 or c + radius > hi + 1e-12:
                raise GridError("disk is not contained in the grid box")
        dist2 = sum((x - c) ** 2 for x, c in zip(coords, center))
        # boundary points at exactly the radius are kept
        flags = dist2 <= radius**2 * (1 + 1e-12)
        params = {"radius": radius, "center": center}
    elif kind == "lshape":
        cut_lo = [float(v) for v in params.get("cut_lower", center_default)]
        cut_hi = [float(v) for v in params.get("cut_upper", spec.upper)]
        for a, b, lo, hi in zip(cut_lo, cut_hi, spec.lower, spec.upper):
            if not b > a:
                raise GridError("L-shape cut-out has zero area")
            if a < lo or b > hi:
                raise GridError("L-shape cut-out leaves the grid box")
        if all(a <= lo and b >= hi for a, b, lo, hi in zip(cut_lo, cut_hi, spec.lower, spec.upper)):
            raise GridError("L-shape cut-out removes the whole box")
        inside_cut = np.ones(spec.size, dtype=bool)
        for x, a, b in zip(coords, cut_lo, cut_hi):
            inside_cut &= (x >= a) & (x <= b)
        flags = ~inside_cut
        params = {"cut_lower": cut_lo, "cut_upper": cut_hi}
    else:
        raise GridError(f"unknown mask kind {kind!r}")
    return DomainMask(kind, params, flags)


def parse_mask(text: str, spec: GridSpec) -> DomainMask:
    """Parse ``full``, ``disk:R`` or ``lshape`` as used on the command line."""
    name, _, arg = text.partition(":")
    if name == "disk":
        return build_mask(spec, "disk", radius=float(arg) if arg else min(spec.lengths) / 2)
    if name in ("full", "lshape") and not arg:
        return build_mask(spec, name)
    raise GridError(f"cannot parse mask {text!r}")


def mask_from_dict(spec: GridSpec, data: dict) -> DomainMask:
    data = dict(data)
    return build_mask(spec, data.pop("kind"), **data)


def flatten_masked(field: np.ndarray, mask: DomainMask) -> np.ndarray:
    values = np.asarray(field).reshape(-1)
    if values.size != mask.flags.size:
        raise GridError(f"field has {values.size} values, grid has {mask.flags.size}")
    return values[mask.flags]


def scatter(values: np.ndarray, mask: DomainMask, shape: Sequence[int] | None = None) -> np.ndarray:
    """Inverse of :func:`flatten_masked`; excluded points are zero."""
    values = np.asarray(values)
    if values.shape != (mask.count,):
        raise GridError(f"expected {mask.count} masked values, got shape {values.shape}")
    out = np.zeros(mask.flags.size, dtype=values.dtype)
    out[mask.flags] = values
    return out if shape is None else out.reshape(shape)


@dataclass(frozen=True)
class FieldPair:
    """Two real grid arrays: ``(u, u_t)`` for the wave equation, ``(p, q)`` for Schrödinger."""

    first: np.ndarray
    second: np.ndarray

    @classmethod
    def from_complex(cls, u: np.ndarray) -> FieldPair:
        return cls(np.ascontiguousarray(u.real), np.ascontiguousarray(u.imag))

    def to_complex(self) -> np.ndarray:
        return self.first + 1j * self.second

    def masked_row(self, mask: DomainMask) -> np.ndarray:
        """``[first || second]`` restricted to the mask."""
        return np.concatenate([flatten_masked(self.first, mask), flatten_masked(self.second, mask)])
