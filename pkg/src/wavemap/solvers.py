"""Reference solvers for the (non)linear Schrödinger equation.

The model is ``i u_t = -Δu + β|u|^{2μ} u`` with an optional external
potential.  Two discretizations are provided: Strang split-step Fourier on
periodic grids and the Crank–Nicolson finite-difference (CNFD) scheme with a
homogeneous Dirichlet closure.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import FieldPair, GridSpec, TimeGrid, mesh

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    """Solver failure; ``step`` is the time-step index where it happened."""

    def __init__(self, message: str, step: int | None = None, residual: float | None = None):
        super().__init__(message)
        self.step = step
        self.residual = residual


def box_profile(coords: Sequence[np.ndarray], E0: float = 1.0) -> np.ndarray:
    """``E0·x(1-x)`` on ``[0, 1]`` (first coordinate), zero elsewhere."""
    x = coords[0]
    return np.where((x >= 0) & (x <= 1), E0 * x * (1 - x), 0.0)


@dataclass(frozen=True)
class Potential:
    """``V(x, t) = E(t) U(x)``; ``E ≡ 1`` for ``kind="spatial"``."""

    profile: Callable[[Sequence[np.ndarray]], np.ndarray] = box_profile
    kind: str = "spatial"
    E0: float = 1.0
    gamma: float = 1.0
    t0: float = 0.0
    omega: float = 1.0

    def __post_init__(self) -> None:
        if self.kind not in ("spatial", "separable"):
            raise ValueError(f"unknown potential kind {self.kind!r}")

    def modulation(self, t: float) -> float:
        if self.kind == "spatial":
            return 1.0
        return self.E0 * np.exp(-self.gamma * (t - self.t0) ** 2) * np.cos(self.omega * t)

    def spatial(self, grid: GridSpec) -> np.ndarray:
        return np.asarray(self.profile(mesh(grid)), dtype=float)

    def to_dict(self) -> dict:
        name = getattr(self.profile, "__name__", "custom")
        return {
            "kind": self.kind, "profile": name, "E0": self.E0,
            "gamma": self.gamma, "t0": self.t0, "omega": self.omega,
        }

    @classmethod
    def from_dict(cls, d: dict) -> Potential:
        profiles = {"box_profile": box_profile}
        if d.get("profile", "box_profile") not in profiles:
            raise ValueError(f"unknown potential profile {d.get('profile')!r}")
        return cls(profiles[d.get("profile", "box_profile")], d["kind"], d["E0"], d["gamma"], d["t0"], d["omega"])


@dataclass(frozen=True)
class NlsModel:
    beta: float = -1.0
    mu: int = 1
    potential: Potential | None = None

    def __post_init__(self) -> None:
        if int(self.mu) != self.mu or self.mu < 1:
            raise ValueError("mu must be a positive integer")
        if not np.isfinite(self.beta):
            raise ValueError("beta must be finite")

    def to_dict(self) -> dict:
        return {
            "beta": self.beta, "mu": int(self.mu),
            "potential": None if self.potential is None else self.potential.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> NlsModel:
        pot = d.get("potential")
        return cls(d["beta"], d["mu"], None if pot is None else Potential.from_dict(pot))


LINEAR = NlsModel(beta=0.0)


def wavenumbers(grid: GridSpec) -> list[np.ndarray]:
    """Angular wave numbers per axis in FFT order, ``2πj/L`` with ``j ∈ [-N/2, N/2)``."""
    if not grid.periodic:
        raise ValueError("spectral operations need a periodic grid")
    return [2 * np.pi * np.fft.fftfreq(n, d=h) for n, h in zip(grid.points, grid.spacing)]


def _xi2(grid: GridSpec) -> np.ndarray:
    ks = np.meshgrid(*wavenumbers(grid), indexing="ij")
    return sum(k * k for k in ks)


def spectral_laplacian_halfstep(field: np.ndarray, grid: GridSpec, duration: float) -> np.ndarray:
    """Exact flow of ``i u_t + Δu = 0`` over ``duration``."""
    field = np.asarray(field, dtype=complex).reshape(grid.shape)
    return np.fft.ifftn(np.exp(-1j * _xi2(grid) * duration) * np.fft.fftn(field))


def nonlinear_phase_step(
    field: np.ndarray,
    model: NlsModel,
    t: float,
    dt: float,
    spatial: np.ndarray | None = None,
) -> np.ndarray:
    """Exact flow of the pointwise part, ``u ← u exp(i(-β|u|^{2μ} + V̄)δt)``.

    ``spatial`` is the potential profile on the grid; the time modulation is
    sampled at the step midpoint.
    """
    field = np.asarray(field, dtype=complex)
    rho = (field.real**2 + field.imag**2) ** model.mu
    phase = -model.beta * rho
    if model.potential is not None:
        if spatial is None:
            raise ValueError("potential profile required")
        phase = phase + model.potential.modulation(t + 0.5 * dt) * spatial.reshape(field.shape)
    return field * np.exp(1j * phase * dt)


def strang_step(
    field: np.ndarray,
    grid: GridSpec,
    model: NlsModel,
    t: float,
    dt: float,
    spatial: np.ndarray | None = None,
) -> np.ndarray:
    half = spectral_laplacian_halfstep(field, grid, 0.5 * dt)
    half = nonlinear_phase_step(half, model, t, dt, spatial)
    return spectral_laplacian_halfstep(half, grid, 0.5 * dt)


@dataclass(frozen=True)
class SolverRun:
    grid: GridSpec
    time: TimeGrid
    initial: FieldPair
    model: NlsModel = field(default_factory=NlsModel)
    snapshots: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        snaps = tuple(float(t) for t in (self.snapshots or (self.time.T,)))
        for t in snaps:
            self.time.step_index(t)
        object.__setattr__(self, "snapshots", snaps)


def _snapshot_steps(run: SolverRun) -> dict[int, list[int]]:
    steps: dict[int, list[int]] = {}
    for i, t in enumerate(run.snapshots):
        steps.setdefault(run.time.step_index(t), []).append(i)
    return steps


def solve_nls(run: SolverRun) -> list[FieldPair]:
    """Strang split-step Fourier integration; one snapshot per scheduled time."""
    grid, model = run.grid, run.model
    if not grid.periodic:
        raise ValueError("split-step solver needs a periodic grid")
    dt = run.time.dt
    kinetic = np.exp(-1j * _xi2(grid) * 0.5 * dt)
    spatial = model.potential.spatial(grid) if model.potential is not None else None
    u = run.initial.to_complex().reshape(grid.shape).astype(complex)
    wanted = _snapshot_steps(run)
    out: list[FieldPair | None] = [None] * len(run.snapshots)
    last = max(wanted)
    for n in range(last + 1):
        if n in wanted:
            if not np.all(np.isfinite(u)):
                raise SolverError(f"non-finite field at step {n}", step=n)
            snap = FieldPair.from_complex(u.copy())
            for i in wanted[n]:
                out[i] = snap
        if n == last:
            break
        t = run.time.t0 + n * dt
        u = np.fft.ifftn(kinetic * np.fft.fftn(u))
        u = nonlinear_phase_step(u, model, t, dt, spatial)
        u = np.fft.ifftn(kinetic * np.fft.fftn(u))
        if n % 256 == 0 and not np.all(np.isfinite(u)):
            raise SolverError(f"non-finite field at step {n + 1}", step=n + 1)
    return out  # type: ignore[return-value]


def dirichlet_laplacian(grid: GridSpec) -> sp.csr_matrix:
    """Second-order central-difference Laplacian with zero ghost values."""
    ops = []
    for n, h in zip(grid.points, grid.spacing):
        ops.append(sp.diags([1.0, -2.0, 1.0], [-1, 0, 1], shape=(n, n)) / h**2)
    lap = sp.csr_matrix((grid.size, grid.size))
    for axis, op in enumerate(ops):
        term = sp.identity(1, format="csr")
        for other, n in enumerate(grid.points):
            term = sp.kron(term, op if other == axis else sp.identity(n), format="csr")
        lap = lap + term
    return lap.tocsr()


def _rho_mu(u: np.ndarray, mu: int) -> np.ndarray:
    return (u.real**2 + u.imag**2) ** mu


def cnfd_step(
    u: np.ndarray,
    grid: GridSpec,
    model: NlsModel,
    dt: float,
    tolerance: float = 1e-12,
    max_iters: int = 100,
    coefficient: float = 0.25,
    laplacian: sp.spmatrix | None = None,
) -> np.ndarray:
    """One Crank–Nicolson step by lagged-coefficient fixed-point iteration.

    Solves ``i(u¹-u⁰)/δt = -½Δ(u¹+u⁰) + c·β[|u¹|^{2μ}+|u⁰|^{2μ}](u¹+u⁰)``
    where ``c = coefficient``; with ``β = -1`` and ``c = 1/4`` this is the
    classical scheme.
    """
    if model.potential is not None:
        raise ValueError("CNFD solver does not support external potentials")
    lap = dirichlet_laplacian(grid) if laplacian is None else laplacian
    u0 = np.asarray(u, dtype=complex).reshape(-1)
    if not np.any(u0):
        return u0.reshape(grid.shape).copy()
    eye = sp.identity(grid.size, format="csr", dtype=complex)
    rho0 = _rho_mu(u0, model.mu)
    kin = 0.5 * dt * lap
    rhs_lin = 1j * u0 - kin @ u0
    c = coefficient * model.beta * dt
    u1 = u0.copy()
    diff = np.inf
    for _ in range(max_iters):
        w = rho0 + _rho_mu(u1, model.mu)
        lhs = 1j * eye + kin - sp.diags(c * w)
        rhs = rhs_lin + c * w * u0
        try:
            new = spla.spsolve(lhs.tocsc(), rhs)
        except RuntimeError as exc:  # singular factorization
            raise SolverError(f"linear solve failed: {exc}") from exc
        if not np.all(np.isfinite(new)):
            raise SolverError("linear solve produced non-finite values")
        diff = float(np.max(np.abs(new - u1)))
        u1 = new
        if diff < tolerance:
            return u1.reshape(grid.shape)
    raise SolverError(f"CNFD fixed point did not converge in {max_iters} iterations", residual=diff)


def residual_cnfd(
    u_old: np.ndarray,
    u_new: np.ndarray,
    grid: GridSpec,
    model: NlsModel,
    dt: float,
    coefficient: float = 0.25,
    laplacian: sp.spmatrix | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Real residual pair ``(I₁, I₂)`` of the CNFD system written in ``u = p + iq``."""
    lap = dirichlet_laplacian(grid) if laplacian is None else laplacian
    u_old = np.asarray(u_old, dtype=complex).reshape(-1)
    u_new = np.asarray(u_new, dtype=complex).reshape(-1)
    p0, q0, p1, q1 = u_old.real, u_old.imag, u_new.real, u_new.imag
    r0 = (p0**2 + q0**2) ** model.mu
    r1 = (p1**2 + q1**2) ** model.mu
    g = -model.beta * coefficient * dt
    i1 = (
        p1 + 0.5 * dt * (lap @ q1) + g * (r1 * q1 + r1 * q0 + r0 * q1)
        - p0 + 0.5 * dt * (lap @ q0) + g * (r0 * q0)
    )
    i2 = (
        q1 - 0.5 * dt * (lap @ p1) - g * (r1 * p1 + r1 * p0 + r0 * p1)
        - q0 - 0.5 * dt * (lap @ p0) - g * (r0 * p0)
    )
    return i1.reshape(grid.shape), i2.reshape(grid.shape)


def solve_cnfd(run: SolverRun, tolerance: float = 1e-12, max_iters: int = 100, coefficient: float = 0.25) -> list[FieldPair]:
    lap = dirichlet_laplacian(run.grid)
    u = run.initial.to_complex().reshape(run.grid.shape).astype(complex)
    wanted = _snapshot_steps(run)
    out: list[FieldPair | None] = [None] * len(run.snapshots)
    last = max(wanted)
    for n in range(last + 1):
        for i in wanted.get(n, ()):
            out[i] = FieldPair.from_complex(u.copy())
        if n == last:
            break
        try:
            u = cnfd_step(u, run.grid, run.model, run.time.dt, tolerance, max_iters, coefficient, lap)
        except SolverError as exc:
            exc.step = n
            raise
    return out  # type: ignore[return-value]


def expanded_grid(grid: GridSpec, factor: int) -> tuple[GridSpec, tuple[slice, ...]]:
    """Grid ``factor`` times larger about the same center with identical spacing.

    Also returns the index slices that pick out the original grid points.
    """
    if factor < 1 or int(factor) != factor:
        raise ValueError("expansion factor must be a positive integer")
    lower, upper, points, slices = [], [], [], []
    for lo, hi, n, h in zip(grid.lower, grid.upper, grid.points, grid.spacing):
        cells = n if grid.periodic else n - 1
        if ((factor - 1) * cells) % 2:
            raise ValueError(f"expansion {factor} does not align with the grid points: {cells} cells per axis")
        pad_pts = (factor - 1) * cells // 2
        big_n = n + 2 * pad_pts
        lower.append(lo - pad_pts * h)
        upper.append(lower[-1] + (big_n if grid.periodic else big_n - 1) * h)
        points.append(big_n)
        slices.append(slice(pad_pts, pad_pts + n))
    return GridSpec(tuple(lower), tuple(upper), tuple(points), grid.periodic), tuple(slices)


def embed(field: np.ndarray, big: GridSpec, slices: tuple[slice, ...]) -> np.ndarray:
    out = np.zeros(big.shape, dtype=np.asarray(field).dtype)
    out[slices] = np.asarray(field).reshape(tuple(s.stop - s.start for s in slices))
    return out


def reference_on_larger_domain(
    run: SolverRun, expansion: int = 2, solver: str = "spectral", **cnfd_kw
) -> list[FieldPair]:
    """Solve on an enlarged box, then restrict snapshots to the original grid.

    The initial condition is taken to be zero outside the original box.
    """
    big, slices = expanded_grid(run.grid, expansion)
    init = FieldPair(embed(run.initial.first, big, slices), embed(run.initial.second, big, slices))
    big_run = SolverRun(big, run.time, init, run.model, run.snapshots)
    snaps = solve_nls(big_run) if solver == "spectral" else solve_cnfd(big_run, **cnfd_kw)
    return [FieldPair(s.first[slices].copy(), s.second[slices].copy()) for s in snaps]


def mass(u: np.ndarray | FieldPair, grid: GridSpec | None = None) -> float:
    """Discrete ``‖u‖²`` (times the cell volume when a grid is given)."""
    if isinstance(u, FieldPair):
        u = u.to_complex()
    u = np.asarray(u)
    total = float(np.sum(u.real**2 + u.imag**2))
    return total * (grid.cell_volume if grid is not None else 1.0)
