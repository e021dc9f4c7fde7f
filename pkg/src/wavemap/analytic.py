"""Closed-form wave packets and named test initial conditions.

Conventions: the wave equation is ``u_tt = Δu`` and the linear Schrödinger
equation is ``i u_t = -Δu``.  Schrödinger packets are written in the scaled
variable ``x/√2`` so a packet with parameter ``k`` carries the physical wave
number ``k/√2`` and frequency ``|k|²/2``.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Callable, Sequence

import numpy as np
from scipy import integrate

from .grid import FieldPair, GridSpec, mesh

WAVE = "wave"
SCHRODINGER = "schrodinger"
EQUATIONS = (WAVE, SCHRODINGER)

SQRT2 = np.sqrt(2.0)


@dataclass(frozen=True)
class WavePacketSpec:
    k: tuple[float, ...]
    sigma2: float
    equation: str = WAVE

    def __post_init__(self) -> None:
        k = tuple(float(v) for v in np.atleast_1d(self.k))
        object.__setattr__(self, "k", k)
        if not k:
            raise ValueError("wave number needs at least one component")
        if not self.sigma2 > 0:
            raise ValueError("sigma2 must be positive")
        if not all(np.isfinite(k)):
            raise ValueError("wave number must be finite")
        if self.equation not in EQUATIONS:
            raise ValueError(f"unknown equation {self.equation!r}")

    @property
    def knorm(self) -> float:
        return float(np.linalg.norm(self.k))


def sigma_set(text: str | Sequence[float]) -> tuple[float, ...]:
    """Width sets: ``"L"`` (linear), ``"E:h"`` (doubling from h) or explicit values."""
    if not isinstance(text, str):
        return tuple(sorted(float(v) for v in text))
    text = text.strip()
    if text == "L":
        return (0.8, 0.9, 1.0, 1.1, 1.2, 1.3)
    if text.startswith("E:"):
        h = float(text[2:])
        if h <= 0:
            raise ValueError("E:h needs h > 0")
        return tuple(h * 2.0**j for j in range(6))
    values = tuple(sorted(float(v) for v in text.split(",") if v.strip()))
    if not values or any(v <= 0 for v in values):
        raise ValueError(f"cannot parse sigma set {text!r}")
    return values


def _dot(k: Sequence[float], coords: Sequence[np.ndarray]) -> np.ndarray:
    return sum(kk * x for kk, x in zip(k, coords))


def _coords(grid: GridSpec, dim: int) -> list[np.ndarray]:
    """Grid coordinates for a ``dim``-dimensional packet.

    A grid with fewer axes than the packet is the cross-section through the
    origin: the missing coordinates are zero.
    """
    if grid.dim > dim:
        raise ValueError(f"packet has dimension {dim}, grid has {grid.dim}")
    x = mesh(grid)
    return list(x) + [np.zeros_like(x[0])] * (dim - grid.dim)


def wave_packet_initial(spec: WavePacketSpec, grid: GridSpec) -> FieldPair:
    x = _coords(grid, len(spec.k))
    r2 = sum(xi**2 for xi in x)
    phase = _dot(spec.k, x)
    env = np.exp(-r2 / (2 * spec.sigma2))
    u0 = env * np.cos(phase)
    v0 = env * (sum(x) / spec.sigma2 * np.cos(phase) + spec.knorm * np.sin(phase))
    return FieldPair(u0, v0)


def wave_packet_evolved(spec: WavePacketSpec, grid: GridSpec, t: float) -> np.ndarray:
    """Travelling packet ``exp(-Σ(x_i - t)²/2σ²) cos(k·x - |k|t)``.

    Exact for ``d = 1`` and ``k > 0``; for ``d > 1`` it is the family used to
    build training data, not a solution of the wave equation.
    """
    if t < 0:
        raise ValueError("t must be non-negative")
    x = _coords(grid, len(spec.k))
    env = np.exp(-sum((xi - t) ** 2 for xi in x) / (2 * spec.sigma2))
    return env * np.cos(_dot(spec.k, x) - spec.knorm * t)


def schrodinger_packet_initial(spec: WavePacketSpec, grid: GridSpec) -> FieldPair:
    x = _coords(grid, len(spec.k))
    r2 = sum(xi**2 for xi in x)
    u0 = np.exp(-r2 / 2 / spec.sigma2 + 1j * _dot(spec.k, x) / SQRT2)
    return FieldPair.from_complex(u0)


def schrodinger_linear_evolved(
    spec: WavePacketSpec, grid: GridSpec, t: float, form: str = "printed"
) -> FieldPair:
    """Linear Schrödinger packet at time ``t``.

    ``form="printed"`` evaluates the classical kernels as they are usually
    quoted (the dedicated 1D expression, the general ``(i/(i-2t))^{d/2}``
    expression otherwise); these coincide with the true solution only for
    ``σ² = 1``.  ``form="exact"`` is the boosted spreading Gaussian, exact
    for every width.
    """
    if t < 0:
        raise ValueError("t must be non-negative")
    x = _coords(grid, len(spec.k))
    k = spec.k
    s = spec.sigma2
    if form == "exact":
        xi = [kk / SQRT2 for kk in k]
        width = s + 2j * t
        shifted = sum((xj - 2 * xij * t) ** 2 for xj, xij in zip(x, xi))
        u = (s / width) ** (len(k) / 2) * np.exp(
            -shifted / (2 * width) + 1j * _dot(xi, x) - 1j * sum(v * v for v in xi) * t
        )
    elif form == "printed" and len(k) == 1:
        (kk,) = k
        (x1,) = x
        a = 1.0 / (1 + 4 * t * t)
        y = x1 / SQRT2
        u = (
            np.sqrt(1 + 2j * t) ** -1
            * np.exp(-a * (y - kk * t) ** 2 / s)
            * np.exp(1j * a * ((kk + 2 * t * x1 / SQRT2) * y - 0.5 * kk * kk * t))
        )
    elif form == "printed":
        d = len(k)
        r2 = sum(xi**2 for xi in x)
        num = -1j * r2 / (2 * s) - _dot(k, x) / SQRT2 + 0.5 * sum(v * v for v in k) * t
        u = (1j / (1j - 2 * t)) ** (d / 2) * np.exp(num / (1j - 2 * t))
    else:
        raise ValueError(f"unknown form {form!r}")
    return FieldPair.from_complex(np.asarray(u, dtype=complex))


def dispersion(equation: str, k: Sequence[float] | float) -> float:
    k = np.atleast_1d(np.asarray(k, dtype=float))
    if equation == WAVE:
        return float(np.linalg.norm(k))
    if equation == SCHRODINGER:
        return 0.5 * float(k @ k)
    raise ValueError(f"unknown equation {equation!r}")


def sech(x: np.ndarray) -> np.ndarray:
    return 2.0 / (np.exp(x) + np.exp(-x))


class NamedCondition(str, Enum):
    WAVE_I = "wave-i"
    WAVE_II = "wave-ii"
    WAVE_III = "wave-iii"
    WAVE_IV = "wave-iv"
    SCHR_I = "schr-i"
    SCHR_II = "schr-ii"
    SCHR_III = "schr-iii"
    NLS_HAT = "nls-hat"
    NLS_SECH = "nls-sech"
    NLS_TRUNC_GAUSS = "nls-trunc-gauss"
    NLS_SQUARE = "nls-square"
    NLS_2D = "nls-2d"

    @property
    def equation(self) -> str:
        return WAVE if self.value.startswith("wave") else SCHRODINGER

    @property
    def dim(self) -> int:
        return 2 if self is NamedCondition.NLS_2D else 1


def _gauss_wave(k: float, width: float):
    # u0 = exp(-x²/w) cos(kx) with v0 = -u0', a right-moving pulse
    def u0(x):
        return np.exp(-(x**2) / width) * np.cos(k * x)

    def v0(x):
        return np.exp(-(x**2) / width) * (2 * x / width * np.cos(k * x) + k * np.sin(k * x))

    return u0, v0


def _sech_wave(x):
    return sech(x) * np.cos(2 * x)


def _sech_wave_t(x):
    return sech(x) * (np.tanh(x) * np.cos(2 * x) + 2 * np.sin(2 * x))


def wave_condition_functions(
    cond: NamedCondition | str, k_tilde: float | None = None
) -> tuple[Callable, Callable]:
    """``(u0, v0)`` callables of ``x`` for the named 1D wave conditions."""
    cond = NamedCondition(cond)
    if cond is NamedCondition.WAVE_I:
        return _gauss_wave(6.0, 1.0)
    if cond is NamedCondition.WAVE_II:
        return _gauss_wave(6.5, 1.5)
    if cond is NamedCondition.WAVE_III:
        return _sech_wave, _sech_wave_t
    if cond is NamedCondition.WAVE_IV:
        if k_tilde is None:
            raise ValueError("wave-iv needs k_tilde")
        return _gauss_wave(float(k_tilde), 1.0)
    raise ValueError(f"{cond.value} is not a wave condition")


def schrodinger_condition_function(cond: NamedCondition | str, k_tilde: float | None = None) -> Callable:
    """Complex ``u0(*coords)`` for the named Schrödinger conditions."""
    cond = NamedCondition(cond)
    if cond is NamedCondition.SCHR_I:
        return lambda x: np.exp(-((x / SQRT2) ** 2) + 3j * SQRT2 * x)
    if cond is NamedCondition.SCHR_II:
        return lambda x: np.exp(-((x / SQRT2) ** 2) / 1.2 + 3.25j * SQRT2 * x)
    if cond is NamedCondition.SCHR_III:
        if k_tilde is None:
            raise ValueError("schr-iii needs k_tilde")
        return lambda x: np.exp(-((x / SQRT2) ** 2) + 1j * k_tilde * x / SQRT2)
    if cond is NamedCondition.NLS_HAT:
        return lambda x: np.where(np.abs(x) <= 2, 1 - 0.5 * np.abs(x), 0.0) + 0j
    if cond is NamedCondition.NLS_SECH:
        return lambda x: sech(x) * np.exp(5j * x)
    if cond is NamedCondition.NLS_TRUNC_GAUSS:
        return lambda x: np.where(np.abs(x) <= 2, np.exp(-(x**2) + 5j * x), 0.0)
    if cond is NamedCondition.NLS_SQUARE:
        return lambda x: np.where(np.abs(x) <= 2, 1.0, 0.0) + 0j
    if cond is NamedCondition.NLS_2D:
        return lambda x1, x2: np.exp(-(x1**2 + x2**2) + 1j * (3 * x1 + 3 * x2))
    raise ValueError(f"{cond.value} is not a Schrödinger condition")


def condition_packet(cond: NamedCondition | str, k_tilde: float | None = None) -> WavePacketSpec | None:
    """Packet parameters of a named condition when it belongs to a packet family."""
    cond = NamedCondition(cond)
    table = {
        NamedCondition.WAVE_I: ((6.0,), 0.5, WAVE),
        NamedCondition.WAVE_II: ((6.5,), 0.75, WAVE),
        NamedCondition.WAVE_IV: ((k_tilde,), 0.5, WAVE),
        NamedCondition.SCHR_I: ((6.0,), 1.0, SCHRODINGER),
        NamedCondition.SCHR_II: ((6.5,), 1.2, SCHRODINGER),
        NamedCondition.SCHR_III: ((k_tilde,), 1.0, SCHRODINGER),
        NamedCondition.NLS_2D: ((3 * SQRT2, 3 * SQRT2), 0.5, SCHRODINGER),
    }
    if cond not in table:
        return None
    k, s2, eq = table[cond]
    if k[0] is None:
        raise ValueError(f"{cond.value} needs k_tilde")
    return WavePacketSpec(k, s2, eq)


def named_initial(cond: NamedCondition | str, grid: GridSpec, k_tilde: float | None = None) -> FieldPair:
    cond = NamedCondition(cond)
    if grid.dim != cond.dim:
        raise ValueError(f"{cond.value} is {cond.dim}D, grid is {grid.dim}D")
    x = mesh(grid)
    if cond.equation == WAVE:
        u0, v0 = wave_condition_functions(cond, k_tilde)
        return FieldPair(u0(x[0]), v0(x[0]))
    u = schrodinger_condition_function(cond, k_tilde)(*x)
    return FieldPair.from_complex(np.asarray(u, dtype=complex))


def dalembert(u0: Callable, v0: Callable, x: np.ndarray, t: float) -> np.ndarray:
    """1D d'Alembert solution, the velocity integral by adaptive quadrature."""
    x = np.asarray(x, dtype=float)
    out = 0.5 * (u0(x - t) + u0(x + t))
    if t == 0:
        return out
    integral = np.array(
        [integrate.quad(v0, xi - t, xi + t, epsabs=1e-12, epsrel=1e-10, limit=200)[0] for xi in x.ravel()]
    )
    return out + 0.5 * integral.reshape(x.shape)


def named_wave_solution(
    cond: NamedCondition | str, grid: GridSpec, t: float, k_tilde: float | None = None
) -> np.ndarray:
    """Reference solution of a named wave condition at time ``t``."""
    u0, v0 = wave_condition_functions(cond, k_tilde)
    return dalembert(u0, v0, mesh(grid)[0], t)
