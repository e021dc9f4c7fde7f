"""Training/test dataset assembly over wave-packet families.

A row of ``inputs`` is the flattened, masked initial data of one sample
(``[u0 || v0]`` for the wave equation, ``[p0 || q0]`` for Schrödinger) and the
matching row of ``outputs`` holds the solution at one or several times.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import containers
from .analytic import (
    SCHRODINGER,
    WAVE,
    WavePacketSpec,
    schrodinger_linear_evolved,
    schrodinger_packet_initial,
    wave_packet_evolved,
    wave_packet_initial,
)
from .grid import DomainMask, FieldPair, GridSpec, TimeGrid, flatten_masked, mask_from_dict
from .solvers import LINEAR, NlsModel, Potential, SolverRun, reference_on_larger_domain

log = logging.getLogger(__name__)

SOURCES = ("analytic", "spectral", "cnfd")
KINDS = ("SISO", "SIMO", "XIMO")
RESCALE_MODES = ("normalized", "literal", "none")


def wave_number_set(text: str | Sequence[float], dim: int = 1, tail: float = 1.0) -> tuple[tuple[float, ...], ...]:
    """Parse ``"a:b"`` (integer range) or ``"v1,v2,..."`` into wave-number vectors.

    In 2D every pair of the set is used; for ``d > 2`` the first two
    components range over the set and the rest are fixed to ``tail``.
    """
    if isinstance(text, str):
        if ":" in text:
            a, b = text.split(":")
            values = [float(v) for v in range(int(a), int(b) + 1)]
        else:
            values = [float(v) for v in text.split(",") if v.strip()]
    else:
        values = [float(v) for v in text]
    if not values:
        raise ValueError("empty wave-number set")
    if dim == 1:
        return tuple((v,) for v in values)
    return tuple(pair + (tail,) * (dim - 2) for pair in itertools.product(values, repeat=2))


@dataclass(frozen=True)
class PacketFamily:
    wave_numbers: tuple[tuple[float, ...], ...]
    sigma2: tuple[float, ...]
    equation: str = WAVE
    source: str = "analytic"
    model: NlsModel = LINEAR
    dt: float = 1e-3
    expansion: int = 2
    analytic_form: str = "exact"

    def __post_init__(self) -> None:
        if not self.wave_numbers or not self.sigma2:
            raise ValueError("wave-number and width sets must be non-empty")
        if self.source not in SOURCES:
            raise ValueError(f"unknown data source {self.source!r}")
        if self.equation == WAVE and self.source != "analytic":
            raise ValueError("wave-equation data only comes from the analytic source")
        if self.source == "analytic" and self.equation == SCHRODINGER and (
            self.model.beta != 0 or self.model.potential is not None
        ):
            raise ValueError("analytic Schrödinger data only exists for the linear equation")

    @property
    def size(self) -> int:
        return len(self.wave_numbers) * len(self.sigma2)

    def packets(self) -> list[WavePacketSpec]:
        """k-major, widths ascending."""
        return [
            WavePacketSpec(k, s, self.equation)
            for k in self.wave_numbers
            for s in sorted(self.sigma2)
        ]

    def to_dict(self) -> dict:
        return {
            "wave_numbers": [list(k) for k in self.wave_numbers],
            "sigma2": sorted(self.sigma2),
            "equation": self.equation,
            "source": self.source,
            "model": self.model.to_dict(),
            "dt": self.dt,
            "expansion": self.expansion,
            "analytic_form": self.analytic_form,
        }

    @classmethod
    def from_dict(cls, d: dict) -> PacketFamily:
        return cls(
            tuple(tuple(float(v) for v in k) for k in d["wave_numbers"]),
            tuple(float(s) for s in d["sigma2"]),
            d["equation"], d["source"], NlsModel.from_dict(d["model"]),
            d["dt"], d["expansion"], d.get("analytic_form", "exact"),
        )


@dataclass
class RescaleRecord:
    mode: str = "none"
    lam: float = 1.0
    granularity: str = "sample"
    mins: np.ndarray = field(default_factory=lambda: np.zeros(0))
    maxs: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def to_dict(self) -> dict:
        return {"mode": self.mode, "lambda": self.lam, "granularity": self.granularity}


def rescale_input(row: np.ndarray, mode: str, lam: float = 1.0, bounds: tuple[float, float] | None = None):
    """Min-max rescale one input row; returns ``(scaled, (min, max))``.

    ``bounds`` overrides the row's own extrema (dataset-wide rescaling).
    """
    row = np.asarray(row, dtype=float)
    if mode == "none":
        return row.copy(), (float(row.min(initial=0.0)), float(row.max(initial=0.0)))
    lo, hi = (float(row.min()), float(row.max())) if bounds is None else bounds
    if hi == lo:
        raise ValueError("constant input row cannot be min-max rescaled")
    if mode == "normalized":
        w = lam * row
        m, M = lam * lo, lam * hi
        return 2 * (w - m) / (M - m) - 1, (lo, hi)
    if mode == "literal":
        return 2 * (lam * row - lo) / (hi - lo) - lo, (lo, hi)
    raise ValueError(f"unknown rescale mode {mode!r}")


def rescale_rows(rows: np.ndarray, mode: str, lam: float, granularity: str = "sample"):
    """Rescale a whole input matrix; returns the scaled matrix and its record."""
    rows = np.asarray(rows, dtype=float)
    if granularity not in ("sample", "dataset"):
        raise ValueError(f"unknown rescale granularity {granularity!r}")
    if mode == "none" or rows.shape[0] == 0:
        return rows.copy(), RescaleRecord(mode, lam, granularity)
    if granularity == "dataset":
        bounds = (float(rows.min()), float(rows.max()))
        scaled = np.array([rescale_input(r, mode, lam, bounds)[0] for r in rows])
        return scaled, RescaleRecord(mode, lam, granularity, np.array([bounds[0]]), np.array([bounds[1]]))
    out, los, his = [], [], []
    for r in rows:
        s, (lo, hi) = rescale_input(r, mode, lam)
        out.append(s)
        los.append(lo)
        his.append(hi)
    return np.array(out), RescaleRecord(mode, lam, granularity, np.array(los), np.array(his))


def rescale_like(row: np.ndarray, record: RescaleRecord) -> np.ndarray:
    """Scale a new raw input row the way the training inputs were scaled."""
    if record.mode == "none":
        return np.asarray(row, dtype=float).copy()
    bounds = (float(record.mins[0]), float(record.maxs[0])) if record.granularity == "dataset" else None
    return rescale_input(row, record.mode, record.lam, bounds)[0]


@dataclass
class Dataset:
    kind: str
    inputs: np.ndarray
    outputs: np.ndarray
    meta: dict
    rescale: RescaleRecord = field(default_factory=RescaleRecord)

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    @property
    def grid(self) -> GridSpec:
        return GridSpec.from_dict(self.meta["grid"])

    @property
    def mask(self) -> DomainMask:
        return mask_from_dict(self.grid, self.meta["mask"])

    @property
    def time_input(self) -> bool:
        return bool(self.meta.get("time_input", False))

    def prepare_input(self, raw_row: np.ndarray, t: float | None = None) -> np.ndarray:
        row = rescale_like(raw_row, self.rescale)
        if self.time_input:
            if t is None:
                raise ValueError("time-conditioned dataset needs t")
            row = np.append(row, t)
        return row

    def to_bytes(self) -> bytes:
        meta = dict(self.meta, kind=self.kind, rescale=self.rescale.to_dict())
        arrays = [self.inputs, self.outputs, self.rescale.mins, self.rescale.maxs]
        return containers.pack(containers.DATASET_MAGIC, meta, arrays)

    @classmethod
    def from_bytes(cls, data: bytes) -> Dataset:
        meta, (inputs, outputs, mins, maxs) = containers.unpack(data, containers.DATASET_MAGIC)
        kind = meta.pop("kind")
        rs = meta.pop("rescale")
        record = RescaleRecord(rs["mode"], rs["lambda"], rs["granularity"], mins, maxs)
        return cls(kind, inputs, outputs, meta, record)

    def save(self, path: str | Path) -> bytes:
        blob = self.to_bytes()
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_bytes(blob)
        return blob

    @classmethod
    def load(cls, path: str | Path) -> Dataset:
        return cls.from_bytes(Path(path).read_bytes())


def initial_fields(packet: WavePacketSpec, grid: GridSpec) -> FieldPair:
    if packet.equation == WAVE:
        return wave_packet_initial(packet, grid)
    return schrodinger_packet_initial(packet, grid)


def _time_grid(times: Sequence[float], dt: float) -> TimeGrid:
    tmax = max(times)
    steps = max(1, int(round(tmax / dt)))
    return TimeGrid(0.0, tmax, steps)


def solve_sample(
    initial: FieldPair,
    grid: GridSpec,
    times: Sequence[float],
    model: NlsModel,
    source: str,
    dt: float,
    expansion: int,
) -> list[FieldPair]:
    """Numerical snapshots of one Schrödinger sample (zero times handled directly)."""
    times = [float(t) for t in times]
    if max(times) == 0:
        return [initial for _ in times]
    run = SolverRun(grid, _time_grid(times, dt), initial, model, tuple(times))
    solver = "spectral" if source == "spectral" else "cnfd"
    return reference_on_larger_domain(run, expansion, solver)


def sample_outputs(
    packet: WavePacketSpec, family: PacketFamily, grid: GridSpec, mask: DomainMask, times: Sequence[float]
) -> list[np.ndarray]:
    """Masked output blocks of one sample, one per time."""
    if max(times) == 0:
        # t = 0 is the initial state itself, taken verbatim
        initial = initial_fields(packet, grid)
        row = flatten_masked(initial.first, mask) if packet.equation == WAVE else initial.masked_row(mask)
        return [row.copy() for _ in times]
    if packet.equation == WAVE:
        return [flatten_masked(wave_packet_evolved(packet, grid, t), mask) for t in times]
    if family.source == "analytic":
        return [schrodinger_linear_evolved(packet, grid, t, family.analytic_form).masked_row(mask) for t in times]
    snaps = solve_sample(
        initial_fields(packet, grid), grid, times, family.model, family.source, family.dt, family.expansion
    )
    return [s.masked_row(mask) for s in snaps]


def _check_times(times: Sequence[float]) -> list[float]:
    times = [float(t) for t in times]
    if not times:
        raise ValueError("need at least one snapshot time")
    if any(t < 0 for t in times) or any(b < a for a, b in zip(times, times[1:])):
        raise ValueError("snapshot times must be non-negative and ascending")
    return times


def _base_meta(kind: str, grid: GridSpec, mask: DomainMask, times: Sequence[float], equation: str) -> dict:
    return {
        "kind": kind,
        "grid": grid.to_dict(),
        "mask": mask.to_dict(),
        "times": list(times),
        "equation": equation,
        "layout": {
            "input": "u0|v0" if equation == WAVE else "p0|q0",
            "output": "u" if equation == WAVE else "p|q",
            "masked_points": mask.count,
        },
    }


def _assemble(
    family: PacketFamily,
    grid: GridSpec,
    mask: DomainMask,
    times: Sequence[float],
    kind: str,
    rescale: str,
    lam: float,
    granularity: str,
    seed: int,
) -> Dataset:
    times = _check_times(times)
    raw_in, outs = [], []
    for idx, packet in enumerate(family.packets()):
        try:
            raw_in.append(initial_fields(packet, grid).masked_row(mask))
            outs.append(np.concatenate(sample_outputs(packet, family, grid, mask, times)))
        except Exception as exc:
            raise RuntimeError(f"sample {idx} (k={packet.k}, sigma2={packet.sigma2}) failed: {exc}") from exc
    inputs, record = rescale_rows(np.array(raw_in), rescale, lam, granularity)
    meta = _base_meta(kind, grid, mask, times, family.equation)
    meta["family"] = family.to_dict()
    meta["provenance"] = {"source": family.source, "seed": seed}
    return Dataset(kind, inputs, np.array(outs), meta, record)


def assemble_siso(
    family: PacketFamily,
    grid: GridSpec,
    mask: DomainMask,
    T: float,
    rescale: str = "normalized",
    lam: float = 1.0,
    granularity: str = "sample",
    seed: int = 0,
) -> Dataset:
    if T < 0:
        raise ValueError("T must be non-negative")
    return _assemble(family, grid, mask, [T], "SISO", rescale, lam, granularity, seed)


def assemble_simo(
    family: PacketFamily,
    grid: GridSpec,
    mask: DomainMask,
    times: Sequence[float],
    rescale: str = "normalized",
    lam: float = 1.0,
    granularity: str = "sample",
    seed: int = 0,
) -> Dataset:
    return _assemble(family, grid, mask, times, "SIMO", rescale, lam, granularity, seed)


def assemble_time_conditioned(
    family: PacketFamily,
    grid: GridSpec,
    mask: DomainMask,
    times: Sequence[float],
    rescale: str = "normalized",
    lam: float = 1.0,
    granularity: str = "sample",
    seed: int = 0,
) -> Dataset:
    """SISO rows ``[scaled U0 || t] -> U(t)``, one per (sample, time), sample-major.

    The network can then be queried at times outside the training window.
    """
    simo = assemble_simo(family, grid, mask, times, rescale, lam, granularity, seed)
    p = len(simo.meta["times"])
    width = simo.outputs.shape[1] // p
    ins, outs = [], []
    for row_in, row_out in zip(simo.inputs, simo.outputs):
        for i, t in enumerate(simo.meta["times"]):
            ins.append(np.append(row_in, t))
            outs.append(row_out[i * width : (i + 1) * width])
    mins = np.repeat(simo.rescale.mins, p) if simo.rescale.granularity == "sample" else simo.rescale.mins
    maxs = np.repeat(simo.rescale.maxs, p) if simo.rescale.granularity == "sample" else simo.rescale.maxs
    record = RescaleRecord(simo.rescale.mode, simo.rescale.lam, simo.rescale.granularity, mins, maxs)
    meta = dict(simo.meta, kind="SISO", time_input=True)
    return Dataset("SISO", np.array(ins), np.array(outs), meta, record)


def assemble_ximo(
    potentials: Sequence[Potential],
    initial: FieldPair,
    grid: GridSpec,
    mask: DomainMask,
    times: Sequence[float],
    model: NlsModel = NlsModel(),
    dt: float = 1e-3,
    expansion: int = 2,
    rescale: str = "none",
    lam: float = 1.0,
    seed: int = 0,
) -> Dataset:
    """Potential samples ``V(x, t_i)`` in, solution snapshots out, shared initial state."""
    times = _check_times(times)
    if not potentials:
        raise ValueError("need at least one potential sample")
    raw_in, outs = [], []
    for idx, pot in enumerate(potentials):
        spatial = pot.spatial(grid)
        raw_in.append(np.concatenate([flatten_masked(pot.modulation(t) * spatial, mask) for t in times]))
        sample_model = NlsModel(model.beta, model.mu, pot)
        try:
            snaps = solve_sample(initial, grid, times, sample_model, "spectral", dt, expansion)
        except Exception as exc:
            raise RuntimeError(f"sample {idx} failed: {exc}") from exc
        outs.append(np.concatenate([s.masked_row(mask) for s in snaps]))
    inputs, record = rescale_rows(np.array(raw_in), rescale, lam)
    meta = _base_meta("XIMO", grid, mask, times, SCHRODINGER)
    meta["layout"]["input"] = "V(t_1)|...|V(t_p)"
    meta["potentials"] = [p.to_dict() for p in potentials]
    meta["model"] = model.to_dict()
    meta["provenance"] = {"source": "spectral", "seed": seed}
    return Dataset("XIMO", inputs, np.array(outs), meta, record)
