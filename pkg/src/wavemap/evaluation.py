"""Error metrics, experiment evaluation and diagnostics."""

from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import ndimage

from .analytic import (
    SCHRODINGER,
    WAVE,
    NamedCondition,
    WavePacketSpec,
    condition_packet,
    named_initial,
    named_wave_solution,
    schrodinger_linear_evolved,
    wave_packet_evolved,
)
from .datasets import (
    Dataset,
    PacketFamily,
    assemble_simo,
    assemble_siso,
    assemble_time_conditioned,
    initial_fields,
)
from .grid import DomainMask, FieldPair, GridSpec, TimeGrid, flatten_masked, parse_mask
from .network import Architecture, NetworkParams, forward, he_init
from .solvers import LINEAR, NlsModel, SolverRun, reference_on_larger_domain, solve_nls
from .training import TrainConfig, TrainResult, train

log = logging.getLogger(__name__)

CSV_COLUMNS = (
    "experiment_id", "equation", "activation", "sigma_set", "k_set", "lambda", "seed",
    "test_condition", "snapshot_time", "err_u_or_p", "err_q", "err_rho", "wall_seconds",
    "mass_pred", "mass_ref", "mass_gap", "reflection",
)


def relative_error(prediction: np.ndarray, reference: np.ndarray) -> float:
    """``‖pred - ref‖₂ / ‖ref‖₂`` over the given points."""
    prediction = np.asarray(prediction, dtype=float).ravel()
    reference = np.asarray(reference, dtype=float).ravel()
    if prediction.shape != reference.shape:
        raise ValueError(f"length mismatch: {prediction.size} vs {reference.size}")
    norm = np.linalg.norm(reference)
    if norm == 0:
        raise ValueError("reference has zero norm")
    return float(np.linalg.norm(prediction - reference) / norm)


def component_errors(prediction: np.ndarray, reference: np.ndarray, equation: str) -> dict[str, float]:
    """Per-component errors of one snapshot block.

    Schrödinger blocks are ``[p || q]``; the density error compares
    ``p² + q²`` built from the predicted parts.
    """
    if equation == WAVE:
        return {"u": relative_error(prediction, reference)}
    n = len(reference) // 2
    p, q = prediction[:n], prediction[n:]
    rp, rq = reference[:n], reference[n:]
    return {
        "p": relative_error(p, rp),
        "q": relative_error(q, rq),
        "rho": relative_error(p * p + q * q, rp * rp + rq * rq),
    }


def primary_component(equation: str) -> str:
    return "u" if equation == WAVE else "rho"


@dataclass
class ErrorReport:
    experiment_id: str
    equation: str
    activation: str
    sigma_set: str
    k_set: str
    lam: float
    seed: int | str
    test_condition: str
    snapshot_time: float
    errors: dict[str, float]
    architecture: dict = field(default_factory=dict)
    wall_seconds: float | None = None
    diagnostics: dict[str, float] | None = None

    @property
    def primary(self) -> float:
        return self.errors[primary_component(self.equation)]

    def csv_row(self) -> list[str]:
        e = self.errors
        first = e["u"] if self.equation == WAVE else e["p"]
        d = self.diagnostics or {}

        def num(v):
            return "" if v is None else repr(float(v))

        return [
            self.experiment_id, self.equation, self.activation, self.sigma_set, self.k_set,
            num(self.lam), str(self.seed), self.test_condition, num(self.snapshot_time),
            num(first), num(e.get("q")), num(e.get("rho")), num(self.wall_seconds),
            num(d.get("mass_pred")), num(d.get("mass_ref")), num(d.get("mass_gap")), num(d.get("reflection")),
        ]


def reports_csv(reports: Sequence[ErrorReport]) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in reports:
        w.writerow(r.csv_row())
    return buf.getvalue().encode("utf-8")


def write_reports(path: str | Path, reports: Sequence[ErrorReport]) -> bytes:
    blob = reports_csv(reports)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(blob)
    return blob


def median_over_seeds(reports: Sequence[ErrorReport]) -> list[ErrorReport]:
    """One report per (experiment, activation, test, time) holding the median errors."""
    groups: dict[tuple, list[ErrorReport]] = {}
    for r in reports:
        if r.seed == "median":
            continue
        key = (r.experiment_id, r.activation, r.sigma_set, r.test_condition, r.snapshot_time)
        groups.setdefault(key, []).append(r)
    out = []
    for members in groups.values():
        head = members[0]
        errors = {k: float(np.median([m.errors[k] for m in members])) for k in head.errors}
        diag = None
        if head.diagnostics is not None:
            diag = {k: float(np.median([m.diagnostics[k] for m in members])) for k in head.diagnostics}
        out.append(replace(head, seed="median", errors=errors, wall_seconds=None, diagnostics=diag))
    return out


def non_decreasing(values: Sequence[float]) -> bool:
    return all(b >= a for a, b in zip(values, values[1:]))


# ---------------------------------------------------------------- conventions


class ConventionError(RuntimeError):
    pass


@dataclass
class ConventionCheck:
    convention: str | None
    errors: dict[str, float]
    tolerance: float

    @property
    def matches(self) -> list[str]:
        return [k for k, v in self.errors.items() if v < self.tolerance]


def default_check_grid(dim: int) -> GridSpec:
    if dim == 1:
        return GridSpec.box(-32.0, 32.0, 1024, periodic=True)
    return GridSpec.box(-16.0, 16.0, 256, dim=dim, periodic=True)


def cross_validate_analytic(
    packet: WavePacketSpec, T: float, grid: GridSpec | None = None, tolerance: float = 1e-6
) -> ConventionCheck:
    """Decide which Laplacian scaling the printed closed-form kernel solves.

    The kernel is compared with a spectral solution of ``i u_t = -Δu`` and of
    ``i u_t = -½Δu`` (the latter is the former run to ``T/2``).  Both match
    at ``T = 0``; neither matching is an error.
    """
    if packet.equation != SCHRODINGER:
        raise ValueError("convention check applies to the Schrödinger family")
    grid = grid or default_check_grid(len(packet.k))
    analytic = schrodinger_linear_evolved(packet, grid, T, "printed").to_complex()
    init = initial_fields(packet, grid)
    errors = {}
    for name, duration in (("minus_laplacian", T), ("half_laplacian", T / 2)):
        if duration == 0:
            spectral = init.to_complex()
        else:
            run = SolverRun(grid, TimeGrid(0.0, duration, 1), init, LINEAR)
            spectral = solve_nls(run)[0].to_complex()
        diff = np.linalg.norm(analytic - spectral) / np.linalg.norm(spectral)
        errors[name] = float(diff)
    check = ConventionCheck(None, errors, tolerance)
    if not check.matches:
        raise ConventionError(f"no Laplacian convention reproduces the closed form: {errors}")
    if len(check.matches) == 1:
        check.convention = check.matches[0]
    return check


# ---------------------------------------------------------------- absorbing


def boundary_shell(grid: GridSpec, mask: DomainMask, width: float = 0.1) -> np.ndarray:
    """Masked points lying within ``width`` (fraction of each axis extent) of the domain edge.

    Distances are measured to the nearest grid point outside the domain, with
    the box surrounded by a ring of outside points.
    """
    if not 0 < width < 0.5:
        raise ValueError("shell width must be in (0, 0.5)")
    inside = np.pad(mask.flags.reshape(grid.shape), 1, constant_values=False)
    sampling = [h / L for h, L in zip(grid.spacing, grid.lengths)]
    dist = ndimage.distance_transform_edt(inside, sampling=sampling)
    core = tuple(slice(1, -1) for _ in grid.shape)
    shell = dist[core] <= width + 1e-12
    return shell.ravel()[mask.flags.ravel()]


def absorbing_diagnostic(
    predicted: Sequence[np.ndarray],
    reference: Sequence[np.ndarray],
    grid: GridSpec,
    mask: DomainMask,
    shell_width: float = 0.1,
) -> list[dict[str, float]]:
    """Mass bookkeeping and a reflection indicator per snapshot.

    Rows are masked ``[p || q]`` blocks.  The reflection indicator is the
    error norm on the boundary shell divided by the full reference norm, so
    it stays finite once the reference has left the shell.
    """
    shell = boundary_shell(grid, mask, shell_width)
    sel = np.concatenate([shell, shell])
    out = []
    for pred, ref in zip(predicted, reference):
        pred = np.asarray(pred, dtype=float)
        ref = np.asarray(ref, dtype=float)
        m_pred = float(np.sum(pred * pred) * grid.cell_volume)
        m_ref = float(np.sum(ref * ref) * grid.cell_volume)
        if m_ref == 0:
            gap = 0.0 if m_pred == 0 else float("inf")
        else:
            gap = abs(m_pred - m_ref) / m_ref
        norm = np.linalg.norm(ref)
        err = np.linalg.norm((pred - ref)[sel])
        reflection = 0.0 if err == 0 else (float(err / norm) if norm > 0 else float("inf"))
        out.append({"mass_pred": m_pred, "mass_ref": m_ref, "mass_gap": gap, "reflection": reflection})
    return out


# ---------------------------------------------------------------- experiments


@dataclass(frozen=True)
class TestCase:
    """A test input: a named condition (optionally with ``k̃``) or a packet."""

    name: str
    condition: str | None = None
    k_tilde: float | None = None
    packet: WavePacketSpec | None = None
    times: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if (self.condition is None) == (self.packet is None):
            raise ValueError("test case needs exactly one of condition or packet")

    def initial(self, grid: GridSpec) -> FieldPair:
        if self.packet is not None:
            return initial_fields(self.packet, grid)
        return named_initial(self.condition, grid, self.k_tilde)


@dataclass
class ExperimentSpec:
    id: str
    equation: str
    grid: GridSpec
    family: PacketFamily
    times: tuple[float, ...]
    tests: tuple[TestCase, ...]
    mask: str = "full"
    kind: str = "siso"  # siso | simo | time
    lam: float = 1.0
    rescale: str = "normalized"
    granularity: str = "dataset"
    arch: dict = field(default_factory=lambda: {"kind": "fcnn", "depth": 5, "width": 100, "blocks": []})
    activation: str = "tanh"
    sigma_label: str = ""
    k_label: str = ""
    train: TrainConfig = field(default_factory=TrainConfig)
    seeds: tuple[int, ...] = (0,)
    reference: str = "analytic"  # analytic | spectral | cnfd
    reference_dt: float = 1e-3
    expansion: int = 2
    shell_width: float = 0.1

    def __post_init__(self) -> None:
        if self.kind not in ("siso", "simo", "time"):
            raise ValueError(f"unknown dataset kind {self.kind!r}")
        if self.reference not in ("analytic", "spectral", "cnfd"):
            raise ValueError(f"unknown reference source {self.reference!r}")
        if self.kind == "siso" and len(self.times) != 1:
            raise ValueError("single-output experiments have exactly one time")

    @property
    def model(self) -> NlsModel:
        return self.family.model

    def mask_for(self) -> DomainMask:
        return parse_mask(self.mask, self.grid)

    def architecture(self, m_in: int, m_out: int) -> Architecture:
        a = self.arch
        return Architecture(a["kind"], m_in, m_out, a.get("width", 100), a.get("depth", 5), tuple(a.get("blocks", ())))

    def test_times(self, test: TestCase) -> tuple[float, ...]:
        return test.times or self.times

    def to_dict(self) -> dict:
        return {
            "id": self.id, "equation": self.equation, "grid": self.grid.to_dict(), "mask": self.mask,
            "family": self.family.to_dict(), "times": list(self.times), "kind": self.kind,
            "lambda": self.lam, "rescale": self.rescale, "granularity": self.granularity,
            "arch": self.arch, "activation": self.activation, "train": self.train.to_dict(),
            "seeds": list(self.seeds), "reference": self.reference, "reference_dt": self.reference_dt,
            "expansion": self.expansion,
            "tests": [
                {"name": t.name, "condition": t.condition, "k_tilde": t.k_tilde,
                 "packet": None if t.packet is None else [list(t.packet.k), t.packet.sigma2],
                 "times": list(t.times)}
                for t in self.tests
            ],
        }


def build_dataset(spec: ExperimentSpec) -> Dataset:
    mask = spec.mask_for()
    args = (spec.family, spec.grid, mask)
    kw = dict(rescale=spec.rescale, lam=spec.lam, granularity=spec.granularity)
    if spec.kind == "siso":
        return assemble_siso(*args, spec.times[0], **kw)
    if spec.kind == "simo":
        return assemble_simo(*args, spec.times, **kw)
    return assemble_time_conditioned(*args, spec.times, **kw)


def reference_blocks(spec: ExperimentSpec, test: TestCase, times: Sequence[float]) -> list[np.ndarray]:
    """Masked reference rows of a test at each time."""
    mask = spec.mask_for()
    grid = spec.grid
    if spec.equation == WAVE:
        if test.packet is not None:
            return [flatten_masked(wave_packet_evolved(test.packet, grid, t), mask) for t in times]
        return [flatten_masked(named_wave_solution(test.condition, grid, t, test.k_tilde), mask) for t in times]
    packet = test.packet
    if packet is None and test.condition is not None:
        packet = condition_packet(NamedCondition(test.condition), test.k_tilde)
    linear = spec.model.beta == 0 and spec.model.potential is None
    if spec.reference == "analytic":
        if not linear or packet is None:
            raise ValueError(f"no analytic reference for test {test.name!r}")
        return [schrodinger_linear_evolved(packet, grid, t, spec.family.analytic_form).masked_row(mask) for t in times]
    init = test.initial(grid)
    rows: dict[float, np.ndarray] = {}
    positive = sorted({float(t) for t in times if t > 0})
    if positive:
        steps = max(1, int(round(max(positive) / spec.reference_dt)))
        run = SolverRun(grid, TimeGrid(0.0, max(positive), steps), init, spec.model, tuple(positive))
        snaps = reference_on_larger_domain(run, spec.expansion, spec.reference)
        rows.update({t: s.masked_row(mask) for t, s in zip(positive, snaps)})
    return [rows[float(t)] if t > 0 else init.masked_row(mask) for t in times]


def predict_blocks(params: NetworkParams, dataset: Dataset, raw: np.ndarray, times: Sequence[float]) -> list[np.ndarray]:
    """Network prediction split into one block per requested time."""
    if dataset.time_input:
        return [forward(params, dataset.prepare_input(raw, t)) for t in times]
    out = forward(params, dataset.prepare_input(raw))
    trained = [float(t) for t in dataset.meta["times"]]
    width = out.shape[0] // len(trained)
    blocks = []
    for t in times:
        matches = [i for i, s in enumerate(trained) if abs(s - t) <= 1e-12 * max(1.0, abs(t))]
        if not matches:
            raise ValueError(f"time {t} is not an output snapshot of this network")
        i = matches[0]
        blocks.append(out[i * width : (i + 1) * width])
    return blocks


@dataclass
class EvaluationResult:
    spec: ExperimentSpec
    dataset: Dataset
    reports: list[ErrorReport]
    models: dict[int, NetworkParams]
    training: dict[int, TrainResult] = field(default_factory=dict)
    fields: dict[tuple, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)

    @property
    def medians(self) -> list[ErrorReport]:
        return median_over_seeds(self.reports)

    def median(self, test: str, time: float | None = None, component: str | None = None) -> float:
        for r in self.medians:
            if r.test_condition == test and (time is None or abs(r.snapshot_time - time) < 1e-12):
                return r.errors[component or primary_component(r.equation)]
        raise KeyError(f"no report for {test!r} at {time}")


def train_model(spec: ExperimentSpec, dataset: Dataset, seed: int) -> TrainResult:
    arch = spec.architecture(dataset.inputs.shape[1], dataset.outputs.shape[1])
    init = he_init(arch, spec.activation, seed)
    return train(replace(spec.train, seed=seed), dataset.inputs, dataset.outputs, init)


def evaluate_experiment(
    spec: ExperimentSpec,
    dataset: Dataset | None = None,
    models: dict[int, NetworkParams] | None = None,
    timing: bool = False,
) -> EvaluationResult:
    """Train (or take given models) for every seed and score all test cases.

    Reports come per seed and then as medians when there are several seeds.
    ``timing`` fills the wall-clock column, which makes the CSV
    non-reproducible byte for byte.
    """
    dataset = dataset if dataset is not None else build_dataset(spec)
    mask = spec.mask_for()
    models = dict(models or {})
    training: dict[int, TrainResult] = {}
    refs = {t.name: reference_blocks(spec, t, spec.test_times(t)) for t in spec.tests}
    reports: list[ErrorReport] = []
    fields: dict[tuple, tuple[np.ndarray, np.ndarray]] = {}
    for seed in spec.seeds:
        start = time.perf_counter()
        if seed not in models:
            training[seed] = train_model(spec, dataset, seed)
            models[seed] = training[seed].params
            log.info("%s seed %d trained, loss %.3e", spec.id, seed, training[seed].final_loss)
        elapsed = time.perf_counter() - start
        for test in spec.tests:
            times = spec.test_times(test)
            preds = predict_blocks(models[seed], dataset, test.initial(spec.grid).masked_row(mask), times)
            diags = None
            if spec.equation == SCHRODINGER and (spec.reference != "analytic" or spec.kind == "simo"):
                diags = absorbing_diagnostic(preds, refs[test.name], spec.grid, mask, spec.shell_width)
            for i, (t, pred, ref) in enumerate(zip(times, preds, refs[test.name])):
                fields[(seed, test.name, float(t))] = (pred, ref)
                reports.append(
                    ErrorReport(
                        spec.id, spec.equation, spec.activation, spec.sigma_label, spec.k_label, spec.lam,
                        seed, test.name, float(t), component_errors(pred, ref, spec.equation),
                        dict(spec.arch), elapsed if timing else None, None if diags is None else diags[i],
                    )
                )
    if len(spec.seeds) > 1:
        reports += median_over_seeds(reports)
    return EvaluationResult(spec, dataset, reports, models, training, fields)


@dataclass
class SweepResult:
    axis: str
    values: tuple[float, ...]
    medians: list[float]
    monotone: bool
    evaluation: EvaluationResult


def extrapolation_sweep(
    spec: ExperimentSpec,
    axis: str,
    values: Sequence[float],
    condition: str | None = None,
    base: WavePacketSpec | None = None,
    dataset: Dataset | None = None,
    models: dict[int, NetworkParams] | None = None,
) -> SweepResult:
    """Errors along a sweep of ``k̃``, test time or packet width.

    ``condition`` names the ``k̃``-parameterised test for the wave-number
    axis (or the fixed test for the time axis); ``base`` is the packet whose
    width is varied on the width axis.
    """
    values = tuple(float(v) for v in values)
    if axis == "wavenumber":
        if condition is None:
            raise ValueError("wave-number sweep needs a k̃-parameterised condition")
        tests = tuple(TestCase(f"{condition}@{v:g}", condition=condition, k_tilde=v) for v in values)
    elif axis == "time":
        if condition is None:
            raise ValueError("time sweep needs a test condition")
        if spec.kind == "siso" or (spec.kind == "simo" and not set(values) <= set(spec.times)):
            raise ValueError("time sweep beyond the snapshots needs a time-conditioned network")
        tests = (TestCase(condition, condition=condition, times=values),)
    elif axis == "width":
        if base is None:
            raise ValueError("width sweep needs a base packet")
        tests = tuple(
            TestCase(f"sigma2={v:g}", packet=WavePacketSpec(base.k, v, base.equation)) for v in values
        )
    else:
        raise ValueError(f"unknown sweep axis {axis!r}")
    result = evaluate_experiment(replace(spec, tests=tests), dataset, models)
    comp = primary_component(spec.equation)
    medians = []
    for test in tests:
        for t in spec.test_times(test):
            per_seed = [r.errors[comp] for r in result.reports
                        if r.seed != "median" and r.test_condition == test.name and r.snapshot_time == t]
            medians.append(float(np.median(per_seed)))
    return SweepResult(axis, values, medians, non_decreasing(medians), result)
