"""Named experiment recipes, their acceptance gates and a runner that writes artifacts.

Two scales are offered.  ``desk`` shrinks 2D grids to 48² and their
training to 5000 epochs (and the 1D cubic runs to 1024 points) so the
whole set runs on one laptop core; ``full`` uses the original sizes.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import containers
from .analytic import SCHRODINGER, WAVE, WavePacketSpec, sigma_set
from .datasets import PacketFamily, wave_number_set
from .evaluation import (
    EvaluationResult,
    ExperimentSpec,
    TestCase,
    evaluate_experiment,
    median_over_seeds,
    non_decreasing,
    reports_csv,
)
from .grid import GridSpec, flatten_masked, scatter
from .solvers import NlsModel, Potential
from .training import TrainConfig, write_loss_csv

log = logging.getLogger(__name__)

SCALES = ("desk", "full")
EXPERIMENT_IDS = (
    "ex1-wave-1d", "ex2-wave-highd", "ex3-schr-linear", "ex3-schr-simo", "ex3-extrap-k",
    "ex3-extrap-t", "ex4-nls-1d", "ex5-mu-sweep-cnfd", "ex6-nls-potential", "ex7-nls-2d",
    "ex8-disk", "ex8-lshape",
)


@dataclass
class GateOutcome:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{self.name}: {'PASS' if self.passed else 'FAIL'} ({self.detail})"


@dataclass
class Gate:
    name: str
    check: Callable[[dict[str, EvaluationResult]], GateOutcome]


@dataclass
class Recipe:
    id: str
    scale: str
    specs: list[ExperimentSpec]
    gates: list[Gate] = field(default_factory=list)

    def spec(self, spec_id: str) -> ExperimentSpec:
        for s in self.specs:
            if s.id == spec_id:
                return s
        raise KeyError(spec_id)


# ---------------------------------------------------------------- gate helpers


def _fmt(x: float) -> str:
    return f"{x:.3e}"


def _threshold_gate(name: str, spec_id: str, test: str, limit: float, time: float | None = None,
                    components: Sequence[str] | None = None) -> Gate:
    def check(results):
        res = results[spec_id]
        comps = components or [None]
        values = {c or "primary": res.median(test, time, c) for c in comps}
        ok = all(v <= limit for v in values.values())
        detail = ", ".join(f"{k}={_fmt(v)}" for k, v in values.items()) + f" vs <= {limit:g}"
        return GateOutcome(name, ok, f"{test}: {detail}")

    return Gate(name, check)


def _sweep_gate(name: str, spec_id: str, tests: Sequence[tuple[str, float | None]], limits: Sequence[float]) -> Gate:
    def check(results):
        res = results[spec_id]
        values = [res.median(t, time) for t, time in tests]
        ok_limits = all(v <= lim for v, lim in zip(values, limits))
        growth = non_decreasing(values)
        parts = [f"{t}{'' if time is None else f'@{time:g}'}={_fmt(v)} (<= {lim:g})"
                 for (t, time), v, lim in zip(tests, values, limits)]
        return GateOutcome(name, ok_limits and growth, "; ".join(parts) + f"; growth={'yes' if growth else 'no'}")

    return Gate(name, check)


def _any_cell_gate(name: str, spec_ids: Sequence[str], test: str, limit: float) -> Gate:
    def check(results):
        present = [s for s in spec_ids if s in results]
        values = {s: results[s].median(test) for s in present}
        ok = any(v <= limit for v in values.values())
        detail = ", ".join(f"{s.split('/')[-1]}={_fmt(v)}" for s, v in values.items())
        return GateOutcome(name, ok, f"{test} rho: {detail} vs <= {limit:g} in some cell")

    return Gate(name, check)


def masked_round_trip(result: EvaluationResult) -> bool:
    """``flatten∘scatter`` and ``scatter∘flatten`` are exact on every predicted block."""
    mask = result.spec.mask_for()
    n = mask.count
    for pred, _ in result.fields.values():
        for block in (pred[:n], pred[n:]):
            full = scatter(block, mask)
            if not np.array_equal(flatten_masked(full, mask), block):
                return False
            if not np.array_equal(scatter(flatten_masked(full, mask), mask), full):
                return False
    return True


def _mask_gate(name: str, spec_id: str, test: str, limit: float) -> Gate:
    inner = _threshold_gate(name, spec_id, test, limit, components=("rho", "p", "q"))

    def check(results):
        out = inner.check(results)
        rt = masked_round_trip(results[spec_id])
        return GateOutcome(name, out.passed and rt, f"{out.detail}; round-trip={'exact' if rt else 'broken'}")

    return Gate(name, check)


# ---------------------------------------------------------------- recipes

ACTIVATIONS_ALL = ("relu", "tanh", "sigmoid", "elu")
SIGMAS_ALL = ("E:0.1", "E:0.5", "E:1", "L")
FCNN5 = {"kind": "fcnn", "depth": 5, "width": 100, "blocks": []}
FCNN4 = {"kind": "fcnn", "depth": 4, "width": 100, "blocks": []}
RESNET22 = {"kind": "resnet", "depth": 0, "width": 100, "blocks": [2, 2]}


def _line(lo: float, hi: float, n: int, periodic: bool = False) -> GridSpec:
    return GridSpec.box(lo, hi, n, 1, periodic)


def _slug(*parts: str) -> str:
    return "-".join(p.replace(":", "").replace(".", "p") for p in parts)


def _wave_1d(scale, seeds, epochs):
    grid = _line(-8.0, 8.0, 201)
    tests = (
        TestCase("wave-i", condition="wave-i"),
        TestCase("wave-ii", condition="wave-ii"),
        TestCase("wave-iii", condition="wave-iii"),
        TestCase("wave-iv@10.025", condition="wave-iv", k_tilde=10.025),
        TestCase("wave-iv@10.05", condition="wave-iv", k_tilde=10.05),
    )
    cells = [("fcnn", "tanh", "L")]
    if scale == "full":
        cells = [(net, a, s) for net in ("fcnn", "resnet") for a in ACTIVATIONS_ALL for s in SIGMAS_ALL]
    specs = []
    for net, act, sig in cells:
        sid = "ex1-wave-1d" if (net, act, sig) == ("fcnn", "tanh", "L") else f"ex1-wave-1d/{_slug(net, act, sig)}"
        specs.append(ExperimentSpec(
            id=sid, equation=WAVE, grid=grid,
            family=PacketFamily(wave_number_set("1:10"), sigma_set(sig), WAVE),
            times=(2.0,), tests=tests, lam=1 / 16, arch=FCNN5 if net == "fcnn" else RESNET22,
            activation=act, sigma_label=sig, k_label="1:10",
            train=TrainConfig(epochs=epochs or 20000), seeds=seeds,
        ))
    gates = [
        _threshold_gate("A4 wave-i error", "ex1-wave-1d", "wave-i", 1e-2),
        _sweep_gate("A5 wave-number extrapolation", "ex1-wave-1d",
                    [("wave-iv@10.025", None), ("wave-iv@10.05", None)], [5e-2, 5e-2]),
    ]
    return specs, gates


def _wave_highd(scale, seeds, epochs):
    n = 32 if scale == "desk" else 64
    dims = (3,) if scale == "desk" else tuple(range(3, 9))
    grid = GridSpec.box(-4.0, 4.0, n, dim=2)
    specs = []
    for d in dims:
        specs.append(ExperimentSpec(
            id=f"ex2-wave-highd/d{d}", equation=WAVE, grid=grid,
            family=PacketFamily(wave_number_set("1:5", dim=d), sigma_set("L"), WAVE),
            times=(0.5,), tests=(TestCase("packet-(2,2,1..)", packet=WavePacketSpec((2.0, 2.0) + (1.0,) * (d - 2), 0.5, WAVE)),),
            lam=1 / 16, arch=FCNN5, sigma_label="L", k_label="(1:5)^2x1",
            train=TrainConfig(epochs=epochs or (5000 if scale == "desk" else 40000)), seeds=seeds,
        ))
    smoke = _threshold_gate("Ex.2 high-dimensional smoke run", "ex2-wave-highd/d3", "packet-(2,2,1..)", 1e-1)
    return specs, [smoke]


def _schr_linear(scale, seeds, epochs):
    grid = _line(-8.0, 8.0, 201)
    tests = (TestCase("schr-i", condition="schr-i"), TestCase("schr-ii", condition="schr-ii"))
    acts = ("tanh", "elu") if scale == "desk" else ACTIVATIONS_ALL
    sigmas = ("E:0.5", "L") if scale == "desk" else SIGMAS_ALL
    specs = []
    for act in acts:
        for sig in sigmas:
            specs.append(ExperimentSpec(
                id=f"ex3-schr-linear/{_slug(act, sig)}", equation=SCHRODINGER, grid=grid,
                family=PacketFamily(wave_number_set("1:10"), sigma_set(sig), SCHRODINGER),
                times=(0.2,), tests=tests, lam=1 / 4, arch=FCNN5, activation=act,
                sigma_label=sig, k_label="1:10", train=TrainConfig(epochs=epochs or 20000), seeds=seeds,
            ))
    gated = [f"ex3-schr-linear/{_slug(a, s)}" for a in ("tanh", "elu") for s in ("E:0.5", "L")]
    return specs, [_any_cell_gate("A6 linear Schrödinger density", gated, "schr-i", 2e-2)]


def _schr_simo(scale, seeds, epochs):
    grid = _line(-8.0, 8.0, 201)
    times = tuple(float(t) for t in np.linspace(0.0, 3.0, 51))
    spec = ExperimentSpec(
        id="ex3-schr-simo", equation=SCHRODINGER, grid=grid,
        family=PacketFamily(wave_number_set("1:10"), sigma_set("L"), SCHRODINGER),
        times=times, tests=(TestCase("schr-i", condition="schr-i"),), kind="simo", lam=1 / 4,
        arch=FCNN5, sigma_label="L", k_label="1:10", train=TrainConfig(epochs=epochs or 20000), seeds=seeds,
    )
    return [spec], []


def _extrap_k(scale, seeds, epochs):
    grid = _line(-8.0, 8.0, 201)
    tests = tuple(TestCase(f"schr-iii@{k:g}", condition="schr-iii", k_tilde=k) for k in (6.025, 6.05))
    acts = ("tanh", "elu") if scale == "desk" else ACTIVATIONS_ALL
    specs = [
        ExperimentSpec(
            id=f"ex3-extrap-k/{act}", equation=SCHRODINGER, grid=grid,
            family=PacketFamily(wave_number_set("1:6"), sigma_set("L"), SCHRODINGER),
            times=(0.2,), tests=tests, lam=1 / 2, arch=FCNN5, activation=act, sigma_label="L",
            k_label="1:6", train=TrainConfig(epochs=epochs or 20000), seeds=seeds,
        )
        for act in acts
    ]
    return specs, []


def _extrap_t(scale, seeds, epochs):
    grid = _line(-8.0, 8.0, 201)
    spec = ExperimentSpec(
        id="ex3-extrap-t", equation=SCHRODINGER, grid=grid,
        family=PacketFamily(wave_number_set("1:6"), sigma_set("L"), SCHRODINGER),
        times=tuple(float(t) for t in np.linspace(0.0, 0.6, 11)),
        tests=(TestCase("schr-i", condition="schr-i", times=(0.625, 0.65)),), kind="time", lam=1 / 2,
        arch=FCNN5, sigma_label="L", k_label="1:6", train=TrainConfig(epochs=epochs or 20000), seeds=seeds,
    )
    gate = _sweep_gate("A7 time extrapolation", "ex3-extrap-t", [("schr-i", 0.625), ("schr-i", 0.65)], [5e-2, 1e-1])
    return [spec], [gate]


NLS_TESTS = ("nls-hat", "nls-sech", "nls-trunc-gauss", "nls-square")


def _nls_grid(scale: str) -> GridSpec:
    return _line(-16 * np.pi, 16 * np.pi, 1024 if scale == "desk" else 8192, periodic=True)


def _nls_1d(scale, seeds, epochs):
    spec = ExperimentSpec(
        id="ex4-nls-1d", equation=SCHRODINGER, grid=_nls_grid(scale),
        family=PacketFamily(wave_number_set("1:10"), sigma_set("E:0.5"), SCHRODINGER,
                            source="spectral", model=NlsModel(), dt=1e-3, expansion=2),
        times=(1.0,), tests=tuple(TestCase(c, condition=c) for c in NLS_TESTS), lam=1.0, arch=FCNN5,
        sigma_label="E:0.5", k_label="1:10", train=TrainConfig(epochs=epochs or 20000), seeds=seeds,
        reference="spectral", reference_dt=1e-3, expansion=2,
    )
    return [spec], []


def _mu_sweep(scale, seeds, epochs):
    grid = _line(-np.pi, np.pi, 50)
    sigmas = ("L",) if scale == "desk" else SIGMAS_ALL
    specs = []
    for mu in (1, 2, 3):
        for sig in sigmas:
            model = NlsModel(beta=-1.0, mu=mu)
            specs.append(ExperimentSpec(
                id=f"ex5-mu-sweep-cnfd/{_slug('mu' + str(mu), sig)}", equation=SCHRODINGER, grid=grid,
                family=PacketFamily(wave_number_set("1:5"), sigma_set(sig), SCHRODINGER,
                                    source="cnfd", model=model, dt=5e-5, expansion=1),
                times=(5e-4,), tests=(TestCase("schr-i", condition="schr-i"),), lam=1 / 4, arch=FCNN5,
                sigma_label=sig, k_label="1:5", train=TrainConfig(epochs=epochs or 20000), seeds=seeds,
                reference="cnfd", reference_dt=5e-5, expansion=1,
            ))
    return specs, []


def _nls_potential(scale, seeds, epochs):
    potentials = {
        "spatial": Potential(kind="spatial"),
        "separable": Potential(kind="separable", E0=1.0, gamma=1.0, t0=0.0, omega=1.0),
    }
    specs = []
    for name, pot in potentials.items():
        model = NlsModel(potential=pot)
        specs.append(ExperimentSpec(
            id=f"ex6-nls-potential/{name}", equation=SCHRODINGER, grid=_nls_grid(scale),
            family=PacketFamily(wave_number_set("1:10"), sigma_set("E:0.5"), SCHRODINGER,
                                source="spectral", model=model, dt=1e-3, expansion=2),
            times=(1.0, 2.0, 3.0), tests=(TestCase("nls-sech", condition="nls-sech"),), kind="simo", lam=1.0,
            arch=FCNN5, sigma_label="E:0.5", k_label="1:10", train=TrainConfig(epochs=epochs or 20000),
            seeds=seeds, reference="spectral", reference_dt=1e-3, expansion=2,
        ))
    return specs, []


def _nls_2d_spec(spec_id: str, mask: str, scale: str, seeds, epochs) -> ExperimentSpec:
    n = 48 if scale == "desk" else 64
    grid = GridSpec.box(-2 * np.pi, 2 * np.pi, n, dim=2, periodic=True)
    return ExperimentSpec(
        id=spec_id, equation=SCHRODINGER, grid=grid, mask=mask,
        family=PacketFamily(wave_number_set("1:5", dim=2), tuple(0.25 * j for j in range(1, 7)), SCHRODINGER,
                            source="spectral", model=NlsModel(), dt=1e-2, expansion=2),
        times=(1.0,), tests=(TestCase("nls-2d", condition="nls-2d"),), lam=1.0, arch=FCNN4,
        sigma_label="0.25*{1..6}", k_label="(1:5)^2",
        # 3e-3 beat 1e-3 and 1e-2 on the 48^2 desk grid
        train=TrainConfig(epochs=epochs or (5000 if scale == "desk" else 40000), lr=3e-3), seeds=seeds,
        reference="spectral", reference_dt=1e-2, expansion=2,
    )


def _nls_2d(scale, seeds, epochs):
    spec = _nls_2d_spec("ex7-nls-2d", "full", scale, seeds, epochs)
    gate = _threshold_gate("A10 2D cubic NLS", "ex7-nls-2d", "nls-2d", 5e-2, components=("rho", "p", "q"))
    return [spec], [gate]


def _disk(scale, seeds, epochs):
    spec = _nls_2d_spec("ex8-disk", f"disk:{2 * np.pi!r}", scale, seeds, epochs)
    return [spec], [_mask_gate("A11 disk domain", "ex8-disk", "nls-2d", 5e-2)]


def _lshape(scale, seeds, epochs):
    spec = _nls_2d_spec("ex8-lshape", "lshape", scale, seeds, epochs)
    return [spec], [_mask_gate("A11 L-shape domain", "ex8-lshape", "nls-2d", 5e-2)]


_BUILDERS = {
    "ex1-wave-1d": _wave_1d,
    "ex2-wave-highd": _wave_highd,
    "ex3-schr-linear": _schr_linear,
    "ex3-schr-simo": _schr_simo,
    "ex3-extrap-k": _extrap_k,
    "ex3-extrap-t": _extrap_t,
    "ex4-nls-1d": _nls_1d,
    "ex5-mu-sweep-cnfd": _mu_sweep,
    "ex6-nls-potential": _nls_potential,
    "ex7-nls-2d": _nls_2d,
    "ex8-disk": _disk,
    "ex8-lshape": _lshape,
}


def recipe(exp_id: str, scale: str = "desk", seeds: Sequence[int] = (0,), epochs: int | None = None) -> Recipe:
    """Build the recipe for an experiment id; ``epochs`` overrides every spec's training length."""
    if exp_id not in _BUILDERS:
        raise KeyError(f"unknown experiment {exp_id!r}; valid ids: {', '.join(EXPERIMENT_IDS)}")
    if scale not in SCALES:
        raise ValueError(f"unknown scale {scale!r}")
    if not seeds:
        raise ValueError("need at least one seed")
    specs, gates = _BUILDERS[exp_id](scale, tuple(int(s) for s in seeds), epochs)
    return Recipe(exp_id, scale, specs, gates)


# ---------------------------------------------------------------- running


def sha256_bytes(blob: bytes) -> str:
    return hashlib.sha256(blob).hexdigest()


@dataclass
class RecipeResult:
    recipe: Recipe
    results: dict[str, EvaluationResult]
    gates: list[GateOutcome]
    artifacts: dict[str, str] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(g.passed for g in self.gates)


def _spec_dir(root: Path, spec: ExperimentSpec) -> Path:
    return root.joinpath(*spec.id.split("/"))


def write_spec_artifacts(root: Path, res: EvaluationResult, dump_fields: bool = True) -> dict[str, str]:
    """Dataset, models, loss curves, report and field dumps; returns ``{relative path: sha256}``."""
    spec = res.spec
    out = _spec_dir(root, spec)
    out.mkdir(parents=True, exist_ok=True)
    hashes = {}

    def put(name: str, blob: bytes) -> None:
        path = out / name
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(blob)
        hashes[str(path.relative_to(root))] = sha256_bytes(blob)

    put("dataset.wpkd", res.dataset.to_bytes())
    for seed, params in sorted(res.models.items()):
        put(f"model_seed{seed}.wpkm", params.to_bytes())
        if seed in res.training:
            write_loss_csv(out / f"loss_seed{seed}.csv", res.training[seed])
            path = out / f"loss_seed{seed}.csv"
            hashes[str(path.relative_to(root))] = sha256_bytes(path.read_bytes())
    put("report.csv", reports_csv(res.reports))
    if dump_fields:
        for (seed, test, t), (pred, ref) in sorted(res.fields.items()):
            meta = {"experiment": spec.id, "seed": seed, "test": test, "time": t,
                    "grid": spec.grid.to_dict(), "mask": spec.mask, "layout": ["prediction", "reference"]}
            put(f"fields/seed{seed}_{test}_t{t:g}.wpkf", containers.pack(containers.FIELD_MAGIC, meta, [pred, ref]))
    return hashes


def run_recipe(
    rec: Recipe,
    outdir: str | Path | None = None,
    timing: bool = False,
    only: Sequence[str] | None = None,
) -> RecipeResult:
    """Evaluate every spec (or the ``only`` subset), write artifacts, check gates."""
    results: dict[str, EvaluationResult] = {}
    artifacts: dict[str, str] = {}
    root = Path(outdir) if outdir is not None else None
    for spec in rec.specs:
        if only is not None and spec.id not in only:
            continue
        log.info("running %s", spec.id)
        res = evaluate_experiment(spec, timing=timing)
        results[spec.id] = res
        if root is not None:
            artifacts.update(write_spec_artifacts(root, res))
    outcomes = []
    for gate in rec.gates:
        try:
            outcomes.append(gate.check(results))
        except KeyError as exc:
            outcomes.append(GateOutcome(gate.name, False, f"missing result {exc}"))
    if root is not None:
        summary = []
        for res in results.values():
            summary += median_over_seeds(res.reports) if len(res.spec.seeds) > 1 else res.reports
        blob = reports_csv(summary)
        (root / "summary.csv").write_bytes(blob)
        artifacts["summary.csv"] = sha256_bytes(blob)
    return RecipeResult(rec, results, outcomes, artifacts)


def recipe_config(rec: Recipe) -> dict:
    return {"id": rec.id, "scale": rec.scale, "specs": [s.to_dict() for s in rec.specs],
            "gates": [g.name for g in rec.gates]}


def canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1, default=_jsonable)


def _jsonable(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"not serialisable: {type(o)}")
