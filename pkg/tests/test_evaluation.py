import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from wavemap.analytic import SCHRODINGER, WAVE, WavePacketSpec, schrodinger_linear_evolved, schrodinger_packet_initial
from wavemap.datasets import PacketFamily, wave_number_set
from wavemap.evaluation import (
    CSV_COLUMNS,
    ConventionError,
    ErrorReport,
    ExperimentSpec,
    TestCase as Case,
    absorbing_diagnostic,
    boundary_shell,
    build_dataset,
    component_errors,
    cross_validate_analytic,
    evaluate_experiment,
    extrapolation_sweep,
    median_over_seeds,
    non_decreasing,
    relative_error,
    reports_csv,
)
from wavemap.grid import GridSpec, TimeGrid, build_grid, parse_mask
from wavemap.network import he_init
from wavemap.solvers import LINEAR, NlsModel, SolverRun, reference_on_larger_domain, solve_nls
from wavemap.training import TrainConfig, loss


def test_relative_error_examples():
    ref = np.array([3.0, 4.0, 0.0])
    assert relative_error(ref, ref) == 0
    assert relative_error(1.1 * ref, ref) == pytest.approx(0.1, rel=1e-14)
    bumped = ref.copy()
    bumped[0] += np.linalg.norm(ref)
    assert relative_error(bumped, ref) == pytest.approx(1.0, rel=1e-15)
    with pytest.raises(ValueError, match="zero norm"):
        relative_error(ref, np.zeros(3))
    with pytest.raises(ValueError):
        relative_error(ref, ref[:2])


@given(seed=st.integers(0, 10**6), c=st.floats(-100, 100))
def test_relative_error_is_homogeneous_in_the_perturbation(seed, c):
    rng = np.random.default_rng(seed)
    ref, delta = rng.normal(size=20), rng.normal(size=20)
    assert relative_error(ref + c * delta, ref) == pytest.approx(abs(c) * relative_error(ref + delta, ref), rel=1e-12, abs=1e-15)


def test_density_error_uses_predicted_parts():
    ref = np.array([1.0, 0.0, 0.0, 1.0])  # p = (1, 0), q = (0, 1)
    pred = np.array([1.0, 0.0, 0.0, -1.0])  # q flips sign, density unchanged
    e = component_errors(pred, ref, SCHRODINGER)
    assert e["rho"] == 0 and e["p"] == 0 and e["q"] == 2
    assert component_errors(ref[:2], ref[:2], WAVE) == {"u": 0.0}


def report(seed, err, test="t", time=1.0):
    return ErrorReport("x", WAVE, "tanh", "L", "1:10", 0.0625, seed, test, time, {"u": err})


def test_median_over_seeds_and_csv():
    reps = [report(0, 3.0), report(1, 1.0), report(2, 2.0), report(0, 5.0, time=2.0)]
    med = median_over_seeds(reps)
    assert [(m.seed, m.snapshot_time, m.errors["u"]) for m in med] == [("median", 1.0, 2.0), ("median", 2.0, 5.0)]
    lines = reports_csv(reps).decode().splitlines()
    assert lines[0].split(",") == list(CSV_COLUMNS)
    assert lines[1].split(",")[9] == "3.0" and lines[1].split(",")[12] == ""
    assert non_decreasing([1, 1, 2]) and not non_decreasing([2, 1])


def test_convention_check_picks_one_at_positive_time():
    check = cross_validate_analytic(WavePacketSpec((6.0,), 1.0, SCHRODINGER), 0.2)
    assert check.convention is not None
    assert len(check.matches) == 1
    assert check.convention == "minus_laplacian"


def test_convention_check_is_ambiguous_at_zero_time():
    check = cross_validate_analytic(WavePacketSpec((6.0,), 1.0, SCHRODINGER), 0.0)
    assert max(check.errors.values()) < 1e-14
    assert sorted(check.matches) == ["half_laplacian", "minus_laplacian"]
    assert check.convention is None


def test_convention_check_fails_when_nothing_matches():
    # the printed kernel is not a solution for non-unit widths
    with pytest.raises(ConventionError):
        cross_validate_analytic(WavePacketSpec((6.0,), 0.5, SCHRODINGER), 0.2)
    with pytest.raises(ValueError):
        cross_validate_analytic(WavePacketSpec((6.0,), 1.0, WAVE), 0.2)


def test_packet_centre_moves_like_the_spectral_centre_of_mass():
    g = GridSpec.box(-32, 32, 1024, periodic=True)
    p = WavePacketSpec((6.0,), 1.0, SCHRODINGER)
    (x,) = build_grid(g)
    analytic = np.abs(schrodinger_linear_evolved(p, g, 0.2).to_complex())
    spectral = solve_nls(SolverRun(g, TimeGrid(0, 0.2, 1), schrodinger_packet_initial(p, g), LINEAR))[0]
    rho = spectral.first**2 + spectral.second**2
    centre = np.sum(x * rho) / np.sum(rho)
    assert abs(x[np.argmax(analytic)] - centre) < g.spacing[0]


def test_boundary_shell():
    g = GridSpec.box(0, 1, 11, dim=2)
    shell = boundary_shell(g, parse_mask("full", g), 0.1).reshape(11, 11)
    assert shell[0].all() and shell[:, -1].all() and not shell[1:-1, 1:-1].any()
    lshape = parse_mask("lshape", g)
    inner = boundary_shell(g, lshape, 0.1)
    assert inner.shape == (lshape.count,)
    with pytest.raises(ValueError):
        boundary_shell(g, parse_mask("full", g), 0.6)


def test_absorbing_diagnostic_zero_and_perfect():
    g = GridSpec.box(-1, 1, 8, periodic=True)
    m = parse_mask("full", g)
    zero = np.zeros(16)
    (d,) = absorbing_diagnostic([zero], [zero], g, m)
    assert d == {"mass_pred": 0.0, "mass_ref": 0.0, "mass_gap": 0.0, "reflection": 0.0}
    ref = np.arange(16.0)
    (d,) = absorbing_diagnostic([ref], [ref], g, m)
    assert d["mass_gap"] == 0 and d["reflection"] == 0


def test_reference_mass_leaves_the_domain():
    g = GridSpec.box(-2 * np.pi, 2 * np.pi, 48, dim=2, periodic=True)
    m = parse_mask("full", g)
    from wavemap.analytic import named_initial

    init = named_initial("nls-2d", g)
    early, late = reference_on_larger_domain(SolverRun(g, TimeGrid(0, 1.5, 150), init, NlsModel(), (0.05, 1.5)), 2)
    d0, d1 = absorbing_diagnostic([early.masked_row(m), late.masked_row(m)], [early.masked_row(m), late.masked_row(m)], g, m)
    m_init = np.sum(init.first**2 + init.second**2) * g.cell_volume
    assert d0["mass_ref"] / m_init == pytest.approx(1, abs=0.02)
    assert d1["mass_ref"] < 0.2 * m_init


def tiny_wave_spec(**kw):
    g = GridSpec.box(-8, 8, 41)
    fam = PacketFamily(wave_number_set("1:4"), (0.8, 1.2), WAVE)
    base = dict(id="tiny", equation=WAVE, grid=g, family=fam, times=(1.0,),
                tests=(Case("wave-i", condition="wave-i"),), lam=0.0625,
                arch={"kind": "fcnn", "depth": 3, "width": 16, "blocks": []},
                train=TrainConfig(epochs=200, lr=3e-3), seeds=(0, 1, 2))
    base.update(kw)
    return ExperimentSpec(**base)


def test_evaluation_is_reproducible_and_reports_medians():
    spec = tiny_wave_spec()
    a = evaluate_experiment(spec)
    b = evaluate_experiment(spec)
    assert reports_csv(a.reports) == reports_csv(b.reports)
    per_seed = sorted(r.errors["u"] for r in a.reports if r.seed != "median")
    assert len(per_seed) == 3
    assert a.median("wave-i") == per_seed[1]


def test_untrained_zero_network_scores_one():
    spec = tiny_wave_spec(seeds=(0,))
    ds = build_dataset(spec)
    p = he_init(spec.architecture(ds.inputs.shape[1], ds.outputs.shape[1]), "tanh", 0)
    for w in p.weights:
        w[:] = 0
    res = evaluate_experiment(spec, dataset=ds, models={0: p})
    assert res.median("wave-i") == pytest.approx(1.0)


def test_error_on_a_training_sample_is_bounded_by_training_error():
    spec = tiny_wave_spec(seeds=(0,), tests=(Case("member", packet=WavePacketSpec((2.0,), 0.8)),))
    res = evaluate_experiment(spec)
    ds = res.dataset
    row = 2  # k = 2, sigma2 = 0.8 in k-major order
    params = res.models[0]
    sample_loss = loss(params, ds.inputs[row : row + 1], ds.outputs[row : row + 1])
    assert res.median("member") == pytest.approx(np.sqrt(sample_loss) / np.linalg.norm(ds.outputs[row]), rel=1e-9)


def test_timing_column_only_when_requested():
    spec = tiny_wave_spec(seeds=(0,), train=TrainConfig(epochs=5))
    plain = evaluate_experiment(spec)
    timed = evaluate_experiment(spec, timing=True)
    assert all(r.wall_seconds is None for r in plain.reports)
    assert all(r.wall_seconds is not None for r in timed.reports)


def test_schrodinger_evaluation_adds_diagnostics_for_numerical_references():
    g = GridSpec.box(-8, 8, 64, periodic=True)
    fam = PacketFamily(wave_number_set("1:2"), (1.0,), SCHRODINGER, "spectral", NlsModel(), 1e-2, 2)
    spec = ExperimentSpec("nls", SCHRODINGER, g, fam, (0.5,), (Case("nls-sech", condition="nls-sech"),),
                          arch={"kind": "fcnn", "depth": 3, "width": 8, "blocks": []},
                          train=TrainConfig(epochs=3), reference="spectral", reference_dt=1e-2)
    (rep,) = evaluate_experiment(spec).reports
    assert set(rep.errors) == {"p", "q", "rho"}
    assert set(rep.diagnostics) == {"mass_pred", "mass_ref", "mass_gap", "reflection"}
    assert all(cell != "" for cell in rep.csv_row()[13:])


def test_wavenumber_sweep():
    spec = tiny_wave_spec(seeds=(0,))
    res = evaluate_experiment(spec)
    sweep = extrapolation_sweep(spec, "wavenumber", [4.0, 4.5], condition="wave-iv", dataset=res.dataset, models=res.models)
    assert len(sweep.medians) == 2 and isinstance(sweep.monotone, bool)
    assert sweep.monotone == (sweep.medians[1] >= sweep.medians[0])
    with pytest.raises(ValueError):
        extrapolation_sweep(spec, "time", [2.0], condition="wave-i", dataset=res.dataset, models=res.models)
    with pytest.raises(ValueError):
        extrapolation_sweep(spec, "colour", [1.0])


def test_spec_validation():
    with pytest.raises(ValueError):
        tiny_wave_spec(kind="weird")
    with pytest.raises(ValueError):
        tiny_wave_spec(times=(1.0, 2.0))
    with pytest.raises(ValueError):
        tiny_wave_spec(reference="fdtd")
    with pytest.raises(ValueError):
        Case("both", condition="wave-i", packet=WavePacketSpec((1.0,), 1.0))
