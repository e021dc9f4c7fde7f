import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import periodic_laplacian
from wavemap.analytic import (
    SCHRODINGER,
    WAVE,
    NamedCondition,
    WavePacketSpec,
    condition_packet,
    dalembert,
    dispersion,
    named_initial,
    named_wave_solution,
    schrodinger_linear_evolved,
    schrodinger_packet_initial,
    sigma_set,
    wave_condition_functions,
    wave_packet_evolved,
    wave_packet_initial,
)
from wavemap.grid import GridSpec, build_grid


def point_grid(x):
    """A 1D grid whose second point sits at ``x``."""
    return GridSpec((x - 1.0,), (x + 1.0,), (3,))


def test_packet_initial_peak():
    for k, s in [((1.0,), 0.8), ((3.0, 4.0), 2.0)]:
        g = GridSpec.box(-1, 1, 3, dim=len(k))
        u0 = wave_packet_initial(WavePacketSpec(k, s), g).first
        assert u0.reshape(-1)[u0.size // 2] == 1.0


def test_packet_initial_matches_high_precision():
    pair = wave_packet_initial(WavePacketSpec((2.0,), 0.5), point_grid(1.0))
    u0, v0 = pair.first, pair.second
    mpmath.mp.dps = 30
    expected = mpmath.exp(-1) * mpmath.cos(2)
    assert u0[1] == pytest.approx(float(expected), rel=1e-14)
    assert float(expected) == pytest.approx(-0.15310, abs=2e-5)
    assert v0[1] == pytest.approx(float(mpmath.exp(-1) * (2 * mpmath.cos(2) + 2 * mpmath.sin(2))), rel=1e-14)


def test_packet_velocity_vanishes_at_origin():
    v0 = wave_packet_initial(WavePacketSpec((3.7,), 1.1), point_grid(0.0)).second
    assert v0[1] == 0.0


def test_evolved_packet_matches_high_precision():
    u = wave_packet_evolved(WavePacketSpec((2.0,), 0.5), point_grid(1.0), 2.0)
    mpmath.mp.dps = 30
    assert u[1] == pytest.approx(float(mpmath.exp(-1) * mpmath.cos(-2)), rel=1e-14)


@given(k=st.floats(0.1, 12), s=st.floats(0.2, 4), t=st.floats(0, 3))
def test_evolved_packet_peak_travels(k, s, t):
    u = wave_packet_evolved(WavePacketSpec((k,), s), point_grid(t), t)
    assert u[1] == pytest.approx(1.0, abs=1e-12)


def test_evolved_equals_initial_at_zero():
    g = GridSpec.box(-8, 8, 201)
    p = WavePacketSpec((4.0,), 0.9)
    assert np.allclose(wave_packet_evolved(p, g, 0.0), wave_packet_initial(p, g).first, rtol=0, atol=1e-15)


def test_evolved_packet_solves_wave_equation():
    # fourth-order space/time differences; residual shrinks with the spacing
    p = WavePacketSpec((3.0,), 0.7)
    residuals = []
    for n in (60, 120):
        g = GridSpec.box(-6, 6, n, periodic=True)
        h = g.spacing[0]
        t0, tau = 0.5, h / 3  # unequal steps, so the two stencils do not cancel
        u = [wave_packet_evolved(p, g, t0 + j * tau) for j in (-2, -1, 0, 1, 2)]
        utt = (-u[0] + 16 * u[1] - 30 * u[2] + 16 * u[3] - u[4]) / (12 * tau * tau)
        uxx = periodic_laplacian(u[2], h)
        residuals.append(np.max(np.abs(utt - uxx)))
    assert residuals[1] < 1e-2
    assert residuals[1] < residuals[0] / 8


def test_negative_time_rejected():
    with pytest.raises(ValueError):
        wave_packet_evolved(WavePacketSpec((1.0,), 1.0), point_grid(0), -1)


def test_schrodinger_initial_values():
    g = point_grid(np.sqrt(2))
    u = schrodinger_packet_initial(WavePacketSpec((3 * np.sqrt(2),), 1.0, SCHRODINGER), g)
    # phase k·x/√2 = 3√2 at this point; the envelope is exp(-x²/2) = exp(-1)
    assert u.first[1] == pytest.approx(np.exp(-1) * np.cos(3 * np.sqrt(2)), rel=1e-13)
    assert u.second[1] == pytest.approx(np.exp(-1) * np.sin(3 * np.sqrt(2)), rel=1e-13)
    centre = schrodinger_packet_initial(WavePacketSpec((5.0,), 2.0, SCHRODINGER), point_grid(0.0))
    assert (centre.first[1], centre.second[1]) == (1.0, 0.0)


@given(k=st.floats(-10, 10), s=st.floats(0.2, 4), x=st.floats(-5, 5))
def test_schrodinger_initial_modulus(k, s, x):
    u = schrodinger_packet_initial(WavePacketSpec((k,), s, SCHRODINGER), point_grid(x)).to_complex()
    assert abs(u[1]) == pytest.approx(np.exp(-x * x / (2 * s)), rel=1e-12)


@pytest.mark.parametrize("form", ["printed", "exact"])
def test_linear_evolution_at_zero_is_initial(form):
    g = GridSpec.box(-8, 8, 201)
    p = WavePacketSpec((6.0,), 1.0, SCHRODINGER)
    a = schrodinger_linear_evolved(p, g, 0.0, form).to_complex()
    assert np.allclose(a, schrodinger_packet_initial(p, g).to_complex(), rtol=0, atol=1e-14)


def test_printed_prefactor_modulus_is_continuous():
    # modulus at the packet centre is (1+4t²)^(-1/4) times the envelope
    p = WavePacketSpec((0.0,), 1.0, SCHRODINGER)
    ts = np.linspace(0, 2, 81)
    mods = [abs(schrodinger_linear_evolved(p, point_grid(0.0), t).to_complex()[1]) for t in ts]
    assert np.allclose(mods, (1 + 4 * ts**2) ** -0.25, rtol=1e-13)
    assert np.all(np.abs(np.diff(mods)) < 0.02)


@pytest.mark.parametrize("s", [0.5, 1.0, 2.3])
def test_exact_form_solves_schrodinger(s):
    g = GridSpec.box(-20, 20, 1024, periodic=True)
    p = WavePacketSpec((2.0,), s, SCHRODINGER)
    dt = 1e-4
    t = 0.3
    um, u0, up = (schrodinger_linear_evolved(p, g, t + d, "exact").to_complex() for d in (-dt, 0, dt))
    ut = (up - um) / (2 * dt)
    xi = 2 * np.pi * np.fft.fftfreq(1024, g.spacing[0])
    lap = np.fft.ifft(-(xi**2) * np.fft.fft(u0))
    residual = 1j * ut + lap
    assert np.max(np.abs(residual)) < 1e-6 * np.max(np.abs(lap))


def test_printed_form_is_exact_only_for_unit_width():
    g = GridSpec.box(-16, 16, 801)
    for s, same in ((1.0, True), (0.5, False)):
        p = WavePacketSpec((3.0,), s, SCHRODINGER)
        a = schrodinger_linear_evolved(p, g, 0.4, "printed").to_complex()
        b = schrodinger_linear_evolved(p, g, 0.4, "exact").to_complex()
        assert bool(np.max(np.abs(a - b)) < 1e-12) is same


@given(t=st.floats(0, 1.5), s=st.floats(0.5, 2))
def test_exact_form_conserves_mass(t, s):
    g = GridSpec.box(-40, 40, 2001)
    p = WavePacketSpec((1.5,), s, SCHRODINGER)
    m0 = np.sum(np.abs(schrodinger_linear_evolved(p, g, 0.0, "exact").to_complex()) ** 2)
    mt = np.sum(np.abs(schrodinger_linear_evolved(p, g, t, "exact").to_complex()) ** 2)
    assert mt == pytest.approx(m0, rel=1e-9)


def test_modulus_depends_on_moving_coordinate():
    # |u(x,t)| is a function of x/√2 - k t alone: shifting x by √2·k·dt and t by dt keeps it
    k, t, dt = 4.0, 0.3, 0.1
    p = WavePacketSpec((k,), 1.0, SCHRODINGER)
    g1 = GridSpec.box(-10, 10, 401)
    shift = np.sqrt(2) * k * dt
    g2 = GridSpec((-10 + shift,), (10 + shift,), (401,))
    a = np.abs(schrodinger_linear_evolved(p, g1, t).to_complex())
    b = np.abs(schrodinger_linear_evolved(p, g2, t + dt).to_complex())
    # the spreading factor changes with t, so compare normalized shapes at a fixed t instead
    c = np.abs(schrodinger_linear_evolved(WavePacketSpec((k + 1,), 1.0, SCHRODINGER), GridSpec(
        (-10 + np.sqrt(2) * t,), (10 + np.sqrt(2) * t,), (401,)), t).to_complex())
    assert np.allclose(a, c, atol=1e-13)
    assert not np.allclose(a, b, atol=1e-6)


def test_named_initial_values():
    x_grid = GridSpec((-3.0,), (3.0,), (7,))  # points -3..3
    hat = named_initial("nls-hat", x_grid).first
    assert hat[3] == 1.0 and hat[1] == 0.0 and hat[5] == 0.0 and hat[4] == 0.5
    sq = named_initial("nls-square", x_grid)
    assert (sq.first[3], sq.second[3]) == (1.0, 0.0) and (sq.first[6], sq.second[6]) == (0.0, 0.0)
    w3 = named_initial("wave-iii", x_grid)
    assert (w3.first[3], w3.second[3]) == (1.0, 0.0)


def test_named_condition_dimension_check():
    with pytest.raises(ValueError):
        named_initial("nls-2d", GridSpec.box(-1, 1, 5))
    with pytest.raises(ValueError):
        named_initial("wave-iv", GridSpec.box(-1, 1, 5))


@pytest.mark.parametrize("cond,k", [("wave-i", None), ("wave-ii", None), ("wave-iii", None), ("wave-iv", 10.05)])
def test_right_moving_conditions_translate(cond, k):
    # every named wave condition has v0 = -u0', so d'Alembert gives u0(x - t)
    g = GridSpec.box(-8, 8, 161)
    (x,) = build_grid(g)
    u0, _ = wave_condition_functions(cond, k)
    got = named_wave_solution(cond, g, 2.0, k)
    assert np.allclose(got, u0(x - 2.0), atol=1e-10)


def test_dalembert_against_mpmath_quadrature():
    u0, v0 = wave_condition_functions("wave-ii")
    x, t = np.array([0.3]), 0.7
    mpmath.mp.dps = 25

    def v(s):
        return mpmath.exp(-(s**2) / 1.5) * (2 * s / 1.5 * mpmath.cos(6.5 * s) + 6.5 * mpmath.sin(6.5 * s))

    ref = 0.5 * (u0(x - t) + u0(x + t)) + 0.5 * float(mpmath.quad(v, [x[0] - t, x[0] + t]))
    assert dalembert(u0, v0, x, t)[0] == pytest.approx(ref[0], abs=1e-12)


def test_condition_packets():
    assert condition_packet("schr-i") == WavePacketSpec((6.0,), 1.0, SCHRODINGER)
    assert condition_packet("wave-iv", 10.025).k == (10.025,)
    assert condition_packet("nls-hat") is None
    with pytest.raises(ValueError):
        condition_packet("schr-iii")


def test_named_packets_match_family_members():
    g = GridSpec.box(-8, 8, 201)
    for cond in ("schr-i", "schr-ii"):
        a = named_initial(cond, g).to_complex()
        b = schrodinger_packet_initial(condition_packet(cond), g).to_complex()
        assert np.allclose(a, b, atol=1e-14)
    a = named_initial("schr-iii", g, 6.025).to_complex()
    b = schrodinger_packet_initial(condition_packet("schr-iii", 6.025), g).to_complex()
    assert np.allclose(a, b, atol=1e-14)


def test_dispersion():
    assert dispersion(WAVE, (3, 4)) == 5
    assert dispersion(SCHRODINGER, 2) == 2
    assert dispersion(WAVE, 0) == 0 and dispersion(SCHRODINGER, (0, 0)) == 0


def test_sigma_sets():
    assert sigma_set("L") == (0.8, 0.9, 1.0, 1.1, 1.2, 1.3)
    assert sigma_set("E:0.5") == (0.5, 1, 2, 4, 8, 16)
    assert sigma_set("0.3,0.1") == (0.1, 0.3)
    for bad in ("E:0", "", "-1"):
        with pytest.raises(ValueError):
            sigma_set(bad)


def test_invalid_packets():
    with pytest.raises(ValueError):
        WavePacketSpec((1.0,), 0.0)
    with pytest.raises(ValueError):
        WavePacketSpec((), 1.0)


def test_high_dimensional_packet_on_a_cross_section():
    g = GridSpec.box(-2, 2, 9, dim=2)
    p = WavePacketSpec((1.0, 2.0, 3.0), 0.5)
    u = wave_packet_initial(p, g).first
    x1, x2 = np.meshgrid(*build_grid(g), indexing="ij")
    assert np.allclose(u, np.exp(-(x1**2 + x2**2) / 1.0) * np.cos(x1 + 2 * x2))
    with pytest.raises(ValueError):
        wave_packet_initial(WavePacketSpec((1.0,), 0.5), g)


def test_named_conditions_enumerate():
    assert {c.value for c in NamedCondition} >= {"wave-i", "schr-iii", "nls-2d"}
