import json
import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from recoilfree.hilbert import ModelConfig
from recoilfree.protocols import (
    AnalyticProtocol,
    SineModeProtocol,
    check_constraints,
    debye_waller_duration,
    load_protocol,
    normalized_impulse,
    project_onto_sine_modes,
    projected_force,
    protocol_timeseries,
    pulse_area,
    rabi_protocol,
    recoil_compensated_protocol,
    sample,
    save_protocol,
    write_protocol_timeseries,
)

coeffs = arrays(np.float64, st.integers(1, 8), elements=st.floats(-5, 5))
durations = st.floats(0.05, 50.0)


def symbolic_impulse(eta, omega):
    t = sp.symbols("t", positive=True)
    tf = sp.pi**2 / (2 * omega)
    f = -(eta * omega / 2) * sp.sin(sp.pi * t / tf) * sp.sin(sp.pi * sp.sin(sp.pi * t / (2 * tf)) ** 2)
    u = sp.symbols("u")
    # u = pi sin^2(pi t / 2 t_f) maps [0, t_f] onto [0, pi] with du = omega sin(pi t / t_f) dt
    du_dt = sp.diff(sp.pi * sp.sin(sp.pi * t / (2 * tf)) ** 2, t)
    assert sp.simplify(du_dt - omega * sp.sin(sp.pi * t / tf)) == 0
    integrand_u = sp.simplify((f / du_dt).subs(sp.sin(sp.pi * sp.sin(sp.pi * t / (2 * tf)) ** 2), sp.sin(u)))
    return sp.integrate(integrand_u, (u, 0, sp.pi))


def test_symbolic_impulse_is_minus_eta():
    eta, omega = sp.symbols("eta Omega", positive=True)
    assert sp.simplify(symbolic_impulse(eta, omega) + eta) == 0


@pytest.mark.parametrize("omega", [0.3, 1.0, 20.0, 200.0])
def test_compensated_impulse_matches_symbolic(omega):
    p = AnalyticProtocol(math.pi**2 / (2 * omega), omega, 0.505, "compensated")
    exact = float(symbolic_impulse(sp.Rational(505, 1000), sp.nsimplify(omega)))
    assert normalized_impulse(p) == pytest.approx(exact, abs=1e-10)
    assert exact == pytest.approx(-0.505, abs=1e-14)


def test_constant_force_impulse():
    p = AnalyticProtocol(2.0, 1.0, 0.505, "constant")
    assert normalized_impulse(p) == -0.505
    assert float(AnalyticProtocol.controls(p, np.array([0.3]))[2][0]) == pytest.approx(-0.505 / 2.0)


def test_rabi_pulse_area_is_pi():
    for omega in (0.1, 1.0, 38.83):
        assert pulse_area(rabi_protocol(omega)) == pytest.approx(math.pi, abs=1e-10)


def test_debye_waller_stretch():
    slow = ModelConfig(omega_max=0.5)
    assert debye_waller_duration(slow) == pytest.approx(math.pi**2 / 1.0 * math.exp(0.505**2 / 2))
    fast = ModelConfig(omega_max=2.0)
    assert debye_waller_duration(fast) == pytest.approx(math.pi**2 / 4.0)
    assert recoil_compensated_protocol(fast).force_kind == "compensated"


@given(coeffs, durations)
def test_single_channel_sine_area(theta, t_f):
    # a single mode with theta >= 0 integrates to 2 theta t_f / pi
    amp = abs(float(theta[0]))
    p = SineModeProtocol(t_f, [amp], [0.0])
    assert pulse_area(p) == pytest.approx(2 * amp * t_f / math.pi, rel=1e-9, abs=1e-12)


@given(coeffs, coeffs, durations)
@settings(max_examples=50)
def test_controls_vanish_at_the_ends(tx, ty, t_f):
    n = min(tx.size, ty.size)
    p = SineModeProtocol(t_f, tx[:n], ty[:n], tx)
    for t in (0.0, t_f):
        hx, hy, f = sample(p, t)
        scale = 1 + np.abs(tx).sum()
        assert abs(hx) < 1e-12 * scale and abs(hy) < 1e-12 * scale and abs(f) < 1e-12 * scale


@given(coeffs, durations, st.floats(-10, 10))
@settings(max_examples=50)
def test_rotation_preserves_magnitude_and_flip_is_involution(tx, t_f, phi):
    p = SineModeProtocol(t_f, tx, np.zeros_like(tx), tx[:3])
    t = np.linspace(0, t_f, 17)
    hx, hy, _ = p.controls(t)
    rx, ry, _ = p.rotated(phi).controls(t)
    assert np.allclose(np.hypot(hx, hy), np.hypot(rx, ry), atol=1e-9)
    assert np.array_equal(p.flipped().flipped().theta_f, p.theta_f)
    assert pulse_area(p.rotated(phi)) == pytest.approx(pulse_area(p), rel=1e-7, abs=1e-9)


@given(coeffs, durations)
@settings(max_examples=50)
def test_impulse_closed_form_matches_quadrature(theta, t_f):
    p = SineModeProtocol(t_f, [1.0], [0.0], theta)
    t = np.linspace(0, t_f, 20001)
    from scipy.integrate import simpson

    num = simpson(p.controls(t)[2], x=t)
    assert normalized_impulse(p) == pytest.approx(num, abs=1e-6 * (1 + np.abs(theta).sum() * t_f))


@given(coeffs, durations)
@settings(max_examples=30)
def test_force_rate_matches_finite_difference(theta, t_f):
    p = SineModeProtocol(t_f, [1.0], [0.0], theta)
    t = np.linspace(0.1 * t_f, 0.9 * t_f, 9)
    h = 1e-6 * t_f
    fd = (p.controls(t + h)[2] - p.controls(t - h)[2]) / (2 * h)
    assert np.allclose(p.force_rate(t), fd, rtol=1e-5, atol=1e-5 * (1 + np.abs(theta).sum() / t_f))


def test_analytic_force_rate_matches_finite_difference():
    p = AnalyticProtocol(1.7, 3.0, 0.505, "compensated")
    t = np.linspace(0.05, 1.65, 11)
    h = 1e-6
    fd = (p.force_curve(t + h) - p.force_curve(t - h)) / (2 * h)
    assert np.allclose(p.force_rate(t), fd, atol=1e-7)


def test_zero_force_gives_zero_impulse():
    p = SineModeProtocol(3.0, [1.0], [0.0], np.zeros(3))
    assert normalized_impulse(p) == 0.0


def test_projection_recovers_sine_modes():
    t_f = 2.5
    t = np.linspace(0, t_f, 2001)
    theta = np.array([0.4, -0.2, 0.1])
    vals = SineModeProtocol(t_f, [0.0], [0.0], theta).controls(t)[2]
    assert np.allclose(project_onto_sine_modes(vals, t_f, 5), [0.4, -0.2, 0.1, 0, 0], atol=1e-10)


def test_projected_force_error_decreases_with_mode_count():
    omega, eta = 5.0, 0.505
    t_f = math.pi**2 / (2 * omega)
    t = np.linspace(0, t_f, 4001)
    h = omega * np.sin(np.pi * t / t_f)
    target = AnalyticProtocol(t_f, omega, eta, "compensated").force_curve(t)
    errs = []
    for n_f in (3, 10, 30):
        theta = projected_force(h, eta, t_f, n_f)
        recon = SineModeProtocol(t_f, [0.0], [0.0], theta).controls(t)[2]
        errs.append(np.sqrt(np.mean((recon - target) ** 2)))
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] < 1e-3 * np.max(np.abs(target))


def test_projected_force_validation():
    with pytest.raises(ValueError):
        projected_force([1.0, 2.0], 0.5, 1.0, 3)
    with pytest.raises(ValueError):
        projected_force([1.0, -2.0, 1.0], 0.5, 1.0, 3)


def test_sample_rejects_times_outside_pulse():
    p = rabi_protocol(1.0)
    with pytest.raises(ValueError):
        sample(p, -0.1)
    with pytest.raises(ValueError):
        sample(p, 2 * p.t_f)


def test_constructor_validation():
    with pytest.raises(ValueError):
        SineModeProtocol(0.0, [1.0], [0.0])
    with pytest.raises(ValueError):
        SineModeProtocol(1.0, [1.0, 2.0], [0.0])
    with pytest.raises(ValueError):
        SineModeProtocol(1.0, [math.nan], [0.0])
    with pytest.raises(ValueError):
        AnalyticProtocol(1.0, 1.0, 0.5, "bogus")
    with pytest.raises(ValueError):
        rabi_protocol(0.0)


def test_constraints():
    c = ModelConfig(omega_max=1.0)
    assert check_constraints(rabi_protocol(1.0), c).ok
    over = SineModeProtocol(2.0, [0.8], [0.8])
    rep = check_constraints(over, c)
    assert not rep.amplitude_ok and rep.violating_times
    fast_force = SineModeProtocol(1.0, [0.5], [0.0], [1e5])
    rep = check_constraints(fast_force, c)
    assert rep.amplitude_ok and not rep.velocity_ok
    # exactly at the bound passes
    assert check_constraints(SineModeProtocol(2.0, [0.6], [0.8]), c).ok


def test_serialization_roundtrip(tmp_path):
    p = SineModeProtocol(1.234, [0.1, -0.2], [0.3, 0.4], [0.5])
    save_protocol(tmp_path / "p.json", p)
    q = load_protocol(tmp_path / "p.json")
    assert q.t_f == p.t_f and np.array_equal(q.theta_x, p.theta_x) and np.array_equal(q.theta_f, p.theta_f)
    a = AnalyticProtocol(1.0, 2.0, 0.5, "compensated", -1.0)
    save_protocol(tmp_path / "a.json", a)
    assert load_protocol(tmp_path / "a.json") == a
    bad = p.to_dict() | {"n_f": 7}
    with pytest.raises(ValueError):
        SineModeProtocol.from_dict(json.loads(json.dumps(bad)))


def test_timeseries_csv(tmp_path):
    p = SineModeProtocol(2.0, [1.0], [1.0], [0.2])
    rows = protocol_timeseries(p, 11)
    assert rows.shape == (11, 4)
    assert rows[5, 2] == pytest.approx(math.pi / 4)
    write_protocol_timeseries(tmp_path / "p.csv", p, 11)
    lines = (tmp_path / "p.csv").read_text().splitlines()
    assert lines[0] == "t,abs_omega,arg_omega,f_tw" and len(lines) == 12
