import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cbf import beamform as bf
from cbf.phantom import Phantom, simulate_traces
from cbf.signal import kappa_consecutive, pulse_eval

T = 124e-6
RATE = 100e6

gammas = st.floats(-1.5e-5, 1.5e-5)
thetas = st.floats(-1.2, 1.2)


@settings(max_examples=200, deadline=None)
@given(gammas, st.floats(1e-6, 2e-4), thetas)
def test_tau_round_trip(gamma, t, theta):
    t = t + 2 * abs(gamma)
    fwd = bf.tau(gamma, t, theta)
    assert float(bf.tau_inverse(gamma, fwd, theta)) == pytest.approx(t, rel=1e-12)


@settings(max_examples=100, deadline=None)
@given(gammas, st.floats(1e-6, 2e-4), thetas)
def test_tau_derivative_matches_finite_difference(gamma, t, theta):
    t = t + 2 * abs(gamma)
    h = t * 1e-6
    fd = (bf.tau(gamma, t + h, theta) - bf.tau(gamma, t - h, theta)) / (2 * h)
    assert float(bf.tau_derivative(gamma, t, theta)) == pytest.approx(float(fd), rel=1e-6)


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 128), st.floats(0.1e-3, 0.6e-3), st.data(), thetas, st.floats(50e-6, 300e-6))
def test_support_bound_inside_frame(count, pitch, data, theta, frame):
    ref = data.draw(st.integers(0, count - 1))
    geom = bf.ArrayGeometry.linear(count, pitch, ref)
    if frame <= np.max(np.abs(geom.gammas)):
        return
    t_b = bf.support_bound(geom, theta, frame)
    assert t_b <= frame * (1 + 1e-12)
    assert np.all(bf.tau(geom.gammas, t_b, theta) <= frame * (1 + 1e-12))


def test_tau_identities():
    t = np.linspace(1e-6, 1e-4, 7)
    assert np.allclose(bf.tau(0.0, t, 0.3), t, rtol=1e-15)
    # on axis: tau(t) = (t + sqrt(t^2 + 4 gamma^2)) / 2
    g = 3e-6
    assert np.allclose(bf.tau(g, t, 0.0), 0.5 * (t + np.sqrt(t ** 2 + 4 * g ** 2)))
    with pytest.raises(ValueError):
        bf.tau_inverse(g, 1e-6, 0.0)


def test_geometry_validation():
    g = bf.ArrayGeometry.linear(63, 0.29e-3)
    assert g.reference_index == 31 and g.offsets[31] == 0
    assert g.offsets[62] == pytest.approx(31 * 0.29e-3)
    with pytest.raises(ValueError):
        bf.ArrayGeometry(np.array([0.0, 1e-3]), reference_index=1)
    with pytest.raises(ValueError):
        bf.ArrayGeometry(np.array([0.0]), speed=0)


def test_apodization_normalizes_and_gates(geometry):
    ap = bf.Apodization.hanning(geometry.count)
    assert np.all(ap.weights > 0)
    t = np.array([0.0, 1e-6, 5e-6, 50e-6])
    w = ap.effective(geometry, t)
    assert np.allclose(w.sum(axis=0), 1.0)
    gate = ap.gate_times(geometry)
    assert np.all(w[gate > 1e-6, 1] == 0)
    assert np.all(w[:, 3] > 0)
    ungated = bf.Apodization.uniform(geometry.count, gated=False).effective(geometry, [0.0])
    assert np.allclose(ungated, 1 / geometry.count)
    with pytest.raises(ValueError):
        bf.Apodization.from_name("kaiser", 4)
    with pytest.raises(ValueError):
        bf.Apodization(np.zeros(3))


def test_distortion_helpers():
    assert bf.distortion_sigma(0.0, 5e-5, 0.2) == pytest.approx(1.0)
    d = 2e-6
    assert bf.distorted_support(0.0, 5e-5, 0.0, d) == pytest.approx(d)
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        bf.distorted_support(1e-5, 1e-5, 0.0, d)
    assert w
    for g in (-8e-6, 3e-6, 8e-6):
        assert bf.distorted_support(g, 6e-5, 0.3, d, check=False) <= 2 * d


def test_beamform_focuses_on_axis_echo(geometry, pulse):
    z = 50e-3
    tr = simulate_traces(Phantom.points([[0, 0, z]]), geometry, pulse, 0.0, RATE, T, None)
    phi = bf.beamform(tr, geometry, 0.0, bf.Apodization.uniform(geometry.count))
    t_l = 2 * z / geometry.speed
    # oracle: average of the analytically distorted echoes h(tau_m(t) - tau_m(t_l))
    g = geometry.gammas[:, None]
    t = phi.times[None, :]
    ref = pulse_eval(pulse, bf.tau(g, t, 0.0) - bf.tau(g, t_l, 0.0)).mean(axis=0)
    # linear interpolation of the element traces costs up to (w0 / rate)^2 / 8 ~ 0.6 %
    assert np.linalg.norm(phi.samples - ref) / np.linalg.norm(ref) < (pulse.omega0 / RATE) ** 2 / 8
    undistorted = pulse_eval(pulse, phi.times - t_l)
    assert np.linalg.norm(phi.samples - undistorted) / np.linalg.norm(undistorted) < 0.1
    assert phi.times[np.argmax(np.abs(phi.samples))] == pytest.approx(t_l + pulse.envelope_center, abs=0.2e-6)


def test_beamform_zero_after_support_bound(geometry, pulse):
    tr = simulate_traces(Phantom.points([[0, 0, 30e-3]]), geometry, pulse, 0.5, RATE, T, None)
    phi = bf.beamform(tr, geometry, 0.5)
    assert np.all(phi.samples[phi.times >= bf.support_bound(geometry, 0.5, T)] == 0)


def test_beamform_validates_inputs(geometry, pulse):
    tr = simulate_traces(Phantom.points([[0, 0, 30e-3]]), geometry, pulse, 0.0, RATE, T, None)
    with pytest.raises(ValueError):
        bf.beamform(tr[:-1], geometry, 0.0)
    with pytest.raises(ValueError):
        bf.beamform(tr, geometry, math.pi / 2)


def test_projection_error_reference_is_exact(fig3_pulse):
    geom = bf.ArrayGeometry.linear(63, 0.29e-3, 31)
    kap = kappa_consecutive(630, 121)
    delays = np.linspace(0.05, 0.9, 5) * 210e-6
    el, snr = bf.projection_error_experiment(geom, fig3_pulse, delays, 0.0, kap, 210e-6, RATE,
                                             elements=[31, 32, 62])
    assert np.all(np.isinf(snr[0]))
    assert np.all(snr[1] > snr[2])
    # distortion fades with depth
    assert np.all(np.diff(snr[2]) > 0)
