import itertools
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cbf import recovery as rc
from cbf.signal import (FriEcho, MeasurementVector, fourier_coeffs, fri_coefficients, kappa_consecutive,
                        synthesize_fri)

T = 124e-6
RATE = 100e6


def _on_grid_scene(L, N, rng):
    q = np.sort(rng.choice(np.arange(N // 10, N - N // 10), L, replace=False))
    b = rng.uniform(0.5, 1.5, L) * np.exp(1j * rng.uniform(-np.pi, np.pi, L))
    return q, b


@pytest.mark.parametrize("L", [2, 3])
@pytest.mark.parametrize("method", ["matrix_pencil", "cadzow_tls"])
def test_spectral_methods_exact_from_2L(pulse, method, L):
    grid = rc.RecoveryGrid(2480, T)
    rng = np.random.default_rng(L)
    q, b = _on_grid_scene(L, grid.N, rng)
    echoes = [FriEcho(t, a) for t, a in zip(q * grid.delta_s, b)]
    c = fri_coefficients(pulse, echoes, kappa_consecutive(434, 2 * L), T)
    est = rc.recover(method, c, pulse, T, L)
    d = np.array([e.delay for e in est])
    assert np.all(np.abs(d - q * grid.delta_s) < grid.delta_s / 2)
    amp = np.array([e.amplitude for e in est])
    assert np.max(np.abs(amp - b) / np.abs(b)) < 1e-6


def _separated_scene(L, N, min_gap, rng):
    while True:
        q = np.sort(rng.choice(N, L, replace=False))
        if np.diff(np.r_[q, q[0] + N]).min() >= min_gap:
            break
    b = rng.uniform(0.5, 1.5, L) * np.exp(1j * rng.uniform(-np.pi, np.pi, L))
    return q, b


@pytest.mark.parametrize("L", [2, 3])
@pytest.mark.parametrize("oversample", [1, 2])
def test_omp_exact_from_2L_plus_1(pulse, L, oversample):
    # K = 2L + 1 resolves a grid of K cells; on a 2x finer grid echoes must sit two cells apart
    K = 2 * L + 1
    grid = rc.RecoveryGrid(oversample * K, T)
    rng = np.random.default_rng(10 + L)
    for _ in range(25):
        q, b = _separated_scene(L, grid.N, 2 * oversample if oversample > 1 else 1, rng)
        echoes = [FriEcho(t, a) for t, a in zip(q * grid.delta_s, b)]
        c = fri_coefficients(pulse, echoes, kappa_consecutive(434, K), T)
        est = rc.recover("omp", c, pulse, T, L, grid=grid)
        d = np.array([e.delay for e in est])
        assert np.all(np.abs(d - q * grid.delta_s) < grid.delta_s / 2)
        amp = np.array([e.amplitude for e in est])
        assert np.max(np.abs(amp - b) / np.abs(b)) < 1e-6


def test_omp_on_dense_grid_locates_echoes_within_pulse_width(pulse):
    # with N >> K, neighboring sidelobes bias the greedy picks by a few cells; each
    # recovered delay still lands inside the pulse width of its echo
    grid = rc.RecoveryGrid(2480, T)
    rng = np.random.default_rng(7)
    for _ in range(20):
        q, b = _separated_scene(6, grid.N, 2 * grid.N // 100, rng)
        c = fri_coefficients(pulse, [FriEcho(t, a) for t, a in zip(q * grid.delta_s, b)],
                             kappa_consecutive(434, 100), T)
        res = rc.omp_recover(c, pulse, T, grid, 6)
        err = np.abs(np.sort(res.delays) - q * grid.delta_s)
        assert np.all(err < pulse.delta)


def test_matrix_pencil_from_projected_trace(pulse):
    echoes = [FriEcho(31.7e-6, 1.0), FriEcho(58.25e-6, 0.7 * np.exp(0.3j)), FriEcho(90.01e-6, -0.4)]
    c = fourier_coeffs(synthesize_fri(pulse, echoes, RATE, T), kappa_consecutive(434, 100))
    est = rc.recover("matrix_pencil", c, pulse, T, 3)
    assert np.allclose([e.delay for e in est], [e.delay for e in echoes], atol=1e-10)


@pytest.mark.parametrize("method", ["matrix_pencil", "cadzow_tls"])
def test_phase_offsets_recovered(pulse, method):
    phases = np.array([2.9, -0.4, -3.1, 1.2])
    echoes = [FriEcho(t, np.exp(1j * p)) for t, p in zip([18e-6, 40e-6, 66e-6, 101e-6], phases)]
    c = fourier_coeffs(synthesize_fri(pulse, echoes, RATE, T), kappa_consecutive(434, 100))
    est = rc.recover(method, c, pulse, T, 4)
    err = np.angle(np.array([e.amplitude for e in est]) * np.exp(-1j * phases))
    assert np.max(np.abs(err)) < 1e-2


def test_spectral_preconditions(pulse):
    c = fri_coefficients(pulse, [FriEcho(1e-5)], [430, 431, 433], T)
    with pytest.raises(ValueError, match="consecutive"):
        rc.matrix_pencil(rc.SpectralSystem.from_measurements(c, pulse, T, 1))
    c = fri_coefficients(pulse, [FriEcho(1e-5)], kappa_consecutive(434, 3), T)
    with pytest.raises(ValueError, match="K >= 2L"):
        rc.matrix_pencil(rc.SpectralSystem.from_measurements(c, pulse, T, 2))


def test_rank_deficiency_reported(pulse):
    # one echo cannot support a rank-2 model
    c = fri_coefficients(pulse, [FriEcho(3e-5)], kappa_consecutive(434, 10), T)
    with pytest.raises(rc.RankError) as exc:
        rc.matrix_pencil(rc.SpectralSystem.from_measurements(c, pulse, T, 2))
    assert exc.value.effective_order == 1


def test_estimate_order(pulse):
    echoes = [FriEcho(t) for t in (20e-6, 50e-6, 80e-6)]
    c = fri_coefficients(pulse, echoes, kappa_consecutive(434, 20), T)
    assert rc.estimate_order(rc.SpectralSystem.from_measurements(c, pulse, T, 3)) == 3


def test_coincident_delays_rejected(pulse):
    c = fri_coefficients(pulse, [FriEcho(3e-5)], kappa_consecutive(434, 10), T)
    with pytest.raises(rc.ConditioningError):
        rc.solve_amplitudes(c, pulse, T, [3e-5, 3e-5])


def test_cadzow_reduces_noise_and_flags_nothing_when_clean(pulse):
    rng = np.random.default_rng(2)
    echoes = [FriEcho(t) for t in (25e-6, 60e-6)]
    c = fri_coefficients(pulse, echoes, kappa_consecutive(434, 30), T)
    sys_ = rc.SpectralSystem.from_measurements(c, pulse, T, 2)
    with warnings.catch_warnings():
        warnings.simplefilter("error", rc.CadzowDivergenceWarning)
        d = rc.cadzow_tls(sys_)
    assert np.allclose(d, [25e-6, 60e-6], atol=1e-12)
    noisy = sys_.y + 0.05 * (rng.standard_normal(30) + 1j * rng.standard_normal(30))
    den, _ = rc.cadzow(noisy, 2, 30)
    assert np.linalg.norm(den - sys_.y) < np.linalg.norm(noisy - sys_.y)


def _brute_force_support(A, c, L):
    best, arg = np.inf, None
    for S in itertools.combinations(range(A.shape[1]), L):
        x, *_ = np.linalg.lstsq(A[:, S], c, rcond=None)
        r = np.linalg.norm(c - A[:, S] @ x)
        if r < best - 1e-12:
            best, arg = r, S
    return set(arg), best


@settings(max_examples=40, deadline=None)
@given(st.integers(16, 64), st.integers(1, 2), st.data())
def test_omp_matches_brute_force(N, L, data):
    rng = np.random.default_rng(data.draw(st.integers(0, 2 ** 32 - 1)))
    K = min(N, 12)
    kappa = np.arange(K)
    A = np.exp(-2j * np.pi * np.outer(kappa, np.arange(N)) / N)
    # well-separated atoms keep the exact-sparse problem uniquely solvable by greedy steps
    q = data.draw(st.lists(st.integers(0, N - 1), min_size=L, max_size=L, unique=True))
    if L == 2 and min(abs(q[0] - q[1]), N - abs(q[0] - q[1])) < N / K * 2:
        return
    x = rng.uniform(0.5, 2, L) * np.exp(1j * rng.uniform(-np.pi, np.pi, L))
    c = A[:, q] @ x
    support, _, res = rc.omp(A, c, L)
    bf_support, bf_res = _brute_force_support(A, c, L)
    assert set(support.tolist()) == bf_support
    assert res <= bf_res + 1e-9


def test_omp_single_atom_is_max_correlation():
    rng = np.random.default_rng(4)
    A = rng.standard_normal((8, 30)) + 1j * rng.standard_normal((8, 30))
    c = rng.standard_normal(8) + 0j
    s, _, _ = rc.omp(A, c, 1)
    assert s[0] == int(np.argmax(np.abs(A.conj().T @ c) / np.linalg.norm(A, axis=0)))
    assert rc.omp(A, np.zeros(8), 3)[0].size == 0


def test_omp_stops_on_residual(pulse):
    grid = rc.RecoveryGrid(1240, T)
    c = fri_coefficients(pulse, [FriEcho(100 * grid.delta_s)], kappa_consecutive(434, 9), T)
    assert rc.omp_recover(c, pulse, T, grid, 5, residual_tol=1e-8).support.size == 1
    assert rc.omp_recover(c, pulse, T, grid, 5, residual_tol=None).support.size == 5


def test_grid_and_sensing_matrix(pulse):
    g = rc.RecoveryGrid(100, T)
    assert g.delta_s == pytest.approx(T / 100)
    with pytest.raises(ValueError):
        g.sensing_matrix(np.arange(101), pulse)
    with pytest.raises(ValueError):
        rc.RecoveryGrid(0, T)
    A = g.sensing_matrix([434], pulse)
    assert A[0, 0] == pytest.approx(pulse.spectrum(2 * np.pi * 434 / T) / T)
    assert rc.rip_sizing(6, 2480) > 0


def test_empirical_pulse_matches_closed_form(pulse):
    tr = synthesize_fri(pulse, [FriEcho(40e-6)], RATE, T)
    emp = rc.EmpiricalPulse(tr, 40e-6)
    k = np.arange(380, 490)
    w = 2 * np.pi * k / T
    assert np.linalg.norm(emp.spectrum(w) - pulse.spectrum(w)) < 1e-6 * np.linalg.norm(pulse.spectrum(w))
    with pytest.raises(ValueError):
        emp.spectrum([2 * np.pi * 10.5 / T])


def test_recover_dispatch_and_rows(pulse):
    c = fri_coefficients(pulse, [FriEcho(3e-5)], kappa_consecutive(434, 10), T)
    with pytest.raises(ValueError):
        rc.recover("music", c, pulse, T, 1)
    with pytest.raises(ValueError):
        rc.recover("omp", c, pulse, T, 1)
    rows = rc.result_rows("omp", [FriEcho(1e-5, 1 + 2j)], 0.5)
    assert rows == [("omp", 1, 1e-5, 1.0, 2.0, 0.5)]


def test_snap_rounds_spectral_delays_to_grid(pulse):
    T = 124e-6
    grid = rc.RecoveryGrid(2480, T)
    q = np.array([700, 704, 1500])
    b = np.array([1.0, -0.7j, 0.4 + 0.2j])
    c = fri_coefficients(pulse, [FriEcho(t, a) for t, a in zip(q * grid.delta_s, b)],
                         kappa_consecutive(434, 6), T)
    est = rc.recover("matrix_pencil", c, pulse, T, 3, grid=grid, snap=True)
    assert np.array_equal(np.array([e.delay for e in est]), q * grid.delta_s)
    assert np.max(np.abs(np.array([e.amplitude for e in est]) - b)) < 1e-9
    with pytest.raises(ValueError):
        rc.recover("matrix_pencil", c, pulse, T, 3, snap=True)
