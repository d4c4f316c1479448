"""Point-scatterer phantoms, geometric echo synthesis and the recovery-probability study.

Echoes follow straight-ray geometry: a scatterer at ``p`` is insonified at
``|p| / c`` and reaches element ``m`` at ``(|p| + |p - e_m|) / c``. Transmit
focusing is folded into a Gaussian lateral beam profile around the steering axis.
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
import math
import os

import numpy as np
from scipy.optimize import linear_sum_assignment

from .beamform import Apodization, ArrayGeometry, beamform
from .recovery import EmpiricalPulse, RecoveryGrid, recover
from .signal import SampledTrace, TwoWayPulse, check_dense_rate, fourier_coeffs, kappa_consecutive, kappa_random

BOX = ((-25e-3, 25e-3), (-5e-3, 5e-3), (30e-3, 90e-3))
METHODS = ("cadzow_tls", "matrix_pencil", "omp_consecutive", "omp_random")


@dataclass(frozen=True, eq=False)
class Phantom:
    """Scatterer positions ``(n, 3)`` in meters, real amplitudes and a signal/speckle mask."""

    positions: np.ndarray
    amplitudes: np.ndarray
    is_signal: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        amp = np.asarray(self.amplitudes, dtype=float)
        sig = np.asarray(self.is_signal, dtype=bool)
        if amp.shape != (pos.shape[0],) or sig.shape != amp.shape:
            raise ValueError("one amplitude and kind flag per scatterer")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "amplitudes", amp)
        object.__setattr__(self, "is_signal", sig)

    def __len__(self):
        return self.amplitudes.size

    @property
    def signal(self):
        return self._subset(self.is_signal)

    @property
    def speckle(self):
        return self._subset(~self.is_signal)

    def _subset(self, mask):
        return Phantom(self.positions[mask], self.amplitudes[mask], self.is_signal[mask])

    def scaled(self, alpha):
        return Phantom(self.positions, alpha * self.amplitudes, self.is_signal)

    def signal_delays(self, speed):
        """Round-trip delays ``2 |p| / c`` of the signal scatterers, ascending."""
        return np.sort(2 * np.linalg.norm(self.signal.positions, axis=1) / speed)

    @classmethod
    def points(cls, positions, amplitudes=None):
        pos = np.asarray(positions, dtype=float).reshape(-1, 3)
        amp = np.ones(pos.shape[0]) if amplitudes is None else amplitudes
        return cls(pos, amp, np.ones(pos.shape[0], bool))


@dataclass(frozen=True, eq=False)
class SimConfig:
    """Simulation protocol; times in seconds, distances in meters."""

    geometry: ArrayGeometry = None
    pulse: TwoWayPulse = None
    apodization: str = "hanning"
    focus_depth: float = 70e-3
    beam_width: float = 2e-3
    speckle_count: int = 10_000
    signal_count: int = 6
    depth_interval: tuple = (35e-3, 85e-3)
    min_separation: float = 0.0
    trials: int = 50
    etas: tuple = (1.5, 2.0, 3.0, 5.0)
    snrs: tuple = (5.0, 10.0, 15.0, 20.0, 25.0)
    rate: float = 100e6
    duration: float = 124e-6
    grid_rate: float = 20e6
    threshold_db: float = 2.0
    spreading: bool = False
    box: tuple = BOX
    seed: int = 0
    methods: tuple = field(default=METHODS)

    def __post_init__(self):
        if self.geometry is None:
            object.__setattr__(self, "geometry", ArrayGeometry.linear(64, 0.49e-3, 31))
        if self.pulse is None:
            object.__setattr__(self, "pulse", TwoWayPulse(sigma=216e-9, f0=3.5e6))
        if self.trials < 1:
            raise ValueError("trial count must be at least 1")
        if any(e <= 1 for e in self.etas):
            raise ValueError("oversampling factors must exceed 1")
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ValueError(f"unknown methods {sorted(unknown)}")

    def K(self, eta):
        return 2 * math.ceil(eta * self.signal_count) + 1

    @property
    def grid(self):
        return RecoveryGrid(int(round(self.grid_rate * self.duration)), self.duration)

    @property
    def k0(self):
        return int(math.ceil(self.pulse.f0 * self.duration))


def gen_phantom(config, seed):
    """Uniform speckle in the box with N(0, 1) amplitudes plus on-axis signal reflectors of unit amplitude."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    (x0, x1), (y0, y1), (z0, z1) = config.box
    n = int(config.speckle_count)
    speck = np.column_stack([rng.uniform(x0, x1, n), rng.uniform(y0, y1, n), rng.uniform(z0, z1, n)])
    amps = rng.standard_normal(n)
    lo, hi = config.depth_interval
    L, gap = config.signal_count, config.min_separation
    slack = (hi - lo) - (L - 1) * gap
    if slack <= 0:
        raise ValueError("depth interval too short for the requested separation")
    # uniform over configurations with all gaps >= min_separation, in random order
    z = lo + np.sort(rng.uniform(0, slack, L)) + gap * np.arange(L)
    z = rng.permutation(z)
    sig = np.column_stack([np.zeros_like(z), np.zeros_like(z), z])
    return Phantom(
        np.vstack([speck, sig]),
        np.concatenate([amps, np.ones(config.signal_count)]),
        np.concatenate([np.zeros(n, bool), np.ones(config.signal_count, bool)]),
    )


def beam_weight(positions, theta, width):
    """Gaussian lateral profile, -6 dB at ``width / 2`` from the beam axis."""
    if width is None:
        return np.ones(len(positions))
    axis = np.array([math.sin(theta), 0.0, math.cos(theta)])
    along = positions @ axis
    perp = np.linalg.norm(positions - along[:, None] * axis, axis=1)
    return np.exp2(-(2 * perp / width) ** 2)


def arrival_times(positions, geometry):
    """``(M, n)`` arrival times ``(|p| + |p - e_m|) / c``."""
    elems = np.column_stack([geometry.offsets, np.zeros(geometry.count), np.zeros(geometry.count)])
    tx = np.linalg.norm(positions, axis=1)
    rx = np.linalg.norm(positions[None, :, :] - elems[:, None, :], axis=2)
    return (tx[None, :] + rx) / geometry.speed, tx, rx


def simulate_traces(phantom, geometry, pulse, theta, rate, duration, beam_width=2e-3,
                    spreading=False, reference_range=70e-3, min_weight=1e-6):
    """Per-element traces ``sum_p a_p w_beam(p) h(t - arrival_{p,m})``.

    Scatterers whose beam weight falls below ``min_weight`` are skipped.
    With ``spreading`` the amplitude also scales as ``reference_range^2 / (r_tx r_rx)``.
    """
    check_dense_rate(pulse, rate)
    n_samp = int(round(rate * duration))
    out = np.zeros((geometry.count, n_samp))
    pos = phantom.positions
    if pos.shape[0] == 0:
        return [SampledTrace(row, rate, duration) for row in out]
    if np.any(2 * np.linalg.norm(pos, axis=1) / geometry.speed >= duration):
        raise ValueError("scatterer beyond the frame depth c T / 2")
    bw = beam_weight(pos, theta, beam_width)
    keep = bw >= min_weight
    pos, w = pos[keep], (phantom.amplitudes * bw)[keep]
    arr, tx, rx = arrival_times(pos, geometry)
    gain = np.broadcast_to(w, arr.shape)
    if spreading:
        gain = gain * reference_range ** 2 / (tx[None, :] * rx)
    width = int(math.ceil(pulse.delta * rate)) + 1
    offs = np.arange(width)
    c, sig, w0, beta = pulse.envelope_center, pulse.sigma, pulse.omega0, pulse.beta
    for m in range(geometry.count):
        start = np.ceil(arr[m] * rate - 1e-9).astype(np.int64)
        idx = start[:, None] + offs[None, :]
        u = idx / rate - arr[m][:, None]
        val = np.exp(-0.5 * ((u - c) / sig) ** 2) * np.cos(w0 * u + beta)
        val = np.where((u >= 0) & (u < pulse.delta) & (idx < n_samp), val, 0.0)
        ok = idx < n_samp
        out[m] = np.bincount(idx[ok], weights=(val * gain[m][:, None])[ok], minlength=n_samp)
    return [SampledTrace(row, rate, duration) for row in out]


def _energy(trace):
    return float(np.sum(trace.samples ** 2))


def snr_scale(phi_s, phi_n, target_db):
    """``alpha`` with ``10 log10(|alpha Phi_s|^2 / |n|^2) = target_db`` for beamformed traces."""
    es, en = _energy(phi_s), _energy(phi_n)
    if en <= 0:
        raise ValueError("speckle phantom has zero beamformed energy")
    if es <= 0:
        raise ValueError("signal phantom has zero beamformed energy")
    return math.sqrt(10 ** (target_db / 10) * en / es)


def calibrate_snr(signal, speckle, geometry, pulse, theta, target_db, rate, duration,
                  apodization=None, beam_width=2e-3):
    """Scale on signal amplitudes meeting ``target_db`` after beamforming both phantoms along ``theta``."""
    if len(signal) == 0 or len(speckle) == 0:
        raise ValueError("both phantoms must be nonempty")
    args = (geometry, pulse, theta, rate, duration, beam_width)
    phi_s = beamform(simulate_traces(signal, *args), geometry, theta, apodization)
    phi_n = beamform(simulate_traces(speckle, *args), geometry, theta, apodization)
    return snr_scale(phi_s, phi_n, target_db)


def achieved_snr(phi_s, phi_n, alpha=1.0):
    return 10 * math.log10(alpha ** 2 * _energy(phi_s) / _energy(phi_n))


def count_matches(true_delays, est_delays, tol):
    """Largest number of one-to-one pairs with ``|t - t_hat| < tol``."""
    true_delays = np.asarray(true_delays, dtype=float)
    est = np.asarray(est_delays, dtype=float)
    if true_delays.size == 0 or est.size == 0:
        return 0
    hit = np.abs(true_delays[:, None] - est[None, :]) < tol
    rows, cols = linear_sum_assignment(-hit.astype(float))
    return int(hit[rows, cols].sum())


def calibration_pulse(config, apodization=None):
    """Pulse spectrum estimated from a single reflector at the focal depth on the beam axis.

    Returns ``(EmpiricalPulse, beamformed calibration trace)``.
    """
    apod = apodization or Apodization.from_name(config.apodization, config.geometry.count)
    ph = Phantom.points([[0.0, 0.0, config.focus_depth]])
    tr = simulate_traces(ph, config.geometry, config.pulse, 0.0, config.rate, config.duration,
                         config.beam_width, config.spreading, config.focus_depth)
    phi = beamform(tr, config.geometry, 0.0, apod)
    delay = 2 * config.focus_depth / config.geometry.speed
    return EmpiricalPulse(phi, delay), phi


def kappa_sets(config, rng):
    """Consecutive and random index sets per oversampling factor (random drawn once per factor)."""
    out = {}
    for eta in config.etas:
        K = config.K(eta)
        out[eta] = (kappa_consecutive(config.k0, K),
                    kappa_random(config.pulse, config.duration, K, config.threshold_db, rng))
    return out


def _beamformed_pair(config, phantom, apod):
    g, p = config.geometry, config.pulse
    args = (g, p, 0.0, config.rate, config.duration, config.beam_width, config.spreading,
            config.focus_depth)
    phi_s = beamform(simulate_traces(phantom.signal, *args), g, 0.0, apod)
    speck = phantom.speckle
    if len(speck):
        phi_n = beamform(simulate_traces(speck, *args), g, 0.0, apod)
    else:
        phi_n = phi_s.with_samples(np.zeros(len(phi_s)))
    return phi_s, phi_n


def run_trial(config, seed_seq, kappas, h_est):
    """Match counts ``S[snr, eta, method]`` for one phantom, plus achieved SNRs."""
    rng = np.random.default_rng(seed_seq)
    apod = Apodization.from_name(config.apodization, config.geometry.count)
    phantom = gen_phantom(config, rng)
    phi_s, phi_n = _beamformed_pair(config, phantom, apod)
    truth = phantom.signal_delays(config.geometry.speed)
    L, T, grid = config.signal_count, config.duration, config.grid
    S = np.zeros((len(config.snrs), len(config.etas), len(config.methods)), np.int64)
    achieved = np.full(len(config.snrs), np.inf)
    noiseless = _energy(phi_n) == 0
    for i, snr in enumerate(config.snrs):
        if noiseless:
            phi = phi_s
        else:
            alpha = snr_scale(phi_s, phi_n, snr)
            achieved[i] = achieved_snr(phi_s, phi_n, alpha)
            phi = phi_s.with_samples(alpha * phi_s.samples + phi_n.samples)
        for j, eta in enumerate(config.etas):
            cons, rand = kappas[eta]
            for q, method in enumerate(config.methods):
                kap = rand if method == "omp_random" else cons
                c = fourier_coeffs(phi, kap)
                try:
                    echoes = recover(method, c, h_est, T, L, grid=grid, residual_tol=None)
                except (ValueError, np.linalg.LinAlgError, ArithmeticError):
                    continue
                est = [e.delay for e in echoes]
                S[i, j, q] = count_matches(truth, est, config.pulse.delta)
    return S, achieved


def _trial_star(args):
    return run_trial(*args)


@dataclass(frozen=True, eq=False)
class SweepResult:
    config: SimConfig
    probability: np.ndarray  # (snr, eta, method)
    achieved_snr: np.ndarray  # (trial, snr)
    kappas: dict

    def rows(self):
        """CSV rows ``(snr_db, eta, method, probability)``."""
        out = []
        for i, snr in enumerate(self.config.snrs):
            for j, eta in enumerate(self.config.etas):
                for q, m in enumerate(self.config.methods):
                    out.append((float(snr), float(eta), m, float(self.probability[i, j, q])))
        return out

    def mean_by_method(self):
        return dict(zip(self.config.methods, self.probability.mean(axis=(0, 1))))


def resolve_threads(threads=None):
    if threads is None:
        threads = int(os.environ.get("CBF_THREADS", "1") or 1)
    return max(1, int(threads))


def monte_carlo_recovery(config, threads=None):
    """Recovery probability ``P = sum_i S_i / (L I)`` on the (SNR, eta) grid for each method.

    All cells of one trial share the phantom (common random numbers); each trial
    draws from its own child of ``SeedSequence(config.seed)``.
    """
    threads = resolve_threads(threads)
    root = np.random.SeedSequence(config.seed)
    kappa_seq, *trial_seqs = root.spawn(config.trials + 1)
    kappas = kappa_sets(config, np.random.default_rng(kappa_seq))
    h_est, _ = calibration_pulse(config)
    jobs = [(config, s, kappas, h_est) for s in trial_seqs]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(_trial_star, jobs))
    else:
        results = [_trial_star(j) for j in jobs]
    S = np.sum([r[0] for r in results], axis=0)
    P = S / (config.signal_count * config.trials)
    return SweepResult(config, P, np.array([r[1] for r in results]), kappas)

