"""Pulse models, FRI trace synthesis and Fourier-series projection.

Everything here works on a dense, uniformly sampled "analog surrogate" grid
``t_n = n / rate`` for ``n = 0 .. N-1`` with ``N = round(rate * duration)``.
"""

from dataclasses import dataclass, field
import math

import numpy as np


@dataclass(frozen=True)
class TwoWayPulse:
    """Gaussian-modulated carrier ``g(t - center) cos(2 pi f0 t + beta)`` on ``[0, delta)``.

    ``delta`` defaults to ``10 * sigma`` and ``envelope_center`` to ``delta / 2``.
    """

    sigma: float
    f0: float
    beta: float = 0.0
    delta: float = None
    envelope_center: float = None

    def __post_init__(self):
        if self.sigma <= 0 or self.f0 <= 0:
            raise ValueError("sigma and f0 must be positive")
        if self.delta is None:
            object.__setattr__(self, "delta", 10.0 * self.sigma)
        if self.envelope_center is None:
            object.__setattr__(self, "envelope_center", self.delta / 2.0)
        if self.delta <= 0:
            raise ValueError("pulse support delta must be positive")
        # keeps the truncated envelope energy below 1e-6 of the total
        if self.delta < 10.0 * self.sigma * (1 - 1e-12):
            raise ValueError(
                f"support {self.delta:g} s shorter than 10 sigma ({10 * self.sigma:g} s)"
            )
        if not 0 <= self.envelope_center < self.delta:
            raise ValueError("envelope_center must lie inside [0, delta)")

    @property
    def omega0(self):
        return 2 * np.pi * self.f0

    def __call__(self, t):
        return pulse_eval(self, t)

    def spectrum(self, omega):
        return pulse_spectrum(self, omega)

    def envelope_spectrum(self, omega):
        """Fourier transform of the unit-peak Gaussian envelope (centered at 0)."""
        omega = np.asarray(omega, dtype=float)
        return self.sigma * math.sqrt(2 * np.pi) * np.exp(-0.5 * (self.sigma * omega) ** 2)

    def bandwidth(self, db=50.0):
        """Upper frequency (Hz) where ``|H|`` has fallen ``db`` below its peak."""
        half = math.sqrt(2 * db * math.log(10) / 20) / self.sigma
        return self.f0 + half / (2 * np.pi)


def pulse_eval(pulse, t):
    """Evaluate the hard-truncated two-way pulse at times ``t`` (seconds)."""
    t = np.asarray(t, dtype=float)
    u = t - pulse.envelope_center
    env = np.exp(-0.5 * (u / pulse.sigma) ** 2)
    val = env * np.cos(pulse.omega0 * t + pulse.beta)
    return np.where((t >= 0) & (t < pulse.delta), val, 0.0)


def pulse_spectrum(pulse, omega):
    """Closed-form CTFT of the untruncated pulse at angular frequencies ``omega``.

    ``H(w) = 1/2 e^{i beta} G(w - w0) e^{-i (w - w0) c} + 1/2 e^{-i beta} G(w + w0) e^{-i (w + w0) c}``
    where ``c`` is the envelope center; the shift phases make ``H`` match the
    projection of the actual pulse.
    """
    omega = np.asarray(omega, dtype=float)
    c, w0 = pulse.envelope_center, pulse.omega0
    pos = 0.5 * np.exp(1j * pulse.beta) * pulse.envelope_spectrum(omega - w0) * np.exp(-1j * (omega - w0) * c)
    neg = 0.5 * np.exp(-1j * pulse.beta) * pulse.envelope_spectrum(omega + w0) * np.exp(-1j * (omega + w0) * c)
    return pos + neg


def spectral_ratio(pulse, omega):
    """``|G(w + w0) / G(w - w0)|``, the weight of the conjugate-carrier term."""
    omega = np.asarray(omega, dtype=float)
    return np.exp(-2 * pulse.sigma ** 2 * omega * pulse.omega0)


def phase_validity_index(pulse, duration):
    """Smallest Fourier index allowed by ``k >= 5 T / (4 pi sigma^2 w0)``.

    Above this index the conjugate-carrier term is below 1% of the main term, so
    recovered complex amplitudes carry the echo carrier phase.
    """
    bound = 5 * duration / (4 * np.pi * pulse.sigma ** 2 * pulse.omega0)
    return int(math.ceil(bound))


def min_index_below_ratio(pulse, duration, ratio=1e-2):
    """Smallest non-negative integer index whose exact spectral ratio is below ``ratio``."""
    # ratio(k) = exp(-2 sigma^2 w0 2 pi k / T), strictly decreasing in k
    k = -math.log(ratio) * duration / (4 * np.pi * pulse.sigma ** 2 * pulse.omega0)
    kk = int(math.floor(k))
    while spectral_ratio(pulse, 2 * np.pi * kk / duration) >= ratio:
        kk += 1
    return kk


@dataclass(frozen=True, eq=False)
class SampledTrace:
    """Uniformly sampled real signal over ``[0, duration)``."""

    samples: np.ndarray
    rate: float
    duration: float

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=float)
        object.__setattr__(self, "samples", samples)
        n = int(round(self.rate * self.duration))
        if samples.ndim != 1 or samples.size != n:
            raise ValueError(
                f"trace has {samples.size} samples, expected round(rate*duration) = {n}"
            )

    def __len__(self):
        return self.samples.size

    @property
    def times(self):
        return np.arange(self.samples.size) / self.rate

    @property
    def energy(self):
        """Riemann approximation of the integral of the squared signal."""
        return float(np.sum(self.samples ** 2) / self.rate)

    def with_samples(self, samples):
        return SampledTrace(samples, self.rate, self.duration)


def sample_count(rate, duration):
    return int(round(rate * duration))


@dataclass(frozen=True)
class FriEcho:
    """One echo: delay ``t_l`` (s) and complex amplitude ``b_l``."""

    delay: float
    amplitude: complex = 1.0

    def __post_init__(self):
        if self.delay < 0:
            raise ValueError("echo delay must be non-negative")


@dataclass(frozen=True, eq=False)
class MeasurementVector:
    """Complex Fourier-series samples ``values[j]`` at indices ``kappa[j]``."""

    kappa: np.ndarray
    values: np.ndarray = field(default=None)

    def __post_init__(self):
        kappa = np.asarray(self.kappa, dtype=np.int64)
        values = np.zeros(kappa.size, complex) if self.values is None else np.asarray(self.values, complex)
        if kappa.ndim != 1 or values.shape != kappa.shape:
            raise ValueError("kappa and values must be 1-D and of equal length")
        if kappa.size > 1 and np.any(np.diff(kappa) <= 0):
            raise ValueError("kappa must be strictly increasing")
        object.__setattr__(self, "kappa", kappa)
        object.__setattr__(self, "values", values)

    def __len__(self):
        return self.kappa.size

    def __add__(self, other):
        if not np.array_equal(self.kappa, other.kappa):
            raise ValueError("index sets differ")
        return MeasurementVector(self.kappa, self.values + other.values)

    def scaled(self, alpha):
        return MeasurementVector(self.kappa, alpha * self.values)


def check_dense_rate(pulse, rate):
    """Raise if ``rate`` is below 4x the pulse's -50 dB bandwidth."""
    need = 4 * pulse.bandwidth(50.0)
    if rate < need:
        raise ValueError(f"rate {rate:g} Hz below dense-grid minimum {need:g} Hz")


def _echo_params(echoes):
    delays = np.array([e.delay for e in echoes], dtype=float)
    amps = np.array([e.amplitude for e in echoes], dtype=complex)
    return delays, amps


def synthesize_fri(pulse, echoes, rate, duration):
    """Sum of shifted, phase-rotated pulses sampled on the dense grid.

    Echo ``l`` contributes ``|b_l| g(t - t_l - c) cos(w0 (t - t_l) + beta + arg b_l)``
    on ``[t_l, t_l + delta)``. Zero-phase echoes give ``sum b_l h(t - t_l)``.
    """
    check_dense_rate(pulse, rate)
    n = sample_count(rate, duration)
    out = np.zeros(n)
    delays, amps = _echo_params(echoes)
    if np.any(delays >= duration):
        raise ValueError("echo delay beyond trace duration")
    width = int(math.ceil(pulse.delta * rate)) + 1
    offsets = np.arange(width)
    c = pulse.envelope_center
    for t_l, b in zip(delays, amps):
        start = int(math.ceil(t_l * rate - 1e-9))
        idx = start + offsets
        idx = idx[idx < n]
        u = idx / rate - t_l
        env = np.exp(-0.5 * ((u - c) / pulse.sigma) ** 2)
        val = abs(b) * env * np.cos(pulse.omega0 * u + pulse.beta + np.angle(b))
        out[idx] += np.where((u >= 0) & (u < pulse.delta), val, 0.0)
    return SampledTrace(out, rate, duration)


def fri_coefficients(pulse, echoes, kappa, duration):
    """Closed-form ``(1/T) H(2 pi k / T) sum_l b_l e^{-i 2 pi k t_l / T}``."""
    kappa = np.asarray(kappa)
    delays, amps = _echo_params(echoes)
    omega = 2 * np.pi * kappa / duration
    V = np.exp(-1j * np.outer(omega, delays))
    return MeasurementVector(kappa, pulse_spectrum(pulse, omega) * (V @ amps) / duration)


def fourier_coeffs(trace, kappa):
    """Fourier-series coefficients ``(1/T) int_0^T x(t) e^{-i 2 pi k t / T} dt``.

    The periodic trapezoid rule on the sample grid reduces to ``DFT[k] / N``.
    """
    kappa = np.asarray(kappa, dtype=np.int64)
    n = len(trace)
    if np.any(2 * np.abs(kappa) >= n):
        raise ValueError("Fourier index at or beyond the dense grid's Nyquist index")
    spec = np.fft.fft(trace.samples) / n
    return MeasurementVector(kappa, spec[kappa % n])


def kappa_consecutive(k0, K):
    """``{k0 - floor(K/2), ..., k0 + ceil(K/2) - 1}``."""
    if K < 1:
        raise ValueError("K must be at least 1")
    return np.arange(k0 - K // 2, k0 - K // 2 + K, dtype=np.int64)


def admissible_indices(pulse, duration, threshold_db):
    """Non-negative indices whose ``|H(2 pi k / T)|`` is within ``threshold_db`` of the peak."""
    kmax = int(math.ceil((pulse.f0 + 10 / (2 * np.pi * pulse.sigma)) * duration)) + 1
    k = np.arange(0, kmax + 1)
    mag = np.abs(pulse_spectrum(pulse, 2 * np.pi * k / duration))
    db = 20 * np.log10(np.maximum(mag, 1e-300) / mag.max())
    return k[db >= -threshold_db]


def kappa_random(pulse, duration, K, threshold_db, seed):
    """``K`` distinct admissible indices drawn uniformly without replacement, sorted."""
    pool = admissible_indices(pulse, duration, threshold_db)
    if K < 1 or pool.size < K:
        raise ValueError(
            f"only {pool.size} indices within {threshold_db} dB of the peak, {K} requested"
        )
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return np.sort(rng.choice(pool, size=K, replace=False)).astype(np.int64)
