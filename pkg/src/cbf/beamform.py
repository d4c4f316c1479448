"""Dynamic-focus delay-and-sum beamforming on a linear array.

Element ``m`` sits at signed lateral offset ``delta_m`` from the reference
element, ``gamma_m = delta_m / c``. A reflection from depth ``c t / 2`` along
the steering direction reaches element ``m`` at time ``tau(gamma_m, t, theta)``.
Element indices are 0-based throughout.
"""

from dataclasses import dataclass
import math
import warnings

import numpy as np

from .signal import SampledTrace, pulse_eval

SPEED_OF_SOUND = 1540.0


@dataclass(frozen=True, eq=False)
class ArrayGeometry:
    offsets: np.ndarray
    speed: float = SPEED_OF_SOUND
    reference_index: int = 0

    def __post_init__(self):
        offsets = np.asarray(self.offsets, dtype=float)
        object.__setattr__(self, "offsets", offsets)
        if offsets.ndim != 1 or offsets.size == 0:
            raise ValueError("offsets must be a non-empty 1-D sequence")
        if self.speed <= 0:
            raise ValueError("speed must be positive")
        if not 0 <= self.reference_index < offsets.size:
            raise ValueError("reference_index out of range")
        if offsets[self.reference_index] != 0:
            raise ValueError("reference element must have zero offset")

    @classmethod
    def linear(cls, count, pitch, reference_index=None, speed=SPEED_OF_SOUND):
        """Uniform array of ``count`` elements; reference defaults to the middle one."""
        if reference_index is None:
            reference_index = (count - 1) // 2
        offsets = (np.arange(count) - reference_index) * pitch
        return cls(offsets, speed, reference_index)

    @property
    def count(self):
        return self.offsets.size

    @property
    def gammas(self):
        return self.offsets / self.speed


@dataclass(frozen=True, eq=False)
class Apodization:
    """Static element weights plus the ``t >= 2|gamma_m|`` receive gate.

    Gated-out elements are dropped and the remaining weights are renormalized
    to sum to one at every instant.
    """

    weights: np.ndarray
    gated: bool = True

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1 or np.any(w < 0) or not np.any(w > 0):
            raise ValueError("weights must be non-negative with at least one positive entry")
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, count, gated=True):
        return cls(np.ones(count), gated)

    @classmethod
    def hanning(cls, count, gated=True):
        # interior of an (M+2)-point Hann window, so edge elements keep a nonzero weight
        return cls(np.hanning(count + 2)[1:-1], gated)

    @classmethod
    def from_name(cls, name, count, gated=True):
        try:
            return {"uniform": cls.uniform, "hanning": cls.hanning}[name](count, gated)
        except KeyError:
            raise ValueError(f"unknown apodization window {name!r}") from None

    def gate_times(self, geometry):
        if not self.gated:
            return np.zeros(geometry.count)
        return 2 * np.abs(geometry.gammas)

    def effective(self, geometry, t):
        """Normalized weights, shape ``(M, len(t))``; columns with no active element are zero."""
        self._check(geometry)
        t = np.atleast_1d(np.asarray(t, dtype=float))
        active = t[None, :] >= self.gate_times(geometry)[:, None]
        w = np.where(active, self.weights[:, None], 0.0)
        total = w.sum(axis=0)
        return np.divide(w, total, out=np.zeros_like(w), where=total > 0)

    def static(self, geometry):
        """Weights normalized over all elements (no time dependence)."""
        self._check(geometry)
        return self.weights / self.weights.sum()

    def _check(self, geometry):
        if self.weights.size != geometry.count:
            raise ValueError("apodization length does not match the element count")


def _check_theta(theta):
    if not abs(theta) < np.pi / 2:
        raise ValueError("steering angle must satisfy |theta| < pi/2")


def tau(gamma, t, theta):
    """Element arrival time ``(t + sqrt(t^2 - 4 gamma t sin(theta) + 4 gamma^2)) / 2``."""
    gamma = np.asarray(gamma, dtype=float)
    t = np.asarray(t, dtype=float)
    s = math.sin(theta)
    return 0.5 * (t + np.sqrt(t * t - 4 * gamma * t * s + 4 * gamma * gamma))


def tau_inverse(gamma, t, theta):
    """Inverse map ``(t^2 - gamma^2) / (t - gamma sin(theta))``, valid for ``t >= |gamma|``."""
    gamma = np.asarray(gamma, dtype=float)
    t = np.asarray(t, dtype=float)
    if np.any(t < np.abs(gamma)):
        raise ValueError("tau_inverse requires t >= |gamma|")
    s = math.sin(theta)
    den = t - gamma * s
    safe = np.where(gamma == 0, 1.0, den)
    return np.where(gamma == 0, t, (t * t - gamma * gamma) / safe)


def tau_derivative(gamma, t, theta):
    s = math.sin(theta)
    gamma = np.asarray(gamma, dtype=float)
    r = np.sqrt(t * t - 4 * gamma * t * s + 4 * gamma * gamma)
    return 0.5 * (1 + (t - 2 * gamma * s) / r)


def support_bound(geometry, theta, T):
    """Upper bound ``T_B(theta) = min_m tau_inverse(gamma_m, T, theta)`` on the beamformed support."""
    _check_theta(theta)
    g = geometry.gammas
    if not T > np.max(np.abs(g)):
        raise ValueError("frame length must exceed every |gamma_m|")
    return float(np.min(tau_inverse(g, T, theta)))


def _radicand(gamma, t_l, theta):
    s = math.sin(theta)
    return t_l * t_l - 4 * gamma * t_l * s + 4 * gamma * gamma


def distortion_sigma(gamma, t_l, theta):
    """Local time-compression factor of echo ``l`` at element ``m`` (1 means undistorted)."""
    r2 = _radicand(gamma, t_l, theta)
    if np.any(r2 <= 0):
        raise ValueError("distortion factor is singular (zero radicand)")
    return 0.5 * (1 + (t_l - 2 * gamma * math.sin(theta)) / np.sqrt(r2))


def distorted_support(gamma, t_l, theta, delta, check=True):
    """Support length of the distorted pulse ``h(tau(t) - tau(t_l))`` starting at ``t_l``."""
    if check and np.any(2 * np.abs(gamma) > t_l):
        warnings.warn("2|gamma| > t_l: the 2*delta support bound is not guaranteed", stacklevel=2)
    r = np.sqrt(_radicand(gamma, t_l, theta))
    return 2 * delta * (r + delta) / (r + 2 * delta + t_l - 2 * gamma * math.sin(theta))


def _stack(traces):
    traces = list(traces)
    rate, duration = traces[0].rate, traces[0].duration
    for tr in traces[1:]:
        if tr.rate != rate or tr.duration != duration or len(tr) != len(traces[0]):
            raise ValueError("all element traces must share rate and duration")
    return np.vstack([tr.samples for tr in traces]), rate, duration


def beamform(traces, geometry, theta, apodization=None):
    """Delay-and-sum with dynamic receive focus along ``theta``.

    ``Phi(t) = sum_m w_m(t) phi_m(tau(gamma_m, t, theta))`` for ``t < T_B(theta)``,
    zero afterwards. Element traces are linearly interpolated.
    """
    _check_theta(theta)
    data, rate, duration = _stack(traces)
    if data.shape[0] != geometry.count:
        raise ValueError(f"{data.shape[0]} traces for {geometry.count} elements")
    if apodization is None:
        apodization = Apodization.uniform(geometry.count)
    n = data.shape[1]
    t = np.arange(n) / rate
    t_b = support_bound(geometry, theta, duration)
    inside = t < t_b
    ti = t[inside]
    w = apodization.effective(geometry, ti)
    out = np.zeros(n)
    acc = np.zeros(ti.size)
    for m, g in enumerate(geometry.gammas):
        if not np.any(w[m]):
            continue
        acc += w[m] * np.interp(tau(g, ti, theta), t, data[m], right=0.0)
    out[inside] = acc
    return SampledTrace(out, rate, duration)


def projection_error_experiment(geometry, pulse, delays, theta, kappa, duration, rate,
                                elements=None):
    """Projection SNR (dB) of distorted single-echo traces versus the reference element.

    For each element and delay ``t_l`` the distorted echo ``h(tau_m(t) - tau_m(t_l))``
    and the undistorted ``h(t - t_l)`` are projected onto ``kappa``; the result is
    ``20 log10(|Phi_ref| / |Phi_m - Phi_ref|)``. The reference element yields ``inf``.

    Returns ``(elements, snr)`` with ``snr.shape == (len(elements), len(delays))``.
    """
    _check_theta(theta)
    kappa = np.asarray(kappa, dtype=np.int64)
    delays = np.asarray(delays, dtype=float)
    if elements is None:
        elements = np.arange(geometry.count)
    elements = np.asarray(elements)
    gam = geometry.gammas[elements][:, None]
    n_total = int(round(rate * duration))
    if np.any(2 * np.abs(kappa) >= n_total):
        raise ValueError("kappa beyond the dense grid's Nyquist index")
    snr = np.empty((elements.size, delays.size))
    for i, t_l in enumerate(delays):
        end = tau_inverse(gam[:, 0], tau(gam[:, 0], t_l, theta) + pulse.delta, theta)
        width = int(math.ceil((max(float(np.max(end)), t_l + pulse.delta) - t_l) * rate)) + 2
        start = int(math.ceil(t_l * rate - 1e-9))
        n = start + np.arange(width)
        if n[-1] >= n_total:
            raise ValueError("distorted echo extends past the frame; shorten the delay grid")
        t = n / rate
        ref = pulse_eval(pulse, t - t_l)
        dist = pulse_eval(pulse, tau(gam, t[None, :], theta) - tau(gam, t_l, theta))
        E = np.exp(-2j * np.pi * np.outer(n, kappa) / n_total) / n_total
        c_ref = ref @ E
        c_m = dist @ E
        num = np.linalg.norm(c_ref)
        err = np.linalg.norm(c_m - c_ref[None, :], axis=1)
        err[gam[:, 0] == 0] = 0.0  # undistorted by construction
        with np.errstate(divide="ignore"):
            snr[:, i] = np.where(err > 0, 20 * np.log10(num / np.where(err > 0, err, 1.0)), np.inf)
    return elements, snr

