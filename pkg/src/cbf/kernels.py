"""Compressed beamforming with distorted analog kernels.

Each element trace is modulated by ``g_{j,m}(t) = q_{j,m}(t) e^{-i 2 pi k_j t / T}``
and integrated; a weighted average over elements gives the Fourier-series
coefficients of the beamformed signal without ever forming it. The analog
modulation is simulated on the dense sample grid.
"""

from dataclasses import dataclass
import math

import numpy as np

from .beamform import Apodization, support_bound, tau
from .signal import MeasurementVector


@dataclass(frozen=True)
class DistortedKernelSpec:
    """Parameters of one kernel ``q_{j,m}``.

    ``gate_start`` is the beamformed-time instant from which the element
    contributes (0 reproduces the bare indicator on ``[|gamma|, T_m)``).
    """

    fourier_index: int
    gamma: float
    theta: float
    T: float
    T_B: float
    gate_start: float = 0.0

    def __post_init__(self):
        if not abs(self.theta) < np.pi / 2:
            raise ValueError("steering angle must satisfy |theta| < pi/2")
        if not 0 < self.T_B <= self.T * (1 + 1e-12):
            raise ValueError("need 0 < T_B <= T")
        if not abs(self.gamma) <= self.T_m <= self.T * (1 + 1e-12):
            raise ValueError("need |gamma| <= T_m <= T")

    @property
    def T_m(self):
        """Element-time end of the gate, ``tau(gamma, T_B, theta)``."""
        return float(tau(self.gamma, self.T_B, self.theta))

    @property
    def lower(self):
        """Element-time start of the gate, ``tau(gamma, gate_start, theta)``."""
        return float(tau(self.gamma, self.gate_start, self.theta))

    def with_index(self, k):
        return DistortedKernelSpec(int(k), self.gamma, self.theta, self.T, self.T_B, self.gate_start)


def kernel_specs(geometry, theta, kappa, T, apodization=None):
    """Kernel parameters for every element (rows) and index in ``kappa`` (columns).

    ``T_B`` always comes from :func:`support_bound` so gates are consistent.
    """
    t_b = support_bound(geometry, theta, T)
    gates = np.zeros(geometry.count) if apodization is None else apodization.gate_times(geometry)
    return [
        [DistortedKernelSpec(int(k), float(g), theta, T, t_b, float(gs)) for k in kappa]
        for g, gs in zip(geometry.gammas, gates)
    ]


def _amplitude_and_phase(spec, t):
    """Gate-masked Jacobian and the per-unit-index phase ``psi`` with ``q = A e^{i k psi}``."""
    t = np.asarray(t, dtype=float)
    gate = (t >= spec.lower) & (t < spec.T_m)
    if spec.gamma == 0:
        return gate.astype(float), np.zeros_like(t)
    s, c = math.sin(spec.theta), math.cos(spec.theta)
    g = spec.gamma
    den = t - g * s
    if np.any(gate & (den == 0)):
        raise ZeroDivisionError("kernel singular at t = gamma sin(theta)")
    den = np.where(gate, den, 1.0)
    amp = np.where(gate, 1 + (g * c) ** 2 / den ** 2, 0.0)
    psi = np.where(gate, 2 * np.pi / spec.T * g * (g - t * s) / den, 0.0)
    return amp, psi


def kernel_q(spec, t):
    """``I(t) (1 + gamma^2 cos^2 / (t - gamma sin)^2) exp{i 2pi k gamma (gamma - t sin) / (T (t - gamma sin))}``."""
    amp, psi = _amplitude_and_phase(spec, t)
    return amp * np.exp(1j * spec.fourier_index * psi)


def kernel_g(spec, t):
    """Full modulation kernel ``q(t) e^{-i 2 pi k t / T}``."""
    t = np.asarray(t, dtype=float)
    return kernel_q(spec, t) * np.exp(-2j * np.pi * spec.fourier_index * t / spec.T)


def xample_channel(trace, spec):
    """``(1/T) int g_{j,m}(t) phi_m(t) dt`` by the periodic trapezoid rule."""
    return xample_channels(trace, [spec])[0]


def xample_channels(trace, specs):
    """Channel outputs of one element for a bank of kernels sharing ``gamma``, ``theta`` and gate."""
    if not specs:
        return np.zeros(0, complex)
    spec0 = specs[0]
    if abs(trace.duration - spec0.T) > 1e-12 * spec0.T:
        raise ValueError("trace duration must equal the kernel frame length T")
    t = trace.times
    amp, psi = _amplitude_and_phase(spec0, t)
    w = amp * trace.samples
    nz = np.flatnonzero(w)
    if nz.size == 0:
        return np.zeros(len(specs), complex)
    k = np.array([s.fourier_index for s in specs], dtype=float)
    phase = np.outer(k, psi[nz] - 2 * np.pi * t[nz] / spec0.T)
    return np.exp(1j * phase) @ w[nz] / len(trace)


def xample_average(values, weights, active=None):
    """Weighted average of per-element channel values over the active elements.

    ``values`` has one row per element (and optionally one column per index).
    """
    values = np.asarray(values)
    weights = np.asarray(weights, dtype=float)
    if values.shape[0] != weights.size:
        raise ValueError("need one value (row) per element")
    if active is None:
        active = weights > 0
    w = np.where(active, weights, 0.0)
    total = w.sum()
    if total <= 0:
        raise ValueError("every element is gated out")
    return np.tensordot(w / total, values, axes=(0, 0))


def xample_exact(traces, geometry, theta, kappa, apodization=None):
    """Beamformed Fourier coefficients from per-element traces via distorted kernels.

    Returns ``(c, per_element)`` where ``per_element[m, j] = c_{j,m}``.
    """
    if apodization is None:
        apodization = Apodization.uniform(geometry.count)
    kappa = np.asarray(kappa, dtype=np.int64)
    traces = list(traces)
    if len(traces) != geometry.count:
        raise ValueError("one trace per element required")
    specs = kernel_specs(geometry, theta, kappa, traces[0].duration, apodization)
    per = np.vstack([xample_channels(tr, row) for tr, row in zip(traces, specs)])
    c = xample_average(per, apodization.static(geometry))
    return MeasurementVector(kappa, c), per


def kernel_bank(geometry, theta, kappa, T, rate, elements=None, apodization=None):
    """Rows ``(k, element, t, Re g, Im g)`` over each kernel's support, for export."""
    specs = kernel_specs(geometry, theta, kappa, T, apodization)
    if elements is None:
        elements = range(geometry.count)
    t = np.arange(int(round(rate * T))) / rate
    rows = []
    for m in elements:
        for spec in specs[m]:
            g = kernel_g(spec, t)
            for ti, gi in zip(t, g):
                rows.append((spec.fourier_index, int(m), float(ti), float(gi.real), float(gi.imag)))
    return rows
