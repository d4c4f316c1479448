"""Delay and amplitude recovery from Fourier-series samples.

Two paths share the model ``c = (1/T) H V b``: spectral analysis (matrix pencil,
Cadzow-denoised annihilating filter) on consecutive indices, and orthogonal
matching pursuit on a quantized delay grid.
"""

from dataclasses import dataclass
import math
import warnings

import numpy as np
from scipy import linalg

from .signal import FriEcho, pulse_spectrum


class RankError(ValueError):
    """Fewer significant singular values than the requested model order."""

    def __init__(self, effective_order, order):
        self.effective_order = effective_order
        self.order = order
        super().__init__(f"effective model order {effective_order} < requested {order}")


class ConditioningError(ValueError):
    def __init__(self, cond, pair):
        self.cond = cond
        self.pair = pair
        super().__init__(
            f"Vandermonde condition number {cond:.3g} exceeds 1e12; "
            f"closest delays {pair[0]:.9g} s and {pair[1]:.9g} s"
        )


class CadzowDivergenceWarning(RuntimeWarning):
    pass


def _spectrum_fn(pulse):
    if hasattr(pulse, "spectrum"):
        return pulse.spectrum
    return lambda w: pulse_spectrum(pulse, w)


@dataclass(frozen=True, eq=False)
class SpectralSystem:
    """Normalized samples ``y_j = T c_j / H(2 pi k_j / T) = sum_l b_l e^{-i 2 pi k_j t_l / T}``."""

    y: np.ndarray
    kappa: np.ndarray
    L: int
    T: float

    @classmethod
    def from_measurements(cls, c, pulse, T, L, floor=1e-12):
        H = _spectrum_fn(pulse)(2 * np.pi * c.kappa / T)
        mag = np.abs(H)
        if np.any(mag <= floor * mag.max()) or not mag.max() > 0:
            raise ValueError("pulse spectrum vanishes at a measured index")
        return cls(T * c.values / H, c.kappa.copy(), int(L), float(T))

    @property
    def consecutive(self):
        return self.kappa.size < 2 or bool(np.all(np.diff(self.kappa) == 1))

    def _check(self):
        if not self.consecutive:
            raise ValueError("spectral methods need consecutive indices")
        if self.L < 0:
            raise ValueError("model order must be non-negative")
        if self.kappa.size < 2 * self.L:
            raise ValueError(f"need K >= 2L ({self.kappa.size} < {2 * self.L})")


def _delays_from_roots(z, T):
    t = np.mod(-T * np.angle(z) / (2 * np.pi), T)
    return np.sort(t)


def _hankel(y, P):
    # rows are windows y[i:i+P+1]
    return linalg.hankel(y[: y.size - P], y[y.size - P - 1:])


def matrix_pencil(system, rank_tol=1e-8):
    """Delays from the shifted-Hankel generalized eigenproblem, sorted ascending."""
    system._check()
    L = system.L
    if L == 0:
        return np.zeros(0)
    y = system.y
    P = y.size // 2
    Y = _hankel(y, P)
    _, s, Vh = linalg.svd(Y, full_matrices=False)
    eff = int(np.sum(s > rank_tol * s[0])) if s[0] > 0 else 0
    if eff < L:
        raise RankError(eff, L)
    V = Vh[:L].T  # rows of Vh span the Hankel row space
    V0, V1 = V[:-1], V[1:]
    z = linalg.eigvals(linalg.pinv(V0) @ V1)
    return _delays_from_roots(z, system.T)


def estimate_order(system, gap=10.0):
    """Model order from the largest ratio gap in the Hankel singular values (advisory only)."""
    y = system.y
    s = linalg.svdvals(_hankel(y, y.size // 2))
    s = s[s > 0]
    if s.size < 2:
        return int(s.size)
    ratios = s[:-1] / s[1:]
    i = int(np.argmax(ratios))
    return i + 1 if ratios[i] >= gap else int(s.size)


def _hankel_average(Y, n):
    """Average along anti-diagonals back to a length-``n`` sequence."""
    rows, cols = Y.shape
    out = np.zeros(n, complex)
    cnt = np.zeros(n)
    for i in range(rows):
        out[i: i + cols] += Y[i]
        cnt[i: i + cols] += 1
    return out / cnt


def cadzow(y, L, iterations=20, P=None):
    """Alternate rank-``L`` truncation and Hankel re-averaging.

    Returns ``(denoised, diverged)``; ``diverged`` is set when the distance of
    the rank-``L`` iterate to the Hankel set grows between rounds.
    """
    y = np.asarray(y, complex)
    P = y.size // 2 if P is None else P
    diverged = False
    prev = np.inf
    for _ in range(iterations):
        Y = _hankel(y, P)
        U, s, Vh = linalg.svd(Y, full_matrices=False)
        low = (U[:, :L] * s[:L]) @ Vh[:L]
        y_new = _hankel_average(low, y.size)
        dist = np.linalg.norm(low - _hankel(y_new, P))
        if dist > prev * (1 + 1e-9) and dist > 1e-12 * np.linalg.norm(low):
            diverged = True
        prev = dist
        y = y_new
    return y, diverged


def annihilating_tls(y, L, T):
    """Delays from the total-least-squares annihilating filter of length ``L + 1``."""
    y = np.asarray(y, complex)
    # rows [y_j, y_{j-1}, ..., y_{j-L}] for j = L .. K-1
    A = linalg.toeplitz(y[L:], y[L::-1])
    _, _, Vh = linalg.svd(A)
    h = Vh[-1].conj()
    z = np.roots(h)
    if z.size != L:
        raise RankError(int(z.size), L)
    return _delays_from_roots(z, T)


def cadzow_tls(system, iterations=20):
    """Cadzow denoising followed by TLS annihilating-filter root finding.

    A :class:`CadzowDivergenceWarning` is issued when the denoising distance
    increases between iterations.
    """
    system._check()
    if system.L == 0:
        return np.zeros(0)
    y, diverged = cadzow(system.y, system.L, iterations)
    if diverged:
        warnings.warn("Cadzow iterations increased the Hankel distance", CadzowDivergenceWarning,
                      stacklevel=2)
    return annihilating_tls(y, system.L, system.T)


def vandermonde(kappa, delays, T):
    return np.exp(-2j * np.pi * np.outer(kappa, delays) / T)


def solve_amplitudes(c, pulse, T, delays, cond_limit=1e12):
    """Least-squares complex amplitudes for ``c = (1/T) H V b``.

    ``arg(b_l)`` is the carrier-phase offset of echo ``l`` relative to the pulse.
    """
    delays = np.asarray(delays, dtype=float)
    if delays.size == 0:
        return np.zeros(0, complex)
    if c.kappa.size < delays.size:
        raise ValueError("need at least as many coefficients as delays")
    V = vandermonde(c.kappa, delays, T)
    cond = np.linalg.cond(V)
    if not cond <= cond_limit:
        order = np.argsort(delays)
        d = delays[order]
        i = int(np.argmin(np.diff(d))) if d.size > 1 else 0
        raise ConditioningError(cond, (float(d[i]), float(d[min(i + 1, d.size - 1)])))
    H = _spectrum_fn(pulse)(2 * np.pi * c.kappa / T)
    A = H[:, None] * V / T
    b, *_ = linalg.lstsq(A, c.values)
    return b


@dataclass(frozen=True)
class RecoveryGrid:
    """Delay grid ``t = q T / N`` for ``q = 0 .. N-1``."""

    N: int
    T: float

    def __post_init__(self):
        if self.N < 1 or self.T <= 0:
            raise ValueError("grid needs N >= 1 and T > 0")

    @property
    def delta_s(self):
        return self.T / self.N

    @property
    def delays(self):
        return np.arange(self.N) * self.delta_s

    def sensing_matrix(self, kappa, pulse):
        """``A = (1/T) H V_hat`` with ``V_hat[j, q] = e^{-i 2 pi k_j q / N}``."""
        kappa = np.asarray(kappa, dtype=np.int64)
        if self.N < kappa.size:
            raise ValueError("grid size must be at least K")
        H = _spectrum_fn(pulse)(2 * np.pi * kappa / self.T)
        phase = np.mod(np.outer(kappa, np.arange(self.N)), self.N)
        return H[:, None] * np.exp(-2j * np.pi * phase / self.N) / self.T


@dataclass(frozen=True, eq=False)
class OmpResult:
    support: np.ndarray
    amplitudes: np.ndarray
    residual: float
    grid: RecoveryGrid

    @property
    def delays(self):
        return self.support * self.grid.delta_s

    def echoes(self):
        order = np.argsort(self.support)
        return [FriEcho(float(self.delays[i]), complex(self.amplitudes[i])) for i in order]


def omp(A, c, L_max, residual_tol=1e-6):
    """Orthogonal matching pursuit on a dense matrix; returns ``(support, x_support, residual)``."""
    c = np.asarray(c, complex)
    norms = np.linalg.norm(A, axis=0)
    norms = np.where(norms > 0, norms, 1.0)
    An = A / norms
    target = np.linalg.norm(c)
    support = []
    x = np.zeros(0, complex)
    r = c.copy()
    if target == 0:
        return np.zeros(0, np.int64), x, 0.0
    while len(support) < L_max:
        if residual_tol is not None and np.linalg.norm(r) < residual_tol * target:
            break
        corr = np.abs(An.conj().T @ r)
        corr[support] = -1.0
        best = corr.max()
        # ties (to rounding) resolve to the lowest index
        q = int(np.flatnonzero(corr >= best * (1 - 1e-12))[0])
        support.append(q)
        x, *_ = linalg.lstsq(A[:, support], c)
        r = c - A[:, support] @ x
    return np.array(support, np.int64), x, float(np.linalg.norm(r))


def omp_recover(c, pulse, T, grid, L_max, residual_tol=1e-6):
    """OMP on the quantized delay grid; ``residual_tol=None`` runs exactly ``L_max`` rounds."""
    if grid.T != T:
        grid = RecoveryGrid(grid.N, T)
    A = grid.sensing_matrix(c.kappa, pulse)
    support, x, res = omp(A, c.values, L_max, residual_tol)
    return OmpResult(support, x, res, grid)


def rip_sizing(L, N, C=1.0):
    """Diagnostic ``C L (log N)^4`` measurement count; never enforced."""
    return C * L * math.log(N) ** 4


class EmpiricalPulse:
    """Pulse spectrum estimated from a calibration trace holding one echo at ``delay``.

    ``H(2 pi k / T) = T c_k e^{i 2 pi k t_f / T}`` for any index below the
    trace's Nyquist index; frequencies off the ``2 pi / T`` lattice are rejected.
    """

    def __init__(self, trace, delay):
        self.T = trace.duration
        self.delay = float(delay)
        self.trace = trace
        n = len(trace)
        k = np.arange(n)
        self._H = self.T * np.fft.fft(trace.samples) / n * np.exp(2j * np.pi * k * self.delay / self.T)

    def spectrum(self, omega):
        x = np.asarray(omega, dtype=float) * self.T / (2 * np.pi)
        k = np.rint(x).astype(np.int64)
        if np.any(np.abs(x - k) > 1e-6):
            raise ValueError("frequencies must lie on the 2 pi k / T lattice")
        if np.any(2 * np.abs(k) >= self._H.size):
            raise ValueError("index beyond the calibration trace's Nyquist index")
        return self._H[k % self._H.size]


def recover(method, c, pulse, T, L, grid=None, iterations=20, residual_tol=None, snap=False):
    """Dispatch to a recovery method; returns the list of recovered echoes sorted by delay.

    With ``snap=True`` (spectral methods only) the gridless delays are rounded to
    ``grid`` before the amplitude solve, which is exact for on-grid scenes.
    """
    if method in ("matrix_pencil", "cadzow_tls"):
        system = SpectralSystem.from_measurements(c, pulse, T, L)
        if method == "matrix_pencil":
            delays = matrix_pencil(system)
        else:
            delays = cadzow_tls(system, iterations)
        if snap:
            if grid is None:
                raise ValueError("snapping needs a recovery grid")
            delays = np.round(delays / grid.delta_s) % grid.N * grid.delta_s
            delays = np.sort(delays)
        b = solve_amplitudes(c, pulse, T, delays, cond_limit=np.inf)
        return [FriEcho(float(t), complex(a)) for t, a in zip(delays, b)]
    if method in ("omp", "omp_consecutive", "omp_random"):
        if grid is None:
            raise ValueError("OMP needs a recovery grid")
        return omp_recover(c, pulse, T, grid, L, residual_tol).echoes()
    raise ValueError(f"unknown recovery method {method!r}")


def result_rows(method, echoes, residual=float("nan")):
    """CSV rows ``(method, L, delay_s, re_b, im_b, residual)``."""
    L = len(echoes)
    return [(method, L, e.delay, complex(e.amplitude).real, complex(e.amplitude).imag, residual)
            for e in echoes]
