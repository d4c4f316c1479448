"""Approximated compressed beamforming from per-element Fourier coefficients.

``c_{j,m} = sum_n phi_m[k_j - n] Q_{j,m}[n]`` is truncated to a window
``N1 <= n <= N2`` holding a fraction ``rho^2`` of the energy of ``Q``; the
truncated sums for all ``k_j`` form a sparse ``K x K_m`` matrix ``A_m``
acting on the element's coefficients at the index set ``kappa_m``.
"""

from dataclasses import dataclass, field
import hashlib
import json
import struct
from pathlib import Path

import numpy as np
from scipy import sparse

from .beamform import Apodization
from .kernels import _amplitude_and_phase, kernel_q, kernel_specs, xample_average
from .signal import MeasurementVector


class TruncationError(RuntimeError):
    """The energy target was not reached inside the search limit."""

    def __init__(self, achieved, target, limit):
        self.achieved = achieved
        self.target = target
        super().__init__(
            f"energy fraction {achieved:.6f} < target {target} within search limit {limit}"
        )


def _grid(T, rate):
    n = int(round(rate * T))
    return np.arange(n) / rate, np.fft.fftfreq(n, 1.0 / n).round().astype(np.int64)


def kernel_spectrum(spec, rate):
    """All Fourier-series coefficients of ``q`` on a grid of ``rate``; returns ``(n, Q)``."""
    t, n = _grid(spec.T, rate)
    return n, np.fft.fft(kernel_q(spec, t)) / t.size


def q_fourier(spec, n, rate):
    """``Q[n] = (1/T) int_0^T q(t) e^{-i 2 pi n t / T} dt`` by the periodic trapezoid rule."""
    t, _ = _grid(spec.T, rate)
    n = np.asarray(n, dtype=np.int64)
    if np.any(2 * np.abs(n) >= t.size):
        raise ValueError("index beyond the grid's Nyquist index")
    full = np.fft.fft(kernel_q(spec, t)) / t.size
    return full[n % t.size]


def _element_spectra(specs, rate):
    """Spectra of the kernels of one element (shared gate) stacked as rows: ``(n, Q[K, N])``."""
    t, n = _grid(specs[0].T, rate)
    amp, psi = _amplitude_and_phase(specs[0], t)
    k = np.array([s.fourier_index for s in specs], dtype=float)
    q = amp[None, :] * np.exp(1j * np.outer(k, psi))
    return n, np.fft.fft(q, axis=1) / t.size


def select_windows(energy, n, rho_sq_target, search_limit):
    """Greedy window growth for each row of ``energy = |Q|^2``.

    Starts at the index nearest the energy centroid and repeatedly extends the
    side whose next coefficient carries more energy (ties extend ``N2``) until
    the captured fraction reaches ``rho_sq_target``. Returns ``(N1, N2, achieved)``.
    """
    if not 0 < rho_sq_target < 1:
        raise ValueError("rho_sq_target must lie in (0, 1)")
    energy = np.atleast_2d(energy)
    order = np.argsort(n, kind="stable")
    n_sorted = n[order]
    P = energy[:, order]
    total = P.sum(axis=1)
    rows = np.arange(P.shape[0])
    centroid = np.rint((P * n_sorted).sum(axis=1) / total).astype(np.int64)
    pos0 = np.searchsorted(n_sorted, centroid)
    lo = pos0.copy()
    hi = pos0.copy()
    captured = P[rows, pos0]
    last = n_sorted.size - 1
    done = captured >= rho_sq_target * total
    for _ in range(2 * search_limit):
        if done.all():
            break
        left = np.where(lo > 0, P[rows, np.maximum(lo - 1, 0)], -1.0)
        right = np.where(hi < last, P[rows, np.minimum(hi + 1, last)], -1.0)
        grow_right = (right >= left) & ~done
        grow_left = (right < left) & ~done
        hi = np.where(grow_right, hi + 1, hi)
        lo = np.where(grow_left, lo - 1, lo)
        captured = captured + np.where(grow_right, right, 0.0) + np.where(grow_left, left, 0.0)
        done = done | (captured >= rho_sq_target * total)
    achieved = captured / total
    N1 = n_sorted[lo]
    N2 = n_sorted[hi]
    width_ok = (N2 - centroid <= search_limit) & (centroid - N1 <= search_limit)
    if not (done & width_ok).all():
        bad = int(np.flatnonzero(~(done & width_ok))[0])
        raise TruncationError(float(achieved[bad]), rho_sq_target, search_limit)
    return N1, N2, achieved


def truncation_select(spec, rho_sq_target, search_limit=4096, rate=None):
    """Window ``(N1, N2)`` for one kernel; see :func:`select_windows`."""
    rate = rate if rate is not None else 100e6
    n, Q = kernel_spectrum(spec, rate)
    N1, N2, _ = select_windows(np.abs(Q) ** 2, n, rho_sq_target, search_limit)
    return int(N1[0]), int(N2[0])


@dataclass(eq=False)
class TruncationPlan:
    """Windows for every element ``m`` (rows) and index ``k_j`` (columns) at one angle.

    ``tail_energy[m, j] = ||b||^2 (1 - rho^2)`` is the exact discarded kernel energy.
    """

    theta: float
    kappa: np.ndarray
    rho_sq_target: float
    N1: np.ndarray
    N2: np.ndarray
    achieved_rho_sq: np.ndarray
    tail_energy: np.ndarray
    coeffs: dict = field(default_factory=dict)

    @property
    def counts(self):
        """Per-element measurement count ``K_m``."""
        return np.array([self.kappa_m(m).size for m in range(self.N1.shape[0])])

    def kappa_m(self, m):
        idx = [np.arange(k - n2, k - n1 + 1) for k, n1, n2 in zip(self.kappa, self.N1[m], self.N2[m])]
        return np.unique(np.concatenate(idx))


def build_plan(geometry, theta, kappa, T, rho_sq_target=0.95, rate=100e6,
               apodization=None, search_limit=4096, keep_coeffs=True):
    """Offline truncation plan for one steering angle."""
    kappa = np.asarray(kappa, dtype=np.int64)
    specs = kernel_specs(geometry, theta, kappa, T, apodization)
    M, K = geometry.count, kappa.size
    N1 = np.zeros((M, K), np.int64)
    N2 = np.zeros((M, K), np.int64)
    ach = np.zeros((M, K))
    tail = np.zeros((M, K))
    coeffs = {}
    for m, row in enumerate(specs):
        n, Q = _element_spectra(row, rate)
        P = np.abs(Q) ** 2
        N1[m], N2[m], ach[m] = select_windows(P, n, rho_sq_target, search_limit)
        tail[m] = P.sum(axis=1) * (1 - ach[m])
        if keep_coeffs:
            size = n.size
            for j in range(K):
                win = np.arange(N1[m, j], N2[m, j] + 1)
                coeffs[m, j] = Q[j, win % size]
    return TruncationPlan(theta, kappa, rho_sq_target, N1, N2, ach, tail, coeffs)


@dataclass(eq=False)
class ApproxMatrix:
    element: int
    kappa: np.ndarray
    kappa_m: np.ndarray
    matrix: sparse.csr_matrix

    @property
    def shape(self):
        return self.matrix.shape

    def apply(self, phi):
        """``A_m Phi_m``; ``phi`` is a MeasurementVector on ``kappa_m`` or a plain array."""
        if isinstance(phi, MeasurementVector):
            if not np.array_equal(phi.kappa, self.kappa_m):
                raise ValueError("coefficient vector not indexed by kappa_m")
            phi = phi.values
        phi = np.asarray(phi)
        if phi.shape != (self.kappa_m.size,):
            raise ValueError(f"expected {self.kappa_m.size} coefficients, got {phi.shape}")
        return self.matrix @ phi


def build_A(m, plan):
    """Sparse ``A_m`` with ``a_{j,l} = Q_{j,m}[k_j - k_l]`` inside the window, rows ordered by kappa."""
    if not plan.coeffs:
        raise ValueError("plan was built without kernel coefficients")
    kappa_m = plan.kappa_m(m)
    rows, cols, vals = [], [], []
    for j, k in enumerate(plan.kappa):
        n = np.arange(plan.N1[m, j], plan.N2[m, j] + 1)
        cols.append(np.searchsorted(kappa_m, k - n))
        rows.append(np.full(n.size, j))
        vals.append(plan.coeffs[m, j])
    A = sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(plan.kappa.size, kappa_m.size),
    ).tocsr()
    return ApproxMatrix(m, plan.kappa.copy(), kappa_m, A)


def build_matrices(plan):
    return [build_A(m, plan) for m in range(plan.N1.shape[0])]


def approx_xample(phis, matrices, weights):
    """``c_hat = weighted average of A_m Phi_m`` over elements."""
    if len(phis) != len(matrices):
        raise ValueError("one coefficient vector per matrix required")
    per = np.vstack([A.apply(p) for p, A in zip(phis, matrices)])
    return MeasurementVector(matrices[0].kappa, xample_average(per, weights)), per


def element_coefficients(traces, matrices):
    """Each element's Fourier-series samples on its own index set ``kappa_m``."""
    from .signal import fourier_coeffs

    return [fourier_coeffs(tr, A.kappa_m) for tr, A in zip(traces, matrices)]


def error_bound(traces, plan, weights):
    """Bound on ``||c - c_hat||_2`` from the discarded kernel energies.

    Per element ``sum_j |c_{j,m} - c_hat_{j,m}|^2 <= ||phi_m||^2 sum_j tail_{j,m}``
    where ``||phi_m||^2`` is the full Fourier-series energy; the element bounds
    combine through the triangle inequality with the normalized weights.
    """
    w = np.asarray(weights, dtype=float)
    w = w / w.sum()
    a2 = np.array([np.sum(tr.samples ** 2) / len(tr) for tr in traces])
    return float(np.sum(w * np.sqrt(a2 * plan.tail_energy.sum(axis=1))))


def measurement_counts(geometry, thetas, kappa, T, rho_sq_target=0.95, rate=10e6,
                       apodization=None, search_limit=4096):
    """``K_m`` for every angle (rows) and element (columns)."""
    out = np.zeros((len(thetas), geometry.count), np.int64)
    for i, th in enumerate(thetas):
        plan = build_plan(geometry, th, kappa, T, rho_sq_target, rate, apodization,
                          search_limit, keep_coeffs=False)
        out[i] = plan.counts
    return out


def rate_report(nyquist_samples, K, counts=None):
    """Sample-rate reduction factors relative to ``nyquist_samples`` real samples per element.

    The exact scheme takes ``K`` complex (``2K`` real) values; the approximated
    scheme takes ``K_m`` complex values from element ``m``. ``counts`` may hold
    ``K_m`` for any number of angles and elements.
    """
    out = {"nyquist_samples": int(nyquist_samples), "K": int(K),
           "exact_reduction": nyquist_samples / (2 * K)}
    if counts is not None:
        counts = np.asarray(counts)
        out.update(mean_count=float(counts.mean()), max_count=int(counts.max()),
                   mean_reduction=nyquist_samples / (2 * counts.mean()),
                   worst_reduction=nyquist_samples / (2 * counts.max()))
    return out


def plan_key(geometry, thetas, kappa, rho_sq_target, T, rate, gated):
    """Content hash identifying an offline matrix build."""
    payload = {
        "offsets": [float(x) for x in geometry.offsets],
        "speed": float(geometry.speed),
        "reference_index": int(geometry.reference_index),
        "thetas": [float(t) for t in thetas],
        "kappa": [int(k) for k in kappa],
        "rho_sq": float(rho_sq_target),
        "T": float(T),
        "rate": float(rate),
        "gated": bool(gated),
    }
    blob = json.dumps(payload, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


_TRIPLET = struct.Struct("<IIdd")


def write_matrix_cache(path, matrices, key=""):
    """One JSON header line, then little-endian COO triplets ``(row u32, col u32, re f64, im f64)``."""
    header = {"key": key, "matrices": []}
    body = bytearray()
    for A in matrices:
        coo = A.matrix.tocoo()
        order = np.lexsort((coo.col, coo.row))
        header["matrices"].append({
            "element": int(A.element),
            "K": int(A.kappa.size),
            "K_m": int(A.kappa_m.size),
            "kappa": [int(k) for k in A.kappa],
            "kappa_m": [int(k) for k in A.kappa_m],
            "nnz": int(coo.nnz),
        })
        for r, c, v in zip(coo.row[order], coo.col[order], coo.data[order]):
            body += _TRIPLET.pack(int(r), int(c), float(v.real), float(v.imag))
    path = Path(path)
    path.write_bytes(json.dumps(header, sort_keys=True).encode() + b"\n" + bytes(body))
    return path


def read_matrix_cache(path):
    raw = Path(path).read_bytes()
    head, _, body = raw.partition(b"\n")
    header = json.loads(head)
    out, off = [], 0
    for meta in header["matrices"]:
        nnz = meta["nnz"]
        rec = np.frombuffer(body, dtype=np.dtype([("r", "<u4"), ("c", "<u4"), ("re", "<f8"), ("im", "<f8")]),
                            count=nnz, offset=off)
        off += nnz * _TRIPLET.size
        A = sparse.coo_matrix((rec["re"] + 1j * rec["im"], (rec["r"], rec["c"])),
                              shape=(meta["K"], meta["K_m"])).tocsr()
        out.append(ApproxMatrix(meta["element"], np.array(meta["kappa"], np.int64),
                                np.array(meta["kappa_m"], np.int64), A))
    return header["key"], out


def approx_pipeline(traces, geometry, theta, kappa, rho_sq_target=0.95, apodization=None,
                    rate=None):
    """Plan, matrices and ``c_hat`` for one scene; the plan uses the traces' own grid by default."""
    if apodization is None:
        apodization = Apodization.uniform(geometry.count)
    traces = list(traces)
    rate = traces[0].rate if rate is None else rate
    plan = build_plan(geometry, theta, kappa, traces[0].duration, rho_sq_target, rate, apodization)
    mats = build_matrices(plan)
    phis = element_coefficients(traces, mats)
    c_hat, _ = approx_xample(phis, mats, apodization.static(geometry))
    return c_hat, plan, mats
