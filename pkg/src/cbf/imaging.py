"""Scanline reconstruction, envelope detection, scan conversion and image metrics."""

from dataclasses import dataclass
import math

import numpy as np
from scipy import ndimage, signal as sps
from scipy.optimize import linear_sum_assignment

from .beamform import SPEED_OF_SOUND
from .signal import FriEcho, SampledTrace, synthesize_fri

MODES = ("phase-aware", "real-part", "modulus")


def reconstruct_scanline(echoes, pulse, rate, duration, mode="phase-aware"):
    """Synthesize ``Phi(t)`` from recovered echoes.

    ``phase-aware`` keeps the complex amplitudes (carrier phase offsets),
    ``real-part`` uses ``Re(b)`` and ``modulus`` uses ``|b|`` with zero phase.
    """
    if mode == "phase-aware":
        use = echoes
    elif mode == "real-part":
        use = [FriEcho(e.delay, complex(e.amplitude).real) for e in echoes]
    elif mode == "modulus":
        use = [FriEcho(e.delay, abs(e.amplitude)) for e in echoes]
    else:
        raise ValueError(f"unknown reconstruction mode {mode!r}")
    return synthesize_fri(pulse, use, rate, duration)


def envelope(trace):
    """Modulus of the analytic signal, ``sqrt(s^2 + hilbert(s)^2)``."""
    s = trace.samples if isinstance(trace, SampledTrace) else np.asarray(trace, dtype=float)
    if s.size < 2:
        raise ValueError("envelope needs at least two samples")
    return np.abs(sps.hilbert(s))


@dataclass(frozen=True, eq=False)
class ScanLine:
    theta: float
    trace: SampledTrace
    envelope: np.ndarray = None

    def __post_init__(self):
        env = envelope(self.trace) if self.envelope is None else np.asarray(self.envelope, float)
        if env.shape != self.trace.samples.shape:
            raise ValueError("envelope length must equal trace length")
        object.__setattr__(self, "envelope", env)


@dataclass(frozen=True)
class GridSpec:
    """Cartesian pixel grid; ``x`` lateral and ``z`` depth, meters."""

    x_min: float
    x_max: float
    z_min: float
    z_max: float
    pitch: float

    @property
    def x(self):
        n = int(math.floor((self.x_max - self.x_min) / self.pitch + 1e-9)) + 1
        return self.x_min + self.pitch * np.arange(n)

    @property
    def z(self):
        n = int(math.floor((self.z_max - self.z_min) / self.pitch + 1e-9)) + 1
        return self.z_min + self.pitch * np.arange(n)

    @classmethod
    def sector(cls, half_angle, depth, pitch):
        """Bounding box of a sector of the given half-angle (radians) and depth."""
        w = depth * math.sin(half_angle)
        w = math.ceil(w / pitch) * pitch
        return cls(-w, w, 0.0, depth, pitch)


@dataclass(frozen=True, eq=False)
class SectorImage:
    """Linear envelope on a Cartesian grid (``nan`` outside the imaged sector)."""

    x: np.ndarray
    z: np.ndarray
    values: np.ndarray
    dynamic_range: float = 60.0

    @property
    def pitch(self):
        return float(self.x[1] - self.x[0]) if self.x.size > 1 else float(self.z[1] - self.z[0])

    def intensity_db(self, reference=None):
        """Log-compressed pixels clamped to ``[-dynamic_range, 0]``, top-normalized by default."""
        v = self.values
        ref = np.nanmax(v) if reference is None else reference
        floor = -self.dynamic_range
        with np.errstate(divide="ignore", invalid="ignore"):
            db = 20 * np.log10(v / ref) if ref > 0 else np.full(v.shape, -np.inf)
        db = np.where(np.isnan(db), floor, db)
        return np.maximum(db, floor)

    def rows(self):
        """CSV rows ``(x_m, z_m, dB)``."""
        db = self.intensity_db()
        return [(float(x), float(z), float(db[i, j]))
                for i, z in enumerate(self.z) for j, x in enumerate(self.x)]


def scan_convert(scanlines, grid, interpolation="nearest", speed=SPEED_OF_SOUND, time_offset=0.0,
                 dynamic_range=60.0):
    """Map scanline envelopes onto Cartesian pixels.

    Pixel ``(x, z)`` reads the envelope at angle ``atan2(x, z)`` and time
    ``2 r / c + time_offset``; interpolation is applied to the linear envelope
    and compression happens afterwards (:meth:`SectorImage.intensity_db`).
    """
    if not scanlines:
        raise ValueError("need at least one scanline")
    thetas = np.array([s.theta for s in scanlines], dtype=float)
    if thetas.size > 1 and np.any(np.diff(thetas) <= 0):
        raise ValueError("scanline angles must be strictly increasing")
    rate, duration = scanlines[0].trace.rate, scanlines[0].trace.duration
    env = np.vstack([s.envelope for s in scanlines])
    n = env.shape[1]

    x, z = grid.x, grid.z
    X, Z = np.meshgrid(x, z)
    r = np.hypot(X, Z)
    phi = np.arctan2(X, Z)
    # fractional sample and line coordinates
    u = (2 * r / speed + time_offset) * rate
    inside = (u >= 0) & (u <= n - 1) & (Z >= 0)

    half = 0.5 * np.min(np.diff(thetas)) if thetas.size > 1 else 0.0
    if interpolation == "nearest":
        lo, hi = thetas[0] - half, thetas[-1] + half
    elif interpolation == "bilinear":
        lo, hi = thetas[0], thetas[-1]
    else:
        raise ValueError(f"unknown interpolation {interpolation!r}")
    # edge lines keep pixels within half a pitch laterally
    near_edge = (np.abs(r * np.sin(phi - thetas[0])) <= grid.pitch / 2) | (
        np.abs(r * np.sin(phi - thetas[-1])) <= grid.pitch / 2)
    inside &= ((phi >= lo) & (phi <= hi)) | (near_edge & (np.abs(phi) < np.pi / 2))

    phi_c = np.clip(phi, thetas[0], thetas[-1])
    if thetas.size > 1:
        v = np.interp(phi_c, thetas, np.arange(thetas.size))
    else:
        v = np.zeros_like(phi_c)
    uc = np.clip(u, 0, n - 1)

    if interpolation == "nearest":
        li = np.rint(v).astype(int)
        si = np.rint(uc).astype(int)
        vals = env[li, si]
    else:
        vals = ndimage.map_coordinates(env, [v.ravel(), uc.ravel()], order=1, mode="nearest")
        vals = vals.reshape(v.shape)
    out = np.where(inside, vals, np.nan)
    return SectorImage(x, z, out, dynamic_range)


def find_blobs(image, count, min_distance=2, level=0.5):
    """Centroids ``(x, z)`` of the ``count`` strongest blobs.

    A blob is the connected region around a local maximum where the linear
    envelope stays at or above ``level`` times the peak; its position is the
    intensity-weighted centroid of that region. Weaker maxima that fall inside
    a stronger blob are merged into it.
    """
    v = np.nan_to_num(image.values, nan=0.0)
    size = 2 * min_distance + 1
    peaks = (v == ndimage.maximum_filter(v, size=size, mode="constant")) & (v > 0)
    iz, ix = np.nonzero(peaks)
    order = np.argsort(-v[iz, ix], kind="stable")
    claimed = np.zeros(v.shape, bool)
    out = []
    for i in order:
        if len(out) == count:
            break
        z0, x0 = iz[i], ix[i]
        if claimed[z0, x0]:
            continue
        labels, _ = ndimage.label(v >= level * v[z0, x0], structure=np.ones((3, 3)))
        region = labels == labels[z0, x0]
        claimed |= region
        w = v[region]
        rz, rx = np.nonzero(region)
        out.append((np.sum(w * image.x[rx]) / w.sum(), np.sum(w * image.z[rz]) / w.sum()))
    return np.array(out).reshape(-1, 2)


def snr_vs_reference(reconstructed, reference):
    """``10 log10(sum ||env_ref||^2 / sum ||env_rec - env_ref||^2)`` over all scanlines (dB).

    Identical inputs return ``inf``.
    """
    if len(reconstructed) != len(reference):
        raise ValueError("scanline counts differ")
    num = den = 0.0
    for a, b in zip(reconstructed, reference):
        ea, eb = _env_of(a), _env_of(b)
        if ea.shape != eb.shape:
            raise ValueError("scanline lengths differ")
        if isinstance(a, ScanLine) and isinstance(b, ScanLine) and a.theta != b.theta:
            raise ValueError("scanline angles differ")
        num += float(np.sum(eb ** 2))
        den += float(np.sum((ea - eb) ** 2))
    if den == 0:
        return math.inf
    return 10 * math.log10(num / den)


def _env_of(x):
    if isinstance(x, ScanLine):
        return x.envelope
    return envelope(x)


def local_maxima(env, count, rate, smooth_mm=0.1, speed=SPEED_OF_SOUND):
    """Sample indices of the ``count`` strongest strict local maxima after Gaussian smoothing."""
    env = np.asarray(env, dtype=float)
    if smooth_mm > 0:
        sigma = 2 * smooth_mm * 1e-3 / speed * rate
        env = ndimage.gaussian_filter1d(env, sigma)
    mid = env[1:-1]
    idx = np.flatnonzero((mid > env[:-2]) & (mid > env[2:])) + 1
    order = np.argsort(-env[idx], kind="stable")
    return np.sort(idx[order[:count]])


def _best_matching(dist, window):
    """One-to-one assignment maximizing matches within ``window``, then minimizing squared error.

    ``dist[i, j]`` is |maximum i - echo j|. Returns a list of ``(i, j)`` pairs.
    """
    L, R = dist.shape
    if L == 0 or R == 0:
        return []
    if L <= 8:
        best = (0, 0.0, [])
        cand = [np.flatnonzero(dist[i] <= window) for i in range(L)]

        def dfs(i, used, pairs, sse):
            nonlocal best
            if len(pairs) + (L - i) < best[0]:
                return
            if i == L:
                if len(pairs) > best[0] or (len(pairs) == best[0] and sse < best[1]):
                    best = (len(pairs), sse, list(pairs))
                return
            for j in cand[i]:
                if j not in used:
                    used.add(j)
                    pairs.append((i, int(j)))
                    dfs(i + 1, used, pairs, sse + dist[i, j] ** 2)
                    pairs.pop()
                    used.discard(j)
            dfs(i + 1, used, pairs, sse)

        dfs(0, set(), [], 0.0)
        return best[2]
    big = (window ** 2) * (L + 1) + 1.0
    cost = np.where(dist <= window, dist ** 2 - big, 0.0)
    rows, cols = linear_sum_assignment(cost)
    return [(int(i), int(j)) for i, j in zip(rows, cols) if dist[i, j] <= window]


def maxima_match(echoes, reference, L, window_mm=1.2, speed=SPEED_OF_SOUND, offset=0.0,
                 smooth_mm=0.1):
    """Fraction of the ``L`` strongest reference maxima claimed by a recovered echo.

    Echo ``l`` sits at depth ``c (t_l + offset) / 2``; ``offset`` aligns the echo
    onset with the envelope peak of the pulse. Returns ``(hit_rate, error_std_mm)``.
    """
    if window_mm <= 0:
        raise ValueError("window_mm must be positive")
    env = _env_of(reference)
    trace = reference.trace if isinstance(reference, ScanLine) else reference
    idx = local_maxima(env, L, trace.rate, smooth_mm, speed)
    if idx.size == 0:
        return 0.0, math.nan
    z_max = speed * (idx / trace.rate) / 2 * 1e3
    z_rec = np.array([speed * (e.delay + offset) / 2 * 1e3 for e in echoes])
    if z_rec.size == 0:
        return 0.0, math.nan
    signed = z_rec[None, :] - z_max[:, None]
    pairs = _best_matching(np.abs(signed), window_mm)
    if not pairs:
        return 0.0, math.nan
    err = np.array([signed[i, j] for i, j in pairs])
    return len(pairs) / L, float(np.std(err))

