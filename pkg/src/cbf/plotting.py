"""PNG figures for CLI reports (matplotlib, Agg backend).

Only :mod:`cbf.cli` imports this module; the numerical core has no plotting
dependency. Figures are saved without a software/date stamp so repeated runs
produce identical files.
"""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_META = {"Software": None}


def _save(fig, path):
    fig.savefig(path, dpi=100, metadata=_META)
    plt.close(fig)
    return path


def plot_projection_error(geometry, elements, t_frac, snr, path, max_curves=8):
    """Projection SNR versus normalized delay, one curve per element offset."""
    fig, ax = plt.subplots(figsize=(6, 4))
    off = np.abs(geometry.offsets[elements])
    finite = np.flatnonzero(off > 0)
    pick = finite[np.unique(np.linspace(0, finite.size - 1, min(max_curves, finite.size)).astype(int))]
    for i in pick:
        ax.plot(t_frac, snr[i], label=f"{off[i] * 1e3:.2f} mm")
    ax.set_xlabel("t_l / T")
    ax.set_ylabel("SNR [dB]")
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=7)
    return _save(fig, path)


def plot_probability_maps(result, path):
    """One heatmap per method: recovery probability over (SNR, eta)."""
    cfg = result.config
    n = len(cfg.methods)
    fig, axes = plt.subplots(1, n, figsize=(3 * n, 3), squeeze=False)
    for q, (m, ax) in enumerate(zip(cfg.methods, axes[0])):
        ax.imshow(result.probability[::-1, :, q], vmin=0, vmax=1, cmap="gray", aspect="auto")
        ax.set_title(m, fontsize=8)
        ax.set_xticks(range(len(cfg.etas)), [f"{e:g}" for e in cfg.etas])
        ax.set_yticks(range(len(cfg.snrs)), [f"{s:g}" for s in cfg.snrs[::-1]])
        ax.set_xlabel("eta")
    axes[0, 0].set_ylabel("SNR [dB]")
    fig.tight_layout()
    return _save(fig, path)


def plot_coefficients(c_exact, c_approx, path):
    fig, ax = plt.subplots(figsize=(6, 3))
    for c, label, style in ((c_exact, "exact", "-"), (c_approx, "approx", "--")):
        if c is not None:
            ax.plot(c.kappa, np.abs(c.values), style, label=label)
    ax.set_xlabel("k")
    ax.set_ylabel("|c_k|")
    ax.legend()
    return _save(fig, path)


def plot_scanlines(original, reconstructed, path):
    fig, ax = plt.subplots(figsize=(7, 3))
    t = original.times * 1e6
    ax.plot(t, original.samples, lw=0.7, label="original")
    ax.plot(t, reconstructed.samples, lw=0.7, label="recovered")
    ax.set_xlabel("t [us]")
    ax.legend()
    return _save(fig, path)


def plot_image(image, path, planted=None):
    fig, ax = plt.subplots(figsize=(4, 6))
    db = image.intensity_db()
    extent = [image.x[0] * 1e3, image.x[-1] * 1e3, image.z[-1] * 1e3, image.z[0] * 1e3]
    ax.imshow(db, cmap="gray", extent=extent, vmin=-image.dynamic_range, vmax=0, aspect="equal")
    if planted is not None:
        ax.plot(np.zeros(len(planted)), np.asarray(planted) * 1e3, "r+", ms=6)
    ax.set_xlabel("x [mm]")
    ax.set_ylabel("z [mm]")
    return _save(fig, path)


def plot_kernels(rows, geometry, path):
    """Real parts of exported kernels, one panel per Fourier index."""
    data = np.array([(r[0], r[1], r[2], r[3]) for r in rows])
    ks = np.unique(data[:, 0])
    fig, axes = plt.subplots(len(ks), 1, figsize=(7, 2.5 * len(ks)), squeeze=False)
    for ax, k in zip(axes[:, 0], ks):
        sel = data[data[:, 0] == k]
        for m in np.unique(sel[:, 1]):
            s = sel[sel[:, 1] == m]
            ax.plot(s[:, 2] * 1e6, s[:, 3], lw=0.7,
                    label=f"{geometry.offsets[int(m)] * 1e3:.2f} mm")
        ax.set_title(f"k = {int(k)}", fontsize=8)
        ax.set_xlabel("t [us]")
    axes[0, 0].legend(fontsize=6)
    fig.tight_layout()
    return _save(fig, path)
