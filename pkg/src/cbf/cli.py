"""Command-line experiment runner.

``cbf COMMAND [--config PATH] [--seed N] [--out DIR] [--threads N] [--no-figures]``

Every run writes its data files, optional PNG figures and a ``manifest.json``
holding the resolved configuration, its hash, the seed and a checksum per
artifact. Exit status: 0 ok, 1 configuration error, 2 runtime error; errors
are printed to stderr as JSON.
"""

import argparse
import hashlib
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import approx, beamform as bf, imaging, io, kernels, phantom, recovery
from .config import ConfigError, defaults, ExperimentConfig, load_config
from .signal import (FriEcho, TwoWayPulse, fourier_coeffs, kappa_consecutive, kappa_random,
                     synthesize_fri)

COMMANDS = ("fig3", "sweep", "xample", "recover", "image", "kernels")


class UsageError(Exception):
    pass


# -- builders ----------------------------------------------------------------

def build_pulse(cfg):
    return TwoWayPulse(**cfg["pulse"])


def build_geometry(cfg):
    g = cfg["geometry"]
    return bf.ArrayGeometry.linear(g["count"], g["pitch_m"], g["reference_index"], g["speed_mps"])


def build_apodization(cfg, geometry):
    g = cfg["geometry"]
    return bf.Apodization.from_name(g["window"], geometry.count, g["gated"])


def build_kappa(cfg, pulse, T, rng):
    kc = cfg["kappa"]
    if kc["policy"] == "random":
        return kappa_random(pulse, T, kc["K"], kc["threshold_db"], rng)
    k0 = kc["k0"] if kc["k0"] is not None else int(math.ceil(pulse.f0 * T))
    return kappa_consecutive(k0, kc["K"])


def build_depths(cfg, rng, section="scene", count=None):
    sc = cfg[section]
    if sc.get("depths_mm") is not None:
        return np.asarray(sc["depths_mm"], float) * 1e-3
    n = sc["count"] if count is None else count
    lo, hi = (v * 1e-3 for v in sc["depth_range_mm"])
    gap = sc["min_separation_mm"] * 1e-3
    slack = (hi - lo) - (n - 1) * gap
    if slack <= 0:
        raise ValueError("scene depth range too short for the requested separation")
    return np.sort(rng.uniform(0, slack, n)) + lo + gap * np.arange(n)


def build_echoes(cfg, depths, speed):
    sc = cfg["scene"]
    n = depths.size
    amps = np.ones(n) if sc["amplitudes"] is None else np.asarray(sc["amplitudes"], float)
    ph = np.zeros(n) if sc["phases_rad"] is None else np.asarray(sc["phases_rad"], float)
    return [FriEcho(2 * z / speed, a * np.exp(1j * p)) for z, a, p in zip(depths, amps, ph)]


def _rng(cfg, stream):
    """Independent generator per named stream, derived from the global seed."""
    key = int.from_bytes(hashlib.sha256(stream.encode()).digest()[:4], "little")
    return np.random.default_rng([cfg.seed, key])


def _c_rows(c):
    return [(int(k), float(v.real), float(v.imag)) for k, v in zip(c.kappa, c.values)]


# -- commands ----------------------------------------------------------------

def run_fig3(cfg, out, figures):
    pulse, geom = build_pulse(cfg), build_geometry(cfg)
    T, rate = cfg["frame"]["duration_s"], cfg["frame"]["rate_hz"]
    f = cfg["fig3"]
    kappa = build_kappa(cfg, pulse, T, _rng(cfg, "kappa"))
    delays = np.linspace(f["t_min_frac"] * T, f["t_max_frac"] * T, f["delays"])
    elements, snr = bf.projection_error_experiment(
        geom, pulse, delays, math.radians(f["theta_deg"]), kappa, T, rate, f["elements"])
    rows = []
    for i, m in enumerate(elements):
        for t_l, s in zip(delays, snr[i]):
            rows.append((int(m), float(geom.offsets[m] * 1e3), float(t_l), float(t_l / T),
                         "inf" if np.isinf(s) else float(s)))
    arts = {"fig3.csv": io.write_table(out / "fig3.csv",
                                       ["element", "offset_mm", "t_l_s", "t_frac", "snr_db"], rows)}
    if figures:
        from . import plotting
        arts["fig3.png"] = plotting.plot_projection_error(geom, elements, delays / T, snr, out / "fig3.png")
    return arts, {"elements": int(len(elements)), "delays": int(delays.size), "K": int(kappa.size)}


def _sim_config(cfg):
    sw = cfg["sweep"]
    return phantom.SimConfig(
        geometry=build_geometry(cfg), pulse=build_pulse(cfg), apodization=cfg["geometry"]["window"],
        focus_depth=sw["focus_depth_mm"] * 1e-3, beam_width=sw["beam_width_mm"] * 1e-3,
        speckle_count=sw["speckle_count"], signal_count=sw["signal_count"],
        depth_interval=tuple(v * 1e-3 for v in sw["depth_range_mm"]),
        min_separation=sw["min_separation_mm"] * 1e-3, trials=sw["trials"],
        etas=tuple(sw["etas"]), snrs=tuple(sw["snrs_db"]), rate=cfg["frame"]["rate_hz"],
        duration=cfg["frame"]["duration_s"], grid_rate=sw["grid_rate_hz"],
        threshold_db=cfg["kappa"]["threshold_db"], spreading=sw["spreading"], seed=cfg.seed,
        methods=tuple(sw["methods"]),
    )


def run_sweep(cfg, out, figures, threads):
    sim = _sim_config(cfg)
    res = phantom.monte_carlo_recovery(sim, threads)
    arts = {"sweep.csv": io.write_table(out / "sweep.csv", ["snr_db", "eta", "method", "probability"],
                                        res.rows())}
    for q, m in enumerate(sim.methods):
        # rows: SNR from high (top) to low; columns: eta ascending
        arts[f"sweep_{m}.pgm"] = io.write_pgm(out / f"sweep_{m}.pgm", res.probability[::-1, :, q], 0.0, 1.0)
    _, cal = phantom.calibration_pulse(sim)
    arts["calibration_pulse.csv"] = io.write_trace_csv(cal, out / "calibration_pulse.csv")
    krows = [(float(eta), kind, int(k)) for eta, (kc, kr) in res.kappas.items()
             for kind, ks in (("consecutive", kc), ("random", kr)) for k in ks]
    arts["kappa_sets.csv"] = io.write_table(out / "kappa_sets.csv", ["eta", "kind", "k"], krows)
    if figures:
        from . import plotting
        arts["sweep.png"] = plotting.plot_probability_maps(res, out / "sweep.png")
    summary = {m: float(v) for m, v in res.mean_by_method().items()}
    return arts, {"mean_probability": summary}


def _scene_phantom(cfg, depths, axis_theta=0.0, speckle=0, rng=None):
    """Reflectors along the ``axis_theta`` direction, plus optional speckle in the default box."""
    sc = cfg["scene"]
    n = depths.size
    amps = np.ones(n) if sc["amplitudes"] is None else np.asarray(sc["amplitudes"], float)
    axis = np.array([math.sin(axis_theta), 0.0, math.cos(axis_theta)])
    ph = phantom.Phantom.points(np.outer(depths, axis), amps)
    if speckle:
        sp = np.column_stack([rng.uniform(*phantom.BOX[i], speckle) for i in range(3)])
        ph = phantom.Phantom(np.vstack([ph.positions, sp]),
                             np.concatenate([ph.amplitudes, rng.standard_normal(speckle)]),
                             np.concatenate([ph.is_signal, np.zeros(speckle, bool)]))
    return ph


def _element_traces(cfg, ph, theta, beam_width=None):
    T, rate = cfg["frame"]["duration_s"], cfg["frame"]["rate_hz"]
    return phantom.simulate_traces(ph, build_geometry(cfg), build_pulse(cfg), theta, rate, T, beam_width)


def run_xample(cfg, out, figures):
    pulse, geom = build_pulse(cfg), build_geometry(cfg)
    apod = build_apodization(cfg, geom)
    T = cfg["frame"]["duration_s"]
    x = cfg["xample"]
    theta = math.radians(x["theta_deg"])
    depths = build_depths(cfg, _rng(cfg, "scene"))
    traces = _element_traces(cfg, _scene_phantom(cfg, depths, theta), theta)
    kappa = build_kappa(cfg, pulse, T, _rng(cfg, "kappa"))
    arts, summary = {}, {"K": int(kappa.size), "depths_mm": [float(z * 1e3) for z in depths]}
    c = c_hat = None
    if x["mode"] in ("exact", "both"):
        c, _ = kernels.xample_exact(traces, geom, theta, kappa, apod)
        arts["xample_exact.csv"] = io.write_table(out / "xample_exact.csv", ["k", "re", "im"], _c_rows(c))
    if x["mode"] in ("approx", "both"):
        c_hat, plan, mats = approx.approx_pipeline(traces, geom, theta, kappa, x["rho_sq"], apod,
                                                   x["plan_rate_hz"])
        arts["xample_approx.csv"] = io.write_table(out / "xample_approx.csv", ["k", "re", "im"],
                                                   _c_rows(c_hat))
        prow = [(m, int(k), int(plan.N1[m, j]), int(plan.N2[m, j]), float(plan.achieved_rho_sq[m, j]))
                for m in range(geom.count) for j, k in enumerate(plan.kappa)]
        arts["plan.csv"] = io.write_table(out / "plan.csv", ["element", "k", "N1", "N2", "achieved_rho_sq"],
                                          prow)
        key = approx.plan_key(geom, [theta], kappa, x["rho_sq"], T,
                              x["plan_rate_hz"] or cfg["frame"]["rate_hz"], apod.gated)
        arts["matrices.bin"] = approx.write_matrix_cache(out / "matrices.bin", mats, key)
        counts = plan.counts
        summary.update(rho_sq=x["rho_sq"], mean_K_m=float(counts.mean()), max_K_m=int(counts.max()))
        bound = approx.error_bound(traces, plan, apod.static(geom))
        summary["error_bound_abs"] = bound
    if c is not None and c_hat is not None:
        gap = float(np.linalg.norm(c.values - c_hat.values))
        norm = float(np.linalg.norm(c.values))
        summary.update(relative_gap=gap / norm, relative_bound=summary["error_bound_abs"] / norm,
                       within_bound=bool(gap <= summary["error_bound_abs"] * (1 + 1e-9)))
    if figures:
        from . import plotting
        arts["xample.png"] = plotting.plot_coefficients(c, c_hat, out / "xample.png")
    return arts, summary


def run_recover(cfg, out, figures):
    pulse = build_pulse(cfg)
    T, rate = cfg["frame"]["duration_s"], cfg["frame"]["rate_hz"]
    speed = cfg["geometry"]["speed_mps"]
    r = cfg["recover"]
    depths = build_depths(cfg, _rng(cfg, "scene"))
    echoes = build_echoes(cfg, depths, speed)
    trace = synthesize_fri(pulse, echoes, rate, T)
    snr = cfg["scene"]["snr_db"]
    if snr is not None:
        noise = _rng(cfg, "noise").standard_normal(len(trace))
        noise *= math.sqrt(np.sum(trace.samples ** 2) / np.sum(noise ** 2) / 10 ** (snr / 10))
        trace = trace.with_samples(trace.samples + noise)
    kappa = build_kappa(cfg, pulse, T, _rng(cfg, "kappa"))
    c = fourier_coeffs(trace, kappa)
    L = r["L"] if r["L"] is not None else len(echoes)
    grid = recovery.RecoveryGrid(int(round(r["grid_rate_hz"] * T)), T)
    est = recovery.recover(r["method"], c, pulse, T, L, grid=grid, iterations=r["iterations"],
                           residual_tol=r["residual_tol"])
    b = np.array([e.amplitude for e in est], complex)
    model = (recovery.vandermonde(kappa, [e.delay for e in est], T) @ b) * pulse.spectrum(2 * np.pi * kappa / T) / T
    res = float(np.linalg.norm(c.values - model))
    arts = {
        "recover.csv": io.write_table(out / "recover.csv",
                                      ["method", "L", "delay_s", "re_b", "im_b", "residual"],
                                      recovery.result_rows(r["method"], est, res)),
        "truth.csv": io.write_table(out / "truth.csv", ["method", "L", "delay_s", "re_b", "im_b", "residual"],
                                    recovery.result_rows("truth", echoes, 0.0)),
        "measurements.csv": io.write_table(out / "measurements.csv", ["k", "re", "im"], _c_rows(c)),
    }
    if figures:
        from . import plotting
        rec = imaging.reconstruct_scanline(est, pulse, rate, T)
        arts["recover.png"] = plotting.plot_scanlines(trace, rec, out / "recover.png")
    return arts, {"method": r["method"], "L": L, "residual": res,
                  "delays_s": [e.delay for e in est]}


def image_pipeline(cfg):
    """Compressed-beamforming scanlines and the standard beamformed reference, per steering angle.

    Returns ``(thetas, depths, lines, refs, recovered)``; reflectors sit on the
    ``theta = 0`` axis and every angle sees them through the lateral beam profile.
    """
    pulse, geom = build_pulse(cfg), build_geometry(cfg)
    apod = build_apodization(cfg, geom)
    T, rate = cfg["frame"]["duration_s"], cfg["frame"]["rate_hz"]
    im = cfg["image"]
    depths = build_depths(cfg, _rng(cfg, "scene"))
    ph = _scene_phantom(cfg, depths, 0.0, im["speckle_count"], _rng(cfg, "speckle"))
    n = im["scanlines"]
    half = math.radians(im["half_angle_deg"])
    thetas = np.linspace(-half, half, n) if n > 1 else np.zeros(1)
    kappa = build_kappa(cfg, pulse, T, _rng(cfg, "kappa"))
    grid = recovery.RecoveryGrid(int(round(im["grid_rate_hz"] * T)), T)
    L = cfg["recover"]["L"] if cfg["recover"]["L"] is not None else depths.size
    lines, refs, recovered = [], [], []
    for th in thetas:
        th = float(th)
        traces = _element_traces(cfg, ph, th, im["beam_width_mm"] * 1e-3)
        if im["scheme"] == "exact":
            c, _ = kernels.xample_exact(traces, geom, th, kappa, apod)
        else:
            c, _, _ = approx.approx_pipeline(traces, geom, th, kappa, cfg["xample"]["rho_sq"], apod,
                                             cfg["xample"]["plan_rate_hz"])
        try:
            est = recovery.recover(im["method"], c, pulse, T, L, grid=grid,
                                   iterations=cfg["recover"]["iterations"],
                                   residual_tol=cfg["recover"]["residual_tol"])
        except (ValueError, np.linalg.LinAlgError):
            est = []
        recovered.append(est)
        lines.append(imaging.ScanLine(th, imaging.reconstruct_scanline(est, pulse, rate, T, im["mode"])))
        refs.append(imaging.ScanLine(th, bf.beamform(traces, geom, th, apod)))
    return thetas, depths, lines, refs, recovered


def run_image(cfg, out, figures):
    pulse = build_pulse(cfg)
    im = cfg["image"]
    speed = cfg["geometry"]["speed_mps"]
    T = cfg["frame"]["duration_s"]
    thetas, depths, lines, refs, recovered = image_pipeline(cfg)
    grid = imaging.GridSpec.sector(math.radians(im["half_angle_deg"]), speed * T / 2, im["pixel_mm"] * 1e-3)
    img = imaging.scan_convert(lines, grid, im["interpolation"], speed, pulse.envelope_center,
                               im["dynamic_range_db"])
    ref_img = imaging.scan_convert(refs, grid, im["interpolation"], speed, pulse.envelope_center,
                                   im["dynamic_range_db"])
    blobs = imaging.find_blobs(img, depths.size)
    centre = int(np.argmin(np.abs(thetas)))
    hit, err_std = imaging.maxima_match(recovered[centre], refs[centre], depths.size, im["window_mm"],
                                        speed, pulse.envelope_center)
    snr2 = imaging.snr_vs_reference(lines, refs)
    dr = im["dynamic_range_db"]
    arts = {
        "image.pgm": io.write_pgm(out / "image.pgm", img.intensity_db(), -dr, 0.0),
        "image.csv": io.write_table(out / "image.csv", ["x_m", "z_m", "db"], img.rows()),
        "reference.pgm": io.write_pgm(out / "reference.pgm", ref_img.intensity_db(), -dr, 0.0),
        "blobs.csv": io.write_table(out / "blobs.csv", ["x_m", "z_m"], [tuple(map(float, b)) for b in blobs]),
        "planted.csv": io.write_table(out / "planted.csv", ["x_m", "z_m"], [(0.0, float(z)) for z in depths]),
    }
    rows = []
    for th, est in zip(thetas, recovered):
        rows += [(float(th),) + r[1:] for r in recovery.result_rows(im["method"], est)]
    arts["echoes.csv"] = io.write_table(out / "echoes.csv", ["theta_rad", "L", "delay_s", "re_b", "im_b",
                                                             "residual"], rows)
    arts["scanline_center.csv"] = io.write_trace_csv(lines[centre].trace, out / "scanline_center.csv")
    metrics = {
        "snr2_db": snr2 if math.isfinite(snr2) else "inf",
        "maxima_hit_rate": hit,
        "maxima_error_std_mm": err_std if math.isfinite(err_std) else None,
        "blob_max_error_px": _blob_error(blobs, depths, grid.pitch),
        "scanlines": int(thetas.size),
    }
    arts["metrics.json"] = _write_json(out / "metrics.json", metrics)
    if figures:
        from . import plotting
        arts["image.png"] = plotting.plot_image(img, out / "image.png", planted=depths)
    return arts, metrics


def _blob_error(blobs, depths, pitch):
    """Largest planted-to-blob distance in pixels under the best one-to-one assignment."""
    from scipy.optimize import linear_sum_assignment
    if len(blobs) == 0 or depths.size == 0:
        return None
    planted = np.column_stack([np.zeros_like(depths), depths])
    d = np.linalg.norm(planted[:, None, :] - np.asarray(blobs)[None, :, :], axis=2) / pitch
    r, c = linear_sum_assignment(d)
    worst = float(d[r, c].max())
    return worst if len(r) == depths.size else None


def run_kernels(cfg, out, figures):
    geom = build_geometry(cfg)
    apod = build_apodization(cfg, geom)
    T = cfg["frame"]["duration_s"]
    kc = cfg["kernels"]
    m0 = geom.reference_index
    elements = kc["elements"]
    if elements is None:
        elements = [m for m in range(m0, m0 + 31, 5) if m < geom.count]
    if any(m >= geom.count for m in elements):
        raise ValueError("kernel element index out of range")
    rows = kernels.kernel_bank(geom, math.radians(kc["theta_deg"]), kc["indices"], T, kc["rate_hz"],
                               elements, apod)
    arts = {"kernels.csv": io.write_table(out / "kernels.csv", ["k", "element", "t_s", "re", "im"], rows)}
    if figures:
        from . import plotting
        arts["kernels.png"] = plotting.plot_kernels(rows, geom, out / "kernels.png")
    return arts, {"rows": len(rows), "elements": list(map(int, elements)), "indices": kc["indices"]}


# -- plumbing ----------------------------------------------------------------

def _write_json(path, obj):
    path = Path(path)
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")
    return path


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def write_manifest(out, command, cfg, artifacts):
    entries = {name: _sha256(p) for name, p in sorted(artifacts.items())}
    manifest = {
        "command": command,
        "seed": cfg.seed,
        "config_sha256": cfg.digest(),
        "config": cfg.to_dict(),
        "artifacts": entries,
    }
    return _write_json(Path(out) / "manifest.json", manifest)


def run(command, cfg, out, figures=True, threads=None):
    """Run one command; returns ``(artifacts, summary)`` and writes the manifest."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    if command == "sweep":
        arts, summary = run_sweep(cfg, out, figures, threads)
    elif command in _RUNNERS:
        arts, summary = _RUNNERS[command](cfg, out, figures)
    else:
        raise UsageError(f"unknown command {command!r}")
    arts = {k: Path(v) for k, v in arts.items()}
    arts_manifest = write_manifest(out, command, cfg, arts)
    return {**arts, "manifest.json": arts_manifest}, summary


_RUNNERS = {"fig3": run_fig3, "xample": run_xample, "recover": run_recover, "image": run_image,
            "kernels": run_kernels}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser():
    p = _Parser(prog="cbf", description="Compressed beamforming experiments.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", type=Path, help="config file (default: the command's preset)")
    p.add_argument("--seed", type=int, help="override run.seed")
    p.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    p.add_argument("--threads", type=int, help="worker processes (fallback: CBF_THREADS)")
    p.add_argument("--no-figures", action="store_true", help="skip PNG rendering")
    p.add_argument("--print-defaults", action="store_true", help="print the command's defaults and exit")
    return p


def _fail(kind, code, **extra):
    print(json.dumps({"error": kind, **extra}, sort_keys=True), file=sys.stderr)
    return code


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        return _fail("usage", 1, message=str(exc))
    if args.print_defaults:
        from .config import render_defaults
        print(render_defaults(args.command))
        return 0
    try:
        cfg = load_config(args.config, args.command) if args.config else ExperimentConfig(defaults(args.command))
    except ConfigError as exc:
        issues = [{"path": i.path, "line": i.line, "message": i.message} for i in exc.issues]
        return _fail("config", 1, issues=issues)
    except OSError as exc:
        return _fail("config", 1, issues=[{"path": str(args.config), "line": 0, "message": str(exc)}])
    if args.seed is not None:
        if not 0 <= args.seed < 2 ** 64:
            return _fail("usage", 1, message="--seed must be an unsigned 64-bit integer")
        cfg = cfg.with_seed(args.seed)
    if args.threads is not None and args.threads < 1:
        return _fail("usage", 1, message="--threads must be at least 1")
    figures = cfg["run"]["figures"] and not args.no_figures
    try:
        arts, summary = run(args.command, cfg, args.out, figures, args.threads)
    except Exception as exc:  # any pipeline failure becomes exit status 2
        return _fail("runtime", 2, type=type(exc).__name__, message=str(exc))
    print(json.dumps({"command": args.command, "out": str(args.out), "summary": summary},
                     sort_keys=True, default=float))
    return 0


if __name__ == "__main__":
    sys.exit(main())
