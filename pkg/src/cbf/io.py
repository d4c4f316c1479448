"""File formats: trace CSV/binary, delimited tables, 8-bit PGM images."""

import csv
import re
import struct
from pathlib import Path

import numpy as np

from .signal import SampledTrace

_TRACE_HEADER = struct.Struct("<ddQ")


def write_trace_csv(trace, path):
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time_s", "value"])
        for t, v in zip(trace.times, trace.samples):
            w.writerow([repr(float(t)), repr(float(v))])
    return path


def read_trace_csv(path, rate=None):
    """Read a two-column trace CSV. The rate is inferred from the time column if not given."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    times, values = data[:, 0], data[:, 1]
    if rate is None:
        if times.size < 2:
            raise ValueError("cannot infer rate from fewer than two samples")
        rate = 1.0 / float(np.mean(np.diff(times)))
    return SampledTrace(values, rate, values.size / rate)


def write_trace_binary(trace, path):
    """Little-endian: rate f64, duration f64, count u64, then count f64 samples."""
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(_TRACE_HEADER.pack(trace.rate, trace.duration, len(trace)))
        fh.write(np.ascontiguousarray(trace.samples, dtype="<f8").tobytes())
    return path


def read_trace_binary(path):
    raw = Path(path).read_bytes()
    rate, duration, count = _TRACE_HEADER.unpack_from(raw, 0)
    body = raw[_TRACE_HEADER.size:]
    if len(body) != 8 * count:
        raise ValueError(f"expected {count} samples, file holds {len(body) // 8}")
    return SampledTrace(np.frombuffer(body, dtype="<f8").copy(), rate, duration)


def write_table(path, header, rows):
    """Write rows to CSV. Floats are written with ``repr`` so files round-trip exactly."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return int(v)
    return v


def read_table(path):
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


def write_pgm(path, image, vmin, vmax):
    """Write a 2-D array as binary 8-bit PGM, mapping ``[vmin, vmax]`` to ``[0, 255]``."""
    image = np.asarray(image, dtype=float)
    if image.ndim != 2:
        raise ValueError("PGM export needs a 2-D array")
    scaled = (np.clip(image, vmin, vmax) - vmin) / (vmax - vmin)
    pix = np.round(255 * np.nan_to_num(scaled, nan=0.0)).astype(np.uint8)
    rows, cols = pix.shape
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(f"P5\n{cols} {rows}\n255\n".encode("ascii"))
        fh.write(pix.tobytes())
    return path


def read_pgm(path):
    raw = Path(path).read_bytes()
    m = re.match(rb"P5\s+(\d+)\s+(\d+)\s+(\d+)\s", raw)
    if m is None:
        raise ValueError("not a binary PGM")
    cols, rows, maxval = (int(g) for g in m.groups())
    if maxval != 255:
        raise ValueError("only 8-bit PGM supported")
    data = raw[m.end(): m.end() + rows * cols]
    return np.frombuffer(data, dtype=np.uint8).reshape(rows, cols)
