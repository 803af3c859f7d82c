"""File formats: point CSVs, PGM rasters, radial tables and PCF targets."""

from __future__ import annotations

import csv
import io as _io
import json
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigError, UsageError
from .losses import ImageTask, PcfHistogram, RadialProfile, TargetSpectrum

FULL_TARGET_SCALE = 2.0 ** 15
PCF_FORMAT = "samplecraft-pcf"


def _open_text_out(path):
    if str(path) == "-":
        return sys.stdout, False
    return open(path, "w", newline="", encoding="utf-8"), True


def format_points_csv(coords) -> str:
    X = np.atleast_2d(np.asarray(coords, dtype=float))
    lines = [",".join(f"dim{d}" for d in range(X.shape[1]))]
    lines.extend(",".join("%.17g" % v for v in row) for row in X)
    return "\n".join(lines) + "\n"


def write_points_csv(path, coords):
    text = format_points_csv(coords)
    fh, close = _open_text_out(path)
    try:
        fh.write(text)
    finally:
        if close:
            fh.close()


def read_points_csv(path) -> np.ndarray:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise ConfigError(f"cannot read points file {path}: {exc}") from exc
    if not rows or not all(h.startswith("dim") for h in rows[0]):
        raise ConfigError(f"{path}: expected a dim0,dim1,... header")
    try:
        X = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return X.reshape(-1, len(rows[0]))


# ---------------------------------------------------------------------------
# PGM

def encode_pgm(pixels, maxval: int) -> bytes:
    P = np.asarray(pixels)
    if P.ndim != 2:
        raise UsageError("PGM needs a 2D raster")
    if not 0 < maxval < 65536:
        raise UsageError("PGM maxval must lie in 1..65535")
    P = P.astype(np.int64)
    if P.min(initial=0) < 0 or P.max(initial=0) > maxval:
        raise UsageError("pixel values out of range")
    header = f"P5\n{P.shape[1]} {P.shape[0]}\n{maxval}\n".encode("ascii")
    dtype = ">u2" if maxval > 255 else "u1"
    return header + P.astype(dtype).tobytes()


def write_pgm(path, pixels, maxval: int = 255):
    Path(path).write_bytes(encode_pgm(pixels, maxval))


def _header_tokens(data: bytes):
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ConfigError("truncated PGM header")
        tokens.append(data[start:pos].decode("ascii", "replace"))
    return tokens, pos + 1


def decode_pgm(data: bytes):
    tokens, offset = _header_tokens(data)
    if tokens[0] != "P5":
        raise ConfigError("only binary PGM (P5) is supported")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise ConfigError("malformed PGM header") from None
    dtype = ">u2" if maxval > 255 else "u1"
    need = width * height * np.dtype(dtype).itemsize
    body = data[offset:offset + need]
    if len(body) != need:
        raise ConfigError(f"PGM body truncated: {len(body)} of {need} bytes")
    return np.frombuffer(body, dtype=dtype).reshape(height, width).astype(np.int64), maxval


def read_pgm(path):
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    return decode_pgm(data)


# ---------------------------------------------------------------------------
# targets

def write_radial_target_csv(path, target: TargetSpectrum):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write("radius,power\n")
        for r, p in zip(target.radius, target.power):
            fh.write("%.17g,%.17g\n" % (r, p))


def read_radial_target_csv(path) -> TargetSpectrum:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise ConfigError(f"cannot read target {path}: {exc}") from exc
    if not rows or [c.strip() for c in rows[0]] != ["radius", "power"]:
        raise ConfigError(f"{path}: expected a radius,power header")
    try:
        table = np.array([[float(v) for v in r] for r in rows[1:] if r])
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if table.ndim != 2 or table.shape[1] != 2:
        raise ConfigError(f"{path}: expected two columns")
    return TargetSpectrum.radial(table[:, 0], table[:, 1])


def write_full_target_pgm(path, power):
    pix = np.clip(np.round(np.asarray(power) * FULL_TARGET_SCALE), 0, 65535)
    write_pgm(path, pix, 65535)


def read_full_target_pgm(path) -> TargetSpectrum:
    pix, _ = read_pgm(path)
    return TargetSpectrum.full(pix / FULL_TARGET_SCALE)


def read_image_task(path) -> ImageTask:
    pix, maxval = read_pgm(path)
    return ImageTask(pix / float(maxval))


def pcf_to_json(hist: PcfHistogram, meta: dict | None = None) -> str:
    payload = {
        "format": PCF_FORMAT,
        "version": 1,
        "bins": hist.bins,
        "r_max": hist.r_max,
        "h": hist.h,
        "density": [float(v) for v in hist.density],
        "meta": meta or {},
    }
    return json.dumps(payload, indent=1) + "\n"


def write_pcf_json(path, hist: PcfHistogram, meta: dict | None = None):
    Path(path).write_text(pcf_to_json(hist, meta), encoding="utf-8")


def read_pcf_json(path) -> PcfHistogram:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read PCF target {path}: {exc}") from exc
    if payload.get("format") != PCF_FORMAT or payload.get("version") != 1:
        raise ConfigError(f"{path}: not a version-1 PCF target")
    density = np.asarray(payload["density"], dtype=float)
    if len(density) != payload["bins"]:
        raise ConfigError(f"{path}: density length does not match bin count")
    return PcfHistogram(density, float(payload["r_max"]), float(payload["h"]))


def load_target(path):
    """Load a target by extension: ``.csv`` radial spectrum, ``.pgm`` full spectrum, ``.json`` PCF."""
    suffix = Path(path).suffix.lower()
    if not Path(path).exists():
        raise ConfigError(f"target file not found: {path}")
    if suffix == ".csv":
        return read_radial_target_csv(path)
    if suffix == ".pgm":
        return read_full_target_pgm(path)
    if suffix == ".json":
        return read_pcf_json(path)
    raise ConfigError(f"unrecognized target file type: {path}")


def format_radial_csv(profile: RadialProfile) -> str:
    buf = _io.StringIO()
    buf.write("r,mean_power,anisotropy,count\n")
    for r, m, a, c in zip(profile.centers, profile.mean, profile.anisotropy, profile.count):
        if c == 0:
            buf.write("%.17g,nan,nan,0\n" % r)
        else:
            buf.write("%.17g,%.17g,%.17g,%d\n" % (r, m, a, c))
    return buf.getvalue()


def write_radial_csv(path, profile: RadialProfile):
    Path(path).write_text(format_radial_csv(profile), encoding="utf-8")
