"""Image codecs: PFM (read/write), Radiance HDR (read, plus a small writer
used for fixtures) and 8-bit PNG previews."""

from __future__ import annotations

import logging
import re
import warnings
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.ndimage import map_coordinates

from .errors import FormatError
from .shade import PROBE_H, PROBE_W, LightProbe

log = logging.getLogger(__name__)

GAMMA = 2.2


# ---------------------------------------------------------------------------
# PFM
# ---------------------------------------------------------------------------

def encode_pfm(image) -> bytes:
    """Little-endian PFM; rows are stored bottom-up as the format requires."""
    img = np.asarray(image, dtype=np.float32)
    if img.ndim == 3 and img.shape[2] == 1:
        img = img[..., 0]
    if img.ndim == 2:
        tag = b"Pf"
    elif img.ndim == 3 and img.shape[2] == 3:
        tag = b"PF"
    else:
        raise FormatError(f"PFM needs H x W or H x W x 3 data, got {img.shape}")
    h, w = img.shape[:2]
    header = tag + b"\n" + f"{w} {h}\n".encode() + b"-1.0\n"
    body = np.ascontiguousarray(img[::-1]).astype("<f4").tobytes()
    return header + body


def write_pfm(path, image):
    Path(path).write_bytes(encode_pfm(image))


def _read_token(data, pos, path=None):
    """Next whitespace-delimited header token as ``(text, start, end)``."""
    n = len(data)
    while pos < n and data[pos:pos + 1].isspace():
        pos += 1
    start = pos
    while pos < n and not data[pos:pos + 1].isspace():
        pos += 1
    if start == pos:
        raise FormatError("truncated PFM header", offset=start, path=path)
    return data[start:pos].decode("ascii", "replace"), start, pos


def decode_pfm(data: bytes, path=None):
    """Float32 image ``(H, W)`` or ``(H, W, 3)`` from PFM bytes, top row first."""
    tag, start, pos = _read_token(data, 0, path)
    if tag not in ("PF", "Pf"):
        raise FormatError(f"bad PFM magic {tag!r}", offset=start, path=path)
    dims = []
    for _ in range(2):
        tok, start, pos = _read_token(data, pos, path)
        if not tok.isdigit() or int(tok) == 0:
            raise FormatError(f"bad PFM dimension {tok!r}", offset=start, path=path)
        dims.append(int(tok))
    tok, start, pos = _read_token(data, pos, path)
    try:
        scale = float(tok)
    except ValueError:
        scale = float("nan")
    if scale == 0 or not np.isfinite(scale):
        raise FormatError(f"bad PFM scale {tok!r}", offset=start, path=path)
    # exactly one whitespace byte separates the header from the raster
    pos += 1
    w, h = dims
    c = 3 if tag == "PF" else 1
    need = w * h * c * 4
    if len(data) - pos < need:
        raise FormatError(f"PFM raster truncated: need {need} bytes, have {len(data) - pos}",
                          offset=len(data), path=path)
    dtype = "<f4" if scale < 0 else ">f4"
    img = np.frombuffer(data, dtype=dtype, count=w * h * c, offset=pos).astype(np.float32)
    img = img.reshape((h, w, c) if c == 3 else (h, w))[::-1]
    return np.ascontiguousarray(img)


def read_pfm(path):
    return decode_pfm(Path(path).read_bytes(), path=str(path))


# ---------------------------------------------------------------------------
# Radiance HDR (RGBE)
# ---------------------------------------------------------------------------

def _float_to_rgbe(rgb):
    rgb = np.asarray(rgb, dtype=float)
    v = rgb.max(axis=-1)
    mant, expo = np.frexp(v)
    scale = np.where(v > 1e-32, mant * 256.0 / np.where(v > 0, v, 1.0), 0.0)
    out = np.zeros(rgb.shape[:-1] + (4,), dtype=np.uint8)
    out[..., :3] = np.clip(np.floor(rgb * scale[..., None]), 0, 255).astype(np.uint8)
    out[..., 3] = np.where(v > 1e-32, expo + 128, 0).astype(np.uint8)
    return out


def _rgbe_to_float(rgbe):
    rgbe = np.asarray(rgbe, dtype=np.uint8)
    e = rgbe[..., 3].astype(int)
    f = np.where(e > 0, np.ldexp(1.0, e - (128 + 8)), 0.0)
    return rgbe[..., :3].astype(float) * f[..., None]


def encode_hdr(image, rle=True) -> bytes:
    """Radiance RGBE file; ``rle`` selects adaptive run-length scanlines."""
    img = np.asarray(image, dtype=float)
    h, w = img.shape[:2]
    header = b"#?RADIANCE\nFORMAT=32-bit_rle_rgbe\n\n" + f"-Y {h} +X {w}\n".encode()
    rgbe = _float_to_rgbe(img)
    if not rle or not 8 <= w < 32768:
        return header + rgbe.tobytes()
    out = bytearray(header)
    for row in rgbe:
        out += bytes([2, 2, w >> 8, w & 255])
        for ch in range(4):
            out += _rle_channel(row[:, ch])
    return bytes(out)


def _rle_channel(vals):
    out = bytearray()
    i, n = 0, len(vals)
    while i < n:
        run = 1
        while i + run < n and run < 127 and vals[i + run] == vals[i]:
            run += 1
        if run >= 3:
            out += bytes([128 + run, vals[i]])
            i += run
            continue
        j = i
        while j < n and j - i < 128:
            if j + 2 < n and vals[j] == vals[j + 1] == vals[j + 2]:
                break
            j += 1
        out += bytes([j - i]) + bytes(vals[i:j])
        i = j
    return out


def write_hdr(path, image, rle=True):
    Path(path).write_bytes(encode_hdr(image, rle))


_RES = re.compile(rb"([-+])Y\s+(\d+)\s+([-+])X\s+(\d+)")


def decode_hdr(data: bytes, path=None):
    """Linear float image ``(H, W, 3)`` from Radiance HDR bytes."""
    if not (data.startswith(b"#?RADIANCE") or data.startswith(b"#?RGBE")):
        raise FormatError("missing Radiance signature", offset=0, path=path)
    pos = 0
    while True:
        end = data.find(b"\n", pos)
        if end < 0:
            raise FormatError("unterminated HDR header", offset=pos, path=path)
        line = data[pos:end]
        if line.startswith(b"FORMAT=") and line.strip() != b"FORMAT=32-bit_rle_rgbe":
            raise FormatError(f"unsupported HDR format {line.decode('ascii', 'replace')!r}",
                              offset=pos, path=path)
        pos = end + 1
        if line.strip() == b"":
            break
    end = data.find(b"\n", pos)
    m = _RES.fullmatch(data[pos:end if end >= 0 else len(data)].strip())
    if m is None or m.group(1) != b"-" or m.group(3) != b"+":
        raise FormatError("unsupported HDR resolution line", offset=pos, path=path)
    h, w = int(m.group(2)), int(m.group(4))
    pos = end + 1
    rgbe = np.zeros((h, w, 4), dtype=np.uint8)
    for y in range(h):
        if pos + 4 > len(data):
            raise FormatError(f"HDR raster truncated at scanline {y}", offset=pos, path=path)
        head = data[pos:pos + 4]
        if 8 <= w < 32768 and head[0] == 2 and head[1] == 2 and head[2] < 128:
            if (head[2] << 8 | head[3]) != w:
                raise FormatError("HDR scanline width mismatch", offset=pos, path=path)
            pos += 4
            for ch in range(4):
                x = 0
                while x < w:
                    if pos >= len(data):
                        raise FormatError("HDR run truncated", offset=pos, path=path)
                    count = data[pos]
                    pos += 1
                    if count > 128:
                        count -= 128
                        if x + count > w or pos >= len(data):
                            raise FormatError("bad HDR run", offset=pos - 1, path=path)
                        rgbe[y, x:x + count, ch] = data[pos]
                        pos += 1
                    else:
                        if count == 0 or x + count > w or pos + count > len(data):
                            raise FormatError("bad HDR literal", offset=pos - 1, path=path)
                        rgbe[y, x:x + count, ch] = np.frombuffer(data, np.uint8, count, pos)
                        pos += count
                    x += count
        else:
            need = 4 * w
            if pos + need > len(data):
                raise FormatError(f"HDR raster truncated at scanline {y}", offset=pos, path=path)
            rgbe[y] = np.frombuffer(data, np.uint8, need, pos).reshape(w, 4)
            pos += need
    return _rgbe_to_float(rgbe)


def read_hdr(path):
    return decode_hdr(Path(path).read_bytes(), path=str(path))


# ---------------------------------------------------------------------------
# PNG preview and probes
# ---------------------------------------------------------------------------

def to_srgb8(image, gamma=True):
    img = np.clip(np.nan_to_num(np.asarray(image, dtype=float)), 0.0, 1.0)
    if gamma:
        img = img ** (1 / GAMMA)
    return np.round(img * 255).astype(np.uint8)


def write_png(path, image, gamma=True):
    Image.fromarray(to_srgb8(image, gamma)).save(path)


def write_image(path, image, gamma=False):
    """Dispatch on suffix: ``.pfm`` stores linear floats, ``.png`` an 8-bit preview."""
    suffix = Path(path).suffix.lower()
    if suffix == ".pfm":
        write_pfm(path, image)
    elif suffix == ".png":
        write_png(path, image, gamma)
    elif suffix == ".hdr":
        write_hdr(path, image)
    else:
        raise FormatError(f"unsupported output format {suffix!r}", path=str(path))


def resample_probe(image, H=PROBE_H, W=PROBE_W):
    """Bilinear resample of an equirectangular map, wrapping in azimuth."""
    img = np.asarray(image, dtype=float)
    hs, ws = img.shape[:2]
    padded = np.concatenate([img[:, -1:], img, img[:, :1]], axis=1)
    ys = (np.arange(H) + 0.5) * hs / H - 0.5
    xs = (np.arange(W) + 0.5) * ws / W - 0.5 + 1
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    out = np.stack([map_coordinates(padded[..., c], [yy, xx], order=1, mode="nearest") for c in range(3)], -1)
    return out


def read_probe(path) -> LightProbe:
    suffix = Path(path).suffix.lower()
    if suffix == ".pfm":
        img = read_pfm(path)
    elif suffix == ".hdr":
        img = read_hdr(path)
    else:
        raise FormatError(f"unsupported probe format {suffix!r}", path=str(path))
    if img.ndim == 2:
        img = np.repeat(img[..., None], 3, axis=-1)
    img = img.astype(float)
    if img.shape[:2] != (PROBE_H, PROBE_W):
        warnings.warn(f"probe {path} is {img.shape[0]}x{img.shape[1]}; resampling to {PROBE_H}x{PROBE_W}",
                      stacklevel=2)
        img = resample_probe(img)
    return LightProbe(np.clip(img, 0.0, None))


def write_probe(path, probe: LightProbe):
    write_pfm(path, probe.radiance)
