"""File formats: PFM/PGM/PPM images, binary facet surfaces and transfer matrices.

All binary payloads are little-endian. Readers raise :class:`FormatError`
on anything they do not recognise.
"""
from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError
from .render import PROVENANCES, TransferMatrix
from .scene import FacetSurface, SurfaceConfig

SURF_MAGIC = b"SPKV-SURF"
MAT_MAGIC = b"SPKV-MAT"
SURF_VERSION = 1
MAT_VERSION = 1


# --- PFM ---------------------------------------------------------------------

def write_pfm(path, image) -> None:
    """Write a float image as little-endian PFM (rows stored bottom to top).

    ``image`` is ``(H, W)`` grey, or ``(3, H, W)`` / ``(H, W, 3)`` colour.
    Values are stored as float32.
    """
    img = np.asarray(image, dtype=float)
    if img.ndim == 3 and img.shape[0] == 3 and img.shape[-1] != 3:
        img = np.moveaxis(img, 0, -1)
    if img.ndim == 2:
        tag, h, w = b"Pf", *img.shape
    elif img.ndim == 3 and img.shape[2] == 3:
        tag, h, w = b"PF", img.shape[0], img.shape[1]
    else:
        raise ValueError(f"cannot store array of shape {img.shape} as PFM")
    body = np.ascontiguousarray(img[::-1], dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(tag + b"\n" + f"{w} {h}\n".encode() + b"-1.0\n" + body)


def read_pfm(path, channels_first: bool = True) -> np.ndarray:
    """Read a PFM file into float64; colour images come back ``(3, H, W)`` by default."""
    raw = Path(path).read_bytes()
    parts = raw.split(b"\n", 3)
    if len(parts) < 4 or parts[0] not in (b"Pf", b"PF"):
        raise FormatError(f"{path}: not a PFM file")
    try:
        w, h = (int(v) for v in parts[1].split())
        scale = float(parts[2])
    except ValueError:
        raise FormatError(f"{path}: malformed PFM header") from None
    if scale == 0 or w < 1 or h < 1:
        raise FormatError(f"{path}: malformed PFM header")
    c = 3 if parts[0] == b"PF" else 1
    dtype = "<f4" if scale < 0 else ">f4"
    need = w * h * c * 4
    if len(parts[3]) < need:
        raise FormatError(f"{path}: truncated PFM payload")
    data = np.frombuffer(parts[3][:need], dtype=dtype).astype(float)
    img = data.reshape(h, w, c)[::-1]
    if c == 1:
        return img[..., 0].copy()
    return np.moveaxis(img, -1, 0).copy() if channels_first else img.copy()


def write_display(path, image) -> None:
    """8-bit PGM (grey) or PPM (colour) copy scaled so the maximum maps to 255."""
    img = np.asarray(image, dtype=float)
    if img.ndim == 3 and img.shape[0] == 3 and img.shape[-1] != 3:
        img = np.moveaxis(img, 0, -1)
    peak = img.max(initial=0.0)
    q = np.zeros(img.shape, dtype=np.uint8) if peak <= 0 else np.round(np.clip(img / peak, 0, 1) * 255).astype(np.uint8)
    if img.ndim == 2:
        head = f"P5\n{img.shape[1]} {img.shape[0]}\n255\n"
    elif img.ndim == 3 and img.shape[2] == 3:
        head = f"P6\n{img.shape[1]} {img.shape[0]}\n255\n"
    else:
        raise ValueError(f"cannot store array of shape {img.shape} as PGM/PPM")
    with open(path, "wb") as fh:
        fh.write(head.encode() + q.tobytes())


def write_grid_csv(path, grid) -> None:
    """Probability grid as CSV, one row per screen row, full round-trip precision."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for row in np.asarray(grid, dtype=float):
            w.writerow([repr(float(v)) for v in row])


# --- facet surfaces ----------------------------------------------------------

_SURF_HEAD = struct.Struct("<9sBII12d2dqd")


def write_surface(path, surface: FacetSurface) -> None:
    cfg = surface.config
    head = _SURF_HEAD.pack(
        SURF_MAGIC, SURF_VERSION, cfg.rows, cfg.cols,
        *np.asarray(cfg.pose_matrix, dtype=float).reshape(-1),
        *(float(v) for v in cfg.size), int(surface.seed), float(surface.sigma_theta),
    )
    with open(path, "wb") as fh:
        fh.write(head + np.ascontiguousarray(surface.normals, dtype="<f8").tobytes())


def read_surface(path) -> FacetSurface:
    raw = Path(path).read_bytes()
    if len(raw) < _SURF_HEAD.size or not raw.startswith(SURF_MAGIC):
        raise FormatError(f"{path}: not a facet surface file")
    vals = _SURF_HEAD.unpack_from(raw)
    version, rows, cols = vals[1:4]
    if version != SURF_VERSION:
        raise FormatError(f"{path}: unsupported surface version {version}")
    pose, size, seed, sigma = vals[4:16], vals[16:18], vals[18], vals[19]
    body = raw[_SURF_HEAD.size:]
    if len(body) != rows * cols * 3 * 8:
        raise FormatError(f"{path}: expected {rows * cols * 3} normal components")
    normals = np.frombuffer(body, dtype="<f8").reshape(rows, cols, 3)
    cfg = SurfaceConfig(rows, cols, tuple(size), tuple(pose))
    return FacetSurface(cfg, normals, seed=seed, sigma_theta=sigma)


# --- transfer matrices -------------------------------------------------------
#
# magic | version u8 | provenance u8 | rows u64 | cols u64 | mask_len u64
# [sensor_pixels u64 | mask indices u64 * mask_len]   (only if mask_len > 0)
# channels u32 | screen h, w u32 | sensor h, w u32   (0 = unknown)
# row-major float64 data

_MAT_HEAD = struct.Struct("<8sBBQQQ")
_MAT_SHAPES = struct.Struct("<IIIII")


def write_matrix(path, a: TransferMatrix) -> None:
    mask_len = 0 if a.mask is None else len(a.mask)
    out = [_MAT_HEAD.pack(MAT_MAGIC, MAT_VERSION, PROVENANCES.index(a.provenance), a.rows, a.cols, mask_len)]
    if mask_len:
        out.append(struct.pack("<Q", a.sensor_pixels))
        out.append(np.asarray(a.mask, dtype="<u8").tobytes())
    sh, sw = a.screen_shape or (0, 0)
    eh, ew = a.sensor_shape or (0, 0)
    out.append(_MAT_SHAPES.pack(a.channels, sh, sw, eh, ew))
    out.append(np.ascontiguousarray(a.data, dtype="<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(out))


def read_matrix(path) -> TransferMatrix:
    raw = Path(path).read_bytes()
    if len(raw) < _MAT_HEAD.size or not raw.startswith(MAT_MAGIC):
        raise FormatError(f"{path}: not a transfer matrix file")
    _, version, prov, rows, cols, mask_len = _MAT_HEAD.unpack_from(raw)
    if version != MAT_VERSION:
        raise FormatError(f"{path}: unsupported matrix version {version}")
    if prov >= len(PROVENANCES):
        raise FormatError(f"{path}: unknown provenance code {prov}")
    pos = _MAT_HEAD.size
    mask, sensor_pixels = None, None
    try:
        if mask_len:
            (sensor_pixels,) = struct.unpack_from("<Q", raw, pos)
            pos += 8
            mask = np.frombuffer(raw, dtype="<u8", count=mask_len, offset=pos).astype(np.int64)
            pos += 8 * mask_len
        channels, sh, sw, eh, ew = _MAT_SHAPES.unpack_from(raw, pos)
        pos += _MAT_SHAPES.size
    except (struct.error, ValueError):
        raise FormatError(f"{path}: truncated header") from None
    if len(raw) - pos != rows * cols * 8:
        raise FormatError(f"{path}: expected {rows}x{cols} float64 payload")
    data = np.frombuffer(raw, dtype="<f8", offset=pos).reshape(rows, cols).copy()
    try:
        return TransferMatrix(
            data,
            provenance=PROVENANCES[prov],
            mask=mask,
            sensor_pixels=sensor_pixels,
            screen_shape=(sh, sw) if sh else None,
            sensor_shape=(eh, ew) if eh else None,
            channels=channels or 1,
        )
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None
