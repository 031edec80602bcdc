"""Netpbm-family image files: PFM (float), PPM (8-bit RGB) and PGM (8-bit gray).

PFM stores rows bottom-to-top with a negative scale for little-endian data;
arrays in memory are always top-row-first.
"""
from __future__ import annotations

import json
import re
from pathlib import Path

import numpy as np

from ..errors import ImageFormatError


def write_pfm(path, img: np.ndarray) -> Path:
    img = np.asarray(img, dtype=np.float32)
    if img.ndim == 2:
        tag, h, w = "Pf", img.shape[0], img.shape[1]
    elif img.ndim == 3 and img.shape[2] == 3:
        tag, h, w = "PF", img.shape[0], img.shape[1]
    else:
        raise ImageFormatError(f"PFM needs an (H, W) or (H, W, 3) array, got {img.shape}")
    data = np.ascontiguousarray(img[::-1]).astype("<f4")
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(f"{tag}\n{w} {h}\n-1.0\n".encode("ascii"))
        fh.write(data.tobytes())
    return path


def read_pfm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    m = re.match(rb"(PF|Pf)\s+(\d+)\s+(\d+)\s+(-?[0-9.eE+-]+)\s", raw)
    if not m:
        raise ImageFormatError(f"{path}: not a PFM file")
    tag, w, h, scale = m.group(1), int(m.group(2)), int(m.group(3)), float(m.group(4))
    ch = 3 if tag == b"PF" else 1
    dtype = "<f4" if scale < 0 else ">f4"
    count = w * h * ch
    body = raw[m.end():]
    if len(body) != 4 * count:
        raise ImageFormatError(f"{path}: expected {4 * count} data bytes, found {len(body)}")
    arr = np.frombuffer(body, dtype=dtype, count=count).astype(np.float32)
    arr = arr.reshape((h, w, 3) if ch == 3 else (h, w))
    return arr[::-1].copy()


def _write_pnm(path, magic: str, img: np.ndarray) -> Path:
    img = np.asarray(img)
    if img.dtype != np.uint8:
        raise ImageFormatError(f"{magic} export needs uint8 data, got {img.dtype}")
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(f"{magic}\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(img).tobytes())
    return path


def write_ppm(path, img: np.ndarray) -> Path:
    if np.asarray(img).ndim != 3 or np.asarray(img).shape[2] != 3:
        raise ImageFormatError("PPM needs an (H, W, 3) array")
    return _write_pnm(path, "P6", img)


def write_pgm(path, img: np.ndarray) -> Path:
    if np.asarray(img).ndim != 2:
        raise ImageFormatError("PGM needs an (H, W) array")
    return _write_pnm(path, "P5", img)


def write_mask(path, mask: np.ndarray) -> Path:
    return write_pgm(path, np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8))


_PNM = re.compile(rb"(P[56])\s+(?:#[^\n]*\s+)*(\d+)\s+(?:#[^\n]*\s+)*(\d+)\s+(?:#[^\n]*\s+)*(\d+)\s")


def _read_pnm(path, magic: bytes) -> np.ndarray:
    raw = Path(path).read_bytes()
    m = _PNM.match(raw)
    if not m or m.group(1) != magic:
        raise ImageFormatError(f"{path}: not a {magic.decode()} file")
    w, h, maxval = int(m.group(2)), int(m.group(3)), int(m.group(4))
    if maxval != 255:
        raise ImageFormatError(f"{path}: only maxval 255 is supported")
    ch = 3 if magic == b"P6" else 1
    body = raw[m.end():]
    if len(body) != w * h * ch:
        raise ImageFormatError(f"{path}: expected {w * h * ch} data bytes, found {len(body)}")
    arr = np.frombuffer(body, dtype=np.uint8).reshape((h, w, 3) if ch == 3 else (h, w))
    return arr.copy()


def read_ppm(path) -> np.ndarray:
    return _read_pnm(path, b"P6")


def read_pgm(path) -> np.ndarray:
    return _read_pnm(path, b"P5")


def read_image(path) -> np.ndarray:
    """PFM as linear floats, PPM/PGM as floats in [0, 1]."""
    head = Path(path).read_bytes()[:2]
    if head in (b"PF", b"Pf"):
        return read_pfm(path)
    if head == b"P6":
        return read_ppm(path).astype(np.float64) / 255.0
    if head == b"P5":
        return read_pgm(path).astype(np.float64) / 255.0
    raise ImageFormatError(f"{path}: unrecognised image header {head!r}")


def write_instance_map(path, instance: np.ndarray, ids) -> tuple[Path, Path]:
    """Single-channel PFM of entity indices plus a JSON index -> id table."""
    path = Path(path)
    write_pfm(path, np.asarray(instance, dtype=np.float32))
    side = path.with_suffix(".json")
    side.write_text(json.dumps({str(i): e for i, e in enumerate(ids)}, indent=1) + "\n", encoding="utf-8")
    return path, side


def read_instance_map(path) -> tuple[np.ndarray, dict[int, str]]:
    path = Path(path)
    table = json.loads(path.with_suffix(".json").read_text(encoding="utf-8"))
    return read_pfm(path).astype(np.int32), {int(k): v for k, v in table.items()}
