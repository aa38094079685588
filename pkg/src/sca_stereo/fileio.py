"""Bit-exact PFM (grayscale float) and PPM (binary 8-bit RGB) readers/writers."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import FormatError


def write_pfm(values: Tensor | np.ndarray, path) -> None:
    """Grayscale PFM: 'Pf', 'W H', scale '-1.0' (little-endian), rows bottom-up."""
    data = values.data if isinstance(values, Tensor) else np.asarray(values)
    if data.ndim != 2:
        raise ValueError(f"write_pfm expects an [H,W] map, got shape {data.shape}")
    if not np.all(np.isfinite(data)):
        raise ValueError("write_pfm requires finite values")
    h, w = data.shape
    with open(path, "wb") as f:
        f.write(f"Pf\n{w} {h}\n-1.0\n".encode("ascii"))
        f.write(data[::-1].astype("<f4").tobytes())


def _next_token(blob: bytes, pos: int) -> tuple[bytes, int]:
    while pos < len(blob) and blob[pos : pos + 1].isspace():
        pos += 1
    if pos >= len(blob):
        raise FormatError("unexpected end of header", pos)
    start = pos
    while pos < len(blob) and not blob[pos : pos + 1].isspace():
        pos += 1
    return blob[start:pos], pos


def read_pfm(path) -> Tensor:
    """Read a grayscale PFM; the scale line's sign selects endianness."""
    with open(path, "rb") as f:
        blob = f.read()
    magic, pos = _next_token(blob, 0)
    if magic != b"Pf":
        raise FormatError(f"bad PFM magic {magic!r}, expected 'Pf'", 0)
    w_tok, pos = _next_token(blob, pos)
    h_tok, pos = _next_token(blob, pos)
    scale_tok, pos = _next_token(blob, pos)
    try:
        w, h = int(w_tok), int(h_tok)
        scale = float(scale_tok)
    except ValueError:
        raise FormatError("malformed PFM dimension or scale token", pos) from None
    if w <= 0 or h <= 0:
        raise FormatError(f"invalid PFM dimensions {w}x{h}", pos)
    if scale == 0.0:
        raise FormatError("PFM scale must be nonzero", pos)
    pos += 1  # exactly one whitespace byte separates header and payload
    payload = blob[pos : pos + 4 * w * h]
    if len(payload) < 4 * w * h:
        raise FormatError(
            f"truncated PFM payload: expected {4 * w * h} bytes, got {len(payload)}",
            pos + len(payload),
        )
    dtype = "<f4" if scale < 0 else ">f4"
    data = np.frombuffer(payload, dtype=dtype).reshape(h, w)[::-1]
    return ad.constant(data.astype(np.float64))


def write_ppm(image: Tensor | np.ndarray, path) -> None:
    """Binary P6, maxval 255; [0,1] maps to bytes with round-half-up."""
    data = image.data if isinstance(image, Tensor) else np.asarray(image)
    if data.ndim != 3 or data.shape[0] != 3:
        raise ValueError(f"write_ppm expects a [3,H,W] image, got shape {data.shape}")
    _, h, w = data.shape
    quantized = np.clip(np.floor(data * 255.0 + 0.5), 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(quantized.transpose(1, 2, 0).tobytes())


def read_ppm(path) -> Tensor:
    """Read a binary P6 image into a [3,H,W] tensor with values in [0,1]."""
    with open(path, "rb") as f:
        blob = f.read()
    magic, pos = _next_token(blob, 0)
    if magic != b"P6":
        raise FormatError(f"bad PPM magic {magic!r}, expected 'P6'", 0)
    w_tok, pos = _next_token(blob, pos)
    h_tok, pos = _next_token(blob, pos)
    maxval_tok, pos = _next_token(blob, pos)
    try:
        w, h, maxval = int(w_tok), int(h_tok), int(maxval_tok)
    except ValueError:
        raise FormatError("malformed PPM header token", pos) from None
    if maxval != 255:
        raise FormatError(f"unsupported PPM maxval {maxval}", pos)
    pos += 1
    payload = blob[pos : pos + 3 * w * h]
    if len(payload) < 3 * w * h:
        raise FormatError(
            f"truncated PPM payload: expected {3 * w * h} bytes, got {len(payload)}",
            pos + len(payload),
        )
    data = np.frombuffer(payload, dtype=np.uint8).reshape(h, w, 3).transpose(2, 0, 1)
    return ad.constant(data.astype(np.float64) / 255.0)
