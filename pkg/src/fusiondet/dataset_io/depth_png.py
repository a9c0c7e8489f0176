"""16-bit PNG depth maps: ``value = round(d * 256)``, 0 marks a missing return."""
from __future__ import annotations

import io

import numpy as np
from PIL import Image

SCALE = 256.0
MAX_CODE = 65535


def encode_depth(img) -> np.ndarray:
    d = np.asarray(img, dtype=np.float64)
    finite = np.isfinite(d)
    codes = np.zeros(d.shape, dtype=np.uint16)
    codes[finite] = np.clip(np.round(d[finite] * SCALE), 1, MAX_CODE).astype(np.uint16)
    return codes


def decode_depth(codes) -> np.ndarray:
    codes = np.asarray(codes)
    out = codes.astype(np.float32) / np.float32(SCALE)
    out[codes == 0] = np.inf
    return out


def depth_png_bytes(img) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(encode_depth(img)).save(buf, format="PNG")
    return buf.getvalue()


def write_depth_png(path, img):
    with open(path, "wb") as fh:
        fh.write(depth_png_bytes(img))


def read_depth_png(path_or_bytes) -> np.ndarray:
    src = io.BytesIO(path_or_bytes) if isinstance(path_or_bytes, (bytes, bytearray)) else path_or_bytes
    with Image.open(src) as im:
        codes = np.asarray(im, dtype=np.uint16) if im.mode.startswith("I;16") else np.asarray(im).astype(np.uint16)
    return decode_depth(codes)
