"""Grayscale PNG encode/decode used by the dataset folder format, the
wire protocols, and the session payloads. Masks travel as 8-bit 0/255."""

from __future__ import annotations

import base64
import io

import numpy as np
from PIL import Image


def gray_to_png_bytes(values: np.ndarray) -> bytes:
    """Encode a [0,1] float or uint8 2D array as an 8-bit grayscale PNG."""
    arr = np.asarray(values)
    if arr.dtype != np.uint8:
        arr = np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)
    img = Image.fromarray(arr, mode="L")
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def mask_to_png_bytes(mask: np.ndarray) -> bytes:
    return gray_to_png_bytes(np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8))


def png_bytes_to_gray(data: bytes) -> np.ndarray:
    """Decode a PNG into a uint8 2D array (converted to L mode if needed)."""
    img = Image.open(io.BytesIO(data))
    if img.mode != "L":
        img = img.convert("L")
    return np.asarray(img, dtype=np.uint8)


def gray_to_b64(values: np.ndarray) -> str:
    return base64.b64encode(gray_to_png_bytes(values)).decode("ascii")


def mask_to_b64(mask: np.ndarray) -> str:
    return base64.b64encode(mask_to_png_bytes(mask)).decode("ascii")


def b64_to_gray(b64: str) -> np.ndarray:
    return png_bytes_to_gray(base64.b64decode(b64))


def b64_to_mask(b64: str, threshold: int = 128) -> np.ndarray:
    return b64_to_gray(b64) >= threshold
