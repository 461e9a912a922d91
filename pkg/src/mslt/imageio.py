"""8-bit image file I/O: PNG (via Pillow) and binary PPM (P6).

Files are 8-bit sRGB; in memory everything is float32 in [0, 1].
Dequantization is v / 255, quantization is round(v * 255) clamped, so an
8-bit file round-trips exactly.
"""

from __future__ import annotations

import numpy as np
from PIL import Image

from .errors import ContractViolation


def to_float(img_u8: np.ndarray) -> np.ndarray:
    return img_u8.astype(np.float32) / np.float32(255.0)


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)


def _read_ppm(path) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()

    pos = 0

    def token() -> bytes:
        nonlocal pos
        while pos < len(data):
            ch = data[pos : pos + 1]
            if ch == b"#":  # comment to end of line
                while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                    pos += 1
            elif ch.isspace():
                pos += 1
            else:
                break
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise OSError(f"{path}: truncated PPM header")
        return data[start:pos]

    magic = token()
    if magic != b"P6":
        raise OSError(f"{path}: not a binary PPM (P6) file")
    width = int(token())
    height = int(token())
    maxval = int(token())
    if maxval != 255:
        raise OSError(f"{path}: only 8-bit PPM supported (maxval 255, got {maxval})")
    pos += 1  # single whitespace after maxval
    expected = width * height * 3
    raster = data[pos : pos + expected]
    if len(raster) != expected:
        raise OSError(f"{path}: PPM raster truncated")
    return np.frombuffer(raster, dtype=np.uint8).reshape(height, width, 3)


def _write_ppm(path, img_u8: np.ndarray) -> None:
    h, w = img_u8.shape[:2]
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(np.ascontiguousarray(img_u8).tobytes())


def read_image(path) -> np.ndarray:
    """Read an 8-bit RGB image file as a float32 (H, W, 3) array in [0, 1]."""
    spath = str(path)
    if spath.lower().endswith((".ppm", ".pnm")):
        u8 = _read_ppm(path)
    else:
        try:
            with Image.open(path) as im:
                u8 = np.asarray(im.convert("RGB"))
        except (OSError, SyntaxError) as exc:
            raise OSError(f"{path}: cannot read image ({exc})") from exc
    return to_float(u8)


def write_image(path, img: np.ndarray) -> None:
    """Write a float image in [0, 1] as an 8-bit RGB file (PNG or PPM by extension)."""
    if img.ndim == 2:
        img = np.repeat(img[:, :, None], 3, axis=2)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ContractViolation("write_image expects an (H, W, 3) image")
    u8 = to_uint8(img)
    spath = str(path)
    if spath.lower().endswith((".ppm", ".pnm")):
        _write_ppm(path, u8)
    else:
        Image.fromarray(u8, "RGB").save(path)
