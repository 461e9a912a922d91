"""Quality metrics and the correction-strength heatmap.

PSNR uses a fixed peak of 1.0 (images live in [0, 1]) and returns +inf for
identical inputs. SSIM follows the reference formulation: 11x11 Gaussian
window (sigma 1.5), C1 = 0.01^2, C2 = 0.03^2, mean over valid windows,
computed on Rec.601 luminance by default (a per-channel mode is available
since reported numbers in the literature use both conventions).

The heatmap is the CIELAB-lightness residual of (corrected - input),
normalized by its own maximum absolute value into [-1, 1]: positive values
mark brightening, negative ones darkening.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation, DimensionError, SizeError

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
_C1 = 0.01**2
_C2 = 0.03**2

_REC601 = np.array([0.299, 0.587, 0.114])

# sRGB -> XYZ (D65)
_RGB_TO_XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ]
)
_WHITE = np.array([0.95047, 1.0, 1.08883])


def _check_pair(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"image shapes differ: {a.shape} vs {b.shape}")
    for name, img in (("first", a), ("second", b)):
        if img.size and (img.min() < 0 or img.max() > 1):
            raise ContractViolation(f"{name} image has values outside [0, 1]")


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB; +inf for identical images."""
    _check_pair(a, b)
    mse = float(np.mean((a.astype(np.float64) - b.astype(np.float64)) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def _gaussian_window() -> np.ndarray:
    r = np.arange(SSIM_WINDOW, dtype=np.float64) - (SSIM_WINDOW - 1) / 2
    g = np.exp(-(r**2) / (2 * SSIM_SIGMA**2))
    win = np.outer(g, g)
    return win / win.sum()


_WIN = _gaussian_window()


def _window_filter(x: np.ndarray) -> np.ndarray:
    wins = np.lib.stride_tricks.sliding_window_view(x, (SSIM_WINDOW, SSIM_WINDOW))
    return np.einsum("hwuv,uv->hw", wins, _WIN)


def _ssim_plane(x: np.ndarray, y: np.ndarray) -> float:
    mu_x = _window_filter(x)
    mu_y = _window_filter(y)
    sxx = _window_filter(x * x) - mu_x * mu_x
    syy = _window_filter(y * y) - mu_y * mu_y
    sxy = _window_filter(x * y) - mu_x * mu_y
    num = (2 * mu_x * mu_y + _C1) * (2 * sxy + _C2)
    den = (mu_x * mu_x + mu_y * mu_y + _C1) * (sxx + syy + _C2)
    return float(np.mean(num / den))


def luminance(img: np.ndarray) -> np.ndarray:
    if img.ndim == 2:
        return img
    if img.shape[2] == 1:
        return img[:, :, 0]
    return img[:, :, :3] @ _REC601


def ssim(a: np.ndarray, b: np.ndarray, channel_mode: str = "luminance") -> float:
    """Mean structural similarity over 11x11 Gaussian-weighted windows."""
    _check_pair(a, b)
    if a.shape[0] < SSIM_WINDOW or a.shape[1] < SSIM_WINDOW:
        raise SizeError(f"images must be at least {SSIM_WINDOW}x{SSIM_WINDOW} for SSIM")
    a = a.astype(np.float64)
    b = b.astype(np.float64)
    if channel_mode == "luminance" or a.ndim == 2:
        return _ssim_plane(luminance(a), luminance(b))
    if channel_mode == "per-channel":
        vals = [_ssim_plane(a[:, :, c], b[:, :, c]) for c in range(a.shape[2])]
        return float(np.mean(vals))
    raise ValueError(f"unknown channel_mode {channel_mode!r}")


def srgb_to_lab(img: np.ndarray) -> np.ndarray:
    """sRGB in [0,1] -> CIELAB (D65); L in [0, 100]."""
    if img.ndim != 3 or img.shape[2] != 3:
        raise DimensionError("srgb_to_lab expects an (H, W, 3) image")
    if img.size and (img.min() < 0 or img.max() > 1):
        raise ContractViolation("srgb_to_lab input must lie in [0, 1]")
    c = img.astype(np.float64)
    linear = np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)
    xyz = linear @ _RGB_TO_XYZ.T
    t = xyz / _WHITE
    delta = 6.0 / 29.0
    f = np.where(t > delta**3, np.cbrt(t), t / (3 * delta**2) + 4.0 / 29.0)
    lab = np.empty_like(xyz)
    lab[..., 0] = 116.0 * f[..., 1] - 16.0
    lab[..., 1] = 500.0 * (f[..., 0] - f[..., 1])
    lab[..., 2] = 200.0 * (f[..., 1] - f[..., 2])
    return lab.astype(np.float32)


@dataclass
class Heatmap:
    """Normalized lightness residual in [-1, 1] plus its normalizer."""

    values: np.ndarray  # (H, W) float32
    r_max: float


def correction_heatmap(input_img: np.ndarray, output_img: np.ndarray) -> Heatmap:
    """Pixel-wise correction strength: (O_L - I_L) / max|O_L - I_L|."""
    if input_img.shape != output_img.shape:
        raise DimensionError("heatmap inputs must have identical dims")
    residual = (
        srgb_to_lab(output_img)[:, :, 0].astype(np.float64)
        - srgb_to_lab(input_img)[:, :, 0].astype(np.float64)
    )
    r_max = float(np.abs(residual).max())
    if r_max == 0.0:
        return Heatmap(values=np.zeros(residual.shape, dtype=np.float32), r_max=0.0)
    return Heatmap(values=(residual / r_max).astype(np.float32), r_max=r_max)


def render_heatmap(values: np.ndarray) -> np.ndarray:
    """Map [-1, 1] through a symmetric blue-white-red diverging palette.

    Presentation only; returns an (H, W, 3) float image in [0, 1].
    """
    v = np.clip(values.astype(np.float64), -1.0, 1.0)
    out = np.empty(v.shape + (3,))
    out[..., 0] = 1.0 - np.maximum(-v, 0.0)  # red fades where v < 0
    out[..., 1] = 1.0 - np.abs(v)
    out[..., 2] = 1.0 - np.maximum(v, 0.0)  # blue fades where v > 0
    return out.astype(np.float32)
