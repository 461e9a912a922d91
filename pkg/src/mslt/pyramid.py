"""Laplacian pyramid decomposition and reconstruction.

Two flavours:

* fixed: the classic 5x5 binomial/Gaussian kernel, strided blur for
  downsampling and zero-insertion + blur (x4 gain) for upsampling. This
  pair is a perfect-reconstruction transform.
* learnable: per-level 3x3 convolutions (stride 2 for downsampling;
  bilinear x2 followed by a stride-1 conv for upsampling, shared between
  band formation and reconstruction). Not an exact inverse pair in
  general; gradients flow into the kernels.

Inputs are reflect-padded to a multiple of 2**(n-1); the original size is
recorded on the pyramid and the padding is cropped off at reconstruction.
All pyramid convolutions use reflect boundary handling.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ops
from .errors import DimensionError, SizeError


def gaussian_kernel() -> np.ndarray:
    """The fixed 5x5 kernel (1/256) * [1 4 6 4 1] outer [1 4 6 4 1]."""
    row = np.array([1.0, 4.0, 6.0, 4.0, 1.0], dtype=np.float32)
    return np.outer(row, row) / np.float32(256.0)


_K5 = gaussian_kernel()


@dataclass
class Pyramid:
    """High-frequency bands (finest first) plus the low-frequency residual."""

    highs: list[np.ndarray]
    low: np.ndarray
    levels: int
    orig_h: int
    orig_w: int


@dataclass
class PyramidParams:
    """Learnable 3x3 kernels for one pyramid: n-1 down and n-1 up convs."""

    down_w: list[np.ndarray] = field(default_factory=list)  # each (3, 3, 3, 3)
    down_b: list[np.ndarray] = field(default_factory=list)  # each (3,)
    up_w: list[np.ndarray] = field(default_factory=list)
    up_b: list[np.ndarray] = field(default_factory=list)

    @property
    def levels(self) -> int:
        return len(self.down_w) + 1


def gaussian_init_params(n: int, dtype=np.float32) -> PyramidParams:
    """Initialise learnable kernels near the fixed-Gaussian operating point.

    Down kernels: the 5x5 Gaussian truncated to its central 3x3 and
    renormalised, replicated per channel (cross-channel taps zero). Up
    kernels: identity-at-center, so upsampling starts as plain bilinear.
    """
    block = _K5[1:4, 1:4].astype(np.float64)
    block = (block / block.sum()).astype(dtype)
    ident = np.zeros((3, 3), dtype=dtype)
    ident[1, 1] = 1
    pp = PyramidParams()
    for _ in range(n - 1):
        dw = np.zeros((3, 3, 3, 3), dtype=dtype)
        uw = np.zeros((3, 3, 3, 3), dtype=dtype)
        for c in range(3):
            dw[c, c] = block
            uw[c, c] = ident
        pp.down_w.append(dw)
        pp.down_b.append(np.zeros(3, dtype=dtype))
        pp.up_w.append(uw)
        pp.up_b.append(np.zeros(3, dtype=dtype))
    return pp


# ---------------------------------------------------------------------------
# fixed-kernel primitives
# ---------------------------------------------------------------------------


def _blur5(x: np.ndarray, stride: int) -> np.ndarray:
    """Depthwise 5x5 Gaussian, reflect padding 2."""
    h, w = x.shape[:2]
    oh = (h - 1) // stride + 1
    ow = (w - 1) // stride + 1
    xp = ops.reflect_pad(x, 2)
    k = _K5.astype(x.dtype)
    y = np.zeros((oh, ow) + x.shape[2:], dtype=x.dtype)
    for u in range(5):
        for v in range(5):
            y += k[u, v] * xp[
                u : u + stride * (oh - 1) + 1 : stride,
                v : v + stride * (ow - 1) + 1 : stride,
            ]
    return y


def _blur5_adjoint(dy: np.ndarray, stride: int, h: int, w: int) -> np.ndarray:
    oh, ow = dy.shape[:2]
    k = _K5.astype(dy.dtype)
    dxp = np.zeros((h + 4, w + 4) + dy.shape[2:], dtype=dy.dtype)
    for u in range(5):
        for v in range(5):
            dxp[
                u : u + stride * (oh - 1) + 1 : stride,
                v : v + stride * (ow - 1) + 1 : stride,
            ] += k[u, v] * dy
    return ops.reflect_pad_adjoint(dxp, 2, h, w)


def pyr_down_fixed(x: np.ndarray) -> np.ndarray:
    return _blur5(x, stride=2)


def pyr_up_fixed(x: np.ndarray) -> np.ndarray:
    """Zero-insertion x2 then Gaussian blur scaled by 4 to preserve DC gain."""
    h, w = x.shape[:2]
    z = np.zeros((2 * h, 2 * w) + x.shape[2:], dtype=x.dtype)
    z[::2, ::2] = x
    return 4 * _blur5(z, stride=1)


def pyr_up_fixed_adjoint(dy: np.ndarray) -> np.ndarray:
    dz = _blur5_adjoint(4 * dy, 1, dy.shape[0], dy.shape[1])
    return dz[::2, ::2]


# ---------------------------------------------------------------------------
# shared plumbing
# ---------------------------------------------------------------------------


def pad_to_multiple(img: np.ndarray, mult: int) -> np.ndarray:
    h, w = img.shape[:2]
    ph = (-h) % mult
    pw = (-w) % mult
    if ph == 0 and pw == 0:
        return img
    return np.pad(img, ((0, ph), (0, pw), (0, 0)), mode="reflect")


def _check_input(img: np.ndarray, n: int) -> None:
    if n < 2:
        raise ValueError("pyramid needs at least 2 levels")
    if img.ndim != 3 or img.shape[2] != 3:
        raise DimensionError("pyramid input must be (H, W, 3)")
    m = 2 ** (n - 1)
    if img.shape[0] < m or img.shape[1] < m:
        raise SizeError(
            f"input {img.shape[0]}x{img.shape[1]} too small for {n} levels "
            f"(needs at least {m}x{m})"
        )


# ---------------------------------------------------------------------------
# fixed-kernel pyramid
# ---------------------------------------------------------------------------


def decompose_fixed(img: np.ndarray, n: int) -> Pyramid:
    _check_input(img, n)
    h, w = img.shape[:2]
    g = pad_to_multiple(img, 2 ** (n - 1))
    highs = []
    for _ in range(n - 1):
        nxt = pyr_down_fixed(g)
        highs.append(g - pyr_up_fixed(nxt))
        g = nxt
    return Pyramid(highs=highs, low=g, levels=n, orig_h=h, orig_w=w)


def reconstruct_fixed(p: Pyramid) -> np.ndarray:
    r = p.low
    for high in reversed(p.highs):
        up = pyr_up_fixed(r)
        if up.shape != high.shape:
            raise DimensionError(
                f"pyramid level shape mismatch: {up.shape} vs {high.shape}"
            )
        r = up + high
    return r[: p.orig_h, : p.orig_w]


def reconstruct_fixed_backward(dout: np.ndarray, p: Pyramid):
    """Gradients w.r.t. every band given d(reconstructed image).

    ``dout`` is at the cropped (original) size; it is zero-embedded back to
    the padded size first. Returns (dhighs, dlow).
    """
    ph = p.highs[0].shape[0] if p.highs else p.low.shape[0]
    pw = p.highs[0].shape[1] if p.highs else p.low.shape[1]
    dr = np.zeros((ph, pw, dout.shape[2]), dtype=dout.dtype)
    dr[: p.orig_h, : p.orig_w] = dout
    dhighs: list[np.ndarray] = []
    for _ in p.highs:
        dhighs.append(dr)
        dr = pyr_up_fixed_adjoint(dr)
    return dhighs, dr


# ---------------------------------------------------------------------------
# learnable pyramid
# ---------------------------------------------------------------------------


def _up_learnable(x, uw, ub):
    h, w = x.shape[:2]
    up_in = ops.resize_bilinear(x, 2 * h, 2 * w)
    return ops.conv3x3(up_in, uw, ub, stride=1, pad_mode="reflect"), up_in


def decompose_learnable(img: np.ndarray, n: int, pp: PyramidParams):
    """Returns (Pyramid, cache); the cache feeds the backward pass."""
    _check_input(img, n)
    if pp.levels != n:
        raise DimensionError(f"pyramid params built for {pp.levels} levels, got n={n}")
    h, w = img.shape[:2]
    g = pad_to_multiple(img, 2 ** (n - 1))
    highs = []
    cache = {"g": [], "up_in": []}
    for i in range(n - 1):
        cache["g"].append(g)
        nxt = ops.conv3x3(g, pp.down_w[i], pp.down_b[i], stride=2, pad_mode="reflect")
        up, up_in = _up_learnable(nxt, pp.up_w[i], pp.up_b[i])
        cache["up_in"].append(up_in)
        highs.append(g - up)
        g = nxt
    cache["g"].append(g)
    pyr = Pyramid(highs=highs, low=g, levels=n, orig_h=h, orig_w=w)
    return pyr, cache


def decompose_learnable_backward(dhighs, dlow, pp: PyramidParams, cache):
    """Backward through the learnable decomposition.

    Returns (d_padded_input, grads) where grads mirrors PyramidParams.
    """
    n = pp.levels
    grads = PyramidParams(
        down_w=[np.zeros_like(a) for a in pp.down_w],
        down_b=[np.zeros_like(a) for a in pp.down_b],
        up_w=[np.zeros_like(a) for a in pp.up_w],
        up_b=[np.zeros_like(a) for a in pp.up_b],
    )
    dg = [None] * n
    dg[n - 1] = dlow.copy()
    for i in range(n - 2, -1, -1):
        # band formation: H_i = G_i - upconv_i(bilinear(G_{i+1}))
        dup_in, dwu, dbu = ops.conv3x3_backward(
            -dhighs[i], cache["up_in"][i], pp.up_w[i], stride=1, pad_mode="reflect"
        )
        grads.up_w[i] += dwu
        grads.up_b[i] += dbu
        gh, gw = cache["g"][i + 1].shape[:2]
        dg[i + 1] = dg[i + 1] + ops.resize_bilinear_backward(dup_in, gh, gw)
        # downsampling: G_{i+1} = downconv_i(G_i)
        dgi, dwd, dbd = ops.conv3x3_backward(
            dg[i + 1], cache["g"][i], pp.down_w[i], stride=2, pad_mode="reflect"
        )
        grads.down_w[i] += dwd
        grads.down_b[i] += dbd
        dg[i] = dgi + dhighs[i]
    return dg[0], grads


def reconstruct_learnable(p: Pyramid, pp: PyramidParams):
    """Returns (image, cache); upsampling kernels are shared with decomposition."""
    if pp.levels != p.levels:
        raise DimensionError("pyramid params do not match pyramid depth")
    r = p.low
    cache = {"r": [], "up_in": []}
    for i in range(p.levels - 2, -1, -1):
        cache["r"].append(r)
        up, up_in = _up_learnable(r, pp.up_w[i], pp.up_b[i])
        cache["up_in"].append(up_in)
        if up.shape != p.highs[i].shape:
            raise DimensionError(
                f"pyramid level shape mismatch: {up.shape} vs {p.highs[i].shape}"
            )
        r = up + p.highs[i]
    cache["padded_shape"] = r.shape
    return r[: p.orig_h, : p.orig_w], cache


def reconstruct_learnable_backward(dout: np.ndarray, p: Pyramid, pp: PyramidParams, cache):
    """Returns (dhighs, dlow, grads) for the learnable reconstruction."""
    grads = PyramidParams(
        down_w=[np.zeros_like(a) for a in pp.down_w],
        down_b=[np.zeros_like(a) for a in pp.down_b],
        up_w=[np.zeros_like(a) for a in pp.up_w],
        up_b=[np.zeros_like(a) for a in pp.up_b],
    )
    dr = np.zeros(cache["padded_shape"], dtype=dout.dtype)
    dr[: p.orig_h, : p.orig_w] = dout
    dhighs: list[np.ndarray] = [None] * (p.levels - 1)
    # forward looped level = n-2 .. 0, so backward walks level = 0 .. n-2;
    # cache entries were appended in forward order
    for level in range(p.levels - 1):
        cpos = p.levels - 2 - level
        dhighs[level] = dr
        dup_in, dwu, dbu = ops.conv3x3_backward(
            dr, cache["up_in"][cpos], pp.up_w[level], stride=1, pad_mode="reflect"
        )
        grads.up_w[level] += dwu
        grads.up_b[level] += dbu
        rh, rw = cache["r"][cpos].shape[:2]
        dr = ops.resize_bilinear_backward(dup_in, rh, rw)
    return dhighs, dr, grads
