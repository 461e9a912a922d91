"""Bilateral-grid corrector for the low-frequency band.

Pipeline: a small self-modulated feature extractor (SFE) turns the
low-frequency band into a single-channel guidance map in [0, 1]; the band
is resized to 48x48 and pushed through a cascade of parameter-free
context/residual decompositions (CFD) and shared SFE stages (HFD) whose
fused 48x48x8 output is rearranged into a 16x16 grid of 6 intensity bins,
each bin holding a 3x4 affine colour transform. Slicing interpolates the
grid trilinearly at every pixel's (position, guidance) coordinate and the
resulting per-pixel affines are applied to the band.

Grid geometry is fixed at 16x16 cells x 6 depth bins x 12 coefficients;
a grid is a (16, 16, 6, 12) array (the flat 72-channel view is depth-major:
channel k*12 + c is coefficient c of bin k). Coefficient order per bin:
rows of the 3x4 matrix, i.e. (R-weights, bias_R, G-weights, bias_G, ...)
flattened as [w_rr, w_rg, w_rb, b_r, w_gr, ...].

Interpolation coordinates are clamped to the last cell/bin so the tent
weights form a partition of unity over the whole image and a constant grid
slices to a constant coefficient map everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .errors import ContractViolation, DimensionError

GRID_SIZE = 16
GRID_DEPTH = 6
GRID_COEFFS = 12
HFD_INPUT_SIZE = 48

POOLING_MODES = ("gap", "gsp", "gap+gsp")

_DIAG_COEFFS = (0, 5, 10)  # w_rr, w_gg, w_bb: the diagonal colour gains
_OFF_COEFFS = tuple(c for c in range(GRID_COEFFS) if c not in _DIAG_COEFFS)


def _build_layout():
    """Bijection (depth k, coeff c) -> (fused channel, 3x3 block position).

    The three diagonal gains of all six bins fill channels {0, 1}; each
    bin's nine remaining coefficients get a dedicated channel 2 + k. With
    this grouping a bias-only fusion conv can realise any grid whose cells
    share one value per coefficient class, in particular the exact identity
    transform (channels 0 and 1 set to one, the rest zero).
    """
    ch = np.zeros((GRID_DEPTH, GRID_COEFFS), dtype=np.int64)
    pos = np.zeros((GRID_DEPTH, GRID_COEFFS), dtype=np.int64)
    for k in range(GRID_DEPTH):
        for di, c in enumerate(_DIAG_COEFFS):
            t = 3 * k + di
            ch[k, c] = t // 9
            pos[k, c] = t % 9
        for oi, c in enumerate(_OFF_COEFFS):
            ch[k, c] = 2 + k
            pos[k, c] = oi
    return ch, pos


_LAYOUT_CH, _LAYOUT_POS = _build_layout()

IDENTITY_FUSE_BIAS = np.array([1, 1, 0, 0, 0, 0, 0, 0], dtype=np.float32)

IDENTITY_COEFFS = np.array(
    [1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0], dtype=np.float32
)


@dataclass
class SfeParams:
    """Two 1x1 convs with a pooled channel modulation; optional 1-ch head."""

    conv_a_w: np.ndarray
    conv_a_b: np.ndarray
    conv_b_w: np.ndarray
    conv_b_b: np.ndarray
    head_w: np.ndarray | None = None
    head_b: np.ndarray | None = None


@dataclass
class HfdParams:
    """Stem, shared refine conv, shared SFE stage, and the fusion conv."""

    stem_w: np.ndarray
    stem_b: np.ndarray
    refine_w: np.ndarray
    refine_b: np.ndarray
    sfe: SfeParams
    fuse_w: np.ndarray
    fuse_b: np.ndarray


# ---------------------------------------------------------------------------
# SFE
# ---------------------------------------------------------------------------


def sfe_forward(x: np.ndarray, p: SfeParams):
    """Returns (y, cache). conv -> ReLU -> (* channel mean) -> conv [-> sigmoid head]."""
    t_pre = ops.conv1x1(x, p.conv_a_w, p.conv_a_b)
    t = ops.relu(t_pre)
    m = ops.global_avg_pool(t)
    q = t * m
    y = ops.conv1x1(q, p.conv_b_w, p.conv_b_b)
    cache = {"x": x, "t_pre": t_pre, "t": t, "m": m, "q": q, "y": y}
    if p.head_w is not None:
        z = ops.conv1x1(y, p.head_w, p.head_b)
        out = ops.sigmoid(z)
        cache["out"] = out
        return out, cache
    return y, cache


def sfe_backward(dout: np.ndarray, p: SfeParams, cache):
    """Returns (dx, grads) with grads keyed conv_a_w/.../head_b."""
    grads = {}
    if p.head_w is not None:
        dz = ops.sigmoid_backward(dout, cache["out"])
        dy, grads["head_w"], grads["head_b"] = ops.conv1x1_backward(
            dz, cache["y"], p.head_w
        )
    else:
        dy = dout
    dq, grads["conv_b_w"], grads["conv_b_b"] = ops.conv1x1_backward(
        dy, cache["q"], p.conv_b_w
    )
    t = cache["t"]
    dt = dq * cache["m"]
    dm = (dq * t).sum(axis=(0, 1))
    dt = dt + ops.global_avg_pool_backward(dm.astype(dt.dtype), t.shape)
    dt_pre = ops.relu_backward(dt, cache["t_pre"])
    dx, grads["conv_a_w"], grads["conv_a_b"] = ops.conv1x1_backward(
        dt_pre, cache["x"], p.conv_a_w
    )
    return dx, grads


# ---------------------------------------------------------------------------
# CFD (parameter-free)
# ---------------------------------------------------------------------------


def _cfd_scale(x: np.ndarray, pooling_mode: str) -> np.ndarray:
    if pooling_mode == "gap":
        return ops.global_avg_pool(x)
    if pooling_mode == "gsp":
        return ops.global_std_pool(x)
    if pooling_mode == "gap+gsp":
        return ops.global_avg_pool(x) + ops.global_std_pool(x)
    raise ValueError(f"unknown pooling mode {pooling_mode!r}")


def cfd_forward(x: np.ndarray, pooling_mode: str = "gap+gsp"):
    """Split x into (context, residual): context = x * per-channel scale."""
    s = _cfd_scale(x, pooling_mode)
    context = x * s
    residual = x - context
    return context, residual


def cfd_backward(dctx: np.ndarray, dres: np.ndarray, x: np.ndarray, pooling_mode: str):
    """VJP of cfd_forward; dres may be None when only context is used."""
    if dres is None:
        dres = np.zeros_like(dctx)
    s = _cfd_scale(x, pooling_mode)
    u = dctx - dres  # residual = x - context
    dx = dres + u * s
    ds = (u * x).sum(axis=(0, 1)).astype(x.dtype)
    if pooling_mode in ("gap", "gap+gsp"):
        dx = dx + ops.global_avg_pool_backward(ds, x.shape)
    if pooling_mode in ("gsp", "gap+gsp"):
        dx = dx + ops.global_std_pool_backward(ds, x)
    return dx


# ---------------------------------------------------------------------------
# HFD
# ---------------------------------------------------------------------------


def _fused_to_grid(fused: np.ndarray) -> np.ndarray:
    # 48x48x8 -> (16, 16, 9 block positions, 8 ch) -> (16, 16, 6, 12)
    s2d = (
        fused.reshape(GRID_SIZE, 3, GRID_SIZE, 3, 8)
        .transpose(0, 2, 1, 3, 4)
        .reshape(GRID_SIZE, GRID_SIZE, 9, 8)
    )
    return s2d[:, :, _LAYOUT_POS, _LAYOUT_CH]


def _grid_to_fused(dgrid: np.ndarray) -> np.ndarray:
    ds2d = np.zeros(
        (GRID_SIZE, GRID_SIZE, 9, 8), dtype=dgrid.dtype
    )
    ds2d[:, :, _LAYOUT_POS, _LAYOUT_CH] = dgrid
    return (
        ds2d.reshape(GRID_SIZE, GRID_SIZE, 3, 3, 8)
        .transpose(0, 2, 1, 3, 4)
        .reshape(HFD_INPUT_SIZE, HFD_INPUT_SIZE, 8)
    )


def hfd_forward(
    lhat: np.ndarray,
    p: HfdParams,
    cfd_count: int = 3,
    pooling_mode: str = "gap+gsp",
):
    """48x48x3 downsampled band -> (16, 16, 6, 12) affine grid. Returns (grid, cache)."""
    if lhat.shape[:2] != (HFD_INPUT_SIZE, HFD_INPUT_SIZE):
        raise DimensionError(
            f"hfd expects a {HFD_INPUT_SIZE}x{HFD_INPUT_SIZE} input, got {lhat.shape}"
        )
    f = ops.conv1x1(lhat, p.stem_w, p.stem_b)
    cache = {"lhat": lhat, "f": [f], "ctx": [], "ctx_pre": [], "sfe": []}
    ctx_sum = None
    for _ in range(cfd_count):
        ctx, res = cfd_forward(f, pooling_mode)
        cache["ctx"].append(ctx)
        ctx_pre = ops.conv1x1(ctx, p.refine_w, p.refine_b)
        cache["ctx_pre"].append(ctx_pre)
        ctx_ref = ops.relu(ctx_pre)
        ctx_sum = ctx_ref if ctx_sum is None else ctx_sum + ctx_ref
        f, sfe_cache = sfe_forward(res, p.sfe)
        cache["sfe"].append(sfe_cache)
        cache["f"].append(f)
    fused_in = ctx_sum + f
    cache["fused_in"] = fused_in
    fused = ops.conv1x1(fused_in, p.fuse_w, p.fuse_b)
    return _fused_to_grid(fused), cache


def hfd_backward(dgrid: np.ndarray, p: HfdParams, cache, pooling_mode: str = "gap+gsp"):
    """Returns (dlhat, grads); shared refine/SFE gradients accumulate across stages."""
    dfused = _grid_to_fused(dgrid)
    dfused_in, dfuse_w, dfuse_b = ops.conv1x1_backward(
        dfused, cache["fused_in"], p.fuse_w
    )
    grads = {
        "fuse_w": dfuse_w,
        "fuse_b": dfuse_b,
        "refine_w": np.zeros_like(p.refine_w),
        "refine_b": np.zeros_like(p.refine_b),
        "stem_w": None,
        "stem_b": None,
        "sfe": {
            "conv_a_w": np.zeros_like(p.sfe.conv_a_w),
            "conv_a_b": np.zeros_like(p.sfe.conv_a_b),
            "conv_b_w": np.zeros_like(p.sfe.conv_b_w),
            "conv_b_b": np.zeros_like(p.sfe.conv_b_b),
        },
    }
    k = len(cache["ctx"])
    df = dfused_in  # gradient w.r.t. the final SFE output f_K
    for stage in range(k - 1, -1, -1):
        dres, sfe_grads = sfe_backward(df, p.sfe, cache["sfe"][stage])
        for name, g in sfe_grads.items():
            grads["sfe"][name] += g
        dctx_pre = ops.relu_backward(dfused_in, cache["ctx_pre"][stage])
        dctx, drw, drb = ops.conv1x1_backward(
            dctx_pre, cache["ctx"][stage], p.refine_w
        )
        grads["refine_w"] += drw
        grads["refine_b"] += drb
        df = cfd_backward(dctx, dres, cache["f"][stage], pooling_mode)
    dlhat, grads["stem_w"], grads["stem_b"] = ops.conv1x1_backward(
        df, cache["lhat"], p.stem_w
    )
    return dlhat, grads


# ---------------------------------------------------------------------------
# slicing
# ---------------------------------------------------------------------------


def _tent_axis(n_out: int, n_cells: int):
    """Clamped cell coordinates for one spatial axis + tent corner weights."""
    s = np.clip(
        n_cells * (np.arange(n_out, dtype=np.float64) + 0.5) / n_out,
        0.0,
        n_cells - 1.0,
    )
    i0 = np.floor(s).astype(np.int64)
    f = s - i0
    i1 = np.minimum(i0 + 1, n_cells - 1)  # weight f is 0 whenever clamped
    return i0, i1, f


def _depth_coords(guidance: np.ndarray):
    s = np.clip(GRID_DEPTH * guidance.astype(np.float64), 0.0, GRID_DEPTH - 1.0)
    k0 = np.floor(s).astype(np.int64)
    f = s - k0
    k1 = np.minimum(k0 + 1, GRID_DEPTH - 1)
    return k0, k1, f


def _check_slice_args(grid: np.ndarray, guidance: np.ndarray):
    if grid.shape != (GRID_SIZE, GRID_SIZE, GRID_DEPTH, GRID_COEFFS):
        raise DimensionError(f"grid must be {GRID_SIZE}x{GRID_SIZE}x{GRID_DEPTH}x{GRID_COEFFS}")
    if guidance.ndim != 2:
        raise DimensionError("guidance must be a 2D map")
    if guidance.size and (guidance.min() < 0 or guidance.max() > 1):
        raise ContractViolation("guidance values must lie in [0, 1]")


def slice_grid(grid: np.ndarray, guidance: np.ndarray) -> np.ndarray:
    """Trilinear slicing: (16,16,6,12) grid + (H,W) guidance -> (H,W,12) coeffs."""
    _check_slice_args(grid, guidance)
    h, w = guidance.shape
    i0, i1, fx = _tent_axis(h, GRID_SIZE)
    j0, j1, fy = _tent_axis(w, GRID_SIZE)
    k0, k1, fz = _depth_coords(guidance)
    dt = grid.dtype
    fx = fx.astype(dt)[:, None]
    fy = fy.astype(dt)[None, :]
    fz = fz.astype(dt)
    flat = grid.reshape(-1, GRID_COEFFS)
    out = np.zeros((h, w, GRID_COEFFS), dtype=dt)
    for ia, wa in ((i0, 1 - fx), (i1, fx)):
        for jb, wb in ((j0, 1 - fy), (j1, fy)):
            cell = (ia[:, None] * GRID_SIZE + jb[None, :]) * GRID_DEPTH
            wxy = wa * wb
            for kc, wc in ((k0, 1 - fz), (k1, fz)):
                out += (wxy * wc)[:, :, None] * flat[cell + kc]
    return out


def slice_grid_backward(dcoeffs: np.ndarray, grid: np.ndarray, guidance: np.ndarray):
    """Returns (dgrid, dguidance)."""
    h, w = guidance.shape
    i0, i1, fx = _tent_axis(h, GRID_SIZE)
    j0, j1, fy = _tent_axis(w, GRID_SIZE)
    k0, k1, fz = _depth_coords(guidance)
    dt = dcoeffs.dtype
    fx = fx.astype(dt)[:, None]
    fy = fy.astype(dt)[None, :]
    fz = fz.astype(dt)
    flat = grid.reshape(-1, GRID_COEFFS)
    dflat = np.zeros_like(flat)
    # depth gradient only where the coordinate is strictly inside the bins
    s = GRID_DEPTH * guidance.astype(np.float64)
    interior = ((s > 0) & (s < GRID_DEPTH - 1)).astype(dt)
    dg = np.zeros((h, w), dtype=dt)
    for ia, wa in ((i0, 1 - fx), (i1, fx)):
        for jb, wb in ((j0, 1 - fy), (j1, fy)):
            cell = (ia[:, None] * GRID_SIZE + jb[None, :]) * GRID_DEPTH
            wxy = wa * wb
            g0 = flat[cell + k0]
            g1 = flat[cell + k1]
            np.add.at(dflat, cell + k0, (wxy * (1 - fz))[:, :, None] * dcoeffs)
            np.add.at(dflat, cell + k1, (wxy * fz)[:, :, None] * dcoeffs)
            dg += wxy * ((g1 - g0) * dcoeffs).sum(axis=-1)
    dg *= GRID_DEPTH * interior
    return dflat.reshape(grid.shape), dg


# ---------------------------------------------------------------------------
# affine application
# ---------------------------------------------------------------------------


def apply_affine(image: np.ndarray, coeffs: np.ndarray) -> np.ndarray:
    """Per-pixel 3x4 affine: out = A[:, :3] @ rgb + A[:, 3]."""
    if image.ndim != 3 or image.shape[2] != 3:
        raise DimensionError("apply_affine expects an (H, W, 3) image")
    if coeffs.shape != image.shape[:2] + (GRID_COEFFS,):
        raise DimensionError(
            f"coefficient map {coeffs.shape} does not match image {image.shape}"
        )
    a = coeffs.reshape(coeffs.shape[:2] + (3, 4))
    return np.einsum("hwoc,hwc->hwo", a[..., :3], image) + a[..., 3]


def apply_affine_backward(dout: np.ndarray, image: np.ndarray, coeffs: np.ndarray):
    a = coeffs.reshape(coeffs.shape[:2] + (3, 4))
    dimage = np.einsum("hwoc,hwo->hwc", a[..., :3], dout)
    da = np.empty_like(a)
    da[..., :3] = np.einsum("hwo,hwc->hwoc", dout, image)
    da[..., 3] = dout
    return dimage, da.reshape(coeffs.shape)


# ---------------------------------------------------------------------------
# full low-frequency correction
# ---------------------------------------------------------------------------


def correct_low_freq(
    low: np.ndarray,
    guidance_p: SfeParams,
    hfd_p: HfdParams,
    cfd_count: int = 3,
    pooling_mode: str = "gap+gsp",
):
    """Returns (corrected_low, guidance_map, grid, cache)."""
    if low.ndim != 3 or low.shape[2] != 3:
        raise DimensionError("low-frequency band must be (H, W, 3)")
    gmap3, sfe_cache = sfe_forward(low, guidance_p)
    gmap = gmap3[:, :, 0]
    lhat = ops.resize_bilinear(low, HFD_INPUT_SIZE, HFD_INPUT_SIZE)
    grid, hfd_cache = hfd_forward(lhat, hfd_p, cfd_count, pooling_mode)
    coeffs = slice_grid(grid, gmap)
    corrected = apply_affine(low, coeffs)
    cache = {
        "low": low,
        "sfe": sfe_cache,
        "gmap": gmap,
        "grid": grid,
        "hfd": hfd_cache,
        "coeffs": coeffs,
    }
    return corrected, gmap, grid, cache


def correct_low_freq_backward(
    dout: np.ndarray,
    guidance_p: SfeParams,
    hfd_p: HfdParams,
    cache,
    pooling_mode: str = "gap+gsp",
):
    """Returns (dlow, guidance_grads, hfd_grads)."""
    low = cache["low"]
    dlow, dcoeffs = apply_affine_backward(dout, low, cache["coeffs"])
    dgrid, dg = slice_grid_backward(dcoeffs, cache["grid"], cache["gmap"])
    dlhat, hfd_grads = hfd_backward(dgrid, hfd_p, cache["hfd"], pooling_mode)
    dlow = dlow + ops.resize_bilinear_backward(dlhat, low.shape[0], low.shape[1])
    dlow_g, guidance_grads = sfe_backward(dg[:, :, None], guidance_p, cache["sfe"])
    return dlow + dlow_g, guidance_grads, hfd_grads
