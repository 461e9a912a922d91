"""Dense float32 image-tensor kernels with analytic backward rules.

Images are plain numpy arrays of shape (H, W, C), row-major, channel
innermost. Network storage is float32; every op preserves the dtype of its
input so gradient checks can run the same code in float64. Reductions
(pooling, std) always accumulate in float64.

There is no autograd graph: each forward op has a matching ``*_backward``
function computing vector-Jacobian products, and composite layers chain
them by hand.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError

# ---------------------------------------------------------------------------
# padding helpers
# ---------------------------------------------------------------------------


def _reflect_index(n: int, pad: int) -> np.ndarray:
    """Row/column source indices for reflect padding (no edge repeat).

    Uses the triangle-wave formula so it stays defined when pad exceeds the
    extent (tiny pyramid levels); matches np.pad(mode="reflect") otherwise.
    """
    if n == 1:
        return np.zeros(1 + 2 * pad, dtype=np.int64)
    i = np.arange(-pad, n + pad)
    period = 2 * n - 2
    m = np.abs(i) % period
    return np.where(m < n, m, period - m)


def reflect_pad(x: np.ndarray, pad: int) -> np.ndarray:
    """Reflect-pad the two leading (spatial) axes by ``pad`` pixels."""
    ri = _reflect_index(x.shape[0], pad)
    ci = _reflect_index(x.shape[1], pad)
    return x[ri][:, ci]


def reflect_pad_adjoint(d: np.ndarray, pad: int, h: int, w: int) -> np.ndarray:
    """Transpose of :func:`reflect_pad`: fold padded-border gradients back."""
    if h > pad:
        t = d[pad : pad + h].copy()
        for k in range(1, pad + 1):
            t[k] += d[pad - k]
            t[h - 1 - k] += d[pad + h - 1 + k]
    else:
        t = np.zeros((h,) + d.shape[1:], dtype=d.dtype)
        np.add.at(t, _reflect_index(h, pad), d)
    if w > pad:
        out = t[:, pad : pad + w].copy()
        for k in range(1, pad + 1):
            out[:, k] += t[:, pad - k]
            out[:, w - 1 - k] += t[:, pad + w - 1 + k]
    else:
        out = np.zeros((h, w) + d.shape[2:], dtype=d.dtype)
        np.add.at(out, (slice(None), _reflect_index(w, pad)), t)
    return out


def zero_pad(x: np.ndarray, pad: int) -> np.ndarray:
    widths = [(pad, pad), (pad, pad)] + [(0, 0)] * (x.ndim - 2)
    return np.pad(x, widths)


# ---------------------------------------------------------------------------
# 1x1 convolution (per-pixel linear map)
# ---------------------------------------------------------------------------


def conv1x1(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Per-pixel linear map: y[h,w,:] = w @ x[h,w,:] + b.

    x: (H, W, Cin), w: (Cout, Cin), b: (Cout,).
    """
    if x.shape[2] != w.shape[1]:
        raise DimensionError(
            f"conv1x1: input has {x.shape[2]} channels, weight expects {w.shape[1]}"
        )
    h, wid, cin = x.shape
    y = x.reshape(-1, cin) @ w.T + b
    return y.reshape(h, wid, -1).astype(x.dtype, copy=False)


def conv1x1_backward(dy: np.ndarray, x: np.ndarray, w: np.ndarray):
    """Gradients of conv1x1 w.r.t. (x, w, b) given upstream dy."""
    h, wid, cin = x.shape
    cout = w.shape[0]
    dy2 = dy.reshape(-1, cout)
    dx = (dy2 @ w).reshape(h, wid, cin)
    dw = dy2.T @ x.reshape(-1, cin)
    db = dy2.sum(axis=0)
    return dx, dw, db


# ---------------------------------------------------------------------------
# 3x3 convolution (cross-correlation), stride 1 or 2, padding 1
# ---------------------------------------------------------------------------


def _conv3x3_geometry(h: int, w: int, stride: int):
    out_h = (h - 1) // stride + 1
    out_w = (w - 1) // stride + 1
    return out_h, out_w


def _pad1(x: np.ndarray, pad_mode: str) -> np.ndarray:
    if pad_mode == "zero":
        return zero_pad(x, 1)
    if pad_mode == "reflect":
        return reflect_pad(x, 1)
    raise ValueError(f"unknown pad_mode {pad_mode!r}")


def conv3x3(
    x: np.ndarray,
    w: np.ndarray,
    b: np.ndarray,
    stride: int = 1,
    pad_mode: str = "zero",
) -> np.ndarray:
    """3x3 cross-correlation with padding 1.

    x: (H, W, Cin), w: (Cout, Cin, 3, 3), b: (Cout,). Stride 2 halves the
    spatial dims (ceil). Implemented as nine shifted matmuls so large inputs
    never materialise an im2col buffer.
    """
    if x.shape[2] != w.shape[1]:
        raise DimensionError(
            f"conv3x3: input has {x.shape[2]} channels, weight expects {w.shape[1]}"
        )
    if stride not in (1, 2):
        raise ValueError("conv3x3 supports stride 1 or 2")
    h, wid, cin = x.shape
    cout = w.shape[0]
    out_h, out_w = _conv3x3_geometry(h, wid, stride)
    xp = _pad1(x, pad_mode)
    y = np.empty((out_h * out_w, cout), dtype=x.dtype)
    y[:] = b
    for u in range(3):
        for v in range(3):
            win = xp[
                u : u + stride * (out_h - 1) + 1 : stride,
                v : v + stride * (out_w - 1) + 1 : stride,
            ]
            y += win.reshape(-1, cin) @ w[:, :, u, v].T
    return y.reshape(out_h, out_w, cout)


def conv3x3_backward(
    dy: np.ndarray,
    x: np.ndarray,
    w: np.ndarray,
    stride: int = 1,
    pad_mode: str = "zero",
):
    h, wid, cin = x.shape
    cout = w.shape[0]
    out_h, out_w = _conv3x3_geometry(h, wid, stride)
    xp = _pad1(x, pad_mode)
    dxp = np.zeros_like(xp)
    dy2 = dy.reshape(-1, cout)
    dw = np.empty_like(w)
    for u in range(3):
        for v in range(3):
            rows = slice(u, u + stride * (out_h - 1) + 1, stride)
            cols = slice(v, v + stride * (out_w - 1) + 1, stride)
            win = xp[rows, cols].reshape(-1, cin)
            dw[:, :, u, v] = dy2.T @ win
            dxp[rows, cols] += (dy2 @ w[:, :, u, v]).reshape(out_h, out_w, cin)
    db = dy2.sum(axis=0)
    if pad_mode == "zero":
        dx = dxp[1:-1, 1:-1]
    else:
        dx = reflect_pad_adjoint(dxp, 1, h, wid)
    return dx, dw, db


# ---------------------------------------------------------------------------
# global pooling
# ---------------------------------------------------------------------------


def global_avg_pool(x: np.ndarray) -> np.ndarray:
    """Per-channel mean over the spatial axes (float64 accumulation)."""
    return x.mean(axis=(0, 1), dtype=np.float64).astype(x.dtype)


def global_avg_pool_backward(dmean: np.ndarray, x_shape) -> np.ndarray:
    h, w, c = x_shape
    g = dmean / (h * w)
    return np.broadcast_to(g, (h, w, c)).astype(dmean.dtype, copy=True)


def global_std_pool(x: np.ndarray) -> np.ndarray:
    """Per-channel population standard deviation (divide by N, not N-1)."""
    xd = x.astype(np.float64, copy=False)
    m = xd.mean(axis=(0, 1))
    var = ((xd - m) ** 2).mean(axis=(0, 1))
    return np.sqrt(var).astype(x.dtype)


def global_std_pool_backward(dstd: np.ndarray, x: np.ndarray) -> np.ndarray:
    # d std / d x[i] = (x[i] - mean) / (N * std); zero for a constant channel
    h, w, c = x.shape
    n = h * w
    m = global_avg_pool(x)
    s = global_std_pool(x)
    safe = np.where(s > 0, s, 1).astype(x.dtype)
    g = dstd * np.where(s > 0, 1, 0) / (n * safe)
    return ((x - m) * g).astype(x.dtype, copy=False)


# ---------------------------------------------------------------------------
# bilinear resize (half-pixel centers, edge replication)
# ---------------------------------------------------------------------------


def _resize_coords(out_n: int, in_n: int):
    s = (np.arange(out_n, dtype=np.float64) + 0.5) * (in_n / out_n) - 0.5
    i0 = np.floor(s).astype(np.int64)
    f = s - i0
    lo = np.clip(i0, 0, in_n - 1)
    hi = np.clip(i0 + 1, 0, in_n - 1)
    return lo, hi, f


def _resize_up2(x: np.ndarray) -> np.ndarray:
    """Exact x2 upsampling (half-pixel weights are 0.25 / 0.75); slicing only."""
    q1 = x.dtype.type(0.25)
    q3 = x.dtype.type(0.75)
    h, w = x.shape[:2]
    t = np.empty((2 * h,) + x.shape[1:], dtype=x.dtype)
    t[0] = x[0]
    t[2::2] = q1 * x[:-1] + q3 * x[1:]
    t[1:-1:2] = q3 * x[:-1] + q1 * x[1:]
    t[-1] = x[-1]
    out = np.empty((2 * h, 2 * w) + x.shape[2:], dtype=x.dtype)
    out[:, 0] = t[:, 0]
    out[:, 2::2] = q1 * t[:, :-1] + q3 * t[:, 1:]
    out[:, 1:-1:2] = q3 * t[:, :-1] + q1 * t[:, 1:]
    out[:, -1] = t[:, -1]
    return out


def resize_bilinear(x: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear interpolation with the half-pixel-center convention."""
    if out_h < 1 or out_w < 1:
        raise DimensionError("resize_bilinear: output dims must be >= 1")
    in_h, in_w = x.shape[:2]
    if out_h == 2 * in_h and out_w == 2 * in_w:
        # the pyramid's hot path: closed-form slicing instead of gathers
        return _resize_up2(x)
    r0, r1, fr = _resize_coords(out_h, in_h)
    c0, c1, fc = _resize_coords(out_w, in_w)
    fr = fr.astype(x.dtype)[:, None, None]
    fc = fc.astype(x.dtype)[None, :, None]
    top = x[r0][:, c0] * (1 - fc) + x[r0][:, c1] * fc
    bot = x[r1][:, c0] * (1 - fc) + x[r1][:, c1] * fc
    return top * (1 - fr) + bot * fr


def _resize_weight_matrix(out_n: int, in_n: int, dtype) -> np.ndarray:
    """Dense (in_n, out_n) scatter matrix: column o holds output o's two weights."""
    lo, hi, f = _resize_coords(out_n, in_n)
    w = np.zeros((in_n, out_n), dtype=dtype)
    cols = np.arange(out_n)
    np.add.at(w, (lo, cols), (1 - f).astype(dtype))
    np.add.at(w, (hi, cols), f.astype(dtype))
    return w


def resize_bilinear_backward(dy: np.ndarray, in_h: int, in_w: int) -> np.ndarray:
    """Adjoint of resize_bilinear (the resize is separable and linear)."""
    out_h, out_w = dy.shape[:2]
    wr = _resize_weight_matrix(out_h, in_h, dy.dtype)
    wc = _resize_weight_matrix(out_w, in_w, dy.dtype)
    tmp = np.tensordot(wr, dy, axes=([1], [0]))  # (in_h, out_w, C...)
    dx = np.tensordot(tmp, wc, axes=([1], [1]))  # (in_h, C..., in_w)
    return np.moveaxis(dx, -1, 1)


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(dy: np.ndarray, x: np.ndarray) -> np.ndarray:
    return dy * (x > 0)


def leaky_relu(x: np.ndarray, slope: float = 0.01) -> np.ndarray:
    return np.where(x > 0, x, x * x.dtype.type(slope))


def leaky_relu_backward(dy: np.ndarray, x: np.ndarray, slope: float = 0.01) -> np.ndarray:
    return dy * np.where(x > 0, x.dtype.type(1), x.dtype.type(slope))


def sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form is overflow-free and exact at 0
    return 0.5 * (np.tanh(0.5 * x) + 1)


def sigmoid_backward(dy: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Backward from the forward *output* y = sigmoid(x)."""
    return dy * y * (1 - y)
