"""Bilateral-grid corrector contracts: SFE/CFD/HFD, slicing, affine application."""

import numpy as np
import pytest

from mslt import bgnet, ops
from mslt.errors import ContractViolation, DimensionError


def make_sfe(rng, c1, c2, head=False, scale=0.3):
    p = bgnet.SfeParams(
        conv_a_w=(rng.standard_normal((c2, c1)) * scale),
        conv_a_b=(rng.standard_normal(c2) * 0.1),
        conv_b_w=(rng.standard_normal((c2, c2)) * scale),
        conv_b_b=(rng.standard_normal(c2) * 0.1),
    )
    if head:
        p.head_w = rng.standard_normal((1, c2)) * scale
        p.head_b = rng.standard_normal(1) * 0.1
    return p


def make_hfd(rng, scale=0.1):
    return bgnet.HfdParams(
        stem_w=rng.standard_normal((40, 3)) * scale,
        stem_b=rng.standard_normal(40) * 0.05,
        refine_w=rng.standard_normal((40, 40)) * 0.05,
        refine_b=rng.standard_normal(40) * 0.05,
        sfe=make_sfe(rng, 40, 40, scale=0.05),
        fuse_w=rng.standard_normal((8, 40)) * 0.05,
        fuse_b=rng.standard_normal(8) * 0.05,
    )


def tau(t):
    return np.maximum(1.0 - np.abs(t), 0.0)


def slice_bruteforce(grid, g):
    """Triple sum over all 16*16*6 cells; coordinates match the fast path."""
    h, w = g.shape
    sx = np.clip(16 * (np.arange(h) + 0.5) / h, 0, 15)
    sy = np.clip(16 * (np.arange(w) + 0.5) / w, 0, 15)
    sz = np.clip(6 * g.astype(np.float64), 0, 5)
    out = np.zeros((h, w, 12))
    for i in range(16):
        wi = tau(sx - i)[:, None]
        for j in range(16):
            wj = tau(sy - j)[None, :]
            if not np.any(wi * wj):
                continue
            for k in range(6):
                wk = tau(sz - k)
                out += (wi * wj * wk)[:, :, None] * grid[i, j, k]
    return out


# ---------------------------------------------------------------------------
# SFE
# ---------------------------------------------------------------------------


def test_sfe_zero_input_zero_bias():
    rng = np.random.default_rng(0)
    p = make_sfe(rng, 3, 8)
    p.conv_a_b[:] = 0
    p.conv_b_b[:] = 0
    x = np.zeros((5, 5, 3), dtype=np.float32)
    y, _ = bgnet.sfe_forward(x, p)
    assert np.allclose(y, 0.0)
    ph = make_sfe(rng, 3, 8, head=True)
    ph.conv_a_b[:] = 0
    ph.conv_b_b[:] = 0
    ph.head_b[:] = 0
    g, _ = bgnet.sfe_forward(x, ph)
    assert np.allclose(g, 0.5)


def test_sfe_constant_input_constant_output():
    rng = np.random.default_rng(1)
    p = make_sfe(rng, 3, 8)
    x = np.full((6, 4, 3), 0.37, dtype=np.float32)
    y, _ = bgnet.sfe_forward(x, p)
    assert np.allclose(y, y[0, 0], atol=1e-6)


def test_sfe_guidance_bounded():
    rng = np.random.default_rng(2)
    p = make_sfe(rng, 3, 8, head=True, scale=2.0)
    x = rng.random((7, 9, 3)).astype(np.float32)
    g, _ = bgnet.sfe_forward(x, p)
    assert g.shape == (7, 9, 1)
    assert g.min() >= 0.0 and g.max() <= 1.0


# ---------------------------------------------------------------------------
# CFD
# ---------------------------------------------------------------------------


def test_cfd_constant_channel():
    v = 0.4
    x = np.full((3, 3, 2), v, dtype=np.float32)
    ctx, res = bgnet.cfd_forward(x)
    assert np.allclose(ctx, v * v, atol=1e-6)  # mean v, std 0 -> scale v
    assert np.allclose(res, x - ctx, atol=1e-7)


def test_cfd_zero_input():
    x = np.zeros((4, 4, 3), dtype=np.float32)
    ctx, res = bgnet.cfd_forward(x)
    assert np.allclose(ctx, 0.0)
    assert np.allclose(res, 0.0)


@pytest.mark.parametrize("mode", bgnet.POOLING_MODES)
def test_cfd_decomposition_identity(mode):
    rng = np.random.default_rng(3)
    x = rng.random((6, 5, 4)).astype(np.float32)
    ctx, res = bgnet.cfd_forward(x, mode)
    assert np.abs(ctx + res - x).max() < 1e-6


@pytest.mark.parametrize("mode", bgnet.POOLING_MODES)
def test_cfd_gradient_fd(mode):
    rng = np.random.default_rng(4)
    x = rng.standard_normal((5, 4, 3)).astype(np.float64)
    tc = rng.standard_normal((5, 4, 3))
    tr = rng.standard_normal((5, 4, 3))

    def loss():
        c, r = bgnet.cfd_forward(x, mode)
        return float((c * tc).sum() + (r * tr).sum())

    dx = bgnet.cfd_backward(tc, tr, x, mode)
    eps = 1e-3
    r = np.random.default_rng(5)
    worst = 0.0
    for _ in range(8):
        ij = tuple(r.integers(0, s) for s in x.shape)
        orig = x[ij]
        x[ij] = orig + eps
        lp = loss()
        x[ij] = orig - eps
        lm = loss()
        x[ij] = orig
        fd = (lp - lm) / (2 * eps)
        worst = max(worst, abs(fd - dx[ij]) / max(abs(fd), abs(dx[ij]), 1e-9))
    assert worst < 1e-3


# ---------------------------------------------------------------------------
# HFD
# ---------------------------------------------------------------------------


def test_grid_element_count_conservation():
    assert 48 * 48 * 8 == 16 * 16 * 72 == 18432


@pytest.mark.parametrize("k", [1, 2, 3, 4, 5])
def test_hfd_output_count_independent_of_cfd_count(k):
    rng = np.random.default_rng(6)
    p = make_hfd(rng)
    lhat = rng.random((48, 48, 3)).astype(np.float32)
    grid, _ = bgnet.hfd_forward(lhat, p, cfd_count=k)
    assert grid.shape == (16, 16, 6, 12)
    assert grid.size == 18432


def test_hfd_zero_weights_zero_grid():
    rng = np.random.default_rng(7)
    p = make_hfd(rng)
    for arr in (p.stem_w, p.stem_b, p.refine_w, p.refine_b, p.fuse_w, p.fuse_b,
                p.sfe.conv_a_w, p.sfe.conv_a_b, p.sfe.conv_b_w, p.sfe.conv_b_b):
        arr[:] = 0.0
    lhat = rng.random((48, 48, 3)).astype(np.float32)
    grid, _ = bgnet.hfd_forward(lhat, p)
    assert np.allclose(grid, 0.0)


def test_hfd_wrong_input_size():
    rng = np.random.default_rng(8)
    with pytest.raises(DimensionError):
        bgnet.hfd_forward(np.zeros((32, 32, 3), dtype=np.float32), make_hfd(rng))


def test_hfd_layout_is_bijection():
    pairs = set(zip(bgnet._LAYOUT_POS.ravel().tolist(), bgnet._LAYOUT_CH.ravel().tolist()))
    assert len(pairs) == 72


def test_identity_fuse_bias_gives_identity_grid():
    rng = np.random.default_rng(9)
    p = make_hfd(rng)
    p.fuse_w[:] = 0.0
    p.fuse_b[:] = bgnet.IDENTITY_FUSE_BIAS
    lhat = rng.random((48, 48, 3)).astype(np.float32)
    grid, _ = bgnet.hfd_forward(lhat, p)
    assert np.array_equal(grid, np.broadcast_to(bgnet.IDENTITY_COEFFS, grid.shape))


def test_hfd_gradient_fd():
    rng = np.random.default_rng(10)
    p = make_hfd(rng)
    lhat = rng.random((48, 48, 3)).astype(np.float64)
    for arr in vars(p).values():
        if isinstance(arr, np.ndarray):
            arr[:] = arr.astype(np.float64)
    t = rng.standard_normal((16, 16, 6, 12))

    def loss():
        g, _ = bgnet.hfd_forward(lhat, p)
        return float((g * t).sum())

    grid, cache = bgnet.hfd_forward(lhat, p)
    _, grads = bgnet.hfd_backward(t, p, cache)
    eps = 1e-3
    r = np.random.default_rng(11)
    worst = 0.0
    for arr, g in [
        (p.stem_w, grads["stem_w"]),
        (p.refine_w, grads["refine_w"]),
        (p.refine_b, grads["refine_b"]),
        (p.sfe.conv_a_w, grads["sfe"]["conv_a_w"]),
        (p.sfe.conv_b_w, grads["sfe"]["conv_b_w"]),
        (p.fuse_w, grads["fuse_w"]),
        (p.fuse_b, grads["fuse_b"]),
    ]:
        for _ in range(3):
            ij = tuple(r.integers(0, s) for s in arr.shape)
            orig = arr[ij]
            arr[ij] = orig + eps
            lp = loss()
            arr[ij] = orig - eps
            lm = loss()
            arr[ij] = orig
            fd = (lp - lm) / (2 * eps)
            worst = max(worst, abs(fd - g[ij]) / max(abs(fd), abs(g[ij]), 1e-9))
    assert worst < 1e-3


# ---------------------------------------------------------------------------
# slicing
# ---------------------------------------------------------------------------


def test_tau_values():
    assert tau(np.array(0.0)) == 1.0
    assert tau(np.array(1.0)) == 0.0
    assert tau(np.array(-1.0)) == 0.0
    assert tau(np.array(0.5)) == 0.5


def test_slice_constant_grid_everywhere():
    rng = np.random.default_rng(12)
    grid = np.full((16, 16, 6, 12), 0.37, dtype=np.float32)
    g = rng.random((9, 13)).astype(np.float32)
    g[0, 0] = 0.0
    g[1, 1] = 1.0  # extremes included: clamped bins keep the partition of unity
    coeffs = bgnet.slice_grid(grid, g)
    assert np.abs(coeffs - 0.37).max() < 1e-6


def test_slice_matches_bruteforce():
    rng = np.random.default_rng(13)
    for _ in range(3):
        grid = rng.standard_normal((16, 16, 6, 12))
        g = rng.random((17, 11))
        fast = bgnet.slice_grid(grid, g)
        brute = slice_bruteforce(grid, g)
        assert np.abs(fast - brute).max() < 1e-6


def test_slice_linear_in_grid():
    rng = np.random.default_rng(14)
    g1 = rng.standard_normal((16, 16, 6, 12))
    g2 = rng.standard_normal((16, 16, 6, 12))
    gm = rng.random((8, 8))
    a, b = 0.6, -1.7
    lhs = bgnet.slice_grid(a * g1 + b * g2, gm)
    rhs = a * bgnet.slice_grid(g1, gm) + b * bgnet.slice_grid(g2, gm)
    assert np.abs(lhs - rhs).max() < 1e-6


def test_slice_depth_partition_of_unity():
    # all-ones grid isolates the total interpolation weight; with clamped
    # coordinates it is exactly 1 for every guidance value in [0, 1]
    grid = np.ones((16, 16, 6, 12))
    for gv in [0.0, 0.1, 0.5, 5 / 6, 0.9, 1.0]:
        g = np.full((5, 5), gv)
        coeffs = bgnet.slice_grid(grid, g)
        assert np.abs(coeffs - 1.0).max() < 1e-9


def test_slice_guidance_contract():
    grid = np.zeros((16, 16, 6, 12))
    with pytest.raises(ContractViolation):
        bgnet.slice_grid(grid, np.full((4, 4), 1.5))
    with pytest.raises(DimensionError):
        bgnet.slice_grid(np.zeros((8, 8, 6, 12)), np.zeros((4, 4)))


def test_slice_gradients_fd():
    rng = np.random.default_rng(15)
    grid = rng.standard_normal((16, 16, 6, 12))
    g = 0.15 + 0.6 * rng.random((6, 7))  # interior: away from bin knots
    t = rng.standard_normal((6, 7, 12))

    def loss():
        return float((bgnet.slice_grid(grid, g) * t).sum())

    dgrid, dg = bgnet.slice_grid_backward(t, grid, g)
    eps = 1e-4
    r = np.random.default_rng(16)
    worst = 0.0
    for _ in range(8):
        ij = tuple(r.integers(0, s) for s in grid.shape)
        orig = grid[ij]
        grid[ij] = orig + eps
        lp = loss()
        grid[ij] = orig - eps
        lm = loss()
        grid[ij] = orig
        fd = (lp - lm) / (2 * eps)
        worst = max(worst, abs(fd - dgrid[ij]) / max(abs(fd), abs(dgrid[ij]), 1e-9))
    for _ in range(8):
        ij = tuple(r.integers(0, s) for s in g.shape)
        orig = g[ij]
        if min(abs(6 * orig - k) for k in range(7)) < 10 * eps:
            continue  # skip tent-kernel knots (non-differentiable points)
        g[ij] = orig + eps
        lp = loss()
        g[ij] = orig - eps
        lm = loss()
        g[ij] = orig
        fd = (lp - lm) / (2 * eps)
        worst = max(worst, abs(fd - dg[ij]) / max(abs(fd), abs(dg[ij]), 1e-9))
    assert worst < 1e-3


# ---------------------------------------------------------------------------
# affine application
# ---------------------------------------------------------------------------


def test_apply_affine_identity():
    rng = np.random.default_rng(17)
    img = rng.random((5, 6, 3)).astype(np.float32)
    coeffs = np.broadcast_to(bgnet.IDENTITY_COEFFS, (5, 6, 12)).copy()
    assert np.array_equal(bgnet.apply_affine(img, coeffs), img)


def test_apply_affine_bias_only():
    img = np.random.default_rng(18).random((4, 4, 3)).astype(np.float32)
    coeffs = np.zeros((4, 4, 12), dtype=np.float32)
    coeffs[:, :, 3] = coeffs[:, :, 7] = coeffs[:, :, 11] = 0.5
    out = bgnet.apply_affine(img, coeffs)
    assert np.allclose(out, 0.5)


def test_apply_affine_matches_matvec_oracle():
    rng = np.random.default_rng(19)
    img = rng.random((6, 5, 3))
    coeffs = rng.standard_normal((6, 5, 12))
    out = bgnet.apply_affine(img, coeffs)
    for y in range(6):
        for x in range(5):
            a = coeffs[y, x].reshape(3, 4)
            want = a[:, :3] @ img[y, x] + a[:, 3]
            assert np.abs(out[y, x] - want).max() < 1e-6


def test_apply_affine_dim_errors():
    with pytest.raises(DimensionError):
        bgnet.apply_affine(np.zeros((4, 4, 3)), np.zeros((4, 5, 12)))
    with pytest.raises(DimensionError):
        bgnet.apply_affine(np.zeros((4, 4, 1)), np.zeros((4, 4, 12)))


def test_affine_bias_shift_raises_mean():
    # adding d to every cell's bias coefficients raises the corrected band's
    # mean by exactly d (partition of unity under clamped slicing)
    rng = np.random.default_rng(20)
    grid = rng.standard_normal((16, 16, 6, 12)).astype(np.float32)
    img = rng.random((12, 10, 3)).astype(np.float32)
    g = rng.random((12, 10)).astype(np.float32)
    out1 = bgnet.apply_affine(img, bgnet.slice_grid(grid, g))
    delta = 0.25
    grid2 = grid.copy()
    grid2[:, :, :, (3, 7, 11)] += delta
    out2 = bgnet.apply_affine(img, bgnet.slice_grid(grid2, g))
    assert out2.mean() - out1.mean() == pytest.approx(delta, abs=1e-6)
    assert out2.mean() > out1.mean()


# ---------------------------------------------------------------------------
# full low-frequency corrector
# ---------------------------------------------------------------------------


def test_correct_low_freq_shapes_and_composition():
    rng = np.random.default_rng(21)
    low = rng.random((20, 28, 3)).astype(np.float32)
    gp = make_sfe(rng, 3, 8, head=True)
    hp = make_hfd(rng)
    out, gmap, grid, cache = bgnet.correct_low_freq(low, gp, hp)
    assert out.shape == low.shape
    assert gmap.shape == low.shape[:2]
    assert grid.shape == (16, 16, 6, 12)
    # composition: recomputing the pieces by hand gives the same answer
    g3, _ = bgnet.sfe_forward(low, gp)
    lhat = ops.resize_bilinear(low, 48, 48)
    grid2, _ = bgnet.hfd_forward(lhat, hp)
    want = bgnet.apply_affine(low, bgnet.slice_grid(grid2, g3[:, :, 0]))
    assert np.array_equal(out, want)


def test_correct_low_freq_full_gradient_fd():
    # eps 1e-4 keeps the FD quotient away from ReLU kink crossings
    rng = np.random.default_rng(30)
    low = (0.2 + 0.6 * rng.random((10, 12, 3))).astype(np.float64)
    gp = make_sfe(rng, 3, 8, head=True)
    hp = make_hfd(rng)
    t = rng.standard_normal((10, 12, 3))

    def loss():
        out, _, _, _ = bgnet.correct_low_freq(low, gp, hp)
        return float((out * t).sum())

    out, gmap, grid, cache = bgnet.correct_low_freq(low, gp, hp)
    dlow, ggrads, hgrads = bgnet.correct_low_freq_backward(t, gp, hp, cache)
    eps = 1e-4
    r = np.random.default_rng(31)
    worst = 0.0
    probes = [
        (gp.conv_a_w, ggrads["conv_a_w"]),
        (gp.conv_b_w, ggrads["conv_b_w"]),
        (gp.head_w, ggrads["head_w"]),
        (hp.stem_w, hgrads["stem_w"]),
        (hp.fuse_w, hgrads["fuse_w"]),
        (hp.sfe.conv_b_w, hgrads["sfe"]["conv_b_w"]),
        (low, dlow),
    ]
    for arr, g in probes:
        for _ in range(3):
            ij = tuple(r.integers(0, s) for s in arr.shape)
            orig = arr[ij]
            arr[ij] = orig + eps
            lp = loss()
            arr[ij] = orig - eps
            lm = loss()
            arr[ij] = orig
            fd = (lp - lm) / (2 * eps)
            worst = max(worst, abs(fd - g[ij]) / max(abs(fd), abs(g[ij]), 1e-9))
    assert worst < 1e-3
