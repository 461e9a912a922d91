"""Shared fixtures and helpers: identity weight constructor, FD utilities."""

import numpy as np
import pytest

from mslt import bgnet, model
from mslt.model import ModelConfig, ModelParams


def make_identity_params(variant: str, levels: int = 4, hf_shared: bool = True) -> ModelParams:
    """Explicit weight assignment that makes forward() the identity map.

    Masks: zero first conv, second conv outputs its bias of 1. Grid: zero
    everything except the fusion bias, whose identity pattern makes every
    grid cell the exact identity affine. Guidance params are irrelevant for
    the identity (any bounded guidance slices a constant grid to the same
    constant). Pyramid kernels (learnable variants) can be anything because
    an unmodified Laplacian pyramid reconstructs exactly regardless of the
    kernels; the Gaussian-behaviour init is used. The channel-MLP embeds the
    image in the first three hidden channels and passes it through (inputs
    are nonnegative, so the ReLUs are transparent).
    """
    cfg = ModelConfig(variant=variant, levels=levels, hf_shared=hf_shared)
    mp = model.init_params(cfg, seed=0)
    t = mp.tensors
    if variant == "channel-mlp":
        for i in range(1, 5):
            t[f"cmlp.layer{i}.w"][:] = 0.0
            t[f"cmlp.layer{i}.b"][:] = 0.0
        w1 = t["cmlp.layer1.w"]
        w1[:3, :3] = np.eye(3, dtype=np.float32)
        for i in (2, 3):
            w = t[f"cmlp.layer{i}.w"]
            w[:3, :3] = np.eye(3, dtype=np.float32)
        t["cmlp.layer4.w"][:3, :3] = np.eye(3, dtype=np.float32)
        return mp
    for name in list(t):
        if name.startswith("guidance.") or name.startswith("hfd."):
            t[name][:] = 0.0
        if name.startswith("hf.") and name.endswith((".w", "conv1.b")):
            t[name][:] = 0.0
        if name.startswith("hf.") and name.endswith("conv2.b"):
            t[name][:] = 1.0
    t["hfd.fuse.b"][:] = bgnet.IDENTITY_FUSE_BIAS
    return mp


def promote_params(mp: ModelParams) -> ModelParams:
    """float64 copy of a parameter set (for finite-difference checks)."""
    out = ModelParams(config=mp.config)
    for k, v in mp.tensors.items():
        out.tensors[k] = v.astype(np.float64)
    return out


def rel_err(a: float, b: float, floor: float = 1e-9) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)


def filtered_fd_worst(loss_fn, tensors, grads, probe_rng, probes=3, eps=1e-3):
    """Worst rel. error of analytic grads vs central FD over sampled entries.

    The model is piecewise smooth (ReLU family), and a central difference
    only estimates the derivative when the loss is smooth on the probed
    interval. Two function-value-only validity checks reject probes where
    FD itself is meaningless (they cannot mask a wrong analytic gradient):

    * one-sided slopes must roughly agree (a kink essentially at the point
      makes them jump);
    * central differences at eps and eps/2 must agree tightly (for smooth
      loss they differ by O(eps^2); a kink inside the interval shifts them
      against each other).

    Returns (worst, worst_name, valid_per_tensor).
    """
    loss0 = loss_fn()
    worst = 0.0
    worst_name = ""
    valid_per_tensor = {}
    for name, arr in tensors.items():
        valid = 0
        for _ in range(probes):
            ij = tuple(probe_rng.integers(0, s) for s in arr.shape)
            orig = arr[ij]
            arr[ij] = orig + eps
            lp1 = loss_fn()
            arr[ij] = orig - eps
            lm1 = loss_fn()
            arr[ij] = orig + eps / 2
            lp2 = loss_fn()
            arr[ij] = orig - eps / 2
            lm2 = loss_fn()
            arr[ij] = orig
            sr = (lp1 - loss0) / eps
            sl = (loss0 - lm1) / eps
            if abs(sr - sl) > 0.05 * max(abs(sr), abs(sl), 1e-7):
                continue
            fd1 = (lp1 - lm1) / (2 * eps)
            fd2 = (lp2 - lm2) / eps
            if abs(fd1 - fd2) > 5e-4 * max(abs(fd1), abs(fd2), 1e-7):
                continue
            valid += 1
            worst_rel = rel_err(fd1, float(grads[name][ij]))
            if worst_rel > worst:
                worst, worst_name = worst_rel, name
        valid_per_tensor[name] = valid
    return worst, worst_name, valid_per_tensor


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def random_image(rng, h, w, lo=0.1, hi=0.9, dtype=np.float32):
    return (lo + (hi - lo) * rng.random((h, w, 3))).astype(dtype)


def natural_image(seed: int, h: int = 256, w: int = 256) -> np.ndarray:
    """Procedural photo stand-in: smooth shading, soft blobs, sensor-like grain."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    yy /= h
    xx /= w
    img = np.zeros((h, w, 3))
    for c in range(3):
        acc = np.zeros((h, w))
        for _ in range(6):
            fy, fx = rng.uniform(0.5, 3.0, 2)
            py, px = rng.uniform(0, 2 * np.pi, 2)
            acc += rng.uniform(0.3, 1.0) * np.sin(2 * np.pi * fy * yy + py) * np.sin(
                2 * np.pi * fx * xx + px
            )
        for _ in range(4):
            cy, cx = rng.uniform(0, 1, 2)
            sig = rng.uniform(0.05, 0.3)
            acc += rng.uniform(-1, 1) * np.exp(
                -(((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sig**2))
            )
        acc += 0.08 * rng.standard_normal((h, w))
        lo, hi = acc.min(), acc.max()
        img[:, :, c] = 0.05 + 0.9 * (acc - lo) / (hi - lo)
    return img.astype(np.float32)


def gamma_pairs(gammas=(0.4, 2.5, 0.4, 2.5), size: int = 256):
    """Synthetic exposure-error pairs: targets + gamma-distorted inputs."""
    from mslt.training import SamplePair

    pairs = []
    for i, g in enumerate(gammas):
        tgt = natural_image(100 + i, size, size)
        pairs.append(SamplePair(input=np.power(tgt, g).astype(np.float32), target=tgt))
    return pairs
