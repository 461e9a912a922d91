"""Desk-scale supervised training.

MSE loss on the clamped network output, a hand-composed backward pass
(:func:`mslt.model.backward`), Adam with bias correction, and cosine
annealing with warm restarts (the learning rate restarts at ``lr_max``
every ``restart_period`` epochs and decays to ``lr_min`` within a cycle).

Runs are bit-reproducible given (seed, dataset order, config): crops are
drawn from one seeded generator, batches are consumed in a fixed order and
gradient accumulation follows the canonical parameter order.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from . import model as model_mod
from .errors import ContractViolation, DimensionError, WeightFormatError
from .model import ModelParams, backward  # noqa: F401  (backward re-exported)


@dataclass
class TrainConfig:
    lr_max: float = 1e-3
    lr_min: float = 1e-7
    restart_period: int = 5  # epochs per cosine cycle
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 8  # desk-scale default; 32 is the config ceiling
    crop: int = 512
    epochs: int = 10
    crops_per_image: int = 30
    seed: int = 0
    stop_psnr: float | None = None  # optional early stop on running batch PSNR
    stop_window: int = 25
    eval_every: int = 0  # call fit's eval_hook every N steps (0 = never)

    def validate(self) -> None:
        if not self.lr_min < self.lr_max:
            raise ValueError("lr_min must be < lr_max")
        if self.restart_period < 1:
            raise ValueError("restart_period must be >= 1")
        if self.batch_size < 1 or self.crop < 1 or self.epochs < 1:
            raise ValueError("batch_size, crop and epochs must be positive")


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0


@dataclass
class SamplePair:
    """One training example: an improperly exposed input and its target."""

    input: np.ndarray
    target: np.ndarray

    def __post_init__(self):
        if self.input.shape != self.target.shape:
            raise DimensionError("sample pair images must have identical dims")


@dataclass
class StepRecord:
    step: int
    lr: float
    loss: float


def mse_loss(out: np.ndarray, target: np.ndarray):
    """Returns (loss, dloss/dout) with loss = mean((out - target)^2)."""
    if out.shape != target.shape:
        raise DimensionError(f"mse_loss shapes differ: {out.shape} vs {target.shape}")
    diff = out - target
    loss = float(np.mean(diff.astype(np.float64) ** 2))
    dout = (2.0 / diff.size) * diff
    return loss, dout


def cosine_lr(global_step: int, steps_per_epoch: int, cfg: TrainConfig) -> float:
    """Warm-restart cosine schedule; restarts at lr_max each cycle boundary."""
    if steps_per_epoch < 1:
        raise ValueError("steps_per_epoch must be >= 1")
    cycle = cfg.restart_period * steps_per_epoch
    p = (global_step % cycle) / cycle
    return cfg.lr_min + 0.5 * (cfg.lr_max - cfg.lr_min) * (1.0 + math.cos(math.pi * p))


def init_adam(mp: ModelParams) -> AdamState:
    return AdamState(
        m={k: np.zeros_like(v) for k, v in mp.tensors.items()},
        v={k: np.zeros_like(v) for k, v in mp.tensors.items()},
    )


def adam_step(
    mp: ModelParams,
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    cfg: TrainConfig,
) -> None:
    """Standard bias-corrected Adam update, applied in place."""
    state.t += 1
    bc1 = 1.0 - cfg.beta1**state.t
    bc2 = 1.0 - cfg.beta2**state.t
    for name, p in mp.tensors.items():
        g = grads[name]
        if g.shape != p.shape:
            raise DimensionError(f"gradient shape mismatch for {name}")
        m = state.m[name]
        v = state.v[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * (g * g)
        mhat = m / bc1
        vhat = v / bc2
        p -= (lr * mhat / (np.sqrt(vhat) + cfg.eps)).astype(p.dtype)
    mp.bump()


def train_step(batch, mp: ModelParams, cfg: TrainConfig, state: AdamState, lr: float):
    """One optimizer step over a list of (input, target) crops. Returns mean loss."""
    acc = {k: np.zeros(v.shape, dtype=np.float64) for k, v in mp.tensors.items()}
    total = 0.0
    for inp, tgt in batch:
        out, trace = model_mod.forward(inp, mp)
        loss, dout = mse_loss(out, tgt)
        grads = model_mod.backward(mp, trace, dout)
        total += loss
        for k in acc:
            acc[k] += grads[k]
    scale = 1.0 / len(batch)
    mean_grads = {k: (v * scale).astype(np.float32) for k, v in acc.items()}
    adam_step(mp, mean_grads, state, lr, cfg)
    return total * scale


def fit(dataset: list[SamplePair], mp: ModelParams, cfg: TrainConfig, eval_hook=None):
    """Train in place over shuffled mini-batches of random crops.

    Returns (mp, history); history holds one StepRecord per optimizer step,
    epochs * ceil(len(dataset) * crops_per_image / batch_size) in total
    (fewer if an early-stop target is reached). ``eval_hook(mp) -> bool``,
    polled every ``cfg.eval_every`` steps, stops training when it returns
    True; a pure hook keeps runs bit-reproducible.
    """
    mp, history, _state = fit_with_state(dataset, mp, cfg, eval_hook)
    return mp, history


def fit_with_state(
    dataset: list[SamplePair], mp: ModelParams, cfg: TrainConfig, eval_hook=None
):
    """Like :func:`fit` but also returns the final optimizer state (for checkpoints)."""
    if not dataset:
        raise ContractViolation("fit: dataset is empty")
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    state = init_adam(mp)
    history: list[StepRecord] = []
    n_crops = len(dataset) * cfg.crops_per_image
    steps_per_epoch = math.ceil(n_crops / cfg.batch_size)
    recent: list[float] = []
    global_step = 0
    for _epoch in range(cfg.epochs):
        coords = []
        for idx, pair in enumerate(dataset):
            h, w = pair.input.shape[:2]
            ch = min(cfg.crop, h)
            cw = min(cfg.crop, w)
            for _ in range(cfg.crops_per_image):
                y0 = int(rng.integers(0, h - ch + 1))
                x0 = int(rng.integers(0, w - cw + 1))
                coords.append((idx, y0, x0, ch, cw))
        order = rng.permutation(len(coords))
        for start in range(0, len(coords), cfg.batch_size):
            batch = []
            for oi in order[start : start + cfg.batch_size]:
                idx, y0, x0, ch, cw = coords[oi]
                pair = dataset[idx]
                batch.append(
                    (
                        pair.input[y0 : y0 + ch, x0 : x0 + cw],
                        pair.target[y0 : y0 + ch, x0 : x0 + cw],
                    )
                )
            lr = cosine_lr(global_step, steps_per_epoch, cfg)
            loss = train_step(batch, mp, cfg, state, lr)
            history.append(StepRecord(step=global_step, lr=lr, loss=loss))
            global_step += 1
            if cfg.stop_psnr is not None:
                recent.append(-10.0 * math.log10(max(loss, 1e-12)))
                if len(recent) > cfg.stop_window:
                    recent.pop(0)
                if (
                    len(recent) == cfg.stop_window
                    and sum(recent) / len(recent) >= cfg.stop_psnr
                ):
                    return mp, history, state
            if (
                eval_hook is not None
                and cfg.eval_every > 0
                and global_step % cfg.eval_every == 0
                and eval_hook(mp)
            ):
                return mp, history, state
    return mp, history, state


def read_manifest(path) -> list[tuple[str, str]]:
    """Parse a training manifest: one tab-separated (input, target) pair per line."""
    pairs = []
    with open(path, "r", encoding="utf-8") as f:
        for ln, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ContractViolation(
                    f"manifest line {ln}: expected two tab-separated paths"
                )
            pairs.append((parts[0], parts[1]))
    return pairs


# ---------------------------------------------------------------------------
# optimizer-state sidecar (same record layout as the weight format)
# ---------------------------------------------------------------------------

_STATE_MAGIC = b"MSLTS\x00"


def save_optimizer_state(state: AdamState, path) -> None:
    with open(path, "wb") as f:
        f.write(_STATE_MAGIC)
        f.write(struct.pack("<I", model_mod._FORMAT_VERSION))
        f.write(struct.pack("<Q", state.t))
        f.write(struct.pack("<I", 2 * len(state.m)))
        for prefix, bank in (("adam.m.", state.m), ("adam.v.", state.v)):
            for name, arr in bank.items():
                nb = (prefix + name).encode("utf-8")
                f.write(struct.pack("<H", len(nb)))
                f.write(nb)
                f.write(struct.pack("<B", arr.ndim))
                for dim in arr.shape:
                    f.write(struct.pack("<I", dim))
                f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_optimizer_state(path, mp: ModelParams) -> AdamState:
    with open(path, "rb") as f:
        if f.read(len(_STATE_MAGIC)) != _STATE_MAGIC:
            raise WeightFormatError("bad magic: not an optimizer-state file")
        (version,) = struct.unpack("<I", f.read(4))
        if version != model_mod._FORMAT_VERSION:
            raise WeightFormatError(f"unsupported state format version {version}")
        (t,) = struct.unpack("<Q", f.read(8))
        (count,) = struct.unpack("<I", f.read(4))
        banks = {"adam.m.": {}, "adam.v.": {}}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", f.read(2))
            full = f.read(name_len).decode("utf-8")
            (rank,) = struct.unpack("<B", f.read(1))
            shape = tuple(struct.unpack("<I", f.read(4))[0] for _ in range(rank))
            arr = np.frombuffer(
                f.read(int(np.prod(shape)) * 4), dtype="<f4"
            ).reshape(shape).copy()
            for prefix in banks:
                if full.startswith(prefix):
                    banks[prefix][full[len(prefix) :]] = arr
                    break
            else:
                raise WeightFormatError(f"unexpected record {full!r}")
    for prefix in banks:
        if set(banks[prefix]) != set(mp.tensors):
            raise WeightFormatError("optimizer state does not match the model")
    return AdamState(m=banks["adam.m."], v=banks["adam.v."], t=t)
