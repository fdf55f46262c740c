"""End-to-end optimization: batching, the halving learning-rate schedule,
loss-mode selection, and versioned binary weight serialization.
"""

from __future__ import annotations

import struct
import time
import zlib
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .data import MiniTrack
from .errors import ConfigError, DataError, NumericError
from .model import (
    INPUT_DIM,
    LOSS_MODES,
    MODE_TRAJ_AUTOENC,
    OUTPUT_DIM,
    LossWeights,
    ModelDims,
    ModelParams,
    build_features,
    init_params,
    loss_and_grads,
)
from .nn import AdamState, LinearParams, LstmCellParams, adam_step

__all__ = [
    "EpochStats",
    "TrainConfig",
    "load_model",
    "lr_schedule",
    "save_model",
    "stack_minitracks",
    "train",
    "write_history",
]


@dataclass
class TrainConfig:
    """Hyperparameters; the defaults are the full-scale reference setup."""

    k: int = 30
    p: int = 60
    hidden: int = 512
    latent: int = 256
    batch_size: int = 200
    epochs: int = 30
    base_lr: float = 0.00141
    halve_every: int = 5
    alpha: float = 1.0
    beta: float = 2.0
    loss_mode: str = MODE_TRAJ_AUTOENC
    seed: int = 0
    carry_cell_state: bool = True
    grad_clip: float = 0.0  # 0 disables clipping
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def validate(self) -> None:
        for name in ("k", "p", "hidden", "latent", "batch_size", "epochs",
                     "halve_every"):
            v = getattr(self, name)
            if not (isinstance(v, int) and v >= 1):
                raise ConfigError(f"{name} must be a positive int, got {v!r}")
        if not self.base_lr > 0:
            raise ConfigError(f"base_lr must be positive, got {self.base_lr}")
        if self.alpha < 0 or self.beta < 0:
            raise ConfigError("alpha and beta must be non-negative")
        if self.loss_mode not in LOSS_MODES:
            raise ConfigError(
                f"unknown loss mode {self.loss_mode!r}; pick one of {LOSS_MODES}")
        if self.grad_clip < 0:
            raise ConfigError(f"grad_clip must be >= 0, got {self.grad_clip}")

    def dims(self) -> ModelDims:
        return ModelDims(k=self.k, p=self.p, hidden=self.hidden,
                         latent=self.latent)


@dataclass
class EpochStats:
    """One history row; the loss columns are means over the epoch's samples.

    ``loss`` is the weighted objective; ``loss_auto_enc`` and ``loss_traj``
    are the raw per-branch L1 means (0.0 when a branch is inactive).
    ``seconds`` is wall-clock and is the one field exempt from the
    determinism contract.
    """

    epoch: int
    loss: float
    loss_auto_enc: float
    loss_traj: float
    lr: float
    seconds: float


def lr_schedule(epoch: int, cfg: TrainConfig) -> float:
    """Learning rate for an epoch: the base rate halved every
    ``halve_every`` epochs (piecewise constant, non-increasing)."""
    if epoch < 0:
        raise ConfigError(f"epoch must be >= 0, got {epoch}")
    return cfg.base_lr * 0.5 ** (epoch // cfg.halve_every)


def stack_minitracks(minitracks: list[MiniTrack], k: int, p: int
                     ) -> tuple[np.ndarray, np.ndarray]:
    """Build the training arrays: feature windows (M, k, 8) over the first k
    boxes (using each mini-track's predecessor when present) and target
    boxes (M, p, 4) over the last p."""
    if not minitracks:
        raise ConfigError("empty mini-track set")
    m = len(minitracks)
    windows = np.empty((m, k, INPUT_DIM), dtype=np.float64)
    targets = np.empty((m, p, OUTPUT_DIM), dtype=np.float64)
    for j, mt in enumerate(minitracks):
        if len(mt) != k + p:
            raise DataError(
                f"mini-track {j} has {len(mt)} boxes, expected k+p={k + p}")
        windows[j] = build_features(mt.boxes[:k], predecessor=mt.predecessor)
        for s, b in enumerate(mt.boxes[k:]):
            targets[j, s] = (b.cx, b.cy, b.w, b.h)
    return windows, targets


def train(cfg: TrainConfig, minitracks: list[MiniTrack],
          on_epoch: Callable[[ModelParams, EpochStats], None] | None = None
          ) -> tuple[ModelParams, list[EpochStats]]:
    """Run the full optimization loop and return (params, history).

    Each epoch reshuffles the mini-tracks with the seeded generator, walks
    batches of ``batch_size`` (final short batch included), computes the
    composite loss with gradients averaged over the batch, and applies one
    Adam step at the scheduled rate. Deterministic for a fixed seed: two
    runs produce bit-identical parameters and histories (timing aside).
    Never mutates the input mini-tracks. A non-finite loss or gradient
    aborts with epoch/batch diagnostics.
    """
    cfg.validate()
    windows, targets = stack_minitracks(minitracks, cfg.k, cfg.p)
    m = windows.shape[0]
    rng = np.random.default_rng(cfg.seed)
    params = init_params(cfg.dims(), seed=rng,
                         carry_cell_state=cfg.carry_cell_state)
    weights = LossWeights(alpha=cfg.alpha, beta=cfg.beta, mode=cfg.loss_mode)
    tensors = params.tensors()
    opt = AdamState.init(tensors, beta1=cfg.adam_beta1, beta2=cfg.adam_beta2,
                         eps=cfg.adam_eps)
    history: list[EpochStats] = []
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        lr = lr_schedule(epoch, cfg)
        order = rng.permutation(m)
        sum_loss = 0.0
        sum_auto = 0.0
        sum_traj = 0.0
        for bi, start in enumerate(range(0, m, cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            loss, terms, grads = loss_and_grads(
                params, windows[idx], targets[idx], weights)
            if not np.isfinite(loss):
                raise NumericError(
                    f"non-finite loss {loss!r} at epoch {epoch}, batch {bi}")
            if cfg.grad_clip > 0:
                _clip_global_norm(grads, cfg.grad_clip)
            try:
                adam_step(opt, tensors, grads, lr)
            except NumericError as e:
                raise NumericError(f"epoch {epoch}, batch {bi}: {e}") from None
            n = len(idx)
            sum_loss += loss * n
            sum_auto += terms.get("auto_enc", 0.0) * n
            sum_traj += terms.get("traj", 0.0) * n
        stats = EpochStats(
            epoch=epoch,
            loss=sum_loss / m,
            loss_auto_enc=sum_auto / m,
            loss_traj=sum_traj / m,
            lr=lr,
            seconds=time.perf_counter() - t0,
        )
        history.append(stats)
        if on_epoch is not None:
            on_epoch(params, stats)
    return params, history


def _clip_global_norm(grads: dict[str, np.ndarray], clip: float) -> None:
    total = 0.0
    for g in grads.values():
        total += float((g * g).sum())
    norm = np.sqrt(total)
    if norm > clip:
        scale = clip / norm
        for g in grads.values():
            g *= scale


def write_history(history: list[EpochStats], path) -> None:
    """History CSV: epoch, loss, loss_auto_enc, loss_traj, lr, seconds."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epoch,loss,loss_auto_enc,loss_traj,lr,seconds\n")
        for s in history:
            fh.write(f"{s.epoch},{s.loss!r},{s.loss_auto_enc!r},"
                     f"{s.loss_traj!r},{s.lr!r},{s.seconds!r}\n")


# ---------------------------------------------------------------------------
# weight-file serialization
#
# Little-endian binary. 60-byte header:
#   magic           4s   b"BOXC"
#   format version  u32  1
#   k, p, hidden, latent, input_dim, output_dim   6 x u32
#   float width     u32  4 (single-precision storage)
#   gate order tag  4s   b"ifgo" (input, forget, candidate, output)
#   bias convention 4s   b"dual" (separate input-side and recurrent biases)
#   latent activation tag 4s  b"none" (the latent projection is linear)
#   decoder init tag      4s  b"hc" (future branch starts from the encoder's
#                              hidden and cell state) or b"h" (hidden only)
#   tensor count    u32  18
#   payload crc32   u32
# followed by the tensors of ModelParams.tensors(), in that order, each as
# raw float32 C-order bytes. Shapes are implied by the dims fields.

MAGIC = b"BOXC"
FORMAT_VERSION = 1
GATE_ORDER_TAG = b"ifgo"
BIAS_CONVENTION_TAG = b"dual"
LATENT_ACTIVATION_TAG = b"none"
_HEADER = struct.Struct("<4s8I4s4s4s4s2I")
N_TENSORS = 18


def save_model(params: ModelParams, path) -> None:
    """Write the versioned single-precision weight file described above."""
    d = params.dims
    payload = b"".join(
        np.ascontiguousarray(t, dtype="<f4").tobytes()
        for t in params.tensors().values())
    dec_tag = b"hc" if params.carry_cell_state else b"h"
    header = _HEADER.pack(
        MAGIC, FORMAT_VERSION, d.k, d.p, d.hidden, d.latent,
        INPUT_DIM, OUTPUT_DIM, 4,
        GATE_ORDER_TAG, BIAS_CONVENTION_TAG, LATENT_ACTIVATION_TAG,
        dec_tag.ljust(4, b"\x00"), N_TENSORS, zlib.crc32(payload))
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


def load_model(path, expect_dims: ModelDims | None = None
               ) -> tuple[ModelParams, dict]:
    """Read a weight file back into float64 parameters plus a header echo.

    Rejects wrong magic bytes, unsupported versions or convention tags,
    truncated or oversized payloads, and checksum mismatches. When
    ``expect_dims`` is given, a file with different dims is refused.
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise DataError(f"weight file too short ({len(raw)} bytes)")
    (magic, version, k, p, hidden, latent, input_dim, output_dim,
     float_width, gate, bias, act, dec_tag, n_tensors, crc) = \
        _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise DataError(f"bad magic {magic!r}; not a weight file")
    if version != FORMAT_VERSION:
        raise ConfigError(
            f"unsupported weight-file version {version} "
            f"(this build reads version {FORMAT_VERSION})")
    if float_width != 4:
        raise ConfigError(f"unsupported float width {float_width}")
    for tag, expected, what in ((gate, GATE_ORDER_TAG, "gate order"),
                                (bias, BIAS_CONVENTION_TAG, "bias convention"),
                                (act, LATENT_ACTIVATION_TAG, "latent activation")):
        if tag != expected:
            raise ConfigError(f"unsupported {what} tag {tag!r} "
                              f"(expected {expected!r})")
    dec_tag = dec_tag.rstrip(b"\x00")
    if dec_tag not in (b"hc", b"h"):
        raise ConfigError(f"unsupported decoder init tag {dec_tag!r}")
    if input_dim != INPUT_DIM or output_dim != OUTPUT_DIM:
        raise ConfigError(
            f"weight file has input/output dims {input_dim}/{output_dim}, "
            f"this build uses {INPUT_DIM}/{OUTPUT_DIM}")
    if n_tensors != N_TENSORS:
        raise ConfigError(f"weight file lists {n_tensors} tensors, "
                          f"expected {N_TENSORS}")
    dims = ModelDims(k=k, p=p, hidden=hidden, latent=latent)
    dims.validate()
    if expect_dims is not None and dims != expect_dims:
        raise ConfigError(
            f"weight file dims {dims} do not match the configured {expect_dims}")
    expected_size = _HEADER.size + 4 * param_count_for(dims)
    if len(raw) != expected_size:
        raise DataError(
            f"weight file is {len(raw)} bytes, expected {expected_size}; "
            f"truncated or corrupt")
    payload = raw[_HEADER.size:]
    if zlib.crc32(payload) != crc:
        raise DataError("weight-file checksum mismatch; payload is corrupt")

    offset = 0

    def take(shape) -> np.ndarray:
        nonlocal offset
        n = int(np.prod(shape))
        arr = np.frombuffer(payload, dtype="<f4", count=n, offset=offset)
        offset += 4 * n
        return arr.reshape(shape).astype(np.float64)

    H, Z = hidden, latent
    params = ModelParams(
        enc=LstmCellParams(wx=take((4 * H, INPUT_DIM)), wh=take((4 * H, H)),
                           bx=take((4 * H,)), bh=take((4 * H,))),
        fc_latent=LinearParams(w=take((Z, H)), b=take((Z,))),
        auto_dec=LstmCellParams(wx=take((4 * H, Z)), wh=take((4 * H, H)),
                                bx=take((4 * H,)), bh=take((4 * H,))),
        fc_recon=LinearParams(w=take((INPUT_DIM, H)), b=take((INPUT_DIM,))),
        fut_dec=LstmCellParams(wx=take((4 * H, Z)), wh=take((4 * H, H)),
                               bx=take((4 * H,)), bh=take((4 * H,))),
        fc_delta=LinearParams(w=take((OUTPUT_DIM, H)), b=take((OUTPUT_DIM,))),
        dims=dims,
        carry_cell_state=(dec_tag == b"hc"),
    )
    meta = {
        "version": version,
        "k": k, "p": p, "hidden": hidden, "latent": latent,
        "input_dim": input_dim, "output_dim": output_dim,
        "float_width": float_width,
        "gate_order": gate.decode(),
        "bias_convention": bias.decode(),
        "latent_activation": act.decode(),
        "decoder_init": dec_tag.decode(),
    }
    return params, meta


def param_count_for(dims: ModelDims) -> int:
    """Parameter count implied by a dims record, from layer arithmetic.

    An LSTM cell with input D and width H holds 4H*(D + H + 2) scalars (the
    +2 covers the two bias vectors); an affine map holds out*(in + 1). Kept
    closed-form so file-size validation has an oracle independent of the
    tensor allocation in `param_count`.
    """
    H, Z = dims.hidden, dims.latent

    def cell(d: int) -> int:
        return 4 * H * (d + H + 2)

    def affine(n_in: int, n_out: int) -> int:
        return n_out * (n_in + 1)

    return (cell(INPUT_DIM) + affine(H, Z)
            + cell(Z) + affine(H, INPUT_DIM)
            + cell(Z) + affine(H, OUTPUT_DIM))
