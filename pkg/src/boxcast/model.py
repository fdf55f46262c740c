"""Forecaster architecture: feature windows, encoder, the two decoders, the
trajectory concatenation layer, the composite loss, and a hand-derived
backward pass for the whole network.

The model consumes a window of k consecutive bounding boxes and emits the p
future boxes. Each input frame is an 8-vector (cx, cy, w, h, dcx, dcy, dw,
dh) whose last four entries are the frame-to-frame differences. A single
LSTM encodes the window; its final hidden state passes through ReLU and an
affine map to a compact latent summary z. Two LSTM branches consume z as a
constant per-step input:

- the reconstruction branch starts from zero state and must reproduce the
  input window backwards with negated differences (training-time
  regularizer only, never run at inference), and
- the future branch starts from the encoder's final state and emits one
  4-vector of per-frame deltas (dcx, dcy, dw, dh) per future step.

A parameter-free concatenation layer turns the delta sequence into absolute
boxes by running a cumulative sum seeded at the last observed box.

Functions here accept a single sample (window of shape (k, 8)) or a batch
((N, k, 8)); batch results stack along the leading axis. The public ops
(`encode`, `reconstruct`, `decode_future`, `concat_trajectory`,
`forward_train`, `predict`) are composable pieces; `loss_and_grads` is the
training engine that runs the same math with caches and returns analytic
parameter gradients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, ShapeError
from .nn import (
    LinearParams,
    LstmCellParams,
    LstmCellState,
    _lstm_cell_from_preact,
    l1_loss,
    linear_backward,
    linear_forward,
    lstm_cell_forward,
    lstm_gate_backward,
    relu,
)

INPUT_DIM = 8   # cx, cy, w, h, dcx, dcy, dw, dh
OUTPUT_DIM = 4  # cx, cy, w, h (and their deltas on the future branch)

MODE_TRAJ_DEL = "traj-del"
MODE_TRAJ = "traj"
MODE_TRAJ_AUTOENC = "traj+auto-enc"
LOSS_MODES = (MODE_TRAJ_DEL, MODE_TRAJ, MODE_TRAJ_AUTOENC)

__all__ = [
    "INPUT_DIM",
    "LOSS_MODES",
    "MODE_TRAJ",
    "MODE_TRAJ_AUTOENC",
    "MODE_TRAJ_DEL",
    "OUTPUT_DIM",
    "HeadGrads",
    "LossWeights",
    "ModelDims",
    "ModelParams",
    "build_features",
    "composite_loss",
    "concat_trajectory",
    "decode_future",
    "encode",
    "forward_train",
    "init_params",
    "loss_and_grads",
    "param_count",
    "predict",
    "predict_from_window",
    "reconstruct",
    "reconstruction_target",
]


@dataclass(frozen=True)
class ModelDims:
    """Shape record: observed steps k, forecast steps p, LSTM width, latent width."""

    k: int
    p: int
    hidden: int = 512
    latent: int = 256

    def validate(self) -> None:
        for name in ("k", "p", "hidden", "latent"):
            v = getattr(self, name)
            if not (isinstance(v, int) and v >= 1):
                raise ConfigError(f"dims.{name} must be a positive int, got {v!r}")


@dataclass
class ModelParams:
    """All learnable tensors plus the dims record.

    enc       LSTM over the 8-d per-frame features
    fc_latent affine hidden -> latent applied to relu(final hidden state)
    auto_dec  LSTM of the reconstruction branch (constant input z, zero init)
    fc_recon  affine hidden -> 8 mapping reconstruction states to feature rows
    fut_dec   LSTM of the future branch (constant input z, encoder-state init)
    fc_delta  affine hidden -> 4 mapping future states to per-frame deltas

    carry_cell_state: when True the future branch starts from the encoder's
    final (h, c); when False it takes h only and a zero cell state.
    """

    enc: LstmCellParams
    fc_latent: LinearParams
    auto_dec: LstmCellParams
    fc_recon: LinearParams
    fut_dec: LstmCellParams
    fc_delta: LinearParams
    dims: ModelDims
    carry_cell_state: bool = True

    def tensors(self) -> dict[str, np.ndarray]:
        """Live views of every learnable tensor, in the serialization order."""
        return {
            "enc.wx": self.enc.wx, "enc.wh": self.enc.wh,
            "enc.bx": self.enc.bx, "enc.bh": self.enc.bh,
            "fc_latent.w": self.fc_latent.w, "fc_latent.b": self.fc_latent.b,
            "auto_dec.wx": self.auto_dec.wx, "auto_dec.wh": self.auto_dec.wh,
            "auto_dec.bx": self.auto_dec.bx, "auto_dec.bh": self.auto_dec.bh,
            "fc_recon.w": self.fc_recon.w, "fc_recon.b": self.fc_recon.b,
            "fut_dec.wx": self.fut_dec.wx, "fut_dec.wh": self.fut_dec.wh,
            "fut_dec.bx": self.fut_dec.bx, "fut_dec.bh": self.fut_dec.bh,
            "fc_delta.w": self.fc_delta.w, "fc_delta.b": self.fc_delta.b,
        }

    @property
    def dtype(self):
        return self.enc.wx.dtype

    def astype(self, dtype) -> "ModelParams":
        """Copy of the model with every tensor cast to ``dtype``."""
        return ModelParams(
            enc=LstmCellParams(*(t.astype(dtype) for t in
                                 (self.enc.wx, self.enc.wh, self.enc.bx, self.enc.bh))),
            fc_latent=LinearParams(self.fc_latent.w.astype(dtype),
                                   self.fc_latent.b.astype(dtype)),
            auto_dec=LstmCellParams(*(t.astype(dtype) for t in
                                      (self.auto_dec.wx, self.auto_dec.wh,
                                       self.auto_dec.bx, self.auto_dec.bh))),
            fc_recon=LinearParams(self.fc_recon.w.astype(dtype),
                                  self.fc_recon.b.astype(dtype)),
            fut_dec=LstmCellParams(*(t.astype(dtype) for t in
                                     (self.fut_dec.wx, self.fut_dec.wh,
                                      self.fut_dec.bx, self.fut_dec.bh))),
            fc_delta=LinearParams(self.fc_delta.w.astype(dtype),
                                  self.fc_delta.b.astype(dtype)),
            dims=self.dims,
            carry_cell_state=self.carry_cell_state,
        )


def init_params(dims: ModelDims, seed: int | np.random.Generator = 0,
                carry_cell_state: bool = True, dtype=np.float64) -> ModelParams:
    """Seeded parameter init.

    LSTM weights draw uniform on +-1/sqrt(hidden); affine weights uniform on
    +-1/sqrt(fan_in); all biases start at zero. Tensors are drawn in the
    `ModelParams.tensors()` order, so a fixed seed fixes every value.
    """
    dims.validate()
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return ModelParams(
        enc=LstmCellParams.init(rng, INPUT_DIM, dims.hidden, dtype),
        fc_latent=LinearParams.init(rng, dims.hidden, dims.latent, dtype),
        auto_dec=LstmCellParams.init(rng, dims.latent, dims.hidden, dtype),
        fc_recon=LinearParams.init(rng, dims.hidden, INPUT_DIM, dtype),
        fut_dec=LstmCellParams.init(rng, dims.latent, dims.hidden, dtype),
        fc_delta=LinearParams.init(rng, dims.hidden, OUTPUT_DIM, dtype),
        dims=dims,
        carry_cell_state=carry_cell_state,
    )


def param_count(params: ModelParams) -> int:
    """Total number of learnable scalars."""
    return sum(t.size for t in params.tensors().values())


# ---------------------------------------------------------------------------
# feature construction


def build_features(boxes, predecessor=None) -> np.ndarray:
    """Turn k consecutive boxes into the (k, 8) per-frame feature window.

    ``boxes`` is a sequence of Box records or an (k, 4) array of
    (cx, cy, w, h) rows; Box frames must be consecutive. Row i holds the box
    followed by its difference from row i-1. The first row's difference is
    taken against ``predecessor`` when one is supplied (it must sit exactly
    one frame before the window) and is zero otherwise.
    """
    arr, frames = _boxes_as_array(boxes)
    if arr.shape[0] < 1:
        raise DataError("feature window needs at least one box")
    if frames is not None:
        gaps = np.flatnonzero(np.diff(frames) != 1)
        if gaps.size:
            i = int(gaps[0])
            raise DataError(
                f"frames must be consecutive: frame {frames[i + 1]} follows "
                f"{frames[i]}")
    if np.any(arr[:, 2:] <= 0):
        raise DataError("box width and height must be positive")
    out = np.zeros((arr.shape[0], INPUT_DIM), dtype=np.float64)
    out[:, :4] = arr
    out[1:, 4:] = arr[1:] - arr[:-1]
    if predecessor is not None:
        pred_arr, pred_frames = _boxes_as_array([predecessor])
        if frames is not None and pred_frames is not None \
                and pred_frames[0] != frames[0] - 1:
            raise DataError(
                f"predecessor frame {pred_frames[0]} is not one before the "
                f"window start {frames[0]}")
        if np.any(pred_arr[0, 2:] <= 0):
            raise DataError("predecessor width and height must be positive")
        out[0, 4:] = arr[0] - pred_arr[0]
    return out


def _boxes_as_array(boxes) -> tuple[np.ndarray, np.ndarray | None]:
    """Normalize a Box sequence or array to ((n, 4) floats, frames or None)."""
    if isinstance(boxes, np.ndarray):
        if boxes.ndim != 2 or boxes.shape[1] != 4:
            raise ShapeError(f"box array has shape {boxes.shape}, expected (n, 4)")
        return boxes.astype(np.float64, copy=False), None
    arr = np.array([[b.cx, b.cy, b.w, b.h] for b in boxes], dtype=np.float64)
    arr = arr.reshape(len(boxes), 4)
    frames = np.array([b.frame for b in boxes], dtype=np.int64)
    return arr, frames


def reconstruction_target(window: np.ndarray) -> np.ndarray:
    """Target of the reconstruction branch: the window with rows reversed and
    the four difference columns negated. Applying it twice is the identity."""
    _check_window(window, k=None)
    out = window[..., ::-1, :].copy()
    out[..., 4:] = -out[..., 4:]
    return out


def _check_window(window: np.ndarray, k: int | None) -> None:
    if window.ndim < 2 or window.shape[-1] != INPUT_DIM:
        raise ShapeError(
            f"feature window has shape {window.shape}, expected (..., k, {INPUT_DIM})")
    if k is not None and window.shape[-2] != k:
        raise ShapeError(
            f"feature window has {window.shape[-2]} rows, model expects k={k}")


# ---------------------------------------------------------------------------
# sequence drivers


@dataclass
class _SeqRun:
    """One unrolled LSTM pass: per-step hidden states, final state, caches."""

    hs: np.ndarray                 # (..., steps, H)
    final: LstmCellState
    init: LstmCellState
    caches: list | None = None


def _run_encoder(params: ModelParams, window: np.ndarray,
                 want_cache: bool) -> _SeqRun:
    k = window.shape[-2]
    batch_shape = window.shape[:-2]
    H = params.dims.hidden
    init = LstmCellState.zeros(H, batch_shape, dtype=window.dtype)
    state = init
    hs = np.empty(batch_shape + (k, H), dtype=window.dtype)
    caches = [] if want_cache else None
    for t in range(k):
        state, cache = lstm_cell_forward(params.enc, window[..., t, :], state)
        hs[..., t, :] = state.h
        if want_cache:
            caches.append(cache)
    return _SeqRun(hs=hs, final=state, init=init, caches=caches)


def _run_constant_decoder(cell: LstmCellParams, z: np.ndarray, steps: int,
                          init: LstmCellState, want_cache: bool) -> _SeqRun:
    """Unroll a decoder that reads the same latent vector at every step.

    The input projection ``z @ wx.T + bx`` is computed once and reused, which
    is what makes the inference path cheap; the caches therefore carry no
    per-step input copy.
    """
    H = cell.hidden_size
    x_pre = z @ cell.wx.T + cell.bx
    state = init
    hs = np.empty(z.shape[:-1] + (steps, H), dtype=z.dtype)
    caches = [] if want_cache else None
    for t in range(steps):
        state, cache = _lstm_cell_from_preact(cell, x_pre, state)
        hs[..., t, :] = state.h
        if want_cache:
            caches.append(cache)
    return _SeqRun(hs=hs, final=state, init=init, caches=caches)


# ---------------------------------------------------------------------------
# public forward ops


def encode(params: ModelParams, window: np.ndarray
           ) -> tuple[np.ndarray, LstmCellState]:
    """Map a (k, 8) window to (latent vector z, encoder final state).

    The returned state is the raw final (h, c); the ReLU sits only on the
    path into the latent projection.
    """
    _check_window(window, params.dims.k)
    run = _run_encoder(params, window, want_cache=False)
    z = linear_forward(params.fc_latent.w, params.fc_latent.b, relu(run.final.h))
    return z, run.final


def reconstruct(params: ModelParams, z: np.ndarray) -> np.ndarray:
    """Run the reconstruction branch for k steps from a zero state; the rows
    approximate ``reconstruction_target`` of the encoded window."""
    _check_last_dim_model(z, params.dims.latent, "z")
    init = LstmCellState.zeros(params.dims.hidden, z.shape[:-1], dtype=z.dtype)
    run = _run_constant_decoder(params.auto_dec, z, params.dims.k, init, False)
    return run.hs @ params.fc_recon.w.T + params.fc_recon.b


def decode_future(params: ModelParams, z: np.ndarray,
                  enc_state: LstmCellState) -> np.ndarray:
    """Run the future branch for p steps and return the (p, 4) delta rows.

    The branch starts from the encoder's final state: (h, c) when the model
    was built with carry_cell_state, h with a fresh zero cell otherwise.
    """
    _check_last_dim_model(z, params.dims.latent, "z")
    if enc_state.h.shape != z.shape[:-1] + (params.dims.hidden,):
        raise ShapeError(
            f"encoder state h has shape {enc_state.h.shape}, expected "
            f"{z.shape[:-1] + (params.dims.hidden,)}")
    if params.carry_cell_state:
        init = LstmCellState(enc_state.h, enc_state.c)
    else:
        init = LstmCellState(enc_state.h, np.zeros_like(enc_state.h))
    run = _run_constant_decoder(params.fut_dec, z, params.dims.p, init, False)
    return run.hs @ params.fc_delta.w.T + params.fc_delta.b


def _check_last_dim_model(arr: np.ndarray, expected: int, name: str) -> None:
    if arr.shape[-1] != expected:
        raise ShapeError(f"{name} has shape {arr.shape}, expected last dim {expected}")


def concat_trajectory(deltas: np.ndarray, anchor: np.ndarray) -> np.ndarray:
    """Cumulative sum of delta rows seeded at the anchor box.

    ``anchor`` is the (cx, cy, w, h) 4-vector of the last observed box (with
    a leading batch shape matching ``deltas`` when batched). Box i of the
    result is anchor plus the first i+1 deltas, accumulated strictly in step
    order, so ``out[i] - out[i-1]`` reproduces each delta row.
    """
    deltas = np.asarray(deltas)
    anchor = np.asarray(anchor)
    if deltas.ndim < 2 or deltas.shape[-1] != OUTPUT_DIM:
        raise ShapeError(
            f"deltas have shape {deltas.shape}, expected (..., p, {OUTPUT_DIM})")
    if deltas.shape[-2] == 0:
        raise DataError("empty delta sequence")
    if anchor.shape != deltas.shape[:-2] + (OUTPUT_DIM,):
        raise ShapeError(
            f"anchor has shape {anchor.shape}, expected "
            f"{deltas.shape[:-2] + (OUTPUT_DIM,)}")
    out = np.empty_like(deltas)
    acc = anchor
    for i in range(deltas.shape[-2]):
        acc = acc + deltas[..., i, :]
        out[..., i, :] = acc
    return out


def forward_train(params: ModelParams, window: np.ndarray
                  ) -> tuple[np.ndarray, np.ndarray]:
    """Training-time forward pass: (reconstruction rows, future boxes).

    Composes encode, reconstruct, decode_future and concat_trajectory; the
    anchor is the (cx, cy, w, h) part of the window's last row.
    """
    z, state = encode(params, window)
    recon = reconstruct(params, z)
    deltas = decode_future(params, z, state)
    boxes = concat_trajectory(deltas, window[..., -1, :4])
    return recon, boxes


def predict(params: ModelParams, boxes, predecessor=None) -> np.ndarray:
    """Forecast the next p boxes from exactly k observed boxes.

    The reconstruction branch never runs here. Matches the future-box head
    of ``forward_train`` bit for bit.
    """
    arr, _ = _boxes_as_array(boxes)
    if arr.shape[0] != params.dims.k:
        raise DataError(
            f"predict needs exactly k={params.dims.k} boxes, got {arr.shape[0]}")
    return predict_from_window(params, build_features(boxes, predecessor))


def predict_from_window(params: ModelParams, window: np.ndarray) -> np.ndarray:
    """Forecast from an already-built feature window (the benchmark hot path)."""
    z, state = encode(params, window)
    deltas = decode_future(params, z, state)
    return concat_trajectory(deltas, window[..., -1, :4])


# ---------------------------------------------------------------------------
# loss


@dataclass(frozen=True)
class LossWeights:
    """Objective configuration: term weights and which branches train.

    mode 'traj-del'      weights the L1 on raw delta rows only
    mode 'traj'          weights the L1 on concatenated future boxes only
    mode 'traj+auto-enc' adds alpha * reconstruction L1 to the 'traj' term
    """

    alpha: float = 1.0
    beta: float = 2.0
    mode: str = MODE_TRAJ_AUTOENC

    def validate(self) -> None:
        if self.mode not in LOSS_MODES:
            raise ConfigError(
                f"unknown loss mode {self.mode!r}; pick one of {LOSS_MODES}")
        if self.alpha < 0 or self.beta < 0:
            raise ConfigError("loss weights must be non-negative")


@dataclass
class HeadGrads:
    """Gradients on the model heads; entries are None for inactive branches."""

    d_recon: np.ndarray | None = None
    d_boxes: np.ndarray | None = None
    d_deltas: np.ndarray | None = None


def composite_loss(recon: np.ndarray | None, window: np.ndarray,
                   pred_boxes: np.ndarray | None, target_boxes: np.ndarray,
                   weights: LossWeights,
                   pred_deltas: np.ndarray | None = None
                   ) -> tuple[float, dict[str, float], HeadGrads]:
    """Weighted training objective over the active branches.

    Per mode:
      traj-del       beta * L1(pred_deltas, target deltas)
      traj           beta * L1(pred_boxes, target_boxes)
      traj+auto-enc  the traj term + alpha * L1(recon, reconstruction_target)

    Target deltas derive from ``target_boxes`` and the anchor stored in the
    window's last row; ``pred_deltas`` falls back to differencing
    ``pred_boxes`` when not supplied. L1 terms are means over every element
    (batched inputs average over the batch too), so the loss of a batch is
    the mean of the per-sample losses.

    Returns (loss, unweighted per-term values, gradients on the heads).
    """
    weights.validate()
    _check_window(window, k=None)
    terms: dict[str, float] = {}
    grads = HeadGrads()
    anchor = window[..., -1, :4]

    if weights.mode == MODE_TRAJ_DEL:
        if pred_deltas is None:
            if pred_boxes is None:
                raise ConfigError("traj-del mode needs pred_deltas or pred_boxes")
            pred_deltas = np.diff(pred_boxes, axis=-2,
                                  prepend=anchor[..., None, :])
        target_deltas = np.diff(target_boxes, axis=-2,
                                prepend=anchor[..., None, :])
        l_del, g_del = l1_loss(pred_deltas, target_deltas)
        terms["traj"] = l_del
        grads.d_deltas = weights.beta * g_del
        loss = weights.beta * l_del
        return loss, terms, grads

    if pred_boxes is None:
        raise ConfigError(f"mode {weights.mode!r} needs pred_boxes")
    l_traj, g_traj = l1_loss(pred_boxes, target_boxes)
    terms["traj"] = l_traj
    grads.d_boxes = weights.beta * g_traj
    loss = weights.beta * l_traj

    if weights.mode == MODE_TRAJ_AUTOENC:
        if recon is None:
            raise ConfigError("traj+auto-enc mode needs the reconstruction rows")
        l_auto, g_auto = l1_loss(recon, reconstruction_target(window))
        terms["auto_enc"] = l_auto
        grads.d_recon = weights.alpha * g_auto
        loss += weights.alpha * l_auto
    return loss, terms, grads


# ---------------------------------------------------------------------------
# training engine: forward with caches + hand-derived backward


def loss_and_grads(params: ModelParams, window: np.ndarray,
                   target_boxes: np.ndarray, weights: LossWeights
                   ) -> tuple[float, dict[str, float], dict[str, np.ndarray]]:
    """Composite loss plus analytic gradients for every learnable tensor.

    ``window`` is (k, 8) or (N, k, 8); ``target_boxes`` is the matching
    (p, 4) or (N, p, 4). Gradients come back keyed like
    ``ModelParams.tensors()``; inactive branches contribute zeros. Batched
    gradients are the gradient of the batch-mean loss, which equals the mean
    of the per-sample gradients.
    """
    weights.validate()
    dims = params.dims
    _check_window(window, dims.k)
    if target_boxes.shape != window.shape[:-2] + (dims.p, OUTPUT_DIM):
        raise ShapeError(
            f"target boxes have shape {target_boxes.shape}, expected "
            f"{window.shape[:-2] + (dims.p, OUTPUT_DIM)}")

    # forward, keeping caches
    enc_run = _run_encoder(params, window, want_cache=True)
    h_final = enc_run.final.h
    h_relu = relu(h_final)
    z = linear_forward(params.fc_latent.w, params.fc_latent.b, h_relu)

    need_auto = weights.mode == MODE_TRAJ_AUTOENC
    auto_run = None
    recon = None
    if need_auto:
        auto_init = LstmCellState.zeros(dims.hidden, z.shape[:-1], dtype=z.dtype)
        auto_run = _run_constant_decoder(params.auto_dec, z, dims.k, auto_init, True)
        recon = auto_run.hs @ params.fc_recon.w.T + params.fc_recon.b

    if params.carry_cell_state:
        fut_init = LstmCellState(enc_run.final.h, enc_run.final.c)
    else:
        fut_init = LstmCellState(enc_run.final.h, np.zeros_like(enc_run.final.h))
    fut_run = _run_constant_decoder(params.fut_dec, z, dims.p, fut_init, True)
    deltas = fut_run.hs @ params.fc_delta.w.T + params.fc_delta.b

    anchor = window[..., -1, :4]
    pred_boxes = None
    if weights.mode != MODE_TRAJ_DEL:
        pred_boxes = concat_trajectory(deltas, anchor)

    loss, terms, head = composite_loss(recon, window, pred_boxes, target_boxes,
                                       weights, pred_deltas=deltas)

    # backward
    grads = {name: np.zeros_like(t) for name, t in params.tensors().items()}

    if head.d_boxes is not None:
        # box i collects deltas 1..i, so the delta at step t collects the
        # gradient of every box from t onward
        d_deltas = np.flip(np.cumsum(np.flip(head.d_boxes, axis=-2), axis=-2),
                           axis=-2)
    else:
        d_deltas = head.d_deltas

    dw, db, d_hs = linear_backward(params.fc_delta.w, fut_run.hs, d_deltas)
    grads["fc_delta.w"] += dw
    grads["fc_delta.b"] += db
    dz, d_enc_h, d_enc_c = _constant_decoder_backward(
        params.fut_dec, fut_run, z, d_hs, grads, "fut_dec")
    if not params.carry_cell_state:
        d_enc_c = np.zeros_like(d_enc_c)

    if need_auto:
        dw, db, d_hs = linear_backward(params.fc_recon.w, auto_run.hs, head.d_recon)
        grads["fc_recon.w"] += dw
        grads["fc_recon.b"] += db
        dz_auto, _, _ = _constant_decoder_backward(
            params.auto_dec, auto_run, z, d_hs, grads, "auto_dec")
        dz = dz + dz_auto

    dw, db, d_hrelu = linear_backward(params.fc_latent.w, h_relu, dz)
    grads["fc_latent.w"] += dw
    grads["fc_latent.b"] += db
    dh_final = d_hrelu * (h_final > 0) + d_enc_h

    _encoder_backward(params.enc, enc_run, window, dh_final, d_enc_c, grads)
    return loss, terms, grads


def _constant_decoder_backward(cell: LstmCellParams, run: _SeqRun, z: np.ndarray,
                               d_hs: np.ndarray, grads: dict[str, np.ndarray],
                               prefix: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Backward through a constant-input decoder run.

    ``d_hs`` carries the upstream gradient on every per-step hidden state.
    Accumulates the cell's weight gradients into ``grads`` and returns
    (dz, dh_init, dc_init). Because the input is the same z at every step,
    the input-side weight gradient reduces to one product with the summed
    gate gradients.
    """
    steps = len(run.caches)
    da_all = np.empty(run.hs.shape[:-1] + (cell.wx.shape[0],), dtype=run.hs.dtype)
    dh = np.zeros_like(run.final.h)
    dc = np.zeros_like(run.final.c)
    for t in reversed(range(steps)):
        da, dh, dc = lstm_gate_backward(run.caches[t], dh + d_hs[..., t, :], dc)
        da_all[..., t, :] = da
    h_prev = np.concatenate([run.init.h[..., None, :], run.hs[..., :-1, :]], axis=-2)
    da2 = da_all.reshape(-1, da_all.shape[-1])
    grads[prefix + ".wh"] += da2.T @ h_prev.reshape(-1, h_prev.shape[-1])
    db = da2.sum(axis=0)
    grads[prefix + ".bx"] += db
    grads[prefix + ".bh"] += db
    da_sum = da_all.sum(axis=-2)
    grads[prefix + ".wx"] += da_sum.reshape(-1, da_sum.shape[-1]).T \
        @ z.reshape(-1, z.shape[-1])
    dz = da_sum @ cell.wx
    return dz, dh, dc


def _encoder_backward(cell: LstmCellParams, run: _SeqRun, window: np.ndarray,
                      dh_final: np.ndarray, dc_final: np.ndarray,
                      grads: dict[str, np.ndarray]) -> None:
    """Backward through the encoder; upstream gradient enters at the final
    state only. Accumulates the cell's weight gradients into ``grads``."""
    steps = len(run.caches)
    da_all = np.empty(run.hs.shape[:-1] + (cell.wx.shape[0],), dtype=run.hs.dtype)
    dh = dh_final
    dc = dc_final
    for t in reversed(range(steps)):
        da, dh, dc = lstm_gate_backward(run.caches[t], dh, dc)
        da_all[..., t, :] = da
    h_prev = np.concatenate([run.init.h[..., None, :], run.hs[..., :-1, :]], axis=-2)
    da2 = da_all.reshape(-1, da_all.shape[-1])
    grads["enc.wx"] += da2.T @ window.reshape(-1, window.shape[-1])
    grads["enc.wh"] += da2.T @ h_prev.reshape(-1, h_prev.shape[-1])
    db = da2.sum(axis=0)
    grads["enc.bx"] += db
    grads["enc.bh"] += db
