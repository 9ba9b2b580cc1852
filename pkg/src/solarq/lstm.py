"""LSTM quantile model: one recurrent network reads the previous day's
24-step sequence (power lag plus three radiation values per step) and emits
all 99 quantiles for each next-day hour through a shared per-step readout.
Training minimizes the pinball loss over days, non-night steps, and levels,
with gradients computed by backpropagation through time."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass

import numpy as np

from .dataio import HOURS_PER_DAY, NightMask
from .errors import TrainingError
from .features import SampleSet
from .nnet import (
    DenseParams,
    TrainConfig,
    adam_init,
    adam_step,
    clip_gradient_norm,
    dropout_mask,
    init_params,
    model_rng,
    params_from_json,
    params_to_json,
    sigmoid,
)
from .qcore import QuantileForecast, QuantileGrid

logger = logging.getLogger(__name__)

HIDDEN_SIZE = 100
STEP_INPUT_WIDTH = 4
DEFAULT_CLIP_NORM = 5.0
FORGET_BIAS_INIT = 1.0
FAMILY_CODE = 2  # seed-stream namespace; FCANN uses 1

GATE_NAMES = ("i", "f", "o", "g")
PARAM_KEYS = tuple(
    [f"W_{g}" for g in GATE_NAMES]
    + [f"U_{g}" for g in GATE_NAMES]
    + [f"b_{g}" for g in GATE_NAMES]
    + ["W_ro", "b_ro"]
)


@dataclass
class LSTMParams:
    """Gate weights, recurrent weights, biases, and the shared readout."""

    W_i: np.ndarray
    W_f: np.ndarray
    W_o: np.ndarray
    W_g: np.ndarray
    U_i: np.ndarray
    U_f: np.ndarray
    U_o: np.ndarray
    U_g: np.ndarray
    b_i: np.ndarray
    b_f: np.ndarray
    b_o: np.ndarray
    b_g: np.ndarray
    readout: DenseParams

    def __post_init__(self):
        hidden, n_in = self.W_i.shape
        for g in GATE_NAMES:
            if getattr(self, f"W_{g}").shape != (hidden, n_in):
                raise ValueError("gate input weights must share one shape")
            if getattr(self, f"U_{g}").shape != (hidden, hidden):
                raise ValueError("recurrent weights must be hidden x hidden")
            if getattr(self, f"b_{g}").shape != (hidden,):
                raise ValueError("gate biases must be hidden-sized vectors")
        if self.readout.n_in != hidden:
            raise ValueError("readout fan-in must equal the hidden size")

    @property
    def hidden_size(self) -> int:
        return self.W_i.shape[0]

    @property
    def input_width(self) -> int:
        return self.W_i.shape[1]

    @property
    def n_parameters(self) -> int:
        total = 0
        for g in GATE_NAMES:
            total += getattr(self, f"W_{g}").size
            total += getattr(self, f"U_{g}").size
            total += getattr(self, f"b_{g}").size
        return total + self.readout.W.size + self.readout.b.size

    def as_dict(self) -> dict:
        d = {}
        for g in GATE_NAMES:
            d[f"W_{g}"] = getattr(self, f"W_{g}")
            d[f"U_{g}"] = getattr(self, f"U_{g}")
            d[f"b_{g}"] = getattr(self, f"b_{g}")
        d["W_ro"] = self.readout.W
        d["b_ro"] = self.readout.b
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LSTMParams":
        kwargs = {}
        for g in GATE_NAMES:
            kwargs[f"W_{g}"] = d[f"W_{g}"]
            kwargs[f"U_{g}"] = d[f"U_{g}"]
            kwargs[f"b_{g}"] = d[f"b_{g}"]
        return cls(readout=DenseParams(d["W_ro"], d["b_ro"]), **kwargs)


def init_lstm_params(
    n_in: int, hidden: int, n_out: int, rng: np.random.Generator
) -> dict:
    """Glorot-uniform weights, zero biases except the forget bias at 1."""
    d = {}
    for g in GATE_NAMES:
        d[f"W_{g}"] = init_params((hidden, n_in), seed=rng)
        d[f"U_{g}"] = init_params((hidden, hidden), seed=rng)
        d[f"b_{g}"] = np.zeros(hidden)
    d["b_f"] = np.full(hidden, FORGET_BIAS_INIT)
    d["W_ro"] = init_params((n_out, hidden), seed=rng)
    d["b_ro"] = np.zeros(n_out)
    return d


def _squash(z, all_sigmoid: bool):
    return sigmoid(z) if all_sigmoid else np.tanh(z)


def lstm_cell(x, h, c, p: LSTMParams, all_sigmoid: bool = False):
    """One recurrence step; returns (h', c').

    Gates use sigmoid; the cell candidate and the cell-to-hidden squashing
    use tanh unless ``all_sigmoid`` selects the literal all-sigmoid reading.
    """
    x = np.asarray(x, dtype=float)
    h = np.asarray(h, dtype=float)
    c = np.asarray(c, dtype=float)
    if x.shape[-1] != p.input_width or h.shape[-1] != p.hidden_size:
        raise ValueError("cell input shapes do not match the parameters")
    i = sigmoid(x @ p.W_i.T + h @ p.U_i.T + p.b_i)
    f = sigmoid(x @ p.W_f.T + h @ p.U_f.T + p.b_f)
    o = sigmoid(x @ p.W_o.T + h @ p.U_o.T + p.b_o)
    g = _squash(x @ p.W_g.T + h @ p.U_g.T + p.b_g, all_sigmoid)
    c_new = f * c + i * g
    h_new = o * _squash(c_new, all_sigmoid)
    return h_new, c_new


def lstm_forward(
    sequence: np.ndarray,
    p: LSTMParams,
    all_sigmoid: bool = False,
    n_steps: int | None = HOURS_PER_DAY,
) -> np.ndarray:
    """Run the cell over a (T, input) sequence from zero state and apply the
    readout at every step; returns (T, n_out) raw outputs.

    ``n_steps`` enforces the expected sequence length; pass None to accept
    any length (used by small test fixtures).
    """
    sequence = np.asarray(sequence, dtype=float)
    if sequence.ndim != 2 or sequence.shape[1] != p.input_width:
        raise ValueError(f"sequence must be (T, {p.input_width}), got {sequence.shape}")
    if n_steps is not None and sequence.shape[0] != n_steps:
        raise ValueError(f"sequence must have {n_steps} steps, got {sequence.shape[0]}")
    h = np.zeros(p.hidden_size)
    c = np.zeros(p.hidden_size)
    outputs = np.empty((sequence.shape[0], p.readout.n_out))
    for t in range(sequence.shape[0]):
        h, c = lstm_cell(sequence[t], h, c, p, all_sigmoid)
        outputs[t] = p.readout.W @ h + p.readout.b
    return outputs


def _forward_batch(params: dict, S: np.ndarray, all_sigmoid: bool, drop_masks=None):
    """Batched unrolled forward pass.

    ``S`` is (B, T, input).  Returns (outputs (B, T, n_out), caches), where
    caches[t] holds everything the backward pass needs for step t.
    ``drop_masks`` is (B, T, hidden) inverted-dropout masks or None.
    """
    B, T, _ = S.shape
    hidden = params["b_i"].shape[0]
    n_out = params["b_ro"].shape[0]
    h = np.zeros((B, hidden))
    c = np.zeros((B, hidden))
    outputs = np.empty((B, T, n_out))
    caches = []
    for t in range(T):
        x = S[:, t, :]
        i = sigmoid(x @ params["W_i"].T + h @ params["U_i"].T + params["b_i"])
        f = sigmoid(x @ params["W_f"].T + h @ params["U_f"].T + params["b_f"])
        o = sigmoid(x @ params["W_o"].T + h @ params["U_o"].T + params["b_o"])
        g = _squash(x @ params["W_g"].T + h @ params["U_g"].T + params["b_g"], all_sigmoid)
        c_new = f * c + i * g
        tc = _squash(c_new, all_sigmoid)
        h_new = o * tc
        ro_in = h_new if drop_masks is None else h_new * drop_masks[:, t, :]
        outputs[:, t, :] = ro_in @ params["W_ro"].T + params["b_ro"]
        caches.append(
            {"x": x, "h_prev": h, "c_prev": c, "i": i, "f": f, "o": o, "g": g,
             "c": c_new, "tc": tc, "h": h_new, "ro_in": ro_in}
        )
        h, c = h_new, c_new
    return outputs, caches


def masked_pinball(outputs: np.ndarray, Y: np.ndarray, taus: np.ndarray,
                   step_mask: np.ndarray):
    """Mean pinball loss over (day, included step, level) and its gradient
    with respect to ``outputs``.

    ``outputs`` is (B, T, n_tau), ``Y`` is (B, T), ``step_mask`` a boolean
    (T,) vector marking steps included in the loss.
    """
    included = int(step_mask.sum())
    if included == 0:
        raise ValueError("step mask excludes every step; nothing to score")
    r = Y[:, :, None] - outputs
    loss_el = np.where(r > 0.0, taus * r, (taus - 1.0) * r)
    grad_el = np.where(r > 0.0, -taus, 1.0 - taus)
    m = step_mask.astype(float)[None, :, None]
    n = outputs.shape[0] * included * outputs.shape[2]
    loss = float((loss_el * m).sum() / n)
    return loss, grad_el * m / n


def loss_and_grads(
    params: dict,
    S: np.ndarray,
    Y: np.ndarray,
    taus: np.ndarray,
    step_mask: np.ndarray,
    all_sigmoid: bool = False,
    drop_masks=None,
):
    """Loss plus full parameter gradients by backpropagation through time."""
    outputs, caches = _forward_batch(params, S, all_sigmoid, drop_masks)
    loss, dout = masked_pinball(outputs, Y, np.asarray(taus, dtype=float), step_mask)
    if not np.isfinite(loss):
        return loss, None

    grads = {k: np.zeros_like(v) for k, v in params.items()}
    B, T, _ = S.shape
    hidden = params["b_i"].shape[0]
    dh_next = np.zeros((B, hidden))
    dc_next = np.zeros((B, hidden))
    for t in range(T - 1, -1, -1):
        cache = caches[t]
        dy = dout[:, t, :]
        grads["W_ro"] += dy.T @ cache["ro_in"]
        grads["b_ro"] += dy.sum(axis=0)
        dro_in = dy @ params["W_ro"]
        if drop_masks is not None:
            dro_in = dro_in * drop_masks[:, t, :]
        dh = dro_in + dh_next

        o, tc, i, f, g = cache["o"], cache["tc"], cache["i"], cache["f"], cache["g"]
        do = dh * tc
        dtc = dh * o
        if all_sigmoid:
            dc = dtc * tc * (1.0 - tc) + dc_next
            dg_act = g * (1.0 - g)
        else:
            dc = dtc * (1.0 - tc * tc) + dc_next
            dg_act = 1.0 - g * g
        di = dc * g
        df = dc * cache["c_prev"]
        dg = dc * i
        dc_next = dc * f

        pre = {
            "i": di * i * (1.0 - i),
            "f": df * f * (1.0 - f),
            "o": do * o * (1.0 - o),
            "g": dg * dg_act,
        }
        dh_next = np.zeros((B, hidden))
        for name, dpre in pre.items():
            grads[f"W_{name}"] += dpre.T @ cache["x"]
            grads[f"U_{name}"] += dpre.T @ cache["h_prev"]
            grads[f"b_{name}"] += dpre.sum(axis=0)
            dh_next += dpre @ params[f"U_{name}"]
    return loss, grads


@dataclass
class LSTMModel:
    """Fitted model with the channel standardization and night handling
    baked in."""

    params: LSTMParams
    grid: QuantileGrid
    train_config: TrainConfig
    channel_means: np.ndarray
    channel_scales: np.ndarray
    night_hours: frozenset[int]
    all_sigmoid: bool = False
    final_validation_loss: float = 0.0
    epochs_run: int = 0

    def __post_init__(self):
        if self.params.readout.n_out != len(self.grid):
            raise ValueError("readout width must equal the quantile grid size")
        self.channel_means = np.asarray(self.channel_means, dtype=float)
        self.channel_scales = np.asarray(self.channel_scales, dtype=float)
        if self.channel_means.shape != (STEP_INPUT_WIDTH,):
            raise ValueError(f"expected {STEP_INPUT_WIDTH} channel means")

    @property
    def n_parameters(self) -> int:
        return self.params.n_parameters


def sequences_from_samples(samples: SampleSet) -> np.ndarray:
    """Reshape raw 96-column rows into (n, 24, 4) per-step sequences with
    channel order (power lag, SSRD, STRD, TSR)."""
    X = samples.X
    if X.shape[1] != STEP_INPUT_WIDTH * HOURS_PER_DAY:
        raise ValueError("samples do not carry the raw 96-column layout")
    return X.reshape(len(samples), STEP_INPUT_WIDTH, HOURS_PER_DAY).transpose(0, 2, 1)


def _channel_stats(S: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    flat = S.reshape(-1, S.shape[2])
    means = flat.mean(axis=0)
    scales = flat.std(axis=0)
    scales = np.where(scales > 0.0, scales, 1.0)
    return means, scales


def fit_lstm(
    samples: SampleSet,
    mask: NightMask,
    grid: QuantileGrid,
    config: TrainConfig,
    hidden_size: int = HIDDEN_SIZE,
    clip_norm: float = DEFAULT_CLIP_NORM,
    all_sigmoid: bool = False,
) -> LSTMModel:
    """Train the single recurrent model on all training days.

    Night steps are excluded from the loss.  The chronologically last
    ``validation_fraction`` of days is held out for early stopping; the
    best-validation parameters are restored.  Deterministic given the seed.
    """
    day_hours = [h for h in range(HOURS_PER_DAY) if not mask.is_night(h)]
    if not day_hours:
        raise ValueError("every hour is night; nothing to train on")
    step_mask = np.array([not mask.is_night(h) for h in range(HOURS_PER_DAY)])

    S_all = sequences_from_samples(samples)
    means, scales = _channel_stats(S_all)
    S = (S_all - means) / scales
    Y = samples.Y
    taus = grid.as_array()

    n = S.shape[0]
    n_val = max(1, int(round(config.validation_fraction * n)))
    if n - n_val < 1:
        raise ValueError(f"too few samples ({n}) for validation fraction "
                         f"{config.validation_fraction}")
    S_train, Y_train = S[: n - n_val], Y[: n - n_val]
    S_val, Y_val = S[n - n_val:], Y[n - n_val:]

    rng = model_rng(config.seed, FAMILY_CODE)
    params = init_lstm_params(STEP_INPUT_WIDTH, hidden_size, len(grid), rng)
    state = adam_init(params)

    best_val = np.inf
    best_params = {k: v.copy() for k, v in params.items()}
    stall = 0
    epochs_run = 0
    n_train = S_train.shape[0]
    for epoch in range(config.epochs):
        epochs_run = epoch + 1
        order = rng.permutation(n_train)
        for start in range(0, n_train, config.batch_size):
            rows = order[start: start + config.batch_size]
            drop = None
            if config.dropout_rate > 0.0:
                drop = dropout_mask(
                    rng, (len(rows), HOURS_PER_DAY, hidden_size), config.dropout_rate
                )
            loss, grads = loss_and_grads(
                params, S_train[rows], Y_train[rows], taus, step_mask,
                all_sigmoid=all_sigmoid, drop_masks=drop,
            )
            if not np.isfinite(loss):
                raise TrainingError(
                    f"LSTM training diverged at epoch {epochs_run}", epoch=epochs_run
                )
            grads = clip_gradient_norm(grads, clip_norm)
            params, state = adam_step(params, grads, state, config.learning_rate)
        val_out, _ = _forward_batch(params, S_val, all_sigmoid)
        val_loss, _ = masked_pinball(val_out, Y_val, taus, step_mask)
        if val_loss < best_val:
            best_val = val_loss
            best_params = {k: v.copy() for k, v in params.items()}
            stall = 0
        else:
            stall += 1
            if stall >= config.early_stop_patience:
                break
        logger.debug("LSTM epoch %d val %.6f", epochs_run, val_loss)

    return LSTMModel(
        params=LSTMParams.from_dict(best_params),
        grid=grid,
        train_config=config,
        channel_means=means,
        channel_scales=scales,
        night_hours=mask.night_hours,
        all_sigmoid=all_sigmoid,
        final_validation_loss=float(best_val),
        epochs_run=epochs_run,
    )


def predict_lstm(model: LSTMModel, samples: SampleSet) -> list[QuantileForecast]:
    """Forecasts for every sample day: night hours zero across all levels,
    estimates clipped to [0, 1] and crossing-repaired; dropout disabled."""
    S = sequences_from_samples(samples)
    S = (S - model.channel_means) / model.channel_scales
    outputs, _ = _forward_batch(model.params.as_dict(), S, model.all_sigmoid)
    outputs = np.clip(outputs, 0.0, 1.0)
    for h in model.night_hours:
        outputs[:, h, :] = 0.0
    outputs = np.sort(outputs, axis=2)
    return [
        QuantileForecast(
            day_index=samples.day_indices[i],
            timestamps=samples.target_timestamps[i],
            estimates=outputs[i],
        )
        for i in range(len(samples))
    ]


def lstm_model_to_json(model: LSTMModel) -> str:
    meta = {
        "levels": list(model.grid.levels),
        "channel_means": model.channel_means.tolist(),
        "channel_scales": model.channel_scales.tolist(),
        "night_hours": sorted(model.night_hours),
        "all_sigmoid": model.all_sigmoid,
        "final_validation_loss": model.final_validation_loss,
        "epochs_run": model.epochs_run,
        "seed": model.train_config.seed,
    }
    return params_to_json(model.params.as_dict(), meta=meta)


def lstm_model_from_json(text: str, config: TrainConfig | None = None) -> LSTMModel:
    params, meta = params_from_json(text)
    return LSTMModel(
        params=LSTMParams.from_dict(params),
        grid=QuantileGrid(levels=tuple(meta["levels"])),
        train_config=config if config is not None else TrainConfig(seed=meta.get("seed", 0)),
        channel_means=np.asarray(meta["channel_means"]),
        channel_scales=np.asarray(meta["channel_scales"]),
        night_hours=frozenset(meta["night_hours"]),
        all_sigmoid=bool(meta.get("all_sigmoid", False)),
        final_validation_loss=float(meta.get("final_validation_loss", 0.0)),
        epochs_run=int(meta.get("epochs_run", 0)),
    )
