"""FCANN quantile models: one perceptron (selected features -> 10 tanh
units -> 1 linear output) per forecast hour and quantile level, trained by
minimizing the pinball loss with Adam."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass

import numpy as np

from .dataio import HOURS_PER_DAY
from .errors import TrainingError
from .features import FeatureSpec, SampleSet, apply_standardizer
from .nnet import (
    DenseParams,
    TrainConfig,
    adam_init,
    adam_step,
    dense_forward,
    dropout_mask,
    init_params,
    model_rng,
    pinball_subgradient,
)
from .qcore import QuantileForecast, QuantileGrid

logger = logging.getLogger(__name__)

HIDDEN_WIDTH = 10
FAMILY_CODE = 1  # seed-stream namespace; the LSTM uses 2


@dataclass
class FCANNModel:
    """One fitted (horizon, tau) network."""

    tau: float
    horizon_hour: int
    layer1: DenseParams
    layer2: DenseParams
    train_config: TrainConfig
    final_validation_loss: float
    epochs_run: int = 0

    def __post_init__(self):
        if self.layer1.n_out != HIDDEN_WIDTH:
            raise ValueError(f"hidden width must be {HIDDEN_WIDTH}, got {self.layer1.n_out}")
        if self.layer2.W.shape != (1, HIDDEN_WIDTH):
            raise ValueError("output layer must map hidden width to a single unit")

    @property
    def n_parameters(self) -> int:
        return self.layer1.W.size + self.layer1.b.size + self.layer2.W.size + self.layer2.b.size


def forward(params: dict, X: np.ndarray) -> np.ndarray:
    """Network output for a parameter dict {W1, b1, W2, b2}; no dropout."""
    X = np.asarray(X, dtype=float)
    single = X.ndim == 1
    X2 = X.reshape(1, -1) if single else X
    a1 = np.tanh(X2 @ params["W1"].T + params["b1"])
    out = (a1 @ params["W2"].T + params["b2"]).reshape(-1)
    return out[0] if single else out


def loss_and_grads(
    params: dict,
    X: np.ndarray,
    y: np.ndarray,
    tau: float,
    hidden_mask: np.ndarray | None = None,
    smoothing_eta: float = 0.0,
):
    """Mean pinball loss of the network and gradients for every parameter.

    ``hidden_mask`` is an inverted-dropout mask applied to the hidden
    activations (training only); None disables dropout.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    a1 = np.tanh(X @ params["W1"].T + params["b1"])
    a1_used = a1 if hidden_mask is None else a1 * hidden_mask
    y_hat = (a1_used @ params["W2"].T + params["b2"]).reshape(-1)
    loss, dy = pinball_subgradient(y_hat, y, tau, smoothing_eta)

    dy = dy.reshape(-1, 1)
    grads = {
        "W2": dy.T @ a1_used,
        "b2": dy.sum(axis=0),
    }
    da1 = dy @ params["W2"]
    if hidden_mask is not None:
        da1 = da1 * hidden_mask
    dz1 = da1 * (1.0 - a1 * a1)
    grads["W1"] = dz1.T @ X
    grads["b1"] = dz1.sum(axis=0)
    return loss, grads


def _initial_params(n_in: int, rng: np.random.Generator) -> dict:
    return {
        "W1": init_params((HIDDEN_WIDTH, n_in), seed=rng),
        "b1": np.zeros(HIDDEN_WIDTH),
        "W2": init_params((1, HIDDEN_WIDTH), seed=rng),
        "b2": np.zeros(1),
    }


def fit_fcann(
    samples: SampleSet, spec: FeatureSpec, tau: float, config: TrainConfig
) -> FCANNModel:
    """Train one (horizon, tau) network on the standardized selected features.

    The chronologically last ``validation_fraction`` of rows is held out for
    early stopping; the best-validation parameters are restored at the end.
    Training is deterministic given ``config.seed``.
    """
    if spec.is_night or not spec.selected_indices:
        raise ValueError(f"hour {spec.horizon_hour} is a night horizon; no model is trained")
    X = apply_standardizer(spec.standardization, samples.X[:, list(spec.selected_indices)])
    y = samples.Y[:, spec.horizon_hour]
    n = X.shape[0]
    n_val = max(1, int(round(config.validation_fraction * n)))
    if n - n_val < 1:
        raise ValueError(f"too few samples ({n}) for validation fraction "
                         f"{config.validation_fraction}")
    X_train, y_train = X[: n - n_val], y[: n - n_val]
    X_val, y_val = X[n - n_val:], y[n - n_val:]

    rng = model_rng(config.seed, FAMILY_CODE, spec.horizon_hour, round(tau * 100))
    params = _initial_params(X.shape[1], rng)
    state = adam_init(params)

    best_val = np.inf
    best_params = {k: v.copy() for k, v in params.items()}
    stall = 0
    epochs_run = 0
    n_train = X_train.shape[0]
    for epoch in range(config.epochs):
        epochs_run = epoch + 1
        order = rng.permutation(n_train)
        for start in range(0, n_train, config.batch_size):
            rows = order[start: start + config.batch_size]
            mask = None
            if config.dropout_rate > 0.0:
                mask = dropout_mask(rng, (len(rows), HIDDEN_WIDTH), config.dropout_rate)
            loss, grads = loss_and_grads(
                params, X_train[rows], y_train[rows], tau,
                hidden_mask=mask, smoothing_eta=config.smoothing_eta,
            )
            if not np.isfinite(loss):
                raise TrainingError(
                    f"FCANN training diverged (horizon {spec.horizon_hour}, "
                    f"tau {tau}) at epoch {epochs_run}",
                    epoch=epochs_run,
                )
            params, state = adam_step(params, grads, state, config.learning_rate)
        val_loss, _ = pinball_subgradient(forward(params, X_val), y_val, tau)
        if val_loss < best_val:
            best_val = val_loss
            best_params = {k: v.copy() for k, v in params.items()}
            stall = 0
        else:
            stall += 1
            if stall >= config.early_stop_patience:
                break

    return FCANNModel(
        tau=tau,
        horizon_hour=spec.horizon_hour,
        layer1=DenseParams(best_params["W1"], best_params["b1"]),
        layer2=DenseParams(best_params["W2"], best_params["b2"]),
        train_config=config,
        final_validation_loss=float(best_val),
        epochs_run=epochs_run,
    )


def predict_fcann(model: FCANNModel, X: np.ndarray) -> np.ndarray:
    """Forward pass clipped to [0, 1]; dropout is never applied here."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != model.layer1.n_in:
        raise ValueError(f"X must be (n, {model.layer1.n_in}), got {X.shape}")
    a1 = dense_forward(model.layer1, X, "tanh")
    out = dense_forward(model.layer2, a1, "identity").reshape(-1)
    return np.clip(out, 0.0, 1.0)


@dataclass
class HorizonFCANNModels:
    spec: FeatureSpec
    models: dict[int, FCANNModel]

    @property
    def is_night(self) -> bool:
        return self.spec.is_night


@dataclass
class FCANNFamily:
    """The full 24 x 99 collection of networks."""

    grid: QuantileGrid
    horizons: list[HorizonFCANNModels]

    name: str = "FCANN"


def _fit_horizon(args):
    samples, spec, levels, config = args
    return spec.horizon_hour, {
        j: fit_fcann(samples, spec, tau, config) for j, tau in enumerate(levels)
    }


def fit_fcann_family(
    samples: SampleSet, specs, grid: QuantileGrid, config: TrainConfig, workers: int = 1
) -> FCANNFamily:
    """Train every (horizon, tau) network; night horizons carry none.

    ``workers`` > 1 distributes day horizons over processes; per-model seeds
    make the result identical to the sequential run.
    """
    specs = list(specs)
    if len(specs) != HOURS_PER_DAY:
        raise ValueError(f"need {HOURS_PER_DAY} feature specs, got {len(specs)}")
    for h, spec in enumerate(specs):
        if spec.horizon_hour != h:
            raise ValueError(f"spec at position {h} is for hour {spec.horizon_hour}")
    day_specs = [s for s in specs if not (s.is_night or not s.selected_indices)]

    fitted: dict[int, dict[int, FCANNModel]] = {}
    if workers > 1 and len(day_specs) > 1:
        from concurrent.futures import ProcessPoolExecutor

        jobs = [(samples, spec, grid.levels, config) for spec in day_specs]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for h, models in pool.map(_fit_horizon, jobs):
                fitted[h] = models
                logger.info("FCANN horizon %d fitted (%d quantiles)", h, len(models))
    else:
        for spec in day_specs:
            h, models = _fit_horizon((samples, spec, grid.levels, config))
            fitted[h] = models
            logger.info("FCANN horizon %d fitted (%d quantiles)", h, len(models))

    horizons = [
        HorizonFCANNModels(spec=spec, models=fitted.get(h, {}))
        for h, spec in enumerate(specs)
    ]
    return FCANNFamily(grid=grid, horizons=horizons)


def predict_fcann_family(family: FCANNFamily, samples: SampleSet) -> list[QuantileForecast]:
    """Quantile forecasts per day: night zero, clipped, crossing-repaired."""
    n = len(samples)
    n_tau = len(family.grid)
    estimates = np.zeros((n, HOURS_PER_DAY, n_tau))
    for h, horizon in enumerate(family.horizons):
        if horizon.is_night:
            continue
        X = apply_standardizer(
            horizon.spec.standardization,
            samples.X[:, list(horizon.spec.selected_indices)],
        )
        for j, model in horizon.models.items():
            estimates[:, h, j] = predict_fcann(model, X)
    estimates = np.sort(estimates, axis=2)
    return [
        QuantileForecast(
            day_index=samples.day_indices[i],
            timestamps=samples.target_timestamps[i],
            estimates=estimates[i],
        )
        for i in range(n)
    ]


def family_to_json(family: FCANNFamily, feature_names) -> str:
    horizons = []
    for horizon in family.horizons:
        models = []
        for j in sorted(horizon.models):
            m = horizon.models[j]
            models.append(
                {
                    "tau": m.tau,
                    "W1": m.layer1.W.tolist(),
                    "b1": m.layer1.b.tolist(),
                    "W2": m.layer2.W.tolist(),
                    "b2": m.layer2.b.tolist(),
                    "final_validation_loss": m.final_validation_loss,
                    "epochs_run": m.epochs_run,
                }
            )
        horizons.append(
            {"spec": json.loads(horizon.spec.to_json(feature_names)), "models": models}
        )
    return json.dumps({"levels": list(family.grid.levels), "horizons": horizons})


def family_from_json(text: str, feature_names, config: TrainConfig | None = None) -> FCANNFamily:
    record = json.loads(text)
    grid = QuantileGrid(levels=tuple(record["levels"]))
    if config is None:
        config = TrainConfig()
    horizons = []
    for entry in record["horizons"]:
        spec = FeatureSpec.from_json(json.dumps(entry["spec"]), feature_names)
        models = {}
        for j, rec in enumerate(entry["models"]):
            models[j] = FCANNModel(
                tau=float(rec["tau"]),
                horizon_hour=spec.horizon_hour,
                layer1=DenseParams(np.asarray(rec["W1"]), np.asarray(rec["b1"])),
                layer2=DenseParams(np.asarray(rec["W2"]), np.asarray(rec["b2"])),
                train_config=config,
                final_validation_loss=float(rec["final_validation_loss"]),
                epochs_run=int(rec.get("epochs_run", 0)),
            )
        horizons.append(HorizonFCANNModels(spec=spec, models=models))
    return FCANNFamily(grid=grid, horizons=horizons)
