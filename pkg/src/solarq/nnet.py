"""Minimal neural-network infrastructure shared by the FCANN and LSTM
quantile models: dense layers, activations, inverted dropout, the pinball
training loss with its subgradient, Adam, seeded initialization, and a
finite-difference gradient checker."""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
PARAM_FORMAT_VERSION = 1


def tanh(z):
    return np.tanh(z)


def sigmoid(z):
    # Split by sign to avoid overflow in exp for large |z|.
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def identity(z):
    return np.asarray(z, dtype=float)


# Derivatives are expressed through the activation output, which every
# backward pass already has in hand.
_ACTIVATIONS = {
    "tanh": (tanh, lambda a: 1.0 - a * a),
    "sigmoid": (sigmoid, lambda a: a * (1.0 - a)),
    "identity": (identity, lambda a: np.ones_like(a)),
}


def activation_pair(name: str):
    try:
        return _ACTIVATIONS[name]
    except KeyError:
        raise ValueError(f"unknown activation {name!r}; expected one of "
                         f"{sorted(_ACTIVATIONS)}") from None


@dataclass
class DenseParams:
    """One fully connected layer: output = activation(W x + b)."""

    W: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=float)
        self.b = np.asarray(self.b, dtype=float)
        if self.W.ndim != 2 or self.b.ndim != 1:
            raise ValueError("W must be a matrix and b a vector")
        if self.W.shape[0] != self.b.shape[0]:
            raise ValueError(f"W rows {self.W.shape[0]} != b length {self.b.shape[0]}")
        if not (np.all(np.isfinite(self.W)) and np.all(np.isfinite(self.b))):
            raise ValueError("layer parameters must be finite")

    @property
    def n_out(self) -> int:
        return self.W.shape[0]

    @property
    def n_in(self) -> int:
        return self.W.shape[1]

    def copy(self) -> "DenseParams":
        return DenseParams(self.W.copy(), self.b.copy())


def dense_forward(p: DenseParams, x: np.ndarray, activation: str = "identity") -> np.ndarray:
    """activation(W x + b); ``x`` may be a vector or a batch matrix (n, in)."""
    act, _ = activation_pair(activation)
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != p.n_in:
        raise ValueError(f"input width {x.shape[-1]} != layer fan-in {p.n_in}")
    return act(x @ p.W.T + p.b)


def backprop_dense(
    p: DenseParams,
    x: np.ndarray,
    upstream: np.ndarray,
    activation: str = "identity",
    output: np.ndarray | None = None,
):
    """Gradients of the layer under an upstream gradient on its output.

    Returns ((dW, db), dx).  ``output`` is the cached forward value; it is
    recomputed when absent.
    """
    _, dact = activation_pair(activation)
    x = np.asarray(x, dtype=float)
    upstream = np.asarray(upstream, dtype=float)
    if output is None:
        output = dense_forward(p, x, activation)
    dz = upstream * dact(output)
    single = x.ndim == 1
    x2 = x.reshape(1, -1) if single else x
    dz2 = dz.reshape(1, -1) if single else dz
    dW = dz2.T @ x2
    db = dz2.sum(axis=0)
    dx = dz2 @ p.W
    return (dW, db), (dx[0] if single else dx)


def pinball_subgradient(y_hat, y, tau: float, smoothing_eta: float = 0.0):
    """Mean pinball loss and its (sub)gradient with respect to ``y_hat``.

    The gradient is of the returned mean, so entries carry a 1/n factor.
    At the kink the flat-side convention is used: residual 0 contributes
    gradient (1 - tau)/n.  A positive ``smoothing_eta`` replaces the kink by
    a quadratic blend on |residual| <= eta, which keeps the value exact away
    from the kink.
    """
    y_hat = np.asarray(y_hat, dtype=float)
    y = np.asarray(y, dtype=float)
    if y_hat.shape != y.shape:
        raise ValueError(f"shape mismatch: {y_hat.shape} vs {y.shape}")
    r = y - y_hat
    n = max(r.size, 1)
    c = np.where(r > 0.0, tau, 1.0 - tau)
    if smoothing_eta > 0.0:
        a = np.abs(r)
        quad = a <= smoothing_eta
        loss_el = np.where(quad, c * a * a / (2.0 * smoothing_eta),
                           c * (a - smoothing_eta / 2.0))
        grad_el = np.where(quad, -c * r / smoothing_eta, -c * np.sign(r))
    else:
        loss_el = c * np.abs(r)
        grad_el = np.where(r > 0.0, -tau, 1.0 - tau)
    return float(loss_el.mean()), grad_el / n


@dataclass
class TrainConfig:
    """Shared training schedule for the neural models."""

    learning_rate: float = 1e-3
    epochs: int = 200
    batch_size: int = 32
    dropout_rate: float = 0.2
    early_stop_patience: int = 20
    validation_fraction: float = 0.1
    seed: int = 0
    smoothing_eta: float = 0.0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if not 0.0 < self.validation_fraction < 0.5:
            raise ValueError("validation_fraction must lie in (0, 0.5)")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be at least 1")


@dataclass
class AdamState:
    """First/second moment accumulators, keyed like the parameter dict."""

    m: dict
    v: dict
    t: int = 0


def adam_init(params: dict) -> AdamState:
    return AdamState(
        m={k: np.zeros_like(v) for k, v in params.items()},
        v={k: np.zeros_like(v) for k, v in params.items()},
        t=0,
    )


def adam_step(params: dict, grads: dict, state: AdamState, learning_rate: float):
    """One bias-corrected Adam update; returns (new_params, new_state)."""
    t = state.t + 1
    new_params, new_m, new_v = {}, {}, {}
    for k, p in params.items():
        g = grads[k]
        m = ADAM_BETA1 * state.m[k] + (1.0 - ADAM_BETA1) * g
        v = ADAM_BETA2 * state.v[k] + (1.0 - ADAM_BETA2) * g * g
        m_hat = m / (1.0 - ADAM_BETA1**t)
        v_hat = v / (1.0 - ADAM_BETA2**t)
        new_params[k] = p - learning_rate * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
        new_m[k] = m
        new_v[k] = v
    return new_params, AdamState(m=new_m, v=new_v, t=t)


def model_rng(*key) -> np.random.Generator:
    """Deterministic per-model random stream from an integer key tuple."""
    return np.random.default_rng(np.random.SeedSequence(tuple(int(k) for k in key)))


def init_params(shape, scheme: str = "glorot-uniform", seed=0) -> np.ndarray:
    """Seeded weight initialization; biases are zero-initialized elsewhere."""
    if scheme != "glorot-uniform":
        raise ValueError(f"unknown initialization scheme {scheme!r}")
    shape = tuple(int(s) for s in shape)
    if len(shape) == 2:
        fan_out, fan_in = shape
    elif len(shape) == 1:
        fan_out, fan_in = shape[0], shape[0]
    else:
        raise ValueError("init_params supports vectors and matrices only")
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return rng.uniform(-limit, limit, size=shape)


def dropout_mask(rng: np.random.Generator, shape, rate: float) -> np.ndarray:
    """Inverted-dropout mask: kept units scaled by 1/(1-rate)."""
    if rate <= 0.0:
        return np.ones(shape)
    keep = rng.random(shape) >= rate
    return keep / (1.0 - rate)


def clip_gradient_norm(grads: dict, max_norm: float) -> dict:
    """Scale the whole gradient dict so its global L2 norm is <= max_norm."""
    if max_norm <= 0:
        return grads
    total = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total <= max_norm or total == 0.0:
        return grads
    factor = max_norm / total
    return {k: g * factor for k, g in grads.items()}


def grad_check(
    predict,
    analytic_grads: dict,
    params: dict,
    x,
    y,
    tau: float,
    h: float = 1e-5,
) -> float:
    """Max relative error between analytic gradients and central differences.

    ``predict(params, x)`` must return predictions for arbitrary parameter
    dicts.  Parameter entries whose +-h perturbation moves any residual
    across the pinball kink are skipped, since the two-sided difference is
    invalid there.  Near-zero gradient pairs are compared absolutely.
    """
    if h <= 0:
        raise ValueError("step size h must be positive")
    y = np.asarray(y, dtype=float)

    def loss_and_signs(p):
        y_hat = predict(p, x)
        r = y - y_hat
        loss, _ = pinball_subgradient(y_hat, y, tau)
        return loss, np.sign(r)

    max_err = 0.0
    for key, base in params.items():
        grad = np.asarray(analytic_grads[key], dtype=float)
        flat = base.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + h
            lp, sp = loss_and_signs(params)
            flat[idx] = orig - h
            lm, sm = loss_and_signs(params)
            flat[idx] = orig
            if np.any(sp != sm):
                continue
            numeric = (lp - lm) / (2.0 * h)
            analytic = grad.reshape(-1)[idx]
            scale = max(abs(numeric), abs(analytic))
            err = abs(numeric - analytic) if scale < 1e-8 else abs(numeric - analytic) / scale
            max_err = max(max_err, err)
    return max_err


def params_to_json(params: dict, meta: dict | None = None) -> str:
    record = {
        "version": PARAM_FORMAT_VERSION,
        "arrays": {
            k: {"shape": list(v.shape), "data": np.asarray(v, dtype=float).reshape(-1).tolist()}
            for k, v in params.items()
        },
    }
    if meta:
        record["meta"] = meta
    return json.dumps(record)


def params_from_json(text: str) -> tuple[dict, dict]:
    record = json.loads(text)
    if record.get("version") != PARAM_FORMAT_VERSION:
        raise ValueError(f"unsupported parameter format version {record.get('version')}")
    params = {
        k: np.asarray(entry["data"], dtype=float).reshape(entry["shape"])
        for k, entry in record["arrays"].items()
    }
    return params, record.get("meta", {})
