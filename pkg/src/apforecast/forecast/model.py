"""Stacked-LSTM regression network implemented directly on numpy arrays.

Each layer owns three tensors: input weights ``W`` (4H x D), recurrent
weights ``U`` (4H x H) and bias ``b`` (4H), with gate blocks packed in the
row order input / forget / candidate / output. A single affine head maps the
last layer's final hidden state to the ``horizon`` outputs. Forward and
backward passes share the same cache layout so the analytic gradients can be
checked against finite differences parameter by parameter.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from ..seeding import rng_for

TIER_ARCHITECTURE: dict[str, tuple[int, int]] = {
    "GM": (3, 50),
    "Lk": (3, 50),
    "Lkv2": (5, 200),
}


class SpecError(ValueError):
    """Invalid model specification."""


@dataclass(frozen=True)
class ModelSpec:
    tier: str
    lstm_layers: int
    hidden_size: int
    lookback: int
    horizon: int
    input_channels: int = 1

    def __post_init__(self) -> None:
        if self.lstm_layers < 1 or self.hidden_size < 1:
            raise SpecError("lstm_layers and hidden_size must be >= 1")
        if self.lookback < 1 or self.horizon < 1:
            raise SpecError("lookback and horizon must be >= 1")
        if self.input_channels < 1:
            raise SpecError("input_channels must be >= 1")
        expected = TIER_ARCHITECTURE.get(self.tier)
        if expected is not None and (self.lstm_layers, self.hidden_size) != expected:
            raise SpecError(
                f"tier {self.tier} requires {expected[0]} layers x {expected[1]} hidden, "
                f"got {self.lstm_layers} x {self.hidden_size}"
            )

    @classmethod
    def for_tier(cls, tier: str, lookback: int, horizon: int, input_channels: int = 1) -> "ModelSpec":
        if tier not in TIER_ARCHITECTURE:
            raise SpecError(f"unknown tier {tier!r}; expected one of {sorted(TIER_ARCHITECTURE)}")
        layers, hidden = TIER_ARCHITECTURE[tier]
        return cls(
            tier=tier,
            lstm_layers=layers,
            hidden_size=hidden,
            lookback=lookback,
            horizon=horizon,
            input_channels=input_channels,
        )

    def layer_input_size(self, layer: int) -> int:
        return self.input_channels if layer == 0 else self.hidden_size

    @property
    def param_count(self) -> int:
        h = self.hidden_size
        total = 0
        for layer in range(self.lstm_layers):
            d = self.layer_input_size(layer)
            total += 4 * (h * (d + h) + h)
        total += h * self.horizon + self.horizon
        return total

    def to_dict(self) -> dict:
        return {
            "tier": self.tier,
            "lstm_layers": self.lstm_layers,
            "hidden_size": self.hidden_size,
            "lookback": self.lookback,
            "horizon": self.horizon,
            "input_channels": self.input_channels,
        }


@dataclass
class ForecastModel:
    spec: ModelSpec
    params: dict[str, np.ndarray]
    seed: int
    trained_on: str | int = "all"

    @property
    def param_count(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def copy(self) -> "ForecastModel":
        return ForecastModel(
            spec=self.spec,
            params={k: v.copy() for k, v in self.params.items()},
            seed=self.seed,
            trained_on=self.trained_on,
        )

    def with_params(self, params: Mapping[str, np.ndarray]) -> "ForecastModel":
        return ForecastModel(
            spec=self.spec,
            params={k: np.array(v, dtype=float) for k, v in params.items()},
            seed=self.seed,
            trained_on=self.trained_on,
        )

    def retagged(self, trained_on: str | int) -> "ForecastModel":
        model = self.copy()
        model.trained_on = trained_on
        return model


def param_names(spec: ModelSpec) -> list[str]:
    names: list[str] = []
    for layer in range(spec.lstm_layers):
        names.extend([f"W{layer}", f"U{layer}", f"b{layer}"])
    names.extend(["W_out", "b_out"])
    return names


def init_model(spec: ModelSpec, seed: int) -> ForecastModel:
    """Uniform(-s, s) weights with s = 1/sqrt(hidden); forget-gate bias 1."""
    rng = rng_for(seed, "init", spec.tier, spec.lstm_layers, spec.hidden_size)
    h = spec.hidden_size
    scale = 1.0 / np.sqrt(h)
    params: dict[str, np.ndarray] = {}
    for layer in range(spec.lstm_layers):
        d = spec.layer_input_size(layer)
        params[f"W{layer}"] = rng.uniform(-scale, scale, size=(4 * h, d))
        params[f"U{layer}"] = rng.uniform(-scale, scale, size=(4 * h, h))
        bias = np.zeros(4 * h)
        bias[h : 2 * h] = 1.0
        params[f"b{layer}"] = bias
    params["W_out"] = rng.uniform(-scale, scale, size=(spec.horizon, h))
    params["b_out"] = np.zeros(spec.horizon)
    model = ForecastModel(spec=spec, params=params, seed=seed)
    assert model.param_count == spec.param_count
    return model


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _forward_cached(spec: ModelSpec, params: Mapping[str, np.ndarray], X: np.ndarray):
    """Run the stack over a batch, keeping every activation for BPTT.

    ``X`` has shape (m, P, C); returns (outputs (m, horizon), caches).
    """
    m, P, _ = X.shape
    h = spec.hidden_size
    caches = []
    layer_input = X
    for layer in range(spec.lstm_layers):
        W = params[f"W{layer}"]
        U = params[f"U{layer}"]
        b = params[f"b{layer}"]
        gates_i = np.zeros((m, P, h))
        gates_f = np.zeros((m, P, h))
        gates_g = np.zeros((m, P, h))
        gates_o = np.zeros((m, P, h))
        cells = np.zeros((m, P, h))
        tanh_cells = np.zeros((m, P, h))
        hidden = np.zeros((m, P, h))
        h_prev = np.zeros((m, h))
        c_prev = np.zeros((m, h))
        for t in range(P):
            z = layer_input[:, t, :] @ W.T + h_prev @ U.T + b
            i = _sigmoid(z[:, :h])
            f = _sigmoid(z[:, h : 2 * h])
            g = np.tanh(z[:, 2 * h : 3 * h])
            o = _sigmoid(z[:, 3 * h :])
            c = f * c_prev + i * g
            tc = np.tanh(c)
            ht = o * tc
            gates_i[:, t] = i
            gates_f[:, t] = f
            gates_g[:, t] = g
            gates_o[:, t] = o
            cells[:, t] = c
            tanh_cells[:, t] = tc
            hidden[:, t] = ht
            h_prev = ht
            c_prev = c
        caches.append(
            {
                "x": layer_input,
                "i": gates_i,
                "f": gates_f,
                "g": gates_g,
                "o": gates_o,
                "c": cells,
                "tc": tanh_cells,
                "h": hidden,
            }
        )
        layer_input = hidden
    outputs = layer_input[:, -1, :] @ params["W_out"].T + params["b_out"]
    return outputs, caches


def forward_batch(model: ForecastModel, X: np.ndarray) -> np.ndarray:
    """Predict ``horizon`` values for a batch of input windows."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 2:
        X = X[:, :, None]
    if X.shape[1] != model.spec.lookback or X.shape[2] != model.spec.input_channels:
        raise SpecError(
            f"expected input windows of shape (*, {model.spec.lookback}, {model.spec.input_channels}), "
            f"got {X.shape}"
        )
    if not np.all(np.isfinite(X)):
        raise ValueError("forecast input must be finite")
    outputs, _ = _forward_cached(model.spec, model.params, X)
    return outputs


def forward(model: ForecastModel, x: np.ndarray) -> np.ndarray:
    """Predict from a single input window of ``lookback`` steps."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    return forward_batch(model, x[None, :, :])[0]


def _backward(
    spec: ModelSpec,
    params: Mapping[str, np.ndarray],
    caches: list[dict],
    d_outputs: np.ndarray,
) -> dict[str, np.ndarray]:
    """Backpropagation through time for the whole stack."""
    h = spec.hidden_size
    top = caches[-1]["h"]
    m, P, _ = top.shape

    grads: dict[str, np.ndarray] = {
        "W_out": d_outputs.T @ top[:, -1, :],
        "b_out": d_outputs.sum(axis=0),
    }

    dh_seq = np.zeros((m, P, h))
    dh_seq[:, -1, :] = d_outputs @ params["W_out"]

    for layer in range(spec.lstm_layers - 1, -1, -1):
        cache = caches[layer]
        W = params[f"W{layer}"]
        U = params[f"U{layer}"]
        x = cache["x"]
        dW = np.zeros_like(W)
        dU = np.zeros_like(U)
        db = np.zeros(4 * h)
        dx_seq = np.zeros_like(x)
        dh_carry = np.zeros((m, h))
        dc_carry = np.zeros((m, h))
        for t in range(P - 1, -1, -1):
            i = cache["i"][:, t]
            f = cache["f"][:, t]
            g = cache["g"][:, t]
            o = cache["o"][:, t]
            tc = cache["tc"][:, t]
            c_prev = cache["c"][:, t - 1] if t > 0 else np.zeros((m, h))
            h_prev = cache["h"][:, t - 1] if t > 0 else np.zeros((m, h))

            dh = dh_seq[:, t] + dh_carry
            do = dh * tc
            dc = dh * o * (1.0 - tc * tc) + dc_carry
            di = dc * g
            dg = dc * i
            df = dc * c_prev
            dc_carry = dc * f

            dz = np.concatenate(
                [
                    di * i * (1.0 - i),
                    df * f * (1.0 - f),
                    dg * (1.0 - g * g),
                    do * o * (1.0 - o),
                ],
                axis=1,
            )
            dW += dz.T @ x[:, t, :]
            dU += dz.T @ h_prev
            db += dz.sum(axis=0)
            dh_carry = dz @ U
            dx_seq[:, t, :] = dz @ W

        grads[f"W{layer}"] = dW
        grads[f"U{layer}"] = dU
        grads[f"b{layer}"] = db
        if layer > 0:
            dh_seq = dx_seq
    return grads


def loss_and_gradients(
    model: ForecastModel, inputs: np.ndarray, targets: np.ndarray
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean-squared-error loss over a batch plus gradients for every tensor."""
    X = np.asarray(inputs, dtype=float)
    if X.ndim == 2:
        X = X[:, :, None]
    T = np.asarray(targets, dtype=float)
    if T.ndim == 1:
        T = T[:, None]
    outputs, caches = _forward_cached(model.spec, model.params, X)
    diff = outputs - T
    loss = float(np.mean(diff * diff))
    d_outputs = 2.0 * diff / diff.size
    grads = _backward(model.spec, model.params, caches, d_outputs)
    return loss, grads


def model_storage(model: ForecastModel) -> int:
    """Nominal single-precision storage footprint: 4 bytes per parameter."""
    return 4 * model.param_count


def save_model(model: ForecastModel, path: str) -> None:
    """Self-describing JSON: spec, seed, and row-major tensors.

    Tensor keys are ``W{l}``/``U{l}``/``b{l}`` per layer plus ``W_out``/
    ``b_out``; gate blocks are packed along rows in the order input, forget,
    candidate, output.
    """
    payload = {
        "spec": model.spec.to_dict(),
        "seed": model.seed,
        "trained_on": model.trained_on,
        "params": {k: v.tolist() for k, v in sorted(model.params.items())},
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True)
        fh.write("\n")


def load_model(path: str) -> ForecastModel:
    with open(path) as fh:
        payload = json.load(fh)
    spec = ModelSpec(**payload["spec"])
    params = {k: np.asarray(v, dtype=float) for k, v in payload["params"].items()}
    return ForecastModel(
        spec=spec, params=params, seed=int(payload["seed"]), trained_on=payload["trained_on"]
    )
