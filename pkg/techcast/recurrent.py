"""Reverse-mode gradient core of the recurrent forecaster.

A single recurrent layer (vanilla tanh RNN or LSTM) reads the previous scaled
value at every step; two affine heads map its hidden state to the location and
(softplus) scale of a Gaussian over the current value. Everything runs in
float64 on batches laid out as rows.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.special import expit

SIGMA_FLOOR = 1e-6
HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)


class CellType(str, Enum):
    VANILLA = "VanillaRNN"
    LSTM = "LSTM"


PARAM_NAMES = ("W_x", "W_h", "b", "w_mu", "b_mu", "w_sigma", "b_sigma")


@dataclass
class NetWeights:
    """Cell type plus the named parameter arrays of the network."""

    cell: CellType
    params: Dict[str, np.ndarray]

    @property
    def hidden_size(self) -> int:
        return self.params["W_h"].shape[0]

    def copy(self) -> NetWeights:
        return NetWeights(self.cell, {k: v.copy() for k, v in self.params.items()})

    def is_finite(self) -> bool:
        return all(np.isfinite(v).all() for v in self.params.values())

    def n_params(self) -> int:
        return sum(v.size for v in self.params.values())


def gate_width(cell: CellType, hidden_size: int) -> int:
    return 4 * hidden_size if cell == CellType.LSTM else hidden_size


def init_weights(
    cell: CellType, hidden_size: int, rng: np.random.Generator
) -> NetWeights:
    """Uniform(-1/sqrt(H), 1/sqrt(H)) weights, zero biases, LSTM forget bias 1."""
    cell = CellType(cell)
    width = gate_width(cell, hidden_size)
    bound = 1.0 / np.sqrt(hidden_size)
    params = {
        "W_x": rng.uniform(-bound, bound, size=(1, width)),
        "W_h": rng.uniform(-bound, bound, size=(hidden_size, width)),
        "b": np.zeros(width),
        "w_mu": rng.uniform(-bound, bound, size=hidden_size),
        "b_mu": np.zeros(1),
        "w_sigma": rng.uniform(-bound, bound, size=hidden_size),
        "b_sigma": np.zeros(1),
    }
    if cell == CellType.LSTM:
        params["b"][hidden_size : 2 * hidden_size] = 1.0
    return NetWeights(cell, params)


def zero_weights(cell: CellType, hidden_size: int) -> NetWeights:
    cell = CellType(cell)
    width = gate_width(cell, hidden_size)
    return NetWeights(
        cell,
        {
            "W_x": np.zeros((1, width)),
            "W_h": np.zeros((hidden_size, width)),
            "b": np.zeros(width),
            "w_mu": np.zeros(hidden_size),
            "b_mu": np.zeros(1),
            "w_sigma": np.zeros(hidden_size),
            "b_sigma": np.zeros(1),
        },
    )


def softplus(a: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, a)


def cell_forward(
    weights: NetWeights,
    x: np.ndarray,
    h: np.ndarray,
    c: Optional[np.ndarray],
) -> Tuple[np.ndarray, Optional[np.ndarray], tuple]:
    """One recurrent update for a batch.

    Args:
        weights (NetWeights): Network weights.
        x (np.ndarray): Inputs of shape (B, 1).
        h (np.ndarray): Hidden states of shape (B, H).
        c (np.ndarray, optional): LSTM cell memory of shape (B, H).

    Returns:
        Tuple: (new hidden, new memory or None, cache for cell_backward).

    """
    p = weights.params
    z = x @ p["W_x"] + h @ p["W_h"] + p["b"]
    if weights.cell == CellType.VANILLA:
        h_new = np.tanh(z)
        return h_new, None, (x, h, h_new)

    size = h.shape[1]
    i = expit(z[:, :size])
    f = expit(z[:, size : 2 * size])
    o = expit(z[:, 2 * size : 3 * size])
    g = np.tanh(z[:, 3 * size :])
    c_new = f * c + i * g
    tanh_c = np.tanh(c_new)
    h_new = o * tanh_c
    return h_new, c_new, (x, h, c, i, f, o, g, tanh_c)


def cell_backward(
    weights: NetWeights,
    cache: tuple,
    dh: np.ndarray,
    dc: Optional[np.ndarray],
    grads: Dict[str, np.ndarray],
) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    """Backpropagates through one recurrent update, accumulating into grads.

    Returns:
        Tuple: (gradient w.r.t. the previous hidden state, w.r.t. previous memory).

    """
    p = weights.params
    if weights.cell == CellType.VANILLA:
        x, h_prev, h_new = cache
        dz = dh * (1.0 - h_new * h_new)
        dc_prev = None
    else:
        x, h_prev, c_prev, i, f, o, g, tanh_c = cache
        do = dh * tanh_c
        dc_total = dh * o * (1.0 - tanh_c * tanh_c)
        if dc is not None:
            dc_total = dc_total + dc
        di = dc_total * g
        dg = dc_total * i
        df = dc_total * c_prev
        dc_prev = dc_total * f
        dz = np.concatenate(
            [
                di * i * (1.0 - i),
                df * f * (1.0 - f),
                do * o * (1.0 - o),
                dg * (1.0 - g * g),
            ],
            axis=1,
        )
    grads["W_x"] += x.T @ dz
    grads["W_h"] += h_prev.T @ dz
    grads["b"] += dz.sum(axis=0)
    return dz @ p["W_h"].T, dc_prev


def heads(
    weights: NetWeights, h: np.ndarray
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Maps hidden states to (mu, pre-softplus scale, sigma)."""
    p = weights.params
    mu = h @ p["w_mu"] + p["b_mu"][0]
    a = h @ p["w_sigma"] + p["b_sigma"][0]
    return mu, a, softplus(a) + SIGMA_FLOOR


def gaussian_nll(mu: np.ndarray, sigma: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Elementwise negative log-likelihood of z under N(mu, sigma^2)."""
    resid = z - mu
    return HALF_LOG_2PI + np.log(sigma) + resid * resid / (2.0 * sigma * sigma)


def initial_state(
    weights: NetWeights, batch: int
) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    h = np.zeros((batch, weights.hidden_size))
    c = np.zeros_like(h) if weights.cell == CellType.LSTM else None
    return h, c


def shifted_inputs(z: np.ndarray) -> np.ndarray:
    """Inputs seen at each step: the previous value, zero at the first step."""
    x = np.zeros_like(z)
    x[:, 1:] = z[:, :-1]
    return x


def sequence_loss(weights: NetWeights, z: np.ndarray, context_len: int) -> float:
    """Mean NLL over the prediction range of a batch of scaled sequences (B, T)."""
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    inputs = shifted_inputs(z)
    h, c = initial_state(weights, z.shape[0])
    total = 0.0
    for t in range(z.shape[1]):
        h, c, _ = cell_forward(weights, inputs[:, t : t + 1], h, c)
        if t >= context_len:
            mu, _, sigma = heads(weights, h)
            total += gaussian_nll(mu, sigma, z[:, t]).sum()
    return float(total / (z.shape[0] * (z.shape[1] - context_len)))


def sequence_loss_and_grads(
    weights: NetWeights, z: np.ndarray, context_len: int
) -> Tuple[float, Dict[str, np.ndarray]]:
    """Loss of sequence_loss and its exact gradient by backpropagation through time.

    Inputs are teacher-forced throughout; only steps at or after context_len
    contribute to the loss, the conditioning range contributes state.

    """
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    batch, steps = z.shape
    n_terms = batch * (steps - context_len)
    inputs = shifted_inputs(z)

    h, c = initial_state(weights, batch)
    caches: List[tuple] = []
    hiddens: List[np.ndarray] = []
    outputs: Dict[int, Tuple[np.ndarray, np.ndarray, np.ndarray]] = {}
    total = 0.0
    for t in range(steps):
        h, c, cache = cell_forward(weights, inputs[:, t : t + 1], h, c)
        caches.append(cache)
        hiddens.append(h)
        if t >= context_len:
            mu, a, sigma = heads(weights, h)
            outputs[t] = (mu, a, sigma)
            total += gaussian_nll(mu, sigma, z[:, t]).sum()
    loss = float(total / n_terms)

    p = weights.params
    grads = {name: np.zeros_like(value) for name, value in p.items()}
    dh_next = np.zeros((batch, weights.hidden_size))
    dc_next = np.zeros_like(dh_next) if weights.cell == CellType.LSTM else None
    for t in range(steps - 1, -1, -1):
        dh = dh_next
        if t in outputs:
            mu, a, sigma = outputs[t]
            resid = z[:, t] - mu
            dmu = -resid / (sigma * sigma) / n_terms
            dsigma = (1.0 / sigma - resid * resid / sigma**3) / n_terms
            da = dsigma * expit(a)
            h_t = hiddens[t]
            grads["w_mu"] += h_t.T @ dmu
            grads["b_mu"] += dmu.sum()
            grads["w_sigma"] += h_t.T @ da
            grads["b_sigma"] += da.sum()
            dh = dh + np.outer(dmu, p["w_mu"]) + np.outer(da, p["w_sigma"])
        dh_next, dc_next = cell_backward(weights, caches[t], dh, dc_next, grads)
    return loss, grads


class Adam:
    """Adaptive-moment gradient descent over a dict of parameter arrays."""

    def __init__(
        self,
        params: Dict[str, np.ndarray],
        learning_rate: float = 0.001,
        betas: Tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
    ):
        self.learning_rate = learning_rate
        self.beta_1, self.beta_2 = betas
        self.eps = eps
        self.n_steps = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray]):
        """Updates params in place."""
        self.n_steps += 1
        correction_1 = 1.0 - self.beta_1**self.n_steps
        correction_2 = 1.0 - self.beta_2**self.n_steps
        for name in PARAM_NAMES:
            g = grads[name]
            self.m[name] = self.beta_1 * self.m[name] + (1.0 - self.beta_1) * g
            self.v[name] = self.beta_2 * self.v[name] + (1.0 - self.beta_2) * g * g
            m_hat = self.m[name] / correction_1
            v_hat = self.v[name] / correction_2
            params[name] -= self.learning_rate * m_hat / (np.sqrt(v_hat) + self.eps)
