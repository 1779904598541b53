"""Minimal fully-connected network substrate with exact gradients.

Supports exactly what the adversarial pair needs: dense layers, leaky-ReLU
/ tanh / sigmoid activations, inverted dropout, batch normalization (with
either dense->bn->act or dense->act->bn ordering), binary cross-entropy,
and bias-corrected Adam.  Forward passes return a cache from which
``backward`` produces exact reverse-mode gradients for every trainable
parameter, including batchnorm scale and shift, plus the gradient with
respect to the input batch (needed to train a generator through a frozen
discriminator).

Conventions:

* dropout is inverted (surviving units scaled by 1/(1-p) at train time),
  so eval-mode forward needs no rescaling and consumes no randomness;
* batchnorm running stats update as running = momentum*running +
  (1-momentum)*batch, with biased batch variance;
* predictions are clamped to [1e-7, 1-1e-7] before the BCE log terms.

Parameters are updated in place; each Adam step bumps a version counter so
a cache taken before an update is rejected as stale.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

PRED_CLAMP = 1e-7

PARAMS_FORMAT_VERSION = 1


@dataclass(frozen=True)
class LayerConfig:
    in_width: int
    out_width: int
    activation: str = "none"  # none | leaky_relu | tanh | sigmoid
    batchnorm: bool = False
    bn_after_activation: bool = False
    dropout: float = 0.0
    leaky_alpha: float = 0.2
    bn_momentum: float = 0.8
    bn_epsilon: float = 0.001

    def __post_init__(self) -> None:
        if self.activation not in ("none", "leaky_relu", "tanh", "sigmoid"):
            raise ValueError(f"unknown activation {self.activation!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0,1)")
        if not 0.0 < self.bn_momentum < 1.0:
            raise ValueError("bn_momentum must be in (0,1)")


@dataclass
class LayerParams:
    weight: np.ndarray
    bias: np.ndarray
    gamma: np.ndarray | None = None
    beta: np.ndarray | None = None
    running_mean: np.ndarray | None = None
    running_var: np.ndarray | None = None


@dataclass
class MlpParameters:
    configs: tuple[LayerConfig, ...]
    layers: list[LayerParams]
    version: int = 0

    def copy(self) -> "MlpParameters":
        layers = [
            LayerParams(
                weight=lp.weight.copy(),
                bias=lp.bias.copy(),
                gamma=None if lp.gamma is None else lp.gamma.copy(),
                beta=None if lp.beta is None else lp.beta.copy(),
                running_mean=None if lp.running_mean is None else lp.running_mean.copy(),
                running_var=None if lp.running_var is None else lp.running_var.copy(),
            )
            for lp in self.layers
        ]
        return MlpParameters(configs=self.configs, layers=layers, version=self.version)


@dataclass
class LayerGrads:
    weight: np.ndarray
    bias: np.ndarray
    gamma: np.ndarray | None = None
    beta: np.ndarray | None = None


def init_params(configs: tuple[LayerConfig, ...], rng: np.random.Generator) -> MlpParameters:
    """Glorot-uniform weights, zero biases, identity batchnorm state."""
    layers = []
    for cfg in configs:
        limit = np.sqrt(6.0 / (cfg.in_width + cfg.out_width))
        lp = LayerParams(
            weight=rng.uniform(-limit, limit, size=(cfg.in_width, cfg.out_width)),
            bias=np.zeros(cfg.out_width),
        )
        if cfg.batchnorm:
            lp.gamma = np.ones(cfg.out_width)
            lp.beta = np.zeros(cfg.out_width)
            lp.running_mean = np.zeros(cfg.out_width)
            lp.running_var = np.ones(cfg.out_width)
        layers.append(lp)
    return MlpParameters(configs=tuple(configs), layers=layers)


def param_arrays(params: MlpParameters) -> list[tuple[str, np.ndarray]]:
    """Named trainable tensors, in a fixed deterministic order."""
    out = []
    for i, lp in enumerate(params.layers):
        out.append((f"L{i}.weight", lp.weight))
        out.append((f"L{i}.bias", lp.bias))
        if lp.gamma is not None:
            out.append((f"L{i}.gamma", lp.gamma))
            out.append((f"L{i}.beta", lp.beta))
    return out


def grad_arrays(grads: list[LayerGrads]) -> list[tuple[str, np.ndarray]]:
    out = []
    for i, lg in enumerate(grads):
        out.append((f"L{i}.weight", lg.weight))
        out.append((f"L{i}.bias", lg.bias))
        if lg.gamma is not None:
            out.append((f"L{i}.gamma", lg.gamma))
            out.append((f"L{i}.beta", lg.beta))
    return out


def _activate(name: str, x: np.ndarray, alpha: float) -> np.ndarray:
    if name == "none":
        return x
    if name == "leaky_relu":
        return np.where(x > 0.0, x, alpha * x)
    if name == "tanh":
        return np.tanh(x)
    return 1.0 / (1.0 + np.exp(-x))  # sigmoid


def _activate_backward(name: str, grad: np.ndarray, x_in: np.ndarray, out: np.ndarray, alpha: float) -> np.ndarray:
    if name == "none":
        return grad
    if name == "leaky_relu":
        return grad * np.where(x_in > 0.0, 1.0, alpha)
    if name == "tanh":
        return grad * (1.0 - out * out)
    return grad * out * (1.0 - out)  # sigmoid


def _bn_forward(lp: LayerParams, cfg: LayerConfig, x: np.ndarray, train: bool) -> tuple[np.ndarray, dict]:
    eps = cfg.bn_epsilon
    if train:
        mu = x.mean(axis=0)
        var = x.var(axis=0)
        std = np.sqrt(var + eps)
        xhat = (x - mu) / std
        m = cfg.bn_momentum
        lp.running_mean *= m
        lp.running_mean += (1.0 - m) * mu
        lp.running_var *= m
        lp.running_var += (1.0 - m) * var
    else:
        std = np.sqrt(lp.running_var + eps)
        xhat = (x - lp.running_mean) / std
    out = lp.gamma * xhat + lp.beta
    return out, {"xhat": xhat, "std": std, "train": train}


def _bn_backward(lp: LayerParams, bn_cache: dict, grad: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    xhat, std = bn_cache["xhat"], bn_cache["std"]
    dgamma = (grad * xhat).sum(axis=0)
    dbeta = grad.sum(axis=0)
    dxhat = grad * lp.gamma
    if bn_cache["train"]:
        dx = (dxhat - dxhat.mean(axis=0) - xhat * (dxhat * xhat).mean(axis=0)) / std
    else:
        dx = dxhat / std
    return dx, dgamma, dbeta


def forward(
    params: MlpParameters,
    x: np.ndarray,
    mode: str = "train",
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, dict]:
    """Run the network, returning (output batch, cache for backward).

    Train mode draws dropout masks from ``rng`` and updates batchnorm
    running statistics; eval mode is deterministic and consumes no
    randomness.  A width mismatch raises a ValueError naming the layer.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    train = mode == "train"
    h = np.asarray(x, dtype=float)
    layer_caches: list[dict] = []
    for i, (cfg, lp) in enumerate(zip(params.configs, params.layers)):
        if h.shape[1] != cfg.in_width:
            raise ValueError(f"layer {i}: expected input width {cfg.in_width}, got {h.shape[1]}")
        cache: dict = {"x_in": h}
        h = h @ lp.weight + lp.bias
        if cfg.batchnorm and not cfg.bn_after_activation:
            cache["bn_in"] = h
            h, cache["bn"] = _bn_forward(lp, cfg, h, train)
        cache["act_in"] = h
        h = _activate(cfg.activation, h, cfg.leaky_alpha)
        cache["act_out"] = h
        if cfg.batchnorm and cfg.bn_after_activation:
            cache["bn_in"] = h
            h, cache["bn"] = _bn_forward(lp, cfg, h, train)
        if cfg.dropout > 0.0 and train:
            if rng is None:
                raise ValueError(f"layer {i}: dropout in train mode requires an rng")
            mask = rng.random(h.shape) >= cfg.dropout
            h = h * mask / (1.0 - cfg.dropout)
            cache["drop_mask"] = mask
        layer_caches.append(cache)
    return h, {"layers": layer_caches, "version": params.version, "train": train}


def backward(
    params: MlpParameters,
    cache: dict,
    grad_out: np.ndarray,
) -> tuple[list[LayerGrads], np.ndarray]:
    """Exact gradients for every trainable tensor plus the input gradient.

    The cache must come from a forward pass over the current parameter
    values; after an optimizer step it is rejected as stale.
    """
    if cache["version"] != params.version:
        raise ValueError("stale cache: parameters were updated after the forward pass")
    grads: list[LayerGrads] = [None] * len(params.layers)  # type: ignore[list-item]
    g = np.asarray(grad_out, dtype=float)
    for i in range(len(params.layers) - 1, -1, -1):
        cfg, lp, lc = params.configs[i], params.layers[i], cache["layers"][i]
        lg = LayerGrads(weight=np.empty(0), bias=np.empty(0))
        if "drop_mask" in lc:
            g = g * lc["drop_mask"] / (1.0 - cfg.dropout)
        if cfg.batchnorm and cfg.bn_after_activation:
            g, lg.gamma, lg.beta = _bn_backward(lp, lc["bn"], g)
        g = _activate_backward(cfg.activation, g, lc["act_in"], lc["act_out"], cfg.leaky_alpha)
        if cfg.batchnorm and not cfg.bn_after_activation:
            g, lg.gamma, lg.beta = _bn_backward(lp, lc["bn"], g)
        lg.weight = lc["x_in"].T @ g
        lg.bias = g.sum(axis=0)
        g = g @ lp.weight.T
        grads[i] = lg
    return grads, g


def bce_loss(predictions: np.ndarray, targets: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean binary cross-entropy and its gradient w.r.t. the predictions.

    Predictions are clamped to [1e-7, 1-1e-7]; targets are 0/1.
    """
    p = np.clip(predictions, PRED_CLAMP, 1.0 - PRED_CLAMP)
    t = np.asarray(targets, dtype=float)
    loss = float(-(t * np.log(p) + (1.0 - t) * np.log(1.0 - p)).mean())
    grad = (p - t) / (p * (1.0 - p)) / p.size
    return loss, grad


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError("betas must be in [0,1)")


@dataclass
class AdamState:
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def zeros_like(cls, params: MlpParameters) -> "AdamState":
        tensors = [arr for _, arr in param_arrays(params)]
        return cls(m=[np.zeros_like(a) for a in tensors], v=[np.zeros_like(a) for a in tensors])


def adam_step(
    params: MlpParameters,
    grads: list[LayerGrads],
    state: AdamState,
    t: int,
    cfg: OptimizerConfig = OptimizerConfig(),
) -> MlpParameters:
    """Bias-corrected Adam update, applied in place (t starts at 1)."""
    if t < 1:
        raise ValueError("step index t must be >= 1")
    tensors = [arr for _, arr in param_arrays(params)]
    gradients = [arr for _, arr in grad_arrays(grads)]
    if len(tensors) != len(gradients):
        raise ValueError("gradient structure does not match parameters")
    b1, b2 = cfg.beta1, cfg.beta2
    bias1 = 1.0 - b1**t
    bias2 = 1.0 - b2**t
    for p, g, m, v in zip(tensors, gradients, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= cfg.learning_rate * (m / bias1) / (np.sqrt(v / bias2) + cfg.epsilon)
    params.version += 1
    return params


def save_params(params: MlpParameters, path) -> None:
    """Versioned parameter record: layer configs plus row-major tensors."""
    arrays: dict[str, np.ndarray] = {
        "format_version": np.array([PARAMS_FORMAT_VERSION]),
        "configs_json": np.frombuffer(
            json.dumps([cfg.__dict__ for cfg in params.configs]).encode(), dtype=np.uint8
        ),
    }
    for i, lp in enumerate(params.layers):
        arrays[f"w{i}"] = lp.weight
        arrays[f"b{i}"] = lp.bias
        if lp.gamma is not None:
            arrays[f"gamma{i}"] = lp.gamma
            arrays[f"beta{i}"] = lp.beta
            arrays[f"rmean{i}"] = lp.running_mean
            arrays[f"rvar{i}"] = lp.running_var
    np.savez(path, **arrays)


def load_params(path) -> MlpParameters:
    with np.load(path) as data:
        version = int(data["format_version"][0])
        if version != PARAMS_FORMAT_VERSION:
            raise ValueError(f"unsupported parameter format version {version}")
        configs = tuple(
            LayerConfig(**raw) for raw in json.loads(bytes(data["configs_json"]).decode())
        )
        layers = []
        for i, cfg in enumerate(configs):
            lp = LayerParams(weight=data[f"w{i}"], bias=data[f"b{i}"])
            if cfg.batchnorm:
                lp.gamma = data[f"gamma{i}"]
                lp.beta = data[f"beta{i}"]
                lp.running_mean = data[f"rmean{i}"]
                lp.running_var = data[f"rvar{i}"]
            layers.append(lp)
    return MlpParameters(configs=configs, layers=layers)
