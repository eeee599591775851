"""Parameter-update rules: AdaFisher / AdaFisherW plus SGD, Adam and AdamW
baselines, learning-rate schedules and the ablation switches.

AdaFisher keeps a single bias-corrected first moment; there is no second
moment and (by default) no square root on the curvature divisor: the factored
curvature supplies its own smoothing through the factor EMA.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError
from .kfactor import FactoredEFIM
from .nn import Model


@dataclass
class AblationToggles:
    """Behavior switches; all off reproduces the default update rule."""

    sqrt_divisor: bool = False
    ema_off: bool = False
    norm_fisher_off: bool = False

    @classmethod
    def from_config(cls, cfg: dict | None) -> "AblationToggles":
        cfg = dict(cfg or {})
        known = {"sqrt_divisor", "ema_off", "norm_fisher_off"}
        unknown = set(cfg) - known
        if unknown:
            raise ConfigError(f"unknown ablation keys: {sorted(unknown)}")
        return cls(**{k: bool(v) for k, v in cfg.items()})


def ablation_toggles(config: dict | None) -> AblationToggles:
    return AblationToggles.from_config(config)


class Schedule:
    """Learning-rate multiplier as a function of the epoch index."""

    def __init__(self, kind: str = "constant", step_size: int = 10, factor: float = 0.1,
                 total_epochs: int = 1):
        if kind not in ("constant", "step", "cosine"):
            raise ConfigError(f"unknown schedule {kind!r}")
        self.kind = kind
        self.step_size = step_size
        self.factor = factor
        self.total_epochs = max(1, total_epochs)

    def scale(self, epoch: int) -> float:
        if self.kind == "constant":
            return 1.0
        if self.kind == "step":
            return self.factor ** (epoch // self.step_size)
        return 0.5 * (1.0 + np.cos(np.pi * epoch / self.total_epochs))


class Optimizer:
    needs_efim = False

    def __init__(self, alpha: float = 0.001):
        if alpha <= 0:
            raise ConfigError("learning rate must be positive")
        self.alpha = alpha
        self.lr_scale = 1.0
        self.t = 0

    def step(self, model: Model, efim: FactoredEFIM | None = None) -> None:
        raise NotImplementedError

    @property
    def lr(self) -> float:
        return self.alpha * self.lr_scale


def _combined_grad(layer) -> np.ndarray:
    """Flattened (out, in[+1]) gradient of a dense/conv layer."""
    g = layer.grads["W"].reshape(layer.grads["W"].shape[0], -1)
    if "b" in layer.grads:
        g = np.hstack([g, layer.grads["b"][:, None]])
    return g


def _apply_combined(layer, delta: np.ndarray) -> None:
    w = layer.params["W"]
    if "b" in layer.params:
        w -= delta[:, :-1].reshape(w.shape)
        layer.params["b"] -= delta[:, -1]
    else:
        w -= delta.reshape(w.shape)


class AdaFisher(Optimizer):
    """Preconditioned first-moment descent (decoupled decay when kappa > 0
    and decoupled=True, i.e. the AdaFisherW variant)."""

    needs_efim = True

    def __init__(self, alpha: float = 0.001, beta: float = 0.9, kappa: float = 0.0,
                 decoupled: bool = False, sqrt_divisor: bool = False):
        super().__init__(alpha)
        if not 0.0 <= beta < 1.0:
            raise ConfigError("beta must lie in [0, 1)")
        if kappa < 0:
            raise ConfigError("weight decay kappa must be non-negative")
        self.beta = beta
        self.kappa = kappa
        self.decoupled = decoupled
        self.sqrt_divisor = sqrt_divisor
        self.m: dict[tuple[int, str], np.ndarray] = {}

    def step(self, model: Model, efim: FactoredEFIM | None = None) -> None:
        if efim is None:
            raise ConfigError("AdaFisher requires an assembled curvature")
        self.t += 1
        correction = 1.0 - self.beta**self.t
        lr = self.lr
        for i, layer in model.param_layers():
            divisors = efim.divisors(i, sqrt=self.sqrt_divisor)
            if layer.kf_kind == "kron":
                blocks = {"WB": _combined_grad(layer)}
            else:
                blocks = {"scale": layer.grads["scale"], "shift": layer.grads["shift"]}
            for name, g in blocks.items():
                key = (i, name)
                if key not in self.m:
                    self.m[key] = np.zeros_like(g)
                if g.shape != divisors[name].shape:
                    raise DimensionError(
                        f"layer {i} block {name}: gradient {g.shape} vs divisor "
                        f"{divisors[name].shape}")
                self.m[key] = self.beta * self.m[key] + (1.0 - self.beta) * g
                m_hat = self.m[key] / correction  # bias correction applied on read
                delta = m_hat / divisors[name]
                if name == "WB":
                    if self.decoupled and self.kappa:
                        theta = layer.params["W"].reshape(g.shape[0], -1)
                        if "b" in layer.params:
                            theta = np.hstack([theta, layer.params["b"][:, None]])
                        delta = delta + self.kappa * theta
                    _apply_combined(layer, lr * delta)
                else:
                    if self.decoupled and self.kappa:
                        delta = delta + self.kappa * layer.params[name]
                    layer.params[name] -= lr * delta


def adafisherw(alpha: float = 0.001, beta: float = 0.9, kappa: float = 0.0,
               sqrt_divisor: bool = False) -> AdaFisher:
    return AdaFisher(alpha=alpha, beta=beta, kappa=kappa, decoupled=True,
                     sqrt_divisor=sqrt_divisor)


class Adam(Optimizer):
    def __init__(self, alpha: float = 0.001, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, weight_decay: float = 0.0, decoupled: bool = False):
        super().__init__(alpha)
        if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0):
            raise ConfigError("betas must lie in [0, 1)")
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.weight_decay = weight_decay
        self.decoupled = decoupled
        self.m: dict[tuple[int, str], np.ndarray] = {}
        self.v: dict[tuple[int, str], np.ndarray] = {}

    def step(self, model: Model, efim=None) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        lr = self.lr
        for i, name, p in model.parameters():
            g = model.layers[i].grads[name]
            if self.weight_decay and not self.decoupled:
                g = g + self.weight_decay * p
            key = (i, name)
            if key not in self.m:
                self.m[key] = np.zeros_like(p)
                self.v[key] = np.zeros_like(p)
            self.m[key] = self.beta1 * self.m[key] + (1.0 - self.beta1) * g
            self.v[key] = self.beta2 * self.v[key] + (1.0 - self.beta2) * g * g
            update = (self.m[key] / c1) / (np.sqrt(self.v[key] / c2) + self.eps)
            if self.weight_decay and self.decoupled:
                update = update + self.weight_decay * p
            p -= lr * update


def adamw(alpha: float = 0.001, beta1: float = 0.9, beta2: float = 0.999,
          eps: float = 1e-8, weight_decay: float = 0.0) -> Adam:
    return Adam(alpha, beta1, beta2, eps, weight_decay, decoupled=True)


class SGD(Optimizer):
    """Heavy-ball momentum: buf <- mu*buf + g; theta <- theta - alpha*buf."""

    def __init__(self, alpha: float = 0.001, momentum: float = 0.0):
        super().__init__(alpha)
        if not 0.0 <= momentum < 1.0:
            raise ConfigError("momentum must lie in [0, 1)")
        self.momentum = momentum
        self.buf: dict[tuple[int, str], np.ndarray] = {}

    def step(self, model: Model, efim=None) -> None:
        self.t += 1
        lr = self.lr
        for i, name, p in model.parameters():
            g = model.layers[i].grads[name]
            key = (i, name)
            if self.momentum:
                if key not in self.buf:
                    self.buf[key] = np.zeros_like(p)
                self.buf[key] = self.momentum * self.buf[key] + g
                g = self.buf[key]
            p -= lr * g


def build_optimizer(name: str, hyper: dict | None = None) -> Optimizer:
    hyper = dict(hyper or {})
    name = name.lower()
    try:
        if name == "adafisher":
            return AdaFisher(**hyper)
        if name == "adafisherw":
            return adafisherw(**hyper)
        if name == "adam":
            return Adam(**hyper)
        if name == "adamw":
            return adamw(**hyper)
        if name == "sgd":
            return SGD(**hyper)
    except TypeError as exc:
        raise ConfigError(f"bad hyperparameters for {name}: {exc}") from exc
    raise ConfigError(f"unknown optimizer {name!r}")
