"""Conditional flow-matching objective, Euler sampler, EMA and learning-rate schedule."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from ..errors import ConfigError, DimensionError, NumericError


@dataclass
class AugmentConfig:
    brightness: float = 0.2
    contrast: float = 0.2
    saturation: float = 0.2
    hue: float = 0.02  # fraction of a full turn
    max_rotation: float = 5.0  # degrees
    crop_fraction: float = 0.9

    @classmethod
    def identity(cls):
        return cls(0.0, 0.0, 0.0, 0.0, 0.0, 1.0)

    def validate(self):
        for name in ("brightness", "contrast", "saturation", "hue", "max_rotation"):
            if getattr(self, name) < 0:
                raise ConfigError(f"augmentation {name} must be >= 0")
        if self.max_rotation > 5.0:
            raise ConfigError("rotation range is limited to +-5 degrees")
        if not 0.0 < self.crop_fraction <= 1.0:
            raise ConfigError("crop_fraction must lie in (0, 1]")
        return self


@dataclass
class TrainConfig:
    lr_peak: float = 1e-4
    weight_decay: float = 1e-3
    ema_decay: float = 0.9999
    warmup_steps: int = 100
    stable_steps: int = 1000
    decay_steps: int = 100
    k_inference: int = 16
    horizon: int = 16
    action_dim: int = 20
    beta_alpha: float = 1.5
    beta_beta: float = 1.0
    beta_shift: float = 0.999
    betas: tuple = (0.9, 0.95)
    batch_size: int = 32
    grad_clip: float = 1.0
    augment: bool = False
    augmentation: AugmentConfig = field(default_factory=AugmentConfig)
    width: int = 64
    depth: int = 2
    heads: int = 4
    obs_size: int = 64

    @property
    def total_steps(self) -> int:
        return self.warmup_steps + self.stable_steps + self.decay_steps

    def validate(self):
        if not (self.lr_peak > 0 and self.weight_decay >= 0 and 0 < self.ema_decay < 1):
            raise ConfigError("lr_peak > 0, weight_decay >= 0 and ema_decay in (0, 1) required")
        if min(self.warmup_steps, self.stable_steps, self.decay_steps) < 0 or self.total_steps < 1:
            raise ConfigError("schedule phases must be >= 0 and sum to >= 1")
        if min(self.k_inference, self.horizon, self.action_dim, self.batch_size) < 1:
            raise ConfigError("k_inference, horizon, action_dim and batch_size must be >= 1")
        if not (self.beta_alpha > 0 and self.beta_beta > 0 and 0 <= self.beta_shift <= 1):
            raise ConfigError("beta parameters must be positive and shift in [0, 1]")
        self.augmentation.validate()
        return self

    def to_json(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d

    @classmethod
    def from_json(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "augmentation" in d:
            d["augmentation"] = AugmentConfig(**d["augmentation"])
        if "betas" in d:
            d["betas"] = tuple(d["betas"])
        return cls(**d)


def sample_timestep(rng: np.random.Generator, size=None, alpha=1.5, beta=1.0, shift=0.999):
    """t = 1 - shift * u with u ~ Beta(alpha, beta); mass concentrates at small t."""
    return 1.0 - shift * rng.beta(alpha, beta, size=size)


def make_noisy(a, eps, t):
    """(1 - t) * eps + t * a; ``t`` is a scalar or one value per leading batch entry."""
    if tuple(a.shape) != tuple(eps.shape):
        raise DimensionError(f"shape mismatch: {tuple(a.shape)} vs {tuple(eps.shape)}")
    if isinstance(t, (np.ndarray, torch.Tensor)) and t.ndim == 1:
        t = t.reshape((-1,) + (1,) * (a.ndim - 1))
    return (1 - t) * eps + t * a


def cfm_loss(model, a, obs, t, eps, obs_index=None):
    """Element-mean squared error between the model velocity and a - eps.

    With ``obs_index``, row i of the batch uses observation ``obs[obs_index[i]]``.
    """
    if a.shape[0] == 0:
        raise DimensionError("empty batch")
    a_t = make_noisy(a, eps, t)
    if obs_index is None:
        v = model(a_t, obs, t)
    else:
        v = model.velocity(a_t, model.encode(obs)[obs_index], t)
    if not torch.isfinite(v).all():
        raise NumericError("model produced non-finite velocities")
    return ((v - (a - eps)) ** 2).mean()


def euler_sample(model, obs, k: int, rng: np.random.Generator, horizon=16, action_dim=20,
                 dtype=torch.float32):
    """Integrate the velocity field from a ~ N(0, I) with k uniform steps at t = i/k.

    ``obs`` is a float tensor (B, 3, S, S); returns (B, horizon, action_dim).
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    batch = obs.shape[0]
    a = torch.as_tensor(rng.standard_normal((batch, horizon, action_dim)), dtype=dtype)
    with torch.no_grad():
        ctx = model.encode(obs) if hasattr(model, "encode") else obs
        step = getattr(model, "velocity", None)
        for i in range(k):
            t = torch.full((batch,), i / k, dtype=dtype)
            v = step(a, ctx, t) if step is not None else model(a, obs, t)
            a = a + v / k
            if not torch.isfinite(a).all():
                raise NumericError(f"non-finite sample at Euler step {i}")
    return a


def ema_update(ema_params, params, decay: float):
    """In place: ema <- decay * ema + (1 - decay) * params. Returns ``ema_params``."""
    ema_params = list(ema_params)
    params = list(params)
    if len(ema_params) != len(params):
        raise DimensionError(f"parameter arity mismatch: {len(ema_params)} vs {len(params)}")
    with torch.no_grad():
        for e, p in zip(ema_params, params):
            if e.shape != p.shape:
                raise DimensionError(f"parameter shape mismatch: {tuple(e.shape)} vs {tuple(p.shape)}")
            e.mul_(decay).add_(p, alpha=1.0 - decay)
    return ema_params


def ema_decay_at(step: int, decay: float) -> float:
    """Warm-started decay so early EMA weights are not dominated by the random init."""
    return min(decay, (1.0 + step) / (10.0 + step))


def wsd_lr(step: int, config: TrainConfig) -> float:
    """Linear warmup to lr_peak, constant plateau, linear decay to zero, zero after."""
    if step < 0:
        raise ValueError("step must be >= 0")
    w, s, d, peak = config.warmup_steps, config.stable_steps, config.decay_steps, config.lr_peak
    if step < w:
        return peak * step / w
    if step <= w + s:
        return peak
    if step < w + s + d:
        return peak * (w + s + d - step) / d
    return 0.0


def flat_params(model) -> torch.Tensor:
    return torch.nn.utils.parameters_to_vector(model.parameters()).detach().clone()


def grad_check(model, loss_fn, h: float = 1e-4, n_coords: int = 200, seed: int = 0) -> float:
    """Max relative error of autograd against central differences on random coordinates.

    ``loss_fn(model)`` must be deterministic (fix t and eps outside). Run the
    model in float64 for a meaningful comparison.
    """
    if h <= 0:
        raise ValueError("h must be > 0")
    params = [p for p in model.parameters() if p.requires_grad]
    if not params:
        raise ValueError("model has no trainable parameters")
    model.zero_grad()
    loss_fn(model).backward()
    analytic = torch.cat([p.grad.reshape(-1) for p in params]).detach().clone()
    vec = torch.nn.utils.parameters_to_vector(params).detach().clone()
    rng = np.random.default_rng(seed)
    idx = rng.choice(vec.numel(), size=min(n_coords, vec.numel()), replace=False)
    worst = 0.0
    with torch.no_grad():
        for i in idx:
            for sign in (1, -1):
                probe = vec.clone()
                probe[i] += sign * h
                torch.nn.utils.vector_to_parameters(probe, params)
                if sign == 1:
                    up = float(loss_fn(model))
                else:
                    down = float(loss_fn(model))
            numeric = (up - down) / (2 * h)
            err = abs(float(analytic[i]) - numeric) / max(abs(numeric), 1e-8)
            worst = max(worst, err)
        torch.nn.utils.vector_to_parameters(vec, params)
    return worst
