"""Behaviour-cloning training loop and checkpoint files."""

from __future__ import annotations

import contextlib
import copy
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from ..errors import ConfigError, DimensionError, NumericError
from .augment import augment
from .flow import TrainConfig, cfm_loss, ema_decay_at, ema_update, euler_sample, sample_timestep, wsd_lr
from .model import VelocityModel, obs_to_tensor

CHECKPOINT_MAGIC = b"PADCKPT1"


@contextlib.contextmanager
def single_thread():
    prev = torch.get_num_threads()
    torch.set_num_threads(1)
    try:
        yield
    finally:
        torch.set_num_threads(prev)


def build_model(config: TrainConfig, seed: int) -> VelocityModel:
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return VelocityModel(config.action_dim, config.horizon, config.width, config.heads,
                             config.depth, config.obs_size)


@dataclass
class TrainResult:
    model: VelocityModel
    ema: VelocityModel
    config: TrainConfig
    step: int
    log: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)


def _check_dataset(obs, chunks, config):
    if len(obs) == 0 or len(obs) != len(chunks):
        raise DimensionError(f"need equal, non-zero numbers of observations and chunks ({len(obs)} vs {len(chunks)})")
    if chunks.shape[1:] != (config.horizon, config.action_dim):
        raise DimensionError(f"chunks have shape {chunks.shape[1:]}, config wants ({config.horizon}, {config.action_dim})")
    if obs.shape[1:] != (config.obs_size, config.obs_size, 3):
        raise DimensionError(f"observations have shape {obs.shape[1:]}, config wants {config.obs_size}x{config.obs_size}x3")


def train_bc(obs, chunks, config: TrainConfig, seed: int = 0, log_path=None, log_every: int = 1) -> TrainResult:
    """Fit the velocity model to (observation, action chunk) pairs.

    ``obs``: uint8 (N, S, S, 3). ``chunks``: (N, H, D) encoded actions.
    All randomness comes from ``seed``; results are bit-identical across runs.
    """
    config.validate()
    obs = np.asarray(obs, dtype=np.uint8)
    chunks = np.asarray(chunks, dtype=np.float32)
    _check_dataset(obs, chunks, config)
    rng = np.random.default_rng(seed)
    model = build_model(config, seed)
    ema = copy.deepcopy(model)
    for p in ema.parameters():
        p.requires_grad_(False)
    opt = torch.optim.AdamW(model.parameters(), lr=config.lr_peak, betas=config.betas,
                            weight_decay=config.weight_decay)
    obs_all = None if config.augment else obs_to_tensor(obs)
    chunks_all = torch.from_numpy(chunks)
    log = []
    last_finite = None
    fh = open(log_path, "w") if log_path is not None else None
    try:
        with single_thread():
            for step in range(config.total_steps):
                idx = rng.integers(0, len(obs), size=config.batch_size)
                if config.augment:
                    batch_obs = obs_to_tensor(np.stack([augment(obs[i], rng, config.augmentation) for i in idx]))
                    encode = None
                else:
                    # encode each distinct observation once; identical maths, less work
                    uniq, inv = np.unique(idx, return_inverse=True)
                    batch_obs = obs_all[uniq]
                    encode = torch.from_numpy(inv)
                a = chunks_all[idx]
                t = torch.from_numpy(sample_timestep(rng, config.batch_size, config.beta_alpha,
                                                     config.beta_beta, config.beta_shift).astype(np.float32))
                eps = torch.from_numpy(rng.standard_normal(a.shape).astype(np.float32))
                lr = wsd_lr(step, config)
                for g in opt.param_groups:
                    g["lr"] = lr
                try:
                    loss = cfm_loss(model, a, batch_obs, t, eps, encode)
                except NumericError as e:
                    raise NumericError(f"non-finite model output at step {step}", step, last_finite) from e
                value = float(loss.detach())
                if not math.isfinite(value):
                    raise NumericError(f"loss became {value} at step {step}; last finite loss {last_finite}",
                                       step, last_finite)
                last_finite = value
                opt.zero_grad(set_to_none=True)
                loss.backward()
                if config.grad_clip:
                    torch.nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip)
                opt.step()
                ema_update(ema.parameters(), model.parameters(), ema_decay_at(step, config.ema_decay))
                if step % log_every == 0 or step == config.total_steps - 1:
                    rec = {"step": step, "loss": value, "lr": lr}
                    log.append(rec)
                    if fh is not None:
                        fh.write(json.dumps(rec) + "\n")
    finally:
        if fh is not None:
            fh.close()
    # eval mode everywhere after training, matching loaded checkpoints kernel for kernel
    return TrainResult(model.eval(), ema.eval(), config, config.total_steps, log)


def eval_loss(model, obs, chunks, config: TrainConfig, n: int = 1024, seed: int = 1) -> float:
    """CFM loss on a fixed draw of (sample, t, eps); deterministic for a given seed."""
    rng = np.random.default_rng(seed)
    obs = np.asarray(obs, dtype=np.uint8)
    chunks = np.asarray(chunks, dtype=np.float32)
    idx = rng.integers(0, len(obs), size=n)
    t = torch.from_numpy(sample_timestep(rng, n, config.beta_alpha, config.beta_beta, config.beta_shift).astype(np.float32))
    a = torch.from_numpy(chunks[idx])
    eps = torch.from_numpy(rng.standard_normal(a.shape).astype(np.float32))
    with torch.no_grad(), single_thread():
        return float(cfm_loss(model, a, obs_to_tensor(obs[idx]), t, eps))


def sample_chunk(model, obs, config: TrainConfig, rng: np.random.Generator) -> np.ndarray:
    """Denoise one chunk per observation. obs: uint8 (S, S, 3) or (B, S, S, 3)."""
    batch = obs_to_tensor(np.asarray(obs, dtype=np.uint8))
    with single_thread():
        out = euler_sample(model, batch, config.k_inference, rng, config.horizon, config.action_dim)
    return out.numpy()


# --- checkpoints -------------------------------------------------------------

def _flat(model) -> np.ndarray:
    return torch.nn.utils.parameters_to_vector(model.parameters()).detach().numpy().astype("<f4")


def save_checkpoint(path, result: TrainResult, extra: dict | None = None) -> None:
    """Magic, header length, JSON header, then raw little-endian float32 params and EMA."""
    params, ema = _flat(result.model), _flat(result.ema)
    header = {
        "version": 1,
        "config": result.config.to_json(),
        "model": result.model.config,
        "step": result.step,
        "n_params": int(params.size),
        "extra": extra or {},
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC + struct.pack("<Q", len(blob)) + blob)
        f.write(params.tobytes())
        f.write(ema.tobytes())


def load_checkpoint(path) -> TrainResult:
    data = Path(path).read_bytes()
    if data[:8] != CHECKPOINT_MAGIC:
        raise ConfigError(f"{path}: not a checkpoint file")
    (n,) = struct.unpack("<Q", data[8:16])
    header = json.loads(data[16:16 + n])
    config = TrainConfig.from_json(header["config"])
    m = header["model"]
    model = VelocityModel(**m)
    ema = VelocityModel(**m)
    count = header["n_params"]
    if count != sum(p.numel() for p in model.parameters()):
        raise DimensionError(f"{path}: checkpoint holds {count} parameters, model needs a different count")
    body = np.frombuffer(data[16 + n:], dtype="<f4")
    if body.size != 2 * count:
        raise DimensionError(f"{path}: truncated parameter block")
    torch.nn.utils.vector_to_parameters(torch.from_numpy(body[:count].copy()), model.parameters())
    torch.nn.utils.vector_to_parameters(torch.from_numpy(body[count:].copy()), ema.parameters())
    # as in training; the attention kernel choice depends on this flag
    for p in ema.parameters():
        p.requires_grad_(False)
    return TrainResult(model.eval(), ema.eval(), config, header["step"], extra=header.get("extra", {}))
