"""Velocity network: conv image encoder + attention over per-timestep action tokens."""

from __future__ import annotations

import torch
from torch import nn

N_FREQ = 8
# 1 - t is floored here so the velocity gain stays bounded at t = 1
MIN_REMAINING = 1e-3


def time_features(t: torch.Tensor) -> torch.Tensor:
    """Sinusoidal features of t, plus log(1 - t) for the gain head. t: (B,) -> (B, 2*N_FREQ + 1)."""
    freqs = torch.pi * (2.0 ** torch.arange(N_FREQ, dtype=t.dtype, device=t.device))
    ang = t[:, None] * freqs[None]
    log_rem = torch.log(torch.clamp(1.0 - t, min=MIN_REMAINING))[:, None]
    return torch.cat([torch.sin(ang), torch.cos(ang), log_rem], dim=1)


class ObsEncoder(nn.Module):
    """RGB raster (B, 3, S, S) in [0, 1] -> (B, 64 tokens, width)."""

    def __init__(self, width: int = 64, grid: int = 8):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(3, 16, 3, stride=2, padding=1), nn.GELU(),
            nn.Conv2d(16, 32, 3, stride=2, padding=1), nn.GELU(),
            nn.Conv2d(32, width, 3, stride=2, padding=1), nn.GELU(),
            nn.AdaptiveAvgPool2d(grid),
        )
        self.pos = nn.Parameter(torch.zeros(grid * grid, width))
        nn.init.normal_(self.pos, std=0.02)

    def forward(self, obs):
        f = self.net(obs - 0.5)
        return f.flatten(2).transpose(1, 2) + self.pos


class Block(nn.Module):
    def __init__(self, width: int, heads: int):
        super().__init__()
        self.n1 = nn.LayerNorm(width)
        self.self_attn = nn.MultiheadAttention(width, heads, bias=False, batch_first=True)
        self.n2 = nn.LayerNorm(width)
        self.cross_attn = nn.MultiheadAttention(width, heads, bias=False, batch_first=True)
        self.n3 = nn.LayerNorm(width)
        self.mlp = nn.Sequential(nn.Linear(width, 2 * width), nn.GELU(), nn.Linear(2 * width, width))

    def forward(self, x, ctx):
        h = self.n1(x)
        x = x + self.self_attn(h, h, h, need_weights=False)[0]
        x = x + self.cross_attn(self.n2(x), ctx, ctx, need_weights=False)[0]
        return x + self.mlp(self.n3(x))


class VelocityModel(nn.Module):
    """pi(a_t, psi(obs), t) -> velocity with the shape of a_t.

    The token network estimates the clean chunk; the velocity is
    ``exp(g(t)) * (estimate - a_t)`` with a learned log-gain ``g`` that starts
    at ``-log(1 - t)``, the gain of the exact conditional field.
    """

    def __init__(self, action_dim: int = 20, horizon: int = 16, width: int = 64,
                 heads: int = 4, depth: int = 2, obs_size: int = 64):
        super().__init__()
        self.config = dict(action_dim=action_dim, horizon=horizon, width=width,
                           heads=heads, depth=depth, obs_size=obs_size)
        n_time = 2 * N_FREQ + 1
        self.encoder = ObsEncoder(width)
        self.embed = nn.Linear(action_dim + n_time, width)
        self.pos = nn.Parameter(torch.zeros(horizon, width))
        nn.init.normal_(self.pos, std=0.02)
        self.blocks = nn.ModuleList(Block(width, heads) for _ in range(depth))
        self.norm = nn.LayerNorm(width)
        self.head = nn.Linear(width, action_dim)
        self.gain = nn.Linear(n_time, 1)
        with torch.no_grad():
            self.gain.weight.zero_()
            self.gain.weight[0, -1] = -1.0
            self.gain.bias.zero_()

    def encode(self, obs):
        return self.encoder(obs)

    def velocity(self, a_t, ctx, t):
        tf = time_features(t)
        tok = torch.cat([a_t, tf[:, None].expand(-1, a_t.shape[1], -1)], dim=2)
        x = self.embed(tok) + self.pos
        for blk in self.blocks:
            x = blk(x, ctx)
        est = self.head(self.norm(x))
        return torch.exp(self.gain(tf))[:, :, None] * (est - a_t)

    def forward(self, a_t, obs, t):
        return self.velocity(a_t, self.encode(obs), t)


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def obs_to_tensor(obs, dtype=torch.float32) -> torch.Tensor:
    """uint8 (H, W, 3) or (B, H, W, 3) -> float (B, 3, H, W) in [0, 1]."""
    t = torch.as_tensor(obs)
    if t.ndim == 3:
        t = t[None]
    return t.permute(0, 3, 1, 2).to(dtype) / 255.0

