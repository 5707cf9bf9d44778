"""Scripted oracle, random baseline, learned-policy adapter, data collection and evaluation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..core import ActionFrame, decode_chunk, encode_chunk
from ..synth.video import derive_seed
from .env import EnvConfig, PlatformerEnv, random_actions
from .game import PLAYER_W, SUB, GameState, is_trapped, step_state

HORIZON = 16
RUN = ActionFrame.from_pressed((), (1.0, 0.0, 0.0, 0.0))
RUN_JUMP = ActionFrame.from_pressed(("a",), (1.0, 0.0, 0.0, 0.0))
# hold jump while the leading edge is this close to a gap or wall
JUMP_LEAD = (8 * SUB, 1 * SUB)


def oracle_action(state: GameState) -> ActionFrame:
    """Run right; hold A through each take-off window.

    Holding A in the air is harmless, and a held button makes the label
    tolerant to a tick of timing error.
    """
    front = state.x + PLAYER_W
    near = any(o - JUMP_LEAD[0] <= front <= o + JUMP_LEAD[1] for o in state.level.obstacles)
    return RUN_JUMP if near else RUN


def oracle_chunk(state: GameState, horizon: int = HORIZON) -> list:
    """The oracle's next ``horizon`` actions, found by simulating forward from ``state``."""
    out = []
    for _ in range(horizon):
        a = oracle_action(state)
        out.append(a)
        state, _ = step_state(state, a)
    return out


def oracle_policy(obs, state):
    return oracle_chunk(state)


class RandomPolicy:
    def __init__(self, seed: int):
        self.rng = np.random.default_rng(seed)

    def __call__(self, obs, state):
        return random_actions(HORIZON, self.rng)


class ModelPolicy:
    """Samples a chunk from a trained velocity model and decodes it."""

    def __init__(self, model, config, seed: int):
        from ..policy.train import sample_chunk
        self._sample = sample_chunk
        self.model = model
        self.config = config
        self.rng = np.random.default_rng(seed)

    def __call__(self, obs, state):
        chunk = self._sample(self.model, obs, self.config, self.rng)[0]
        return decode_chunk(chunk, self.config.action_dim)


# --- data collection -------------------------------------------------------------

def collect_dataset(n_pairs: int, config: EnvConfig = EnvConfig(), seed: int = 0, noise: float = 0.15):
    """(obs, oracle chunk) pairs from oracle rollouts with injected noise.

    With probability ``noise`` per step a random action replaces the oracle's,
    so the data covers states just off the oracle's path; labels are always
    the oracle's own chunk from the visited state. An episode stops being
    recorded once the player is trapped in a pit, where no label helps.
    """
    rng = np.random.default_rng(seed)
    env = PlatformerEnv(config)
    obs_list, chunks = [], []
    episode = 0
    while len(obs_list) < n_pairs:
        eps = noise * rng.random()
        obs, _ = env.reset(derive_seed(seed, episode) if config.mode == "procedural" else None)
        done = False
        while not done and not is_trapped(env.state) and len(obs_list) < n_pairs:
            obs_list.append(obs)
            chunks.append(encode_chunk(oracle_chunk(env.state)))
            if rng.random() < eps:
                action = random_actions(1, rng)[0]
            else:
                action = oracle_action(env.state)
            obs, _, done, _ = env.step(action)
        episode += 1
    return np.stack(obs_list).astype(np.uint8), np.stack(chunks).astype(np.float32)


# --- evaluation ----------------------------------------------------------------

@dataclass
class RolloutReport:
    success_rate: float
    episodes: int
    successes: int
    hashes: list = field(default_factory=list)  # one hash trajectory per episode
    lengths: list = field(default_factory=list)


def rollout_policy(policy, config: EnvConfig = EnvConfig(), n_episodes: int = 20, seed: int = 0) -> RolloutReport:
    """Run whole episodes, executing each returned chunk open-loop before re-observing."""
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    env = PlatformerEnv(config)
    successes = 0
    all_hashes, lengths = [], []
    for ep in range(n_episodes):
        obs, h = env.reset(derive_seed(seed, ep) if config.mode == "procedural" else None)
        hashes = [h]
        done = False
        while not done:
            for action in policy(obs, env.state):
                obs, _, done, h = env.step(action)
                hashes.append(h)
                if done:
                    break
        successes += int(env.state.reached)
        all_hashes.append(hashes)
        lengths.append(len(hashes) - 1)
    return RolloutReport(successes / n_episodes, n_episodes, successes, all_hashes, lengths)


def action_match_rate(policy, obs, states) -> float:
    """Fraction of states where the policy's first action equals the oracle's on the jump/run decision."""
    hits = 0
    for o, s in zip(obs, states):
        a = policy(o, s)[0]
        b = oracle_action(s)
        hits += int(a.buttons[4] == b.buttons[4] and (a.sticks[0] > 0.5) == (b.sticks[0] > 0.5))
    return hits / len(states)

