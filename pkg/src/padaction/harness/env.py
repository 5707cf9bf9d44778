"""Frame-stepping environment on a virtual clock, rollouts, and pause/replay checks."""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..core import ActionFrame, N_AXES, N_BUTTONS
from ..errors import ConfigError, DimensionError, ProtocolError, TrackFormatError
from .game import FIXED_LEVEL, GameState, initial_state, procedural_level, render, state_hash, step_state


class VirtualClock:
    """Simulated time that moves only when the harness says so.

    Time is kept as an integer tick count, so ``now`` never accumulates
    rounding error however long the run.
    """

    def __init__(self, step_dt: float = 1.0 / 60.0):
        if step_dt <= 0:
            raise ConfigError("step_dt must be > 0")
        self.step_dt = step_dt
        self.ticks = 0

    @property
    def now(self) -> float:
        return self.ticks * self.step_dt

    def advance(self, n: int = 1) -> None:
        if n < 0:
            raise ValueError("the clock never runs backwards")
        self.ticks += n


class WallClock:
    """Real time source, for contrast: a game reading this drifts under pauses."""

    def __init__(self, step_dt: float = 1.0 / 60.0):
        self.step_dt = step_dt
        self._t0 = time.monotonic()

    @property
    def now(self) -> float:
        return time.monotonic() - self._t0

    def advance(self, n: int = 1) -> None:
        pass


@dataclass
class EnvConfig:
    resolution: int = 64
    mode: str = "fixed"  # "fixed" or "procedural"
    level_seed: int = 0
    tick_limit: int = 300
    step_dt: float = 1.0 / 60.0

    def validate(self):
        if self.mode not in ("fixed", "procedural"):
            raise ConfigError(f"unknown env mode {self.mode!r}")
        if self.resolution < 16 or self.resolution % 16:
            raise ConfigError("resolution must be a positive multiple of 16")
        if self.tick_limit < 1 or self.step_dt <= 0:
            raise ConfigError("tick_limit must be >= 1 and step_dt > 0")
        return self

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> "EnvConfig":
        return cls(**d).validate()

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "EnvConfig":
        return cls.from_json(json.loads(Path(path).read_text()))


class PlatformerEnv:
    """Synchronous protocol: nothing moves between ``step`` calls.

    With ``clock=WallClock`` the number of physics ticks per step follows real
    elapsed time instead, which is how an engine bound to the system clock behaves.
    """

    def __init__(self, config: EnvConfig = EnvConfig(), clock=None):
        self.config = config.validate()
        self.clock = clock or VirtualClock(config.step_dt)
        self.state: GameState | None = None
        self.done = True
        self._last = 0.0

    def level_for(self, seed):
        if self.config.mode == "fixed":
            return FIXED_LEVEL
        return procedural_level(self.config.level_seed if seed is None else seed)

    def reset(self, seed=None):
        self.state = initial_state(self.level_for(seed))
        self.done = False
        self._last = self.clock.now
        return self.observe(), state_hash(self.state)

    def observe(self) -> np.ndarray:
        return render(self.state, self.config.resolution)

    def _ticks_due(self) -> int:
        if isinstance(self.clock, VirtualClock):
            self.clock.advance(1)
            return 1
        now = self.clock.now
        n = int((now - self._last) / self.config.step_dt)
        self._last += n * self.config.step_dt
        return max(n, 1)

    def step(self, action: ActionFrame):
        """Returns (observation, reward, done, state hash)."""
        if self.done:
            raise ProtocolError("step() on a finished episode; call reset() first")
        reward = 0.0
        for _ in range(self._ticks_due()):
            self.state, r = step_state(self.state, action)
            reward += r
        self.done = self.state.reached or self.state.tick >= self.config.tick_limit
        return self.observe(), reward, self.done, state_hash(self.state)

    def pause(self, seconds: float) -> None:
        """Hold the game for ``seconds`` of wall time; the virtual clock stays put."""
        time.sleep(seconds)


# --- rollouts and replay -------------------------------------------------------

@dataclass
class Trajectory:
    seed: int
    ticks: list = field(default_factory=list)
    actions: list = field(default_factory=list)
    hashes: list = field(default_factory=list)
    observations: list = field(default_factory=list)
    successes: int = 0
    episodes: int = 0

    def __len__(self):
        return len(self.hashes)


def _run(env, actions_or_policy, n_steps, seed, keep_obs, schedule=None):
    obs, _ = env.reset(seed)
    traj = Trajectory(seed)
    pauses = dict(schedule.items) if schedule is not None else {}
    pending = []
    for i in range(n_steps):
        if i in pauses:
            env.pause(pauses[i] / 1000.0)
        if callable(actions_or_policy):
            if not pending:
                pending = list(actions_or_policy(obs, env.state))
            action = pending.pop(0)
        else:
            action = actions_or_policy[i]
        tick = env.state.tick
        obs, reward, done, h = env.step(action)
        traj.ticks.append(tick)
        traj.actions.append(action)
        traj.hashes.append(h)
        if keep_obs:
            traj.observations.append(obs)
        if done:
            traj.episodes += 1
            traj.successes += int(env.state.reached)
            obs, _ = env.reset(seed)
            pending = []
    return traj


def record_rollout(actions_or_policy, n_steps: int, seed: int = 0, config: EnvConfig = EnvConfig(),
                   keep_obs: bool = False, clock=None) -> Trajectory:
    """Run ``n_steps`` steps, resetting after each finished episode.

    ``actions_or_policy`` is a list of ActionFrames or a callable
    ``(obs, state) -> list of ActionFrames`` executed open-loop.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    if not callable(actions_or_policy) and len(actions_or_policy) < n_steps:
        raise DimensionError(f"{len(actions_or_policy)} actions for {n_steps} steps")
    return _run(PlatformerEnv(config, clock), actions_or_policy, n_steps, seed, keep_obs)


@dataclass(frozen=True)
class PauseSchedule:
    items: tuple  # ((frame index, pause ms), ...)

    def validate(self, n_steps: int):
        prev = -1
        for idx, ms in self.items:
            if idx <= prev:
                raise ConfigError("pause frame indices must be strictly increasing")
            if not 0 <= idx < n_steps:
                raise ConfigError(f"pause at frame {idx} outside [0, {n_steps})")
            if ms < 0:
                raise ConfigError("pause durations must be >= 0")
            prev = idx
        return self

    @classmethod
    def random(cls, n_steps: int, n_pauses: int, rng: np.random.Generator, ms=(1.0, 50.0)):
        idx = np.sort(rng.choice(n_steps, size=n_pauses, replace=False))
        dur = rng.uniform(ms[0], ms[1], size=n_pauses)
        return cls(tuple((int(i), float(d)) for i, d in zip(idx, dur)))


def replay_with_pauses(actions, seed: int, schedule: PauseSchedule, config: EnvConfig = EnvConfig(),
                       clock=None) -> Trajectory:
    schedule.validate(len(actions))
    return _run(PlatformerEnv(config, clock), actions, len(actions), seed, False, schedule)


def first_divergence(a, b):
    """Smallest index where two hash trajectories differ, or None."""
    a = a.hashes if isinstance(a, Trajectory) else a
    b = b.hashes if isinstance(b, Trajectory) else b
    if len(a) != len(b):
        raise DimensionError(f"trajectory lengths differ: {len(a)} vs {len(b)}")
    for i, (x, y) in enumerate(zip(a, b)):
        if x != y:
            return i
    return None


def random_actions(n: int, rng: np.random.Generator) -> list:
    """Uniform random gamepad input: each button a fair coin, each axis uniform on [-1, 1]."""
    buttons = rng.random((n, N_BUTTONS)) < 0.5
    sticks = rng.uniform(-1.0, 1.0, size=(n, N_AXES))
    return [ActionFrame(tuple(b), tuple(s)) for b, s in zip(buttons, sticks)]


# --- trajectory files ------------------------------------------------------------

TRAJ_MAGIC = "PADTRAJ"


def write_trajectory(traj: Trajectory, path, config: EnvConfig) -> None:
    head = f"{TRAJ_MAGIC} v1 seed={traj.seed} steps={len(traj)} config={json.dumps(config.to_json(), sort_keys=True, separators=(',', ':'))}"
    lines = [head]
    for tick, act, h in zip(traj.ticks, traj.actions, traj.hashes):
        bits = "".join("1" if b else "0" for b in act.buttons)
        lines.append(" ".join([str(tick), bits, *(repr(float(s)) for s in act.sticks), h]))
    Path(path).write_text("\n".join(lines) + "\n")


def read_trajectory(path):
    """Returns (Trajectory, EnvConfig)."""
    lines = Path(path).read_text().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines or not lines[0].startswith(TRAJ_MAGIC + " v1 "):
        raise TrackFormatError("missing PADTRAJ header", 1)
    opts = dict(tok.split("=", 1) for tok in lines[0].split(" ")[2:])
    try:
        traj = Trajectory(int(opts["seed"]))
        config = EnvConfig.from_json(json.loads(opts["config"]))
    except (KeyError, ValueError) as e:
        raise TrackFormatError(f"bad header: {e}", 1) from None
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split(" ")
        if len(parts) != 3 + N_AXES or len(parts[1]) != N_BUTTONS:
            raise TrackFormatError(f"expected tick, buttons, {N_AXES} axes and a hash", lineno)
        try:
            traj.ticks.append(int(parts[0]))
            traj.actions.append(ActionFrame(tuple(c == "1" for c in parts[1]), tuple(float(p) for p in parts[2:6])))
        except ValueError as e:
            raise TrackFormatError(str(e), lineno) from None
        traj.hashes.append(parts[6])
    if len(traj) != int(opts.get("steps", len(traj))):
        raise TrackFormatError("step count does not match header", len(lines))
    return traj, config

