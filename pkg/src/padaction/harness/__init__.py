"""Frame-stepping toy environment and replay-determinism tooling."""

from .env import (
    EnvConfig, PauseSchedule, PlatformerEnv, Trajectory, VirtualClock, WallClock, first_divergence,
    random_actions, read_trajectory, record_rollout, replay_with_pauses, write_trajectory,
)
