"""Deterministic toy platformer: fixed-point physics, pure step, canonical state hash.

World is 64 x 64 pixels, y up. Positions and velocities are integers in
1/16 pixel units, so a step is exact integer arithmetic on any machine.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np

from ..core import ActionFrame, button_index

SUB = 16  # sub-pixel units per pixel
WORLD = 64
PLAYER_W, PLAYER_H = 3 * SUB, 4 * SUB
RUN_SPEED = SUB  # per tick at full stick
GRAVITY = 2
JUMP_SPEED = 30  # apex 30^2 / (2*2) = 225 sub-units, about 14 px
MAX_FALL = 48
DEADZONE = 0.1
JUMP_BUTTON = button_index("a")
GROUND_TOP = 20  # px; pits drop to the world floor, deeper than a jump, so a pit is a trap


@dataclass(frozen=True)
class Level:
    solids: tuple  # ((x0, y0, x1, y1), ...) in sub-units, half-open
    goal: tuple  # (x0, y0, x1, y1) in sub-units
    coins: tuple  # ((x, y), ...) centres in sub-units
    start: tuple  # (x, y) of the player's bottom-left corner
    obstacles: tuple  # x (sub-units) of each gap or wall the player must jump

    def digest(self) -> str:
        return hashlib.sha256(_pack_level(self)).hexdigest()


@dataclass(frozen=True)
class GameState:
    level: Level
    x: int
    y: int
    vx: int
    vy: int
    on_ground: bool
    coins: tuple  # collected flags
    reached: bool
    tick: int


def _px(*v):
    return tuple(int(round(c * SUB)) for c in v)


def build_level(pit_x: int = 24, pit_w: int = 10, wall_x: int = 44, wall_h: int = 10, coins=None) -> Level:
    """Ground with one pit and one wall block; goal at the right edge.

    Geometry arguments are pixels; ``coins`` are sub-unit centres.
    """
    g = GROUND_TOP
    solids = (
        _px(0, 0, pit_x, g),
        _px(pit_x + pit_w, 0, WORLD, g),
        _px(wall_x, g, wall_x + 4, g + wall_h),
    )
    goal = _px(58, g, WORLD, g + 24)
    if coins is None:
        coins = (_px(pit_x + pit_w / 2, g + 10), _px(wall_x + 2, g + wall_h + 6))
    return Level(solids, goal, coins, _px(3, g), (pit_x * SUB, wall_x * SUB))


FIXED_LEVEL = build_level()


def procedural_level(seed: int) -> Level:
    rng = np.random.default_rng(seed)
    pit_x = int(rng.integers(14, 28))
    pit_w = int(rng.integers(6, 12))
    wall_x = int(rng.integers(pit_x + pit_w + 8, 50))
    wall_h = int(rng.integers(5, 11))
    # sub-pixel coin spots widen the layout space to about 2^44, so distinct seeds
    # practically never share a geometry hash
    g = GROUND_TOP * SUB
    coins = (
        (int(rng.integers(pit_x * SUB, (pit_x + pit_w) * SUB)), int(rng.integers(g + 4 * SUB, g + 14 * SUB))),
        (int(rng.integers((pit_x + pit_w) * SUB, 58 * SUB)), int(rng.integers(g + 4 * SUB, g + 20 * SUB))),
    )
    return build_level(pit_x, pit_w, wall_x, wall_h, coins)


def initial_state(level: Level) -> GameState:
    x, y = level.start
    return GameState(level, x, y, 0, 0, True, (False,) * len(level.coins), False, 0)


def _overlaps(x, y, r):
    return x < r[2] and x + PLAYER_W > r[0] and y < r[3] and y + PLAYER_H > r[1]


def stick_to_speed(lx: float) -> int:
    if abs(lx) < DEADZONE:
        return 0
    return int(round(lx * RUN_SPEED))


def step_state(state: GameState, action: ActionFrame):
    """Advance one tick. Returns (next state, reward). Pure."""
    lv = state.level
    vx = stick_to_speed(action.sticks[0])
    vy = state.vy
    if state.on_ground and action.buttons[JUMP_BUTTON]:
        vy = JUMP_SPEED
    vy = max(vy - GRAVITY, -MAX_FALL)

    x = min(max(state.x + vx, 0), WORLD * SUB - PLAYER_W)
    for r in lv.solids:
        if _overlaps(x, state.y, r):
            x = r[0] - PLAYER_W if vx > 0 else r[2]
    y = state.y + vy
    on_ground = False
    for r in lv.solids:
        if _overlaps(x, y, r):
            if vy < 0:
                y, on_ground = r[3], True
            else:
                y = r[1] - PLAYER_H
            vy = 0
    if y <= 0:
        y, vy, on_ground = 0, 0, True

    coins = tuple(c or (x <= cx < x + PLAYER_W and y <= cy < y + PLAYER_H)
                  for c, (cx, cy) in zip(state.coins, lv.coins))
    inside = _overlaps(x, y, lv.goal)
    reward = 1.0 if inside and not state.reached else 0.0
    nxt = GameState(lv, x, y, vx, vy, on_ground, coins, state.reached or inside, state.tick + 1)
    return nxt, reward


def is_trapped(state: GameState) -> bool:
    """Below ground level by more than a jump's apex: the player can never climb out."""
    return state.y + JUMP_SPEED ** 2 // (2 * GRAVITY) < GROUND_TOP * SUB


def _pack_level(lv: Level) -> bytes:
    ints = [v for r in lv.solids for v in r] + list(lv.goal) + [v for c in lv.coins for v in c]
    return struct.pack(f"<{len(ints)}q", *ints)


def state_hash(state: GameState) -> str:
    """sha256 of the canonical physical state; the tick counter is deliberately left out."""
    body = struct.pack("<4q2?", state.x, state.y, state.vx, state.vy, state.on_ground, state.reached)
    body += bytes(int(c) for c in state.coins)
    return hashlib.sha256(_pack_level(state.level) + body).hexdigest()


# --- rendering ---------------------------------------------------------------

SKY = (135, 190, 235)
GROUND = (120, 80, 40)
GOAL = (60, 200, 80)
COIN = (250, 210, 40)
PLAYER = (220, 40, 40)


def _fill(img, r, color, scale):
    h = img.shape[0]
    x0, y0, x1, y1 = (int(v * scale) // SUB for v in r)
    x0, x1 = max(x0, 0), min(x1, img.shape[1])
    r0, r1 = max(h - y1, 0), min(h - y0, h)
    if x1 > x0 and r1 > r0:
        img[r0:r1, x0:x1] = color


def render(state: GameState, size: int = 64) -> np.ndarray:
    """RGB uint8 (size, size, 3); the whole level is always in view."""
    scale = size / WORLD
    img = np.empty((size, size, 3), dtype=np.uint8)
    img[:] = SKY
    lv = state.level
    _fill(img, lv.goal, GOAL, scale)
    for r in lv.solids:
        _fill(img, r, GROUND, scale)
    for got, (cx, cy) in zip(state.coins, lv.coins):
        if not got:
            _fill(img, (cx - SUB, cy - SUB, cx + SUB, cy + SUB), COIN, scale)
    _fill(img, (state.x, state.y, state.x + PLAYER_W, state.y + PLAYER_H), PLAYER, scale)
    return img

