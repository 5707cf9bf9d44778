"""Unified gamepad action space, per-video track containers and the track file format.

Button slot order (16):

    0-3   d-pad up, down, left, right
    4-7   face A, B, X, Y
    8-9   shoulders LB, RB
    10-11 triggers LT, RT
    12-13 thumb clicks L3, R3
    14    start
    15    back

followed by four stick axes ``lx, ly, rx, ry`` in [-1, 1] with up = +1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from .errors import DimensionError, TrackFormatError

BUTTON_NAMES = (
    "up", "down", "left", "right",
    "a", "b", "x", "y",
    "lb", "rb",
    "lt", "rt",
    "l3", "r3",
    "start", "back",
)
N_BUTTONS = len(BUTTON_NAMES)
N_AXES = 4
ACTION_DIM = N_BUTTONS + N_AXES

GRID_SIZE = 11
GRID_CENTER = 5

TRACK_MAGIC = "PADTRACK"
TRACK_VERSION = "v1"


def button_index(name: str) -> int:
    return BUTTON_NAMES.index(name)


@dataclass(frozen=True)
class ActionFrame:
    buttons: tuple = (False,) * N_BUTTONS
    sticks: tuple = (0.0, 0.0, 0.0, 0.0)

    def __post_init__(self):
        buttons = tuple(bool(b) for b in self.buttons)
        if len(buttons) != N_BUTTONS:
            raise DimensionError(f"expected {N_BUTTONS} buttons, got {len(buttons)}")
        sticks = tuple(float(s) for s in self.sticks)
        if len(sticks) != N_AXES:
            raise DimensionError(f"expected {N_AXES} stick axes, got {len(sticks)}")
        for s in sticks:
            if not math.isfinite(s) or s < -1.0 or s > 1.0:
                raise ValueError(f"stick value {s!r} outside [-1, 1]")
        object.__setattr__(self, "buttons", buttons)
        object.__setattr__(self, "sticks", sticks)

    @classmethod
    def null(cls) -> "ActionFrame":
        return cls()

    @classmethod
    def from_pressed(cls, names=(), sticks=(0.0, 0.0, 0.0, 0.0)) -> "ActionFrame":
        buttons = [False] * N_BUTTONS
        for name in names:
            buttons[button_index(name)] = True
        return cls(tuple(buttons), tuple(sticks))


@dataclass(frozen=True)
class GridReading:
    """Joystick cells on the 11x11 grid, (5, 5) being centered.

    Cell x grows to the right, cell y grows upward (up = +1 convention).
    """

    left: tuple = (GRID_CENTER, GRID_CENTER)
    right: tuple = (GRID_CENTER, GRID_CENTER)

    def __post_init__(self):
        for name in ("left", "right"):
            cell = tuple(int(c) for c in getattr(self, name))
            if len(cell) != 2 or not all(0 <= c < GRID_SIZE for c in cell):
                raise ValueError(f"{name} grid cell {cell} outside 0..{GRID_SIZE - 1}")
            object.__setattr__(self, name, cell)

    def is_centered(self) -> bool:
        c = (GRID_CENTER, GRID_CENTER)
        return self.left == c and self.right == c


@dataclass(frozen=True)
class RawFrame:
    buttons: tuple
    grid: GridReading

    def __post_init__(self):
        buttons = tuple(bool(b) for b in self.buttons)
        if len(buttons) != N_BUTTONS:
            raise DimensionError(f"expected {N_BUTTONS} buttons, got {len(buttons)}")
        object.__setattr__(self, "buttons", buttons)


def _check_header_fields(video_id: str, fps: float, family: str):
    for label, value in (("video_id", video_id), ("controller_family", family)):
        if not value or any(ch.isspace() for ch in value):
            raise ValueError(f"{label} must be a non-empty token without whitespace: {value!r}")
    if not (math.isfinite(fps) and fps > 0):
        raise ValueError(f"fps must be positive, got {fps!r}")


@dataclass(frozen=True)
class RawTrack:
    video_id: str
    fps: float
    frames: tuple
    controller_family: str = "unknown"

    def __post_init__(self):
        object.__setattr__(self, "fps", float(self.fps))
        object.__setattr__(self, "frames", tuple(self.frames))
        _check_header_fields(self.video_id, self.fps, self.controller_family)
        if not self.frames:
            raise ValueError("track must contain at least one frame")

    def __len__(self):
        return len(self.frames)


@dataclass(frozen=True)
class NormalizedTrack:
    video_id: str
    fps: float
    frames: tuple
    centers: tuple = ((0.0, 0.0), (0.0, 0.0))
    scales: tuple = (1.0, 1.0, 1.0, 1.0)
    controller_family: str = "unknown"

    def __post_init__(self):
        object.__setattr__(self, "fps", float(self.fps))
        object.__setattr__(self, "frames", tuple(self.frames))
        object.__setattr__(self, "centers", tuple(tuple(float(v) for v in c) for c in self.centers))
        object.__setattr__(self, "scales", tuple(float(s) for s in self.scales))
        _check_header_fields(self.video_id, self.fps, self.controller_family)
        if not self.frames:
            raise ValueError("track must contain at least one frame")
        if len(self.centers) != 2 or any(len(c) != 2 for c in self.centers):
            raise DimensionError("centers must be two (x, y) points")
        if len(self.scales) != N_AXES or not all(math.isfinite(s) and s > 0 for s in self.scales):
            raise ValueError(f"scales must be {N_AXES} positive reals, got {self.scales}")

    def __len__(self):
        return len(self.frames)


Track = Union[RawTrack, NormalizedTrack]


def encode_action(frame: ActionFrame, dim: int = ACTION_DIM) -> np.ndarray:
    """Flatten a frame to ``[16 button slots as 0/1, lx, ly, rx, ry]``.

    ``dim`` larger than 20 zero-pads the tail.
    """
    if dim < ACTION_DIM:
        raise DimensionError(f"action dim must be >= {ACTION_DIM}, got {dim}")
    v = np.zeros(dim, dtype=np.float64)
    v[:N_BUTTONS] = frame.buttons
    v[N_BUTTONS:ACTION_DIM] = frame.sticks
    return v


def decode_action(v, dim: int = ACTION_DIM) -> ActionFrame:
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.shape[0] != dim or dim < ACTION_DIM:
        raise DimensionError(f"expected vector of length {dim}, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError("action vector has non-finite entries")
    buttons = tuple(bool(x > 0.5) for x in v[:N_BUTTONS])
    sticks = tuple(float(x) for x in np.clip(v[N_BUTTONS:ACTION_DIM], -1.0, 1.0))
    return ActionFrame(buttons, sticks)


def encode_chunk(frames: Sequence[ActionFrame], dim: int = ACTION_DIM) -> np.ndarray:
    return np.stack([encode_action(f, dim) for f in frames])


def decode_chunk(chunk, dim: int = ACTION_DIM) -> list:
    chunk = np.asarray(chunk)
    if chunk.ndim != 2:
        raise DimensionError(f"expected H x D chunk, got shape {chunk.shape}")
    return [decode_action(row, dim) for row in chunk]


def is_null(buttons, grid: GridReading) -> bool:
    return not any(buttons) and grid.is_centered()


# --- track files -----------------------------------------------------------

def _fmt_float(x: float) -> str:
    return repr(float(x))


def write_track(track: Track, path) -> None:
    if not track.frames:
        raise ValueError("refusing to write a track with no frames")
    header = [TRACK_MAGIC, TRACK_VERSION, track.video_id, _fmt_float(track.fps), track.controller_family]
    lines = []
    if isinstance(track, RawTrack):
        header.append("kind=raw")
        for fr in track.frames:
            bits = "".join("1" if b else "0" for b in fr.buttons)
            cells = (*fr.grid.left, *fr.grid.right)
            lines.append(" ".join([bits, *(str(c) for c in cells)]))
    elif isinstance(track, NormalizedTrack):
        header.append("kind=normalized")
        header.append("centers=" + ",".join(_fmt_float(v) for c in track.centers for v in c))
        header.append("scales=" + ",".join(_fmt_float(s) for s in track.scales))
        for fr in track.frames:
            bits = "".join("1" if b else "0" for b in fr.buttons)
            lines.append(" ".join([bits, *(_fmt_float(s) for s in fr.sticks)]))
    else:
        raise TypeError(f"not a track: {type(track).__name__}")
    text = " ".join(header) + "\n" + "\n".join(lines) + "\n"
    Path(path).write_bytes(text.encode("utf-8"))


def _parse_bits(token: str, lineno: int) -> tuple:
    if len(token) != N_BUTTONS or set(token) - {"0", "1"}:
        raise TrackFormatError(f"expected {N_BUTTONS} button chars of 0/1, got {token!r}", lineno)
    return tuple(ch == "1" for ch in token)


def read_track(path) -> Track:
    text = Path(path).read_bytes().decode("utf-8")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines or not lines[0].startswith(TRACK_MAGIC + " "):
        raise TrackFormatError("missing PADTRACK header", 1)
    head = lines[0].split(" ")
    if len(head) < 5 or head[1] != TRACK_VERSION:
        raise TrackFormatError(f"bad header {lines[0]!r}", 1)
    video_id, family = head[2], head[4]
    try:
        fps = float(head[3])
    except ValueError:
        raise TrackFormatError(f"bad fps {head[3]!r}", 1) from None
    opts = {}
    for tok in head[5:]:
        key, sep, value = tok.partition("=")
        if not sep:
            raise TrackFormatError(f"bad header option {tok!r}", 1)
        opts[key] = value
    kind = opts.get("kind", "raw")
    if kind not in ("raw", "normalized"):
        raise TrackFormatError(f"unknown track kind {kind!r}", 1)

    frames = []
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split(" ")
        if len(parts) != 1 + N_AXES:
            raise TrackFormatError(f"expected {1 + N_AXES} fields, got {len(parts)}", lineno)
        buttons = _parse_bits(parts[0], lineno)
        try:
            if kind == "raw":
                cells = [int(p) for p in parts[1:]]
                frames.append(RawFrame(buttons, GridReading(tuple(cells[:2]), tuple(cells[2:]))))
            else:
                frames.append(ActionFrame(buttons, tuple(float(p) for p in parts[1:])))
        except ValueError as exc:
            raise TrackFormatError(str(exc), lineno) from None
    if not frames:
        raise TrackFormatError("track has no frame records", len(lines))

    try:
        if kind == "raw":
            return RawTrack(video_id, fps, frames, family)
        centers = [float(v) for v in opts["centers"].split(",")]
        scales = [float(v) for v in opts["scales"].split(",")]
        return NormalizedTrack(
            video_id, fps, frames,
            centers=(tuple(centers[:2]), tuple(centers[2:])),
            scales=tuple(scales),
            controller_family=family,
        )
    except (KeyError, ValueError) as exc:
        raise TrackFormatError(f"bad header: {exc}", 1) from None
