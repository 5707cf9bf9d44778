"""Synthetic overlay videos with ground-truth actions, and benchmark manifests."""

from __future__ import annotations

import json
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np

from ..core import GRID_CENTER, GRID_SIZE, GridReading, N_BUTTONS, RawFrame, RawTrack, write_track
from ..errors import ConfigError
from .render import ProceduralBackground, RenderSpec, render_overlay, scale_translate, template_bbox
from .templates import ControllerTemplate, FAMILIES, get_template


def derive_seed(master_seed: int, index: int) -> int:
    """Per-item seed; identical whether items are generated serially or in parallel."""
    return int(np.random.SeedSequence([int(master_seed), int(index)]).generate_state(1, np.uint32)[0])


def truth_cell(d: float) -> int:
    """Grid cell for a displacement in travel-radius units (same rule the parser applies)."""
    return int(min(max(GRID_CENTER + int(np.rint(GRID_CENTER * d)), 0), GRID_SIZE - 1))


@dataclass(frozen=True)
class SpecRanges:
    opacity: tuple = (0.8, 1.0)
    scale: tuple = (0.8, 1.2)
    jpeg_quality: tuple | None = (90, 100)

    def validate(self):
        for name in ("opacity", "scale", "jpeg_quality"):
            rng = getattr(self, name)
            if rng is None:
                continue
            lo, hi = rng
            if lo > hi:
                raise ConfigError(f"empty {name} range {rng}")
        if not (0 < self.opacity[0] and self.opacity[1] <= 1.0):
            raise ConfigError(f"opacity range {self.opacity} must lie in (0, 1]")
        if not (0.1 <= self.scale[0] and self.scale[1] <= 2.0):
            raise ConfigError(f"scale range {self.scale} must lie in [0.1, 2]")
        if self.jpeg_quality is not None and not (10 <= self.jpeg_quality[0] and self.jpeg_quality[1] <= 100):
            raise ConfigError(f"jpeg quality range {self.jpeg_quality} must lie in [10, 100]")
        return self

    def to_json(self):
        return {"opacity": list(self.opacity), "scale": list(self.scale),
                "jpeg_quality": None if self.jpeg_quality is None else list(self.jpeg_quality)}

    @classmethod
    def from_json(cls, d):
        q = d.get("jpeg_quality")
        return cls(tuple(d["opacity"]), tuple(d["scale"]), None if q is None else tuple(q))


@dataclass(frozen=True)
class ActionScript:
    """How truth actions are produced.

    ``mode="iid"``: every frame draws each button with probability ``button_p`` and
    each stick is exactly centered with probability ``center_p``, otherwise
    uniform on the unit disc. ``mode="scripted"``: ``actions`` is played back
    (cycled if shorter than the video).
    """

    mode: str = "iid"
    button_p: float = 0.2
    center_p: float = 0.3
    actions: tuple = ()

    def validate(self):
        if self.mode not in ("iid", "scripted"):
            raise ConfigError(f"unknown action script mode {self.mode!r}")
        if self.mode == "scripted" and not self.actions:
            raise ConfigError("scripted mode needs at least one action")
        if not (0 <= self.button_p <= 1 and 0 <= self.center_p <= 1):
            raise ConfigError("probabilities must lie in [0, 1]")
        return self

    def to_json(self):
        return {"mode": self.mode, "button_p": self.button_p, "center_p": self.center_p,
                "actions": [[list(b), [list(s) for s in st]] for b, st in self.actions]}

    @classmethod
    def from_json(cls, d):
        actions = tuple((tuple(b), tuple(tuple(s) for s in st)) for b, st in d.get("actions", []))
        return cls(d.get("mode", "iid"), d.get("button_p", 0.2), d.get("center_p", 0.3), actions)


def _draw_actions(script: ActionScript, n_frames: int, rng: np.random.Generator) -> list:
    if script.mode == "scripted":
        return [
            (tuple(bool(b) for b in buttons), tuple((float(x), float(y)) for x, y in sticks))
            for buttons, sticks in (script.actions[i % len(script.actions)] for i in range(n_frames))
        ]
    presses = rng.random((n_frames, N_BUTTONS)) < script.button_p
    centered = rng.random((n_frames, 2)) < script.center_p
    radius = np.sqrt(rng.random((n_frames, 2)))
    theta = rng.uniform(0.0, 2 * np.pi, size=(n_frames, 2))
    radius[centered] = 0.0
    dx, dy = radius * np.cos(theta), radius * np.sin(theta)
    out = []
    for i in range(n_frames):
        sticks = tuple((float(dx[i, s]), float(dy[i, s])) for s in range(2))
        out.append((tuple(bool(b) for b in presses[i]), sticks))
    return out


class _RenderedFrames(Sequence):
    """Lazily rendered frames; frame i is a pure function of the video's parameters."""

    def __init__(self, video: "SynthVideo"):
        self._video = video
        self._background = ProceduralBackground(video.background_seed, video.truth_placement.frame_size)

    def __len__(self):
        return len(self._video.truth_actions)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [self[j] for j in range(*i.indices(len(self)))]
        if i < 0:
            i += len(self)
        if not 0 <= i < len(self):
            raise IndexError(i)
        v = self._video
        frame, _ = render_overlay(self._background.frame(i), v.template, v.truth_actions[i], v.truth_placement)
        return frame


@dataclass(frozen=True, eq=False)
class SynthVideo:
    template: ControllerTemplate
    truth_actions: tuple
    truth_placement: RenderSpec
    seed: int
    background_seed: int
    fps: float = 60.0
    video_id: str = "synth"

    @property
    def template_name(self) -> str:
        return self.template.name

    @property
    def frames(self) -> Sequence:
        return _RenderedFrames(self)

    @property
    def bbox(self) -> tuple:
        return template_bbox(self.template, self.truth_placement.placement)

    def truth_track(self) -> RawTrack:
        frames = []
        for buttons, sticks in self.truth_actions:
            cells = [(truth_cell(x), truth_cell(y)) for x, y in sticks]
            frames.append(RawFrame(buttons, GridReading(cells[0], cells[1])))
        return RawTrack(self.video_id, self.fps, frames, self.template.family)

    def truth_sticks(self) -> np.ndarray:
        """(n, 4) displacements lx, ly, rx, ry in travel-radius units, up = +1."""
        return np.array([[s[0][0], s[0][1], s[1][0], s[1][1]] for _, s in self.truth_actions], dtype=np.float64)

    def truth_buttons(self) -> np.ndarray:
        return np.array([b for b, _ in self.truth_actions], dtype=bool)


def sample_render_spec(template, ranges: SpecRanges, frame_size, rng) -> RenderSpec:
    ranges.validate()
    opacity = float(rng.uniform(*ranges.opacity))
    scale = float(rng.uniform(*ranges.scale))
    quality = None if ranges.jpeg_quality is None else int(rng.integers(ranges.jpeg_quality[0], ranges.jpeg_quality[1] + 1))
    tw, th = template.size
    fw, fh = frame_size
    ow, oh = tw * scale, th * scale
    if ow > fw - 2 or oh > fh - 2:
        raise ConfigError(f"overlay at scale {scale:.2f} does not fit a {fw}x{fh} frame")
    tx = float(rng.uniform(1.0, fw - ow - 1.0)) + 0.5 * (scale - 1.0)
    ty = float(rng.uniform(1.0, fh - oh - 1.0)) + 0.5 * (scale - 1.0)
    return RenderSpec(scale_translate(scale, tx, ty), opacity, quality, tuple(frame_size)).validate()


def synth_video(template: ControllerTemplate, n_frames: int, script: ActionScript = ActionScript(),
                ranges: SpecRanges = SpecRanges(), seed: int = 0, frame_size=(640, 360),
                fps: float = 60.0, video_id: str | None = None) -> SynthVideo:
    if n_frames < 1:
        raise ConfigError("n_frames must be >= 1")
    script.validate()
    ranges.validate()
    rng = np.random.default_rng(seed)
    rs = sample_render_spec(template, ranges, frame_size, rng)
    background_seed = int(rng.integers(2**32))
    actions = _draw_actions(script, n_frames, rng)
    return SynthVideo(template, tuple(actions), rs, int(seed), background_seed, float(fps),
                      video_id or f"synth-{template.name}-{seed}")


# --- benchmark -------------------------------------------------------------

DEFAULT_TIERS = {
    "opaque": SpecRanges((1.0, 1.0), (0.8, 1.2), None),
    "mild": SpecRanges((0.8, 1.0), (0.8, 1.2), (90, 100)),
    "medium": SpecRanges((0.5, 0.8), (0.5, 1.5), (50, 90)),
    "harsh": SpecRanges((0.3, 0.5), (0.3, 0.6), (10, 50)),
}


@dataclass
class BenchmarkConfig:
    families: tuple = FAMILIES
    tiers: dict = field(default_factory=lambda: dict(DEFAULT_TIERS))
    videos_per_cell: int = 2
    n_frames: int = 300
    frame_size: tuple = (640, 360)
    fps: float = 60.0
    script: ActionScript = ActionScript()

    def validate(self):
        if self.videos_per_cell < 1 or self.n_frames < 1:
            raise ConfigError("videos_per_cell and n_frames must be >= 1")
        names = list(self.tiers)
        for r in self.tiers.values():
            r.validate()
        # tiers are told apart by opacity; touching endpoints are fine, interior overlap is not
        for i, a in enumerate(names):
            for b in names[i + 1:]:
                (lo1, hi1), (lo2, hi2) = self.tiers[a].opacity, self.tiers[b].opacity
                if lo1 < hi2 and lo2 < hi1:
                    raise ConfigError(f"tiers {a!r} and {b!r} have overlapping opacity ranges")
        for f in self.families:
            get_template(f)
        self.script.validate()
        return self

    def to_json(self):
        return {
            "families": list(self.families),
            "tiers": {k: v.to_json() for k, v in self.tiers.items()},
            "videos_per_cell": self.videos_per_cell,
            "n_frames": self.n_frames,
            "frame_size": list(self.frame_size),
            "fps": self.fps,
            "script": self.script.to_json(),
        }

    @classmethod
    def from_json(cls, d):
        cfg = cls()
        if "families" in d:
            cfg.families = tuple(d["families"])
        if "tiers" in d:
            cfg.tiers = {k: SpecRanges.from_json(v) for k, v in d["tiers"].items()}
        for key in ("videos_per_cell", "n_frames", "fps"):
            if key in d:
                setattr(cfg, key, d[key])
        if "frame_size" in d:
            cfg.frame_size = tuple(d["frame_size"])
        if "script" in d:
            cfg.script = ActionScript.from_json(d["script"])
        return cfg


def make_benchmark(config: BenchmarkConfig, seed: int) -> dict:
    """Manifest of every benchmark video. Frames are regenerated from the entries on demand."""
    config.validate()
    entries = []
    index = 0
    for tier in config.tiers:
        for family in config.families:
            for k in range(config.videos_per_cell):
                vseed = derive_seed(seed, index)
                vid = f"{tier}-{family}-{k:03d}"
                entries.append({
                    "video_id": vid,
                    "tier": tier,
                    "family": family,
                    "template": family,
                    "seed": vseed,
                    "n_frames": config.n_frames,
                    "frame_size": list(config.frame_size),
                    "fps": config.fps,
                    "ranges": config.tiers[tier].to_json(),
                    "script": config.script.to_json(),
                    "truth_path": f"{vid}/truth.padtrack",
                    "render_path": f"{vid}/render.json",
                    "frames_dir": f"{vid}/frames",
                })
                index += 1
    return {"version": 1, "master_seed": int(seed), "config": config.to_json(), "entries": entries}


def video_from_entry(entry: dict) -> SynthVideo:
    return synth_video(
        get_template(entry["template"]),
        entry["n_frames"],
        ActionScript.from_json(entry["script"]),
        SpecRanges.from_json(entry["ranges"]),
        seed=entry["seed"],
        frame_size=tuple(entry["frame_size"]),
        fps=entry["fps"],
        video_id=entry["video_id"],
    )


def write_frames(frames, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(frames):
        ok, buf = cv2.imencode(".png", cv2.cvtColor(frame, cv2.COLOR_RGB2BGR))
        if not ok:
            raise IOError(f"png encode failed for frame {i}")
        (directory / f"frame_{i:06d}.png").write_bytes(buf.tobytes())


def write_synth_video(video: SynthVideo, out_dir, frames: bool = True, truth_path=None, render_path=None) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_track(video.truth_track(), truth_path or out_dir / "truth.padtrack")
    sidecar = {
        "video_id": video.video_id,
        "template": video.template_name,
        "family": video.template.family,
        "seed": video.seed,
        "render_spec": video.truth_placement.to_json(),
        "bbox": list(video.bbox),
        "truth_sticks": video.truth_sticks().tolist(),
    }
    Path(render_path or out_dir / "render.json").write_text(json.dumps(sidecar, indent=1) + "\n")
    if frames:
        write_frames(video.frames, out_dir / "frames")


def write_benchmark(manifest: dict, root, frames: bool = True, jobs: int = 1) -> None:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    entries = manifest["entries"]
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(jobs) as pool:
            list(pool.map(_write_entry, entries, [root] * len(entries), [frames] * len(entries)))
    else:
        for e in entries:
            _write_entry(e, root, frames)
    (root / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")


def _write_entry(entry, root, frames):
    video = video_from_entry(entry)
    write_synth_video(video, root / entry["video_id"], frames=frames,
                      truth_path=root / entry["truth_path"], render_path=root / entry["render_path"])
