"""Overlay compositing and procedural backgrounds."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np

from ..errors import InvalidSpecError
from .templates import ControllerTemplate


@dataclass(frozen=True)
class RenderSpec:
    placement: tuple  # 2x3 affine, template -> frame pixels, row-major
    opacity: float = 1.0
    jpeg_quality: int | None = None
    frame_size: tuple = (640, 360)  # (width, height)

    def __post_init__(self):
        m = np.asarray(self.placement, dtype=np.float64)
        if m.shape != (2, 3):
            raise InvalidSpecError(f"placement must be 2x3, got shape {m.shape}")
        object.__setattr__(self, "placement", tuple(tuple(float(v) for v in row) for row in m))
        object.__setattr__(self, "opacity", float(self.opacity))
        object.__setattr__(self, "frame_size", tuple(int(v) for v in self.frame_size))
        if self.jpeg_quality is not None:
            object.__setattr__(self, "jpeg_quality", int(self.jpeg_quality))

    @property
    def matrix(self) -> np.ndarray:
        return np.asarray(self.placement, dtype=np.float64)

    @property
    def scale(self) -> float:
        return math.sqrt(abs(np.linalg.det(self.matrix[:, :2])))

    def validate(self):
        det = np.linalg.det(self.matrix[:, :2])
        if not np.all(np.isfinite(self.matrix)) or det == 0:
            raise InvalidSpecError("degenerate placement: linear part is singular")
        if not 0.1 <= self.scale <= 2.0:
            raise InvalidSpecError(f"placement scale {self.scale:.3f} outside [0.1, 2.0]")
        if not 0.0 < self.opacity <= 1.0:
            raise InvalidSpecError(f"opacity {self.opacity} outside (0, 1]")
        if self.jpeg_quality is not None and not 10 <= self.jpeg_quality <= 100:
            raise InvalidSpecError(f"jpeg quality {self.jpeg_quality} outside [10, 100]")
        w, h = self.frame_size
        if w < 1 or h < 1:
            raise InvalidSpecError(f"bad frame size {self.frame_size}")
        return self

    def to_json(self) -> dict:
        return {
            "placement": [list(r) for r in self.placement],
            "opacity": self.opacity,
            "jpeg_quality": self.jpeg_quality,
            "frame_size": list(self.frame_size),
        }

    @classmethod
    def from_json(cls, d: dict) -> "RenderSpec":
        return cls(tuple(map(tuple, d["placement"])), d["opacity"], d["jpeg_quality"], tuple(d["frame_size"]))


def scale_translate(scale: float, tx: float, ty: float) -> tuple:
    return ((scale, 0.0, tx), (0.0, scale, ty))


def template_bbox(template: ControllerTemplate, affine) -> tuple:
    """Axis-aligned bound (x0, y0, x1, y1) of the template's pixel footprint after ``affine``."""
    w, h = template.size
    m = np.asarray(affine, dtype=np.float64)
    corners = np.array([[-0.5, -0.5], [w - 0.5, -0.5], [-0.5, h - 0.5], [w - 0.5, h - 0.5]])
    pts = corners @ m[:, :2].T + m[:, 2]
    x0, y0 = pts.min(axis=0)
    x1, y1 = pts.max(axis=0)
    return (float(x0), float(y0), float(x1), float(y1))


def draw_indicator(rgba: np.ndarray, cx: float, cy: float, radius: float, color) -> None:
    """Anti-aliased disc by exact-ish pixel coverage, so the coverage centroid equals (cx, cy)."""
    h, w = rgba.shape[:2]
    x0, x1 = max(int(math.floor(cx - radius - 2)), 0), min(int(math.ceil(cx + radius + 2)) + 1, w)
    y0, y1 = max(int(math.floor(cy - radius - 2)), 0), min(int(math.ceil(cy + radius + 2)) + 1, h)
    ys, xs = np.mgrid[y0:y1, x0:x1]
    dist = np.hypot(xs - cx, ys - cy)
    cov = np.clip(radius + 0.5 - dist, 0.0, 1.0)[..., None]
    patch = rgba[y0:y1, x0:x1, :3]
    rgba[y0:y1, x0:x1, :3] = patch * (1.0 - cov) + np.asarray(color, np.float32) * cov


def render_template_state(template: ControllerTemplate, buttons, sticks) -> np.ndarray:
    """Template RGBA (float32, 0..255) showing ``buttons`` pressed and sticks deflected.

    ``sticks`` is ``((lx, ly), (rx, ry))`` in [-1, 1] with up = +1.
    """
    img = template.base_image.astype(np.float32)
    for control, pressed in zip(template.buttons, buttons):
        if pressed:
            x0, y0, x1, y1 = control.bbox
            view = img[y0:y1, x0:x1]
            view[control.region] = control.pressed_patch[control.region]
    for stick, (dx, dy) in zip(template.sticks, sticks):
        cx = stick.center[0] + dx * stick.travel_radius
        cy = stick.center[1] - dy * stick.travel_radius
        draw_indicator(img, cx, cy, stick.indicator_radius, stick.indicator_color)
    return img


def jpeg_roundtrip(rgb: np.ndarray, quality: int) -> np.ndarray:
    ok, buf = cv2.imencode(".jpg", cv2.cvtColor(rgb, cv2.COLOR_RGB2BGR), [cv2.IMWRITE_JPEG_QUALITY, int(quality)])
    if not ok:
        raise RuntimeError("jpeg encode failed")
    return cv2.cvtColor(cv2.imdecode(buf, cv2.IMREAD_COLOR), cv2.COLOR_BGR2RGB)


def composite(background: np.ndarray, overlay_rgba: np.ndarray, rs: RenderSpec) -> np.ndarray:
    w, h = rs.frame_size
    if background.shape[:2] != (h, w):
        raise InvalidSpecError(f"background is {background.shape[1]}x{background.shape[0]}, render settings want {w}x{h}")
    alpha = overlay_rgba[..., 3:4] / 255.0
    premult = np.concatenate([overlay_rgba[..., :3] * alpha, alpha], axis=2).astype(np.float32)
    warped = cv2.warpAffine(premult, rs.matrix, (w, h), flags=cv2.INTER_LINEAR,
                            borderMode=cv2.BORDER_CONSTANT, borderValue=0)
    a = np.clip(warped[..., 3:4], 0.0, 1.0) * rs.opacity
    out = background.astype(np.float32) * (1.0 - a) + warped[..., :3] * rs.opacity
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def render_overlay(background: np.ndarray, template: ControllerTemplate, action, rs: RenderSpec):
    """Composite ``template`` showing ``action`` onto ``background``.

    ``action`` is ``(buttons, ((lx, ly), (rx, ry)))``. Returns ``(frame, bbox)``.
    """
    rs.validate()
    buttons, sticks = action
    for pair in sticks:
        if any(not -1.0 <= v <= 1.0 for v in pair):
            raise InvalidSpecError(f"stick displacement {pair} outside [-1, 1]")
    overlay = render_template_state(template, buttons, sticks)
    frame = composite(background, overlay, rs)
    if rs.jpeg_quality is not None:
        frame = jpeg_roundtrip(frame, rs.jpeg_quality)
    return frame, template_bbox(template, rs.placement)


# --- backgrounds -----------------------------------------------------------

class ProceduralBackground:
    """Gradient + smooth noise scene with shapes drifting across it.

    Frame ``i`` is a pure function of (seed, size, i).
    """

    def __init__(self, seed: int, size=(640, 360), n_shapes: int = 12):
        self.size = tuple(size)
        w, h = self.size
        rng = np.random.default_rng(seed)
        c0, c1 = rng.uniform(20, 235, size=(2, 3))
        t = np.linspace(0.0, 1.0, w, dtype=np.float32)[None, :, None]
        angle_mix = np.linspace(0.0, 1.0, h, dtype=np.float32)[:, None, None] * rng.uniform(0, 1)
        base = c0 * (1 - t) + c1 * t
        base = base * (1 - angle_mix) + c0[::-1] * angle_mix
        coarse = rng.normal(0, 28, size=(h // 24 + 2, w // 24 + 2, 3)).astype(np.float32)
        base = base + cv2.resize(coarse, (w, h), interpolation=cv2.INTER_CUBIC)
        base = base + rng.normal(0, 6, size=(h, w, 3)).astype(np.float32)
        self._base = np.clip(base, 0, 255).astype(np.uint8)
        self._shapes = []
        for _ in range(n_shapes):
            self._shapes.append(dict(
                kind=int(rng.integers(2)),
                pos=rng.uniform((0, 0), (w, h)),
                vel=rng.uniform(-3, 3, size=2),
                size=int(rng.integers(8, 40)),
                color=tuple(int(c) for c in rng.integers(0, 256, size=3)),
            ))

    def frame(self, i: int) -> np.ndarray:
        w, h = self.size
        img = self._base.copy()
        for s in self._shapes:
            x, y = (s["pos"] + s["vel"] * i) % (w, h)
            if s["kind"] == 0:
                cv2.circle(img, (int(x), int(y)), s["size"] // 2, s["color"], -1, cv2.LINE_AA)
            else:
                cv2.rectangle(img, (int(x), int(y)), (int(x) + s["size"], int(y) + s["size"] // 2), s["color"], -1)
        return img


class DirectoryBackground:
    """User-supplied frames, resized to ``size`` and cycled."""

    def __init__(self, directory, size=(640, 360)):
        self.size = tuple(size)
        self.paths = sorted(p for p in Path(directory).iterdir() if p.suffix.lower() in (".png", ".jpg", ".jpeg"))
        if not self.paths:
            raise FileNotFoundError(f"no image frames in {directory}")

    def frame(self, i: int) -> np.ndarray:
        img = cv2.imread(str(self.paths[i % len(self.paths)]), cv2.IMREAD_COLOR)
        if img is None:
            raise IOError(f"unreadable background frame {self.paths[i % len(self.paths)]}")
        return cv2.cvtColor(cv2.resize(img, self.size, interpolation=cv2.INTER_AREA), cv2.COLOR_BGR2RGB)
