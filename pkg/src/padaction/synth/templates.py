"""Procedurally drawn controller overlay templates.

Each template is a 256x128 RGBA widget. Geometry is known exactly, which is
what makes the renderer usable as a ground-truth oracle for the locator and
the parser.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from functools import lru_cache

import cv2
import numpy as np

from ..core import BUTTON_NAMES, N_BUTTONS

TEMPLATE_SIZE = (256, 128)  # (width, height)

WELL_COLOR = (24, 24, 28)
RING_COLOR = (150, 150, 155)
RELEASED_FILL = (58, 58, 64)
OUTLINE = (205, 205, 210)
REGION_PAD = 2
PATCH_MARGIN = 4


@dataclass(frozen=True, eq=False)
class ButtonControl:
    index: int
    name: str
    shape: str  # "circle" or "polygon"
    geometry: tuple  # circle: (cx, cy, r); polygon: ((x, y), ...)
    bbox: tuple  # patch rectangle (x0, y0, x1, y1), half-open, includes context margin
    region: np.ndarray  # bool, patch-shaped; pixels whose appearance depends on the button state
    released_patch: np.ndarray  # RGBA uint8, patch-shaped
    pressed_patch: np.ndarray


@dataclass(frozen=True, eq=False)
class StickControl:
    name: str
    center: tuple  # nominal center (x, y), template pixels
    travel_radius: float
    indicator_radius: float
    indicator_color: tuple

    @property
    def well_radius(self) -> float:
        return self.travel_radius + self.indicator_radius + 2.0


@dataclass(frozen=True, eq=False)
class ControllerTemplate:
    name: str
    family: str
    base_image: np.ndarray  # RGBA uint8, all released, sticks without indicators
    buttons: tuple  # 16 ButtonControl, slot order
    sticks: tuple  # (left, right) StickControl
    static_mask: np.ndarray = field(repr=False)  # body pixels unaffected by any control state

    @property
    def size(self) -> tuple:
        h, w = self.base_image.shape[:2]
        return (w, h)

    def region_mask(self, control: ButtonControl) -> np.ndarray:
        """Full-frame boolean mask of a button's region."""
        h, w = self.base_image.shape[:2]
        mask = np.zeros((h, w), bool)
        x0, y0, x1, y1 = control.bbox
        mask[y0:y1, x0:x1] = control.region
        return mask


# --- layouts ---------------------------------------------------------------
# Shapes: ("circle", cx, cy, r) or ("rect", x0, y0, x1, y1), template pixels.

_SHOULDERS = {
    "lt": ("rect", 12, 4, 52, 14),
    "lb": ("rect", 60, 4, 100, 14),
    "rb": ("rect", 156, 4, 196, 14),
    "rt": ("rect", 204, 4, 244, 14),
}


def _dpad(cx, cy, s=4, off=13):
    return {
        "up": ("rect", cx - s, cy - off - s, cx + s, cy - off + s),
        "down": ("rect", cx - s, cy + off - s, cx + s, cy + off + s),
        "left": ("rect", cx - off - s, cy - s, cx - off + s, cy + s),
        "right": ("rect", cx + off - s, cy - s, cx + off + s, cy + s),
    }


def _face(cx, cy, r=6, off=15):
    return {
        "a": ("circle", cx, cy + off, r),
        "b": ("circle", cx + off, cy, r),
        "x": ("circle", cx - off, cy, r),
        "y": ("circle", cx, cy - off, r),
    }


LAYOUTS = {
    "xbox-like": dict(
        body=(62, 68, 66),
        accent=(110, 170, 90),
        indicator=(232, 232, 232),
        sticks=(((50, 52), 15, 6), ((162, 94), 13, 6)),
        controls={
            **_SHOULDERS, **_dpad(96, 94), **_face(206, 50),
            "l3": ("circle", 22, 106, 6), "r3": ("circle", 232, 104, 6),
            "start": ("circle", 150, 46, 5), "back": ("circle", 106, 46, 5),
        },
        label="XBX",
    ),
    "playstation-like": dict(
        body=(44, 48, 66),
        accent=(90, 120, 210),
        indicator=(240, 240, 250),
        sticks=(((94, 98), 13, 6), ((164, 98), 13, 6)),
        controls={
            **_SHOULDERS, **_dpad(42, 54), **_face(214, 54),
            "l3": ("circle", 40, 106, 6), "r3": ("circle", 216, 106, 6),
            "start": ("circle", 160, 42, 5), "back": ("circle", 98, 42, 5),
        },
        label="PSX",
    ),
    "generic": dict(
        body=(92, 90, 96),
        accent=(200, 140, 60),
        indicator=(250, 215, 60),
        sticks=(((40, 84), 14, 6), ((216, 84), 14, 6)),
        controls={
            **_SHOULDERS, **_dpad(98, 52), **_face(158, 52),
            "l3": ("circle", 94, 106, 6), "r3": ("circle", 162, 106, 6),
            "start": ("circle", 140, 86, 5), "back": ("circle", 116, 86, 5),
        },
        label="GEN",
    ),
}

PRESSED_COLORS = {
    "a": (70, 215, 80), "b": (225, 60, 60), "x": (60, 110, 230), "y": (235, 210, 50),
    "start": (240, 240, 240), "back": (240, 240, 240),
}


def _shape_mask(shape, size) -> np.ndarray:
    w, h = size
    mask = np.zeros((h, w), np.uint8)
    _draw_shape(mask, shape, 255, -1)
    return mask > 0


def _draw_shape(img, shape, color, thickness):
    if shape[0] == "circle":
        _, cx, cy, r = shape
        cv2.circle(img, (int(cx), int(cy)), int(r), color, thickness, cv2.LINE_AA)
    else:
        _, x0, y0, x1, y1 = shape
        cv2.rectangle(img, (int(x0), int(y0)), (int(x1) - 1, int(y1) - 1), color, thickness, cv2.LINE_AA)


def _decorate(canvas, rng, body, accent, label):
    h, w = canvas.shape[:2]
    shades = [tuple(int(np.clip(c + d, 0, 255)) for c in body) for d in (-45, -30, 35, 70, 110)]
    palette = shades + [accent, tuple(int(c) for c in rng.integers(60, 256, size=3))]
    for _ in range(220):
        kind = rng.integers(5)
        color = palette[rng.integers(len(palette))]
        x, y = int(rng.integers(3, w - 3)), int(rng.integers(3, h - 3))
        if kind == 0:
            pts = rng.integers(-8, 9, size=(3, 2)) + (x, y)
            cv2.fillConvexPoly(canvas, pts.astype(np.int32), color, cv2.LINE_AA)
        elif kind == 1:
            cv2.circle(canvas, (x, y), int(rng.integers(2, 6)), color, int(rng.integers(1, 3)), cv2.LINE_AA)
        elif kind == 2:
            dx, dy = rng.integers(-12, 13, size=2)
            cv2.line(canvas, (x, y), (x + int(dx), y + int(dy)), color, int(rng.integers(1, 3)), cv2.LINE_AA)
        elif kind == 3:
            cv2.rectangle(canvas, (x, y), (x + int(rng.integers(2, 8)), y + int(rng.integers(2, 8))), color, -1)
        else:
            glyph = chr(int(rng.integers(65, 91)))
            cv2.putText(canvas, glyph, (x - 4, y + 4), cv2.FONT_HERSHEY_PLAIN, 0.8, color, 1, cv2.LINE_AA)
    # grille + label give the body a distinctive, non-repetitive signature
    for i in range(6):
        cv2.line(canvas, (112 + 6 * i, 62), (108 + 6 * i, 74), shades[4], 1, cv2.LINE_AA)
    cv2.putText(canvas, label, (108, 112), cv2.FONT_HERSHEY_SIMPLEX, 0.5, shades[4], 1, cv2.LINE_AA)
    cv2.putText(canvas, label[::-1], (112, 32), cv2.FONT_HERSHEY_PLAIN, 0.9, accent, 1, cv2.LINE_AA)


def _draw_controls(canvas, layout, pressed: bool):
    for name, shape in layout["controls"].items():
        if pressed:
            fill = PRESSED_COLORS.get(name, layout["accent"] if name in ("l3", "r3") else (235, 235, 235))
        else:
            fill = RELEASED_FILL
        _draw_shape(canvas, shape, fill, -1)
        _draw_shape(canvas, shape, OUTLINE, 1)
        if shape[0] == "circle" and shape[3] >= 6:
            # small pip marks the glyph position; dark on pressed, light on released
            pip = (20, 20, 20) if pressed else (150, 150, 155)
            cv2.circle(canvas, (int(shape[1]), int(shape[2])), 2, pip, -1, cv2.LINE_AA)


def _draw_wells(canvas, sticks):
    for stick in sticks:
        cx, cy = stick.center
        r = int(round(stick.well_radius))
        cv2.circle(canvas, (int(cx), int(cy)), r, WELL_COLOR, -1, cv2.LINE_AA)
        cv2.circle(canvas, (int(cx), int(cy)), r, RING_COLOR, 1, cv2.LINE_AA)


def build_template(family: str, name: str | None = None) -> ControllerTemplate:
    layout = LAYOUTS[family]
    w, h = TEMPLATE_SIZE
    rng = np.random.default_rng(zlib.crc32(family.encode()))
    sticks = tuple(
        StickControl(sname, (float(c[0]), float(c[1])), float(travel), float(ind), layout["indicator"])
        for sname, (c, travel, ind) in zip(("left", "right"), layout["sticks"])
    )

    body = np.zeros((h, w, 3), np.uint8)
    body[:] = layout["body"]
    _decorate(body, rng, layout["body"], layout["accent"], layout["label"])
    _draw_wells(body, sticks)
    released = body.copy()
    _draw_controls(released, layout, pressed=False)
    pressed = body.copy()
    _draw_controls(pressed, layout, pressed=True)

    alpha = np.zeros((h, w), np.uint8)
    cv2.rectangle(alpha, (0, 0), (w - 1, h - 1), 255, -1)
    # rounded corners
    corner = np.zeros_like(alpha)
    cv2.rectangle(corner, (10, 0), (w - 11, h - 1), 255, -1)
    cv2.rectangle(corner, (0, 10), (w - 1, h - 11), 255, -1)
    for cx, cy in ((10, 10), (w - 11, 10), (10, h - 11), (w - 11, h - 11)):
        cv2.circle(corner, (cx, cy), 10, 255, -1)
    alpha = np.minimum(alpha, corner)
    base = np.dstack([released, alpha])
    pressed_rgba = np.dstack([pressed, alpha])

    kernel = np.ones((2 * REGION_PAD + 1, 2 * REGION_PAD + 1), np.uint8)
    buttons = []
    for index, bname in enumerate(BUTTON_NAMES):
        shape = layout["controls"][bname]
        region_full = cv2.dilate(_shape_mask(shape, (w, h)).astype(np.uint8), kernel) > 0
        ys, xs = np.nonzero(region_full)
        x0 = max(int(xs.min()) - PATCH_MARGIN, 0)
        y0 = max(int(ys.min()) - PATCH_MARGIN, 0)
        x1 = min(int(xs.max()) + 1 + PATCH_MARGIN, w)
        y1 = min(int(ys.max()) + 1 + PATCH_MARGIN, h)
        region = region_full[y0:y1, x0:x1]
        released_patch = base[y0:y1, x0:x1].copy()
        pressed_patch = released_patch.copy()
        pressed_patch[region] = pressed_rgba[y0:y1, x0:x1][region]
        geometry = (float(shape[1]), float(shape[2]), float(shape[3])) if shape[0] == "circle" else (
            (shape[1], shape[2]), (shape[3], shape[2]), (shape[3], shape[4]), (shape[1], shape[4]))
        buttons.append(ButtonControl(
            index=index,
            name=bname,
            shape="circle" if shape[0] == "circle" else "polygon",
            geometry=geometry,
            bbox=(x0, y0, x1, y1),
            region=region,
            released_patch=released_patch,
            pressed_patch=pressed_patch,
        ))
    assert len(buttons) == N_BUTTONS

    dynamic = np.zeros((h, w), np.uint8)
    for b in buttons:
        x0, y0, x1, y1 = b.bbox
        dynamic[y0:y1, x0:x1] |= b.region.astype(np.uint8)
    for s in sticks:
        cv2.circle(dynamic, (int(s.center[0]), int(s.center[1])), int(round(s.well_radius)) + 1, 1, -1)
    dynamic = cv2.dilate(dynamic, np.ones((7, 7), np.uint8))
    inner = cv2.erode((alpha > 0).astype(np.uint8), np.ones((9, 9), np.uint8))
    static_mask = (inner > 0) & (dynamic == 0)

    for arr in (base, static_mask):
        arr.setflags(write=False)
    return ControllerTemplate(
        name=name or family,
        family=family,
        base_image=base,
        buttons=tuple(buttons),
        sticks=sticks,
        static_mask=static_mask,
    )


FAMILIES = tuple(LAYOUTS)


@lru_cache(maxsize=None)
def get_template(name: str) -> ControllerTemplate:
    if name not in LAYOUTS:
        raise KeyError(f"unknown template {name!r}; available: {', '.join(FAMILIES)}")
    return build_template(name)


def default_templates() -> list:
    return [get_template(f) for f in FAMILIES]
