"""Reference overlay parser: button states, 11x11 stick grid, centering, p99 normalization, masking.

Deterministic stand-in for a learned parser. The :class:`ReferenceParser` takes the
previous crop as well so a two-frame model can be dropped in behind the same call.
"""

from __future__ import annotations

import json
import math
import re
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np

from .core import (
    ActionFrame, GRID_CENTER, GRID_SIZE, GridReading, NormalizedTrack, RawFrame, RawTrack,
)
from .errors import FrameReadError
from .locate import CANONICAL_SIZE, OverlayPlacement, crop_overlay


@dataclass(frozen=True)
class ParserConfig:
    button_margin: float = 0.0
    blob_threshold: float = 0.5
    percentile: float = 99.0
    canonical_size: tuple = CANONICAL_SIZE

    def __post_init__(self):
        if not 0 < self.percentile <= 100:
            raise ValueError(f"percentile must lie in (0, 100], got {self.percentile}")
        if not 0 < self.blob_threshold < 1:
            raise ValueError(f"blob_threshold must lie in (0, 1), got {self.blob_threshold}")
        if self.button_margin < 0:
            raise ValueError("button_margin must be >= 0")


# --- per-crop parsing ------------------------------------------------------

def _at_template_res(crop: np.ndarray, template) -> np.ndarray:
    w, h = template.size
    if crop.shape[:2] != (h, w):
        crop = cv2.resize(crop, (w, h), interpolation=cv2.INTER_LINEAR)
    return crop.astype(np.float32)


def estimate_opacity(crop: np.ndarray, template) -> float:
    """Least-squares gain of ``crop ~ a * template + b`` over the static body.

    The background under the overlay is uncorrelated with the template art, so the
    gain estimates overlay opacity.
    """
    c = _at_template_res(crop, template)[template.static_mask]
    t = template.base_image[..., :3].astype(np.float32)[template.static_mask]
    c = c - c.mean(axis=0)
    t = t - t.mean(axis=0)
    denom = float((t * t).sum())
    if denom <= 0:
        return 1.0
    return float(np.clip((c * t).sum() / denom, 0.02, 1.5))


def classify_buttons(crop: np.ndarray, template, config: ParserConfig = ParserConfig(), opacity=None) -> tuple:
    """16 pressed flags by opacity-compensated comparison against both reference appearances."""
    c_full = _at_template_res(crop, template)
    a = estimate_opacity(crop, template) if opacity is None else opacity
    out = []
    for control in template.buttons:
        x0, y0, x1, y1 = control.bbox
        c = c_full[y0:y1, x0:x1]
        rel = control.released_patch[..., :3].astype(np.float32)
        prs = control.pressed_patch[..., :3].astype(np.float32)
        context = ~control.region & (control.released_patch[..., 3] > 0)
        b = (c[context] - a * rel[context]).mean(axis=0) if context.any() else np.zeros(3, np.float32)
        cr = c[control.region]
        res_released = np.abs(cr - a * rel[control.region] - b).mean()
        res_pressed = np.abs(cr - a * prs[control.region] - b).mean()
        out.append(bool(res_released - res_pressed > config.button_margin))
    return tuple(out)


def grid_cell(displacement: float, travel_radius: float) -> int:
    """Cell index for a displacement in pixels (symmetric about the centre cell)."""
    step = int(np.rint(GRID_CENTER * displacement / travel_radius))
    return min(max(GRID_CENTER + step, 0), GRID_SIZE - 1)


def _stick_centroid(c_full, template, stick, a, threshold):
    cx, cy = stick.center
    r = stick.well_radius - 1.0
    x0, x1 = int(math.floor(cx - r)), int(math.ceil(cx + r)) + 1
    y0, y1 = int(math.floor(cy - r)), int(math.ceil(cy + r)) + 1
    ys, xs = np.mgrid[y0:y1, x0:x1]
    disc = np.hypot(xs - cx, ys - cy) <= r
    c = c_full[y0:y1, x0:x1]
    well = template.base_image[y0:y1, x0:x1, :3].astype(np.float32)
    delta = a * (np.asarray(stick.indicator_color, np.float32) - well)
    resid = c - a * well
    b = np.median(resid[disc], axis=0)
    s = ((resid - b) * delta).sum(axis=2) / np.maximum((delta * delta).sum(axis=2), 1e-6)
    s[~disc] = 0.0
    mask = (s > threshold).astype(np.uint8)
    n, labels, stats, _ = cv2.connectedComponentsWithStats(mask, connectivity=8)
    if n <= 1:
        return None
    areas = stats[1:, cv2.CC_STAT_AREA]
    label = 1 + int(np.argmax(areas))
    comp = cv2.dilate((labels == label).astype(np.uint8), np.ones((3, 3), np.uint8)) > 0
    comp &= disc
    w = np.clip(s, 0.0, 1.0) * comp
    total = w.sum()
    if total <= 0:
        return None
    return (float((w * xs).sum() / total), float((w * ys).sum() / total))


def read_stick_grid(crop: np.ndarray, template, config: ParserConfig = ParserConfig(), opacity=None):
    """Returns ``(GridReading, centroids)``; a centroid is ``None`` when nothing was segmented."""
    c_full = _at_template_res(crop, template)
    a = estimate_opacity(crop, template) if opacity is None else opacity
    cells, centroids = [], []
    for stick in template.sticks:
        cen = _stick_centroid(c_full, template, stick, a, config.blob_threshold)
        centroids.append(cen)
        if cen is None:
            cells.append((GRID_CENTER, GRID_CENTER))
        else:
            dx = cen[0] - stick.center[0]
            dy = stick.center[1] - cen[1]  # up = +1
            cells.append((grid_cell(dx, stick.travel_radius), grid_cell(dy, stick.travel_radius)))
    return GridReading(cells[0], cells[1]), centroids


class ReferenceParser:
    """Per-frame parser. ``prev_crop`` is accepted for interface parity and ignored."""

    def __init__(self, template, config: ParserConfig = ParserConfig()):
        self.template = template
        self.config = config

    def parse(self, crop, prev_crop=None):
        a = estimate_opacity(crop, self.template)
        buttons = classify_buttons(crop, self.template, self.config, opacity=a)
        grid, centroids = read_stick_grid(crop, self.template, self.config, opacity=a)
        return buttons, grid, centroids


# --- frame sources ---------------------------------------------------------

_FRAME_RE = re.compile(r"frame_(\d{6})\.png$")


class FrameDirectory(Sequence):
    """Numbered ``frame_%06d.png`` files as an RGB frame sequence."""

    def __init__(self, directory):
        self.directory = Path(directory)
        found = []
        for p in self.directory.iterdir():
            m = _FRAME_RE.search(p.name)
            if m:
                found.append((int(m.group(1)), p))
        found.sort()
        for expected, (idx, _) in enumerate(found):
            if idx != expected:
                raise FrameReadError(f"frame indices in {directory} are not contiguous from 0 (missing {expected})", expected)
        self.paths = [p for _, p in found]

    def __len__(self):
        return len(self.paths)

    def __getitem__(self, i):
        path = self.paths[i]
        img = cv2.imread(str(path), cv2.IMREAD_COLOR)
        if img is None:
            raise FrameReadError(f"unreadable frame {i}: {path}", i)
        return cv2.cvtColor(img, cv2.COLOR_BGR2RGB)


def _indexed(frames):
    """Yield ``(index, frame)``; explicit indices must be contiguous ascending from 0."""
    if isinstance(frames, (str, Path)):
        frames = FrameDirectory(frames)
    if isinstance(frames, Sequence) and not isinstance(frames, (list, tuple)):
        for i in range(len(frames)):
            yield i, frames[i]
        return
    for expected, item in enumerate(frames):
        if isinstance(item, tuple) and len(item) == 2:
            idx, frame = item
            if idx != expected:
                raise ValueError(f"frame index {idx} out of order; expected {expected}")
        else:
            frame = item
        yield expected, frame


@dataclass
class ParseResult:
    raw: RawTrack
    centroids: np.ndarray  # (n, 2 sticks, 2 xy), NaN where nothing was segmented


def parse_video(frames, placement: OverlayPlacement, template, config: ParserConfig = ParserConfig(),
                video_id: str = "video", fps: float = 60.0, parser=None) -> ParseResult:
    parser = parser or ReferenceParser(template, config)
    rows, cents = [], []
    prev = None
    for _, frame in _indexed(frames):
        crop = crop_overlay(frame, placement, config.canonical_size)
        buttons, grid, centroids = parser.parse(crop, prev)
        prev = crop
        rows.append(RawFrame(buttons, grid))
        cents.append([(np.nan, np.nan) if c is None else c for c in centroids])
    if not rows:
        raise ValueError("video has no frames")
    raw = RawTrack(video_id, fps, rows, template.family)
    return ParseResult(raw, np.asarray(cents, dtype=np.float64))


# --- video-level reductions ------------------------------------------------

def estimate_centers(centroids: np.ndarray, grids, nominal_centers):
    """Mean centroid over frames read as centred, per stick.

    Returns ``(centers, flags)``; a stick never seen centred falls back to its
    nominal centre and is flagged.
    """
    centroids = np.asarray(centroids, dtype=np.float64)
    if len(centroids) == 0:
        raise ValueError("no frames")
    centers, flags = [], []
    for s in range(2):
        sel = np.array([(g.left if s == 0 else g.right) == (GRID_CENTER, GRID_CENTER) for g in grids])
        pts = centroids[sel, s]
        pts = pts[np.all(np.isfinite(pts), axis=1)]
        if len(pts) == 0:
            centers.append(tuple(float(v) for v in nominal_centers[s]))
            flags.append(f"stick{s}_never_centered")
        else:
            centers.append((float(pts[:, 0].mean()), float(pts[:, 1].mean())))
    return tuple(centers), flags


def nearest_rank_percentile(values, p: float) -> float:
    v = np.sort(np.asarray(values, dtype=np.float64).ravel())
    if len(v) == 0:
        raise ValueError("empty input")
    rank = max(int(math.ceil(p / 100.0 * len(v))), 1)
    return float(v[rank - 1])


def normalize_displacements(disp, percentile: float = 99.0):
    """Scale each column by its nearest-rank percentile of |value| and clamp to [-1, 1].

    Returns ``(normalized, scales)``. Idle columns (scale < 1e-6) use scale 1.
    """
    disp = np.asarray(disp, dtype=np.float64)
    scales = []
    for j in range(disp.shape[1]):
        s = nearest_rank_percentile(np.abs(disp[:, j]), percentile)
        scales.append(s if s >= 1e-6 else 1.0)
    scales = np.asarray(scales)
    return np.clip(disp / scales, -1.0, 1.0), scales


def centroid_displacements(centroids, centers) -> np.ndarray:
    """(n, 4) lx, ly, rx, ry in pixels, up = +1; missing centroids count as centred."""
    centroids = np.asarray(centroids, dtype=np.float64)
    out = np.zeros((len(centroids), 4))
    for s in range(2):
        cx, cy = centers[s]
        dx = centroids[:, s, 0] - cx
        dy = cy - centroids[:, s, 1]
        out[:, 2 * s] = np.where(np.isfinite(dx), dx, 0.0)
        out[:, 2 * s + 1] = np.where(np.isfinite(dy), dy, 0.0)
    return out


def normalize_track(raw: RawTrack, centroids, centers, config: ParserConfig = ParserConfig()) -> NormalizedTrack:
    disp = centroid_displacements(centroids, centers)
    norm, scales = normalize_displacements(disp, config.percentile)
    frames = [ActionFrame(fr.buttons, tuple(float(v) for v in row)) for fr, row in zip(raw.frames, norm)]
    return NormalizedTrack(raw.video_id, raw.fps, frames, centers, tuple(scales), raw.controller_family)


def parse_report(result: ParseResult, norm: NormalizedTrack, flags) -> dict:
    return {
        "video_id": norm.video_id,
        "n_frames": len(norm),
        "flags": list(flags),
        "centers": [list(c) for c in norm.centers],
        "scales": list(norm.scales),
    }


def write_parse_outputs(out_dir, result: ParseResult, norm: NormalizedTrack, flags) -> None:
    from .core import write_track
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_track(result.raw, out_dir / "raw.padtrack")
    write_track(norm, out_dir / "normalized.padtrack")
    np.save(out_dir / "centroids.npy", result.centroids)
    (out_dir / "parse_report.json").write_text(json.dumps(parse_report(result, norm, flags), indent=1) + "\n")


# --- controller masking ----------------------------------------------------

def overlay_footprint(frame_shape, placement: OverlayPlacement, template) -> np.ndarray:
    h, w = frame_shape[:2]
    alpha = template.base_image[..., 3].astype(np.float32)
    warped = cv2.warpAffine(alpha, placement.matrix, (w, h), flags=cv2.INTER_LINEAR,
                            borderMode=cv2.BORDER_CONSTANT, borderValue=0)
    return warped > 0


def mask_overlay(frame: np.ndarray, placement: OverlayPlacement, template) -> np.ndarray:
    """Black out the overlay's alpha footprint; every other pixel is returned untouched."""
    out = frame.copy()
    out[overlay_footprint(frame.shape, placement, template)] = 0
    return out
