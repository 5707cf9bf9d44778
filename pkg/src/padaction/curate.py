"""Segment filtering by action density, and extraction-quality metrics."""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .core import RawTrack, is_null
from .errors import DimensionError
from .locate import LocateConfig, bbox_iou, locate_overlay, template_features
from .parse import (
    ParserConfig, estimate_centers, normalize_displacements, normalize_track, parse_video,
)
from .synth.templates import FAMILIES, get_template
from .synth.video import video_from_entry

DEFAULT_SEGMENT_LEN = 600
KEEP_DENSITY = 0.5


@dataclass(frozen=True)
class Segment:
    video_id: str
    start_frame: int
    end_frame: int  # exclusive
    density: float = 0.0
    kept: bool = False

    def __post_init__(self):
        if not self.start_frame < self.end_frame:
            raise ValueError(f"empty segment [{self.start_frame}, {self.end_frame})")

    def __len__(self):
        return self.end_frame - self.start_frame


def action_density(frames) -> float:
    """Fraction of raw frames with any press or any off-centre stick cell."""
    frames = list(frames)
    if not frames:
        raise ValueError("action density is undefined on an empty slice")
    active = sum(not is_null(f.buttons, f.grid) for f in frames)
    return active / len(frames)


def segment_track(track: RawTrack, segment_len: int = DEFAULT_SEGMENT_LEN) -> list:
    if segment_len < 1:
        raise ValueError("segment_len must be >= 1")
    out = []
    n = len(track.frames)
    for start in range(0, n, segment_len):
        end = min(start + segment_len, n)
        out.append(Segment(track.video_id, start, end, action_density(track.frames[start:end])))
    return out


@dataclass(frozen=True)
class FilterResult:
    kept: list
    discarded: list

    @property
    def kept_fraction(self) -> float:
        total = sum(len(s) for s in self.kept) + sum(len(s) for s in self.discarded)
        return sum(len(s) for s in self.kept) / total if total else 0.0


def filter_segments(segments, threshold: float = KEEP_DENSITY) -> FilterResult:
    kept, discarded = [], []
    for s in segments:
        keep = s.density >= threshold
        s = Segment(s.video_id, s.start_frame, s.end_frame, s.density, keep)
        (kept if keep else discarded).append(s)
    return FilterResult(kept, discarded)


def write_segments(segments, path) -> None:
    lines = [json.dumps(asdict(s), sort_keys=True) for s in segments]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def read_segments(path) -> list:
    return [Segment(**json.loads(line)) for line in Path(path).read_text().splitlines() if line.strip()]


# --- metrics ---------------------------------------------------------------

def r2_score(pred, truth) -> float:
    """Coefficient of determination. Constant truth gives 1.0 on exact match, else -inf."""
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(truth, dtype=np.float64)
    if p.shape != t.shape:
        raise DimensionError(f"length mismatch: {p.shape} vs {t.shape}")
    if t.ndim != 1 or len(t) < 2:
        raise DimensionError("r2 needs two equal-length series of at least 2 samples")
    ss_res = float(((p - t) ** 2).sum())
    ss_tot = float(((t - t.mean()) ** 2).sum())
    if ss_tot == 0.0:
        return 1.0 if ss_res == 0.0 else -math.inf
    return 1.0 - ss_res / ss_tot


def button_frame_accuracy(pred, truth) -> float:
    """Fraction of frames whose 16 buttons all match."""
    p = np.asarray(pred, dtype=bool)
    t = np.asarray(truth, dtype=bool)
    if p.shape != t.shape:
        raise DimensionError(f"length mismatch: {p.shape} vs {t.shape}")
    if len(t) < 1:
        raise DimensionError("need at least one frame")
    return float(np.all(p == t, axis=1).mean())


def per_button_accuracy(pred, truth) -> float:
    p = np.asarray(pred, dtype=bool)
    t = np.asarray(truth, dtype=bool)
    if p.shape != t.shape:
        raise DimensionError(f"length mismatch: {p.shape} vs {t.shape}")
    return float((p == t).mean())


# --- end-to-end parser evaluation -----------------------------------------

@dataclass
class PipelineParams:
    locate: LocateConfig = field(default_factory=LocateConfig)
    parser: ParserConfig = field(default_factory=ParserConfig)
    seed: int = 0


def evaluate_video(entry: dict, params: PipelineParams, templates=None) -> dict:
    """Locate + parse one benchmark video; per-video arrays for later pooling."""
    video = video_from_entry(entry)
    templates = templates or [get_template(n) for n in entry.get("candidates", FAMILIES)]
    feats = [template_features(t, params.locate.max_keypoints) for t in templates]
    frames = video.frames
    placement = locate_overlay(frames, templates, params.seed, params.locate, feature_cache=feats)
    out = {"video_id": entry["video_id"], "family": entry["family"], "tier": entry["tier"],
           "n_frames": len(frames)}
    truth_norm, _ = normalize_displacements(video.truth_sticks(), params.parser.percentile)
    if placement is None:
        out.update(found=False, truth_sticks=truth_norm)
        return out
    template = get_template(placement.template_name)
    result = parse_video(frames, placement, template, params.parser, video_id=entry["video_id"], fps=entry["fps"])
    grids = [f.grid for f in result.raw.frames]
    centers, flags = estimate_centers(result.centroids, grids, [s.center for s in template.sticks])
    norm = normalize_track(result.raw, result.centroids, centers, params.parser)
    truth_track = video.truth_track()
    out.update(
        found=True,
        template=placement.template_name,
        iou=bbox_iou(placement.crop_bbox, video.bbox),
        pred_buttons=np.array([f.buttons for f in result.raw.frames], dtype=bool),
        truth_buttons=video.truth_buttons(),
        pred_sticks=np.array([f.sticks for f in norm.frames]),
        truth_sticks=truth_norm,
        grid_match=np.array([[a.grid.left == b.grid.left, a.grid.right == b.grid.right]
                             for a, b in zip(result.raw.frames, truth_track.frames)]),
        flags=flags,
    )
    return out


def _r2_value(x):
    return None if not math.isfinite(x) else round(x, 12)


def _aggregate(results) -> dict:
    found = [r for r in results if r.get("found")]
    n_frames = sum(r["n_frames"] for r in results)
    # a video that was not found scores zero on buttons and predicts centred sticks
    ps = np.concatenate([r["pred_sticks"] if r.get("found") else np.zeros_like(r["truth_sticks"])
                         for r in results])
    ts = np.concatenate([r["truth_sticks"] for r in results])
    axis = [r2_score(ps[:, j], ts[:, j]) for j in range(4)]
    report = {
        "videos": len(results),
        "found": len(found),
        "frames": n_frames,
        "joystick_r2": _r2_value(float(np.mean(axis))) if all(math.isfinite(a) for a in axis) else None,
        "axis_r2": [_r2_value(a) for a in axis],
    }
    if not found:
        report.update(button_frame_accuracy=0.0, per_button_accuracy=0.0, grid_accuracy=0.0, mean_iou=0.0)
        return report
    pb = np.concatenate([r["pred_buttons"] for r in found])
    tb = np.concatenate([r["truth_buttons"] for r in found])
    report.update(
        button_frame_accuracy=round(button_frame_accuracy(pb, tb) * len(pb) / n_frames, 12),
        per_button_accuracy=round(per_button_accuracy(pb, tb) * len(pb) / n_frames, 12),
        grid_accuracy=round(float(np.concatenate([r["grid_match"] for r in found]).mean()), 12),
        mean_iou=round(float(np.mean([r["iou"] for r in found])), 12),
    )
    return report


def build_report(results) -> dict:
    """Per-family pooled metrics, overall = mean over families, grouped by tier."""
    report = {"tiers": {}, "not_found": sorted(r["video_id"] for r in results if not r.get("found"))}
    for tier in sorted({r["tier"] for r in results}):
        rows = [r for r in results if r["tier"] == tier]
        fams = {}
        for fam in sorted({r["family"] for r in rows}):
            fams[fam] = _aggregate([r for r in rows if r["family"] == fam])
        accs = [f["button_frame_accuracy"] for f in fams.values()]
        r2s = [f["joystick_r2"] for f in fams.values()]
        report["tiers"][tier] = {
            "families": fams,
            "overall": {
                "button_frame_accuracy": round(float(np.mean(accs)), 12),
                "joystick_r2": None if any(v is None for v in r2s) else round(float(np.mean(r2s)), 12),
                "per_button_accuracy": round(float(np.mean([f["per_button_accuracy"] for f in fams.values()])), 12),
                "videos": sum(f["videos"] for f in fams.values()),
                "found": sum(f["found"] for f in fams.values()),
            },
        }
    return report


def evaluate_parser(manifest: dict, params: PipelineParams = PipelineParams(), jobs: int = 1,
                    tiers=None, out_path=None) -> dict:
    entries = [e for e in manifest["entries"] if tiers is None or e["tier"] in tiers]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            results = list(pool.map(evaluate_video, entries, [params] * len(entries)))
    else:
        results = [evaluate_video(e, params) for e in entries]
    report = build_report(results)
    report["master_seed"] = manifest.get("master_seed")
    report["pipeline_seed"] = params.seed
    if out_path is not None:
        Path(out_path).write_text(json.dumps(report, indent=1, sort_keys=True) + "\n")
    return report
