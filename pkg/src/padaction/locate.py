"""Overlay localization: keypoints, descriptor matching, robust affine fit, crop."""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np

from .synth.render import template_bbox
from .synth.video import derive_seed

MIN_INLIERS = 20
SAMPLED_FRAMES = 25
CANONICAL_SIZE = (256, 128)


@dataclass(frozen=True)
class Keypoint:
    position: tuple
    scale: float
    orientation: float  # radians
    descriptor: np.ndarray
    response: float = 0.0


@dataclass(frozen=True)
class LocateConfig:
    max_keypoints: int = 2000
    ratio: float = 0.75
    inlier_px: float = 3.0
    iterations: int = 2000
    min_inliers: int = MIN_INLIERS
    n_sampled: int = SAMPLED_FRAMES


@dataclass(frozen=True)
class AffineFit:
    matrix: np.ndarray  # 2x3
    inlier_count: int
    inliers: np.ndarray  # bool mask over the input pairs
    rms: float  # reprojection RMS over inliers, pixels


@dataclass(frozen=True)
class OverlayPlacement:
    template_name: str
    affine: tuple  # 2x3, template -> frame
    inlier_count: int
    score: float
    crop_bbox: tuple  # (x0, y0, x1, y1), clamped to the frame
    rms: float = 0.0
    frame_index: int = 0
    template_size: tuple = CANONICAL_SIZE

    @property
    def matrix(self) -> np.ndarray:
        return np.asarray(self.affine, dtype=np.float64)

    def to_json(self) -> dict:
        return {
            "template": self.template_name,
            "affine": [float(v) for row in self.affine for v in row],
            "inlier_count": self.inlier_count,
            "score": self.score,
            "bbox": list(self.crop_bbox),
            "rms": self.rms,
            "frame_index": self.frame_index,
            "template_size": list(self.template_size),
        }

    @classmethod
    def from_json(cls, d: dict) -> "OverlayPlacement":
        a = d["affine"]
        return cls(d["template"], (tuple(a[:3]), tuple(a[3:])), int(d["inlier_count"]), float(d["score"]),
                   tuple(d["bbox"]), float(d.get("rms", 0.0)), int(d.get("frame_index", 0)),
                   tuple(d.get("template_size", CANONICAL_SIZE)))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1) + "\n")

    @classmethod
    def load(cls, path) -> "OverlayPlacement":
        return cls.from_json(json.loads(Path(path).read_text()))


# --- keypoints -------------------------------------------------------------

def to_gray(image: np.ndarray) -> np.ndarray:
    if image.ndim == 2:
        return image
    if image.shape[2] == 4:
        image = image[..., :3]
    return cv2.cvtColor(np.ascontiguousarray(image), cv2.COLOR_RGB2GRAY)


def _detect(gray: np.ndarray, max_keypoints: int, mask=None):
    """Arrays (points Nx2, descriptors NxK, sizes, angles_rad, responses), strongest first."""
    empty = (np.zeros((0, 2)), np.zeros((0, 128), np.float32), np.zeros(0), np.zeros(0), np.zeros(0))
    if gray.shape[0] < 32 or gray.shape[1] < 32:
        return empty
    sift = cv2.SIFT_create(nfeatures=max_keypoints)
    m = None if mask is None else mask.astype(np.uint8) * 255
    kps, desc = sift.detectAndCompute(gray, m)
    if not kps:
        return empty
    resp = np.array([k.response for k in kps])
    pts = np.array([k.pt for k in kps], dtype=np.float64)
    # strongest first; position breaks ties so the order is fully determined by the image
    order = np.lexsort((pts[:, 1], pts[:, 0], -resp))[:max_keypoints]
    sizes = np.array([k.size for k in kps])[order]
    angles = np.deg2rad(np.array([k.angle for k in kps]))[order]
    return pts[order], desc[order], sizes, angles, resp[order]


def detect_and_describe(image: np.ndarray, max_keypoints: int = 2000, mask=None) -> list:
    pts, desc, sizes, angles, resp = _detect(to_gray(image), max_keypoints, mask)
    return [
        Keypoint((float(p[0]), float(p[1])), float(s), float(a), d, float(r))
        for p, d, s, a, r in zip(pts, desc, sizes, angles, resp)
    ]


def _descriptor_matrix(kps) -> np.ndarray:
    if isinstance(kps, np.ndarray):
        return kps
    if not kps:
        return np.zeros((0, 0))
    return np.stack([k.descriptor for k in kps])


def match_descriptors(a, b, ratio: float = 0.75) -> list:
    """Ratio-test nearest-neighbour matches ``[(i, j), ...]`` from ``a`` into ``b``.

    Accepts keypoint lists or raw descriptor matrices.
    """
    if not 0 < ratio < 1:
        raise ValueError(f"ratio must lie in (0, 1), got {ratio}")
    da = _descriptor_matrix(a).astype(np.float64)
    db = _descriptor_matrix(b).astype(np.float64)
    if len(da) == 0 or len(db) == 0:
        return []
    d2 = (da * da).sum(1)[:, None] + (db * db).sum(1)[None, :] - 2.0 * da @ db.T
    np.maximum(d2, 0.0, out=d2)
    if len(db) == 1:
        return [(i, 0) for i in range(len(da))]
    part = np.argpartition(d2, 1, axis=1)[:, :2]
    rows = np.arange(len(da))
    first = np.where(d2[rows, part[:, 0]] <= d2[rows, part[:, 1]], part[:, 0], part[:, 1])
    second = np.where(first == part[:, 0], part[:, 1], part[:, 0])
    d1 = np.sqrt(d2[rows, first])
    dsec = np.sqrt(d2[rows, second])
    keep = d1 < ratio * dsec
    return [(int(i), int(first[i])) for i in np.nonzero(keep)[0]]


# --- robust affine ---------------------------------------------------------

def _fit_lstsq(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    X = np.column_stack([src, np.ones(len(src))])
    sol, *_ = np.linalg.lstsq(X, dst, rcond=None)
    return sol.T  # 2x3


def _residuals(m: np.ndarray, src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    return np.linalg.norm(src @ m[:, :2].T + m[:, 2] - dst, axis=1)


def estimate_affine(src, dst, inlier_px: float = 3.0, iterations: int = 2000, seed: int = 0,
                    min_inliers: int = MIN_INLIERS) -> AffineFit | None:
    """Consensus affine ``dst ~ M @ [src, 1]`` or ``None`` below ``min_inliers``.

    Every hypothesis comes from 3 sampled pairs solved exactly; the best consensus set
    is refit by least squares until the inlier set stops changing.
    """
    src = np.asarray(src, dtype=np.float64).reshape(-1, 2)
    dst = np.asarray(dst, dtype=np.float64).reshape(-1, 2)
    n = len(src)
    if n != len(dst):
        raise ValueError("src and dst must have equal length")
    if n < 3:
        return None
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, n, size=(iterations, 3))
    distinct = (idx[:, 0] != idx[:, 1]) & (idx[:, 0] != idx[:, 2]) & (idx[:, 1] != idx[:, 2])
    idx = idx[distinct]
    if len(idx) == 0:
        idx = np.array([[0, 1, 2]])
    S = np.concatenate([src[idx], np.ones((len(idx), 3, 1))], axis=2)  # (k, 3, 3)
    area2 = np.abs(np.linalg.det(S))
    ok = area2 > 1e-9 * (1.0 + np.abs(src).max()) ** 2
    if not ok.any():
        return None
    S, D = S[ok], dst[idx[ok]]
    M = np.linalg.solve(S, D)  # (k, 3, 2): [x y 1] @ M = [x' y']
    src_h = np.column_stack([src, np.ones(n)])
    thr2 = inlier_px * inlier_px
    counts = np.empty(len(M), dtype=np.int64)
    for start in range(0, len(M), 256):
        pred = np.einsum("nc,kcd->knd", src_h, M[start:start + 256])
        err2 = ((pred - dst[None]) ** 2).sum(axis=2)
        counts[start:start + 256] = (err2 < thr2).sum(axis=1)
    best = int(np.argmax(counts))
    model = M[best].T
    inliers = _residuals(model, src, dst) < inlier_px
    for _ in range(10):
        if inliers.sum() < 3:
            break
        refit = _fit_lstsq(src[inliers], dst[inliers])
        new_inliers = _residuals(refit, src, dst) < inlier_px
        model = refit
        if np.array_equal(new_inliers, inliers):
            break
        inliers = new_inliers
    count = int(inliers.sum())
    if count < min_inliers:
        return None
    res = _residuals(model, src[inliers], dst[inliers])
    return AffineFit(model, count, inliers, float(np.sqrt(np.mean(res ** 2))))


# --- overlay search --------------------------------------------------------

def sample_indices(n_frames: int, n_sampled: int = SAMPLED_FRAMES) -> list:
    if n_frames < 1:
        raise ValueError("video has no frames")
    if n_frames <= n_sampled:
        return list(range(n_frames))
    return [int(round(x)) for x in np.linspace(0, n_frames - 1, n_sampled)]


@dataclass
class _TemplateFeatures:
    name: str
    size: tuple
    points: np.ndarray
    descriptors: np.ndarray
    template: object = field(repr=False)


def template_features(template, max_keypoints: int = 2000) -> _TemplateFeatures:
    """Keypoints on the static body only, so pressed buttons and moving sticks never matter."""
    gray = to_gray(template.base_image)
    pts, desc, *_ = _detect(gray, max_keypoints, template.static_mask)
    return _TemplateFeatures(template.name, template.size, pts, desc, template)


def _clamp_bbox(bbox, frame_size) -> tuple:
    w, h = frame_size
    x0, y0, x1, y1 = bbox
    return (float(min(max(x0, 0.0), w)), float(min(max(y0, 0.0), h)),
            float(min(max(x1, 0.0), w)), float(min(max(y1, 0.0), h)))


def locate_overlay(frames, templates, seed: int = 0, config: LocateConfig = LocateConfig(),
                   jobs: int = 1, feature_cache=None) -> OverlayPlacement | None:
    """Best (frame, template) candidate over uniformly sampled frames, or ``None``.

    Candidates rank by inlier count, then lower reprojection RMS, then template name.
    """
    indices = sample_indices(len(frames), config.n_sampled)
    feats = feature_cache or [template_features(t, config.max_keypoints) for t in templates]

    def evaluate(fi: int):
        frame = frames[fi]
        pts, desc, *_ = _detect(to_gray(frame), config.max_keypoints)
        found = []
        for ti, tf in enumerate(feats):
            pairs = match_descriptors(tf.descriptors, desc, config.ratio)
            if len(pairs) < config.min_inliers:
                continue
            pairs = np.asarray(pairs)
            fit = estimate_affine(tf.points[pairs[:, 0]], pts[pairs[:, 1]], config.inlier_px,
                                  config.iterations, derive_seed(seed, fi * 1009 + ti), config.min_inliers)
            if fit is not None:
                found.append((fit, tf, fi, frame.shape[1], frame.shape[0]))
        return found

    if jobs > 1:
        with ThreadPoolExecutor(jobs) as pool:
            results = list(pool.map(evaluate, indices))
    else:
        results = [evaluate(i) for i in indices]

    best, best_key = None, None
    for found in results:
        for fit, tf, fi, w, h in found:
            key = (-fit.inlier_count, fit.rms, tf.name, fi)
            if best_key is None or key < best_key:
                best, best_key = (fit, tf, fi, w, h), key
    if best is None:
        return None
    fit, tf, fi, w, h = best
    affine = tuple(tuple(float(v) for v in row) for row in fit.matrix)
    return OverlayPlacement(
        template_name=tf.name,
        affine=affine,
        inlier_count=fit.inlier_count,
        score=float(fit.inlier_count),
        crop_bbox=_clamp_bbox(template_bbox(tf.template, affine), (w, h)),
        rms=fit.rms,
        frame_index=fi,
        template_size=tuple(tf.size),
    )


def crop_overlay(frame: np.ndarray, placement: OverlayPlacement, canonical_size=CANONICAL_SIZE) -> np.ndarray:
    """Inverse-warp ``frame`` into template coordinates at ``canonical_size``; outside is black."""
    cw, ch = canonical_size
    tw, th = placement.template_size
    sx, sy = tw / cw, th / ch
    # canonical pixel centre -> template pixel centre
    S = np.array([[sx, 0.0, 0.5 * sx - 0.5], [0.0, sy, 0.5 * sy - 0.5], [0.0, 0.0, 1.0]])
    A = np.vstack([placement.matrix, [0.0, 0.0, 1.0]])
    M = (A @ S)[:2]
    return cv2.warpAffine(frame, M, (cw, ch), flags=cv2.INTER_LINEAR | cv2.WARP_INVERSE_MAP,
                          borderMode=cv2.BORDER_CONSTANT, borderValue=0)


def bbox_iou(a, b) -> float:
    ix = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union if union > 0 else 0.0
