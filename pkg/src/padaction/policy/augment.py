"""Observation augmentations: colour jitter, small rotation, random crop."""

from __future__ import annotations

from dataclasses import dataclass

import cv2
import numpy as np

from .flow import AugmentConfig


@dataclass(frozen=True)
class AugmentParams:
    brightness: float
    contrast: float
    saturation: float
    hue: float
    angle: float
    crop: tuple  # x0, y0, w, h


def sample_params(rng: np.random.Generator, config: AugmentConfig, size) -> AugmentParams:
    w, h = size
    cw, ch = max(1, int(round(w * config.crop_fraction))), max(1, int(round(h * config.crop_fraction)))
    return AugmentParams(
        brightness=float(rng.uniform(-config.brightness, config.brightness)),
        contrast=float(rng.uniform(-config.contrast, config.contrast)),
        saturation=float(rng.uniform(-config.saturation, config.saturation)),
        hue=float(rng.uniform(-config.hue, config.hue)),
        angle=float(rng.uniform(-config.max_rotation, config.max_rotation)),
        crop=(int(rng.integers(0, w - cw + 1)), int(rng.integers(0, h - ch + 1)), cw, ch),
    )


def apply(img: np.ndarray, p: AugmentParams) -> np.ndarray:
    """uint8 RGB in, uint8 RGB out, same size. Zero-valued steps are skipped exactly."""
    out = img
    h, w = img.shape[:2]
    if p.brightness or p.contrast or p.saturation or p.hue:
        x = out.astype(np.float32)
        if p.brightness:
            x = x * (1.0 + p.brightness)
        if p.contrast:
            mean = x.mean()
            x = (x - mean) * (1.0 + p.contrast) + mean
        if p.saturation:
            gray = x @ np.array([0.299, 0.587, 0.114], np.float32)
            x = (x - gray[..., None]) * (1.0 + p.saturation) + gray[..., None]
        x = np.clip(x, 0, 255)
        if p.hue:
            hsv = cv2.cvtColor(x / 255.0, cv2.COLOR_RGB2HSV)
            hsv[..., 0] = (hsv[..., 0] + 360.0 * p.hue) % 360.0
            x = cv2.cvtColor(hsv, cv2.COLOR_HSV2RGB) * 255.0
        out = np.clip(np.rint(x), 0, 255).astype(np.uint8)
    if p.angle:
        m = cv2.getRotationMatrix2D(((w - 1) / 2.0, (h - 1) / 2.0), p.angle, 1.0)
        out = cv2.warpAffine(out, m, (w, h), flags=cv2.INTER_LINEAR, borderMode=cv2.BORDER_REFLECT)
    x0, y0, cw, ch = p.crop
    if (cw, ch) != (w, h):
        out = cv2.resize(out[y0:y0 + ch, x0:x0 + cw], (w, h), interpolation=cv2.INTER_LINEAR)
    return out


def augment(img: np.ndarray, rng: np.random.Generator, config: AugmentConfig) -> np.ndarray:
    h, w = img.shape[:2]
    return apply(img, sample_params(rng, config, (w, h)))
