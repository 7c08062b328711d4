"""Seeded training augmentations on 8-bit aligned crops.

Each transform fires independently with its own probability. Firing decisions
are drawn first, in a fixed order, so the rate of one transform never depends on
another; parameters are drawn afterwards.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import cv2
import numpy as np

from .seeding import make_rng

ORDER = (
    "horizontal_flip",
    "color_jitter",
    "grayscale",
    "gaussian_blur",
    "motion_blur",
    "gaussian_noise",
    "down_up_scale",
    "jpeg_compression",
)


@dataclass
class AugmentationConfig:
    horizontal_flip: float = 0.5
    grayscale: float = 0.1
    gaussian_blur: float = 0.05
    gaussian_noise: float = 0.035
    motion_blur: float = 0.05
    jpeg_compression: float = 0.05
    down_up_scale: float = 0.01
    color_jitter: float = 0.1
    brightness: tuple[float, float] = (0.0, 0.15)
    contrast: tuple[float, float] = (0.0, 0.3)
    hue: tuple[float, float] = (0.0, 0.1)
    saturation: tuple[float, float] = (0.0, 0.1)
    # ranges below are not given by the recipe; library-style defaults
    blur_kernel: tuple[int, int] = (3, 7)
    motion_kernel: tuple[int, int] = (3, 7)
    noise_variance: tuple[float, float] = (10.0, 50.0)
    jpeg_quality: tuple[int, int] = (50, 95)
    down_scale: tuple[float, float] = (0.25, 0.75)

    def validate(self) -> None:
        for name in ORDER:
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"augmentation.{name} probability must be in [0, 1], got {p}")
        for name in ("brightness", "contrast", "hue", "saturation", "blur_kernel", "motion_kernel",
                     "noise_variance", "jpeg_quality", "down_scale"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"augmentation.{name}: range [{lo}, {hi}] is empty")

    @classmethod
    def disabled(cls) -> "AugmentationConfig":
        return cls(**{name: 0.0 for name in ORDER})


@dataclass
class AugmentationPlan:
    fired: dict[str, bool]
    params: dict[str, object] = field(default_factory=dict)

    @property
    def applied(self) -> list[str]:
        return [name for name in ORDER if self.fired[name]]


def _odd_between(rng, lo: int, hi: int) -> int:
    choices = [k for k in range(lo, hi + 1) if k % 2 == 1] or [max(3, lo | 1)]
    return int(choices[int(rng.integers(len(choices)))])


def _signed(rng, lo: float, hi: float) -> float:
    mag = float(rng.uniform(lo, hi))
    return mag if rng.random() < 0.5 else -mag


def sample_plan(config: AugmentationConfig, rng: np.random.Generator) -> AugmentationPlan:
    fired = {name: bool(rng.random() < getattr(config, name)) for name in ORDER}
    params: dict[str, object] = {}
    if fired["color_jitter"]:
        params["color_jitter"] = {
            "brightness": 1.0 + _signed(rng, *config.brightness),
            "contrast": 1.0 + _signed(rng, *config.contrast),
            "saturation": 1.0 + _signed(rng, *config.saturation),
            "hue": _signed(rng, *config.hue),
        }
    if fired["gaussian_blur"]:
        params["gaussian_blur"] = _odd_between(rng, *config.blur_kernel)
    if fired["motion_blur"]:
        params["motion_blur"] = (_odd_between(rng, *config.motion_kernel), float(rng.uniform(0.0, 180.0)))
    if fired["gaussian_noise"]:
        params["gaussian_noise"] = (math.sqrt(float(rng.uniform(*config.noise_variance))), int(rng.integers(2**31)))
    if fired["down_up_scale"]:
        params["down_up_scale"] = float(rng.uniform(*config.down_scale))
    if fired["jpeg_compression"]:
        lo, hi = config.jpeg_quality
        params["jpeg_compression"] = int(rng.integers(lo, hi + 1))
    return AugmentationPlan(fired, params)


def _color_jitter(img: np.ndarray, p: dict) -> np.ndarray:
    x = img.astype(np.float32)
    x = x * p["brightness"]
    gray_mean = float(np.mean(x @ np.array([0.299, 0.587, 0.114], dtype=np.float32)))
    x = (x - gray_mean) * p["contrast"] + gray_mean
    x = np.clip(x, 0, 255).astype(np.uint8)
    hsv = cv2.cvtColor(x, cv2.COLOR_RGB2HSV_FULL).astype(np.float32)
    hsv[..., 0] = np.mod(hsv[..., 0] + p["hue"] * 256.0, 256.0)
    hsv[..., 1] = np.clip(hsv[..., 1] * p["saturation"], 0, 255)
    return cv2.cvtColor(np.rint(hsv).clip(0, 255).astype(np.uint8), cv2.COLOR_HSV2RGB_FULL)


def _motion_kernel(size: int, angle_deg: float) -> np.ndarray:
    k = np.zeros((size, size), dtype=np.float32)
    c = (size - 1) / 2.0
    t = math.radians(angle_deg)
    for r in np.linspace(-c, c, 4 * size):
        x, y = int(round(c + r * math.cos(t))), int(round(c + r * math.sin(t)))
        k[y, x] = 1.0
    return k / k.sum()


def apply_plan(image: np.ndarray, plan: AugmentationPlan) -> np.ndarray:
    img = np.ascontiguousarray(image)
    if img.dtype != np.uint8 or img.ndim != 3 or img.shape[2] != 3:
        raise ValueError("augmentations operate on uint8 (H, W, 3) crops")
    h, w = img.shape[:2]
    p = plan.params
    for name in plan.applied:
        if name == "horizontal_flip":
            img = img[:, ::-1]
        elif name == "color_jitter":
            img = _color_jitter(img, p[name])
        elif name == "grayscale":
            g = cv2.cvtColor(np.ascontiguousarray(img), cv2.COLOR_RGB2GRAY)
            img = np.repeat(g[:, :, None], 3, axis=2)
        elif name == "gaussian_blur":
            k = p[name]
            img = cv2.GaussianBlur(np.ascontiguousarray(img), (k, k), 0)
        elif name == "motion_blur":
            size, angle = p[name]
            img = cv2.filter2D(np.ascontiguousarray(img), -1, _motion_kernel(size, angle))
        elif name == "gaussian_noise":
            sigma, nseed = p[name]
            noise = np.random.default_rng(nseed).normal(0.0, sigma, img.shape)
            img = np.clip(img.astype(np.float64) + noise, 0, 255).round().astype(np.uint8)
        elif name == "down_up_scale":
            s = p[name]
            small = cv2.resize(np.ascontiguousarray(img), (max(1, round(w * s)), max(1, round(h * s))),
                               interpolation=cv2.INTER_AREA)
            img = cv2.resize(small, (w, h), interpolation=cv2.INTER_LINEAR)
        elif name == "jpeg_compression":
            bgr = cv2.cvtColor(np.ascontiguousarray(img), cv2.COLOR_RGB2BGR)
            ok, buf = cv2.imencode(".jpg", bgr, [cv2.IMWRITE_JPEG_QUALITY, p[name]])
            if ok:
                img = cv2.cvtColor(cv2.imdecode(buf, cv2.IMREAD_COLOR), cv2.COLOR_BGR2RGB)
    return np.ascontiguousarray(img)


def augment(image: np.ndarray, config: AugmentationConfig, seed, return_plan: bool = False):
    """Augment one uint8 crop; same (image, config, seed) gives the same bytes."""
    plan = sample_plan(config, make_rng(seed))
    out = apply_plan(image, plan)
    return (out, plan) if return_plan else out
