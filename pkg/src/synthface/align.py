"""Five-point landmark alignment to a 112x112 crop and [-1, 1] normalization."""
from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

import numpy as np
from scipy import ndimage

from .imageio import read_image, write_image

CROP_SIZE = 112
LANDMARK_NAMES = ("left_eye", "right_eye", "nose_tip", "left_mouth", "right_mouth")

# Widely used 5-point layout for 112x112 crops. A convention, not a measured value;
# override it through ``template=`` wherever alignment is configured.
DEFAULT_TEMPLATE = np.array(
    [
        [38.2946, 51.6963],
        [73.5318, 51.5014],
        [56.0252, 71.7366],
        [41.5493, 92.3655],
        [70.7299, 92.2041],
    ],
    dtype=np.float64,
)


class SingularConfigurationError(ValueError):
    """Landmarks too degenerate (coincident or collinear) for a similarity fit."""


@dataclass(frozen=True)
class LandmarkSet:
    points: np.ndarray  # (5, 2) pixels, (x, y)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.shape != (5, 2):
            raise ValueError(f"expected 5 (x, y) landmarks, got shape {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("landmark coordinates must be finite")
        object.__setattr__(self, "points", pts)

    @classmethod
    def from_flat(cls, values) -> "LandmarkSet":
        return cls(np.asarray(values, dtype=np.float64).reshape(5, 2))

    def flat(self) -> list[float]:
        return [float(v) for v in self.points.reshape(-1)]


def _as_points(pts) -> np.ndarray:
    return pts.points if isinstance(pts, LandmarkSet) else np.asarray(pts, dtype=np.float64)


def check_non_degenerate(points, rel_tol: float = 1e-9) -> None:
    pts = _as_points(points)
    centered = pts - pts.mean(axis=0)
    sv = np.linalg.svd(centered, compute_uv=False)
    if sv[0] <= 1e-12 or sv[-1] <= rel_tol * sv[0]:
        raise SingularConfigurationError("landmarks are coincident or collinear")


@dataclass(frozen=True)
class SimilarityTransform:
    """``x -> scale * R(rotation) @ x + (tx, ty)``; rotation in radians."""

    scale: float = 1.0
    rotation: float = 0.0
    tx: float = 0.0
    ty: float = 0.0

    @property
    def matrix(self) -> np.ndarray:
        c, s = self.scale * math.cos(self.rotation), self.scale * math.sin(self.rotation)
        return np.array([[c, -s, self.tx], [s, c, self.ty]])

    @classmethod
    def from_matrix(cls, m) -> "SimilarityTransform":
        m = np.asarray(m, dtype=np.float64)
        a, b = m[0, 0], m[1, 0]
        return cls(math.hypot(a, b), math.atan2(b, a), float(m[0, 2]), float(m[1, 2]))

    def apply(self, points) -> np.ndarray:
        pts = _as_points(points)
        m = self.matrix
        return pts @ m[:, :2].T + m[:, 2]

    def inverse(self) -> "SimilarityTransform":
        if not (self.scale > 0 and math.isfinite(self.scale)):
            raise ValueError(f"transform with scale {self.scale} is not invertible")
        inv_s = 1.0 / self.scale
        c, s = math.cos(-self.rotation), math.sin(-self.rotation)
        tx = -inv_s * (c * self.tx - s * self.ty)
        ty = -inv_s * (s * self.tx + c * self.ty)
        return SimilarityTransform(inv_s, -self.rotation, tx, ty)

    def residual(self, src, dst) -> float:
        """Sum of squared landmark errors after mapping ``src``."""
        diff = self.apply(src) - _as_points(dst)
        return float(np.sum(diff * diff))

    def max_error(self, src, dst) -> float:
        return float(np.max(np.linalg.norm(self.apply(src) - _as_points(dst), axis=1)))


def estimate_similarity_transform(src, template=DEFAULT_TEMPLATE) -> SimilarityTransform:
    """Closed-form least-squares similarity mapping ``src`` onto ``template``.

    In complex coordinates a similarity is ``z -> a z + b``, so the fit is the
    linear least-squares problem ``a = <s~, d~> / |s~|^2`` over centered points,
    which is the global optimum with a proper rotation and positive scale.
    """
    src_pts, dst_pts = _as_points(src), _as_points(template)
    if src_pts.shape != dst_pts.shape or src_pts.ndim != 2 or src_pts.shape[1] != 2:
        raise ValueError("source and template must be matching (N, 2) point sets")
    if not (np.all(np.isfinite(src_pts)) and np.all(np.isfinite(dst_pts))):
        raise ValueError("landmark coordinates must be finite")
    check_non_degenerate(src_pts)

    zs = src_pts[:, 0] + 1j * src_pts[:, 1]
    zd = dst_pts[:, 0] + 1j * dst_pts[:, 1]
    zs_c, zd_c = zs - zs.mean(), zd - zd.mean()
    a = np.vdot(zs_c, zd_c) / np.vdot(zs_c, zs_c).real
    if abs(a) == 0.0:
        raise SingularConfigurationError("template collapses to a single point")
    b = zd.mean() - a * zs.mean()
    return SimilarityTransform(float(abs(a)), float(np.angle(a)), float(b.real), float(b.imag))


def warp_and_crop(image: np.ndarray, transform: SimilarityTransform, size: int = CROP_SIZE) -> np.ndarray:
    """Bilinear warp of ``image`` (H, W[, C]) into a ``size`` x ``size`` crop.

    ``transform`` maps source pixel coordinates to crop coordinates; crop pixels
    whose preimage falls outside the source are 0. uint8 input gives rounded
    uint8 output, float input stays float.
    """
    inv = transform.inverse()
    img = np.asarray(image)
    squeeze = img.ndim == 2
    if squeeze:
        img = img[:, :, None]
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    m = inv.matrix
    sx = m[0, 0] * xs + m[0, 1] * ys + m[0, 2]
    sy = m[1, 0] * xs + m[1, 1] * ys + m[1, 2]
    coords = np.stack([sy, sx])
    src = img.astype(np.float64)
    out = np.empty((size, size, img.shape[2]), dtype=np.float64)
    for ch in range(img.shape[2]):
        out[:, :, ch] = ndimage.map_coordinates(src[:, :, ch], coords, order=1, mode="constant", cval=0.0)
    if img.dtype == np.uint8:
        out = np.clip(np.rint(out), 0, 255).astype(np.uint8)
    else:
        out = out.astype(img.dtype if np.issubdtype(img.dtype, np.floating) else np.float64)
    return out[:, :, 0] if squeeze else out


def to_unit(image: np.ndarray) -> np.ndarray:
    """uint8 [0, 255] -> float32 [0, 1]."""
    if image.dtype == np.uint8:
        return image.astype(np.float32) / 255.0
    return np.asarray(image, dtype=np.float32)


def normalize_image(image: np.ndarray) -> np.ndarray:
    """Per-channel ``(x - 0.5) / 0.5`` for inputs in [0, 1]."""
    x = np.asarray(image)
    if x.dtype == np.uint8:
        raise ValueError("normalize_image expects [0, 1] floats; convert with to_unit first")
    if not np.all(np.isfinite(x)) or x.min(initial=0.0) < 0.0 or x.max(initial=0.0) > 1.0:
        raise ValueError("pixel values must lie in [0, 1]")
    return (x - 0.5) / 0.5


@dataclass
class AlignedFace:
    image: np.ndarray
    source: str | None
    transform: SimilarityTransform


def align_face(
    image: np.ndarray,
    landmarks,
    template=DEFAULT_TEMPLATE,
    size: int = CROP_SIZE,
    source: str | None = None,
) -> AlignedFace:
    tform = estimate_similarity_transform(landmarks, template)
    return AlignedFace(warp_and_crop(image, tform, size), source, tform)


# ---------------------------------------------------------------- landmark providers


class LandmarkProvider(Protocol):
    def __call__(self, path: str) -> LandmarkSet: ...


CSV_HEADER = ["path"] + [f"{c}{i}" for i in range(1, 6) for c in "xy"]


class CsvLandmarkProvider:
    """Landmarks from a ``path,x1,y1,...,x5,y5`` CSV (header line required)."""

    def __init__(self, csv_path):
        self.csv_path = Path(csv_path)
        self.table: dict[str, LandmarkSet] = {}
        with open(self.csv_path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or [h.strip() for h in header] != CSV_HEADER:
                raise ValueError(f"{self.csv_path}: header must be {','.join(CSV_HEADER)}")
            for lineno, row in enumerate(reader, start=2):
                if not row:
                    continue
                if len(row) != len(CSV_HEADER):
                    raise ValueError(f"{self.csv_path}:{lineno}: expected {len(CSV_HEADER)} columns")
                try:
                    self.table[row[0]] = LandmarkSet.from_flat([float(v) for v in row[1:]])
                except ValueError as exc:
                    raise ValueError(f"{self.csv_path}:{lineno}: {exc}") from None

    def __call__(self, path: str) -> LandmarkSet:
        try:
            return self.table[path]
        except KeyError:
            raise KeyError(f"no landmarks for {path!r} in {self.csv_path}") from None

    def paths(self) -> list[str]:
        return list(self.table)


def write_landmark_csv(rows, csv_path) -> None:
    """``rows``: iterable of ``(path, LandmarkSet)``."""
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for path, lm in rows:
            writer.writerow([path] + [repr(v) for v in lm.flat()])


class AlignedCropCache:
    """Aligned crops on disk, keyed by a hash of image bytes, landmarks and template."""

    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    @staticmethod
    def key(image: np.ndarray, landmarks: LandmarkSet, template=DEFAULT_TEMPLATE, size: int = CROP_SIZE) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(image).tobytes())
        h.update(str(image.shape).encode())
        h.update(np.asarray(landmarks.points, dtype=np.float64).tobytes())
        h.update(np.asarray(template, dtype=np.float64).tobytes())
        h.update(str(size).encode())
        return h.hexdigest()[:32]

    def get_or_align(self, image, landmarks, template=DEFAULT_TEMPLATE, size=CROP_SIZE):
        path = self.root / f"{self.key(image, landmarks, template, size)}.png"
        if path.exists():
            return read_image(path), path
        crop = align_face(image, landmarks, template, size).image
        write_image(path, crop)
        return crop, path
