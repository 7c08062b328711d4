"""Procedural toy renderer: SceneConfig -> (RGB image, 5 landmarks).

Stands in for the external 3D renderer in desk-scale runs. Identity geometry,
skin, hair and facial marks are derived from the identity id; eyebrow and iris
assets from their style ids, so swapping an asset changes only that face part.
Head rotation is an orthographic projection of points on a sphere; roll, scale
and translation are applied to the whole canvas, so similarity alignment can
undo them.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .align import LandmarkSet
from .sampler import SceneConfig
from .seeding import derive_seed, make_rng

CANVAS = 128
HEAD_RADIUS = 52.0
FACE_DEPTH = 30.0

SKIN = {
    "north-european": (0.93, 0.78, 0.68),
    "african": (0.45, 0.30, 0.22),
    "hispanic": (0.78, 0.60, 0.46),
    "mediterranean": (0.84, 0.66, 0.52),
    "southeast-asian": (0.88, 0.72, 0.55),
    "south-asian": (0.64, 0.46, 0.34),
}
IRIS = {
    "brown": (0.40, 0.24, 0.10),
    "dark-brown": (0.22, 0.13, 0.07),
    "hazel": (0.55, 0.45, 0.20),
    "amber": (0.75, 0.50, 0.15),
    "green": (0.25, 0.55, 0.30),
    "blue": (0.25, 0.45, 0.80),
    "gray": (0.55, 0.60, 0.65),
}
PERIOD = {
    "daytime": ((0.70, 0.80, 0.92), (1.0, 1.0, 1.0)),
    "evening": ((0.85, 0.55, 0.35), (1.05, 0.88, 0.72)),
    "night": ((0.10, 0.12, 0.25), (0.55, 0.60, 0.75)),
}
# (smile, mouth_open, brow_raise, eye_open, brow_tilt, mouth_width)
_NEUTRAL = (0.0, 0.0, 0.0, 1.0, 0.0, 1.0)
PRESET_SHAPES = {
    "neutral": _NEUTRAL,
    "happiness": (3.0, 1.0, 0.5, 0.8, 0.0, 1.1),
    "sadness": (-2.5, 0.0, 0.5, 0.9, 0.25, 0.95),
    "surprise": (0.0, 5.0, 3.0, 1.35, 0.0, 0.85),
    "anger": (-1.0, 0.5, -2.0, 0.9, -0.3, 1.0),
    "fear": (-0.5, 2.5, 2.0, 1.25, 0.2, 1.05),
    "contempt": (1.5, 0.0, 0.0, 0.95, 0.0, 1.0),
    "disgust": (-1.5, 0.5, -1.0, 0.75, -0.15, 0.95),
    "mouth-open": (0.0, 6.0, 0.5, 1.0, 0.0, 0.95),
}
EYE_AU_SHAPES = {"AU5": 1.35, "AU6": 0.8, "AU7": 0.7, "AU43": 0.1, "AU45": 0.2, "AU46": 0.55}
MOUTH_AU_SHAPES = {  # (smile, open, width)
    "AU10": (0.5, 1.5, 1.0), "AU12": (3.0, 0.5, 1.15), "AU15": (-3.0, 0.0, 1.0),
    "AU20": (0.0, 0.5, 1.25), "AU25": (0.0, 2.0, 1.0), "AU26": (0.0, 4.0, 0.95), "AU27": (0.0, 7.0, 0.9),
}


@dataclass(frozen=True)
class IdentityLook:
    face_rx: float
    face_ry: float
    eye_dx: float
    eye_y: float
    eye_rx: float
    eye_ry: float
    nose_len: float
    nose_w: float
    mouth_y: float
    mouth_w: float
    lip: tuple
    skin: tuple
    hair: tuple
    hairline: float
    cheek: tuple
    marks: tuple  # ((x, y, r, (rgb)), ...)


@dataclass(frozen=True)
class BrowAsset:
    thickness: float
    length: float
    slope: float
    arch: float
    gap: float
    darkness: float


@lru_cache(maxsize=100_000)
def identity_look(identity_id: int, ethnicity: str) -> IdentityLook:
    rng = make_rng(derive_seed("toyface", "identity", identity_id))
    base = np.array(SKIN.get(ethnicity, (0.75, 0.60, 0.50)))
    skin = tuple(np.clip(base + rng.normal(0, 0.06, 3), 0.05, 0.98))
    hair = tuple(np.clip(rng.uniform(0.03, 0.75) * np.array([1.0, rng.uniform(0.6, 0.9), rng.uniform(0.3, 0.7)])
                         + rng.normal(0, 0.04, 3), 0.0, 1.0))
    marks = []
    for _ in range(int(rng.integers(3, 6))):
        kind = rng.integers(3)
        color = ((0.25, 0.15, 0.10), (0.80, 0.25, 0.25), (0.95, 0.90, 0.85))[int(kind)]
        marks.append((float(rng.uniform(-24, 24)), float(rng.uniform(-30, 34)), float(rng.uniform(2.0, 4.5)),
                      tuple(np.clip(np.array(color) + rng.normal(0, 0.05, 3), 0, 1))))
    return IdentityLook(
        face_rx=float(rng.uniform(32, 39)),
        face_ry=float(rng.uniform(41, 48)),
        eye_dx=float(rng.uniform(13, 18)),
        eye_y=float(rng.uniform(-12, -6)),
        eye_rx=float(rng.uniform(4.5, 6.5)),
        eye_ry=float(rng.uniform(2.6, 3.8)),
        nose_len=float(rng.uniform(12, 19)),
        nose_w=float(rng.uniform(3.0, 6.5)),
        mouth_y=float(rng.uniform(19, 27)),
        mouth_w=float(rng.uniform(8, 14)),
        lip=tuple(np.clip(np.array([0.65, 0.30, 0.30]) + rng.normal(0, 0.08, 3), 0, 1)),
        skin=skin,
        hair=hair,
        hairline=float(rng.uniform(-40, -28)),
        cheek=tuple(np.clip(np.array(skin) + rng.normal(0, 0.12, 3), 0, 1)),
        marks=tuple(marks),
    )


@lru_cache(maxsize=4096)
def brow_asset(style: int) -> BrowAsset:
    rng = make_rng(derive_seed("toyface", "brow", style))
    return BrowAsset(
        thickness=float(rng.uniform(1.8, 5.0)),
        length=float(rng.uniform(9, 16)),
        slope=float(rng.uniform(-0.3, 0.3)),
        arch=float(rng.uniform(-1.0, 4.0)),
        gap=float(rng.uniform(4.5, 9.0)),
        darkness=float(rng.uniform(0.15, 0.7)),
    )


def _iris_pattern(texture: int) -> tuple[float, int]:
    rng = make_rng(derive_seed("toyface", "iris", texture))
    return float(rng.uniform(0.35, 0.6)), int(rng.integers(3, 9))


class _Canvas:
    """Face-plane painter; primitives are evaluated only inside their canvas bounding box."""

    def __init__(self, size: int, u: np.ndarray, v: np.ndarray, to_canvas):
        self.size = size
        self.img = np.zeros((size, size, 3), dtype=np.float32)
        self.u, self.v = u, v
        self.to_canvas = to_canvas  # (x, y, radius) in face plane -> (cx, cy, r) in pixels

    def _window(self, x, y, radius):
        cx, cy, r = self.to_canvas(x, y, radius + 2.0)
        x0, x1 = max(int(cx - r), 0), min(int(cx + r) + 2, self.size)
        y0, y1 = max(int(cy - r), 0), min(int(cy + r) + 2, self.size)
        return np.s_[y0:max(y1, y0), x0:max(x1, x0)]

    def paint(self, alpha: np.ndarray, color) -> None:
        alpha = np.asarray(alpha, dtype=np.float32)
        rows = np.flatnonzero(alpha.any(axis=1))
        if rows.size == 0:
            return
        cols = np.flatnonzero(alpha.any(axis=0))
        w = np.s_[rows[0]:rows[-1] + 1, cols[0]:cols[-1] + 1]
        a = np.clip(alpha[w], 0.0, 1.0)[..., None]
        self.img[w] = self.img[w] * (1 - a) + a * np.asarray(color, dtype=np.float32)

    def ellipse(self, cx, cy, rx, ry) -> np.ndarray:
        rx, ry = max(rx, 0.3), max(ry, 0.3)
        out = np.zeros(self.u.shape, dtype=np.float32)
        w = self._window(cx, cy, max(rx, ry))
        u, v = self.u[w], self.v[w]
        d = np.sqrt(((u - cx) / rx) ** 2 + ((v - cy) / ry) ** 2)
        out[w] = np.clip((1.0 - d) * min(rx, ry) + 0.5, 0.0, 1.0)
        return out

    def polyline(self, pts, thickness) -> np.ndarray:
        xs_ = [p[0] for p in pts]
        ys_ = [p[1] for p in pts]
        mx, my = (min(xs_) + max(xs_)) / 2, (min(ys_) + max(ys_)) / 2
        radius = math.hypot(max(xs_) - min(xs_), max(ys_) - min(ys_)) / 2 + thickness
        w = self._window(mx, my, radius)
        u, v = self.u[w], self.v[w]
        best = np.full(u.shape, np.inf, dtype=np.float32)
        for (x0, y0), (x1, y1) in zip(pts[:-1], pts[1:]):
            dx, dy = x1 - x0, y1 - y0
            length2 = dx * dx + dy * dy or 1e-9
            t = np.clip(((u - x0) * dx + (v - y0) * dy) / length2, 0, 1)
            best = np.minimum(best, np.hypot(u - (x0 + t * dx), v - (y0 + t * dy)))
        out = np.zeros(self.u.shape, dtype=np.float32)
        out[w] = np.clip(thickness / 2 - best + 0.5, 0.0, 1.0)
        return out


def _expression_shape(scene: SceneConfig):
    ex = scene.expression
    if ex.preset is not None:
        shape = PRESET_SHAPES.get(ex.preset, _NEUTRAL)
        eye_left = eye_right = shape[3]
        smile, open_, raise_, tilt, width = shape[0], shape[1], shape[2], shape[4], shape[5]
        asym = 1.0 if ex.preset == "contempt" else 0.0
    else:
        smile, open_, raise_, tilt, width, asym = 0.0, 0.0, 0.0, 0.0, 1.0, 0.0
        eye_left = eye_right = 1.0
        if ex.eye_au is not None:
            eye_left = eye_right = EYE_AU_SHAPES.get(ex.eye_au, 1.0)
            if ex.eye_au == "AU46":
                eye_left, eye_right = 1.0, 0.1
        if ex.mouth_au is not None:
            smile, open_, width = MOUTH_AU_SHAPES.get(ex.mouth_au, (0.0, 0.0, 1.0))
    k = scene.expression_intensity

    def lerp(neutral, value):
        return neutral + k * (value - neutral)

    return {
        "smile": lerp(0, smile), "open": lerp(0, open_), "raise": lerp(0, raise_), "tilt": lerp(0, tilt),
        "width": lerp(1, width), "asym": asym, "eye_l": lerp(1, eye_left), "eye_r": lerp(1, eye_right),
    }


def render(scene: SceneConfig, size: int = CANVAS) -> tuple[np.ndarray, LandmarkSet]:
    """Render one scene to a uint8 (size, size, 3) image and its 5 landmarks."""
    ident = scene.identity
    look = identity_look(ident.identity_id, ident.ethnicity)
    brow = brow_asset(ident.eyebrow_style)
    jit = make_rng(derive_seed("toyface", "scene", scene.seed))
    cam_scale = float(jit.uniform(0.92, 1.08)) * size / CANVAS
    cam_shift = jit.uniform(-5, 5, size=2) * size / CANVAS
    accessory_rng = make_rng(derive_seed("toyface", "accessory", scene.seed))

    yaw = math.radians(max(-75.0, min(75.0, scene.head_pose.yaw + scene.camera_pose.yaw)))
    pitch = math.radians(max(-60.0, min(60.0, scene.head_pose.pitch + scene.camera_pose.pitch)))
    roll = math.radians(scene.head_pose.roll + scene.camera_pose.roll)
    cy_, sy_, cp, sp = math.cos(yaw), math.sin(yaw), math.cos(pitch), math.sin(pitch)

    def project(x, y, dz=0.0):
        # depth relative to the face plane, so frontal features sit where they were drawn
        z = math.sqrt(max(HEAD_RADIUS**2 - x * x - y * y, 0.0)) - FACE_DEPTH + dz
        return x * cy_ + z * sy_, y * cp - z * sp

    # canvas pixel -> face-plane coordinates (inverse of roll/scale/shift)
    center = np.array([size / 2.0, size / 2.0 + 2.0 * size / CANVAS]) + cam_shift
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float32)
    px, py = xs - center[0], ys - center[1]
    cr, sr = math.cos(-roll), math.sin(-roll)
    u = (cr * px - sr * py) / cam_scale
    v = (sr * px + cr * py) / cam_scale

    def to_canvas(x, y, r):
        c, s_ = math.cos(roll), math.sin(roll)
        return center[0] + cam_scale * (c * x - s_ * y), center[1] + cam_scale * (s_ * x + c * y), r * cam_scale

    cv = _Canvas(size, u, v, to_canvas)

    # background: period colour with a low-frequency pattern turned by the HDRI rotation
    bg, tint = PERIOD.get(scene.hdri_period, PERIOD["daytime"])
    rot = math.radians(scene.hdri_rotation)
    grad = (np.cos(rot) * xs + np.sin(rot) * ys) / size - 0.5
    pattern = 0.08 * np.sin(xs * 0.11 + 2 * rot) * np.cos(ys * 0.07 - rot)
    cv.img[:] = np.clip(np.asarray(bg) * (1 + 0.5 * grad[..., None]) + pattern[..., None], 0, 1)

    shape = _expression_shape(scene)
    hair_mod = scene.hair_color
    hair = np.asarray(look.hair) * (2.0 - hair_mod.melanin)
    hair = hair + (1 - hair) * 0.3 * (hair_mod.whiteness - 0.75)
    hair = np.clip(hair * np.array([1 + 0.3 * (hair_mod.redness - 1), 1, 1]), 0, 1)

    # head, hair, face
    fx, fy = project(0.0, 0.0, dz=FACE_DEPTH - HEAD_RADIUS + 12.0)
    cv.paint(cv.ellipse(fx * 0.5, fy * 0.5 - 4, look.face_rx + 7, look.face_ry + 9), hair)
    cv.paint(cv.ellipse(fx, fy, look.face_rx * (0.9 + 0.1 * cy_), look.face_ry), look.skin)
    hx, hy = project(0.0, look.hairline - 18)
    cap = cv.ellipse(hx * 0.5, hy, look.face_rx + 4, 20) * (v < project(0.0, look.hairline)[1])
    cv.paint(cap, hair)
    texture = 0.04 * (hair_mod.roughness - 0.75) * np.sin(u * 1.7) * np.sin(v * 1.3)
    cv.img = np.clip(cv.img + (cap[..., None] * texture[..., None]), 0, 1)

    for sign in (-1, 1):
        cx, cyy = project(sign * (look.eye_dx + 4), look.mouth_y - 10)
        cv.paint(0.6 * cv.ellipse(cx, cyy, 7 * max(cy_, 0.3), 5), look.cheek)
    for x, y, r, color in look.marks:
        mx, my = project(x, y)
        vis = 1.0 if abs(math.atan2(mx, HEAD_RADIUS)) < 1.2 else 0.0
        cv.paint(vis * cv.ellipse(mx, my, r * max(cy_, 0.35), r), color)

    if scene.accessories.beard:
        bx, by = project(0.0, look.mouth_y + 6)
        noise = make_rng(derive_seed("toyface", "beard", ident.identity_id)).uniform(0.85, 1.0, (size, size))
        area = cv.ellipse(bx, by, look.face_rx * 0.85, look.face_ry * 0.45) * (v > by - 12)
        cv.paint(area * noise, hair * 0.6)

    # eyes
    eye_pts = []
    gx, gy = scene.gaze.horizontal * 3.0, (scene.gaze.vertical - 0.925) * 10.0
    iris_frac, spokes = _iris_pattern(ident.iris_texture)
    iris = np.asarray(IRIS.get(ident.eye_color, IRIS["brown"]))
    for sign, openness in ((-1, shape["eye_l"]), (1, shape["eye_r"])):
        ex, ey = project(sign * look.eye_dx, look.eye_y, dz=-2.0)
        eye_pts.append((ex, ey))
        erx, ery = look.eye_rx * max(cy_, 0.3), look.eye_ry * max(openness, 0.05)
        if scene.accessories.makeup:
            cv.paint(0.7 * cv.ellipse(ex, ey - 2.5, erx * 1.2, ery + 2.5), (0.45, 0.25, 0.55))
        white = cv.ellipse(ex, ey, erx, ery)
        cv.paint(white, (0.96, 0.96, 0.94))
        ix, iy = ex + gx * max(cy_, 0.3), ey + gy
        ir = min(look.eye_ry * 0.9, erx * 0.7)
        ang = np.arctan2(v - iy, u - ix)
        ring = iris * (0.85 + 0.15 * np.cos(spokes * ang))[..., None]
        a = cv.ellipse(ix, iy, ir, ir) * white
        cv.img = cv.img * (1 - a[..., None]) + a[..., None] * ring
        cv.paint(cv.ellipse(ix, iy, ir * iris_frac, ir * iris_frac) * white, (0.03, 0.03, 0.03))
        # eyebrow
        bx0 = sign * (look.eye_dx - brow.length / 2)
        bx1 = sign * (look.eye_dx + brow.length / 2)
        base = look.eye_y - brow.gap - shape["raise"]
        tilt = brow.slope + shape["tilt"]
        pts = []
        for t in np.linspace(0, 1, 5):
            xx = bx0 + t * (bx1 - bx0)
            yy = base - brow.arch * math.sin(math.pi * t) + tilt * (t - 0.5) * brow.length
            pts.append(project(xx, yy))
        cv.paint(cv.polyline(pts, brow.thickness), hair * brow.darkness)

    if scene.accessories.glasses:
        for ex, ey in eye_pts:
            r = look.eye_rx + 3.5
            ring = np.clip(cv.ellipse(ex, ey, r * max(cy_, 0.3), r * 0.8)
                           - cv.ellipse(ex, ey, (r - 1.6) * max(cy_, 0.3), r * 0.8 - 1.6), 0, 1)
            cv.paint(ring, (0.08, 0.08, 0.1))
        cv.paint(cv.polyline([eye_pts[0], eye_pts[1]], 1.2) * (np.abs(u - (eye_pts[0][0] + eye_pts[1][0]) / 2) < 6),
                 (0.08, 0.08, 0.1))

    # nose
    nx, ny = project(0.0, look.eye_y + look.nose_len, dz=look.nose_len * 0.6)
    top = project(0.0, look.eye_y + 3)
    skin = np.asarray(look.skin)
    cv.paint(cv.polyline([top, (nx, ny)], look.nose_w * 0.7), skin * 0.85)
    cv.paint(cv.ellipse(nx, ny, look.nose_w * max(cy_, 0.4), look.nose_w * 0.55), skin * 0.7)

    # mouth
    half = look.mouth_w * shape["width"]
    left = project(-half, look.mouth_y - shape["smile"] - shape["asym"] * 1.5)
    right = project(half, look.mouth_y - shape["smile"] + shape["asym"] * 1.5)
    mid = project(0.0, look.mouth_y + 0.5 * shape["smile"])
    lip = (0.80, 0.12, 0.18) if scene.accessories.makeup else look.lip
    if shape["open"] > 0.3:
        mx, my = project(0.0, look.mouth_y + shape["open"] / 2)
        cv.paint(cv.ellipse(mx, my, half * 0.8 * max(cy_, 0.3), shape["open"] / 2 + 1), (0.2, 0.05, 0.05))
    cv.paint(cv.polyline([left, mid, right], 2.8), lip)

    if scene.accessories.hat:
        color = accessory_rng.uniform(0.05, 0.95, 3)
        brim_y = project(0.0, look.hairline + 2)[1]
        cv.paint(cv.ellipse(0, brim_y - 14, look.face_rx + 14, 22) * (v < brim_y), color)
        cv.paint(cv.polyline([(-look.face_rx - 12, brim_y), (look.face_rx + 12, brim_y)], 4.0), color * 0.7)
    if scene.accessories.occlusion:
        ox = float(accessory_rng.uniform(-20, 20))
        oy = float(accessory_rng.uniform(-5, 30))
        w, h = float(accessory_rng.uniform(10, 20)), float(accessory_rng.uniform(8, 16))
        box = np.clip(np.minimum(w - np.abs(u - ox), h - np.abs(v - oy)) + 0.5, 0, 1).astype(np.float32)
        cv.paint(box, accessory_rng.uniform(0.2, 0.9, 3))

    cv.img = np.clip(cv.img * np.asarray(tint, dtype=np.float32), 0, 1)
    # directional light from the HDRI rotation, on the face only
    shade = 1.0 + 0.18 * np.clip((np.cos(rot) * u + np.sin(rot) * v) / look.face_rx, -1.5, 1.5)
    face = cv.ellipse(fx, fy, look.face_rx, look.face_ry)
    cv.img = np.clip(cv.img * (1 + (shade - 1) * face)[..., None], 0, 1)

    plane = [eye_pts[0], eye_pts[1], (nx, ny), left, right]
    c, s = math.cos(roll), math.sin(roll)
    lm = np.array([[center[0] + cam_scale * (c * x - s * y), center[1] + cam_scale * (s * x + c * y)] for x, y in plane])
    return (cv.img * 255 + 0.5).astype(np.uint8), LandmarkSet(lm)
