"""RGB image read/write (PNG/JPEG via OpenCV, which stores BGR)."""
from __future__ import annotations

import os
import tempfile
from pathlib import Path

import cv2
import numpy as np

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg", ".bmp")


def read_image(path) -> np.ndarray:
    img = cv2.imread(str(path), cv2.IMREAD_COLOR)
    if img is None:
        raise FileNotFoundError(f"cannot read image {path}")
    return cv2.cvtColor(img, cv2.COLOR_BGR2RGB)


def write_image(path, image: np.ndarray) -> Path:
    """Atomic write of a uint8 RGB image."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    img = np.asarray(image)
    if img.dtype != np.uint8:
        raise ValueError("write_image expects uint8 pixels")
    ok, buf = cv2.imencode(path.suffix or ".png", cv2.cvtColor(img, cv2.COLOR_RGB2BGR))
    if not ok:
        raise OSError(f"cannot encode image for {path}")
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    with os.fdopen(fd, "wb") as fh:
        fh.write(buf.tobytes())
    os.replace(tmp, path)
    return path


def find_image(root, stem: str) -> Path:
    """``root/stem.<ext>`` for the first known extension that exists."""
    root = Path(root)
    for ext in IMAGE_EXTENSIONS:
        p = root / f"{stem}{ext}"
        if p.exists():
            return p
    raise FileNotFoundError(f"no image for {stem!r} under {root}")
