"""Page-to-line imaging pipeline.

Grayscale conversion, Otsu binarization, deskew, projection-profile line
segmentation, and bicubic resize to the fixed 760x80 line geometry.

Conventions: grayscale arrays are uint8 [0,255]; binary arrays contain only
{0 = ink, 255 = background}; prepared line images are float arrays in [0,1]
with ink near 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

LINE_WIDTH = 760
LINE_HEIGHT = 80

INK = 0
BACKGROUND = 255


class ImageError(ValueError):
    pass


@dataclass(frozen=True)
class LineBox:
    """Pixel rectangle of one text line within a page image."""

    x: int
    y: int
    width: int
    height: int

    def validate_within(self, page_w: int, page_h: int) -> None:
        if (
            self.x < 0
            or self.y < 0
            or self.width < 1
            or self.height < 1
            or self.x + self.width > page_w
            or self.y + self.height > page_h
        ):
            raise ImageError(
                f"box {self} outside page bounds {page_w}x{page_h}"
            )


def to_grayscale(img: np.ndarray) -> np.ndarray:
    """Luminance conversion 0.299R + 0.587G + 0.114B, rounded to nearest."""
    if img.ndim == 2:
        return np.ascontiguousarray(img, dtype=np.uint8)
    if img.ndim == 3 and img.shape[2] == 3:
        weights = np.array([0.299, 0.587, 0.114])
        lum = img.astype(np.float64) @ weights
        return np.rint(lum).clip(0, 255).astype(np.uint8)
    raise ImageError(f"unsupported channel count: shape {img.shape}")


def otsu_threshold(img: np.ndarray) -> int:
    """Threshold maximizing between-class variance over the 256-bin histogram.

    Returns -1 for zero-variance (constant) images.
    """
    hist = np.bincount(img.ravel(), minlength=256).astype(np.float64)
    total = hist.sum()
    if np.count_nonzero(hist) <= 1:
        return -1
    omega = np.cumsum(hist) / total          # class-0 mass for t = 0..255
    mu = np.cumsum(hist * np.arange(256)) / total
    mu_total = mu[-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        sigma_b = (mu_total * omega - mu) ** 2 / (omega * (1.0 - omega))
    sigma_b = np.nan_to_num(sigma_b, nan=-1.0, posinf=-1.0, neginf=-1.0)
    return int(np.argmax(sigma_b))


def otsu_binarize(img: np.ndarray) -> np.ndarray:
    """Binarize; pixels <= threshold become ink. Constant input -> background."""
    t = otsu_threshold(img)
    if t < 0:
        return np.full_like(img, BACKGROUND)
    out = np.where(img <= t, INK, BACKGROUND).astype(np.uint8)
    return out


def _rotate_bilinear(img: np.ndarray, angle_deg: float, fill: float) -> np.ndarray:
    """Rotate about the image center with bilinear resampling."""
    h, w = img.shape
    theta = math.radians(angle_deg)
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    # Inverse map: destination -> source.
    dx, dy = xs - cx, ys - cy
    sx = cos_t * dx + sin_t * dy + cx
    sy = -sin_t * dx + cos_t * dy + cy
    x0 = np.floor(sx).astype(np.int64)
    y0 = np.floor(sy).astype(np.int64)
    fx, fy = sx - x0, sy - y0

    def sample(yy, xx):
        inside = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
        vals = np.full(yy.shape, fill, dtype=np.float64)
        vals[inside] = img[yy[inside], xx[inside]]
        return vals

    v00 = sample(y0, x0)
    v01 = sample(y0, x0 + 1)
    v10 = sample(y0 + 1, x0)
    v11 = sample(y0 + 1, x0 + 1)
    top = v00 * (1 - fx) + v01 * fx
    bot = v10 * (1 - fx) + v11 * fx
    return top * (1 - fy) + bot * fy


def _profile_variance(binary: np.ndarray) -> float:
    ink_per_row = (binary == INK).sum(axis=1).astype(np.float64)
    return float(np.var(ink_per_row))


def deskew(img: np.ndarray, max_angle: float = 5.0) -> tuple[np.ndarray, float]:
    """Find the rotation in [-max_angle, +max_angle] (0.25 deg steps) that
    maximizes the variance of the horizontal ink-projection profile."""
    if not 0 < max_angle <= 15:
        raise ImageError("max_angle must be in (0, 15]")
    if not (img == INK).any():
        return img.copy(), 0.0
    steps = int(round(max_angle / 0.25))
    # Visit small rotations first so ties resolve to the least correction.
    angles = sorted((i * 0.25 for i in range(-steps, steps + 1)), key=abs)
    best_angle, best_var = 0.0, -1.0
    for ang in angles:
        if ang == 0.0:
            rotated = img.astype(np.float64)
        else:
            rotated = _rotate_bilinear(img.astype(np.float64), ang, BACKGROUND)
        candidate = np.where(rotated < 128, INK, BACKGROUND).astype(np.uint8)
        var = _profile_variance(candidate)
        if var > best_var + 1e-9:
            best_var, best_angle = var, ang
    if best_angle == 0.0:
        return img.copy(), 0.0
    rotated = _rotate_bilinear(img.astype(np.float64), best_angle, BACKGROUND)
    return np.where(rotated < 128, INK, BACKGROUND).astype(np.uint8), best_angle


def segment_lines(
    img: np.ndarray, min_gap: int = 3, min_height: int = 8
) -> list[LineBox]:
    """Projection-profile segmentation into top-to-bottom line boxes."""
    if min_gap < 1 or min_height < 1:
        raise ImageError("min_gap and min_height must be >= 1")
    h, w = img.shape
    ink_per_row = (img == INK).sum(axis=1)
    noise_floor = max(2, int(0.005 * w))
    is_text = ink_per_row > noise_floor

    # Merge text runs separated by fewer than min_gap blank rows.
    runs: list[list[int]] = []
    row = 0
    while row < h:
        if is_text[row]:
            start = row
            while row < h and is_text[row]:
                row += 1
            if runs and start - runs[-1][1] < min_gap:
                runs[-1][1] = row
            else:
                runs.append([start, row])
        else:
            row += 1

    boxes = []
    for start, end in runs:
        if end - start < min_height:
            continue
        band = img[start:end]
        ink_cols = np.where((band == INK).any(axis=0))[0]
        if ink_cols.size == 0:
            continue
        x0 = max(0, int(ink_cols[0]) - 2)
        x1 = min(w, int(ink_cols[-1]) + 1 + 2)
        boxes.append(LineBox(x=x0, y=start, width=x1 - x0, height=end - start))
    return boxes


def _cubic_kernel(t: np.ndarray, a: float = -0.5) -> np.ndarray:
    """Keys cubic convolution kernel with parameter a."""
    at = np.abs(t)
    at2, at3 = at * at, at * at * at
    out = np.zeros_like(at)
    near = at <= 1
    out[near] = ((a + 2) * at3 - (a + 3) * at2 + 1)[near]
    mid = (at > 1) & (at < 2)
    out[mid] = (a * at3 - 5 * a * at2 + 8 * a * at - 4 * a)[mid]
    return out


def _resize_axis(data: np.ndarray, out_len: int, axis: int) -> np.ndarray:
    """Separable cubic resampling along one axis with edge clamping."""
    in_len = data.shape[axis]
    if out_len == in_len:
        return data
    scale = in_len / out_len
    centers = (np.arange(out_len) + 0.5) * scale - 0.5
    base = np.floor(centers).astype(np.int64)
    # 4 taps at base-1 .. base+2, clamped to valid indices.
    taps = base[:, None] + np.arange(-1, 3)[None, :]
    weights = _cubic_kernel(centers[:, None] - taps)
    # Renormalize away float error so constant inputs stay exactly constant.
    weights /= weights.sum(axis=1, keepdims=True)
    taps = np.clip(taps, 0, in_len - 1)
    moved = np.moveaxis(data, axis, 0)
    gathered = moved[taps]            # (out_len, 4, ...)
    result = np.einsum("ot,ot...->o...", weights, gathered)
    return np.moveaxis(result, 0, axis)


def bicubic_resize(img: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    """Catmull-Rom-family bicubic resize (a = -0.5), edge-clamped, [0,255]."""
    if out_w < 1 or out_h < 1:
        raise ImageError("output dimensions must be >= 1")
    data = img.astype(np.float64)
    data = _resize_axis(data, out_h, axis=0)
    data = _resize_axis(data, out_w, axis=1)
    return np.clip(data, 0.0, 255.0)


def prepare_line(page: np.ndarray, box: LineBox) -> np.ndarray:
    """Crop -> Otsu binarize -> bicubic resize to 760x80 -> [0,1] floats
    with ink mapped to 1.0."""
    h, w = page.shape
    box.validate_within(w, h)
    crop = page[box.y:box.y + box.height, box.x:box.x + box.width]
    binary = otsu_binarize(crop)
    # Resample the ink mask (not the background) so inkless crops stay
    # exactly zero under float resampling.
    ink = np.where(binary == INK, np.uint8(255), np.uint8(0))
    resized = bicubic_resize(ink, LINE_WIDTH, LINE_HEIGHT)
    return resized / 255.0


def load_page_array(im) -> np.ndarray:
    """Convert an opened PIL image to a grayscale uint8 array."""
    if im.mode == "L":
        arr = np.asarray(im)
    elif im.mode in ("1", "I;16", "I"):
        arr = np.asarray(im.convert("L"))
    else:
        return to_grayscale(np.asarray(im.convert("RGB")))
    return np.ascontiguousarray(arr, dtype=np.uint8)


def load_page_image(path) -> np.ndarray:
    """Load a PNG/JPEG/TIFF page image as grayscale."""
    from PIL import Image

    with Image.open(path) as im:
        return load_page_array(im)
