"""Procedural sharp images, trajectory blur kernels, and flip/rotate augmentation.

Sharp images mix a smooth gradient background with rectangles, ellipses
and line strokes, so there is content at every frequency. Blur kernels are
bent random walks: a point moves ``length`` pixels starting along
``orientation``, turning by ``curvature`` radians per pixel plus a small
jitter, and the visited positions are splatted bilinearly onto a grid.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import convolve

NOISE_SIGMA_MAX = 0.02
AUGMENTATIONS = ("identity", "flip_h", "flip_v", "rot90", "rot180", "rot270")
BLUR_LENGTH_RANGE = (5.0, 9.0)
CURVATURE_MAX = 0.05


@dataclass(frozen=True)
class BlurSpec:
    length: float
    orientation: float
    curvature: float = 0.0
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.length < 1:
            raise ValueError(f"trajectory length must be >= 1, got {self.length}")
        if not 0.0 <= self.noise_sigma <= NOISE_SIGMA_MAX:
            raise ValueError(f"noise sigma must lie in [0, {NOISE_SIGMA_MAX}]")


def trajectory_kernel(spec: BlurSpec) -> np.ndarray:
    """Nonnegative, unit-sum, odd-sized square kernel for ``spec``.

    A length of exactly 1 gives a single-pixel delta.
    """
    rng = np.random.default_rng(spec.seed)
    n_pts = max(2, int(math.ceil(spec.length * 4)))
    step = spec.length / (n_pts - 1) if spec.length > 1 else 0.0
    angle = spec.orientation
    pts = np.zeros((n_pts, 2))
    for i in range(1, n_pts):
        angle += (spec.curvature + rng.normal(0.0, 0.05)) * step
        pts[i] = pts[i - 1] + step * np.array([math.sin(angle), math.cos(angle)])
    pts -= pts.mean(axis=0)
    half = int(math.ceil(np.abs(pts).max())) + 1
    size = 2 * half + 1
    k = np.zeros((size, size))
    for y, x in pts + half:
        y0, x0 = int(math.floor(y)), int(math.floor(x))
        fy, fx = y - y0, x - x0
        k[y0, x0] += (1 - fy) * (1 - fx)
        k[y0, x0 + 1] += (1 - fy) * fx
        k[y0 + 1, x0] += fy * (1 - fx)
        k[y0 + 1, x0 + 1] += fy * fx
    if spec.length == 1:
        k = np.zeros((1, 1))
        k[0, 0] = 1.0
    return k / k.sum()


def blur(image: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Convolve each channel of a (C, H, W) image with reflected borders."""
    return np.stack([convolve(ch, kernel, mode="reflect") for ch in image])


def degrade(sharp: np.ndarray, spec: BlurSpec) -> np.ndarray:
    """Blur, add Gaussian noise and clamp to [0, 1]."""
    out = blur(sharp.astype(np.float64), trajectory_kernel(spec))
    if spec.noise_sigma > 0:
        out = out + np.random.default_rng([spec.seed, 1]).normal(0.0, spec.noise_sigma, out.shape)
    return np.clip(out, 0.0, 1.0)


def _ellipse_mask(yy, xx, rng, size):
    cy, cx = rng.uniform(0, size, 2)
    ry, rx = rng.uniform(size / 16, size / 3, 2)
    t = rng.uniform(0, math.pi)
    dy, dx = yy - cy, xx - cx
    u = dy * math.cos(t) + dx * math.sin(t)
    v = -dy * math.sin(t) + dx * math.cos(t)
    return (u / ry) ** 2 + (v / rx) ** 2 <= 1.0


def _stroke_mask(yy, xx, rng, size):
    p, q = rng.uniform(0, size, (2, 2))
    width = rng.uniform(0.6, 2.5)
    d = q - p
    t = np.clip(((yy - p[0]) * d[0] + (xx - p[1]) * d[1]) / max(float(d @ d), 1e-9), 0, 1)
    dist = np.hypot(yy - (p[0] + t * d[0]), xx - (p[1] + t * d[1]))
    return dist <= width


def sharp_image(size: int, rng: np.random.Generator) -> np.ndarray:
    """One (3, size, size) procedural image in [0, 1]."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    g = rng.uniform(-1, 1, 2)
    ramp = (g[0] * yy + g[1] * xx) / size
    lo, hi = rng.uniform(0, 1, (2, 3))
    img = lo[:, None, None] + (hi - lo)[:, None, None] * (ramp - ramp.min()) / max(np.ptp(ramp), 1e-9)
    for _ in range(int(rng.integers(6, 14))):
        kind = rng.integers(3)
        if kind == 0:
            y0, x0 = rng.integers(0, size - 4, 2)
            h, w = rng.integers(4, size // 2 + 1, 2)
            mask = (yy >= y0) & (yy < y0 + h) & (xx >= x0) & (xx < x0 + w)
        elif kind == 1:
            mask = _ellipse_mask(yy, xx, rng, size)
        else:
            mask = _stroke_mask(yy, xx, rng, size)
        img[:, mask] = rng.uniform(0, 1, 3)[:, None]
    return np.clip(img, 0.0, 1.0)


def random_blur_spec(rng: np.random.Generator, noise_sigma: float) -> BlurSpec:
    """Moderate, nearly straight blurs in any direction.

    Wider length or curvature ranges make the per-image blur much harder to
    infer, and a small network trained on a few hundred images then mostly
    memorizes its training pairs.
    """
    return BlurSpec(length=float(rng.uniform(*BLUR_LENGTH_RANGE)),
                    orientation=float(rng.uniform(0, math.pi)),
                    curvature=float(rng.uniform(-CURVATURE_MAX, CURVATURE_MAX)),
                    noise_sigma=noise_sigma,
                    seed=int(rng.integers(2 ** 31)))


def synth_dataset(n: int, size: int, seed: int, noise_sigma: float = 0.01,
                  divisor: int = 8) -> list[tuple[np.ndarray, np.ndarray]]:
    """``n`` float32 (blurred, sharp) pairs of shape (3, size, size)."""
    if size % divisor:
        raise ValueError(f"image size {size} is not divisible by {divisor}")
    pairs = []
    for child in np.random.SeedSequence(seed).spawn(n):
        rng = np.random.default_rng(child)
        sharp = sharp_image(size, rng)
        blurred = degrade(sharp, random_blur_spec(rng, noise_sigma))
        pairs.append((blurred.astype(np.float32), sharp.astype(np.float32)))
    return pairs


def apply_augmentation(img: np.ndarray, name: str) -> np.ndarray:
    if name in ("rot90", "rot180", "rot270") and img.shape[-1] != img.shape[-2]:
        raise ValueError(f"rotation needs a square image, got {img.shape[-2]}x{img.shape[-1]}")
    if name == "identity":
        out = img
    elif name == "flip_h":
        out = img[..., ::-1]
    elif name == "flip_v":
        out = img[..., ::-1, :]
    elif name.startswith("rot"):
        out = np.rot90(img, int(name[3:]) // 90, axes=(-2, -1))
    else:
        raise ValueError(f"unknown augmentation {name!r}")
    return np.ascontiguousarray(out)


def augment(pair, seed) -> tuple[np.ndarray, np.ndarray]:
    """Apply one randomly chosen flip or rotation to both images of a pair."""
    name = AUGMENTATIONS[int(np.random.default_rng(seed).integers(len(AUGMENTATIONS)))]
    return tuple(apply_augmentation(img, name) for img in pair)
