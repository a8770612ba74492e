"""Hand-drawn raster simulation, precise rasterization, affine augmentation.

Strokes are wobbled by a zero-mean Gaussian process with a Matern-3/2
kernel, pinned to zero at stroke endpoints (a bridge) so strokes stay
connected at junctions.  Lines get the GP as an orthogonal offset; circles
and arcs get it as a radius modulation over angle.  Each primitive also
receives a small random rigid perturbation.

Images are 128x128 grayscale ink maps: 0 is blank paper, 1 is full ink.
PNG files store the usual white-paper convention (255 - 255*ink).
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, replace

import numpy as np
from PIL import Image

from .core import PrimitiveKind, Sketch, arc_angles

__all__ = [
    "NoiseConfig",
    "RasterImage",
    "AffineAugment",
    "NumericalFailure",
    "BadShape",
    "IMAGE_SIZE",
    "matern32_kernel",
    "matern32_path",
    "rasterize_sketch",
    "simulate_hand_drawing",
    "render_hand_variants",
    "apply_affine",
    "warp_affine",
    "patchify",
]

IMAGE_SIZE = 128
_MARGIN_FRAC = 0.10  # keep strokes away from the border so noise rarely clips
_SAMPLE_STEP_PX = 0.75
_DASH_ON_PX = 4.0
_DASH_OFF_PX = 3.0


class NumericalFailure(RuntimeError):
    """Covariance factorization failed even after jitter escalation."""


class BadShape(ValueError):
    """Image does not have the expected 128x128 shape."""


@dataclass(frozen=True)
class NoiseConfig:
    matern_lengthscale_frac: float = 0.25
    amplitude_px: float = 1.5
    translate_sigma_px: float = 2.0
    rotate_sigma_deg: float = 2.0
    jitter: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.matern_lengthscale_frac <= 0 or self.jitter <= 0:
            raise ValueError("lengthscale fraction and jitter must be positive")
        if self.amplitude_px < 0 or self.translate_sigma_px < 0 or self.rotate_sigma_deg < 0:
            raise ValueError("noise magnitudes must be non-negative")


@dataclass(frozen=True)
class AffineAugment:
    translate_px: float = 8.0
    rotate_deg: float = 10.0
    shear_deg: float = 10.0
    scale: tuple[float, float] = (0.8, 1.2)

    def __post_init__(self):
        if not (0 <= self.translate_px <= 8 and 0 <= self.rotate_deg <= 10 and 0 <= self.shear_deg <= 10):
            raise ValueError("augment bounds exceed the supported ranges")
        lo, hi = self.scale
        if not (0.8 <= lo <= hi <= 1.2):
            raise ValueError("scale bounds must lie within [0.8, 1.2]")


@dataclass(frozen=True)
class RasterImage:
    pixels: np.ndarray  # (128, 128) float64 ink in [0, 1]

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.shape != (IMAGE_SIZE, IMAGE_SIZE):
            raise BadShape(f"expected {IMAGE_SIZE}x{IMAGE_SIZE}, got {px.shape}")
        object.__setattr__(self, "pixels", px)

    def to_png_bytes(self) -> bytes:
        arr = np.clip((1.0 - self.pixels) * 255.0, 0, 255).round().astype(np.uint8)
        buf = io.BytesIO()
        Image.fromarray(arr, mode="L").save(buf, format="PNG")
        return buf.getvalue()

    @classmethod
    def from_png_bytes(cls, data: bytes) -> "RasterImage":
        arr = np.asarray(Image.open(io.BytesIO(data)).convert("L"), dtype=np.float64)
        return cls(1.0 - arr / 255.0)


# ---------------------------------------------------------------------------
# Matern-3/2 Gaussian process paths
# ---------------------------------------------------------------------------

def matern32_kernel(r, amplitude: float, lengthscale: float):
    """k(r) = a^2 (1 + sqrt(3) r / l) exp(-sqrt(3) r / l)."""
    q = math.sqrt(3.0) * np.abs(r) / lengthscale
    return amplitude**2 * (1.0 + q) * np.exp(-q)


def _cholesky_with_jitter(K: np.ndarray, jitter: float) -> np.ndarray:
    j = jitter
    while j <= 1e-4:
        try:
            return np.linalg.cholesky(K + j * np.eye(len(K)))
        except np.linalg.LinAlgError:
            j *= 10
    raise NumericalFailure(
        f"covariance factorization failed at jitter {j:g} (n={len(K)})"
    )


def matern32_path(
    n: int,
    length: float,
    cfg: NoiseConfig,
    rng: np.random.Generator | None = None,
    bridge: bool = True,
    size: int | None = None,
):
    """Draw GP offsets on a uniform grid of n points spanning [0, length].

    With ``bridge=True`` the draw is conditioned to be exactly zero at both
    endpoints.  Returns shape (n,) or (n, size) when ``size`` is given.
    """
    if n < 2:
        raise ValueError("need at least two path points")
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    cols = 1 if size is None else size
    out = np.zeros((n, cols))
    if cfg.amplitude_px > 0.0:
        ell = cfg.matern_lengthscale_frac * length
        t = np.linspace(0.0, length, n)
        K = matern32_kernel(t[:, None] - t[None, :], cfg.amplitude_px, ell)
        if bridge:
            inner = np.arange(1, n - 1)
            edge = np.array([0, n - 1])
            Koo = K[np.ix_(edge, edge)] + cfg.jitter * np.eye(2)
            Kuo = K[np.ix_(inner, edge)]
            Kc = K[np.ix_(inner, inner)] - Kuo @ np.linalg.solve(Koo, Kuo.T)
            L = _cholesky_with_jitter(Kc, cfg.jitter)
            out[1:-1, :] = L @ rng.standard_normal((n - 2, cols))
        else:
            L = _cholesky_with_jitter(K, cfg.jitter)
            out[:, :] = L @ rng.standard_normal((n, cols))
    return out[:, 0] if size is None else out


# ---------------------------------------------------------------------------
# Sketch-to-pixel geometry
# ---------------------------------------------------------------------------

def _to_px(x: float, y: float) -> tuple[float, float]:
    span = (1.0 - 2.0 * _MARGIN_FRAC) * IMAGE_SIZE
    return (IMAGE_SIZE / 2.0 + x * span, IMAGE_SIZE / 2.0 - y * span)


def _px_scale() -> float:
    return (1.0 - 2.0 * _MARGIN_FRAC) * IMAGE_SIZE


def _sample_count(length_px: float) -> int:
    return max(2, int(math.ceil(length_px / _SAMPLE_STEP_PX)) + 1)


def _base_path(p) -> np.ndarray:
    """Dense polyline of one primitive in pixel coordinates (k, 2)."""
    if p.kind is PrimitiveKind.POINT:
        return np.array([_to_px(*p.params)])
    if p.kind is PrimitiveKind.LINE:
        a = np.array(_to_px(p.params[0], p.params[1]))
        b = np.array(_to_px(p.params[2], p.params[3]))
        n = _sample_count(float(np.linalg.norm(b - a)))
        t = np.linspace(0.0, 1.0, n)[:, None]
        return a[None, :] * (1 - t) + b[None, :] * t
    if p.kind is PrimitiveKind.CIRCLE:
        cx, cy = _to_px(p.params[0], p.params[1])
        r = p.params[2] * _px_scale()
        n = _sample_count(2 * math.pi * r)
        th = np.linspace(0.0, 2.0 * math.pi, n)
        return np.stack([cx + r * np.cos(th), cy - r * np.sin(th)], axis=1)
    scx, scy, sr, t1, sweep = arc_angles(p.params)
    cx, cy = _to_px(scx, scy)
    r = sr * _px_scale()
    n = _sample_count(abs(sweep) * r)
    th = t1 + np.linspace(0.0, 1.0, n) * sweep
    return np.stack([cx + r * np.cos(th), cy - r * np.sin(th)], axis=1)


def _noisy_path(p, cfg: NoiseConfig, rng: np.random.Generator) -> np.ndarray:
    """Base path plus rigid perturbation plus GP wobble, in pixels."""
    rot = math.radians(rng.normal(0.0, cfg.rotate_sigma_deg))
    shift = rng.normal(0.0, cfg.translate_sigma_px, size=2)

    if p.kind is PrimitiveKind.POINT:
        pts = np.array([_to_px(*p.params)])
    elif p.kind is PrimitiveKind.LINE:
        a = np.array(_to_px(p.params[0], p.params[1]))
        b = np.array(_to_px(p.params[2], p.params[3]))
        length = float(np.linalg.norm(b - a))
        n = _sample_count(length)
        t = np.linspace(0.0, 1.0, n)[:, None]
        pts = a[None, :] * (1 - t) + b[None, :] * t
        offs = matern32_path(n, max(length, 1e-6), cfg, rng)
        d = (b - a) / max(length, 1e-9)
        normal = np.array([-d[1], d[0]])
        pts = pts + offs[:, None] * normal[None, :]
    elif p.kind is PrimitiveKind.CIRCLE:
        cx, cy = _to_px(p.params[0], p.params[1])
        r = p.params[2] * _px_scale()
        n = _sample_count(2 * math.pi * r)
        th = np.linspace(0.0, 2.0 * math.pi, n)
        offs = matern32_path(n, 2 * math.pi * r, cfg, rng)  # bridged: closed stroke
        rr = r + offs
        pts = np.stack([cx + rr * np.cos(th), cy - rr * np.sin(th)], axis=1)
    else:
        scx, scy, sr, t1, sweep = arc_angles(p.params)
        cx, cy = _to_px(scx, scy)
        r = sr * _px_scale()
        n = _sample_count(abs(sweep) * r)
        th = t1 + np.linspace(0.0, 1.0, n) * sweep
        offs = matern32_path(n, max(abs(sweep) * r, 1e-6), cfg, rng)
        rr = r + offs
        pts = np.stack([cx + rr * np.cos(th), cy - rr * np.sin(th)], axis=1)

    if rot != 0.0:
        centroid = pts.mean(axis=0)
        c, s = math.cos(rot), math.sin(rot)
        R = np.array([[c, -s], [s, c]])
        pts = (pts - centroid) @ R.T + centroid
    if shift[0] != 0.0 or shift[1] != 0.0:
        pts = pts + shift
    return pts


# ---------------------------------------------------------------------------
# Anti-aliased rendering (1-px pen, Wu coverage, max compositing)
# ---------------------------------------------------------------------------

def _plot(img: np.ndarray, x: int, y: int, c: float):
    if 0 <= x < img.shape[1] and 0 <= y < img.shape[0] and c > 0:
        if c > img[y, x]:
            img[y, x] = min(c, 1.0)


def _wu_segment(img: np.ndarray, x0: float, y0: float, x1: float, y1: float):
    steep = abs(y1 - y0) > abs(x1 - x0)
    if steep:
        x0, y0, x1, y1 = y0, x0, y1, x1
    if x0 > x1:
        x0, x1 = x1, x0
        y0, y1 = y1, y0
    dx = x1 - x0
    grad = (y1 - y0) / dx if dx > 1e-12 else 0.0

    def endpoint(x, y):
        xe = round(x)
        ye = y + grad * (xe - x)
        xgap = 1.0 - abs(x - xe) if dx > 1e-12 else 1.0
        fy = ye - math.floor(ye)
        px, py = int(xe), int(math.floor(ye))
        if steep:
            _plot(img, py, px, (1 - fy) * xgap)
            _plot(img, py + 1, px, fy * xgap)
        else:
            _plot(img, px, py, (1 - fy) * xgap)
            _plot(img, px, py + 1, fy * xgap)
        return px, ye

    xs, ys = endpoint(x0, y0)
    xe, _ = endpoint(x1, y1)
    inter = ys + grad
    for x in range(xs + 1, xe):
        fy = inter - math.floor(inter)
        py = int(math.floor(inter))
        if steep:
            _plot(img, py, x, 1 - fy)
            _plot(img, py + 1, x, fy)
        else:
            _plot(img, x, py, 1 - fy)
            _plot(img, x, py + 1, fy)
        inter += grad


def _splat_dot(img: np.ndarray, x: float, y: float, radius: float = 1.2):
    for py in range(int(math.floor(y - radius)), int(math.ceil(y + radius)) + 1):
        for px in range(int(math.floor(x - radius)), int(math.ceil(x + radius)) + 1):
            d = math.hypot(px - x, py - y)
            _plot(img, px, py, max(0.0, min(1.0, radius - d + 0.5)))


def _dash_polyline(pts: np.ndarray) -> list[np.ndarray]:
    """Split a polyline into kept pieces following the construction dash
    pattern."""
    pieces: list[list[np.ndarray]] = []
    current: list[np.ndarray] = []
    period = _DASH_ON_PX + _DASH_OFF_PX
    dist = 0.0
    for i in range(len(pts) - 1):
        a, b = pts[i], pts[i + 1]
        seglen = float(np.linalg.norm(b - a))
        on = (dist % period) < _DASH_ON_PX
        if on:
            if not current:
                current = [a]
            current.append(b)
        else:
            if current:
                pieces.append(current)
                current = []
        dist += seglen
    if current:
        pieces.append(current)
    return [np.array(p) for p in pieces]


def _draw_polyline(img: np.ndarray, pts: np.ndarray, dashed: bool):
    if len(pts) == 1:
        _splat_dot(img, pts[0, 0], pts[0, 1])
        return
    chunks = _dash_polyline(pts) if dashed else [pts]
    for chunk in chunks:
        for i in range(len(chunk) - 1):
            _wu_segment(img, chunk[i, 0], chunk[i, 1], chunk[i + 1, 0], chunk[i + 1, 1])


def rasterize_sketch(s: Sketch) -> RasterImage:
    """Precise anti-aliased rendering of a normalized sketch."""
    img = np.zeros((IMAGE_SIZE, IMAGE_SIZE))
    for p in s.primitives:
        _draw_polyline(img, _base_path(p), dashed=p.is_construction)
    return RasterImage(img)


def simulate_hand_drawing(s: Sketch, cfg: NoiseConfig) -> RasterImage:
    """Hand-drawn-looking rendering of a normalized sketch; pure given seed."""
    rng = np.random.default_rng(cfg.seed)
    img = np.zeros((IMAGE_SIZE, IMAGE_SIZE))
    for p in s.primitives:
        _draw_polyline(img, _noisy_path(p, cfg, rng), dashed=p.is_construction)
    return RasterImage(img)


def render_hand_variants(s: Sketch, cfg: NoiseConfig, count: int = 5) -> list[RasterImage]:
    """Pre-generated noisy renders (training picks one per epoch at random)."""
    return [
        simulate_hand_drawing(s, replace(cfg, seed=cfg.seed + k)) for k in range(count)
    ]


# ---------------------------------------------------------------------------
# Affine augmentation and patch extraction
# ---------------------------------------------------------------------------

def apply_affine(img: RasterImage, aug: AffineAugment, seed: int) -> RasterImage:
    """One random affine transform within the augment bounds; bilinear
    resampling, background fill outside the frame."""
    rng = np.random.default_rng(seed)
    return warp_affine(
        img,
        tx=rng.uniform(-aug.translate_px, aug.translate_px),
        ty=rng.uniform(-aug.translate_px, aug.translate_px),
        rot_deg=rng.uniform(-aug.rotate_deg, aug.rotate_deg),
        shear_deg=rng.uniform(-aug.shear_deg, aug.shear_deg),
        scale=rng.uniform(aug.scale[0], aug.scale[1]),
    )


def warp_affine(img: RasterImage, tx: float = 0.0, ty: float = 0.0,
                rot_deg: float = 0.0, shear_deg: float = 0.0,
                scale: float = 1.0) -> RasterImage:
    """Deterministic affine warp about the image center."""
    rot = math.radians(rot_deg)
    shear = math.radians(shear_deg)
    sc = scale

    c, s = math.cos(rot), math.sin(rot)
    M = np.array([[c, -s], [s, c]]) @ np.array([[1.0, math.tan(shear)], [0.0, 1.0]]) * sc
    Minv = np.linalg.inv(M)
    center = (IMAGE_SIZE - 1) / 2.0

    ys, xs = np.mgrid[0:IMAGE_SIZE, 0:IMAGE_SIZE].astype(float)
    # inverse map: source = Minv @ (dest - center - t) + center
    dx = xs - center - tx
    dy = ys - center - ty
    sx = Minv[0, 0] * dx + Minv[0, 1] * dy + center
    sy = Minv[1, 0] * dx + Minv[1, 1] * dy + center

    x0 = np.floor(sx).astype(int)
    y0 = np.floor(sy).astype(int)
    fx = sx - x0
    fy = sy - y0

    def at(yy, xx):
        valid = (yy >= 0) & (yy < IMAGE_SIZE) & (xx >= 0) & (xx < IMAGE_SIZE)
        out = np.zeros_like(sx)
        out[valid] = img.pixels[yy[valid], xx[valid]]
        return out

    out = (
        at(y0, x0) * (1 - fx) * (1 - fy)
        + at(y0, x0 + 1) * fx * (1 - fy)
        + at(y0 + 1, x0) * (1 - fx) * fy
        + at(y0 + 1, x0 + 1) * fx * fy
    )
    return RasterImage(out)


def patchify(img: RasterImage) -> np.ndarray:
    """Row-major 8x8 grid of 16x16 patches, each flattened row-major: (64, 256)."""
    px = img.pixels
    if px.shape != (IMAGE_SIZE, IMAGE_SIZE):
        raise BadShape(f"expected {IMAGE_SIZE}x{IMAGE_SIZE}, got {px.shape}")
    g = IMAGE_SIZE // 16
    return px.reshape(g, 16, g, 16).transpose(0, 2, 1, 3).reshape(g * g, 256)
