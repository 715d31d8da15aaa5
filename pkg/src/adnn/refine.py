"""Iterative Bayesian relabeling of a binary foreground mask.

Each pixel is described by five features (Lab colour and image position).
For each candidate label, the statistics of the neighbours currently holding
that label give a per-feature mean and standard deviation; the pixel's own
features are scored under a piecewise-linear bell around those means.  The
per-feature scores are multiplied (or, with ``combine="sum"``, averaged) and
weighted by the label's frequency in the window.

The averaged form lets the two position features outvote colour, which
erodes objects no larger than the window; the product is the default.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .histio import Label

N_FEATURES = 5

# sRGB (D65) -> XYZ
_RGB_TO_XYZ = np.array([
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
])
_WHITE_D65 = _RGB_TO_XYZ.sum(axis=1)
_EPS = (6.0 / 29.0) ** 3


def rgb_to_lab(rgb) -> np.ndarray:
    """sRGB values in [0, 1] (last axis of length 3) to CIE-Lab under D65."""
    rgb = np.clip(np.asarray(rgb, dtype=np.float64), 0.0, 1.0)
    lin = np.where(rgb <= 0.04045, rgb / 12.92, ((rgb + 0.055) / 1.055) ** 2.4)
    xyz = lin @ _RGB_TO_XYZ.T / _WHITE_D65
    f = np.where(xyz > _EPS, np.cbrt(xyz), xyz / (3 * (6.0 / 29.0) ** 2) + 4.0 / 29.0)
    L = 116.0 * f[..., 1] - 16.0
    a = 500.0 * (f[..., 0] - f[..., 1])
    b = 200.0 * (f[..., 1] - f[..., 2])
    return np.stack([L, a, b], axis=-1)


def pixel_features(frame) -> np.ndarray:
    """``(H, W, 5)`` array of L, a, b, x, y with positions scaled to [0, 1]."""
    frame = np.asarray(frame)
    h, w = frame.shape[:2]
    lab = rgb_to_lab(frame)
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    xs /= max(w - 1, 1)
    ys /= max(h - 1, 1)
    return np.concatenate([lab, xs[..., None], ys[..., None]], axis=-1)


class Shape(str, enum.Enum):
    SYMMETRIC = "symmetric"
    AS_WRITTEN = "as_written"


def gaussian_approx(x, mu, sigma, n=2.0, shape=Shape.SYMMETRIC):
    """Compactly supported surrogate for a Gaussian bell.

    ``SYMMETRIC``: triangle ``max(0, 1 - |x - mu| / (n sigma))``.
    ``AS_WRITTEN``: ``|1 + (x - mu) / (n sigma)|`` inside ``|x - mu| <= n sigma``,
    which peaks at 2 on the upper edge.  ``sigma == 0`` scores 1 only for an
    exact match.
    """
    shape = Shape(shape)
    x, mu, sigma = np.broadcast_arrays(*(np.asarray(v, dtype=np.float64) for v in (x, mu, sigma)))
    diff = x - mu
    spread = n * sigma
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = diff / spread
    if shape is Shape.SYMMETRIC:
        val = np.maximum(0.0, 1.0 - np.abs(ratio))
    else:
        val = np.where(np.abs(diff) <= spread, np.abs(1.0 + ratio), 0.0)
    out = np.where(sigma > 0, val, (diff == 0).astype(np.float64))
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class RefineConfig:
    radius: int = 4
    n: float = 2.0
    iterations: int = 20
    shape: Shape = Shape.SYMMETRIC
    combine: str = "product"

    def validate(self) -> None:
        if self.radius < 1 or self.n <= 0 or self.iterations < 1:
            raise ValueError("refine config needs radius >= 1, n > 0, iterations >= 1")
        Shape(self.shape)
        if self.combine not in ("product", "sum"):
            raise ValueError(f"combine must be 'product' or 'sum', got {self.combine!r}")


def _check_inputs(frame, mask):
    frame = np.asarray(frame)
    mask = np.asarray(mask)
    if frame.ndim != 3 or frame.shape[2] != 3:
        raise ValueError(f"frame must be (H, W, 3), got {frame.shape}")
    if mask.shape != frame.shape[:2]:
        raise ValueError(f"mask shape {mask.shape} does not match frame {frame.shape[:2]}")
    if np.any((mask != Label.BACKGROUND) & (mask != Label.FOREGROUND)):
        raise ValueError("mask must be binary (Background/Foreground only)")
    return frame, mask


def _label_scores(lab, mask, cfg: RefineConfig):
    """Posterior scores ``(2, H, W)`` for Background and Foreground.

    Statistics are gathered on differences to the centre pixel; the bell is
    scale-free per feature, so positions are handled in pixel units and the
    centre's own feature value becomes 0.
    """
    h, w = mask.shape
    R = cfg.radius
    labs = np.pad(lab, ((R, R), (R, R), (0, 0)))
    pad_mask = np.pad(mask.astype(np.int16), R, constant_values=-1)
    centre = np.moveaxis(lab, -1, 0)
    offsets = [(dy, dx) for dy in range(-R, R + 1) for dx in range(-R, R + 1)]

    def window(dy, dx):
        m = pad_mask[R + dy:R + dy + h, R + dx:R + dx + w]
        ind = np.stack([m == Label.BACKGROUND, m == Label.FOREGROUND]).astype(np.float64)
        d = np.empty((N_FEATURES, h, w))
        d[:3] = np.moveaxis(labs[R + dy:R + dy + h, R + dx:R + dx + w], -1, 0) - centre
        d[3] = dx
        d[4] = dy
        return ind, m >= 0, d

    count = np.zeros((2, h, w))
    total = np.zeros((h, w))
    acc = np.zeros((2, N_FEATURES, h, w))
    for dy, dx in offsets:
        ind, inside, d = window(dy, dx)
        count += ind
        total += inside
        acc += ind[:, None] * d[None]
    present = count > 0
    safe = np.where(present, count, 1.0)[:, None]
    mean = acc / safe

    sq = np.zeros_like(acc)
    for dy, dx in offsets:
        ind, _, d = window(dy, dx)
        sq += ind[:, None] * (d[None] - mean) ** 2
    sigma = np.sqrt(sq / safe)

    bell = gaussian_approx(0.0, mean, sigma, cfg.n, cfg.shape)
    if cfg.combine == "sum":
        likelihood = bell.sum(axis=1) / N_FEATURES
    else:
        likelihood = bell.prod(axis=1)
    prior = count / total
    return np.where(present, prior * likelihood, 0.0)


def refine_step(frame, mask, cfg: RefineConfig = RefineConfig()) -> np.ndarray:
    """One synchronous relabeling pass; ties keep the current label."""
    cfg.validate()
    frame, mask = _check_inputs(frame, mask)
    return _step(rgb_to_lab(frame), mask, cfg)


def _step(lab, mask, cfg):
    scores = _label_scores(lab, mask, cfg)
    bg, fg = scores
    out = mask.astype(np.uint8).copy()
    out[fg > bg] = Label.FOREGROUND
    out[bg > fg] = Label.BACKGROUND
    return out


def refine(frame, mask, cfg: RefineConfig = RefineConfig()) -> np.ndarray:
    """Apply ``refine_step`` repeatedly, stopping early at a fixed point."""
    cfg.validate()
    frame, mask = _check_inputs(frame, mask)
    lab = rgb_to_lab(frame)
    current = mask.astype(np.uint8)
    for _ in range(cfg.iterations):
        nxt = _step(lab, current, cfg)
        if np.array_equal(nxt, current):
            break
        current = nxt
    return current
