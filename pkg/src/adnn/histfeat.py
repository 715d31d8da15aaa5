"""Histograms of temporal pixel differences, the network's input features."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .addist import DEFAULT_WIDTH, nearest_bin
from .histio import FrameSequence, Label


class UnbalancedSampleWarning(UserWarning):
    """Balanced sampling was requested but a class is missing."""


@dataclass(frozen=True)
class HistoryConfig:
    """Which frames count as a pixel's history.

    ``length`` caps the number of preceding frames (0 means all of them),
    ``stride`` subsamples them, and ``include_current`` adds the frame itself
    (a zero difference) to its own history.
    """

    length: int = 200
    stride: int = 1
    include_current: bool = True
    width: int = DEFAULT_WIDTH

    def history_indices(self, frame_index: int) -> np.ndarray:
        if self.length < 0 or self.stride < 1:
            raise ValueError("history length must be >= 0 and stride >= 1")
        start = 0 if self.length == 0 else max(0, frame_index - self.length)
        idx = np.arange(frame_index - 1, start - 1, -self.stride)[::-1]
        if self.include_current:
            idx = np.append(idx, frame_index)
        if idx.size == 0:
            raise ValueError(f"frame {frame_index} has no history")
        return idx


def _histograms(diffs: np.ndarray, width: int) -> np.ndarray:
    """Normalized histograms along axis 0 of ``diffs`` (shape ``(N, ...)``)."""
    n = diffs.shape[0]
    bins = np.clip(nearest_bin(diffs, width), 0, width - 1)
    flat = bins.reshape(n, -1)
    cells = flat.shape[1]
    keys = (np.arange(cells) * width)[None, :] + flat
    counts = np.bincount(keys.ravel(), minlength=cells * width)
    hist = counts.reshape(diffs.shape[1:] + (width,)).astype(np.float64) / n
    return hist


def subtraction_histogram(history, current, width: int = DEFAULT_WIDTH) -> np.ndarray:
    """Per-channel histogram of ``history[i] - current``.

    ``history`` is ``(N, 3)`` (or ``(N,)`` for one channel); returns
    ``(3, width)`` (or ``(width,)``).
    """
    history = np.asarray(history, dtype=np.float64)
    current = np.asarray(current, dtype=np.float64)
    if history.shape[0] == 0:
        raise ValueError("empty history")
    if np.any((history < 0) | (history > 1)) or np.any((current < 0) | (current > 1)):
        raise ValueError("pixel values must lie in [0, 1]")
    return _histograms(history - current, width)


def extract_frame_features(seq: FrameSequence, frame_index: int,
                           cfg: HistoryConfig = HistoryConfig()) -> np.ndarray:
    """Features for every pixel of one frame, shape ``(H, W, 3, width)``."""
    idx = cfg.history_indices(frame_index)
    frames = seq.frames
    diffs = frames[idx].astype(np.float64) - frames[frame_index].astype(np.float64)
    return _histograms(diffs, cfg.width).astype(np.float32)


def extract_training_batch(seq: FrameSequence, gt, frame_index: int,
                           cfg: HistoryConfig = HistoryConfig(), balance: bool = True,
                           max_per_class: int = 500, seed: int = 0):
    """Sample labeled pixel features from one annotated frame.

    Returns ``(X, y)`` with ``X`` of shape ``(N, 3, width)`` and labels in
    {0, 1}.  Background pixels are drawn without replacement; when balancing,
    foreground pixels are drawn with replacement if there are too few.
    """
    gt = np.asarray(gt)
    if gt.shape != (seq.height, seq.width):
        raise ValueError(f"ground truth shape {gt.shape} does not match frame {(seq.height, seq.width)}")
    if frame_index < 1:
        raise ValueError("training frames need at least one preceding frame")
    rng = np.random.default_rng(seed)
    flat = gt.ravel()
    bg = np.flatnonzero(flat == Label.BACKGROUND)
    fg = np.flatnonzero(flat == Label.FOREGROUND)

    if balance and fg.size and bg.size:
        k = min(max_per_class, bg.size)
        bg_pick = rng.choice(bg, size=k, replace=False)
        fg_pick = rng.choice(fg, size=k, replace=fg.size < k)
    else:
        if balance:
            warnings.warn("frame lacks one class; returning unbalanced samples",
                          UnbalancedSampleWarning, stacklevel=2)
        bg_pick = rng.choice(bg, size=min(max_per_class, bg.size), replace=False)
        fg_pick = rng.choice(fg, size=min(max_per_class, fg.size), replace=False)

    pick = np.concatenate([bg_pick, fg_pick])
    labels = np.concatenate([np.zeros(bg_pick.size, np.int64), np.ones(fg_pick.size, np.int64)])
    feats = extract_frame_features(seq, frame_index, cfg).reshape(-1, 3, cfg.width)
    return feats[pick], labels
