"""Frame/mask I/O and the deterministic synthetic moving-square sequence."""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError


class Label(enum.IntEnum):
    BACKGROUND = 0
    FOREGROUND = 1
    IGNORE = 2


# CDnet ground-truth encoding
_GT_LOOKUP = np.full(256, Label.IGNORE, dtype=np.uint8)
_GT_LOOKUP[0] = Label.BACKGROUND
_GT_LOOKUP[50] = Label.BACKGROUND
_GT_LOOKUP[255] = Label.FOREGROUND


class DataError(Exception):
    """Raised for unreadable or inconsistent input data."""


@dataclass
class FrameSequence:
    """Ordered RGB frames, float values in [0, 1], shape ``(T, H, W, 3)``."""

    frames: np.ndarray
    numbers: list[int] = field(default_factory=list)

    def __post_init__(self):
        self.frames = np.asarray(self.frames)
        if self.frames.ndim != 4 or self.frames.shape[-1] != 3:
            raise DataError(f"frames must have shape (T, H, W, 3), got {self.frames.shape}")
        if self.frames.shape[0] < 2:
            raise DataError("a sequence needs at least 2 frames")
        if not self.numbers:
            self.numbers = list(range(1, self.frames.shape[0] + 1))
        if len(self.numbers) != self.frames.shape[0]:
            raise DataError("one file number is required per frame")

    @property
    def count(self) -> int:
        return self.frames.shape[0]

    @property
    def height(self) -> int:
        return self.frames.shape[1]

    @property
    def width(self) -> int:
        return self.frames.shape[2]

    def index_of(self, number: int) -> int:
        try:
            return self.numbers.index(number)
        except ValueError:
            raise DataError(f"frame number {number} not in sequence") from None


def _template_regex(pattern: str) -> re.Pattern:
    m = re.search(r"%0?(\d*)d", pattern)
    if m is None:
        raise ValueError(f"pattern {pattern!r} has no integer field")
    head, tail = pattern[: m.start()], pattern[m.end():]
    return re.compile("^" + re.escape(head) + r"(\d+)" + re.escape(tail) + "$")


def list_numbered(root, pattern: str) -> list[tuple[int, Path]]:
    """Files in ``root`` matching a printf-style template, sorted by number."""
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"missing directory: {root}")
    rx = _template_regex(pattern)
    found = []
    for p in root.iterdir():
        m = rx.match(p.name)
        if m:
            found.append((int(m.group(1)), p))
    found.sort()
    return found


def _read_rgb(path: Path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            if im.mode in ("L", "I;16", "I", "1"):
                arr = np.asarray(im.convert("L"))
                arr = np.repeat(arr[..., None], 3, axis=-1)
            else:
                arr = np.asarray(im.convert("RGB"))
    except (OSError, UnidentifiedImageError) as exc:
        raise DataError(f"cannot decode {path}: {exc}") from exc
    return arr


def load_sequence(root, pattern: str = "in%06d.jpg", numbers=None) -> FrameSequence:
    """Read numbered frames from a directory.

    ``numbers`` optionally restricts loading to a subset of file numbers.
    """
    files = list_numbered(root, pattern)
    if numbers is not None:
        wanted = set(numbers)
        files = [(n, p) for n, p in files if n in wanted]
    if not files:
        raise DataError(f"no frames matched {pattern!r} in {root}")
    if len(files) < 2:
        raise DataError(f"only one frame matched {pattern!r} in {root}: {files[0][1]}")
    arrays = []
    shape = None
    for _, path in files:
        arr = _read_rgb(path)
        if shape is None:
            shape = arr.shape
        elif arr.shape != shape:
            raise DataError(f"inconsistent dimensions: {path} is {arr.shape[:2]}, expected {shape[:2]}")
        arrays.append(arr)
    frames = np.stack(arrays).astype(np.float32) / np.float32(255.0)
    return FrameSequence(frames, [n for n, _ in files])


def load_gt_mask(path) -> np.ndarray:
    """Read a CDnet ground-truth image into an array of ``Label`` values."""
    path = Path(path)
    try:
        with Image.open(path) as im:
            if im.mode not in ("L", "P", "1"):
                raise DataError(f"ground truth must be grayscale: {path} has mode {im.mode}")
            arr = np.asarray(im.convert("L"))
    except (OSError, UnidentifiedImageError) as exc:
        raise DataError(f"cannot read ground truth {path}: {exc}") from exc
    return _GT_LOOKUP[arr]


def load_mask(path) -> np.ndarray:
    """Read a predicted binary mask (0 / 255) written by ``save_mask``."""
    return load_gt_mask(path)


def save_mask(mask, path) -> None:
    mask = np.asarray(mask)
    if np.any(mask == Label.IGNORE):
        raise ValueError("predicted mask may not contain Ignore")
    if np.any((mask != Label.BACKGROUND) & (mask != Label.FOREGROUND)):
        raise ValueError("mask values must be Background or Foreground labels")
    img = np.where(mask == Label.FOREGROUND, 255, 0).astype(np.uint8)
    try:
        Image.fromarray(img, mode="L").save(Path(path), format="PNG")
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc}") from exc


def save_frame(frame, path) -> None:
    arr = np.clip(np.rint(np.asarray(frame) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(Path(path))


# ---------------------------------------------------------------------------
# synthetic data


def bounce_path(n_frames: int, extent: tuple[int, int], speed: tuple[int, int],
                start: tuple[int, int] = (0, 0)) -> tuple[tuple[int, int], ...]:
    """Top-left offsets of a square bouncing inside ``extent = (max_x, max_y)``."""
    out = []
    for t in range(n_frames):
        pos = []
        for s0, v, hi in zip(start, speed, extent):
            if hi == 0:
                pos.append(0)
                continue
            p = (s0 + v * t) % (2 * hi)
            pos.append(p if p <= hi else 2 * hi - p)
        out.append((pos[0], pos[1]))
    return tuple(out)


@dataclass(frozen=True)
class SyntheticConfig:
    width: int = 64
    height: int = 64
    frames: int = 60
    square: int = 8
    path: tuple | None = None
    background: tuple[float, float, float] = (0.25, 0.45, 0.35)
    foreground: tuple[float, float, float] = (0.80, 0.30, 0.60)
    noise: float = 0.05
    seed: int = 7
    speed: tuple[int, int] = (5, 3)

    def offsets(self) -> tuple[tuple[int, int], ...]:
        if self.path is not None:
            return tuple((int(x), int(y)) for x, y in self.path)
        return bounce_path(self.frames, (self.width - self.square, self.height - self.square),
                           self.speed, start=(5, 11))

    def validate(self) -> None:
        if self.frames < 2:
            raise ValueError("synthetic sequence needs at least 2 frames")
        if not 0.0 <= self.noise <= 0.2:
            raise ValueError(f"noise amplitude must be in [0, 0.2], got {self.noise}")
        if self.square < 1 or self.square > min(self.width, self.height):
            raise ValueError("square does not fit in the frame")
        for c in (*self.background, *self.foreground):
            if not 0.0 <= c <= 1.0:
                raise ValueError("colors must lie in [0, 1]")
        offs = self.offsets()
        if len(offs) != self.frames:
            raise ValueError(f"path has {len(offs)} entries for {self.frames} frames")
        for x, y in offs:
            if x < 0 or y < 0 or x + self.square > self.width or y + self.square > self.height:
                raise ValueError(f"square at ({x}, {y}) leaves the frame")


def generate_synthetic(config: SyntheticConfig = SyntheticConfig()):
    """Render a moving square over a noisy flat background.

    Returns ``(FrameSequence, masks)`` where ``masks`` has shape ``(T, H, W)``.
    Output is a pure function of the config (including its seed).
    """
    config.validate()
    rng = np.random.default_rng(config.seed)
    shape = (config.frames, config.height, config.width, 3)
    frames = np.empty(shape, dtype=np.float64)
    frames[...] = np.asarray(config.background)
    masks = np.zeros(shape[:3], dtype=np.uint8)
    s = config.square
    for t, (x, y) in enumerate(config.offsets()):
        frames[t, y:y + s, x:x + s] = config.foreground
        masks[t, y:y + s, x:x + s] = Label.FOREGROUND
    if config.noise > 0:
        frames += rng.uniform(-config.noise, config.noise, size=shape)
    np.clip(frames, 0.0, 1.0, out=frames)
    return FrameSequence(frames.astype(np.float32)), masks
