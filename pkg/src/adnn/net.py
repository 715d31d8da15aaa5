"""Arithmetic distribution network and the single-filter CNN baseline.

Parameters live in a plain ``dict`` of name -> array; ``backward`` returns a
matching dict of gradients.  Arrays are float32 for normal use; pass
``dtype=np.float64`` to ``init_params`` for gradient checking.

Architecture ``"adnn"``::

    input (B, 3, W)
    -> [product + sum distribution block] x depth  (per-channel kernels)
    -> 1x1 convolution mixing 3*filters maps into one map of W bins
    -> full-width convolution to ``hidden_units`` scalars -> ReLU
    -> linear map to 2 logits -> log-softmax

With ``hidden_units == 0`` the hidden convolution is dropped and the ReLU
acts on the combined map directly.  Architecture ``"cnn1"`` is the 1x1
convolution, ReLU and full-width convolution to 2 logits, with no
distribution layers.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, fields

import numpy as np

from . import addist
from .histfeat import HistoryConfig, extract_frame_features
from .histio import FrameSequence, Label

ARCHITECTURES = ("adnn", "cnn1")


@dataclass(frozen=True)
class NetworkConfig:
    architecture: str = "adnn"
    adl_filters: int = 2
    hist_width: int = 201
    adl_depth: int = 1
    hidden_units: int = 512
    classes: int = 2
    use_bias: bool = True

    def validate(self) -> None:
        if self.architecture not in ARCHITECTURES:
            raise ValueError(f"unknown architecture {self.architecture!r}")
        if self.hist_width < 3 or self.hist_width % 2 == 0:
            raise ValueError("hist_width must be odd (a zero bin must exist)")
        if self.classes != 2:
            raise ValueError("only binary classification is supported")
        if self.adl_filters < 1 or self.adl_depth < 1 or self.hidden_units < 0:
            raise ValueError("adl_filters and adl_depth must be >= 1, hidden_units >= 0")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    max_epochs: int = 60
    batch_size: int = 1000
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    seed: int = 0
    deterministic: bool = False

    def validate(self) -> None:
        if self.learning_rate < 0:
            raise ValueError("learning rate must be non-negative")
        if self.batch_size < 1 or self.max_epochs < 0:
            raise ValueError("batch size must be >= 1 and max_epochs >= 0")


# ---------------------------------------------------------------------------
# parameters


def _block_filters(cfg: NetworkConfig, d: int) -> int:
    # inner blocks keep one map per colour channel; the last one fans out
    return cfg.adl_filters if d == cfg.adl_depth - 1 else 1


def _has_hidden(cfg: NetworkConfig) -> bool:
    return cfg.architecture == "adnn" and cfg.hidden_units > 0


def param_shapes(cfg: NetworkConfig) -> dict[str, tuple[int, ...]]:
    cfg.validate()
    w = cfg.hist_width
    shapes: dict[str, tuple[int, ...]] = {}
    if cfg.architecture == "adnn":
        for d in range(cfg.adl_depth):
            f = _block_filters(cfg, d)
            shapes[f"prod{d}"] = (f, 3, w)
            shapes[f"sum{d}"] = (f, 3, w)
        shapes["combine.weight"] = (3, cfg.adl_filters)
        width_in = w
        if cfg.hidden_units:
            shapes["hidden.weight"] = (cfg.hidden_units, w)
            width_in = cfg.hidden_units
    else:
        shapes["combine.weight"] = (3, 1)
        width_in = w
    shapes["out.weight"] = (cfg.classes, width_in)
    if cfg.use_bias:
        shapes["combine.bias"] = (1,)
        if cfg.architecture == "adnn" and cfg.hidden_units:
            shapes["hidden.bias"] = (cfg.hidden_units,)
        shapes["out.bias"] = (cfg.classes,)
    return shapes


def count_params(cfg: NetworkConfig) -> int:
    return int(sum(np.prod(s) for s in param_shapes(cfg).values()))


def init_params(cfg: NetworkConfig, seed: int = 0, dtype=np.float32) -> dict[str, np.ndarray]:
    """Identity-plus-noise distribution kernels; uniform fan-in init elsewhere."""
    rng = np.random.default_rng(seed)
    shapes = param_shapes(cfg)
    fan_in = {
        "combine": int(np.prod(shapes["combine.weight"])),
        "hidden": cfg.hist_width,
        "out": shapes["out.weight"][1],
    }
    params = {}
    for name, shape in shapes.items():
        if name.startswith(("prod", "sum")):
            kind = "product" if name.startswith("prod") else "sum"
            base = addist.identity_kernel(kind, cfg.hist_width)
            value = base + rng.uniform(-0.01, 0.01, size=shape)
        else:
            bound = 1.0 / np.sqrt(fan_in[name.split(".")[0]])
            value = rng.uniform(-bound, bound, size=shape)
            if name.startswith("combine") and not _has_hidden(cfg):
                # histograms are non-negative and the ReLU follows directly:
                # a negative weight sum or bias would leave every unit dead
                value = np.abs(value) if name == "combine.weight" else np.zeros(shape)
        params[name] = value.astype(dtype)
    return params


def _check_params(params, cfg: NetworkConfig) -> None:
    shapes = param_shapes(cfg)
    if set(shapes) != set(params):
        raise ValueError(f"parameter names {sorted(params)} do not match config {sorted(shapes)}")
    for name, shape in shapes.items():
        if params[name].shape != shape:
            raise ValueError(f"parameter {name} has shape {params[name].shape}, expected {shape}")


# ---------------------------------------------------------------------------
# forward / backward


def _log_softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def forward(params, X, cfg: NetworkConfig):
    """Class log-probabilities ``(B, 2)`` and a cache for ``backward``."""
    _check_params(params, cfg)
    dtype = params["out.weight"].dtype
    X = np.asarray(X, dtype=dtype)
    if X.ndim != 3 or X.shape[1:] != (3, cfg.hist_width):
        raise ValueError(f"expected input of shape (B, 3, {cfg.hist_width}), got {X.shape}")
    cache = {"X": X, "blocks": []}
    h_in = X
    if cfg.architecture == "adnn":
        for d in range(cfg.adl_depth):
            M = addist.product_matrix(params[f"prod{d}"]) + addist.sum_matrix(params[f"sum{d}"])
            f = M.shape[0]
            Y = np.empty((X.shape[0], 3, f, cfg.hist_width), dtype=dtype)
            for c in range(3):
                for k in range(f):
                    Y[:, c, k] = h_in[:, c] @ M[k, c]
            cache["blocks"].append((h_in, M))
            if d < cfg.adl_depth - 1:
                h_in = Y[:, :, 0]
        maps = Y
    else:
        maps = X[:, :, None, :]
    cache["maps"] = maps
    h = np.einsum("bcfj,cf->bj", maps, params["combine.weight"])
    if cfg.use_bias:
        h = h + params["combine.bias"]
    cache["h"] = h
    if cfg.architecture == "adnn" and cfg.hidden_units:
        a = h @ params["hidden.weight"].T
        if cfg.use_bias:
            a = a + params["hidden.bias"]
    else:
        a = h
    cache["a"] = a
    r = np.maximum(a, 0)
    cache["r"] = r
    logits = r @ params["out.weight"].T
    if cfg.use_bias:
        logits = logits + params["out.bias"]
    if not np.all(np.isfinite(logits)):
        raise FloatingPointError("non-finite activation in forward pass")
    logp = _log_softmax(logits)
    cache["logp"] = logp
    return logp, cache


def nll_loss(logp, y) -> float:
    y = np.asarray(y)
    return float(-np.mean(logp[np.arange(len(y)), y]))


def backward(params, cache, y, cfg: NetworkConfig) -> dict[str, np.ndarray]:
    """Gradients of the mean negative log-likelihood for the cached batch."""
    if cache is None or "logp" not in cache:
        raise RuntimeError("backward called before forward")
    y = np.asarray(y)
    logp = cache["logp"]
    B = logp.shape[0]
    dtype = logp.dtype
    grads = {}

    dlogits = np.exp(logp)
    dlogits[np.arange(B), y] -= 1
    dlogits /= B
    grads["out.weight"] = dlogits.T @ cache["r"]
    if cfg.use_bias:
        grads["out.bias"] = dlogits.sum(axis=0)
    dr = dlogits @ params["out.weight"]
    da = dr * (cache["a"] > 0)

    if cfg.architecture == "adnn" and cfg.hidden_units:
        grads["hidden.weight"] = da.T @ cache["h"]
        if cfg.use_bias:
            grads["hidden.bias"] = da.sum(axis=0)
        dh = da @ params["hidden.weight"]
    else:
        dh = da

    maps = cache["maps"]
    grads["combine.weight"] = np.einsum("bj,bcfj->cf", dh, maps)
    if cfg.use_bias:
        grads["combine.bias"] = np.array([dh.sum()], dtype=dtype)

    if cfg.architecture == "adnn":
        dY = dh[:, None, None, :] * params["combine.weight"][None, :, :, None]
        for d in reversed(range(cfg.adl_depth)):
            h_in, M = cache["blocks"][d]
            f = M.shape[0]
            dM = np.empty_like(M)
            dX = np.zeros_like(h_in)
            for c in range(3):
                for k in range(f):
                    dM[k, c] = h_in[:, c].T @ dY[:, c, k]
                    dX[:, c] += dY[:, c, k] @ M[k, c].T
            grads[f"prod{d}"] = addist.product_matrix_grad(dM).astype(dtype)
            grads[f"sum{d}"] = addist.sum_matrix_grad(dM).astype(dtype)
            dY = dX[:, :, None, :]
    return {k: grads[k].astype(dtype, copy=False) for k in params}


def predict_log_proba(params, X, cfg: NetworkConfig, chunk: int = 4096) -> np.ndarray:
    X = np.asarray(X)
    out = [forward(params, X[s:s + chunk], cfg)[0] for s in range(0, X.shape[0], chunk)]
    if not out:
        return np.empty((0, cfg.classes), dtype=params["out.weight"].dtype)
    return np.concatenate(out)


# ---------------------------------------------------------------------------
# optimisation


class Adam:
    """Adam with bias-corrected moment estimates."""

    def __init__(self, lr=1e-4, beta1=0.9, beta2=0.999, epsilon=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.m = {}
        self.v = {}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for k, g in grads.items():
            if k not in self.m:
                self.m[k] = np.zeros_like(params[k])
                self.v[k] = np.zeros_like(params[k])
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * (g * g)
            m_hat = self.m[k] / bc1
            v_hat = self.v[k] / bc2
            update = self.lr * m_hat / (np.sqrt(v_hat) + self.epsilon)
            params[k] = (params[k] - update).astype(params[k].dtype, copy=False)


def train(X, y, cfg: NetworkConfig = NetworkConfig(), tcfg: TrainConfig = TrainConfig(),
          params=None, dtype=np.float32, callback=None):
    """Fit the network with mini-batch Adam on mean NLL.

    Returns ``(params, losses)`` where ``losses[e]`` is the mean training
    loss over epoch ``e``.  ``callback(epoch, loss)`` is called after each
    epoch.
    """
    cfg.validate()
    tcfg.validate()
    X = np.asarray(X)
    y = np.asarray(y, dtype=np.int64)
    if X.shape[0] != y.shape[0]:
        raise ValueError("X and y have different lengths")
    if set(np.unique(y)) != {0, 1}:
        raise ValueError("training needs samples of both classes")
    if params is None:
        params = init_params(cfg, tcfg.seed, dtype)
    else:
        params = {k: v.copy() for k, v in params.items()}
    X = X.astype(params["out.weight"].dtype, copy=False)
    opt = Adam(tcfg.learning_rate, tcfg.beta1, tcfg.beta2, tcfg.epsilon)
    rng = np.random.default_rng(tcfg.seed + 1)
    losses = []
    n = X.shape[0]
    for epoch in range(tcfg.max_epochs):
        order = rng.permutation(n)
        total = 0.0
        for s in range(0, n, tcfg.batch_size):
            idx = order[s:s + tcfg.batch_size]
            logp, cache = forward(params, X[idx], cfg)
            loss = nll_loss(logp, y[idx])
            if not np.isfinite(loss):
                raise FloatingPointError(f"non-finite loss at epoch {epoch}")
            total += loss * idx.size
            opt.step(params, backward(params, cache, y[idx], cfg))
        losses.append(total / n)
        if callback is not None:
            callback(epoch, losses[-1])
    return params, losses


def classify_frame(seq: FrameSequence, frame_index: int, params, cfg: NetworkConfig,
                   hcfg: HistoryConfig = HistoryConfig()) -> np.ndarray:
    """Label every pixel of a frame; ties go to Background."""
    feats = extract_frame_features(seq, frame_index, hcfg)
    logp = predict_log_proba(params, feats.reshape(-1, 3, cfg.hist_width), cfg)
    fg = logp[:, 1] > logp[:, 0]
    return np.where(fg, Label.FOREGROUND, Label.BACKGROUND).astype(np.uint8).reshape(
        seq.height, seq.width)


# ---------------------------------------------------------------------------
# model file

MAGIC = b"ADNN"
FORMAT_VERSION = 1
_ARCH_TAGS = {"adnn": 0, "cnn1": 1}
_CONFIG_FIELDS = ("adl_filters", "hist_width", "adl_depth", "hidden_units", "classes", "use_bias")


class ModelFormatError(ValueError):
    pass


def dump_model(params, cfg: NetworkConfig) -> bytes:
    _check_params(params, cfg)
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", FORMAT_VERSION, _ARCH_TAGS[cfg.architecture]))
    buf.write(struct.pack("<6I", *(int(getattr(cfg, f)) for f in _CONFIG_FIELDS)))
    buf.write(struct.pack("<I", len(params)))
    for name in sorted(params):
        arr = np.ascontiguousarray(params[name], dtype="<f4")
        raw = name.encode("utf-8")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(arr.tobytes())
    return buf.getvalue()


def save_model(params, cfg: NetworkConfig, path) -> None:
    data = dump_model(params, cfg)
    with open(path, "wb") as fh:
        fh.write(data)


def _take(buf: memoryview, pos: int, n: int):
    if pos + n > len(buf):
        raise ModelFormatError("truncated model file")
    return bytes(buf[pos:pos + n]), pos + n


def parse_model(data: bytes):
    buf = memoryview(data)
    magic, pos = _take(buf, 0, 4)
    if magic != MAGIC:
        raise ModelFormatError("not a model file")
    raw, pos = _take(buf, pos, 8)
    version, arch_tag = struct.unpack("<II", raw)
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported version {version}")
    arch = {v: k for k, v in _ARCH_TAGS.items()}.get(arch_tag)
    if arch is None:
        raise ModelFormatError(f"unknown architecture tag {arch_tag}")
    raw, pos = _take(buf, pos, 24)
    values = struct.unpack("<6I", raw)
    kwargs = dict(zip(_CONFIG_FIELDS, values))
    kwargs["use_bias"] = bool(kwargs["use_bias"])
    try:
        cfg = NetworkConfig(architecture=arch, **kwargs)
        cfg.validate()
    except ValueError as exc:
        raise ModelFormatError(f"inconsistent config: {exc}") from exc
    raw, pos = _take(buf, pos, 4)
    (count,) = struct.unpack("<I", raw)
    params = {}
    for _ in range(count):
        raw, pos = _take(buf, pos, 2)
        (nlen,) = struct.unpack("<H", raw)
        name, pos = _take(buf, pos, nlen)
        raw, pos = _take(buf, pos, 1)
        (rank,) = struct.unpack("<B", raw)
        raw, pos = _take(buf, pos, 4 * rank)
        shape = struct.unpack(f"<{rank}I", raw)
        size = int(np.prod(shape)) if rank else 1
        raw, pos = _take(buf, pos, 4 * size)
        params[name.decode("utf-8")] = np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float32)
    if pos != len(buf):
        raise ModelFormatError("trailing bytes after model data")
    try:
        _check_params(params, cfg)
    except ValueError as exc:
        raise ModelFormatError(f"shape/config inconsistency: {exc}") from exc
    return params, cfg


def load_model(path):
    with open(path, "rb") as fh:
        return parse_model(fh.read())


def config_dict(cfg) -> dict:
    return {f.name: getattr(cfg, f.name) for f in fields(cfg)}
