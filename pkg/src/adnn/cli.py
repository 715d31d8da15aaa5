"""Command-line entry point: synth | train | infer | refine | eval | pipeline.

Settings resolve as: command-line flag > ``--config`` file entry > default.
The config file holds ``key = value`` lines (keys are flag names without the
leading dashes) and ``#`` comments.
"""

from __future__ import annotations

import argparse
import sys
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from . import histio, metrics, net
from .histfeat import HistoryConfig, extract_training_batch
from .histio import DataError, Label, SyntheticConfig
from .net import ModelFormatError, NetworkConfig, TrainConfig
from .refine import RefineConfig, Shape, refine


class ConfigError(Exception):
    pass


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    value = str(text).strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def _pair(text) -> tuple[int, int]:
    parts = [p for p in str(text).replace(" ", "").split(",") if p]
    if len(parts) != 2:
        raise ConfigError(f"expected two comma-separated integers, got {text!r}")
    return int(parts[0]), int(parts[1])


# name: (type, default, help)
OPTIONS = {
    # shared
    "frames": (str, None, "directory of input frames"),
    "gt": (str, None, "directory of ground-truth masks"),
    "model": (str, None, "model file to read"),
    "out": (str, None, "output directory (all outputs go here)"),
    "seed": (int, 7, "seed for every random choice"),
    "threads": (int, 0, "BLAS worker threads, 0 = all cores"),
    "deterministic": (_bool, False, "single reduction order; with --threads 1 runs are bit-reproducible"),
    "layout": (str, "plain", "file naming: plain (%%06d.png) or cdnet (in%%06d.jpg / gt%%06d.png)"),
    "frame-pattern": (str, None, "frame file template (default from --layout)"),
    "gt-pattern": (str, None, "ground-truth file template (default from --layout)"),
    "mask-pattern": (str, None, "mask file template (default from --layout)"),
    "masks": (str, None, "directory of masks to refine or evaluate"),
    "name": (str, "video", "video name used in the evaluation report"),
    # synthetic data
    "width": (int, 64, "synthetic frame width"),
    "height": (int, 64, "synthetic frame height"),
    "frame-count": (int, 60, "synthetic frame count"),
    "square": (int, 8, "synthetic square size in pixels"),
    "noise": (float, 0.05, "uniform noise half-width, in [0, 0.2]"),
    "speed": (_pair, (5, 3), "square velocity in pixels/frame as dx,dy"),
    # features
    "history": (int, 200, "preceding frames used as history, 0 = all"),
    "stride": (int, 1, "history subsampling step"),
    "include-current": (_bool, True, "count the frame itself in its own history"),
    # network
    "architecture": (str, "adnn", "adnn or cnn1"),
    "adl-filters": (int, 2, "filters per distribution layer"),
    "adl-depth": (int, 1, "stacked distribution blocks"),
    "hidden-units": (int, 512, "full-width convolution filters, 0 = none"),
    "use-bias": (_bool, True, "add biases to the convolution layers"),
    # training
    "learning-rate": (float, 1e-4, "Adam learning rate"),
    "epochs": (int, 60, "training epochs"),
    "batch-size": (int, 1000, "mini-batch size"),
    "train-frames": (str, "", "comma-separated frame numbers to train on (default: middle frame)"),
    "max-per-class": (int, 500, "samples per class per training frame"),
    "balance": (_bool, True, "equal background and foreground samples"),
    "eval-frames": (str, "", "frame numbers to classify/evaluate, e.g. 2-40,45 (default: all with history)"),
    # refinement
    "radius": (int, 4, "refinement window radius"),
    "approx-n": (float, 2.0, "width multiplier of the Gaussian approximation"),
    "iterations": (int, 20, "refinement iterations"),
    "shape": (str, "symmetric", "symmetric or as_written"),
    "combine": (str, "product", "combine per-feature scores by product or sum"),
}

SHARED = ["frames", "gt", "model", "out", "seed", "threads", "deterministic", "layout"]
GROUPS = {
    "synth": ["width", "height", "frame-count", "square", "noise", "speed"],
    "train": ["frame-pattern", "gt-pattern", "history", "stride", "include-current",
              "architecture", "adl-filters", "adl-depth", "hidden-units", "use-bias",
              "learning-rate", "epochs", "batch-size", "train-frames", "max-per-class", "balance"],
    "infer": ["frame-pattern", "mask-pattern", "history", "stride", "include-current", "eval-frames"],
    "refine": ["frame-pattern", "mask-pattern", "masks", "eval-frames", "radius", "approx-n",
               "iterations", "shape", "combine"],
    "eval": ["gt-pattern", "mask-pattern", "masks", "eval-frames", "name"],
}
GROUPS["pipeline"] = sorted({k for g in GROUPS.values() for k in g} - {"masks"})

LAYOUTS = {
    "plain": {"frame-pattern": "%06d.png", "gt-pattern": "%06d.png", "mask-pattern": "%06d.png"},
    "cdnet": {"frame-pattern": "in%06d.jpg", "gt-pattern": "gt%06d.png", "mask-pattern": "bin%06d.png"},
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="adnn", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for command, keys in GROUPS.items():
        p = sub.add_parser(command, help=f"{command} step",
                           formatter_class=argparse.ArgumentDefaultsHelpFormatter)
        p.add_argument("--config", default=None, help="key=value settings file")
        for key in SHARED + [k for k in keys if k not in SHARED]:
            typ, default, text = OPTIONS[key]
            shown = ",".join(map(str, default)) if isinstance(default, tuple) else default
            kwargs = {"default": argparse.SUPPRESS, "help": f"{text} (default: {shown})"}
            if typ is _bool:
                kwargs["action"] = argparse.BooleanOptionalAction
            else:
                kwargs["type"] = typ
            p.add_argument(f"--{key}", dest=key.replace("-", "_"), **kwargs)
    return parser


def read_config_file(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"missing config file: {path}")
    out = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("_", "-")
        if key not in OPTIONS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        typ = OPTIONS[key][0]
        try:
            out[key] = typ(value) if value != "" or typ is str else None
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: bad value for {key}: {exc}") from exc
    return out


def resolve(args: argparse.Namespace) -> dict:
    """Merge defaults, config file and flags into one settings dict."""
    settings = {k: v[1] for k, v in OPTIONS.items()}
    if getattr(args, "config", None):
        settings.update(read_config_file(args.config))
    for key in OPTIONS:
        attr = key.replace("-", "_")
        if hasattr(args, attr):
            settings[key] = getattr(args, attr)
    layout = settings["layout"]
    if layout not in LAYOUTS:
        raise ConfigError(f"unknown layout {layout!r}")
    for key, pattern in LAYOUTS[layout].items():
        if settings[key] is None:
            settings[key] = pattern
    return settings


def _require(settings, *keys):
    for key in keys:
        if not settings.get(key):
            raise ConfigError(f"--{key} is required")


def _require_dir(settings, key):
    _require(settings, key)
    if not Path(settings[key]).is_dir():
        raise DataError(f"missing path for --{key}: {settings[key]}")


def _parse_numbers(text) -> list[int] | None:
    text = (text or "").strip()
    if not text:
        return None
    out = []
    for part in text.split(","):
        part = part.strip()
        if "-" in part:
            lo, hi = part.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        elif part:
            out.append(int(part))
    return out


def history_config(s) -> HistoryConfig:
    return HistoryConfig(length=s["history"], stride=s["stride"], include_current=s["include-current"])


def network_config(s) -> NetworkConfig:
    cfg = NetworkConfig(architecture=s["architecture"], adl_filters=s["adl-filters"],
                        adl_depth=s["adl-depth"], hidden_units=s["hidden-units"],
                        use_bias=s["use-bias"])
    try:
        cfg.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def train_config(s) -> TrainConfig:
    cfg = TrainConfig(learning_rate=s["learning-rate"], max_epochs=s["epochs"],
                      batch_size=s["batch-size"], seed=s["seed"], deterministic=s["deterministic"])
    try:
        cfg.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def refine_config(s) -> RefineConfig:
    try:
        cfg = RefineConfig(radius=s["radius"], n=s["approx-n"], iterations=s["iterations"],
                           shape=Shape(s["shape"]), combine=s["combine"])
        cfg.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def synthetic_config(s) -> SyntheticConfig:
    cfg = SyntheticConfig(width=s["width"], height=s["height"], frames=s["frame-count"],
                          square=s["square"], noise=s["noise"], seed=s["seed"],
                          speed=tuple(s["speed"]))
    try:
        cfg.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def _out_dir(s, *parts) -> Path:
    _require(s, "out")
    path = Path(s["out"], *parts)
    path.mkdir(parents=True, exist_ok=True)
    return path


# ---------------------------------------------------------------------------
# steps


def run_synth(s, log=print):
    cfg = synthetic_config(s)
    seq, masks = histio.generate_synthetic(cfg)
    frames_dir = _out_dir(s, "frames")
    gt_dir = _out_dir(s, "gt")
    for t in range(seq.count):
        number = seq.numbers[t]
        histio.save_frame(seq.frames[t], frames_dir / (s["frame-pattern"] % number))
        histio.save_mask(masks[t], gt_dir / (s["gt-pattern"] % number))
    log(f"wrote {seq.count} frames of {cfg.width}x{cfg.height} to {frames_dir}")
    return frames_dir, gt_dir


def _training_numbers(s, seq) -> list[int]:
    numbers = _parse_numbers(s["train-frames"])
    if numbers is None:
        numbers = [seq.numbers[seq.count // 2]]
    return numbers


def run_train(s, log=print):
    _require_dir(s, "frames")
    _require_dir(s, "gt")
    seq = histio.load_sequence(s["frames"], s["frame-pattern"])
    hcfg = history_config(s)
    cfg = network_config(s)
    tcfg = train_config(s)
    xs, ys = [], []
    for k, number in enumerate(_training_numbers(s, seq)):
        idx = seq.index_of(number)
        gt_path = Path(s["gt"], s["gt-pattern"] % number)
        gt = histio.load_gt_mask(gt_path)
        if gt.shape != (seq.height, seq.width):
            raise DataError(f"dimension mismatch: {gt_path} is {gt.shape}, "
                            f"frames are {(seq.height, seq.width)}")
        X, y = extract_training_batch(seq, gt, idx, hcfg, balance=s["balance"],
                                      max_per_class=s["max-per-class"], seed=s["seed"] + k)
        xs.append(X)
        ys.append(y)
    X = np.concatenate(xs)
    y = np.concatenate(ys)
    log(f"training {cfg.architecture} on {len(y)} samples "
        f"({int(y.sum())} foreground) from frames {_training_numbers(s, seq)}")
    params, _ = net.train(X, y, cfg, tcfg,
                          callback=lambda e, loss: log(f"epoch {e + 1}/{tcfg.max_epochs} loss {loss:.6f}"))
    path = _out_dir(s) / "model.adnn"
    net.save_model(params, cfg, path)
    log(f"saved model to {path}")
    return path


def _eval_numbers(s, seq, exclude=()) -> list[int]:
    numbers = _parse_numbers(s["eval-frames"])
    if numbers is None:
        numbers = seq.numbers[1:]
    return [n for n in numbers if n not in set(exclude)]


def run_infer(s, log=print, exclude=()):
    _require_dir(s, "frames")
    _require(s, "model")
    if not Path(s["model"]).is_file():
        raise DataError(f"missing path for --model: {s['model']}")
    seq = histio.load_sequence(s["frames"], s["frame-pattern"])
    params, cfg = net.load_model(s["model"])
    hcfg = history_config(s)
    out = _out_dir(s, "masks")
    numbers = _eval_numbers(s, seq, exclude)
    for number in numbers:
        mask = net.classify_frame(seq, seq.index_of(number), params, cfg, hcfg)
        histio.save_mask(mask, out / (s["mask-pattern"] % number))
    log(f"wrote {len(numbers)} masks to {out}")
    return out


def run_refine(s, log=print):
    _require_dir(s, "frames")
    _require_dir(s, "masks")
    rcfg = refine_config(s)
    seq = histio.load_sequence(s["frames"], s["frame-pattern"])
    out = _out_dir(s, "refined")
    wanted = _parse_numbers(s["eval-frames"])
    count = 0
    for number, path in histio.list_numbered(s["masks"], s["mask-pattern"]):
        if wanted is not None and number not in wanted:
            continue
        mask = histio.load_mask(path)
        frame = seq.frames[seq.index_of(number)]
        if mask.shape != frame.shape[:2]:
            raise DataError(f"dimension mismatch: {path} is {mask.shape}, frames are {frame.shape[:2]}")
        if np.any(mask == Label.IGNORE):
            raise DataError(f"mask is not binary (values other than 0/255): {path}")
        histio.save_mask(refine(frame, mask, rcfg), out / (s["mask-pattern"] % number))
        count += 1
    log(f"refined {count} masks into {out}")
    return out


def run_eval(s, log=print, filename="eval.csv"):
    _require_dir(s, "masks")
    _require_dir(s, "gt")
    wanted = _parse_numbers(s["eval-frames"])
    total = metrics.Confusion()
    count = 0
    for number, mask_path in histio.list_numbered(s["masks"], s["mask-pattern"]):
        if wanted is not None and number not in wanted:
            continue
        gt_path = Path(s["gt"], s["gt-pattern"] % number)
        if not gt_path.is_file():
            raise DataError(f"no ground truth for {mask_path}: expected {gt_path}")
        pred = histio.load_mask(mask_path)
        gt = histio.load_gt_mask(gt_path)
        if pred.shape != gt.shape:
            raise DataError(f"dimension mismatch: {mask_path} is {pred.shape}, {gt_path} is {gt.shape}")
        if np.any(pred == Label.IGNORE):
            raise DataError(f"mask is not binary (values other than 0/255): {mask_path}")
        total = total + metrics.confusion(pred, gt)
        count += 1
    if count == 0:
        raise DataError(f"no masks matched {s['mask-pattern']!r} in {s['masks']}")
    report = metrics.aggregate({s["name"]: total})
    text = report.to_csv()
    path = _out_dir(s) / filename
    path.write_text(text, encoding="utf-8")
    log(text.rstrip())
    return path


def run_pipeline(s, log=print):
    s = dict(s)
    _require(s, "out")
    if not s.get("frames"):
        frames_dir, gt_dir = run_synth(s, log)
        s["frames"], s["gt"] = str(frames_dir), str(gt_dir)
    s["model"] = str(run_train(s, log))
    seq = histio.load_sequence(s["frames"], s["frame-pattern"])
    train_numbers = _training_numbers(s, seq)
    masks_dir = run_infer(s, log, exclude=train_numbers)
    s["masks"] = str(masks_dir)
    if s["eval-frames"] == "":
        s["eval-frames"] = ",".join(map(str, _eval_numbers(s, seq, train_numbers)))
    run_eval(s, log, filename="eval_raw.csv")
    s["masks"] = str(run_refine(s, log))
    return run_eval(s, log, filename="eval.csv")


COMMANDS = {
    "synth": run_synth,
    "train": run_train,
    "infer": run_infer,
    "refine": run_refine,
    "eval": run_eval,
    "pipeline": run_pipeline,
}


def _thread_limit(s):
    threads = s["threads"]
    if s["deterministic"] and threads == 0:
        threads = 1
    if threads <= 0:
        return nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=threads)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        settings = resolve(args)
        with _thread_limit(settings):
            COMMANDS[args.command](settings)
    except ConfigError as exc:
        print(f"error[config]: {exc}", file=sys.stderr)
        return 2
    except (DataError, ModelFormatError) as exc:
        print(f"error[data]: {exc}", file=sys.stderr)
        return 3
    except (ValueError, FloatingPointError) as exc:
        print(f"error[invalid]: {exc}", file=sys.stderr)
        return 4
    except OSError as exc:
        print(f"error[io]: {exc}", file=sys.stderr)
        return 5
    return 0


if __name__ == "__main__":
    sys.exit(main())
