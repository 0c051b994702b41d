"""Command line: ``saen-bgs {train,infer,eval,profile}``.

Every subcommand reads one YAML run config (``--config`` and/or ``--preset``)
with sections ``network``, ``train`` and ``data``. Failures exit with status 2
and print one line ``error: {"field": ..., "message": ...}`` on stderr.
"""
from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import torch
import yaml
from PIL import Image

from .data import DatasetError, SplitScheme, load_dataset, load_frames, make_split, synth_video
from .energy import profile_network
from .metrics import METRIC_NAMES, Confusion, accumulate, metrics
from .network import NetworkConfig, build_network, predict_mask
from .spiking import write_spike_trace
from .tensor import load_checkpoint
from .training import TrainConfig, fit

log = logging.getLogger("saen_bgs")


class ConfigError(Exception):
    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field
        self.message = message


DEFAULT_DATA = {
    "root": None,
    "synthetic": {"length": 200, "size": None, "n_objects": 1, "noise": 0.02, "seed": 0, "drift": 0.0},
    "split": {"kind": "fraction", "value": 0.7, "seed": 0},
}


@dataclass
class RunConfig:
    network: NetworkConfig
    train: TrainConfig
    data: dict = field(default_factory=lambda: copy.deepcopy(DEFAULT_DATA))
    seed: int = 0

    def to_dict(self) -> dict:
        return {"seed": self.seed, "network": self.network.to_dict(), "train": self.train.to_dict(), "data": self.data}


def preset_names() -> list[str]:
    return sorted(p.name[:-5] for p in resources.files("saen_bgs.presets").iterdir() if p.name.endswith(".yaml"))


def _read_yaml(text: str, where: str) -> dict:
    try:
        d = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(where, f"invalid YAML: {exc}") from exc
    if not isinstance(d, dict):
        raise ConfigError(where, "config must be a mapping")
    return d


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def resolve_config(config: str | None, preset: str | None, seed: int | None) -> RunConfig:
    raw: dict = {}
    if preset is not None:
        if preset not in preset_names():
            raise ConfigError("--preset", f"unknown preset {preset!r}; available: {', '.join(preset_names())}")
        text = resources.files("saen_bgs.presets").joinpath(f"{preset}.yaml").read_text()
        raw = _read_yaml(text, f"preset:{preset}")
    if config is not None:
        path = Path(config)
        if not path.is_file():
            raise ConfigError("--config", f"file not found: {path}")
        raw = _merge(raw, _read_yaml(path.read_text(), str(path)))
    unknown = set(raw) - {"network", "train", "data", "seed"}
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown top-level key")
    run_seed = int(raw.get("seed", 0) if seed is None else seed)
    try:
        net_cfg = NetworkConfig.from_dict(raw.get("network", {}))
        net_cfg.validate()
    except (TypeError, ValueError) as exc:
        raise ConfigError("network", str(exc)) from exc
    try:
        train_raw = dict(raw.get("train", {}))
        # alpha may be given in either section; training reads train.alpha
        net_alpha = raw.get("network", {}).get("alpha")
        if net_alpha is not None:
            if "alpha" in train_raw and float(train_raw["alpha"]) != float(net_alpha):
                raise ValueError(f"network.alpha={net_alpha} disagrees with train.alpha={train_raw['alpha']}")
            train_raw["alpha"] = net_alpha
        else:
            net_cfg.alpha = float(train_raw.get("alpha", TrainConfig.alpha))
        if seed is not None or "seed" not in train_raw:
            train_raw["seed"] = run_seed
        train_cfg = TrainConfig.from_dict(train_raw)
        train_cfg.validate()
    except (TypeError, ValueError) as exc:
        raise ConfigError("train", str(exc)) from exc
    data = _merge(DEFAULT_DATA, raw.get("data", {}))
    unknown = set(data) - set(DEFAULT_DATA)
    if unknown:
        raise ConfigError(f"data.{sorted(unknown)[0]}", "unknown key")
    if data["root"] is not None and not Path(data["root"]).is_dir():
        raise ConfigError("data.root", f"directory not found: {data['root']}")
    try:
        SplitScheme(**data["split"])
    except TypeError as exc:
        raise ConfigError("data.split", str(exc)) from exc
    return RunConfig(net_cfg, train_cfg, data, run_seed)


def _dataset(cfg: RunConfig):
    size = tuple(cfg.network.input_size)
    if cfg.data["root"] is not None:
        return load_dataset(cfg.data["root"], size)
    syn = dict(cfg.data["synthetic"])
    syn["size"] = tuple(syn["size"]) if syn.get("size") else size
    return synth_video(**syn)


def _writable(out: str | None, flag: str = "--out") -> Path:
    if out is None:
        raise ConfigError(flag, "output directory required")
    p = Path(out)
    if p.exists() and not p.is_dir():
        raise ConfigError(flag, f"not a directory: {p}")
    parent = p if p.exists() else p.parent
    while not parent.exists():
        parent = parent.parent
    if not parent.is_dir() or not os.access(parent, os.W_OK):
        raise ConfigError(flag, f"not writable: {p}")
    return p


def _existing(path: str | None, flag: str, kind: str = "file") -> Path:
    if path is None:
        raise ConfigError(flag, "required")
    p = Path(path)
    ok = p.is_file() if kind == "file" else p.is_dir()
    if not ok:
        raise ConfigError(flag, f"{kind} not found: {p}")
    return p


def cmd_train(args) -> int:
    cfg = resolve_config(args.config, args.preset, args.seed)
    out = _writable(args.out)
    resume = _existing(args.resume, "--resume") if args.resume else None
    if args.epochs is not None:
        cfg.train.epochs = args.epochs
        try:
            cfg.train.validate()
        except ValueError as exc:
            raise ConfigError("train.epochs", str(exc)) from exc
    try:
        ds = _dataset(cfg)
        train_idx, test_idx = make_split(len(ds), SplitScheme(**cfg.data["split"]))
    except (DatasetError, ValueError) as exc:
        raise ConfigError("data", str(exc)) from exc
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.yaml").write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=False))
    (out / "split.json").write_text(json.dumps({"train": train_idx.tolist(), "test": test_idx.tolist()}))
    net = build_network(cfg.network, cfg.seed)
    fit(net, ds.subset(train_idx), ds.subset(test_idx), cfg.train, out, resume=resume)
    return 0


def _load_net(cfg: RunConfig, checkpoint: Path):
    net = build_network(cfg.network, cfg.seed)
    try:
        load_checkpoint(checkpoint, net.store)
    except ValueError as exc:  # ShapeError included
        raise ConfigError("--checkpoint", str(exc)) from exc
    return net


def cmd_infer(args) -> int:
    cfg = resolve_config(args.config, args.preset, args.seed)
    ckpt = _existing(args.checkpoint, "--checkpoint")
    frames_dir = _existing(args.frames, "--frames", "dir")
    out = _writable(args.out)
    net = _load_net(cfg, ckpt)
    try:
        frames, names = load_frames(frames_dir, tuple(cfg.network.input_size))
    except DatasetError as exc:
        raise ConfigError("--frames", str(exc)) from exc
    out.mkdir(parents=True, exist_ok=True)
    if args.record_spikes:
        (out / "spikes").mkdir(exist_ok=True)
    for i, name in enumerate(names):
        frame = frames[i:i + 1]
        if args.record_spikes:
            logits, rasters = net.forward_spiking_inference(frame, record=True)
            write_spike_trace(out / "spikes" / f"{name}.tsv", rasters)
        else:
            logits = net.forward_spiking_inference(frame)
        mask = predict_mask(logits)[0].numpy() * 255
        Image.fromarray(mask.astype(np.uint8)).save(out / f"{name}.png")
    return 0


def _mask_files(folder: Path) -> list[Path]:
    if (folder / "groundtruth").is_dir():
        folder = folder / "groundtruth"
    return sorted(p for p in folder.iterdir() if p.is_file() and p.suffix.lower() in {".png", ".bmp", ".jpg", ".jpeg", ".tif", ".tiff"})


def _read_mask(p: Path, size=None) -> np.ndarray:
    with Image.open(p) as im:
        im = im.convert("L")
        if size is not None and im.size != (size[1], size[0]):
            im = im.resize((size[1], size[0]), Image.NEAREST)
        return np.asarray(im) >= 128


def _video_pairs(pred: Path, gt: Path) -> list[tuple[str, Path, Path]]:
    if _mask_files(pred):
        return [(pred.name, pred, gt)]
    pairs = []
    for sub in sorted(p for p in pred.iterdir() if p.is_dir()):
        if not (gt / sub.name).is_dir():
            raise ConfigError("--gt", f"no ground truth folder for video {sub.name}")
        pairs.append((sub.name, sub, gt / sub.name))
    if not pairs:
        raise ConfigError("--pred", f"no mask images or video folders in {pred}")
    return pairs


def evaluate_dirs(pred: Path, gt: Path) -> list[tuple[str, Confusion]]:
    rows = []
    for video, pdir, gdir in _video_pairs(pred, gt):
        pfiles, gfiles = _mask_files(pdir), _mask_files(gdir)
        if len(pfiles) != len(gfiles):
            raise ConfigError("--pred", f"{video}: {len(pfiles)} predictions vs {len(gfiles)} ground-truth masks")
        conf = Confusion()
        for pf, gf in zip(pfiles, gfiles):
            g = _read_mask(gf)
            conf = conf + accumulate(_read_mask(pf, g.shape), g)
        rows.append((video, conf))
    return rows


def write_metrics_csv(path: Path, rows: list[tuple[str, Confusion]]) -> None:
    """Columns: video, TP, FP, FN, TN, then the seven metrics in percent ("NA" when undefined).
    A final ``ALL`` row pools the confusions of every video."""
    total = Confusion()
    for _, c in rows:
        total = total + c
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["video", "TP", "FP", "FN", "TN", *METRIC_NAMES])
        for name, c in [*rows, ("ALL", total)]:
            m = metrics(c)
            w.writerow([name, c.TP, c.FP, c.FN, c.TN, *("NA" if m[k] is None else repr(m[k]) for k in METRIC_NAMES)])


def cmd_eval(args) -> int:
    pred = _existing(args.pred, "--pred", "dir")
    gt = _existing(args.gt, "--gt", "dir")
    out = _writable(args.out)
    rows = evaluate_dirs(pred, gt)
    out.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(out / "metrics.csv", rows)
    return 0


def cmd_profile(args) -> int:
    cfg = resolve_config(args.config, args.preset, args.seed)
    ckpt = _existing(args.checkpoint, "--checkpoint")
    frames_dir = _existing(args.frames, "--frames", "dir")
    out = _writable(args.out)
    net = _load_net(cfg, ckpt)
    try:
        frames, _ = load_frames(frames_dir, tuple(cfg.network.input_size))
    except DatasetError as exc:
        raise ConfigError("--frames", str(exc)) from exc
    report = profile_network(net, frames)
    report.write(out)
    return 0


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        print("error: " + json.dumps({"field": "argv", "message": message}), file=sys.stderr)
        self.exit(2)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="saen-bgs", description="Spiking autoencoder background subtraction")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, needs_config=True):
        if needs_config:
            sp.add_argument("--config", help="YAML run config")
            sp.add_argument("--preset", help=f"named preset ({', '.join(preset_names())})")
            sp.add_argument("--seed", type=int, help="override the run seed")
        sp.add_argument("--out", required=True, help="output directory")

    sp = sub.add_parser("train", help="self-distillation training")
    common(sp)
    sp.add_argument("--epochs", type=int, help="override train.epochs")
    sp.add_argument("--resume", help="checkpoint to continue from")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("infer", help="spike-only inference to mask images")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--frames", required=True, help="folder of input frames")
    sp.add_argument("--record-spikes", action="store_true", help="dump per-layer spike traces")
    sp.set_defaults(func=cmd_infer)

    sp = sub.add_parser("eval", help="seven CDnet metrics from mask folders")
    common(sp, needs_config=False)
    sp.add_argument("--pred", required=True)
    sp.add_argument("--gt", required=True)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("profile", help="FLOPs / energy report")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--frames", required=True)
    sp.set_defaults(func=cmd_profile)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    torch.use_deterministic_algorithms(True)
    try:
        return args.func(args)
    except ConfigError as exc:
        print("error: " + json.dumps({"field": exc.field, "message": exc.message}), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
