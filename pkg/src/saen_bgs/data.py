"""Frame-folder datasets, train/test splits and a synthetic moving-object video.

Folder layout (CDnet style)::

    root/
      input/         frames, any PIL-readable 8-bit format, lexicographic order
      groundtruth/   masks, same count and order; foreground = white (255)
      roi/           optional; one image for all frames or one per frame,
                     nonzero = evaluated, zero = ignored
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"}


class DatasetError(ValueError):
    pass


@dataclass
class VideoDataset:
    frames: torch.Tensor  # (N, 3, H, W) float32 in [0, 1]
    masks: torch.Tensor  # (N, H, W) uint8 in {0, 1}
    ignore: torch.Tensor | None = None  # (N, H, W) bool, True = excluded from scoring
    names: list[str] = field(default_factory=list)
    gray_pixels: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.frames.shape[0] != self.masks.shape[0]:
            raise DatasetError(f"{self.frames.shape[0]} frames but {self.masks.shape[0]} masks")
        if self.frames.shape[2:] != self.masks.shape[1:]:
            raise DatasetError("frames and masks differ in spatial size")
        if not self.names:
            self.names = [f"{i:06d}" for i in range(len(self))]

    def __len__(self) -> int:
        return int(self.frames.shape[0])

    @property
    def size(self) -> tuple[int, int]:
        return tuple(self.frames.shape[2:])

    def subset(self, idx) -> "VideoDataset":
        idx = torch.as_tensor(np.asarray(idx, dtype=np.int64))
        return VideoDataset(
            self.frames[idx],
            self.masks[idx],
            None if self.ignore is None else self.ignore[idx],
            [self.names[i] for i in idx.tolist()],
        )


def _frame_tensor(arr: np.ndarray) -> torch.Tensor:
    """uint8 HxWx3 -> float32 3xHxW in [0, 1]."""
    return torch.from_numpy(arr.astype(np.float32) / np.float32(255.0)).permute(2, 0, 1).contiguous()


def _list_images(folder: Path) -> list[Path]:
    if not folder.is_dir():
        raise DatasetError(f"missing folder: {folder}")
    files = sorted(p for p in folder.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if not files:
        raise DatasetError(f"no image files in {folder}")
    return files


def _open(path: Path, mode: str, size, resample) -> np.ndarray:
    try:
        with Image.open(path) as im:
            im = im.convert(mode)
            if size is not None and im.size != (size[1], size[0]):
                im = im.resize((size[1], size[0]), resample)
            return np.asarray(im)
    except (OSError, ValueError) as exc:
        raise DatasetError(f"cannot decode {path}: {exc}") from exc


def load_frames(folder, target_size=None) -> tuple[torch.Tensor, list[str]]:
    files = _list_images(Path(folder))
    frames = [_frame_tensor(_open(p, "RGB", target_size, Image.BILINEAR)) for p in files]
    return torch.stack(frames), [p.stem for p in files]


def load_masks(folder, target_size=None) -> tuple[torch.Tensor, int]:
    """Binarize at half intensity; returns masks and the number of gray pixels seen."""
    files = _list_images(Path(folder))
    masks, gray = [], 0
    for p in files:
        m = _open(p, "L", target_size, Image.NEAREST)
        gray += int(np.count_nonzero((m > 0) & (m < 255)))
        masks.append(torch.from_numpy((m >= 128).astype(np.uint8)))
    return torch.stack(masks), gray


def load_dataset(root, target_size=None) -> VideoDataset:
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"dataset root does not exist: {root}")
    frames, names = load_frames(root / "input", target_size)
    masks, gray = load_masks(root / "groundtruth", target_size)
    if len(frames) != len(masks):
        raise DatasetError(f"{root}: {len(frames)} frames in input/ but {len(masks)} masks in groundtruth/")
    if gray:
        log.warning("%s: %d gray ground-truth pixels binarized at 0.5", root, gray)
    ignore = None
    roi_dir = root / "roi"
    if roi_dir.is_dir():
        rois = [_open(p, "L", tuple(frames.shape[2:]), Image.NEAREST) for p in _list_images(roi_dir)]
        if len(rois) == 1:
            rois = rois * len(frames)
        if len(rois) != len(frames):
            raise DatasetError(f"{roi_dir}: {len(rois)} roi images for {len(frames)} frames")
        ignore = torch.from_numpy(np.stack(rois) == 0)
    return VideoDataset(frames, masks, ignore, names, gray_pixels=gray)


def save_dataset(ds: VideoDataset, root) -> None:
    root = Path(root)
    (root / "input").mkdir(parents=True, exist_ok=True)
    (root / "groundtruth").mkdir(parents=True, exist_ok=True)
    frames = np.round(ds.frames.permute(0, 2, 3, 1).numpy() * 255.0).astype(np.uint8)
    for i, name in enumerate(ds.names):
        Image.fromarray(frames[i]).save(root / "input" / f"in{name}.png")
        Image.fromarray(ds.masks[i].numpy() * 255).save(root / "groundtruth" / f"gt{name}.png")
    if ds.ignore is not None:
        (root / "roi").mkdir(exist_ok=True)
        for i, name in enumerate(ds.names):
            roi = (~ds.ignore[i].numpy()).astype(np.uint8) * 255
            Image.fromarray(roi).save(root / "roi" / f"roi{name}.png")


@dataclass(frozen=True)
class SplitScheme:
    kind: str = "fraction"  # "fraction" | "fixed-count"
    value: float = 0.7
    seed: int = 0


def make_split(n_frames: int, scheme: SplitScheme) -> tuple[np.ndarray, np.ndarray]:
    """Random train/test partition of ``range(n_frames)``; both parts sorted."""
    if scheme.kind == "fraction":
        if not 0.0 < scheme.value < 1.0:
            raise ValueError(f"split fraction must lie in (0, 1), got {scheme.value}")
        n_train = int(round(scheme.value * n_frames))
    elif scheme.kind == "fixed-count":
        n_train = int(scheme.value)
        if n_train != scheme.value or n_train < 1:
            raise ValueError(f"fixed-count split needs a positive integer, got {scheme.value}")
        if n_train > n_frames:
            raise ValueError(f"cannot take {n_train} training frames from a {n_frames}-frame video")
    else:
        raise ValueError(f"unknown split kind {scheme.kind!r}")
    perm = np.random.default_rng(scheme.seed).permutation(n_frames)
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


def synth_video(
    length: int = 200,
    size: tuple[int, int] = (64, 64),
    n_objects: int = 1,
    noise: float = 0.02,
    seed: int = 0,
    drift: float = 0.0,
    object_size: tuple[int, int] = (14, 22),
) -> VideoDataset:
    """Bright rectangles bouncing over a static textured background.

    ``drift`` modulates global brightness by up to +-drift over the clip;
    the ground truth does not depend on it or on ``noise``.
    """
    h, w = size
    if h < 16 or w < 16:
        raise ValueError("synthetic video needs at least 16x16 frames")
    if not 1 <= object_size[0] <= object_size[1] < min(h, w):
        raise ValueError(f"object_size {object_size} must be an increasing range below the frame side")
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    bg = np.empty((h, w, 3))
    for ch in range(3):
        tex = np.zeros((h, w))
        for _ in range(4):
            fy, fx = rng.uniform(0.5, 3.0, size=2) * 2 * np.pi
            tex += np.sin(fy * yy / h + fx * xx / w + rng.uniform(0, 2 * np.pi))
        bg[..., ch] = 0.35 + 0.05 * tex
    bg = np.clip(bg, 0.0, 1.0)

    objs = []
    for _ in range(n_objects):
        oh, ow = rng.integers(object_size[0], object_size[1] + 1, size=2)
        objs.append({
            "h": int(oh), "w": int(ow),
            "y": float(rng.uniform(0, h - oh)), "x": float(rng.uniform(0, w - ow)),
            "vy": float(rng.uniform(1.0, 3.0) * rng.choice([-1, 1])),
            "vx": float(rng.uniform(1.0, 3.0) * rng.choice([-1, 1])),
            "color": rng.uniform(0.75, 1.0, size=3),
        })

    frames, masks, boxes = [], [], []
    for t in range(length):
        img = bg.copy()
        mask = np.zeros((h, w), dtype=np.uint8)
        frame_boxes = []
        for o in objs:
            y0, x0 = int(round(o["y"])), int(round(o["x"]))
            img[y0:y0 + o["h"], x0:x0 + o["w"]] = o["color"]
            mask[y0:y0 + o["h"], x0:x0 + o["w"]] = 1
            frame_boxes.append((y0, x0, o["h"], o["w"]))
            for pos, vel, extent, lim in (("y", "vy", "h", h), ("x", "vx", "w", w)):
                o[pos] += o[vel]
                if o[pos] < 0 or o[pos] > lim - o[extent]:
                    o[vel] = -o[vel]
                    o[pos] = min(max(o[pos], 0.0), float(lim - o[extent]))
        if drift:
            img = img * (1.0 + drift * np.sin(2 * np.pi * t / max(length, 1)))
        if noise:
            img = img + rng.normal(0.0, noise, size=img.shape)
        u8 = np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
        frames.append(_frame_tensor(u8))
        masks.append(torch.from_numpy(mask))
        boxes.append(frame_boxes)
    return VideoDataset(torch.stack(frames), torch.stack(masks), meta={"boxes": boxes})
