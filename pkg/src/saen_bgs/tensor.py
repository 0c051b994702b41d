"""Dense tensor plumbing: convolutions, parameter store, RMSprop and checkpoints.

Arrays are ``torch.Tensor`` in NCHW layout, float32. Autograd is torch's tape;
:func:`backward` adds the single-use guard and returns gradients by name.
"""
from __future__ import annotations

import json
import struct
import warnings
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

DTYPE = torch.float32


class ShapeError(ValueError):
    pass


@dataclass(frozen=True)
class ConvSpec:
    in_channels: int
    out_channels: int
    kernel_size: int
    stride: int = 1
    padding: int = 0
    transposed: bool = False
    name: str = "conv"

    def __post_init__(self):
        if self.kernel_size < 1 or self.stride < 1 or self.padding < 0:
            raise ValueError(f"{self.name}: need kernel_size >= 1, stride >= 1, padding >= 0")
        if self.in_channels < 1 or self.out_channels < 1:
            raise ValueError(f"{self.name}: channel counts must be positive")

    @property
    def weight_shape(self) -> tuple[int, int, int, int]:
        k = self.kernel_size
        if self.transposed:
            return (self.in_channels, self.out_channels, k, k)
        return (self.out_channels, self.in_channels, k, k)

    def output_size(self, h: int, w: int) -> tuple[int, int]:
        k, s, p = self.kernel_size, self.stride, self.padding
        if self.transposed:
            oh, ow = (h - 1) * s - 2 * p + k, (w - 1) * s - 2 * p + k
        else:
            oh, ow = (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1
        if oh < 1 or ow < 1:
            raise ShapeError(f"{self.name}: input {h}x{w} gives empty output {oh}x{ow}")
        return oh, ow

    def to_dict(self) -> dict:
        return {
            "in_channels": self.in_channels,
            "out_channels": self.out_channels,
            "kernel_size": self.kernel_size,
            "stride": self.stride,
            "padding": self.padding,
            "transposed": self.transposed,
            "name": self.name,
        }


def _check_input(x: torch.Tensor, spec: ConvSpec, weight: torch.Tensor) -> None:
    if x.dim() != 4:
        raise ShapeError(f"{spec.name}: expected 4-D input, got shape {tuple(x.shape)}")
    if x.shape[1] != spec.in_channels:
        raise ShapeError(
            f"{spec.name}: input has {x.shape[1]} channels, layer expects {spec.in_channels}"
        )
    if tuple(weight.shape) != spec.weight_shape:
        raise ShapeError(
            f"{spec.name}: weight shape {tuple(weight.shape)} != {spec.weight_shape}"
        )
    spec.output_size(x.shape[2], x.shape[3])


def conv2d_forward(x, spec: ConvSpec, weight, bias=None):
    if spec.transposed:
        raise ShapeError(f"{spec.name}: transposed spec passed to conv2d_forward")
    _check_input(x, spec, weight)
    return F.conv2d(x, weight, bias, stride=spec.stride, padding=spec.padding)


def tconv2d_forward(x, spec: ConvSpec, weight, bias=None):
    """Transposed convolution (scatter form, zero output padding)."""
    if not spec.transposed:
        raise ShapeError(f"{spec.name}: plain spec passed to tconv2d_forward")
    _check_input(x, spec, weight)
    return F.conv_transpose2d(x, weight, bias, stride=spec.stride, padding=spec.padding)


def layer_forward(x, spec: ConvSpec, weight, bias=None):
    if spec.transposed:
        return tconv2d_forward(x, spec, weight, bias)
    return conv2d_forward(x, spec, weight, bias)


def relu(x):
    return torch.relu(x)


class ParamStore:
    """Named leaf parameters plus one RMSprop running average per parameter."""

    def __init__(self):
        self.params: dict[str, torch.Tensor] = {}
        self.sq_avg: dict[str, torch.Tensor] = {}

    def add(self, name: str, value: torch.Tensor) -> torch.Tensor:
        if name in self.params:
            raise KeyError(f"duplicate parameter {name!r}")
        p = value.detach().to(DTYPE).clone().requires_grad_(True)
        self.params[name] = p
        self.sq_avg[name] = torch.zeros_like(p, requires_grad=False)
        return p

    def __getitem__(self, name: str) -> torch.Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __iter__(self):
        return iter(self.params)

    def __len__(self) -> int:
        return len(self.params)

    def numel(self) -> int:
        return sum(p.numel() for p in self.params.values())

    def checksum(self, name: str) -> int:
        return zlib.crc32(self.params[name].detach().numpy().tobytes())

    def snapshot(self) -> dict[str, torch.Tensor]:
        return {k: v.detach().clone() for k, v in self.params.items()}

    def restore(self, snap: dict[str, torch.Tensor]) -> None:
        with torch.no_grad():
            for k, v in snap.items():
                self.params[k].copy_(v)

    def reset_optimizer(self) -> None:
        for v in self.sq_avg.values():
            v.zero_()


class GradientError(RuntimeError):
    pass


def backward(loss: torch.Tensor, store: ParamStore) -> dict[str, torch.Tensor]:
    """Reverse pass from a scalar loss; returns a gradient for every parameter.

    A loss may only be differentiated once; the graph is freed afterwards.
    """
    if loss.numel() != 1:
        raise GradientError("backward needs a scalar loss")
    if getattr(loss, "_consumed", False):
        raise GradientError("backward already called on this loss; run a new forward pass")
    names = list(store.params)
    if not loss.requires_grad:
        grads = [None] * len(names)
    else:
        grads = torch.autograd.grad(loss, [store.params[n] for n in names], allow_unused=True)
    loss._consumed = True
    return {
        n: (torch.zeros_like(store.params[n]) if g is None else g.detach())
        for n, g in zip(names, grads)
    }


def rmsprop_step(
    store: ParamStore,
    grads: dict[str, torch.Tensor],
    lr: float,
    decay: float = 0.99,
    eps: float = 1e-8,
) -> list[str]:
    """In-place RMSprop update. Returns names skipped for non-finite gradients."""
    skipped = []
    with torch.no_grad():
        for name, g in grads.items():
            p = store.params[name]
            if g.shape != p.shape:
                raise ShapeError(f"gradient for {name} has shape {tuple(g.shape)}, param {tuple(p.shape)}")
            if not torch.isfinite(g).all():
                warnings.warn(f"non-finite gradient for {name}; step skipped", RuntimeWarning)
                skipped.append(name)
                continue
            v = store.sq_avg[name]
            v.mul_(decay).addcmul_(g, g, value=1.0 - decay)
            p.addcdiv_(g, v.sqrt().add_(eps), value=-lr)
    return skipped


# --- checkpoint file -------------------------------------------------------
#
# little-endian layout:
#   magic  b"SAENCKPT"           8 bytes
#   version                       u32 (=1)
#   meta_len                      u32, followed by meta_len bytes of UTF-8 JSON
#   n_entries                     u32
#   per entry:
#     name_len u16, name (UTF-8)
#     ndim u8, dims u32 * ndim
#     values f32 * prod(dims)
# Optimizer state is stored as entries named "opt/<param name>".

MAGIC = b"SAENCKPT"
VERSION = 1


def save_checkpoint(path, store: ParamStore, meta: dict | None = None, optimizer: bool = True) -> None:
    entries = [(n, p.detach()) for n, p in store.params.items()]
    if optimizer:
        entries += [(f"opt/{n}", v) for n, v in store.sq_avg.items()]
    blob = json.dumps(meta or {}, sort_keys=True).encode()
    out = bytearray(MAGIC)
    out += struct.pack("<II", VERSION, len(blob)) + blob
    out += struct.pack("<I", len(entries))
    for name, t in entries:
        nb = name.encode()
        out += struct.pack("<H", len(nb)) + nb
        out += struct.pack("<B", t.dim()) + struct.pack(f"<{t.dim()}I", *t.shape)
        out += t.contiguous().numpy().astype("<f4").tobytes()
    Path(path).write_bytes(bytes(out))


def read_checkpoint(path) -> tuple[dict[str, torch.Tensor], dict]:
    buf = Path(path).read_bytes()
    if buf[:8] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    version, meta_len = struct.unpack_from("<II", buf, 8)
    if version != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    off = 16
    meta = json.loads(buf[off:off + meta_len].decode())
    off += meta_len
    (n,) = struct.unpack_from("<I", buf, off)
    off += 4
    tensors = {}
    for _ in range(n):
        (nl,) = struct.unpack_from("<H", buf, off)
        off += 2
        name = buf[off:off + nl].decode()
        off += nl
        (ndim,) = struct.unpack_from("<B", buf, off)
        off += 1
        dims = struct.unpack_from(f"<{ndim}I", buf, off)
        off += 4 * ndim
        count = 1
        for d in dims:
            count *= d
        arr = np.frombuffer(buf, dtype="<f4", count=count, offset=off).reshape(dims)
        off += 4 * count
        tensors[name] = torch.from_numpy(arr.astype("float32"))
    return tensors, meta


def load_checkpoint(path, store: ParamStore) -> dict:
    """Load parameters (and optimizer state if present) into ``store``; returns metadata."""
    tensors, meta = read_checkpoint(path)
    problems = []
    for name, p in store.params.items():
        if name not in tensors:
            problems.append(f"{name}: missing (expected {tuple(p.shape)})")
        elif tuple(tensors[name].shape) != tuple(p.shape):
            problems.append(f"{name}: checkpoint {tuple(tensors[name].shape)} vs network {tuple(p.shape)}")
    extra = [n for n in tensors if not n.startswith("opt/") and n not in store.params]
    problems += [f"{n}: not in network" for n in extra]
    if problems:
        raise ShapeError("checkpoint topology mismatch:\n  " + "\n  ".join(problems))
    with torch.no_grad():
        for name, p in store.params.items():
            p.copy_(tensors[name])
            if f"opt/{name}" in tensors:
                store.sq_avg[name].copy_(tensors[f"opt/{name}"])
    return meta
