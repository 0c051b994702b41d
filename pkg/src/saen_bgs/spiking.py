"""Integrate-and-fire simulation with soft reset, direct-current encoding and
the ReLU spike-count approximation used as the training surrogate."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .tensor import ConvSpec, ShapeError, layer_forward


@dataclass(frozen=True)
class NeuronConfig:
    threshold: float = 1.0
    resistance: float = 1.0
    n_steps: int = 10
    rest_potential: float = 0.0  # initial membrane potential only

    def __post_init__(self):
        if not self.threshold > 0:
            raise ValueError("threshold must be > 0")
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")


def if_step(u_prev, current, s_prev, cfg: NeuronConfig):
    """One Euler step of the IF membrane: integrate, subtract last spike, fire on U >= theta."""
    if u_prev.shape != current.shape or u_prev.shape != s_prev.shape:
        raise ShapeError(
            f"if_step shapes differ: U {tuple(u_prev.shape)}, I {tuple(current.shape)}, S {tuple(s_prev.shape)}"
        )
    u = u_prev + cfg.resistance * current - cfg.threshold * s_prev
    s = (u >= cfg.threshold).to(u.dtype)
    return u, s


def simulate_if(currents, cfg: NeuronConfig, constant: bool = False):
    """Run the membrane over the window.

    ``currents`` is (T, ...) per-step input, or a single (...) tensor injected
    at every step when ``constant`` is set. Returns the binary (T, ...) train.
    """
    if constant:
        steps = [currents] * cfg.n_steps
    else:
        if currents.shape[0] != cfg.n_steps:
            raise ShapeError(f"current window {currents.shape[0]} != n_steps {cfg.n_steps}")
        steps = currents.unbind(0)
    u = torch.full_like(steps[0], cfg.rest_potential)
    s = torch.zeros_like(steps[0])
    out = []
    for i_t in steps:
        u, s = if_step(u, i_t, s, cfg)
        out.append(s)
    return torch.stack(out)


def encode_direct(frame, spec: ConvSpec, weight, bias, cfg: NeuronConfig):
    """Encoding layer: the conv of the frame is a constant current at every step."""
    with torch.no_grad():
        current = layer_forward(frame, spec, weight, bias)
        spikes = simulate_if(current, cfg, constant=True)
    return spikes, spikes.sum(0)


def synaptic_currents(s_in, spec: ConvSpec, weight, bias):
    t, b = s_in.shape[:2]
    flat = s_in.reshape(t * b, *s_in.shape[2:])
    cur = layer_forward(flat, spec, weight, bias)
    return cur.reshape(t, b, *cur.shape[1:])


def run_spike_layer(s_in, spec: ConvSpec, weight, bias, cfg: NeuronConfig):
    if s_in.dim() != 5:
        raise ShapeError(f"{spec.name}: spike train must be 5-D (T, N, C, H, W)")
    if s_in.shape[0] != cfg.n_steps:
        raise ShapeError(f"{spec.name}: spike train has {s_in.shape[0]} steps, config says {cfg.n_steps}")
    with torch.no_grad():
        spikes = simulate_if(synaptic_currents(s_in, spec, weight, bias), cfg)
    return spikes, spikes.sum(0)


def approx_spike_count(c_in, spec: ConvSpec, weight, bias, cfg: NeuronConfig):
    """a = (R / theta) * relu(W * c_in + b * N_t); differentiable in weight, bias and c_in."""
    drive = layer_forward(c_in, spec, weight, None)
    if bias is not None:
        drive = drive + bias.view(1, -1, 1, 1) * cfg.n_steps
    return torch.relu(drive) * (cfg.resistance / cfg.threshold)


def approx_encoding_count(frame, spec: ConvSpec, weight, bias, cfg: NeuronConfig):
    """Count estimate for a constant-current neuron: relu(N_t * R * I) / theta."""
    current = layer_forward(frame, spec, weight, bias)
    return torch.relu(current * cfg.n_steps) * (cfg.resistance / cfg.threshold)


def aggregate_membrane(c_last, spec: ConvSpec, weight, bias):
    """Decoding layer: non-spiking potential driven by the final spike counts."""
    return layer_forward(c_last, spec, weight, bias)


class _CountStraightThrough(torch.autograd.Function):
    @staticmethod
    def forward(ctx, approx, counts):
        return counts.clone()

    @staticmethod
    def backward(ctx, grad):
        return grad, None


def straight_through(approx, counts):
    """Value of ``counts``, gradient of ``approx``."""
    return _CountStraightThrough.apply(approx, counts)


# --- spike trace dump --------------------------------------------------------
#
# Tab-separated text. Header lines start with '#':
#   # saen-spike-trace v1
#   # n_steps <T>
#   # layer <name> <N> <C> <H> <W>        (one per layer, in network order)
# then one row per spike event:
#   layer  step  n  c  y  x               (step is 1-based)


def write_spike_trace(path, rasters: dict[str, torch.Tensor]) -> None:
    if not rasters:
        raise ValueError("no rasters to write")
    n_steps = {int(r.shape[0]) for r in rasters.values()}
    if len(n_steps) != 1:
        raise ShapeError(f"rasters disagree on window length: {sorted(n_steps)}")
    lines = ["# saen-spike-trace v1", f"# n_steps {n_steps.pop()}"]
    for name, r in rasters.items():
        lines.append(f"# layer {name} " + " ".join(str(d) for d in r.shape[1:]))
    lines.append("layer\tstep\tn\tc\ty\tx")
    for name, r in rasters.items():
        idx = np.argwhere(r.detach().numpy() > 0)
        for t, n, c, y, x in idx:
            lines.append(f"{name}\t{t + 1}\t{n}\t{c}\t{y}\t{x}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_spike_trace(path) -> dict[str, torch.Tensor]:
    shapes: dict[str, tuple[int, ...]] = {}
    n_steps = None
    events: list[list[str]] = []
    for line in Path(path).read_text().splitlines():
        if line.startswith("# n_steps"):
            n_steps = int(line.split()[2])
        elif line.startswith("# layer"):
            parts = line.split()
            shapes[parts[2]] = tuple(int(d) for d in parts[3:])
        elif line.startswith("#") or line.startswith("layer\t") or not line:
            continue
        else:
            events.append(line.split("\t"))
    if n_steps is None:
        raise ValueError(f"{path}: missing n_steps header")
    out = {name: np.zeros((n_steps, *shape), dtype=np.float32) for name, shape in shapes.items()}
    for name, t, n, c, y, x in events:
        out[name][int(t) - 1, int(n), int(c), int(y), int(x)] = 1.0
    return {k: torch.from_numpy(v) for k, v in out.items()}
