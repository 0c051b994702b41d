"""SAEN-BGS topology: encoding layer, ten weight-shared tandem layers, decoding layer."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import NamedTuple

import torch
import yaml

from .spiking import (
    NeuronConfig,
    aggregate_membrane,
    approx_encoding_count,
    approx_spike_count,
    encode_direct,
    run_spike_layer,
    straight_through,
)
from .tensor import ConvSpec, ParamStore, ShapeError, layer_forward

ROLES = ("encoding", "encoder-conv", "block-compress-conv", "block-dconv", "decoding")
N_SPIKING = 10


class NonFiniteActivation(FloatingPointError):
    def __init__(self, layer_index: int, name: str):
        super().__init__(f"non-finite activation at layer {layer_index} ({name})")
        self.layer_index = layer_index


@dataclass(frozen=True)
class TandemLayer:
    spec: ConvSpec
    role: str

    @property
    def name(self) -> str:
        return self.spec.name


def _c(name, cin, cout, k, s=1, p=0, t=False):
    return ConvSpec(cin, cout, k, stride=s, padding=p, transposed=t, name=name)


def default_layers() -> list[TandemLayer]:
    return [
        TandemLayer(_c("enc", 3, 3, 3, 1, 1), "encoding"),
        TandemLayer(_c("conv1", 3, 32, 3, 1, 1), "encoder-conv"),
        TandemLayer(_c("conv2", 32, 64, 3, 2, 1), "encoder-conv"),
        TandemLayer(_c("conv3", 64, 128, 3, 2, 1), "encoder-conv"),
        TandemLayer(_c("conv4", 128, 128, 3, 2, 1), "encoder-conv"),
        TandemLayer(_c("conv5", 128, 64, 1), "block-compress-conv"),
        TandemLayer(_c("dconv1", 64, 64, 4, 2, 1, True), "block-dconv"),
        TandemLayer(_c("conv6", 64, 32, 1), "block-compress-conv"),
        TandemLayer(_c("dconv2", 32, 32, 4, 2, 1, True), "block-dconv"),
        TandemLayer(_c("conv7", 32, 16, 1), "block-compress-conv"),
        TandemLayer(_c("dconv3", 16, 16, 4, 2, 1, True), "block-dconv"),
        TandemLayer(_c("conv8", 16, 2, 1), "decoding"),
    ]


@dataclass
class NetworkConfig:
    layers: list[TandemLayer] = field(default_factory=default_layers)
    neuron: NeuronConfig = field(default_factory=NeuronConfig)
    eta: float = 0.5
    alpha: float = 0.8
    input_size: tuple[int, int] = (64, 64)
    n_classes: int = 2

    def validate(self) -> None:
        if not 0.0 <= self.eta <= 1.0:
            raise ValueError(f"eta must lie in [0, 1], got {self.eta}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        roles = [l.role for l in self.layers]
        for r in roles:
            if r not in ROLES:
                raise ValueError(f"unknown layer role {r!r}")
        if roles[0] != "encoding" or roles[-1] != "decoding":
            raise ValueError("network must start with an encoding layer and end with a decoding layer")
        n_spiking = len(roles) - 2
        if n_spiking != N_SPIKING or roles.count("encoding") != 1 or roles.count("decoding") != 1:
            raise ValueError(f"expected {N_SPIKING} spiking layers between encoding and decoding, got {n_spiking}")
        names = [l.name for l in self.layers]
        if len(set(names)) != len(names):
            raise ValueError("layer names must be unique")
        for prev, cur in zip(self.layers, self.layers[1:]):
            if prev.spec.out_channels != cur.spec.in_channels:
                raise ValueError(
                    f"channel mismatch: {prev.name} emits {prev.spec.out_channels}, "
                    f"{cur.name} expects {cur.spec.in_channels}"
                )
        for l in self.layers:
            if l.role == "block-compress-conv":
                if l.spec.kernel_size != 1 or l.spec.out_channels >= l.spec.in_channels:
                    raise ValueError(f"{l.name}: compression conv must be 1x1 and reduce channels")
            if (l.role == "block-dconv") != l.spec.transposed:
                raise ValueError(f"{l.name}: only block-dconv layers are transposed")
        if self.layers[0].spec.in_channels != 3:
            raise ValueError("encoding layer must take 3-channel frames")
        if self.layers[-1].spec.out_channels != self.n_classes:
            raise ValueError(f"decoding layer must emit {self.n_classes} channels")
        h, w = self.input_size
        for l in self.layers:
            h, w = l.spec.output_size(h, w)
        if (h, w) != tuple(self.input_size):
            raise ValueError(f"network maps {tuple(self.input_size)} to {(h, w)}; output must match input")

    def feature_sizes(self) -> dict[str, tuple[int, int]]:
        h, w = self.input_size
        out = {}
        for l in self.layers:
            h, w = l.spec.output_size(h, w)
            out[l.name] = (h, w)
        return out

    def to_dict(self) -> dict:
        return {
            "eta": self.eta,
            "alpha": self.alpha,
            "input_size": list(self.input_size),
            "n_classes": self.n_classes,
            "neuron": {
                "threshold": self.neuron.threshold,
                "resistance": self.neuron.resistance,
                "n_steps": self.neuron.n_steps,
                "rest_potential": self.neuron.rest_potential,
            },
            "layers": [dict(l.spec.to_dict(), role=l.role) for l in self.layers],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        d = dict(d or {})
        kw = {}
        if "layers" in d:
            layers = []
            for item in d.pop("layers"):
                item = dict(item)
                role = item.pop("role")
                layers.append(TandemLayer(ConvSpec(**item), role))
            kw["layers"] = layers
        if "neuron" in d:
            kw["neuron"] = NeuronConfig(**d.pop("neuron"))
        if "input_size" in d:
            kw["input_size"] = tuple(int(v) for v in d.pop("input_size"))
        unknown = set(d) - {"eta", "alpha", "n_classes"}
        if unknown:
            raise ValueError(f"unknown network config keys: {sorted(unknown)}")
        return cls(**kw, **d)

    @classmethod
    def load(cls, path) -> "NetworkConfig":
        return cls.from_dict(yaml.safe_load(Path(path).read_text()))

    def save(self, path) -> None:
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=False))


class LayerBundle(NamedTuple):
    s: torch.Tensor  # (T, N, C, H, W) spike train
    c: torch.Tensor  # spike counts, value of the main path
    x: torch.Tensor  # analog (CNN-module) output
    a: torch.Tensor  # approximated spike counts


class TandemOutput(NamedTuple):
    logits: torch.Tensor
    aux_logits: torch.Tensor
    bundles: list[LayerBundle]


def _finite(t, idx, name):
    if not torch.isfinite(t).all():
        raise NonFiniteActivation(idx, name)


def tandem_pass(frame, layers, params, neuron: NeuronConfig, eta: float) -> TandemOutput:
    """Joint spike/analog pass over ``layers`` = [encoding, *spiking, decoding].

    ``params`` holds one ``(weight, bias)`` pair per layer, read by both paths.
    Works for any depth and dtype, which the gradient checks rely on.
    """
    (enc, *spiking, dec), (enc_p, *spk_p, dec_p) = layers, params
    s, c = encode_direct(frame, enc.spec, *enc_p, neuron)
    c_main = straight_through(approx_encoding_count(frame, enc.spec, *enc_p, neuron), c)
    x = frame
    a = torch.zeros_like(frame)  # a^0 = 0 for the analog interpolation
    bundles = [LayerBundle(s, c, x, a)]
    for idx, (layer, (w, b)) in enumerate(zip(spiking, spk_p), start=1):
        x = torch.relu(layer_forward(eta * x + (1.0 - eta) * a.detach(), layer.spec, w, b))
        s, c = run_spike_layer(s, layer.spec, w, b, neuron)
        a = approx_spike_count(c_main, layer.spec, w, b, neuron)
        c_main = straight_through(a, c)
        _finite(x, idx, layer.name)
        _finite(a, idx, layer.name)
        bundles.append(LayerBundle(s, c, x, a))
    logits = aggregate_membrane(c_main, dec.spec, *dec_p)
    aux_logits = aggregate_membrane(eta * x + (1.0 - eta) * a.detach(), dec.spec, *dec_p)
    _finite(aux_logits, len(layers) - 1, dec.name)
    return TandemOutput(logits, aux_logits, bundles)


def spiking_pass(frame, layers, params, neuron: NeuronConfig, record: bool = False):
    """Spike path alone; returns ``(logits, rasters)`` (rasters empty unless ``record``)."""
    (enc, *spiking, dec), (enc_p, *spk_p, dec_p) = layers, params
    rasters = {}
    s, c = encode_direct(frame, enc.spec, *enc_p, neuron)
    if record:
        rasters[enc.name] = s
    for layer, (w, b) in zip(spiking, spk_p):
        s, c = run_spike_layer(s, layer.spec, w, b, neuron)
        if record:
            rasters[layer.name] = s
    return aggregate_membrane(c, dec.spec, *dec_p), rasters


class SAENBGS:
    """Parameters live in a :class:`ParamStore`; the analog and spike paths of a
    layer read the same tensors, so sharing holds by construction."""

    def __init__(self, cfg: NetworkConfig, store: ParamStore):
        self.cfg = cfg
        self.store = store

    @property
    def layers(self) -> list[TandemLayer]:
        return self.cfg.layers

    def weight(self, layer: TandemLayer):
        return self.store[f"{layer.name}.weight"]

    def bias(self, layer: TandemLayer):
        return self.store[f"{layer.name}.bias"]

    def _check_frame(self, frame):
        if frame.dim() != 4 or frame.shape[1] != 3:
            raise ShapeError(f"frame batch must be (N, 3, H, W), got {tuple(frame.shape)}")
        if tuple(frame.shape[2:]) != tuple(self.cfg.input_size):
            raise ShapeError(f"frame size {tuple(frame.shape[2:])} != configured {tuple(self.cfg.input_size)}")

    def _params(self):
        return [(self.weight(l), self.bias(l)) for l in self.layers]

    def forward_tandem(self, frame) -> TandemOutput:
        self._check_frame(frame)
        return tandem_pass(frame, self.layers, self._params(), self.cfg.neuron, self.cfg.eta)

    def forward_spiking_inference(self, frame, record: bool = False):
        """Spike path only. With ``record`` returns ``(logits, rasters)``."""
        self._check_frame(frame)
        with torch.no_grad():
            logits, rasters = spiking_pass(frame, self.layers, self._params(), self.cfg.neuron, record)
        return (logits, rasters) if record else logits

    def forward_analog(self, frame):
        """Plain CNN pass (every interpolation with a = 0), for comparison runs."""
        self._check_frame(frame)
        eta = self.cfg.eta
        x = frame
        for layer in self.layers[1:-1]:
            x = torch.relu(layer_forward(eta * x, layer.spec, self.weight(layer), self.bias(layer)))
        dec = self.layers[-1]
        return aggregate_membrane(eta * x, dec.spec, self.weight(dec), self.bias(dec))

    def param_count(self) -> int:
        return self.store.numel()

    def checksums(self) -> dict[str, int]:
        return {n: self.store.checksum(n) for n in self.store}


def build_network(cfg: NetworkConfig, seed: int = 0) -> SAENBGS:
    """Weights ~ U(-sqrt(6/fan_in), sqrt(6/fan_in)), biases zero."""
    cfg.validate()
    gen = torch.Generator().manual_seed(int(seed))
    store = ParamStore()
    for layer in cfg.layers:
        spec = layer.spec
        k2 = spec.kernel_size ** 2
        if spec.transposed:
            # each output pixel of a stride-s dconv sees ~(k/s)^2 taps per input channel
            fan_in = spec.in_channels * k2 / spec.stride ** 2
        else:
            fan_in = spec.in_channels * k2
        bound = math.sqrt(6.0 / fan_in)
        w = (torch.rand(spec.weight_shape, generator=gen) * 2.0 - 1.0) * bound
        store.add(f"{layer.name}.weight", w)
        store.add(f"{layer.name}.bias", torch.zeros(spec.out_channels))
    return SAENBGS(cfg, store)


def predict_mask(logits):
    """Per-pixel argmax over (background, foreground); ties go to background."""
    if logits.dim() != 4 or logits.shape[1] != 2:
        raise ShapeError(f"logits must be (N, 2, H, W), got {tuple(logits.shape)}")
    return (logits[:, 1] > logits[:, 0]).to(torch.uint8)


def with_overrides(cfg: NetworkConfig, **kw) -> NetworkConfig:
    return replace(cfg, **kw)
