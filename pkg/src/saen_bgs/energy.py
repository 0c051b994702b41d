"""FLOPs and energy accounting for analog (MAC) versus spiking (AC) execution."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import torch

from .tensor import ConvSpec

E_MAC_PJ = 4.6
E_AC_PJ = 0.9


@dataclass(frozen=True)
class EnergyModel:
    e_mac: float = E_MAC_PJ
    e_ac: float = E_AC_PJ

    def __post_init__(self):
        if not (self.e_mac > 0 and self.e_ac > 0):
            raise ValueError("per-operation energies must be positive")


@dataclass(frozen=True)
class LinearSpec:
    in_features: int
    out_features: int
    name: str = "linear"


def flops_ann(spec, out_size: tuple[int, int] | None = None) -> int:
    """k^2 * O_h * O_w * C_in * C_out for convolutions (O = output map), C_in * C_out for linear."""
    if isinstance(spec, LinearSpec):
        return spec.in_features * spec.out_features
    if isinstance(spec, ConvSpec):
        if out_size is None:
            raise ValueError(f"{spec.name}: output feature-map size required")
        oh, ow = out_size
        return spec.kernel_size ** 2 * oh * ow * spec.in_channels * spec.out_channels
    raise TypeError(f"unknown layer kind: {type(spec).__name__}")


def spiking_rate(raster) -> float:
    """Spikes over the whole window divided by the number of neurons.

    ``raster`` is (T, ...); every non-time element counts as one neuron.
    """
    raster = torch.as_tensor(raster)
    if raster.dim() < 2 or raster.numel() == 0:
        raise ValueError("empty spike raster")
    neurons = raster[0].numel()
    return float(raster.sum().item()) / neurons


@dataclass
class LayerEnergy:
    name: str
    flops_ann: int
    rate: float
    spiking: bool = True  # counted in AvRs

    @property
    def flops_spike(self) -> float:
        return self.flops_ann * self.rate


@dataclass
class EnergyReport:
    layers: list[LayerEnergy]
    n_steps: int
    model: EnergyModel = field(default_factory=EnergyModel)

    @property
    def e_ann(self) -> float:
        return sum(l.flops_ann * self.model.e_mac for l in self.layers)

    @property
    def e_spike(self) -> float:
        return sum(l.flops_spike * self.model.e_ac for l in self.layers)

    @property
    def avrs(self) -> float:
        rates = [l.rate for l in self.layers if l.spiking]
        return sum(rates) / len(rates)

    @property
    def avrs_percent(self) -> float:
        return self.avrs / self.n_steps * 100.0

    @property
    def saving(self) -> float:
        return 1.0 - self.e_spike / self.e_ann

    def to_dict(self) -> dict:
        return {
            "n_steps": self.n_steps,
            "e_mac_pj": self.model.e_mac,
            "e_ac_pj": self.model.e_ac,
            "layers": [
                {
                    "name": l.name,
                    "flops_ann": l.flops_ann,
                    "spiking_rate": l.rate,
                    "flops_spike": l.flops_spike,
                    "energy_ann_pj": l.flops_ann * self.model.e_mac,
                    "energy_spike_pj": l.flops_spike * self.model.e_ac,
                    "in_avrs": l.spiking,
                }
                for l in self.layers
            ],
            "totals": {
                "flops_ann": sum(l.flops_ann for l in self.layers),
                "flops_spike": sum(l.flops_spike for l in self.layers),
                "energy_ann_pj": self.e_ann,
                "energy_spike_pj": self.e_spike,
                "avrs": self.avrs,
                "avrs_percent": self.avrs_percent,
                "saving": self.saving,
            },
        }

    def write(self, out_dir, stem: str = "energy_report") -> tuple[Path, Path]:
        """``<stem>.json`` (layers + totals) and ``<stem>.csv`` (one row per layer, then TOTAL)."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        d = self.to_dict()
        jpath = out_dir / f"{stem}.json"
        jpath.write_text(json.dumps(d, indent=2))
        cpath = out_dir / f"{stem}.csv"
        fields = ["name", "flops_ann", "spiking_rate", "flops_spike", "energy_ann_pj", "energy_spike_pj", "in_avrs"]
        with cpath.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(fields + ["avrs_percent", "saving"])
            for row in d["layers"]:
                w.writerow([repr(row[f]) if isinstance(row[f], float) else row[f] for f in fields] + ["", ""])
            t = d["totals"]
            w.writerow(["TOTAL", t["flops_ann"], repr(t["avrs"]), repr(t["flops_spike"]),
                        repr(t["energy_ann_pj"]), repr(t["energy_spike_pj"]), "",
                        repr(t["avrs_percent"]), repr(t["saving"])])
        return jpath, cpath


def energy_totals(layers: list[LayerEnergy], n_steps: int, model: EnergyModel | None = None,
                  expected_layers: int | None = None) -> EnergyReport:
    if not layers:
        raise ValueError("no layers to account")
    if expected_layers is not None and len(layers) != expected_layers:
        raise ValueError(f"report has {len(layers)} layers, network has {expected_layers}")
    if not any(l.spiking for l in layers):
        raise ValueError("no spiking layers in report")
    return EnergyReport(list(layers), n_steps, model or EnergyModel())


def profile_rasters(net, rasters: dict, model: EnergyModel | None = None) -> EnergyReport:
    """Build a report from recorded spike rasters of every spiking layer.

    The decoding layer emits no spikes; it is charged at the rate of the
    train it integrates (the last spiking layer's output).
    """
    sizes = net.cfg.feature_sizes()
    *spiking, dec = net.layers
    rows = []
    for layer in spiking:
        if layer.name not in rasters:
            raise ValueError(f"missing raster for layer {layer.name}")
        rows.append(LayerEnergy(layer.name, flops_ann(layer.spec, sizes[layer.name]),
                                spiking_rate(rasters[layer.name])))
    rows.append(LayerEnergy(dec.name, flops_ann(dec.spec, sizes[dec.name]),
                            spiking_rate(rasters[spiking[-1].name]), spiking=False))
    return energy_totals(rows, net.cfg.neuron.n_steps, model, expected_layers=len(net.layers))


def profile_network(net, frames, model: EnergyModel | None = None, batch_size: int = 8) -> EnergyReport:
    """Spike-only inference over ``frames`` with rates pooled across all frames."""
    totals: dict[str, torch.Tensor] = {}
    for i in range(0, len(frames), batch_size):
        _, rasters = net.forward_spiking_inference(frames[i:i + batch_size], record=True)
        for k, r in rasters.items():
            totals[k] = r if k not in totals else torch.cat([totals[k], r], dim=1)
    return profile_rasters(net, totals, model)
