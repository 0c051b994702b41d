"""Spike count versus its ReLU approximation as the window N_t grows.

Single layers with non-negative weights (summed drive at most theta) fed by
IF-encoded constant currents. Prints mean |c - a| / N_t per window.
"""
from __future__ import annotations

import argparse

import numpy as np
import torch

from saen_bgs.spiking import NeuronConfig, approx_spike_count, run_spike_layer, simulate_if
from saen_bgs.tensor import ConvSpec


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--instances", type=int, default=300)
    ap.add_argument("--windows", type=int, nargs="+", default=[5, 10, 20, 50, 100, 200])
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    insts = []
    for _ in range(args.instances):
        n_in, n_out = int(rng.integers(1, 33)), int(rng.integers(1, 9))
        w = rng.uniform(0, 1, (n_out, n_in, 1, 1))
        w *= rng.uniform(0.1, 1.0) / w.sum(axis=1, keepdims=True)
        insts.append((ConvSpec(n_in, n_out, 1), torch.tensor(rng.uniform(0, 1, (1, n_in, 4, 4)), dtype=torch.float32),
                      torch.tensor(w, dtype=torch.float32)))

    print("N_t\tmean|c-a|/N_t\tmax|c-round(a)|")
    for n_steps in args.windows:
        cfg = NeuronConfig(n_steps=n_steps)
        errs, worst = [], 0.0
        for spec, cur, w in insts:
            s_in = simulate_if(cur, cfg, constant=True)
            bias = torch.zeros(spec.out_channels)
            _, c = run_spike_layer(s_in, spec, w, bias, cfg)
            a = approx_spike_count(s_in.sum(0), spec, w, bias, cfg)
            errs.append(((c - a).abs() / n_steps).flatten())
            worst = max(worst, float((c - torch.round(a)).abs().max()))
        print(f"{n_steps}\t{float(torch.cat(errs).mean()):.5f}\t{worst:g}")


if __name__ == "__main__":
    main()
