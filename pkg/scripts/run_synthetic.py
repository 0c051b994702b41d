"""Train on the synthetic clip and report held-out Fm and energy.

    python scripts/run_synthetic.py --epochs 50 --out runs/synthetic
"""
from __future__ import annotations

import argparse
import json
import logging
import time
from pathlib import Path

import torch

from saen_bgs.data import SplitScheme, make_split, synth_video
from saen_bgs.energy import profile_network
from saen_bgs.metrics import metrics
from saen_bgs.network import NetworkConfig, build_network
from saen_bgs.tensor import load_checkpoint
from saen_bgs.training import TrainConfig, evaluate, fit


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--epochs", type=int, default=50)
    ap.add_argument("--lr", type=float, default=TrainConfig.lr)
    ap.add_argument("--eta", type=float, default=0.5)
    ap.add_argument("--alpha", type=float, default=0.8)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", type=Path, default=Path("runs/synthetic"))
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    torch.set_num_threads(1)

    ds = synth_video(200, (64, 64), seed=args.seed)
    tr, te = make_split(len(ds), SplitScheme("fraction", 0.7, args.seed))
    train, held = ds.subset(tr), ds.subset(te)
    cfg = NetworkConfig(eta=args.eta)
    net = build_network(cfg, args.seed)
    t0 = time.perf_counter()
    fit(net, train, held, TrainConfig(epochs=args.epochs, lr=args.lr, alpha=args.alpha,
                                      seed=args.seed, eval_frames=0), args.out)
    minutes = (time.perf_counter() - t0) / 60

    result = {"train_minutes": minutes, "final_fm": metrics(evaluate(net, held))["Fm"]}
    best = build_network(cfg, args.seed)
    result["best_epoch"] = load_checkpoint(args.out / "best.bin", best.store)["epoch"]
    result["best_fm"] = metrics(evaluate(best, held))["Fm"]
    rep = profile_network(best, held.frames)
    rep.write(args.out)
    result.update(avrs_percent=rep.avrs_percent, saving=rep.saving,
                  rates={l.name: l.rate for l in rep.layers})
    (args.out / "result.json").write_text(json.dumps(result, indent=2))
    print(json.dumps(result, indent=2))


if __name__ == "__main__":
    main()
