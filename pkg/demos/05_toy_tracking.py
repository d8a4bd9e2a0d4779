"""Train the desk-scale tracker on a synthetic sequence and evaluate it.

Trains with the chosen fusion strategy on seed 0, then tracks three held-out
sequences and reports precision/success. The default run takes a few
minutes on one core; --epochs trades quality for time.

    python demos/05_toy_tracking.py --strategy tff --epochs 13
"""
import argparse
import time

import numpy as np

from spikefuse.harness import desk_config, evaluate, make_sequence, train
from spikefuse.harness.train import smoothed

ap = argparse.ArgumentParser()
ap.add_argument("--strategy", default="tff", choices=["tff", "add", "concat"])
ap.add_argument("--epochs", type=int, default=13)
ap.add_argument("--seed", type=int, default=0)
args = ap.parse_args()

cfg = desk_config(fusion_strategy=args.strategy, epochs=args.epochs, seed=args.seed)
data = make_sequence(cfg)
t0 = time.perf_counter()
res = train(cfg, data, progress=lambda k, loss: k % 100 == 0 and print(f"step {k:4d}  loss {loss:.4f}"))
sm = smoothed(res.losses)
print(f"{len(res.losses)} steps in {time.perf_counter() - t0:.0f}s, smoothed loss {sm[0]:.4f} -> {sm[-1]:.4f}")

for seed in (1001, 1002, 1003):
    m, results = evaluate(res.tracker, make_sequence(cfg, seed=seed))
    print(f"held-out seed {seed}: {m.summary()}")
ious = np.array([r.iou for r in results])
print(f"last sequence IoU quartiles: {np.percentile(ious, [25, 50, 75]).round(3)}")
