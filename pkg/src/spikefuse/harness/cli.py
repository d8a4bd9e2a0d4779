"""Command line entry point: ``spikefuse <subcommand> ...``.

Exit status is 0 on success, 1 when inputs fail validation, 2 on usage errors.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from ..errors import SpikeFuseError

log = logging.getLogger("spikefuse")

CHECK_GROUPS = {
    "numerics": ["conv2d", "linear", "layer_norm", "softmax_rows"],
    "backbones": ["channel_norm"],
    "fusion": ["self_attention", "cross_attention", "embed", "decode", "tmff"],
    "heads": ["roi_pool", "iou_head", "losses"],
    "harness": ["pipeline"],
}


class _ValidationError(Exception):
    pass


def _cmd_train(args):
    from .config import load_config
    from .dataset import load_dataset
    from .train import train

    cfg = load_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data = load_dataset(args.data, cfg.n_steps) if args.data else None
    every = max(1, args.log_every)

    def progress(step, loss):
        if step % every == 0:
            print(f"step {step:5d}  loss {loss:.6f}", flush=True)

    res = train(cfg, data, log_path=out / "train_loss.txt",
                checkpoint_path=out / "checkpoint.ckpt", progress=progress)
    print(f"trained {len(res.losses)} steps; final loss {res.losses[-1]:.6f}")
    print(f"checkpoint: {res.checkpoint}")
    return 0


def _cmd_eval(args):
    from .dataset import load_dataset
    from .metrics import write_curves
    from .train import evaluate, load_tracker

    if not Path(args.checkpoint).is_file():
        raise _ValidationError(f"checkpoint not found: {args.checkpoint}")
    tracker = load_tracker(args.checkpoint)
    samples = load_dataset(args.data, tracker.config.n_steps)
    if samples[0].frame.shape[1:] != (tracker.config.image_size,) * 2:
        raise _ValidationError(f"dataset frames are {samples[0].frame.shape[1:]}, "
                               f"model expects {tracker.config.image_size}x{tracker.config.image_size}")
    metrics, _ = evaluate(tracker, samples)
    out = Path(args.out) if args.out else Path(args.checkpoint).parent
    write_curves(metrics, out)
    print(metrics.summary())
    print(f"curves written to {out}")
    return 0


def _cmd_aggregate(args):
    from ..events import aggregate_sequence, parse_event_csv, write_pgm

    path = Path(args.events)
    if not path.is_file():
        raise _ValidationError(f"event file not found: {path}")
    width, height = args.width, args.height
    if width is None or height is None:
        # infer the sensor size from the largest coordinates
        raw = np.loadtxt(path, delimiter=",", dtype=np.int64, ndmin=2,
                         skiprows=_header_rows(path), usecols=(0, 1))
        if raw.size == 0:
            raise _ValidationError("empty event file; pass --width and --height")
        width = width or int(raw[:, 0].max()) + 1
        height = height or int(raw[:, 1].max()) + 1
    stream = parse_event_csv(path, width, height)
    if args.exposures:
        times = np.loadtxt(args.exposures, dtype=np.int64, ndmin=1)
    else:
        if len(stream) == 0:
            raise _ValidationError("no events and no --exposures; nothing to aggregate")
        t0, t1 = int(stream.t[0]), int(stream.t[-1])
        times = np.array([t0, t1 if t1 > t0 else t0 + 1])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    count = 0
    for i, slices in enumerate(aggregate_sequence(stream, times, args.n)):
        for k, s in enumerate(slices):
            write_pgm(out / f"slice_{i:04d}_{k:02d}.pgm", s.pixels)
            count += 1
    print(f"wrote {count} slice(s) of {width}x{height} to {out}")
    return 0


def _header_rows(path):
    with open(path) as fh:
        first = fh.readline().split(",")[0].strip()
    return 0 if first.lstrip("-").isdigit() else 1


def _cmd_gradcheck(args):
    from .gradsuite import CHECKS, run_suite

    names = None
    if args.module:
        if args.module in CHECK_GROUPS:
            names = CHECK_GROUPS[args.module]
        elif args.module in CHECKS:
            names = [args.module]
        else:
            known = ", ".join(list(CHECK_GROUPS) + list(CHECKS))
            raise _ValidationError(f"unknown module {args.module!r}; choose from {known}")
    results = run_suite(names, seed=args.seed)
    for r in results:
        status = "ok" if r.passed else "FAIL"
        print(f"{r.name:16s} max_rel_err={r.max_error:.3e}  tol={r.tolerance:.0e}  {status}")
    return 0 if all(r.passed for r in results) else 1


def _cmd_energy(args):
    from ..backbones import snn_layer_trains
    from ..energy import E_AC_PJ, E_MAC_PJ, energy_report, firing_rates_from_layer_trains, layer_specs
    from .config import load_config
    from .train import load_tracker, make_sequence

    cfg = load_config(args.config)
    if not Path(args.checkpoint).is_file():
        raise _ValidationError(f"checkpoint not found: {args.checkpoint}")
    tracker = load_tracker(args.checkpoint)
    snn = tracker.snn
    samples = make_sequence(cfg, frames=args.frames) if args.frames else make_sequence(cfg)
    per_layer = None
    for s in samples:
        trains = snn_layer_trains(s.slices, snn, tracker.params)
        per_layer = trains if per_layer is None else [a + b for a, b in zip(per_layer, trains)]
    fr = firing_rates_from_layer_trains(per_layer)
    size = cfg.image_size
    report = energy_report(layer_specs(snn, size, 1), layer_specs(snn, size, cfg.n_steps), fr,
                           E_MAC_PJ if args.e_mac is None else args.e_mac,
                           E_AC_PJ if args.e_ac is None else args.e_ac)
    text = report.to_text()
    rates = "\n".join(f"  FR_{n} = {v:.4f}" for n, v in sorted(fr.rates.items()))
    kv = report.to_keyvalue() + "\n" + "\n".join(f"fr_{n}={v}" for n, v in sorted(fr.rates.items()))
    print(text)
    print("  input firing rates per layer:")
    print(rates)
    print()
    print(kv)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "energy.txt").write_text(text + "\n" + rates + "\n")
        (out / "energy.kv").write_text(kv + "\n")
    return 0


def _cmd_synth(args):
    from ..events import SynthConfig
    from .dataset import save_dataset

    samples = save_dataset(args.out, args.seed, args.frames, (args.size, args.size), args.n,
                           SynthConfig(target_size=args.target_size))
    print(f"wrote {len(samples)} frames to {args.out}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="spikefuse", description="Frame/event fusion tracker toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a tracker from a config file")
    t.add_argument("--config", required=True)
    t.add_argument("--data", help="dataset directory (default: synthesize from the config)")
    t.add_argument("--out", default="run", help="output directory for log and checkpoint")
    t.add_argument("--log-every", type=int, default=25)
    t.set_defaults(func=_cmd_train)

    e = sub.add_parser("eval", help="track a dataset with a checkpoint and report PR/SR/OP")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--out", help="directory for curve files (default: next to the checkpoint)")
    e.set_defaults(func=_cmd_eval)

    a = sub.add_parser("aggregate", help="turn an event CSV into polarity slices (PGM)")
    a.add_argument("--events", required=True)
    a.add_argument("--out", required=True)
    a.add_argument("--n", type=int, required=True)
    a.add_argument("--width", type=int)
    a.add_argument("--height", type=int)
    a.add_argument("--exposures", help="file of exposure timestamps; default: one interval over all events")
    a.set_defaults(func=_cmd_aggregate)

    g = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    g.add_argument("--module")
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=_cmd_gradcheck)

    en = sub.add_parser("energy", help="ANN vs SNN backbone energy estimate")
    en.add_argument("--config", required=True)
    en.add_argument("--checkpoint", required=True)
    en.add_argument("--frames", type=int, help="frames used to measure firing rates")
    en.add_argument("--e-mac", type=float)
    en.add_argument("--e-ac", type=float)
    en.add_argument("--out")
    en.set_defaults(func=_cmd_energy)

    s = sub.add_parser("synth", help="write a synthetic frame/event dataset")
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--frames", type=int, default=60)
    s.add_argument("--size", type=int, default=64)
    s.add_argument("--n", type=int, default=5)
    s.add_argument("--target-size", type=float, default=16.0)
    s.set_defaults(func=_cmd_synth)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)   # exits with status 2 on usage errors
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (SpikeFuseError, _ValidationError, ValueError, KeyError, OSError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"spikefuse {args.command}: error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
