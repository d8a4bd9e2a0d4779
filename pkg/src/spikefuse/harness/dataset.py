"""On-disk synthetic datasets.

A dataset directory holds

- ``meta.txt``          key=value lines (width, height, frames, n, seed)
- ``frames/NNNNNN.ppm`` 8-bit RGB frames
- ``events.csv``        ``x,y,t,p`` rows sorted by t
- ``exposures.txt``     one exposure timestamp (us) per line, frames + 1 lines
- ``groundtruth.txt``   one ``x,y,w,h`` box per frame (top-left corner)
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from ..errors import ConfigError
from ..events import MultimodalSample, aggregate_sequence, parse_event_csv, synth_sequence, write_event_csv


def _read_meta(path):
    meta = {}
    for line in Path(path).read_text().splitlines():
        if "=" in line:
            k, v = line.split("=", 1)
            meta[k.strip()] = v.strip()
    return meta


def save_dataset(out_dir, seed, frames=60, size=(64, 64), n=5, config=None):
    """Synthesize a sequence and write it to ``out_dir``; returns the samples."""
    from PIL import Image

    samples, stream, exposures = synth_sequence(seed, frames, size, n, config, return_stream=True)
    out = Path(out_dir)
    (out / "frames").mkdir(parents=True, exist_ok=True)
    for k, s in enumerate(samples):
        rgb = np.clip(np.rint(s.frame.transpose(1, 2, 0) * 255.0), 0, 255).astype(np.uint8)
        Image.fromarray(rgb, mode="RGB").save(out / "frames" / f"{k:06d}.ppm", format="PPM")
    write_event_csv(stream, out / "events.csv")
    np.savetxt(out / "exposures.txt", exposures, fmt="%d")
    boxes = [(cx - w / 2, cy - h / 2, w, h) for cx, cy, w, h in (s.ground_truth_box for s in samples)]
    np.savetxt(out / "groundtruth.txt", np.array(boxes), fmt="%.4f", delimiter=",")
    h, w = size
    (out / "meta.txt").write_text(f"width={w}\nheight={h}\nframes={frames}\nn={n}\nseed={seed}\n")
    return samples


def load_dataset(data_dir, n=None):
    """Read a dataset directory back into MultimodalSamples.

    ``n`` overrides the temporal resolution stored in ``meta.txt``.
    """
    from PIL import Image

    root = Path(data_dir)
    if not (root / "meta.txt").is_file():
        raise ConfigError(f"not a dataset directory (missing meta.txt): {root}")
    meta = _read_meta(root / "meta.txt")
    width, height = int(meta["width"]), int(meta["height"])
    n = int(n or meta.get("n", 5))
    stream = parse_event_csv(root / "events.csv", width, height)
    exposures = np.loadtxt(root / "exposures.txt", dtype=np.int64, ndmin=1)
    boxes = np.loadtxt(root / "groundtruth.txt", delimiter=",", ndmin=2)
    frame_files = sorted((root / "frames").glob("*.ppm"))
    if not (len(frame_files) == len(boxes) == len(exposures) - 1):
        raise ConfigError(f"dataset {root}: {len(frame_files)} frames, {len(boxes)} boxes, "
                          f"{len(exposures)} exposures do not line up")
    slices = aggregate_sequence(stream, exposures, n)
    samples = []
    for k, (f, (x, y, w, h)) in enumerate(zip(frame_files, boxes)):
        with Image.open(f) as im:
            frame = np.asarray(im.convert("RGB"), dtype=np.float64).transpose(2, 0, 1) / 255.0
        samples.append(MultimodalSample(np.ascontiguousarray(frame), slices[k],
                                        (x + w / 2, y + h / 2, w, h),
                                        int(exposures[k]), int(exposures[k + 1])))
    return samples
