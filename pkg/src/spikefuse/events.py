"""Event streams: CSV ingestion, polarity-frame aggregation, and a synthetic scene.

An aggregated slice stores, per pixel, the polarity of the most recent event in
the window: 254 for a positive event, 0 for a negative one and 127 where no
event fired.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import BoundsError, ConfigError, EventParseError, WindowError

NO_EVENT = 127
ON = 254
OFF = 0


@dataclass(frozen=True)
class Event:
    x: int
    y: int
    t: int
    p: int


@dataclass
class EventStream:
    """Time-sorted events held column-wise as int64 arrays."""

    sensor_width: int
    sensor_height: int
    x: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    y: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    t: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    p: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.int64)
        self.y = np.asarray(self.y, dtype=np.int64)
        self.t = np.asarray(self.t, dtype=np.int64)
        self.p = np.asarray(self.p, dtype=np.int64)
        if not (len(self.x) == len(self.y) == len(self.t) == len(self.p)):
            raise ValueError("event columns differ in length")
        if len(self.t) and np.any(np.diff(self.t) < 0):
            raise ValueError("events must be nondecreasing in t; use EventStream.from_events to sort")
        if len(self.x):
            if (self.x.min() < 0 or self.x.max() >= self.sensor_width
                    or self.y.min() < 0 or self.y.max() >= self.sensor_height):
                raise BoundsError("event coordinate outside the sensor")
            if not np.all(np.abs(self.p) == 1):
                raise ValueError("polarity must be -1 or +1")

    @classmethod
    def from_events(cls, width, height, events):
        """Build a stream from (x, y, t, p) records, stable-sorted by t."""
        arr = np.array([(e.x, e.y, e.t, e.p) if isinstance(e, Event) else tuple(e) for e in events],
                       dtype=np.int64).reshape(-1, 4)
        order = np.argsort(arr[:, 2], kind="stable")
        arr = arr[order]
        return cls(width, height, arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3])

    def __len__(self):
        return len(self.t)

    def events(self):
        return [Event(int(a), int(b), int(c), int(d)) for a, b, c, d in zip(self.x, self.y, self.t, self.p)]


@dataclass
class AggregatedSlice:
    pixels: np.ndarray  # H x W, uint8 values in {0, 127, 254}
    window_start: int
    window_end: int

    def normalized(self):
        return self.pixels.astype(np.float64) / 254.0


@dataclass
class MultimodalSample:
    frame: np.ndarray            # C x H x W intensities in [0, 1]
    slices: list                 # N AggregatedSlice covering [T_i, T_{i+1}]
    ground_truth_box: tuple      # (cx, cy, w, h) in pixels
    t_start: int = 0
    t_end: int = 0


def parse_event_csv(path, width, height):
    """Read ``x,y,t,p`` lines; an optional non-numeric header line is skipped."""
    rows = []
    with open(path, newline="") as fh:
        for lineno, rec in enumerate(csv.reader(fh), start=1):
            if not rec or all(not f.strip() for f in rec):
                continue
            if len(rec) != 4:
                raise EventParseError(f"expected 4 fields x,y,t,p, got {len(rec)}", lineno)
            try:
                x, y, t, p = (int(f.strip()) for f in rec)
            except ValueError:
                if lineno == 1 and not rows:
                    continue  # header
                raise EventParseError(f"non-integer field in {','.join(rec)!r}", lineno) from None
            if p not in (-1, 1):
                raise EventParseError(f"polarity must be -1 or 1, got {p}", lineno)
            if t < 0:
                raise EventParseError(f"negative timestamp {t}", lineno)
            if not (0 <= x < width and 0 <= y < height):
                raise BoundsError(f"line {lineno}: coordinate ({x}, {y}) outside {width}x{height} sensor")
            rows.append((x, y, t, p))
    return EventStream.from_events(width, height, rows)


def write_event_csv(stream, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "t", "p"])
        w.writerows(zip(stream.x.tolist(), stream.y.tolist(), stream.t.tolist(), stream.p.tolist()))


def _latest_polarity(stream, mask):
    """Per-pixel polarity of the last selected event in stream order, 0 if none."""
    pol = np.zeros((stream.sensor_height, stream.sensor_width), dtype=np.int64)
    idx = np.flatnonzero(mask)
    if idx.size:
        # last occurrence per pixel: latest timestamp, later record on ties
        lin = (stream.y[idx] * stream.sensor_width + stream.x[idx])[::-1]
        pix, first = np.unique(lin, return_index=True)
        pol.reshape(-1)[pix] = stream.p[idx][::-1][first]
    return pol


def _slice_from_polarity(pol, t0, t1):
    return AggregatedSlice(((pol + 1) * NO_EVENT).astype(np.uint8), int(t0), int(t1))


def aggregate_window(stream, t0, t1, closed=True):
    """Polarity frame of the latest event per pixel with t in [t0, t1].

    ``closed=False`` gives the half-open window [t0, t1) used for interior
    sub-windows of a sequence.
    """
    if not t0 < t1:
        raise WindowError(f"window start {t0} must precede end {t1}")
    upper = stream.t <= t1 if closed else stream.t < t1
    return _slice_from_polarity(_latest_polarity(stream, (stream.t >= t0) & upper), t0, t1)


def aggregate_sequence(stream, exposure_times, n):
    """Split each [T_i, T_{i+1}] into ``n`` equal windows and aggregate each one.

    Windows are half-open except the last of every interval, which is closed.
    Returns one list of ``n`` slices per interval.
    """
    if int(n) != n or n <= 0:
        raise ConfigError(f"temporal resolution N must be a positive integer, got {n}")
    times = np.asarray(exposure_times, dtype=np.float64)
    if times.ndim != 1 or len(times) < 2 or np.any(np.diff(times) <= 0):
        raise WindowError("exposure times must be strictly increasing with at least two entries")
    out = []
    for t_start, t_end in zip(times[:-1], times[1:]):
        width = (t_end - t_start) / n
        slices = []
        for j in range(n):
            lo = t_start + j * width
            hi = t_end if j == n - 1 else t_start + (j + 1) * width
            upper = stream.t <= hi if j == n - 1 else stream.t < hi
            pol = _latest_polarity(stream, (stream.t >= lo) & upper)
            slices.append(_slice_from_polarity(pol, math.floor(lo), math.ceil(hi)))
        out.append(slices)
    return out


def write_pgm(path, pixels):
    """Write an 8-bit grayscale image as binary PGM (maxval 255)."""
    from PIL import Image

    Image.fromarray(np.asarray(pixels, dtype=np.uint8), mode="L").save(path, format="PPM")


def read_pgm(path):
    from PIL import Image

    with Image.open(path) as im:
        return np.asarray(im)


# -- synthetic scene -----------------------------------------------------------

def _texture(rng, h, w, channels):
    """Smooth random background in roughly [0.1, 0.5]."""
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    base = np.zeros((h, w))
    for _ in range(6):
        fx, fy = rng.uniform(0.02, 0.15, size=2)
        phase = rng.uniform(0, 2 * np.pi)
        base += np.sin(2 * np.pi * (fx * xx + fy * yy) + phase)
    base = (base - base.min()) / max(base.max() - base.min(), 1e-12)
    tex = 0.1 + 0.4 * base
    tints = rng.uniform(0.85, 1.0, size=channels)
    return np.stack([tex * c for c in tints])


def _coverage(lo, size, n):
    """Fraction of each unit pixel [k, k+1) covered by the interval [lo, lo+size)."""
    k = np.arange(n, dtype=np.float64)
    return np.clip(np.minimum(k + 1, lo + size) - np.maximum(k, lo), 0.0, 1.0)


def render(background, x0, y0, size, intensity):
    """Anti-aliased bright square with top-left corner (x0, y0)."""
    _, h, w = background.shape
    cov = np.outer(_coverage(y0, size, h), _coverage(x0, size, w))
    return background * (1.0 - cov) + intensity * cov


@dataclass
class SynthConfig:
    target_size: float = 16.0
    target_intensity: float = 0.95
    speed: float = 2.0                 # px per frame
    jitter: float = 0.5                # px std per frame
    contrast_threshold: float = 0.15   # log-intensity units
    noise_rate: float = 0.0            # noise events per pixel per second
    substeps: int = 10                 # intensity samples per frame interval
    frame_interval_us: int = 10_000
    channels: int = 3
    stationary: bool = False


def synth_sequence(seed, frames, size=(64, 64), n=5, config=None, return_stream=False):
    """Paired frame/event sequence of a bright square gliding over a texture.

    The target moves linearly (reflecting at the borders) with seeded jitter.
    Events fire where log intensity between consecutive sub-steps changes by
    at least the contrast threshold, one event per crossing, with the sign of
    the change as polarity.
    """
    cfg = config or SynthConfig()
    h, w = size
    if h < 32 or w < 32:
        raise ConfigError(f"canvas must be at least 32x32, got {h}x{w}")
    if frames < 2:
        raise ConfigError("need at least two frames")
    if cfg.target_size <= 0 or cfg.target_size > min(h, w):
        raise ConfigError(f"target of size {cfg.target_size} does not fit a {h}x{w} canvas")
    if int(n) != n or n <= 0:
        raise ConfigError(f"temporal resolution N must be a positive integer, got {n}")
    rng = np.random.default_rng(seed)
    background = _texture(rng, h, w, cfg.channels)
    s = cfg.target_size
    span_x, span_y = w - s, h - s

    # target top-left corner at every exposure (frames + 1 of them so the last
    # frame also has a following event interval)
    pos = np.empty((frames + 1, 2))
    pos[0] = rng.uniform(0.2, 0.8, size=2) * (span_x, span_y)
    angle = rng.uniform(0, 2 * np.pi)
    vel = cfg.speed * np.array([np.cos(angle), np.sin(angle)])
    if cfg.stationary:
        vel[:] = 0.0
    for i in range(1, frames + 1):
        step = vel + (0.0 if cfg.stationary else rng.normal(0.0, cfg.jitter, size=2))
        nxt = pos[i - 1] + step
        for ax, span in ((0, span_x), (1, span_y)):
            if nxt[ax] < 0:
                nxt[ax] = -nxt[ax]
                vel[ax] = -vel[ax]
            elif nxt[ax] > span:
                nxt[ax] = 2 * span - nxt[ax]
                vel[ax] = -vel[ax]
            nxt[ax] = min(max(nxt[ax], 0.0), span)
        pos[i] = nxt

    dt = cfg.frame_interval_us
    exposures = np.arange(frames + 1, dtype=np.int64) * dt
    lum = lambda img: np.log(img.mean(axis=0) + 1e-3)  # noqa: E731
    ref = lum(render(background, pos[0, 0], pos[0, 1], s, cfg.target_intensity))
    xs, ys, ts, ps = [], [], [], []
    for i in range(frames):
        for k in range(1, cfg.substeps + 1):
            a = k / cfg.substeps
            x0, y0 = (1 - a) * pos[i] + a * pos[i + 1]
            # strictly inside the interval so boundary timestamps never occur
            t = int(exposures[i] + round((k - 0.5) * dt / cfg.substeps))
            cur = lum(render(background, x0, y0, s, cfg.target_intensity))
            diff = cur - ref
            crossings = np.floor(np.abs(diff) / cfg.contrast_threshold)
            yy, xx = np.nonzero(crossings > 0)
            if yy.size:
                pol = np.sign(diff[yy, xx]).astype(np.int64)
                xs.append(xx)
                ys.append(yy)
                ts.append(np.full(yy.size, t, dtype=np.int64))
                ps.append(pol)
                ref[yy, xx] += pol * crossings[yy, xx] * cfg.contrast_threshold
            if cfg.noise_rate > 0:
                lam = cfg.noise_rate * (dt / cfg.substeps) * 1e-6 * h * w
                m = rng.poisson(lam)
                if m:
                    xs.append(rng.integers(0, w, m))
                    ys.append(rng.integers(0, h, m))
                    ts.append(np.full(m, t, dtype=np.int64))
                    ps.append(rng.choice(np.array([-1, 1]), m))
    if xs:
        x_all, y_all = np.concatenate(xs), np.concatenate(ys)
        t_all, p_all = np.concatenate(ts), np.concatenate(ps)
    else:
        x_all = y_all = t_all = p_all = np.zeros(0, np.int64)
    stream = EventStream(w, h, x_all, y_all, t_all, p_all)

    per_interval = aggregate_sequence(stream, exposures, n)
    samples = []
    for i in range(frames):
        frame = render(background, pos[i, 0], pos[i, 1], s, cfg.target_intensity)
        box = (float(pos[i, 0] + s / 2), float(pos[i, 1] + s / 2), float(s), float(s))
        samples.append(MultimodalSample(frame, per_interval[i], box,
                                        int(exposures[i]), int(exposures[i + 1])))
    if return_stream:
        return samples, stream, exposures
    return samples
