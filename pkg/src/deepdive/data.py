"""Synthetic data generators, CSV ingestion, windowing and normalization.

Two generator regimes mirror the evaluation setups: an electricity-style
frame whose labels (hour, day-of-week, month) are near-independent clock
readouts, and a gait-style frame whose two labels (movement regime and
binned stride metric) are strongly correlated by construction.

CSV schema: header ``timestamp,ch_1..ch_l,label_1..label_n2``; integer
timestamps, float channels, 1-based integer labels.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from .rng import substream

HOURS_PER_YEAR = 8760
STRIDE_BINS = 14
# fixed stride-metric range so bin labels never depend on the realized data
_STRIDE_RANGE = (5.0, 66.0)


@dataclass
class TimeSeriesFrame:
    """l aligned channels with per-step integer labels."""

    channels: np.ndarray           # (l, T) float64
    timestamps: np.ndarray         # (T,) int64
    labels: np.ndarray             # (n2, T) int64, 1-based
    label_cardinalities: tuple[int, ...]
    channel_names: tuple[str, ...] = ()

    def __post_init__(self):
        self.channels = np.asarray(self.channels, dtype=np.float64)
        self.timestamps = np.asarray(self.timestamps, dtype=np.int64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        l, t = self.channels.shape
        if self.timestamps.shape != (t,) or self.labels.shape[1:] != (t,):
            raise ValueError("channels, timestamps and labels must share one length")
        if not np.all(np.isfinite(self.channels)):
            raise ValueError("frame contains non-finite channel values")
        for i, k in enumerate(self.label_cardinalities):
            if np.any(self.labels[i] < 1) or np.any(self.labels[i] > k):
                raise ValueError(f"label_{i + 1} outside 1..{k}")
        if not self.channel_names:
            self.channel_names = tuple(f"ch_{j + 1}" for j in range(l))

    @property
    def n_channels(self) -> int:
        return self.channels.shape[0]

    @property
    def length(self) -> int:
        return self.channels.shape[1]


@dataclass
class WindowSpec:
    """Lookback length L, horizon H, gap between them, stride between
    window anchors and chronological train:val:test ratios."""

    L: int
    H: int
    gap: int = 0
    stride: int = 1
    ratios: tuple[float, float, float] = (3.0, 1.0, 1.0)

    def __post_init__(self):
        self.ratios = tuple(float(r) for r in self.ratios)
        if self.L < 1 or self.H < 1:
            raise ValueError("L and H must be >= 1")
        if self.gap < 0 or self.stride < 1:
            raise ValueError("gap must be >= 0 and stride >= 1")
        if len(self.ratios) != 3 or any(r < 0 for r in self.ratios) or sum(self.ratios) <= 0:
            raise ValueError("ratios must be three nonnegative values with positive sum")

    @property
    def span(self) -> int:
        return self.L + self.gap + self.H


@dataclass(frozen=True)
class WindowedSample:
    x: np.ndarray        # (l, L)
    y: np.ndarray        # (l, H)
    labels: np.ndarray   # (n2,), 1-based


@dataclass
class WindowSet:
    """Column-stacked windows for one split."""

    x: np.ndarray        # (N, l, L)
    y: np.ndarray        # (N, l, H)
    labels: np.ndarray   # (N, n2)

    def __len__(self) -> int:
        return self.x.shape[0]

    def __getitem__(self, idx: int) -> WindowedSample:
        return WindowedSample(self.x[idx], self.y[idx], self.labels[idx])


@dataclass
class Normalizer:
    mean: np.ndarray   # (l,)
    std: np.ndarray    # (l,)

    def _shaped(self, values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        # channel axis first, broadcast over any trailing axes
        trailing = (1,) * (values.ndim - 1)
        return self.mean.reshape((-1,) + trailing), self.std.reshape((-1,) + trailing)

    def apply(self, values: np.ndarray) -> np.ndarray:
        mean, std = self._shaped(values)
        return (values - mean) / std

    def invert(self, values: np.ndarray) -> np.ndarray:
        mean, std = self._shaped(values)
        return values * std + mean


@dataclass
class WindowedDataset:
    train: WindowSet
    val: WindowSet
    test: WindowSet
    normalizer: Normalizer
    label_cardinalities: tuple[int, ...]


def _ar1(rng: np.random.Generator, t: int, phi: float, scale: float) -> np.ndarray:
    noise = rng.standard_normal(t) * scale
    out = np.empty(t)
    acc = 0.0
    for i in range(t):
        acc = phi * acc + noise[i]
        out[i] = acc
    return out


def gen_electricity_like(l: int, t: int, seed: int, year_scale: float = 1.0) -> TimeSeriesFrame:
    """Hourly consumption-style channels: per-channel sinusoids with daily,
    weekly and (scaled) yearly periods plus AR(1) noise. Labels are clock
    readouts of the timestamp, so hour/day/month are near-independent."""
    year = HOURS_PER_YEAR * year_scale
    if t < 2 * 168:
        raise ValueError("t must cover at least two weekly periods")
    rng = substream(seed, "electricity")
    ts = np.arange(t, dtype=np.int64)
    channels = np.empty((l, t))
    for j in range(l):
        amps = rng.uniform(0.5, 1.5, size=3)
        phases = rng.uniform(0.0, 2.0 * np.pi, size=3)
        channels[j] = (
            amps[0] * np.sin(2 * np.pi * ts / 24.0 + phases[0])
            + amps[1] * np.sin(2 * np.pi * ts / 168.0 + phases[1])
            + amps[2] * np.sin(2 * np.pi * ts / year + phases[2])
            + _ar1(rng, t, phi=0.7, scale=0.15)
        )
    hour = (ts % 24) + 1
    day = ((ts // 24) % 7) + 1
    month = ((ts // int(round(year / 12))) % 12) + 1
    labels = np.stack([hour, day, month]).astype(np.int64)
    return TimeSeriesFrame(channels, ts, labels, label_cardinalities=(24, 7, 12))


def gen_gait_like(l: int, t: int, seed: int) -> TimeSeriesFrame:
    """Regime-switching oscillators: label 1 is the movement regime
    (1..3), label 2 the stride metric (amplitude x period) cut into
    STRIDE_BINS equal-width bins over a fixed range. Regimes set the
    stride-metric mean (regime 1 largest, regime 3 smallest), so the two
    labels are strongly correlated and constant within a segment."""
    rng = substream(seed, "gait")
    ts = np.arange(t, dtype=np.int64)
    channels = np.zeros((l, t))
    regime_lab = np.empty(t, dtype=np.int64)
    stride_lab = np.empty(t, dtype=np.int64)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=l)
    # regime -> (period mean, amplitude mean); product separates regimes
    periods = {1: 40.0, 2: 28.0, 3: 18.0}
    amps = {1: 1.25, 2: 0.95, 3: 0.6}
    edges = np.linspace(*_STRIDE_RANGE, STRIDE_BINS + 1)[1:-1]
    pos = 0
    while pos < t:
        seg = int(rng.integers(250, 600))
        regime = int(rng.integers(1, 4))
        period = periods[regime] * (1.0 + 0.08 * rng.standard_normal())
        amp = max(amps[regime] * (1.0 + 0.12 * rng.standard_normal()), 0.15)
        metric = float(np.clip(amp * period, *_STRIDE_RANGE))
        hi = min(pos + seg, t)
        seg_t = ts[pos:hi]
        for j in range(l):
            gain = 1.0 + 0.1 * rng.standard_normal()
            channels[j, pos:hi] = amp * gain * np.sin(2 * np.pi * seg_t / period + phases[j])
        regime_lab[pos:hi] = regime
        stride_lab[pos:hi] = int(np.searchsorted(edges, metric)) + 1
        pos = hi
    for j in range(l):
        channels[j] += _ar1(rng, t, phi=0.5, scale=0.08)
    labels = np.stack([regime_lab, stride_lab])
    return TimeSeriesFrame(channels, ts, labels, label_cardinalities=(3, STRIDE_BINS))


def window_split(frame: TimeSeriesFrame, spec: WindowSpec) -> tuple[WindowSet, WindowSet, WindowSet]:
    """Chronological split by ratios, then sliding windows inside each
    region; no window crosses a split boundary and labels are read at the
    lookback-end timestamp."""
    t = frame.length
    if t < spec.span:
        raise ValueError(f"series of length {t} is shorter than the {spec.span}-step "
                         f"window span (L + gap + H)")
    total = sum(spec.ratios)
    n_train = int(t * spec.ratios[0] / total)
    n_val = int(t * spec.ratios[1] / total)
    bounds = [(0, n_train), (n_train, n_train + n_val), (n_train + n_val, t)]
    sets = []
    for lo, hi in bounds:
        starts = range(lo, hi - spec.span + 1, spec.stride) if hi - lo >= spec.span else range(0)
        xs, ys, lbs = [], [], []
        for s in starts:
            xs.append(frame.channels[:, s:s + spec.L])
            ys.append(frame.channels[:, s + spec.L + spec.gap:s + spec.span])
            lbs.append(frame.labels[:, s + spec.L - 1])
        n2 = frame.labels.shape[0]
        sets.append(WindowSet(
            x=np.array(xs) if xs else np.zeros((0, frame.n_channels, spec.L)),
            y=np.array(ys) if ys else np.zeros((0, frame.n_channels, spec.H)),
            labels=np.array(lbs, dtype=np.int64) if lbs else np.zeros((0, n2), dtype=np.int64),
        ))
    return sets[0], sets[1], sets[2]


def normalize(train: WindowSet, val: WindowSet, test: WindowSet,
              label_cardinalities: tuple[int, ...] = ()) -> WindowedDataset:
    """Z-score every channel with statistics from the train split only;
    std is floored at 1e-8 so constant channels map to zeros."""
    if len(train) == 0:
        raise ValueError("normalize: train split is empty")
    stacked = np.concatenate([train.x, train.y], axis=2)  # (N, l, L+H)
    mean = stacked.mean(axis=(0, 2))
    std = np.maximum(stacked.std(axis=(0, 2)), 1e-8)
    norm = Normalizer(mean=mean, std=std)

    def apply(ws: WindowSet) -> WindowSet:
        if len(ws) == 0:
            return ws
        return WindowSet(x=norm.apply(ws.x.transpose(1, 0, 2)).transpose(1, 0, 2),
                         y=norm.apply(ws.y.transpose(1, 0, 2)).transpose(1, 0, 2),
                         labels=ws.labels)

    return WindowedDataset(train=apply(train), val=apply(val), test=apply(test),
                           normalizer=norm, label_cardinalities=tuple(label_cardinalities))


def prepare(frame: TimeSeriesFrame, spec: WindowSpec) -> WindowedDataset:
    """window_split + normalize in one call."""
    train, val, test = window_split(frame, spec)
    return normalize(train, val, test, frame.label_cardinalities)


# ---------------------------------------------------------------------------
# CSV interchange
# ---------------------------------------------------------------------------

def write_frame_csv(frame: TimeSeriesFrame, path) -> None:
    n2 = frame.labels.shape[0]
    header = ["timestamp", *frame.channel_names, *(f"label_{i + 1}" for i in range(n2))]
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for i in range(frame.length):
        row = [str(int(frame.timestamps[i]))]
        row += [repr(float(v)) for v in frame.channels[:, i]]
        row += [str(int(v)) for v in frame.labels[:, i]]
        buf.write(",".join(row) + "\n")
    with open(path, "w", newline="") as fh:
        fh.write(buf.getvalue())


def read_frame_csv(path) -> TimeSeriesFrame:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        if header[0] != "timestamp":
            raise ValueError("CSV must start with a 'timestamp' column")
        ch_names = [c for c in header if c.startswith("ch_")]
        lab_names = [c for c in header if c.startswith("label_")]
        if 1 + len(ch_names) + len(lab_names) != len(header):
            raise ValueError(f"unrecognized CSV columns in {header}")
        raw = np.loadtxt(fh, delimiter=",", ndmin=2)
    ts = raw[:, 0].astype(np.int64)
    l = len(ch_names)
    channels = raw[:, 1:1 + l].T
    labels = raw[:, 1 + l:].astype(np.int64).T
    cards = tuple(int(labels[i].max()) for i in range(labels.shape[0]))
    return TimeSeriesFrame(channels, ts, labels, label_cardinalities=cards,
                           channel_names=tuple(ch_names))
