"""Auxiliary-coil signal chain: comparator, crossing counter, phase reference.

The isolation transformer and comparator chip are reduced to a threshold
with symmetric hysteresis. Edge times are linearly interpolated between
samples, so on a clean sinusoid they land within half a sample of the true
crossing.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InsufficientEdges, ValidationError

DEFAULT_HYSTERESIS_FRACTION = 0.02
DEFAULT_WINDOW_CYCLES = 10
DEFAULT_REARM_THRESHOLD = 0.05


@dataclass(frozen=True)
class EdgeList:
    rising: np.ndarray = field(default_factory=lambda: np.zeros(0))
    falling: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        object.__setattr__(self, "rising", np.asarray(self.rising, dtype=float))
        object.__setattr__(self, "falling", np.asarray(self.falling, dtype=float))

    def __len__(self):
        return len(self.rising) + len(self.falling)

    def merged(self):
        """All edges as (t, edge_type) sorted by time."""
        ev = [(float(t), "rising") for t in self.rising] + [(float(t), "falling") for t in self.falling]
        return sorted(ev)

    def to_csv(self, path=None):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t_s", "edge_type"])
        for t, kind in self.merged():
            w.writerow([f"{t:.9g}", kind])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, text):
        reader = csv.reader(io.StringIO(text))
        if next(reader, None) != ["t_s", "edge_type"]:
            raise ValueError("edge CSV must have header t_s,edge_type")
        rising, falling = [], []
        for row in reader:
            if not row:
                continue
            t, kind = float(row[0]), row[1]
            if kind == "rising":
                rising.append(t)
            elif kind == "falling":
                falling.append(t)
            else:
                raise ValueError(f"unknown edge type {kind!r}")
        return cls(np.array(rising), np.array(falling))


class Comparator:
    """Streaming threshold comparator with hysteresis.

    The output goes high when the input reaches ``threshold + hysteresis/2``
    from the low state and low when it falls to ``threshold - hysteresis/2``.
    Samples in between keep the previous state; until the first decisive
    sample the state is unknown and no edge is emitted.
    """

    def __init__(self, threshold=0.0, hysteresis=0.0):
        if hysteresis < 0:
            raise ValidationError("hysteresis must be >= 0")
        self.threshold = float(threshold)
        self.hysteresis = float(hysteresis)
        self.state = 0  # -1 low, +1 high, 0 unknown
        self._last = None  # (t, v) of the previous sample

    @property
    def upper(self):
        return self.threshold + 0.5 * self.hysteresis

    @property
    def lower(self):
        return self.threshold - 0.5 * self.hysteresis

    def feed(self, t, v):
        t = np.asarray(t, dtype=float)
        v = np.asarray(v, dtype=float)
        if t.shape != v.shape or t.ndim != 1:
            raise ValidationError("t and v must be 1-D arrays of equal length")
        if not len(t):
            return EdgeList()
        if self._last is not None:
            t = np.concatenate([[self._last[0]], t])
            v = np.concatenate([[self._last[1]], v])
            offset = 1
        else:
            offset = 0
        mark = np.zeros(len(v), dtype=np.int8)
        mark[v >= self.upper] = 1
        # with zero hysteresis both levels coincide; a sample exactly on it counts as high
        mark[v < self.lower] = -1
        if offset:
            mark[0] = self.state
        idx = np.where(mark != 0, np.arange(len(mark)), -1)
        np.maximum.accumulate(idx, out=idx)
        state = np.where(idx >= 0, mark[np.maximum(idx, 0)], 0)
        change = np.nonzero((state[1:] != state[:-1]) & (state[:-1] != 0))[0] + 1
        rising, falling = [], []
        for i in change:
            level = self.upper if state[i] > 0 else self.lower
            v0, v1 = v[i - 1], v[i]
            frac = (level - v0) / (v1 - v0) if v1 != v0 else 1.0
            te = t[i - 1] + min(max(frac, 0.0), 1.0) * (t[i] - t[i - 1])
            (rising if state[i] > 0 else falling).append(te)
        self.state = int(state[-1])
        self._last = (float(t[-1]), float(v[-1]))
        return EdgeList(np.array(rising), np.array(falling))


def comparator_quantize(t, v, threshold=0.0, hysteresis=0.0):
    """Rising/falling edge times of ``v`` through a hysteretic comparator."""
    return Comparator(threshold, hysteresis).feed(t, v)


def add_noise(v, amplitude, rng):
    """Zero-mean uniform noise in ``[-amplitude, amplitude]``."""
    if amplitude <= 0:
        return np.asarray(v, dtype=float)
    return np.asarray(v, dtype=float) + rng.uniform(-amplitude, amplitude, size=np.shape(v))


@dataclass(frozen=True)
class DetectorEstimate:
    f_hat: float
    phase_ref: float
    confidence: int

    def __post_init__(self):
        if not self.f_hat > 0:
            raise ValidationError("f_hat must be positive")
        if self.confidence < 2:
            raise ValidationError("an estimate needs at least two crossings")

    @property
    def period(self):
        return 1.0 / self.f_hat


def estimate_frequency(edges: EdgeList, window, t_end=None):
    """Count rising edges inside ``[t_end - window, t_end]``.

    ``t_end`` defaults to the last rising edge. The estimate is
    ``(n - 1) / (t_last - t_first)`` and the phase reference is ``t_last``.
    """
    r = np.asarray(edges.rising)
    if t_end is None:
        t_end = r[-1] if len(r) else 0.0
    sel = r[(r >= t_end - window) & (r <= t_end)]
    if len(sel) < 2:
        raise InsufficientEdges(f"{len(sel)} rising edge(s) in window, need 2")
    f_hat = (len(sel) - 1) / (sel[-1] - sel[0])
    return DetectorEstimate(float(f_hat), float(sel[-1]), int(len(sel)))


def phase_at(estimate: DetectorEstimate, t):
    """Phase of ``t`` relative to the last upward crossing, in [0, 2 pi)."""
    if t < estimate.phase_ref:
        raise ValidationError("t precedes the phase reference")
    cycles = (t - estimate.phase_ref) * estimate.f_hat
    frac = cycles - math.floor(cycles)
    # absorb rounding right at a whole period
    if frac > 1.0 - 1e-9:
        frac = 0.0
    return 2.0 * math.pi * frac


class FrequencyDetector:
    """Sliding crossing counter that re-arms on a frequency jump.

    Keeps the last ``window_cycles + 1`` rising edges. When one new period
    differs from the running estimate by more than ``rearm_threshold`` the
    history is dropped so the estimate follows the new frequency after two
    fresh edges instead of a full window.
    """

    def __init__(self, window_cycles=DEFAULT_WINDOW_CYCLES, rearm_threshold=DEFAULT_REARM_THRESHOLD):
        if window_cycles < 1:
            raise ValidationError("window_cycles must be >= 1")
        self.window_cycles = int(window_cycles)
        self.rearm_threshold = float(rearm_threshold)
        self.edges = []
        self.rearms = []  # times at which the history was dropped

    def push(self, rising_times):
        for t in rising_times:
            t = float(t)
            if self.edges and t <= self.edges[-1]:
                continue
            if len(self.edges) >= 2:
                f_run = (len(self.edges) - 1) / (self.edges[-1] - self.edges[0])
                f_new = 1.0 / (t - self.edges[-1])
                if abs(f_new - f_run) > self.rearm_threshold * f_run:
                    self.edges = self.edges[-1:]
                    self.rearms.append(t)
            self.edges.append(t)
            if len(self.edges) > self.window_cycles + 1:
                del self.edges[0]

    @property
    def cycles(self):
        return max(len(self.edges) - 1, 0)

    def estimate(self):
        if len(self.edges) < 2:
            raise InsufficientEdges(f"{len(self.edges)} rising edge(s) buffered, need 2")
        f_hat = (len(self.edges) - 1) / (self.edges[-1] - self.edges[0])
        return DetectorEstimate(f_hat, self.edges[-1], len(self.edges))

    def reset(self):
        self.edges = []
