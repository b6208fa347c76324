"""Attack controller: gate scheduling, coarse and fine tuning, hop tracking.

Timing convention: the sense-coil voltage is ``M_A dI_T/dt``, so its upward
zero crossing sits a quarter period after the positive current peak of a
receiver tuned to the drive frequency (the receiver current follows
``-dI_T/dt`` at resonance). Gate windows for C2 are centred on those current
peaks.
"""

from __future__ import annotations

import csv
import enum
import io
import json
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import swcap
from .circuit.elements import SwitchedCapBranch, Topology
from .circuit.simulate import GateEvent, Hop, Simulation, initial_state, make_segment
from .circuit.system import SimSystem
from .errors import DutyOutOfRange, InsufficientEdges, ValidationError
from .sensing import (
    DEFAULT_HYSTERESIS_FRACTION,
    DEFAULT_REARM_THRESHOLD,
    DEFAULT_WINDOW_CYCLES,
    Comparator,
    DetectorEstimate,
    FrequencyDetector,
    add_noise,
)

FINE_STEP_FRACTION = 0.10
FINE_STEP_MIN = 0.05e-6
FINE_TERMINATION = 0.02e-6
# receiver current peak relative to the sense-coil upward crossing, in cycles
PEAK_OFFSET_CYCLES = -0.25
MIN_HOP_CYCLES = 50
MAX_VOLTAGE_RESTARTS = 4
VOLTAGE_RELAXATION = 0.5


class FrequencyClampWarning(UserWarning):
    """Detected frequency lies outside the compensable range."""


class Strategy(str, enum.Enum):
    TIME_COUNTING = "time_counting"
    VOLTAGE_COMPARISON = "voltage_comparison"


class ControlMode(str, enum.Enum):
    DETECT = "detect"
    COARSE = "coarse"
    FINE = "fine"
    TRACK = "track"


# ---------------------------------------------------------------- scheduling
@dataclass(frozen=True)
class GateSchedule:
    """Gate commands ``(t, device, on)`` for one or more drive periods."""

    events: tuple
    period: float
    t_on: float

    def gate_events(self, receiver):
        return [GateEvent(t, receiver, dev, on) for t, dev, on in self.events]


def _check_duty(t_on, period):
    half = 0.5 * period
    if t_on < 0 or t_on > half * (1 + swcap.BOUNDARY_RTOL):
        raise DutyOutOfRange(f"t_on={t_on!r} outside [0, {half!r}]")


def _full_on(t_on, period):
    return t_on >= 0.5 * period * (1 - 1e-9)


def period_commands(peak, period, t_on, topology, mistime=0.0):
    """Commands for the drive period whose positive current peak is at ``peak``.

    ``mistime`` delays the second turn-on of a back-to-back pair (used to
    demonstrate the capacitor-to-capacitor spike).
    """
    topology = Topology(topology)
    half = 0.5 * period
    w = min(0.5 * t_on, 0.25 * period)
    if topology is Topology.TRANSISTOR_DIODE_PAIR:
        # turn-ons happen by themselves through the diodes at zero voltage;
        # at t_on = T/2 the turn-offs fall on current zeros and C2 never leaves
        return [
            (peak + w, "M1", False),
            (peak + w, "M2", True),
            (peak + half + w, "M2", False),
            (peak + half + w, "M1", True),
        ]
    if _full_on(t_on, period):
        return [(peak, d, True) for d in topology.devices]
    if topology is Topology.BACK_TO_BACK:
        out = []
        for start, stop in ((peak - w, peak + w), (peak + half - w + mistime, peak + half + w)):
            if stop > start:
                out += [(start, "M1", True), (start, "M2", True)]
            out += [(stop, "M1", False), (stop, "M2", False)]
        return out
    # single transistor: only the positive direction is controllable
    out = []
    if t_on > 0:
        out.append((peak - w, "M", True))
    out.append((peak + w, "M", False))
    return out


def first_peak(estimate: DetectorEstimate, t_from):
    """Earliest positive-current-peak instant whose period can start at or after ``t_from``."""
    T = estimate.period
    p0 = estimate.phase_ref + PEAK_OFFSET_CYCLES * T
    k = math.floor((t_from - p0) / T)
    return p0 + k * T


def gate_events_between(estimate, t_on, topology, t_from, t_to, mistime=0.0):
    """Sorted commands with timestamps in ``[t_from, t_to)``."""
    T = estimate.period
    _check_duty(t_on, T)
    out = []
    peak = first_peak(estimate, t_from) - T
    while peak - T < t_to:
        for ev in period_commands(peak, T, t_on, topology, mistime):
            if t_from <= ev[0] < t_to:
                out.append(ev)
        peak += T
    out.sort(key=lambda e: e[0])
    return out


def plan_gate_schedule(estimate: DetectorEstimate, t_on, topology, mistime=0.0):
    """One period of commands starting at the estimate's phase reference."""
    T = estimate.period
    _check_duty(t_on, T)
    t0 = estimate.phase_ref
    return GateSchedule(
        tuple(gate_events_between(estimate, t_on, topology, t0, t0 + T, mistime)), T, t_on
    )


# -------------------------------------------------------------------- tuning
def coarse_tune(estimate: DetectorEstimate, design: swcap.CompensationDesign):
    """Switch-on time from the closed form, clamped to the compensable range."""
    f = estimate.f_hat
    half = 0.5 / f
    if f > design.f_hi * (1 + swcap.BOUNDARY_RTOL):
        warnings.warn(
            f"{f:.6g} Hz above compensable range, using t_on=0", FrequencyClampWarning, stacklevel=2
        )
        return 0.0
    if f < design.f_lo * (1 - swcap.BOUNDARY_RTOL):
        warnings.warn(
            f"{f:.6g} Hz below compensable range, using t_on=T/2", FrequencyClampWarning, stacklevel=2
        )
        return half
    return min(max(design.switch_on_time(f), 0.0), half)


@dataclass(frozen=True)
class ControllerState:
    mode: ControlMode = ControlMode.DETECT
    estimate: Optional[DetectorEstimate] = None
    t_on: float = 0.0
    step: float = 0.0
    best_rms: Optional[float] = None
    best_t_on: float = 0.0
    direction: int = 1
    strategy: Strategy = Strategy.TIME_COUNTING
    v_ref: float = 0.0
    restarts: int = 0

    @property
    def half_period(self):
        return 0.5 / self.estimate.f_hat if self.estimate is not None else math.inf


def start_fine(state: ControllerState, t_on):
    step = max(FINE_STEP_FRACTION * t_on, FINE_STEP_MIN)
    return replace(state, mode=ControlMode.FINE, t_on=t_on, step=step, best_rms=None,
                   best_t_on=t_on, direction=1)


def _hill_climb(x, step, best, best_x, direction, measured, lo, hi):
    """One perturb-and-observe move; returns (x, step, best, best_x, direction)."""
    if best is None or measured > best:
        best, best_x = measured, x
    else:
        direction = -direction
        step *= 0.5
    nxt = min(max(best_x + direction * step, lo), hi)
    if nxt == best_x:
        # pinned at a limit: probe the other side instead
        direction = -direction
        step *= 0.5
        nxt = min(max(best_x + direction * step, lo), hi)
    return nxt, step, best, best_x, direction


def fine_tune_step(state: ControllerState, measured_rms, termination=FINE_TERMINATION):
    """Hill climb on receiver RMS current with halving steps.

    ``measured_rms`` belongs to ``state.t_on``. Improvements keep direction;
    anything else reverses and halves. Once the step falls below
    ``termination`` the best switch-on time is locked and the mode becomes
    Track.
    """
    if state.mode is not ControlMode.FINE:
        raise ValidationError("fine_tune_step requires Fine mode")
    hi = state.half_period
    t_on, step, best, best_t, direction = _hill_climb(
        state.t_on, state.step, state.best_rms, state.best_t_on, state.direction,
        float(measured_rms), 0.0, hi,
    )
    if step < termination:
        return replace(state, mode=ControlMode.TRACK, t_on=best_t, step=step, best_rms=best,
                       best_t_on=best_t, direction=direction)
    return replace(state, t_on=t_on, step=step, best_rms=best, best_t_on=best_t,
                   direction=direction)


def voltage_mode_step(state: ControllerState, v_cr1_trace, measured_rms, initial_step=None,
                      termination_fraction=0.002):
    """Feedback on the comparison voltage ``v_ref``.

    The gate keeps C2 connected while ``|V_CR1| < v_ref``. ``v_cr1_trace`` is a
    ``(t, v)`` pair covering at least one period at the current ``v_ref``. A
    reference at or above the waveform peak means the gate never opens; the
    search then restarts from ``v_ref = 0`` with a halved step.
    """
    if state.strategy is not Strategy.VOLTAGE_COMPARISON:
        raise ValidationError("voltage_mode_step requires the voltage-comparison strategy")
    _, v = v_cr1_trace
    peak = float(np.max(np.abs(v))) if len(v) else 0.0
    if peak <= 0:
        return state
    if state.step <= 0:
        step = initial_step if initial_step is not None else FINE_STEP_FRACTION * peak
        return replace(state, mode=ControlMode.FINE, step=step, best_rms=None,
                       best_t_on=state.v_ref, direction=1)
    if state.v_ref >= peak:
        if state.restarts >= MAX_VOLTAGE_RESTARTS:
            return replace(state, mode=ControlMode.TRACK, v_ref=state.best_t_on)
        return replace(state, v_ref=0.0, step=0.5 * state.step, direction=1,
                       restarts=state.restarts + 1, best_rms=state.best_rms,
                       best_t_on=state.best_t_on)
    v_ref, step, best, best_v, direction = _hill_climb(
        state.v_ref, state.step, state.best_rms, state.best_t_on, state.direction,
        float(measured_rms), 0.0, math.inf,
    )
    if step < termination_fraction * peak:
        return replace(state, mode=ControlMode.TRACK, v_ref=best_v, step=step, best_rms=best,
                       best_t_on=best_v, direction=direction)
    return replace(state, v_ref=v_ref, step=step, best_rms=best, best_t_on=best_v,
                   direction=direction)


def crossing_times(t, v, level, rising=True):
    """Linearly interpolated instants where ``v`` crosses ``level``."""
    t = np.asarray(t)
    d = np.asarray(v) - level
    if rising:
        idx = np.nonzero((d[:-1] < 0) & (d[1:] >= 0))[0]
    else:
        idx = np.nonzero((d[:-1] > 0) & (d[1:] <= 0))[0]
    frac = d[idx] / (d[idx] - d[idx + 1])
    return t[idx] + frac * (t[idx + 1] - t[idx])


# -------------------------------------------------------------------- ledger
@dataclass(frozen=True)
class ReceiverEnergy:
    energy_j: float
    power_w: float
    ratio: float


@dataclass(frozen=True)
class EnergyLedger:
    receivers: dict
    duration: float

    @classmethod
    def from_energies(cls, energies: dict, duration):
        if duration <= 0:
            return cls({k: ReceiverEnergy(0.0, 0.0, 0.0) for k in energies}, 0.0)
        powers = {k: max(float(e), 0.0) / duration for k, e in energies.items()}
        top = max(powers.values(), default=0.0)
        return cls(
            {
                k: ReceiverEnergy(max(float(energies[k]), 0.0), p, p / top if top > 0 else 0.0)
                for k, p in powers.items()
            },
            float(duration),
        )

    def ratio(self, name):
        return self.receivers[name].ratio

    def to_dict(self):
        return {
            "duration_s": self.duration,
            "receivers": {
                k: {"energy_j": v.energy_j, "power_w": v.power_w, "ratio": v.ratio}
                for k, v in self.receivers.items()
            },
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        return cls(
            {k: ReceiverEnergy(v["energy_j"], v["power_w"], v["ratio"]) for k, v in d["receivers"].items()},
            d["duration_s"],
        )


def load_energy(system: SimSystem, energy):
    """Energy delivered to each receiver's load, by receiver name."""
    out = {}
    for r, rx in enumerate(system.receivers):
        e = energy.diss[system.el_load[r]] - energy.inj[system.ix_i[r], 2]
        out[rx.name] = float(e)
    return out


# ------------------------------------------------------------- controller
@dataclass
class ControllerConfig:
    receiver: str
    sense_probe: str
    design: swcap.CompensationDesign
    topology: Topology
    strategy: Strategy = Strategy.TIME_COUNTING
    objective_probe: Optional[str] = None
    window_cycles: int = DEFAULT_WINDOW_CYCLES
    min_cycles: int = 2
    hop_threshold: float = DEFAULT_REARM_THRESHOLD
    hysteresis_fraction: float = DEFAULT_HYSTERESIS_FRACTION
    settle_cycles: int = 3
    measure_cycles: int = 5
    noise: float = 0.0
    seed: int = 0
    fine_tune: bool = True

    def __post_init__(self):
        self.strategy = Strategy(self.strategy)
        self.topology = Topology(self.topology)
        if self.objective_probe is None:
            self.objective_probe = f"I_{self.receiver}"


@dataclass
class TraceRow:
    t: float
    mode: str
    f_hat: float
    t_on: float
    rms: float


@dataclass
class ControllerTrace:
    rows: list = field(default_factory=list)
    milestones: list = field(default_factory=list)  # (t, label, value)

    HEADER = ("t_s", "mode", "f_hat_hz", "t_on_s", "rms_a")

    def to_csv(self, path=None):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.HEADER)
        for r in self.rows:
            w.writerow([f"{r.t:.9g}", r.mode, f"{r.f_hat:.9g}", f"{r.t_on:.9g}", f"{r.rms:.9g}"])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, text):
        reader = csv.reader(io.StringIO(text))
        if tuple(next(reader)) != cls.HEADER:
            raise ValueError("unexpected controller trace header")
        rows = [TraceRow(float(a), b, float(c), float(d), float(e)) for a, b, c, d, e in reader]
        return cls(rows)

    def first(self, label, after=-math.inf):
        for t, lab, val in self.milestones:
            if lab == label and t >= after:
                return t, val
        return None


class DecryptionController:
    """Detect -> Coarse -> Fine -> Track state machine driven by simulator chunks."""

    def __init__(self, config: ControllerConfig):
        self.cfg = config
        self.state = ControllerState(strategy=config.strategy)
        self.detector = FrequencyDetector(config.window_cycles, config.hop_threshold)
        self.comparator = None
        self.rng = np.random.default_rng(config.seed)
        self.trace = ControllerTrace()
        self._horizon = -math.inf
        self._meas_start = math.inf
        self._sq = 0.0
        self._n = 0
        self._span = 0.0
        self._rearms_seen = 0
        self._last_vc = None  # voltage mode: latest full-cycle V_CR1 samples
        self._w = None  # voltage mode: applied half-window

    @property
    def name(self):
        return self.cfg.receiver

    @property
    def t_on(self):
        return self.state.t_on

    @property
    def probes(self):
        names = [self.cfg.sense_probe, self.cfg.objective_probe]
        if self.cfg.strategy is Strategy.VOLTAGE_COMPARISON:
            names.append(f"VC1_{self.cfg.receiver}")
        return tuple(dict.fromkeys(names))

    def _mark(self, t, label, value=0.0):
        self.trace.milestones.append((float(t), label, float(value)))

    def _reset_measurement(self, t_now):
        T = self.state.estimate.period if self.state.estimate else 0.0
        self._meas_start = t_now + self.cfg.settle_cycles * T
        self._sq = 0.0
        self._n = 0
        self._span = 0.0

    def _measure(self, t, y):
        sel = t > self._meas_start
        if sel.any():
            ys = y[sel]
            self._sq += float(ys @ ys)
            self._n += int(sel.sum())
            self._span = float(t[-1] - self._meas_start)
        T = self.state.estimate.period
        if self._n and self._span >= self.cfg.measure_cycles * T * (1 - 1e-6):
            return math.sqrt(self._sq / self._n)
        return None

    def on_chunk(self, sim: Simulation, chunk):
        cfg = self.cfg
        t = chunk["t"]
        if not len(t):
            return []
        t_now = sim.t
        vs = chunk[cfg.sense_probe]
        if cfg.noise > 0:
            vs = add_noise(vs, cfg.noise, self.rng)
        y = chunk[cfg.objective_probe]
        if self.comparator is None:
            amp = float(np.max(np.abs(vs)))
            if amp > 1e-12:
                self.comparator = Comparator(0.0, cfg.hysteresis_fraction * amp)
        if self.comparator is not None:
            edges = self.comparator.feed(t, vs)
            self.detector.push(edges.rising)
        if len(self.detector.rearms) > self._rearms_seen:
            self._rearms_seen = len(self.detector.rearms)
            self._mark(self.detector.rearms[-1], "hop_detected")
            if self.state.mode is not ControlMode.DETECT:
                self.state = replace(self.state, mode=ControlMode.DETECT)
        events = []
        st = self.state
        if st.mode is ControlMode.DETECT:
            if self.detector.cycles >= cfg.min_cycles:
                est = self.detector.estimate()
                self.state = replace(st, estimate=est, mode=ControlMode.COARSE)
                self._enter_tuning(t_now)
        else:
            try:
                est = self.detector.estimate()
                self.state = replace(self.state, estimate=est)
                if cfg.strategy is Strategy.TIME_COUNTING:
                    # a refined estimate can shrink the half period under the window
                    half = 0.5 * est.period
                    self.state = replace(self.state, t_on=min(self.state.t_on, half),
                                         best_t_on=min(self.state.best_t_on, half))
            except InsufficientEdges:
                pass
            if self.state.mode is ControlMode.FINE:
                rms = self._measure(t, y)
                if rms is not None:
                    self._tune(rms, t_now)
        if self.state.mode is not ControlMode.DETECT:
            if cfg.strategy is Strategy.TIME_COUNTING:
                events = self._schedule_time(t_now)
            else:
                events = self._schedule_voltage(t, chunk[f"VC1_{cfg.receiver}"], t_now)
        st = self.state
        self.trace.rows.append(
            TraceRow(float(t_now), st.mode.value, st.estimate.f_hat if st.estimate else 0.0,
                     st.t_on, float(np.sqrt(np.mean(y * y))))
        )
        return [GateEvent(te, cfg.receiver, dev, on) for te, dev, on in events]

    def _enter_tuning(self, t_now):
        est = self.state.estimate
        if self.cfg.strategy is Strategy.TIME_COUNTING:
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always")
                t_on = coarse_tune(est, self.cfg.design)
            for wmsg in caught:
                self._mark(t_now, "clamp_warning", est.f_hat)
            self._mark(t_now, "coarse", t_on)
            if self.cfg.fine_tune:
                self.state = start_fine(self.state, t_on)
            else:
                self.state = replace(self.state, mode=ControlMode.TRACK, t_on=t_on, best_t_on=t_on)
        else:
            self._mark(t_now, "coarse", 0.0)
            self._w = None
            self.state = replace(self.state, mode=ControlMode.FINE, v_ref=0.0, step=0.0,
                                 best_rms=None, direction=1, restarts=0)
        self._horizon = max(self._horizon, t_now)
        self._reset_measurement(t_now)

    def _tune(self, rms, t_now):
        if self.cfg.strategy is Strategy.TIME_COUNTING:
            self.state = fine_tune_step(self.state, rms)
            self._mark(t_now, "fine_step", self.state.t_on)
        else:
            vc = self._last_vc if self._last_vc is not None else (np.zeros(0), np.zeros(0))
            self.state = voltage_mode_step(self.state, vc, rms)
            self._mark(t_now, "fine_step", self.state.v_ref)
        if self.state.mode is ControlMode.TRACK:
            self._mark(t_now, "track", self.state.t_on)
        self._reset_measurement(t_now)

    def _schedule_time(self, t_now):
        st = self.state
        T = st.estimate.period
        t_on = min(st.t_on, 0.5 * T)
        t_from = max(self._horizon, t_now)
        t_to = t_now + 1.25 * T
        if t_to <= t_from:
            return []
        evs = gate_events_between(st.estimate, t_on, self.cfg.topology, t_from, t_to)
        self._horizon = t_to
        return evs

    def _schedule_voltage(self, t, vc, t_now):
        """Comparator on |V_CR1| against v_ref, applied one cycle late.

        The last period gives the half-window ``g`` from each V_CR1 zero
        crossing to its v_ref crossing. The applied half-window moves part of
        the way towards ``g`` every period, which settles where the window
        edge sits exactly on |V_CR1| = v_ref, as an instantaneous comparator
        would. Windows are centred on the V_CR1 zero crossings (current peaks).
        """
        st = self.state
        T = st.estimate.period
        self._last_vc = (t, vc)
        peak = float(np.max(np.abs(vc)))
        if st.step <= 0 and peak > 0:
            # first measurement at v_ref = 0 also sets the step size
            self.state = voltage_mode_step(self.state, (t, vc), 0.0)
            st = self.state
        tz = crossing_times(t, vc, 0.0, True)
        if not len(tz) or peak <= 0:
            return []
        if st.v_ref >= peak:
            g = 0.5 * T
        else:
            sides = []
            for rising, sign in ((True, 1.0), (False, -1.0)):
                zeros = crossing_times(t, vc, 0.0, rising)
                levels = crossing_times(t, vc, sign * st.v_ref, rising)
                for z in zeros:
                    after = levels[(levels >= z) & (levels < z + 0.5 * T)]
                    if len(after):
                        sides.append(after[0] - z)
                        break
            if not sides:
                return []
            g = float(np.mean(sides))
        w = g if self._w is None else self._w + VOLTAGE_RELAXATION * (g - self._w)
        self._w = min(max(w, 0.0), 0.25 * T)
        t_on = 2.0 * self._w
        self.state = replace(self.state, t_on=t_on)
        est = DetectorEstimate(st.estimate.f_hat, float(tz[-1]) - PEAK_OFFSET_CYCLES * T, 2)
        t_from = max(self._horizon, t_now)
        t_to = t_now + 1.25 * T
        if t_to <= t_from:
            return []
        self._horizon = t_to
        return gate_events_between(est, t_on, self.cfg.topology, t_from, t_to)


class ControllerGroup:
    """Fan chunks out to several controllers (one per hacking receiver)."""

    def __init__(self, controllers):
        self.controllers = list(controllers)

    @property
    def probes(self):
        return tuple(dict.fromkeys(p for c in self.controllers for p in c.probes))

    def on_chunk(self, sim, chunk):
        out = []
        for c in self.controllers:
            out += c.on_chunk(sim, chunk)
        return out


class SyncedSchedule:
    """Gate plan derived from the exact source phase (detection omitted).

    Serves as an oracle and reproduces coarse-only studies: ``t_on_for(f)``
    gives the switch-on time to apply at drive frequency ``f``. It keeps a
    controller-style trace so reports treat it like a controller.
    """

    def __init__(self, receiver, topology, t_on_for, mistime=0.0):
        self.name = receiver
        self.topology = Topology(topology)
        self.t_on_for = t_on_for
        self.mistime = mistime
        self.trace = ControllerTrace()
        self.t_on = 0.0
        self._horizon = -math.inf
        self._f = None

    @property
    def probes(self):
        return (f"I_{self.name}",)

    def on_chunk(self, sim, chunk):
        seg = sim.state.segment
        f = seg.frequency
        T = 1.0 / f
        t_now = sim.t
        if f != self._f:
            self._f = f
            self.t_on = min(self.t_on_for(f), 0.5 * T)
            self.trace.milestones.append((float(t_now), "coarse", float(self.t_on)))
        # a tuned receiver's current peaks where the source phase is pi
        tau_peak = (math.pi - seg.phase) / seg.omega
        est = DetectorEstimate(f, seg.t_start + tau_peak - PEAK_OFFSET_CYCLES * T, 2)
        t_from = max(self._horizon, t_now)
        t_to = t_now + 1.25 * T
        self._horizon = t_to
        evs = gate_events_between(est, self.t_on, self.topology, t_from, t_to, self.mistime)
        y = chunk.get(f"I_{self.name}")
        rms = float(np.sqrt(np.mean(y * y))) if y is not None and len(y) else 0.0
        self.trace.rows.append(TraceRow(float(t_now), ControlMode.TRACK.value, f, self.t_on, rms))
        return [GateEvent(te, self.name, dev, on) for te, dev, on in evs]


def closed_form_t_on(design: swcap.CompensationDesign):
    """``f -> t_on`` using the clamped closed form without warnings."""

    def t_on_for(f):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", FrequencyClampWarning)
            return coarse_tune(DetectorEstimate(f, 0.0, 2), design)

    return t_on_for


def design_for(system: SimSystem, receiver):
    r = system.receiver_index(receiver)
    comp = system.receivers[r].compensation
    if not isinstance(comp, SwitchedCapBranch):
        raise ValidationError(f"receiver {receiver!r} has no switched branch")
    l = system.coils.inductances[system.rx_coil[r]]
    return swcap.CompensationDesign(l, comp.c1, comp.c2)


def make_controller(system: SimSystem, receiver, sense_coil, strategy=Strategy.TIME_COUNTING, **kw):
    r = system.receiver_index(receiver)
    name = system.receivers[r].name
    sense = system.coils.names[system.coils.index(sense_coil)]
    cfg = ControllerConfig(
        receiver=name,
        sense_probe=f"V_{sense}",
        design=design_for(system, name),
        topology=system.receivers[r].compensation.topology,
        strategy=strategy,
        **kw,
    )
    return DecryptionController(cfg)


@dataclass
class DecryptionResult:
    ledger: EnergyLedger
    trace: ControllerTrace
    controllers: list
    sim: Simulation
    segment_ledgers: list  # steady-state ledger over the tail of every hop segment


def run_decryption(
    system: SimSystem,
    hop_schedule: Sequence,
    strategy=Strategy.TIME_COUNTING,
    *,
    duration=None,
    controllers=None,
    sense_coil=None,
    divisor=2000,
    probes=(),
    decimate=1,
    tail_cycles=20,
    controller_kw=None,
):
    """Run the full attack loop across a hop schedule.

    ``hop_schedule`` holds ``(t, frequency, amplitude)`` tuples starting at
    ``t = 0``; each segment must last at least 50 drive cycles. One
    controller per switched receiver is created unless ``controllers`` is
    given. Returns a :class:`DecryptionResult`; ``ledger`` covers the whole
    run and ``trace`` is the first controller's trace.
    """
    hops = [Hop(float(t), float(f), float(a)) for t, f, a in hop_schedule]
    if not hops:
        raise ValidationError("hop schedule is empty")
    if hops[0].t != 0.0:
        raise ValidationError("the first hop must start at t = 0")
    if duration is None:
        duration = hops[-1].t + MIN_HOP_CYCLES / hops[-1].frequency
    bounds = [h.t for h in hops[1:]] + [duration]
    for h, end in zip(hops, bounds):
        if h.frequency <= 0 or h.amplitude < 0:
            raise ValidationError("hop frequency must be positive and amplitude >= 0")
        if end - h.t < MIN_HOP_CYCLES / h.frequency * (1 - 1e-9):
            raise ValidationError(
                f"hop at {h.t!r} s lasts fewer than {MIN_HOP_CYCLES} cycles"
            )
    if controllers is None:
        if sense_coil is None:
            if not system.sense_coils:
                raise ValidationError("no sense coil available for frequency detection")
            sense_coil = system.sense_coils[0]
        controllers = [
            make_controller(system, r, sense_coil, strategy, **(controller_kw or {}))
            for r in system.switch_rx
        ]
    group = ControllerGroup(controllers) if len(controllers) != 1 else controllers[0]
    state = initial_state(system, divisor)
    state.segment = make_segment(system, 0.0, hops[0].frequency, hops[0].amplitude,
                                 system.source.phase, divisor)
    sim = Simulation(system, state, divisor=divisor, hops=hops[1:], controller=group,
                     probes=probes, decimate=decimate)
    segment_ledgers = []
    for h, end in zip(hops, bounds):
        tail = min(tail_cycles / h.frequency, 0.5 * (end - h.t))
        sim.run(end - tail - sim.t)
        e0 = load_energy(system, sim.state.energy)
        sim.run(end - sim.t)
        e1 = load_energy(system, sim.state.energy)
        segment_ledgers.append(
            (h, EnergyLedger.from_energies({k: e1[k] - e0[k] for k in e1}, tail))
        )
    ledger = EnergyLedger.from_energies(load_energy(system, sim.state.energy), sim.t)
    trace = controllers[0].trace if controllers else ControllerTrace()
    return DecryptionResult(ledger, trace, controllers, sim, segment_ledgers)
