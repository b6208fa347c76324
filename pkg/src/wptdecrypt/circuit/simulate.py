"""Event-exact fixed-step transient simulation.

The base step is ``1 / (f * divisor)`` of the drive period in force. Gate
commands, frequency hops and conduction changes (diode turn-on/off, bridge
commutation) split the step exactly at their instant, so the grid of
recorded samples stays uniform within a drive segment.
"""

from __future__ import annotations

import csv
import heapq
import io
import itertools
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Optional, Sequence, Union

import numpy as np

from ..errors import ConductionFixpointDivergence, ValidationError, WindowTooLong
from .elements import IdealCurrent
from .kernel import CURRENT_SOURCE, VOLTAGE_SOURCE, run_steps
from .system import BRIDGE, NW, SWITCH, Mode, ModeData, SimSystem, SwitchMode

DEFAULT_DIVISOR = 2000
MAX_FIXPOINT_ITERATIONS = 16


@dataclass(frozen=True)
class GateEvent:
    t: float
    receiver: Union[int, str]
    device: str
    on: bool


@dataclass(frozen=True)
class Hop:
    """Transmitter switches to ``frequency``/``amplitude`` at ``t`` (phase continuous)."""

    t: float
    frequency: float
    amplitude: float


@dataclass(frozen=True)
class Segment:
    t_start: float
    frequency: float
    amplitude: float
    phase: float
    h: float
    kind: int

    @property
    def omega(self):
        return 2.0 * math.pi * self.frequency

    def w(self, tau):
        a = self.omega * tau + self.phase
        if self.kind == CURRENT_SOURCE:
            return np.array(
                [self.amplitude * math.sin(a), self.amplitude * self.omega * math.cos(a), 0.0, 1.0]
            )
        return np.array([0.0, 0.0, self.amplitude * math.sin(a), 1.0])

    def w_many(self, tau):
        a = self.omega * np.asarray(tau) + self.phase
        out = np.zeros((a.size, NW))
        out[:, 3] = 1.0
        if self.kind == CURRENT_SOURCE:
            out[:, 0] = self.amplitude * np.sin(a)
            out[:, 1] = self.amplitude * self.omega * np.cos(a)
        else:
            out[:, 2] = self.amplitude * np.sin(a)
        return out


@dataclass
class EnergyAccount:
    """Running energy integrals in joules.

    ``inj[i, c]``: energy delivered into state row ``i`` by input ``c``
    (0 transmitter flux, 1 source voltage, 2 constant sources such as a
    battery; negative means absorbed). ``diss[e]``: energy dissipated in
    element ``e``. ``proj[r]``: charge/flux redistribution loss at mode
    changes attributed to receiver ``r`` (last slot: transmitter side).
    """

    inj: np.ndarray
    diss: np.ndarray
    proj: np.ndarray

    def copy(self):
        return EnergyAccount(self.inj.copy(), self.diss.copy(), self.proj.copy())

    @property
    def injected(self):
        return float(self.inj[:, :2].sum())

    @property
    def dissipated(self):
        return float(self.diss.sum()) - float(self.inj[:, 2].sum()) + float(self.proj.sum())


@dataclass
class SimState:
    t: float
    x: np.ndarray
    mode: Mode
    gates: tuple
    segment: Segment
    energy: EnergyAccount

    def copy(self):
        return SimState(
            self.t,
            self.x.copy(),
            self.mode,
            tuple(dict(g) for g in self.gates),
            self.segment,
            self.energy.copy(),
        )

    def stored_energy(self, system):
        return 0.5 * float(self.x @ system.E @ self.x)

    def conduction_flags(self, system):
        flags = {}
        for j, sm in enumerate(self.mode.switches):
            flags[f"S_{system.receivers[system.switch_rx[j]].name}"] = sm.closed
        for j, s in enumerate(self.mode.bridges):
            flags[f"B_{system.receivers[system.bridge_rx[j]].name}"] = s
        return flags

    def probe(self, system, name):
        md = system.mode_data(self.mode)
        w = self.segment.w(self.t - self.segment.t_start)
        row = system.probe_rows(md, name)
        return float(row @ np.concatenate([self.x, w]))


def make_segment(system, t, frequency, amplitude, phase, divisor):
    kind = CURRENT_SOURCE if isinstance(system.source, IdealCurrent) else VOLTAGE_SOURCE
    return Segment(float(t), float(frequency), float(amplitude), float(phase),
                   1.0 / (frequency * divisor), kind)


def initial_state(system: SimSystem, divisor=DEFAULT_DIVISOR, t=0.0):
    src = system.source
    seg = make_segment(system, t, src.frequency, src.amplitude, src.phase, divisor)
    n = system.n_states
    energy = EnergyAccount(
        np.zeros((n, 3)), np.zeros(len(system.elements)), np.zeros(len(system.receivers) + 1)
    )
    gates = system.initial_gates()
    return SimState(float(t), np.zeros(n), system.initial_mode(gates), gates, seg, energy)


@dataclass
class Trace:
    """Sampled probe time series."""

    t: np.ndarray
    data: dict
    state: Optional[SimState] = None
    events: list = field(default_factory=list)

    def __getitem__(self, name):
        return self.data[name]

    @property
    def probes(self):
        return list(self.data)

    def __len__(self):
        return len(self.t)

    def window(self, t0, t1=None):
        t1 = self.t[-1] if t1 is None else t1
        m = (self.t >= t0) & (self.t <= t1)
        return Trace(self.t[m], {k: v[m] for k, v in self.data.items()})

    def to_csv(self, path=None, probes=None):
        probes = list(self.data) if probes is None else list(probes)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t_s"] + probes)
        cols = [self.t] + [self.data[p] for p in probes]
        for row in zip(*cols):
            w.writerow([f"{v:.9g}" for v in row])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, source):
        if hasattr(source, "read"):
            text = source.read()
        elif isinstance(source, str) and "\n" in source:
            text = source
        else:
            with open(source) as fh:
                text = fh.read()
        reader = csv.reader(io.StringIO(text))
        header = next(reader)
        if not header or header[0] != "t_s":
            raise ValueError("trace CSV must start with a t_s column")
        rows = np.array([[float(v) for v in r] for r in reader if r], dtype=float)
        rows = rows.reshape(-1, len(header))
        return cls(rows[:, 0].copy(), {h: rows[:, i].copy() for i, h in enumerate(header) if i})


class Simulation:
    """Mutable driver around one :class:`SimSystem`.

    ``controller`` (optional) must expose ``probes`` (names it needs at full
    resolution) and ``on_chunk(sim, chunk)``, called after every chunk of
    ``chunk_steps`` grid steps with a dict of arrays (``"t"`` plus probes). It
    returns an iterable of :class:`GateEvent` scheduled at or after ``sim.t``.
    """

    def __init__(
        self,
        system: SimSystem,
        state: Optional[SimState] = None,
        *,
        divisor: int = DEFAULT_DIVISOR,
        hops: Sequence[Hop] = (),
        gate_events: Iterable[GateEvent] = (),
        controller=None,
        probes: Sequence[str] = (),
        decimate: int = 1,
        chunk_steps: Optional[int] = None,
    ):
        if divisor < 8:
            raise ValidationError("divisor must be >= 8")
        self.system = system
        self.divisor = int(divisor)
        self.state = state.copy() if state is not None else initial_state(system, divisor)
        seg = self.state.segment
        if abs(seg.h * seg.frequency * self.divisor - 1.0) > 1e-12:
            self.state.segment = replace(seg, h=1.0 / (seg.frequency * self.divisor))
        self._hops = sorted(hops, key=lambda hp: hp.t)
        self._events = []
        self._counter = itertools.count()
        self.schedule(gate_events)
        self.controller = controller
        self.trace_probes = tuple(probes)
        for p in self.trace_probes:
            if p not in system.probe_names():
                raise ValidationError(f"unknown probe {p!r}")
        self.decimate = max(int(decimate), 1)
        self.chunk_steps = int(chunk_steps or self.divisor)
        self._ctrl_probes = tuple(controller.probes) if controller is not None else ()
        self._mode_ids = {}
        self._modes = []
        self._sample_count = 0
        self._trace_t = []
        self._trace_rows = []
        self._applied = []
        # (t, switch slot, closed, V_SR just before the change, autonomous)
        self.switch_log = []
        self._reset_chunk()

    # ----------------------------------------------------------------- events
    def schedule(self, events):
        for ev in events:
            if not math.isfinite(ev.t):
                raise ValidationError(f"gate event time must be finite, got {ev.t!r}")
            if ev.t < self.state.t - 1e-12 * max(1.0, abs(self.state.t)):
                raise ValidationError(f"gate event at {ev.t!r} is in the past (t={self.state.t!r})")
            heapq.heappush(self._events, (ev.t, next(self._counter), ev))

    @property
    def t(self):
        return self.state.t

    def _eps(self):
        return 1e-9 * self.state.segment.h

    def _md(self) -> ModeData:
        return self.system.mode_data(self.state.mode)

    def _set_mode(self, mode, owner_rx):
        if mode == self.state.mode:
            return
        md = self.system.mode_data(mode)
        x = self.state.x
        xp = md.Pe @ x
        E = self.system.E
        loss = 0.5 * float(x @ E @ x) - 0.5 * float(xp @ E @ xp)
        self.state.energy.proj[owner_rx] += loss
        self.state.x = xp
        self.state.mode = mode

    def _apply_gate(self, ev):
        sysm = self.system
        j = sysm.switch_index(ev.receiver)
        r = sysm.switch_rx[j]
        topo = sysm.receivers[r].compensation.topology
        if ev.device not in topo.devices:
            raise ValidationError(f"{topo.value} has no device {ev.device!r}")
        gates = list(self.state.gates)
        g = dict(gates[j])
        g[ev.device] = bool(ev.on)
        gates[j] = g
        self.state.gates = tuple(gates)
        pos, neg = topo.allowed(g)
        old = self.state.mode.switches[j]
        closed = old.closed
        self._log_switch(j, old.closed, (pos and neg) or (closed and (pos or neg)), False)
        if pos and neg:
            closed = True
        elif not pos and not neg:
            closed = False
        sw = list(self.state.mode.switches)
        sw[j] = SwitchMode(closed, pos, neg)
        self._set_mode(Mode(tuple(sw), self.state.mode.bridges), r)
        self._applied.append(ev)

    def _log_switch(self, j, was, now, autonomous):
        if was == now:
            return
        r = self.system.switch_rx[j]
        x = self.state.x
        vsw = float(x[self.system.ix_v1[r]] - x[self.system.ix_v2[r]])
        self.switch_log.append((self.state.t, j, bool(now), vsw, autonomous))

    def _apply_hop(self, hop):
        self._flush_chunk()
        seg = self.state.segment
        tau = self.state.t - seg.t_start
        phase = math.fmod(seg.omega * tau + seg.phase, 2.0 * math.pi)
        self.state.segment = make_segment(
            self.system, self.state.t, hop.frequency, hop.amplitude, phase, self.divisor
        )

    def _apply_due(self):
        eps = self._eps()
        while self._hops and self._hops[0].t <= self.state.t + eps:
            self._apply_hop(self._hops.pop(0))
        while self._events and self._events[0][0] <= self.state.t + eps:
            _, _, ev = heapq.heappop(self._events)
            self._apply_gate(ev)
            self._settle()

    def _settle(self):
        """Flip conduction flags whose guards a gate change left violated."""
        st = self.state
        for _ in range(MAX_FIXPOINT_ITERATIONS):
            md = self._md()
            g = md.Gx @ st.x + md.Gw @ st.segment.w(st.t - st.segment.t_start)
            bad = np.nonzero(g < -md.gtol)[0]
            if not len(bad):
                return
            self._flip(md, bad)
        raise ConductionFixpointDivergence(f"conduction flags did not settle at t={st.t:.9g} s")

    def _flip(self, md, idx):
        sw = list(self.state.mode.switches)
        br = list(self.state.mode.bridges)
        owner = len(self.system.receivers)
        done = set()
        for g in idx:
            kind, j, val = md.gaction[g]
            if (kind, j) in done:
                continue
            done.add((kind, j))
            if kind == SWITCH:
                self._log_switch(j, sw[j].closed, bool(val), True)
                sw[j] = replace(sw[j], closed=bool(val))
                owner = self.system.switch_rx[j]
            else:
                br[j] = int(val)
                owner = self.system.bridge_rx[j]
        self._set_mode(Mode(tuple(sw), tuple(br)), owner)

    # ------------------------------------------------------------- stepping
    def _trial(self, md, tau0, h):
        seg = self.state.segment
        Phi, Gf, Gv, Gc = md.step_matrices(h, check=False, cache=False) if h != seg.h else md.step_matrices(h)
        w0 = seg.w(tau0)
        w1 = seg.w(tau0 + h)
        x1 = Phi @ self.state.x + Gf * (w1[0] - w0[0]) + Gv * (w0[2] + w1[2]) + Gc
        return x1, w0, w1

    def _accept(self, md, h, x1, w0, w1):
        st = self.state
        xb = 0.5 * (st.x + x1)
        en = st.energy
        B = md.B
        en.inj[:, 0] += xb * B[:, 1] * (w1[0] - w0[0])
        en.inj[:, 1] += xb * B[:, 2] * 0.5 * h * (w0[2] + w1[2])
        en.inj[:, 2] += xb * B[:, 3] * h
        d = self.system.diss_a @ xb
        en.diss += h * md.coefs * d * d
        st.x = x1
        st.t += h

    def _exact(self, h_total):
        """Advance by ``h_total`` (at most one base step) resolving conduction events."""
        st = self.state
        seg = st.segment
        t_target = st.t + h_total
        h_min = 1e-7 * seg.h
        flips = 0
        while t_target - st.t > 1e-12 * seg.h:
            remaining = t_target - st.t
            md = self._md()
            tau0 = st.t - seg.t_start
            h_try = remaining
            while True:
                x1, w0, w1 = self._trial(md, tau0, h_try)
                g1 = md.Gx @ x1 + md.Gw @ w1
                bad = g1 < -md.gtol
                if not bad.any():
                    self._accept(md, h_try, x1, w0, w1)
                    if h_try > h_min:
                        flips = 0
                    break
                g0 = md.Gx @ st.x + md.Gw @ w0
                with np.errstate(divide="ignore", invalid="ignore"):
                    theta = np.where(bad, g0 / (g0 - g1), np.inf)
                # a guard already violated at the step start flips right away
                theta = np.where(np.isnan(theta) | (g0 < -md.gtol), 0.0, np.clip(theta, 0.0, 1.0))
                th = float(theta.min())
                if th * h_try < h_min:
                    flips += 1
                    if flips > MAX_FIXPOINT_ITERATIONS:
                        raise ConductionFixpointDivergence(
                            f"conduction flags did not settle at t={st.t:.9g} s"
                        )
                    self._flip(md, np.nonzero(bad & (theta <= th + 1e-12))[0])
                    break
                # shrink towards the first crossing, stopping just short of it
                h_try = th * h_try * (1.0 - 1e-9)
        st.t = t_target

    def _run_grid(self, n_full):
        """Run ``n_full`` base steps from an on-grid state."""
        st = self.state
        done = 0
        while done < n_full:
            seg = st.segment
            md = self._md()
            Phi, Gf, Gv, Gc = md.step_matrices(seg.h)
            k = int(round((st.t - seg.t_start) / seg.h))
            pos = self._pos
            self._ensure_capacity(n_full - done)
            s = run_steps(
                st.x, k, n_full - done, seg.h, seg.kind, seg.amplitude, seg.omega, seg.phase,
                Phi, Gf, Gv, Gc, md.Gx, md.Gw, md.gtol,
                md.B, self.system.diss_a, md.coefs,
                self._buf[pos:], st.energy.inj, st.energy.diss,
            )
            if s:
                mid = self._mode_id(st.mode)
                self._buf_t[pos:pos + s] = seg.t_start + (k + 1 + np.arange(s)) * seg.h
                self._buf_m[pos:pos + s] = mid
                self._pos += s
                done += s
            st.t = seg.t_start + (k + s) * seg.h
            if done < n_full:
                self._exact(seg.h)
                st.t = seg.t_start + (k + s + 1) * seg.h
                self._record()
                done += 1

    def _advance_to(self, t_stop):
        st = self.state
        seg = st.segment
        h = seg.h
        kf = (st.t - seg.t_start) / h
        k = math.floor(kf + 1e-9)
        on_grid = abs(kf - round(kf)) < 1e-9
        if not on_grid:
            t_grid = seg.t_start + (k + 1) * h
            target = min(t_grid, t_stop)
            self._exact(target - st.t)
            if target == t_grid:
                st.t = t_grid
                self._record()
                k += 1
            else:
                st.t = t_stop
                return
        k = int(round((st.t - seg.t_start) / h))
        k_stop = math.floor((t_stop - seg.t_start) / h + 1e-9)
        if k_stop > k:
            self._run_grid(k_stop - k)
        if t_stop - st.t > self._eps():
            self._exact(t_stop - st.t)
            st.t = t_stop

    # ------------------------------------------------------------ recording
    def _mode_id(self, mode):
        mid = self._mode_ids.get(mode)
        if mid is None:
            mid = len(self._modes)
            self._mode_ids[mode] = mid
            self._modes.append(mode)
        return mid

    def _reset_chunk(self):
        cap = self.chunk_steps + 8
        self._buf = np.empty((cap, self.system.n_states))
        self._buf_t = np.empty(cap)
        self._buf_m = np.empty(cap, dtype=np.int64)
        self._pos = 0

    def _ensure_capacity(self, extra):
        need = self._pos + extra + 2
        if need > len(self._buf_t):
            cap = max(need, 2 * len(self._buf_t))
            for name in ("_buf", "_buf_t", "_buf_m"):
                old = getattr(self, name)
                new = np.empty((cap,) + old.shape[1:], dtype=old.dtype)
                new[: self._pos] = old[: self._pos]
                setattr(self, name, new)

    def _record(self):
        self._ensure_capacity(1)
        p = self._pos
        self._buf[p] = self.state.x
        self._buf_t[p] = self.state.t
        self._buf_m[p] = self._mode_id(self.state.mode)
        self._pos += 1

    def _evaluate(self, names, X, T, M):
        seg = self.state.segment
        W = seg.w_many(T - seg.t_start)
        aug = np.hstack([X, W])
        out = {nm: np.empty(len(T)) for nm in names}
        if not names or not len(T):
            return out
        for mid in np.unique(M):
            sel = M == mid
            md = self.system.mode_data(self._modes[mid])
            P = self.system.probe_matrix(md, names)
            vals = aug[sel] @ P.T
            for i, nm in enumerate(names):
                out[nm][sel] = vals[:, i]
        return out

    def _flush_chunk(self):
        n = self._pos
        if n == 0:
            return
        X, T, M = self._buf[:n], self._buf_t[:n], self._buf_m[:n]
        if self.trace_probes:
            idx = np.arange(self._sample_count, self._sample_count + n)
            keep = idx % self.decimate == 0
            if keep.any():
                vals = self._evaluate(self.trace_probes, X[keep], T[keep], M[keep])
                self._trace_t.append(T[keep].copy())
                self._trace_rows.append(vals)
        self._sample_count += n
        if self.controller is not None:
            chunk = self._evaluate(self._ctrl_probes, X, T, M)
            chunk["t"] = T.copy()
            events = self.controller.on_chunk(self, chunk)
            if events:
                self.schedule(events)
        self._pos = 0

    # ----------------------------------------------------------------- public
    def run(self, duration):
        """Advance by ``duration`` seconds and return the trace recorded so far."""
        if duration < 0:
            raise ValidationError("duration must be >= 0")
        st = self.state
        t_end = st.t + duration
        while True:
            self._apply_due()
            eps = self._eps()
            if st.t >= t_end - eps:
                break
            seg = st.segment
            k = math.floor((st.t - seg.t_start) / seg.h + 1e-9)
            k_chunk = (k // self.chunk_steps + 1) * self.chunk_steps
            t_chunk = seg.t_start + k_chunk * seg.h
            t_stop = min(t_end, t_chunk)
            if self._events:
                t_stop = min(t_stop, self._events[0][0])
            if self._hops:
                t_stop = min(t_stop, self._hops[0].t)
            if t_stop - st.t > eps:
                self._advance_to(t_stop)
            else:
                st.t = t_stop
            if abs(st.t - t_chunk) <= eps:
                self._flush_chunk()
        self._flush_chunk()
        st.t = t_end if abs(st.t - t_end) <= self._eps() else st.t
        return self.trace()

    def trace(self):
        if self._trace_t:
            t = np.concatenate(self._trace_t)
            data = {p: np.concatenate([r[p] for r in self._trace_rows]) for p in self.trace_probes}
        else:
            t = np.zeros(0)
            data = {p: np.zeros(0) for p in self.trace_probes}
        return Trace(t, data, self.state.copy(), list(self._applied))


def advance(system: SimSystem, state: SimState, dt, gate_events: Iterable[GateEvent] = (),
            divisor=DEFAULT_DIVISOR) -> SimState:
    """Return the state ``dt`` seconds later; ``state`` is not modified."""
    if not dt > 0:
        raise ValidationError("dt must be positive")
    events = sorted(gate_events, key=lambda e: e.t)
    sim = Simulation(system, state, divisor=divisor, gate_events=events)
    sim.run(dt)
    return sim.state.copy()


def run_transient(
    system: SimSystem,
    duration,
    probes: Sequence[str] = (),
    gate_source: Union[None, Iterable[GateEvent], Callable] = None,
    *,
    state: Optional[SimState] = None,
    hops: Sequence[Hop] = (),
    divisor=DEFAULT_DIVISOR,
    decimate=1,
) -> Trace:
    """Simulate ``duration`` seconds and return sampled probes.

    ``gate_source`` is either a list of gate events or a controller object
    (see :class:`Simulation`). Probes default to all available.
    """
    if duration < 0:
        raise ValidationError("duration must be >= 0")
    probes = tuple(probes) if probes else system.probe_names()
    controller = None
    events = ()
    if gate_source is not None:
        if hasattr(gate_source, "on_chunk"):
            controller = gate_source
        else:
            events = list(gate_source)
    sim = Simulation(system, state, divisor=divisor, hops=hops, gate_events=events,
                     controller=controller, probes=probes, decimate=decimate)
    if duration == 0:
        return sim.trace()
    return sim.run(duration)


def induced_emf(system: SimSystem, state: SimState, coil):
    """Voltage induced on ``coil`` by every other coil's changing current."""
    c = system.coils.index(coil)
    md = system.mode_data(state.mode)
    n = system.n_states
    w = state.segment.w(state.t - state.segment.t_start)
    aug = np.concatenate([state.x, w])
    total = 0.0
    for s, cc in enumerate(system.current_coils):
        if cc == c:
            continue
        d = np.concatenate([md.Dx[s], md.Dw[s]]) @ aug
        total += system.Lfull[c, cc] * d
    if not system.voltage_driven and c != 0:
        total += system.Lfull[c, 0] * w[1]
    return float(total)


@dataclass
class SteadyMetrics:
    rms: dict
    peak: dict
    cycle_load_energy: dict
    settled: bool
    cycle_rms: dict


def steady_state_metrics(trace: Trace, window: int, frequency, probes=None, tol=0.01):
    """RMS/peak over the last ``window`` drive cycles plus a settling verdict.

    ``settled`` holds when every probe's per-cycle RMS varies by less than
    ``tol`` (relative to its window RMS) over the window. Per-cycle load
    energy is reported for every receiver whose ``VL_``/``IL_`` probes are in
    the trace.
    """
    if window < 1:
        raise ValidationError("window must be >= 1 cycle")
    period = 1.0 / frequency
    t = trace.t
    if len(t) < 2 or t[-1] - t[0] < 2 * window * period * (1 - 1e-9):
        raise WindowTooLong(f"trace shorter than 2 x {window} cycles")
    probes = list(trace.data) if probes is None else list(probes)
    t_end = t[-1]
    edges = t_end - period * np.arange(window, -1, -1)
    rms, peak, crms = {}, {}, {}
    settled = True
    for p in probes:
        y = trace.data[p]
        per = []
        for a, b in zip(edges[:-1], edges[1:]):
            m = (t > a) & (t <= b)
            per.append(_rms(t[m], y[m]))
        m = (t > edges[0]) & (t <= t_end)
        rms[p] = _rms(t[m], y[m])
        peak[p] = float(np.max(np.abs(y[m]))) if m.any() else 0.0
        crms[p] = per
        scale = max(rms[p], 1e-12)
        if len(per) > 1 and (max(per) - min(per)) / scale >= tol:
            settled = False
    energy = {}
    for p in trace.data:
        if p.startswith("VL_") and "IL_" + p[3:] in trace.data:
            rx = p[3:]
            pw = trace.data[p] * trace.data["IL_" + rx]
            m = (t > edges[0]) & (t <= t_end)
            energy[rx] = float(_integrate(t[m], pw[m])) / window
    return SteadyMetrics(rms, peak, energy, settled, crms)


def _integrate(t, y):
    if len(t) < 2:
        return 0.0
    return float(np.sum(0.5 * (y[1:] + y[:-1]) * np.diff(t)))


def _rms(t, y):
    if len(t) < 2:
        return float(np.sqrt(np.mean(y**2))) if len(y) else 0.0
    span = t[-1] - t[0]
    # uniform grid: plain mean of squares over full cycles
    return float(np.sqrt(np.mean(y**2)))
