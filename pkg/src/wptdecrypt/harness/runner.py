"""Experiment orchestration: full runs, frequency sweeps, topology comparison,
loss calibration and the detector demo."""

from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .. import swcap
from ..circuit.elements import Topology
from ..circuit.simulate import Hop, Simulation, Trace, initial_state, make_segment, run_transient
from ..circuit.system import receiver_impedance
from ..controller import (
    ControllerTrace,
    EnergyLedger,
    Strategy,
    SyncedSchedule,
    closed_form_t_on,
    design_for,
    load_energy,
    make_controller,
    run_decryption,
)
from ..errors import ValidationError
from ..sensing import DEFAULT_HYSTERESIS_FRACTION, FrequencyDetector, comparator_quantize
from .scenario import ReceiverSpec, Scenario

SETTLE_TOLERANCE = 0.01


def default_probes(scenario: Scenario, system):
    names = []
    for r in scenario.receivers:
        names.append(f"I_{r.name}")
        if r.compensation == "switched":
            names += [f"VC1_{r.name}", f"VC2_{r.name}", f"VSW_{r.name}", f"ISW_{r.name}"]
        names.append(f"VL_{r.name}")
    for a in system.sense_coils:
        names.append(f"V_{system.coils.names[a]}")
    return tuple(names)


def _controllers(scenario: Scenario, system):
    sense = scenario.controller.sense_coil
    if sense is None and system.sense_coils:
        sense = system.sense_coils[0]
    out = []
    for i, r in enumerate(scenario.hacking):
        if scenario.controller.phase_source == "source":
            design = design_for(system, r.name)
            out.append(SyncedSchedule(r.name, r.topology, closed_form_t_on(design)))
            continue
        kw = scenario.controller.kwargs()
        out.append(make_controller(system, r.name, sense, Strategy(r.controller),
                                   noise=scenario.sim.noise, seed=scenario.sim.seed + i, **kw))
    return out


def _cycle_settled(rows, t_from, tol=SETTLE_TOLERANCE):
    vals = [r.rms for r in rows if r.t > t_from]
    if len(vals) < 3:
        return False
    # the final chunk of a segment can be partial
    vals = vals[:-1]
    mean = float(np.mean(vals))
    return mean > 0 and (max(vals) - min(vals)) / mean < tol


@dataclass
class RunReport:
    ledger: EnergyLedger
    files: dict
    final_t_on: dict
    retune_latency: list  # per hop: seconds from hop to coarse retune (None if never)
    settled: list  # per hop
    segments: list  # per hop: steady-state ledger dict over the segment tail
    scenario: str

    def to_dict(self):
        return {
            "scenario": self.scenario,
            "ledger": self.ledger.to_dict(),
            "files": dict(sorted(self.files.items())),
            "controller": {
                "final_t_on_s": self.final_t_on,
                "retune_latency_s": self.retune_latency,
            },
            "settled": self.settled,
            "segments": self.segments,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def run_scenario(scenario: Scenario, out_dir=None) -> RunReport:
    """Drive the full attack loop over the scenario's hop schedule.

    With ``out_dir`` the ledger, one CSV per probe, the controller trace and
    the report are written there; a zero-length run writes only the empty
    ledger and report.
    """
    system = scenario.build()
    duration = scenario.duration
    files = {}
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    if duration <= 0:
        names = [r.name for r in scenario.receivers]
        ledger = EnergyLedger.from_energies({n: 0.0 for n in names}, 0.0)
        report = RunReport(ledger, {}, {}, [], [], [], scenario.name)
        _write_report(out, report)
        return report
    probes = scenario.sim.probes or default_probes(scenario, system)
    controllers = _controllers(scenario, system)
    hops = [h for h in scenario.hops if h[0] < duration]
    res = run_decryption(
        system, hops, duration=duration, controllers=controllers,
        divisor=scenario.sim.divisor, probes=probes, decimate=scenario.sim.decimate,
        tail_cycles=scenario.sim.tail_cycles,
    )
    trace = res.sim.trace()
    latencies, settled, segments = [], [], []
    bounds = [h[0] for h in hops[1:]] + [duration]
    for (hop, led), end in zip(res.segment_ledgers, bounds):
        lat = None
        if controllers:
            hit = controllers[0].trace.first("coarse", after=hop.t)
            if hit is not None and hit[0] < end:
                lat = hit[0] - hop.t
        latencies.append(lat)
        tail_from = end - min(scenario.sim.tail_cycles / hop.frequency, 0.5 * (end - hop.t))
        if controllers:
            rows = [r for r in controllers[0].trace.rows if r.t <= end + 1e-12]
            settled.append(_cycle_settled(rows, tail_from))
        else:
            settled.append(True)
        segments.append({"t_s": hop.t, "frequency_hz": hop.frequency,
                         "amplitude_a": hop.amplitude, "ledger": led.to_dict()})
    final_t_on = {c.name: c.t_on for c in controllers}
    if out is not None:
        for p in probes:
            fn = f"trace_{p}.csv"
            Trace(trace.t, {p: trace.data[p]}).to_csv(out / fn)
            files[p] = fn
        if controllers:
            controllers[0].trace.to_csv(out / "controller.csv")
            files["controller"] = "controller.csv"
        files["ledger"] = "ledger.json"
    report = RunReport(res.ledger, files, final_t_on, latencies, settled, segments, scenario.name)
    _write_report(out, report)
    return report


def _write_report(out, report):
    if out is None:
        return
    (out / "ledger.json").write_text(report.ledger.to_json())
    (out / "report.json").write_text(report.to_json())


# ------------------------------------------------------------------- sweeps
REFERENCE = "REF"


def with_reference(scenario: Scenario, f, template=None):
    """Add a fixed receiver tuned exactly to ``f`` as the full-resonance yardstick.

    The reference copies the coil, coupling to the transmitter and load of
    ``template`` (default: the first fixed receiver). Peer mutuals stay zero
    and an ideal-current drive makes it a non-intrusive observer.
    """
    fixed = [r for r in scenario.receivers if r.compensation == "fixed"]
    tpl = scenario.receiver(template) if template else (fixed[0] if fixed else scenario.receivers[0])
    ci = scenario.coil_names.index(tpl.coil)
    coil = REFERENCE
    names = scenario.coil_names + (coil,)
    induct = scenario.inductances + (scenario.inductances[ci],)
    coils = scenario.coils()
    res = scenario.resistances
    res = tuple(coils.series_resistances) + (coils.series_resistances[ci],)
    tx = scenario.coil_names[0]
    m_tx = float(coils.mutuals[0, ci])
    mut = scenario.mutuals + ((tx, coil, m_tx),)
    c = swcap.resonant_capacitance(f, scenario.inductances[ci])
    ref = replace(tpl, name=REFERENCE, coil=coil, compensation="fixed", c=c, controller="none")
    return replace(scenario, coil_names=names, inductances=induct, resistances=res, mutuals=mut,
                   receivers=scenario.receivers + (ref,))


@dataclass(frozen=True)
class SweepRow:
    f: float
    power: dict
    ratio: dict  # normalized by the largest scenario receiver
    share: dict  # fraction of the total received by scenario receivers
    vs_resonant: dict  # normalized by the co-simulated reference tuned to f
    settled: bool
    t_on: dict


SWEEP_CYCLES = 200


def sweep_point(scenario: Scenario, f, cycles=SWEEP_CYCLES, reference=True):
    sc = with_reference(scenario, f) if reference else scenario
    amp = scenario.amplitude_at(f)
    system = sc.build(frequency=f, amplitude=amp)
    controllers = _controllers(sc, system)
    tail = scenario.sim.tail_cycles
    res = run_decryption(system, [(0.0, f, amp)], duration=cycles / f, controllers=controllers,
                         divisor=scenario.sim.divisor, tail_cycles=tail)
    led = res.segment_ledgers[-1][1]
    names = [r.name for r in scenario.receivers]
    power = {k: v.power_w for k, v in led.receivers.items()}
    top = max(power[n] for n in names)
    total = sum(power[n] for n in names)
    ratio = {n: power[n] / top if top > 0 else 0.0 for n in names}
    share = {n: power[n] / total if total > 0 else 0.0 for n in names}
    pref = power.get(REFERENCE)
    vs = {n: power[n] / pref for n in names} if pref else {}
    settled = all(_cycle_settled(c.trace.rows, cycles / f - tail / f) for c in controllers)
    t_on = {c.name: c.t_on for c in controllers}
    return SweepRow(float(f), power, ratio, share, vs, settled, t_on)


def _sweep_worker(args):
    return sweep_point(*args)


def sweep_frequency(scenario: Scenario, grid: Sequence[float], cycles=SWEEP_CYCLES,
                    reference=True, workers=1):
    """One steady-state row per grid frequency (each point is an independent run)."""
    grid = [float(f) for f in grid]
    if not grid:
        raise ValidationError("empty frequency grid")
    if any(not f > 0 for f in grid):
        raise ValidationError("grid frequencies must be positive")
    jobs = [(scenario, f, cycles, reference) for f in grid]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(_sweep_worker, jobs))
    return [_sweep_worker(j) for j in jobs]


def sweep_csv(rows, path=None):
    names = list(rows[0].power) if rows else []
    names = [n for n in names if n != REFERENCE]
    header = ["f_hz"]
    for n in names:
        header += [f"power_{n}_w", f"ratio_{n}", f"share_{n}", f"vs_resonant_{n}"]
    header += ["settled"]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        line = [f"{r.f:.9g}"]
        for n in names:
            line += [f"{r.power[n]:.9g}", f"{r.ratio[n]:.9g}", f"{r.share[n]:.9g}",
                     f"{r.vs_resonant.get(n, float('nan')):.9g}"]
        line.append("1" if r.settled else "0")
        w.writerow(line)
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def parse_sweep_csv(text):
    reader = csv.DictReader(io.StringIO(text))
    return [dict(row) for row in reader]


# --------------------------------------------------------------- topologies
@dataclass(frozen=True)
class TopologyRow:
    topology: str
    schedule: str
    rms_i_r: float
    mean_v_cr2: float
    peak_v_cr2: float
    spike: float
    zvs: float  # worst |V_SR| at autonomous turn-ons relative to peak |V_CR1| (nan if none)


TOPOLOGY_CYCLES = 60


def compare_topologies(scenario: Scenario, topologies=None, mistime=0.05, cycles=TOPOLOGY_CYCLES,
                       on_resistance=None):
    """Quantify the switch-topology claims on the scenario's first switched receiver.

    Schedules: single transistor with its gate held off; diode pair with the
    standard two-command schedule; back-to-back pair with its second turn-on
    delayed by ``mistime`` of a period. The spike metric is peak |I_C2|
    divided by the C2 share of peak |I_R|; about 1 means no
    capacitor-to-capacitor surge.
    """
    topologies = [Topology(t) for t in (topologies or list(Topology))]
    switched = [r for r in scenario.receivers if r.compensation == "switched"]
    if not switched:
        raise ValidationError("scenario has no switched-capacitor receiver")
    target = switched[0]
    f = scenario.hops[0][1]
    amp = scenario.hops[0][2]
    rows = []
    for topo in topologies:
        spec = replace(target, topology=topo.value, controller="none")
        if on_resistance is not None:
            spec = replace(spec, on_resistance=on_resistance)
        recs = tuple(spec if r.name == target.name else replace(r, controller="none")
                     for r in scenario.receivers)
        sc = replace(scenario, receivers=recs)
        system = sc.build(frequency=f, amplitude=amp)
        l_r = system.coils.inductances[system.rx_coil[system.receiver_index(target.name)]]
        design = swcap.CompensationDesign(l_r, spec.c1, spec.c2)
        t_on = design.switch_on_time(f) if design.contains(f) else 0.0
        if topo is Topology.SINGLE_TRANSISTOR:
            gate, label = None, "gate_off"
        elif topo is Topology.BACK_TO_BACK:
            gate = SyncedSchedule(target.name, topo, lambda _f: t_on, mistime=mistime / f)
            label = "mistimed" if mistime else "standard"
        else:
            gate = SyncedSchedule(target.name, topo, lambda _f: t_on)
            label = "standard"
        n = target.name
        probes = (f"I_{n}", f"VC1_{n}", f"VC2_{n}", f"VSW_{n}", f"ISW_{n}")
        sim = Simulation(system, divisor=sc.sim.divisor, controller=gate, probes=probes)
        sim.run(cycles / f)
        tr = sim.trace()
        tail = tr.window(tr.t[-1] - 10.0 / f)
        i_r = tail[f"I_{n}"]
        vc1 = tail[f"VC1_{n}"]
        vc2 = tail[f"VC2_{n}"]
        isw = tail[f"ISW_{n}"]
        share = spec.c2 / (spec.c1 + spec.c2)
        peak_ir = float(np.max(np.abs(i_r)))
        spike = float(np.max(np.abs(isw))) / (share * peak_ir) if peak_ir > 0 else 0.0
        peak_vc1 = float(np.max(np.abs(vc1)))
        t_tail = tail.t[0]
        auto = [abs(v) for t, _, closed, v, autonomous in sim.switch_log
                if closed and autonomous and t >= t_tail]
        zvs = max(auto) / peak_vc1 if auto and peak_vc1 > 0 else float("nan")
        rows.append(TopologyRow(topo.value, label, float(np.sqrt(np.mean(i_r ** 2))),
                                float(np.mean(vc2)), float(np.max(np.abs(vc2))), spike, zvs))
    return rows


def topology_csv(rows, path=None):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["topology", "schedule", "rms_i_r_a", "mean_v_cr2_v", "peak_v_cr2_v", "spike",
                "zvs"])
    for r in rows:
        w.writerow([r.topology, r.schedule, f"{r.rms_i_r:.9g}", f"{r.mean_v_cr2:.9g}",
                    f"{r.peak_v_cr2:.9g}", f"{r.spike:.9g}", f"{r.zvs:.9g}"])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


# -------------------------------------------------------------- calibration
@dataclass(frozen=True)
class Calibration:
    frequency: float
    amplitude: float  # effective transmitter current amplitude (peak)
    extra_resistance: float  # added to the hacking receiver's coil resistance
    hacking_rms: float  # simulated best-T_ON current with the fitted values
    peer_voltage: float


def effective_amplitude(scenario: Scenario, f, peer, peer_voltage):
    """Transmitter current amplitude that gives ``peer`` the measured RMS load voltage."""
    system = scenario.build(frequency=f, amplitude=1.0)
    r = system.receiver_index(peer)
    rx = system.receivers[r]
    if not hasattr(rx.load, "r") or system.voltage_driven:
        raise ValidationError("calibration needs an ideal current drive and a resistive peer load")
    i_rms = peer_voltage / rx.load.r
    z = abs(receiver_impedance(system, r, f))
    m = system.Lfull[0, system.rx_coil[r]]
    return math.sqrt(2.0) * i_rms * z / (2 * math.pi * f * m)


def _with_extra_resistance(scenario: Scenario, name, extra):
    coils = scenario.coils()
    res = list(coils.series_resistances)
    ci = scenario.coil_names.index(scenario.receiver(name).coil)
    res[ci] += extra
    return replace(scenario, resistances=tuple(res))


def hacking_rms(scenario: Scenario, f, amplitude, cycles=150):
    """Steady RMS receiver current the controller settles on at ``f``."""
    system = scenario.build(frequency=f, amplitude=amplitude)
    controllers = _controllers(scenario, system)
    name = controllers[0].name
    sim_probes = (f"I_{name}",)
    res = run_decryption(system, [(0.0, f, amplitude)], duration=cycles / f,
                         controllers=controllers, divisor=scenario.sim.divisor,
                         probes=sim_probes, decimate=1)
    tr = res.sim.trace()
    tail = tr.window(tr.t[-1] - 20.0 / f)
    return float(np.sqrt(np.mean(tail[f"I_{name}"] ** 2)))


def calibrate_losses(scenario: Scenario, f, peer, peer_voltage, target_rms, tol=1e-3, max_iter=8):
    """Fit the effective drive and the hacking receiver's extra loss.

    The drive amplitude makes the resonant ``peer`` read ``peer_voltage``
    (RMS, closed form). The extra series resistance of the hacking receiver
    is then found by secant iteration on the simulated best-T_ON current.
    Scenario coil resistances are taken as they are for everyone else.
    """
    hack = scenario.hacking
    if not hack:
        raise ValidationError("calibration needs a receiver with a controller")
    name = hack[0].name
    amp = effective_amplitude(scenario, f, peer, peer_voltage)
    base = _with_extra_resistance(scenario, name, 0.0)
    system = base.build(frequency=f, amplitude=amp)
    r = system.receiver_index(name)
    m = system.Lfull[0, system.rx_coil[r]]
    emf = 2 * math.pi * f * m * amp / math.sqrt(2)
    z0 = abs(receiver_impedance(system, r, f, swcap.resonant_capacitance(
        f, system.coils.inductances[system.rx_coil[r]])))
    x0 = max(emf / target_rms - z0, 0.0)
    x1 = x0 * 1.05 + 0.01
    g0 = hacking_rms(_with_extra_resistance(base, name, x0), f, amp) - target_rms
    for _ in range(max_iter):
        g1 = hacking_rms(_with_extra_resistance(base, name, x1), f, amp) - target_rms
        if abs(g1) <= tol * target_rms or g1 == g0:
            break
        x0, x1, g0 = x1, max(x1 - g1 * (x1 - x0) / (g1 - g0), 0.0), g1
    return Calibration(f, amp, x1, g1 + target_rms, peer_voltage)


# ----------------------------------------------------------------- detector
@dataclass
class DetectDemo:
    t: np.ndarray
    v: np.ndarray
    edges: object
    estimates: list  # (t, f_hat)
    probe: str


def detect_demo(scenario: Scenario, probe=None, hysteresis_fraction=DEFAULT_HYSTERESIS_FRACTION,
                window_cycles=None):
    """Run the scenario's drive with the hacking gates held off and feed a probe to the detector."""
    sc = scenario
    system = sc.build()
    if probe is None:
        if not system.sense_coils:
            raise ValidationError("scenario has no sense coil")
        probe = f"V_{system.coils.names[system.sense_coils[0]]}"
    duration = scenario.duration
    hops = scenario.hops
    state = initial_state(system, sc.sim.divisor)
    state.segment = make_segment(system, 0.0, hops[0][1], hops[0][2], system.source.phase,
                                 sc.sim.divisor)
    tr = run_transient(system, duration, (probe,), state=state,
                       hops=[Hop(*h) for h in hops[1:]], divisor=sc.sim.divisor)
    v = tr[probe]
    if sc.sim.noise > 0:
        rng = np.random.default_rng(sc.sim.seed)
        v = v + rng.uniform(-sc.sim.noise, sc.sim.noise, size=v.shape)
    amp = float(np.max(np.abs(v))) if len(v) else 0.0
    edges = comparator_quantize(tr.t, v, 0.0, hysteresis_fraction * amp)
    det = FrequencyDetector(window_cycles or sc.controller.window_cycles, sc.controller.hop_threshold)
    estimates = []
    for te in edges.rising:
        det.push([te])
        if det.cycles >= 1:
            estimates.append((float(te), det.estimate().f_hat))
    return DetectDemo(tr.t, v, edges, estimates, probe)
