"""Flat ``key = value`` scenario files.

Keys are dotted: ``coils.*``, ``receivers[i].*``, ``source.*``, ``hops[i].*``,
``sim.*``, ``controller.*`` and free-form ``meta.*``. Values are SI floats,
comma-separated lists, or bare words. ``#`` starts a comment. Groups that a
file leaves out are taken from the experiment parameters of the reference
setup (see :func:`default_scenario`); a group that appears replaces its default
wholesale.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

from ..circuit.elements import (
    CoupledCoilSet,
    FixedCapacitor,
    IdealCurrent,
    Receiver,
    RectifierBattery,
    RectifierRC,
    Resistor,
    SwitchedCapBranch,
    Topology,
    VoltageDriven,
    default_series_resistance,
)
from ..circuit.system import SimSystem, build_system
from ..errors import ParseError, ValidationError

BUNDLED = ("table1", "table2", "topology_single_transistor", "topology_back_to_back",
           "topology_diode_pair")

_INDEXED = re.compile(r"^(receivers|hops)\[(\d+)\]\.([a-z0-9_]+)$")
_MUTUAL = re.compile(r"^coils\.mutual\.([A-Za-z0-9_]+)\.([A-Za-z0-9_]+)$")


def _float(v):
    return float(v)


def _int(v):
    f = float(v)
    if f != int(f):
        raise ValueError(f"{v!r} is not an integer")
    return int(f)


def _floats(v):
    return tuple(float(p) for p in _split(v))


def _words(v):
    return tuple(_split(v))


def _bool(v):
    low = v.strip().lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"{v!r} is not a boolean")


def _split(v):
    parts = [p.strip() for p in v.split(",")]
    if any(not p for p in parts):
        raise ValueError("empty list element")
    return parts


def _choice(*options):
    def parse(v):
        if v not in options:
            raise ValueError(f"{v!r} not one of {', '.join(options)}")
        return v

    return parse


SCALAR_KEYS = {
    "name": str,
    "coils.names": _words,
    "coils.inductance": _floats,
    "coils.resistance": _floats,
    "source.type": _choice("ideal_current", "voltage_driven"),
    "source.amplitude": _float,
    "source.frequency": _float,
    "source.phase": _float,
    "source.internal_resistance": _float,
    "source.compensation": _float,
    "sim.divisor": _int,
    "sim.duration": _float,
    "sim.seed": _int,
    "sim.noise": _float,
    "sim.probes": _words,
    "sim.decimate": _int,
    "sim.tail_cycles": _int,
    "controller.sense_coil": str,
    "controller.window_cycles": _int,
    "controller.min_cycles": _int,
    "controller.settle_cycles": _int,
    "controller.measure_cycles": _int,
    "controller.hysteresis_fraction": _float,
    "controller.hop_threshold": _float,
    "controller.fine_tune": _bool,
    "controller.phase_source": _choice("sense_coil", "source"),
}

RECEIVER_KEYS = {
    "name": str,
    "coil": str,
    "compensation": _choice("fixed", "switched"),
    "c": _float,
    "c1": _float,
    "c2": _float,
    "topology": _choice(*(t.value for t in Topology)),
    "leak_conductance": _float,
    "on_resistance": _float,
    "load": _choice("resistor", "rectifier_rc", "rectifier_battery"),
    "load_r": _float,
    "load_c": _float,
    "load_v_bat": _float,
    "load_r_series": _float,
    "controller": _choice("none", "time_counting", "voltage_comparison"),
}

HOP_KEYS = {"t": _float, "frequency": _float, "amplitude": _float}


def schema_keys():
    """Every accepted key pattern, for documentation."""
    keys = list(SCALAR_KEYS) + ["coils.mutual.<coil>.<coil>", "meta.<anything>"]
    keys += [f"receivers[i].{k}" for k in RECEIVER_KEYS]
    keys += [f"hops[i].{k}" for k in HOP_KEYS]
    return keys


@dataclass(frozen=True)
class ReceiverSpec:
    name: str
    coil: str
    compensation: str = "fixed"
    c: Optional[float] = None
    c1: Optional[float] = None
    c2: Optional[float] = None
    topology: str = Topology.TRANSISTOR_DIODE_PAIR.value
    leak_conductance: float = 0.0
    on_resistance: float = 0.0
    load: str = "resistor"
    load_r: float = 25.0
    load_c: float = 0.0
    load_v_bat: float = 0.0
    load_r_series: float = 1.0
    controller: str = "none"

    def build(self):
        if self.compensation == "fixed":
            if self.c is None:
                raise ValidationError(f"receiver {self.name}: fixed compensation needs c")
            comp = FixedCapacitor(self.c)
        else:
            if self.c1 is None or self.c2 is None:
                raise ValidationError(f"receiver {self.name}: switched compensation needs c1 and c2")
            comp = SwitchedCapBranch(self.c1, self.c2, Topology(self.topology),
                                     self.leak_conductance, self.on_resistance)
        if self.load == "resistor":
            load = Resistor(self.load_r)
        elif self.load == "rectifier_rc":
            load = RectifierRC(self.load_r, self.load_c)
        else:
            load = RectifierBattery(self.load_v_bat, self.load_r_series)
        if self.controller != "none" and self.compensation != "switched":
            raise ValidationError(f"receiver {self.name}: a controller needs a switched branch")
        return Receiver(self.name, self.coil, comp, load)


@dataclass(frozen=True)
class SourceSpec:
    type: str = "ideal_current"
    amplitude: float = 1.0
    frequency: float = 85e3
    phase: float = 0.0
    internal_resistance: float = 1.0
    compensation: Optional[float] = None

    def build(self, frequency=None, amplitude=None):
        f = self.frequency if frequency is None else frequency
        a = self.amplitude if amplitude is None else amplitude
        if self.type == "ideal_current":
            return IdealCurrent(a, f, self.phase)
        return VoltageDriven(a, f, self.internal_resistance, self.compensation, self.phase)


@dataclass(frozen=True)
class SimSpec:
    divisor: int = 2000
    duration: Optional[float] = None
    seed: int = 0
    noise: float = 0.0
    probes: tuple = ()
    decimate: int = 20
    tail_cycles: int = 20


@dataclass(frozen=True)
class ControllerSpec:
    sense_coil: Optional[str] = None
    window_cycles: int = 10
    min_cycles: int = 2
    settle_cycles: int = 3
    measure_cycles: int = 5
    hysteresis_fraction: float = 0.02
    hop_threshold: float = 0.05
    fine_tune: bool = True
    # "source" skips detection and gates from the exact transmitter phase
    phase_source: str = "sense_coil"

    def kwargs(self):
        return dict(window_cycles=self.window_cycles, min_cycles=self.min_cycles,
                    settle_cycles=self.settle_cycles, measure_cycles=self.measure_cycles,
                    hysteresis_fraction=self.hysteresis_fraction,
                    hop_threshold=self.hop_threshold, fine_tune=self.fine_tune)


@dataclass(frozen=True)
class Scenario:
    name: str
    coil_names: tuple
    inductances: tuple
    resistances: Optional[tuple]
    mutuals: tuple  # ((a, b, M), ...)
    receivers: tuple
    source: SourceSpec
    hops: tuple  # ((t, f, amplitude), ...)
    sim: SimSpec = SimSpec()
    controller: ControllerSpec = ControllerSpec()
    meta: tuple = ()

    def coils(self):
        n = len(self.coil_names)
        M = np.zeros((n, n))
        for a, b, m in self.mutuals:
            i, j = self.coil_names.index(a), self.coil_names.index(b)
            M[i, j] = M[j, i] = m
        return CoupledCoilSet(self.coil_names, self.inductances, M, self.resistances)

    def build(self, frequency=None, amplitude=None) -> SimSystem:
        f0, a0 = self.hops[0][1], self.hops[0][2]
        src = self.source.build(f0 if frequency is None else frequency,
                                a0 if amplitude is None else amplitude)
        return build_system(self.coils(), [r.build() for r in self.receivers], src)

    @property
    def duration(self):
        if self.sim.duration is not None:
            return self.sim.duration
        t, f, _ = self.hops[-1]
        return t + 200.0 / f

    def receiver(self, name):
        for r in self.receivers:
            if r.name == name:
                return r
        raise ValidationError(f"unknown receiver {name!r}")

    @property
    def hacking(self):
        return [r for r in self.receivers if r.controller != "none"]

    def amplitude_at(self, f):
        """Source amplitude for drive frequency ``f``, interpolated across the hop list."""
        pts = sorted((hf, ha) for _, hf, ha in self.hops)
        fs = [p[0] for p in pts]
        amps = [p[1] for p in pts]
        return float(np.interp(f, fs, amps))

    def with_hops(self, hops, duration=None):
        return replace(self, hops=tuple(tuple(map(float, h)) for h in hops),
                       sim=replace(self.sim, duration=duration))


# ------------------------------------------------------------------ parsing
def parse_lines(text, source="<string>"):
    """Return ``{key: (raw_value, line_no)}`` or raise ParseError."""
    entries = {}
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split(" #", 1)[0].split("\t#", 1)[0].strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ParseError("expected 'key = value'", line=no)
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not key:
            raise ParseError("missing key", line=no)
        if not value:
            raise ParseError("missing value", line=no, key=key)
        if key in entries:
            raise ParseError(f"duplicate key (first on line {entries[key][1]})", line=no, key=key)
        entries[key] = (value, no)
    if not entries:
        raise ParseError(f"{source}: no keys found")
    return entries


def _convert(parser, value, no, key):
    try:
        return parser(value)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"bad value {value!r}: {exc}", line=no, key=key) from None


def _indexed(groups, no, key, fields):
    out = []
    for i in sorted(groups):
        out.append(groups[i])
    if sorted(groups) != list(range(len(groups))):
        raise ParseError(f"{key} indices must run 0..n-1 without gaps", line=no, key=key)
    return out


def scenario_from_entries(entries, base: Optional[Scenario] = None):
    base = base if base is not None else default_scenario()
    values, receivers, hops, mutuals, meta = {}, {}, {}, [], []
    first_line = {}
    for key, (value, no) in entries.items():
        if key in SCALAR_KEYS:
            values[key] = _convert(SCALAR_KEYS[key], value, no, key)
            continue
        if key.startswith("meta.") and len(key) > 5:
            meta.append((key[5:], value))
            continue
        m = _MUTUAL.match(key)
        if m:
            mutuals.append((m.group(1), m.group(2), _convert(_float, value, no, key), no))
            continue
        m = _INDEXED.match(key)
        if m:
            group, idx, fld = m.group(1), int(m.group(2)), m.group(3)
            table = RECEIVER_KEYS if group == "receivers" else HOP_KEYS
            if fld not in table:
                raise ParseError("unknown key", line=no, key=key)
            target = receivers if group == "receivers" else hops
            target.setdefault(idx, {})[fld] = _convert(table[fld], value, no, key)
            first_line.setdefault(group, no)
            continue
        raise ParseError("unknown key", line=no, key=key)

    # coils group
    coil_keys = [k for k in values if k.startswith("coils.")]
    if coil_keys or mutuals:
        try:
            names = values["coils.names"]
            induct = values["coils.inductance"]
        except KeyError as exc:
            raise ParseError(f"coils group needs {exc.args[0]}", key=exc.args[0]) from None
        if len(induct) != len(names):
            raise ValidationError("coils.inductance needs one value per coil name")
        res = values.get("coils.resistance")
        for a, b, _, no in mutuals:
            for c in (a, b):
                if c not in names:
                    raise ParseError(f"unknown coil {c!r}", line=no, key=f"coils.mutual.{a}.{b}")
            if a == b:
                raise ParseError("self mutual", line=no, key=f"coils.mutual.{a}.{b}")
        coil_names, inductances, resistances = tuple(names), tuple(induct), res
        mut = tuple((a, b, m) for a, b, m, _ in mutuals)
    else:
        coil_names, inductances = base.coil_names, base.inductances
        resistances, mut = base.resistances, base.mutuals

    if receivers:
        recs = []
        for d in _indexed(receivers, first_line["receivers"], "receivers", RECEIVER_KEYS):
            for req in ("name", "coil"):
                if req not in d:
                    raise ParseError(f"receiver entry missing {req!r}", key=f"receivers[].{req}")
            recs.append(ReceiverSpec(**d))
        recs = tuple(recs)
    else:
        recs = base.receivers

    src_vals = {k[7:]: v for k, v in values.items() if k.startswith("source.")}
    source = SourceSpec(**src_vals) if src_vals else base.source

    if hops:
        hop_list = []
        for d in _indexed(hops, first_line["hops"], "hops", HOP_KEYS):
            if set(d) != set(HOP_KEYS):
                raise ParseError("hop entry needs t, frequency and amplitude", key="hops[]")
            hop_list.append((d["t"], d["frequency"], d["amplitude"]))
        hop_t = tuple(hop_list)
    elif src_vals:
        hop_t = ((0.0, source.frequency, source.amplitude),)
    else:
        hop_t = base.hops

    sim_vals = {k[4:]: v for k, v in values.items() if k.startswith("sim.")}
    sim = replace(base.sim, **sim_vals) if sim_vals else base.sim
    ctl_vals = {k[11:]: v for k, v in values.items() if k.startswith("controller.")}
    ctl = replace(base.controller, **ctl_vals) if ctl_vals else base.controller

    sc = Scenario(
        name=values.get("name", base.name),
        coil_names=coil_names,
        inductances=inductances,
        resistances=resistances,
        mutuals=mut,
        receivers=recs,
        source=source,
        hops=hop_t,
        sim=sim,
        controller=ctl,
        meta=tuple(meta),
    )
    validate(sc)
    return sc


def validate(sc: Scenario):
    """Check every cross-module invariant; raises a ValidationError subclass."""
    system = sc.build()  # coil, receiver, load and source invariants
    hops = sc.hops
    if not hops:
        raise ValidationError("at least one hop (or a source frequency) is required")
    if hops[0][0] != 0.0:
        raise ValidationError("the first hop must start at t = 0")
    for (t0, f0, a0), (t1, _, _) in zip(hops, hops[1:]):
        if not t1 > t0:
            raise ValidationError("hop times must be strictly increasing")
    for _, f, a in hops:
        if not f > 0 or a < 0 or not math.isfinite(f):
            raise ValidationError("hop frequency must be positive and amplitude >= 0")
    if sc.sim.divisor < 8:
        raise ValidationError("sim.divisor must be >= 8")
    if sc.sim.decimate < 1:
        raise ValidationError("sim.decimate must be >= 1")
    if sc.sim.noise < 0:
        raise ValidationError("sim.noise must be >= 0")
    if sc.sim.duration is not None and sc.sim.duration < 0:
        raise ValidationError("sim.duration must be >= 0")
    if sc.sim.duration is not None and sc.sim.duration <= hops[-1][0] and sc.sim.duration > 0:
        raise ValidationError("sim.duration must extend past the last hop")
    names = system.probe_names()
    for p in sc.sim.probes:
        if p not in names:
            raise ValidationError(f"unknown probe {p!r}; available: {', '.join(names)}")
    if sc.hacking and sc.controller.phase_source == "sense_coil":
        sense = sc.controller.sense_coil
        if sense is None:
            if not system.sense_coils:
                raise ValidationError("a controller needs an open sense coil")
        elif sense not in sc.coil_names:
            raise ValidationError(f"unknown sense coil {sense!r}")
        elif system.coils.index(sense) not in system.sense_coils:
            raise ValidationError(f"sense coil {sense!r} carries a receiver")
    return sc


def loads_scenario(text, source="<string>") -> Scenario:
    return scenario_from_entries(parse_lines(text, source))


def load_scenario(path) -> Scenario:
    """Parse and validate a scenario file; bundled names (e.g. ``table2``) also work."""
    p = Path(path)
    if not p.exists():
        name = str(path)
        if name.endswith(".scenario"):
            name = name[: -len(".scenario")]
        if name in BUNDLED:
            return loads_scenario(bundled_text(name), f"{name}.scenario")
        raise FileNotFoundError(f"scenario file not found: {path}")
    return loads_scenario(p.read_text(), str(p))


def bundled_text(name):
    return resources.files("wptdecrypt.harness").joinpath("scenarios", f"{name}.scenario").read_text()


def bundled_path(name):
    return resources.files("wptdecrypt.harness").joinpath("scenarios", f"{name}.scenario")


def default_scenario() -> Scenario:
    """Experiment setup used to fill groups a scenario file leaves out."""
    return _DEFAULT


def _reference_setup():
    names = ("T", "R", "R79", "R161", "A")
    induct = (150e-6, 80e-6, 80e-6, 80e-6, 10e-6)
    mut = (("T", "R", 15e-6), ("T", "R79", 15e-6), ("T", "R161", 15e-6), ("T", "A", 3e-6),
           ("R", "A", 2e-6))
    recs = (
        ReceiverSpec("R", "R", "switched", c1=10e-9, c2=44e-9, controller="time_counting"),
        ReceiverSpec("R79", "R79", "fixed", c=1.0 / ((2 * math.pi * 79e3) ** 2 * 80e-6)),
        ReceiverSpec("R161", "R161", "fixed", c=1.0 / ((2 * math.pi * 161e3) ** 2 * 80e-6)),
    )
    src = SourceSpec("ideal_current", 3.4 * math.sqrt(2), 79e3)
    hops = ((0.0, 79e3, 3.4 * math.sqrt(2)),)
    return Scenario("reference", names, induct, None, mut, recs, src, hops)


_DEFAULT = _reference_setup()
