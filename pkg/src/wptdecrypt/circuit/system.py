"""Assembly of the piecewise-linear state-space model.

Every conduction mode of the network is linear. The model is kept in the
descriptor form ``E x' = A x + B w + C^T mu`` where ``E`` holds inductances
and capacitances, ``w = [I_T, dI_T/dt, V_T, 1]`` are the external inputs and
``C x = 0`` are the constraints imposed by ideal conducting switches or
blocking rectifier bridges (``mu`` are the constraint forces: switch current
or bridge voltage). Each mode is reduced onto the null space ``N`` of ``C``;
entering a mode applies the ``E``-orthogonal projection onto that subspace,
which conserves charge on merged capacitors and flux in coupled coils.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..errors import DimensionMismatch, StepTooLarge, ValidationError
from .elements import (
    CoupledCoilSet,
    FixedCapacitor,
    IdealCurrent,
    RectifierBattery,
    RectifierRC,
    Receiver,
    Resistor,
    SwitchedCapBranch,
    VoltageDriven,
)

# input vector layout
W_PHI, W_DPHI, W_V, W_ONE = range(4)
NW = 4

# guard actions
SWITCH, BRIDGE = 0, 1

# trapezoidal steps with |h * lambda| above this are rejected
MAX_H_LAMBDA = 4.0


@dataclass(frozen=True)
class SwitchMode:
    closed: bool
    pos: bool
    neg: bool


@dataclass(frozen=True)
class Mode:
    switches: tuple  # SwitchMode per switched receiver
    bridges: tuple  # -1, 0, +1 per rectified receiver


@dataclass
class Element:
    """A dissipative element: power = coef(mode) * (a . x)^2."""

    name: str
    receiver: int  # -1 for the transmitter
    category: str  # "coil", "load", "switch", "source"
    a: np.ndarray


class ModeData:
    """Matrices of one conduction mode (built lazily, cached by the system)."""

    def __init__(self, system, mode):
        self.mode = mode
        n = system.n_states
        E = system.E
        A = system.A0.copy()
        B = system.B0.copy()
        rows = []  # constraint rows
        self.constraint_owner = []
        coefs = np.array([el_coef for el_coef in system.base_coefs])
        for j, sm in enumerate(mode.switches):
            r = system.switch_rx[j]
            br = system.receivers[r].compensation
            v1, v2 = system.ix_v1[r], system.ix_v2[r]
            g = 0.0
            if sm.closed:
                if br.on_resistance > 0:
                    g = 1.0 / br.on_resistance
                else:
                    c = np.zeros(n)
                    c[v1], c[v2] = 1.0, -1.0
                    rows.append(c)
                    self.constraint_owner.append((SWITCH, j))
            if g:
                A[v1, v1] -= g
                A[v1, v2] += g
                A[v2, v2] -= g
                A[v2, v1] += g
                coefs[system.el_switch[j]] += g
        for j, s in enumerate(mode.bridges):
            r = system.bridge_rx[j]
            k = system.ix_i[r]
            load = system.receivers[r].load
            if s == 0:
                c = np.zeros(n)
                c[k] = 1.0
                rows.append(c)
                self.constraint_owner.append((BRIDGE, j))
            elif isinstance(load, RectifierRC):
                vl = system.ix_vl[r]
                A[k, vl] = -s
                A[vl, k] = s
            else:  # battery
                A[k, k] -= load.r_series
                B[k, W_ONE] = -s * load.v_bat
                coefs[system.el_load[r]] = load.r_series
        self.A, self.B, self.E = A, B, E
        self.coefs = coefs
        if rows:
            C = np.array(rows)
            _, sv, vt = np.linalg.svd(C)
            rank = int(np.sum(sv > 1e-12 * sv[0]))
            N = vt[rank:].T
        else:
            C = np.zeros((0, n))
            N = np.eye(n)
        self.C, self.N = C, N
        M = N.T @ E @ N
        F = N.T @ A @ N
        self.M, self.F = M, F
        Minv = np.linalg.inv(M)
        self.Qd = N @ Minv @ N.T
        self.Pe = self.Qd @ E
        # derivative map x' = Dx x + Dw w
        self.Dx = self.Qd @ A
        self.Dw = self.Qd @ B
        if rows:
            G = np.linalg.solve(C @ C.T, C @ (E @ self.Qd - np.eye(n)))
            self.Lx = G @ A
            self.Lw = G @ B
        else:
            self.Lx = np.zeros((0, n))
            self.Lw = np.zeros((0, NW))
        if F.size:
            lam = np.linalg.eigvals(np.linalg.solve(M, F))
            self.max_rate = float(np.max(np.abs(lam))) if lam.size else 0.0
        else:
            self.max_rate = 0.0
        self._build_guards(system)
        self._steps = {}

    def _build_guards(self, system):
        n = system.n_states
        gx, gw, tol, act = [], [], [], []

        def add(x_row, w_row, t, action):
            gx.append(x_row)
            gw.append(w_row)
            tol.append(t)
            act.append(action)

        owner = {o: i for i, o in enumerate(self.constraint_owner)}
        for j, sm in enumerate(self.mode.switches):
            r = system.switch_rx[j]
            br = system.receivers[r].compensation
            v1, v2 = system.ix_v1[r], system.ix_v2[r]
            dv = np.zeros(n)
            dv[v1], dv[v2] = 1.0, -1.0
            if sm.closed:
                if br.on_resistance > 0:
                    ix, iw = dv / br.on_resistance, np.zeros(NW)
                else:
                    c = owner[(SWITCH, j)]
                    ix, iw = -self.Lx[c], -self.Lw[c]
                if not sm.neg:
                    add(ix, iw, system.tol_i, (SWITCH, j, False))
                if not sm.pos:
                    add(-ix, -iw, system.tol_i, (SWITCH, j, False))
            else:
                if sm.pos:
                    add(-dv, np.zeros(NW), system.tol_v, (SWITCH, j, True))
                if sm.neg:
                    add(dv, np.zeros(NW), system.tol_v, (SWITCH, j, True))
        for j, s in enumerate(self.mode.bridges):
            r = system.bridge_rx[j]
            k = system.ix_i[r]
            load = system.receivers[r].load
            if s == 0:
                c = owner[(BRIDGE, j)]
                # bridge voltage v_b = -mu
                vb_x, vb_w = -self.Lx[c], -self.Lw[c]
                out_x, out_w = np.zeros(n), np.zeros(NW)
                if isinstance(load, RectifierRC):
                    out_x[system.ix_vl[r]] = 1.0
                else:
                    out_w[W_ONE] = load.v_bat
                add(out_x - vb_x, out_w - vb_w, system.tol_v, (BRIDGE, j, 1))
                add(out_x + vb_x, out_w + vb_w, system.tol_v, (BRIDGE, j, -1))
            else:
                e = np.zeros(n)
                e[k] = float(s)
                add(e, np.zeros(NW), system.tol_i, (BRIDGE, j, 0))
        self.Gx = np.array(gx, dtype=float).reshape(len(gx), n)
        self.Gw = np.array(gw, dtype=float).reshape(len(gw), NW)
        self.gtol = np.array(tol, dtype=float)
        self.gaction = act

    def step_matrices(self, h, check=True, cache=True):
        """Trapezoidal one-step map ``x1 = Phi x0 + Gf dphi + Gv (v0 + v1) + Gc``.

        Fractional event steps pass ``cache=False`` so they do not crowd out
        the base-step entries.
        """
        cached = self._steps.get(h)
        if cached is not None:
            return cached
        if check and h * self.max_rate > MAX_H_LAMBDA:
            raise StepTooLarge(
                f"step {h:.3g} s under-resolves a mode with rate {self.max_rate:.3g} 1/s"
            )
        N, E, A, B = self.N, self.E, self.A, self.B
        S = self.M - 0.5 * h * self.F
        rhs = np.column_stack(
            [N.T @ (E + 0.5 * h * A) @ self.Pe, N.T @ B[:, W_DPHI], 0.5 * h * (N.T @ B[:, W_V]),
             h * (N.T @ B[:, W_ONE])]
        )
        sol = N @ np.linalg.solve(S, rhs)
        n = E.shape[0]
        Phi = np.ascontiguousarray(sol[:, :n])
        out = (Phi, sol[:, n].copy(), sol[:, n + 1].copy(), sol[:, n + 2].copy())
        if cache and len(self._steps) < 64:
            self._steps[h] = out
        return out


class SimSystem:
    """Validated, immutable network description plus per-mode matrix cache."""

    def __init__(self, coils: CoupledCoilSet, receivers, source, tol_i=1e-9, tol_v=1e-7):
        self.coils = coils
        self.source = source
        self.tol_i = tol_i
        self.tol_v = tol_v
        receivers = tuple(receivers)
        self.receivers = receivers
        if not isinstance(source, (IdealCurrent, VoltageDriven)):
            raise ValidationError(f"unsupported source {source!r}")
        names = [r.name for r in receivers]
        if len(set(names)) != len(names):
            raise ValidationError("receiver names must be unique")
        self.rx_coil = []
        for r in receivers:
            if not isinstance(r, Receiver):
                raise ValidationError(f"expected Receiver, got {r!r}")
            c = coils.index(r.coil)
            if c == 0:
                raise DimensionMismatch("coil 0 is the transmitter and cannot be a receiver")
            self.rx_coil.append(c)
        if len(set(self.rx_coil)) != len(self.rx_coil):
            raise DimensionMismatch("one compensation branch and load per receiver coil")
        self.voltage_driven = isinstance(source, VoltageDriven)
        self.sense_coils = [
            c for c in range(1, coils.n) if c not in self.rx_coil
        ]
        self._layout()
        self._modes = {}

    # ------------------------------------------------------------------ layout
    def _layout(self):
        coils = self.coils
        names, caps = [], []
        self.ix_i, self.ix_vc, self.ix_v1, self.ix_v2, self.ix_vl = {}, {}, {}, {}, {}
        self.current_coils = []  # coil index per current state, in state order
        tx = coils.names[0]
        self.ix_tx = None
        self.ix_tx_c = None
        if self.voltage_driven:
            self.ix_tx = len(names)
            names.append(f"I_{tx}")
            caps.append(None)
            self.current_coils.append(0)
        for r, rx in enumerate(self.receivers):
            self.ix_i[r] = len(names)
            names.append(f"I_{rx.name}")
            caps.append(None)
            self.current_coils.append(self.rx_coil[r])
        if self.voltage_driven and self.source.compensation is not None:
            self.ix_tx_c = len(names)
            names.append(f"VC_{tx}")
            caps.append(self.source.compensation)
        for r, rx in enumerate(self.receivers):
            comp = rx.compensation
            if isinstance(comp, FixedCapacitor):
                self.ix_vc[r] = len(names)
                names.append(f"VC_{rx.name}")
                caps.append(comp.c)
            else:
                self.ix_v1[r] = len(names)
                names.append(f"VC1_{rx.name}")
                caps.append(comp.c1)
                self.ix_v2[r] = len(names)
                names.append(f"VC2_{rx.name}")
                caps.append(comp.c2)
            if isinstance(rx.load, RectifierRC) and rx.load.c > 0:
                self.ix_vl[r] = len(names)
                names.append(f"VL_{rx.name}")
                caps.append(rx.load.c)
        n = len(names)
        self.state_names = tuple(names)
        self.n_states = n
        self.switch_rx = [r for r, rx in enumerate(self.receivers) if rx.switched]
        self.bridge_rx = [r for r, rx in enumerate(self.receivers) if rx.rectified]

        Lfull = coils.matrix()
        E = np.zeros((n, n))
        cur = [i for i, c in enumerate(caps) if c is None]
        for a, ia in enumerate(cur):
            for b, ib in enumerate(cur):
                E[ia, ib] = Lfull[self.current_coils[a], self.current_coils[b]]
        for i, c in enumerate(caps):
            if c is not None:
                E[i, i] = c
        self.E = E
        self.Lfull = Lfull

        A = np.zeros((n, n))
        B = np.zeros((n, NW))
        elements, coefs = [], []
        self.el_switch, self.el_load = {}, {}

        def element(name, rx, cat, a_vec, coef):
            elements.append(Element(name, rx, cat, a_vec))
            coefs.append(coef)
            return len(elements) - 1

        def unit(i):
            e = np.zeros(n)
            e[i] = 1.0
            return e

        if self.voltage_driven:
            k = self.ix_tx
            rt = coils.series_resistances[0]
            A[k, k] -= rt + self.source.internal_resistance
            element(f"coil_{tx}", -1, "coil", unit(k), rt)
            element("source_internal", -1, "source", unit(k), self.source.internal_resistance)
            B[k, W_V] = 1.0
            if self.ix_tx_c is not None:
                A[k, self.ix_tx_c] = -1.0
                A[self.ix_tx_c, k] = 1.0
        for r, rx in enumerate(self.receivers):
            k = self.ix_i[r]
            c = self.rx_coil[r]
            rc = coils.series_resistances[c]
            A[k, k] -= rc
            element(f"coil_{rx.name}", r, "coil", unit(k), rc)
            if not self.voltage_driven:
                B[k, W_DPHI] = -Lfull[c, 0]
            if r in self.ix_vc:
                A[k, self.ix_vc[r]] = -1.0
                A[self.ix_vc[r], k] = 1.0
            else:
                v1, v2 = self.ix_v1[r], self.ix_v2[r]
                A[k, v1] = -1.0
                A[v1, k] = 1.0
                gl = rx.compensation.leak_conductance
                dv = unit(v1) - unit(v2)
                if gl:
                    A[v1, v1] -= gl
                    A[v1, v2] += gl
                    A[v2, v2] -= gl
                    A[v2, v1] += gl
                self.el_switch[r] = element(f"switch_{rx.name}", r, "switch", dv, gl)
            load = rx.load
            if isinstance(load, Resistor) or (isinstance(load, RectifierRC) and load.c == 0):
                A[k, k] -= load.r
                self.el_load[r] = element(f"load_{rx.name}", r, "load", unit(k), load.r)
            elif isinstance(load, RectifierRC):
                vl = self.ix_vl[r]
                A[vl, vl] -= 1.0 / load.r
                self.el_load[r] = element(f"load_{rx.name}", r, "load", unit(vl), 1.0 / load.r)
            else:
                self.el_load[r] = element(f"load_{rx.name}", r, "load", unit(k), 0.0)
        # switch elements are keyed by switch order in ModeData
        self.el_switch = [self.el_switch[r] for r in self.switch_rx]
        self.A0, self.B0 = A, B
        self.elements = elements
        self.base_coefs = np.array(coefs, dtype=float)
        self.diss_a = np.array([el.a for el in elements], dtype=float).reshape(len(elements), n)
        # receiver owning each state row (-1 transmitter)
        owner = np.full(n, -1, dtype=int)
        for r in range(len(self.receivers)):
            for d in (self.ix_i, self.ix_vc, self.ix_v1, self.ix_v2, self.ix_vl):
                if r in d:
                    owner[d[r]] = r
        self.row_owner = owner

    # ------------------------------------------------------------------ modes
    def mode_data(self, mode: Mode) -> ModeData:
        md = self._modes.get(mode)
        if md is None:
            md = ModeData(self, mode)
            self._modes[mode] = md
        return md

    def initial_mode(self, gates=None):
        gates = gates or self.initial_gates()
        sw = []
        for j, r in enumerate(self.switch_rx):
            topo = self.receivers[r].compensation.topology
            pos, neg = topo.allowed(gates[j])
            sw.append(SwitchMode(pos and neg, pos, neg))
        return Mode(tuple(sw), tuple(0 for _ in self.bridge_rx))

    def initial_gates(self):
        return tuple(
            {d: False for d in self.receivers[r].compensation.topology.devices}
            for r in self.switch_rx
        )

    def switch_index(self, receiver):
        """Switch slot of a receiver given by name or index."""
        r = self.receiver_index(receiver)
        try:
            return self.switch_rx.index(r)
        except ValueError:
            raise ValidationError(f"receiver {receiver!r} has no switched branch") from None

    def receiver_index(self, receiver):
        if isinstance(receiver, str):
            for r, rx in enumerate(self.receivers):
                if rx.name == receiver:
                    return r
            raise ValidationError(f"unknown receiver {receiver!r}")
        return int(receiver)

    # ------------------------------------------------------------------ probes
    def probe_names(self):
        names = [f"I_{self.coils.names[0]}"]
        for r, rx in enumerate(self.receivers):
            nm = rx.name
            names.append(f"I_{nm}")
            if r in self.ix_vc:
                names.append(f"VC_{nm}")
            else:
                names += [f"VC1_{nm}", f"VC2_{nm}", f"VSW_{nm}", f"ISW_{nm}", f"IC1_{nm}"]
            names += [f"VL_{nm}", f"IL_{nm}", f"VCOIL_{nm}", f"EMF_{nm}"]
        for a in self.sense_coils:
            names.append(f"V_{self.coils.names[a]}")
        return tuple(names)

    def probe_rows(self, md: ModeData, name):
        """Row ``p`` such that probe = p . [x, w]."""
        n = self.n_states
        row = np.zeros(n + NW)

        def deriv(i):
            return np.concatenate([md.Dx[i], md.Dw[i]])

        def coil_voltage(c, exclude_self):
            acc = np.zeros(n + NW)
            for s, cc in enumerate(self.current_coils):
                if exclude_self and cc == c:
                    continue
                idx = self._current_state_index(s)
                acc += self.Lfull[c, cc] * deriv(idx)
            if not self.voltage_driven and not (exclude_self and c == 0):
                acc[n + W_DPHI] += self.Lfull[c, 0]
            return acc

        tx = self.coils.names[0]
        if name == f"I_{tx}":
            if self.voltage_driven:
                row[self.ix_tx] = 1.0
            else:
                row[n + W_PHI] = 1.0
            return row
        for a in self.sense_coils:
            if name == f"V_{self.coils.names[a]}":
                return coil_voltage(a, False)
        prefix, _, rx_name = name.partition("_")
        r = self.receiver_index(rx_name)
        k = self.ix_i[r]
        rx = self.receivers[r]
        if prefix == "I":
            row[k] = 1.0
        elif prefix == "VC" and r in self.ix_vc:
            row[self.ix_vc[r]] = 1.0
        elif prefix == "VC1" and r in self.ix_v1:
            row[self.ix_v1[r]] = 1.0
        elif prefix == "VC2" and r in self.ix_v2:
            row[self.ix_v2[r]] = 1.0
        elif prefix == "VSW" and r in self.ix_v1:
            row[self.ix_v1[r]] = 1.0
            row[self.ix_v2[r]] = -1.0
        elif prefix == "ISW" and r in self.ix_v2:
            row = rx.compensation.c2 * deriv(self.ix_v2[r])
        elif prefix == "IC1" and r in self.ix_v1:
            row = rx.compensation.c1 * deriv(self.ix_v1[r])
        elif prefix in ("VL", "IL"):
            load = rx.load
            s = self._bridge_sign(md, r)
            if isinstance(load, Resistor) or (isinstance(load, RectifierRC) and load.c == 0):
                if prefix == "VL":
                    row[k] = load.r
                elif isinstance(load, Resistor):
                    row[k] = 1.0
                else:
                    # bridge output current |i|: sign not tracked without a bridge state
                    row[k] = 1.0
            elif isinstance(load, RectifierRC):
                if prefix == "VL":
                    row[self.ix_vl[r]] = 1.0
                else:
                    row[k] = float(s)
            else:
                if prefix == "VL":
                    row[n + W_ONE] = load.v_bat
                    row[k] = s * load.r_series
                else:
                    row[k] = float(s)
        elif prefix == "VCOIL":
            return coil_voltage(self.rx_coil[r], False)
        elif prefix == "EMF":
            return coil_voltage(self.rx_coil[r], True)
        else:
            raise ValidationError(f"unknown probe {name!r}")
        return row

    def _current_state_index(self, s):
        # current states are laid out first, in current_coils order
        return s

    def _bridge_sign(self, md, r):
        if r in self.bridge_rx:
            return md.mode.bridges[self.bridge_rx.index(r)]
        return 1

    def probe_matrix(self, md: ModeData, names):
        key = ("probes", tuple(names))
        cache = md.__dict__.setdefault("_probe_cache", {})
        P = cache.get(key)
        if P is None:
            P = np.array([self.probe_rows(md, nm) for nm in names]).reshape(len(names), -1)
            cache[key] = P
        return P


def build_system(coils, receivers, source, tol_i=1e-9, tol_v=1e-7) -> SimSystem:
    """Validate and assemble a network.

    ``receivers`` is a list of :class:`Receiver`; every coil other than the
    transmitter (coil 0) that has no receiver is treated as an open sense coil.
    """
    if not isinstance(coils, CoupledCoilSet):
        raise ValidationError("coils must be a CoupledCoilSet")
    return SimSystem(coils, receivers, source, tol_i=tol_i, tol_v=tol_v)


def receiver_impedance(system: SimSystem, r, f, capacitance: Optional[float] = None):
    """Fundamental-frequency series impedance of receiver ``r`` at ``f``.

    For a switched branch ``capacitance`` gives the equivalent capacitance in
    use (defaults to c1, the gate-off value).
    """
    rx = system.receivers[r]
    w = 2 * math.pi * f
    c = system.rx_coil[r]
    z = system.coils.series_resistances[c] + 1j * w * system.coils.inductances[c]
    comp = rx.compensation
    if isinstance(comp, FixedCapacitor):
        cap = comp.c
    else:
        cap = comp.c1 if capacitance is None else capacitance
    z += 1.0 / (1j * w * cap)
    load = rx.load
    if isinstance(load, Resistor):
        z += load.r
    elif isinstance(load, RectifierRC):
        # fundamental-equivalent resistance of a bridge with a stiff output capacitor
        z += load.r if load.c == 0 else 8.0 / math.pi**2 * load.r
    else:
        z += load.r_series
    return z


def reflected_load_scaling(system: SimSystem, f=None, capacitances=None, closed=None):
    """Transmitter-current scaling caused by the reflected receiver impedances.

    Returns ``|Z_T| / |Z_T + sum (w M_i)^2 / Z_i|`` where ``Z_T`` is the
    transmitter's own series impedance. Receivers listed in ``closed`` (all by
    default) contribute; an ideal current source always returns 1.
    """
    if not system.voltage_driven:
        return 1.0
    src = system.source
    f = src.frequency if f is None else f
    w = 2 * math.pi * f
    zt = (
        system.coils.series_resistances[0]
        + src.internal_resistance
        + 1j * w * system.coils.inductances[0]
    )
    if src.compensation is not None:
        zt += 1.0 / (1j * w * src.compensation)
    capacitances = capacitances or {}
    rx_set = range(len(system.receivers)) if closed is None else closed
    zr = 0.0
    for r in rx_set:
        m = system.Lfull[0, system.rx_coil[r]]
        z = receiver_impedance(system, r, f, capacitances.get(r))
        zr += (w * m) ** 2 / z
    return abs(zt) / abs(zt + zr)
