"""Compiled inner loop: fixed-mode trapezoidal steps on the base grid.

The loop stops *before* the first step whose end point violates a conduction
guard; the caller then resolves that step with event location.
"""

import math

import numpy as np
from numba import njit

CURRENT_SOURCE = 0
VOLTAGE_SOURCE = 1


@njit(cache=True)
def run_steps(x, k0, nsteps, h, kind, amp, omega, phase,
              Phi, Gf, Gv, Gc, Gx, Gw, gtol,
              B, diss_a, diss_c, out, inj, diss):
    n = x.shape[0]
    ng = Gx.shape[0]
    ne = diss_a.shape[0]
    x1 = np.empty(n)
    xb = np.empty(n)
    for s in range(nsteps):
        a0 = omega * ((k0 + s) * h) + phase
        a1 = omega * ((k0 + s + 1) * h) + phase
        if kind == CURRENT_SOURCE:
            phi0 = amp * math.sin(a0)
            phi1 = amp * math.sin(a1)
            dphi1 = amp * omega * math.cos(a1)
            v0 = 0.0
            v1 = 0.0
        else:
            phi0 = 0.0
            phi1 = 0.0
            dphi1 = 0.0
            v0 = amp * math.sin(a0)
            v1 = amp * math.sin(a1)
        dphi = phi1 - phi0
        vs = v0 + v1
        for i in range(n):
            acc = Gf[i] * dphi + Gv[i] * vs + Gc[i]
            for j in range(n):
                acc += Phi[i, j] * x[j]
            x1[i] = acc
        for g in range(ng):
            val = Gw[g, 0] * phi1 + Gw[g, 1] * dphi1 + Gw[g, 2] * v1 + Gw[g, 3]
            for j in range(n):
                val += Gx[g, j] * x1[j]
            if val < -gtol[g]:
                return s
        for i in range(n):
            xb[i] = 0.5 * (x[i] + x1[i])
            inj[i, 0] += xb[i] * B[i, 1] * dphi
            inj[i, 1] += xb[i] * B[i, 2] * 0.5 * h * vs
            inj[i, 2] += xb[i] * B[i, 3] * h
        for e in range(ne):
            if diss_c[e] != 0.0:
                d = 0.0
                for j in range(n):
                    d += diss_a[e, j] * xb[j]
                diss[e] += h * diss_c[e] * d * d
        for i in range(n):
            x[i] = x1[i]
            out[s, i] = x1[i]
    return nsteps
