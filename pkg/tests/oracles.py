"""Independent frequency-domain reference for the periodic steady state.

The tube is cut into thin uniform slices, each a lossy transmission line with
series impedance ``R + j w rho/A`` and shunt admittance ``G + j w A/K``.  The
chain matrices are multiplied from inlet to outlet and closed with the
radiation load, which gives the outlet pressure per unit inlet volume velocity
for every harmonic.  Nothing here shares code with the time-domain solver.
"""

import numpy as np

from tubeid.physics import G_at, R_at, radiation_params


def outlet_transfer(omega, profile, consts, loss, slices=2000):
    """Complex p(l) / U(0) for each angular frequency in ``omega``."""
    omega = np.atleast_1d(np.asarray(omega, dtype=float))
    edges = np.linspace(0.0, profile.l, slices + 1)
    mids = 0.5 * (edges[1:] + edges[:-1])
    r = profile.radius_at(mids)
    A = np.pi * r**2
    L = np.diff(edges)
    G = G_at(r, loss.G_c) if loss is not None else np.zeros_like(r)
    R = R_at(r, loss.R_c) if loss is not None else np.zeros_like(r)
    rad = radiation_params(profile.area_at(profile.l), consts)
    out = np.empty(omega.size, dtype=complex)
    for i, w in enumerate(omega):
        if w == 0:
            out[i] = 0.0  # the radiation load is a short circuit at DC
            continue
        Z = R + 1j * w * consts.rho / A
        Y = G + 1j * w * A / consts.K
        gam = np.sqrt(Z * Y)
        Zc = np.sqrt(Z / Y)
        M = np.eye(2, dtype=complex)
        for g, zc, dl in zip(gam, Zc, L):
            ch, sh = np.cosh(g * dl), np.sinh(g * dl)
            M = M @ np.array([[ch, zc * sh], [sh / zc, ch]])
        ZL = rad.R_r * 1j * w * rad.L_r / (rad.R_r + 1j * w * rad.L_r)
        out[i] = ZL / (M[1, 0] * ZL + M[1, 1])
    return out


def predicted_outlet_pressure(inlet_flow, f0, profile, consts, loss, harmonics, slices=2000):
    """Outlet pressure samples implied by a periodic inlet flow, up to ``harmonics``."""
    u = np.asarray(inlet_flow, dtype=float)
    spec = np.fft.rfft(u)
    k = np.arange(spec.size)
    keep = (k >= 1) & (k <= harmonics)
    H = np.zeros(spec.size, dtype=complex)
    H[keep] = outlet_transfer(2 * np.pi * f0 * k[keep], profile, consts, loss, slices)
    return np.fft.irfft(spec * H, n=u.size)
