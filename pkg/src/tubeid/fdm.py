"""Leapfrog (CTCS) reference solver for the lossy variable-area tube.

Both ``p`` and ``U`` live on every node of a uniform grid.  The lossy terms
``G p`` and ``R U`` are averaged over the levels ``n-1`` and ``n+1`` and
solved for explicitly, which removes the growing computational mode that
plain leapfrog damping would excite.  The inlet node is driven by a
prescribed volume velocity; the outlet node carries the radiation load
``p = R_r (U - U_r)``, ``L_r dU_r/dt = p``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .excitation import PeriodicWaveform
from .geometry import TubeProfile
from .physics import LossConstants, PhysicalConstants, radiation_params

log = logging.getLogger(__name__)


_RAW_NU = 0.53


class NumericalInstability(RuntimeError):
    pass


class SteadyStateNotReached(RuntimeError):
    def __init__(self, residual: float, periods: int, solution: "FdmSolution"):
        super().__init__(
            f"no steady state after {periods} periods (residual {residual:.3e})"
        )
        self.residual = residual
        self.periods = periods
        self.solution = solution


@dataclass(frozen=True)
class FdmConfig:
    dx: float = 1e-3
    dt: float = 0.5e-6
    periods_max: int = 200
    steady_tol: float = 1e-3
    asselin: float = 0.01  # Robert-Asselin filter strength, 0 disables

    def __post_init__(self):
        if not (self.dx > 0 and self.dt > 0):
            raise ValueError("dx and dt must be positive")
        if self.periods_max < 2:
            raise ValueError("periods_max must be at least 2")
        if self.steady_tol < 0:
            raise ValueError("steady_tol must be non-negative")
        if not 0 <= self.asselin < 0.5:
            raise ValueError("asselin filter strength must be in [0, 0.5)")

    def cells(self, l: float) -> int:
        n = l / self.dx
        if abs(n - round(n)) > 1e-6 * n:
            raise ValueError(f"dx={self.dx} does not divide the tube length {l}")
        return int(round(n))

    def steps_per_period(self, T: float) -> int:
        return int(round(T / self.dt))

    def adjusted_dt(self, T: float) -> float:
        """Time step nudged so that one period is an integer number of steps."""
        return T / self.steps_per_period(T)


@dataclass
class FdmState:
    n: int  # index of the current time level
    p: np.ndarray  # level n
    U: np.ndarray
    p_prev: np.ndarray  # level n-1
    U_prev: np.ndarray
    Ur: float = 0.0  # level n


@dataclass
class FdmSolution:
    x: np.ndarray
    t: np.ndarray  # times within the stored period, t[0] = 0
    dx: float
    dt: float
    p: np.ndarray  # shape (nt, nx)
    U: np.ndarray
    Ur: np.ndarray
    residual: float
    periods: int
    converged: bool
    cfl: float
    f0: float
    residual_history: list = field(default_factory=list)

    @property
    def p_outlet(self) -> PeriodicWaveform:
        return PeriodicWaveform(self.f0, self.p[:, -1])

    @property
    def U_inlet(self) -> PeriodicWaveform:
        return PeriodicWaveform(self.f0, self.U[:, 0])

    def waveform_at(self, x: float, quantity: str = "p") -> PeriodicWaveform:
        """Field at the grid node nearest to ``x`` over the stored period."""
        j = int(np.argmin(np.abs(self.x - x)))
        data = {"p": self.p, "U": self.U}[quantity]
        return PeriodicWaveform(self.f0, data[:, j])

    def summary(self) -> dict:
        return {
            "nx": int(self.x.size),
            "nt": int(self.t.size),
            "dx": self.dx,
            "dt": self.dt,
            "cfl": self.cfl,
            "periods": self.periods,
            "residual": self.residual,
            "converged": self.converged,
        }


class FdmSolver:
    """Single-threaded leapfrog integrator for one tube configuration.

    ``outlet`` is ``"radiation"`` (default) or ``"rigid"`` (U = 0 at x = l,
    used for energy checks).
    """

    def __init__(
        self,
        profile: TubeProfile,
        consts: PhysicalConstants,
        loss: LossConstants | None,
        excitation: PeriodicWaveform | None,
        config: FdmConfig = FdmConfig(),
        outlet: str = "radiation",
        f0: float | None = None,
    ):
        if outlet not in ("radiation", "rigid"):
            raise ValueError(f"unknown outlet model {outlet!r}")
        if excitation is None and f0 is None:
            raise ValueError("need an excitation or an explicit f0")
        self.profile = profile
        self.consts = consts
        self.loss = loss
        self.excitation = excitation
        self.config = config
        self.outlet = outlet
        self.f0 = excitation.f0 if excitation is not None else float(f0)
        self.T = 1.0 / self.f0

        nx = config.cells(profile.l)
        self.nt = config.steps_per_period(self.T)
        self.dt = self.T / self.nt
        self.dx = profile.l / nx
        self.cfl = consts.c * self.dt / self.dx
        if self.cfl >= 1.0:
            raise NumericalInstability(f"CFL number {self.cfl:.3f} >= 1; leapfrog would be unstable")

        self.x = np.linspace(0.0, profile.l, nx + 1)
        self.A = profile.area_at(self.x)
        r = profile.radius_at(self.x)
        if loss is None:
            G = np.zeros_like(r)
            R = np.zeros_like(r)
        else:
            G = r * loss.G_c
            R = loss.R_c / r**3
        dt = self.dt
        # p^{n+1} = cp_old * p^{n-1} - cp_div * dU/dx
        ap = self.A / (2.0 * consts.K * dt)
        self._cp_old = (ap - G / 2) / (ap + G / 2)
        self._cp_div = 1.0 / (ap + G / 2)
        au = consts.rho / (2.0 * self.A * dt)
        self._au = au
        self._rr = R / 2
        self._cu_old = (au - R / 2) / (au + R / 2)
        self._cu_div = 1.0 / (au + R / 2)

        self.rad = radiation_params(self.A[-1], consts)
        self._beta = dt * self.rad.R_r / (2.0 * self.rad.L_r)

        if excitation is not None:
            self._drive = self.A[0] * excitation.sample(np.arange(self.nt) * dt)
        else:
            self._drive = np.zeros(self.nt)

    def rest_state(self) -> FdmState:
        n = self.x.size
        U = np.zeros(n)
        U[0] = self._drive[0]
        return FdmState(n=0, p=np.zeros(n), U=U, p_prev=np.zeros(n), U_prev=np.zeros(n), Ur=0.0)

    def inlet_flow(self, n: int) -> float:
        return self._drive[n % self.nt]

    def step(self, s: FdmState) -> FdmState:
        """Advance from level n to n+1 (returns a new state)."""
        inv2dx = 1.0 / (2.0 * self.dx)
        p, U = s.p, s.U
        p_new = np.empty_like(p)
        U_new = np.empty_like(U)

        dUdx = np.empty_like(U)
        dUdx[1:-1] = (U[2:] - U[:-2]) * inv2dx
        dUdx[0] = (-3.0 * U[0] + 4.0 * U[1] - U[2]) * inv2dx
        dUdx[-1] = (3.0 * U[-1] - 4.0 * U[-2] + U[-3]) * inv2dx
        p_new[:] = self._cp_old * s.p_prev - self._cp_div * dUdx

        U_new[1:-1] = self._cu_old[1:-1] * s.U_prev[1:-1] - self._cu_div[1:-1] * (p[2:] - p[:-2]) * inv2dx
        U_new[0] = self.inlet_flow(s.n + 1)

        Ur_new = s.Ur
        if self.outlet == "rigid":
            U_new[-1] = 0.0
        else:
            # Implicit outlet: averaged outlet pressure in the momentum update,
            # trapezoidal radiation ODE, p_l = R_r (U_l - U_r).
            Rr, beta = self.rad.R_r, self._beta
            c1 = beta / (1.0 + beta)
            c0 = (s.Ur * (1.0 - beta) + beta * U[-1]) / (1.0 + beta)
            au, rr = self._au[-1], self._rr[-1]
            k = 3.0 * inv2dx / 2.0
            rhs = (au - rr) * s.U_prev[-1] - (1.5 * s.p_prev[-1] - 4.0 * p[-2] + p[-3]) * inv2dx
            lhs = au + rr + k * Rr * (1.0 - c1)
            U_new[-1] = (rhs + k * Rr * c0) / lhs
            Ur_new = c0 + c1 * U_new[-1]
            p_new[-1] = Rr * (U_new[-1] - Ur_new)

        a = self.config.asselin
        if a:
            # Robert-Asselin-Williams filter; the forced inlet flow stays exact.
            nu = _RAW_NU
            dp = 0.5 * a * (p_new - 2.0 * p + s.p_prev)
            dU = 0.5 * a * (U_new - 2.0 * U + s.U_prev)
            dU[0] = 0.0
            p = p + nu * dp
            U = U + nu * dU
            p_new += (nu - 1.0) * dp
            U_new += (nu - 1.0) * dU
            if self.outlet == "radiation":
                # keep the outlet node on the radiation relation
                p_new[-1] = self.rad.R_r * (U_new[-1] - Ur_new)
        return FdmState(n=s.n + 1, p=p_new, U=U_new, p_prev=p, U_prev=U, Ur=Ur_new)

    def energy(self, s: FdmState) -> float:
        """Acoustic energy sum (A p^2 / 2K + rho U^2 / 2A) dx (trapezoid weights)."""
        dens = self.A * s.p**2 / (2.0 * self.consts.K) + self.consts.rho * s.U**2 / (2.0 * self.A)
        w = np.full_like(dens, self.dx)
        w[0] = w[-1] = self.dx / 2
        return float(np.dot(w, dens))

    def run_period(self, s: FdmState, out_p=None, out_U=None, out_Ur=None) -> FdmState:
        """Advance one full period, recording levels n .. n+nt-1 into the buffers."""
        for k in range(self.nt):
            if out_p is not None:
                out_p[k] = s.p
                out_U[k] = s.U
                out_Ur[k] = s.Ur
            s = self.step(s)
        if not (np.all(np.isfinite(s.p)) and np.all(np.isfinite(s.U)) and math.isfinite(s.Ur)):
            raise NumericalInstability(f"non-finite field at time level {s.n} (CFL {self.cfl:.3f})")
        return s

    def run_to_steady_state(self) -> FdmSolution:
        cfg = self.config
        nx = self.x.size
        bufs = [(np.empty((self.nt, nx)), np.empty((self.nt, nx)), np.empty(self.nt)) for _ in range(2)]
        s = self.rest_state()
        residual = math.inf
        history = []
        prev_pl = None
        periods = 0
        for periods in range(1, cfg.periods_max + 1):
            p_buf, U_buf, Ur_buf = bufs[periods % 2]
            s = self.run_period(s, p_buf, U_buf, Ur_buf)
            pl = p_buf[:, -1]
            if prev_pl is not None:
                scale = np.max(np.abs(pl))
                residual = float(np.max(np.abs(pl - prev_pl)) / scale) if scale > 0 else 0.0
                history.append(residual)
                if residual <= cfg.steady_tol:
                    break
            prev_pl = pl
        p_buf, U_buf, Ur_buf = bufs[periods % 2]
        sol = FdmSolution(
            x=self.x.copy(),
            t=np.arange(self.nt) * self.dt,
            dx=self.dx,
            dt=self.dt,
            p=p_buf.copy(),
            U=U_buf.copy(),
            Ur=Ur_buf.copy(),
            residual=residual,
            periods=periods,
            converged=residual <= cfg.steady_tol,
            cfl=self.cfl,
            f0=self.f0,
            residual_history=history,
        )
        log.info("FDM: %d periods, residual %.3e", periods, residual)
        if not sol.converged:
            raise SteadyStateNotReached(residual, periods, sol)
        return sol


def run_to_steady_state(
    config: FdmConfig,
    profile: TubeProfile,
    consts: PhysicalConstants,
    loss: LossConstants | None,
    excitation: PeriodicWaveform,
) -> FdmSolution:
    return FdmSolver(profile, consts, loss, excitation, config).run_to_steady_state()


def relative_l2(a, b) -> float:
    """||a - b|| / ||b||."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return float(np.linalg.norm(a - b) / np.linalg.norm(b))


def sensitivity_study(
    config: FdmConfig,
    profile: TubeProfile,
    consts: PhysicalConstants,
    baseline: LossConstants,
    excitation: PeriodicWaveform,
    factor: float = 2.0,
) -> dict:
    """Outlet pressure for the baseline, ``factor*G_c`` and ``factor*R_c``."""
    if not factor > 0:
        raise ValueError("factor must be positive")
    runs = {
        "baseline": baseline,
        "G": baseline.scaled(g_factor=factor),
        "R": baseline.scaled(r_factor=factor),
    }
    waves = {
        name: run_to_steady_state(config, profile, consts, lc, excitation).p[:, -1]
        for name, lc in runs.items()
    }
    dev_G = relative_l2(waves["G"], waves["baseline"])
    dev_R = relative_l2(waves["R"], waves["baseline"])
    return {
        "t": np.arange(waves["baseline"].size) / (waves["baseline"].size * excitation.f0),
        "waveforms": waves,
        "deviation_G": dev_G,
        "deviation_R": dev_R,
        "ratio": dev_G / dev_R if dev_R > 0 else math.inf,
        "factor": factor,
    }


def add_noise(waveform, level: float, seed: int):
    """White Gaussian noise with std ``level * std(clean)``; seeded and reproducible."""
    if level < 0:
        raise ValueError("noise level must be non-negative")
    samples = waveform.samples if isinstance(waveform, PeriodicWaveform) else np.asarray(waveform, float)
    if level == 0:
        noisy = samples.copy()
    else:
        rng = np.random.default_rng(seed)
        noisy = samples + level * np.std(samples) * rng.standard_normal(samples.shape)
    if isinstance(waveform, PeriodicWaveform):
        return PeriodicWaveform(waveform.f0, noisy)
    return noisy
