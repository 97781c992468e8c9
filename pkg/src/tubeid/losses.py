"""Residual losses for the tube fields: PDE, inlet, radiation coupling, periodicity, data."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

import numpy as np
from scipy.stats import qmc

from .autodiff import Tensor
from .excitation import PeriodicWaveform
from .geometry import TubeProfile
from .physics import PhysicalConstants, RadiationParams, radiation_params
from .resonet import ScalingSpec

TERMS = ("E", "B", "C", "P0", "P1", "M")


@dataclass(frozen=True)
class CollocationSets:
    E: np.ndarray  # (N_E, 2) columns x, t
    B: np.ndarray  # (N_B,) times at x = 0
    C: np.ndarray  # (N_C,) times at x = l
    P: np.ndarray  # (N_P,) positions, paired at t = 0 and t = T
    M: np.ndarray | None = None  # (N_M,) times at x = l
    p_meas: np.ndarray | None = None  # (N_M,) measured outlet pressure

    def with_measurements(self, t, p) -> "CollocationSets":
        t = np.asarray(t, dtype=float)
        p = np.asarray(p, dtype=float)
        if t.shape != p.shape:
            raise ValueError("measurement times and values differ in shape")
        return CollocationSets(self.E, self.B, self.C, self.P, t, p)


def _lattice(n, d, seed):
    if n <= 0:
        raise ValueError("collocation set sizes must be positive")
    return qmc.Halton(d=d, scramble=True, seed=seed).random(n)


def make_collocation(l: float, T: float, n_E=5000, n_B=1000, n_C=1000, n_P=1000, seed=0) -> CollocationSets:
    """Scrambled Halton points, one independent lattice per set, fixed by ``seed``."""
    ss = np.random.SeedSequence(seed)
    seeds = [int(s.generate_state(1)[0]) for s in ss.spawn(4)]
    E = _lattice(n_E, 2, seeds[0]) * np.array([l, T])
    B = _lattice(n_B, 1, seeds[1])[:, 0] * T
    C = _lattice(n_C, 1, seeds[2])[:, 0] * T
    P = _lattice(n_P, 1, seeds[3])[:, 0] * l
    return CollocationSets(E=E, B=B, C=C, P=P)


def measurement_points(waveform: PeriodicWaveform, n_M: int, seed=0):
    """``n_M`` distinct samples of the waveform, chosen by ``seed``, sorted in time.

    Values are taken straight from the stored samples, so noise added to them
    is never interpolated.
    """
    if not 1 <= n_M <= len(waveform):
        raise ValueError("measurement count must be between 1 and the number of samples")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 5]))
    idx = np.sort(rng.choice(len(waveform), size=n_M, replace=False))
    return waveform.times[idx], waveform.samples[idx].copy()


@dataclass(frozen=True)
class LossWeights:
    E1: float = 1.0
    E2: float = 1.0
    B: float = 1.0
    C: float = 1.0
    P0_U: float = 1.0
    P0_p: float = 1.0
    P1_U: float = 1.0
    P1_p: float = 1.0
    M: float = 1.0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not (np.isfinite(v) and v >= 0):
                raise ValueError(f"weight {f.name} must be finite and >= 0, got {v!r}")

    @classmethod
    def normalized(cls, scaling: ScalingSpec, inlet_area: float, multipliers: dict | None = None,
                   outlet_p_scale: float | None = None) -> "LossWeights":
        """Each weight is 1 / (characteristic size of its residual)^2, times an optional multiplier.

        The outlet residuals (coupling and data) are measured against
        ``outlet_p_scale`` when given, since the radiated pressure can be far
        smaller than the pressure inside the tube.
        """
        l, T, ps, Us = scaling.x_scale, scaling.t_scale, scaling.p_scale, scaling.U_scale
        po = ps if outlet_p_scale is None else outlet_p_scale
        if not po > 0:
            raise ValueError("outlet pressure scale must be positive")
        base = dict(
            E1=(l / Us) ** 2,
            E2=(l / ps) ** 2,
            B=(inlet_area / Us) ** 2,
            C=1.0 / po**2,
            P0_U=1.0 / Us**2,
            P0_p=1.0 / ps**2,
            P1_U=(T / Us) ** 2,
            P1_p=(T / ps) ** 2,
            M=1.0 / po**2,
        )
        for k, m in (multipliers or {}).items():
            if k not in base:
                raise KeyError(f"unknown loss weight {k!r}")
            base[k] *= m
        return cls(**base)

    def scaled(self, factor: float) -> "LossWeights":
        return LossWeights(**{k: v * factor for k, v in asdict(self).items()})


@dataclass
class LossBreakdown:
    terms: dict  # name -> float
    total: float
    tensor: Tensor = field(repr=False)

    def as_row(self) -> dict:
        return {**{f"L_{k}": self.terms.get(k, 0.0) for k in TERMS}, "total": self.total}


def _msq(r: Tensor) -> Tensor:
    return r.square().mean()


def pde_loss(model, leaves, E, profile: TubeProfile, consts: PhysicalConstants, weights: LossWeights) -> Tensor:
    """Weighted mean-square residuals of the continuity and momentum equations."""
    x, t = E[:, 0], E[:, 1]
    A = profile.area_at(x)
    r = profile.radius_at(x)
    f = model.upper(leaves, x, t, derivs=("x", "t"))
    Gc, Rc = model.loss_constants(leaves)
    G = Gc * r
    R = Rc * (1.0 / r**3)
    res1 = f["U_x"] + G * f["p"] + f["p_t"] * (A / consts.K)
    res2 = f["p_x"] + R * f["U"] + f["U_t"] * (consts.rho / A)
    return weights.E1 * _msq(res1) + weights.E2 * _msq(res2)


def bc_loss(model, leaves, B, vbar, inlet_area: float, weights: LossWeights) -> Tensor:
    """Inlet particle velocity U/A(0) against the excitation samples ``vbar``."""
    f = model.upper(leaves, np.zeros_like(B), B, derivs=())
    return weights.B * _msq(f["U"] * (1.0 / inlet_area) - np.asarray(vbar))


def coupling_loss(model, leaves, C, l: float, rad: RadiationParams, weights: LossWeights) -> Tensor:
    """Radiation load at the outlet: (U - U_r) R_r = L_r dU_r/dt and p = (U - U_r) R_r."""
    f = model.upper(leaves, np.full_like(C, l), C, derivs=())
    g = model.lower(leaves, C, with_dt=True)
    drop = (f["U"] - g["Ur"]) * rad.R_r
    return weights.C * (_msq(drop - g["Ur_t"] * rad.L_r) + _msq(f["p"] - drop))


def periodicity_losses(model, leaves, P, T: float, weights: LossWeights):
    """(L_P0, L_P1): values and time derivatives matched between t = 0 and t = T."""
    if not T > 0:
        raise ValueError("period must be positive for the periodicity loss")
    n = P.size
    xs = np.concatenate([P, P])
    ts = np.concatenate([np.zeros(n), np.full(n, T)])
    f = model.upper(leaves, xs, ts, derivs=("t",))

    def gap(key):
        v = f[key]
        return v[:n] - v[n:]

    L0 = weights.P0_U * _msq(gap("U")) + weights.P0_p * _msq(gap("p"))
    L1 = weights.P1_U * _msq(gap("U_t")) + weights.P1_p * _msq(gap("p_t"))
    return L0, L1


def data_loss(model, leaves, M, p_meas, l: float, weights: LossWeights) -> Tensor:
    """Outlet pressure against the measured samples."""
    f = model.upper(leaves, np.full_like(M, l), M, derivs=())
    return weights.M * _msq(f["p"] - np.asarray(p_meas))


class LossSuite:
    """Binds collocation sets and physics so the total loss is a function of the parameters."""

    def __init__(self, sets: CollocationSets, profile: TubeProfile, consts: PhysicalConstants,
                 excitation: PeriodicWaveform, weights: LossWeights):
        self.sets = sets
        self.profile = profile
        self.consts = consts
        self.weights = weights
        self.T = excitation.period
        self.inlet_area = float(profile.area_at(0.0))
        self.rad = radiation_params(float(profile.area_at(profile.l)), consts)
        self.vbar = excitation.sample(sets.B)

    def terms(self, model, leaves, mode="forward") -> dict:
        if mode not in ("forward", "inverse"):
            raise ValueError(f"unknown mode {mode!r}")
        s, w = self.sets, self.weights
        out = {
            "E": pde_loss(model, leaves, s.E, self.profile, self.consts, w),
            "B": bc_loss(model, leaves, s.B, self.vbar, self.inlet_area, w),
            "C": coupling_loss(model, leaves, s.C, self.profile.l, self.rad, w),
        }
        out["P0"], out["P1"] = periodicity_losses(model, leaves, s.P, self.T, w)
        if mode == "inverse":
            if s.M is None or s.p_meas is None:
                raise ValueError("inverse mode needs measured outlet pressure")
            out["M"] = data_loss(model, leaves, s.M, s.p_meas, self.profile.l, w)
        return out

    def total(self, model, leaves=None, mode="forward") -> LossBreakdown:
        if leaves is None:
            leaves = model.params.leaves()
        terms = self.terms(model, leaves, mode)
        tensor = None
        for name in TERMS:  # fixed summation order
            if name in terms:
                tensor = terms[name] if tensor is None else tensor + terms[name]
        values = {k: v.item() for k, v in terms.items()}
        return LossBreakdown(terms=values, total=tensor.item(), tensor=tensor)
