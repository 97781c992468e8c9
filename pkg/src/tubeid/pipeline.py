"""Experiment orchestration shared by the command line and the acceptance suite.

Each ``run_*`` function takes a validated :class:`RunConfig` and returns plain
arrays and dicts; writing files is left to the caller.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np

from .autodiff import Tensor, finite_difference_check, snake, snake_jet, snake_prime
from .config import RunConfig
from .excitation import PeriodicWaveform, rosenberg_waveform
from .fdm import FdmSolution, add_noise, relative_l2, run_to_steady_state, sensitivity_study
from .losses import TERMS, LossSuite, LossWeights, make_collocation, measurement_points
from .physics import radiation_params
from .resonet import NetworkConfig, ResoNet, ScalingSpec
from .trainer import identify, train_forward

log = logging.getLogger(__name__)


def excitation(cfg: RunConfig) -> PeriodicWaveform:
    return rosenberg_waveform(cfg.rosenberg(), n_samples=cfg.excitation.n_samples)


def fdm_reference(cfg: RunConfig, loss=None) -> FdmSolution:
    """Steady-state reference with the configured (or given) loss constants."""
    return run_to_steady_state(
        cfg.fdm_config(), cfg.profile(), cfg.physical_constants(),
        cfg.true_loss() if loss is None else loss, excitation(cfg),
    )


def scaling_for(cfg: RunConfig, vbar: PeriodicWaveform) -> ScalingSpec:
    """Output scales: explicit config values win; otherwise U from the inlet drive and
    p as the plane-wave pressure rho c max|v| of that drive."""
    prof = cfg.profile()
    consts = cfg.physical_constants()
    v_max = float(np.max(np.abs(vbar.samples)))
    U_scale = cfg.network.U_scale or float(prof.area_at(0.0)) * v_max
    p_scale = cfg.network.p_scale or consts.rho * consts.c * v_max
    return ScalingSpec(x_scale=prof.l, t_scale=vbar.period, p_scale=p_scale, U_scale=U_scale)


def outlet_scale_for(cfg: RunConfig, vbar: PeriodicWaveform, p_outlet: np.ndarray | None) -> float:
    """Pressure scale of the outlet residuals: the config value, else max|p| of the
    measured or reference outlet waveform, else the radiation-load estimate
    L_r * 2 pi f0 * A(0) max|v|."""
    if cfg.network.p_outlet_scale:
        return cfg.network.p_outlet_scale
    if p_outlet is not None and np.max(np.abs(p_outlet)) > 0:
        return float(np.max(np.abs(p_outlet)))
    prof = cfg.profile()
    rad = radiation_params(float(prof.area_at(prof.l)), cfg.physical_constants())
    return rad.L_r * 2 * np.pi * vbar.f0 * float(prof.area_at(0.0)) * float(np.max(np.abs(vbar.samples)))


@dataclass
class Problem:
    model: ResoNet
    suite: LossSuite
    scaling: ScalingSpec
    outlet_p_scale: float


def build_problem(cfg: RunConfig, vbar: PeriodicWaveform, scaling: ScalingSpec, outlet_p_scale: float,
                  G_c: float, R_c: float, measurements=None, network: NetworkConfig | None = None) -> Problem:
    prof = cfg.profile()
    col = cfg.collocation
    sets = make_collocation(prof.l, vbar.period, col.n_E, col.n_B, col.n_C, col.n_P, seed=cfg.seed)
    if measurements is not None:
        sets = sets.with_measurements(*measurements)
    weights = LossWeights.normalized(scaling, float(prof.area_at(0.0)), asdict(cfg.weights), outlet_p_scale)
    suite = LossSuite(sets, prof, cfg.physical_constants(), vbar, weights)
    model = ResoNet.init(network or cfg.network_config(), scaling, G_c, R_c)
    return Problem(model, suite, scaling, outlet_p_scale)


def outlet_prediction(model: ResoNet, t: np.ndarray) -> np.ndarray:
    p, _ = model.forward_pU(np.full_like(t, model.scaling.x_scale), t)
    return p


# -- forward --------------------------------------------------------------

@dataclass
class ForwardRun:
    problem: Problem
    log_rows: list
    t: np.ndarray
    p_hat: np.ndarray
    relative_l2: float | None


def run_pinn_forward(cfg: RunConfig, reference: FdmSolution | None = None, on_epoch=None,
                     on_checkpoint=None) -> ForwardRun:
    vbar = excitation(cfg)
    p_out = outlet_scale_for(cfg, vbar, reference.p[:, -1] if reference is not None else None)
    problem = build_problem(cfg, vbar, scaling_for(cfg, vbar), p_out, cfg.loss.G_c, cfg.loss.R_c)
    train_log, _ = train_forward(problem.model, problem.suite, cfg.train_config(), on_epoch, on_checkpoint)
    if reference is not None:
        t = reference.t
        p_hat = outlet_prediction(problem.model, t)
        err = relative_l2(p_hat, reference.p[:, -1])
    else:
        t = np.arange(1000) * (vbar.period / 1000)
        p_hat = outlet_prediction(problem.model, t)
        err = None
    return ForwardRun(problem, train_log.rows, t, p_hat, err)


# -- identification ---------------------------------------------------------

@dataclass
class IdentifyRun:
    problem: Problem
    result: object  # IdentificationResult
    log_rows: list
    target_t: np.ndarray
    target_clean: np.ndarray
    target_noisy: np.ndarray


def identification_target(cfg: RunConfig):
    """Outlet pressure from the reference solver, with the configured noise added."""
    sol = fdm_reference(cfg)
    clean = sol.p_outlet
    noisy = add_noise(clean, cfg.training.noise_level, seed=cfg.seed)
    return sol, clean, noisy


def run_identify(cfg: RunConfig, on_epoch=None, on_checkpoint=None) -> IdentifyRun:
    vbar = excitation(cfg)
    _, clean, noisy = identification_target(cfg)
    meas = measurement_points(noisy, cfg.collocation.n_M, seed=cfg.seed)
    p_out = outlet_scale_for(cfg, vbar, noisy.samples)
    truth = cfg.true_loss()
    problem = build_problem(cfg, vbar, scaling_for(cfg, vbar), p_out, truth.G_c * cfg.loss.init_G_factor,
                            truth.R_c * cfg.loss.init_R_factor, measurements=meas)
    result, train_log = identify(problem.model, problem.suite, cfg.train_config(), truth, on_epoch, on_checkpoint)
    return IdentifyRun(problem, result, train_log.rows, clean.times, clean.samples, noisy.samples)


# -- sensitivity ------------------------------------------------------------

def run_sensitivity(cfg: RunConfig) -> dict:
    return sensitivity_study(cfg.fdm_config(), cfg.profile(), cfg.physical_constants(), cfg.true_loss(),
                             excitation(cfg), factor=cfg.sensitivity.factor)


# -- gradient check -------------------------------------------------------

def reverse_over_forward_check(seed: int = 0) -> float:
    """Largest relative gap between the fused snake jet backward and the unfused composition."""
    rng = np.random.default_rng(seed)
    h0 = rng.standard_normal((3, 16, 8))
    wts = rng.standard_normal((3, 16, 8))
    fused = Tensor(h0, requires_grad=True)
    (snake_jet(fused) * wts).sum().backward()
    parts = Tensor(h0, requires_grad=True)
    ((snake(parts[0]) * wts[0]).sum() + ((snake_prime(parts[0]) * parts[1:]) * wts[1:]).sum()).backward()
    return float(np.max(np.abs(fused.grad - parts.grad)) / np.max(np.abs(parts.grad)))


def run_gradcheck(cfg: RunConfig, tolerance: float = 1e-5) -> dict:
    """Finite-difference check of every loss term on a small network."""
    g = cfg.gradcheck
    vbar = excitation(cfg)
    scaling = scaling_for(cfg, vbar)
    small = NetworkConfig(width=g.width, blocks=g.blocks, seed=cfg.seed, time_gain=cfg.network.time_gain)
    meas_t = np.linspace(0.0, vbar.period, g.n_points, endpoint=False)
    meas_p = 0.1 * scaling.p_scale * np.sin(2 * np.pi * meas_t / vbar.period)
    sub = cfg.merged({"collocation": {"n_E": g.n_points, "n_B": g.n_points, "n_C": g.n_points,
                                      "n_P": g.n_points, "n_M": g.n_points}})
    truth = cfg.true_loss()
    problem = build_problem(sub, vbar, scaling, outlet_scale_for(cfg, vbar, meas_p),
                            truth.G_c * cfg.loss.init_G_factor, truth.R_c * cfg.loss.init_R_factor,
                            measurements=(meas_t, meas_p), network=small)
    model, suite = problem.model, problem.suite
    rng = np.random.default_rng(cfg.seed)
    slots = [model.params.extent("log_Gc").start, model.params.extent("log_Rc").start]
    idx = np.unique(np.concatenate([rng.choice(len(model.params) - 2, size=g.samples, replace=False), slots]))
    terms = {}
    for name in TERMS:
        report = finite_difference_check(
            lambda leaves, name=name: suite.terms(model, leaves, mode="inverse")[name],
            model.params, step=g.step, indices=idx,
        )
        terms[name] = report
    rof = reverse_over_forward_check(cfg.seed)
    worst = max(r["max_relative_error"] for r in terms.values())
    return {
        "tolerance": tolerance,
        "terms": terms,
        "max_relative_error": worst,
        "reverse_over_forward_error": rof,
        "passed": bool(worst < tolerance and rof < 1e-12),
    }
