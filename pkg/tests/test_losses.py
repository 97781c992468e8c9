import numpy as np
import pytest
from scipy.interpolate import CubicSpline

from tubeid.autodiff import Tensor, finite_difference_check
from tubeid.excitation import RosenbergParams, rosenberg_waveform
from tubeid.fdm import FdmConfig, run_to_steady_state
from tubeid.geometry import TubeProfile
from tubeid.losses import (
    TERMS,
    LossSuite,
    LossWeights,
    bc_loss,
    coupling_loss,
    data_loss,
    make_collocation,
    measurement_points,
    pde_loss,
    periodicity_losses,
)
from tubeid.physics import REFERENCE_LOSS, PhysicalConstants, radiation_params
from tubeid.resonet import NetworkConfig, ResoNet, ScalingSpec

PROFILE = TubeProfile.two_section()
CONSTS = PhysicalConstants()
PULSE = rosenberg_waveform(RosenbergParams())
T = PULSE.period
L = PROFILE.l
A0 = PROFILE.area_at(0.0)
RAD = radiation_params(PROFILE.area_at(L), CONSTS)
SCALING = ScalingSpec(L, T, 14.0, A0)


class StubModel:
    """Analytic fields with the ResoNet evaluation interface (constants, no parameters)."""

    def __init__(self, p=None, U=None, Ur=None, p_t=None, U_t=None, p_x=None, U_x=None, Ur_t=None):
        zero = lambda x, t: np.zeros_like(np.asarray(t, dtype=float))  # noqa: E731
        self.fn = {k: v or zero for k, v in dict(p=p, U=U, p_t=p_t, U_t=U_t, p_x=p_x, U_x=U_x).items()}
        self.Ur = Ur or (lambda t: np.zeros_like(t))
        self.Ur_t = Ur_t or (lambda t: np.zeros_like(t))

    def upper(self, leaves, x, t, derivs=("x", "t")):
        keys = ["p", "U"] + [f"{q}_{d}" for d in derivs for q in ("p", "U")]
        return {k: Tensor(self.fn[k](np.asarray(x, float), np.asarray(t, float))) for k in keys}

    def lower(self, leaves, t, with_dt=True):
        out = {"Ur": Tensor(self.Ur(np.asarray(t, float)))}
        if with_dt:
            out["Ur_t"] = Tensor(self.Ur_t(np.asarray(t, float)))
        return out

    def loss_constants(self, leaves):
        return Tensor(REFERENCE_LOSS.G_c), Tensor(REFERENCE_LOSS.R_c)


W1 = LossWeights()  # unit weights for hand-checkable values
SETS = make_collocation(L, T, n_E=64, n_B=32, n_C=32, n_P=32, seed=1)


def const(v):
    return lambda x, t=None: np.full_like(np.asarray(x if t is None else t, float), v)


# -- collocation ------------------------------------------------------------

def test_collocation_shapes_ranges_and_determinism():
    a = make_collocation(L, T, 100, 20, 30, 40, seed=5)
    b = make_collocation(L, T, 100, 20, 30, 40, seed=5)
    c = make_collocation(L, T, 100, 20, 30, 40, seed=6)
    assert a.E.shape == (100, 2) and a.B.shape == (20,) and a.C.shape == (30,) and a.P.shape == (40,)
    assert np.all((a.E >= 0) & (a.E <= [L, T]))
    assert np.all((a.B >= 0) & (a.B <= T)) and np.all((a.P >= 0) & (a.P <= L))
    np.testing.assert_array_equal(a.E, b.E)
    assert not np.array_equal(a.E, c.E)
    with pytest.raises(ValueError):
        make_collocation(L, T, 0, 1, 1, 1)


def test_measurement_points_sample_waveform():
    t, p = measurement_points(PULSE, 50, seed=2)
    assert t.shape == p.shape == (50,)
    np.testing.assert_allclose(p, PULSE.sample(t))
    with pytest.raises(ValueError):
        SETS.with_measurements(t, p[:-1])


# -- weights ----------------------------------------------------------------

def test_normalized_weights():
    w = LossWeights.normalized(SCALING, A0, {"B": 10.0})
    assert w.E1 == pytest.approx((L / SCALING.U_scale) ** 2)
    assert w.E2 == pytest.approx((L / 14.0) ** 2)
    assert w.B == pytest.approx(10.0 * (A0 / SCALING.U_scale) ** 2)
    assert w.P1_p == pytest.approx((T / 14.0) ** 2)
    assert w.M == pytest.approx(1 / 14.0**2)
    with pytest.raises(KeyError):
        LossWeights.normalized(SCALING, A0, {"Q": 1.0})
    with pytest.raises(ValueError):
        LossWeights(B=-1.0)
    with pytest.raises(ValueError):
        LossWeights(M=np.nan)


def test_outlet_scale_sets_only_outlet_weights():
    base = LossWeights.normalized(SCALING, A0)
    w = LossWeights.normalized(SCALING, A0, {"C": 2.0}, outlet_p_scale=0.5)
    assert w.C == pytest.approx(2.0 / 0.25) and w.M == pytest.approx(1 / 0.25)
    for name in ("E1", "E2", "B", "P0_U", "P0_p", "P1_U", "P1_p"):
        assert getattr(w, name) == getattr(base, name)
    with pytest.raises(ValueError):
        LossWeights.normalized(SCALING, A0, outlet_p_scale=0.0)


# -- individual terms with stub fields ---------------------------------------

def test_bc_exact_and_zero():
    vbar = PULSE.sample(SETS.B)
    exact = StubModel(U=lambda x, t: A0 * PULSE.sample(t))
    assert bc_loss(exact, {}, SETS.B, vbar, A0, W1).item() == pytest.approx(0.0, abs=1e-20)
    zero = StubModel()
    assert bc_loss(zero, {}, SETS.B, vbar, A0, W1).item() == pytest.approx(np.mean(vbar**2), rel=1e-12)


def test_coupling_cases():
    equal = StubModel(U=const(3e-5), Ur=const(3e-5))
    assert coupling_loss(equal, {}, SETS.C, L, RAD, W1).item() == 0.0
    u, p = 2e-6, 1.5
    stub = StubModel(U=const(u), p=const(p))
    expected = (u * RAD.R_r) ** 2 + (p - u * RAD.R_r) ** 2
    assert coupling_loss(stub, {}, SETS.C, L, RAD, W1).item() == pytest.approx(expected, rel=1e-12)
    assert coupling_loss(stub, {}, SETS.C, L, RAD, LossWeights(C=0.0)).item() == 0.0


def test_coupling_satisfied_by_radiation_ode_solution():
    # U_r = a sin(wt); U - U_r = (L_r/R_r) dU_r/dt; p = L_r dU_r/dt
    w, a = 2 * np.pi / T, 1e-5
    ur = lambda t: a * np.sin(w * t)  # noqa: E731
    urt = lambda t: a * w * np.cos(w * t)  # noqa: E731
    stub = StubModel(U=lambda x, t: ur(t) + RAD.L_r / RAD.R_r * urt(t), p=lambda x, t: RAD.L_r * urt(t), Ur=ur, Ur_t=urt)
    assert coupling_loss(stub, {}, SETS.C, L, RAD, W1).item() < 1e-24


def test_periodicity_cases():
    flat = StubModel(p=lambda x, t: np.sin(40 * x), U=lambda x, t: np.cos(40 * x))
    L0, L1 = periodicity_losses(flat, {}, SETS.P, T, W1)
    assert L0.item() == 0.0 and L1.item() == 0.0
    ramp = StubModel(p=lambda x, t: 5.0 * t / T, p_t=const(5.0 / T))
    L0, L1 = periodicity_losses(ramp, {}, SETS.P, T, W1)
    assert L0.item() == pytest.approx(25.0) and L1.item() == 0.0
    with pytest.raises(ValueError):
        periodicity_losses(flat, {}, SETS.P, 0.0, W1)


def test_data_loss_cases():
    t, pm = measurement_points(PULSE, 40, seed=0)
    exact = StubModel(p=lambda x, s: PULSE.sample(s))
    assert data_loss(exact, {}, t, pm, L, W1).item() == pytest.approx(0.0, abs=1e-24)
    offset = StubModel(p=lambda x, s: PULSE.sample(s) + 1.0)
    assert data_loss(offset, {}, t, pm, L, LossWeights(M=3.0)).item() == pytest.approx(3.0, rel=1e-12)


def test_pde_loss_of_lossless_travelling_wave_in_uniform_tube():
    tube = TubeProfile(L, ((0.0, 0.01), (L, 0.01)))
    A = tube.area_at(0.0)
    speed = np.sqrt(CONSTS.K / CONSTS.rho)
    w = 2 * np.pi * 1000.0
    k = w / speed
    Z = CONSTS.rho * speed / A
    phase = lambda x, t: w * t - k * x  # noqa: E731
    stub = StubModel(
        p=lambda x, t: Z * np.cos(phase(x, t)),
        U=lambda x, t: np.cos(phase(x, t)),
        p_t=lambda x, t: -w * Z * np.sin(phase(x, t)),
        U_t=lambda x, t: -w * np.sin(phase(x, t)),
        p_x=lambda x, t: k * Z * np.sin(phase(x, t)),
        U_x=lambda x, t: k * np.sin(phase(x, t)),
    )
    stub.loss_constants = lambda leaves: (Tensor(0.0), Tensor(0.0))
    value = pde_loss(stub, {}, SETS.E, tube, CONSTS, W1).item()
    assert value < 1e-24 * (k**2 + (k * Z) ** 2)


# -- totals ---------------------------------------------------------------

def suite(weights=None, n=(64, 32, 32, 32)):
    sets = make_collocation(L, T, *n, seed=3)
    t, pm = measurement_points(PULSE, 32, seed=3)
    return LossSuite(sets.with_measurements(t, pm), PROFILE, CONSTS, PULSE, weights or LossWeights.normalized(SCALING, A0))


def small_model(width=16, blocks=2, seed=0):
    return ResoNet.init(NetworkConfig(width, blocks, seed), SCALING, 1.5 * REFERENCE_LOSS.G_c, 0.5 * REFERENCE_LOSS.R_c)


def test_inverse_minus_forward_is_data_term():
    s, m = suite(), small_model()
    fwd = s.total(m, mode="forward")
    inv = s.total(m, mode="inverse")
    assert "M" not in fwd.terms and "M" in inv.terms
    assert inv.total - fwd.total == pytest.approx(inv.terms["M"], rel=1e-9)


def test_inverse_requires_measurements():
    sets = make_collocation(L, T, 16, 8, 8, 8)
    s = LossSuite(sets, PROFILE, CONSTS, PULSE, W1)
    with pytest.raises(ValueError):
        s.total(small_model(), mode="inverse")
    with pytest.raises(ValueError):
        s.total(small_model(), mode="sideways")


def test_all_weights_zero_gives_zero():
    zero = LossWeights(**{k: 0.0 for k in LossWeights.__dataclass_fields__})
    assert suite(zero).total(small_model(), mode="inverse").total == 0.0


def test_terms_nonnegative_and_linear_in_weights():
    m = small_model(seed=2)
    base = suite()
    tripled = suite(base.weights.scaled(3.0))
    a = base.total(m, mode="inverse")
    b = tripled.total(m, mode="inverse")
    for k in TERMS:
        assert a.terms[k] >= 0
        assert b.terms[k] == pytest.approx(3.0 * a.terms[k], rel=1e-12)
    assert b.total == pytest.approx(3.0 * a.total, rel=1e-12)


def test_total_monotone_in_each_weight():
    m = small_model(seed=4)
    base = suite()
    ref = base.total(m, mode="inverse").total
    for name in LossWeights.__dataclass_fields__:
        bumped = LossWeights(**{**base.weights.__dict__, name: 2.0 * getattr(base.weights, name)})
        assert suite(bumped).total(m, mode="inverse").total >= ref


@pytest.mark.parametrize("term", TERMS)
def test_term_gradients_match_finite_differences(term):
    m = small_model(seed=1)
    s = suite(n=(24, 12, 12, 12))

    def loss(leaves):
        return s.terms(m, leaves, mode="inverse")[term]

    # include both loss-constant slots explicitly
    extra = [m.params.extent("log_Gc").start, m.params.extent("log_Rc").start]
    rng = np.random.default_rng(0)
    idx = np.unique(np.concatenate([rng.choice(len(m.params) - 2, 30, replace=False), extra]))
    report = finite_difference_check(loss, m.params, step=1e-6, indices=idx)
    assert report["max_relative_error"] < 1e-5


# -- consistency with the reference solver -----------------------------------

def fdm_field_stub(sol):
    """Stub model interpolating an FDM period: cubic spline in x, spectral in t (at grid times)."""
    k = np.fft.rfftfreq(sol.t.size, d=sol.dt) * 2j * np.pi
    p_t = np.fft.irfft(np.fft.rfft(sol.p, axis=0) * k[:, None], n=sol.t.size, axis=0)
    U_t = np.fft.irfft(np.fft.rfft(sol.U, axis=0) * k[:, None], n=sol.t.size, axis=0)
    splines = {name: CubicSpline(sol.x, data, axis=1) for name, data in
               dict(p=sol.p, U=sol.U, p_t=p_t, U_t=U_t).items()}

    def ev(name, deriv=0):
        def f(x, t):
            n = np.rint(t / sol.dt).astype(int) % sol.t.size
            cs = splines[name]
            out = np.empty(x.size)
            for i, (xi, ni) in enumerate(zip(x, n)):
                out[i] = cs(xi, deriv)[ni]
            return out

        return f

    return StubModel(p=ev("p"), U=ev("U"), p_t=ev("p_t"), U_t=ev("U_t"), p_x=ev("p", 1), U_x=ev("U", 1))


def pde_residual_on_fdm(config):
    sol = run_to_steady_state(config, PROFILE, CONSTS, REFERENCE_LOSS, PULSE)
    rng = np.random.default_rng(0)
    n = rng.integers(0, sol.t.size, 200)
    x = rng.uniform(0.005, L - 0.005, 200)
    E = np.column_stack([x, n * sol.dt])
    w = LossWeights.normalized(ScalingSpec(L, T, float(np.abs(sol.p).max()), float(np.abs(sol.U).max())), A0)
    return pde_loss(fdm_field_stub(sol), {}, E, PROFILE, CONSTS, w).item()


def test_pde_residual_small_on_fdm_and_shrinks_with_refinement():
    coarse = pde_residual_on_fdm(FdmConfig(dx=2e-3, dt=1e-6))
    fine = pde_residual_on_fdm(FdmConfig())
    assert fine < 1e-3
    assert fine < coarse
