"""Run configuration: typed sections, presets, TOML/JSON loading with strict keys.

Every field has a default.  A configuration file may set any subset of the
fields; unknown sections or keys are rejected so that typos fail loudly.  The
effective configuration is written back as canonical JSON, which is itself a
valid input file, so a run can be repeated from its own output directory.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .excitation import RosenbergParams
from .fdm import FdmConfig
from .geometry import TubeProfile
from .physics import REFERENCE_LOSS, LossConstants, PhysicalConstants
from .resonet import NetworkConfig
from .trainer import TrainConfig


class ConfigError(ValueError):
    """Invalid configuration file, key or value."""


@dataclass(frozen=True)
class ConstantsSection:
    rho: float = 1.20
    K: float = 1.39e5
    c: float = 340.0
    mu: float = 19.0e-6
    eta: float = 1.40
    lambda_th: float = 2.41e-2
    c_p: float = 1.01e3
    omega_c: float = 1.64e3


@dataclass(frozen=True)
class TubeSection:
    length: float = 0.1
    # (x, diameter) knots in metres; empty means the default two-section tube
    knots: tuple = ()
    d_inlet: float = 0.01
    d_outlet: float = 0.02


@dataclass(frozen=True)
class ExcitationSection:
    f0: float = 261.6
    amplitude: float = 1.0
    oq: float = 0.40
    cq: float = 0.16
    cutoff: float = 2000.0
    n_samples: int = 8192


@dataclass(frozen=True)
class FdmSection:
    dx: float = 1e-3
    dt: float = 0.5e-6
    periods_max: int = 200
    steady_tol: float = 1e-3
    asselin: float = 0.01
    # positions (m) written to waveforms.csv; empty means inlet and outlet
    probes: tuple = ()


@dataclass(frozen=True)
class LossSection:
    # values injected into the reference solver; the identification target
    G_c: float = REFERENCE_LOSS.G_c
    R_c: float = REFERENCE_LOSS.R_c
    # starting estimates for identification, as multiples of the truth
    init_G_factor: float = 1.5
    init_R_factor: float = 0.5


@dataclass(frozen=True)
class NetworkSection:
    width: int = 64
    blocks: int = 3
    time_gain: float = 1.0
    # output scales; 0 selects the automatic choice
    p_scale: float = 0.0
    U_scale: float = 0.0
    # pressure scale of the outlet residuals; 0 selects the automatic choice
    p_outlet_scale: float = 0.0


@dataclass(frozen=True)
class CollocationSection:
    n_E: int = 2000
    n_B: int = 1000
    n_C: int = 1000
    n_P: int = 1000
    n_M: int = 1000


@dataclass(frozen=True)
class WeightsSection:
    """Multipliers applied on top of the dimensionally normalized weights."""

    E1: float = 1.0
    E2: float = 1.0
    B: float = 1.0
    C: float = 1.0
    P0_U: float = 1.0
    P0_p: float = 1.0
    P1_U: float = 1.0
    P1_p: float = 1.0
    M: float = 1.0


@dataclass(frozen=True)
class TrainingSection:
    epochs: int = 20000
    lr: float = 1e-3
    # 0 keeps lr constant; otherwise geometric decay to this value
    lr_final: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    freeze_epochs: int = 2000
    checkpoint_every: int = 0
    noise_level: float = 0.0
    divergence_factor: float = 1e6
    log_every: int = 100


@dataclass(frozen=True)
class SensitivitySection:
    factor: float = 2.0


@dataclass(frozen=True)
class GradcheckSection:
    width: int = 16
    blocks: int = 2
    samples: int = 20
    step: float = 1e-6
    n_points: int = 32


@dataclass(frozen=True)
class PathsSection:
    # directory of an earlier fdm-forward run to compare the PINN against
    reference_fdm: str = ""


SECTIONS = {
    "constants": ConstantsSection,
    "tube": TubeSection,
    "excitation": ExcitationSection,
    "fdm": FdmSection,
    "loss": LossSection,
    "network": NetworkSection,
    "collocation": CollocationSection,
    "weights": WeightsSection,
    "training": TrainingSection,
    "sensitivity": SensitivitySection,
    "gradcheck": GradcheckSection,
    "paths": PathsSection,
}


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    constants: ConstantsSection = field(default_factory=ConstantsSection)
    tube: TubeSection = field(default_factory=TubeSection)
    excitation: ExcitationSection = field(default_factory=ExcitationSection)
    fdm: FdmSection = field(default_factory=FdmSection)
    loss: LossSection = field(default_factory=LossSection)
    network: NetworkSection = field(default_factory=NetworkSection)
    collocation: CollocationSection = field(default_factory=CollocationSection)
    weights: WeightsSection = field(default_factory=WeightsSection)
    training: TrainingSection = field(default_factory=TrainingSection)
    sensitivity: SensitivitySection = field(default_factory=SensitivitySection)
    gradcheck: GradcheckSection = field(default_factory=GradcheckSection)
    paths: PathsSection = field(default_factory=PathsSection)

    # -- serialization ----------------------------------------------------
    def to_dict(self) -> dict:
        out = asdict(self)
        out["tube"]["knots"] = [list(k) for k in self.tube.knots]
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def merged(self, data: dict) -> "RunConfig":
        """Copy with the (possibly partial) nested dict ``data`` applied."""
        if not isinstance(data, dict):
            raise ConfigError("configuration must be a table of sections")
        updates = {}
        for key, value in data.items():
            if key == "seed":
                updates["seed"] = _coerce("seed", int, value)
                continue
            if key not in SECTIONS:
                raise ConfigError(f"unknown config section {key!r}")
            if not isinstance(value, dict):
                raise ConfigError(f"section {key!r} must be a table")
            updates[key] = _merge_section(getattr(self, key), key, value)
        return replace(self, **updates)

    # -- domain objects ---------------------------------------------------
    def physical_constants(self) -> PhysicalConstants:
        return PhysicalConstants(**asdict(self.constants))

    def profile(self) -> TubeProfile:
        t = self.tube
        if t.knots:
            return TubeProfile(t.length, tuple((float(x), float(d)) for x, d in t.knots))
        return TubeProfile.two_section(l=t.length, d1=t.d_inlet, d2=t.d_outlet)

    def rosenberg(self) -> RosenbergParams:
        e = self.excitation
        return RosenbergParams(f0=e.f0, amplitude=e.amplitude, oq=e.oq, cq=e.cq, cutoff=e.cutoff)

    def fdm_config(self) -> FdmConfig:
        f = self.fdm
        return FdmConfig(dx=f.dx, dt=f.dt, periods_max=f.periods_max, steady_tol=f.steady_tol, asselin=f.asselin)

    def probe_positions(self) -> tuple:
        return self.fdm.probes or (0.0, self.tube.length)

    def true_loss(self) -> LossConstants:
        return LossConstants(self.loss.G_c, self.loss.R_c)

    def network_config(self) -> NetworkConfig:
        n = self.network
        return NetworkConfig(width=n.width, blocks=n.blocks, seed=self.seed, time_gain=n.time_gain)

    def train_config(self) -> TrainConfig:
        t = self.training
        return TrainConfig(
            epochs=t.epochs, lr=t.lr, beta1=t.beta1, beta2=t.beta2, eps=t.eps,
            freeze_epochs=t.freeze_epochs, seed=self.seed, checkpoint_every=t.checkpoint_every,
            noise_level=t.noise_level, divergence_factor=t.divergence_factor, lr_final=t.lr_final,
        )

    def validate(self) -> "RunConfig":
        """Build every domain object once so bad values surface as ConfigError."""
        try:
            self.physical_constants()
            self.profile()
            self.rosenberg()
            self.fdm_config().cells(self.tube.length)
            self.true_loss()
            self.network_config()
            self.train_config()
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc)) from exc
        c = self.collocation
        if min(c.n_E, c.n_B, c.n_C, c.n_P, c.n_M) < 1:
            raise ConfigError("collocation set sizes must be >= 1")
        if any(not 0.0 <= x <= self.tube.length for x in self.fdm.probes):
            raise ConfigError("fdm.probes must lie within the tube")
        if self.excitation.n_samples < 16:
            raise ConfigError("excitation.n_samples must be >= 16")
        n = self.network
        if min(n.p_scale, n.U_scale, n.p_outlet_scale) < 0:
            raise ConfigError("output scales must be >= 0 (0 selects automatic)")
        if min(asdict(self.weights).values()) < 0:
            raise ConfigError("weight multipliers must be >= 0")
        if not (self.loss.init_G_factor > 0 and self.loss.init_R_factor > 0):
            raise ConfigError("initial loss-constant factors must be positive")
        if self.training.log_every < 1:
            raise ConfigError("training.log_every must be >= 1")
        if self.sensitivity.factor <= 0:
            raise ConfigError("sensitivity.factor must be positive")
        g = self.gradcheck
        if min(g.width, g.blocks, g.samples, g.n_points) < 1 or g.step <= 0:
            raise ConfigError("gradcheck sizes must be >= 1 and step > 0")
        return self


def _coerce(name, kind, value):
    if kind is bool or isinstance(value, bool):
        raise ConfigError(f"{name}: booleans are not accepted here")
    if kind is int:
        if isinstance(value, float) and value.is_integer():
            value = int(value)
        if not isinstance(value, int):
            raise ConfigError(f"{name}: expected an integer, got {value!r}")
        return value
    if kind is float:
        if not isinstance(value, (int, float)):
            raise ConfigError(f"{name}: expected a number, got {value!r}")
        return float(value)
    if kind is str:
        if not isinstance(value, str):
            raise ConfigError(f"{name}: expected a string, got {value!r}")
        return value
    if kind is tuple and name.endswith("probes"):
        try:
            return tuple(_coerce(name, float, v) for v in value)
        except TypeError:
            raise ConfigError(f"{name}: expected a list of positions") from None
    if kind is tuple:
        try:
            knots = tuple((float(x), float(d)) for x, d in value)
        except (TypeError, ValueError):
            raise ConfigError(f"{name}: expected a list of [x, diameter] pairs") from None
        return knots
    raise ConfigError(f"{name}: unsupported field type")


_KINDS = {"float": float, "int": int, "str": str, "tuple": tuple}


def _merge_section(current, section: str, values: dict):
    known = {f.name: f for f in fields(current)}
    updates = {}
    for key, value in values.items():
        if key not in known:
            raise ConfigError(f"unknown key {section}.{key}")
        kind = _KINDS[known[key].type] if isinstance(known[key].type, str) else known[key].type
        updates[key] = _coerce(f"{section}.{key}", kind, value)
    return replace(current, **updates)


PRESETS = {
    # scaled-down run that finishes in tens of minutes on one core
    "desk": {
        "network": {"time_gain": 6.0},
        "weights": {"E1": 10.0, "E2": 10.0, "B": 100.0},
        "training": {"lr_final": 1e-5},
    },
    # full-size network and schedule
    "paper": {
        "network": {"width": 200, "blocks": 5},
        "collocation": {"n_E": 5000},
        "training": {"epochs": 100000, "freeze_epochs": 10000},
    },
}


def load_config(path: str | Path | None = None, preset: str | None = None, seed: int | None = None) -> RunConfig:
    """Defaults, then the preset, then the file, then the explicit seed."""
    cfg = RunConfig()
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}")
        cfg = cfg.merged(PRESETS[preset])
    if path is not None:
        cfg = cfg.merged(read_config_file(path))
    if seed is not None:
        cfg = replace(cfg, seed=int(seed))
    return cfg.validate()


def read_config_file(path: str | Path) -> dict:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc.strerror}") from exc
    try:
        if path.suffix == ".json":
            return json.loads(raw)
        return tomllib.loads(raw.decode())
    except (ValueError, UnicodeDecodeError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
