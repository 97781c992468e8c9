"""Residual snake networks for the tube fields and the radiated flow.

The upper network maps scaled ``(x/l, t/T)`` to scaled ``(p, U)``; the lower
network maps ``t/T`` to the scaled radiation flow ``U_r``.  Both are

    h = W_in z + b_in
    h = h + W2 snake(W1 h + b1) + b2      (repeated ``blocks`` times)
    y = W_out h + b_out

The loss constants are stored as logarithms so that they stay positive.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass

import numpy as np

from .autodiff import ParameterVector, Tensor, check_finite, seed_inputs, snake_jet

_MAGIC = b"TUBEIDCK"


@dataclass(frozen=True)
class NetworkConfig:
    width: int = 64
    blocks: int = 3
    seed: int = 0
    # Multiplies the initial input-layer weights acting on t (both networks);
    # > 1 starts the network with higher temporal frequencies.
    time_gain: float = 1.0

    def __post_init__(self):
        if self.width < 1 or self.blocks < 1:
            raise ValueError("width and blocks must be at least 1")
        if not self.time_gain > 0:
            raise ValueError("time_gain must be positive")


@dataclass(frozen=True)
class ScalingSpec:
    x_scale: float  # tube length
    t_scale: float  # period
    p_scale: float  # Pa
    U_scale: float  # m^3/s

    def __post_init__(self):
        for k, v in asdict(self).items():
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"{k} must be positive, got {v!r}")


def _mlp_shapes(prefix, n_in, n_out, width, blocks):
    shapes = {f"{prefix}.in.W": (n_in, width), f"{prefix}.in.b": (width,)}
    for i in range(blocks):
        shapes[f"{prefix}.{i}.W1"] = (width, width)
        shapes[f"{prefix}.{i}.b1"] = (width,)
        shapes[f"{prefix}.{i}.W2"] = (width, width)
        shapes[f"{prefix}.{i}.b2"] = (width,)
    shapes[f"{prefix}.out.W"] = (width, n_out)
    shapes[f"{prefix}.out.b"] = (n_out,)
    return shapes


def parameter_shapes(config: NetworkConfig) -> dict:
    shapes = {}
    shapes.update(_mlp_shapes("upper", 2, 2, config.width, config.blocks))
    shapes.update(_mlp_shapes("lower", 1, 1, config.width, config.blocks))
    shapes["log_Gc"] = ()
    shapes["log_Rc"] = ()
    return shapes


def parameter_count(width: int, blocks: int) -> int:
    """Total trainables: both networks plus the two loss-constant slots."""
    block = 2 * (width * width + width)
    upper = 2 * width + width + blocks * block + 2 * width + 2
    lower = width + width + blocks * block + width + 1
    return upper + lower + 2


def _linear(h: Tensor, W: Tensor, b: Tensor) -> Tensor:
    z = h @ W
    if h.shape[0] == 1:
        return z + b
    mask = np.zeros((h.shape[0], 1, 1))
    mask[0] = 1.0
    return z + b * mask  # bias only shifts the primal slice


def _mlp(leaves, prefix, jet: Tensor, blocks: int) -> Tensor:
    h = _linear(jet, leaves[f"{prefix}.in.W"], leaves[f"{prefix}.in.b"])
    for i in range(blocks):
        a = _linear(h, leaves[f"{prefix}.{i}.W1"], leaves[f"{prefix}.{i}.b1"])
        inner = _linear(snake_jet(a), leaves[f"{prefix}.{i}.W2"], leaves[f"{prefix}.{i}.b2"])
        h = check_finite(h + inner, f"{prefix} block {i}")
    return _linear(h, leaves[f"{prefix}.out.W"], leaves[f"{prefix}.out.b"])


class ResoNet:
    def __init__(self, config: NetworkConfig, scaling: ScalingSpec, params: ParameterVector):
        self.config = config
        self.scaling = scaling
        self.params = params
        expected = parameter_count(config.width, config.blocks)
        if len(params) != expected:
            raise ValueError(f"parameter vector has {len(params)} entries, expected {expected}")

    @classmethod
    def init(cls, config: NetworkConfig, scaling: ScalingSpec, G_c: float, R_c: float) -> "ResoNet":
        """Fan-in scaled normal weights, zero biases, loss constants at ``G_c``, ``R_c``.

        The input-layer rows that multiply t are further scaled by ``time_gain``.
        """
        params = ParameterVector(parameter_shapes(config))
        rng = np.random.default_rng(config.seed)
        for name, (_, shape) in params.layout.items():
            if name.endswith(("W", "W1", "W2")):
                params.view(name)[...] = rng.standard_normal(shape) / math.sqrt(shape[0])
        params.view("upper.in.W")[1] *= config.time_gain
        params.view("lower.in.W")[0] *= config.time_gain
        model = cls(config, scaling, params)
        model.set_loss_constants(G_c, R_c)
        return model

    # -- loss constants ---------------------------------------------------
    def set_loss_constants(self, G_c: float, R_c: float) -> None:
        if not (G_c > 0 and R_c > 0):
            raise ValueError("loss constants must be positive")
        self.params.view("log_Gc")[...] = math.log(G_c)
        self.params.view("log_Rc")[...] = math.log(R_c)

    @property
    def G_c(self) -> float:
        return math.exp(float(self.params.view("log_Gc")))

    @property
    def R_c(self) -> float:
        return math.exp(float(self.params.view("log_Rc")))

    def loss_constants(self, leaves):
        return leaves["log_Gc"].exp(), leaves["log_Rc"].exp()

    # -- graph-building evaluation ------------------------------------------
    def upper(self, leaves, x, t, derivs=("x", "t")) -> dict:
        """Physical p, U and the requested input derivatives as graph tensors."""
        sc = self.scaling
        x = np.asarray(x, dtype=float)
        t = np.asarray(t, dtype=float)
        z = np.stack([x / sc.x_scale, t / sc.t_scale], axis=-1)
        cols = {"x": 0, "t": 1}
        jet = seed_inputs(z, [cols[d] for d in derivs])
        out = _mlp(leaves, "upper", jet, self.config.blocks)
        res = {"p": out[0, :, 0] * sc.p_scale, "U": out[0, :, 1] * sc.U_scale}
        for i, d in enumerate(derivs):
            s = sc.x_scale if d == "x" else sc.t_scale
            res[f"p_{d}"] = out[1 + i, :, 0] * (sc.p_scale / s)
            res[f"U_{d}"] = out[1 + i, :, 1] * (sc.U_scale / s)
        return res

    def lower(self, leaves, t, with_dt=True) -> dict:
        """Radiation flow U_r and (optionally) dU_r/dt as graph tensors."""
        sc = self.scaling
        z = np.asarray(t, dtype=float)[:, None] / sc.t_scale
        jet = seed_inputs(z, [0] if with_dt else [])
        out = _mlp(leaves, "lower", jet, self.config.blocks)
        res = {"Ur": out[0, :, 0] * sc.U_scale}
        if with_dt:
            res["Ur_t"] = out[1, :, 0] * (sc.U_scale / sc.t_scale)
        return res

    # -- numeric convenience -------------------------------------------------
    def _check_range(self, x=None, t=None):
        sc = self.scaling
        tol = 1e-9
        if x is not None and (np.any(x < -tol * sc.x_scale) or np.any(x > sc.x_scale * (1 + tol))):
            raise ValueError("x outside [0, l]")
        if t is not None and (np.any(t < -tol * sc.t_scale) or np.any(t > sc.t_scale * (1 + tol))):
            raise ValueError("t outside [0, T]")

    def forward_pU(self, x, t):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        t = np.atleast_1d(np.asarray(t, dtype=float))
        x, t = np.broadcast_arrays(x, t)
        self._check_range(x, t)
        out = self.upper(self.params.leaves(), x.ravel(), t.ravel(), derivs=())
        return out["p"].data.reshape(x.shape), out["U"].data.reshape(x.shape)

    def forward_Ur(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        self._check_range(t=t)
        return self.lower(self.params.leaves(), t.ravel(), with_dt=False)["Ur"].data.reshape(t.shape)

    # -- checkpoints --------------------------------------------------------
    def save(self, path, extra: dict | None = None) -> None:
        """JSON header (length-prefixed) followed by little-endian float64 parameters."""
        header = {
            "format": "tubeid-checkpoint-1",
            "network": asdict(self.config),
            "scaling": asdict(self.scaling),
            "layout": [[k, list(s)] for k, (_, s) in self.params.layout.items()],
            "n_params": len(self.params),
            "extra": extra or {},
        }
        blob = json.dumps(header, sort_keys=True).encode()
        with open(path, "wb") as f:
            f.write(_MAGIC)
            f.write(struct.pack("<Q", len(blob)))
            f.write(blob)
            f.write(self.params.values.astype("<f8").tobytes())

    @classmethod
    def load(cls, path) -> "ResoNet":
        with open(path, "rb") as f:
            if f.read(len(_MAGIC)) != _MAGIC:
                raise ValueError(f"{path} is not a checkpoint")
            (n,) = struct.unpack("<Q", f.read(8))
            header = json.loads(f.read(n))
            values = np.frombuffer(f.read(), dtype="<f8")
        config = NetworkConfig(**header["network"])
        scaling = ScalingSpec(**header["scaling"])
        params = ParameterVector(parameter_shapes(config))
        if values.size != len(params):
            raise ValueError("checkpoint payload size does not match its header")
        params.values[:] = values
        return cls(config, scaling, params)
