"""Tube shape: piecewise-constant diameter sections joined by a monotone cubic."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def pchip_slopes(x, y) -> np.ndarray:
    """Fritsch-Carlson (monotone) knot slopes.

    Interior slopes are the weighted harmonic mean of the neighbouring secants,
    or zero when the secants disagree in sign or one of them vanishes.  End
    slopes use the one-sided three-point formula, clipped to stay
    shape-preserving.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim != 1 or x.shape != y.shape or x.size < 2:
        raise ValueError("need at least two knots given as matching 1-D arrays")
    h = np.diff(x)
    if np.any(h <= 0):
        raise ValueError("knot positions must be strictly increasing")
    delta = np.diff(y) / h
    if x.size == 2:
        return np.array([delta[0], delta[0]])

    m = np.zeros_like(y)
    w1 = 2.0 * h[1:] + h[:-1]
    w2 = h[1:] + 2.0 * h[:-1]
    d0, d1 = delta[:-1], delta[1:]
    same_sign = (np.sign(d0) * np.sign(d1)) > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        hm = (w1 + w2) / (w1 / d0 + w2 / d1)
    m[1:-1] = np.where(same_sign, hm, 0.0)
    m[0] = _end_slope(h[0], h[1], delta[0], delta[1])
    m[-1] = _end_slope(h[-1], h[-2], delta[-1], delta[-2])
    return m


def _end_slope(h0, h1, d0, d1):
    d = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1)
    if np.sign(d) != np.sign(d0):
        return 0.0
    if np.sign(d0) != np.sign(d1) and abs(d) > abs(3.0 * d0):
        return 3.0 * d0
    return d


@dataclass(frozen=True)
class TubeProfile:
    """Diameter d(x) on [0, l], cubic-Hermite interpolated through ``knots``."""

    l: float
    knots: tuple[tuple[float, float], ...]
    slopes: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        knots = tuple((float(x), float(d)) for x, d in self.knots)
        object.__setattr__(self, "knots", knots)
        xs = np.array([k[0] for k in knots])
        ds = np.array([k[1] for k in knots])
        if not self.l > 0:
            raise ValueError("tube length must be positive")
        if xs.size < 2 or xs[0] != 0.0 or not np.isclose(xs[-1], self.l, rtol=0, atol=1e-12 * self.l):
            raise ValueError("knots must start at x=0 and end at x=l")
        if np.any(ds <= 0):
            raise ValueError("diameters must be strictly positive")
        object.__setattr__(self, "slopes", pchip_slopes(xs, ds))

    @classmethod
    def two_section(cls, l=0.1, d1=0.01, d2=0.02, start=0.4, stop=0.6):
        """Diameter d1 up to ``start*l``, d2 from ``stop*l``, monotone transition between."""
        if not 0.0 < start < stop < 1.0:
            raise ValueError("need 0 < start < stop < 1")
        return cls(l=l, knots=((0.0, d1), (start * l, d1), (stop * l, d2), (l, d2)))

    @property
    def xs(self) -> np.ndarray:
        return np.array([k[0] for k in self.knots])

    @property
    def ds(self) -> np.ndarray:
        return np.array([k[1] for k in self.knots])

    def _locate(self, x):
        x = np.asarray(x, dtype=float)
        tol = 1e-12 * self.l
        if np.any(~np.isfinite(x)) or np.any(x < -tol) or np.any(x > self.l + tol):
            raise ValueError(f"position outside [0, {self.l}]")
        x = np.clip(x, 0.0, self.l)
        xs = self.xs
        k = np.clip(np.searchsorted(xs, x, side="right") - 1, 0, xs.size - 2)
        h = xs[k + 1] - xs[k]
        s = (x - xs[k]) / h
        return x, k, h, s

    def diameter_at(self, x):
        x_arr, k, h, s = self._locate(x)
        ds, m = self.ds, self.slopes
        h00 = (1 + 2 * s) * (1 - s) ** 2
        h10 = s * (1 - s) ** 2
        h01 = s**2 * (3 - 2 * s)
        h11 = s**2 * (s - 1)
        d = h00 * ds[k] + h10 * h * m[k] + h01 * ds[k + 1] + h11 * h * m[k + 1]
        return float(d) if np.ndim(x) == 0 else d

    def diameter_slope_at(self, x):
        """d'(x), the analytic derivative of the interpolant."""
        x_arr, k, h, s = self._locate(x)
        ds, m = self.ds, self.slopes
        dh00 = 6 * s * (s - 1) / h
        dh10 = (1 - s) * (1 - 3 * s)
        dh01 = -6 * s * (s - 1) / h
        dh11 = s * (3 * s - 2)
        out = dh00 * ds[k] + dh10 * m[k] + dh01 * ds[k + 1] + dh11 * m[k + 1]
        return float(out) if np.ndim(x) == 0 else out

    def radius_at(self, x):
        return 0.5 * self.diameter_at(x)

    def area_at(self, x):
        return np.pi * self.diameter_at(x) ** 2 / 4.0

    def circumference_at(self, x):
        return np.pi * self.diameter_at(x)
