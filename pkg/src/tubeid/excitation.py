"""Periodic Rosenberg glottal-pulse excitation, ideally low-passed."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class RosenbergParams:
    f0: float = 261.6  # Hz, C4
    amplitude: float = 1.0  # m/s peak particle velocity
    oq: float = 0.40  # opening phase, fraction of the period
    cq: float = 0.16  # closing phase, fraction of the period
    cutoff: float = 2000.0  # Hz

    def __post_init__(self):
        if not (self.f0 > 0 and self.amplitude > 0 and self.oq > 0 and self.cq > 0):
            raise ValueError(f"invalid Rosenberg parameters {self}")
        if self.oq + self.cq > 1.0:
            raise ValueError("oq + cq must not exceed 1")
        if not self.cutoff > self.f0:
            raise ValueError("cutoff must lie above the fundamental")

    @property
    def period(self) -> float:
        return 1.0 / self.f0


class PeriodicWaveform:
    """One period of a uniformly sampled periodic signal.

    Sample ``k`` sits at ``t = k / (n f0)``.  Evaluation between samples uses
    the trigonometric interpolant, so a band-limited waveform is reproduced
    exactly in continuous time.
    """

    def __init__(self, f0: float, samples):
        samples = np.asarray(samples, dtype=float)
        if samples.ndim != 1 or samples.size == 0:
            raise ValueError("waveform needs a non-empty 1-D sample array")
        if not f0 > 0:
            raise ValueError("f0 must be positive")
        self.f0 = float(f0)
        self.samples = samples.copy()
        self.samples.flags.writeable = False
        self._spectrum = np.fft.rfft(self.samples)

    def __len__(self):
        return self.samples.size

    def __repr__(self):
        return f"PeriodicWaveform(f0={self.f0}, n={self.samples.size})"

    @property
    def period(self) -> float:
        return 1.0 / self.f0

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.samples.size) / (self.samples.size * self.f0)

    @property
    def spectrum(self) -> np.ndarray:
        """One-sided DFT of the stored period (read-only copy)."""
        return self._spectrum.copy()

    def active_harmonics(self) -> np.ndarray:
        """Indices k >= 1 of harmonics above round-off (1e-13 of the largest bin)."""
        mag = np.abs(self._spectrum)
        floor = 1e-13 * mag.max() if mag.size else 0.0
        return np.flatnonzero(mag[1:] > floor) + 1

    def energy(self) -> float:
        return float(np.sum(self.samples**2))

    def scaled(self, factor: float) -> "PeriodicWaveform":
        return PeriodicWaveform(self.f0, factor * self.samples)

    def sample(self, t):
        """Evaluate the periodic trigonometric interpolant at time(s) ``t``."""
        t = np.asarray(t, dtype=float)
        if np.any(~np.isfinite(t)):
            raise ValueError("sample times must be finite")
        n = self.samples.size
        phase = 2.0 * np.pi * np.mod(t * self.f0, 1.0)
        ks = self.active_harmonics()
        out = np.full(t.shape, self._spectrum[0].real / n)
        nyq = n // 2 if n % 2 == 0 else None
        flat_phase = phase.reshape(-1)
        flat_out = out.reshape(-1)
        chunk = 512
        for start in range(0, flat_phase.size, chunk):
            ph = flat_phase[start : start + chunk]
            acc = np.zeros_like(ph)
            for k0 in range(0, ks.size, 1024):
                kk = ks[k0 : k0 + 1024]
                coef = self._spectrum[kk]
                weight = np.where(kk == nyq, 1.0, 2.0)
                arg = np.outer(ph, kk)
                acc += (np.cos(arg) * (weight * coef.real) - np.sin(arg) * (weight * coef.imag)).sum(axis=1)
            flat_out[start : start + chunk] += acc / n
        return float(out) if out.ndim == 0 else out


def rosenberg_pulse(t, params: RosenbergParams):
    """Raw (not band-limited) Rosenberg pulse: cosine opening then quarter-cosine closing."""
    t = np.asarray(t, dtype=float)
    T = params.period
    tau = np.mod(t, T)
    tp = params.oq * T
    tn = params.cq * T
    opening = 0.5 * (1.0 - np.cos(np.pi * tau / tp))
    closing = np.cos(np.pi * (tau - tp) / (2.0 * tn))
    out = np.where(tau < tp, opening, np.where(tau < tp + tn, closing, 0.0))
    out = params.amplitude * out
    return float(out) if out.ndim == 0 else out


def harmonic_limit(f0: float, cutoff: float) -> int:
    """Highest harmonic index whose frequency does not exceed ``cutoff``."""
    return int(np.floor(cutoff / f0 + 1e-12))


def bandlimit(waveform: PeriodicWaveform, cutoff: float) -> PeriodicWaveform:
    """Zero every harmonic above ``cutoff``; DC is kept."""
    if len(waveform) == 0:
        raise ValueError("empty waveform")
    spec = waveform.spectrum
    kmax = harmonic_limit(waveform.f0, cutoff)
    spec[kmax + 1 :] = 0.0
    samples = np.fft.irfft(spec, n=len(waveform))
    return PeriodicWaveform(waveform.f0, samples)


def rosenberg_waveform(params: RosenbergParams, n_samples: int = 8192, filtered: bool = True) -> PeriodicWaveform:
    """One period of the excitation velocity, band-limited unless ``filtered=False``."""
    if n_samples < 2:
        raise ValueError("need at least two samples per period")
    t = np.arange(n_samples) / (n_samples * params.f0)
    raw = PeriodicWaveform(params.f0, rosenberg_pulse(t, params))
    return bandlimit(raw, params.cutoff) if filtered else raw
