"""Space-time fields and discrete X^{s,b} norms.

A :class:`SpaceTimeField` samples ``u(t, x, y)`` at ``t_k = t_min + k dt``,
``dt = (t_max - t_min) / nt``.  Its modulation spectrum is taken in one of
two frames:

* interaction frame (default): demodulate ``v_hat(t) = exp(-i t omega) u_hat(t)``
  and Fourier transform in ``t``; the time frequency is the modulation
  ``sigma = tau - omega`` directly.  This needs the field to vanish near
  both ends of the window but not to be resolved at the dispersive rate.
* lattice frame (``periodic=True``): transform ``u_hat(t)`` itself on the
  periodic time lattice and set ``sigma = tau_k - omega``.

Both give ``||u||^2 = dt dx dy / (nt nx ny) sum |F|^2`` for ``s = b = 0``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.fft as sfft
from scipy.interpolate import CubicSpline

from . import grid as _grid
from .dyadic import smoothstep
from .dynamics import cumulative_simpson_complex
from .errors import Inapplicable, ParameterRange, SupportLeakage
from .grid import RealField2D, SpectralGrid

#: concrete value of the "+" in exponents such as ``1/2+``
B_PLUS = 0.01
DEFAULT_WINDOW = (-2.0, 3.0)
DEFAULT_NT = 256
LEAKAGE_TOL = 1e-10


# --- time cutoff -------------------------------------------------------------
def phi(t):
    """Smooth bump: 1 on ``[0, 1]``, 0 outside ``(-1, 2)``."""
    t = np.asarray(t, dtype=float)
    return smoothstep(t + 1.0) * smoothstep(2.0 - t)


@dataclass(frozen=True)
class TimeCutoff:
    T: float = 1.0

    def __post_init__(self):
        if not 0 < self.T <= 1:
            raise ParameterRange(f"T must lie in (0, 1], got {self.T}")

    def __call__(self, t):
        return phi(np.asarray(t, dtype=float) / self.T)


def hb_norm(samples, dt: float, b: float) -> float:
    """``H^b`` norm of a compactly supported 1D signal sampled at step ``dt``."""
    samples = np.asarray(samples)
    n = samples.shape[0]
    tau = 2 * np.pi * sfft.fftfreq(n, dt)
    spec = sfft.fft(samples)
    w = (1.0 + tau ** 2) ** b
    return float(np.sqrt(dt / n * np.sum(w * np.abs(spec) ** 2)))


def hb_norm_phi(T: float, b: float, window=DEFAULT_WINDOW, nt: int = DEFAULT_NT,
                refine: int = 4) -> float:
    """``||phi_T||_{H^b}`` on a lattice ``refine`` times finer than ``nt``."""
    t_min, t_max = window
    n = nt * refine
    dt = (t_max - t_min) / n
    t = t_min + dt * np.arange(n)
    return hb_norm(TimeCutoff(T)(t), dt, b)


# --- space-time fields -------------------------------------------------------
class SpaceTimeField:
    """Real samples ``values[k, ix, iy]`` of a field on a time window."""

    def __init__(self, grid: SpectralGrid, t_min: float, t_max: float, values,
                 periodic: bool = False):
        values = np.asarray(values, dtype=float)
        if values.ndim != 3 or values.shape[1:] != grid.shape:
            raise ValueError(f"values must have shape (nt, {grid.nx}, {grid.ny})")
        if values.shape[0] % 2:
            raise ValueError("nt must be even")
        if not t_max > t_min:
            raise ValueError("empty time window")
        self.grid = grid
        self.t_min = float(t_min)
        self.t_max = float(t_max)
        self.values = values
        self.values.flags.writeable = False
        self.periodic = periodic
        self._spatial = None
        self._modulated = None

    # -- construction --
    @classmethod
    def from_interaction(cls, grid, t_min, t_max, v_hat, periodic=False):
        """Build from interaction-frame samples ``v_hat[k] = W(-t_k) u_hat(t_k)``."""
        v_hat = np.asarray(v_hat)
        nt = v_hat.shape[0]
        t = t_min + (t_max - t_min) / nt * np.arange(nt)
        spatial = v_hat * np.exp(1j * t[:, None, None] * grid.omega[None])
        values = sfft.irfft2(spatial, s=grid.shape, axes=(1, 2), workers=_grid.FFT_WORKERS)
        f = cls(grid, t_min, t_max, values, periodic)
        f._spatial = spatial
        return f

    @classmethod
    def linear_flow(cls, f0: RealField2D, T: float = 1.0, window=DEFAULT_WINDOW,
                    nt: int = DEFAULT_NT):
        """``phi_T(t) W(t) f0`` sampled on ``window``."""
        t_min, t_max = window
        t = t_min + (t_max - t_min) / nt * np.arange(nt)
        v = TimeCutoff(T)(t)[:, None, None] * f0.spectrum[None]
        return cls.from_interaction(f0.grid, t_min, t_max, v)

    @classmethod
    def from_snapshots(cls, grid, times, values, periodic=False):
        """Wrap uniformly spaced samples ``values[k]`` at ``times[k]``."""
        times = np.asarray(times, dtype=float)
        dt = times[1] - times[0]
        if not np.allclose(np.diff(times), dt, rtol=1e-9, atol=1e-12):
            raise ValueError("sample times must be uniform")
        return cls(grid, times[0], times[-1] + dt, values, periodic)

    # -- geometry --
    @property
    def nt(self) -> int:
        return self.values.shape[0]

    @property
    def dt(self) -> float:
        return (self.t_max - self.t_min) / self.nt

    @property
    def times(self):
        return self.t_min + self.dt * np.arange(self.nt)

    @property
    def full_bracket(self):
        return self.grid.bracket

    def with_values(self, values):
        return SpaceTimeField(self.grid, self.t_min, self.t_max, values, self.periodic)

    def __mul__(self, c):
        return self.with_values(self.values * c)

    __rmul__ = __mul__

    def __add__(self, other):
        return self.with_values(self.values + other.values)

    def times_cutoff(self, cutoff):
        """Pointwise product with a function of ``t``."""
        return self.with_values(self.values * cutoff(self.times)[:, None, None])

    # -- transforms --
    @property
    def spatial_spectrum(self):
        if self._spatial is None:
            self._spatial = sfft.rfft2(self.values, axes=(1, 2), workers=_grid.FFT_WORKERS)
        return self._spatial

    def interaction_samples(self):
        """``W(-t_k) u_hat(t_k)`` for every sample."""
        back = np.exp(-1j * self.times[:, None, None] * self.grid.omega[None])
        return self.spatial_spectrum * back

    def modulated_spectrum(self):
        """``(F, sigma)``: 3D coefficients and the modulation at each entry."""
        if self._modulated is None:
            tau = 2 * np.pi * sfft.fftfreq(self.nt, self.dt)
            if self.periodic:
                coeffs = sfft.fft(self.spatial_spectrum, axis=0, workers=_grid.FFT_WORKERS)
                sigma = tau[:, None, None] - self.grid.omega[None]
            else:
                coeffs = sfft.fft(self.interaction_samples(), axis=0,
                                  workers=_grid.FFT_WORKERS)
                sigma = np.broadcast_to(tau[:, None, None], coeffs.shape)
            self._modulated = (coeffs, sigma)
        return self._modulated

    def from_modulated_spectrum(self, coeffs):
        """Inverse of :meth:`modulated_spectrum` in the same frame."""
        samples = sfft.ifft(coeffs, axis=0, workers=_grid.FFT_WORKERS)
        if self.periodic:
            spatial = samples
            values = sfft.irfft2(spatial, s=self.grid.shape, axes=(1, 2),
                                 workers=_grid.FFT_WORKERS)
            return SpaceTimeField(self.grid, self.t_min, self.t_max, values, True)
        return SpaceTimeField.from_interaction(self.grid, self.t_min, self.t_max, samples)

    # -- norms --
    def check_support(self):
        if self.periodic:
            return
        peak = np.max(np.abs(self.values))
        edge = max(np.max(np.abs(self.values[0])), np.max(np.abs(self.values[-1])))
        if edge > LEAKAGE_TOL * peak:
            raise SupportLeakage(
                f"boundary samples reach {edge / peak:.2e} of the peak amplitude")

    def l2_norm(self) -> float:
        g = self.grid
        return float(np.sqrt(self.dt * g.cell_area * np.sum(self.values ** 2)))

    def lp_norm(self, p: float) -> float:
        g = self.grid
        return float((self.dt * g.cell_area * np.sum(np.abs(self.values) ** p)) ** (1 / p))

    def slice_hs_norms(self, s: float):
        g = self.grid
        w = g.bracket ** (2 * s)
        return np.array([np.sqrt(g.spectral_l2_sq(sp, w)) for sp in self.spatial_spectrum])

    def is_zero(self) -> bool:
        return not np.any(self.values)


def xsb_norm(f: SpaceTimeField, s: float, b: float) -> float:
    """Discrete ``X^{s,b}`` norm of a compactly supported (or periodic) field."""
    f.check_support()
    g = f.grid
    coeffs, sigma = f.modulated_spectrum()
    w = g.hermitian_weight * g.bracket ** (2 * s)
    total = 0.0
    for k in range(f.nt):  # slice-wise keeps the temporaries small
        wk = w * (1.0 + sigma[k] ** 2) ** b
        total += float(np.sum(wk * np.abs(coeffs[k]) ** 2))
    return float(np.sqrt(total * f.dt * g.cell_area / (f.nt * g.nx * g.ny)))


def _ratio(num, den, what):
    if den == 0:
        raise Inapplicable(f"{what}: zero denominator")
    return num / den


# --- estimate checks ---------------------------------------------------------
def check_linear_estimate(f0: RealField2D, s: float, b: float, T: float,
                          window=DEFAULT_WINDOW, nt: int = DEFAULT_NT) -> float:
    """``||phi_T W f0||_{X^{s,b}} / (T^{1/2-b} ||f0||_{H^s})``."""
    if b < 0:
        raise ParameterRange("b must be non-negative")
    TimeCutoff(T)
    den = T ** (0.5 - b) * _grid.sobolev_norm(f0, s)
    if den == 0:
        raise Inapplicable("zero initial datum")
    lhs = xsb_norm(SpaceTimeField.linear_flow(f0, T, window, nt), s, b)
    return lhs / den


def truncated_duhamel(g: SpaceTimeField, T: float) -> SpaceTimeField:
    """``phi_T(t) int_0^t W(t - t') g(t') dt'`` by Simpson quadrature."""
    v = g.interaction_samples()
    t = g.times
    F = cumulative_simpson_complex(v, dx=g.dt, axis=0, initial=0)
    F0 = CubicSpline(t, F, axis=0)(0.0)
    cut = TimeCutoff(T)(t)[:, None, None]
    return SpaceTimeField.from_interaction(g.grid, g.t_min, g.t_max, cut * (F - F0[None]))


def check_duhamel_estimate(g: SpaceTimeField, s: float, b: float, bprime: float,
                           T: float) -> float:
    """``||phi_T int_0^t W(t-t') g||_{X^{s,b}} / (T^{1-b+b'} ||g||_{X^{s,b'}})``."""
    if not (-0.5 < bprime < 0 < b <= 1 + bprime):
        raise ParameterRange(f"need -1/2 < b' < 0 < b <= 1 + b', got b={b}, b'={bprime}")
    TimeCutoff(T)
    if g.is_zero():
        raise Inapplicable("zero forcing")
    den = T ** (1 - b + bprime) * xsb_norm(g, s, bprime)
    return _ratio(xsb_norm(truncated_duhamel(g, T), s, b), den, "duhamel")


def check_time_shrink(f: SpaceTimeField, s: float, b: float, bprime: float,
                      T: float) -> float:
    """``||phi_T u||_{X^{s,b'}} / (T^{b-b'} ||phi_T u||_{X^{s,b}})``."""
    if not 0 < b - bprime < 0.5:
        raise ParameterRange(f"need 0 < b - b' < 1/2, got {b - bprime}")
    u = f.times_cutoff(TimeCutoff(T))
    if u.is_zero():
        raise Inapplicable("zero field")
    den = T ** (b - bprime) * xsb_norm(u, s, b)
    return _ratio(xsb_norm(u, s, bprime), den, "time shrink")


def check_L4_embedding(f: SpaceTimeField, mode: str = "A", s: float = 0.0) -> float:
    """Mode A: ``||f||_{L^4} / ||f||_{X^{0,5/12+}}``.

    Mode B: ``sup_t ||f(t)||_{H^s} / ||f||_{X^{s,1/2+}}``.
    """
    if f.is_zero():
        raise Inapplicable("zero field")
    if mode == "A":
        return _ratio(f.lp_norm(4), xsb_norm(f, 0.0, 5 / 12 + B_PLUS), "L4")
    if mode == "B":
        return _ratio(float(f.slice_hs_norms(s).max()),
                      xsb_norm(f, s, 0.5 + B_PLUS), "sup-time")
    raise ValueError("mode must be 'A' or 'B'")


# --- reports ----------------------------------------------------------------
REPORT_COLUMNS = ["estimate_name", "s", "b", "bprime", "T", "grid", "ratio"]


def write_report(path, rows):
    """Write estimate rows (mappings with :data:`REPORT_COLUMNS`) as CSV."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS)
        w.writeheader()
        for r in rows:
            w.writerow({k: r.get(k, "") for k in REPORT_COLUMNS})
    return path
