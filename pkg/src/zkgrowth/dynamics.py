"""Time integration of the Zakharov-Kuznetsov equation.

    u_t + (Delta u + u^2)_x = 0

The linear part is propagated exactly by the phases ``exp(i t omega)``;
the quadratic term is handled by classical RK4 on the interaction variable
``v_hat = exp(-i t omega) u_hat`` (integrating-factor RK4).  Products are
dealiased with the 2/3 rule and the state is kept inside the dealiased band.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy.integrate import cumulative_simpson

from .errors import BlowUpSuspected, WindowTooShort
from .grid import RealField2D, SpectralGrid, write_snapshot


def cumulative_simpson_complex(y, **kw):
    """:func:`scipy.integrate.cumulative_simpson` for complex samples.

    SciPy's routine casts to real internally, so the parts are integrated
    separately.
    """
    y = np.asarray(y)
    if not np.iscomplexobj(y):
        return cumulative_simpson(y, **kw)
    return cumulative_simpson(y.real, **kw) + 1j * cumulative_simpson(y.imag, **kw)


def linear_propagate(f: RealField2D, t: float) -> RealField2D:
    """Exact solution of ``u_t + (Delta u)_x = 0`` at time ``t``."""
    if t == 0:
        return f
    phase = np.exp(1j * t * f.grid.omega)
    return RealField2D.from_spectrum(f.grid, f.spectrum * phase)


def _nonlinear_hat(grid: SpectralGrid, u_hat):
    """Spectrum of ``-(u^2)_x`` with the 2/3 rule applied."""
    u = grid.inverse(u_hat)
    sq = grid.forward(u * u)
    return (-1j * grid.xi) * sq * grid.dealias_mask


def nonlinear_term(u: RealField2D) -> RealField2D:
    """``-(u^2)_x``, squared in physical space, dealiased, differentiated."""
    return RealField2D.from_spectrum(u.grid, _nonlinear_hat(u.grid, u.spectrum))


class PropagatorCache:
    """Phase tables ``exp(i h omega)`` keyed by the step ``h``."""

    def __init__(self, grid: SpectralGrid, maxsize: int = 8):
        self.grid = grid
        self._tables = {}
        self._maxsize = maxsize

    def phase(self, h: float):
        try:
            return self._tables[h]
        except KeyError:
            if len(self._tables) >= self._maxsize:
                self._tables.pop(next(iter(self._tables)))
            p = np.exp(1j * h * self.grid.omega)
            self._tables[h] = p
            return p


@dataclass(frozen=True)
class SolverState:
    t: float
    u: RealField2D
    step_count: int
    dt: float
    cfl: float = 0.5


class Solver:
    """Integrating-factor RK4 stepper.

    ``dt`` is the nominal step; each step uses
    ``min(dt, cfl * dx / max(1, max|u|))``.
    """

    def __init__(self, grid: SpectralGrid, nonlinear: bool = True,
                 blowup_factor: float = 1e6):
        self.grid = grid
        self.nonlinear = nonlinear
        self.blowup_factor = blowup_factor
        self.propagators = PropagatorCache(grid)
        self._ceiling = None

    def initial_state(self, u0: RealField2D, dt: float, cfl: float = 0.5,
                      t0: float = 0.0) -> SolverState:
        """Project ``u0`` on the dealiased band and wrap it in a state."""
        if not 0 < cfl <= 1:
            raise ValueError("cfl must lie in (0, 1]")
        if dt == 0:
            raise ValueError("dt must be nonzero")
        u0 = RealField2D.from_spectrum(self.grid, self.grid.dealias(u0.spectrum))
        self._ceiling = self.blowup_factor * u0.max_abs()
        return SolverState(t0, u0, 0, dt, cfl)

    def stable_dt(self, state: SolverState) -> float:
        limit = state.cfl * min(self.grid.dx, self.grid.dy) / max(1.0, state.u.max_abs())
        return float(np.sign(state.dt) * min(abs(state.dt), limit))

    def _rhs(self, u_hat):
        return _nonlinear_hat(self.grid, u_hat)

    def advance_hat(self, u_hat, h):
        """One IF-RK4 step of size ``h`` on a spectrum."""
        if not self.nonlinear:
            return u_hat * self.propagators.phase(h)
        e = self.propagators.phase(h / 2)
        e2 = self.propagators.phase(h)
        k1 = h * self._rhs(u_hat)
        k2 = h * self._rhs(e * (u_hat + k1 / 2))
        k3 = h * self._rhs(e * u_hat + k2 / 2)
        k4 = h * self._rhs(e2 * u_hat + e * k3)
        return e2 * u_hat + (e2 * k1 + 2 * e * (k2 + k3) + k4) / 6

    def step(self, state: SolverState, h: float | None = None) -> SolverState:
        """Advance by ``h`` (default: the CFL-limited nominal step)."""
        if h is None:
            h = self.stable_dt(state)
        u_hat = self.advance_hat(state.u.spectrum, h)
        u = RealField2D.from_spectrum(self.grid, u_hat)
        if self._ceiling is not None and u.max_abs() > self._ceiling:
            raise BlowUpSuspected(
                f"max|u| = {u.max_abs():.3e} exceeds ceiling {self._ceiling:.3e} "
                f"at t = {state.t + h:.6g}")
        return replace(state, t=state.t + h, u=u, step_count=state.step_count + 1)

    def run(self, state: SolverState, t_end: float, sample_every: float | None = None):
        """Step to ``t_end``, yielding the initial state and every sample.

        Steps are shortened so that sample times and ``t_end`` are hit
        exactly.  With ``sample_every=None`` only the endpoints are yielded.
        """
        direction = 1.0 if t_end >= state.t else -1.0
        span = abs(t_end - state.t)
        if sample_every is None or span == 0:
            targets = [t_end] if span > 0 else []
        else:
            n = int(round(span / sample_every))
            targets = [state.t + direction * sample_every * (k + 1) for k in range(n)]
            if not targets or abs(targets[-1] - t_end) > 1e-12 * max(1.0, abs(t_end)):
                targets.append(t_end)
        state = replace(state, dt=direction * abs(state.dt))
        yield state
        for target in targets:
            while direction * (target - state.t) > 1e-12 * max(1.0, abs(target)):
                h = self.stable_dt(state)
                remaining = target - state.t
                nsub = max(1, int(np.ceil(abs(remaining) / abs(h) - 1e-9)))
                sub = remaining / nsub
                if abs(sub - h) <= 1e-9 * abs(h):
                    sub = h  # keeps the phase-table cache hot
                state = self.step(state, sub)
            state = replace(state, t=target)
            yield state


def evolve(u0: RealField2D, t_end: float, dt: float, nonlinear: bool = True,
           cfl: float = 1.0) -> RealField2D:
    """Convenience wrapper: evolve ``u0`` to ``t_end`` with nominal ``dt``."""
    solver = Solver(u0.grid, nonlinear=nonlinear)
    state = solver.initial_state(u0, dt=dt, cfl=cfl)
    *_, last = solver.run(state, t_end)
    return last.u


def sample_trajectory(u0: RealField2D, t_end: float, dt: float, sample_every: float,
                      nonlinear: bool = True, cfl: float = 1.0):
    """Return ``(times, values)`` sampled every ``sample_every`` on ``[0, t_end]``."""
    solver = Solver(u0.grid, nonlinear=nonlinear)
    state = solver.initial_state(u0, dt=dt, cfl=cfl)
    times, values = [], []
    for s in solver.run(state, t_end, sample_every):
        times.append(s.t)
        values.append(s.u.values)
    return np.array(times), np.array(values)


def duhamel_residual(trajectory, T: float, include_nonlinear: bool = True) -> float:
    """Sup over samples in ``[0, T]`` of the Duhamel mismatch in L2.

    The mismatch is ``u(t) - W(t) u0 + int_0^t W(t - t') (u^2)_x(t') dt'``;
    the time integral is composite Simpson on the trajectory samples.
    ``trajectory`` is a :class:`~zkgrowth.bourgain.SpaceTimeField` whose
    samples include ``t = 0``.
    """
    times = trajectory.times
    i0 = int(np.argmin(np.abs(times)))
    if abs(times[i0]) > 1e-9 * max(1.0, trajectory.dt):
        raise WindowTooShort("trajectory has no sample at t = 0")
    iT = i0 + int(round(T / trajectory.dt))
    if T < 0 or iT >= len(times) or times[iT] < T - 1e-9 * max(1.0, T):
        raise WindowTooShort(f"T = {T} exceeds the sampled span")
    grid = trajectory.grid
    ts = times[i0:iT + 1]
    spectra = np.array([grid.forward(v) for v in trajectory.values[i0:iT + 1]])
    back = np.exp(-1j * ts[:, None, None] * grid.omega[None])
    # interaction frame: W(-t) u(t) - u0 + int_0^t W(-t') (u^2)_x dt'
    mismatch = spectra * back - spectra[0][None]
    if include_nonlinear and len(ts) > 1:
        forcing = np.array([(1j * grid.xi) * grid.forward(v * v) * grid.dealias_mask
                            for v in trajectory.values[i0:iT + 1]]) * back
        mismatch = mismatch + cumulative_simpson_complex(forcing, x=ts, axis=0, initial=0)
    norms = [np.sqrt(grid.spectral_l2_sq(m)) for m in mismatch]
    return float(max(norms))


def write_trajectory(out_dir, solver: Solver, state: SolverState, t_end: float,
                     sample_every: float, on_sample=None):
    """Run and write one snapshot per sample plus ``manifest.csv``.

    ``on_sample(state)`` is called for each written sample.  Returns the
    manifest path.
    """
    out = Path(out_dir)
    (out / "snapshots").mkdir(parents=True, exist_ok=True)
    manifest = out / "manifest.csv"
    with open(manifest, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "t", "dt", "max_abs_u", "snapshot_path"])
        for k, s in enumerate(solver.run(state, t_end, sample_every)):
            rel = f"snapshots/snap_{k:06d}.zk2d"
            write_snapshot(out / rel, s.u)
            w.writerow([s.step_count, repr(float(s.t)), repr(float(s.dt)),
                        repr(s.u.max_abs()), rel])
            if on_sample is not None:
                on_sample(s)
    return manifest
