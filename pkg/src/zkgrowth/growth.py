"""Existence windows, the H^s increment bookkeeping, the discrete growth
lemma with explicit constants, and envelope fits of norm histories."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import mpmath
import numpy as np

from .bourgain import DEFAULT_NT, SpaceTimeField, TimeCutoff, xsb_norm
from .dynamics import Solver
from .errors import (Inapplicable, InsufficientSpan, OverflowRisk, ParameterRange,
                     Unresolved)
from .grid import Multiplier, MultiIndex, RealField2D, sobolev_norm

#: default grid of growth exponents for :func:`fit_growth`
BETA_GRID = tuple(round(0.1 * k, 10) for k in range(1, 31))
#: relative tolerance of the envelope stabilization test
FIT_TOLERANCE = 0.10


# --- local theory parameters -----------------------------------------------------
@dataclass(frozen=True)
class LocalTheoryParams:
    """Exponents of the local theory; ``b``, ``b'`` and ``eps`` are derived."""

    C0: float = 1.0
    delta: float = 1.0 / 24.0
    s: int = 2
    rho: float = 0.1

    def __post_init__(self):
        if self.C0 <= 0:
            raise ParameterRange("C0 must be positive")
        if not 0 < self.delta < 1.0 / 12.0:
            raise ParameterRange(f"delta must lie in (0, 1/12), got {self.delta}")
        if int(self.s) != self.s or self.s < 2:
            raise ParameterRange(f"s must be an integer >= 2, got {self.s}")
        if not 0 < self.rho < 0.5 - 6 * self.delta:
            raise ParameterRange(f"rho must lie in (0, 1/2 - 6 delta), got {self.rho}")

    @property
    def b(self) -> float:
        return 0.5 + self.delta

    @property
    def bprime(self) -> float:
        return -0.5 + 2 * self.delta

    @property
    def eps(self) -> float:
        return self.rho / (self.s - 1)

    def calibrated(self, C0: float) -> "LocalTheoryParams":
        return replace(self, C0=float(C0))


def existence_time(A: float, p: LocalTheoryParams) -> float:
    """``(8 C0^2 A)^(-1/delta)``, capped at 1."""
    if not A > 0:
        raise ParameterRange(f"A must be positive, got {A}")
    log_t = -math.log(8.0 * p.C0 ** 2 * A) / p.delta
    return 1.0 if log_t >= 0 else math.exp(log_t)


def _window_trajectory(u0: RealField2D, T: float, nt: int, dt: float | None):
    """Solution samples on a window of about ``(-2T, 3T)`` with ``t = 0`` on the lattice.

    Only samples inside the support ``(-T, 2T)`` of ``phi_T`` are computed;
    the others stay zero because the cutoff removes them anyway.
    """
    grid = u0.grid
    step = 5.0 * T / nt
    k0 = int(round(2 * nt / 5))
    times = step * (np.arange(nt) - k0)
    values = np.zeros((nt,) + grid.shape)
    solver = Solver(grid)
    dt = dt or step
    inside = (times > -T) & (times < 2 * T)
    for sign in (1.0, -1.0):
        ks = np.flatnonzero(inside & (sign * times >= 0))
        if len(ks) == 0:
            continue
        state = solver.initial_state(u0, dt=sign * dt, cfl=1.0)
        t_end = times[ks].max() if sign > 0 else times[ks].min()
        for st in solver.run(state, t_end, sample_every=step):
            values[k0 + int(round(st.t / step))] = st.u.values
    return SpaceTimeField(grid, times[0], times[0] + nt * step, values)


def measure_amplification(u0: RealField2D, p: LocalTheoryParams, T: float | None = None,
                          nt: int = DEFAULT_NT, dt: float | None = None):
    """Empirical stand-ins for the fixed-point constant on ``[0, T]``.

    Returns ``(sup_t ||u(t)||_{H^s} / ||u0||_{H^s},
    ||phi_T u||_{X^{1,b}} / ||u0||_{H^1})``.  ``T`` defaults to
    ``existence_time(||u0||_{H^1}, p)``.
    """
    u0 = Solver(u0.grid).initial_state(u0, 1.0).u  # the dealiased datum actually evolved
    h1 = sobolev_norm(u0, 1.0)
    hs0 = sobolev_norm(u0, p.s)
    if h1 == 0:
        raise Inapplicable("u0 = 0")
    T = existence_time(h1, p) if T is None else float(T)
    cutoff = TimeCutoff(T)  # validates 0 < T <= 1
    traj = _window_trajectory(u0, T, nt, dt)
    tame = xsb_norm(traj.times_cutoff(cutoff), 1.0, p.b) / h1
    on = (traj.times >= 0) & (traj.times <= T)
    hs = [sobolev_norm(RealField2D(u0.grid, v), p.s) for v in traj.values[on]]
    solver = Solver(u0.grid)
    *_, last = solver.run(solver.initial_state(u0, dt=dt or traj.dt, cfl=1.0), T)
    hs.append(sobolev_norm(last.u, p.s))
    return max(hs) / hs0, tame


# --- H^s increment bookkeeping ---------------------------------------------------
@dataclass(frozen=True)
class IncrementReport:
    t: float
    I0: float
    I_mid: float
    I_s1: float
    I_s2: float
    total: float
    hs_derivative: float

    @property
    def I0_relative(self) -> float:
        """``|I0|`` against the size of the remaining terms."""
        scale = abs(self.I_mid) + abs(self.I_s1) + abs(self.I_s2)
        return abs(self.I0) / scale if scale > 0 else abs(self.I0)


def bracket_coefficients(s: int):
    """``(1 + 3 xi^2 + mu^2)^s = sum_i c_i xi^(2 i1) mu^(2 i2)``."""
    out = {}
    for n in range(s + 1):
        for idx in MultiIndex.of_order(n):
            out[idx] = (math.factorial(s) * 3 ** idx.i1
                        / (math.factorial(s - n) * math.factorial(idx.i1)
                           * math.factorial(idx.i2)))
    return out


def _binom(i: MultiIndex, j: MultiIndex) -> int:
    return math.comb(i.i1, j.i1) * math.comb(i.i2, j.i2)


def _check_band(u: RealField2D, tol: float = 1e-12):
    g = u.grid
    total = g.spectral_l2_sq(u.spectrum)
    outside = g.spectral_l2_sq(u.spectrum, 1.0 - g.dealias_mask)
    if total > 0 and outside > tol * total:
        raise Unresolved(f"fraction {outside / total:.2e} of the energy lies outside "
                         "the dealiased band")


def increment_terms(u: RealField2D, s: int) -> dict:
    """Grouped contributions to ``d/dt ||u||_{H^s}^2`` for the nonlinear flow.

    Each ``|i| <= s`` contributes ``-2 c_i <d^i u, d_x sum_j binom(i, j)
    d^j u d^(i-j) u>`` with signed derivatives ``d^i``, so the Leibniz
    expansion is exact.  The dispersive part is skew and drops out.
    """
    if int(s) != s or s < 2:
        raise ParameterRange(f"s must be an integer >= 2, got {s}")
    _check_band(u)
    g = u.grid
    coeffs = bracket_coefficients(int(s))
    deriv = {}

    def d(idx):
        if idx not in deriv:
            deriv[idx] = g.inverse(u.spectrum * g.symbol(Multiplier.partial(idx)))
        return deriv[idx]

    dx = g.symbol(Multiplier.partial_x())
    groups = {"I0": 0.0, "I_mid": 0.0, "I_s1": 0.0, "I_s2": 0.0}
    for idx, c in coeffs.items():
        lhs = u.spectrum * g.symbol(Multiplier.partial(idx))
        zero = MultiIndex(0, 0)
        ends = np.zeros(g.shape)
        split = np.zeros(g.shape)
        for j in idx.below():
            term = _binom(idx, j) * d(j) * d(idx - j)
            if idx.order > 0 and (j == zero or j == idx):
                ends += term
            else:
                split += term
        for key, prod in (("ends", ends), ("split", split)):
            if not prod.any():
                continue
            val = -2.0 * c * g.spectral_inner(lhs, dx * g.forward(prod))
            if idx.order == 0:
                groups["I0"] += val
            elif idx.order < s:
                groups["I_mid"] += val
            elif key == "ends":
                groups["I_s2"] += val
            else:
                groups["I_s1"] += val
    return groups


def hs_rate(u: RealField2D, s: float) -> float:
    """``d/dt ||u||_{H^s}^2`` of the semi-discrete flow, computed directly."""
    from .dynamics import nonlinear_term

    g = u.grid
    n = nonlinear_term(u)
    return 2.0 * g.spectral_inner(u.spectrum * g.bracket ** (2 * s), n.spectrum)


def increment_decomposition(trajectory: SpaceTimeField, s: int, t: float) -> IncrementReport:
    """Bookkeeping at the sample nearest ``t``.

    ``hs_derivative`` is the centred difference of ``||u||_{H^s}^2`` over the
    neighbouring samples, one-sided at the ends of the trajectory.
    """
    times = trajectory.times
    k = int(np.argmin(np.abs(times - t)))
    grid = trajectory.grid
    u = RealField2D(grid, trajectory.values[k])
    groups = increment_terms(u, s)
    total = sum(groups.values())

    def hs2(i):
        return sobolev_norm(RealField2D(grid, trajectory.values[i]), s) ** 2

    n = trajectory.nt
    if n < 2:
        raise InsufficientSpan("need at least two samples for a finite difference")
    if 0 < k < n - 1:
        deriv = (hs2(k + 1) - hs2(k - 1)) / (times[k + 1] - times[k - 1])
    elif k == 0:
        deriv = (hs2(1) - hs2(0)) / (times[1] - times[0])
    else:
        deriv = (hs2(k) - hs2(k - 1)) / (times[k] - times[k - 1])
    return IncrementReport(float(times[k]), groups["I0"], groups["I_mid"], groups["I_s1"],
                           groups["I_s2"], float(total), float(deriv))


# --- the discrete growth lemma -----------------------------------------------------
@dataclass(frozen=True)
class GrowthEnvelope:
    """Constants of the growth lemma; ``K2`` is an mpmath number."""

    K1: float
    eps: float
    d: float
    N: int
    K2: object
    u0: float = 0.0

    @property
    def log_K2(self) -> float:
        return float(mpmath.log(self.K2))

    @property
    def beta(self) -> float:
        """Growth exponent delivered by the lemma, ``1/eps``."""
        return 1.0 / self.eps

    def with_u0(self, u0: float) -> "GrowthEnvelope":
        return replace(self, u0=float(u0))


def _tail_condition(K1, eps, d, N) -> bool:
    """``d - K1 (1 + N)^(1 - d eps) >= 1``."""
    with mpmath.workdps(50):
        return mpmath.mpf(d) - K1 * mpmath.power(1 + N, 1 - d * eps) >= 1


def lemma13_constants(K1: float, eps: float, d: float) -> GrowthEnvelope:
    """``N`` and ``K2`` from the constructive proof.

    ``N`` starts at ``max(1, ceil((K1/d)^(1/(d eps - 1))))``.  That bound
    alone only gives ``d - K1 (1+N)^(1 - d eps) >= 0``; the tail condition
    needs ``>= 1``, which holds once ``1 + N >= (K1/(d-1))^(1/(d eps - 1))``,
    so ``N`` is raised to that value when it is larger.
    """
    if not K1 > 0:
        raise ParameterRange("K1 must be positive")
    if not 0 < eps < 1:
        raise ParameterRange("eps must lie in (0, 1)")
    if d * eps <= 1:
        raise ParameterRange(f"need d * eps > 1, got {d * eps}")
    with mpmath.workdps(50):
        K1m, dm = mpmath.mpf(K1), mpmath.mpf(d)
        expo = 1 / (dm * eps - 1)
        N = max(1, int(mpmath.ceil(mpmath.power(K1m / dm, expo))))
        N = max(N, int(mpmath.ceil(mpmath.power(K1m / (dm - 1), expo) - 1)))
        while not _tail_condition(K1, eps, d, N):  # guards the rounding of the line above
            N += 1
        # exp/log form: an integer power would be evaluated exactly, digit by digit
        K2 = max(mpmath.exp(N * mpmath.log(2 * K1m + 1)), K1m / mpmath.power(N, dm - 1))
    if not mpmath.isfinite(K2):
        raise OverflowRisk(f"K2 is not representable for N = {N}")
    return GrowthEnvelope(float(K1), float(eps), float(d), N, K2)


def worst_case_iterates(K1, eps, u0, k_max):
    """``u_{k+1} = u_k + K1 (1 + u_k^(1-eps))`` in extended precision.

    ``K1``, ``eps`` and ``u0`` may be arrays of equal shape; the result has
    shape ``(k_max + 1,) + shape``.
    """
    K1 = np.asarray(K1, dtype=np.longdouble)
    eps = np.asarray(eps, dtype=np.longdouble)
    u = np.broadcast_to(np.asarray(u0, dtype=np.longdouble), np.broadcast(K1, eps).shape)
    u = u.copy()
    out = np.empty((k_max + 1,) + u.shape, dtype=np.longdouble)
    out[0] = u
    one = np.longdouble(1)
    for k in range(k_max):
        u = u + K1 * (one + u ** (one - eps))
        out[k + 1] = u
    if not np.all(np.isfinite(out)):
        raise OverflowRisk("iterates overflowed extended precision")
    return out


def convexity_holds(d: float, k_max: int) -> bool:
    """``(2+k)^d >= (1+k)^d + d (1+k)^(d-1)`` for every integer ``0 <= k <= k_max``.

    Divided through by ``(1+k)^d`` and compared in log form, which keeps
    full relative precision when ``k`` is large.
    """
    x = 1.0 / (1.0 + np.arange(k_max + 1, dtype=np.longdouble))
    d = np.longdouble(d)
    return bool(np.all(d * np.log1p(x) - np.log1p(d * x) >= 0))


def lemma13_margins(envs, k_max: int):
    """Per envelope, ``min_k log(K2 (1+k)^d (1+u0)) - log(u_k)``."""
    envs = list(envs)
    K1 = np.array([e.K1 for e in envs])
    eps = np.array([e.eps for e in envs])
    u0 = np.array([e.u0 for e in envs])
    u = worst_case_iterates(K1, eps, u0, k_max)
    logk = np.log1p(np.arange(k_max + 1, dtype=np.longdouble))[:, None]
    d = np.array([e.d for e in envs], dtype=np.longdouble)[None]
    logK2 = np.array([e.log_K2 for e in envs], dtype=np.longdouble)[None]
    log_bound = logK2 + d * logk + np.log1p(np.asarray(u0, dtype=np.longdouble))[None]
    with np.errstate(divide="ignore"):
        log_u = np.log(u)
    return np.min(log_bound - log_u, axis=0).astype(float)


def lemma13_verify(env: GrowthEnvelope, k_max: int) -> bool:
    """Check the worst-case iteration against the envelope up to ``k_max``,
    and the convexity step on ``[0, k_max]``."""
    return bool(lemma13_margins([env], k_max)[0] >= 0) and convexity_holds(env.d, k_max)


# --- envelope fitting ------------------------------------------------------------
def _envelope_constant(t, hs, beta):
    return float(np.max(hs / ((1.0 + t) ** beta * (1.0 + hs[0]))))


def fit_growth(history, beta_grid=BETA_GRID):
    """Smallest ``beta`` whose envelope constant has stabilized.

    ``C(beta) = max_t hs(t) / ((1+t)^beta (1 + hs(0)))``.  A ``beta`` counts
    as stabilized when the constant fitted on the early half of the history,
    measured in ``log(1+t)``, already covers the full history within 10%.
    Returns ``(beta_best, C(beta_best))``.
    """
    if not history:
        raise InsufficientSpan("empty history")
    t = np.array([h[0] for h in history], dtype=float)
    hs = np.array([h[1] for h in history], dtype=float)
    if np.any(t < 0) or np.any(np.diff(t) < 0):
        raise ValueError("times must be non-negative and ascending")
    nonzero = t[t > 0]
    if len(nonzero) == 0 or t[-1] < 10 * nonzero[0]:
        raise InsufficientSpan("history must span at least a decade of nonzero times")
    early = np.log1p(t) <= 0.5 * np.log1p(t[-1])
    for beta in sorted(beta_grid):
        c_full = _envelope_constant(t, hs, beta)
        c_early = _envelope_constant(t[early], hs[early], beta)
        if c_full <= (1.0 + FIT_TOLERANCE) * c_early:
            return float(beta), c_full
    raise InsufficientSpan("no exponent in the grid stabilizes the envelope")


def envelope_exceedance(history, beta: float, C: float) -> float:
    """``max_t hs(t) / (C (1+t)^beta (1 + hs(0)))``; at most 1 when respected."""
    t = np.array([h[0] for h in history], dtype=float)
    hs = np.array([h[1] for h in history], dtype=float)
    return float(np.max(hs / (C * (1.0 + t) ** beta * (1.0 + hs[0]))))


def below_threshold(beta: float, s: int) -> bool:
    """Whether ``beta <= (s-1)/2``; informational, the claim is asymptotic."""
    return beta <= (s - 1) / 2


# --- amplification probe -----------------------------------------------------------
def probe_family(grid, h1_target: float, wavenumbers, width: float = 2.0):
    """Wave packets ``a cos(k y) exp(-r^2 / (2 w^2))`` rescaled to ``||.||_{H^1} = h1_target``.

    Raising ``k`` at fixed H^1 norm raises the H^2 norm roughly linearly.
    """
    x, y = grid.coordinates()
    xc, yc = grid.box_length_x / 2, grid.box_length_y / 2
    env = np.exp(-((x - xc) ** 2 + (y - yc) ** 2) / (2 * width ** 2))
    out = []
    for k in wavenumbers:
        f = RealField2D(grid, env * np.cos(k * (y - yc)))
        f = RealField2D.from_spectrum(grid, grid.dealias(f.spectrum))
        _check_band(f)
        out.append(f * (h1_target / sobolev_norm(f, 1.0)))
    return out


@dataclass
class ProbeResult:
    h1: list
    hs0_sq: list
    increment: list
    slope: float
    s: int = 2
    T: float = 0.5
    extra: dict = field(default_factory=dict)


def amplification_probe(family, s: int = 2, T: float = 0.5, dt: float = 1e-2,
                        samples: int = 20) -> ProbeResult:
    """Largest ``| ||u(t)||_{H^s}^2 - ||u0||_{H^s}^2 |`` over ``[0, T]`` per datum,
    and the log-log slope of that increment against ``||u0||_{H^s}^2``."""
    h1, hs0, inc = [], [], []
    for u0 in family:
        solver = Solver(u0.grid)
        state = solver.initial_state(u0, dt=dt, cfl=1.0)
        base = sobolev_norm(state.u, s) ** 2
        worst = 0.0
        for st in solver.run(state, T, sample_every=T / samples):
            worst = max(worst, abs(sobolev_norm(st.u, s) ** 2 - base))
        h1.append(sobolev_norm(state.u, 1.0))
        hs0.append(base)
        inc.append(worst)
    if min(inc) <= 0:
        raise Inapplicable("a datum shows no increment; the slope is undefined")
    slope = float(np.polyfit(np.log(hs0), np.log(inc), 1)[0])
    return ProbeResult(h1, hs0, inc, slope, s, T)


# --- report ----------------------------------------------------------------------
def growth_report(path, *, s, A, T_window, C0_measured, beta_best, envelope_C,
                  env: GrowthEnvelope | None = None, verified_to_k: int = 0):
    doc = {"s": s, "A": A, "T_window": T_window, "C0_measured": C0_measured,
           "beta_best": beta_best, "envelope_C": envelope_C, "lemma13": None}
    if env is not None:
        doc["lemma13"] = {"K1": env.K1, "eps": env.eps, "d": env.d, "N": env.N,
                          "K2": mpmath.nstr(env.K2, 17), "verified_to_k": verified_to_k}
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2))
    return doc

