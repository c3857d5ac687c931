"""Resonance geometry, measure counting and empirical bilinear constants.

Space-time test functions live on a :class:`LabLattice`: a centred lattice
in the profile coordinates ``(sigma, xi, mu)`` where ``sigma = tau - omega``
is the modulation.  A field is a dense complex coefficient array ``c`` with
``L^2`` norm ``(cell * sum |c|^2)^(1/2)``.  Products are evaluated exactly as
lattice convolutions in ``(tau, xi, mu)``: the pair ``(p1, p2)`` lands on
``(xi1 + xi2, mu1 + mu2)`` with modulation ``sigma1 + sigma2 - H``, which is
rounded to the sigma lattice (midpoint binning).
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dyadic import DyadicBlockSpec, is_dyadic, shell_cutoff
from .errors import (EmptyShell, Inapplicable, ParameterRange,
                     PreconditionViolated, ResolutionError)
from .grid import aniso_modulus, omega

ALPHA_DEFAULT = 0.05


# --- resonance geometry ------------------------------------------------------
def resonance(xi1, mu1, xi2, mu2):
    """``omega(xi1 + xi2, mu1 + mu2) - omega(xi1, mu1) - omega(xi2, mu2)``."""
    return omega(xi1 + xi2, mu1 + mu2) - omega(xi1, mu1) - omega(xi2, mu2)


def resonance_dmu1(xi1, mu1, xi2, mu2):
    """``d/dmu1`` of the resonance with the sum ``(xi, mu)`` held fixed.

    Its modulus is ``|2 xi1 mu1 - 2 xi2 mu2|``, the quantity bounded below on ``S1``.
    """
    return 2 * xi2 * mu2 - 2 * xi1 * mu1


def resonance_dxi1(xi1, mu1, xi2, mu2):
    """``d/dxi1`` of the resonance with the sum held fixed."""
    return (3 * xi2 ** 2 + mu2 ** 2) - (3 * xi1 ** 2 + mu1 ** 2)


def sign_mask(selector, xi1, mu1, xi2, mu2):
    """Indicator of the sign sets ``S1`` or ``S2``."""
    px = xi1 * xi2
    pm = mu1 * mu2
    if selector == "S1":
        return ((px > 0) & (pm < 0)) | ((px < 0) & (pm > 0))
    if selector == "S2":
        return (px < 0) & (pm < 0)
    raise ValueError("selector must be 'S1' or 'S2'")


def cone_mask(xi, mu, alpha=ALPHA_DEFAULT):
    """``(1-alpha)^(1/2) sqrt3 |xi| <= |mu| <= (1-alpha)^(-1/2) sqrt3 |xi|``."""
    a = np.sqrt(3.0) * np.abs(xi)
    m = np.abs(mu)
    return (np.sqrt(1 - alpha) * a <= m) & (m <= a / np.sqrt(1 - alpha))


def localization_defect(xi1, mu1, xi2, mu2):
    """``(|k0|^2 - ||k1|^2 - |k2|^2|) / max(|k1|^2, |k2|^2)``.

    Its supremum over the cones and ``S2`` is the smallest admissible
    ``f(alpha)`` in the high-high frequency localization inequality.
    """
    k1 = 3 * xi1 ** 2 + mu1 ** 2
    k2 = 3 * xi2 ** 2 + mu2 ** 2
    k0 = 3 * (xi1 + xi2) ** 2 + (mu1 + mu2) ** 2
    return (k0 - np.abs(k1 - k2)) / np.maximum(k1, k2)


def _shell_open(br, label):
    return shell_cutoff(br, label) > 0


def modulation_band(L: int):
    """Open range ``(lo, hi)`` of ``|sigma|`` on which ``chi_L(<sigma>) > 0``."""
    if L == 1:
        return 0.0, float(np.sqrt((8 / 5) ** 2 - 1))
    lo = max(0.0, (5 * L / 8) ** 2 - 1)
    return float(np.sqrt(lo)), float(np.sqrt((8 * L / 5) ** 2 - 1))


def _band_segments(L):
    lo, hi = modulation_band(L)
    if lo == 0.0:
        return [(-hi, hi)]
    return [(-hi, -lo), (lo, hi)]


# --- measure counting ----------------------------------------------------------
@dataclass(frozen=True)
class MeasureQuery:
    xi: float
    mu: float
    tau: float
    N1: int
    N2: int
    L1: int
    L2: int
    h: float
    sign_set: str = "S1"
    alpha: float = ALPHA_DEFAULT
    cones: bool = True

    def __post_init__(self):
        for v in (self.N1, self.N2, self.L1, self.L2):
            if not is_dyadic(v):
                raise ValueError("shells must be powers of two")
        if self.h <= 0:
            raise ValueError("h must be positive")


@dataclass(frozen=True)
class MeasureResult:
    count: int
    estimate: float
    b_count: int
    b_estimate: float
    min_band: float

    @property
    def chain_bound(self) -> float:
        """``min(L1, L2)``-type band length times the estimate of ``|B|``."""
        return self.min_band * self.b_estimate


def _overlap_length(c, L1, L2):
    """``|{sigma1 in I1 : c - sigma1 in I2}|`` for the modulation bands of ``L1, L2``."""
    out = np.zeros_like(c)
    for a1, b1 in _band_segments(L1):
        for a2, b2 in _band_segments(L2):
            out += np.maximum(0.0, np.minimum(b1, c - a2) - np.maximum(a1, c - b2))
    return out


def _cone_ranges(v, alpha):
    """Intervals of the partner coordinate allowed by the cone at coordinate ``v``.

    For the fine axis ``mu`` at fixed ``xi`` this is ``|mu|`` between
    ``(1-alpha)^(1/2) sqrt3 |xi|`` and ``(1-alpha)^(-1/2) sqrt3 |xi|``; the
    ``xi`` version divides by ``sqrt3`` instead.
    """
    lo, hi = np.sqrt(1 - alpha) * v, v / np.sqrt(1 - alpha)
    return [(-hi, -lo), (lo, hi)]


def _steps(q: MeasureQuery):
    """``(coarse, fine)`` spacings, both proportional to ``h``.

    The fine step resolves the resonant band, whose width is about
    ``min_band / |grad H|`` with ``|grad H| <= 2 r^2`` on the shells,
    ``r = 8 max(N1, N2) / 5``.  The coarse step resolves the cones, whose
    width is about ``alpha`` times the frequency.  At the coarsest allowed
    ``h = min(N1, N2)/16`` the fine step is ``min_band / (8 r^2)``.
    """
    nmin = min(q.N1, q.N2)
    r = 8 * max(q.N1, q.N2) / 5
    band = min(modulation_band(L)[1] for L in (q.L1, q.L2))
    coarse = q.h * (min(1.0, 2 * q.alpha) if q.cones else 1.0)
    fine = q.h * min(1.0, 2 * band / (nmin * r * r))
    return coarse, fine


def _sample_plane(q: MeasureQuery):
    """Quadrature nodes ``(xi1, mu1)`` and the cell area of each.

    The fine axis is ``mu1`` on ``S1`` and ``xi1`` on ``S2``, the
    directions where the resonance has a large derivative; spacings come
    from :func:`_steps`.  With cones on, the fine axis is only sampled inside
    the cone of the first factor.
    """
    h, hf = _steps(q)
    r = 8 * q.N1 / 5
    fine_is_mu = q.sign_set == "S1"
    coarse_max = r / np.sqrt(3) if fine_is_mu else r
    fine_max = r if fine_is_mu else r / np.sqrt(3)
    coarse = np.arange(-np.ceil(coarse_max / h), np.ceil(coarse_max / h) + 1) * h
    pts_c, pts_f = [], []
    for c in coarse:
        if q.cones:
            scale = np.sqrt(3.0) * abs(c) if fine_is_mu else abs(c) / np.sqrt(3.0)
            ranges = _cone_ranges(scale, q.alpha)
        else:
            ranges = [(-fine_max, fine_max)]
        for lo, hi in ranges:
            lo, hi = max(lo, -fine_max), min(hi, fine_max)
            if hi <= lo:
                continue
            f = np.arange(np.floor(lo / hf), np.ceil(hi / hf) + 1) * hf
            pts_f.append(f)
            pts_c.append(np.full(f.shape, c))
    if not pts_f:
        return np.empty(0), np.empty(0), h * hf
    c, f = np.concatenate(pts_c), np.concatenate(pts_f)
    xi1, mu1 = (c, f) if fine_is_mu else (f, c)
    return xi1, mu1, h * hf


def count_measure_A(q: MeasureQuery) -> MeasureResult:
    """Measure of ``A_(xi, mu, tau)`` and of its spatial shadow ``B``.

    ``A`` is the set of ``(xi1, mu1, tau1)`` with both frequencies in their
    shells (and cones, and the sign set) and both modulations in their
    shells.  The ``tau1`` extent is integrated exactly per ``(xi1, mu1)``;
    the plane is sampled by :func:`_sample_plane`.  ``B`` is the set of
    ``(xi1, mu1)`` where ``|tau - omega(xi, mu) + H|`` is below the sum of
    the two modulation radii.
    """
    if q.h > min(q.N1, q.N2) / 16:
        raise ResolutionError(f"h = {q.h} exceeds min(N1, N2)/16")
    xi1, mu1, cell = _sample_plane(q)
    xi2, mu2 = q.xi - xi1, q.mu - mu1
    m = _shell_open(np.sqrt(1 + aniso_modulus(xi1, mu1) ** 2), q.N1)
    m &= _shell_open(np.sqrt(1 + aniso_modulus(xi2, mu2) ** 2), q.N2)
    m &= sign_mask(q.sign_set, xi1, mu1, xi2, mu2)
    if q.cones:
        m &= cone_mask(xi1, mu1, q.alpha) & cone_mask(xi2, mu2, q.alpha)
    xi1, mu1, xi2, mu2 = xi1[m], mu1[m], xi2[m], mu2[m]
    c = q.tau - omega(q.xi, q.mu) + resonance(xi1, mu1, xi2, mu2)
    length = _overlap_length(c, q.L1, q.L2)
    count = int(np.count_nonzero(length > 0))
    lim = modulation_band(q.L1)[1] + modulation_band(q.L2)[1]
    b = int(np.count_nonzero(np.abs(c) < lim))
    band = min(sum(y - x for x, y in _band_segments(L)) for L in (q.L1, q.L2))
    return MeasureResult(count, float(length.sum()) * cell, b, b * cell, band)


def chain_ratio(q: MeasureQuery, res: MeasureResult | None = None) -> float:
    """``|A| N1 / (L1 L2)``: the measure estimate against its predicted scale."""
    res = res or count_measure_A(q)
    return res.estimate * q.N1 / (q.L1 * q.L2)


# --- the lab lattice ------------------------------------------------------------
@dataclass(frozen=True)
class LabLattice:
    """``n`` points per axis on ``[-E, E)`` for the axes ``(sigma, xi, mu)``."""

    n: int
    extent: tuple

    def __post_init__(self):
        if self.n % 2 or self.n < 4:
            raise ValueError("n must be even and >= 4")

    @classmethod
    def for_blocks(cls, n, specs, margin=1.5):
        """Extents covering the shells of every spec with a relative ``margin``."""
        N = max(s.N for s in specs)
        L = max(s.L for s in specs)
        r = 8 * N / 5 * margin
        return cls(n, (modulation_band(L)[1] * margin, r / np.sqrt(3), r))

    @property
    def h(self):
        return tuple(2 * e / self.n for e in self.extent)

    @property
    def cell(self) -> float:
        hs, hx, hy = self.h
        return hs * hx * hy

    def axis(self, i):
        return self.h[i] * (np.arange(self.n) - self.n // 2)

    def mesh(self):
        return np.meshgrid(self.axis(0), self.axis(1), self.axis(2), indexing="ij")

    def refined(self, n):
        return LabLattice(n, self.extent)

    def __str__(self):
        return f"{self.n}^3"


def hermitize(c):
    """Symmetrize so that ``c(-p) = conj c(p)``; the unpaired edge planes are zeroed."""
    c = np.array(c, dtype=complex)
    c[0, :, :] = 0
    c[:, 0, :] = 0
    c[:, :, 0] = 0
    flipped = np.conj(c[::-1, ::-1, ::-1])
    flipped = np.roll(flipped, 1, axis=(0, 1, 2))
    return 0.5 * (c + flipped)


@dataclass
class LabField:
    lattice: LabLattice
    coeffs: np.ndarray

    def l2(self) -> float:
        return float(np.sqrt(self.lattice.cell * np.sum(np.abs(self.coeffs) ** 2)))

    def xsb(self, s: float, b: float) -> float:
        S, X, M = self.lattice.mesh()
        w = (1 + aniso_modulus(X, M) ** 2) ** s * (1 + S ** 2) ** b
        return float(np.sqrt(self.lattice.cell * np.sum(w * np.abs(self.coeffs) ** 2)))

    def normalized(self):
        n = self.l2()
        if n == 0:
            raise Inapplicable("zero field")
        return LabField(self.lattice, self.coeffs / n)

    def __mul__(self, a):
        return LabField(self.lattice, self.coeffs * a)

    __rmul__ = __mul__


def block_weight(lattice: LabLattice, spec: DyadicBlockSpec):
    """``chi_N(<|(xi, mu)|>) chi_L(<sigma>)`` on the lattice."""
    S, X, M = lattice.mesh()
    return shell_cutoff(np.sqrt(1 + aniso_modulus(X, M) ** 2), spec.N) * \
        shell_cutoff(np.sqrt(1 + S ** 2), spec.L)


def _correlated_gaussian(lattice, rng, corr):
    """Complex Gaussian field on the lattice with correlation lengths ``corr``.

    It is a sum of Gaussian bumps of width ``corr/2`` centred on the
    reference lattice ``corr * Z^3`` with i.i.d. complex normal amplitudes,
    so samples on a refined lattice are the same random function.
    """
    mats = []
    for i in range(3):
        c = corr[i]
        x = lattice.axis(i)
        m = np.arange(np.floor(x[0] / c) - 2, np.ceil(x[-1] / c) + 3)
        mats.append(np.exp(-0.5 * ((x[:, None] - c * m[None]) / (0.5 * c)) ** 2))
    shape = tuple(m.shape[1] for m in mats)
    a = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    return np.einsum("abc,ia,jb,kc->ijk", a, *mats, optimize=True)


def trial_rng(seed, *stream):
    """Independent, reproducible generator for trial ``stream`` of ``seed``."""
    ss = np.random.SeedSequence([int(seed), *[int(s) for s in stream]])
    return np.random.Generator(np.random.Philox(ss))


def reference_corr(lattice: LabLattice, n_ref: int = 16):
    """Correlation lengths: the spacing of the ``n_ref`` lattice on the same extents."""
    return tuple(2 * e / n_ref for e in lattice.extent)


def make_block(spec: DyadicBlockSpec, lattice: LabLattice, seed, corr=None,
               stream=()) -> LabField:
    """Random real block field ``P_N Q_L`` of a complex Gaussian field, unit ``L^2``."""
    w = block_weight(lattice, spec)
    if spec.sign_set is not None:
        raise ValueError("sign sets apply to pairs, not to single blocks")
    rng = trial_rng(seed, 1, *stream)
    corr = corr or reference_corr(lattice)
    c = hermitize(w * _correlated_gaussian(lattice, rng, corr))
    if not np.any(np.abs(c) > 0):
        raise EmptyShell(f"no lattice point in shell N={spec.N}, L={spec.L} on {lattice}")
    return LabField(lattice, c).normalized()


def make_smooth(lattice: LabLattice, seed, bumps: int = 3, width: float = 1 / 16,
                stream=(), cutoff: float = 1e-3) -> LabField:
    """A few coherent Gaussian bumps at random positions, unit ``L^2``.

    Widths are ``width * extent`` per axis; values below ``cutoff`` times the
    peak are dropped to keep supports compact.
    """
    rng = trial_rng(seed, 2, *stream)
    S, X, M = lattice.mesh()
    c = np.zeros(S.shape, dtype=complex)
    for _ in range(bumps):
        centre = [rng.uniform(-0.6, 0.6) * e for e in lattice.extent]
        wid = [width * e for e in lattice.extent]
        amp = rng.standard_normal() + 1j * rng.standard_normal()
        g = sum(((A - c0) / w) ** 2 for A, c0, w in zip((S, X, M), centre, wid))
        c += amp * np.exp(-0.5 * g)
    c = hermitize(c)
    c[np.abs(c) < cutoff * np.abs(c).max()] = 0
    return LabField(lattice, c).normalized()


# --- exact lattice products -----------------------------------------------------
@dataclass
class PairTable:
    """All pairs of support points and the output bin each lands in.

    ``out`` indexes the arrays ``xi0, mu0, sigma0`` of distinct output points.
    """

    lattice: LabLattice
    i1: np.ndarray
    i2: np.ndarray
    out: np.ndarray
    xi0: np.ndarray
    mu0: np.ndarray
    sigma0: np.ndarray
    size1: int = field(default=0)

    @classmethod
    def build(cls, lattice: LabLattice, supp1, supp2, mask=None, chunk=4_000_000):
        """``supp*`` are flat indices; ``mask(xi1, mu1, xi2, mu2)`` filters pairs."""
        n = lattice.n
        hs, hx, hy = lattice.h
        c = n // 2
        a1 = np.unravel_index(supp1, (n, n, n))
        a2 = np.unravel_index(supp2, (n, n, n))
        j1 = [a - c for a in a1]
        j2 = [a - c for a in a2]
        step = max(1, chunk // max(1, len(supp2)))
        I1, I2, JX, JY, JS = [], [], [], [], []
        for s in range(0, len(supp1), step):
            sl = slice(s, s + step)
            s1, x1, y1 = (j[sl][:, None] for j in j1)
            s2, x2, y2 = (j[None] for j in j2)
            xi1, mu1, xi2, mu2 = x1 * hx, y1 * hy, x2 * hx, y2 * hy
            H = resonance(xi1, mu1, xi2, mu2)
            sig = (s1 + s2) * hs - H
            jsig = np.rint(sig / hs).astype(np.int64)
            shape = jsig.shape
            keep = np.ones(shape, bool) if mask is None else \
                np.broadcast_to(mask(xi1, mu1, xi2, mu2), shape)
            ii, kk = np.nonzero(keep)
            I1.append(ii + s)
            I2.append(kk)
            JX.append(np.broadcast_to(x1 + x2, shape)[ii, kk])
            JY.append(np.broadcast_to(y1 + y2, shape)[ii, kk])
            JS.append(jsig[ii, kk])
        i1 = np.concatenate(I1) if I1 else np.zeros(0, np.int64)
        i2 = np.concatenate(I2) if I2 else np.zeros(0, np.int64)
        jx = np.concatenate(JX) if JX else np.zeros(0, np.int64)
        jy = np.concatenate(JY) if JY else np.zeros(0, np.int64)
        js = np.concatenate(JS) if JS else np.zeros(0, np.int64)
        if len(i1) == 0:
            return cls(lattice, i1, i2, i1.copy(), np.zeros(0), np.zeros(0), np.zeros(0),
                       len(supp1))
        smin = js.min()
        span = js.max() - smin + 1
        key = ((jx + n) * (2 * n + 1) + (jy + n)) * span + (js - smin)
        uniq, out = np.unique(key, return_inverse=True)
        js_u = uniq % span + smin
        rest = uniq // span
        jy_u = rest % (2 * n + 1) - n
        jx_u = rest // (2 * n + 1) - n
        return cls(lattice, i1, i2, out.astype(np.int64), jx_u * hx, jy_u * hy,
                   js_u * hs, len(supp1))

    @property
    def n_out(self):
        return len(self.xi0)

    def apply(self, c1, c2):
        """Output coefficients ``cell * sum c1 c2`` per output bin."""
        v = c1[self.i1] * c2[self.i2]
        re = np.bincount(self.out, v.real, self.n_out)
        im = np.bincount(self.out, v.imag, self.n_out)
        return self.lattice.cell * (re + 1j * im)

    def adjoint_second(self, c1, w, size):
        """Adjoint in the second slot: ``cell * sum conj(c1) w[out]`` per ``i2``."""
        v = np.conj(c1[self.i1]) * w[self.out]
        return self.lattice.cell * (np.bincount(self.i2, v.real, size)
                                    + 1j * np.bincount(self.i2, v.imag, size))

    def adjoint_first(self, c2, w, size):
        v = np.conj(c2[self.i2]) * w[self.out]
        return self.lattice.cell * (np.bincount(self.i1, v.real, size)
                                    + 1j * np.bincount(self.i1, v.imag, size))

    def out_norm(self, P, weight=None) -> float:
        a = np.abs(P) ** 2
        if weight is not None:
            a = a * weight
        return float(np.sqrt(self.lattice.cell * a.sum()))


def support(f: LabField, extra=None):
    s = np.flatnonzero(np.abs(f.coeffs).ravel() > 0)
    if extra is not None:
        s = np.union1d(s, extra)
    return s


def _compressed(f: LabField):
    """Spatial support of ``f`` and its sigma runs, in the kernel layout."""
    n = f.lattice.n
    c = f.coeffs
    nz = np.abs(c) > 0
    cols = np.flatnonzero(nz.any(axis=0).ravel())
    ix, iy = np.unravel_index(cols, (n, n))
    ptr = np.zeros(len(cols) + 1, dtype=np.int64)
    s_list, v_list = [], []
    for k, (a, b) in enumerate(zip(ix, iy)):
        js = np.flatnonzero(nz[:, a, b])
        s_list.append(js - n // 2)
        v_list.append(c[js, a, b])
        ptr[k + 1] = ptr[k] + len(js)
    s = np.concatenate(s_list) if s_list else np.zeros(0, np.int64)
    v = np.concatenate(v_list) if v_list else np.zeros(0, complex)
    return ix - n // 2, iy - n // 2, ptr, s.astype(np.int64), v.astype(np.complex128)


def separable_product_norm(f: LabField, g: LabField, space_weight=None,
                           sigma_weight=None) -> float:
    """``||f g||`` with output weight ``space_weight(xi0, mu0) * sigma_weight(sigma0)``.

    Same pair binning as :func:`product_norm`, evaluated by a compiled loop
    that never stores the pairs, so it scales to fine lattices.
    """
    from ._kernels import shift_range, weighted_product_sq

    lat = f.lattice
    n = lat.n
    hs, hx, hy = lat.h
    jx1, jy1, ptr1, s1, v1 = _compressed(f)
    jx2, jy2, ptr2, s2, v2 = _compressed(g)
    if len(v1) == 0 or len(v2) == 0:
        return 0.0
    map2 = -np.ones((n, n), dtype=np.int64)
    map2[jx2 + n // 2, jy2 + n // 2] = np.arange(len(jx2))
    kmin, kmax = shift_range(jx1, jy1, jx2, jy2, hx, hy, hs)
    s0_min = int(s1.min() + s2.min() + kmin)
    s0_max = int(s1.max() + s2.max() + kmax)
    sig0 = hs * np.arange(s0_min, s0_max + 1)
    w_sig = np.ones_like(sig0) if sigma_weight is None else np.asarray(sigma_weight(sig0), float)
    j0 = np.arange(-n, n + 1)
    X0, M0 = np.meshgrid(j0 * hx, j0 * hy, indexing="ij")
    w_sp = np.ones_like(X0) if space_weight is None else np.asarray(space_weight(X0, M0), float)
    total = weighted_product_sq(n, jx1, jy1, ptr1, s1, v1, map2, ptr2, s2, v2,
                                hx, hy, hs, s0_min, w_sp, w_sig)
    return float(np.sqrt(lat.cell ** 3 * total))


def product_norm(f: LabField, g: LabField, mask=None, weight_fn=None) -> float:
    """``||f g||`` with output weight ``weight_fn(xi0, mu0, sigma0)`` (default 1)."""
    s1, s2 = support(f), support(g)
    t = PairTable.build(f.lattice, s1, s2, mask)
    P = t.apply(f.coeffs.ravel()[s1], g.coeffs.ravel()[s2])
    w = None if weight_fn is None else weight_fn(t.xi0, t.mu0, t.sigma0)
    return t.out_norm(P, w)


# --- block bounds ---------------------------------------------------------------
MODES = ("measure", "measure2", "measure3")


def _check_mode(spec1, spec2, mode, sign_set):
    N1, N2 = spec1.N, spec2.N
    if mode == "measure2" and not (N2 >= 4 * N1 or N1 >= 4 * N2):
        raise PreconditionViolated(f"measure2 needs N2 >= 4 N1 or N1 >= 4 N2 (N1={N1}, N2={N2})")
    if mode == "measure3":
        if not (N1 / 2 <= N2 <= 2 * N1):
            raise PreconditionViolated(f"measure3 needs N1/2 <= N2 <= 2 N1 (N1={N1}, N2={N2})")
        if sign_set not in ("S1", "S2"):
            raise PreconditionViolated("measure3 needs a sign set S1 or S2")
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")


def block_rhs(spec1, spec2, mode) -> float:
    """Right-hand side factor of the block estimate for unit inputs."""
    N1, N2, L1, L2 = spec1.N, spec2.N, spec1.L, spec2.L
    if mode == "measure":
        return max(L1, L2) ** 0.5 * max(N1, N2)
    if mode == "measure2":
        return max(N1, N2) ** 0.5 / min(N1, N2) * (L1 * L2) ** 0.5
    return N1 ** -0.5 * (L1 * L2) ** 0.5


def pair_mask(mode, sign_set, alpha=ALPHA_DEFAULT):
    if mode != "measure3":
        return None

    def m(xi1, mu1, xi2, mu2):
        return (sign_mask(sign_set, xi1, mu1, xi2, mu2)
                & cone_mask(xi1, mu1, alpha) & cone_mask(xi2, mu2, alpha))
    return m


class BlockProblem:
    """The bilinear block map ``(f, g) -> J(f, g)`` restricted to two blocks."""

    def __init__(self, spec1, spec2, mode, lattice, sign_set=None, alpha=ALPHA_DEFAULT):
        _check_mode(spec1, spec2, mode, sign_set)
        self.spec1, self.spec2, self.mode, self.lattice = spec1, spec2, mode, lattice
        self.w1 = block_weight(lattice, spec1).ravel()
        self.w2 = block_weight(lattice, spec2).ravel()
        mask1 = self.w1 > 0
        mask2 = self.w2 > 0
        self.s1 = np.flatnonzero(mask1)
        self.s2 = np.flatnonzero(mask2)
        if len(self.s1) == 0 or len(self.s2) == 0:
            raise EmptyShell(f"empty block on {lattice}")
        self.table = PairTable.build(lattice, self.s1, self.s2, pair_mask(mode, sign_set, alpha))
        self.rhs = block_rhs(spec1, spec2, mode)
        n = lattice.n
        # positions of -p for the Hermitian projection
        def partner(s):
            idx = np.array(np.unravel_index(s, (n, n, n)))
            neg = (n - idx) % n
            flat = np.ravel_multi_index(tuple(neg), (n, n, n))
            pos = np.searchsorted(s, flat)
            pos = np.clip(pos, 0, len(s) - 1)
            ok = (s[pos] == flat) & np.all(idx > 0, axis=0)
            return np.where(ok, pos, -1)
        self.p1 = partner(self.s1)
        self.p2 = partner(self.s2)

    def _herm(self, v, partner):
        out = np.zeros_like(v)
        ok = partner >= 0
        out[ok] = 0.5 * (v[ok] + np.conj(v[partner[ok]]))
        return out

    def _unit(self, v):
        n = np.sqrt(self.lattice.cell * np.sum(np.abs(v) ** 2))
        return v / n if n > 0 else v

    def ratio(self, a, b) -> float:
        """``||J(a, b)|| / (rhs ||a|| ||b||)`` for support-restricted coefficient vectors."""
        na = np.sqrt(self.lattice.cell * np.sum(np.abs(a) ** 2))
        nb = np.sqrt(self.lattice.cell * np.sum(np.abs(b) ** 2))
        if na == 0 or nb == 0:
            raise Inapplicable("zero input")
        return self.table.out_norm(self.table.apply(a, b)) / (self.rhs * na * nb)

    def ascend(self, a, b, steps):
        """Alternating power steps on the real fields; ``||J||`` never decreases."""
        a, b = self._unit(a), self._unit(b)
        for _ in range(steps):
            P = self.table.apply(a, b)
            b_new = self._unit(self._herm(self.table.adjoint_second(a, P, len(self.s2)), self.p2))
            if np.any(b_new):
                b = b_new
            P = self.table.apply(a, b)
            a_new = self._unit(self._herm(self.table.adjoint_first(b, P, len(self.s1)), self.p1))
            if np.any(a_new):
                a = a_new
        return a, b

    def restrict(self, f: LabField, which: int):
        s = self.s1 if which == 1 else self.s2
        return f.coeffs.ravel()[s]


def block_product_ratio(spec1, spec2, mode, trials, lattice=None, seed=0, n=24,
                        sign_set=None, ascent=4, alpha=ALPHA_DEFAULT, records=None):
    """Max over random trials of ``||J(f, g)|| / (rhs ||f|| ||g||)``.

    Each trial draws two random block fields and applies ``ascent``
    alternating power steps toward the maximizing pair.
    """
    lattice = lattice or LabLattice.for_blocks(n, [spec1, spec2])
    prob = BlockProblem(spec1, spec2, mode, lattice, sign_set, alpha)
    corr = reference_corr(lattice)
    best = 0.0
    for k in range(trials):
        f = make_block(spec1, lattice, seed, corr, stream=(k, 1))
        g = make_block(spec2, lattice, seed, corr, stream=(k, 2))
        a, b = prob.ascend(prob.restrict(f, 1), prob.restrict(g, 2), ascent)
        r = prob.ratio(a, b)
        if records is not None:
            records.append({"estimate": mode, "params": _params(spec1, spec2, lattice),
                            "seed": f"{seed}:{k}", "lhs": r * prob.rhs, "rhs": prob.rhs,
                            "ratio": r})
        best = max(best, r)
    return best


def exhaustive_block_max(spec1, spec2, mode, lattice=None, n=16, sign_set=None,
                         steps=20, keep=12, alpha=ALPHA_DEFAULT):
    """Best ratio over ascent runs started from the real basis of block 1.

    Every point ``p`` of the first block's support is screened by
    ``||J(delta_p, b0)||`` with ``b0`` the coherent kernel of block 2; the
    ``keep`` best give ``cos`` and ``sin`` basis vectors that are each
    iterated for ``steps`` alternating power steps.
    """
    lattice = lattice or LabLattice.for_blocks(n, [spec1, spec2])
    prob = BlockProblem(spec1, spec2, mode, lattice, sign_set, alpha)
    t = prob.table
    b0 = prob.w2[prob.s2].astype(complex)
    key = t.i1 * max(t.n_out, 1) + t.out
    uniq, inv = np.unique(key, return_inverse=True)
    v = b0[t.i2]
    acc = np.bincount(inv, v.real) + 1j * np.bincount(inv, v.imag)
    score = np.bincount(uniq // max(t.n_out, 1), np.abs(acc) ** 2, len(prob.s1))
    best = 0.0
    for i in np.argsort(score)[::-1][:keep]:
        j = prob.p1[i]
        if j < 0:
            continue
        for phase in (1.0, 1j):
            a = np.zeros(len(prob.s1), dtype=complex)
            a[i] += phase
            a[j] += np.conj(phase)
            if not np.any(a):
                continue
            a2, b2 = prob.ascend(a, b0, steps)
            best = max(best, prob.ratio(a2, b2))
    return best


def _params(spec1, spec2, lattice, **extra):
    d = {"N1": spec1.N, "L1": spec1.L, "N2": spec2.N, "L2": spec2.L, "grid": str(lattice)}
    d.update(extra)
    return json.dumps(d, sort_keys=True)


# --- bilinear constants ----------------------------------------------------------
def _check_bilinear_params(estimate, p, strict=True):
    """Parameter preconditions; ``strict=False`` skips the range checks so
    a ratio can still be tabulated outside the proven range."""
    if estimate not in ("b1", "b2", "b3"):
        raise ValueError(f"unknown estimate {estimate!r}")
    if not strict:
        return
    d = p.get("delta", 1 / 24)
    if estimate == "b1" and not p.get("s", 1.0) > 0.5:
        raise ParameterRange("b1 needs s > 1/2")
    if estimate == "b3" and not p.get("s", 2.0) > 1:
        raise ParameterRange("b3 needs s > 1")
    if estimate == "b2":
        rho = p.get("rho", 0.4)
        if not d < 1 / 12:
            raise ParameterRange("b2 needs delta < 1/12")
        if not 0 < rho < 0.5 - 6 * d:
            raise ParameterRange(f"b2 needs 0 < rho < 1/2 - 6 delta, got rho={rho}")


def bilinear_ratio(estimate, u: LabField, v: LabField, params, strict=True) -> tuple:
    """``(lhs, rhs)`` of one bilinear estimate for a pair of lab fields."""
    _check_bilinear_params(estimate, params, strict)
    d = params.get("delta", 1 / 24)
    b, bp = 0.5 + d, -0.5 + 2 * d
    if u.l2() == 0 or v.l2() == 0:
        raise Inapplicable("zero input")
    sigma_weight = lambda sg: (1 + sg ** 2) ** bp  # noqa: E731
    if estimate == "b2":
        rho = params.get("rho", 0.4)
        lhs = separable_product_norm(
            u, v, lambda x, m: (1 + aniso_modulus(x, m) ** 2) ** (-rho), sigma_weight)
        rhs = u.xsb(-rho, b) * v.xsb(-rho, b)
        return lhs, rhs
    s = params.get("s", 1.0 if estimate == "b1" else 2.0)
    lhs = separable_product_norm(
        u, v, lambda x, m: x ** 2 * (1 + aniso_modulus(x, m) ** 2) ** s, sigma_weight)
    if estimate == "b1":
        rhs = u.xsb(s, b) * v.xsb(s, b)
    else:
        rhs = u.xsb(s, b) * v.xsb(1, b) + u.xsb(1, b) * v.xsb(s, b)
    return lhs, rhs


DEFAULT_BLOCKS = (DyadicBlockSpec(1, 1), DyadicBlockSpec(2, 1), DyadicBlockSpec(1, 2),
                  DyadicBlockSpec(2, 2))


def lab_for_estimates(n=32, blocks=DEFAULT_BLOCKS):
    return LabLattice.for_blocks(n, list(blocks))


def trial_fields(lattice, seed, k, blocks=DEFAULT_BLOCKS):
    """Trial ``k``: even trials use smooth bumps, odd ones random blocks."""
    if k % 2 == 0:
        return (make_smooth(lattice, seed, stream=(k, 1)),
                make_smooth(lattice, seed, stream=(k, 2)))
    rng = trial_rng(seed, 3, k)
    s1, s2 = (blocks[i] for i in rng.integers(0, len(blocks), 2))
    corr = reference_corr(lattice)
    return (make_block(s1, lattice, seed, corr, stream=(k, 1)),
            make_block(s2, lattice, seed, corr, stream=(k, 2)))


def bilinear_constant(estimate, params, trials, n=32, seed=0, records=None, strict=True):
    """Max of ``lhs / rhs`` over mixed smooth and block trials on an ``n^3`` lab."""
    _check_bilinear_params(estimate, params, strict)
    lattice = lab_for_estimates(n)
    best = 0.0
    for k in range(trials):
        u, v = trial_fields(lattice, seed, k)
        lhs, rhs = bilinear_ratio(estimate, u, v, params, strict=False)
        r = lhs / rhs
        if records is not None:
            records.append({"estimate": estimate, "params": json.dumps(params, sort_keys=True),
                            "seed": f"{seed}:{k}", "lhs": lhs, "rhs": rhs, "ratio": r})
        best = max(best, r)
    return best


# --- reports ---------------------------------------------------------------------
LEDGER_COLUMNS = ["estimate", "params", "seed", "lhs", "rhs", "ratio"]


def write_trial_ledger(path, records):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=LEDGER_COLUMNS)
        w.writeheader()
        for r in records:
            w.writerow({k: r[k] for k in LEDGER_COLUMNS})
    return path


def summarize(records, refined=None):
    """Max, median and (optionally) the refinement change per configuration."""
    groups = {}
    for r in records:
        groups.setdefault((r["estimate"], r["params"]), []).append(r["ratio"])
    out = []
    for (est, params), ratios in sorted(groups.items()):
        row = {"estimate": est, "params": params, "max": float(np.max(ratios)),
               "median": float(np.median(ratios)), "trials": len(ratios)}
        if refined is not None and (est, params) in refined:
            row["refinement_delta"] = refined[(est, params)] / row["max"] - 1
        out.append(row)
    return out


def write_summary(path, summary):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(summary, indent=2))
    return path
