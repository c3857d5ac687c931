"""Periodic grid, Fourier transforms and scalar Fourier multipliers.

The plane is replaced by a periodic box ``[0, Lx) x [0, Ly)``.  Fields are
stored as ``values[ix, iy]`` with ``x`` along axis 0.  Spectra use the real
FFT layout of :func:`scipy.fft.rfft2`: shape ``(nx, ny // 2 + 1)``, forward
transform unnormalised, inverse carrying ``1 / (nx * ny)``.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.fft as sfft

from .errors import ZeroModeSingularity

#: number of worker threads handed to scipy.fft; set from the CLI
FFT_WORKERS = 1


def omega(xi, mu):
    """Dispersion relation of the linear flow, ``xi * (xi**2 + mu**2)``."""
    return xi * (xi * xi + mu * mu)


def aniso_modulus(xi, mu):
    """Anisotropic modulus ``sqrt(3 xi**2 + mu**2)``."""
    return np.sqrt(3.0 * np.square(xi) + np.square(mu))


def japanese(a):
    """Japanese bracket ``(1 + a**2) ** 0.5``."""
    return np.sqrt(1.0 + np.square(a))


def bracket(xi, mu):
    """``<|(xi, mu)|>`` with the anisotropic modulus."""
    return np.sqrt(1.0 + 3.0 * np.square(xi) + np.square(mu))


@dataclass(frozen=True)
class MultiIndex:
    """Derivative counts ``(i1, i2)`` in x and y."""

    i1: int
    i2: int

    def __post_init__(self):
        if self.i1 < 0 or self.i2 < 0:
            raise ValueError("multi-index entries must be non-negative")

    @property
    def order(self) -> int:
        return self.i1 + self.i2

    def __le__(self, other):  # partial order, not the dataclass ordering
        return self.i1 <= other.i1 and self.i2 <= other.i2

    def __lt__(self, other):
        return (MultiIndex(self.i1 + 1, self.i2) <= other
                or MultiIndex(self.i1, self.i2 + 1) <= other)

    def __sub__(self, other):
        return MultiIndex(self.i1 - other.i1, self.i2 - other.i2)

    def below(self):
        """All ``j`` with ``(0, 0) <= j <= self``."""
        return [MultiIndex(a, b) for a in range(self.i1 + 1)
                for b in range(self.i2 + 1)]

    @staticmethod
    def of_order(n: int):
        return [MultiIndex(a, n - a) for a in range(n + 1)]


@dataclass(frozen=True)
class Multiplier:
    """A Fourier multiplier symbol.

    ``kind`` is one of ``"S"`` (``<|(xi,mu)|>**power``), ``"K"``
    (``|3 xi**2 - mu**2|**power``), ``"Dx"``/``"Dy"`` (``|xi|**power``,
    ``|mu|**power``), ``"D"`` (``|xi|**i1 |mu|**i2``), ``"partial"``
    (signed ``(i xi)**i1 (i mu)**i2``).
    """

    kind: str
    power: float = 1.0
    index: MultiIndex | None = None

    @classmethod
    def S(cls, s):
        return cls("S", float(s))

    @classmethod
    def K(cls, theta):
        return cls("K", float(theta))

    @classmethod
    def Dx(cls, a=1.0):
        return cls("Dx", float(a))

    @classmethod
    def Dy(cls, a=1.0):
        return cls("Dy", float(a))

    @classmethod
    def D(cls, index: MultiIndex):
        return cls("D", 1.0, index)

    @classmethod
    def partial(cls, index: MultiIndex):
        return cls("partial", 1.0, index)

    @classmethod
    def partial_x(cls):
        return cls("partial", 1.0, MultiIndex(1, 0))

    @property
    def signed(self) -> bool:
        return self.kind == "partial"


@dataclass(frozen=True)
class SpectralGrid:
    """Periodic box and its frequency lattice.

    Frequencies are ``xi_j = 2 pi j / box_length_x`` for the signed FFT index
    range ``j in [-nx/2, nx/2)``, likewise ``mu_k``.
    """

    nx: int = 256
    ny: int = 256
    box_length_x: float = 32 * np.pi
    box_length_y: float = 32 * np.pi
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        for n in (self.nx, self.ny):
            if n < 8 or n % 2:
                raise ValueError(f"grid sizes must be even and >= 8, got {n}")
        if self.box_length_x <= 0 or self.box_length_y <= 0:
            raise ValueError("box lengths must be positive")

    # --- geometry -------------------------------------------------------
    @property
    def shape(self):
        return (self.nx, self.ny)

    @property
    def spectral_shape(self):
        return (self.nx, self.ny // 2 + 1)

    @property
    def dx(self):
        return self.box_length_x / self.nx

    @property
    def dy(self):
        return self.box_length_y / self.ny

    @property
    def area(self):
        return self.box_length_x * self.box_length_y

    @property
    def cell_area(self):
        return self.area / (self.nx * self.ny)

    def coordinates(self):
        x = np.arange(self.nx) * self.dx
        y = np.arange(self.ny) * self.dy
        return np.meshgrid(x, y, indexing="ij")

    def _cached(self, key, make):
        try:
            return self._cache[key]
        except KeyError:
            arr = make()
            if isinstance(arr, np.ndarray):
                arr.setflags(write=False)
            self._cache[key] = arr
            return arr

    # --- frequency lattice (rfft layout) --------------------------------
    @property
    def xi_1d(self):
        return self._cached("xi1", lambda: 2 * np.pi * sfft.fftfreq(self.nx, self.dx))

    @property
    def mu_1d(self):
        return self._cached("mu1", lambda: 2 * np.pi * sfft.rfftfreq(self.ny, self.dy))

    @property
    def xi(self):
        return self._cached("xi", lambda: np.broadcast_to(
            self.xi_1d[:, None], self.spectral_shape).copy())

    @property
    def mu(self):
        return self._cached("mu", lambda: np.broadcast_to(
            self.mu_1d[None, :], self.spectral_shape).copy())

    @property
    def omega(self):
        return self._cached("omega", lambda: omega(self.xi, self.mu))

    @property
    def bracket(self):
        return self._cached("bracket", lambda: bracket(self.xi, self.mu))

    @property
    def nyquist_mask(self):
        """True away from the Nyquist lines."""
        def make():
            m = np.ones(self.spectral_shape, dtype=bool)
            m[self.nx // 2, :] = False
            m[:, self.ny // 2] = False
            return m
        return self._cached("nyq", make)

    @property
    def dealias_mask(self):
        """2/3-rule mask: keep ``|j| < nx/3`` and ``|k| < ny/3``."""
        def make():
            jx = np.abs(sfft.fftfreq(self.nx, 1.0 / self.nx))
            jy = sfft.rfftfreq(self.ny, 1.0 / self.ny)
            return (jx[:, None] < self.nx / 3) & (jy[None, :] < self.ny / 3)
        return self._cached("dealias", make)

    @property
    def hermitian_weight(self):
        """Multiplicity of each rfft column in the full spectrum."""
        def make():
            w = np.full(self.spectral_shape, 2.0)
            w[:, 0] = 1.0
            w[:, self.ny // 2] = 1.0
            return w
        return self._cached("hw", make)

    # --- multipliers ----------------------------------------------------
    def symbol(self, m: Multiplier):
        """Symbol array of ``m`` on the lattice (Nyquist lines zeroed)."""
        return self._cached(("sym", m), lambda: _symbol(self, m))

    # --- transforms -----------------------------------------------------
    def forward(self, values):
        return sfft.rfft2(values, workers=FFT_WORKERS)

    def inverse(self, spectrum):
        return sfft.irfft2(spectrum, s=self.shape, workers=FFT_WORKERS)

    def spectral_l2_sq(self, spectrum, weight=None):
        """``int |f|^2`` from an rfft spectrum, optionally weighted."""
        a = np.abs(spectrum) ** 2 * self.hermitian_weight
        if weight is not None:
            a = a * weight
        return float(a.sum()) * self.cell_area / (self.nx * self.ny)

    def spectral_inner(self, f_hat, g_hat):
        """Real ``int f g`` from two rfft spectra."""
        a = (np.conj(f_hat) * g_hat).real * self.hermitian_weight
        return float(a.sum()) * self.cell_area / (self.nx * self.ny)

    def dealias(self, spectrum):
        return spectrum * self.dealias_mask

    def field(self, values) -> "RealField2D":
        return RealField2D(self, np.asarray(values, dtype=float))


def _symbol(grid: SpectralGrid, m: Multiplier):
    xi, mu = grid.xi, grid.mu
    with np.errstate(divide="ignore", invalid="ignore"):
        if m.kind == "S":
            sym = grid.bracket ** m.power
        elif m.kind == "K":
            sym = np.abs(3 * xi ** 2 - mu ** 2) ** m.power
        elif m.kind == "Dx":
            sym = np.abs(xi) ** m.power
        elif m.kind == "Dy":
            sym = np.abs(mu) ** m.power
        elif m.kind == "D":
            sym = np.abs(xi) ** m.index.i1 * np.abs(mu) ** m.index.i2
        elif m.kind == "partial":
            sym = (1j * xi) ** m.index.i1 * (1j * mu) ** m.index.i2
        else:
            raise ValueError(f"unknown multiplier kind {m.kind!r}")
    sym = np.where(grid.nyquist_mask, sym, 0)
    return sym


class RealField2D:
    """A real scalar field on a :class:`SpectralGrid`.

    Values are read-only; operations return new fields.  The rfft spectrum
    is computed lazily and cached.
    """

    def __init__(self, grid: SpectralGrid, values, spectrum=None):
        values = np.array(values, dtype=float)
        if values.shape != grid.shape:
            raise ValueError(f"expected shape {grid.shape}, got {values.shape}")
        values.setflags(write=False)
        self.grid = grid
        self.values = values
        self._spectrum = spectrum

    @classmethod
    def from_spectrum(cls, grid: SpectralGrid, spectrum):
        spectrum = np.asarray(spectrum, dtype=complex)
        return cls(grid, grid.inverse(spectrum), spectrum)

    @classmethod
    def zeros(cls, grid):
        return cls(grid, np.zeros(grid.shape))

    @property
    def spectrum(self):
        if self._spectrum is None:
            s = self.grid.forward(self.values)
            s.setflags(write=False)
            self._spectrum = s
        return self._spectrum

    def full_spectrum(self):
        """Complex spectrum over the whole lattice (``fft2`` layout)."""
        return sfft.fft2(self.values, workers=FFT_WORKERS)

    def __add__(self, other):
        return RealField2D(self.grid, self.values + other.values)

    def __sub__(self, other):
        return RealField2D(self.grid, self.values - other.values)

    def __mul__(self, c):
        return RealField2D(self.grid, self.values * c)

    __rmul__ = __mul__

    def max_abs(self):
        return float(np.max(np.abs(self.values)))

    def l2_norm(self):
        """Physical-space quadrature of ``(int u^2)^(1/2)``."""
        return float(np.sqrt(np.sum(self.values ** 2) * self.grid.cell_area))

    def integral(self):
        return float(np.sum(self.values) * self.grid.cell_area)


def apply_multiplier(f: RealField2D, m: Multiplier) -> RealField2D:
    """Multiply the spectrum of ``f`` by the symbol of ``m``."""
    grid = f.grid
    sym = grid.symbol(m)
    spec = f.spectrum
    bad = ~np.isfinite(sym)
    if bad.any():
        if np.any(np.abs(spec[bad]) > 0):
            raise ZeroModeSingularity(
                f"symbol {m} is singular where the field has spectral content")
        sym = np.where(bad, 0, sym)
    return RealField2D.from_spectrum(grid, spec * sym)


def sobolev_norm(f: RealField2D, s: float) -> float:
    """``||S(D)^s f||_{L^2}`` by discrete Plancherel."""
    grid = f.grid
    w = None if s == 0 else grid.bracket ** (2 * s)
    return float(np.sqrt(grid.spectral_l2_sq(f.spectrum, w)))


def single_mode(grid: SpectralGrid, j: int, k: int, phase=0.0) -> RealField2D:
    """``cos(xi_j x + mu_k y + phase)`` scaled to unit L2 norm."""
    x, y = grid.coordinates()
    xi = 2 * np.pi * j / grid.box_length_x
    mu = 2 * np.pi * k / grid.box_length_y
    v = np.cos(xi * x + mu * y + phase)
    return RealField2D(grid, v / np.sqrt(np.sum(v ** 2) * grid.cell_area))


# --- binary snapshots ------------------------------------------------------
_MAGIC = b"ZK2D"
_VERSION = 1
_HEADER = struct.Struct("<4sIIIdd")


def write_snapshot(path, f: RealField2D):
    g = f.grid
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, _VERSION, g.nx, g.ny,
                              g.box_length_x, g.box_length_y))
        fh.write(np.ascontiguousarray(f.values, dtype="<f8").tobytes())


def read_snapshot(path) -> RealField2D:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise ValueError("truncated snapshot header")
    magic, version, nx, ny, lx, ly = _HEADER.unpack_from(data)
    if magic != _MAGIC:
        raise ValueError(f"bad snapshot magic {magic!r}")
    if version != _VERSION:
        raise ValueError(f"unsupported snapshot version {version}")
    body = np.frombuffer(data, dtype="<f8", offset=_HEADER.size)
    if body.size != nx * ny:
        raise ValueError("snapshot body size does not match header")
    grid = SpectralGrid(nx, ny, lx, ly)
    return RealField2D(grid, body.reshape(nx, ny).astype(float))
