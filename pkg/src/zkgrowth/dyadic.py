"""Littlewood-Paley cutoffs, the projectors P_N and Q_L, shell spectra.

Shell labels are dyadic integers.  Label 1 is the low block ``chi0(r)``;
label ``N = 2**(j+1)`` selects ``chi_j(r) = chi(r / 2**j)``, which is
supported on ``5N/8 < r < 8N/5`` so that ``r ~ N`` on its support.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

R_PLATEAU = 5.0 / 4.0
R_SUPPORT = 8.0 / 5.0


def _g(x):
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    pos = x > 0
    out[pos] = np.exp(-1.0 / x[pos])
    return out


def smoothstep(x):
    """C-infinity step: 0 for ``x <= 0``, 1 for ``x >= 1``, monotone between."""
    a = _g(x)
    b = _g(1.0 - np.asarray(x, dtype=float))
    return a / (a + b)


def chi0(r):
    """Base cutoff: 1 on ``r <= 5/4``, 0 on ``r >= 8/5``, non-increasing."""
    r = np.asarray(r, dtype=float)
    return 1.0 - smoothstep((r - R_PLATEAU) / (R_SUPPORT - R_PLATEAU))


def chi(r):
    """Annular cutoff ``chi0(r/2) - chi0(r)``."""
    r = np.asarray(r, dtype=float)
    return chi0(r / 2.0) - chi0(r)


def chi_j(r, j: int):
    return chi(np.asarray(r, dtype=float) / 2.0 ** j)


def is_dyadic(n) -> bool:
    n = int(n)
    return n >= 1 and n & (n - 1) == 0


def shell_cutoff(r, label: int):
    """Cutoff for dyadic shell ``label`` (1 = low block)."""
    if not is_dyadic(label):
        raise ValueError(f"shell label must be a power of two >= 1, got {label}")
    if label == 1:
        return chi0(r)
    j = int(label).bit_length() - 2
    return chi_j(r, j)


def shell_support(label: int):
    """Open interval of ``r`` where the shell cutoff is nonzero."""
    if label == 1:
        return (-np.inf, R_SUPPORT)
    return (5.0 * label / 8.0, 8.0 * label / 5.0)


def shell_labels(r_max: float):
    """Labels ``1, 2, 4, ...`` whose partition covers ``r <= r_max`` exactly."""
    labels = [1]
    while R_PLATEAU * labels[-1] <= r_max:  # chi0(r / 2**(J+1)) == 1 beyond here
        labels.append(labels[-1] * 2)
    return labels


def partition_deviation(r):
    """Max deviation of ``chi0 + sum_j chi_j`` from 1 on the sample ``r``."""
    r = np.asarray(r, dtype=float)
    total = np.zeros_like(r)
    for label in shell_labels(float(r.max())):
        total += shell_cutoff(r, label)
    return float(np.max(np.abs(total - 1.0)))


@dataclass(frozen=True)
class DyadicBlockSpec:
    """Frequency shell ``N``, modulation shell ``L`` and an optional sign set."""

    N: int
    L: int
    sign_set: str | None = None

    def __post_init__(self):
        if not (is_dyadic(self.N) and is_dyadic(self.L)):
            raise ValueError("N and L must be powers of two >= 1")
        if self.sign_set not in (None, "S1", "S2"):
            raise ValueError("sign_set must be None, 'S1' or 'S2'")


# --- projectors ------------------------------------------------------------
def _project_space(f, weight_fn):
    from .bourgain import SpaceTimeField
    from .grid import RealField2D

    if isinstance(f, RealField2D):
        w = weight_fn(f.grid.bracket)
        return RealField2D.from_spectrum(f.grid, f.spectrum * w)
    if isinstance(f, SpaceTimeField):
        coeffs, _ = f.modulated_spectrum()
        w = weight_fn(f.full_bracket)
        return f.from_modulated_spectrum(coeffs * w[None])
    raise TypeError(f"cannot project {type(f).__name__}")


def project_P(f, N: int):
    """``P_N f``: multiply by ``chi_N(<|(xi, mu)|>)``."""
    if N < 2:
        raise ValueError("project_P takes N >= 2; use project_P_low for the low block")
    return _project_space(f, lambda r: shell_cutoff(r, N))


def project_P_low(f):
    """Low block ``chi0(<|(xi, mu)|>)``."""
    return _project_space(f, chi0)


def project_Q(f, L: int):
    """``Q_L f``: multiply by ``chi_L(<tau - omega>)``; ``L = 1`` is the low block."""
    coeffs, sigma = f.modulated_spectrum()
    w = shell_cutoff(np.sqrt(1.0 + sigma ** 2), L)
    return f.from_modulated_spectrum(coeffs * w)


def shell_spectrum(u, sharp: bool = False):
    """List of ``(N, ||P_N u||^2)`` including the low block ``N = 1``.

    With ``sharp=True`` the weights ``chi_N^2 / sum_M chi_M^2`` are used, so
    the energies sum to ``||u||^2`` exactly.
    """
    grid = u.grid
    r = grid.bracket
    labels = shell_labels(float(r.max()))
    cut = {N: shell_cutoff(r, N) for N in labels}
    if sharp:
        norm = sum(c ** 2 for c in cut.values())
        weights = {N: c ** 2 / norm for N, c in cut.items()}
    else:
        weights = {N: c ** 2 for N, c in cut.items()}
    return [(N, grid.spectral_l2_sq(u.spectrum, weights[N])) for N in labels]
