import numpy as np
import pytest

from zkgrowth.grid import RealField2D, SpectralGrid


def gaussian(grid, amplitude=1.0, width=2.0):
    x, y = grid.coordinates()
    cx, cy = grid.box_length_x / 2, grid.box_length_y / 2
    r2 = (x - cx) ** 2 + (y - cy) ** 2
    return RealField2D(grid, amplitude * np.exp(-r2 / (2 * width ** 2)))


def band_limited_noise(grid, seed, kmax=6):
    """Real white noise low-passed to ``|j|, |k| < kmax``."""
    rng = np.random.default_rng(seed)
    spec = grid.forward(rng.standard_normal(grid.shape))
    j = np.abs(np.fft.fftfreq(grid.nx, 1.0 / grid.nx))[:, None]
    k = np.fft.rfftfreq(grid.ny, 1.0 / grid.ny)[None, :]
    return RealField2D.from_spectrum(grid, spec * ((j < kmax) & (k < kmax)))


@pytest.fixture
def grid32():
    return SpectralGrid(32, 32, 16 * np.pi, 16 * np.pi)


@pytest.fixture
def grid64():
    return SpectralGrid(64, 64, 16 * np.pi, 16 * np.pi)
