import numpy as np
import pytest

from conftest import band_limited_noise, gaussian
from zkgrowth.bourgain import (DEFAULT_WINDOW, SpaceTimeField, TimeCutoff, check_duhamel_estimate,
                               check_L4_embedding, check_linear_estimate, check_time_shrink,
                               hb_norm, hb_norm_phi, phi, truncated_duhamel, write_report,
                               xsb_norm)
from zkgrowth.errors import Inapplicable, ParameterRange, SupportLeakage
from zkgrowth.grid import RealField2D, SpectralGrid, sobolev_norm

DELTA = 1 / 24


@pytest.fixture(scope="module")
def grid():
    return SpectralGrid(32, 32, 16 * np.pi, 16 * np.pi)


@pytest.fixture(scope="module")
def f0(grid):
    return gaussian(grid, 1.0, 2.0)


def _window_field(grid, spatial, nt=256, envelope=phi):
    t_min, t_max = DEFAULT_WINDOW
    t = t_min + (t_max - t_min) / nt * np.arange(nt)
    return SpaceTimeField(grid, t_min, t_max, envelope(t)[:, None, None] * spatial.values[None])


def test_phi_profile():
    t = np.linspace(-1.5, 2.5, 4001)
    v = phi(t)
    assert np.all(v[(t >= 0) & (t <= 1)] == 1)
    assert np.all(v[(t <= -1) | (t >= 2)] == 0)
    with pytest.raises(ParameterRange):
        TimeCutoff(1.5)


def test_hb_norm_of_gaussian_against_quadrature():
    # ||e^{-t^2/2}||_{H^1}^2 = int (1 + tau^2) 2 pi e^{-tau^2} dtau / (2 pi) = sqrt(pi) * 3/2
    dt = 0.01
    t = -20 + dt * np.arange(4000)
    assert hb_norm(np.exp(-t ** 2 / 2), dt, 1.0) ** 2 == pytest.approx(1.5 * np.sqrt(np.pi), rel=1e-10)


def test_round_trip_3d(grid, f0):
    f = SpaceTimeField.linear_flow(f0, 1.0)
    coeffs, _ = f.modulated_spectrum()
    back = f.from_modulated_spectrum(coeffs)
    assert np.max(np.abs(back.values - f.values)) <= 1e-12 * np.max(np.abs(f.values))
    with pytest.raises(ValueError):
        SpaceTimeField(grid, 0.0, 1.0, np.zeros((3, 32, 32)))


def test_xsb_00_is_l2(grid):
    f = SpaceTimeField.linear_flow(band_limited_noise(grid, 9, kmax=10), 0.5)
    assert xsb_norm(f, 0, 0) == pytest.approx(f.l2_norm(), rel=1e-12)


@pytest.mark.parametrize("T", [1, 0.5, 0.25])
@pytest.mark.parametrize("s", [0, 1, 2])
def test_linear_flow_identity(f0, s, T):
    f = SpaceTimeField.linear_flow(f0, T)
    for b in (0, 5 / 12, 0.5, 0.6):
        ratio = xsb_norm(f, s, b) / (hb_norm_phi(T, b) * sobolev_norm(f0, s))
        assert 0.98 <= ratio <= 1.02


def test_xsb_monotone_in_b(grid):
    f = _window_field(grid, band_limited_noise(grid, 3))
    vals = [xsb_norm(f, 1, b) for b in (-0.5, 0, 0.25, 0.5, 1)]
    assert all(a <= b for a, b in zip(vals, vals[1:]))


def test_support_leakage(grid, f0):
    f = _window_field(grid, f0, envelope=lambda t: np.ones_like(t))
    with pytest.raises(SupportLeakage):
        xsb_norm(f, 0, 0)


@pytest.mark.parametrize("b", [0, 5 / 12, 0.6])
def test_linear_estimate_at_T1(f0, b):
    assert check_linear_estimate(f0, 1, b, 1.0) == pytest.approx(hb_norm_phi(1.0, b), rel=0.02)


def test_linear_estimate_half_b_T_sweep(f0):
    # at b = 1/2 the T power drops out of the normalisation
    r = [check_linear_estimate(f0, 1, 0.5, T) for T in (1, 0.5, 0.25, 0.125)]
    assert max(r) / min(r) <= 1.05


def test_linear_estimate_zero_data(grid):
    with pytest.raises(Inapplicable):
        check_linear_estimate(RealField2D.zeros(grid), 1, 0.5, 1.0)


def test_duhamel_zero_forcing(grid):
    g = _window_field(grid, RealField2D.zeros(grid))
    with pytest.raises(Inapplicable):
        check_duhamel_estimate(g, 1, 0.5 + DELTA, -0.5 + 2 * DELTA, 1.0)


def test_duhamel_rejects_bad_pair(grid, f0):
    g = _window_field(grid, f0)
    with pytest.raises(ParameterRange):
        check_duhamel_estimate(g, 1, 0.5, 0.1, 1.0)


def _smooth_forcing(grid):
    return _window_field(grid, band_limited_noise(grid, 4, kmax=8), envelope=lambda t: phi(t / 1.5))


def test_duhamel_working_pair_finite(grid):
    r = check_duhamel_estimate(_smooth_forcing(grid), 1, 0.5 + DELTA, -0.5 + 2 * DELTA, 1.0)
    assert np.isfinite(r) and r > 0


def test_duhamel_T_sweep(grid):
    g = _smooth_forcing(grid)
    r = [check_duhamel_estimate(g, 1, 0.5 + DELTA, -0.5 + 2 * DELTA, T) for T in (1, 0.5, 0.25)]
    assert max(r) / min(r) <= 3


def test_truncated_duhamel_of_constant_forcing(grid, f0):
    # forcing W(t) f0 integrates to t W(t) f0 inside [0, T]
    g = SpaceTimeField.linear_flow(f0, 1.0)
    out = truncated_duhamel(g, 1.0)
    k = np.argmin(np.abs(g.times - 0.5))
    expect = g.times[k] * g.values[k]
    assert np.max(np.abs(out.values[k] - expect)) <= 1e-6 * np.max(np.abs(expect))


def test_time_shrink_boundary_rejected(grid, f0):
    with pytest.raises(ParameterRange):
        check_time_shrink(SpaceTimeField.linear_flow(f0, 1.0), 1, 0.5, 0.5, 0.25)


def test_time_shrink_zero(grid):
    with pytest.raises(Inapplicable):
        check_time_shrink(_window_field(grid, RealField2D.zeros(grid)), 1, 0.5, 0.25, 0.25)


def test_time_shrink_refinement():
    r = []
    for n, nt in ((32, 256), (64, 512)):
        g = SpectralGrid(n, n, 16 * np.pi, 16 * np.pi)
        f0 = band_limited_noise(SpectralGrid(32, 32, 16 * np.pi, 16 * np.pi), 5, kmax=8)
        spec = np.zeros(g.spectral_shape, dtype=complex)
        spec[:16, :17] = f0.spectrum[:16] * (n / 32) ** 2
        spec[-16:, :17] = f0.spectrum[16:] * (n / 32) ** 2
        u = SpaceTimeField.linear_flow(RealField2D.from_spectrum(g, spec), 1.0, nt=nt)
        r.append(check_time_shrink(u, 1, 0.5, 0.25, 0.25))
    assert np.all(np.isfinite(r))
    assert r[1] / r[0] == pytest.approx(1, abs=0.25)


def test_L4_ratios(grid):
    f = _window_field(grid, band_limited_noise(grid, 6, kmax=8))
    a, b = check_L4_embedding(f, "A"), check_L4_embedding(f, "B", s=1)
    assert np.isfinite(a) and np.isfinite(b)
    assert check_L4_embedding(f * 7.5, "A") == pytest.approx(a, rel=1e-12)
    assert check_L4_embedding(f * 7.5, "B", s=1) == pytest.approx(b, rel=1e-12)
    fine = _window_field(grid, band_limited_noise(grid, 6, kmax=8), nt=512)
    assert check_L4_embedding(fine, "A") / a == pytest.approx(1, abs=0.25)
    assert check_L4_embedding(fine, "B", s=1) / b == pytest.approx(1, abs=0.25)
    with pytest.raises(Inapplicable):
        check_L4_embedding(f * 0.0)


def test_report_columns(tmp_path):
    write_report(tmp_path / "r.csv", [{"estimate_name": "x", "s": 1, "b": 0.5, "ratio": 1.0}])
    assert (tmp_path / "r.csv").read_text().splitlines()[0] == "estimate_name,s,b,bprime,T,grid,ratio"
