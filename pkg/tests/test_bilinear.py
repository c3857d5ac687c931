import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from zkgrowth.bilinear import (LabField, LabLattice, MeasureQuery, bilinear_constant,
                               bilinear_ratio, block_product_ratio, chain_ratio, cone_mask,
                               count_measure_A, localization_defect, make_block, make_smooth,
                               modulation_band, product_norm, reference_corr, resonance,
                               resonance_dmu1, resonance_dxi1, separable_product_norm,
                               sign_mask, summarize, write_trial_ledger)
from zkgrowth.dyadic import DyadicBlockSpec as B
from zkgrowth.dyadic import shell_cutoff
from zkgrowth.errors import Inapplicable, ParameterRange, PreconditionViolated, ResolutionError
from zkgrowth.grid import aniso_modulus, omega

freq = st.floats(-20, 20, allow_nan=False)


def test_resonance_examples():
    assert resonance(1.3, -0.7, 0.0, 0.0) == 0.0
    assert resonance(1.0, 0.0, 1.0, 0.0) == 6.0


@settings(max_examples=50)
@given(freq, freq, freq, freq)
def test_resonance_derivatives_by_finite_differences(xi1, mu1, xi, mu):
    h = 1e-4

    def H(a, b):
        return resonance(a, b, xi - a, mu - b)

    d_mu = (H(xi1, mu1 + h) - H(xi1, mu1 - h)) / (2 * h)
    d_xi = (H(xi1 + h, mu1) - H(xi1 - h, mu1)) / (2 * h)
    scale = 1 + xi ** 2 + mu ** 2 + xi1 ** 2 + mu1 ** 2
    assert d_mu == pytest.approx(resonance_dmu1(xi1, mu1, xi - xi1, mu - mu1), abs=1e-6 * scale)
    assert d_xi == pytest.approx(resonance_dxi1(xi1, mu1, xi - xi1, mu - mu1), abs=1e-6 * scale)


def test_sign_sets_and_cones():
    assert sign_mask("S1", 1.0, 1.0, 1.0, -1.0) and not sign_mask("S2", 1.0, 1.0, 1.0, -1.0)
    assert sign_mask("S2", 1.0, 1.0, -1.0, -1.0)
    with pytest.raises(ValueError):
        sign_mask("S3", 1, 1, 1, 1)
    assert cone_mask(1.0, np.sqrt(3.0)) and not cone_mask(1.0, 1.0)


def test_localization_defect_on_cones():
    # high-high output in S2 with both factors on the cone stays comparable to the inputs
    rng = np.random.default_rng(0)
    xi1, xi2 = rng.uniform(1, 5, 1000), -rng.uniform(1, 5, 1000)
    mu1, mu2 = np.sqrt(3) * xi1, np.sqrt(3) * xi2
    d = localization_defect(xi1, mu1, xi2, mu2)
    assert np.all(d <= 1 + 1e-12)


def test_modulation_bands_match_cutoffs():
    for L in (1, 2, 8):
        lo, hi = modulation_band(L)
        s = np.linspace(0, 2 * hi, 4001)
        on = shell_cutoff(np.sqrt(1 + s ** 2), L) > 0
        assert np.all(s[on] > lo - 1e-9) and np.all(s[on] < hi + 1e-9)


def _resonant_query(N, L1, L2, sign_set, seed, offset=0.0, h=None):
    """Query whose output is built from two cone points of the sign set."""
    rng = np.random.default_rng(seed)
    r1, r2 = rng.uniform(0.8, 1.3, 2) * N
    a = np.array([r1 / np.sqrt(6), r1 / np.sqrt(2)])
    if sign_set == "S1":
        b = np.array([r2 / np.sqrt(6), -r2 / np.sqrt(2)])
    else:
        b = -np.array([r2 / np.sqrt(6), r2 / np.sqrt(2)])
    xi, mu = a + b
    tau = omega(xi, mu) - resonance(a[0], a[1], b[0], b[1]) + offset
    return MeasureQuery(float(xi), float(mu), float(tau), N, N, L1, L2, h or N / 16, sign_set)


def test_measure_resolution_guard():
    with pytest.raises(ResolutionError):
        count_measure_A(MeasureQuery(1.0, 1.0, 0.0, 8, 8, 1, 1, 1.0))
    with pytest.raises(ValueError):
        MeasureQuery(1.0, 1.0, 0.0, 6, 8, 1, 1, 0.1)


def test_thin_set_at_unit_modulation():
    q = MeasureQuery(0.31 * 16, -0.23 * 16, 17.3, 16, 16, 1, 1, 1.0, "S2")
    a = count_measure_A(q)
    b = count_measure_A(MeasureQuery(q.xi, q.mu, q.tau, 16, 16, 1, 1, 0.5, "S2"))
    assert a.count == 0 and b.count == 0


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_measure_linear_in_min_modulation(seed):
    Ls = [1, 2, 4, 8]
    L2 = 64
    q0 = _resonant_query(8, 1, L2, "S1", seed, offset=L2)
    res = [count_measure_A(MeasureQuery(q0.xi, q0.mu, q0.tau, 8, 8, L, L2, 0.5, "S1")) for L in Ls]
    per_band = np.array([r.estimate / r.min_band for r in res])
    assert np.all(per_band > 0)
    assert per_band.max() / per_band.min() <= 1.1
    slope = np.polyfit(np.log(Ls), np.log([r.estimate for r in res]), 1)[0]
    assert 0.8 <= slope <= 1.1


@pytest.mark.parametrize("sign_set", ["S1", "S2"])
def test_chain_ratio_resolution_doubling(sign_set):
    for seed in range(3):
        q = _resonant_query(8, 2, 4, sign_set, seed, offset=0.5)
        a, b = chain_ratio(q), chain_ratio(MeasureQuery(q.xi, q.mu, q.tau, 8, 8, 2, 4, q.h / 2,
                                                        sign_set))
        assert a > 0 and 0.5 <= a / b <= 2


def test_make_block_normalised_and_localised():
    spec = B(4, 2)
    lat = LabLattice.for_blocks(24, [spec])
    f = make_block(spec, lat, seed=5)
    assert f.l2() == pytest.approx(1.0, abs=1e-12)
    S, X, M = lat.mesh()
    w = shell_cutoff(np.sqrt(1 + aniso_modulus(X, M) ** 2), 4)
    assert np.all(f.coeffs[w == 0] == 0)
    # Hermitian symmetry: the field is real
    c = f.coeffs
    flipped = np.roll(np.conj(c[::-1, ::-1, ::-1]), 1, axis=(0, 1, 2))
    assert np.allclose(c, flipped)


def test_make_block_seeds_decorrelate():
    spec = B(4, 2)
    lat = LabLattice.for_blocks(24, [spec])
    corr = reference_corr(lat)
    c = [abs(np.vdot(make_block(spec, lat, 2 * i, corr).coeffs,
                     make_block(spec, lat, 2 * i + 1, corr).coeffs)) * lat.cell
         for i in range(100)]
    assert np.quantile(c, 0.95) < 0.2
    assert np.mean(c) < 0.1


def test_make_block_reproducible():
    lat = LabLattice.for_blocks(16, [B(2, 1)])
    assert np.array_equal(make_block(B(2, 1), lat, 3).coeffs, make_block(B(2, 1), lat, 3).coeffs)


def test_separable_norm_matches_pair_table():
    lat = LabLattice.for_blocks(16, [B(2, 2)])
    f, g = make_smooth(lat, 1), make_block(B(2, 2), lat, 2)
    w_sp = lambda x, m: (1 + aniso_modulus(x, m) ** 2) ** 0.7  # noqa: E731
    w_sg = lambda s: (1 + s ** 2) ** -0.4  # noqa: E731
    a = separable_product_norm(f, g, w_sp, w_sg)
    b = product_norm(f, g, weight_fn=lambda x, m, s: w_sp(x, m) * w_sg(s))
    assert a == pytest.approx(b, rel=1e-12)


def test_block_modes_preconditions():
    with pytest.raises(PreconditionViolated):
        block_product_ratio(B(2, 1), B(4, 1), "measure2", 1)
    with pytest.raises(PreconditionViolated):
        block_product_ratio(B(2, 1), B(2, 1), "measure3", 1)


def test_far_shells_measure2_finite():
    r = block_product_ratio(B(16, 1), B(1, 1), "measure2", 100, n=24)
    assert np.isfinite(r) and r > 0


def test_bilinear_zero_inputs():
    lat = LabLattice.for_blocks(16, [B(2, 2)])
    z = LabField(lat, np.zeros((16, 16, 16), complex))
    with pytest.raises(Inapplicable):
        bilinear_ratio("b1", z, z, {"s": 1.0})


def test_bilinear_parameter_ranges():
    with pytest.raises(ParameterRange):
        bilinear_constant("b2", {"rho": 0.4, "delta": 1 / 24}, 1)
    with pytest.raises(ParameterRange):
        bilinear_constant("b1", {"s": 0.5}, 1)
    with pytest.raises(ValueError):
        bilinear_constant("b4", {}, 1)


def test_b2_at_admissible_rho():
    records = []
    r = bilinear_constant("b2", {"rho": 0.2, "delta": 1 / 24}, 10, n=16, records=records)
    assert np.isfinite(r) and len(records) == 10


def test_tame_bounded_by_b1_on_same_trials(tmp_path):
    r1, r3 = [], []
    bilinear_constant("b1", {"s": 2}, 30, n=16, records=r1)
    bilinear_constant("b3", {"s": 2}, 30, n=16, records=r3)
    q = [a["ratio"] / b["ratio"] for a, b in zip(r3, r1)]
    assert max(q) <= 2 ** (2 * (2 - 1))
    write_trial_ledger(tmp_path / "t.csv", r1)
    assert (tmp_path / "t.csv").read_text().startswith("estimate,params,seed,lhs,rhs,ratio")
    (row,) = summarize(r1)
    assert row["trials"] == 30 and row["max"] >= row["median"]
