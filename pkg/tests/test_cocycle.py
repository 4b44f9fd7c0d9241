import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import constant_cocycle_lyapunov
from qptl.arithmetic import GOLDEN, expand_continued_fraction, rotate_orbit
from qptl.cocycle import (Cocycle, NotFound, ThetaScheme, cocycle_identity_error, growth_site_search, hs_norm,
                          iterate_cocycle, log_norms, lyapunov_estimate, matrix_norm, perturbation_check,
                          phi_estimate, pseudometric_estimate, transfer_matrix, uniform_upper_check, v_set_measure,
                          v_set_profile)
from qptl.dynamics import on_spectrum_energy
from qptl.sampling import cesaro_approximant, constant, cosine, sawtooth

W = float(GOLDEN)
ZERO = constant(0.0)
# frozen from oracles.constant_cocycle_lyapunov(3.0) = ln((3 + sqrt 5) / 2)
L_FREE_3 = 0.9624236501192069


def naive_product(f, z, theta, k):
    """Left-multiplied transfer matrices, no rescaling (k >= 0)."""
    m = np.eye(2, dtype=complex)
    for j in range(k):
        m = transfer_matrix(f, z, (theta + j * W) % 1.0) @ m
    return m


@pytest.fixture(scope="module")
def cos3():
    return cosine(3.0)


@pytest.fixture(scope="module")
def e_cos(cos3):
    return on_spectrum_energy(cos3, W, 0.0, 0.0, 1000)


def test_frozen_constant_matches_oracle():
    assert constant_cocycle_lyapunov(3.0) == pytest.approx(L_FREE_3, abs=1e-15)
    assert L_FREE_3 == pytest.approx(math.log((3 + math.sqrt(5)) / 2), abs=1e-15)


class TestTransferMatrix:
    def test_examples(self):
        assert np.array_equal(transfer_matrix(ZERO, 0, 0.3), [[0, -1], [1, 0]])
        assert np.array_equal(transfer_matrix(cosine(1.0), 1, 0.0), [[-1, -1], [1, 0]])

    @given(st.floats(-10, 10), st.floats(-10, 10), st.floats(0, 1, exclude_max=True))
    def test_unit_determinant(self, re, im, theta):
        m = transfer_matrix(sawtooth(2.0), complex(re, im), theta)
        assert np.linalg.det(m) == pytest.approx(1.0, abs=1e-12)

    def test_norms(self):
        rng = np.random.default_rng(3)
        m = rng.normal(size=(20, 2, 2)) + 1j * rng.normal(size=(20, 2, 2))
        assert np.allclose(matrix_norm(m), [np.linalg.norm(x, 2) for x in m])
        assert np.allclose(hs_norm(m), [np.linalg.norm(x, "fro") for x in m])


class TestProducts:
    def test_zero_steps(self, cos3):
        p = iterate_cocycle(cos3, W, 0.4, 0.2, 0)
        assert np.allclose(p.matrix, np.eye(2)) and p.log_scale == 0.0

    def test_quarter_turn(self):
        assert np.allclose(iterate_cocycle(ZERO, W, 0.0, 0.1, 4).to_matrix(), np.eye(2), atol=1e-14)

    @pytest.mark.parametrize("k", [1, 7, 30, 60])
    def test_against_naive_product(self, cos3, k):
        for z in (0.3, 2.0 + 0.5j):
            p = iterate_cocycle(cos3, W, z, 0.37, k)
            ref = naive_product(cos3, z, 0.37, k)
            assert np.linalg.norm(p.to_matrix() - ref) <= 1e-11 * np.linalg.norm(ref)

    def test_backward_identity(self, cos3):
        m = 13
        back = iterate_cocycle(cos3, W, 0.7, 0.2, -m).to_matrix()
        fwd = iterate_cocycle(cos3, W, 0.7, rotate_orbit(0.2, W, -m), m).to_matrix()
        scale = np.linalg.norm(back, 2) * np.linalg.norm(fwd, 2)
        assert np.linalg.norm(back @ fwd - np.eye(2), 2) <= 1e-12 * scale

    def test_rescaled_product_invariants(self, cos3):
        p = iterate_cocycle(cos3, W, 0.5, 0.1, 20000)
        assert abs(p.log_abs_det()) < 1e-8
        assert p.log_norm() >= 0
        assert 1.0 <= matrix_norm(p.matrix) <= 2.0 ** 256

    @given(st.integers(-50, 50), st.integers(-50, 50), st.floats(0, 1, exclude_max=True),
           st.floats(-4, 4), st.floats(-1, 1))
    def test_cocycle_identity(self, n, m, theta, re, im):
        assert cocycle_identity_error(sawtooth(2.0), W, complex(re, im), theta, n, m) <= 1e-10

    @given(st.integers(1, 200), st.floats(0, 1, exclude_max=True), st.floats(-8, 8))
    def test_norm_equals_inverse_norm_for_real_z(self, k, theta, E):
        # A_k(theta)^{-1} = A_{-k}(R^k theta), built independently from inverse factors
        fwd = iterate_cocycle(cosine(3.0), W, E, theta, k).log_norm()
        inv = iterate_cocycle(cosine(3.0), W, E, rotate_orbit(theta, W, k), -k).log_norm()
        assert math.exp(inv - fwd) == pytest.approx(1.0, abs=1e-10)

    def test_handle(self, cos3):
        c = Cocycle(cos3, W, 1.0)
        tab = c.log_norm_table([0.1, 0.2], 5)
        assert tab.shape == (5, 2)
        assert tab[4, 0] == pytest.approx(c(0.1, 5).log_norm())
        assert np.allclose(c.log_norms([0.1, 0.2], 5), tab[4])


class TestLyapunov:
    def test_free_elliptic(self):
        est = lyapunov_estimate(ZERO, W, 0.0, [10, 20, 40])
        assert abs(est.L_hat) <= 1e-6

    def test_free_hyperbolic(self):
        est = lyapunov_estimate(ZERO, W, 3.0, [250, 500, 1000, 2000])
        assert est.L_hat == pytest.approx(L_FREE_3, abs=1e-3)

    def test_cosine_on_spectrum(self, cos3, e_cos):
        a = lyapunov_estimate(cos3, W, e_cos, [250, 500, 1000], ThetaScheme("grid", 512))
        b = lyapunov_estimate(cos3, W, e_cos, [2500, 5000, 10000], ThetaScheme("birkhoff", 64, 0.123))
        assert a.L_hat == pytest.approx(math.log(3), rel=0.05)
        assert a.L_hat == pytest.approx(b.L_hat, rel=0.02)
        assert not a.flagged

    def test_subadditivity(self, cos3, e_cos):
        ks = [25, 50, 100, 200, 400, 800]
        c = lyapunov_estimate(cos3, W, e_cos, ks, ThetaScheme("grid", 1024), cross_check=False).c_k
        for k, ck, c2k in zip(ks, c, c[1:]):
            assert 2 * k * c2k <= 2 * k * ck + 1e-3

    def test_forward_and_backward_agree(self, cos3, e_cos):
        theta = (np.arange(512) + 0.5) / 512
        fwd = np.mean(log_norms(cos3, W, e_cos, theta, 400)) / 400
        bwd = np.mean(log_norms(cos3, W, e_cos, theta, -400)) / 400
        spread = lyapunov_estimate(cos3, W, e_cos, [100, 200, 400], ThetaScheme("grid", 512)).spread
        assert abs(fwd - bwd) <= max(spread, 1e-3)

    def test_k_list_validated(self):
        with pytest.raises(ValueError):
            lyapunov_estimate(ZERO, W, 0.0, [10, 20])


class TestUniformUpper:
    def test_free_elliptic_no_excess(self):
        rep = uniform_upper_check(ZERO, W, 0.0, [10, 20], 64, 0.1, 0.0)
        assert abs(rep.max_excess) < 1e-12

    def test_free_hyperbolic(self):
        rep = uniform_upper_check(ZERO, W, 3.0, [100], 256, 0.1, L_FREE_3)
        assert rep.max_excess <= 0.05


class TestPerturbation:
    def test_identical(self, cos3):
        rep = perturbation_check(cos3, cos3, W, 1.0, 0.3, 50, 1.1)
        assert rep.lhs == 0.0 and rep.ok

    def test_sawtooth_against_fejer(self):
        f = sawtooth(2.0)
        fb = cesaro_approximant(f, 64).as_function()
        E = on_spectrum_energy(f, W, 0.0, 0.0, 500)
        L = lyapunov_estimate(f, W, E, [100, 200, 400], cross_check=False).L_hat
        rng = np.random.default_rng(11)
        # the bound is claimed for k beyond some K; small k (<= 20) can break it
        for theta in rng.random(100):
            for k in (50, 100, 250, 500):
                assert perturbation_check(f, fb, W, E, theta, k, L).ok


class TestLevelSets:
    def test_trivial_levels(self):
        assert v_set_measure(ZERO, W, 0.0, 20, 0.1, 1000) == 0.0
        assert v_set_measure(ZERO, W, 0.0, 20, -0.1, 1000) == 1.0

    def test_grid_floor(self):
        with pytest.raises(ValueError):
            v_set_measure(ZERO, W, 0.0, 20, 0.1, 999)

    def test_cosine_large_set(self, cos3, e_cos):
        L = lyapunov_estimate(cos3, W, e_cos, [250, 500, 1000], cross_check=False).L_hat
        assert v_set_measure(cos3, W, e_cos, 1000, (1 - 0.2 / 16) * L, 2000) >= 0.5

    @given(st.lists(st.floats(-0.5, 2.0), min_size=2, max_size=8))
    def test_nonincreasing(self, levels):
        levels = sorted(levels)
        m = v_set_profile(cosine(3.0), W, 0.5, 50, levels, 1000)
        assert np.all(np.diff(m) <= 0)


class TestGrowthSite:
    def test_constant_cocycle(self):
        freq = expand_continued_fraction(GOLDEN, 60)
        for k in (50, 80):
            for theta in (0.0, 0.3, 0.77):
                cert = growth_site_search(ZERO, 3.0, 0.2, k, freq, theta, L_FREE_3)
                assert cert.x == 0 and cert.valid

    def test_nonpositive_threshold(self):
        freq = expand_continued_fraction(GOLDEN, 10)
        cert = growth_site_search(ZERO, 0.0, 0.2, 30, freq, 0.4, 0.0)
        assert cert.x == 0 and cert.valid

    def test_window_violation_is_reported(self):
        freq = expand_continued_fraction(GOLDEN, 60)
        with pytest.raises(ValueError):
            growth_site_search(ZERO, 3.0, 0.2, 200, freq, 0.1, L_FREE_3, n=3)

    def test_not_found_is_raised(self):
        freq = expand_continued_fraction(GOLDEN, 60)
        # a deliberately wrong L_hat puts the threshold above any achievable growth
        with pytest.raises(NotFound):
            growth_site_search(ZERO, 3.0, 0.2, 2, freq, 0.1, 5.0, n=6)


class TestPhi:
    def test_free_elliptic_decays(self):
        vals = [phi_estimate(ZERO, W, 0.0, 0.5, 1.0, T, 32, 8).value for T in (1e2, 1e3, 1e4)]
        assert vals[0] > vals[1] > vals[2]
        assert vals[2] < 1e-3

    def test_free_hyperbolic_grows(self):
        vals = [phi_estimate(ZERO, W, 3.0, 0.5, 2.0, T, 32, 8).value for T in (1e2, 1e3, 1e4)]
        assert all(v >= 1 for v in vals[1:])

    def test_step_cap(self):
        with pytest.raises(ValueError):
            phi_estimate(ZERO, W, 0.0, 1.0, 1.0, 2e6)

    def test_huge_value_saturates(self):
        ph = phi_estimate(ZERO, W, 3.0, 0.5, 1.0, 1e10, 8, 4)
        assert ph.log_value > 709 and ph.value == math.inf


class TestPseudometric:
    def test_identical(self, cos3):
        c = Cocycle(cos3, W, 0.5)
        assert pseudometric_estimate(c, c, 0.01, 10, 256).value == 0.0

    def test_bounded_by_perturbation_runs(self):
        f = sawtooth(2.0)
        fb = cesaro_approximant(f, 64).as_function()
        E = 0.3
        rep = pseudometric_estimate(Cocycle(f, W, E), Cocycle(fb, W, E), 0.01, 20, 256)
        assert 0 <= rep.value < 1
        theta = np.arange(256) / 256
        bound = 0.0
        for n in range(1, 21):
            e = max(math.exp(perturbation_check(f, fb, W, E, t, n, 0.0).log_lhs) for t in theta)
            bound += 2.0 ** -n * e / (1 + e)
        assert rep.value <= bound + 1e-12
