import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import free_amplitude_modulus, free_ids
from qptl.arithmetic import GOLDEN
from qptl.cocycle import ThetaScheme, lyapunov_estimate
from qptl.dynamics import (BoxTooSmall, HorizonExceeded, InsufficientHorizon, WavepacketTrace, abel_average,
                           abel_horizon, abel_time_grid, abel_weights, ballistic_half_width, box_doubling_defect,
                           build_hamiltonian, cocycle_hs_series, dt_integral_check, geometric_grid, growth_norm,
                           kkl_check, l_star, l_tilde, moment, moments_and_beta, on_spectrum_energy, p_mass,
                           p_mass_and_xi, propagate, spectral_and_ids, truncated_norm, truncated_norm_sq)
from qptl.sampling import constant, cosine, sawtooth

W = float(GOLDEN)
ZERO = constant(0.0)


@pytest.fixture(scope="module")
def free_trace():
    box = build_hamiltonian(ZERO, 0.0, W, 120)
    return propagate(box, [0.0, 1.0, 5.0, 10.0, 20.0], method="dense")


def point_mass_trace(T):
    sites = np.arange(-5, 6)
    row = (sites == 0).astype(float)
    rows = np.tile(row, (len(T), 1))
    ab = {float(t): row.copy() for t in T}
    return WavepacketTrace(np.asarray(T, dtype=float), sites, rows, rows.copy(), ab, dict(ab), 0.0, 0.0, "dense", 5)


class TestLatticeBox:
    def test_three_sites(self):
        box = build_hamiltonian(ZERO, 0.0, W, 1)
        assert np.array_equal(box.matrix(), [[0, 1, 0], [1, 0, 1], [0, 1, 0]])
        assert np.allclose(box.eigenvalues, [-math.sqrt(2), 0, math.sqrt(2)])

    @pytest.mark.parametrize("f", [cosine(3.0), sawtooth(2.0), ZERO])
    def test_gershgorin(self, f):
        box = build_hamiltonian(f, 0.3, W, 200)
        assert np.all(np.abs(box.eigenvalues) <= box.spectral_radius_bound + 1e-12)

    def test_cosine_inside_dt_window(self):
        box = build_hamiltonian(cosine(3.0), 0.1, W, 300)
        assert box.spectral_radius_bound == 8.0
        assert np.all(np.abs(box.eigenvalues) <= 9 - 1)

    def test_structure(self):
        box = build_hamiltonian(cosine(1.0), 0.2, W, 10)
        m = box.matrix()
        assert np.array_equal(m, m.T)
        assert np.all(np.diag(m, 1) == 1) and np.all(np.triu(m, 2) == 0)


class TestPropagation:
    def test_initial_state(self, free_trace):
        a = free_trace.profile(0.0)
        i0 = int(np.flatnonzero(free_trace.sites == 0)[0])
        assert a[i0] == pytest.approx(0.5) and a[i0 + 1] == pytest.approx(0.5)
        assert np.sum(a) - a[i0] - a[i0 + 1] == pytest.approx(0.0, abs=1e-14)

    @pytest.mark.parametrize("method", ["dense", "chebyshev"])
    @pytest.mark.parametrize("t", [1.0, 5.0, 20.0])
    def test_bessel_oracle(self, method, t):
        box = build_hamiltonian(ZERO, 0.0, W, 120)
        tr = propagate(box, [t], method=method)
        p0 = tr.p0[0]
        for n in range(-20, 21):
            amp = math.sqrt(p0[box.index(n)])
            assert amp == pytest.approx(free_amplitude_modulus(n, t), abs=1e-6)

    def test_unitarity_and_positivity(self, free_trace):
        assert free_trace.unitarity_defect <= 1e-8
        assert np.all(free_trace.profiles >= -1e-15)
        assert np.allclose(free_trace.profiles.sum(axis=1), 1.0, atol=1e-8)

    def test_box_too_small(self):
        with pytest.raises(BoxTooSmall):
            propagate(build_hamiltonian(ZERO, 0.0, W, 20), [30.0])

    def test_box_doubling(self):
        assert box_doubling_defect(cosine(3.0), 0.2, W, 100, [5.0, 50.0, 200.0]) <= 1e-6
        assert box_doubling_defect(ZERO, 0.0, W, ballistic_half_width(40.0), [10.0, 40.0]) <= 1e-6

    def test_methods_agree(self):
        box = build_hamiltonian(sawtooth(2.0), 0.3, W, 400)
        a = propagate(box, [3.0, 30.0], abel_T=[10.0], method="dense")
        b = propagate(box, [3.0, 30.0], abel_T=[10.0], method="chebyshev")
        assert np.max(np.abs(a.profiles - b.profiles)) < 1e-10
        # streaming Abel quadrature interpolates linearly between nodes; the dense formula is exact
        assert np.max(np.abs(a.abel_profile(10.0) - b.abel_profile(10.0))) < 2e-4


class TestAbel:
    def test_constant_and_linear(self):
        t = abel_time_grid([40.0])
        assert abel_average((t, np.ones_like(t)), 40.0) == pytest.approx(1.0, abs=1e-12)
        assert abel_average((t, t), 40.0) == pytest.approx(20.0, rel=1e-9)
        assert abel_average(lambda x: 1.0, 7.0) == pytest.approx(1.0, abs=1e-12)

    def test_smooth_integrand(self):
        T = 10.0
        exact = 1.0 / (1.0 + (T / 2) ** 2)  # <cos t>_T = (2/T) Re 1/(2/T - i)
        t = np.linspace(0.0, abel_horizon(T), 20001)
        assert abel_average((t, np.cos(t)), T) == pytest.approx(exact, abs=1e-5)

    def test_horizon_enforced(self):
        with pytest.raises(InsufficientHorizon):
            abel_weights(np.linspace(0, 10, 50), 10.0)
        assert abel_horizon(2.0, math.exp(-3)) == pytest.approx(3.0)

    @given(st.floats(0.5, 5000.0))
    def test_normalisation(self, T):
        t = abel_time_grid([T])
        assert np.sum(abel_weights(t, T)) == pytest.approx(1.0, abs=1e-10)

    def test_free_trace_mass(self):
        box = build_hamiltonian(ZERO, 0.0, W, ballistic_half_width(abel_horizon(20.0)))
        tr = propagate(box, [], abel_T=[5.0, 20.0])
        for T in (5.0, 20.0):
            assert np.sum(tr.abel_profile(T)) == pytest.approx(1.0, abs=1e-7)
            assert np.sum(abel_average(tr, T)) == pytest.approx(1.0, abs=1e-7)


class TestTransport:
    def test_point_mass(self):
        T = geometric_grid(10, 1000, 8)
        tr = point_mass_trace(T)
        rep = moments_and_beta(tr, T, [1.0, 2.0])
        assert np.all(rep.moments[2.0]["raw"] == 1.0) and np.all(rep.moments[2.0]["avg"] == 1.0)
        assert rep.beta_plus_hat[2.0].value == 0.0 and rep.beta_minus_hat[2.0].value == 0.0
        assert np.all(p_mass_and_xi(tr, T, [0.2], [0.5]).P_values[0.2] == 1.0)

    def test_grid_checks(self):
        tr = point_mass_trace([1.0, 2.0])
        with pytest.raises(ValueError):
            moments_and_beta(tr, [1.0, 2.0], [2.0])
        with pytest.raises(ValueError):
            moments_and_beta(tr, [1, 2, 3, 4, 5, 6, 7, 8], [2.0])

    def test_mass_function(self, free_trace):
        a = free_trace.profile(10.0)
        s = free_trace.sites
        Ps = [p_mass(a, s, N) for N in range(0, 120)]
        assert np.all(np.diff(Ps) >= -1e-15)
        assert p_mass(a, s, 10 ** 6) == pytest.approx(1.0, abs=1e-8)
        assert p_mass(a, s, l_star(a, s, 0.5)) > 0.5
        assert p_mass(a, s, l_star(a, s, 0.5) - 1) <= 0.5

    @given(st.lists(st.floats(0, 1), min_size=5, max_size=40), st.floats(0.1, 3), st.floats(0.1, 3))
    def test_moments_nondecreasing_in_p(self, w, p, q):
        a = np.asarray(w) + 1e-3
        a /= a.sum()
        sites = np.arange(a.size) - a.size // 2
        lo, hi = sorted((p, q))
        assert 1.0 <= moment(a, sites, lo) <= moment(a, sites, hi) * (1 + 1e-12)


class TestTruncatedNorms:
    def test_examples(self):
        ones = lambda n: 1.0
        assert truncated_norm_sq(ones, 4) == 4.0
        assert truncated_norm_sq(ones, 2.5) == 2.5
        assert truncated_norm_sq(lambda n: np.eye(2), 3) == pytest.approx(6.0)
        assert truncated_norm_sq({n: 1.0 for n in range(-3, 4)}, (2.5, 1.0)) == pytest.approx(4.5)
        assert truncated_norm(ones, 9) == 3.0
        with pytest.raises(ValueError):
            truncated_norm_sq(ones, 0.5)

    @given(st.lists(st.floats(0, 10), min_size=12, max_size=12), st.floats(1, 10), st.floats(0, 1))
    def test_monotone(self, vals, L, bump):
        base = lambda n: vals[n - 1]
        more = lambda n: vals[n - 1] + bump
        assert truncated_norm_sq(base, L) <= truncated_norm_sq(base, min(L + 0.5, 11)) + 1e-12
        assert truncated_norm_sq(base, L) <= truncated_norm_sq(more, L) + 1e-12

    def test_l_tilde_free_elliptic(self):
        for eps in (0.5, 0.1):
            assert l_tilde(ZERO, W, 0.0, 0.3, eps) == pytest.approx(2 / eps ** 2, rel=1e-12)
            assert l_tilde(ZERO, W, 0.0, 0.3, eps, direction=-1) == pytest.approx(2 / eps ** 2, rel=1e-12)

    def test_l_tilde_hyperbolic_is_logarithmic(self):
        vals = [l_tilde(ZERO, W, 3.0, 0.3, 10.0 ** -j) for j in (2, 4, 8)]
        steps = np.diff(vals)
        assert vals[-1] < 30
        # each factor 10^-2 or 10^-4 in epsilon adds about ln(10^j) / L steps
        assert steps[0] == pytest.approx(math.log(1e2) / 0.9624, rel=0.1)
        assert steps[1] == pytest.approx(math.log(1e4) / 0.9624, rel=0.1)

    @pytest.mark.parametrize("z,eps", [(3.0, 1e-3), (0.0, 0.2), (1.5, 0.05)])
    def test_l_tilde_solves_equation(self, z, eps):
        f = cosine(1.0)
        L = l_tilde(f, W, z, 0.3, eps)
        m = f(np.array([0.3]))[0]
        inv_norm = np.linalg.norm(np.array([[0, 1], [-1, z - m]]), 2)
        target = (2 * inv_norm / eps) ** 2
        assert truncated_norm_sq(cocycle_hs_series(f, W, z, 0.3), L) == pytest.approx(target, rel=1e-10)

    def test_l_tilde_monotone_in_growth(self):
        assert l_tilde(ZERO, W, 3.0, 0.1, 0.05) <= l_tilde(ZERO, W, 0.0, 0.1, 0.05)

    def test_horizon(self):
        with pytest.raises(HorizonExceeded):
            l_tilde(ZERO, W, 0.0, 0.1, 1e-3, max_len=100)

    def test_growth_beyond_threshold(self):
        f = cosine(3.0)
        E = on_spectrum_energy(f, W, 0.0, 0.0, 1000)
        assert lyapunov_estimate(f, W, E, [100, 200, 400], ThetaScheme("grid", 256), cross_check=False).L_hat > 0.3
        Ts = [10.0 ** j for j in range(1, 9)]
        ok = [growth_norm(f, W, E, 0.37, T ** 0.5) > math.log(T) for T in Ts]
        first = ok.index(True)
        assert all(ok[first:])


class TestKKL:
    def test_empty_selection(self):
        box = build_hamiltonian(ZERO, 0.0, W, ballistic_half_width(abel_horizon(10.0)))
        rep = kkl_check(ZERO, 0.0, W, 10.0, box, 1.0, 1.0)
        assert rep.rhs_mass == 0.0 and rep.ratio is None and rep.lhs > 0

    def test_free(self):
        box = build_hamiltonian(ZERO, 0.0, W, ballistic_half_width(abel_horizon(50.0)))
        rep = kkl_check(ZERO, 0.0, W, 50.0, box, 200.0, 200.0)
        assert rep.ratio is not None and rep.ratio >= 0.01

    @pytest.mark.parametrize("T", [50.0, 200.0, 800.0])
    def test_cosine(self, T):
        box = build_hamiltonian(cosine(3.0), 0.0, W, 300)
        rep = kkl_check(cosine(3.0), 0.0, W, T, box, 200.0, 200.0)
        assert rep.ratio is not None and rep.ratio >= 0.01


class TestDT:
    def test_free_flat(self):
        rep = dt_integral_check(ZERO, W, 0.0, [100.0, 300.0, 1000.0], 0.3, 4.0)
        assert abs(rep.slope) < 0.1

    def test_free_gap_decays(self):
        rep = dt_integral_check(ZERO, W, 0.0, [10.0, 30.0, 100.0, 300.0], 0.5, 4.0, E_range=(3.0, 4.0))
        assert rep.slope < -2.0

    def test_k_floor(self):
        with pytest.raises(ValueError):
            dt_integral_check(ZERO, W, 0.0, [10.0], 0.3, 3.0)


class TestSpectral:
    def test_weights_complete(self):
        sd = spectral_and_ids(cosine(3.0), W, [0.1, 0.6], 200)
        for w0, w1 in zip(sd.w0, sd.w1):
            assert np.sum(w0) == pytest.approx(1.0, abs=1e-10)
            assert np.sum(w1) == pytest.approx(1.0, abs=1e-10)
        N = sd.ids(np.linspace(-9, 9, 200))
        assert N[0] == 0.0 and N[-1] == 1.0 and np.all(np.diff(N) >= 0)

    def test_free_ids(self):
        sd = spectral_and_ids(ZERO, W, [0.0], 2000, weights=False)
        assert float(sd.ids(0.0)) == pytest.approx(0.5, abs=1e-3)
        E = np.linspace(-1.9, 1.9, 77)
        assert np.max(np.abs(sd.ids(E) - free_ids(E))) <= 0.01

    def test_box_floor(self):
        with pytest.raises(ValueError):
            spectral_and_ids(ZERO, W, [0.0], 100)
