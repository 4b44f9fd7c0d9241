"""Transfer-matrix cocycles A^{f,z}(theta) = [[z - f(theta), -1], [1, 0]] over theta -> theta + omega.

Long products are carried in QR form: A_k = Q R with Q unitary and R upper triangular
with positive diagonal, stored as logs of the diagonal plus the ratio r12/r11. This
never overflows and keeps the subdominant direction, so determinants and norms stay
accurate for products of any length.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numba import njit

from .arithmetic import FrequencyData, orbit_phases, rotate_orbit
from .sampling import PiecewiseHolderFunction, _circle_dist

MAX_STEPS = 10 ** 7
_CHUNK = 2048


class NotFound(RuntimeError):
    """No growth site inside the scanned window."""


# --------------------------------------------------------------------------- single matrices

def transfer_matrix(f: PiecewiseHolderFunction, z: complex, theta: float) -> np.ndarray:
    """[[z - f(theta), -1], [1, 0]]."""
    a = z - float(f(np.mod(theta, 1.0)))
    dtype = complex if np.iscomplexobj(z) else float
    return np.array([[a, -1.0], [1.0, 0.0]], dtype=dtype)


def matrix_norm(m) -> np.ndarray:
    """Largest singular value of (a stack of) 2x2 matrices, closed form."""
    m = np.asarray(m)
    s = np.sum(np.abs(m) ** 2, axis=(-2, -1))
    det = np.abs(m[..., 0, 0] * m[..., 1, 1] - m[..., 0, 1] * m[..., 1, 0])
    disc = np.sqrt(np.maximum(s * s - 4 * det * det, 0.0))
    return np.sqrt(0.5 * (s + disc))


def hs_norm(m) -> np.ndarray:
    return np.sqrt(np.sum(np.abs(np.asarray(m)) ** 2, axis=(-2, -1)))


# --------------------------------------------------------------------------- kernels

@njit(cache=True)
def _advance(q, l1, l2, m, z, v, inverse, runmax, hs_out):
    """Left-multiply each product by the factors for potential values v[p, :] in order.

    Forward factor [[a, -1], [1, 0]], inverse factor [[0, 1], [-1, a]], a = z - v.
    When runmax has length > 0 it receives the running max of the log norm; when
    hs_out is nonempty, hs_out[p, c] receives ln ||A||_HS^2 after step c.
    """
    n_p, n_c = v.shape
    track = runmax.shape[0] > 0
    want_hs = hs_out.shape[0] > 0
    for p in range(n_p):
        q00 = q[p, 0, 0]
        q01 = q[p, 0, 1]
        q10 = q[p, 1, 0]
        q11 = q[p, 1, 1]
        a1 = l1[p]
        a2 = l2[p]
        mm = m[p]
        zp = z[p]
        best = runmax[p] if track else 0.0
        for c in range(n_c):
            a = zp - v[p, c]
            if inverse:
                b00 = q10
                b01 = q11
                b10 = a * q10 - q00
                b11 = a * q11 - q01
            else:
                b00 = a * q00 - q10
                b01 = a * q01 - q11
                b10 = q00
                b11 = q01
            r11 = math.sqrt(b00.real ** 2 + b00.imag ** 2 + b10.real ** 2 + b10.imag ** 2)
            u0 = b00 / r11
            u1 = b10 / r11
            r12 = u0.conjugate() * b01 + u1.conjugate() * b11
            det = b00 * b11 - b01 * b10
            adet = abs(det)
            ph = det / adet
            mm = mm + (r12 / r11) * math.exp(a2 - a1)
            a1 += math.log(r11)
            a2 += math.log(adet / r11)
            q00 = u0
            q10 = u1
            q01 = -u1.conjugate() * ph
            q11 = u0.conjugate() * ph
            if want_hs:
                rho = math.exp(a2 - a1)
                hs_out[p, c] = 2.0 * a1 + math.log(1.0 + mm.real ** 2 + mm.imag ** 2 + rho * rho)
            if track:
                rho = math.exp(a2 - a1)
                s = 1.0 + mm.real ** 2 + mm.imag ** 2 + rho * rho
                d = s * s - 4.0 * rho * rho
                ln = a1 + 0.5 * math.log(0.5 * (s + math.sqrt(d if d > 0.0 else 0.0)))
                if ln > best:
                    best = ln
        q[p, 0, 0] = q00
        q[p, 0, 1] = q01
        q[p, 1, 0] = q10
        q[p, 1, 1] = q11
        l1[p] = a1
        l2[p] = a2
        m[p] = mm
        if track:
            runmax[p] = best


def _log_norm(l1, l2, m):
    rho2 = np.exp(2 * (l2 - l1))
    s = 1.0 + np.abs(m) ** 2 + rho2
    d = np.sqrt(np.maximum(s * s - 4 * rho2, 0.0))
    return l1 + 0.5 * np.log(0.5 * (s + d))


# --------------------------------------------------------------------------- products

@dataclass(frozen=True)
class ScaledProduct:
    """A_k(theta0) = e^{log_scale} * matrix, with sigma_max(matrix) >= 1 kept near 1."""

    q: np.ndarray
    log_r11: float
    log_r22: float
    ratio: complex
    k: int
    theta0: float
    z: complex

    @property
    def log_scale(self) -> float:
        return self.log_r11

    @property
    def matrix(self) -> np.ndarray:
        r = np.array([[1.0, self.ratio], [0.0, math.exp(self.log_r22 - self.log_r11)]], dtype=complex)
        out = self.q @ r
        return out.real.copy() if np.isreal(self.z) else out

    def log_norm(self) -> float:
        return float(_log_norm(np.array(self.log_r11), np.array(self.log_r22), np.array(self.ratio)))

    def log_abs_det(self) -> float:
        """ln|det A_k| from the triangular factor (should be 0)."""
        return float(self.log_r11 + self.log_r22 + math.log(abs(np.linalg.det(self.q))))

    def to_matrix(self) -> np.ndarray:
        """Explicit product; only sensible when it fits in floating point."""
        return math.exp(self.log_scale) * self.matrix

    def inverse_log_norm(self) -> float:
        """ln ||A_k^{-1}|| = ln ||A_k|| - ln|det A_k| for 2x2 matrices."""
        return self.log_norm() - (self.log_r11 + self.log_r22)


class _Batch:
    """QR state for many products advanced in lockstep."""

    def __init__(self, z: np.ndarray):
        n = z.size
        self.z = z.astype(complex)
        self.q = np.zeros((n, 2, 2), dtype=complex)
        self.q[:, 0, 0] = 1.0
        self.q[:, 1, 1] = 1.0
        self.l1 = np.zeros(n)
        self.l2 = np.zeros(n)
        self.m = np.zeros(n, dtype=complex)
        self.runmax = np.zeros(n)

    def advance(self, values: np.ndarray, inverse: bool, track: bool = False, hs: bool = False):
        """Apply the factors for ``values`` (shape (P, C)); with ``hs`` return per-step ln HS^2."""
        values = np.ascontiguousarray(values, dtype=float)
        out = np.empty(values.shape) if hs else np.zeros((0, 0))
        _advance(self.q, self.l1, self.l2, self.m, self.z, values, inverse,
                 self.runmax if track else np.zeros(0), out)
        return out if hs else None

    def log_norm(self) -> np.ndarray:
        return _log_norm(self.l1, self.l2, self.m)

    def product(self, i: int, k: int, theta0: float) -> ScaledProduct:
        return ScaledProduct(self.q[i].copy(), float(self.l1[i]), float(self.l2[i]), complex(self.m[i]),
                             k, theta0, complex(self.z[i]))


def _run(f, omega: float, z: np.ndarray, theta: np.ndarray, k: int, record: Sequence[int] = (),
         track_max: bool = False, chunk: int = _CHUNK):
    """Advance products A_k(theta_p) at spectral parameters z_p.

    Returns the batch and, for every step count in ``record``, the log norms then.
    For k < 0 the backward products are built from inverse factors at theta - j*omega.
    """
    if abs(k) > MAX_STEPS:
        raise ValueError(f"|k| = {abs(k)} exceeds {MAX_STEPS}")
    batch = _Batch(np.broadcast_to(np.asarray(z, dtype=complex), theta.shape).copy())
    recs = sorted(set(int(abs(r)) for r in record))
    snap = {}
    if 0 in recs:
        snap[0] = batch.log_norm()
    steps = abs(k)
    sign = 1 if k >= 0 else -1
    cuts = sorted(set([r for r in recs if 0 < r <= steps] + [steps]))
    done = 0
    for stop in cuts:
        while done < stop:
            n = min(chunk, stop - done)
            j = np.arange(done, done + n, dtype=float)
            if sign > 0:
                ph = np.mod(theta[:, None] + j[None, :] * omega, 1.0)
            else:
                ph = np.mod(theta[:, None] - (j[None, :] + 1.0) * omega, 1.0)
            batch.advance(f(ph), inverse=sign < 0, track=track_max)
            done += n
        if stop in recs:
            snap[stop] = batch.log_norm()
    return batch, snap


def iterate_cocycle(f: PiecewiseHolderFunction, omega: float, z: complex, theta: float, k: int) -> ScaledProduct:
    """A_k(theta) for signed k; k < 0 uses A_{-m}(theta) = [A_m(theta - m*omega)]^{-1}."""
    batch, _ = _run(f, omega, np.asarray([z]), np.asarray([float(theta) % 1.0]), int(k))
    return batch.product(0, int(k), float(theta) % 1.0)


def log_norms(f, omega: float, z, thetas, k: int) -> np.ndarray:
    """ln ||A_k(theta)|| for an array of phases (and matching or scalar z)."""
    thetas = np.atleast_1d(np.asarray(thetas, dtype=float)) % 1.0
    batch, _ = _run(f, omega, np.asarray(z), thetas, int(k))
    return batch.log_norm()


@dataclass(frozen=True)
class Cocycle:
    """Handle bundling (f, omega, z)."""

    f: PiecewiseHolderFunction
    omega: float
    z: complex

    def __call__(self, theta: float, k: int) -> ScaledProduct:
        return iterate_cocycle(self.f, self.omega, self.z, theta, k)

    def log_norms(self, thetas, k: int) -> np.ndarray:
        return log_norms(self.f, self.omega, self.z, thetas, k)

    def log_norm_table(self, thetas, n_max: int) -> np.ndarray:
        """Rows n = 1..n_max of ln ||A_n(theta)|| over the given phases."""
        thetas = np.atleast_1d(np.asarray(thetas, dtype=float)) % 1.0
        _, snap = _run(self.f, self.omega, np.asarray(self.z), thetas, n_max, record=range(1, n_max + 1))
        return np.stack([snap[n] for n in range(1, n_max + 1)])


def cocycle_identity_error(f, omega: float, z: complex, theta: float, n: int, m: int) -> float:
    """||A_{n+m}(theta) - A_n(R^m theta) A_m(theta)|| / (||A_n|| ||A_m||)."""
    am = iterate_cocycle(f, omega, z, theta, m)
    an = iterate_cocycle(f, omega, z, float(rotate_orbit(theta, omega, m)), n)
    anm = iterate_cocycle(f, omega, z, theta, n + m)
    lhs = anm.to_matrix()
    rhs = an.to_matrix() @ am.to_matrix()
    scale = math.exp(an.log_norm() + am.log_norm())
    return float(matrix_norm(lhs - rhs) / scale)


# --------------------------------------------------------------------------- Lyapunov

@dataclass(frozen=True)
class ThetaScheme:
    """Phase sampling: an equidistributed grid of ``size`` points or blocks of one orbit."""

    kind: str = "grid"
    size: int = 1024
    theta0: float = 0.0

    def __post_init__(self):
        if self.kind not in ("grid", "birkhoff"):
            raise ValueError("scheme kind must be 'grid' or 'birkhoff'")
        if self.size < 1:
            raise ValueError("scheme size must be positive")

    def phases(self, omega: float, block: int) -> np.ndarray:
        if self.kind == "grid":
            return (np.arange(self.size) + 0.5) / self.size
        return orbit_phases(self.theta0, omega, np.arange(self.size) * block)


@dataclass(frozen=True)
class LyapunovEstimate:
    z: complex
    k_list: tuple[int, ...]
    c_k: tuple[float, ...]
    theta_sample: ThetaScheme
    L_hat: float
    spread: float
    cross_check: float | None = None
    flagged: bool = False


def lyapunov_estimate(f, omega: float, z: complex, k_list: Sequence[int],
                      theta_scheme: ThetaScheme = ThetaScheme(), cross_check: bool = True) -> LyapunovEstimate:
    """c_k = (1/k) mean_theta ln ||A_k(theta)||; L_hat = c_{k_max}.

    The spread |c_{k_max} - c_{k_max/2}| is the error proxy. With ``cross_check`` the other
    phase scheme is run at k_max and a discrepancy above 3x spread flags the estimate.
    """
    ks = [int(k) for k in k_list]
    if len(ks) < 3 or any(b <= a for a, b in zip(ks, ks[1:])) or ks[0] < 1:
        raise ValueError("k_list needs at least 3 increasing positive entries")
    kmax = ks[-1]
    half = max(1, kmax // 2)
    theta = theta_scheme.phases(omega, kmax)
    _, snap = _run(f, omega, np.asarray(z), theta, kmax, record=ks + [half])
    c = [float(np.mean(snap[k]) / k) for k in ks]
    spread = abs(c[-1] - float(np.mean(snap[half]) / half))
    other = None
    flagged = False
    if cross_check:
        alt = ThetaScheme("birkhoff" if theta_scheme.kind == "grid" else "grid", theta_scheme.size, 0.5 ** 0.5)
        vals = log_norms(f, omega, z, alt.phases(omega, kmax), kmax)
        other = float(np.mean(vals) / kmax)
        flagged = abs(other - c[-1]) > 3 * spread
    return LyapunovEstimate(complex(z), tuple(ks), tuple(c), theta_scheme, c[-1], spread, other, flagged)


# --------------------------------------------------------------------------- uniform upper bound

@dataclass(frozen=True)
class UniformUpperReport:
    k_values: tuple[int, ...]
    excess: tuple[float, ...]
    max_excess: float
    worst_theta: float
    K: int | None
    epsilon: float


def uniform_upper_check(f, omega: float, z: complex, k_values: Sequence[int], theta_grid_size: int,
                        epsilon: float, L_hat: float) -> UniformUpperReport:
    """Excess max_theta (1/k) ln ||A_k(theta)|| - L_hat at each tested k.

    K is the smallest tested k from which every tested excess stays below epsilon.
    """
    ks = sorted(int(k) for k in k_values)
    theta = (np.arange(theta_grid_size) + 0.5) / theta_grid_size
    _, snap = _run(f, omega, np.asarray(z), theta, ks[-1], record=ks)
    excess, worst = [], []
    for k in ks:
        v = snap[k] / k - L_hat
        i = int(np.argmax(v))
        excess.append(float(v[i]))
        worst.append(float(theta[i]))
    K = None
    for i in range(len(ks) - 1, -1, -1):
        if excess[i] >= epsilon:
            break
        K = ks[i]
    top = int(np.argmax(excess))
    return UniformUpperReport(tuple(ks), tuple(excess), excess[top], worst[top], K, epsilon)


# --------------------------------------------------------------------------- perturbation

@dataclass(frozen=True)
class PerturbationReport:
    log_lhs: float
    log_rhs: float
    sup_diff: float
    Q: float
    ok: bool

    @property
    def lhs(self) -> float:
        return math.exp(self.log_lhs) if self.log_lhs < 700 else math.inf

    @property
    def rhs(self) -> float:
        return math.exp(self.log_rhs) if self.log_rhs < 700 else math.inf


def _log_diff_norm(a: ScaledProduct, b: ScaledProduct) -> float:
    top = max(a.log_scale, b.log_scale)
    d = math.exp(a.log_scale - top) * a.matrix - math.exp(b.log_scale - top) * b.matrix
    n = float(matrix_norm(d))
    return top + math.log(n) if n > 0 else -math.inf


def sup_log_step_norm(f, z: complex, grid: int = 1 << 14) -> float:
    """ln sup_theta ||A^{f,z}(theta)|| sampled on a grid."""
    theta = np.arange(grid) / grid
    a = z - f(theta)
    mats = np.zeros((grid, 2, 2), dtype=complex)
    mats[:, 0, 0] = a
    mats[:, 0, 1] = -1
    mats[:, 1, 0] = 1
    return float(np.log(np.max(matrix_norm(mats))))


def perturbation_check(f, f_bar, omega: float, z: complex, theta: float, k: int, L_hat: float,
                       epsilon: float = 0.1, Q: float | None = None) -> PerturbationReport:
    """Compare ||A_k^f - A_k^{f_bar}|| with max_i |f - f_bar|(R^i theta) e^{k(L_hat + epsilon Q)}.

    Q = max{1, ln ||M||_inf, ln ||M_bar||_inf} with the single-step sup norms.
    """
    a = iterate_cocycle(f, omega, z, theta, k)
    b = iterate_cocycle(f_bar, omega, z, theta, k)
    log_lhs = _log_diff_norm(a, b)
    ph = orbit_phases(theta, omega, np.arange(k))
    sup_diff = float(np.max(np.abs(f(ph) - f_bar(ph)))) if k > 0 else 0.0
    if Q is None:
        Q = max(1.0, sup_log_step_norm(f, z), sup_log_step_norm(f_bar, z))
    log_rhs = (math.log(sup_diff) if sup_diff > 0 else -math.inf) + k * (L_hat + epsilon * Q)
    ok = log_lhs <= log_rhs or (log_lhs == -math.inf)
    return PerturbationReport(log_lhs, log_rhs, sup_diff, Q, bool(ok))


# --------------------------------------------------------------------------- level sets

def v_set_profile(f, omega: float, z: complex, k: int, levels: Sequence[float], theta_grid_size: int) -> np.ndarray:
    """|V_k(t)| on the grid for each level t, from a single set of products."""
    if theta_grid_size < 1000:
        raise ValueError("theta grid must have at least 1000 points")
    theta = (np.arange(theta_grid_size) + 0.5) / theta_grid_size
    g = log_norms(f, omega, z, theta, k) / k
    return np.array([float(np.mean(g > t)) for t in levels])


def v_set_measure(f, omega: float, z: complex, k: int, t: float, theta_grid_size: int) -> float:
    """Fraction of grid phases with (1/k) ln ||A_k(theta)|| > t."""
    return float(v_set_profile(f, omega, z, k, [t], theta_grid_size)[0])


# --------------------------------------------------------------------------- growth sites

@dataclass(frozen=True)
class GrowthCertificate:
    E: float
    tau: float
    k: int
    n: int
    x: int
    achieved: float
    threshold: float
    bound: int
    L_hat: float
    theta: float

    @property
    def valid(self) -> bool:
        return 0 <= self.x <= self.bound and self.achieved >= self.threshold


def window_index(freq: FrequencyData, k: int, L_hat: float, tau: float, gamma: float) -> int:
    """Smallest stored n with k < (gamma / (L_hat tau)) ln q_n."""
    for n in range(1, freq.n_terms + 1):
        if k < gamma / (L_hat * tau) * math.log(freq.q(n)):
            return n
    raise ValueError("no stored convergent is large enough for this (k, tau); expand more terms")


def growth_site_search(f, E: float, tau: float, k: int, freq: FrequencyData, theta: float, L_hat: float,
                       n: int | None = None, gamma: float | None = None, chunk: int = 256) -> GrowthCertificate:
    """First x in [0, q_n + q_{n-1} - 1] with (1/k) ln ||A_k(R^x theta)|| >= (1 - tau) L_hat."""
    gamma = f.gamma if gamma is None else gamma
    threshold = (1.0 - tau) * L_hat
    if n is None:
        n = window_index(freq, k, L_hat, tau, gamma) if threshold > 0 else 1
    elif threshold > 0 and not k < gamma / (L_hat * tau) * math.log(freq.q(n)):
        raise ValueError(f"window violated: k={k} is not below (gamma/(L tau)) ln q_{n}")
    bound = freq.q(n) + freq.q(n - 1) - 1
    omega = float(freq.omega)
    theta = float(theta) % 1.0
    if threshold * k <= 0:
        ln = float(log_norms(f, omega, E, [theta], k)[0])
        return GrowthCertificate(E, tau, k, n, 0, ln / k, threshold, bound, L_hat, theta)
    start = 0
    while start <= bound:
        stop = min(bound + 1, start + chunk)
        base = float(rotate_orbit(theta, freq.omega, start))
        ph = orbit_phases(base, omega, np.arange(stop - start))
        g = log_norms(f, omega, E, ph, k) / k
        hit = np.flatnonzero(g >= threshold)
        if hit.size:
            x = start + int(hit[0])
            return GrowthCertificate(E, tau, k, n, x, float(g[hit[0]]), threshold, bound, L_hat, theta)
        start = stop
    raise NotFound(f"no growth site in [0, {bound}] for theta={theta}, k={k}, n={n}")


# --------------------------------------------------------------------------- Phi

@dataclass(frozen=True)
class PhiEstimate:
    value: float
    log_value: float
    T: float
    steps: int
    theta_count: int
    z_count: int
    argmin_theta: float
    argmin_z: complex


def phi_estimate(f, omega: float, E: float, zeta: float, delta: float, T: float, theta_count: int = 256,
                 z_count: int = 16) -> PhiEstimate:
    """Grid value of min_{z, theta} min_{+/-} max_{1<=j<=T^zeta} ||A_{+/-j}(theta, z)||^2 / T^delta.

    z runs over E and ``z_count`` points of the circle |z - E| = T^{-zeta}; the result is an
    upper bound for the infimum over the disk and the circle of phases.
    """
    steps = int(math.floor(T ** zeta))
    if steps < 1:
        raise ValueError("T^zeta must be at least 1")
    if steps > 10 ** 6:
        raise ValueError("T^zeta exceeds 10^6")
    r = T ** (-zeta)
    zs = np.concatenate([[E], E + r * np.exp(2j * np.pi * np.arange(z_count) / z_count)])
    theta = (np.arange(theta_count) + 0.5) / theta_count
    th = np.repeat(theta, zs.size)
    zz = np.tile(zs, theta_count)
    best = None
    for sign in (1, -1):
        batch, _ = _run(f, omega, zz, th, sign * steps, track_max=True)
        best = batch.runmax.copy() if best is None else np.minimum(best, batch.runmax)
    i = int(np.argmin(best))
    log_val = 2 * float(best[i]) - delta * math.log(T)
    return PhiEstimate(math.exp(log_val) if log_val < 709 else math.inf, log_val, T, steps, theta_count, zs.size, float(th[i]), complex(zz[i]))


# --------------------------------------------------------------------------- pseudometric

@dataclass(frozen=True)
class PseudometricReport:
    value: float
    truncation: float
    sup_diffs: tuple[float, ...]


def pseudometric_estimate(fcoc: Cocycle, gcoc: Cocycle, delta: float, n_max: int, grid: int = 4096) -> PseudometricReport:
    """sum_{n<=n_max} 2^{-n} x_n / (1 + x_n), x_n = sup over D_n of |ln||G_n|| - ln||F_n|||.

    D_n drops grid phases within delta of E_n = {j - i omega : j in J_f, 0 <= i < n}.
    """
    if n_max < 1:
        raise ValueError("n_max must be at least 1")
    theta = np.arange(grid) / grid
    tf = fcoc.log_norm_table(theta, n_max)
    tg = gcoc.log_norm_table(theta, n_max)
    jumps = np.asarray(fcoc.f.jump_set, dtype=float)
    keep = np.ones(grid, dtype=bool)
    total = 0.0
    xs = []
    for n in range(1, n_max + 1):
        if jumps.size:
            keep &= _circle_dist(theta, np.mod(jumps - (n - 1) * fcoc.omega, 1.0)) >= delta
        x = float(np.max(np.abs(tg[n - 1] - tf[n - 1])[keep])) if keep.any() else 0.0
        xs.append(x)
        total += 2.0 ** -n * x / (1 + x)
    return PseudometricReport(total, 2.0 ** -n_max, tuple(xs))


def hs_chunks(f, omega: float, z, theta, sign: int, max_steps: int, chunk: int = _CHUNK):
    """Yield (first_step, ln ||A_{sign*n}||_HS^2 for the next block of n) over phases/energies.

    Broadcasts ``z`` against ``theta``; lets callers stop as soon as they have enough.
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float)) % 1.0
    z = np.atleast_1d(np.asarray(z, dtype=complex))
    theta, z = np.broadcast_arrays(theta, z)
    batch = _Batch(z.copy())
    done = 0
    while done < max_steps:
        n = min(chunk, max_steps - done)
        j = np.arange(done, done + n, dtype=float)
        if sign > 0:
            ph = np.mod(theta[:, None] + j[None, :] * omega, 1.0)
        else:
            ph = np.mod(theta[:, None] - (j[None, :] + 1.0) * omega, 1.0)
        yield done + 1, batch.advance(f(ph), inverse=sign < 0, hs=True)
        done += n
