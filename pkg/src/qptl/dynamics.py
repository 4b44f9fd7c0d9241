"""Finite-volume quantum dynamics for h u(n) = u(n-1) + u(n+1) + f(n omega + theta) u(n).

Wavepackets start from delta_0 and delta_1 and are evolved either through a full
eigendecomposition (small boxes) or a Chebyshev expansion of the propagator whose
working window grows exactly as fast as the support can (large boxes).
"""
from __future__ import annotations

import math
from collections.abc import Mapping
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import simpson
from scipy.linalg import eigh_tridiagonal
from scipy.special import jv

from .cocycle import _run, hs_chunks, iterate_cocycle, lyapunov_estimate, matrix_norm
from .sampling import PiecewiseHolderFunction

DENSE_MAX_SITES = 1001
EIGVEC_MAX_SITES = 4001
TAIL_FRACTION = 0.05


class BoxTooSmall(RuntimeError):
    """Probability reached the outer part of the box (boundary reflection)."""


class InsufficientHorizon(ValueError):
    """The time series stops before the Abel weight has decayed to the tolerance."""


class HorizonExceeded(RuntimeError):
    """The cumulative sum never reached its target within the configured length."""


# --------------------------------------------------------------------------- boxes

def ballistic_front(t_max: float) -> float:
    """2 t + 10 sqrt(t) + 50: safely beyond the hopping-1 ballistic front."""
    return 2 * t_max + 10 * math.sqrt(max(t_max, 0.0)) + 50


def ballistic_half_width(t_max: float) -> int:
    """Smallest box whose outer tail region starts beyond the ballistic front."""
    return int(math.ceil(ballistic_front(t_max) / (1 - TAIL_FRACTION)))


def abel_horizon(T: float, tol: float = 1e-8) -> float:
    """(T/2) ln(1/tol): past it the Abel weight holds mass below tol."""
    return 0.5 * T * math.log(1.0 / tol)


class LatticeBox:
    """Dirichlet restriction of h to sites -L..L."""

    def __init__(self, f: PiecewiseHolderFunction, theta: float, omega: float, half_width: int):
        if half_width < 1:
            raise ValueError("half_width must be at least 1")
        self.f = f
        self.theta = float(theta) % 1.0
        self.omega = float(omega)
        self.half_width = int(half_width)
        self.sites = np.arange(-self.half_width, self.half_width + 1)
        self.diagonal = np.asarray(f(np.mod(self.sites * self.omega + self.theta, 1.0)), dtype=float)

    @property
    def size(self) -> int:
        return self.sites.size

    def index(self, n: int) -> int:
        return int(n) + self.half_width

    def matrix(self) -> np.ndarray:
        return np.diag(self.diagonal) + np.diag(np.ones(self.size - 1), 1) + np.diag(np.ones(self.size - 1), -1)

    @property
    def spectral_radius_bound(self) -> float:
        """2 + sup|f|; the spectrum of every box and of h lies in [-bound, bound]."""
        return 2.0 + self.f.sup_bound

    @cached_property
    def eigenvalues(self) -> np.ndarray:
        return eigh_tridiagonal(self.diagonal, np.ones(self.size - 1), eigvals_only=True)

    @cached_property
    def eigensystem(self) -> tuple[np.ndarray, np.ndarray]:
        if self.size > EIGVEC_MAX_SITES:
            raise ValueError(f"{self.size} sites is too many for a full eigendecomposition")
        return eigh_tridiagonal(self.diagonal, np.ones(self.size - 1))

    def nearest_eigenvalue(self, target: float = 0.0) -> float:
        ev = self.eigenvalues
        return float(ev[np.argmin(np.abs(ev - target))])


def build_hamiltonian(f: PiecewiseHolderFunction, theta: float, omega: float, L_box: int) -> LatticeBox:
    return LatticeBox(f, theta, omega, L_box)


def on_spectrum_energy(f, omega: float, target: float = 0.0, theta: float = 0.0, L_box: int = 1000) -> float:
    """Eigenvalue of the (2 L_box + 1)-site box closest to ``target``."""
    return LatticeBox(f, theta, omega, L_box).nearest_eigenvalue(target)


# --------------------------------------------------------------------------- Abel weights

def _phi(x: np.ndarray) -> np.ndarray:
    """1 - e^{-x}(1 + x) without cancellation."""
    x = np.asarray(x, dtype=float)
    small = x < 1e-3
    out = np.empty_like(x)
    xs = x[small]
    out[small] = xs ** 2 / 2 - xs ** 3 / 3 + xs ** 4 / 8 - xs ** 5 / 30
    xl = x[~small]
    out[~small] = -np.expm1(-xl) - xl * np.exp(-xl)
    return out


def abel_weights(times, T: float, tol: float = 1e-8) -> np.ndarray:
    """Weights w_i with sum_i w_i g(t_i) = (2/T) int_0^inf e^{-2t/T} g(t) dt.

    Exact for g piecewise linear on the nodes and continued linearly past the last one.
    """
    t = np.asarray(times, dtype=float)
    if t.ndim != 1 or t.size < 2 or t[0] != 0.0 or np.any(np.diff(t) <= 0):
        raise ValueError("times must start at 0 and increase")
    if t[-1] < abel_horizon(T, tol) * (1 - 1e-12):
        raise InsufficientHorizon(f"series ends at t={t[-1]:.4g}, need {abel_horizon(T, tol):.4g} for T={T}")
    s = 2.0 / T
    h = np.diff(t)
    x = s * h
    ea = np.exp(-s * t[:-1])
    i0 = ea * -np.expm1(-x)
    wb = ea * _phi(x) / x
    w = np.zeros(t.size)
    w[:-1] += i0 - wb
    w[1:] += wb
    em = math.exp(-s * t[-1])
    w[-1] += em * (1 + 1 / x[-1])
    w[-2] -= em / x[-1]
    return w


class _AbelStream:
    """Accumulates sum_i w_i g(t_i) for several T while the nodes arrive one by one."""

    def __init__(self, T_list: Sequence[float], shape):
        self.T = [float(T) for T in T_list]
        self.acc = [np.zeros(shape) for _ in self.T]
        self.prev = None

    def add(self, t: float, g: np.ndarray):
        if self.prev is not None:
            t0, g0 = self.prev
            h = t - t0
            for i, T in enumerate(self.T):
                s = 2.0 / T
                x = s * h
                ea = math.exp(-s * t0)
                i0 = ea * -math.expm1(-x)
                wb = ea * float(_phi(np.array([x]))[0]) / x
                self.acc[i] += (i0 - wb) * g0 + wb * g
        self.prev_prev = self.prev
        self.prev = (t, g.copy())

    def finish(self) -> list[np.ndarray]:
        t, g = self.prev
        t0, g0 = self.prev_prev
        h = t - t0
        out = []
        for i, T in enumerate(self.T):
            s = 2.0 / T
            em = math.exp(-s * t)
            out.append(self.acc[i] + em * (1 + 1 / (s * h)) * g - em / (s * h) * g0)
        return out


def abel_average(source, T: float, tol: float = 1e-8):
    """<g>_T = (2/T) int_0^inf e^{-2t/T} g(t) dt.

    ``source`` is a WavepacketTrace (returns a_T), a pair (times, values) with values
    indexed by time along axis 0, or a callable g(t) sampled on a geometric grid.
    """
    if isinstance(source, WavepacketTrace):
        return source.abel_profile(T)
    if callable(source):
        t = abel_time_grid([T], tol)
        vals = np.array([source(x) for x in t], dtype=float)
        return np.tensordot(abel_weights(t, T, tol), vals, axes=(0, 0))
    times, values = source
    w = abel_weights(times, T, tol)
    return np.tensordot(w, np.asarray(values, dtype=float), axes=(0, 0))


def abel_time_grid(T_list: Sequence[float], tol: float = 1e-8, extra: Sequence[float] = (),
                   dt_min: float = 0.25, rho: float = 0.02) -> np.ndarray:
    """Nodes 0 = t_0 < t_1 < ... stepping by max(dt_min, rho t) past every Abel horizon."""
    end = max([abel_horizon(T, tol) for T in T_list] + [max(extra, default=0.0)])
    nodes = [0.0]
    while nodes[-1] < end:
        nodes.append(nodes[-1] + max(dt_min, rho * nodes[-1]))
    return np.unique(np.concatenate([nodes, np.asarray(extra, dtype=float)]))


# --------------------------------------------------------------------------- propagation

@dataclass(frozen=True, eq=False)
class WavepacketTrace:
    """|<delta_n, e^{-ith} delta_s>|^2 for s = 0, 1 at the recorded times, plus Abel averages."""

    times: np.ndarray
    sites: np.ndarray
    p0: np.ndarray
    p1: np.ndarray
    abel0: dict
    abel1: dict
    tail_mass: float
    unitarity_defect: float
    method: str
    half_width: int
    front_ok: bool = True

    @property
    def profiles(self) -> np.ndarray:
        """a(n, t) = (p0 + p1) / 2, one row per recorded time."""
        return 0.5 * (self.p0 + self.p1)

    def _row(self, t: float) -> int:
        i = int(np.argmin(np.abs(self.times - t)))
        if not math.isclose(self.times[i], t, rel_tol=1e-12, abs_tol=1e-12):
            raise KeyError(f"time {t} was not recorded")
        return i

    def profile(self, t: float) -> np.ndarray:
        return self.profiles[self._row(t)]

    def abel_profile(self, T: float) -> np.ndarray:
        """a_T(n) = <a(n, t)>_T."""
        return 0.5 * (self.abel0[float(T)] + self.abel1[float(T)])


def _outer_mask(sites: np.ndarray, half_width: int) -> np.ndarray:
    return np.abs(sites) > (1 - TAIL_FRACTION) * half_width


def _cheb_coeffs(x: float) -> np.ndarray:
    kmax = int(x + 10 * max(x, 1.0) ** (1 / 3) + 30)
    j = jv(np.arange(kmax + 1), x)
    keep = np.flatnonzero(np.abs(j) > 1e-18)
    j = j[: keep[-1] + 1]
    a = 2.0 * j * (-1j) ** np.arange(j.size)
    a[0] = j[0]
    return a


def propagate(box: LatticeBox, t_grid: Sequence[float], abel_T: Sequence[float] = (), tol: float = 1e-8,
              tail_threshold: float = 1e-8, method: str = "auto") -> WavepacketTrace:
    """Evolve delta_0 and delta_1, record profiles at ``t_grid`` and Abel averages for ``abel_T``.

    Raises BoxTooSmall when the mass in the outer 5% of the box ever exceeds ``tail_threshold``.
    """
    t_rec = np.unique(np.asarray(t_grid, dtype=float))
    if t_rec.size and t_rec[0] < 0:
        raise ValueError("times must be nonnegative")
    abel_T = tuple(sorted(set(float(T) for T in abel_T)))
    if method == "auto":
        method = "dense" if box.size <= DENSE_MAX_SITES else "chebyshev"
    t_end = max([abel_horizon(T, tol) for T in abel_T] + [float(t_rec[-1]) if t_rec.size else 0.0])
    front_ok = ballistic_front(t_end) <= box.half_width
    if method == "dense":
        trace = _propagate_dense(box, t_rec, abel_T, tol)
    elif method == "chebyshev":
        trace = _propagate_chebyshev(box, t_rec, abel_T, tol)
    else:
        raise ValueError(f"unknown method {method!r}")
    trace = replace(trace, front_ok=front_ok)
    if trace.tail_mass > tail_threshold:
        raise BoxTooSmall(f"tail mass {trace.tail_mass:.3e} exceeds {tail_threshold:.0e} "
                          f"(half width {box.half_width}, t_end {t_end:.4g})")
    return trace


def _propagate_dense(box: LatticeBox, t_rec, abel_T, tol) -> WavepacketTrace:
    E, V = box.eigensystem
    i0, i1 = box.index(0), box.index(1)
    c = V[[i0, i1], :]
    outer = _outer_mask(box.sites, box.half_width)

    def probs(times):
        out = np.empty((2, len(times), box.size))
        for s in range(2):
            for lo in range(0, len(times), 64):
                ts = np.asarray(times[lo:lo + 64])
                amp = V @ (np.exp(-1j * np.outer(E, ts)) * c[s][:, None])
                out[s, lo:lo + 64] = (np.abs(amp) ** 2).T
        return out

    rec = probs(t_rec) if t_rec.size else np.zeros((2, 0, box.size))
    check_t = abel_time_grid(abel_T or [1.0], tol, extra=t_rec, rho=0.1)
    chk = probs(check_t)
    a = 0.5 * (chk[0] + chk[1])
    tail = float(np.max(a[:, outer].sum(axis=1))) if outer.any() else 0.0
    defect = float(np.max(np.abs(chk.sum(axis=2) - 1.0)))
    abel = [{}, {}]
    for T in abel_T:
        # a_T(n) = sum_jk V_nj V_nk c_j c_k / (1 + (E_j - E_k)^2 T^2 / 4); the odd part cancels
        kern = 1.0 / (1.0 + (0.5 * T * (E[:, None] - E[None, :])) ** 2)
        for s in range(2):
            g = kern * np.outer(c[s], c[s])
            abel[s][T] = np.einsum("nj,nj->n", V @ g, V)
    return WavepacketTrace(t_rec, box.sites.copy(), rec[0], rec[1], abel[0], abel[1], tail, defect,
                           "dense", box.half_width)


def _propagate_chebyshev(box: LatticeBox, t_rec, abel_T, tol) -> WavepacketTrace:
    d = box.diagonal
    D = box.size
    lo_e, hi_e = float(d.min()) - 2.0, float(d.max()) + 2.0
    center = 0.5 * (lo_e + hi_e)
    radius = 0.5 * (hi_e - lo_e) * 1.001 + 1e-12
    dd = (d - center) / radius
    inv_r = 1.0 / radius
    i0, i1 = box.index(0), box.index(1)
    psi = np.zeros((D, 2), dtype=complex)
    psi[i0, 0] = 1.0
    psi[i1, 1] = 1.0
    wlo, whi = i0, i1 + 1
    outer = _outer_mask(box.sites, box.half_width)
    nodes = abel_time_grid(abel_T, tol, extra=t_rec) if abel_T else np.unique(np.concatenate([[0.0], t_rec]))
    rec_index = {float(t): i for i, t in enumerate(t_rec)}
    rec = np.zeros((2, t_rec.size, D))
    stream = _AbelStream(abel_T, (2, D)) if abel_T else None
    tail = 0.0
    defect = 0.0
    cache: dict[float, np.ndarray] = {}
    t_prev = 0.0
    for t in nodes:
        dt = t - t_prev
        if dt > 0:
            key = round(radius * dt, 12)
            coeffs = cache.get(key)
            if coeffs is None:
                coeffs = cache[key] = _cheb_coeffs(radius * dt)
            K = coeffs.size - 1
            wlo, whi = max(0, wlo - K), min(D, whi + K)
            x = psi[wlo:whi]
            dw = dd[wlo:whi, None]

            def apply(v):
                y = dw * v
                y[:-1] += inv_r * v[1:]
                y[1:] += inv_r * v[:-1]
                return y

            t0, t1 = x, apply(x)
            acc = coeffs[0] * t0 + (coeffs[1] * t1 if K >= 1 else 0)
            for k in range(2, K + 1):
                t2 = 2.0 * apply(t1) - t0
                acc += coeffs[k] * t2
                t0, t1 = t1, t2
            psi[wlo:whi] = np.exp(-1j * center * dt) * acc
            t_prev = t
        p = (np.abs(psi) ** 2).T
        defect = max(defect, float(np.max(np.abs(p.sum(axis=1) - 1.0))))
        if outer.any():
            tail = max(tail, float(0.5 * p[:, outer].sum()))
        if float(t) in rec_index:
            rec[:, rec_index[float(t)]] = p
        if stream is not None:
            stream.add(float(t), p)
    abel = [{}, {}]
    if stream is not None:
        for T, acc in zip(stream.T, stream.finish()):
            abel[0][T], abel[1][T] = acc[0], acc[1]
    return WavepacketTrace(t_rec, box.sites.copy(), rec[0], rec[1], abel[0], abel[1], tail, defect,
                           "chebyshev", box.half_width)


def box_doubling_defect(f, theta: float, omega: float, half_width: int, t_grid, method: str = "auto") -> float:
    """max |a(n,t; L) - a(n,t; 2L)| over the sites of the smaller box."""
    a = propagate(build_hamiltonian(f, theta, omega, half_width), t_grid, method=method)
    b = propagate(build_hamiltonian(f, theta, omega, 2 * half_width), t_grid, method=method)
    off = half_width
    return float(np.max(np.abs(a.profiles - b.profiles[:, off:off + a.sites.size])))


# --------------------------------------------------------------------------- transport

@dataclass(frozen=True)
class SlopeFit:
    value: float
    width: float
    residual: float
    window: tuple[float, float]


@dataclass(frozen=True)
class TransportReport:
    T_grid: tuple[float, ...]
    moments: dict = field(default_factory=dict)
    beta_plus_hat: dict = field(default_factory=dict)
    beta_minus_hat: dict = field(default_factory=dict)
    P_values: dict = field(default_factory=dict)
    L_star: dict = field(default_factory=dict)
    xi_hat: dict = field(default_factory=dict)

    def merge(self, other: "TransportReport") -> "TransportReport":
        return TransportReport(self.T_grid, {**self.moments, **other.moments},
                               {**self.beta_plus_hat, **other.beta_plus_hat},
                               {**self.beta_minus_hat, **other.beta_minus_hat},
                               {**self.P_values, **other.P_values}, {**self.L_star, **other.L_star},
                               {**self.xi_hat, **other.xi_hat})


def moment(profile: np.ndarray, sites: np.ndarray, p: float) -> float:
    """sum_n (1 + |n|)^p a(n)."""
    return float(np.sum((1.0 + np.abs(sites)) ** p * profile))


def _window_fits(x: np.ndarray, y: np.ndarray, width: int = 4) -> list[SlopeFit]:
    fits = []
    for i in range(len(x) - width + 1):
        xs, ys = x[i:i + width], y[i:i + width]
        (slope, icpt), res, *_ = np.polyfit(xs, ys, 1, full=True)
        r = ys - (slope * xs + icpt)
        rms = float(np.sqrt(np.mean(r ** 2)))
        sxx = float(np.sum((xs - xs.mean()) ** 2))
        se = float(np.sqrt(np.sum(r ** 2) / max(width - 2, 1) / sxx)) if sxx > 0 else math.inf
        fits.append(SlopeFit(float(slope), se, rms, (float(math.exp(xs[0])), float(math.exp(xs[-1])))))
    return fits


def envelope_fit(T, values, scale: float = 1.0) -> tuple[SlopeFit, SlopeFit]:
    """(max-slope, min-slope) fits of ln values against scale * ln T over 4-point windows."""
    lt = np.log(np.asarray(T, dtype=float))
    y = np.log(np.asarray(values, dtype=float))
    fits = _window_fits(lt, y)
    fits = [SlopeFit(fi.value / scale, fi.width / scale, fi.residual, fi.window) for fi in fits]
    return max(fits, key=lambda s: s.value), min(fits, key=lambda s: s.value)


def _check_geometric(T_grid) -> np.ndarray:
    T = np.asarray(T_grid, dtype=float)
    if T.size < 8:
        raise ValueError("T grid needs at least 8 points")
    r = T[1:] / T[:-1]
    if np.any(r <= 1) or not np.allclose(r, r[0], rtol=1e-6):
        raise ValueError("T grid must be geometric and increasing")
    return T


def geometric_grid(lo: float, hi: float, n: int) -> tuple[float, ...]:
    return tuple(float(x) for x in np.geomspace(lo, hi, n))


def moments_and_beta(trace: WavepacketTrace, T_grid, p_list) -> TransportReport:
    """Raw moments <|X|^p(T)> feed beta^+ (max slope); Abel moments <|X|^p_T> feed beta^- (min slope)."""
    T = _check_geometric(T_grid)
    moments, bp, bm = {}, {}, {}
    for p in p_list:
        raw = np.array([moment(trace.profile(t), trace.sites, p) for t in T])
        avg = np.array([moment(trace.abel_profile(t), trace.sites, p) for t in T])
        moments[p] = {"raw": raw, "avg": avg}
        bp[p] = envelope_fit(T, raw, p)[0]
        bm[p] = envelope_fit(T, avg, p)[1]
    return TransportReport(tuple(T), moments, bp, bm)


def p_mass(profile: np.ndarray, sites: np.ndarray, N: float) -> float:
    """P(N) = sum_{|n| <= N} a(n)."""
    return float(profile[np.abs(sites) <= N].sum())


def l_star(profile: np.ndarray, sites: np.ndarray, delta: float) -> int:
    """inf{L : P(L) > delta} over integer L >= 0."""
    order = np.argsort(np.abs(sites), kind="stable")
    dist = np.abs(sites[order])
    cum = np.cumsum(profile[order])
    # P(L) is the cumulative sum at the last site with |n| <= L
    last = np.flatnonzero(np.diff(np.append(dist, dist[-1] + 1)) > 0)
    hit = np.flatnonzero(cum[last] > delta)
    if not hit.size:
        raise ValueError(f"total mass never exceeds delta={delta}")
    return int(dist[last[hit[0]]])


def p_mass_and_xi(trace: WavepacketTrace, T_grid, zeta_list, delta_list) -> TransportReport:
    """P_T(T^zeta) and the slopes of ln L*(T) against ln T (L* clamped below at 1)."""
    T = _check_geometric(T_grid)
    P, Ls, xi = {}, {}, {}
    for zeta in zeta_list:
        P[zeta] = np.array([p_mass(trace.abel_profile(t), trace.sites, math.floor(t ** zeta)) for t in T])
    for delta in delta_list:
        ls = np.array([max(1, l_star(trace.abel_profile(t), trace.sites, delta)) for t in T], dtype=float)
        Ls[delta] = ls
        xi[delta] = envelope_fit(T, ls)
    return TransportReport(tuple(T), P_values=P, L_star=Ls, xi_hat=xi)


def transport_run(f, omega: float, theta: float, T_grid, p_list=(2.0,), zeta_list=(0.2,), delta_list=(0.5,),
                  L_box: int | None = None, tol: float = 1e-8, method: str = "auto"):
    """Propagate once over all T and return (trace, report)."""
    T = _check_geometric(T_grid)
    if L_box is None:
        L_box = ballistic_half_width(abel_horizon(T[-1], tol))
    box = build_hamiltonian(f, theta, omega, L_box)
    trace = propagate(box, T, abel_T=T, tol=tol, method=method)
    report = moments_and_beta(trace, T, p_list).merge(p_mass_and_xi(trace, T, zeta_list, delta_list))
    return trace, report


# --------------------------------------------------------------------------- truncated norms

def _sq(v) -> float:
    a = np.asarray(v)
    return float(np.sum(np.abs(a) ** 2))


def _lookup(series) -> Callable[[int], object]:
    if callable(series):
        return series
    if isinstance(series, Mapping):
        return series.__getitem__
    raise TypeError("series must be callable or a mapping n -> value")


def truncated_norm_sq(series, L) -> float:
    """Weighted partial sum of |f(n)|^2 (matrices in Hilbert-Schmidt norm).

    Scalar L: n = 1..floor(L) plus (L - floor L)|f(floor L + 1)|^2.
    Pair (L1, L2): n = -floor(L1)..floor(L2) plus both fractional end terms.
    """
    get = _lookup(series)
    if np.ndim(L) == 0:
        L = float(L)
        if L < 1:
            raise ValueError("L must be at least 1")
        n = math.floor(L)
        total = sum(_sq(get(k)) for k in range(1, n + 1))
        frac = L - n
        return total + (frac * _sq(get(n + 1)) if frac else 0.0)
    L1, L2 = (float(x) for x in L)
    if L1 < 1 or L2 < 1:
        raise ValueError("L1 and L2 must be at least 1")
    n1, n2 = math.floor(L1), math.floor(L2)
    total = sum(_sq(get(k)) for k in range(-n1, n2 + 1))
    if L1 - n1:
        total += (L1 - n1) * _sq(get(-n1 - 1))
    if L2 - n2:
        total += (L2 - n2) * _sq(get(n2 + 1))
    return total


def truncated_norm(series, L) -> float:
    return math.sqrt(truncated_norm_sq(series, L))


def _inv_step_norm(f, z, theta) -> float:
    a = z - float(f(np.mod(theta, 1.0)))
    return float(matrix_norm(np.array([[0, 1], [-1, a]], dtype=complex)))


def l_tilde_batch(f, omega: float, z, theta: float, epsilon: float, direction: int = 1,
                  max_len: int = 10 ** 6, chunk: int = 1024) -> np.ndarray:
    """L-tilde for many spectral parameters at one phase; inf where the horizon is exceeded."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    z = np.atleast_1d(np.asarray(z, dtype=complex))
    a = z - float(f(np.mod(theta, 1.0)))
    inv = np.zeros((z.size, 2, 2), dtype=complex)
    inv[:, 0, 1] = 1
    inv[:, 1, 0] = -1
    inv[:, 1, 1] = a
    target = (2.0 * matrix_norm(inv) / epsilon) ** 2
    out = np.full(z.size, np.inf)
    cum = np.zeros(z.size)
    pending = np.ones(z.size, dtype=bool)
    sign = 1 if direction >= 0 else -1
    for start, lhs in hs_chunks(f, omega, z, np.full(z.size, theta), sign, max_len, chunk):
        h = np.exp(np.minimum(lhs, 700.0))
        c = cum[:, None] + np.cumsum(h, axis=1)
        for i in np.flatnonzero(pending & (c[:, -1] >= target)):
            row = np.concatenate([[cum[i]], c[i]])
            N = int(np.searchsorted(row, target[i], side="left"))
            # N-th entry of row counts steps 1..start+N-1
            out[i] = (start - 1) + (N - 1) + (target[i] - row[N - 1]) / h[i, N - 1]
            pending[i] = False
        cum = c[:, -1]
        if not pending.any():
            break
    return out


def l_tilde(f, omega: float, z: complex, theta: float, epsilon: float, direction: int = 1,
            max_len: int = 10 ** 6) -> float:
    """Solve ||A_.(theta, z)||^2_L = (2 ||A_1(theta, z)^{-1}|| / epsilon)^2 for L.

    The left side is the truncated sum of ||A_{+-n}||_HS^2, piecewise linear and increasing
    in L. Targets below the first term give L < 1 by the same interpolation.
    """
    val = float(l_tilde_batch(f, omega, z, theta, epsilon, direction, max_len)[0])
    if math.isinf(val):
        raise HorizonExceeded(f"cumulative sum stays below target after {max_len} steps")
    return val


def cocycle_hs_series(f, omega: float, z: complex, theta: float) -> Callable[[int], float]:
    """n -> ||A_n(theta, z)||_HS as a series (n = 0 gives the identity)."""
    def get(n: int) -> float:
        p = iterate_cocycle(f, omega, z, theta, int(n))
        return math.exp(0.5 * _log_hs_sq(p))
    return get


def _log_hs_sq(p) -> float:
    rho2 = math.exp(2 * (p.log_r22 - p.log_r11))
    return 2 * p.log_r11 + math.log(1 + abs(p.ratio) ** 2 + rho2)


def growth_norm(f, omega: float, E: complex, theta: float, L: float) -> float:
    """||A_.(theta, E)||_L over the positive direction, in log form (natural log of the norm)."""
    n = math.floor(L) + 1
    vals = next(hs_chunks(f, omega, E, theta, 1, n, chunk=n))[1][0]
    top = float(np.max(vals))
    w = np.ones(n)
    w[-1] = L - math.floor(L)
    return 0.5 * (top + math.log(float(np.sum(w * np.exp(vals - top)))))


# --------------------------------------------------------------------------- spectral data

@dataclass(frozen=True, eq=False)
class SpectralData:
    thetas: tuple[float, ...]
    eigenvalues: tuple[np.ndarray, ...]
    w0: tuple[np.ndarray, ...]
    w1: tuple[np.ndarray, ...]
    ids_energies: np.ndarray
    ids_values: np.ndarray

    def ids(self, E):
        """N(E): theta-averaged fraction of eigenvalues <= E."""
        idx = np.searchsorted(self.ids_energies, E, side="right")
        return np.where(idx > 0, self.ids_values[np.maximum(idx - 1, 0)], 0.0)


def spectral_and_ids(f, omega: float, theta_samples: Sequence[float], L_box: int, weights: bool = True) -> SpectralData:
    """Per-phase eigenvalues and delta_0 / delta_1 weights; IDS averaged over phases."""
    if L_box < 200:
        raise ValueError("L_box must be at least 200")
    evs, w0s, w1s = [], [], []
    for th in theta_samples:
        box = LatticeBox(f, th, omega, L_box)
        if weights:
            E, V = box.eigensystem
            w0s.append(V[box.index(0)] ** 2)
            w1s.append(V[box.index(1)] ** 2)
        else:
            E = box.eigenvalues
        evs.append(E)
    allE = np.sort(np.concatenate(evs))
    counts = np.arange(1, allE.size + 1) / allE.size
    return SpectralData(tuple(float(t) for t in theta_samples), tuple(evs), tuple(w0s), tuple(w1s), allE, counts)


def select_energy_windows(f, omega: float, energies, chi: float, k_list=(100, 200, 400), theta_count: int = 128):
    """Energies whose Lyapunov estimate exceeds chi, grouped into contiguous windows."""
    energies = np.sort(np.asarray(energies, dtype=float))
    from .cocycle import ThetaScheme
    L = np.array([lyapunov_estimate(f, omega, E, k_list, ThetaScheme("grid", theta_count), cross_check=False).L_hat
                  for E in energies])
    good = L > chi
    windows, start = [], None
    for E, g, prev in zip(energies, good, np.concatenate([[False], good[:-1]])):
        if g and not prev:
            start = E
        if g:
            end = E
        if not g and prev:
            windows.append((start, end))
    if good.size and good[-1]:
        windows.append((start, end))
    return windows, L


# --------------------------------------------------------------------------- KKL and DT

@dataclass(frozen=True)
class KKLReport:
    T: float
    L1: float
    L2: float
    lhs: float
    rhs_mass: float
    ratio: float | None


def kkl_check(f, theta: float, omega: float, T: float, box: LatticeBox, L1: float, L2: float,
              tol: float = 1e-8) -> KKLReport:
    """Abel-averaged truncated norm of e^{-ith} delta_1 against the delta_1 spectral mass of
    box energies with L-tilde^- <= L1 and L-tilde^+ <= L2 (both at epsilon = 1/T)."""
    trace = propagate(box, [], abel_T=[T], tol=tol)
    prof = trace.abel1[float(T)]
    lhs = truncated_norm_sq(lambda n: math.sqrt(max(prof[box.index(n)], 0.0)) if abs(n) <= box.half_width else 0.0,
                            (L1, L2))
    E, V = box.eigensystem
    w1 = V[box.index(1)] ** 2
    lm = l_tilde_batch(f, omega, E, theta, 1.0 / T, -1, max_len=int(L1) + 2)
    lp = l_tilde_batch(f, omega, E, theta, 1.0 / T, +1, max_len=int(L2) + 2)
    sel = (lm <= L1) & (lp <= L2)
    mass = float(w1[sel].sum())
    return KKLReport(float(T), float(L1), float(L2), float(lhs), mass, lhs / mass if mass > 0 else None)


@dataclass(frozen=True)
class DTReport:
    T_grid: tuple[float, ...]
    integrals: tuple[float, ...]
    nodes: tuple[int, ...]
    slope: float
    E_range: tuple[float, float]


def dt_integrand(f, omega: float, theta: float, energies, T: float, zeta: float) -> np.ndarray:
    """1 / min_{+/-} max_{1<=n<=T^zeta} ||A_{+/-n}(theta, E + i/T)||^2."""
    steps = max(1, int(math.floor(T ** zeta)))
    z = np.asarray(energies, dtype=float) + 1j / T
    th = np.full(z.size, float(theta) % 1.0)
    best = None
    for sign in (1, -1):
        batch, _ = _run(f, omega, z, th, sign * steps, track_max=True)
        best = batch.runmax.copy() if best is None else np.minimum(best, batch.runmax)
    return np.exp(-2.0 * best)


def dt_integral_check(f, omega: float, theta: float, T_grid, zeta: float, K: float,
                      E_range: tuple[float, float] | None = None, min_nodes: int = 512, rtol: float = 1e-3,
                      max_nodes: int = 1 << 15) -> DTReport:
    """Composite Simpson over E of the reciprocal growth, refined until two levels agree."""
    if K < 4:
        raise ValueError("K must be at least 4")
    a, b = E_range if E_range is not None else (-K, K)
    ints, used = [], []
    for T in T_grid:
        n = min_nodes
        E = np.linspace(a, b, n + 1)
        prev = simpson(dt_integrand(f, omega, theta, E, T, zeta), x=E)
        while True:
            n *= 2
            E = np.linspace(a, b, n + 1)
            cur = simpson(dt_integrand(f, omega, theta, E, T, zeta), x=E)
            if abs(cur - prev) <= rtol * abs(cur) or n >= max_nodes:
                break
            prev = cur
        ints.append(float(cur))
        used.append(n + 1)
    slope = float(np.polyfit(np.log(T_grid), np.log(ints), 1)[0])
    return DTReport(tuple(float(t) for t in T_grid), tuple(ints), tuple(used), slope, (float(a), float(b)))
