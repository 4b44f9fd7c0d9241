"""Piecewise Hölder sampling functions on the circle R/Z and their Fejér means.

A sampling function is a list of pieces ``(arc, component)``; on each half-open arc it
agrees with the component. Components are evaluated in the arc's unwrapped
coordinate, so a component only needs to make sense on the closed arc.

Everything uses the R/Z convention: Fourier modes are e^{2 pi i j theta} and the
Fejér kernel is evaluated at angle x = 2 pi theta.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial import polynomial as P
from scipy.interpolate import CubicSpline

from .arithmetic import Arc


class QuadratureFailure(ArithmeticError):
    """Fourier coefficients could not be computed to the requested accuracy."""


# --------------------------------------------------------------------------- components

class TrigPolynomial:
    """Real trigonometric polynomial c_0 + 2 Re sum_{j>=1} c_j e^{2 pi i j theta}."""

    def __init__(self, coeffs):
        c = np.asarray(coeffs, dtype=complex)
        if c.ndim != 1 or c.size == 0:
            raise ValueError("need a 1-d coefficient array")
        c = c.copy()
        c[0] = c[0].real
        self.coeffs = c

    @property
    def degree(self) -> int:
        return self.coeffs.size - 1

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        c = self.coeffs
        if self.degree == 0:
            return np.full(x.shape, c[0].real)
        z = np.exp(2j * np.pi * x)
        acc = np.full(x.shape, c[-1], dtype=complex)
        for cj in c[-2:0:-1]:
            acc = acc * z + cj
        # acc = sum_{j>=1} c_j z^{j-1}
        return c[0].real + 2.0 * (acc * z).real

    def limit(self, x, side: str):
        return self(x)

    def fourier(self, js) -> np.ndarray:
        js = np.asarray(js, dtype=int)
        out = np.zeros(js.shape, dtype=complex)
        a = np.abs(js)
        ok = a <= self.degree
        vals = self.coeffs[a[ok]]
        out[ok] = np.where(js[ok] < 0, np.conj(vals), vals)
        return out

    def sup_norm(self) -> float:
        return float(abs(self.coeffs[0]) + 2 * np.abs(self.coeffs[1:]).sum())


class PiecewisePolynomial:
    """1-periodic function, polynomial on each segment [x_i, x_{i+1}) of its breakpoints.

    ``breaks`` runs from x_0 to x_0 + 1; ``polys[i]`` holds ascending coefficients in the
    local variable s = x - x_i. Discontinuities at breakpoints are allowed; evaluation is
    right-continuous.
    """

    def __init__(self, breaks, polys):
        b = np.asarray(breaks, dtype=float)
        if b.ndim != 1 or b.size < 2 or not np.all(np.diff(b) > 0) or not math.isclose(b[-1] - b[0], 1.0, abs_tol=1e-12):
            raise ValueError("breaks must increase and span exactly one period")
        if len(polys) != b.size - 1:
            raise ValueError("one polynomial per segment")
        self.origin = float(b[0])
        self.rel = b - b[0]
        self.rel[-1] = 1.0
        deg = max(len(p) for p in polys)
        self.table = np.zeros((len(polys), deg))
        for i, p in enumerate(polys):
            self.table[i, :len(p)] = p

    @property
    def breaks(self) -> np.ndarray:
        return self.origin + self.rel

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.rel)

    def _locate(self, x):
        u = np.mod(np.asarray(x, dtype=float) - self.origin, 1.0)
        idx = np.clip(np.searchsorted(self.rel, u, side="right") - 1, 0, self.table.shape[0] - 1)
        return idx, u - self.rel[idx]

    def _horner(self, idx, s):
        out = np.zeros(np.shape(s))
        for m in range(self.table.shape[1] - 1, -1, -1):
            out = out * s + self.table[idx, m]
        return out

    def __call__(self, x):
        idx, s = self._locate(x)
        return self._horner(idx, s)

    def limit(self, x, side: str):
        """One-sided limit; ``side`` is '+' (from the right) or '-' (from the left)."""
        if side == "+":
            return self(x)
        u = np.mod(np.asarray(x, dtype=float) - self.origin, 1.0)
        u = np.where(u == 0.0, 1.0, u)
        idx = np.clip(np.searchsorted(self.rel, u, side="left") - 1, 0, self.table.shape[0] - 1)
        return self._horner(idx, u - self.rel[idx])

    def fourier(self, js) -> np.ndarray:
        """Exact coefficients int_0^1 f(x) e^{-2 pi i j x} dx (integration by parts)."""
        js = np.asarray(js, dtype=int)
        w = 2 * np.pi * js.astype(float)
        out = np.zeros(js.shape, dtype=complex)
        nz = js != 0
        for i, h in enumerate(self.widths):
            coef = self.table[i]
            x0 = self.origin + self.rel[i]
            # j = 0: plain integral
            out[~nz] += sum(c * h ** (m + 1) / (m + 1) for m, c in enumerate(coef))
            if not nz.any():
                continue
            wn = w[nz]
            e_h = np.exp(-1j * wn * h)
            acc = np.zeros(wn.shape, dtype=complex)
            d = coef.copy()
            power = 1j * wn
            for _ in range(len(coef)):
                if not np.any(d):
                    break
                acc += (P.polyval(0.0, d) - e_h * P.polyval(h, d)) / power
                d = P.polyder(d) if d.size > 1 else np.zeros(1)
                power = power * (1j * wn)
            out[nz] += np.exp(-1j * wn * x0) * acc
        return out

    def sup_norm(self) -> float:
        best = 0.0
        for i, h in enumerate(self.widths):
            coef = np.trim_zeros(self.table[i], "b")
            if coef.size == 0:
                continue
            pts = [0.0, h]
            if coef.size > 2:
                r = P.polyroots(P.polyder(coef))
                pts += [t.real for t in np.atleast_1d(r) if abs(t.imag) < 1e-12 and 0 < t.real < h]
            best = max(best, float(np.max(np.abs(P.polyval(np.array(pts), coef)))))
        return best

    def restrict(self, u0: float, u1: float) -> list[tuple[float, float, np.ndarray]]:
        """Segments (start, end, local coefficients) covering [u0, u1] in unwrapped coordinates."""
        cuts = [u0, u1]
        n_wrap = math.floor(u0 - self.origin)
        for k in (n_wrap, n_wrap + 1, n_wrap + 2):
            for b in self.origin + self.rel[:-1] + k:
                if u0 < b < u1:
                    cuts.append(float(b))
        cuts = sorted(set(cuts))
        out = []
        for a, b in zip(cuts[:-1], cuts[1:]):
            idx, s = self._locate(0.5 * (a + b))
            shift = float(s) - 0.5 * (b - a)
            out.append((a, b, _shift_poly(self.table[int(idx)], shift)))
        return out


def _shift_poly(coef, shift: float) -> np.ndarray:
    """Coefficients of s -> p(s + shift)."""
    out = np.zeros(1)
    for c in coef[::-1]:
        out = P.polyadd(P.polymul(out, [shift, 1.0]), [c])
    return out


class CallableComponent:
    """A user-supplied evaluator, optionally with closed-form Fourier coefficients.

    Without ``fourier_fn`` the coefficients come from Gauss-Legendre quadrature over
    [0, 1] with an a-posteriori check; ``QuadratureFailure`` is raised above ``tol``.
    """

    def __init__(self, func: Callable, fourier_fn: Callable | None = None, sup: float | None = None,
                 tol: float = 1e-10):
        self.func = func
        self.fourier_fn = fourier_fn
        self._sup = sup
        self.tol = tol

    def __call__(self, x):
        return np.asarray(self.func(np.asarray(x, dtype=float)), dtype=float)

    def limit(self, x, side: str):
        return self(x)

    def fourier(self, js) -> np.ndarray:
        js = np.asarray(js, dtype=int)
        if self.fourier_fn is not None:
            return np.asarray(self.fourier_fn(js), dtype=complex)
        return _quadrature_fourier(self, 0.0, 1.0, js, self.tol)

    def sup_norm(self) -> float:
        if self._sup is not None:
            return float(self._sup)
        grid = np.linspace(0.0, 1.0, 1 << 14, endpoint=False)
        return float(np.max(np.abs(self(grid))))


def _quadrature_fourier(func, a: float, b: float, js, tol: float) -> np.ndarray:
    jmax = int(np.max(np.abs(js))) if np.size(js) else 0
    n = max(64, int(1.5 * np.pi * jmax * (b - a)) + 64)
    results = []
    for m in (n, int(1.5 * n) + 8):
        x, w = np.polynomial.legendre.leggauss(m)
        x = a + 0.5 * (b - a) * (x + 1.0)
        w = 0.5 * (b - a) * w
        fx = func(x) * w
        results.append(np.array([np.sum(fx * np.exp(-2j * np.pi * j * x)) for j in np.ravel(js)]).reshape(np.shape(js)))
    err = float(np.max(np.abs(results[0] - results[1]))) if np.size(js) else 0.0
    if err > tol:
        raise QuadratureFailure(f"coefficient error estimate {err:.2e} exceeds {tol:.0e}")
    return results[1]


class ArcExtension:
    """``base`` on ``arc``; linear interpolation of the one-sided end values across the rest."""

    def __init__(self, base: Callable, arc: Arc, left: float, right: float, tol: float = 1e-10):
        if arc.length >= 1:
            raise ValueError("arc must leave a gap to interpolate across")
        self.base, self.arc, self.left, self.right, self.tol = base, arc, left, right, tol

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        inside = self.arc.contains(x)
        out = np.empty(x.shape)
        out[inside] = self.base(self.arc.unwrap(x[inside]))
        t = np.mod(x[~inside] - self.arc.end, 1.0) / (1.0 - self.arc.length)
        out[~inside] = self.right + t * (self.left - self.right)
        return out

    def limit(self, x, side: str):
        return self(x)

    def fourier(self, js) -> np.ndarray:
        js = np.asarray(js, dtype=int)
        a = self.arc.start
        b = a + self.arc.length
        inner = _quadrature_fourier(lambda u: self.base(u), a, b, js, self.tol)
        gap = PiecewisePolynomial([b, a + 1.0, b + 1.0],
                                  [[self.right, (self.left - self.right) / (1.0 - self.arc.length)], [0.0]])
        return inner + gap.fourier(js)

    def sup_norm(self) -> float:
        grid = np.linspace(0.0, 1.0, 1 << 14, endpoint=False)
        return float(max(np.max(np.abs(self(grid))), abs(self.left), abs(self.right)))


# --------------------------------------------------------------------------- functions

@dataclass(frozen=True)
class Piece:
    arc: Arc
    component: object


@dataclass(frozen=True)
class PiecewiseHolderFunction:
    """f = sum_i 1_{I_i} f_i with finitely many jumps, Hölder of order ``gamma`` off the jumps."""

    pieces: tuple[Piece, ...]
    gamma: float
    jump_set: tuple[float, ...]
    sup_bound: float
    tag: str = "custom"
    params: dict = field(default_factory=dict, compare=False)
    canonical: bool = False

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")
        if not self.pieces:
            raise ValueError("need at least one piece")
        total = sum(p.arc.length for p in self.pieces)
        if not math.isclose(total, 1.0, abs_tol=1e-9):
            raise ValueError(f"arcs cover a total length {total}, not 1")

    def __call__(self, theta):
        theta = np.asarray(theta, dtype=float)
        if len(self.pieces) == 1:
            p = self.pieces[0]
            return p.component(p.arc.unwrap(theta))
        out = np.empty(theta.shape)
        for p in self.pieces:
            m = p.arc.contains(theta)
            out[m] = p.component(p.arc.unwrap(theta[m]))
        return out

    def piece_index(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        idx = np.full(theta.shape, -1, dtype=int)
        for i, p in enumerate(self.pieces):
            idx[p.arc.contains(theta)] = i
        return idx

    def limit(self, x: float, side: str) -> float:
        """One-sided limit of f at x."""
        for p in self.pieces:
            a, length = p.arc.start, p.arc.length
            u = a + (x - a) % 1.0
            if side == "+" and p.arc.contains(x):
                return float(p.component.limit(u, "+"))
            if side == "-":
                # x is inside the arc or is its right end
                if u == a and length < 1:
                    continue
                if u == a:
                    u = a + 1.0
                if a < u <= a + length:
                    return float(p.component.limit(u, "-"))
        raise ValueError(f"no piece covers {x}")

    def is_polynomial(self) -> bool:
        return all(isinstance(p.component, PiecewisePolynomial) for p in self.pieces)


def evaluate_sampling(f: PiecewiseHolderFunction, theta):
    """f(theta) with theta read mod 1; half-open arcs make jumps right-continuous."""
    out = f(np.mod(theta, 1.0))
    return float(out) if np.ndim(out) == 0 else out


def constant(c: float) -> PiecewiseHolderFunction:
    return PiecewiseHolderFunction((Piece(Arc(0.0, 1.0), TrigPolynomial([c])),), 1.0, (), abs(c),
                                   "constant", {"value": c})


def cosine(lam: float) -> PiecewiseHolderFunction:
    """2 lam cos(2 pi theta)."""
    return PiecewiseHolderFunction((Piece(Arc(0.0, 1.0), TrigPolynomial([0.0, lam])),), 1.0, (), 2 * abs(lam),
                                   "cosine", {"lambda": lam})


def sawtooth(lam: float) -> PiecewiseHolderFunction:
    """lam (theta - 1/2) on [0, 1), one jump at 0."""
    comp = PiecewisePolynomial([0.0, 1.0], [[-0.5 * lam, lam]])
    return PiecewiseHolderFunction((Piece(Arc(0.0, 1.0), comp),), 1.0, (0.0,), 0.5 * abs(lam),
                                   "sawtooth", {"lambda": lam})


def sturmian_indicator(lam: float, omega: float) -> PiecewiseHolderFunction:
    """lam * 1_{[1 - omega, 1)}(theta)."""
    cut = 1.0 - omega
    comp = PiecewisePolynomial([0.0, cut, 1.0], [[0.0], [lam]])
    return PiecewiseHolderFunction((Piece(Arc(0.0, 1.0), comp),), 1.0, (0.0, cut), abs(lam),
                                   "sturmian_indicator", {"lambda": lam, "omega": omega})


def _cusp_fourier(gamma: float) -> Callable:
    half = 0.5 * gamma

    def coeffs(js):
        js = np.asarray(js, dtype=int)
        jmax = int(np.max(np.abs(js))) if js.size else 0
        c = np.empty(jmax + 1)
        c[0] = math.exp(math.lgamma(gamma + 1) - gamma * math.log(2) - 2 * math.lgamma(1 + half))
        for j in range(1, jmax + 1):
            c[j] = c[j - 1] * (j - 1 - half) / (j + half)
        return c[np.abs(js)].astype(complex)

    return coeffs


def holder_cusp(gamma: float, scale: float = 1.0) -> PiecewiseHolderFunction:
    """scale * |sin(pi theta)|^gamma: globally gamma-Hölder, sharp at theta = 0.

    Fourier coefficients use the closed form
    c_0 = Gamma(g+1) / (2^g Gamma(1+g/2)^2), c_j / c_{j-1} = (j - 1 - g/2) / (j + g/2).
    """
    base = _cusp_fourier(gamma)
    comp = CallableComponent(lambda x: scale * np.abs(np.sin(np.pi * x)) ** gamma,
                             lambda js: scale * base(js), sup=abs(scale))
    return PiecewiseHolderFunction((Piece(Arc(0.0, 1.0), comp),), gamma, (), abs(scale),
                                   "custom", {"cusp_gamma": gamma, "scale": scale})


def from_tables(breakpoints: Sequence[float], tables: Sequence[Sequence[float]], gamma: float,
                sup_bound: float) -> PiecewiseHolderFunction:
    """Custom function from sampled tables, cubic interpolation on each arc.

    ``tables[i]`` samples the arc [b_i, b_{i+1}) at equispaced points including both
    ends. With no breakpoints a single periodic table over [0, 1) is expected.
    """
    if not breakpoints:
        y = np.asarray(tables[0], dtype=float)
        x = np.linspace(0.0, 1.0, y.size + 1)
        spline = CubicSpline(x, np.append(y, y[0]), bc_type="periodic")
        comp = _spline_to_pp(spline)
        f = PiecewiseHolderFunction((Piece(Arc(0.0, 1.0), comp),), gamma, (), float(sup_bound), "custom",
                                    {"breakpoints": [], "tables": [list(map(float, y))]})
    else:
        b = sorted(float(v) % 1.0 for v in breakpoints)
        if len(tables) != len(b):
            raise ValueError("one table per arc")
        ends = b[1:] + [b[0] + 1.0]
        breaks, polys = [], []
        for a, e, tab in zip(b, ends, tables):
            y = np.asarray(tab, dtype=float)
            if y.size < 2:
                raise ValueError("each table needs at least two samples")
            x = np.linspace(a, e, y.size)
            if y.size >= 4:
                sp = _spline_to_pp(CubicSpline(x, y), span=False)
                for s0, coefs in sp:
                    breaks.append(s0)
                    polys.append(coefs)
            else:
                for x0, x1, y0, y1 in zip(x[:-1], x[1:], y[:-1], y[1:]):
                    breaks.append(x0)
                    polys.append(np.array([y0, (y1 - y0) / (x1 - x0)]))
        comp = PiecewisePolynomial(breaks + [b[0] + 1.0], polys)
        f = PiecewiseHolderFunction((Piece(Arc(b[0], 1.0), comp),), gamma, tuple(b), float(sup_bound), "custom",
                                    {"breakpoints": b, "tables": [list(map(float, t)) for t in tables]})
    observed = pl_norm_estimate(f, 1 << 12).sup
    if observed > f.sup_bound * (1 + 1e-12):
        raise ValueError(f"declared sup_bound {sup_bound} is below the observed sup {observed}")
    return f


def _spline_to_pp(spline: CubicSpline, span: bool = True):
    x = spline.x
    polys = [spline.c[::-1, i].copy() for i in range(x.size - 1)]
    if span:
        return PiecewisePolynomial(x, polys)
    return list(zip(x[:-1], polys))


def from_spec(spec: dict, omega: float | None = None) -> PiecewiseHolderFunction:
    """Build a sampling function from its config form."""
    if "custom" in spec:
        c = spec["custom"]
        return from_tables(c.get("breakpoints", []), c["tables"], float(c.get("gamma", 1.0)), float(c["sup_bound"]))
    kind = spec.get("builtin")
    lam = float(spec.get("lambda", 1.0))
    if kind == "cosine":
        return cosine(lam)
    if kind == "sawtooth":
        return sawtooth(lam)
    if kind == "sturmian":
        if omega is None:
            raise ValueError("the sturmian builtin needs the frequency")
        return sturmian_indicator(lam, omega)
    if kind == "zero":
        return constant(0.0)
    if kind == "cusp":
        return holder_cusp(float(spec.get("gamma", 0.5)), lam)
    raise ValueError(f"unknown sampling builtin {kind!r}")


# --------------------------------------------------------------------------- PL norm

@dataclass(frozen=True)
class PLNormEstimate:
    value: float
    sup: float
    holder: float
    resolution: float


def _circle_dist(x, points) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if not len(points):
        return np.full(x.shape, np.inf)
    d = np.abs(np.mod(x[..., None] - np.asarray(points)[None, :] + 0.5, 1.0) - 0.5)
    return d.min(axis=-1)


def pl_norm_estimate(f: PiecewiseHolderFunction, probe_count: int = 1 << 14,
                     gamma: float | None = None) -> PLNormEstimate:
    """Grid lower bound on ||f||_{PL_gamma}: sup|f| + sup |f(t+h)-f(t)| / h^gamma.

    t runs over a dyadic grid of ``probe_count`` points and h over the dyadic steps
    2^-1 .. 1/probe_count; pairs with dist(t, J_f) <= h are skipped.
    """
    if probe_count < 1 << 10:
        raise ValueError("probe_count must be at least 2^10")
    gamma = f.gamma if gamma is None else gamma
    n = 1 << int(math.ceil(math.log2(probe_count)))
    t = np.arange(n) / n
    vals = f(t)
    sup = float(np.max(np.abs(vals)))
    dist = _circle_dist(t, f.jump_set)
    best = 0.0
    shift = n // 2
    while shift >= 1:
        h = shift / n
        ok = dist > h
        if ok.any():
            q = np.abs(np.roll(vals, -shift) - vals)[ok] / h ** gamma
            best = max(best, float(q.max()))
        shift //= 2
    return PLNormEstimate(sup + best, sup, best, 1.0 / n)


# --------------------------------------------------------------------------- decomposition

def decompose_pl(f: PiecewiseHolderFunction) -> PiecewiseHolderFunction:
    """Canonical form f = sum_i 1_{I_i} f_i with every f_i globally Hölder on the circle.

    The arcs are the complementary intervals of J_f (a single jump gets its antipode as
    a second breakpoint); each f_i equals f on I_i and linearly interpolates the
    one-sided limits f(b_i - 0), f(a_i + 0) across the rest of the circle.
    """
    if f.canonical:
        return f
    if not f.jump_set:
        if len(f.pieces) == 1:
            return PiecewiseHolderFunction(f.pieces, f.gamma, (), f.sup_bound, f.tag, f.params, True)
        cuts = sorted({p.arc.start for p in f.pieces})
    else:
        cuts = sorted(set(float(x) % 1.0 for x in f.jump_set))
    if len(cuts) == 1:
        cuts = sorted([cuts[0], (cuts[0] + 0.5) % 1.0])
    ends = cuts[1:] + [cuts[0] + 1.0]
    pieces = []
    for a, b in zip(cuts, ends):
        arc = Arc(a, b - a)
        left = f.limit(a, "+")
        right = f.limit(b % 1.0, "-")
        if f.is_polynomial():
            segs = _restrict_polynomial(f, a, b)
            slope = (left - right) / (1.0 - (b - a))
            breaks = [s[0] for s in segs] + [b, a + 1.0]
            polys = [s[2] for s in segs] + [np.array([right, slope])]
            comp = PiecewisePolynomial(breaks, polys)
        else:
            comp = ArcExtension(lambda u, _f=f: _f(np.mod(u, 1.0)), arc, left, right)
        pieces.append(Piece(arc, comp))
    bound = sum(p.component.sup_norm() for p in pieces)
    return PiecewiseHolderFunction(tuple(pieces), f.gamma, tuple(cuts), bound, f.tag, f.params, True)


def _restrict_polynomial(f: PiecewiseHolderFunction, a: float, b: float):
    segs = []
    for p in f.pieces:
        # overlap of [a, b) with the piece's arc, in the unwrapped coordinate of [a, b)
        s0 = a + (p.arc.start - a) % 1.0
        for lo, hi in ((s0 - 1.0, s0 - 1.0 + p.arc.length), (s0, s0 + p.arc.length)):
            lo2, hi2 = max(lo, a), min(hi, b)
            if hi2 - lo2 > 1e-15:
                segs.extend(p.component.restrict(lo2, hi2))
    segs.sort(key=lambda s: s[0])
    return segs


# --------------------------------------------------------------------------- Fejér

def fejer_kernel_eval(N: int, theta):
    """K_N(theta) = (1/(N+1)) (sin((N+1)x/2) / sin(x/2))^2 with x = 2 pi theta."""
    if N < 0:
        raise ValueError("N must be >= 0")
    th = np.mod(np.asarray(theta, dtype=float) + 0.5, 1.0) - 0.5
    x = 2 * np.pi * th
    den = np.sin(0.5 * x)
    with np.errstate(divide="ignore", invalid="ignore"):
        val = (np.sin(0.5 * (N + 1) * x) / den) ** 2 / (N + 1)
    val = np.where(den == 0.0, float(N + 1), val)
    return float(val) if np.ndim(val) == 0 else val


def fejer_kernel_bound(N: int, theta):
    """min{N+1, pi^2 / ((N+1) x^2)} at angle x = 2 pi theta in (-pi, pi]."""
    th = np.mod(np.asarray(theta, dtype=float) + 0.5, 1.0) - 0.5
    x = 2 * np.pi * th
    with np.errstate(divide="ignore"):
        tail = np.where(x == 0, np.inf, np.pi ** 2 / ((N + 1) * x ** 2))
    return np.minimum(N + 1.0, tail)


def cesaro_weights(N: int) -> np.ndarray:
    """1 - |j|/(N+1) for j = 0..N."""
    return 1.0 - np.arange(N + 1) / (N + 1.0)


@dataclass(frozen=True)
class FejerApproximant:
    """f_N = sum_i sigma_N(f_i) 1_{I_i} over the canonical decomposition of ``parent``."""

    N: int
    parent: PiecewiseHolderFunction
    smoothed: tuple[TrigPolynomial, ...]
    raw_coeffs: tuple[np.ndarray, ...] = field(compare=False)

    @property
    def sup_bound(self) -> float:
        """M = sum_i ||f_i||_inf, which bounds ||f_N||_inf."""
        return self.parent.sup_bound

    def __call__(self, theta):
        theta = np.mod(np.asarray(theta, dtype=float), 1.0)
        if len(self.smoothed) == 1:
            return self.smoothed[0](theta)
        out = np.empty(theta.shape)
        for piece, sm in zip(self.parent.pieces, self.smoothed):
            m = piece.arc.contains(theta)
            out[m] = sm(theta[m])
        return out

    def piece_on_grid(self, i: int, M: int) -> np.ndarray:
        """sigma_N(f_i) at theta = m/M, exact up to rounding (needs M > 2N)."""
        if M <= 2 * self.N:
            raise ValueError("grid too coarse for the degree")
        c = self.smoothed[i].coeffs
        spec = np.zeros(M // 2 + 1, dtype=complex)
        spec[: c.size] = c
        return np.fft.irfft(spec * M, n=M)

    def on_grid(self, M: int) -> np.ndarray:
        theta = np.arange(M) / M
        if len(self.smoothed) == 1:
            return self.piece_on_grid(0, M)
        out = np.empty(M)
        for i, piece in enumerate(self.parent.pieces):
            m = piece.arc.contains(theta)
            out[m] = self.piece_on_grid(i, M)[m]
        return out

    def as_function(self) -> PiecewiseHolderFunction:
        pieces = tuple(Piece(p.arc, _Periodic(sm)) for p, sm in zip(self.parent.pieces, self.smoothed))
        return PiecewiseHolderFunction(pieces, 1.0, self.parent.jump_set, self.sup_bound,
                                       "fejer", {"N": self.N, "parent": self.parent.tag}, True)


class _Periodic:
    """Adapter evaluating a periodic component at unwrapped coordinates."""

    def __init__(self, comp):
        self.comp = comp

    def __call__(self, u):
        return self.comp(np.mod(u, 1.0))

    def limit(self, u, side):
        return self(u)

    def sup_norm(self):
        return self.comp.sup_norm()


def cesaro_approximant(f: PiecewiseHolderFunction, N: int) -> FejerApproximant:
    """Piecewise Fejér mean: coefficients (1 - |j|/(N+1)) hat f_i(j) on each canonical piece."""
    if N < 1:
        raise ValueError("N must be >= 1")
    canon = decompose_pl(f)
    w = cesaro_weights(N)
    smoothed, raw = [], []
    for p in canon.pieces:
        c = p.component.fourier(np.arange(N + 1))
        raw.append(c)
        smoothed.append(TrigPolynomial(w * c))
    return FejerApproximant(N, canon, tuple(smoothed), tuple(raw))
