"""Closed-form example mappings with exact derivatives and dilatations.

Entries
-------
twisting               f_m(x) = (r cos m phi, r sin m phi, x3)            n = 3
planar_power           f(z) = z^k                                         n = 2
radial_power           f(x) = x |x|^(alpha - 1), f(0) = 0
annulus_blowup         g(x) = (1 + |x|^alpha) x / |x|,  0 < alpha < 1
counterexample_n       radial, rho(r) = exp(-int_r^1 dt / (t q0^(1/(n-1))))
counterexample_alpha   radial, rho(r) = (1 + c int_r^1 t^(-(n-1)/(a-1)) q0^(-1/(a-1)) dt)^((a-1)/(a-n))

Exact dilatations are always computed from exact principal stretches,
``K_{I,p} = prod(lambda) / lambda_1^p`` and ``K_{O,p} = lambda_n^p / prod(lambda)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import optimize
from scipy.interpolate import CubicHermiteSpline
from scipy.spatial.distance import pdist

from .errors import NearSingularity, ParameterRange, QuadratureFailure
from .geometry import check_dimension, make_domain, ring_directions
from .mapping import DEGENERACY_TOL, MappingSpec, radial_map

CATALOG_NAMES = ("twisting", "planar_power", "radial_power", "annulus_blowup",
                 "counterexample_n", "counterexample_alpha")

PARAMETER_RANGES = {
    "twisting": "m: integer >= 1; n = 3",
    "planar_power": "k: integer >= 1; n = 2",
    "radial_power": "alpha > 0; n in {2, 3}",
    "annulus_blowup": "0 < alpha < 1; n in {2, 3}",
    "counterexample_n": "n in {2, 3}; q0 >= 1 on (0, 1] with finite criterion integral",
    "counterexample_alpha": "n in {2, 3}; n - 1 < alpha < n; q0 >= 1 with finite criterion integral",
}

#: radius range and size of the cached profile table
CACHE_MIN_RADIUS = 1e-8
CACHE_NODES = 4096
CACHE_RTOL = 1e-6


@dataclass(frozen=True)
class LimitSet:
    kind: str  # "none", "point" or "sphere"
    center: tuple
    radius: float = 0.0


@dataclass(frozen=True)
class CatalogEntry:
    name: str
    params: dict
    mapping: MappingSpec
    stretches: Callable[[np.ndarray], np.ndarray]
    limit_set: LimitSet
    preimage_fn: Optional[Callable[[np.ndarray], np.ndarray]] = field(default=None, repr=False)

    @property
    def dimension(self) -> int:
        return self.mapping.dimension

    def dilatation(self, pts, p: float, kind: str = "inner") -> np.ndarray:
        """Vectorised exact dilatation from the exact stretches."""
        lam = self.stretches(np.atleast_2d(pts))
        return _dilatation_from_stretches(lam, p, kind)

    def preimages(self, y) -> np.ndarray:
        """All preimages of ``y`` in the domain, from the map's angle/radius arithmetic."""
        cand = self.preimage_fn(np.asarray(y, dtype=float))
        if len(cand) == 0:
            return cand
        if self.mapping.domain is not None:
            cand = cand[self.mapping.domain.contains(cand)]
        for c in self.mapping.punctures:
            cand = cand[np.linalg.norm(cand - np.asarray(c), axis=1) > 0]
        if len(cand) == 0:
            return cand
        img = self.mapping.evaluator(cand)
        ok = np.linalg.norm(img - y, axis=1) <= 1e-9 * (1 + np.linalg.norm(y))
        cand = cand[ok]
        # drop duplicates produced by coinciding angle branches
        uniq = []
        for c in cand:
            if all(np.linalg.norm(c - u) > 1e-9 for u in uniq):
                uniq.append(c)
        return np.array(uniq).reshape(-1, len(y))


def _dilatation_from_stretches(lam: np.ndarray, p: float, kind: str) -> np.ndarray:
    lam = np.sort(lam, axis=1)
    jac = np.prod(lam, axis=1)
    if kind == "inner":
        out = jac / lam[:, 0] ** p
    elif kind == "outer":
        out = lam[:, -1] ** p / jac
    else:
        raise ValueError("kind must be 'inner' or 'outer'")
    zero = jac <= DEGENERACY_TOL
    return np.where(zero, np.where(lam[:, -1] <= DEGENERACY_TOL, 1.0, np.inf), out)


def exact_dilatation(entry: CatalogEntry, x, p: float, kind: str = "inner") -> float:
    """Closed-form ``K_{I,p}`` (or ``K_{O,p}`` with ``kind='outer'``) at ``x``."""
    x = np.asarray(x, dtype=float)
    if entry.mapping.distance_to_singularities(x[None])[0] <= 1e-12:
        raise NearSingularity(f"{x} is at a singular point of {entry.name}")
    return float(entry.dilatation(x[None], p, kind)[0])


def _radial_stretches(profile, dprofile, n):
    def stretches(pts):
        r = np.linalg.norm(pts, axis=1)
        tang = profile(r) / r
        return np.column_stack([np.repeat(tang[:, None], n - 1, axis=1), dprofile(r)])
    return stretches


def _radial_preimages(inverse_radius):
    def pre(y):
        ry = np.linalg.norm(y)
        if ry == 0:
            return np.zeros((0, len(y)))
        r = inverse_radius(ry)
        if r is None or not np.isfinite(r):
            return np.zeros((0, len(y)))
        return (y / ry * r)[None]
    return pre


def _bracket_inverse(profile, lo, hi):
    """Inverse of an increasing profile on ``[lo, hi]`` by Brent's method in ``log r``."""
    def g(s, target):
        return profile(np.array([np.exp(s)]))[0] - target

    def inv(target):
        a, b = np.log(lo), np.log(hi)
        if g(a, target) * g(b, target) > 0:
            return None
        return float(np.exp(optimize.brentq(g, a, b, args=(target,), xtol=1e-14, rtol=1e-15)))
    return inv


# -- cached counterexample profiles ----------------------------------------------

class CriterionProfile:
    """Radial profile built from ``F(r) = int_r^1 w(t) dt`` with a weight from ``q0``.

    ``F`` is tabulated once on a uniform grid in ``u = log(1/r)`` over
    ``(CACHE_MIN_RADIUS, 1]`` and interpolated by cubic Hermite segments
    using the exact derivative ``dF/du``.  Below the table it falls back to
    direct Gauss-Legendre quadrature.
    """

    def __init__(self, q0: Callable, n: int, alpha: Optional[float] = None,
                 nodes: int = CACHE_NODES, r_min: float = CACHE_MIN_RADIUS):
        self.q0, self.n, self.alpha = q0, n, alpha
        self.u_max = np.log(1.0 / r_min)
        u = np.linspace(0.0, self.u_max, nodes)
        g = self.weight_u(u)
        if np.any(self.q(np.exp(-u)) < 1 - 1e-12):
            raise ParameterRange("q0 must be >= 1 on (0, 1]")
        gl_x, gl_w = np.polynomial.legendre.leggauss(8)
        h = 0.5 * np.diff(u)
        nodes_u = (u[:-1] + h)[:, None] + h[:, None] * gl_x[None, :]
        pieces = np.sum(self.weight_u(nodes_u) * gl_w[None, :], axis=1) * h
        F = np.concatenate([[0.0], np.cumsum(pieces)])
        self._spline = CubicHermiteSpline(u, F, g)
        # independent check at interval midpoints
        mid = u[:-1] + h
        half = 0.5 * h
        gx, gw = np.polynomial.legendre.leggauss(16)
        pts = (u[:-1] + half)[:, None] + half[:, None] * gx[None, :]
        ref = F[:-1] + np.sum(self.weight_u(pts) * gw[None, :], axis=1) * half
        err = np.abs(self._spline(mid) - ref) / np.maximum(np.abs(ref), 1e-300)
        if np.any(err[ref > 0] > CACHE_RTOL):
            raise QuadratureFailure(f"profile table error {err.max():.2e} exceeds {CACHE_RTOL:g}")
        self._F_top = F[-1]
        self.F_total = F[-1] + self._tail()

    def _tail(self, u_cap: float = 700.0) -> float:
        """``int_{u_max}^inf dF/du``: quadrature up to ``u_cap`` (t ~ 1e-304), then
        the tail of a fitted ``c (u + s)^-gamma`` (``gamma = inf`` is exponential decay)."""
        gx, gw = np.polynomial.legendre.leggauss(16)
        edges = np.linspace(self.u_max, u_cap, 2049)
        h = 0.5 * np.diff(edges)
        s = (edges[:-1] + h)[:, None] + h[:, None] * gx[None, :]
        body = float(np.sum(self.weight_u(s) * gw[None, :] * h[:, None]))
        g_cap = float(self.weight_u(np.array([u_cap]))[0])
        if g_cap == 0:
            return body
        # decay rate k(u) = -d log g / du at two abscissae; 1/k is linear in u
        # with slope 1/gamma for a shifted power law
        us = np.array([0.8 * u_cap, u_cap - 1.0])
        lg = np.log(self.weight_u(np.concatenate([us - 0.5, us + 0.5])))
        k = lg[:2] - lg[2:]
        if np.any(k <= 0):
            raise ParameterRange("criterion integral must be finite for this construction")
        slope = (1 / k[1] - 1 / k[0]) / (us[1] - us[0])
        if not slope < 1 / 1.05:
            raise ParameterRange("criterion integral must be finite for this construction")
        k_cap = 1.0 / (1 / k[1] + slope * (u_cap - us[1]))
        return body + g_cap / (k_cap * (1.0 - max(slope, 0.0)))

    def q(self, t):
        v = np.asarray(self.q0(np.asarray(t, dtype=float)), dtype=float)
        v = np.broadcast_to(v, np.shape(t))
        if not np.all(np.isfinite(v)) or np.any(v <= 0):
            raise QuadratureFailure("q0 must be finite and positive")
        return v

    def weight_u(self, u):
        """``dF/du`` for ``t = exp(-u)``."""
        t = np.exp(-u)
        if self.alpha is None:
            return self.q(t) ** (-1.0 / (self.n - 1))
        a = self.alpha
        return t ** (1.0 - (self.n - 1) / (a - 1)) * self.q(t) ** (-1.0 / (a - 1))

    def F(self, r):
        r = np.asarray(r, dtype=float)
        u = np.log(1.0 / r)
        out = np.empty_like(u)
        inside = u <= self.u_max
        out[inside] = self._spline(u[inside])
        if np.any(~inside):
            gx, gw = np.polynomial.legendre.leggauss(32)
            for i in np.flatnonzero(~inside):
                edges = np.linspace(self.u_max, u.flat[i], int(np.ceil(u.flat[i] - self.u_max)) + 1)
                h = 0.5 * np.diff(edges)
                s = (edges[:-1] + h)[:, None] + h[:, None] * gx[None, :]
                out.flat[i] = self._F_top + np.sum(self.weight_u(s) * gw[None, :] * h[:, None])
        return out

    def _c(self):
        a, n = self.alpha, self.n
        return (n - a) / (a - 1)

    def rho(self, r):
        if self.alpha is None:
            return np.exp(-self.F(r))
        a, n = self.alpha, self.n
        return (1.0 + self._c() * self.F(r)) ** ((a - 1) / (a - n))

    def drho(self, r):
        r = np.asarray(r, dtype=float)
        if self.alpha is None:
            return self.rho(r) / (r * self.q(r) ** (1.0 / (self.n - 1)))
        a, n = self.alpha, self.n
        base = 1.0 + self._c() * self.F(r)
        return base ** ((n - 1) / (a - n)) / (r ** ((n - 1) / (a - 1)) * self.q(r) ** (1.0 / (a - 1)))

    @property
    def limit_radius(self) -> float:
        if self.alpha is None:
            return float(np.exp(-self.F_total))
        a, n = self.alpha, self.n
        return float((1.0 + self._c() * self.F_total) ** ((a - 1) / (a - n)))


# -- constructors -------------------------------------------------------------

def _twisting(m: int = 2, n: int = 3) -> CatalogEntry:
    if n != 3:
        raise ParameterRange("twisting is implemented for n = 3 only")
    if int(m) != m or m < 1:
        raise ParameterRange("m must be a positive integer")
    m = int(m)

    def evaluate(x):
        z = x[:, 0] + 1j * x[:, 1]
        r, phi = np.abs(z), np.angle(z)
        w = r * np.exp(1j * m * phi)
        return np.column_stack([w.real, w.imag, x[:, 2]])

    def derivative(x):
        z = x[:, 0] + 1j * x[:, 1]
        phi = np.angle(z)
        c, s = np.cos(phi), np.sin(phi)
        cm, sm = np.cos(m * phi), np.sin(m * phi)
        out = np.zeros((len(x), 3, 3))
        # radial direction -> rotated radial, unit speed; angular direction stretched by m
        er, ep = np.stack([c, s], 1), np.stack([-s, c], 1)
        er2, ep2 = np.stack([cm, sm], 1), np.stack([-sm, cm], 1)
        out[:, :2, :2] = er2[:, :, None] * er[:, None, :] + m * ep2[:, :, None] * ep[:, None, :]
        out[:, 2, 2] = 1.0
        return out

    def stretches(x):
        return np.tile([1.0, 1.0, float(m)], (len(x), 1))

    def preimages(y):
        r = np.hypot(y[0], y[1])
        if r == 0:
            return y[None].copy()
        ang = (np.arctan2(y[1], y[0]) + 2 * np.pi * np.arange(m)) / m
        return np.column_stack([r * np.cos(ang), r * np.sin(ang), np.full(m, y[2])])

    dom = make_domain("ball", (0.0, 0.0, 0.0), 0.0, 1.0)
    spec = MappingSpec(evaluate, 3, "catalog", derivative, domain=dom,
                       singular_distance=lambda x: np.hypot(x[:, 0], x[:, 1]),
                       multiplicity=m, name="twisting")
    return CatalogEntry("twisting", {"m": m, "n": 3}, spec, stretches,
                        LimitSet("point", (0.0, 0.0, 0.0)), preimages)


def _planar_power(k: int = 2, n: int = 2) -> CatalogEntry:
    if n != 2:
        raise ParameterRange("planar_power is implemented for n = 2 only")
    if int(k) != k or k < 1:
        raise ParameterRange("k must be a positive integer")
    k = int(k)

    def evaluate(x):
        w = (x[:, 0] + 1j * x[:, 1]) ** k
        return np.column_stack([w.real, w.imag])

    def derivative(x):
        d = k * (x[:, 0] + 1j * x[:, 1]) ** (k - 1)
        a, b = d.real, d.imag
        return np.stack([np.stack([a, -b], 1), np.stack([b, a], 1)], 1)

    def stretches(x):
        s = k * np.hypot(x[:, 0], x[:, 1]) ** (k - 1)
        return np.column_stack([s, s])

    def preimages(y):
        w = y[0] + 1j * y[1]
        if w == 0:
            return np.zeros((1, 2))
        roots = np.abs(w) ** (1.0 / k) * np.exp(1j * (np.angle(w) + 2 * np.pi * np.arange(k)) / k)
        return np.column_stack([roots.real, roots.imag])

    spec = MappingSpec(evaluate, 2, "catalog", derivative, multiplicity=k, name="planar_power")
    return CatalogEntry("planar_power", {"k": k, "n": 2}, spec, stretches,
                        LimitSet("point", (0.0, 0.0)), preimages)


def _radial_entry(name, params, n, profile, dprofile, limit, inverse, punctured, domain=None):
    spec = radial_map(profile, dprofile, n, domain=domain, punctured=punctured,
                      name=name, kind="catalog")
    return CatalogEntry(name, params, spec, _radial_stretches(profile, dprofile, n), limit,
                        _radial_preimages(inverse))


def _radial_power(alpha: float = 0.5, n: int = 2) -> CatalogEntry:
    n = check_dimension(n)
    if not alpha > 0:
        raise ParameterRange("alpha must be positive")
    a = float(alpha)
    return _radial_entry(
        "radial_power", {"alpha": a, "n": n}, n,
        lambda r: r ** a, lambda r: a * r ** (a - 1),
        LimitSet("point", (0.0,) * n),
        lambda s: s ** (1.0 / a), punctured=False)


def _annulus_blowup(alpha: float = 0.5, n: int = 3) -> CatalogEntry:
    n = check_dimension(n)
    if not 0 < alpha < 1:
        raise ParameterRange("annulus_blowup needs 0 < alpha < 1")
    a = float(alpha)

    def inverse(s):
        return (s - 1.0) ** (1.0 / a) if s > 1 else None

    return _radial_entry(
        "annulus_blowup", {"alpha": a, "n": n}, n,
        lambda r: 1.0 + r ** a, lambda r: a * r ** (a - 1),
        LimitSet("sphere", (0.0,) * n, 1.0), inverse, punctured=True,
        domain=make_domain("punctured_ball", (0.0,) * n, 0.0, 1.0))


def default_q0(name: str, n: int) -> Callable:
    if name == "counterexample_n":
        # q0^(1/(n-1)) = log^2(e/t): criterion integral equals 1
        return lambda t: np.log(np.e / t) ** (2 * (n - 1))
    return lambda t: 1.0 / t


def _counterexample(name: str, n: int, q0: Optional[Callable], alpha: Optional[float]) -> CatalogEntry:
    n = check_dimension(n)
    if name == "counterexample_alpha":
        if alpha is None or not n - 1 < alpha < n:
            raise ParameterRange("counterexample_alpha needs n - 1 < alpha < n")
        alpha = float(alpha)
    q0 = q0 or default_q0(name, n)
    prof = CriterionProfile(q0, n, alpha)
    params = {"n": n}
    if alpha is not None:
        params["alpha"] = alpha
    dom = make_domain("punctured_ball", (0.0,) * n, 0.0, 1.0)
    return _radial_entry(
        name, params, n, prof.rho, prof.drho,
        LimitSet("sphere", (0.0,) * n, prof.limit_radius),
        _bracket_inverse(prof.rho, 1e-300, 1.0), punctured=True, domain=dom)


def make_catalog_map(name: str, **params) -> CatalogEntry:
    """Build a catalog entry by name; see :data:`PARAMETER_RANGES`."""
    if name == "twisting":
        return _twisting(params.get("m", 2), params.get("n", 3))
    if name == "planar_power":
        return _planar_power(params.get("k", 2), params.get("n", 2))
    if name == "radial_power":
        return _radial_power(params.get("alpha", 0.5), params.get("n", 2))
    if name == "annulus_blowup":
        return _annulus_blowup(params.get("alpha", 0.5), params.get("n", 3))
    if name == "counterexample_n":
        return _counterexample(name, params.get("n", 2), params.get("q0"), None)
    if name == "counterexample_alpha":
        n = params.get("n", 2)
        return _counterexample(name, n, params.get("q0"), params.get("alpha", n - 0.5))
    raise ParameterRange(f"unknown catalog entry {name!r}; choose from {', '.join(CATALOG_NAMES)}")


def blowup_dominating_weight(alpha: float, n: int, C: Optional[float] = None) -> Callable:
    """``C / |x|^{alpha (n-1)}``, a power bound on the blow-up map's ``K_{I,n}``.

    From the stretches, ``K_{I,n} = alpha^{1-n} (1 + r^alpha)^{n-1} / r^{alpha (n-1)}``
    on the unit ball, so the default ``C = (2 / alpha)^{n-1}`` dominates it.
    """
    C = (2.0 / alpha) ** (n - 1) if C is None else C
    e = alpha * (n - 1)

    def Q(x):
        return C * np.linalg.norm(x, axis=1) ** (-e)
    return Q


# -- limit set probing -------------------------------------------------------------

@dataclass
class LimitProbe:
    radii: list
    separations: list
    limit: float
    model: str
    descriptor: LimitSet
    descriptor_confirmed: bool


def extrapolate_limit(radii, values):
    """Limit of ``values`` as the radius tends to 0.

    Two asymptotic models are fitted and the one with the smaller residual
    wins: ``L + a x + b x^2`` with ``x = 1/log(1/r)`` (logarithmic
    approach) and ``L + a r^beta`` (algebraic approach).
    """
    r = np.asarray(radii, dtype=float)
    v = np.asarray(values, dtype=float)
    if len(r) < 3:
        raise ValueError("need at least three radii to extrapolate")
    x = 1.0 / np.log(1.0 / r)
    deg = min(2, len(r) - 2)
    coef, res_log = np.polyfit(x, v, deg, full=True)[:2]
    rss_log = float(res_log[0]) if len(res_log) else 0.0
    lim_log = float(np.polyval(coef, 0.0))

    def power_fit(beta):
        A = np.column_stack([np.ones_like(r), r ** beta])
        sol, *_ = np.linalg.lstsq(A, v, rcond=None)
        return float(np.sum((A @ sol - v) ** 2)), float(sol[0])

    res = optimize.minimize_scalar(lambda b: power_fit(b)[0], bounds=(0.02, 3.0), method="bounded",
                                   options={"xatol": 1e-10})
    rss_pow, lim_pow = power_fit(res.x)
    if rss_pow <= rss_log:
        return lim_pow, "power"
    return lim_log, "log"


def probe_limit_set(entry: CatalogEntry, directions: int = 16,
                    radii_ladder=tuple(10.0 ** -np.arange(2, 7)), rtol: float = 0.02,
                    point_atol: float = 1e-3) -> LimitProbe:
    """Images of rays approaching the origin and their spread.

    At each radius the map is evaluated along ``directions`` rays and their
    antipodes; the separation is the largest pairwise image distance.  The
    separation sequence is extrapolated to radius 0 (:func:`extrapolate_limit`).
    A sphere descriptor is confirmed when that limit is within ``rtol`` of
    ``2 rho*``; a point descriptor when it is below ``point_atol`` and the
    sequence is decreasing.
    """
    n = entry.dimension
    dirs = ring_directions(n, directions)
    dirs = np.concatenate([dirs, -dirs])
    radii = [float(r) for r in radii_ladder]
    seps = []
    for r in radii:
        img = entry.mapping(r * dirs)
        seps.append(float(pdist(img).max()))
    limit, model = extrapolate_limit(radii, seps)
    desc = entry.limit_set
    if desc.kind == "sphere":
        target = 2 * desc.radius
        ok = abs(limit - target) <= rtol * target
    elif desc.kind == "point":
        ok = abs(limit) <= point_atol and all(b <= a for a, b in zip(seps, seps[1:]))
    else:
        ok = False
    return LimitProbe(radii, seps, limit, model, desc, bool(ok))


def catalog_listing() -> list:
    return [(name, PARAMETER_RANGES[name]) for name in CATALOG_NAMES]
