"""Domains, conformal metrics, curve sampling and metric quadrature.

Everything lives in a single chart of R^n (n = 2 or 3) carrying a
conformally flat metric ``g_ij = lambda(x)^2 delta_ij``.  Scalar fields are
vectorised callables: they receive an ``(m, n)`` array of points and return
an ``(m,)`` array of values.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import InvalidRadii, NonFiniteIntegrand, UnsupportedDimension

ScalarField = Callable[[np.ndarray], np.ndarray]

DOMAIN_KINDS = ("ball", "annulus", "punctured_ball")


def check_dimension(n: int) -> int:
    n = int(n)
    if n not in (2, 3):
        raise UnsupportedDimension(f"only n = 2 and n = 3 are supported, got n = {n}")
    return n


def sphere_area(n: int) -> float:
    """omega_{n-1}: area of the unit sphere in R^n."""
    n = check_dimension(n)
    return 2.0 * np.pi if n == 2 else 4.0 * np.pi


def ball_volume(n: int) -> float:
    return sphere_area(n) / n


@dataclass(frozen=True)
class MetricField:
    """Conformal metric ``lambda(x)^2 * delta_ij``; ``conformal_factor=None`` is flat."""

    dimension: int
    conformal_factor: Optional[ScalarField] = None

    def __post_init__(self):
        check_dimension(self.dimension)

    @classmethod
    def flat(cls, n: int) -> "MetricField":
        return cls(n)

    @classmethod
    def constant(cls, n: int, c: float) -> "MetricField":
        if not c > 0:
            raise ValueError("conformal factor must be positive")
        return cls(n, lambda pts: np.full(len(pts), float(c)))

    @property
    def is_flat(self) -> bool:
        return self.conformal_factor is None

    def factor(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if self.conformal_factor is None:
            return np.ones(len(pts))
        lam = np.asarray(self.conformal_factor(pts), dtype=float)
        lam = np.broadcast_to(lam, (len(pts),))
        if not np.all(np.isfinite(lam)) or np.any(lam <= 0):
            raise NonFiniteIntegrand("conformal factor must be finite and positive")
        return lam


@dataclass(frozen=True)
class Domain:
    kind: str
    center: tuple
    r1: float
    r2: float

    @property
    def dimension(self) -> int:
        return len(self.center)

    @property
    def x0(self) -> np.ndarray:
        return np.asarray(self.center, dtype=float)

    def flat_volume(self) -> float:
        n = self.dimension
        return ball_volume(n) * (self.r2 ** n - self.r1 ** n)

    def contains(self, points) -> np.ndarray:
        d = np.linalg.norm(np.atleast_2d(points) - self.x0, axis=1)
        inside = d < self.r2
        if self.kind == "annulus":
            inside &= d > self.r1
        elif self.kind == "punctured_ball":
            inside &= d > 0
        return inside


def make_domain(kind: str, x0, r1: float, r2: float) -> Domain:
    """Validated ball, annulus or punctured ball centred at ``x0``.

    For the two ball kinds the inner radius is forced to 0.
    """
    if kind not in DOMAIN_KINDS:
        raise ValueError(f"unknown domain kind {kind!r}")
    center = tuple(float(c) for c in np.atleast_1d(x0))
    check_dimension(len(center))
    r1, r2 = float(r1), float(r2)
    if not (np.isfinite(r1) and np.isfinite(r2)) or r1 < 0 or r1 >= r2:
        raise InvalidRadii(f"need 0 <= r1 < r2, got r1={r1}, r2={r2}")
    if kind == "annulus" and r1 <= 0:
        raise InvalidRadii("an annulus needs r1 > 0")
    if kind != "annulus":
        r1 = 0.0
    return Domain(kind, center, r1, r2)


@dataclass(frozen=True)
class Curve:
    vertices: np.ndarray
    family_id: str = ""

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        if v.ndim != 2 or len(v) < 2:
            raise ValueError("a curve needs at least two vertices")
        if np.any(np.all(np.diff(v, axis=0) == 0, axis=1)):
            raise ValueError("consecutive vertices must be distinct")
        v.setflags(write=False)
        object.__setattr__(self, "vertices", v)

    @property
    def start(self) -> np.ndarray:
        return self.vertices[0]

    @property
    def end(self) -> np.ndarray:
        return self.vertices[-1]


@dataclass(frozen=True)
class CurveFamily:
    curves: tuple
    family_kind: str = "ring_radial"
    # ring families remember where they were sampled
    center: Optional[tuple] = None
    radii: Optional[tuple] = None
    meta: dict = field(default_factory=dict, compare=False)

    def __len__(self) -> int:
        return len(self.curves)

    def __iter__(self):
        return iter(self.curves)

    def __getitem__(self, idx):
        if isinstance(idx, slice):
            return CurveFamily(tuple(self.curves[idx]), self.family_kind, self.center, self.radii)
        return self.curves[idx]

    def subset(self, indices: Sequence[int]) -> "CurveFamily":
        return CurveFamily(tuple(self.curves[i] for i in indices), self.family_kind,
                           self.center, self.radii)

    def union(self, other: "CurveFamily") -> "CurveFamily":
        return CurveFamily(self.curves + other.curves, self.family_kind, self.center, self.radii)


# -- sphere and volume quadrature ---------------------------------------------

def _unit_sphere_rule(n: int, resolution: int, polar_nodes: Optional[int] = None):
    """Directions and weights summing to omega_{n-1}.

    n = 2: midpoint rule in the angle.  n = 3: Gauss-Legendre in cos(theta)
    times the midpoint rule in the azimuth (``resolution`` azimuthal nodes).
    """
    if n == 2:
        phi = 2.0 * np.pi * (np.arange(resolution) + 0.5) / resolution
        dirs = np.column_stack([np.cos(phi), np.sin(phi)])
        return dirs, np.full(resolution, 2.0 * np.pi / resolution)
    m = polar_nodes or max(4, resolution // 2)
    u, wu = np.polynomial.legendre.leggauss(m)
    phi = 2.0 * np.pi * (np.arange(resolution) + 0.5) / resolution
    s = np.sqrt(1.0 - u ** 2)
    dirs = np.stack([
        np.outer(s, np.cos(phi)), np.outer(s, np.sin(phi)),
        np.repeat(u[:, None], resolution, axis=1),
    ], axis=-1).reshape(-1, 3)
    w = np.repeat(wu, resolution) * (2.0 * np.pi / resolution)
    return dirs, w


def sphere_quadrature(x0, r: float, metric: MetricField, resolution: int = 256):
    """Nodes and weights on S(x0, r) approximating the metric area element.

    Returns ``(points, weights)``; ``weights.sum()`` approximates the metric
    area of the sphere (for a conformal metric the area element picks up a
    factor ``lambda^(n-1)``).
    """
    x0 = np.asarray(x0, dtype=float)
    n = check_dimension(len(x0))
    if n != metric.dimension:
        raise UnsupportedDimension("metric dimension does not match the centre")
    if not r > 0:
        raise InvalidRadii("sphere radius must be positive")
    if resolution < 8:
        raise ValueError("resolution must be at least 8")
    dirs, w = _unit_sphere_rule(n, int(resolution))
    pts = x0 + r * dirs
    w = w * r ** (n - 1)
    if not metric.is_flat:
        w = w * metric.factor(pts) ** (n - 1)
    return pts, w


def _radial_rule(r1: float, r2: float, m: int):
    """Gauss-Legendre nodes in log r for shells, in r for balls; weights include dr."""
    x, w = np.polynomial.legendre.leggauss(m)
    if r1 > 0:
        a, b = np.log(r1), np.log(r2)
        r = np.exp(0.5 * (b - a) * x + 0.5 * (a + b))
        return r, 0.5 * (b - a) * w * r
    r = 0.5 * r2 * (x + 1.0)
    return r, 0.5 * r2 * w


def volume_quadrature(domain: Domain, metric: MetricField, resolution: int = 512,
                      angular_resolution: Optional[int] = None):
    """Tensor-product polar nodes centred at the domain centre.

    ``resolution`` radial nodes times an angular rule (``resolution`` nodes
    for n = 2; ``min(resolution, 64)`` azimuthal by half as many polar
    nodes for n = 3 unless ``angular_resolution`` is given).  Weights carry
    ``r^(n-1)`` and the metric factor ``lambda^n``.
    """
    n = check_dimension(domain.dimension)
    if n != metric.dimension:
        raise UnsupportedDimension("metric dimension does not match the domain")
    if angular_resolution is None:
        angular_resolution = resolution if n == 2 else min(resolution, 64)
    dirs, wa = _unit_sphere_rule(n, int(angular_resolution))
    r, wr = _radial_rule(domain.r1, domain.r2, int(resolution))
    pts = domain.x0 + (r[:, None, None] * dirs[None, :, :]).reshape(-1, n)
    w = np.outer(wr * r ** (n - 1), wa).ravel()
    if not metric.is_flat:
        w = w * metric.factor(pts) ** n
    return pts, w


def evaluate_field(fn: ScalarField, pts: np.ndarray) -> np.ndarray:
    vals = np.asarray(fn(pts), dtype=float)
    vals = np.broadcast_to(vals, (len(pts),))
    if not np.all(np.isfinite(vals)):
        raise NonFiniteIntegrand("integrand is not finite at some quadrature node")
    return vals


def volume_integrate(domain: Domain, metric: MetricField, fn: ScalarField,
                     resolution: int = 512, angular_resolution: Optional[int] = None) -> float:
    """Integral of ``fn`` over the domain with respect to the metric volume."""
    pts, w = volume_quadrature(domain, metric, resolution, angular_resolution)
    return float(np.dot(evaluate_field(fn, pts), w))


# -- curves -------------------------------------------------------------------

def _fibonacci_directions(count: int) -> np.ndarray:
    k = np.arange(count) + 0.5
    z = 1.0 - 2.0 * k / count
    phi = np.pi * (3.0 - np.sqrt(5.0)) * np.arange(count)
    s = np.sqrt(1.0 - z ** 2)
    return np.column_stack([s * np.cos(phi), s * np.sin(phi), z])


def ring_directions(n: int, count: int) -> np.ndarray:
    """Evenly spread unit vectors: half-offset angles (n = 2), Fibonacci lattice (n = 3)."""
    if n == 2:
        th = 2.0 * np.pi * (np.arange(count) + 0.5) / count
        return np.column_stack([np.cos(th), np.sin(th)])
    return _fibonacci_directions(count)


def sample_ring_curves(x0, r1: float, r2: float, count: int, jitter: float = 0.0,
                       seed: int = 0, segments: int = 64) -> CurveFamily:
    """Finite sample of curves joining S(x0, r1) to S(x0, r2).

    With ``jitter == 0`` the curves are the radial segments along
    :func:`ring_directions`.  Otherwise each curve keeps the radius profile
    ``r(s) = r1 + s (r2 - r1)`` but its direction is rotated by a smooth
    angle vanishing at both ends, with tangential displacement at most
    ``jitter * (r2 - r1)``.  Endpoints therefore sit exactly on the spheres.
    """
    x0 = np.asarray(x0, dtype=float)
    n = check_dimension(len(x0))
    r1, r2 = float(r1), float(r2)
    if not (0 < r1 < r2):
        raise InvalidRadii(f"need 0 < r1 < r2, got r1={r1}, r2={r2}")
    if count < 0:
        raise ValueError("count must be non-negative")
    if not 0 <= jitter < 0.5:
        raise ValueError("jitter must lie in [0, 0.5)")
    kind = "ring_radial" if jitter == 0 else "ring_perturbed"
    if count == 0:
        return CurveFamily((), kind, tuple(x0), (r1, r2))

    dirs = ring_directions(n, count)
    fid = f"ring{n}d:{r1:g}-{r2:g}:j{jitter:g}:s{seed}"
    if jitter == 0:
        curves = tuple(Curve(np.stack([x0 + r1 * d, x0 + r2 * d]), fid) for d in dirs)
        return CurveFamily(curves, kind, tuple(x0), (r1, r2))

    rng = np.random.default_rng(seed)
    s = np.linspace(0.0, 1.0, segments + 1)
    rad = r1 + s * (r2 - r1)
    amp = rng.uniform(-1.0, 1.0, size=(count, 2))
    # second harmonic at half weight keeps the bump bounded by one amplitude
    bump = (amp[:, :1] * np.sin(np.pi * s) + 0.5 * amp[:, 1:] * np.sin(2 * np.pi * s)) / 1.5
    angle = jitter * (r2 - r1) * bump / rad
    if n == 3:
        tang = rng.normal(size=(count, 3))
        tang -= np.sum(tang * dirs, axis=1, keepdims=True) * dirs
        tang /= np.linalg.norm(tang, axis=1, keepdims=True)
    curves = []
    for k, d in enumerate(dirs):
        if n == 2:
            base = np.arctan2(d[1], d[0]) + angle[k]
            u = np.column_stack([np.cos(base), np.sin(base)])
        else:
            a = angle[k][:, None]
            u = np.cos(a) * d + np.sin(a) * tang[k]
        v = x0 + rad[:, None] * u
        # re-project endpoints onto the spheres
        v[0] = x0 + r1 * u[0] / np.linalg.norm(u[0])
        v[-1] = x0 + r2 * u[-1] / np.linalg.norm(u[-1])
        curves.append(Curve(v, fid))
    return CurveFamily(tuple(curves), kind, tuple(x0), (r1, r2))


def curve_length(curve: Curve, metric: MetricField) -> float:
    """Midpoint-rule metric length of a polyline."""
    v = curve.vertices
    seg = np.linalg.norm(np.diff(v, axis=0), axis=1)
    if metric.is_flat:
        return float(seg.sum())
    mid = 0.5 * (v[1:] + v[:-1])
    return float(np.dot(metric.factor(mid), seg))
