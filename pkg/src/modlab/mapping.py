"""Differential analysis of mappings: Jacobians, principal stretches, dilatations."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import EvaluationDomain, NearSingularity
from .geometry import Domain, MetricField, check_dimension

#: absolute threshold below which J or a singular value counts as zero
DEGENERACY_TOL = 1e-10

MAPPING_KINDS = ("generic", "radial", "catalog")


@dataclass(frozen=True)
class MappingSpec:
    """An evaluable map R^n -> R^n.

    ``evaluator`` and ``exact_derivative`` are vectorised: ``(m, n)`` points
    in, ``(m, n)`` images or ``(m, n, n)`` Jacobians out.  ``punctures`` are
    points where the map is undefined; ``singular_points`` are points where
    it is defined but not differentiable.  ``domain=None`` means all of R^n.
    """

    evaluator: Callable[[np.ndarray], np.ndarray]
    dimension: int
    kind: str = "generic"
    exact_derivative: Optional[Callable[[np.ndarray], np.ndarray]] = None
    radial_profile: Optional[tuple] = None
    domain: Optional[Domain] = None
    punctures: tuple = ()
    singular_points: tuple = ()
    singular_distance: Optional[Callable[[np.ndarray], np.ndarray]] = None
    multiplicity: Optional[int] = None
    name: str = ""

    def __post_init__(self):
        check_dimension(self.dimension)
        if self.kind not in MAPPING_KINDS:
            raise ValueError(f"unknown mapping kind {self.kind!r}")

    def check_points(self, pts: np.ndarray) -> None:
        pts = np.atleast_2d(pts)
        for c in self.punctures:
            if np.any(np.linalg.norm(pts - np.asarray(c), axis=1) == 0.0):
                raise EvaluationDomain(f"{self.name or 'map'} is undefined at the puncture {c}")
        if self.domain is not None:
            d = np.linalg.norm(pts - self.domain.x0, axis=1)
            # the closed outer sphere is allowed; ring families end on it
            bad = d > self.domain.r2 * (1 + 1e-12)
            if self.domain.kind == "annulus":
                bad |= d < self.domain.r1 * (1 - 1e-12)
            if np.any(bad):
                raise EvaluationDomain(f"point outside the domain of {self.name or 'map'}")

    def __call__(self, pts) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        self.check_points(pts)
        return np.asarray(self.evaluator(pts), dtype=float)

    def distance_to_singularities(self, pts) -> np.ndarray:
        pts = np.atleast_2d(pts)
        d = np.full(len(pts), np.inf)
        for c in tuple(self.punctures) + tuple(self.singular_points):
            d = np.minimum(d, np.linalg.norm(pts - np.asarray(c), axis=1))
        if self.singular_distance is not None:
            d = np.minimum(d, self.singular_distance(pts))
        return d


def identity_map(n: int) -> MappingSpec:
    return MappingSpec(
        evaluator=lambda x: np.array(x, dtype=float),
        dimension=n,
        exact_derivative=lambda x: np.broadcast_to(np.eye(n), (len(x), n, n)).copy(),
        multiplicity=1,
        name="identity",
    )


def constant_map(n: int, value=None) -> MappingSpec:
    c = np.zeros(n) if value is None else np.asarray(value, dtype=float)
    return MappingSpec(
        evaluator=lambda x: np.broadcast_to(c, (len(x), n)).copy(),
        dimension=n,
        exact_derivative=lambda x: np.zeros((len(x), n, n)),
        name="constant",
    )


def linear_map(matrix) -> MappingSpec:
    a = np.asarray(matrix, dtype=float)
    n = a.shape[0]
    return MappingSpec(
        evaluator=lambda x: x @ a.T,
        dimension=n,
        exact_derivative=lambda x: np.broadcast_to(a, (len(x), n, n)).copy(),
        name="linear",
    )


def radial_map(profile: Callable, dprofile: Callable, n: int, center=None,
               domain: Optional[Domain] = None, punctured: bool = True,
               name: str = "radial", kind: str = "radial") -> MappingSpec:
    """``f(x) = x0 + rho(|x - x0|) (x - x0)/|x - x0|``.

    The profile pair must accept arrays of radii.  When ``punctured`` is
    false the map is extended by ``f(x0) = x0`` (only sensible when
    ``rho(0+) = 0``).
    """
    x0 = np.zeros(n) if center is None else np.asarray(center, dtype=float)

    def evaluate(x):
        rel = x - x0
        r = np.linalg.norm(rel, axis=1)
        out = np.tile(x0, (len(x), 1))
        nz = r > 0
        out[nz] += rel[nz] * (profile(r[nz]) / r[nz])[:, None]
        return out

    def derivative(x):
        rel = x - x0
        r = np.linalg.norm(rel, axis=1)
        u = rel / r[:, None]
        tang = profile(r) / r
        rad = dprofile(r)
        uu = u[:, :, None] * u[:, None, :]
        return rad[:, None, None] * uu + tang[:, None, None] * (np.eye(n) - uu)

    punct = (tuple(x0),) if punctured else ()
    sing = () if punctured else (tuple(x0),)
    return MappingSpec(evaluate, n, kind=kind, exact_derivative=derivative,
                       radial_profile=(profile, dprofile), domain=domain,
                       punctures=punct, singular_points=sing, multiplicity=1, name=name)


@dataclass(frozen=True)
class DifferentialReport:
    point: np.ndarray
    jacobian: np.ndarray
    singular_values: np.ndarray
    jacobian_det: float
    finite_distortion_flag: bool

    @property
    def L(self) -> float:
        """Maximal stretch ``L(x, f) = lambda_n``."""
        return float(self.singular_values[-1])

    @property
    def l(self) -> float:  # noqa: E743
        """Minimal stretch ``l(x, f) = lambda_1``."""
        return float(self.singular_values[0])

    @property
    def J(self) -> float:
        return self.jacobian_det


def numeric_jacobian(f: Callable, x: np.ndarray, h: float, richardson: bool = False) -> np.ndarray:
    """Central-difference Jacobian of a vectorised map at a single point."""
    n = len(x)
    steps = np.eye(n) * h
    probes = np.concatenate([x + steps, x - steps])
    vals = f(probes)
    d1 = (vals[:n] - vals[n:]).T / (2 * h)
    if not richardson:
        return d1
    probes = np.concatenate([x + steps / 2, x - steps / 2])
    vals = f(probes)
    d2 = (vals[:n] - vals[n:]).T / h
    return (4 * d2 - d1) / 3


def report_from_jacobian(x, jac, scale: float = 1.0) -> DifferentialReport:
    jac = np.asarray(jac, dtype=float)
    n = jac.shape[0]
    sv = np.sort(np.linalg.svd(jac, compute_uv=False)) * scale
    det = float(np.linalg.det(jac)) * scale ** n
    degenerate = abs(det) <= DEGENERACY_TOL and sv[-1] > DEGENERACY_TOL
    return DifferentialReport(np.asarray(x, dtype=float), jac, sv, det, not degenerate)


def differential_report(mapping: MappingSpec, x, h: Optional[float] = None,
                        metric: Optional[MetricField] = None,
                        target_metric: Optional[MetricField] = None,
                        numeric: bool = False, richardson: bool = False) -> DifferentialReport:
    """Jacobian, sorted singular values and J at ``x``.

    The exact derivative is used when the map carries one, unless
    ``numeric`` forces central differences with step ``h`` (default
    ``1e-5`` times the domain diameter).  Under conformal metrics the
    chart singular values are rescaled by ``lambda*(f(x)) / lambda(x)``.
    """
    x = np.asarray(x, dtype=float)
    if h is None:
        h = 1e-5 * (2 * mapping.domain.r2 if mapping.domain is not None else 1.0)
    if h <= 0:
        raise ValueError("h must be positive")
    if mapping.distance_to_singularities(x[None])[0] <= 2 * h:
        raise NearSingularity(f"{x} lies within 2h of a singular point of {mapping.name or 'map'}")
    if mapping.exact_derivative is not None and not numeric:
        jac = mapping.exact_derivative(x[None])[0]
    else:
        jac = numeric_jacobian(mapping.evaluator, x, h, richardson)
    scale = 1.0
    if metric is not None and not metric.is_flat:
        scale /= metric.factor(x[None])[0]
    if target_metric is not None and not target_metric.is_flat:
        scale *= target_metric.factor(mapping.evaluator(x[None]))[0]
    return report_from_jacobian(x, jac, scale)


def radial_stretches(profile, r: float):
    """Tangential and radial stretches ``(rho(r)/r, rho'(r))`` of a radial map."""
    rho, drho = profile
    if not r > 0:
        raise ValueError("r must be positive")
    val = float(rho(r))
    if val < 0:
        raise ValueError("profile must be non-negative")
    return val / r, float(drho(r))


def _degenerate_branch(report: DifferentialReport):
    if abs(report.J) > DEGENERACY_TOL:
        return None
    return 1.0 if report.L <= DEGENERACY_TOL else np.inf


def inner_dilatation(report: DifferentialReport, p: float) -> float:
    """``K_{I,p} = |J| / l^p``; 1 where the derivative vanishes, +inf otherwise.

    The absolute value of J equals the product of the principal stretches,
    so orientation-reversing points are treated like their mirror image.
    """
    branch = _degenerate_branch(report)
    if branch is not None:
        return branch
    return abs(report.J) / report.l ** p


def outer_dilatation(report: DifferentialReport, p: float) -> float:
    """``K_{O,p} = L^p / |J|`` with the same degenerate branches as the inner one."""
    branch = _degenerate_branch(report)
    if branch is not None:
        return branch
    return report.L ** p / abs(report.J)


def sample_points(mapping: MappingSpec, samples: int, seed: int, margin: float = 1e-3) -> np.ndarray:
    """Uniform random points in the map's domain (unit ball if unbounded).

    Points closer than ``margin * R`` to a singular point are redrawn.
    """
    n = mapping.dimension
    if mapping.domain is not None:
        x0, r1, r2 = mapping.domain.x0, mapping.domain.r1, mapping.domain.r2
    else:
        x0, r1, r2 = np.zeros(n), 0.0, 1.0
    rng = np.random.default_rng(seed)
    out = np.empty((0, n))
    while len(out) < samples:
        m = 2 * (samples - len(out)) + 8
        d = rng.normal(size=(m, n))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        r = (r1 ** n + rng.uniform(size=m) * (r2 ** n - r1 ** n)) ** (1.0 / n)
        pts = x0 + r[:, None] * d
        ok = mapping.distance_to_singularities(pts) > margin * r2
        out = np.concatenate([out, pts[ok]])
    return out[:samples]


def finite_distortion_survey(mapping: MappingSpec, samples: int = 100, seed: int = 0,
                             h: Optional[float] = None) -> float:
    """Fraction of random points where ``J = 0`` forces ``L = 0``."""
    if samples < 1:
        raise ValueError("samples must be >= 1")
    pts = sample_points(mapping, samples, seed)
    ok = [differential_report(mapping, x, h).finite_distortion_flag for x in pts]
    return float(np.mean(ok))
