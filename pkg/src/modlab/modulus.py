"""Discrete p-modulus of curve families on polar density grids.

The discrete problem is

    minimise  sum_c V_c rho_c^p   subject to  A rho >= 1,  rho >= 0,

where ``V_c`` is the metric measure of cell ``c`` and ``A[g, c]`` the metric
length of curve ``g`` inside cell ``c``.  It is solved through its dual by
cyclic coordinate ascent: each sweep visits the curves in a fixed order and
moves the multiplier of one curve so that its constraint becomes tight (or
the multiplier hits zero).  The primal density is recovered in closed form,
``rho_c = ((A^T mu)_c / (p V_c))^(1/(p-1))``, so it is non-negative by
construction.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np
from scipy import sparse

from .errors import InvalidRadii, NoConvergence, NotAdmissible
from .geometry import (Curve, CurveFamily, Domain, MetricField, check_dimension,
                       make_domain, sample_ring_curves, sphere_area, volume_integrate)
from .mapping import MappingSpec

TWO_PI = 2.0 * np.pi
_TIE = 1e-9


def ring_modulus_reference(n: int, p: float, r1: float, r2: float) -> float:
    """Exact p-modulus of the family joining the boundary spheres of A(x0, r1, r2).

    ``omega_{n-1} * (int_{r1}^{r2} t^{-(n-1)/(p-1)} dt)^(1-p)``.
    """
    n = check_dimension(n)
    if not p > 1:
        raise ValueError("p > 1 required")
    if not (0 < r1 < r2):
        raise InvalidRadii(f"need 0 < r1 < r2, got r1={r1}, r2={r2}")
    a = (n - 1) / (p - 1)
    if np.isclose(a, 1.0, rtol=0, atol=1e-14):
        integral = np.log(r2 / r1)
    else:
        integral = (r2 ** (1 - a) - r1 ** (1 - a)) / (1 - a)
    return float(sphere_area(n) * integral ** (1 - p))


# -- density grid ---------------------------------------------------------------

def _axis_index(s: np.ndarray, count: int, periodic: bool) -> np.ndarray:
    """Cell index along one axis from the scaled coordinate ``s``.

    A coordinate sitting on a cell face goes to the lower of the two cells;
    across the periodic seam that is cell 0.
    """
    k = np.rint(s)
    on_face = np.abs(s - k) < _TIE
    idx = np.floor(s).astype(np.int64)
    k = k.astype(np.int64)
    if periodic:
        k %= count
        idx = np.where(on_face, np.where(k == 0, 0, k - 1), idx % count)
    else:
        idx = np.where(on_face, np.clip(k - 1, 0, count - 1), idx)
    return idx


@dataclass(frozen=True)
class DensityGrid:
    """Polar grid around ``center``: radial shells times angular cells.

    n = 2: ``n_angle`` equal sectors.  n = 3: ``n_polar`` bands uniform in
    ``cos(theta)`` times ``n_azimuth`` sectors, so all angular cells of one
    shell have the same solid angle.  Linear cell index is
    ``i_r * n_angular + i_angular``.
    """

    center: np.ndarray
    r_edges: np.ndarray
    n_polar: int
    n_azimuth: int
    cell_measure: np.ndarray

    @property
    def dimension(self) -> int:
        return len(self.center)

    @property
    def n_radial(self) -> int:
        return len(self.r_edges) - 1

    @property
    def n_angular(self) -> int:
        return self.n_azimuth * (self.n_polar if self.dimension == 3 else 1)

    @property
    def size(self) -> int:
        return self.n_radial * self.n_angular

    def cell_centers(self) -> np.ndarray:
        rc = 0.5 * (self.r_edges[1:] + self.r_edges[:-1])
        phi = TWO_PI * (np.arange(self.n_azimuth) + 0.5) / self.n_azimuth
        if self.dimension == 2:
            dirs = np.column_stack([np.cos(phi), np.sin(phi)])
        else:
            u = -1 + 2 * (np.arange(self.n_polar) + 0.5) / self.n_polar
            s = np.sqrt(1 - u ** 2)
            dirs = np.stack([np.outer(s, np.cos(phi)), np.outer(s, np.sin(phi)),
                             np.repeat(u[:, None], self.n_azimuth, axis=1)], axis=-1).reshape(-1, 3)
        return self.center + (rc[:, None, None] * dirs[None]).reshape(-1, self.dimension)

    def locate(self, pts: np.ndarray) -> np.ndarray:
        """Linear cell index of each point, -1 outside the grid."""
        rel = np.atleast_2d(pts) - self.center
        r = np.linalg.norm(rel, axis=1)
        r_lo, r_hi = self.r_edges[0], self.r_edges[-1]
        ir = np.searchsorted(self.r_edges, r, side="right") - 1
        # faces of shells: exact equality with an edge goes to the lower shell
        on_face = np.isin(r, self.r_edges[1:-1])
        ir = np.where(on_face, ir - 1, ir)
        ir = np.clip(ir, 0, self.n_radial - 1)
        phi = np.mod(np.arctan2(rel[:, 1], rel[:, 0]), TWO_PI)
        ia = _axis_index(phi / (TWO_PI / self.n_azimuth), self.n_azimuth, periodic=True)
        if self.dimension == 3:
            u = np.divide(rel[:, 2], r, out=np.zeros_like(r), where=r > 0)
            iu = _axis_index((u + 1) * self.n_polar / 2, self.n_polar, periodic=False)
            ia = iu * self.n_azimuth + ia
        idx = ir * self.n_angular + ia
        outside = (r < r_lo * (1 - 1e-12)) | (r > r_hi * (1 + 1e-12))
        return np.where(outside, -1, idx)

    def crossings(self, a: np.ndarray, d: np.ndarray) -> np.ndarray:
        """Parameters ``t`` where segments ``a + t d`` meet cell faces.

        Rows are segments; entries outside (0, 1) are NaN.  Spurious roots
        (opposite ray of a sector line, the other nappe of a cone) only
        split a piece inside one cell and are harmless.
        """
        a = a - self.center
        dd = np.einsum("ij,ij->i", d, d)[:, None]
        ad = np.einsum("ij,ij->i", a, d)[:, None]
        aa = np.einsum("ij,ij->i", a, a)[:, None]
        cols = []
        radii = self.r_edges[self.r_edges > 0][None, :]
        disc = ad ** 2 - dd * (aa - radii ** 2)
        sq = np.sqrt(np.where(disc >= 0, disc, np.nan))
        cols += [(-ad - sq) / dd, (-ad + sq) / dd]
        phi = TWO_PI * np.arange(self.n_azimuth) / self.n_azimuth
        nx, ny = -np.sin(phi)[None, :], np.cos(phi)[None, :]
        num = a[:, :1] * nx + a[:, 1:2] * ny
        den = d[:, :1] * nx + d[:, 1:2] * ny
        with np.errstate(divide="ignore", invalid="ignore"):
            cols.append(np.where(den != 0, -num / den, np.nan))
            if self.dimension == 3:
                u = (-1 + 2 * np.arange(1, self.n_polar) / self.n_polar)[None, :]
                u2 = u ** 2
                qa = d[:, 2:3] ** 2 - u2 * dd
                qb = 2 * (a[:, 2:3] * d[:, 2:3] - u2 * ad)
                qc = a[:, 2:3] ** 2 - u2 * aa
                disc = qb ** 2 - 4 * qa * qc
                sq = np.sqrt(np.where(disc >= 0, disc, np.nan))
                lin = np.abs(qa) < 1e-14 * dd
                r_lin = np.where(lin & (qb != 0), -qc / qb, np.nan)
                cols += [np.where(lin, r_lin, (-qb - sq) / (2 * qa)),
                         np.where(lin, np.nan, (-qb + sq) / (2 * qa))]
        t = np.concatenate(cols, axis=1)
        t[~((t > 0) & (t < 1))] = np.nan
        return t


def make_density_grid(domain: Domain, metric: MetricField,
                      grid_resolution: Union[int, tuple] = 256) -> DensityGrid:
    """Polar grid over ``domain``.

    ``grid_resolution`` is either one integer ``g`` (``g`` shells and ``g``
    angular cells; in 3-D the angular cells are ``floor(sqrt(g))`` bands by
    ``g // floor(sqrt(g))`` sectors) or a pair ``(radial, angular)``.
    """
    n = check_dimension(domain.dimension)
    if isinstance(grid_resolution, (tuple, list)):
        n_r, n_ang = (int(v) for v in grid_resolution)
    else:
        n_r = n_ang = int(grid_resolution)
    if n_r < 1 or n_ang < 1:
        raise ValueError("grid resolution must be positive")
    if n == 2:
        n_pol, n_az = 1, n_ang
    else:
        n_pol = max(1, int(np.sqrt(n_ang)))
        n_az = max(1, n_ang // n_pol)
    edges = np.linspace(domain.r1, domain.r2, n_r + 1)
    shell = sphere_area(n) / n * np.diff(edges ** n)
    n_angular = n_az * (n_pol if n == 3 else 1)
    measure = np.repeat(shell / n_angular, n_angular)
    grid = DensityGrid(domain.x0, edges, n_pol, n_az, measure)
    if not metric.is_flat:
        # midpoint rule for the conformal factor on each cell
        measure = measure * metric.factor(grid.cell_centers()) ** n
        grid = DensityGrid(domain.x0, edges, n_pol, n_az, measure)
    return grid


def _curve_rows(curves, grid: DensityGrid, metric: MetricField):
    """(cells, lengths) pairs of the incidence rows of a batch of curves."""
    rows = []
    for curve in curves:
        v = curve.vertices
        a, d = v[:-1], np.diff(v, axis=0)
        t = grid.crossings(a, d)
        m = len(a)
        t = np.sort(np.concatenate([np.zeros((m, 1)), t, np.ones((m, 1))], axis=1), axis=1)
        t0, t1 = t[:, :-1], t[:, 1:]
        ok = np.isfinite(t1) & (t1 - t0 > 0)
        seg = np.broadcast_to(np.arange(m)[:, None], t0.shape)[ok]
        t0, t1 = t0[ok], t1[ok]
        mid = a[seg] + (0.5 * (t0 + t1))[:, None] * d[seg]
        ln = (t1 - t0) * np.linalg.norm(d[seg], axis=1)
        if not metric.is_flat:
            ln = ln * metric.factor(mid)
        cell = grid.locate(mid)
        keep = cell >= 0
        cells, inv = np.unique(cell[keep], return_inverse=True)
        rows.append((cells, np.bincount(inv, weights=ln[keep], minlength=len(cells))))
    return rows


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("MODLAB_THREADS", os.cpu_count() or 1)))
    except ValueError:
        return 1


def incidence_matrix(family: CurveFamily, grid: DensityGrid, metric: MetricField) -> sparse.csr_matrix:
    """Curves x cells matrix of metric lengths (cell-crossing accumulation)."""
    curves = list(family.curves)
    workers = min(_threads(), max(1, len(curves) // 64))
    if workers > 1:
        chunks = np.array_split(np.arange(len(curves)), workers)
        with ThreadPoolExecutor(workers) as pool:
            parts = pool.map(lambda idx: _curve_rows([curves[i] for i in idx], grid, metric), chunks)
            rows = [r for part in parts for r in part]
    else:
        rows = _curve_rows(curves, grid, metric)
    indptr = np.cumsum([0] + [len(c) for c, _ in rows])
    indices = np.concatenate([c for c, _ in rows]) if rows else np.zeros(0, np.int64)
    data = np.concatenate([w for _, w in rows]) if rows else np.zeros(0)
    return sparse.csr_matrix((data, indices, indptr), shape=(len(rows), grid.size))


# -- optimizer ------------------------------------------------------------------

@dataclass
class ModulusEstimate:
    value: float
    p: float
    iterations: int
    max_violation: float
    energy_history: list = field(default_factory=list)
    converged: bool = True
    lower_bound: float = 0.0
    density: Optional[np.ndarray] = field(default=None, repr=False)
    grid: Optional[DensityGrid] = field(default=None, repr=False)
    residuals: Optional[np.ndarray] = field(default=None, repr=False)


def _solve_multiplier(base, ln, vol, p, guess):
    """Smallest mu >= 0 with sum ln * ((base + mu ln)/(p vol))^(1/(p-1)) >= 1."""
    q = 1.0 / (p - 1.0)
    pv = p * vol
    if p == 2.0:
        lhs0 = np.dot(ln, base / pv)
        if lhs0 >= 1.0:
            return 0.0
        return (1.0 - lhs0) / np.dot(ln, ln / pv)

    def g(mu):
        return np.dot(ln, ((base + mu * ln) / pv) ** q) - 1.0

    if g(0.0) >= 0:
        return 0.0
    lo, hi = 0.0, max(guess, 1e-300)
    while g(hi) < 0:
        lo, hi = hi, 2.0 * hi if hi > 1e-300 else 1.0
    mu = 0.5 * (lo + hi) if not (lo < guess < hi) else guess
    for _ in range(200):
        val = g(mu)
        if abs(val) < 1e-14:
            break
        if val < 0:
            lo = mu
        else:
            hi = mu
        s = base + mu * ln
        deriv = q * np.dot(ln * ln / pv, (s / pv) ** (q - 1.0)) if q != 1 else np.dot(ln, ln / pv)
        step = mu - val / deriv if deriv > 0 and np.isfinite(deriv) else np.nan
        mu = step if lo < step < hi else 0.5 * (lo + hi)
        if hi - lo <= 1e-15 * hi:
            break
    return mu


def solve_discrete_modulus(A: sparse.csr_matrix, vol: np.ndarray, p: float,
                           max_iter: int = 500, tol: float = 1e-3) -> ModulusEstimate:
    """Dual coordinate ascent on ``min sum vol rho^p  s.t.  A rho >= 1``."""
    m = A.shape[0]
    if m == 0:
        return ModulusEstimate(0.0, p, 0, 0.0, [], True, 0.0, np.zeros(A.shape[1]))
    if np.any(np.diff(A.indptr) == 0) or np.any(A.sum(axis=1) <= 0):
        raise NotAdmissible("a curve does not meet the density grid; no admissible density exists")
    q = 1.0 / (p - 1.0)
    pv = p * vol
    rows = [(A.indices[A.indptr[g]:A.indptr[g + 1]], A.data[A.indptr[g]:A.indptr[g + 1]])
            for g in range(m)]
    At = A.T.tocsr()
    mu = np.zeros(m)
    s = np.zeros(A.shape[1])
    history = []
    viol = slack = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        for g, (idx, ln) in enumerate(rows):
            base = s[idx] - mu[g] * ln
            np.maximum(base, 0.0, out=base)
            new = _solve_multiplier(base, ln, vol[idx], p, mu[g])
            s[idx] = base + new * ln
            mu[g] = new
        # rebuild A^T mu from scratch so rounding never accumulates
        s = At @ mu
        rho = (s / pv) ** q
        resid = A @ rho
        history.append(float(np.dot(vol, rho ** p)))
        viol = max(0.0, 1.0 - resid.min())
        active = mu > 0
        slack = float((resid[active] - 1.0).max()) if active.any() else 0.0
        if viol <= tol and slack <= tol:
            break
    rho = (s / pv) ** q
    energy = float(np.dot(vol, rho ** p))
    lower = float(mu.sum() - (p - 1.0) * energy)
    converged = viol <= tol and slack <= tol
    return ModulusEstimate(energy, p, it, float(viol), history, converged, lower, rho,
                           residuals=A @ rho)


def estimate_modulus(family: CurveFamily, p: float, domain: Domain,
                     metric: Optional[MetricField] = None,
                     grid_resolution: Union[int, tuple] = 256, max_iter: int = 500,
                     tol: float = 1e-3, raise_on_failure: bool = True) -> ModulusEstimate:
    """Discrete estimate of ``M_p(family)`` on a polar grid over ``domain``.

    Raises :class:`NoConvergence` (with the estimate attached) when the
    admissibility violation is still above ``tol`` after ``max_iter``
    sweeps, unless ``raise_on_failure`` is false.
    """
    if not p > 1:
        raise ValueError("p > 1 required")
    metric = metric or MetricField.flat(domain.dimension)
    grid = make_density_grid(domain, metric, grid_resolution)
    if len(family) == 0:
        return ModulusEstimate(0.0, p, 0, 0.0, [], True, 0.0, np.zeros(grid.size), grid)
    A = incidence_matrix(family, grid, metric)
    est = solve_discrete_modulus(A, grid.cell_measure, float(p), max_iter, tol)
    est.grid = grid
    if not est.converged and raise_on_failure:
        raise NoConvergence(
            f"violation {est.max_violation:.3g} above tol {tol:g} after {est.iterations} sweeps", est)
    return est


# -- families under maps --------------------------------------------------------

def _refine(v: np.ndarray, levels: int) -> np.ndarray:
    for _ in range(levels):
        mid = 0.5 * (v[1:] + v[:-1])
        out = np.empty((2 * len(v) - 1, v.shape[1]))
        out[0::2], out[1::2] = v, mid
        v = out
    return v


def image_family(family: CurveFamily, mapping: MappingSpec,
                 refine: Union[bool, int] = False) -> CurveFamily:
    """Vertex-wise images ``f o gamma``.

    ``refine`` inserts midpoints before mapping (``True`` means 4 rounds,
    an integer gives the number of rounds) to control chord error.
    """
    levels = 4 if refine is True else int(refine)
    curves = []
    for c in family:
        v = _refine(c.vertices, levels)
        w = mapping(v)
        # a non-injective map can collapse neighbouring vertices
        keep = np.concatenate([[True], np.any(np.diff(w, axis=0) != 0, axis=1)])
        w = w[keep]
        if len(w) < 2:
            continue
        curves.append(Curve(w, f"image:{c.family_id}"))
    return CurveFamily(tuple(curves), "image", family.center, family.radii)


def image_ring_domain(image: CurveFamily, center) -> Domain:
    """Smallest annulus (or ball) around ``center`` containing every image vertex."""
    c = np.asarray(center, dtype=float)
    d = np.concatenate([np.linalg.norm(cv.vertices - c, axis=1) for cv in image])
    lo, hi = float(d.min()), float(d.max())
    if lo > 0:
        return make_domain("annulus", c, lo, hi)
    return make_domain("ball", c, 0.0, hi)


@dataclass
class RingCheck:
    lhs: float
    rhs: float
    holds: bool
    eta_integral: float
    estimate: Optional[ModulusEstimate] = field(default=None, repr=False)


def eta_integral(eta: Callable, r1: float, r2: float, nodes: int = 256) -> float:
    """``int_{r1}^{r2} eta(r) dr`` by Gauss-Legendre in log r."""
    x, w = np.polynomial.legendre.leggauss(nodes)
    a, b = np.log(r1), np.log(r2)
    r = np.exp(0.5 * (b - a) * x + 0.5 * (a + b))
    vals = np.broadcast_to(np.asarray(eta(r), dtype=float), r.shape)
    return float(np.dot(vals * r, w) * 0.5 * (b - a))


def check_ring_inequality(mapping: MappingSpec, x0, r1: float, r2: float, p: float,
                          Q: Callable, eta: Callable, samples: int = 400,
                          grid: Union[int, tuple] = 256, resolution: int = 512,
                          seed: int = 0, jitter: float = 0.0, slack: float = 0.05,
                          max_iter: int = 500, tol: float = 1e-3) -> RingCheck:
    """Numerical check of ``M_p(f(Gamma(S1, S2, A))) <= int_A Q eta^p(|x - x0|) dv``.

    ``Q`` is a field on points, ``eta`` a function of the radius.  The left
    side is the discrete modulus of the image of ``samples`` ring curves, the
    right side a polar quadrature over the annulus.  ``holds`` allows a
    relative ``slack`` for discretisation error.
    """
    x0 = np.asarray(x0, dtype=float)
    n = len(x0)
    total = eta_integral(eta, r1, r2)
    if not total >= 1 - 1e-6:
        raise NotAdmissible(f"int eta dr = {total:.6g} < 1")
    family = sample_ring_curves(x0, r1, r2, samples, jitter, seed)
    image = image_family(family, mapping)
    try:
        y0 = mapping(x0[None])[0]
    except Exception:  # the centre may be a puncture
        y0 = x0
    est = estimate_modulus(image, p, image_ring_domain(image, y0), MetricField.flat(n),
                           grid, max_iter, tol)
    annulus = make_domain("annulus", x0, r1, r2)

    def weight(pts):
        r = np.linalg.norm(pts - x0, axis=1)
        return np.asarray(Q(pts), dtype=float) * np.asarray(eta(r), dtype=float) ** p

    rhs = volume_integrate(annulus, MetricField.flat(n), weight, resolution)
    return RingCheck(est.value, rhs, bool(est.value <= rhs * (1 + slack)), total, est)
