"""Integral criteria near an isolated point: spherical means, sphere norms,
FMO, divergence of the radial criterion integral, and the psi/eta machinery.

None of these can prove an asymptotic statement.  Each test evaluates a
ladder of scales and applies an explicit decision rule; the evidence trail
is returned with the verdict and INCONCLUSIVE is a legitimate outcome.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy.integrate import simpson

from .errors import NonFiniteIntegrand, PsiNotIntegrable
from .geometry import (Domain, MetricField, check_dimension, evaluate_field, make_domain,
                       sphere_area, sphere_quadrature, volume_integrate, volume_quadrature)

LN10 = np.log(10.0)


class Verdict(str, enum.Enum):
    FMO = "FMO"
    NOT_FMO = "NOT_FMO"
    DIVERGES = "DIVERGES"
    CONVERGES = "CONVERGES"
    INCONCLUSIVE = "INCONCLUSIVE"


@dataclass
class CriterionVerdict:
    kind: Verdict
    evidence: list
    exponents: dict = field(default_factory=dict)
    thresholds: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {"kind": self.kind.value, "evidence": [list(map(float, e)) for e in self.evidence],
                "exponents": {k: float(v) for k, v in self.exponents.items()},
                "thresholds": dict(self.thresholds)}


# -- spherical quantities --------------------------------------------------------

def spherical_mean_q(Q: Callable, x0, r: float, metric: Optional[MetricField] = None,
                     resolution: int = 256, normalized: bool = False) -> float:
    """``q_{x0}(r) = r^{1-n} int_{S(x0, r)} Q dA``.

    With ``normalized`` the result is further divided by ``omega_{n-1}``,
    so that a constant weight returns itself.
    """
    x0 = np.asarray(x0, dtype=float)
    n = check_dimension(len(x0))
    metric = metric or MetricField.flat(n)
    pts, w = sphere_quadrature(x0, r, metric, resolution)
    val = float(np.dot(evaluate_field(Q, pts), w)) / r ** (n - 1)
    return val / sphere_area(n) if normalized else val


def sphere_lsnorm(Q: Callable, x0, r: float, s: float, resolution: int = 256,
                  metric: Optional[MetricField] = None) -> float:
    """``(int_{S(x0, r)} Q^s dA)^(1/s)`` over the whole sphere."""
    if s < 1:
        raise ValueError("s >= 1 required")
    x0 = np.asarray(x0, dtype=float)
    metric = metric or MetricField.flat(len(x0))
    pts, w = sphere_quadrature(x0, r, metric, resolution)
    vals = np.abs(evaluate_field(Q, pts)) ** s
    return float(np.dot(vals, w)) ** (1.0 / s)


# -- divergence of the radial criterion integral --------------------------------

def _log_grid_integral(log_integrand: Callable, u0: float, decades: int, nodes: int):
    """Per-decade integrals of ``exp(log_integrand(u))`` over ``u0 + [k-1, k] ln 10``.

    Returns the increments; stops early (marking overflow) once the
    integrand exceeds the float range.
    """
    inc = []
    overflow = False
    for k in range(1, decades + 1):
        u = np.linspace(u0 + (k - 1) * LN10, u0 + k * LN10, nodes + 1)
        lg = np.asarray(log_integrand(u), dtype=float)
        if np.any(np.isnan(lg)):
            raise NonFiniteIntegrand("criterion integrand is not finite")
        if np.any(lg > 700):
            overflow = True
            break
        inc.append(float(simpson(np.exp(lg), x=u)))
    return np.array(inc), overflow


def criterion_integrand(q: Callable, n: int, p: float) -> Callable:
    """``t -> 1 / (t^{(n-1)/(p-1)} q(t)^{1/(p-1)})``, vectorised over ``t``."""
    a, b = (n - 1) / (p - 1), 1 / (p - 1)

    def f(t):
        return t ** (-a) * np.asarray(q(t), dtype=float) ** (-b)
    return f


def divergence_test(q: Callable, eps0: float = 0.5, n: int = 2, p: float = 2.0,
                    decades: int = 100, nodes_per_decade: int = 512,
                    growth_threshold: float = 0.05, cauchy_rtol: float = 1e-4) -> CriterionVerdict:
    """Classify ``int_0^{eps0} dt / (t^{(n-1)/(p-1)} q(t)^{1/(p-1)})``.

    Partial integrals ``I_k`` over ``(eps0 10^-k, eps0)`` are computed in
    ``u = log(1/t)`` with a uniform grid per decade.  Decision rule:

    * DIVERGES if the local growth exponent
      ``log(I_k / I_{k-1}) / log(k / (k-1))`` is at least
      ``growth_threshold`` for each of the last three decades (or the
      integrand overflows the float range);
    * CONVERGES if the last increment is below ``cauchy_rtol * I_K``;
    * INCONCLUSIVE otherwise.

    The default ladder is deep (100 decades) because log-type weights
    converge or diverge only logarithmically in ``t``.
    """
    n = check_dimension(n)
    if not p > 1:
        raise ValueError("p > 1 required")
    if decades < 3:
        raise ValueError("at least three decades are needed")
    a, b = (n - 1) / (p - 1), 1 / (p - 1)
    u0 = np.log(1.0 / eps0)

    def log_integrand(u):
        t = np.exp(-u)
        qv = np.asarray(q(t), dtype=float)
        qv = np.broadcast_to(qv, u.shape)
        if np.any(~np.isfinite(qv)) or np.any(qv <= 0):
            raise NonFiniteIntegrand("q must be finite and positive on (0, eps0)")
        # t * t^{-a} q^{-b}; the extra t is dt = -t du
        return (a - 1) * u - b * np.log(qv)

    inc, overflow = _log_grid_integral(log_integrand, u0, decades, nodes_per_decade)
    partial = np.cumsum(inc)
    ks = np.arange(1, len(partial) + 1)
    evidence = [(eps0 * 10.0 ** -k, I) for k, I in zip(ks, partial)]
    thresholds = {"growth_threshold": growth_threshold, "cauchy_rtol": cauchy_rtol,
                  "decades": decades, "nodes_per_decade": nodes_per_decade}
    if overflow:
        return CriterionVerdict(Verdict.DIVERGES, evidence or [(eps0, np.inf)],
                                {"overflow_decade": len(partial) + 1}, thresholds)
    last = partial[-4:]
    kk = ks[-4:]
    local = np.log(last[1:] / last[:-1]) / np.log(kk[1:] / kk[:-1])
    exps = {f"growth_k{k}": e for k, e in zip(kk[1:], local)}
    if np.all(local >= growth_threshold):
        kind = Verdict.DIVERGES
    elif inc[-1] < cauchy_rtol * partial[-1]:
        kind = Verdict.CONVERGES
    else:
        kind = Verdict.INCONCLUSIVE
    return CriterionVerdict(kind, evidence, exps, thresholds)


# -- finite mean oscillation ----------------------------------------------------

def mean_oscillation(Q: Callable, x0, eps: float, metric: Optional[MetricField] = None,
                     resolution: int = 512):
    """Mean of Q over B(x0, eps) and the mean of ``|Q - mean|``."""
    x0 = np.asarray(x0, dtype=float)
    metric = metric or MetricField.flat(len(x0))
    ball = make_domain("ball", x0, 0.0, eps)
    pts, w = volume_quadrature(ball, metric, resolution)
    vals = evaluate_field(Q, pts)
    vol = w.sum()
    mean = float(np.dot(vals, w) / vol)
    return mean, float(np.dot(np.abs(vals - mean), w) / vol)


def fmo_test(Q: Callable, x0, metric: Optional[MetricField] = None,
             k_range: Sequence[int] = (3, 12), resolution: int = 512,
             window: int = 4, bound_factor: float = 2.0,
             growth_factor: float = 1.5) -> CriterionVerdict:
    """Finite mean oscillation at ``x0`` on dyadic balls ``eps_k = 2^-k``.

    FMO when the last ``window`` oscillations are all at most
    ``bound_factor`` times their median (plus a rounding floor); NOT_FMO
    when they grow by at least ``growth_factor`` per scale; otherwise
    INCONCLUSIVE.
    """
    k_lo, k_hi = k_range
    ks = list(range(int(k_lo), int(k_hi) + 1))
    if len(ks) < window:
        raise ValueError(f"k_range must contain at least {window} scales")
    evidence, means = [], []
    for k in ks:
        eps = 2.0 ** -k
        mean, osc = mean_oscillation(Q, x0, eps, metric, resolution)
        evidence.append((eps, osc))
        means.append(mean)
    osc = np.array([e[1] for e in evidence])
    tail = osc[-window:]
    floor = 1e-12 * max(1.0, float(np.max(np.abs(means))))
    thresholds = {"window": window, "bound_factor": bound_factor,
                  "growth_factor": growth_factor, "floor": floor}
    ratios = tail[1:] / np.maximum(tail[:-1], floor)
    exps = {"median_tail": float(np.median(tail)), "min_growth_ratio": float(ratios.min())}
    if tail.max() <= bound_factor * np.median(tail) + floor:
        kind = Verdict.FMO
    elif np.all(ratios >= growth_factor):
        kind = Verdict.NOT_FMO
    else:
        kind = Verdict.INCONCLUSIVE
    return CriterionVerdict(kind, evidence, exps, thresholds)


# -- psi functions and the o(I^p) condition ----------------------------------------

def log_power_psi(n: int, p: float) -> Callable:
    """``psi(t) = 1 / (t log(1/t))^{n/p}``, meaningful for ``t < 1``."""
    e = n / p

    def psi(t):
        t = np.asarray(t, dtype=float)
        return (t * np.log(1.0 / t)) ** (-e)
    return psi


def psi_integral(psi: Callable, eps: float, eps0: float, nodes: int = 32) -> float:
    """``I(eps, eps0) = int_eps^eps0 psi(t) dt``; composite Gauss-Legendre in log t."""
    if not 0 < eps < eps0:
        return 0.0
    a, b = np.log(eps), np.log(eps0)
    pieces = max(1, int(np.ceil(b - a)))
    x, w = np.polynomial.legendre.leggauss(nodes)
    edges = np.linspace(a, b, pieces + 1)
    h = 0.5 * np.diff(edges)
    u = (edges[:-1] + h)[:, None] + h[:, None] * x[None, :]
    t = np.exp(u)
    vals = np.asarray(psi(t), dtype=float)
    return float(np.sum(vals * t * w[None, :] * h[:, None]))


@dataclass
class PsiSchedule:
    """A psi function on ``(0, eps0)`` with its integrals ``I(eps, eps0)``."""

    psi: Callable
    eps0: float
    integrals: dict = field(default_factory=dict)

    def integral(self, eps: float) -> float:
        if eps not in self.integrals:
            val = psi_integral(self.psi, eps, self.eps0)
            if not (np.isfinite(val) and val > 0):
                raise PsiNotIntegrable(f"I({eps:g}, {self.eps0:g}) = {val}")
            self.integrals[eps] = val
        return self.integrals[eps]

    def eta(self, eps: float) -> Callable:
        """``eta = psi / I(eps, eps0)`` restricted to ``(eps, eps0)``; integrates to 1."""
        total = self.integral(eps)

        def eta(t):
            t = np.asarray(t, dtype=float)
            inside = (t > eps) & (t < self.eps0)
            safe = np.where(inside, t, 0.5 * (eps + self.eps0))
            return np.where(inside, np.asarray(self.psi(safe), dtype=float) / total, 0.0)
        return eta


@dataclass
class OIReport:
    eps: list
    numerators: list
    integrals: list
    ratios: list
    plausible: bool


def oI_condition_check(Q: Callable, psi: Union[str, Callable] = "log_power", x0=None, n: int = 2,
                       p: float = 2.0, eps0: float = np.exp(-2.0),
                       eps_sequence: Sequence[float] = (), resolution: int = 256,
                       decay_factor: float = 0.2) -> OIReport:
    """Evidence for ``int_{A(x0,eps,eps0)} Q psi^p dv = o(I(eps, eps0)^p)``.

    Plausible when the ratios decrease along the sequence and the last is
    below ``decay_factor`` times the first.
    """
    n = check_dimension(n)
    x0 = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float)
    if isinstance(psi, str):
        if psi != "log_power":
            raise ValueError(f"unknown built-in psi {psi!r}")
        if not eps0 < 1:
            raise ValueError("the log-power psi needs eps0 < 1")
        psi = log_power_psi(n, p)
    eps_sequence = [float(e) for e in eps_sequence]
    if not eps_sequence or any(not 0 < e < eps0 for e in eps_sequence):
        raise ValueError("eps_sequence must lie in (0, eps0)")
    if any(b >= a for a, b in zip(eps_sequence, eps_sequence[1:])):
        raise ValueError("eps_sequence must be decreasing")
    sched = PsiSchedule(psi, eps0)
    metric = MetricField.flat(n)
    nums, ints, ratios = [], [], []
    for eps in eps_sequence:
        total = sched.integral(eps)
        ann = make_domain("annulus", x0, eps, eps0)

        def weight(pts):
            r = np.linalg.norm(pts - x0, axis=1)
            return np.asarray(Q(pts), dtype=float) * np.asarray(psi(r), dtype=float) ** p

        num = volume_integrate(ann, metric, weight, resolution)
        nums.append(num)
        ints.append(total)
        ratios.append(num / total ** p)
    decreasing = all(b < a for a, b in zip(ratios, ratios[1:]))
    plausible = bool(decreasing and ratios[-1] < decay_factor * ratios[0])
    return OIReport(eps_sequence, nums, ints, ratios, plausible)


# -- L^s integrability near the centre ---------------------------------------------

@dataclass
class IntegrabilityReport:
    radii: list
    values: list
    increments: list
    converged: bool


def ls_integrability_test(Q: Callable, domain: Domain, s: float, resolution: int = 64,
                          decades: int = 40, rtol: float = 1e-6) -> IntegrabilityReport:
    """``int Q^s dv`` over ``A(x0, eps_k, r2)`` for ``eps_k = r2 10^-k``.

    Each decade shell is integrated separately and accumulated.  Converged
    when the last increment is below ``rtol`` times the running value and
    the increments are no longer growing.  An annulus domain with a
    positive inner radius stops the ladder there.
    """
    if s < 1:
        raise ValueError("s >= 1 required")
    n = check_dimension(domain.dimension)
    metric = MetricField.flat(n)
    x0, r2 = domain.x0, domain.r2

    def field_s(pts):
        return np.abs(np.asarray(Q(pts), dtype=float)) ** s

    if domain.kind == "annulus":
        val = volume_integrate(domain, metric, field_s, resolution)
        return IntegrabilityReport([domain.r1], [val], [val], True)
    radii, values, incs = [], [], []
    total, outer = 0.0, r2
    for k in range(1, decades + 1):
        inner = r2 * 10.0 ** -k
        shell = make_domain("annulus", x0, inner, outer)
        inc = volume_integrate(shell, metric, field_s, resolution)
        if not np.isfinite(inc):
            raise NonFiniteIntegrand("Q^s is not finite on a shell")
        total += inc
        radii.append(inner)
        values.append(total)
        incs.append(inc)
        outer = inner
    converged = bool(incs[-1] <= rtol * values[-1] and incs[-1] <= incs[-2])
    return IntegrabilityReport(radii, values, incs, converged)
