"""Command line front end: strict JSON configs in, CSV or JSON tables out.

Every subcommand reads an optional ``--config`` file and accepts one flag per
top-level config key (``--grid 128``, ``--q "pow(log(e/t),2)"``).  Flag
values are parsed as JSON when possible and taken as strings otherwise.
Precedence is defaults < config file < flags.
"""
from __future__ import annotations

import argparse
import copy
import csv
import io
import json
import math
import sys
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import __version__
from .catalog import (CATALOG_NAMES, PARAMETER_RANGES, make_catalog_map,
                      probe_limit_set)
from .criteria import (divergence_test, fmo_test, ls_integrability_test,
                       oI_condition_check, spherical_mean_q)
from .errors import (ConfigError, EvaluationDomain, ModlabError, NearSingularity,
                     NoConvergence, NotAdmissible, NumericalError, ParameterRange)
from .expr import ExpressionError, point_function, radial_function
from .geometry import MetricField, make_domain, sample_ring_curves
from .mapping import (MappingSpec, differential_report, identity_map, inner_dilatation,
                      outer_dilatation, radial_map, sample_points)
from .modulus import check_ring_inequality, estimate_modulus, ring_modulus_reference

SUBCOMMANDS = ("modulus", "dilatation", "criteria", "catalog", "verify-ring", "probe-limit")
SCHEMA_VERSION = 1

#: column layout of every CSV table; bump SCHEMA_VERSION when any of these change
COLUMNS = {
    "modulus": ["n", "p", "r1", "r2", "curves", "grid", "estimate", "reference", "rel_err",
                "iterations", "max_violation", "lower_bound", "converged"],
    "dilatation": ["x1", "x2", "x3", "J", "l", "L", "K_I", "K_O", "finite_distortion"],
    "criteria": ["scale", "statistic"],
    "catalog": ["name", "parameter_range"],
    "verify-ring": ["r1", "r2", "p", "lhs", "rhs", "ratio", "holds", "eta_integral"],
    "probe-limit": ["radius", "separation"],
}
CATALOG_DETAIL_COLUMNS = ["name", "n", "multiplicity", "limit_kind", "limit_radius"]

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3


# -- validators ------------------------------------------------------------------

def _number(lo=None, hi=None, strict_lo=False, integer=False, allow_none=False):
    def check(value, path):
        if value is None and allow_none:
            return None
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, "number expected")
        if integer and value != int(value):
            raise ConfigError(path, "integer expected")
        if not math.isfinite(value):
            raise ConfigError(path, "finite number expected")
        if lo is not None and (value <= lo if strict_lo else value < lo):
            raise ConfigError(path, f"value must be {'>' if strict_lo else '>='} {lo}")
        if hi is not None and value > hi:
            raise ConfigError(path, f"value must be <= {hi}")
        return int(value) if integer else value
    return check


def _p_value(value, path):
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise ConfigError(path, "number expected")
    if not value > 1:
        raise ConfigError(path, "p > 1 required")
    return value


def _choice(*options):
    def check(value, path):
        if value not in options:
            raise ConfigError(path, f"expected one of {', '.join(map(str, options))}")
        return value
    return check


def _boolean(value, path):
    if not isinstance(value, bool):
        raise ConfigError(path, "boolean expected")
    return value


def _optional_str(value, path):
    if value is not None and not isinstance(value, str):
        raise ConfigError(path, "string or null expected")
    return value


def _expression(kind):
    compile_ = radial_function if kind == "radial" else point_function

    def check(value, path):
        if value is None:
            return None
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            value = repr(value)
        if not isinstance(value, str):
            raise ConfigError(path, "expression string expected")
        try:
            compile_(value)
        except ExpressionError as exc:
            raise ConfigError(path, str(exc)) from None
        return value
    return check


def _point(value, path):
    if value is None:
        return None
    if not isinstance(value, list) or len(value) not in (2, 3):
        raise ConfigError(path, "point of dimension 2 or 3 expected")
    return [_number()(v, f"{path}/{i}") for i, v in enumerate(value)]


def _grid(value, path):
    if isinstance(value, list):
        if len(value) != 2:
            raise ConfigError(path, "grid is an integer or a [radial, angular] pair")
        return [_number(1, integer=True)(v, f"{path}/{i}") for i, v in enumerate(value)]
    return _number(1, integer=True)(value, path)


def _radii_list(value, path):
    if not isinstance(value, list) or len(value) < 3:
        raise ConfigError(path, "at least three radii expected")
    out = [_number(0, 1, strict_lo=True)(v, f"{path}/{i}") for i, v in enumerate(value)]
    if any(b >= a for a, b in zip(out, out[1:])):
        raise ConfigError(path, "radii must decrease")
    return out


def _points_list(value, path):
    if value is None:
        return None
    if not isinstance(value, list) or not value:
        raise ConfigError(path, "non-empty list of points expected")
    pts = [_point(v, f"{path}/{i}") for i, v in enumerate(value)]
    if len({len(q) for q in pts}) != 1:
        raise ConfigError(path, "points must share one dimension")
    return pts


def _strict_object(value, path, schema, required=()):
    if not isinstance(value, dict):
        raise ConfigError(path, "object expected")
    for key in value:
        if key not in schema:
            raise ConfigError(f"{path}/{key}", "unknown key")
    for key in required:
        if key not in value:
            raise ConfigError(f"{path}/{key}", "required key missing")
    out = {}
    for key, (default, check) in schema.items():
        out[key] = check(value[key], f"{path}/{key}") if key in value else copy.deepcopy(default)
    return out


def _domain(value, path):
    schema = {
        "kind": ("annulus", _choice("ball", "annulus", "punctured_ball")),
        "center": ([0.0, 0.0], _point),
        "r1": (1.0, _number(0)),
        "r2": (math.e, _number(0, strict_lo=True)),
    }
    out = _strict_object(value, path, schema)
    if out["kind"] != "annulus":
        out["r1"] = 0.0
    if not out["r1"] < out["r2"]:
        raise ConfigError(f"{path}/r2", "r2 must exceed r1")
    if out["kind"] == "annulus" and not out["r1"] > 0:
        raise ConfigError(f"{path}/r1", "an annulus needs r1 > 0")
    return out


def _metric(value, path):
    if value == "flat":
        return value
    if isinstance(value, dict) and len(value) == 1:
        (key, arg), = value.items()
        if key == "conformal":
            return {"conformal": _expression("point")(arg, f"{path}/conformal")}
        if key == "constant":
            return {"constant": _number(0, strict_lo=True)(arg, f"{path}/constant")}
        raise ConfigError(f"{path}/{key}", "unknown metric kind")
    raise ConfigError(path, 'metric is "flat", {"conformal": expr} or {"constant": c}')


def _map(value, path):
    if not isinstance(value, dict) or len(value) == 0:
        raise ConfigError(path, "map object expected")
    if "catalog" in value:
        out = _strict_object(value, path, {"catalog": (None, _choice(*CATALOG_NAMES)),
                                           "params": ({}, _catalog_params)})
        return out
    if "radial" in value:
        schema = {"radial": (None, _expression("radial")), "drho": (None, _expression("radial")),
                  "n": (2, _choice(2, 3)), "r2": (1.0, _number(0, strict_lo=True))}
        return _strict_object(value, path, schema, required=("radial", "drho"))
    if "identity" in value:
        return _strict_object(value, path, {"identity": (2, _choice(2, 3))})
    raise ConfigError(path, 'map needs one of "catalog", "radial", "identity"')


def _catalog_params(value, path):
    schema = {"m": (None, _number(1, integer=True)), "k": (None, _number(1, integer=True)),
              "n": (None, _choice(2, 3)), "alpha": (None, _number(0, strict_lo=True)),
              "q0": (None, _expression("radial"))}
    if not isinstance(value, dict):
        raise ConfigError(path, "object expected")
    out = _strict_object(value, path, schema)
    return {k: v for k, v in out.items() if v is not None}


# -- schemas -----------------------------------------------------------------------

_COMMON = {
    "subcommand": (None, _choice(*SUBCOMMANDS)),
    "seed": (0, _number(0, integer=True)),
    "output": (None, _optional_str),
    "format": ("csv", _choice("csv", "json")),
}

_DEFAULT_MAP = {"catalog": "annulus_blowup", "params": {}}

SCHEMAS = {
    "modulus": {
        "domain": (None, _domain),
        "metric": ("flat", _metric),
        "p": (2.0, _p_value),
        "curves": (400, _number(0, integer=True)),
        "jitter": (0.0, _number(0)),
        "grid": (256, _grid),
        "max_iter": (500, _number(1, integer=True)),
        "tol": (1e-3, _number(0, strict_lo=True)),
    },
    "dilatation": {
        "map": (_DEFAULT_MAP, _map),
        "p": (2.0, _p_value),
        "points": (None, _points_list),
        "samples": (20, _number(1, integer=True)),
        "numeric": (False, _boolean),
        "h": (None, _number(0, strict_lo=True, allow_none=True)),
    },
    "criteria": {
        "kind": ("divergence", _choice("divergence", "fmo", "oI", "ls_integrability",
                                       "spherical_mean")),
        "q": (None, _expression("radial")),
        "Q": (None, _expression("point")),
        "n": (2, _choice(2, 3)),
        "p": (2.0, _p_value),
        "s": (1.0, _number(1)),
        "eps0": (None, _number(0, 1, strict_lo=True, allow_none=True)),
        "decades": (None, _number(3, integer=True, allow_none=True)),
        "center": (None, _point),
        "radius": (1.0, _number(0, strict_lo=True)),
        "eps_sequence": (None, lambda v, p: None if v is None else _radii_list(v, p)),
        "resolution": (None, _number(8, integer=True, allow_none=True)),
    },
    "catalog": {
        "list": (False, _boolean),
        "map": (None, lambda v, p: None if v is None else _map(v, p)),
    },
    "verify-ring": {
        "map": ({"identity": 2}, _map),
        "center": (None, _point),
        "r1": (0.1, _number(0, strict_lo=True)),
        "r2": (0.9, _number(0, strict_lo=True)),
        "p": (2.0, _p_value),
        "Q": ("exact", lambda v, p: v if v == "exact" else _expression("point")(v, p)),
        "eta": ("extremal", lambda v, p: v if v == "extremal" else _expression("radial")(v, p)),
        "curves": (401, _number(1, integer=True)),
        "jitter": (0.0, _number(0)),
        "grid": (256, _grid),
        "resolution": (512, _number(8, integer=True)),
        "max_iter": (500, _number(1, integer=True)),
        "tol": (1e-3, _number(0, strict_lo=True)),
        "slack": (0.05, _number(0)),
    },
    "probe-limit": {
        "map": ({"catalog": "counterexample_n", "params": {}}, _map),
        "directions": (16, _number(1, integer=True)),
        "radii": ([1e-2, 1e-3, 1e-4, 1e-5, 1e-6], _radii_list),
        "rtol": (0.02, _number(0, strict_lo=True)),
    },
}


@dataclass
class RunConfig:
    """A fully validated run; ``values`` holds every key with defaults filled."""

    subcommand: str
    values: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.values[key]

    def as_dict(self) -> dict:
        return copy.deepcopy(self.values)


def resolve_config(doc: dict, subcommand: Optional[str] = None) -> RunConfig:
    """Validate a config document and fill in defaults."""
    if not isinstance(doc, dict):
        raise ConfigError("", "config must be a JSON object")
    doc = dict(doc)
    if subcommand is not None:
        if doc.get("subcommand", subcommand) != subcommand:
            raise ConfigError("/subcommand", f"config is for {doc['subcommand']!r}, not {subcommand!r}")
        doc["subcommand"] = subcommand
    if "subcommand" not in doc:
        raise ConfigError("/subcommand", "required key missing")
    sub = _choice(*SUBCOMMANDS)(doc["subcommand"], "/subcommand")
    schema = dict(_COMMON, **SCHEMAS[sub])
    values = _strict_object(doc, "", schema)
    _fill_derived(values)
    return RunConfig(sub, values)


def _fill_derived(v: dict) -> None:
    sub = v["subcommand"]
    if sub == "modulus" and v["domain"] is None:
        v["domain"] = _domain({}, "/domain")
    if sub == "modulus" and v["domain"]["kind"] != "annulus":
        raise ConfigError("/domain/kind", "ring families need an annulus")
    if sub == "criteria":
        kind = v["kind"]
        if kind == "divergence" and v["q"] is None:
            raise ConfigError("/q", "the divergence test needs q")
        if kind != "divergence" and v["Q"] is None:
            raise ConfigError("/Q", f"the {kind} test needs Q")
        if v["eps0"] is None:
            v["eps0"] = math.exp(-2.0) if kind == "oI" else 0.5
        if v["decades"] is None:
            v["decades"] = 100 if kind == "divergence" else 40
        if v["center"] is None:
            v["center"] = [0.0] * v["n"]
        if len(v["center"]) != v["n"]:
            raise ConfigError("/center", "center dimension differs from n")
        if v["resolution"] is None:
            v["resolution"] = {"fmo": 512, "ls_integrability": 64}.get(kind, 256)
        if kind == "oI" and v["eps_sequence"] is None:
            v["eps_sequence"] = [math.exp(-k) for k in range(3, 7)]
        if kind == "oI" and v["eps_sequence"][0] >= v["eps0"]:
            raise ConfigError("/eps_sequence/0", "must be below eps0")
    if sub == "verify-ring":
        n = _map_dimension(v["map"])
        if v["center"] is None:
            v["center"] = [0.0] * n
        if len(v["center"]) != n:
            raise ConfigError("/center", "center dimension differs from the map")
        if not v["r1"] < v["r2"]:
            raise ConfigError("/r2", "r2 must exceed r1")
    if sub == "catalog" and not v["list"] and v["map"] is None:
        raise ConfigError("/map", "give a map to describe or set list")


def load_config(path, subcommand: Optional[str] = None) -> RunConfig:
    """Read and validate a JSON config file."""
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError("", f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError("", f"invalid JSON at line {exc.lineno}: {exc.msg}") from None
    return resolve_config(doc, subcommand)


# -- building objects from specs ----------------------------------------------------

def _map_dimension(spec: dict) -> int:
    if "catalog" in spec:
        n = spec["params"].get("n")
        if n is not None:
            return n
        return 3 if spec["catalog"] in ("twisting", "annulus_blowup") else 2
    if "radial" in spec:
        return spec["n"]
    return spec["identity"]


def build_map(spec: dict, path: str = "/map"):
    """Return ``(mapping, catalog_entry_or_None)`` for a validated map spec."""
    if "catalog" in spec:
        params = dict(spec["params"])
        if "q0" in params:
            params["q0"] = radial_function(params["q0"])
        try:
            entry = make_catalog_map(spec["catalog"], **params)
        except (ParameterRange, ValueError) as exc:
            raise ConfigError(f"{path}/params", str(exc)) from None
        return entry.mapping, entry
    if "radial" in spec:
        n = spec["n"]
        dom = make_domain("punctured_ball", np.zeros(n), 0.0, spec["r2"])
        return radial_map(radial_function(spec["radial"]), radial_function(spec["drho"]), n,
                          domain=dom), None
    return identity_map(spec["identity"]), None


def _metric_field(spec, n: int) -> MetricField:
    if spec == "flat":
        return MetricField.flat(n)
    if "constant" in spec:
        return MetricField.constant(n, spec["constant"])
    return MetricField(n, point_function(spec["conformal"]))


def _batch_dilatation(mapping: MappingSpec, p: float) -> Callable:
    """Inner dilatation field from the map's exact derivative."""
    def Q(pts):
        out = np.empty(len(pts))
        for i, x in enumerate(pts):
            out[i] = inner_dilatation(differential_report(mapping, x, h=1e-12), p)
        return out
    return Q


# -- subcommands ---------------------------------------------------------------------

@dataclass
class RunResult:
    columns: list
    rows: list
    summary: dict


def _run_modulus(cfg: RunConfig) -> RunResult:
    d = cfg["domain"]
    n = len(d["center"])
    domain = make_domain(d["kind"], d["center"], d["r1"], d["r2"])
    metric = _metric_field(cfg["metric"], n)
    grid = tuple(cfg["grid"]) if isinstance(cfg["grid"], list) else cfg["grid"]
    family = sample_ring_curves(d["center"], d["r1"], d["r2"], cfg["curves"], cfg["jitter"], cfg["seed"])
    try:
        est = estimate_modulus(family, cfg["p"], domain, metric, grid, cfg["max_iter"], cfg["tol"])
    except NoConvergence as exc:
        raise NumericalError("/max_iter", f"{exc}; last estimate {exc.estimate.value!r}") from None
    reference = None
    if d["kind"] == "annulus" and metric.is_flat:
        reference = ring_modulus_reference(n, cfg["p"], d["r1"], d["r2"])
    rel = None if reference is None else abs(est.value - reference) / reference
    row = [n, cfg["p"], d["r1"], d["r2"], cfg["curves"], cfg["grid"], est.value, reference, rel,
           est.iterations, est.max_violation, est.lower_bound, est.converged]
    summary = {"estimate": est.value, "reference": reference, "rel_err": rel}
    return RunResult(COLUMNS["modulus"], [row], summary)


def _run_dilatation(cfg: RunConfig) -> RunResult:
    mapping, _ = build_map(cfg["map"])
    n = mapping.dimension
    if cfg["points"] is not None:
        pts = np.asarray(cfg["points"], dtype=float)
        if pts.shape[1] != n:
            raise ConfigError("/points", f"points must have dimension {n}")
    else:
        pts = sample_points(mapping, cfg["samples"], cfg["seed"])
    rows, flags = [], []
    for i, x in enumerate(pts):
        try:
            rep = differential_report(mapping, x, cfg["h"], numeric=cfg["numeric"])
        except (NearSingularity, EvaluationDomain) as exc:
            raise NumericalError(f"/points/{i}", str(exc)) from None
        coords = list(map(float, x)) + [None] * (3 - n)
        rows.append(coords + [rep.J, rep.l, rep.L, inner_dilatation(rep, cfg["p"]),
                              outer_dilatation(rep, cfg["p"]), rep.finite_distortion_flag])
        flags.append(rep.finite_distortion_flag)
    k_inner = [r[6] for r in rows]
    summary = {"points": len(rows), "max_K_I": max(k_inner),
               "finite_distortion_fraction": float(np.mean(flags))}
    return RunResult(COLUMNS["dilatation"], rows, summary)


def _run_criteria(cfg: RunConfig) -> RunResult:
    kind, n, p = cfg["kind"], cfg["n"], cfg["p"]
    Q = point_function(cfg["Q"]) if cfg["Q"] is not None else None
    center = np.asarray(cfg["center"], dtype=float)
    cols = COLUMNS["criteria"]
    if kind == "divergence":
        v = divergence_test(radial_function(cfg["q"]), cfg["eps0"], n, p, cfg["decades"])
        return RunResult(cols, [list(e) for e in v.evidence],
                         {"verdict": v.kind.value, "exponents": v.as_dict()["exponents"]})
    if kind == "fmo":
        v = fmo_test(lambda x: Q(x - center), center, resolution=cfg["resolution"])
        return RunResult(cols, [list(e) for e in v.evidence],
                         {"verdict": v.kind.value, "exponents": v.as_dict()["exponents"]})
    if kind == "oI":
        rep = oI_condition_check(lambda x: Q(x - center), x0=center, n=n, p=p, eps0=cfg["eps0"],
                                 eps_sequence=cfg["eps_sequence"], resolution=cfg["resolution"])
        return RunResult(cols, [[e, r] for e, r in zip(rep.eps, rep.ratios)],
                         {"verdict": "PLAUSIBLE" if rep.plausible else "NOT_PLAUSIBLE"})
    if kind == "ls_integrability":
        dom = make_domain("ball", center, 0.0, cfg["radius"])
        rep = ls_integrability_test(lambda x: Q(x - center), dom, cfg["s"], cfg["resolution"],
                                    cfg["decades"])
        return RunResult(cols, [[r, v] for r, v in zip(rep.radii, rep.values)],
                         {"verdict": "INTEGRABLE" if rep.converged else "NOT_INTEGRABLE",
                          "value": rep.values[-1]})
    value = spherical_mean_q(lambda x: Q(x - center), center, cfg["radius"],
                             resolution=cfg["resolution"])
    return RunResult(cols, [[cfg["radius"], value]], {"value": value})


def _run_catalog(cfg: RunConfig) -> RunResult:
    if cfg["list"]:
        rows = [[name, PARAMETER_RANGES[name]] for name in CATALOG_NAMES]
        return RunResult(COLUMNS["catalog"], rows, {"entries": len(rows)})
    _, entry = build_map(cfg["map"])
    if entry is None:
        raise ConfigError("/map", "only catalog maps can be described")
    ls = entry.limit_set
    row = [entry.name, entry.dimension, entry.mapping.multiplicity, ls.kind, ls.radius]
    return RunResult(CATALOG_DETAIL_COLUMNS, [row], {"name": entry.name, "limit_kind": ls.kind})


def _run_verify_ring(cfg: RunConfig) -> RunResult:
    mapping, entry = build_map(cfg["map"])
    p, r1, r2 = cfg["p"], cfg["r1"], cfg["r2"]
    if cfg["Q"] == "exact":
        Q = (lambda pts: entry.dilatation(pts, p)) if entry is not None else _batch_dilatation(mapping, p)
    else:
        Q = point_function(cfg["Q"])
    if cfg["eta"] == "extremal":
        scale = math.log(r2 / r1)
        eta = lambda t: 1.0 / (np.asarray(t) * scale)  # noqa: E731
    else:
        eta = radial_function(cfg["eta"])
    grid = tuple(cfg["grid"]) if isinstance(cfg["grid"], list) else cfg["grid"]
    try:
        res = check_ring_inequality(mapping, cfg["center"], r1, r2, p, Q, eta, cfg["curves"], grid,
                                    cfg["resolution"], cfg["seed"], cfg["jitter"], cfg["slack"],
                                    cfg["max_iter"], cfg["tol"])
    except NotAdmissible as exc:
        raise ConfigError("/eta", str(exc)) from None
    except EvaluationDomain as exc:
        raise ConfigError("/r2", str(exc)) from None
    except NoConvergence as exc:
        raise NumericalError("/max_iter", str(exc)) from None
    ratio = res.lhs / res.rhs if res.rhs > 0 else math.inf
    row = [r1, r2, p, res.lhs, res.rhs, ratio, res.holds, res.eta_integral]
    return RunResult(COLUMNS["verify-ring"], [row],
                     {"lhs": res.lhs, "rhs": res.rhs, "holds": res.holds})


def _run_probe_limit(cfg: RunConfig) -> RunResult:
    _, entry = build_map(cfg["map"])
    if entry is None:
        raise ConfigError("/map", "probe-limit needs a catalog map")
    probe = probe_limit_set(entry, cfg["directions"], cfg["radii"], cfg["rtol"])
    rows = [[r, s] for r, s in zip(probe.radii, probe.separations)]
    return RunResult(COLUMNS["probe-limit"], rows,
                     {"limit": probe.limit, "model": probe.model, "descriptor": probe.descriptor.kind,
                      "descriptor_radius": probe.descriptor.radius,
                      "confirmed": probe.descriptor_confirmed})


RUNNERS = {
    "modulus": _run_modulus,
    "dilatation": _run_dilatation,
    "criteria": _run_criteria,
    "catalog": _run_catalog,
    "verify-ring": _run_verify_ring,
    "probe-limit": _run_probe_limit,
}


# -- output ----------------------------------------------------------------------------

def _cell(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (list, tuple)):
        return json.dumps(v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return int(v)
    return v


def _jsonable(v):
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if math.isfinite(v) else repr(v)
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, (np.bool_,)):
        return bool(v)
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return v


def render(cfg: RunConfig, result: RunResult) -> str:
    """Serialise a result with the resolved config embedded."""
    schema = f"modlab/{cfg.subcommand}/v{SCHEMA_VERSION}"
    if cfg["format"] == "json":
        doc = {"schema": schema, "version": __version__, "config": cfg.as_dict(),
               "columns": result.columns, "rows": _jsonable(result.rows),
               "summary": _jsonable(result.summary)}
        return json.dumps(doc, indent=2) + "\n"
    buf = io.StringIO()
    buf.write(f"# schema: {schema}\n")
    buf.write(f"# config: {json.dumps(cfg.as_dict(), sort_keys=True)}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(result.columns)
    for row in result.rows:
        writer.writerow([_cell(v) for v in row])
    return buf.getvalue()


def read_csv_config(text: str) -> dict:
    """Recover the config document embedded in a CSV output."""
    for line in text.splitlines():
        if line.startswith("# config: "):
            return json.loads(line[len("# config: "):])
    raise ValueError("no embedded config found")


def summary_line(cfg: RunConfig, result: RunResult) -> str:
    parts = [cfg.subcommand]
    for key, val in result.summary.items():
        if isinstance(val, dict):
            continue
        if isinstance(val, float):
            val = f"{val:.6g}"
        parts.append(f"{key}={val}")
    return " ".join(str(x) for x in parts)


# -- entry point ------------------------------------------------------------------------

def _flag_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="modlab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"modlab {__version__}")
    subs = parser.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        sp = subs.add_parser(name, help=f"run the {name} experiment")
        sp.add_argument("--config", help="JSON config file")
        for key in list(_COMMON) + list(SCHEMAS[name]):
            if key == "subcommand":
                continue
            flag = "--" + key.replace("_", "-")
            if name == "catalog" and key == "list":
                sp.add_argument(flag, dest="opt_list", action="store_const", const=True,
                                help="list the catalog entries")
                continue
            sp.add_argument(flag, dest=f"opt_{key}", type=_flag_value, metavar="VALUE",
                            help=f"override config key {key!r} (JSON or bare string)")
    return parser


def _error_payload(kind: str, path: str, message: str) -> str:
    return json.dumps({"error": kind, "path": path, "message": message})


def run(argv=None, stdout=None, stderr=None) -> int:
    """Parse ``argv``, run one subcommand and return the exit code."""
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    args = build_parser().parse_args(argv)
    try:
        doc = {}
        if args.config:
            with open(args.config, encoding="utf-8") as fh:
                try:
                    doc = json.load(fh)
                except json.JSONDecodeError as exc:
                    raise ConfigError("", f"invalid JSON at line {exc.lineno}: {exc.msg}") from None
            if not isinstance(doc, dict):
                raise ConfigError("", "config must be a JSON object")
        for key, val in vars(args).items():
            if key.startswith("opt_") and val is not None:
                doc[key[4:]] = val
        cfg = resolve_config(doc, args.subcommand)
        result = RUNNERS[cfg.subcommand](cfg)
    except OSError as exc:
        stderr.write(_error_payload("ConfigError", "/config", str(exc)) + "\n")
        return EXIT_CONFIG
    except ConfigError as exc:
        stderr.write(_error_payload("ConfigError", exc.path, exc.message) + "\n")
        return EXIT_CONFIG
    except NumericalError as exc:
        stderr.write(_error_payload("NumericalError", exc.path, exc.message) + "\n")
        return EXIT_NUMERICAL
    except ModlabError as exc:
        stderr.write(_error_payload(type(exc).__name__, "", str(exc)) + "\n")
        return EXIT_NUMERICAL
    text = render(cfg, result)
    if cfg["output"]:
        with open(cfg["output"], "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        stdout.write(text)
    stdout.write(summary_line(cfg, result) + "\n")
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
