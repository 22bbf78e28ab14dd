"""JSON run configuration: parsing, normalization and echo.

Schema (every block optional except ``exponents``)::

    {
      "geometry": {
        "aperture_plus": 0.5 | [[y, a], ...],
        "aperture_minus": 0.5 | [[y, a], ...],
        "boundary": {"plus_right": "dirichlet", ...}
      },
      "exponents": {"nu_C": "1", "nu_K": "-1/2", ...}        # all seven, or
      "exponents": {"coupling_active": true, "nu_C": "1", "nu_K": "0", <overrides>},
      "materials": {
        "plus" | "minus" | "bulk" | "fracture": {<field>: <spec>, ...},
        "gravity": [gx, gy]
      },
      "discretization": {"h": 0.0625, "dt": 0.05, "T": 0.5, "n_layers": null},
      "epsilon": 0.25,
      "sweep": {"eps": [0.5, 0.25, 0.125, 0.0625], "prefer_reduced": false},
      "limit": {"prefer_reduced": false, "mech_form": null, "flow_form": null}
    }

Field names are ``stiffness, conductivity, storage, biot, body_force, source,
initial_pressure``; omitted fields keep the built-in reference data.  A spec is
a literal value, ``{"lambda": l, "mu": m}`` for an isotropic stiffness, or one
of ``{"type": "constant" | "two_layer" | "affine_in_y" | "piecewise_constant_y", ...}``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, fields, replace
from fractions import Fraction
from pathlib import Path
from typing import Any

import numpy as np

from .full_solver import BiotRunConfig
from .materials import (
    AffineInY,
    Constant,
    MaterialFields,
    PiecewiseConstantY,
    SubdomainMaterial,
    TwoLayer,
    default_materials,
    isotropic_stiffness,
)
from .mesh import BOUNDARY_SEGMENTS, Geometry, PiecewiseLinear, default_boundary_spec
from .scaling import ScalingExponents, as_fraction


class ConfigError(ValueError):
    """The configuration file cannot be parsed or is inconsistent."""


EXPONENT_NAMES = tuple(f.name for f in fields(ScalingExponents))
FIELD_NAMES = tuple(f.name for f in fields(SubdomainMaterial))
_TOP_KEYS = {"geometry", "exponents", "materials", "discretization", "epsilon", "sweep", "limit"}


# ---------------------------------------------------------------------------
# values and coefficient specs


def _value(raw) -> Any:
    if isinstance(raw, dict):
        if set(raw) != {"lambda", "mu"}:
            raise ConfigError(f"literal object must be {{'lambda', 'mu'}}, got keys {sorted(raw)}")
        return {"lambda": float(raw["lambda"]), "mu": float(raw["mu"])}
    try:
        arr = np.asarray(raw, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"not a numeric value: {raw!r}") from exc
    return arr.tolist()


def _array(value) -> np.ndarray:
    if isinstance(value, dict):
        return isotropic_stiffness(value["lambda"], value["mu"])
    return np.asarray(value, dtype=float)


def normalize_spec(raw) -> dict:
    """Canonical ``{"type": ..., ...}`` form of a coefficient spec."""
    if not isinstance(raw, dict) or "type" not in raw:
        return {"type": "constant", "value": _value(raw)}
    kind = raw["type"]
    keys = set(raw) - {"type"}
    if kind == "constant":
        _require(kind, keys, {"value"})
        return {"type": kind, "value": _value(raw["value"])}
    if kind == "two_layer":
        _require(kind, keys, {"below", "above"}, {"split"})
        return {
            "type": kind,
            "below": normalize_spec(raw["below"]),
            "above": normalize_spec(raw["above"]),
            "split": float(raw.get("split", 0.0)),
        }
    if kind == "affine_in_y":
        _require(kind, keys, {"at_bottom", "at_top"})
        return {"type": kind, "at_bottom": _value(raw["at_bottom"]), "at_top": _value(raw["at_top"])}
    if kind == "piecewise_constant_y":
        _require(kind, keys, {"breaks", "values"})
        breaks = [float(b) for b in raw["breaks"]]
        values = [_value(v) for v in raw["values"]]
        if len(breaks) != len(values) or any(b >= c for b, c in zip(breaks, breaks[1:])):
            raise ConfigError("piecewise_constant_y needs increasing breaks, one per value")
        return {"type": kind, "breaks": breaks, "values": values}
    raise ConfigError(f"unknown coefficient spec type {kind!r}")


def _require(kind, keys, needed, optional=frozenset()):
    if not needed <= keys or keys - needed - set(optional):
        raise ConfigError(f"{kind} spec needs keys {sorted(needed)} (optional {sorted(optional)}), got {sorted(keys)}")


def build_field(spec: dict):
    kind = spec["type"]
    if kind == "constant":
        return Constant(_array(spec["value"]))
    if kind == "two_layer":
        return TwoLayer(build_field(spec["below"]), build_field(spec["above"]), spec["split"])
    if kind == "affine_in_y":
        return AffineInY(_array(spec["at_bottom"]), _array(spec["at_top"]))
    return PiecewiseConstantY(tuple(spec["breaks"]), tuple(_array(v) for v in spec["values"]))


# ---------------------------------------------------------------------------
# blocks


def _normalize_geometry(raw: dict) -> dict:
    unknown = set(raw) - {"aperture_plus", "aperture_minus", "boundary"}
    if unknown:
        raise ConfigError(f"unknown geometry keys {sorted(unknown)}")
    out = {}
    for side in ("aperture_plus", "aperture_minus"):
        a = raw.get(side, 0.5)
        if isinstance(a, (int, float)):
            out[side] = float(a)
        else:
            out[side] = [[float(y), float(v)] for y, v in sorted(a)]
        vals = [out[side]] if isinstance(out[side], float) else [v for _, v in out[side]]
        if min(vals) <= 0:
            raise ConfigError(f"{side} must be positive")
    boundary = default_boundary_spec()
    for name, kind in raw.get("boundary", {}).items():
        if name not in BOUNDARY_SEGMENTS:
            raise ConfigError(f"unknown boundary segment {name!r}")
        if kind not in ("dirichlet", "neumann"):
            raise ConfigError(f"boundary kind for {name} must be dirichlet or neumann")
        boundary[name] = kind
    out["boundary"] = boundary
    return out


def _aperture(value) -> PiecewiseLinear:
    if isinstance(value, float):
        return PiecewiseLinear.constant(value)
    return PiecewiseLinear.from_pairs(value)


def _normalize_exponents(raw: dict) -> dict:
    if not isinstance(raw, dict):
        raise ConfigError("exponents block must be an object")
    given = {k: v for k, v in raw.items() if k != "coupling_active"}
    unknown = set(given) - set(EXPONENT_NAMES)
    if unknown:
        raise ConfigError(f"unknown exponents {sorted(unknown)}")
    try:
        parsed = {k: _rational(v) for k, v in given.items()}
        if raw.get("coupling_active", False):
            if not {"nu_C", "nu_K"} <= set(parsed):
                raise ConfigError("coupling_active needs nu_C and nu_K")
            base = ScalingExponents.coupling_active(parsed["nu_C"], parsed["nu_K"])
            exp = replace(base, **parsed)
        else:
            missing = set(EXPONENT_NAMES) - set(parsed)
            if missing:
                raise ConfigError(f"missing exponents {sorted(missing)}")
            exp = ScalingExponents(**parsed)
    except (TypeError, ValueError, ZeroDivisionError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"cannot parse exponents: {exc}") from exc
    return exp.as_strings()


def _rational(value) -> Fraction:
    if isinstance(value, float):
        raise ConfigError(f"exponent {value!r} must be an integer or a 'p/q' string to stay exact")
    return as_fraction(value)


def _normalize_materials(raw: dict) -> dict:
    unknown = set(raw) - {"plus", "minus", "bulk", "fracture", "gravity"}
    if unknown:
        raise ConfigError(f"unknown materials keys {sorted(unknown)}")
    out: dict = {}
    bulk = raw.get("bulk", {})
    for sub in ("plus", "minus", "fracture"):
        block = dict(bulk) if sub != "fracture" else {}
        block.update(raw.get(sub, {}))
        bad = set(block) - set(FIELD_NAMES)
        if bad:
            raise ConfigError(f"unknown {sub} fields {sorted(bad)}")
        if block:
            out[sub] = {k: normalize_spec(v) for k, v in sorted(block.items())}
    if "gravity" in raw:
        g = [float(v) for v in raw["gravity"]]
        if len(g) != 2:
            raise ConfigError("gravity must have two components")
        out["gravity"] = g
    return out


def _normalize_discretization(raw: dict) -> dict:
    unknown = set(raw) - {"h", "dt", "T", "n_layers"}
    if unknown:
        raise ConfigError(f"unknown discretization keys {sorted(unknown)}")
    n_layers = raw.get("n_layers")
    return {
        "h": float(raw.get("h", 1 / 16)),
        "dt": float(raw.get("dt", 1 / 20)),
        "T": float(raw.get("T", 0.5)),
        "n_layers": None if n_layers is None else int(n_layers),
    }


def normalize(raw: dict) -> dict:
    """Fill defaults and put every block in canonical form; idempotent."""
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a JSON object")
    unknown = set(raw) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown top-level keys {sorted(unknown)}")
    if "exponents" not in raw:
        raise ConfigError("configuration needs an exponents block")
    sweep = raw.get("sweep", {})
    limit = raw.get("limit", {})
    out = {
        "geometry": _normalize_geometry(raw.get("geometry", {})),
        "exponents": _normalize_exponents(raw["exponents"]),
        "materials": _normalize_materials(raw.get("materials", {})),
        "discretization": _normalize_discretization(raw.get("discretization", {})),
        "epsilon": float(raw.get("epsilon", 1.0)),
        "sweep": {
            "eps": None if sweep.get("eps") is None else [float(e) for e in sweep["eps"]],
            "prefer_reduced": bool(sweep.get("prefer_reduced", False)),
        },
        "limit": {
            "prefer_reduced": bool(limit.get("prefer_reduced", False)),
            "mech_form": limit.get("mech_form"),
            "flow_form": limit.get("flow_form"),
        },
    }
    return out


# ---------------------------------------------------------------------------
# objects


@dataclass(frozen=True, eq=False)
class RunConfig:
    data: dict  # normalized JSON tree

    @property
    def geometry(self) -> Geometry:
        g = self.data["geometry"]
        return Geometry(
            aperture_plus=_aperture(g["aperture_plus"]),
            aperture_minus=_aperture(g["aperture_minus"]),
            boundary_spec=dict(g["boundary"]),
        )

    @property
    def exponents(self) -> ScalingExponents:
        return ScalingExponents(**self.data["exponents"])

    @property
    def materials(self) -> MaterialFields:
        m = self.data["materials"]
        base = default_materials()
        subs = {}
        for sub in ("plus", "minus", "fracture"):
            changes = {k: build_field(spec) for k, spec in m.get(sub, {}).items()}
            subs[sub] = replace(getattr(base, sub), **changes)
        return MaterialFields(gravity=tuple(m.get("gravity", base.gravity)), **subs)

    def biot_config(self, epsilon: float | None = None) -> BiotRunConfig:
        d = self.data["discretization"]
        try:
            return BiotRunConfig(
                exponents=self.exponents,
                epsilon=self.data["epsilon"] if epsilon is None else epsilon,
                materials=self.materials,
                geometry=self.geometry,
                h=d["h"],
                T=d["T"],
                dt=d["dt"],
                n_layers=d["n_layers"],
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def to_json(self) -> str:
        return json.dumps(self.data, indent=2, sort_keys=True)


def parse_config(raw: dict) -> RunConfig:
    data = normalize(raw)
    cfg = RunConfig(data)
    cfg.geometry  # surface geometry errors at parse time
    try:
        cfg.materials
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad materials block: {exc}") from exc
    return cfg


def load_config(path) -> RunConfig:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
    return parse_config(raw)
