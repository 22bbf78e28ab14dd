"""Coefficient fields for the three subdomains.

A field is any callable ``field(points, t=0.0)`` returning an array whose
leading axis matches ``points``.  The small classes below are the built-in
coefficient specs (constant, two-layer in the normal coordinate, affine in the
tangential coordinate, piecewise constant in ``y``) and can be composed.
Points are always given in the owning subdomain's transformed frame.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Any, Callable

import numpy as np

Field = Callable[..., np.ndarray]


def isotropic_stiffness(lam: float, mu: float) -> np.ndarray:
    """Fourth-order isotropic elasticity tensor in two dimensions."""
    eye = np.eye(2)
    return (
        lam * np.einsum("ij,kl->ijkl", eye, eye)
        + mu * (np.einsum("ik,jl->ijkl", eye, eye) + np.einsum("il,jk->ijkl", eye, eye))
    )


@dataclass(frozen=True)
class Constant:
    value: Any

    def __call__(self, points, t=0.0):
        v = np.asarray(self.value, dtype=float)
        return np.broadcast_to(v, (len(points),) + v.shape).copy()


@dataclass(frozen=True)
class TwoLayer:
    """``below`` where the first coordinate is < ``split``, ``above`` otherwise."""

    below: Field
    above: Field
    split: float = 0.0

    def __call__(self, points, t=0.0):
        points = np.asarray(points, dtype=float)
        lo = self.below(points, t)
        hi = self.above(points, t)
        mask = points[:, 0] < self.split
        return np.where(mask.reshape((-1,) + (1,) * (lo.ndim - 1)), lo, hi)


@dataclass(frozen=True)
class AffineInY:
    """Linear interpolation between ``at_bottom`` (y = 0) and ``at_top`` (y = 1)."""

    at_bottom: Any
    at_top: Any

    def __call__(self, points, t=0.0):
        y = np.asarray(points, dtype=float)[:, 1]
        a = np.asarray(self.at_bottom, dtype=float)
        b = np.asarray(self.at_top, dtype=float)
        w = y.reshape((-1,) + (1,) * a.ndim)
        return a + w * (b - a)


@dataclass(frozen=True)
class PiecewiseConstantY:
    """Tabulated values on the bins ``[breaks[i], breaks[i+1])`` of the tangential coordinate."""

    breaks: tuple[float, ...]
    values: tuple[Any, ...]

    def __call__(self, points, t=0.0):
        y = np.asarray(points, dtype=float)[:, 1]
        idx = np.clip(np.searchsorted(self.breaks, y, side="right") - 1, 0, len(self.values) - 1)
        return np.asarray(self.values, dtype=float)[idx]


@dataclass(frozen=True)
class LinearInTime:
    """``base(points) * (1 + rate * t)``."""

    base: Field
    rate: float

    def __call__(self, points, t=0.0):
        return self.base(points, t) * (1.0 + self.rate * t)


@dataclass(frozen=True)
class Scaled:
    base: Field
    factor: float

    def __call__(self, points, t=0.0):
        return self.factor * self.base(points, t)


@dataclass(frozen=True)
class SubdomainMaterial:
    stiffness: Field
    conductivity: Field
    storage: Field
    biot: Field
    body_force: Field
    source: Field
    initial_pressure: Field


@dataclass(frozen=True)
class MaterialFields:
    plus: SubdomainMaterial
    minus: SubdomainMaterial
    fracture: SubdomainMaterial
    gravity: tuple[float, float] = (0.0, 0.0)

    def of(self, subdomain: int) -> SubdomainMaterial:
        return (self.plus, self.minus, self.fracture)[subdomain]

    def with_fracture(self, **changes) -> "MaterialFields":
        return replace(self, fracture=replace(self.fracture, **changes))

    def with_bulk(self, **changes) -> "MaterialFields":
        return replace(self, plus=replace(self.plus, **changes), minus=replace(self.minus, **changes))


def _zero_vector():
    return Constant((0.0, 0.0))


def _zero_scalar():
    return Constant(0.0)


@dataclass(frozen=True)
class _Cosine:
    """Default initial pressure head.

    Vanishes on the outer vertical sides and equals ``amplitude`` on the
    interface, so that a constant fracture initial value is compatible with
    the bulk traces (needed by the ideal-conduit scaling of ∇p₀).
    """

    amplitude: float = 1.0

    def __call__(self, points, t=0.0):
        p = np.asarray(points, dtype=float)
        x, y = p[:, 0], p[:, 1]
        bump = 0.5 * np.sin(np.pi * y) * np.sin(0.5 * np.pi * x) ** 2
        return self.amplitude * np.cos(0.5 * np.pi * x) * (1.0 + bump)


def default_materials() -> MaterialFields:
    """The ε-independent reference data used by the default runs.

    Bulk: isotropic stiffness (λ = μ = 1), unit conductivity, storage and
    Biot tensor.  Fracture: softer isotropic stiffness, an anisotropic
    conductivity with a tangential-normal cross term, block-diagonal Biot
    tensor, and active body force and fluid source.
    """
    bulk = SubdomainMaterial(
        stiffness=Constant(isotropic_stiffness(1.0, 1.0)),
        conductivity=Constant(np.eye(2)),
        storage=Constant(1.0),
        biot=Constant(np.eye(2)),
        body_force=Constant((0.0, -0.5)),
        source=_zero_scalar(),
        initial_pressure=_Cosine(),
    )
    frac = SubdomainMaterial(
        stiffness=Constant(isotropic_stiffness(2.0, 0.5)),
        conductivity=Constant([[1.0, 0.25], [0.25, 0.5]]),
        storage=Constant(1.0),
        biot=Constant(np.diag([0.8, 0.6])),
        body_force=Constant((1.0, 0.5)),
        source=Constant(1.0),
        initial_pressure=Constant(1.0),
    )
    return MaterialFields(plus=bulk, minus=bulk, fracture=frac, gravity=(0.0, -0.5))


def zero_data(materials: MaterialFields) -> MaterialFields:
    """Same coefficients with all sources, initial data and gravity removed."""
    off = dict(body_force=_zero_vector(), source=_zero_scalar(), initial_pressure=_zero_scalar())
    return MaterialFields(
        plus=replace(materials.plus, **off),
        minus=replace(materials.minus, **off),
        fracture=replace(materials.fracture, **off),
        gravity=(0.0, 0.0),
    )


def sourceless(materials: MaterialFields) -> MaterialFields:
    """Remove body forces, fluid sources and gravity, keep the initial pressure."""
    off = dict(body_force=_zero_vector(), source=_zero_scalar())
    return MaterialFields(
        plus=replace(materials.plus, **off),
        minus=replace(materials.minus, **off),
        fracture=replace(materials.fracture, **off),
        gravity=(0.0, 0.0),
    )
