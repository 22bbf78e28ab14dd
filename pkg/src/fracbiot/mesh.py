"""Structured triangulation of two bulk squares glued to a rescaled fracture strip.

Every subdomain lives in its own transformed coordinate frame:

* plus bulk   ``(0, 1) x (0, 1)``
* minus bulk  ``(-1, 0) x (0, 1)``
* fracture    ``{(s, y) : -a_minus(y) < s < a_plus(y)}``

The fracture strip therefore overlaps the bulk squares as a point set; the
three pieces are glued only through the interface pairings, which identify the
fracture vertices on ``s = a_plus(y)`` (resp. ``s = -a_minus(y)``) with the
plus (resp. minus) bulk vertices on ``x = 0``.  The unit normal is ``N = e_1``,
so the first coordinate of a fracture vertex is the normal coordinate ``s``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

PLUS, MINUS, FRACTURE = 0, 1, 2
SUBDOMAIN_NAMES = ("plus", "minus", "fracture")

DIRICHLET_FLOW = "dirichlet_flow"
NEUMANN_FLOW = "neumann_flow"
GAMMA_PLUS_SIDE = "gamma_plus_side"
GAMMA_MINUS_SIDE = "gamma_minus_side"

# external boundary segments that may carry a flow condition
BOUNDARY_SEGMENTS = (
    "plus_right",
    "plus_bottom",
    "plus_top",
    "minus_left",
    "minus_bottom",
    "minus_top",
    "fracture_bottom",
    "fracture_top",
)

NORMAL = np.array([1.0, 0.0])


@dataclass(frozen=True)
class PiecewiseLinear:
    """Piecewise-linear function of the tangential coordinate ``y``."""

    knots: tuple[float, ...]
    values: tuple[float, ...]

    @classmethod
    def constant(cls, value: float) -> "PiecewiseLinear":
        return cls((0.0, 1.0), (float(value), float(value)))

    @classmethod
    def from_pairs(cls, pairs) -> "PiecewiseLinear":
        ys, vals = zip(*sorted((float(y), float(v)) for y, v in pairs))
        return cls(tuple(ys), tuple(vals))

    def __call__(self, y):
        return np.interp(y, self.knots, self.values)


def default_boundary_spec() -> dict[str, str]:
    spec = {name: "neumann" for name in BOUNDARY_SEGMENTS}
    spec["plus_right"] = "dirichlet"
    spec["minus_left"] = "dirichlet"
    return spec


@dataclass(frozen=True)
class Geometry:
    """Transformed geometry: bulk rectangles, the interface and the apertures."""

    aperture_plus: PiecewiseLinear = field(default_factory=lambda: PiecewiseLinear.constant(0.5))
    aperture_minus: PiecewiseLinear = field(default_factory=lambda: PiecewiseLinear.constant(0.5))
    boundary_spec: Mapping[str, str] = field(default_factory=default_boundary_spec)
    bulk_extent_plus: tuple[float, float, float, float] = (0.0, 1.0, 0.0, 1.0)
    bulk_extent_minus: tuple[float, float, float, float] = (-1.0, 0.0, 0.0, 1.0)

    def __post_init__(self):
        unknown = set(self.boundary_spec) - set(BOUNDARY_SEGMENTS)
        if unknown:
            raise ValueError(f"unknown boundary segments: {sorted(unknown)}")
        for name, kind in self.boundary_spec.items():
            if kind not in ("dirichlet", "neumann"):
                raise ValueError(f"boundary kind for {name} must be dirichlet or neumann, got {kind!r}")
        if self.bulk_extent_plus != (0.0, 1.0, 0.0, 1.0) or self.bulk_extent_minus != (-1.0, 0.0, 0.0, 1.0):
            raise ValueError("only the unit bulk squares abutting x = 0 are supported")

    def boundary_kind(self, segment: str) -> str:
        return self.boundary_spec.get(segment, "neumann")

    def aperture(self, y):
        return self.aperture_plus(y) + self.aperture_minus(y)

    def dirichlet_sides(self) -> set[str]:
        """Bulk sides that carry at least one flow-Dirichlet segment."""
        sides = set()
        for name, kind in self.boundary_spec.items():
            if kind == "dirichlet" and not name.startswith("fracture"):
                sides.add(name.split("_")[0])
        return sides

    def fracture_has_dirichlet(self) -> bool:
        return any(self.boundary_kind(s) == "dirichlet" for s in ("fracture_bottom", "fracture_top"))


@dataclass(frozen=True, eq=False)
class FracturedMesh:
    geometry: Geometry
    vertices: np.ndarray  # (nv, 2), in the owning subdomain's frame
    vertex_subdomain: np.ndarray  # (nv,)
    triangles: np.ndarray  # (nt, 3)
    triangle_subdomain: np.ndarray  # (nt,)
    facets: np.ndarray  # (nf, 2)
    facet_tags: tuple[str, ...]
    facet_segments: tuple[str, ...]
    gamma_y: np.ndarray  # (ny + 1,)
    gamma_plus: np.ndarray  # bulk-plus vertex ids on x = 0, ordered in y
    gamma_minus: np.ndarray
    fracture_plus: np.ndarray  # fracture vertex ids on s = a_plus(y)
    fracture_minus: np.ndarray
    normal_columns: np.ndarray  # (ny + 1, ns + 1) fracture vertex ids ordered in s
    column_lengths: np.ndarray  # (ny + 1, ns) segment lengths along each column
    gamma_boundary_tags: tuple[str, str]  # (bottom endpoint, top endpoint)
    n_cells: int
    n_layers: int

    # derived lookups ------------------------------------------------------
    @property
    def interface_pairing_plus(self) -> dict[int, int]:
        return dict(zip(self.fracture_plus.tolist(), self.gamma_plus.tolist()))

    @property
    def interface_pairing_minus(self) -> dict[int, int]:
        return dict(zip(self.fracture_minus.tolist(), self.gamma_minus.tolist()))

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_gamma(self) -> int:
        return len(self.gamma_y)

    @property
    def apertures(self) -> np.ndarray:
        """Total aperture at every gamma vertex, summed from the column segments."""
        return self.column_lengths.sum(axis=1)

    @property
    def gamma_weights(self) -> np.ndarray:
        """Trapezoidal weights in ``y`` attached to each gamma vertex / normal column."""
        dy = np.diff(self.gamma_y)
        w = np.zeros_like(self.gamma_y)
        w[:-1] += dy / 2
        w[1:] += dy / 2
        return w

    def subdomain_triangles(self, subdomain: int) -> np.ndarray:
        return np.flatnonzero(self.triangle_subdomain == subdomain)

    def triangle_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def facets_with_tag(self, tag: str) -> np.ndarray:
        return np.array([i for i, t in enumerate(self.facet_tags) if t == tag], dtype=int)

    def vertices_on_segment(self, segment: str) -> np.ndarray:
        idx = [i for i, s in enumerate(self.facet_segments) if s == segment]
        if not idx:
            return np.zeros(0, dtype=int)
        return np.unique(self.facets[idx].ravel())

    def external_vertices(self) -> np.ndarray:
        idx = [i for i, s in enumerate(self.facet_segments) if s in BOUNDARY_SEGMENTS]
        return np.unique(self.facets[idx].ravel())

    def flow_dirichlet_vertices(self) -> np.ndarray:
        idx = self.facets_with_tag(DIRICHLET_FLOW)
        if len(idx) == 0:
            return np.zeros(0, dtype=int)
        return np.unique(self.facets[idx].ravel())


def _grid_triangles(ids: np.ndarray, flip: np.ndarray) -> np.ndarray:
    """Split the cells of a vertex-id grid ``ids[i, j]`` into two triangles each.

    Every triangle keeps exactly one edge on a line of constant ``j`` (constant
    tangential coordinate), which keeps the normal-derivative forms column-local.
    ``flip[i, j]`` selects the anti-diagonal for cell ``(i, j)``.
    """
    v00 = ids[:-1, :-1]
    v10 = ids[1:, :-1]
    v01 = ids[:-1, 1:]
    v11 = ids[1:, 1:]
    flip = np.asarray(flip)[..., None]
    a = np.where(flip, np.stack([v00, v10, v01], -1), np.stack([v00, v10, v11], -1))
    b = np.where(flip, np.stack([v10, v11, v01], -1), np.stack([v00, v11, v01], -1))
    return np.concatenate([a.reshape(-1, 3), b.reshape(-1, 3)])


def _orient(tris: np.ndarray, pts: np.ndarray) -> np.ndarray:
    p = pts[tris]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    neg = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0] < 0
    tris = tris.copy()
    tris[neg] = tris[neg][:, [0, 2, 1]]
    return tris


def build_mesh(geometry: Geometry, h: float, n_layers: int | None = None) -> FracturedMesh:
    """Triangulate the three subdomains with target edge length ``h``.

    The bulk squares get ``n = round(1/h)`` cells per direction.  The fracture
    is a tensor grid of the same ``n + 1`` normal columns times ``n_layers``
    normal layers (even, so that ``s = 0`` is a grid line for symmetric
    apertures), mapped column by column from the reference strip.
    """
    if not h > 0:
        raise ValueError(f"mesh size must be positive, got {h}")
    n = max(1, int(round(1.0 / h)))
    ys = np.linspace(0.0, 1.0, n + 1)
    a_plus = geometry.aperture_plus(ys)
    a_minus = geometry.aperture_minus(ys)
    total = a_plus + a_minus
    if np.any(total <= 0):
        raise ValueError("degenerate aperture: a_plus + a_minus must be positive along the interface")
    if n_layers is None:
        n_layers = max(2, 2 * int(round(total.max() / (2 * h))))
    if n_layers < 1:
        raise ValueError("need at least one normal layer")

    xs_plus = np.linspace(0.0, 1.0, n + 1)
    xs_minus = np.linspace(-1.0, 0.0, n + 1)

    points, labels = [], []
    offset = 0

    def add_block(px: np.ndarray, py: np.ndarray, label: int) -> np.ndarray:
        nonlocal offset
        ids = offset + np.arange(px.size).reshape(px.shape)
        points.append(np.stack([px.ravel(), py.ravel()], -1))
        labels.append(np.full(px.size, label))
        offset += px.size
        return ids

    gx, gy = np.meshgrid(xs_plus, ys, indexing="ij")
    ids_plus = add_block(gx, gy, PLUS)
    gx, gy = np.meshgrid(xs_minus, ys, indexing="ij")
    ids_minus = add_block(gx, gy, MINUS)
    xi = np.linspace(0.0, 1.0, n_layers + 1)
    s = -a_minus[None, :] + xi[:, None] * total[None, :]
    ids_frac = add_block(s, np.broadcast_to(ys, s.shape), FRACTURE)

    pts = np.concatenate(points)
    vsub = np.concatenate(labels)

    # mirror the diagonal direction across x = 0 (s = 0 in the fracture)
    cx_plus = 0.5 * (xs_plus[:-1] + xs_plus[1:])
    cx_minus = 0.5 * (xs_minus[:-1] + xs_minus[1:])
    cxi = 0.5 * (xi[:-1] + xi[1:]) - 0.5
    tri_blocks = [
        (_grid_triangles(ids_plus, np.broadcast_to((cx_plus < 0)[:, None], (n, n))), PLUS),
        (_grid_triangles(ids_minus, np.broadcast_to((cx_minus < 0)[:, None], (n, n))), MINUS),
        (_grid_triangles(ids_frac, np.broadcast_to((cxi < 0)[:, None], (n_layers, n))), FRACTURE),
    ]
    tris = np.concatenate([_orient(t, pts) for t, _ in tri_blocks])
    tsub = np.concatenate([np.full(len(t), lab) for t, lab in tri_blocks])

    facets, tags, segments = [], [], []

    def add_facets(line: np.ndarray, tag: str, segment: str):
        for a, b in zip(line[:-1], line[1:]):
            facets.append((int(a), int(b)))
            tags.append(tag)
            segments.append(segment)

    def flow_tag(segment: str) -> str:
        return DIRICHLET_FLOW if geometry.boundary_kind(segment) == "dirichlet" else NEUMANN_FLOW

    add_facets(ids_plus[-1, :], flow_tag("plus_right"), "plus_right")
    add_facets(ids_plus[:, 0], flow_tag("plus_bottom"), "plus_bottom")
    add_facets(ids_plus[:, -1], flow_tag("plus_top"), "plus_top")
    add_facets(ids_minus[0, :], flow_tag("minus_left"), "minus_left")
    add_facets(ids_minus[:, 0], flow_tag("minus_bottom"), "minus_bottom")
    add_facets(ids_minus[:, -1], flow_tag("minus_top"), "minus_top")
    add_facets(ids_frac[:, 0], flow_tag("fracture_bottom"), "fracture_bottom")
    add_facets(ids_frac[:, -1], flow_tag("fracture_top"), "fracture_top")
    add_facets(ids_plus[0, :], GAMMA_PLUS_SIDE, "plus_gamma")
    add_facets(ids_frac[-1, :], GAMMA_PLUS_SIDE, "fracture_plus")
    add_facets(ids_minus[-1, :], GAMMA_MINUS_SIDE, "minus_gamma")
    add_facets(ids_frac[0, :], GAMMA_MINUS_SIDE, "fracture_minus")

    columns = ids_frac.T.copy()  # (ny + 1, ns + 1), ordered from s = -a_minus to a_plus
    lengths = np.diff(pts[columns][:, :, 0], axis=1)

    # an endpoint of gamma is Dirichlet iff it closes a Dirichlet fracture end
    gamma_tags = (
        "dirichlet" if geometry.boundary_kind("fracture_bottom") == "dirichlet" else "neumann",
        "dirichlet" if geometry.boundary_kind("fracture_top") == "dirichlet" else "neumann",
    )

    return FracturedMesh(
        geometry=geometry,
        vertices=pts,
        vertex_subdomain=vsub,
        triangles=tris,
        triangle_subdomain=tsub,
        facets=np.array(facets, dtype=int),
        facet_tags=tuple(tags),
        facet_segments=tuple(segments),
        gamma_y=ys,
        gamma_plus=ids_plus[0, :].copy(),
        gamma_minus=ids_minus[-1, :].copy(),
        fracture_plus=ids_frac[-1, :].copy(),
        fracture_minus=ids_frac[0, :].copy(),
        normal_columns=columns,
        column_lengths=lengths,
        gamma_boundary_tags=gamma_tags,
        n_cells=n,
        n_layers=n_layers,
    )


def barycentric(mesh: FracturedMesh, point) -> np.ndarray:
    """Barycentric coordinates of ``point`` with respect to every triangle."""
    p = mesh.vertices[mesh.triangles]
    x = np.asarray(point, dtype=float)
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    r = x - p[:, 0]
    l1 = (r[:, 0] * d2[:, 1] - r[:, 1] * d2[:, 0]) / det
    l2 = (d1[:, 0] * r[:, 1] - d1[:, 1] * r[:, 0]) / det
    return np.stack([1.0 - l1 - l2, l1, l2], -1)


def locate(mesh: FracturedMesh, point, subdomain: int | str | None = None, tol: float = 1e-12):
    """Find a triangle containing ``point``.

    Because the fracture frame overlaps the bulk frames, ``subdomain`` selects
    the frame the point is expressed in.  Without it the plus bulk, minus bulk
    and fracture are searched in that order.  Returns ``(triangle, bary)`` or
    ``None`` when the point lies outside.
    """
    if isinstance(subdomain, str):
        subdomain = SUBDOMAIN_NAMES.index(subdomain)
    lam = barycentric(mesh, point)
    inside = np.all(lam >= -tol, axis=1)
    order = (PLUS, MINUS, FRACTURE) if subdomain is None else (subdomain,)
    for sub in order:
        hits = np.flatnonzero(inside & (mesh.triangle_subdomain == sub))
        if len(hits):
            t = int(hits[0])
            return t, lam[t]
    return None


def dump_mesh(mesh: FracturedMesh, path) -> None:
    """Write vertex, triangle and tag tables as plain text."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# vertices {mesh.n_vertices}\n# id subdomain x y\n")
        for i, ((x, y), sub) in enumerate(zip(mesh.vertices, mesh.vertex_subdomain)):
            fh.write(f"{i} {SUBDOMAIN_NAMES[sub]} {x:.17g} {y:.17g}\n")
        fh.write(f"# triangles {len(mesh.triangles)}\n# id v0 v1 v2 subdomain\n")
        for i, (tri, sub) in enumerate(zip(mesh.triangles, mesh.triangle_subdomain)):
            fh.write(f"{i} {tri[0]} {tri[1]} {tri[2]} {SUBDOMAIN_NAMES[sub]}\n")
        fh.write(f"# facets {len(mesh.facets)}\n# v0 v1 tag segment\n")
        for (a, b), tag, seg in zip(mesh.facets, mesh.facet_tags, mesh.facet_segments):
            fh.write(f"{a} {b} {tag} {seg}\n")
        fh.write("# interface pairing (fracture vertex -> bulk vertex)\n")
        for side, frac, bulk in (("plus", mesh.fracture_plus, mesh.gamma_plus), ("minus", mesh.fracture_minus, mesh.gamma_minus)):
            for a, b in zip(frac, bulk):
                fh.write(f"{side} {a} {b}\n")
        fh.write(f"# gamma endpoints: bottom={mesh.gamma_boundary_tags[0]} top={mesh.gamma_boundary_tags[1]}\n")
