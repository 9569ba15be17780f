"""Discrete model of a complete manifold with a codimension-2 corner.

The lattice is split into four product regions:

* ``x0``       -- an arbitrary weighted graph (the compact corner piece),
  carrying two marked boundary layers that are copies of the compact
  cross sections ``M1`` and ``M2``.  The layers intersect in a marked
  copy of the corner cross section ``Y``.
* ``cyl1``     -- ``L1`` translated copies of the ``M1`` graph along the
  ``u1`` axis.
* ``cyl2``     -- ``L2`` copies of the ``M2`` graph along ``u2``.
* ``quadrant`` -- ``L1 x L2`` fibers of dimension ``y_dim``; the operator
  there is the exact Kronecker sum of two Dirichlet second differences
  and the fiber operator ``delta_y``.

Sites are enumerated region-major in the order above; within a region the
ordering is lexicographic in the printed index tuple.  Grid coordinates are
``u = h * (index + 1)``; the value ``u = 0`` belongs to the neighbouring
region across the interface (boundary layer or cylinder), which is how the
regions are glued.  Truncation at the far ends is Dirichlet.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "GraphSpec",
    "CornerModel",
    "RegionTag",
    "GeometryError",
    "build_model",
    "model_from_json",
    "model_summary",
    "classify_site",
    "site_index",
    "exhaustion_mask",
]

REGION_X0 = 0
REGION_CYL1 = 1
REGION_CYL2 = 2
REGION_QUADRANT = 3

_REGION_NAMES = ("x0", "cyl1", "cyl2", "quadrant")


class GeometryError(ValueError):
    """Raised for inconsistent geometry configurations."""


@dataclass(frozen=True)
class GraphSpec:
    """A finite weighted graph with an optional on-site potential.

    ``edges`` rows are ``(i, j, w)`` with ``i != j`` and ``w > 0``; each
    undirected edge appears once.  The graph Laplacian built from it is
    positive semidefinite; the potential may have any sign (attractive
    defect wells are negative entries).
    """

    n_sites: int
    edges: np.ndarray  # shape (m, 3) float rows (i, j, w)
    potential: np.ndarray  # shape (n_sites,)

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=float).reshape(-1, 3)
        object.__setattr__(self, "edges", edges)
        pot = np.asarray(self.potential, dtype=float)
        object.__setattr__(self, "potential", pot)
        if self.n_sites < 1:
            raise GeometryError("graph must have at least one site")
        if pot.shape != (self.n_sites,):
            raise GeometryError("potential length does not match site count")
        if edges.size:
            ii = edges[:, 0].astype(int)
            jj = edges[:, 1].astype(int)
            ww = edges[:, 2]
            if np.any((ii < 0) | (ii >= self.n_sites) | (jj < 0) | (jj >= self.n_sites)):
                raise GeometryError("edge endpoint out of range")
            if np.any(ii == jj):
                raise GeometryError("self-loops are not allowed")
            if np.any(ww < 0):
                raise GeometryError("negative edge weight")
            key = np.minimum(ii, jj) * self.n_sites + np.maximum(ii, jj)
            if len(np.unique(key)) != len(key):
                raise GeometryError("duplicate edge (weights must be given once)")

    def laplacian_triplets(self):
        """COO triplets (rows, cols, vals) of graph Laplacian + potential."""
        rows = [np.arange(self.n_sites)]
        cols = [np.arange(self.n_sites)]
        vals = [self.potential.copy()]
        if self.edges.size:
            i = self.edges[:, 0].astype(int)
            j = self.edges[:, 1].astype(int)
            w = self.edges[:, 2]
            deg = np.zeros(self.n_sites)
            np.add.at(deg, i, w)
            np.add.at(deg, j, w)
            rows += [np.arange(self.n_sites), i, j]
            cols += [np.arange(self.n_sites), j, i]
            vals += [deg, -w, -w]
        return np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)


@dataclass(frozen=True)
class RegionTag:
    """Region membership of one global site.

    ``indices`` holds, per region:

    * ``x0``:       ``(x0 site,)``
    * ``cyl1``:     ``(u1 index, m1 site)``
    * ``cyl2``:     ``(u2 index, m2 site)``
    * ``quadrant``: ``(u1 index, u2 index, fiber index)``
    """

    region: str
    indices: tuple[int, ...]

    def u_coordinates(self, h: float) -> tuple[float | None, float | None]:
        """Continuous coordinates ``u_i = h * (index + 1)``; None if absent."""
        if self.region == "cyl1":
            return h * (self.indices[0] + 1), None
        if self.region == "cyl2":
            return None, h * (self.indices[0] + 1)
        if self.region == "quadrant":
            return h * (self.indices[0] + 1), h * (self.indices[1] + 1)
        return None, None


@dataclass(frozen=True)
class CornerModel:
    """Validated discrete corner geometry; immutable after build.

    ``m1_layer``/``m2_layer`` list the ``x0`` sites forming the marked
    boundary layers (position ``a`` of ``m1_layer`` is glued to site ``a``
    of the ``m1`` graph).  ``y_layer`` of each cylinder graph lists the
    sites glued to the quadrant fiber, in fiber order.
    """

    y_dim: int
    delta_y: np.ndarray
    x0: GraphSpec
    m1: GraphSpec
    m2: GraphSpec
    m1_layer: np.ndarray  # x0 sites, length n(m1)
    m2_layer: np.ndarray
    y_layer_1: np.ndarray  # m1 sites, length y_dim
    y_layer_2: np.ndarray
    h: float
    box_lengths: tuple[int, int]
    # cached per-site coordinate arrays, filled in __post_init__
    region_code: np.ndarray = field(repr=False, default=None)
    iu1: np.ndarray = field(repr=False, default=None)
    iu2: np.ndarray = field(repr=False, default=None)
    fiber: np.ndarray = field(repr=False, default=None)

    # ---- layout -----------------------------------------------------
    @property
    def L1(self) -> int:
        return self.box_lengths[0]

    @property
    def L2(self) -> int:
        return self.box_lengths[1]

    @property
    def n_x0(self) -> int:
        return self.x0.n_sites

    @property
    def offset_cyl1(self) -> int:
        return self.n_x0

    @property
    def offset_cyl2(self) -> int:
        return self.n_x0 + self.L1 * self.m1.n_sites

    @property
    def offset_quadrant(self) -> int:
        return self.offset_cyl2 + self.L2 * self.m2.n_sites

    @property
    def n_sites(self) -> int:
        return self.offset_quadrant + self.L1 * self.L2 * self.y_dim

    def cyl1_index(self, i1, m):
        return self.offset_cyl1 + i1 * self.m1.n_sites + m

    def cyl2_index(self, i2, m):
        return self.offset_cyl2 + i2 * self.m2.n_sites + m

    def quadrant_index(self, i1, i2, y):
        return self.offset_quadrant + (i1 * self.L2 + i2) * self.y_dim + y

    def __post_init__(self):
        _validate_model(self)
        region = np.empty(self.n_sites, dtype=np.int8)
        iu1 = np.full(self.n_sites, -1, dtype=np.int32)
        iu2 = np.full(self.n_sites, -1, dtype=np.int32)
        fib = np.full(self.n_sites, -1, dtype=np.int32)
        region[: self.n_x0] = REGION_X0
        sl = np.s_[self.offset_cyl1 : self.offset_cyl2]
        region[sl] = REGION_CYL1
        idx = np.arange(self.offset_cyl2 - self.offset_cyl1)
        iu1[sl] = idx // self.m1.n_sites
        sl = np.s_[self.offset_cyl2 : self.offset_quadrant]
        region[sl] = REGION_CYL2
        idx = np.arange(self.offset_quadrant - self.offset_cyl2)
        iu2[sl] = idx // self.m2.n_sites
        sl = np.s_[self.offset_quadrant : self.n_sites]
        region[sl] = REGION_QUADRANT
        idx = np.arange(self.n_sites - self.offset_quadrant)
        iu1[sl] = idx // (self.L2 * self.y_dim)
        iu2[sl] = (idx // self.y_dim) % self.L2
        fib[sl] = idx % self.y_dim
        object.__setattr__(self, "region_code", region)
        object.__setattr__(self, "iu1", iu1)
        object.__setattr__(self, "iu2", iu2)
        object.__setattr__(self, "fiber", fib)

    # ---- coordinates ------------------------------------------------
    def u1_values(self) -> np.ndarray:
        """Per-site u1 coordinate; NaN where undefined."""
        out = np.where(self.iu1 >= 0, self.h * (self.iu1 + 1.0), np.nan)
        return out

    def u2_values(self) -> np.ndarray:
        return np.where(self.iu2 >= 0, self.h * (self.iu2 + 1.0), np.nan)


def _validate_model(model: CornerModel) -> None:
    y = model.y_dim
    if y < 1:
        raise GeometryError("y_dim must be >= 1")
    dy = np.asarray(model.delta_y, dtype=float)
    if dy.shape != (y, y):
        raise GeometryError("delta_y must be y_dim x y_dim")
    if np.max(np.abs(dy - dy.T)) > 1e-12:
        raise GeometryError("delta_y must be Hermitian")
    evals = np.linalg.eigvalsh(dy)
    if evals.min() < -1e-10:
        raise GeometryError("delta_y must be positive semidefinite")
    if model.box_lengths[0] < 1 or model.box_lengths[1] < 1:
        raise GeometryError("box lengths must be positive")
    if model.h <= 0:
        raise GeometryError("lattice spacing must be positive")
    for layer, graph, name in (
        (model.m1_layer, model.m1, "m1"),
        (model.m2_layer, model.m2, "m2"),
    ):
        if layer.shape != (graph.n_sites,):
            raise GeometryError(f"x0 {name} layer must list one x0 site per {name} site")
        if np.any((layer < 0) | (layer >= model.x0.n_sites)):
            raise GeometryError(f"{name} layer site out of range in x0")
        if len(np.unique(layer)) != len(layer):
            raise GeometryError(f"{name} layer must be injective")
    for ylayer, graph, name in (
        (model.y_layer_1, model.m1, "m1"),
        (model.y_layer_2, model.m2, "m2"),
    ):
        if ylayer.shape != (y,):
            raise GeometryError(f"{name} y-layer must have y_dim sites")
        if np.any((ylayer < 0) | (ylayer >= graph.n_sites)):
            raise GeometryError(f"{name} y-layer site out of range")
        if len(np.unique(ylayer)) != len(ylayer):
            raise GeometryError(f"{name} y-layer must be injective")
    # the two boundary layers must meet exactly in the marked Y copy
    corner_1 = model.m1_layer[model.y_layer_1]
    corner_2 = model.m2_layer[model.y_layer_2]
    if not np.array_equal(corner_1, corner_2):
        raise GeometryError("x0 copies of Y via m1 and m2 layers disagree")


def build_model(config: dict) -> CornerModel:
    """Build and validate a :class:`CornerModel` from a config mapping.

    Schema (all keys required unless noted)::

        y_dim         int
        delta_y       y_dim x y_dim nested list, row-major
        h             float > 0
        box_lengths   [L1, L2]
        x0:           {n_sites, edges: [[i, j, w], ...],
                       potential (optional), m1_layer, m2_layer}
        m1, m2:       {n_sites, edges, potential (optional), y_layer}
    """

    def graph(section) -> GraphSpec:
        n = int(section["n_sites"])
        edges = np.asarray(section.get("edges", []), dtype=float).reshape(-1, 3)
        pot = np.asarray(section.get("potential", np.zeros(n)), dtype=float)
        return GraphSpec(n_sites=n, edges=edges, potential=pot)

    try:
        x0 = graph(config["x0"])
        m1 = graph(config["m1"])
        m2 = graph(config["m2"])
        model = CornerModel(
            y_dim=int(config["y_dim"]),
            delta_y=np.asarray(config["delta_y"], dtype=float),
            x0=x0,
            m1=m1,
            m2=m2,
            m1_layer=np.asarray(config["x0"]["m1_layer"], dtype=int),
            m2_layer=np.asarray(config["x0"]["m2_layer"], dtype=int),
            y_layer_1=np.asarray(config["m1"]["y_layer"], dtype=int),
            y_layer_2=np.asarray(config["m2"]["y_layer"], dtype=int),
            h=float(config["h"]),
            box_lengths=(int(config["box_lengths"][0]), int(config["box_lengths"][1])),
        )
    except KeyError as exc:
        raise GeometryError(f"missing geometry key: {exc}") from exc
    return model


def model_from_json(path) -> CornerModel:
    with open(Path(path)) as fh:
        return build_model(json.load(fh))


def model_summary(model: CornerModel) -> dict:
    """JSON-serializable summary of the site layout."""
    return {
        "y_dim": model.y_dim,
        "h": model.h,
        "box_lengths": list(model.box_lengths),
        "n_sites": model.n_sites,
        "region_sizes": {
            "x0": model.n_x0,
            "cyl1": model.L1 * model.m1.n_sites,
            "cyl2": model.L2 * model.m2.n_sites,
            "quadrant": model.L1 * model.L2 * model.y_dim,
        },
        "offsets": {
            "x0": 0,
            "cyl1": model.offset_cyl1,
            "cyl2": model.offset_cyl2,
            "quadrant": model.offset_quadrant,
        },
        "enumeration": "region-major: x0, cyl1 (u1-major), cyl2 (u2-major), "
        "quadrant (u1, u2, fiber lexicographic)",
    }


def classify_site(model: CornerModel, idx: int) -> RegionTag:
    """Map a global site index to its unique region tag."""
    if idx < 0 or idx >= model.n_sites:
        raise IndexError(f"site index {idx} out of range [0, {model.n_sites})")
    if idx < model.offset_cyl1:
        return RegionTag("x0", (idx,))
    if idx < model.offset_cyl2:
        rel = idx - model.offset_cyl1
        return RegionTag("cyl1", divmod(rel, model.m1.n_sites))
    if idx < model.offset_quadrant:
        rel = idx - model.offset_cyl2
        return RegionTag("cyl2", divmod(rel, model.m2.n_sites))
    rel = idx - model.offset_quadrant
    i1, r = divmod(rel, model.L2 * model.y_dim)
    i2, yy = divmod(r, model.y_dim)
    return RegionTag("quadrant", (i1, i2, yy))


def site_index(model: CornerModel, tag: RegionTag) -> int:
    """Inverse of :func:`classify_site`."""
    if tag.region == "x0":
        return tag.indices[0]
    if tag.region == "cyl1":
        return model.cyl1_index(*tag.indices)
    if tag.region == "cyl2":
        return model.cyl2_index(*tag.indices)
    if tag.region == "quadrant":
        return model.quadrant_index(*tag.indices)
    raise GeometryError(f"unknown region {tag.region!r}")


def exhaustion_mask(model: CornerModel, T: float) -> np.ndarray:
    """Indicator of the compact exhaustion piece X_T as a 0/1 site field.

    A site belongs to X_T when every u coordinate it carries is <= T;
    x0 sites always belong.  T past the box edge clamps to the full mask,
    monotone in T by construction.
    """
    if T < 0:
        raise GeometryError("exhaustion parameter T must be >= 0")
    u1 = model.h * (model.iu1 + 1.0)
    u2 = model.h * (model.iu2 + 1.0)
    ok1 = (model.iu1 < 0) | (u1 <= T)
    ok2 = (model.iu2 < 0) | (u2 <= T)
    return (ok1 & ok2).astype(float)
