"""Ready-made geometry configurations.

The reference model is the workhorse of the acceptance suite: a 4-node
circle fiber, three small compact graphs with attractive defect wells
(one interior well on x0 deep enough to bind a genuine discrete state of
the full operator, and one well on each cylinder cross section so both
channels carry bound states), and 96 x 96 boxes at unit spacing.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import build_model

__all__ = [
    "minimal_config",
    "mini_config",
    "reference_config",
    "FactorSpec",
    "product_config",
    "factor_index_map",
]


def _ring_edges(nodes, w=1.0):
    n = len(nodes)
    return [[nodes[i], nodes[(i + 1) % n], w] for i in range(n)]


def circle_laplacian(n: int) -> np.ndarray:
    mat = 2.0 * np.eye(n)
    for i in range(n):
        mat[i, (i + 1) % n] -= 1.0
        mat[(i + 1) % n, i] -= 1.0
    return mat


def minimal_config() -> dict:
    """Degenerate one-fiber model: single-site compact graphs, 2x2 box."""
    return {
        "y_dim": 1,
        "delta_y": [[0.0]],
        "h": 1.0,
        "box_lengths": [2, 2],
        "x0": {"n_sites": 1, "edges": [], "m1_layer": [0], "m2_layer": [0]},
        "m1": {"n_sites": 1, "edges": [], "y_layer": [0]},
        "m2": {"n_sites": 1, "edges": [], "y_layer": [0]},
    }


def mini_config(L=10, y_dim=2, well_1=-1.0, well_2=-0.8, well_x0=-2.0, h=1.0) -> dict:
    """Small model for dense-oracle tests (N ~ a few hundred)."""
    if y_dim == 1:
        delta_y = [[0.0]]
        y_layer = [0]
        m_n = 2
        m_edges = [[0, 1, 1.0]]
        well_site = 1
    else:
        delta_y = circle_laplacian(y_dim) if y_dim > 2 else [[1.0, -1.0], [-1.0, 1.0]]
        y_layer = list(range(y_dim))
        m_n = y_dim + 1
        m_edges = _ring_edges(list(range(y_dim))) if y_dim > 2 else [[0, 1, 1.0]]
        m_edges = m_edges + [[0, y_dim, 1.0]]
        well_site = y_dim
    n_x0 = m_n + 2
    x0_edges = [[i, i + 1, 1.0] for i in range(n_x0 - 1)]
    pot_x0 = [0.0] * n_x0
    pot_x0[-1] = well_x0
    m1_layer = list(range(m_n))
    m2_layer = list(range(m_n))  # layers coincide beyond Y; legal (injective each)
    pot1 = [0.0] * m_n
    pot1[well_site] = well_1
    pot2 = [0.0] * m_n
    pot2[well_site] = well_2
    return {
        "y_dim": y_dim,
        "delta_y": np.asarray(delta_y).tolist(),
        "h": h,
        "box_lengths": [L, L],
        "x0": {
            "n_sites": n_x0,
            "edges": x0_edges,
            "potential": pot_x0,
            "m1_layer": m1_layer,
            "m2_layer": m2_layer,
        },
        "m1": {"n_sites": m_n, "edges": m_edges, "potential": pot1, "y_layer": y_layer},
        "m2": {"n_sites": m_n, "edges": m_edges, "potential": pot2, "y_layer": y_layer},
    }


def reference_config(L=96, well_1=-1.65, well_2=-1.55, well_x0=-2.5) -> dict:
    """Acceptance-scale model: circle fiber on 4 nodes, 96 x 96 boxes."""
    m_edges = _ring_edges([0, 1, 2, 3]) + [[0, 4, 1.0], [2, 5, 1.0], [4, 6, 1.0], [5, 6, 1.0]]
    x0_edges = (
        _ring_edges([0, 1, 2, 3])
        + [[0, 4, 1.0], [2, 5, 1.0], [4, 6, 1.0], [5, 6, 1.0]]  # collar of the m1 layer
        + [[1, 7, 1.0], [3, 8, 1.0], [7, 9, 1.0], [8, 9, 1.0]]  # collar of the m2 layer
        + [[6, 10, 1.0], [9, 10, 1.0], [10, 11, 1.0]]  # interior
    )
    pot_x0 = [0.0] * 12
    pot_x0[11] = well_x0
    pot1 = [0.0] * 7
    pot1[6] = well_1
    pot2 = [0.0] * 7
    pot2[6] = well_2
    return {
        "y_dim": 4,
        "delta_y": circle_laplacian(4).tolist(),
        "h": 1.0,
        "box_lengths": [L, L],
        "x0": {
            "n_sites": 12,
            "edges": x0_edges,
            "potential": pot_x0,
            "m1_layer": [0, 1, 2, 3, 4, 5, 6],
            "m2_layer": [0, 1, 2, 3, 7, 8, 9],
        },
        "m1": {"n_sites": 7, "edges": m_edges, "potential": pot1, "y_layer": [0, 1, 2, 3]},
        "m2": {"n_sites": 7, "edges": m_edges, "potential": pot2, "y_layer": [0, 1, 2, 3]},
    }


# ---------------------------------------------------------------------
# exact product configurations (Example-1 style)


@dataclass(frozen=True)
class FactorSpec:
    """A cylinder-ended factor graph: compact part + truncated half-line end.

    ``y_sites`` are the compact sites the cylinder is glued to (fiber
    order); ``y_edges`` is the fiber graph replicated along the cylinder.
    """

    n_compact: int
    edges: list = field(default_factory=list)
    potential: list | None = None
    y_sites: tuple[int, ...] = (0,)
    y_edges: list = field(default_factory=list)
    L: int = 16

    @property
    def y_dim(self) -> int:
        return len(self.y_sites)

    @property
    def dim(self) -> int:
        return self.n_compact + self.L * self.y_dim

    def pot(self) -> np.ndarray:
        if self.potential is None:
            return np.zeros(self.n_compact)
        return np.asarray(self.potential, dtype=float)


def _fiber_laplacian(spec: FactorSpec) -> np.ndarray:
    mat = np.zeros((spec.y_dim, spec.y_dim))
    for i, j, w in spec.y_edges:
        mat[i, i] += w
        mat[j, j] += w
        mat[i, j] -= w
        mat[j, i] -= w
    return mat


def product_config(f1: FactorSpec, f2: FactorSpec, h: float = 1.0) -> dict:
    """Corner geometry of the exact product of two cylinder-ended factors.

    Site conventions: x0 (i, j) -> i * n2 + j; m1 slice (a, j) -> a * n2 + j
    with a indexing f1.y_sites; m2 slice (i, b) -> i * y2 + b; fiber
    (a, b) -> a * y2 + b.  The assembled operator equals
    F1 (x) I + I (x) F2 under :func:`factor_index_map`.
    """
    n1, n2 = f1.n_compact, f2.n_compact
    y1, y2 = f1.y_dim, f2.y_dim
    v1, v2 = f1.pot(), f2.pot()

    x0_edges = []
    for i, j, w in f1.edges:
        for b in range(n2):
            x0_edges.append([int(i) * n2 + b, int(j) * n2 + b, w])
    for i, j, w in f2.edges:
        for a in range(n1):
            x0_edges.append([a * n2 + int(i), a * n2 + int(j), w])
    x0_pot = (v1[:, None] + v2[None, :]).ravel().tolist()

    m1_edges = []
    for i, j, w in f1.y_edges:
        for b in range(n2):
            m1_edges.append([int(i) * n2 + b, int(j) * n2 + b, w])
    for i, j, w in f2.edges:
        for a in range(y1):
            m1_edges.append([a * n2 + int(i), a * n2 + int(j), w])
    m1_pot = np.tile(v2, y1).tolist()

    m2_edges = []
    for i, j, w in f1.edges:
        for b in range(y2):
            m2_edges.append([int(i) * y2 + b, int(j) * y2 + b, w])
    for i, j, w in f2.y_edges:
        for a in range(n1):
            m2_edges.append([a * y2 + int(i), a * y2 + int(j), w])
    m2_pot = np.repeat(v1, y2).tolist()

    delta_y = np.kron(_fiber_laplacian(f1), np.eye(y2)) + np.kron(np.eye(y1), _fiber_laplacian(f2))

    m1_layer = [ys1 * n2 + j for ys1 in f1.y_sites for j in range(n2)]
    m2_layer = [i * n2 + ys2 for i in range(n1) for ys2 in f2.y_sites]
    y_layer_1 = [a * n2 + f2.y_sites[b] for a in range(y1) for b in range(y2)]
    y_layer_2 = [f1.y_sites[a] * y2 + b for a in range(y1) for b in range(y2)]

    return {
        "y_dim": y1 * y2,
        "delta_y": delta_y.tolist(),
        "h": h,
        "box_lengths": [f1.L, f2.L],
        "x0": {
            "n_sites": n1 * n2,
            "edges": x0_edges,
            "potential": x0_pot,
            "m1_layer": m1_layer,
            "m2_layer": m2_layer,
        },
        "m1": {"n_sites": y1 * n2, "edges": m1_edges, "potential": m1_pot, "y_layer": y_layer_1},
        "m2": {"n_sites": n1 * y2, "edges": m2_edges, "potential": m2_pot, "y_layer": y_layer_2},
    }


def factor_index_map(f1: FactorSpec, f2: FactorSpec) -> np.ndarray:
    """perm[global corner site] = (factor-1 site) * dim(F2) + (factor-2 site).

    Factor sites: compact part first, then cylinder (axial major, fiber
    minor) -- the layout of the factor operator built by the oracle.
    """
    model = build_model(product_config(f1, f2))
    n1, n2 = f1.n_compact, f2.n_compact
    y1, y2 = f1.y_dim, f2.y_dim
    d2 = f2.dim
    perm = np.empty(model.n_sites, dtype=np.int64)
    for i in range(n1):
        for j in range(n2):
            perm[i * n2 + j] = i * d2 + j
    for i1 in range(f1.L):
        for a in range(y1):
            for j in range(n2):
                site = model.cyl1_index(i1, a * n2 + j)
                perm[site] = (n1 + i1 * y1 + a) * d2 + j
    for i2 in range(f2.L):
        for i in range(n1):
            for b in range(y2):
                site = model.cyl2_index(i2, i * y2 + b)
                perm[site] = i * d2 + (n2 + i2 * y2 + b)
    for i1 in range(f1.L):
        for i2 in range(f2.L):
            for a in range(y1):
                for b in range(y2):
                    site = model.quadrant_index(i1, i2, a * y2 + b)
                    perm[site] = (n1 + i1 * y1 + a) * d2 + (n2 + i2 * y2 + b)
    return perm
