"""Sparse Hermitian operator assembly for the corner lattice.

All operators are reported in units of 1/h^2 via the standard 3-point
second difference (2/h^2 diagonal, -1/h^2 off-diagonal).  Dirichlet
truncation keeps the full 2/h^2 diagonal at the far walls; the interfaces
between regions are glued with the same stencil, so the operator
restricted to the cyl_k + quadrant block is exactly
``b_k (x) I + I (x) H^(k)``, and the quadrant block alone is the exact
Kronecker sum ``b1 (+) b2 (+) delta_y``.

Conjugate-operator conventions: ``A := [H, r^2]`` is stored as the raw
matrix commutator (anti-Hermitian).  The Hermitian commutator used by the
Mourre machinery is ``i[H, A_dil]`` for the dilation-type generator
``A_dil = (i/2) A``; concretely ``double_commutator`` returns
``-1/2 (HA - AH)``, which on the free 1D interior reduces to the stencil
of ``4 b`` up to O(h^2).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .geometry import CornerModel, GeometryError

__all__ = [
    "SparseHermitian",
    "CutoffProfile",
    "assemble_b",
    "assemble_H",
    "cross_section_operator",
    "assemble_channel",
    "channel_region_sites",
    "z_dim",
    "kappa",
    "cutoff_kappa",
    "radius_squared",
    "conjugate_A",
    "double_commutator",
    "first_difference",
    "export_triplets",
    "load_triplets",
]

HERMITICITY_TOL = 1e-12


@dataclass
class SparseHermitian:
    """CSR matrix with a symmetry flag and cached Gershgorin bounds."""

    matrix: sp.csr_matrix
    hermitian: bool = True
    _bounds: tuple[float, float] | None = field(default=None, repr=False)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def nnz(self) -> int:
        return self.matrix.nnz

    def __matmul__(self, other):
        return self.matrix @ other

    def toarray(self):
        return self.matrix.toarray()

    def hermiticity_defect(self) -> float:
        """Max-norm of M - M*; anti-Hermitian matrices use M + M*."""
        d = self.matrix - self.matrix.conjugate().T
        if not self.hermitian:
            d = self.matrix + self.matrix.conjugate().T
        return np.abs(d.data).max() if d.nnz else 0.0

    def spectral_bounds(self) -> tuple[float, float]:
        """Safe enclosing interval for the spectrum (Gershgorin discs)."""
        if self._bounds is None:
            m = self.matrix.tocsr()
            diag = m.diagonal().real
            absm = sp.csr_matrix(
                (np.abs(m.data), m.indices, m.indptr), shape=m.shape
            )
            radii = np.asarray(absm.sum(axis=1)).ravel() - np.abs(diag)
            self._bounds = (float((diag - radii).min()), float((diag + radii).max()))
        return self._bounds


def _check_hermitian(mat: sp.spmatrix, name: str) -> None:
    d = mat - mat.conjugate().T
    defect = np.abs(d.data).max() if d.nnz else 0.0
    if defect > HERMITICITY_TOL:
        raise AssertionError(f"{name} assembly lost Hermiticity ({defect:.2e})")


def assemble_b(L: int, h: float) -> SparseHermitian:
    """Dirichlet second difference on L interior grid points.

    Eigenpairs are the sine modes with eigenvalues
    (2 - 2 cos(m pi / (L+1))) / h^2.
    """
    if L < 1:
        raise GeometryError("half-line grid needs at least one site")
    main = np.full(L, 2.0 / h**2)
    off = np.full(L - 1, -1.0 / h**2)
    mat = sp.diags([off, main, off], [-1, 0, 1], format="csr")
    return SparseHermitian(mat)


def b_eigenvalues(L: int, h: float) -> np.ndarray:
    m = np.arange(1, L + 1)
    return (2.0 - 2.0 * np.cos(m * np.pi / (L + 1))) / h**2


def _coo(parts, shape):
    rows = np.concatenate([p[0] for p in parts])
    cols = np.concatenate([p[1] for p in parts])
    vals = np.concatenate([p[2] for p in parts])
    return sp.coo_matrix((vals, (rows, cols)), shape=shape).tocsr()


def _shift(triplets, row_off, col_off):
    r, c, v = triplets
    return r + row_off, c + col_off, v


def _kron_sum_quadrant(model: CornerModel) -> sp.csr_matrix:
    b1 = assemble_b(model.L1, model.h).matrix
    b2 = assemble_b(model.L2, model.h).matrix
    iy = sp.identity(model.y_dim, format="csr")
    i1 = sp.identity(model.L1, format="csr")
    i2 = sp.identity(model.L2, format="csr")
    dy = sp.csr_matrix(np.asarray(model.delta_y, dtype=float))
    return (
        sp.kron(sp.kron(b1, i2), iy)
        + sp.kron(sp.kron(i1, b2), iy)
        + sp.kron(sp.kron(i1, i2), dy)
    ).tocsr()


def _cyl_block(model: CornerModel, which: int) -> sp.csr_matrix:
    """Axial Dirichlet stencil (x) I + I (x) slice operator, plus the
    +1/h^2 diagonal on y-layer sites from the edge into the quadrant."""
    graph = model.m1 if which == 1 else model.m2
    L = model.L1 if which == 1 else model.L2
    ylayer = model.y_layer_1 if which == 1 else model.y_layer_2
    n = graph.n_sites
    r, c, v = graph.laplacian_triplets()
    slice_op = sp.coo_matrix((v, (r, c)), shape=(n, n)).tocsr()
    seam = np.zeros(n)
    seam[ylayer] = 1.0 / model.h**2
    slice_op = slice_op + sp.diags(seam)
    baxis = assemble_b(L, model.h).matrix
    return (sp.kron(baxis, sp.identity(n)) + sp.kron(sp.identity(L), slice_op)).tocsr()


def assemble_H(model: CornerModel) -> SparseHermitian:
    """Assemble the full lattice operator on all four regions."""
    N = model.n_sites
    w = 1.0 / model.h**2
    parts = []

    r, c, v = model.x0.laplacian_triplets()
    parts.append((r, c, v))

    cyl1 = _cyl_block(model, 1).tocoo()
    parts.append(_shift((cyl1.row, cyl1.col, cyl1.data), model.offset_cyl1, model.offset_cyl1))
    cyl2 = _cyl_block(model, 2).tocoo()
    parts.append(_shift((cyl2.row, cyl2.col, cyl2.data), model.offset_cyl2, model.offset_cyl2))

    quad = _kron_sum_quadrant(model).tocoo()
    parts.append(_shift((quad.row, quad.col, quad.data), model.offset_quadrant, model.offset_quadrant))

    # x0 boundary layers -> first cylinder slices.  The cylinder-side
    # diagonal already carries this edge through the Dirichlet axial
    # stencil; only the x0-side diagonal needs the edge contribution.
    for layer, graph, index in (
        (model.m1_layer, model.m1, model.cyl1_index),
        (model.m2_layer, model.m2, model.cyl2_index),
    ):
        x0_sites = layer
        cyl_sites = np.array([index(0, m) for m in range(graph.n_sites)])
        ones = np.full(graph.n_sites, w)
        parts.append((x0_sites, cyl_sites, -ones))
        parts.append((cyl_sites, x0_sites, -ones))
        parts.append((x0_sites, x0_sites, ones))

    # cylinder y-layers -> quadrant walls.  Quadrant diagonals carry the
    # edge via the Kronecker-sum Dirichlet stencil; the cylinder-side
    # diagonal bump was added in _cyl_block.
    ys = np.arange(model.y_dim)
    for i1 in range(model.L1):
        cyl_sites = model.cyl1_index(i1, model.y_layer_1[ys])
        quad_sites = model.quadrant_index(i1, 0, ys)
        ones = np.full(model.y_dim, w)
        parts.append((cyl_sites, quad_sites, -ones))
        parts.append((quad_sites, cyl_sites, -ones))
    for i2 in range(model.L2):
        cyl_sites = model.cyl2_index(i2, model.y_layer_2[ys])
        quad_sites = model.quadrant_index(0, i2, ys)
        ones = np.full(model.y_dim, w)
        parts.append((cyl_sites, quad_sites, -ones))
        parts.append((quad_sites, cyl_sites, -ones))

    parts = [(np.asarray(r, dtype=np.int64), np.asarray(c, dtype=np.int64), np.asarray(v, dtype=float)) for r, c, v in parts]
    mat = _coo(parts, (N, N))
    _check_hermitian(mat, "H")
    return SparseHermitian(mat)


def z_dim(model: CornerModel, k: int) -> int:
    """Dimension of the Z_k cross-section grid (compact part + cylinder)."""
    if k == 1:
        return model.m1.n_sites + model.L2 * model.y_dim
    if k == 2:
        return model.m2.n_sites + model.L1 * model.y_dim
    raise GeometryError("cross-section index must be 1 or 2")


def cross_section_operator(model: CornerModel, k: int) -> SparseHermitian:
    """H^(k): the operator on the cylinder-end cross section.

    k = 1, 2 give the Z_k operators (compact graph glued to a truncated
    Y-cylinder); k = 3 returns delta_y itself.  Z_k layout: compact sites
    first, then cylinder sites (axial index major, fiber minor).
    """
    if k == 3:
        return SparseHermitian(sp.csr_matrix(np.asarray(model.delta_y, dtype=float)))
    if k not in (1, 2):
        raise GeometryError("channel index must be 1, 2 or 3")
    graph = model.m1 if k == 1 else model.m2
    ylayer = model.y_layer_1 if k == 1 else model.y_layer_2
    Lcyl = model.L2 if k == 1 else model.L1
    n = graph.n_sites
    w = 1.0 / model.h**2
    dim = n + Lcyl * model.y_dim

    r, c, v = graph.laplacian_triplets()
    seam = np.zeros(n)
    seam[ylayer] = w
    parts = [(r, c, v), (np.arange(n), np.arange(n), seam)]

    bcyl = assemble_b(Lcyl, model.h).matrix
    dy = sp.csr_matrix(np.asarray(model.delta_y, dtype=float))
    cylop = (sp.kron(bcyl, sp.identity(model.y_dim)) + sp.kron(sp.identity(Lcyl), dy)).tocoo()
    parts.append(_shift((cylop.row, cylop.col, cylop.data), n, n))

    ys = np.arange(model.y_dim)
    ones = np.full(model.y_dim, w)
    cyl0 = n + ys
    parts.append((ylayer[ys], cyl0, -ones))
    parts.append((cyl0, ylayer[ys], -ones))

    parts = [(np.asarray(r, dtype=np.int64), np.asarray(c, dtype=np.int64), np.asarray(v, dtype=float)) for r, c, v in parts]
    mat = _coo(parts, (dim, dim))
    _check_hermitian(mat, f"H^({k})")
    return SparseHermitian(mat)


def assemble_channel(model: CornerModel, k: int) -> SparseHermitian:
    """Channel operator H_k on its tensor grid.

    H_k = b_k (x) I + I (x) H^(k) for k = 1, 2 on grid(R+) (x) grid(Z_k);
    H_3 = b1 (+) b2 (+) delta_y on the quadrant grid.
    """
    if k == 3:
        return SparseHermitian(_kron_sum_quadrant(model))
    hk = cross_section_operator(model, k).matrix
    L = model.L1 if k == 1 else model.L2
    bk = assemble_b(L, model.h).matrix
    mat = (sp.kron(bk, sp.identity(hk.shape[0])) + sp.kron(sp.identity(L), hk)).tocsr()
    return SparseHermitian(mat)


def channel_region_sites(model: CornerModel, k: int) -> np.ndarray:
    """Global site indices of the channel-k region, in channel ordering.

    Channel ordering is (axial index) major, Z_k site minor for k = 1, 2
    (Z_k sites: compact graph then cylinder), and the plain quadrant
    ordering for k = 3.  H restricted to these rows and columns equals the
    assembled channel operator entrywise.
    """
    if k == 3:
        return model.offset_quadrant + np.arange(model.L1 * model.L2 * model.y_dim)
    if k == 1:
        zd = z_dim(model, 1)
        out = np.empty(model.L1 * zd, dtype=np.int64)
        for i1 in range(model.L1):
            base = i1 * zd
            out[base : base + model.m1.n_sites] = model.cyl1_index(i1, np.arange(model.m1.n_sites))
            quad = model.quadrant_index(i1, 0, 0) + np.arange(model.L2 * model.y_dim)
            out[base + model.m1.n_sites : base + zd] = quad
        return out
    if k == 2:
        zd = z_dim(model, 2)
        out = np.empty(model.L2 * zd, dtype=np.int64)
        ys = np.arange(model.y_dim)
        for i2 in range(model.L2):
            base = i2 * zd
            out[base : base + model.m2.n_sites] = model.cyl2_index(i2, np.arange(model.m2.n_sites))
            for i1 in range(model.L1):
                out[base + model.m2.n_sites + i1 * model.y_dim + ys] = model.quadrant_index(i1, i2, ys)
        return out
    raise GeometryError("channel index must be 1, 2 or 3")


# ---------------------------------------------------------------------
# cutoffs, r^2, conjugate operator


def kappa(u) -> np.ndarray:
    """Smooth cutoff: 0 for u <= 2, 1 for u > 3, C^2 smoothstep between.

    The rise uses 6 s^5 - 15 s^4 + 10 s^3 with s = u - 2; only the
    support is dictated by the construction, the profile is a choice.
    """
    u = np.asarray(u, dtype=float)
    s = np.clip(u - 2.0, 0.0, 1.0)
    return s**3 * (6.0 * s**2 - 15.0 * s + 10.0)


@dataclass(frozen=True)
class CutoffProfile:
    """kappa sampled on a coordinate table (rise fixed on [2, 3])."""

    rise: tuple[float, float] = (2.0, 3.0)

    def __call__(self, u):
        return kappa(u)

    def table(self, u_values) -> np.ndarray:
        return kappa(np.asarray(u_values, dtype=float))


def cutoff_kappa(model: CornerModel, axis: int) -> SparseHermitian:
    """Diagonal field kappa(u_axis), extended by zero off its regions."""
    if axis not in (1, 2):
        raise GeometryError("cutoff axis must be 1 or 2")
    iu = model.iu1 if axis == 1 else model.iu2
    vals = np.where(iu >= 0, kappa(model.h * (iu + 1.0)), 0.0)
    return SparseHermitian(sp.diags(vals, format="csr"))


def radius_squared(model: CornerModel) -> SparseHermitian:
    """r^2 = kappa_1 u_1^2 + kappa_2 u_2^2 as a diagonal field."""
    u1 = model.h * (model.iu1 + 1.0)
    u2 = model.h * (model.iu2 + 1.0)
    vals = np.where(model.iu1 >= 0, kappa(u1) * u1**2, 0.0)
    vals = vals + np.where(model.iu2 >= 0, kappa(u2) * u2**2, 0.0)
    return SparseHermitian(sp.diags(vals, format="csr"))


def conjugate_A(model: CornerModel, H: SparseHermitian | None = None) -> SparseHermitian:
    """Raw commutator A = [H, r^2]; anti-Hermitian sparse matrix."""
    if H is None:
        H = assemble_H(model)
    r2 = radius_squared(model).matrix
    A = (H.matrix @ r2 - r2 @ H.matrix).tocsr()
    return SparseHermitian(A, hermitian=False)


def double_commutator(
    model: CornerModel,
    H: SparseHermitian | None = None,
    A: SparseHermitian | None = None,
) -> SparseHermitian:
    """Hermitian Mourre observable -1/2 [H, [H, r^2]].

    Equals i[H, A_dil] for the self-adjoint dilation-type generator
    A_dil = (i/2)[H, r^2]; on the free 1D interior the rows reproduce
    the 4 b stencil to O(h^2).
    """
    if H is None:
        H = assemble_H(model)
    if A is None:
        A = conjugate_A(model, H)
    M = (-0.5) * (H.matrix @ A.matrix - A.matrix @ H.matrix)
    M = M.tocsr()
    _check_hermitian(M, "i[H,A]")
    return SparseHermitian(M)


def first_difference(model: CornerModel, axis: int) -> sp.csr_matrix:
    """Forward first difference along u_axis, one-sided at interfaces.

    Rows act on sites carrying the coordinate; the forward neighbour at
    the truncation wall is the Dirichlet ghost (zero), and interface rows
    keep the one-sided difference inside their own region.
    """
    if axis not in (1, 2):
        raise GeometryError("difference axis must be 1 or 2")
    N = model.n_sites
    rows, cols, vals = [], [], []
    w = 1.0 / model.h

    def add(row, col_next):
        rows.append(row)
        cols.append(row)
        vals.append(-w)
        if col_next is not None:
            rows.append(row)
            cols.append(col_next)
            vals.append(w)

    if axis == 1:
        for i1 in range(model.L1):
            nxt = i1 + 1 if i1 + 1 < model.L1 else None
            for m in range(model.m1.n_sites):
                add(model.cyl1_index(i1, m), None if nxt is None else model.cyl1_index(nxt, m))
        for i1 in range(model.L1):
            nxt = i1 + 1 if i1 + 1 < model.L1 else None
            for i2 in range(model.L2):
                for y in range(model.y_dim):
                    add(
                        model.quadrant_index(i1, i2, y),
                        None if nxt is None else model.quadrant_index(nxt, i2, y),
                    )
    else:
        for i2 in range(model.L2):
            nxt = i2 + 1 if i2 + 1 < model.L2 else None
            for m in range(model.m2.n_sites):
                add(model.cyl2_index(i2, m), None if nxt is None else model.cyl2_index(nxt, m))
        for i1 in range(model.L1):
            for i2 in range(model.L2):
                nxt = i2 + 1 if i2 + 1 < model.L2 else None
                for y in range(model.y_dim):
                    add(
                        model.quadrant_index(i1, i2, y),
                        None if nxt is None else model.quadrant_index(i1, nxt, y),
                    )
    return sp.coo_matrix((vals, (rows, cols)), shape=(N, N)).tocsr()


# ---------------------------------------------------------------------
# sparse triplet text format


def export_triplets(op: SparseHermitian, path) -> None:
    """Write 'dim nnz' header then rows 'i j re im'."""
    coo = op.matrix.tocoo()
    with open(path, "w") as fh:
        fh.write(f"{op.dim} {coo.nnz}\n")
        data = np.asarray(coo.data, dtype=complex)
        for i, j, v in zip(coo.row, coo.col, data):
            fh.write(f"{i} {j} {v.real:.17e} {v.imag:.17e}\n")


def load_triplets(path) -> SparseHermitian:
    with open(path) as fh:
        dim, nnz = (int(tok) for tok in fh.readline().split())
        rows = np.empty(nnz, dtype=np.int64)
        cols = np.empty(nnz, dtype=np.int64)
        vals = np.empty(nnz, dtype=complex)
        for n in range(nnz):
            i, j, re, im = fh.readline().split()
            rows[n], cols[n], vals[n] = int(i), int(j), float(re) + 1j * float(im)
    if np.abs(vals.imag).max() == 0.0:
        vals = vals.real
    mat = sp.coo_matrix((vals, (rows, cols)), shape=(dim, dim)).tocsr()
    d = mat - mat.conjugate().T
    herm = (np.abs(d.data).max() if d.nnz else 0.0) <= HERMITICITY_TOL
    return SparseHermitian(mat, hermitian=herm)
