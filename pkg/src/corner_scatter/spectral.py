"""Channel spectra, thresholds, spectral windows and Mourre certificates.

The threshold set is assembled from the flagged bound states of the two
cylinder cross-section operators together with the full fiber spectrum.
On a truncated grid every eigenvalue is nominally pure point, so a
"genuine" channel bound state is an eigenvalue strictly below the fiber
continuum onset whose eigenvector decays by a large factor along the
cylinder; embedded eigenvalues above the onset are excluded, and every
report records that choice.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as sla

from .geometry import CornerModel
from .operators import SparseHermitian, cross_section_operator, z_dim

__all__ = [
    "ChannelSpectrum",
    "WindowBasis",
    "MourreCertificate",
    "SpectralError",
    "lanczos_extremal",
    "channel_eigs",
    "compute_channel_spectrum",
    "thresholds",
    "theta",
    "mu_tilde",
    "spectral_projection",
    "mourre_check",
    "export_spectrum_csv",
]

DENSE_CUTOFF = 2000
ORTHONORMALITY_TOL = 1e-10
RESIDUAL_TOL = 1e-8
DECAY_FLAG_RATIO = 1e3


class SpectralError(RuntimeError):
    """Eigensolver failure or budget exhaustion."""


def lanczos_extremal(matvec, dim, count, n_iter=300, seed=7, tol=1e-10):
    """Lowest eigenpairs via Lanczos with full reorthogonalization.

    Deterministic for a fixed seed.  Raises :class:`SpectralError` when the
    wanted residuals have not converged within the iteration budget.
    """
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(dim)
    v /= np.linalg.norm(v)
    V = np.zeros((dim, min(n_iter, dim)))
    alphas, betas = [], []
    V[:, 0] = v
    m = 0
    for j in range(V.shape[1]):
        w = matvec(V[:, j])
        alpha = V[:, j] @ w
        w = w - alpha * V[:, j]
        if j > 0:
            w = w - betas[-1] * V[:, j - 1]
        # full reorthogonalization against the whole basis
        w = w - V[:, : j + 1] @ (V[:, : j + 1].T @ w)
        alphas.append(alpha)
        beta = np.linalg.norm(w)
        m = j + 1
        if j + 1 == V.shape[1] or beta < 1e-14:
            break
        betas.append(beta)
        V[:, j + 1] = w / beta
    T = np.diag(alphas) + np.diag(betas[: m - 1], 1) + np.diag(betas[: m - 1], -1)
    evals, evecs = np.linalg.eigh(T)
    vecs = V[:, :m] @ evecs[:, :count]
    vals = evals[:count]
    resid = np.array([np.linalg.norm(matvec(vecs[:, i]) - vals[i] * vecs[:, i]) for i in range(len(vals))])
    scale = max(abs(evals[0]), abs(evals[-1]), 1.0)
    if np.any(resid > 1e-6 * scale):
        raise SpectralError(
            f"Lanczos did not converge {count} pairs in {n_iter} iterations "
            f"(worst residual {resid.max():.2e})"
        )
    return vals, vecs, resid


def _dense_eigs(mat, count):
    evals, evecs = np.linalg.eigh(mat.toarray())
    count = min(count, len(evals))
    return evals[:count], evecs[:, :count]


def _cylinder_decay_ratio(model: CornerModel, k: int, vec: np.ndarray) -> float:
    """Norm ratio of the first to the last cylinder slice of a Z_k vector."""
    n = (model.m1 if k == 1 else model.m2).n_sites
    L = model.L2 if k == 1 else model.L1
    cyl = vec[n:].reshape(L, model.y_dim)
    head = np.linalg.norm(np.concatenate([vec[:n], cyl[0]]))
    tail = np.linalg.norm(cyl[-1])
    return head / max(tail, 1e-300)


def channel_eigs(model: CornerModel, k: int, count: int = 8, n_iter: int = 400):
    """Lowest eigenpairs of H^(k); dense below DENSE_CUTOFF, else Lanczos.

    Returns (values, vectors, residuals, decay_ratios, bound_flags).
    For k = 3 all fiber eigenpairs are returned and flags are all True.
    """
    op = cross_section_operator(model, k)
    if k == 3:
        evals, evecs = np.linalg.eigh(np.asarray(model.delta_y, dtype=float))
        resid = np.zeros(len(evals))
        return evals, evecs, resid, np.full(len(evals), np.inf), np.ones(len(evals), bool)
    dim = op.dim
    count = min(count, dim)
    if dim <= DENSE_CUTOFF:
        evals, evecs = _dense_eigs(op.matrix, count)
        resid = np.array(
            [np.linalg.norm(op.matrix @ evecs[:, i] - evals[i] * evecs[:, i]) for i in range(count)]
        )
    else:
        evals, evecs, resid = lanczos_extremal(lambda x: op.matrix @ x, dim, count, n_iter=n_iter)
    onset = np.linalg.eigvalsh(np.asarray(model.delta_y, dtype=float))[0]
    ratios = np.array([_cylinder_decay_ratio(model, k, evecs[:, i]) for i in range(count)])
    flags = (evals < onset - 1e-9) & (ratios >= DECAY_FLAG_RATIO)
    return evals, evecs, resid, ratios, flags


@dataclass
class ChannelSpectrum:
    """Channel spectral data: bound states of H^(1), H^(2), fiber pairs, thresholds."""

    values: dict  # k -> eigenvalues (k in 1, 2, 3)
    vectors: dict  # k -> eigenvector columns
    residuals: dict
    decay_ratios: dict
    bound_flags: dict
    thresholds: np.ndarray = field(default=None)
    embedded_policy: str = "flagged bound states only; embedded eigenvalues excluded"

    @property
    def sigma_min(self) -> float:
        return float(self.thresholds[0])

    def bound_states(self, k: int):
        """(eigenvalue, vector) pairs flagged as genuine bound states."""
        flags = self.bound_flags[k]
        return self.values[k][flags], self.vectors[k][:, flags]

    def fiber_values(self) -> np.ndarray:
        return self.values[3]


def thresholds(spectrum_values: dict, bound_flags: dict) -> np.ndarray:
    """tau(H): flagged pp eigenvalues of H^(1), H^(2) plus all fiber values."""
    taus = [spectrum_values[3]]
    for k in (1, 2):
        taus.append(spectrum_values[k][bound_flags[k]])
    return np.sort(np.concatenate(taus))


def compute_channel_spectrum(model: CornerModel, count: int = 8) -> ChannelSpectrum:
    values, vectors, residuals, ratios, flags = {}, {}, {}, {}, {}
    for k in (1, 2, 3):
        v, w, r, d, f = channel_eigs(model, k, count=count)
        values[k], vectors[k], residuals[k], ratios[k], flags[k] = v, w, r, d, f
    spec = ChannelSpectrum(values, vectors, residuals, ratios, flags)
    spec.thresholds = thresholds(values, flags)
    return spec


def theta(taus: np.ndarray | ChannelSpectrum, lam: float) -> float:
    """Distance from lam down to the nearest strictly smaller threshold.

    Zero below the bottom threshold.  At lam exactly equal to the bottom
    threshold the strictly-smaller set is empty; the continuous-from-above
    extension theta = 0 is returned there.
    """
    if isinstance(taus, ChannelSpectrum):
        taus = taus.thresholds
    taus = np.asarray(taus)
    if lam < taus[0]:
        return 0.0
    below = taus[taus < lam]
    if below.size == 0:
        return 0.0
    return float(lam - below.max())


def mu_tilde(spectrum: ChannelSpectrum, gamma0: float) -> float:
    """First fiber eigenvalue strictly above gamma0."""
    mus = spectrum.fiber_values()
    above = mus[mus > gamma0 + 1e-12]
    if above.size == 0:
        raise SpectralError("no fiber eigenvalue above gamma0")
    return float(above[0])


@dataclass
class WindowBasis:
    """Orthonormal eigenvectors of H spanning a spectral window."""

    interval: tuple[float, float]
    eigenvalues: np.ndarray
    vectors: np.ndarray  # (N, m)
    residuals: np.ndarray

    @property
    def rank(self) -> int:
        return len(self.eigenvalues)

    def project(self, psi: np.ndarray) -> np.ndarray:
        return self.vectors @ (self.vectors.conj().T @ psi)


def spectral_projection(
    H: SparseHermitian, interval: tuple[float, float], budget: int = 64
) -> WindowBasis:
    """Orthogonal projector onto the eigenvectors of H inside the interval.

    Shift-invert Lanczos around the window center (deterministic start
    vector); dense solve below DENSE_CUTOFF.  Raises when the window holds
    more eigenvalues than the basis budget.
    """
    lo, hi = interval
    if not lo < hi:
        raise SpectralError("empty spectral interval")
    mat = H.matrix
    n = mat.shape[0]
    if n <= DENSE_CUTOFF:
        evals, evecs = np.linalg.eigh(mat.toarray())
        mask = (evals >= lo) & (evals <= hi)
        if mask.sum() > budget:
            raise SpectralError(f"{mask.sum()} eigenvalues in window exceed budget {budget}")
        vals, vecs = evals[mask], evecs[:, mask]
    else:
        center = 0.5 * (lo + hi)
        k = min(budget, n - 2)
        v0 = np.ones(n) / np.sqrt(n)
        vals, vecs = sla.eigsh(mat, k=k, sigma=center, which="LM", v0=v0)
        order = np.argsort(vals)
        vals, vecs = vals[order], vecs[:, order]
        mask = (vals >= lo) & (vals <= hi)
        if mask.sum() == k:
            raise SpectralError(
                f"window [{lo}, {hi}] may hold more than the basis budget {budget}"
            )
        vals, vecs = vals[mask], vecs[:, mask]
    if vals.size:
        # orthonormalize against degeneracy round-off
        q, _ = np.linalg.qr(vecs)
        vecs = q
    resid = np.array([np.linalg.norm(mat @ vecs[:, i] - vals[i] * vecs[:, i]) for i in range(len(vals))])
    return WindowBasis((lo, hi), vals, vecs, resid)


@dataclass
class MourreCertificate:
    """Deflation certificate for the compressed Hermitian commutator.

    ``rank`` is the number of deflated directions (the finite-rank stand-in
    for the H-compact correction); ``lowest_after`` the smallest eigenvalue
    of the compressed commutator on the orthocomplement.
    """

    interval: tuple[float, float]
    lam: float
    eps: float
    theta_value: float
    window_rank: int
    compressed: np.ndarray
    rank: int
    lowest_after: float
    passed: bool
    tolerance: float = 1e-10

    @property
    def bound(self) -> float:
        return self.theta_value - self.eps


def mourre_check(
    H: SparseHermitian,
    commutator: SparseHermitian,
    spectrum: ChannelSpectrum,
    lam: float,
    eps: float,
    interval: tuple[float, float],
    r_max: int = 10,
    budget: int = 64,
    window: WindowBasis | None = None,
) -> MourreCertificate:
    """Search deflation ranks r <= r_max certifying the Mourre bound.

    The compressed form is Phi* (-1/2 [H,[H,r^2]]) Phi on the window basis;
    deflating the r lowest eigenvectors leaves lambda_min = the (r+1)-th
    smallest eigenvalue.  The best achieved bound is recorded on failure.
    """
    if window is None:
        window = spectral_projection(H, interval, budget=budget)
    th = theta(spectrum, lam)
    if window.rank == 0:
        # empty window: the bound holds vacuously on the zero projector
        return MourreCertificate(
            interval=tuple(interval),
            lam=lam,
            eps=eps,
            theta_value=th,
            window_rank=0,
            compressed=np.zeros((0, 0)),
            rank=0,
            lowest_after=np.inf,
            passed=True,
        )
    comp = window.vectors.conj().T @ (commutator.matrix @ window.vectors)
    comp = 0.5 * (comp + comp.conj().T)
    evals = np.linalg.eigvalsh(comp)
    target = th - eps
    tol = 1e-10
    passed = False
    rank = r_max
    lowest = evals[min(r_max, len(evals) - 1)]
    for r in range(min(r_max, len(evals) - 1) + 1):
        if r >= len(evals):
            break
        if evals[r] >= target - tol:
            passed = True
            rank = r
            lowest = evals[r]
            break
    if not passed:
        rank = min(r_max, len(evals) - 1)
        lowest = evals[rank]
    return MourreCertificate(
        interval=tuple(interval),
        lam=lam,
        eps=eps,
        theta_value=th,
        window_rank=window.rank,
        compressed=comp,
        rank=rank,
        lowest_after=float(lowest),
        passed=passed,
    )


def export_spectrum_csv(spectrum: ChannelSpectrum, path) -> None:
    """CSV rows (k, index, eigenvalue, residual, decay_ratio, bound_flag)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k", "index", "eigenvalue", "residual", "decay_ratio", "bound_flag"])
        for k in (1, 2, 3):
            for i, val in enumerate(spectrum.values[k]):
                writer.writerow(
                    [
                        k,
                        i,
                        format(val, ".17e"),
                        format(spectrum.residuals[k][i], ".3e"),
                        format(min(spectrum.decay_ratios[k][i], 1e300), ".3e"),
                        int(spectrum.bound_flags[k][i]),
                    ]
                )
