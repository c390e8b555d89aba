"""U-weighted linear algebra.

The state space ``U = R^N`` carries the inner product ``<a, b>_U = a^T R_U b``
and its dual ``<r, s>_U' = r^T R_U^{-1} s``.  Everything here goes through an
:class:`InnerProductSpace`, which owns the sparse Gram matrix ``R_U``, a
factor ``Q`` with ``Q^T Q = R_U`` and a sparse factorization used for Riesz
solves.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.sparse.csgraph import reverse_cuthill_mckee

from .errors import NumericalError

__all__ = [
    "InnerProductSpace", "BasisMatrix",
    "u_inner", "u_norm", "dual_norm", "riesz", "u_orthonormalize",
    "gram_orthonormalize", "pod", "project",
]

RANK_TOL = 1e-12


class InnerProductSpace:
    """Finite-dimensional Hilbert space ``(R^N, <., R_U .>)``.

    Parameters
    ----------
    gram : sparse or dense (N, N) array
        Symmetric positive definite Gram matrix ``R_U``.
    factor : sparse or dense (s, N) array, optional
        Custom factor ``Q`` with ``Q^T Q = R_U``.  When omitted, a sparse
        Cholesky factor is computed with a reverse Cuthill-McKee ordering.

    Instances are treated as immutable: the factorization is computed once.
    """

    def __init__(self, gram, factor=None):
        gram = sp.csr_matrix(gram, dtype=float)
        n, n2 = gram.shape
        if n != n2 or n == 0:
            raise ValueError(f"Gram matrix must be square and nonempty, got {gram.shape}")
        gnorm = spla.norm(gram)
        if spla.norm(gram - gram.T) > 1e-12 * gnorm:
            raise ValueError("Gram matrix is not symmetric to 1e-12 relative")
        self.gram = gram
        self.dim = n

        perm = reverse_cuthill_mckee(gram, symmetric_mode=True)
        permuted = gram[perm][:, perm].tocsc()
        try:
            # No pivoting: LU of an SPD matrix is L D L^T with U = D L^T.
            lu = spla.splu(permuted, permc_spec="NATURAL", diag_pivot_thresh=0.0,
                           options=dict(SymmetricMode=True))
        except RuntimeError as exc:
            raise NumericalError(f"Gram matrix factorization failed: {exc}") from exc
        if not (np.array_equal(lu.perm_r, np.arange(n)) and np.array_equal(lu.perm_c, np.arange(n))):
            raise NumericalError("unexpected pivoting in symmetric factorization")
        pivots = lu.U.diagonal()
        if not np.all(pivots > 0):
            raise NumericalError(
                f"Gram matrix is not positive definite (min pivot {pivots.min():.3e})")
        self._lu = lu
        self._perm = perm

        if factor is None:
            upper = sp.diags(1.0 / np.sqrt(pivots)) @ lu.U
            self.factor = sp.csr_matrix(upper)[:, np.argsort(perm)]
            self.factor_kind = "cholesky"
        else:
            q = sp.csr_matrix(factor, dtype=float)
            if q.shape[1] != n:
                raise ValueError(f"factor must have {n} columns, got {q.shape}")
            err = spla.norm(q.T @ q - gram)
            if err > 1e-10 * gnorm:
                raise ValueError(f"factor does not satisfy Q^T Q = R_U (error {err:.2e})")
            self.factor = q
            self.factor_kind = "custom"

    @property
    def factor_rows(self):
        return self.factor.shape[0]

    def check_vector(self, x, name="vector"):
        x = np.asarray(x, dtype=float)
        if x.shape[0] != self.dim:
            raise ValueError(f"{name} has leading dimension {x.shape[0]}, expected {self.dim}")
        return x

    def solve(self, rhs):
        """Return ``R_U^{-1} rhs`` (vector or column block)."""
        rhs = self.check_vector(rhs, "dual vector")
        out = np.empty_like(rhs)
        sol = self._lu.solve(np.ascontiguousarray(rhs[self._perm]))
        if not np.all(np.isfinite(sol)):
            raise NumericalError("Riesz solve produced non-finite values")
        out[self._perm] = sol
        return out

    def apply_factor(self, x):
        """Return ``Q x``."""
        return self.factor @ self.check_vector(x)


@dataclass
class BasisMatrix:
    """Columns of states, optionally flagged as U-orthonormal."""

    columns: np.ndarray
    u_orthonormal: bool = False
    dropped: tuple = field(default=())

    def __post_init__(self):
        self.columns = np.asarray(self.columns, dtype=float)
        if self.columns.ndim == 1:
            self.columns = self.columns[:, None]
        if self.columns.ndim != 2:
            raise ValueError("basis columns must form a 2-D array")

    @property
    def size(self):
        return self.columns.shape[1]

    def __len__(self):
        return self.size


def u_inner(space, a, b):
    a = space.check_vector(a, "a")
    b = space.check_vector(b, "b")
    return float(a @ (space.gram @ b))


def u_norm(space, a):
    """``||a||_U`` computed as ``||Q a||_2`` (no cancellation)."""
    return float(np.linalg.norm(space.apply_factor(a)))


def riesz(space, ell):
    """Riesz representer ``R_U^{-1} ell`` of a dual vector (or column block)."""
    return space.solve(ell)


def dual_norm(space, r):
    """``||r||_U' = ||Q R_U^{-1} r||_2``."""
    r = space.check_vector(r, "r")
    if not np.any(r):
        return 0.0
    return float(np.linalg.norm(space.apply_factor(space.solve(r))))


def _mgs(n_cols, inner, axpy, scale, tol, refresh=None):
    """Modified Gram-Schmidt with one re-orthogonalization pass.

    Works on an abstract column store through callbacks so the same routine
    serves both full states and coefficient vectors.  ``refresh(j)``, if
    given, recomputes cached products of column ``j`` after each pass.
    Returns kept indices.
    """
    kept = []
    for j in range(n_cols):
        norm0 = np.sqrt(max(inner(j, j), 0.0))
        if norm0 == 0.0:
            continue
        for _ in range(2):
            for i in kept:
                axpy(j, i, -inner(i, j))
            if refresh is not None:
                refresh(j)
        nrm = np.sqrt(max(inner(j, j), 0.0))
        if nrm <= tol * norm0:
            continue
        scale(j, 1.0 / nrm)
        kept.append(j)
    return kept


def u_orthonormalize(space, basis, tol=RANK_TOL, return_transform=False):
    """U-orthonormalize the columns of ``basis``, dropping dependent ones.

    Returns a :class:`BasisMatrix` whose ``dropped`` attribute lists input
    columns removed for (numerical) rank deficiency.  With
    ``return_transform=True`` also returns ``T`` such that
    ``out.columns = basis.columns @ T``.
    """
    cols = basis.columns if isinstance(basis, BasisMatrix) else np.asarray(basis, dtype=float)
    if cols.ndim == 1:
        cols = cols[:, None]
    space.check_vector(cols, "basis")
    p = cols.shape[1]
    work = cols.copy()
    rwork = space.gram @ work
    transform = np.eye(p)

    def inner(i, j):
        return float(work[:, i] @ rwork[:, j])

    def axpy(j, i, c):
        work[:, j] += c * work[:, i]
        rwork[:, j] += c * rwork[:, i]
        transform[:, j] += c * transform[:, i]

    def scale(j, c):
        work[:, j] *= c
        rwork[:, j] *= c
        transform[:, j] *= c

    def refresh(j):
        # Incremental updates of R_U x lose accuracy under cancellation.
        rwork[:, j] = space.gram @ work[:, j]

    kept = _mgs(p, inner, axpy, scale, tol, refresh)
    dropped = tuple(j for j in range(p) if j not in kept)
    if dropped:
        warnings.warn(f"u_orthonormalize dropped {len(dropped)} dependent column(s): {dropped}",
                      stacklevel=2)
    out = BasisMatrix(work[:, kept], u_orthonormal=True, dropped=dropped)
    if return_transform:
        return out, transform[:, kept]
    return out


def gram_orthonormalize(gram, tol=RANK_TOL):
    """Orthonormalize abstract vectors known only through their Gram matrix.

    Returns ``(T, kept)`` with ``T^T gram T = I``; the orthonormal vectors are
    ``V @ T`` whenever ``gram = V^T R_U V``.  Same algorithm as
    :func:`u_orthonormalize`, run in coefficient space.
    """
    gram = np.asarray(gram, dtype=float)
    p = gram.shape[0]
    transform = np.eye(p)
    gt = gram.copy()  # gram @ transform

    def inner(i, j):
        return float(transform[:, i] @ gt[:, j])

    def axpy(j, i, c):
        transform[:, j] += c * transform[:, i]
        gt[:, j] += c * gt[:, i]

    def scale(j, c):
        transform[:, j] *= c
        gt[:, j] *= c

    kept = _mgs(p, inner, axpy, scale, tol)
    return transform[:, kept], kept


def pod(space, snapshots, n_max, tol=RANK_TOL):
    """Proper orthogonal decomposition by the method of snapshots.

    Eigen-decomposes the U-Gram matrix of the snapshots, keeps eigenvalues
    above ``tol`` times the largest, and returns at most ``n_max``
    U-orthonormal modes with their singular values (nonincreasing).
    """
    cols = snapshots.columns if isinstance(snapshots, BasisMatrix) else np.asarray(snapshots, float)
    if n_max > cols.shape[1]:
        raise ValueError(f"n_max={n_max} exceeds the number of snapshots {cols.shape[1]}")
    corr = cols.T @ (space.gram @ cols)
    corr = 0.5 * (corr + corr.T)
    evals, evecs = np.linalg.eigh(corr)
    order = np.argsort(evals)[::-1]
    evals, evecs = evals[order], evecs[:, order]
    if evals.size == 0 or evals[0] <= 0:
        return BasisMatrix(np.zeros((space.dim, 0)), u_orthonormal=True), np.zeros(0)
    keep = min(n_max, int(np.sum(evals > tol * evals[0])))
    sv = np.sqrt(evals[:keep])
    modes = cols @ (evecs[:, :keep] / sv)
    # Re-orthonormalize in order: removes round-off from small eigenvalues
    # without changing the nested spans.
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        basis = u_orthonormalize(space, modes)
    return basis, sv[[j for j in range(keep) if j not in basis.dropped]]


def project(space, basis, u):
    """U-orthogonal projection ``V (V^T R_U u)`` onto a U-orthonormal basis."""
    u = space.check_vector(u, "u")
    if not basis.u_orthonormal:
        raise ValueError("project requires a U-orthonormal basis")
    if basis.size == 0:
        return np.zeros_like(u)
    return basis.columns @ (basis.columns.T @ (space.gram @ u))
