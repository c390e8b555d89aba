"""Affine parameter-dependent operator equations ``B(xi) u = f(xi)``.

``B(xi) = B0 + sum_q theta^B_q(xi) B_q`` and ``f(xi) = f0 + sum_q theta^f_q(xi) f_q``.
The coefficient maps are affine, ``theta(xi) = M xi + c`` with ``theta``
stacking operator coefficients then right-hand-side coefficients, which makes
every residual-norm minimization over a parameter box a box-constrained
linear least-squares problem.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import DomainError, ModelError
from .linalg import dual_norm

__all__ = [
    "ParameterBox", "AffineModel", "SeparatedResidual",
    "assemble", "solve_state", "separated", "residual", "residual_norm",
]

BOX_SLACK = 1e-14
SAMPLING_LAWS = ("uniform", "log_uniform")


@dataclass(frozen=True)
class ParameterBox:
    """Product of closed intervals with a per-coordinate sampling law."""

    lower: tuple
    upper: tuple
    sampling: tuple = None

    def __post_init__(self):
        lo = tuple(float(x) for x in self.lower)
        hi = tuple(float(x) for x in self.upper)
        if len(lo) != len(hi) or not lo:
            raise ValueError("lower and upper bounds must be nonempty and of equal length")
        law = self.sampling or ("uniform",) * len(lo)
        if isinstance(law, str):
            law = (law,) * len(lo)
        law = tuple(law)
        if len(law) != len(lo):
            raise ValueError("one sampling law per coordinate is required")
        for q, (a, b, s) in enumerate(zip(lo, hi, law)):
            if not a < b:
                raise ValueError(f"interval {q} is degenerate or reversed: [{a}, {b}]")
            if s not in SAMPLING_LAWS:
                raise ValueError(f"unknown sampling law {s!r}")
            if s == "log_uniform" and a <= 0:
                raise ValueError(f"log-uniform interval {q} must have a positive lower bound")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        object.__setattr__(self, "sampling", law)

    @property
    def dim(self):
        return len(self.lower)

    @property
    def lo(self):
        return np.array(self.lower)

    @property
    def hi(self):
        return np.array(self.upper)

    @property
    def center(self):
        return 0.5 * (self.lo + self.hi)

    def contains(self, xi, slack=BOX_SLACK):
        xi = np.asarray(xi, dtype=float)
        if xi.shape != (self.dim,):
            return False
        scale = np.maximum(1.0, np.maximum(np.abs(self.lo), np.abs(self.hi)))
        return bool(np.all(xi >= self.lo - slack * scale) and np.all(xi <= self.hi + slack * scale))

    def check(self, xi):
        xi = np.asarray(xi, dtype=float)
        if not self.contains(xi):
            raise DomainError(f"parameter {xi} outside the box {list(zip(self.lower, self.upper))}")
        return xi

    def corners(self):
        grids = np.meshgrid(*[(a, b) for a, b in zip(self.lower, self.upper)], indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1)

    def manifest(self):
        return {"lower": list(self.lower), "upper": list(self.upper), "sampling": list(self.sampling)}


@dataclass
class AffineModel:
    """Affine operator and right-hand side terms over a parameter box.

    ``operator_terms[0]`` and ``rhs_terms[0]`` are the constant parts (the
    coefficient is 1); the others are weighted by ``theta(xi)``.
    """

    operator_terms: list
    rhs_terms: list
    box: ParameterBox
    space: object
    theta_linear: np.ndarray = None
    theta_offset: np.ndarray = None
    name: str = "affine"
    metadata: dict = field(default_factory=dict)
    mesh: object = None  # optional geometry, used by sensor assembly

    def __post_init__(self):
        self.operator_terms = [sp.csr_matrix(b, dtype=float) for b in self.operator_terms]
        self.rhs_terms = [np.asarray(f, dtype=float) for f in self.rhs_terms]
        if not self.operator_terms or not self.rhs_terms:
            raise ValueError("the constant operator and rhs terms must be provided")
        n = self.space.dim
        for b in self.operator_terms:
            if b.shape != (n, n):
                raise ValueError(f"operator term of shape {b.shape}, expected {(n, n)}")
        for f in self.rhs_terms:
            if f.shape != (n,):
                raise ValueError(f"rhs term of shape {f.shape}, expected {(n,)}")
        q = self.m_B + self.m_f
        if self.theta_linear is None:
            if q != self.box.dim:
                raise ValueError("identity coefficient maps need m_B + m_f == box dimension")
            self.theta_linear = np.eye(q)
        if self.theta_offset is None:
            self.theta_offset = np.zeros(q)
        self.theta_linear = np.asarray(self.theta_linear, dtype=float)
        self.theta_offset = np.asarray(self.theta_offset, dtype=float)
        if self.theta_linear.shape != (q, self.box.dim) or self.theta_offset.shape != (q,):
            raise ValueError("coefficient map has inconsistent shape")

    @property
    def m_B(self):
        return len(self.operator_terms) - 1

    @property
    def m_f(self):
        return len(self.rhs_terms) - 1

    @property
    def dim(self):
        return self.space.dim

    def theta(self, xi):
        return self.theta_linear @ np.asarray(xi, dtype=float) + self.theta_offset

    def manifest(self):
        out = {"name": self.name, "m_B": self.m_B, "m_f": self.m_f, "d": self.box.dim,
               "N": self.dim, "box": self.box.manifest()}
        out.update(self.metadata)
        return out


@dataclass
class SeparatedResidual:
    """``r(v, xi) = G theta(xi) - g`` for a fixed state ``v``."""

    G: np.ndarray
    g: np.ndarray

    def __call__(self, theta):
        return self.G @ theta - self.g


def _combine(terms, coeffs):
    out = terms[0].copy()
    for c, t in zip(coeffs, terms[1:]):
        out = out + c * t
    return out


def assemble(model, xi):
    """Return ``(B(xi), f(xi))`` as a sparse CSR matrix and a vector."""
    xi = model.box.check(xi)
    theta = model.theta(xi)
    matrix = sp.csr_matrix(_combine(model.operator_terms, theta[: model.m_B]))
    rhs = _combine(model.rhs_terms, theta[model.m_B:])
    return matrix, rhs


def solve_state(model, xi):
    """Sparse direct solve of ``B(xi) u = f(xi)`` (COLAMD ordering)."""
    matrix, rhs = assemble(model, xi)
    if not np.any(rhs):
        return np.zeros(model.dim)
    try:
        u = spla.splu(matrix.tocsc()).solve(rhs)
    except RuntimeError as exc:
        raise ModelError(f"factorization of B(xi) failed at xi={xi}: {exc}") from exc
    res = np.linalg.norm(matrix @ u - rhs)
    if not np.isfinite(res) or res > 1e-10 * np.linalg.norm(rhs):
        raise ModelError(f"state solve inaccurate at xi={xi}: residual {res:.3e}")
    return u


def separated(model, v):
    """Separated-variables residual ``G(v) theta - g(v)``.

    Columns of ``G`` are ``B_q v`` (q >= 1) followed by ``-f_q`` (q >= 1);
    ``g = f0 - B0 v``.
    """
    v = model.space.check_vector(v, "v")
    cols = [b @ v for b in model.operator_terms[1:]] + [-f for f in model.rhs_terms[1:]]
    G = np.column_stack(cols) if cols else np.zeros((model.dim, 0))
    g = model.rhs_terms[0] - model.operator_terms[0] @ v
    return SeparatedResidual(G, g)


def residual(model, v, xi):
    matrix, rhs = assemble(model, xi)
    return matrix @ model.space.check_vector(v, "v") - rhs


def residual_norm(model, v, xi):
    """``||B(xi) v - f(xi)||_U'``."""
    return dual_norm(model.space, residual(model, v, xi))
