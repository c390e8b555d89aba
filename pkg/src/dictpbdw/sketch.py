"""Oblivious U -> l2 subspace embeddings ``Theta = Omega Q``.

``Omega`` is a seeded random matrix (Gaussian, partial subsampled randomized
Hadamard transform, or a Gaussian composed with a P-SRHT) and ``Q`` is the
factor of the inner product space, ``Q^T Q = R_U``.  Primal vectors are
sketched as ``Omega Q v``, dual vectors as ``Omega Q R_U^{-1} r``.
"""

import math
from dataclasses import dataclass, asdict

import numpy as np

from .errors import DomainError
from .linalg import BasisMatrix

__all__ = [
    "EmbeddingSpec", "UEmbedding", "gaussian_embed_dim", "realize",
    "sketch_primal", "sketch_dual", "check_embedding", "fwht",
]

KINDS = ("gaussian", "psrht", "composed", "identity")
GAUSSIAN_EPS_LIMIT = 0.572


def gaussian_embed_dim(eps, delta, d):
    """Sufficient Gaussian sketch size for an (eps, delta, d) oblivious embedding.

    ``k = ceil(7.87 eps^-2 (6.9 d + log(1/delta)))``, valid for
    ``0 < eps < 0.572``.
    """
    if not 0.0 < eps < GAUSSIAN_EPS_LIMIT:
        raise DomainError(
            f"Gaussian sizing bound requires 0 < eps < {GAUSSIAN_EPS_LIMIT}, got eps={eps}")
    if not 0.0 < delta < 1.0:
        raise DomainError(f"delta must lie in (0, 1), got {delta}")
    if int(d) != d or d < 1:
        raise DomainError(f"subspace dimension must be a positive integer, got {d}")
    return int(math.ceil(7.87 / eps**2 * (6.9 * d + math.log(1.0 / delta))))


def _next_pow2(n):
    return 1 << max(0, int(n - 1).bit_length())


@dataclass(frozen=True)
class EmbeddingSpec:
    """Description of a random embedding; realizing it is deterministic.

    For ``kind="composed"``, ``rows`` is the size of the outer Gaussian
    factor and ``inner_rows`` the size of the inner P-SRHT.
    """

    kind: str
    rows: int
    input_dim: int
    seed: int = 0
    inner_rows: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown embedding kind {self.kind!r}; expected one of {KINDS}")
        if self.rows < 1 or self.input_dim < 1:
            raise ValueError("rows and input_dim must be positive")
        if self.kind == "psrht" and self.rows > self.padded_length:
            raise ValueError(f"P-SRHT rows {self.rows} exceed padded length {self.padded_length}")
        if self.kind == "composed":
            if not 1 <= self.inner_rows <= self.padded_length:
                raise ValueError("composed embedding needs 1 <= inner_rows <= padded length")
        if self.kind == "identity" and self.rows != self.input_dim:
            raise ValueError("identity embedding requires rows == input_dim")

    @property
    def padded_length(self):
        return _next_pow2(self.input_dim)

    def manifest(self):
        out = asdict(self)
        out["padded_length"] = self.padded_length
        return out


def fwht(x):
    """Unnormalized fast Walsh-Hadamard transform along axis 0 (length 2^p)."""
    x = np.array(x, dtype=float, copy=True)
    n = x.shape[0]
    if n & (n - 1):
        raise ValueError(f"length {n} is not a power of two")
    tail = x.shape[1:]
    h = 1
    while h < n:
        y = x.reshape((n // (2 * h), 2, h) + tail)
        a = y[:, 0].copy()
        y[:, 0] += y[:, 1]
        y[:, 1] = a - y[:, 1]
        h *= 2
    return x


class _Gaussian:
    def __init__(self, rows, cols, rng):
        self.matrix = rng.standard_normal((rows, cols)) / np.sqrt(rows)

    def __call__(self, x):
        return self.matrix @ x


class _PSRHT:
    """``sqrt(L/k) * S * (H / sqrt(L)) * D`` on the zero-padded input."""

    def __init__(self, rows, cols, rng):
        self.rows, self.cols = rows, cols
        self.length = _next_pow2(cols)
        self.signs = rng.integers(0, 2, size=self.length) * 2.0 - 1.0
        self.sampled = np.sort(rng.choice(self.length, size=rows, replace=False))
        self.scale = 1.0 / np.sqrt(rows)

    def __call__(self, x):
        padded = np.zeros((self.length,) + x.shape[1:])
        padded[: self.cols] = x
        padded *= self.signs.reshape((-1,) + (1,) * (x.ndim - 1))
        return self.scale * fwht(padded)[self.sampled]


class UEmbedding:
    """Realized embedding bound to an :class:`InnerProductSpace`."""

    def __init__(self, spec, space, omega):
        self.spec = spec
        self.space = space
        self._omega = omega

    @property
    def rows(self):
        return self.spec.rows

    def apply_omega(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[0] != self.spec.input_dim:
            raise ValueError(f"expected leading dimension {self.spec.input_dim}, got {x.shape[0]}")
        return self._omega(x)

    def primal(self, v):
        return self.apply_omega(self.space.apply_factor(v))

    def dual(self, r):
        r = self.space.check_vector(r, "r")
        if not np.any(r):
            return np.zeros((self.rows,) + r.shape[1:])
        return self.primal(self.space.solve(r))


def realize(spec, space):
    """Draw ``Omega`` from the seeded counter-based generator (Philox)."""
    if spec.input_dim != space.factor_rows:
        raise ValueError(
            f"embedding input_dim {spec.input_dim} != factor rows {space.factor_rows}")
    seq = np.random.SeedSequence(spec.seed)
    if spec.kind == "identity":
        return UEmbedding(spec, space, lambda x: np.array(x, dtype=float))
    if spec.kind == "gaussian":
        rng = np.random.Generator(np.random.Philox(seq))
        return UEmbedding(spec, space, _Gaussian(spec.rows, spec.input_dim, rng))
    if spec.kind == "psrht":
        rng = np.random.Generator(np.random.Philox(seq))
        return UEmbedding(spec, space, _PSRHT(spec.rows, spec.input_dim, rng))
    inner_seq, outer_seq = seq.spawn(2)
    inner = _PSRHT(spec.inner_rows, spec.input_dim, np.random.Generator(np.random.Philox(inner_seq)))
    outer = _Gaussian(spec.rows, spec.inner_rows, np.random.Generator(np.random.Philox(outer_seq)))
    return UEmbedding(spec, space, lambda x: outer(inner(x)))


def sketch_primal(emb, v):
    """``Theta v = Omega Q v``."""
    return emb.primal(v)


def sketch_dual(emb, r):
    """``Theta R_U^{-1} r``."""
    return emb.dual(r)


def check_embedding(emb, basis, eps):
    """Whether ``emb`` is an eps-subspace embedding for ``span(basis)``.

    Equivalent to ``|sigma^2 - 1| <= eps`` for every singular value of the
    sketched U-orthonormal basis (missing singular values count as zero).
    """
    if not isinstance(basis, BasisMatrix) or not basis.u_orthonormal:
        raise ValueError("check_embedding needs a U-orthonormal BasisMatrix")
    p = basis.size
    if p == 0:
        return True
    sv = np.linalg.svd(emb.primal(basis.columns), compute_uv=False)
    sv = np.concatenate([sv, np.zeros(p - sv.size)])
    # Round-off allowance so that an exact isometry passes at eps = 0.
    slack = 100.0 * np.finfo(float).eps * max(p, 1)
    return bool(np.all(np.abs(sv**2 - 1.0) <= eps + slack))
