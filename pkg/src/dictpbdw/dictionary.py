"""Dictionaries of normalized snapshots, the LASSO homotopy and dictionary-based recovery."""

import csv
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import IllPosedError
from .estimator import (ILL_POSED_THRESHOLD, RecoveryResult, pbdw_coefficients, select_space)
from .linalg import BasisMatrix, gram_orthonormalize

__all__ = [
    "Dictionary", "LarsCaps", "LassoPath", "LibrarySpace",
    "build_dictionary", "lars_path", "path_to_library", "evaluate_library",
    "dict_recover", "recover_from_library", "best_in_library", "perturb_dictionary",
    "bpdn_objective", "kkt_violation",
]

TERMINATION_REASONS = ("alpha_floor", "max_spaces", "sparsity_cap", "exact_fit", "numerical_stall")
KKT_RTOL = 1e-8
STALL_FACTOR = 1e3


@dataclass
class Dictionary:
    """K unit-U-norm atoms with their measurement matrix ``C = W^T R_U V``.

    ``atoms`` may be ``None`` when only the coefficient-space data (``C``
    and the atom Gram matrix) are loaded, as in observation-only runs.
    """

    atoms: np.ndarray
    C: np.ndarray
    gram: np.ndarray
    params: np.ndarray = None

    @property
    def K(self):
        return self.C.shape[1]

    @property
    def m(self):
        return self.C.shape[0]


@dataclass
class LarsCaps:
    """Stopping rules for :func:`lars_path`; ``None`` means the default."""

    alpha_floor_ratio: float = 1e-10
    max_spaces: int = None
    sparsity_cap: int = None

    def resolve(self, m, K):
        max_spaces = self.max_spaces if self.max_spaces is not None else math.ceil(0.1 * K)
        cap = self.sparsity_cap if self.sparsity_cap is not None else m // 2
        if self.alpha_floor_ratio <= 0 or max_spaces < 1 or cap < 1:
            raise ValueError("LARS caps must be positive")
        return self.alpha_floor_ratio, int(max_spaces), int(min(cap, m))


@dataclass
class LassoPath:
    """Breakpoints of the BPDN path ``min 1/2 ||C x - w||^2 + alpha ||x||_1``.

    ``supports[j]`` is the active set on the segment just below
    ``alphas[j]``; ``solutions[j]`` is the exact minimizer at ``alphas[j]``.
    """

    alphas: np.ndarray
    solutions: np.ndarray
    supports: list
    termination_reason: str
    objective: np.ndarray
    kkt_residual: np.ndarray

    def __len__(self):
        return len(self.alphas)

    def solution_at(self, alpha):
        """Linear interpolation between breakpoints (the path is piecewise affine)."""
        alphas = self.alphas
        if alpha >= alphas[0]:
            return np.zeros(self.solutions.shape[1]) if alpha > alphas[0] else self.solutions[0].copy()
        if alpha < alphas[-1]:
            raise ValueError(f"alpha={alpha} below the last breakpoint {alphas[-1]}")
        j = int(np.searchsorted(-alphas, -alpha, side="right")) - 1
        if alphas[j] == alpha or j == len(alphas) - 1:
            return self.solutions[j].copy()
        t = (alphas[j] - alpha) / (alphas[j] - alphas[j + 1])
        return (1 - t) * self.solutions[j] + t * self.solutions[j + 1]

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["alpha", "support_size", "objective", "kkt_residual"])
            for a, s, o, k in zip(self.alphas, self.supports, self.objective, self.kkt_residual):
                writer.writerow([repr(float(a)), len(s), repr(float(o)), repr(float(k))])


@dataclass
class LibrarySpace:
    """``span{v_i : i in support}`` with ``V[:, support] @ transform`` U-orthonormal."""

    support: tuple
    transform: np.ndarray
    alpha: float
    kept: tuple = field(default=())

    @property
    def dim(self):
        return self.transform.shape[1]

    def basis(self, dictionary):
        if dictionary.atoms is None:
            raise ValueError("dictionary atoms are not loaded")
        return BasisMatrix(dictionary.atoms[:, list(self.support)] @ self.transform,
                           u_orthonormal=True)


def build_dictionary(space, obs, snapshots, K=None, params=None):
    """Normalize the first ``K`` snapshots in U and assemble ``C``.

    Zero snapshots are skipped with a warning.
    """
    cols = snapshots.columns if isinstance(snapshots, BasisMatrix) else np.asarray(snapshots, float)
    if cols.ndim == 1:
        cols = cols[:, None]
    K = cols.shape[1] if K is None else int(K)
    if not 1 <= K <= cols.shape[1]:
        raise ValueError(f"K={K} must lie in [1, {cols.shape[1]}]")
    cols = space.check_vector(cols[:, :K], "snapshots")
    norms = np.linalg.norm(space.apply_factor(cols), axis=0)
    keep = np.flatnonzero(norms > 0)
    if keep.size < K:
        warnings.warn(f"build_dictionary skipped {K - keep.size} zero snapshot(s)", stacklevel=2)
    atoms = cols[:, keep] / norms[keep]
    ratoms = space.gram @ atoms
    gram = atoms.T @ ratoms
    gram = 0.5 * (gram + gram.T)
    C = obs.W.columns.T @ ratoms
    if params is not None:
        params = np.asarray(params, dtype=float)[: K][keep]
    return Dictionary(atoms, C, gram, params)


def bpdn_objective(C, w, x, alpha):
    r = C @ x - w
    return 0.5 * float(r @ r) + alpha * float(np.abs(x).sum())


def kkt_violation(C, w, x, alpha):
    """Largest violation of the BPDN optimality conditions at ``(x, alpha)``."""
    c = C.T @ (w - C @ x)
    nz = x != 0
    on = np.abs(c[nz] - alpha * np.sign(x[nz]))
    off = np.maximum(np.abs(c[~nz]) - alpha, 0.0)
    return float(max(on.max(initial=0.0), off.max(initial=0.0)))


def lars_path(C, w, caps=None):
    """LASSO homotopy with support-leaving events.

    Starts at ``alpha_0 = ||C^T w||_inf`` and follows the piecewise-affine
    solution downward.  Each breakpoint is certified by the optimality
    conditions at tolerance ``1e-8 alpha_0`` before being emitted.

    Parameters
    ----------
    C : (m, K) array
        Measurement matrix (or any design matrix).
    w : (m,) array
        Observation coordinates.
    caps : LarsCaps, optional
        Stopping rules; defaults are ``floor(m/2)`` atoms, ``ceil(0.1 K)``
        distinct supports and ``alpha >= 1e-10 alpha_0``.
    """
    C = np.asarray(C, dtype=float)
    w = np.asarray(w, dtype=float)
    m, K = C.shape
    floor_ratio, max_spaces, sparsity_cap = (caps or LarsCaps()).resolve(m, K)
    c0 = C.T @ w
    alpha0 = float(np.abs(c0).max(initial=0.0))

    alphas, sols, sups, objs, kkts = [], [], [], [], []

    def finish(reason):
        return LassoPath(np.array(alphas), np.array(sols).reshape(len(sols), K), sups,
                         reason, np.array(objs), np.array(kkts))

    if alpha0 == 0.0:
        alphas.append(0.0)
        sols.append(np.zeros(K))
        sups.append(())
        objs.append(bpdn_objective(C, w, np.zeros(K), 0.0))
        kkts.append(0.0)
        return finish("exact_fit")

    ktol = KKT_RTOL * alpha0
    seg_tol = STALL_FACTOR * np.finfo(float).eps * alpha0
    alpha_floor = floor_ratio * alpha0
    j0 = int(np.argmax(np.abs(c0)))
    active = [j0]
    signs = {j0: float(np.sign(c0[j0]))}
    x = np.zeros(K)
    alpha = alpha0
    last_changed = j0
    distinct = set()

    def emit(alpha_j, x_j):
        viol = kkt_violation(C, w, x_j, alpha_j)
        if viol > ktol:
            return False
        alphas.append(alpha_j)
        sols.append(x_j.copy())
        sups.append(tuple(sorted(active)))
        objs.append(bpdn_objective(C, w, x_j, alpha_j))
        kkts.append(viol)
        if active:
            distinct.add(frozenset(active))
        return True

    if not emit(alpha, x):
        return finish("numerical_stall")

    while True:
        if len(distinct) >= max_spaces:
            return finish("max_spaces")
        if not active:
            return finish("numerical_stall")
        CA = C[:, active]
        G = CA.T @ CA
        s = np.array([signs[i] for i in active])
        try:
            if np.linalg.cond(G) > 1e12:
                return finish("numerical_stall")
            a = np.linalg.solve(G, CA.T @ w)
            b = np.linalg.solve(G, s)
        except np.linalg.LinAlgError:
            return finish("numerical_stall")
        resid0 = w - CA @ a
        p = C.T @ resid0
        q = C.T @ (CA @ b)
        inactive = np.setdiff1d(np.arange(K), active)

        best, event = 0.0, None
        stalled = False

        def consider(value, kind, idx, sign=0.0):
            nonlocal best, event, stalled
            if not (np.isfinite(value) and 0.0 <= value < alpha):
                return
            if alpha - value < seg_tol:
                if idx != last_changed:
                    stalled = True
                return
            if value > best:
                best, event = value, (kind, idx, sign)

        with np.errstate(divide="ignore", invalid="ignore"):
            for j in inactive:
                if q[j] != 1.0:
                    consider(p[j] / (1.0 - q[j]), "join", int(j), 1.0)
                if q[j] != -1.0:
                    consider(-p[j] / (1.0 + q[j]), "join", int(j), -1.0)
            for pos, i in enumerate(active):
                if b[pos] != 0.0:
                    consider(a[pos] / b[pos], "leave", i)
        if stalled:
            return finish("numerical_stall")

        if event is None or best <= alpha_floor:
            # The current support survives down to the floor.
            end = alpha_floor
            x = np.zeros(K)
            x[active] = a - end * b
            if float(np.linalg.norm(resid0)) <= 1e-12 * max(1.0, float(np.linalg.norm(w))):
                emit(end, x)
                return finish("exact_fit")
            if not emit(end, x):
                return finish("numerical_stall")
            return finish("alpha_floor")

        kind, idx, sign = event
        alpha = best
        x = np.zeros(K)
        x[active] = a - alpha * b
        if kind == "join":
            if len(active) >= sparsity_cap:
                emit(alpha, x)
                return finish("sparsity_cap")
            active.append(idx)
            signs[idx] = sign
        else:
            active.remove(idx)
            x[idx] = 0.0
            del signs[idx]
        last_changed = idx
        if not emit(alpha, x):
            return finish("numerical_stall")


def path_to_library(dictionary, path, tol=1e-12):
    """Deduplicated nonempty supports in path order, each U-orthonormalized.

    Orthonormalization uses only the atom Gram matrix, so no state-sized
    data is touched.
    """
    seen = set()
    library = []
    for alpha, sup in zip(path.alphas, path.supports):
        key = frozenset(sup)
        if not sup or key in seen:
            continue
        seen.add(key)
        idx = list(sup)
        T, kept = gram_orthonormalize(dictionary.gram[np.ix_(idx, idx)], tol)
        if not kept:
            continue
        library.append(LibrarySpace(tuple(sup), T, float(alpha), tuple(kept)))
    return library


def _fallback(obs, w, dictionary, with_state):
    state = obs.W.columns @ w if with_state else None
    return RecoveryResult(background_coeffs=np.zeros(0), correction_coeffs=w.copy(), state=state,
                          support=(), mu_of_space=1.0, atom_coeffs=np.zeros(dictionary.K))


def evaluate_library(dictionary, obs, library, w, threshold=ILL_POSED_THRESHOLD):
    """PBDW recovery for each library space; ill-posed spaces are skipped.

    Returns ``(candidates, skipped)`` where ``candidates`` is a list of
    ``(library_index, RecoveryResult)``.
    """
    w = np.asarray(w, dtype=float)
    with_state = dictionary.atoms is not None
    out, skipped = [], []
    for k, space in enumerate(library):
        idx = list(space.support)
        C_V = dictionary.C[:, idx] @ space.transform
        try:
            v, eta, smin = pbdw_coefficients(C_V, w, threshold)
        except IllPosedError:
            skipped.append(k)
            continue
        coeffs = np.zeros(dictionary.K)
        coeffs[idx] = space.transform @ v
        state = None
        if with_state:
            state = obs.W.columns @ eta + dictionary.atoms[:, idx] @ coeffs[idx]
        out.append((k, RecoveryResult(background_coeffs=v, correction_coeffs=eta, state=state,
                                      support=space.support, mu_of_space=1.0 / smin,
                                      atom_coeffs=coeffs, alpha=space.alpha)))
    return out, tuple(skipped)


def recover_from_library(dictionary, obs, library, w, surrogate, threshold=ILL_POSED_THRESHOLD,
                         candidates=None):
    """Select among library recoveries by the surrogate ``surrogate.evaluate(a)``.

    ``a`` stacks the correction coefficients and the atom coefficients, the
    layout of ``U = (W | V)``.
    """
    w = np.asarray(w, dtype=float)
    if candidates is None:
        candidates = evaluate_library(dictionary, obs, library, w, threshold)
    cands, skipped = candidates
    if not cands:
        if skipped:
            warnings.warn("every library space is ill-posed; returning P_W u", stacklevel=2)
        res = _fallback(obs, w, dictionary, dictionary.atoms is not None)
        if surrogate is not None:
            res.surrogate_value, res.xi = surrogate.evaluate(np.concatenate([w, res.atom_coeffs]))
        res.skipped = skipped
        return res
    values = []
    for _, res in cands:
        res.surrogate_value, res.xi = surrogate.evaluate(
            np.concatenate([res.correction_coeffs, res.atom_coeffs]))
        values.append(res.surrogate_value)
    pick = select_space(cands, values)
    k, res = cands[pick]
    res.selected_index = k
    res.skipped = skipped
    return res


def dict_recover(dictionary, obs, surrogate, w, caps=None, threshold=ILL_POSED_THRESHOLD):
    """Dictionary-based recovery: homotopy, library, PBDW per space, surrogate selection."""
    w = np.asarray(w, dtype=float)
    path = lars_path(dictionary.C, w, caps)
    library = path_to_library(dictionary, path)
    res = recover_from_library(dictionary, obs, library, w, surrogate, threshold)
    res.termination_reason = path.termination_reason
    return res


def best_in_library(library, obs, w, truth, dictionary, threshold=ILL_POSED_THRESHOLD,
                    candidates=None):
    """Library recovery with the smallest true U-error (benchmark comparator)."""
    space = obs.space
    w = np.asarray(w, dtype=float)
    if candidates is None:
        candidates = evaluate_library(dictionary, obs, library, w, threshold)
    cands, skipped = candidates
    if not cands:
        res = _fallback(obs, w, dictionary, True)
        res.skipped = skipped
        return res
    errors = [float(np.linalg.norm(space.apply_factor(truth - res.state))) for _, res in cands]
    pick = select_space(cands, errors)
    k, res = cands[pick]
    res.selected_index = k
    res.skipped = skipped
    return res


def perturb_dictionary(dictionary, obs, amplitude, seed):
    """``v_i + sum_j e_ij W_j`` with uniform ``e`` scaled by ``amplitude * max|C|``, renormalized."""
    if not amplitude > 0:
        raise ValueError("amplitude must be positive")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    e = rng.uniform(-1.0, 1.0, size=dictionary.C.shape) * (amplitude * np.abs(dictionary.C).max())
    C = dictionary.C
    gram = dictionary.gram + C.T @ e + e.T @ C + e.T @ e
    norms = np.sqrt(np.diag(gram))
    gram = gram / np.outer(norms, norms)
    gram = 0.5 * (gram + gram.T)
    atoms = None
    if dictionary.atoms is not None:
        atoms = (dictionary.atoms + obs.W.columns @ e) / norms
    return Dictionary(atoms, (C + e) / norms, gram, dictionary.params)
