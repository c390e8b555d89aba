"""PBDW recovery, residual surrogates and surrogate-based space selection."""

import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io
from .errors import ConvergenceWarning, IllPosedError, RankError
from .linalg import BasisMatrix, u_orthonormalize
from .model import ParameterBox, separated

__all__ = [
    "ObservationSpace", "RecoveryResult", "SketchedOffline", "ExactSurrogate",
    "build_observation", "pbdw_coefficients", "pbdw_recover", "stability_constants",
    "box_ls_solve", "surrogate_exact", "sketched_offline", "surrogate_sketched",
    "select_space",
]

ILL_POSED_THRESHOLD = 1e-12
MU_INFINITE_BELOW = 1e-14


@dataclass
class ObservationSpace:
    """Sensor functionals and a U-orthonormal basis ``W`` of their Riesz representers."""

    space: object
    sensors: np.ndarray
    W: BasisMatrix

    @property
    def m(self):
        return self.W.size

    def observe(self, u):
        """Coordinates ``W^T R_U u`` of ``P_W u``."""
        return self.W.columns.T @ (self.space.gram @ self.space.check_vector(u, "u"))

    def cross_gramian(self, basis):
        cols = basis.columns if isinstance(basis, BasisMatrix) else np.asarray(basis, float)
        return self.W.columns.T @ (self.space.gram @ cols)


@dataclass
class RecoveryResult:
    """One recovered state ``V v* + W eta*`` and how it was obtained."""

    background_coeffs: np.ndarray
    correction_coeffs: np.ndarray
    state: np.ndarray = None
    support: tuple = ()
    surrogate_value: float = math.nan
    mu_of_space: float = math.nan
    atom_coeffs: np.ndarray = None
    alpha: float = math.nan
    xi: np.ndarray = None
    termination_reason: str = ""
    selected_index: int = -1
    skipped: tuple = field(default=())


def build_observation(space, sensor_functionals, tol=1e-12):
    """Riesz representers of the sensors, U-orthonormalized.

    Raises :class:`RankError` naming the dropped sensors if the functionals
    are linearly dependent.
    """
    sensors = np.asarray(sensor_functionals, dtype=float)
    if sensors.ndim == 1:
        sensors = sensors[:, None]
    reps = space.solve(sensors)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        W = u_orthonormalize(space, reps, tol=tol)
    if W.dropped:
        raise RankError(f"linearly dependent sensor functionals at indices {list(W.dropped)}",
                        dropped=W.dropped)
    return ObservationSpace(space, sensors, W)


def pbdw_coefficients(C, w, threshold=ILL_POSED_THRESHOLD):
    """Minimum-norm solution of ``min ||C v - w||`` and the update ``w - C v``.

    Returns ``(v, eta, sigma_min)``; raises :class:`IllPosedError` when
    ``sigma_min(C) <= threshold`` (including ``n > m``).
    """
    C = np.asarray(C, dtype=float)
    w = np.asarray(w, dtype=float)
    m, n = C.shape
    if n == 0:
        return np.zeros(0), w.copy(), 1.0
    U, s, Vt = np.linalg.svd(C, full_matrices=False)
    smin = float(s[-1]) if n <= m else 0.0
    if smin <= threshold:
        raise IllPosedError(smin, threshold)
    v = Vt.T @ ((U.T @ w) / s)
    return v, w - C @ v, smin


def stability_constants(obs, V):
    """``(beta, mu)`` with ``beta = sigma_min(W^T R_U V)`` and ``mu = 1 / beta``.

    ``mu`` is ``math.inf`` when ``beta <= 1e-14``.
    """
    if not V.u_orthonormal:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            V = u_orthonormalize(obs.space, V)
    n = V.size
    if n == 0:
        return 1.0, 1.0
    if n > obs.m:
        return 0.0, math.inf
    beta = float(np.linalg.svd(obs.cross_gramian(V), compute_uv=False)[-1])
    beta = min(beta, 1.0)
    mu = math.inf if beta <= MU_INFINITE_BELOW else 1.0 / beta
    return beta, mu


def pbdw_recover(obs, V, w, threshold=ILL_POSED_THRESHOLD):
    """One-space PBDW estimate ``A_V(w) = V v* + W eta*``.

    ``w`` holds the coordinates of ``P_W u`` in the basis ``W``.
    """
    w = np.asarray(w, dtype=float)
    if w.shape != (obs.m,):
        raise ValueError(f"expected {obs.m} observation coordinates, got shape {w.shape}")
    C = obs.cross_gramian(V)
    v, eta, smin = pbdw_coefficients(C, w, threshold)
    state = obs.W.columns @ eta
    if V.size:
        state = state + V.columns @ v
    mu = 1.0 / smin if V.u_orthonormal else stability_constants(obs, V)[1]
    return RecoveryResult(background_coeffs=v, correction_coeffs=eta, state=state,
                          mu_of_space=mu)


def _bounds(box):
    if isinstance(box, ParameterBox):
        return box.lo, box.hi
    lo, hi = box
    return np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)


def _lipschitz(A, iters=200):
    d = A.shape[1]
    x = np.ones(d) / math.sqrt(d)
    lam = 0.0
    for _ in range(iters):
        y = A.T @ (A @ x)
        new = float(np.linalg.norm(y))
        if new == 0.0:
            return 0.0
        x = y / new
        if abs(new - lam) <= 1e-10 * new:
            lam = new
            break
        lam = new
    return lam


def box_ls_solve(A, b, box, tol=1e-9, max_iter=100_000, polish_every=10):
    """Minimize ``||A theta - b||_2`` over a box.

    Accelerated projected gradient with adaptive (gradient) restart, started
    from the box center, with periodic active-set polishing: the free
    variables suggested by the current iterate are solved exactly and the
    candidate is accepted if it passes the first-order test
    ``||theta - clip(theta - grad)|| <= tol * (1 + ||A^T b||)``.
    ``polish_every=0`` disables polishing.

    Returns ``(theta, value)``.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float)
    lo, hi = _bounds(box)
    d = A.shape[1]
    if lo.shape != (d,) or hi.shape != (d,):
        raise ValueError(f"box dimension {lo.shape} does not match {d} columns")
    x = 0.5 * (lo + hi)
    if d == 0:
        return x, float(np.linalg.norm(b))
    gtol = tol * (1.0 + float(np.linalg.norm(A.T @ b)))
    lip = _lipschitz(A) * 1.01
    if lip == 0.0:
        return x, float(np.linalg.norm(b))
    scale = np.maximum(1.0, np.maximum(np.abs(lo), np.abs(hi)))

    def grad(z):
        return A.T @ (A @ z - b)

    def pg_norm(z):
        return float(np.linalg.norm(z - np.clip(z - grad(z), lo, hi)))

    def polish(z):
        bound = np.where(z <= lo + 1e-12 * scale, -1, np.where(z >= hi - 1e-12 * scale, 1, 0))
        g = grad(z)
        bound[(bound == -1) & (g < 0)] = 0
        bound[(bound == 1) & (g > 0)] = 0
        for _ in range(d + 1):
            cand = np.where(bound == -1, lo, np.where(bound == 1, hi, 0.0))
            free = bound == 0
            if np.any(free):
                rhs = b - A[:, ~free] @ cand[~free]
                cand[free] = np.linalg.lstsq(A[:, free], rhs, rcond=None)[0]
            viol = np.maximum(lo - cand, cand - hi) / scale
            if np.all(viol <= 1e-12):
                cand = np.clip(cand, lo, hi)
                return cand if pg_norm(cand) <= gtol else None
            worst = int(np.argmax(np.where(free, viol, -np.inf)))
            bound[worst] = -1 if cand[worst] < lo[worst] else 1
        return None

    check_every = polish_every or 10
    y = x.copy()
    t = 1.0
    for it in range(max_iter):
        if it % check_every == 0:
            if pg_norm(x) <= gtol:
                break
            cand = polish(x) if polish_every else None
            if cand is not None:
                x = cand
                break
        x_new = np.clip(y - grad(y) / lip, lo, hi)
        if (y - x_new) @ (x_new - x) > 0:
            t = 1.0
            y = x_new.copy()
        else:
            t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
            y = x_new + ((t - 1.0) / t_new) * (x_new - x)
            t = t_new
        x = x_new
    else:
        best = pg_norm(x)
        warnings.warn(f"box_ls_solve hit the iteration cap {max_iter}; projected gradient "
                      f"{best:.3e} > {gtol:.3e}", ConvergenceWarning, stacklevel=2)
    return x, float(np.linalg.norm(A @ x - b))


def _affine_ls(G, g, theta_linear, theta_offset):
    # G theta(xi) - g with theta(xi) = M xi + c
    return G @ theta_linear, g - G @ theta_offset


def surrogate_exact(model, v):
    """``S(v) = min_xi ||B(xi) v - f(xi)||_U'`` over the model's box.

    The columns of ``G(v)`` and ``g(v)`` are mapped through ``Q R_U^{-1}``
    once, turning the dual-norm problem into a Euclidean box least squares.
    Returns ``(value, xi*)``.
    """
    res = separated(model, v)
    space = model.space
    Gt = space.apply_factor(space.solve(res.G)) if res.G.shape[1] else np.zeros((space.factor_rows, 0))
    gt = space.apply_factor(space.solve(res.g)) if np.any(res.g) else np.zeros(space.factor_rows)
    A, b = _affine_ls(Gt, gt, model.theta_linear, model.theta_offset)
    xi, value = box_ls_solve(A, b, model.box)
    return value, xi


@dataclass
class SketchedOffline:
    """Sketched affine terms ``Theta R_U^{-1} B_i U`` and ``Theta R_U^{-1} f_j``.

    ``U = (W | V)``: the first ``n_obs`` columns are the observation basis,
    the remaining ``n_atoms`` the dictionary atoms.
    """

    operator_blocks: list
    rhs_sketches: list
    n_obs: int
    n_atoms: int
    box: ParameterBox
    theta_linear: np.ndarray
    theta_offset: np.ndarray
    embedding: dict = field(default_factory=dict)

    @property
    def rows(self):
        return self.rhs_sketches[0].shape[0]

    def evaluate(self, a):
        return surrogate_sketched(self, a)

    def save(self, directory):
        directory = Path(directory)
        for i, blk in enumerate(self.operator_blocks):
            io.save_array(directory / f"B{i}", blk, role=f"sketched operator term {i}",
                          seed=self.embedding.get("seed"))
        for j, s in enumerate(self.rhs_sketches):
            io.save_array(directory / f"f{j}", s, role=f"sketched rhs term {j}",
                          seed=self.embedding.get("seed"))
        io.save_array(directory / "theta_linear", self.theta_linear, role="coefficient map")
        io.save_array(directory / "theta_offset", self.theta_offset, role="coefficient offset")
        io.write_json(directory / "manifest.json", {
            "embedding": self.embedding, "n_obs": self.n_obs, "n_atoms": self.n_atoms,
            "m_B": len(self.operator_blocks) - 1, "m_f": len(self.rhs_sketches) - 1,
            "box": self.box.manifest(),
        })

    @classmethod
    def load(cls, directory):
        directory = Path(directory)
        man = io.read_json(directory / "manifest.json")
        blocks = [io.load_array(directory / f"B{i}") for i in range(man["m_B"] + 1)]
        rhs = [io.load_array(directory / f"f{j}") for j in range(man["m_f"] + 1)]
        box = ParameterBox(man["box"]["lower"], man["box"]["upper"], man["box"]["sampling"])
        return cls(blocks, rhs, man["n_obs"], man["n_atoms"], box,
                   io.load_array(directory / "theta_linear"),
                   io.load_array(directory / "theta_offset"), man["embedding"])


def sketched_offline(model, obs, dict_basis, emb):
    """Precompute every sketched affine block for ``U = (W | V)``."""
    atoms = dict_basis.columns if isinstance(dict_basis, BasisMatrix) else np.asarray(dict_basis, float)
    if atoms.ndim == 1:
        atoms = atoms[:, None]
    U = np.hstack([obs.W.columns, atoms])
    blocks = [emb.dual(b @ U) for b in model.operator_terms]
    rhs = [emb.dual(f) for f in model.rhs_terms]
    return SketchedOffline(blocks, rhs, obs.m, atoms.shape[1], model.box,
                           model.theta_linear.copy(), model.theta_offset.copy(),
                           emb.spec.manifest())


def surrogate_sketched(offline, a, box=None):
    """``S^Theta(U a) = min_xi ||G^Theta(a) theta(xi) - g^Theta(a)||_2``.

    Only the columns in the support of ``a`` are touched, so the cost does
    not depend on the state dimension.  Returns ``(value, xi*)``.
    """
    a = np.asarray(a, dtype=float)
    if a.shape != (offline.n_obs + offline.n_atoms,):
        raise ValueError(f"coefficient vector must have length {offline.n_obs + offline.n_atoms}")
    sup = np.flatnonzero(a)
    coef = a[sup]
    cols = [blk[:, sup] @ coef for blk in offline.operator_blocks[1:]]
    cols += [-s for s in offline.rhs_sketches[1:]]
    G = np.column_stack(cols) if cols else np.zeros((offline.rows, 0))
    g = offline.rhs_sketches[0] - offline.operator_blocks[0][:, sup] @ coef
    A, rhs = _affine_ls(G, g, offline.theta_linear, offline.theta_offset)
    xi, value = box_ls_solve(A, rhs, box if box is not None else offline.box)
    return value, xi


class ExactSurrogate:
    """Non-sketched surrogate over coefficient vectors ``a`` of ``U = (W | V)``."""

    def __init__(self, model, obs, atoms):
        self.model = model
        self.obs = obs
        self.atoms = atoms.columns if isinstance(atoms, BasisMatrix) else np.asarray(atoms, float)

    def evaluate(self, a):
        a = np.asarray(a, dtype=float)
        m = self.obs.m
        v = self.obs.W.columns @ a[:m]
        sup = np.flatnonzero(a[m:])
        if sup.size:
            v = v + self.atoms[:, sup] @ a[m:][sup]
        return surrogate_exact(self.model, v)


def select_space(candidates, surrogate_values):
    """Index of the smallest surrogate value (first one on ties, NaN last)."""
    values = np.asarray(surrogate_values, dtype=float)
    if values.size == 0:
        raise ValueError("select_space needs at least one candidate")
    if candidates is not None and len(candidates) != values.size:
        raise ValueError("one surrogate value per candidate is required")
    return int(np.argmin(np.where(np.isnan(values), np.inf, values)))
