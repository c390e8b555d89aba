"""Desk-scale problem generators on the unit square.

Both generators use P1 finite elements on a structured right-triangle mesh
(each grid square split along its ``(0,0)-(1,1)`` diagonal) with homogeneous
Dirichlet conditions imposed by removing boundary rows and columns.
"""

import math

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError
from .linalg import InnerProductSpace
from .model import AffineModel, ParameterBox, _combine, solve_state

__all__ = [
    "GridMesh", "SensorSpec", "SENSOR_PATTERNS",
    "thermal_block", "advection_diffusion_lite", "sensors_radial", "sensor_pattern",
    "sample_parameters", "snapshots",
]

DEFAULT_SENSOR_WIDTH = 2.0 ** -6


class GridMesh:
    """Structured triangulation of the unit square with ``n_h`` cells per side.

    Interior nodes are numbered x-fastest; ``dof[node]`` is ``-1`` on the
    boundary.
    """

    def __init__(self, n_h):
        if n_h < 2:
            raise ValueError("need at least two cells per side")
        self.n_h = n_h
        self.h = 1.0 / n_h
        ii, jj = np.meshgrid(np.arange(n_h + 1), np.arange(n_h + 1), indexing="xy")
        self.nodes = np.column_stack([ii.ravel(), jj.ravel()]) * self.h
        node = lambda i, j: j * (n_h + 1) + i  # noqa: E731
        ci, cj = np.meshgrid(np.arange(n_h), np.arange(n_h), indexing="xy")
        ci, cj = ci.ravel(), cj.ravel()
        lower = np.column_stack([node(ci, cj), node(ci + 1, cj), node(ci + 1, cj + 1)])
        upper = np.column_stack([node(ci, cj), node(ci + 1, cj + 1), node(ci, cj + 1)])
        self.triangles = np.vstack([lower, upper])
        interior = (ii.ravel() > 0) & (ii.ravel() < n_h) & (jj.ravel() > 0) & (jj.ravel() < n_h)
        self.dof = np.full(self.nodes.shape[0], -1)
        self.dof[interior] = np.arange(int(interior.sum()))
        self.n_dofs = int(interior.sum())

        p = self.nodes[self.triangles]  # (E, 3, 2)
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
        self.areas = 0.5 * np.abs(det)
        # Gradients of the barycentric coordinates (constant per element).
        g1 = np.column_stack([e2[:, 1], -e2[:, 0]]) / det[:, None]
        g2 = np.column_stack([-e1[:, 1], e1[:, 0]]) / det[:, None]
        self.grads = np.stack([-g1 - g2, g1, g2], axis=1)  # (E, 3, 2)
        self.centroids = p.mean(axis=1)

    @property
    def diameter(self):
        return math.sqrt(2.0) * self.h

    def assemble(self, local, mask=None):
        """Assemble element matrices ``local`` (E, 3, 3) and restrict to interior dofs."""
        tri = self.triangles if mask is None else self.triangles[mask]
        local = local if mask is None else local[mask]
        rows = np.repeat(tri, 3, axis=1).ravel()
        cols = np.tile(tri, (1, 3)).ravel()
        full = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(len(self.nodes),) * 2).tocsr()
        keep = np.flatnonzero(self.dof >= 0)
        out = full[keep][:, keep].tocsr()
        out.sum_duplicates()
        out.sort_indices()
        return out

    def stiffness_local(self):
        return self.areas[:, None, None] * np.einsum("eid,ejd->eij", self.grads, self.grads)

    def load(self, func, n_sub=4):
        """``int func * phi_i`` by midpoint quadrature on an ``n_sub``-refinement of each element."""
        lam, wts = _refined_midpoints(n_sub)
        p = self.nodes[self.triangles]
        pts = np.einsum("qk,ekd->eqd", lam, p)  # (E, Q, 2)
        vals = func(pts[..., 0], pts[..., 1])  # (E, Q)
        local = self.areas[:, None] * np.einsum("q,eq,qk->ek", wts, vals, lam)
        out = np.zeros(len(self.nodes))
        np.add.at(out, self.triangles.ravel(), local.ravel())
        return out[self.dof >= 0]

    def interior_values(self, func):
        pts = self.nodes[self.dof >= 0]
        return func(pts[:, 0], pts[:, 1])


def _refined_midpoints(n):
    """Barycentric centroids and weights of the uniform ``n``-refinement of a triangle."""
    pts = []
    for a in range(n):
        for b in range(n - a):
            pts.append(((a + 1 / 3) / n, (b + 1 / 3) / n))
            if a + b <= n - 2:
                pts.append(((a + 2 / 3) / n, (b + 2 / 3) / n))
    pts = np.array(pts)
    lam = np.column_stack([1.0 - pts[:, 0] - pts[:, 1], pts[:, 0], pts[:, 1]])
    return lam, np.full(len(pts), 1.0 / n**2)


def thermal_block(n_h=33):
    """Nine-block heat conduction with conductivities ``xi`` in ``[0.1, 1]^9``.

    ``B(xi) = sum_i xi_i K_i`` where ``K_i`` is the stiffness restricted to
    block ``i = 1 + bx + 3 by``; the source is 1 and ``R_U`` is the unit
    conductivity stiffness.
    """
    if n_h % 3 or n_h < 3:
        raise ValueError(f"n_h must be a positive multiple of 3, got {n_h}")
    mesh = GridMesh(n_h)
    local = mesh.stiffness_local()
    block = (np.floor(mesh.centroids[:, 0] * 3).astype(int)
             + 3 * np.floor(mesh.centroids[:, 1] * 3).astype(int))
    zero = sp.csr_matrix((mesh.n_dofs, mesh.n_dofs))
    terms = [zero] + [mesh.assemble(local, block == i) for i in range(9)]
    gram = sp.csr_matrix(_combine(terms, np.ones(9)))
    space = InnerProductSpace(gram)
    f = mesh.load(lambda x, y: np.ones_like(x), n_sub=1)
    box = ParameterBox([0.1] * 9, [1.0] * 9, "log_uniform")
    model = AffineModel(terms, [f], box, space, name="thermal_block",
                        metadata={"n_h": n_h, "blocks": "3x3"}, mesh=mesh)
    return space, model


def _stream_fields(n_fields=10, radius=0.25):
    """Divergence-free fields ``(d psi/dy, -d psi/dx)`` with ``psi = 16 x(1-x) y(1-y) p``.

    Each ``p`` is a Gaussian envelope around one of five centers, alone
    (rotational) or times ``(x - x0)(y - y0)`` (strain), so the ten fields
    are linearly independent.
    """
    centers = [(0.5, 0.5), (0.25, 0.25), (0.75, 0.25), (0.25, 0.75), (0.75, 0.75)]
    r2 = radius**2

    def envelope(x, y, x0, y0):
        g = np.exp(-((x - x0) ** 2 + (y - y0) ** 2) / r2)
        return g, -2.0 * (x - x0) / r2 * g, -2.0 * (y - y0) / r2 * g

    fields = []
    for x0, y0 in centers:
        def rot(x, y, x0=x0, y0=y0):
            return envelope(x, y, x0, y0)

        def strain(x, y, x0=x0, y0=y0):
            g, gx, gy = envelope(x, y, x0, y0)
            q = (x - x0) * (y - y0)
            return q * g, (y - y0) * g + q * gx, (x - x0) * g + q * gy

        fields += [rot, strain]
    out = []
    for shape in fields[:n_fields]:
        def vel(x, y, shape=shape):
            b = 16.0 * x * (1 - x) * y * (1 - y)
            bx = 16.0 * (1 - 2 * x) * y * (1 - y)
            by = 16.0 * x * (1 - x) * (1 - 2 * y)
            p, px, py = shape(x, y)
            psi_y = by * p + b * py
            psi_x = bx * p + b * px
            return np.stack([psi_y, -psi_x], axis=-1)
        out.append(vel)
    return out


def advection_diffusion_lite(n_h=40, kappa=0.01, velocity_scale=0.1):
    """Diffusion plus ten parametrized divergence-free advection fields.

    ``B(xi) = kappa K + sum_q xi_q A_q`` with ``A_q`` the (nonsymmetric)
    advection matrix of field ``q`` normalized to peak speed
    ``velocity_scale``.  The source is a disk of radius 0.1 at the center.
    Raises :class:`ConfigError` if the cell Peclet number reaches 2 at a
    corner of the parameter box.
    """
    if n_h < 8:
        raise ValueError(f"n_h must be at least 8, got {n_h}")
    if not kappa > 0:
        raise ValueError("kappa must be positive")
    mesh = GridMesh(n_h)
    stiff = mesh.assemble(mesh.stiffness_local())
    grid = np.linspace(0.0, 1.0, 201)
    gx, gy = np.meshgrid(grid, grid)
    c = mesh.centroids
    velocities, terms = [], [sp.csr_matrix(kappa * stiff)]
    for vel in _stream_fields():
        peak = np.linalg.norm(vel(gx, gy), axis=-1).max()
        v = velocity_scale * vel(c[:, 0], c[:, 1]) / peak  # (E, 2)
        velocities.append(v)
        # A[i, j] = int (v . grad phi_j) phi_i, one-point rule at the centroid
        local = (mesh.areas / 3.0)[:, None, None] * np.einsum("ed,ejd->ej", v, mesh.grads)[:, None, :]
        local = np.broadcast_to(local, (len(c), 3, 3))
        terms.append(mesh.assemble(np.ascontiguousarray(local)))
    box = ParameterBox([-1.0] * 5 + [-2.0] * 5, [-0.5] * 5 + [-1.0] * 5, "uniform")
    speeds = np.stack(velocities, axis=0)  # (10, E, 2)
    peclet = 0.0
    for xi in box.corners():
        field = np.einsum("q,qed->ed", xi, speeds)
        peclet = max(peclet, float(np.linalg.norm(field, axis=1).max()) * mesh.diameter / (2 * kappa))
    if peclet >= 2.0:
        raise ConfigError(f"cell Peclet number {peclet:.3f} >= 2 at a box corner; refine the mesh "
                          f"(n_h={n_h}) or reduce velocity_scale")
    space = InnerProductSpace(stiff)
    f = mesh.load(lambda x, y: (100.0 / math.pi) * ((x - 0.5) ** 2 + (y - 0.5) ** 2 <= 0.01),
                  n_sub=4)
    model = AffineModel(terms, [f], box, space, name="advection_diffusion_lite",
                        metadata={"n_h": n_h, "kappa": kappa, "velocity_scale": velocity_scale,
                                  "max_cell_peclet": peclet},
                        mesh=mesh)
    return space, model


class SensorSpec:
    """Sensor centers in the open unit square and a Gaussian width."""

    def __init__(self, locations, width=DEFAULT_SENSOR_WIDTH, name="custom"):
        loc = np.atleast_2d(np.asarray(locations, dtype=float))
        if loc.ndim != 2 or loc.shape[1] != 2 or len(loc) == 0:
            raise ValueError("locations must be a nonempty (m, 2) array")
        if np.any(loc <= 0) or np.any(loc >= 1):
            raise ValueError("sensor locations must be strictly interior")
        if not width > 0:
            raise ValueError("sensor width must be positive")
        self.locations = loc
        self.width = float(width)
        self.name = name

    @property
    def m(self):
        return len(self.locations)

    def manifest(self):
        return {"pattern": self.name, "width": self.width, "locations": self.locations.tolist()}


SENSOR_PATTERNS = {
    "m64": (1, 2, 3, 4, 5, 6, 7, 8),
    "m36": (1, 2, 4, 5, 7, 8),
    "m9": (1, 4, 7),
}


def sensor_pattern(name, width=DEFAULT_SENSOR_WIDTH):
    """Grid patterns at ``(i/9, j/9)`` for ``i, j`` in the named index set."""
    if name not in SENSOR_PATTERNS:
        raise ValueError(f"unknown sensor pattern {name!r}; choose from {sorted(SENSOR_PATTERNS)}")
    idx = SENSOR_PATTERNS[name]
    loc = [(i / 9.0, j / 9.0) for j in idx for i in idx]
    return SensorSpec(loc, width, name)


def sensors_radial(space, mesh, spec, n_sub=None):
    """Dual vectors ``l_i(phi_k) = int phi_k exp(-|x - x_i|^2 / sigma^2) dx``.

    Midpoint quadrature on a uniform refinement of each element, fine
    enough to resolve the Gaussian (about four points per width by default).
    Returns an ``(N, m)`` array.
    """
    if n_sub is None:
        n_sub = max(1, math.ceil(4.0 * mesh.h / spec.width))
    cols = []
    for x0, y0 in spec.locations:
        cols.append(mesh.load(lambda x, y: np.exp(-((x - x0) ** 2 + (y - y0) ** 2) / spec.width**2),
                              n_sub=n_sub))
    out = np.column_stack(cols)
    space.check_vector(out, "sensors")
    return out


def sample_parameters(box, count, seed):
    """``count`` i.i.d. draws from the box laws (Philox stream seeded by ``seed``)."""
    if count < 1:
        raise ValueError("count must be at least 1")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    u = rng.random((count, box.dim))
    lo, hi = box.lo, box.hi
    out = lo + (hi - lo) * u
    log = np.array([s == "log_uniform" for s in box.sampling])
    if log.any():
        llo, lhi = np.log(lo[log]), np.log(hi[log])
        out[:, log] = np.exp(llo + (lhi - llo) * u[:, log])
    return np.clip(out, lo, hi)


def snapshots(model, params):
    """Columns ``u(xi)`` for each parameter row."""
    params = np.atleast_2d(params)
    return np.column_stack([solve_state(model, xi) for xi in params])
