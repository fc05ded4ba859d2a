"""Discrete-time mechanics on a chain of time atoms.

Three model variants share the per-atom record (q_minus, q_center,
q_plus) with shared markers between neighboring atoms:

* :class:`ParticleModel` -- point particle in a potential, configuration
  space R^d with a constant metric.
* :class:`RigidBodyModel` -- SO(N)-valued history with per-half-atom
  algebra variables ``e`` and a diagonal inertia in the algebra basis.
* :class:`VeselovModel` -- group-valued chain with the trace-form
  discrete lagrangian, used for model comparison only.

Each variant provides the action, its variation split into interior,
gluing and boundary blocks, Newton solvers, Noether currents, boundary
forms (theta and the symplectic 2-form omega), and the reduced models
obtained by eliminating the interior markers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from ._newton import SolverFailure, newton_solve
from .complexes import TimeComplex
from .errors import NotASolutionError
from .liegroup import MatrixGroup

__all__ = [
    "ParticleModel",
    "RigidBodyModel",
    "VeselovModel",
    "ParticleHistory",
    "RigidHistory",
    "ParticleVariation",
    "RigidVariation",
    "DSBlocks",
    "SolveResult",
    "ReducedAction",
    "NotASolutionError",
    "SolverFailure",
    "ZeroPotential",
    "HarmonicPotential",
    "CallablePotential",
    "action",
    "dS",
    "residual_blocks",
    "solve",
    "first_variation",
    "theta_form",
    "omega_form",
    "symplectic_defect",
    "noether_current",
    "angular_momentum_matrices",
    "reduce_Sr",
    "boundary_model_Sb",
    "boundary_model_solve",
    "veselov_action",
    "veselov_momentum",
    "rigid_center_momentum",
    "veselov_vs_rigid",
    "perturb",
    "uniform_rotation_history",
]


# ---------------------------------------------------------------------------
# potentials


class ZeroPotential:
    def value(self, q):
        return 0.0

    def grad(self, q):
        return np.zeros_like(np.asarray(q, dtype=float))

    def hess(self, q):
        d = np.asarray(q).shape[-1]
        return np.zeros((d, d))


@dataclass
class HarmonicPotential:
    """V(q) = q.K.q / 2 with scalar or matrix stiffness K."""

    stiffness: object = 1.0

    def _k(self, d):
        k = np.asarray(self.stiffness, dtype=float)
        if k.ndim == 0:
            return float(k) * np.eye(d)
        return k

    def value(self, q):
        q = np.asarray(q, dtype=float)
        return 0.5 * float(q @ self._k(q.shape[0]) @ q)

    def grad(self, q):
        q = np.asarray(q, dtype=float)
        return self._k(q.shape[0]) @ q

    def hess(self, q):
        q = np.asarray(q, dtype=float)
        return self._k(q.shape[0])


@dataclass
class CallablePotential:
    value_fn: Callable
    grad_fn: Callable
    hess_fn: Optional[Callable] = None

    def value(self, q):
        return float(self.value_fn(np.asarray(q, dtype=float)))

    def grad(self, q):
        return np.asarray(self.grad_fn(np.asarray(q, dtype=float)), dtype=float)

    def hess(self, q):
        q = np.asarray(q, dtype=float)
        if self.hess_fn is not None:
            return np.asarray(self.hess_fn(q), dtype=float)
        d = q.shape[0]
        H = np.empty((d, d))
        h = 1e-6
        for j in range(d):
            dq = np.zeros(d)
            dq[j] = h
            H[:, j] = (self.grad(q + dq) - self.grad(q - dq)) / (2 * h)
        return 0.5 * (H + H.T)


# ---------------------------------------------------------------------------
# models


@dataclass
class ParticleModel:
    mass: float
    potential: object = field(default_factory=ZeroPotential)
    metric: Optional[np.ndarray] = None

    def metric_matrix(self, dim: int) -> np.ndarray:
        if self.metric is None:
            return np.eye(dim)
        g = np.asarray(self.metric, dtype=float)
        if g.shape != (dim, dim):
            raise ValueError("metric shape does not match configuration dimension")
        return g


@dataclass
class RigidBodyModel:
    group: MatrixGroup
    inertia: np.ndarray  # diagonal entries in the algebra basis

    def __post_init__(self):
        self.inertia = np.asarray(self.inertia, dtype=float)
        if self.inertia.shape != (self.group.dim,):
            raise ValueError("inertia must have one entry per algebra direction")
        if np.any(self.inertia <= 0):
            raise ValueError("inertia entries must be positive")


@dataclass
class VeselovModel:
    group: MatrixGroup
    inertia: np.ndarray  # N x N symmetric matrix (vector taken as diagonal)

    def __post_init__(self):
        lam = np.asarray(self.inertia, dtype=float)
        if lam.ndim == 1:
            lam = np.diag(lam)
        if lam.shape != (self.group.size, self.group.size):
            raise ValueError("inertia matrix must match the matrix size")
        self.inertia = 0.5 * (lam + lam.T)


# ---------------------------------------------------------------------------
# histories and variations


def _as_points(arr):
    """Rows = sites, columns = configuration components; promotes 1-D input."""
    a = np.asarray(arr, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    return a


@dataclass
class ParticleHistory:
    complex: TimeComplex
    qb: np.ndarray  # shared markers, shape (n+1, d)
    qc: np.ndarray  # atom centers, shape (n, d)

    def __post_init__(self):
        n = self.complex.n_atoms
        self.qb = _as_points(self.qb)
        self.qc = _as_points(self.qc)
        if self.qb.shape[0] != n + 1 or self.qc.shape[0] != n:
            raise ValueError("history arrays do not match the complex")
        if self.qb.shape[1] != self.qc.shape[1]:
            raise ValueError("marker and center dimensions differ")

    @property
    def dim(self) -> int:
        return self.qb.shape[1]

    def copy(self) -> "ParticleHistory":
        return ParticleHistory(self.complex, self.qb.copy(), self.qc.copy())


@dataclass
class ParticleVariation:
    vb: np.ndarray
    vc: np.ndarray

    def __post_init__(self):
        self.vb = _as_points(self.vb)
        self.vc = _as_points(self.vc)

    @staticmethod
    def zeros(cplx: TimeComplex, dim: int) -> "ParticleVariation":
        return ParticleVariation(
            np.zeros((cplx.n_atoms + 1, dim)), np.zeros((cplx.n_atoms, dim))
        )


@dataclass
class RigidHistory:
    complex: TimeComplex
    qb: np.ndarray  # (n+1, N, N) group elements at shared markers
    qc: np.ndarray  # (n, N, N) group elements at centers
    em: np.ndarray  # (n, D) algebra coefficients, minus half-atom
    ep: np.ndarray  # (n, D) algebra coefficients, plus half-atom

    def __post_init__(self):
        n = self.complex.n_atoms
        self.qb = np.asarray(self.qb, dtype=float)
        self.qc = np.asarray(self.qc, dtype=float)
        self.em = np.atleast_2d(np.asarray(self.em, dtype=float))
        self.ep = np.atleast_2d(np.asarray(self.ep, dtype=float))
        if self.qb.shape[0] != n + 1 or self.qc.shape[0] != n:
            raise ValueError("history arrays do not match the complex")
        if self.em.shape[0] != n or self.ep.shape[0] != n:
            raise ValueError("need one e per half-atom segment")

    def copy(self) -> "RigidHistory":
        return RigidHistory(
            self.complex, self.qb.copy(), self.qc.copy(), self.em.copy(), self.ep.copy()
        )


@dataclass
class RigidVariation:
    xib: np.ndarray  # (n+1, D) chart components at markers, dq = q alg(xi)
    xic: np.ndarray  # (n, D) chart components at centers
    dem: np.ndarray  # (n, D)
    dep: np.ndarray  # (n, D)

    @staticmethod
    def zeros(cplx: TimeComplex, dim: int) -> "RigidVariation":
        n = cplx.n_atoms
        return RigidVariation(
            np.zeros((n + 1, dim)), np.zeros((n, dim)), np.zeros((n, dim)), np.zeros((n, dim))
        )


@dataclass
class DSBlocks:
    """First-variation value split by which record slots the variation hits."""

    interior: float
    gluing: float
    boundary_minus: float
    boundary_plus: float

    @property
    def bulk(self) -> float:
        return self.interior + self.gluing

    @property
    def boundary(self) -> float:
        return self.boundary_minus + self.boundary_plus

    @property
    def total(self) -> float:
        return self.bulk + self.boundary


@dataclass
class SolveResult:
    history: object
    iterations: int
    residual: float
    branches: list = field(default_factory=list)
    notice: Optional[str] = None


@dataclass
class ReducedAction:
    value: float
    lifted: object = None
    branches: Optional[list] = None

    def __float__(self):
        return float(self.value)


# ---------------------------------------------------------------------------
# particle internals


def _particle_blocks(model: ParticleModel, hist: ParticleHistory):
    a = hist.complex.lapse
    n = hist.complex.n_atoms
    m = model.mass
    g = model.metric_matrix(hist.dim)
    qb, qc = hist.qb, hist.qc
    gradV = np.stack([model.potential.grad(q) for q in qc])
    interior = (
        -(m / a) * (qb[1:] - 2.0 * qc + qb[:-1]) @ g.T - 2.0 * a * gradV
    )
    # markers 1..n-1 shared between consecutive atoms
    gluing = (m / a) * ((qb[1:-1] - qc[:-1]) - (qc[1:] - qb[1:-1])) @ g.T
    bminus = -(m / a) * g @ (qc[0] - qb[0])
    bplus = (m / a) * g @ (qb[n] - qc[n - 1])
    return interior, gluing, bminus, bplus


def _particle_action(model, hist, include_boundary_halves=True):
    a = hist.complex.lapse
    m = model.mass
    g = model.metric_matrix(hist.dim)
    qb, qc = hist.qb, hist.qc
    dm = qc - qb[:-1]
    dp = qb[1:] - qc
    kinetic_m = 0.5 * m / a * np.einsum("na,ab,nb->n", dm, g, dm)
    kinetic_p = 0.5 * m / a * np.einsum("na,ab,nb->n", dp, g, dp)
    pot = a * np.array([model.potential.value(q) for q in qc])
    per_atom_minus = kinetic_m - pot
    per_atom_plus = kinetic_p - pot
    total = float(np.sum(per_atom_minus) + np.sum(per_atom_plus))
    if not include_boundary_halves:
        total -= float(per_atom_minus[0] + per_atom_plus[-1])
    return total


def _particle_dS(model, hist, var):
    interior, gluing, bm, bp = _particle_blocks(model, hist)
    n = hist.complex.n_atoms
    return DSBlocks(
        interior=float(np.sum(interior * var.vc)),
        gluing=float(np.sum(gluing * var.vb[1:-1])) if n > 1 else 0.0,
        boundary_minus=float(bm @ var.vb[0]),
        boundary_plus=float(bp @ var.vb[n]),
    )


def _particle_jacobian(model, hist, with_boundary=False):
    a = hist.complex.lapse
    n = hist.complex.n_atoms
    d = hist.dim
    m = model.mass
    g = model.metric_matrix(d)
    nu = n * d  # center block size
    nmark = (n - 1) * d
    size = nu + nmark
    J = np.zeros((size, size))
    for i in range(n):
        H = model.potential.hess(hist.qc[i])
        J[i * d : (i + 1) * d, i * d : (i + 1) * d] = (2 * m / a) * g - 2 * a * H
        for mk in (i, i + 1):  # markers bounding atom i
            if 1 <= mk <= n - 1:
                c = nu + (mk - 1) * d
                J[i * d : (i + 1) * d, c : c + d] = -(m / a) * g
    for j in range(1, n):
        r = nu + (j - 1) * d
        J[r : r + d, r : r + d] = (2 * m / a) * g
        for at in (j - 1, j):
            J[r : r + d, at * d : (at + 1) * d] = -(m / a) * g
    if not with_boundary:
        return J
    B = np.zeros((size, 2 * d))
    B[0:d, 0:d] = -(m / a) * g
    B[(n - 1) * d : n * d, d : 2 * d] = -(m / a) * g
    return J, B


def _particle_pack(hist):
    n = hist.complex.n_atoms
    return np.concatenate([hist.qc.ravel(), hist.qb[1:n].ravel()])


def _particle_unpack(hist, x):
    n, d = hist.complex.n_atoms, hist.dim
    out = hist.copy()
    out.qc = x[: n * d].reshape(n, d)
    out.qb[1:n] = x[n * d :].reshape(n - 1, d)
    return out


def _particle_solve(model, cplx, q_start, q_end, tol, max_iter):
    q_start = np.atleast_1d(np.asarray(q_start, dtype=float))
    q_end = np.atleast_1d(np.asarray(q_end, dtype=float))
    d = q_start.shape[0]
    n = cplx.n_atoms
    times = np.array([t for _, _, t in cplx.decimation_points()])
    frac = times / cplx.total_time
    chain = q_start[None, :] + frac[:, None] * (q_end - q_start)[None, :]
    hist = ParticleHistory(cplx, chain[0::2], chain[1::2])

    def residual(h):
        interior, gluing, _, _ = _particle_blocks(model, h)
        return np.concatenate([interior.ravel(), gluing.ravel()])

    def jacobian(h):
        return _particle_jacobian(model, h)

    def apply_step(h, dx):
        return _particle_unpack(h, _particle_pack(h) + dx)

    hist, info = newton_solve(
        hist, residual, jacobian, apply_step, tol=tol, max_iter=max_iter
    )
    return SolveResult(hist, info["iterations"], info["residual"])


def _particle_first_variation(model, hist, v_start, v_end):
    d = hist.dim
    n = hist.complex.n_atoms
    v_start = np.atleast_1d(np.asarray(v_start, dtype=float))
    v_end = np.atleast_1d(np.asarray(v_end, dtype=float))
    J, B = _particle_jacobian(model, hist, with_boundary=True)
    rhs = -(B @ np.concatenate([v_start, v_end]))
    x = np.linalg.solve(J, rhs)
    var = ParticleVariation.zeros(hist.complex, d)
    var.vc = x[: n * d].reshape(n, d)
    if n > 1:
        var.vb[1:n] = x[n * d :].reshape(n - 1, d)
    var.vb[0] = v_start
    var.vb[n] = v_end
    return var


def _particle_theta(model, hist, var, site):
    nu, side = site
    a = hist.complex.lapse
    g = model.metric_matrix(hist.dim)
    m = model.mass
    if side == "-":
        p = (m / a) * g @ (hist.qc[nu - 1] - hist.qb[nu - 1])
        return float(p @ var.vb[nu - 1])
    p = (m / a) * g @ (hist.qb[nu] - hist.qc[nu - 1])
    return float(p @ var.vb[nu])


def _particle_omega(model, hist, v, w, site):
    nu, side = site
    a = hist.complex.lapse
    g = model.metric_matrix(hist.dim)
    m = model.mass
    mk = nu - 1 if side == "-" else nu
    pair = v.vc[nu - 1] @ g @ w.vb[mk] - w.vc[nu - 1] @ g @ v.vb[mk]
    sign = -1.0 if side == "-" else 1.0
    return float(sign * (m / a) * pair)


# ---------------------------------------------------------------------------
# rigid-body internals

# All group-element derivatives below use the right chart dq = q alg(xi);
# the constant trace contractions Tr(f_a X f_b Y) are batched over atoms.


def _tfxfy(F, X, Y):
    return np.einsum("ipq,nqr,jrs,nsp->nij", F, X, F, Y, optimize=True)


def _tfx(F, X):
    return np.einsum("ipq,nqp->ni", F, X)


def _rigid_parts(model: RigidBodyModel, hist: RigidHistory):
    G = model.group
    F = G.basis.real
    qb, qc = hist.qb, hist.qc
    phim = np.einsum("nji,njk->nik", qb[:-1], qc)  # qb[i]^T qc[i]
    phip = np.einsum("nji,njk->nik", qc, qb[1:])
    Em = np.einsum("ni,ipq->npq", hist.em, F)
    Ep = np.einsum("ni,ipq->npq", hist.ep, F)
    return F, phim, phip, Em, Ep


def _rigid_u_w(F, phim, phip, Em, Ep):
    um = -_tfx(F, np.einsum("npq,nqr->npr", phim, Em))
    wm = -_tfx(F, np.einsum("npq,nqr->npr", Em, phim))
    up = -_tfx(F, np.einsum("npq,nqr->npr", Ep, phip))
    wp = -_tfx(F, np.einsum("npq,nqr->npr", phip, Ep))
    return um, wm, up, wp


def _rigid_blocks(model, hist):
    a = hist.complex.lapse
    F, phim, phip, Em, Ep = _rigid_parts(model, hist)
    um, wm, up, wp = _rigid_u_w(F, phim, phip, Em, Ep)
    theta_m = -_tfx(F, phim)
    theta_p = -_tfx(F, phip)
    inv_inertia = 1.0 / model.inertia
    blocks = {
        "interior": wm - wp,
        "gluing": up[:-1] - um[1:],
        "wedge_minus": theta_m - a * hist.em * inv_inertia,
        "wedge_plus": theta_p - a * hist.ep * inv_inertia,
        "boundary_minus": -um[0],
        "boundary_plus": up[-1],
    }
    return blocks


def _rigid_action(model, hist, include_boundary_halves=True):
    a = hist.complex.lapse
    F, phim, phip, _, _ = _rigid_parts(model, hist)
    theta_m = -_tfx(F, phim)
    theta_p = -_tfx(F, phip)
    inv_inertia = 1.0 / model.inertia
    lm = np.sum(hist.em * theta_m, axis=1) - 0.5 * a * np.sum(
        hist.em**2 * inv_inertia, axis=1
    )
    lp = np.sum(hist.ep * theta_p, axis=1) - 0.5 * a * np.sum(
        hist.ep**2 * inv_inertia, axis=1
    )
    total = float(np.sum(lm) + np.sum(lp))
    if not include_boundary_halves:
        total -= float(lm[0] + lp[-1])
    return total


def _rigid_dS(model, hist, var):
    n = hist.complex.n_atoms
    b = _rigid_blocks(model, hist)
    interior = float(np.sum(b["interior"] * var.xic))
    interior += float(np.sum(b["wedge_minus"] * var.dem))
    interior += float(np.sum(b["wedge_plus"] * var.dep))
    gluing = float(np.sum(b["gluing"] * var.xib[1:-1])) if n > 1 else 0.0
    return DSBlocks(
        interior=interior,
        gluing=gluing,
        boundary_minus=float(b["boundary_minus"] @ var.xib[0]),
        boundary_plus=float(b["boundary_plus"] @ var.xib[n]),
    )


def _rigid_jacobian(model, hist, with_boundary=False):
    a = hist.complex.lapse
    n = hist.complex.n_atoms
    G = model.group
    D = G.dim
    F, phim, phip, Em, Ep = _rigid_parts(model, hist)
    one = np.broadcast_to(np.eye(G.size), phim.shape)
    mm = np.einsum("npq,nqr->npr", Em, phim)  # Em Phim
    pp = np.einsum("npq,nqr->npr", Ep, phip)  # Ep Phip
    mm_r = np.einsum("npq,nqr->npr", phim, Em)  # Phim Em
    pp_r = np.einsum("npq,nqr->npr", phip, Ep)  # Phip Ep

    T_EmPhim_1 = _tfxfy(F, mm, one)
    T_1_PhipEp = _tfxfy(F, one, pp_r)
    T_Em_Phim = _tfxfy(F, Em, phim)
    T_Phip_Ep = _tfxfy(F, phip, Ep)
    T_1_Phim = _tfxfy(F, one, phim)
    T_Phip_1 = _tfxfy(F, phip, one)
    T_EpPhip_1 = _tfxfy(F, pp, one)
    T_1_PhimEm = _tfxfy(F, one, mm_r)
    T_Ep_Phip = _tfxfy(F, Ep, phip)
    T_Phim_Em = _tfxfy(F, phim, Em)
    T_Phim_1 = _tfxfy(F, phim, one)
    T_1_Phip = _tfxfy(F, one, phip)

    nC, nM = n * D, (n - 1) * D
    size = nC + nM + 2 * n * D
    rows = {"interior": 0, "gluing": nC, "wm": nC + nM, "wp": nC + nM + n * D}
    cols = {"xic": 0, "xib": nC, "em": nC + nM, "ep": nC + nM + n * D}
    J = np.zeros((size, size))
    B = np.zeros((size, 2 * D))
    inv_inertia = np.diag(1.0 / model.inertia)

    def put(rkey, i, ckey, j, block):
        J[rows[rkey] + i * D : rows[rkey] + (i + 1) * D,
          cols[ckey] + j * D : cols[ckey] + (j + 1) * D] += block

    for i in range(n):
        put("interior", i, "xic", i, -T_EmPhim_1[i] - T_1_PhipEp[i])
        put("interior", i, "em", i, -T_1_Phim[i])
        put("interior", i, "ep", i, T_Phip_1[i])
        if 1 <= i <= n - 1:
            put("interior", i, "xib", i - 1, T_Em_Phim[i])
        elif with_boundary:
            B[rows["interior"] : rows["interior"] + D, 0:D] += T_Em_Phim[0]
        if i + 1 <= n - 1:
            put("interior", i, "xib", i, T_Phip_Ep[i])
        elif with_boundary:
            r0 = rows["interior"] + (n - 1) * D
            B[r0 : r0 + D, D : 2 * D] += T_Phip_Ep[n - 1]

        put("wm", i, "xic", i, -T_Phim_1[i])
        put("wm", i, "em", i, -a * inv_inertia)
        if 1 <= i <= n - 1:
            put("wm", i, "xib", i - 1, T_1_Phim[i])
        elif with_boundary:
            B[rows["wm"] : rows["wm"] + D, 0:D] += T_1_Phim[0]

        put("wp", i, "xic", i, T_1_Phip[i])
        put("wp", i, "ep", i, -a * inv_inertia)
        if i + 1 <= n - 1:
            put("wp", i, "xib", i, -T_Phip_1[i])
        elif with_boundary:
            r0 = rows["wp"] + (n - 1) * D
            B[r0 : r0 + D, D : 2 * D] += -T_Phip_1[n - 1]

    for j in range(1, n):
        p, mnu = j - 1, j  # atom on the plus side, atom on the minus side
        i = j - 1  # gluing row index
        put("gluing", i, "xib", j - 1, -T_EpPhip_1[p] - T_1_PhimEm[mnu])
        put("gluing", i, "xic", p, T_Ep_Phip[p])
        put("gluing", i, "xic", mnu, T_Phim_Em[mnu])
        put("gluing", i, "ep", p, -T_1_Phip[p])
        put("gluing", i, "em", mnu, T_Phim_1[mnu])

    if with_boundary:
        return J, B
    return J


def _rigid_pack_sizes(model, hist):
    n = hist.complex.n_atoms
    D = model.group.dim
    return n * D, (n - 1) * D


def _rigid_apply(model, hist, x):
    """Apply the packed increment x (same layout as the Jacobian columns)."""
    n = hist.complex.n_atoms
    D = model.group.dim
    G = model.group
    out = hist.copy()
    xic = x[: n * D].reshape(n, D)
    xib = x[n * D : n * D + (n - 1) * D].reshape(max(n - 1, 0), D)
    dem = x[n * D + (n - 1) * D : 2 * n * D + (n - 1) * D].reshape(n, D)
    dep = x[2 * n * D + (n - 1) * D :].reshape(n, D)
    for i in range(n):
        out.qc[i] = out.qc[i] @ G.exp(G.algebra_element(xic[i]))
    for j in range(1, n):
        out.qb[j] = out.qb[j] @ G.exp(G.algebra_element(xib[j - 1]))
    out.em = out.em + dem
    out.ep = out.ep + dep
    return out


def _rigid_residual_vector(model, hist):
    b = _rigid_blocks(model, hist)
    return np.concatenate(
        [
            b["interior"].ravel(),
            b["gluing"].ravel(),
            b["wedge_minus"].ravel(),
            b["wedge_plus"].ravel(),
        ]
    )


def _geodesic_chain(G, q_start, q_end, fractions):
    chi = G.log(G.inv(q_start) @ q_end)
    return [q_start @ G.exp(t * chi) for t in fractions]


def _slaved_e(model, phi, lapse):
    theta = -np.einsum("ipq,qp->i", model.group.basis.real, phi)
    return model.inertia * theta / lapse


def _rigid_guess(model, cplx, q_start, q_end):
    G = model.group
    times = np.array([t for _, _, t in cplx.decimation_points()])
    frac = times / cplx.total_time
    chain = _geodesic_chain(G, q_start, q_end, frac)
    n = cplx.n_atoms
    qb = np.stack(chain[0::2])
    qc = np.stack(chain[1::2])
    em = np.stack(
        [_slaved_e(model, qb[i].T @ qc[i], cplx.lapse) for i in range(n)]
    )
    ep = np.stack(
        [_slaved_e(model, qc[i].T @ qb[i + 1], cplx.lapse) for i in range(n)]
    )
    return RigidHistory(cplx, qb, qc, em, ep)


def _reflected_direction(G, chi):
    """Second square root of exp(chi): rotate by angle/2 - pi about the same axis.

    Only meaningful when chi generates a single-plane rotation (always
    true for SO(3)); returns None when the axis is degenerate.
    """
    coeffs = G.coefficients(chi)
    norm = np.linalg.norm(coeffs)
    if norm < 1e-8:
        return None
    angle = norm / np.sqrt(2.0)  # eigen-rotation angle for the SO(3) basis
    unit = chi / angle
    return (0.5 * angle - np.pi) * unit


def _rigid_solve(model, cplx, q_start, q_end, tol, max_iter, search_branches):
    G = model.group

    def run(hist0):
        def residual(h):
            return _rigid_residual_vector(model, h)

        def jacobian(h):
            return _rigid_jacobian(model, h)

        hist, info = newton_solve(
            hist0,
            residual,
            jacobian,
            lambda h, dx: _rigid_apply(model, h, dx),
            tol=tol,
            max_iter=max_iter,
        )
        return hist, info

    hist0 = _rigid_guess(model, cplx, q_start, q_end)
    hist, info = run(hist0)
    result = SolveResult(hist, info["iterations"], info["residual"])
    result.branches.append((_rigid_action(model, hist), hist))
    if search_branches and cplx.n_atoms == 1 and G.size == 3:
        chi = G.log(G.inv(q_start) @ q_end)
        half2 = _reflected_direction(G, chi)
        if half2 is not None:
            alt = hist.copy()
            alt.qc[0] = q_start @ G.exp(half2)
            alt.em[0] = _slaved_e(model, alt.qb[0].T @ alt.qc[0], cplx.lapse)
            alt.ep[0] = _slaved_e(model, alt.qc[0].T @ alt.qb[1], cplx.lapse)
            try:
                alt_hist, alt_info = run(alt)
            except SolverFailure:
                alt_hist = None
            if alt_hist is not None:
                gap = np.max(np.abs(alt_hist.qc[0] - hist.qc[0]))
                if gap > 1e-6:
                    result.branches.append(
                        (_rigid_action(model, alt_hist), alt_hist)
                    )
    result.branches.sort(key=lambda t: t[0])
    if len(result.branches) > 1:
        result.notice = "multiple solutions found ({} branches)".format(
            len(result.branches)
        )
        result.history = result.branches[0][1]
        result.residual = float(
            np.max(np.abs(_rigid_residual_vector(model, result.history)))
        )
    return result


def _rigid_first_variation(model, hist, xi_start, xi_end):
    n = hist.complex.n_atoms
    D = model.group.dim
    J, B = _rigid_jacobian(model, hist, with_boundary=True)
    rhs = -(B @ np.concatenate([np.asarray(xi_start, float), np.asarray(xi_end, float)]))
    x = np.linalg.solve(J, rhs)
    var = RigidVariation.zeros(hist.complex, D)
    var.xic = x[: n * D].reshape(n, D)
    if n > 1:
        var.xib[1:n] = x[n * D : n * D + (n - 1) * D].reshape(n - 1, D)
    var.dem = x[n * D + (n - 1) * D : 2 * n * D + (n - 1) * D].reshape(n, D)
    var.dep = x[2 * n * D + (n - 1) * D :].reshape(n, D)
    var.xib[0] = np.asarray(xi_start, dtype=float)
    var.xib[n] = np.asarray(xi_end, dtype=float)
    return var


def _rigid_site_momentum(model, hist, site):
    """u at the marker of the given site, as algebra coefficients."""
    nu, side = site
    F = model.group.basis.real
    i = nu - 1
    if side == "-":
        phim = hist.qb[i].T @ hist.qc[i]
        Em = model.group.algebra_element(hist.em[i]).real
        return -np.einsum("ipq,qp->i", F, phim @ Em)
    phip = hist.qc[i].T @ hist.qb[i + 1]
    Ep = model.group.algebra_element(hist.ep[i]).real
    return -np.einsum("ipq,qp->i", F, Ep @ phip)


def _rigid_theta(model, hist, var, site):
    nu, side = site
    mk = nu - 1 if side == "-" else nu
    u = _rigid_site_momentum(model, hist, site)
    return float(u @ var.xib[mk])


def _rigid_du(model, hist, var, site):
    """Directional derivative of the site momentum along a variation."""
    nu, side = site
    G = model.group
    F = G.basis.real
    i = nu - 1
    if side == "-":
        phim = hist.qb[i].T @ hist.qc[i]
        Em = G.algebra_element(hist.em[i]).real
        xi_m = G.algebra_element(var.xib[i]).real
        xi_c = G.algebra_element(var.xic[i]).real
        dphi = -xi_m @ phim + phim @ xi_c
        dE = G.algebra_element(var.dem[i]).real
        return -np.einsum("ipq,qp->i", F, dphi @ Em + phim @ dE)
    phip = hist.qc[i].T @ hist.qb[i + 1]
    Ep = G.algebra_element(hist.ep[i]).real
    xi_c = G.algebra_element(var.xic[i]).real
    xi_m = G.algebra_element(var.xib[i + 1]).real
    dphi = -xi_c @ phip + phip @ xi_m
    dE = G.algebra_element(var.dep[i]).real
    return -np.einsum("ipq,qp->i", F, dE @ phip + Ep @ dphi)


def _rigid_omega(model, hist, v, w, site):
    nu, side = site
    G = model.group
    mk = nu - 1 if side == "-" else nu
    u = _rigid_site_momentum(model, hist, site)
    du_v = _rigid_du(model, hist, v, site)
    du_w = _rigid_du(model, hist, w, site)
    xi = v.xib[mk]
    eta = w.xib[mk]
    bracket = G.coefficients(
        G.bracket(G.algebra_element(xi), G.algebra_element(eta))
    ).real
    val = -(eta @ du_v - xi @ du_w) + u @ bracket
    return float(val)


# ---------------------------------------------------------------------------
# public dispatchers


def action(model, hist, *, include_boundary_halves=True):
    """Total action of the history; optionally drop the two boundary half-atoms."""
    if isinstance(model, ParticleModel):
        return _particle_action(model, hist, include_boundary_halves)
    if isinstance(model, RigidBodyModel):
        return _rigid_action(model, hist, include_boundary_halves)
    raise TypeError("unsupported model type")


def dS(model, hist, var) -> DSBlocks:
    """First variation of the action along ``var``, split into blocks."""
    if isinstance(model, ParticleModel):
        return _particle_dS(model, hist, var)
    if isinstance(model, RigidBodyModel):
        return _rigid_dS(model, hist, var)
    raise TypeError("unsupported model type")


def residual_blocks(model, hist) -> dict:
    if isinstance(model, ParticleModel):
        interior, gluing, bm, bp = _particle_blocks(model, hist)
        return {
            "interior": interior,
            "gluing": gluing,
            "boundary_minus": bm,
            "boundary_plus": bp,
        }
    if isinstance(model, RigidBodyModel):
        return _rigid_blocks(model, hist)
    raise TypeError("unsupported model type")


def solve(
    model,
    cplx: TimeComplex,
    q_start,
    q_end,
    *,
    tol=None,
    max_iter=80,
    search_branches=False,
) -> SolveResult:
    """Newton solve with fixed boundary markers q_1- and q_n+."""
    if isinstance(model, ParticleModel):
        return _particle_solve(model, cplx, q_start, q_end, tol or 1e-12, max_iter)
    if isinstance(model, RigidBodyModel):
        return _rigid_solve(
            model, cplx, q_start, q_end, tol or 1e-10, max_iter, search_branches
        )
    raise TypeError("unsupported model type")


def first_variation(model, hist, v_start, v_end):
    """Tangent to the solution manifold with the given boundary components."""
    if isinstance(model, ParticleModel):
        return _particle_first_variation(model, hist, v_start, v_end)
    if isinstance(model, RigidBodyModel):
        return _rigid_first_variation(model, hist, v_start, v_end)
    raise TypeError("unsupported model type")


def theta_form(model, hist, var, site):
    """Boundary 1-form at ``site = (nu, '-')`` or ``(nu, '+')``."""
    if isinstance(model, ParticleModel):
        return _particle_theta(model, hist, var, site)
    if isinstance(model, RigidBodyModel):
        return _rigid_theta(model, hist, var, site)
    raise TypeError("unsupported model type")


def omega_form(model, hist, v, w, site):
    """Symplectic 2-form (minus the exterior derivative of theta) at a site."""
    if isinstance(model, ParticleModel):
        return _particle_omega(model, hist, v, w, site)
    if isinstance(model, RigidBodyModel):
        return _rigid_omega(model, hist, v, w, site)
    raise TypeError("unsupported model type")


def symplectic_defect(model, hist, var1, var2):
    """Oriented boundary sum of omega; vanishes on solutions with first variations."""
    n = hist.complex.n_atoms
    return -omega_form(model, hist, var1, var2, (1, "-")) + omega_form(
        model, hist, var1, var2, (n, "+")
    )


def _check_solution(model, hist, tol):
    blocks = residual_blocks(model, hist)
    bad = {}
    for key in ("interior", "gluing", "wedge_minus", "wedge_plus"):
        if key in blocks and np.size(blocks[key]):
            m = float(np.max(np.abs(blocks[key])))
            if m > tol:
                bad[key] = m
    if bad:
        raise NotASolutionError(
            "history does not satisfy the field equations: "
            + ", ".join("{}={:.3e}".format(k, v) for k, v in bad.items()),
            residuals=bad,
        )


def noether_sites(cplx: TimeComplex) -> list:
    return [(nu, side) for nu in cplx.atoms() for side in ("-", "+")]


def noether_current(model, hist, generator, *, require_solution=True, solution_tol=1e-6):
    """Conserved current of a symmetry generator, one value per half-atom site.

    ``generator`` is a translation vector for the particle (V must be
    translation invariant for conservation) and an algebra coefficient
    vector for the rigid body (left action, space rotations).
    """
    if require_solution:
        _check_solution(model, hist, solution_tol)
    sites = noether_sites(hist.complex)
    gen = np.atleast_1d(np.asarray(generator, dtype=float))
    vals = []
    if isinstance(model, ParticleModel):
        a = hist.complex.lapse
        g = model.metric_matrix(hist.dim)
        m = model.mass
        for nu, side in sites:
            if side == "-":
                diff = hist.qc[nu - 1] - hist.qb[nu - 1]
            else:
                diff = hist.qb[nu] - hist.qc[nu - 1]
            vals.append(-(m / a) * float(diff @ g @ gen))
        return sites, np.array(vals)
    if isinstance(model, RigidBodyModel):
        mats = angular_momentum_matrices(model, hist, require_solution=False)
        G = model.group
        for k in range(len(sites)):
            vals.append(float(np.sum(G.coefficients(mats[k]).real * gen)))
        return sites, np.array(vals)
    raise TypeError("unsupported model type")


def angular_momentum_matrices(model: RigidBodyModel, hist, *, require_solution=False, solution_tol=1e-6):
    """Space angular momentum matrix at each half-atom site (2n of them)."""
    if require_solution:
        _check_solution(model, hist, solution_tol)
    G = model.group
    out = []
    for nu in hist.complex.atoms():
        i = nu - 1
        Em = G.algebra_element(hist.em[i]).real
        Ep = G.algebra_element(hist.ep[i]).real
        q, qm, qp = hist.qc[i], hist.qb[i], hist.qb[i + 1]
        out.append(0.5 * (q @ Em @ qm.T + qm @ Em @ q.T))
        out.append(0.5 * (qp @ Ep @ q.T + q @ Ep @ qp.T))
    return np.stack(out)


def perturb(model, hist, var, t=1.0):
    """History displaced along a variation; group slots move in the right chart."""
    if isinstance(model, ParticleModel):
        out = hist.copy()
        out.qb = out.qb + t * var.vb
        out.qc = out.qc + t * var.vc
        return out
    if isinstance(model, RigidBodyModel):
        G = model.group
        out = hist.copy()
        for j in range(out.qb.shape[0]):
            out.qb[j] = out.qb[j] @ G.exp(G.algebra_element(t * var.xib[j]))
        for i in range(out.qc.shape[0]):
            out.qc[i] = out.qc[i] @ G.exp(G.algebra_element(t * var.xic[i]))
        out.em = out.em + t * var.dem
        out.ep = out.ep + t * var.dep
        return out
    raise TypeError("unsupported model type")


# ---------------------------------------------------------------------------
# reduced models


def reduce_Sr(model, bulk, cplx: TimeComplex) -> ReducedAction:
    """Reduced action of the bulk values q_1..q_n on the contracted domain.

    Interior markers are eliminated by the gluing equations: arithmetic
    midpoints for the particle, a per-site Newton solve (with the wedge
    equations eliminating e on the fly) for the rigid body.  The rigid
    eliminations can have two branches; the minimal-action branch enters
    the value and all branches are reported.
    """
    n = cplx.n_atoms
    a = cplx.lapse
    if isinstance(model, ParticleModel):
        q = _as_points(bulk)
        if q.shape[0] != n:
            raise ValueError("need one bulk value per atom")
        mids = 0.5 * (q[:-1] + q[1:])
        g = model.metric_matrix(q.shape[1])
        m = model.mass
        diff = q[1:] - q[:-1]
        kin = (m / (4 * a)) * np.einsum("na,ab,nb->n", diff, g, diff)
        pot = np.array([model.potential.value(x) for x in q])
        value = float(np.sum(kin) - a * (np.sum(pot[:-1]) + np.sum(pot[1:])))
        return ReducedAction(value, lifted=mids)
    if isinstance(model, RigidBodyModel):
        return _rigid_reduce(model, bulk, cplx)
    raise TypeError("unsupported model type")


def _pair_action(model, qa, mu, qb2, a):
    """L+ of the left atom plus L- of the right atom, e slaved on the wedges."""
    G = model.group
    F = G.basis.real
    phip = qa.T @ mu
    phim = mu.T @ qb2
    tp = -np.einsum("ipq,qp->i", F, phip)
    tm = -np.einsum("ipq,qp->i", F, phim)
    return float(np.sum(model.inertia * tp**2) + np.sum(model.inertia * tm**2)) / (2 * a)


def _pair_glue_residual(model, qa, mu, qb2, a):
    G = model.group
    F = G.basis.real
    phip = qa.T @ mu
    phim = mu.T @ qb2
    ep = _slaved_e(model, phip, a)
    em = _slaved_e(model, phim, a)
    Ep = G.algebra_element(ep).real
    Em = G.algebra_element(em).real
    up = -np.einsum("ipq,qp->i", F, Ep @ phip)
    um = -np.einsum("ipq,qp->i", F, phim @ Em)
    return up - um


def _pair_glue_jacobian(model, qa, mu, qb2, a):
    G = model.group
    F = G.basis.real
    D = G.dim
    phip = qa.T @ mu
    phim = mu.T @ qb2
    ep = _slaved_e(model, phip, a)
    em = _slaved_e(model, phim, a)
    Ep = G.algebra_element(ep).real
    Em = G.algebra_element(em).real
    J = np.empty((D, D))
    for b in range(D):
        fb = F[b]
        dphip = phip @ fb
        dphim = -fb @ phim
        dep = model.inertia * (-np.einsum("ipq,qp->i", F, dphip)) / a
        dem = model.inertia * (-np.einsum("ipq,qp->i", F, dphim)) / a
        dEp = G.algebra_element(dep).real
        dEm = G.algebra_element(dem).real
        dup = -np.einsum("ipq,qp->i", F, dEp @ phip + Ep @ dphip)
        dum = -np.einsum("ipq,qp->i", F, dphim @ Em + phim @ dEm)
        J[:, b] = dup - dum
    return J


def _rigid_reduce(model, bulk, cplx):
    G = model.group
    a = cplx.lapse
    n = cplx.n_atoms
    qs = [np.asarray(q, dtype=float) for q in bulk]
    if len(qs) != n:
        raise ValueError("need one bulk value per atom")
    total = 0.0
    lifted = []
    branches = []
    for i in range(n - 1):
        qa, qb2 = qs[i], qs[i + 1]
        chi = G.log(G.inv(qa) @ qb2)
        guesses = [0.5 * chi]
        refl = _reflected_direction(G, chi) if G.size == 3 else None
        if refl is not None:
            guesses.append(refl)
        found = []
        for half in guesses:
            mu0 = qa @ G.exp(half)

            def residual(mu):
                return _pair_glue_residual(model, qa, mu, qb2, a)

            def jacobian(mu):
                return _pair_glue_jacobian(model, qa, mu, qb2, a)

            try:
                mu, _ = newton_solve(
                    mu0,
                    residual,
                    jacobian,
                    lambda mu, dx: mu @ G.exp(G.algebra_element(dx)),
                    tol=1e-12,
                    max_iter=60,
                )
            except SolverFailure:
                continue
            s = _pair_action(model, qa, mu, qb2, a)
            if not any(np.max(np.abs(mu - m2)) < 1e-8 for _, m2 in found):
                found.append((s, mu))
        if not found:
            raise SolverFailure("gluing elimination failed at site {}".format(i + 1))
        found.sort(key=lambda t: t[0])
        ties = [
            f for f in found if f[0] - found[0][0] <= 1e-10 * (1.0 + abs(found[0][0]))
        ]
        if len(ties) > 1:
            # action-degenerate branches: keep the shortest lift
            mid = qa @ G.exp(0.5 * chi)
            best = min(ties, key=lambda f: float(np.max(np.abs(f[1] - mid))))
        else:
            best = found[0]
        branches.append(found)
        total += best[0]
        lifted.append(best[1])
    return ReducedAction(total, lifted=lifted, branches=branches)


def boundary_model_Sb(model: ParticleModel, q_minus, q_plus, lapse) -> float:
    """Regularized boundary action from the per-atom marker pairs alone."""
    qm = _as_points(q_minus)
    qp = _as_points(q_plus)
    a = float(lapse)
    g = model.metric_matrix(qm.shape[1])
    m = model.mass
    diff = (qp - qm) / (2 * a)
    kin = 0.5 * m * np.einsum("na,ab,nb->n", diff, g, diff)
    pot = np.array([model.potential.value(0.5 * (x + y)) for x, y in zip(qm, qp)])
    return float(np.sum((kin - pot) * 2 * a))


def boundary_model_solve(model: ParticleModel, cplx: TimeComplex, q_start, q_end, tol=1e-12):
    """Stationary marker chain of the boundary action with fixed endpoints."""
    q_start = np.atleast_1d(np.asarray(q_start, dtype=float))
    q_end = np.atleast_1d(np.asarray(q_end, dtype=float))
    n = cplx.n_atoms
    d = q_start.shape[0]
    frac = np.linspace(0.0, 1.0, n + 1)
    markers = q_start[None, :] + frac[:, None] * (q_end - q_start)[None, :]
    if n == 1:
        return markers

    def residual(x):
        mk = markers.copy()
        mk[1:n] = x.reshape(n - 1, d)
        out = np.empty((n - 1, d))
        h = 1e-6
        for j in range(1, n):
            for c in range(d):
                up = mk.copy()
                up[j, c] += h
                dn = mk.copy()
                dn[j, c] -= h
                out[j - 1, c] = (
                    boundary_model_Sb(model, up[:-1], up[1:], cplx.lapse)
                    - boundary_model_Sb(model, dn[:-1], dn[1:], cplx.lapse)
                ) / (2 * h)
        return out.ravel()

    def jacobian(x):
        h = 1e-5
        r0 = residual(x)
        J = np.empty((x.size, x.size))
        for j in range(x.size):
            xp = x.copy()
            xp[j] += h
            J[:, j] = (residual(xp) - r0) / h
        return J

    x0 = markers[1:n].ravel()
    x, _ = newton_solve(
        x0, residual, jacobian, lambda x, dx: x + dx, tol=tol, max_iter=40
    )
    markers[1:n] = x.reshape(n - 1, d)
    return markers


# ---------------------------------------------------------------------------
# Veselov comparison model


def veselov_action(model: VeselovModel, chain, lapse) -> float:
    """Action of the trace-form lagrangian on a full decimation chain.

    ``chain`` holds the 2n+1 group elements in time order (marker,
    center, marker, ...).
    """
    N = model.group.size
    a = float(lapse)
    lam = model.inertia
    qs = [np.asarray(q, dtype=float) for q in chain]
    if len(qs) % 2 != 1 or len(qs) < 3:
        raise ValueError("chain must hold 2n+1 elements")
    total = 0.0
    for i in range(0, len(qs) - 1):
        total += (2.0 * N / a) * (1.0 - np.trace(qs[i] @ lam @ qs[i + 1].T) / N)
    return float(total)


def veselov_momentum(model: VeselovModel, phi) -> np.ndarray:
    """Derivative of the minus-segment lagrangian in the right chart at the center.

    ``phi`` is the relative rotation q_minus^T q_center; the value is
    reported per unit lapse.
    """
    F = model.group.basis.real
    return 2.0 * np.einsum("ipq,qr,rp->i", F, phi.T, model.inertia)


def rigid_center_momentum(model: RigidBodyModel, phi) -> np.ndarray:
    """w of the minus segment with e slaved on the wedge equation, unit lapse."""
    G = model.group
    F = G.basis.real
    e = _slaved_e(model, phi, 1.0)
    E = G.algebra_element(e).real
    return -np.einsum("ipq,qr,rp->i", F, E, phi)


def veselov_vs_rigid(
    group: MatrixGroup,
    inertia_coeffs,
    lam=None,
    steps=None,
    axis=None,
) -> dict:
    """Mismatch of the slope-calibrated momentum maps as a function of step size.

    Both models give a map from the relative rotation exp(chi) of a half
    segment to a momentum vector.  Each map is divided by its linear
    response at the identity; the remaining discrepancy measures how far
    the models agree beyond first order.  Returns the sampled table and
    a fitted convergence order.
    """
    D = group.dim
    inertia_coeffs = np.asarray(inertia_coeffs, dtype=float)
    rigid = RigidBodyModel(group, inertia_coeffs)
    if lam is None:
        lam = np.eye(group.size)
    ves = VeselovModel(group, lam)
    if steps is None:
        steps = np.logspace(-1, -4, 10)
    if axis is None:
        axis = np.ones(D) / np.sqrt(D)
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    F = group.basis.real
    # linear responses at the identity
    Mv = -2.0 * np.einsum("ipq,jqr,rp->ij", F, F, ves.inertia)
    Mr = np.diag(inertia_coeffs)
    rows = []
    for s in steps:
        chi = group.algebra_element(s * axis)
        phi = group.exp(chi).real
        uv = veselov_momentum(ves, phi)
        wr = rigid_center_momentum(rigid, phi)
        cal_v = np.linalg.solve(Mv, uv)
        cal_r = np.linalg.solve(Mr, wr)
        rows.append((float(s), float(np.linalg.norm(cal_v - cal_r))))
    xs = np.array([np.log(r[0]) for r in rows if r[1] > 1e-14])
    ys = np.array([np.log(r[1]) for r in rows if r[1] > 1e-14])
    order = float(np.polyfit(xs, ys, 1)[0]) if xs.size >= 2 else np.inf
    return {"table": rows, "order": order}


# ---------------------------------------------------------------------------
# constructions used by tests and benchmarks


def uniform_rotation_history(
    model: RigidBodyModel, cplx: TimeComplex, axis_coeffs, rate: float
) -> RigidHistory:
    """History q(t) = exp(t * rate * alg(axis)) with e slaved on the wedges.

    Solves all field equations when the inertia is isotropic or when the
    axis is a single basis direction.
    """
    G = model.group
    A = G.algebra_element(np.asarray(axis_coeffs, dtype=float))
    n = cplx.n_atoms
    qb = np.stack([G.exp(rate * cplx.marker_time(i) * A).real for i in range(n + 1)])
    qc = np.stack([G.exp(rate * cplx.center_time(nu) * A).real for nu in cplx.atoms()])
    em = np.stack(
        [_slaved_e(model, qb[i].T @ qc[i], cplx.lapse) for i in range(n)]
    )
    ep = np.stack(
        [_slaved_e(model, qc[i].T @ qb[i + 1], cplx.lapse) for i in range(n)]
    )
    return RigidHistory(cplx, qb, qc, em, ep)
