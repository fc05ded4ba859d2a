"""Euclidean lattice gauge fields with a wedge-resolved Wilson-type action.

A history on a :class:`~cellfields.complexes.CubicalComplexND` assigns a
group element ``h_l`` to every atom-to-face link and ``k_r`` to every
face-to-corner r-link (r-links are keyed by the face, so the two atoms
sharing an interior face see the same element).  Each oriented wedge s of
an atom carries two holonomies built from its four slots::

    g_bs   = h_l2^-1 k_r2^-1 k_r1 h_l1      (loop based at the atom center)
    ghat_s = k_r1 h_l1 h_l2^-1 k_r2^-1      (same loop based at the corner)

and the action sums beta * [1 - (1/N) Re Tr g_bs] over the canonically
oriented wedges of every atom.  Re Tr is inversion-invariant on the
unitary/orthogonal groups, so the orientation choice does not matter.

Variations use the invariant charts ``delta h = h xi_l`` (right) and
``delta k = xi_r k`` (left) with coefficients in the orthonormal algebra
basis of the group.  Residual components are normalized by N/beta, i.e.
they drop the overall beta/N prefactor of the action derivative; the
boundary one-form and two-form pairings keep it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._newton import SolverFailure, newton_solve
from .complexes import CubicalComplexND, Link, RLink, Wedge
from .errors import NotASolutionError
from .liegroup import BranchAmbiguityError, MatrixGroup

__all__ = [
    "GaugeModel",
    "GaugeHistory",
    "GaugeVariation",
    "GaugeDS",
    "action",
    "wedge_boundary",
    "wedge_transport",
    "theta",
    "theta_hat",
    "interior_residual",
    "gluing_residual",
    "gauge_constraint",
    "dS",
    "perturb",
    "boundary_rlinks",
    "boundary_basis",
    "gauge_direction",
    "gauge_transform",
    "random_gauge_assignment",
    "pure_gauge_history",
    "first_variation",
    "multisymplectic_defect",
    "solve",
    "reduce_wilson",
    "build_quarter_split",
    "SMALL_FIELD_RADIUS",
    "SolverFailure",
    "NotASolutionError",
    "BranchAmbiguityError",
]

# Uniqueness of the wedge equations is only claimed for holonomies well
# inside the exp chart; the solver refuses boundary data beyond this.
SMALL_FIELD_RADIUS = np.pi / 4


@dataclass(frozen=True)
class GaugeModel:
    """Coupling and structure group of the wedge Wilson action."""

    group: MatrixGroup
    beta: float = 1.0

    def __post_init__(self):
        if self.beta <= 0:
            raise ValueError("beta must be positive")


class GaugeHistory:
    """Group elements h_l per link and k_r per r-link on a cubical complex.

    ``h`` maps :class:`Link` keys and ``k`` maps :class:`RLink` keys to
    group members.  Entries are membership-checked to 1e-11 on
    construction unless ``check=False``.
    """

    def __init__(self, cplx: CubicalComplexND, group: MatrixGroup, h, k, *,
                 check: bool = True):
        self.complex = cplx
        self.group = group
        self.h = dict(h)
        self.k = dict(k)
        if check:
            self._validate()

    def _validate(self):
        for name, table in (("h", self.h), ("k", self.k)):
            for key, g in table.items():
                if not self.group.is_member(g, tol=1e-11):
                    raise ValueError(
                        f"{name}[{key}] is not a group member to 1e-11"
                    )

    @classmethod
    def identity(cls, cplx, group) -> "GaugeHistory":
        eye = group.identity()
        h = {l: eye for l in cplx.all_links()}
        k = {r: eye for r in cplx.all_rlinks()}
        return cls(cplx, group, h, k, check=False)

    @classmethod
    def random(cls, cplx, group, rng, scale: float = 0.3) -> "GaugeHistory":
        h = {l: group.random(rng, scale) for l in cplx.all_links()}
        k = {r: group.random(rng, scale) for r in cplx.all_rlinks()}
        return cls(cplx, group, h, k, check=False)

    def copy(self) -> "GaugeHistory":
        return GaugeHistory(self.complex, self.group, dict(self.h),
                            dict(self.k), check=False)


def wedge_boundary(hist: GaugeHistory, w: Wedge) -> np.ndarray:
    """Holonomy around the wedge boundary, based at the atom center."""
    G = hist.group
    return (G.inv(hist.h[w.l2]) @ G.inv(hist.k[w.r2])
            @ hist.k[w.r1] @ hist.h[w.l1])


def wedge_transport(hist: GaugeHistory, w: Wedge) -> np.ndarray:
    """Same loop based at the corner cell; trace-equal to wedge_boundary."""
    G = hist.group
    return (hist.k[w.r1] @ hist.h[w.l1]
            @ G.inv(hist.h[w.l2]) @ G.inv(hist.k[w.r2]))


def theta(model: GaugeModel, hist: GaugeHistory, w: Wedge) -> np.ndarray:
    """Components -Re Tr(f_i g_bs) of the atom-based wedge momentum."""
    return model.group.theta_components(wedge_boundary(hist, w))


def theta_hat(model: GaugeModel, hist: GaugeHistory, w: Wedge) -> np.ndarray:
    """Components -Re Tr(f_i ghat_s) of the corner-based wedge momentum."""
    return model.group.theta_components(wedge_transport(hist, w))


def action(model: GaugeModel, hist: GaugeHistory) -> float:
    cplx = hist.complex
    n = model.group.size
    total = 0.0
    for atom in cplx.atoms():
        for w in cplx.atom_wedges(atom, oriented=False):
            g = wedge_boundary(hist, w)
            total += 1.0 - np.real(np.trace(g)) / n
    return model.beta * total


def _face_normal_axis(face) -> int:
    for i, c in enumerate(face):
        if c % 2 == 0:
            return i
    raise ValueError(f"{face} is not a face")


def _wedge_r_first(atom, r: RLink) -> Wedge:
    """The oriented wedge of ``atom`` whose first r-link is ``r``."""
    axis = _face_normal_axis(r.face)
    return Wedge(atom, axis, r.face[axis] - atom[axis], r.axis, r.sign)


def _adjacent_atoms(cplx, face) -> list:
    return [a for a in cplx.face_atoms(face) if a is not None]


def interior_residual(model: GaugeModel, hist: GaugeHistory,
                      link: Link) -> np.ndarray:
    """Sum of wedge momenta over the wedges whose first link is ``link``.

    Equals (N/beta) times the derivative of the action along
    ``delta h_l = h_l f_i``.
    """
    cplx = hist.complex
    if not (cplx.in_region(link.atom) and cplx.codim(link.atom) == 0
            and 0 <= link.axis < cplx.n and link.sign in (1, -1)):
        raise ValueError(f"{link} is not an interior link of the complex")
    out = np.zeros(model.group.dim)
    for w in cplx.wedges_at_link(link):
        out += theta(model, hist, w)
    return out


def gluing_residual(model: GaugeModel, hist: GaugeHistory,
                    r: RLink) -> np.ndarray:
    """Mismatch of the corner-based wedge momenta across an interior face.

    Both incident wedges are oriented with ``r`` first, which makes the
    compatibly-oriented difference a plain sum; the result is (N/beta)
    times the derivative of the action along ``delta k_r = f_i k_r``.
    """
    cplx = hist.complex
    face = r.face
    if cplx.on_region_boundary(face):
        raise ValueError(f"r-link {r} lies in a boundary face")
    out = np.zeros(model.group.dim)
    for atom in _adjacent_atoms(cplx, face):
        out += theta_hat(model, hist, _wedge_r_first(atom, r))
    return out


def gauge_constraint(model: GaugeModel, hist: GaugeHistory,
                     site) -> np.ndarray:
    """Boundary-face constraint: action derivative along ``k_r f_i``.

    ``site`` is a boundary face.  Components are
    sum over the face's r-links of dS(delta k_r = k_r f_i); the sum
    vanishes on solutions because a gauge rotation at the face trades it
    for the interior equation of the face's bulk link.
    """
    cplx = hist.complex
    if cplx.codim(site) != 1 or not cplx.in_region(site):
        raise ValueError(f"{site} is not a face of the complex")
    if not cplx.on_region_boundary(site):
        raise ValueError(f"{site} is not a boundary face")
    (atom,) = _adjacent_atoms(cplx, site)
    G = model.group
    out = np.zeros(G.dim)
    for r in cplx.face_rlinks(site):
        w = _wedge_r_first(atom, r)
        # tau-based loop h_l1 h_l2^-1 k_r2^-1 k_r1
        loop = (hist.h[w.l1] @ G.inv(hist.h[w.l2])
                @ G.inv(hist.k[w.r2]) @ hist.k[w.r1])
        out += G.theta_components(loop)
    return (model.beta / G.size) * out


# -- variations ---------------------------------------------------------


@dataclass
class GaugeVariation:
    """Chart coefficients of a history variation.

    ``h[l]`` holds the right-chart coefficients (delta h = h xi) and
    ``k[r]`` the left-chart coefficients (delta k = xi k); missing keys
    mean zero.
    """

    h: dict = field(default_factory=dict)
    k: dict = field(default_factory=dict)

    def h_coeff(self, group, l) -> np.ndarray:
        v = self.h.get(l)
        return np.zeros(group.dim) if v is None else np.asarray(v, dtype=float)

    def k_coeff(self, group, r) -> np.ndarray:
        v = self.k.get(r)
        return np.zeros(group.dim) if v is None else np.asarray(v, dtype=float)

    @classmethod
    def random(cls, cplx, group, rng, scale: float = 1.0) -> "GaugeVariation":
        h = {l: scale * rng.standard_normal(group.dim)
             for l in cplx.all_links()}
        k = {r: scale * rng.standard_normal(group.dim)
             for r in cplx.all_rlinks()}
        return cls(h, k)


def perturb(hist: GaugeHistory, var: GaugeVariation,
            eps: float) -> GaugeHistory:
    """Finite motion along a variation: h exp(eps xi), exp(eps xi) k."""
    G = hist.group
    h = dict(hist.h)
    for l, c in var.h.items():
        h[l] = hist.h[l] @ G.exp(eps * G.algebra_element(c))
    k = dict(hist.k)
    for r, c in var.k.items():
        k[r] = G.exp(eps * G.algebra_element(c)) @ hist.k[r]
    return GaugeHistory(hist.complex, G, h, k, check=False)


def boundary_rlinks(cplx: CubicalComplexND) -> list:
    return [r for f in cplx.all_faces() if cplx.on_region_boundary(f)
            for r in cplx.face_rlinks(f)]


def boundary_basis(cplx: CubicalComplexND, group: MatrixGroup) -> list:
    """Unit boundary-data variations, one per boundary r-link and basis axis."""
    out = []
    for r in boundary_rlinks(cplx):
        for i in range(group.dim):
            coeff = np.zeros(group.dim)
            coeff[i] = 1.0
            out.append(GaugeVariation(k={r: coeff}))
    return out


def gauge_direction(hist: GaugeHistory, site, coeffs) -> GaugeVariation:
    """Variation generated by a gauge rotation exp(zeta) at one cell.

    The rotation acts on the links pointing into and out of the cell:
    atoms move their own h links, faces move the incoming h and outgoing
    k links, corner cells move the incoming k links.
    """
    cplx = hist.complex
    G = hist.group
    coeffs = np.asarray(coeffs, dtype=float)
    zeta = G.algebra_element(coeffs)
    if not cplx.in_region(site):
        raise ValueError(f"{site} is outside the complex")
    cd = cplx.codim(site)
    var = GaugeVariation()
    if cd == 0:
        for l in cplx.links(site):
            var.h[l] = -coeffs
    elif cd == 1:
        axis = _face_normal_axis(site)
        for atom in _adjacent_atoms(cplx, site):
            l = Link(atom, axis, site[axis] - atom[axis])
            var.h[l] = G.coefficients(
                G.adjoint_transport(hist.h[l], zeta, inverse=True))
        for r in cplx.face_rlinks(site):
            var.k[r] = -G.coefficients(G.adjoint_transport(hist.k[r], zeta))
    elif cd == 2:
        even_axes = [i for i, c in enumerate(site) if c % 2 == 0]
        for a in even_axes:
            for d in (1, -1):
                face = list(site)
                face[a] += d
                var.k[RLink(tuple(face), a, -d)] = coeffs.copy()
    else:
        raise ValueError(
            f"{site} carries no link variables (codimension {cd})")
    return var


def gauge_transform(hist: GaugeHistory, assignment) -> GaugeHistory:
    """Apply a gauge rotation g(cell) per cell; missing cells act as identity.

    h_l maps to g(face) h_l g(atom)^-1 and k_r to g(corner) k_r g(face)^-1.
    """
    G = hist.group
    eye = G.identity()

    def g_at(cell):
        return assignment.get(cell, eye)

    h = {l: g_at(l.face) @ v @ G.inv(g_at(l.atom))
         for l, v in hist.h.items()}
    k = {r: g_at(r.sigma) @ v @ G.inv(g_at(r.face))
         for r, v in hist.k.items()}
    return GaugeHistory(hist.complex, G, h, k, check=False)


def random_gauge_assignment(cplx, group, rng, scale: float = 0.3) -> dict:
    cells = list(cplx.atoms()) + cplx.all_faces() + cplx.all_sigmas()
    return {cell: group.random(rng, scale) for cell in cells}


def pure_gauge_history(cplx, group, assignment) -> GaugeHistory:
    """Gauge transform of the identity history; every wedge holonomy is 1."""
    return gauge_transform(GaugeHistory.identity(cplx, group), assignment)


# -- analytic derivatives ----------------------------------------------


def _theta_blocks(G: MatrixGroup, hist: GaugeHistory, w: Wedge) -> dict:
    """Per-slot Jacobian of theta: block[i, j] = d theta_i / d xi_slot,j."""
    g = wedge_boundary(hist, w)
    c = G.inv(hist.h[w.l2]) @ G.inv(hist.k[w.r2])
    cinv = hist.k[w.r2] @ hist.h[w.l2]
    d = G.dim
    t1 = np.empty((d, d))
    t2 = np.empty((d, d))
    r1 = np.empty((d, d))
    for j, f in enumerate(G.basis):
        t1[:, j] = G.theta_components(g @ f)
        t2[:, j] = -G.theta_components(f @ g)
        r1[:, j] = G.theta_components(c @ f @ cinv @ g)
    return {"l1": t1, "l2": t2, "r1": r1, "r2": -r1}


def _theta_hat_blocks(G: MatrixGroup, hist: GaugeHistory, w: Wedge) -> dict:
    """Per-slot Jacobian of theta_hat in the same charts."""
    ghat = wedge_transport(hist, w)
    x = hist.k[w.r1] @ hist.h[w.l1]
    xinv = G.inv(x)
    d = G.dim
    b_r1 = np.empty((d, d))
    b_r2 = np.empty((d, d))
    b_l1 = np.empty((d, d))
    for j, f in enumerate(G.basis):
        b_r1[:, j] = G.theta_components(f @ ghat)
        b_r2[:, j] = -G.theta_components(ghat @ f)
        b_l1[:, j] = G.theta_components(x @ f @ xinv @ ghat)
    return {"l1": b_l1, "l2": -b_l1, "r1": b_r1, "r2": b_r2}


def _transport_variation(G: MatrixGroup, hist: GaugeHistory, w: Wedge,
                         var: GaugeVariation) -> np.ndarray:
    """First-order change of ghat_s along a variation's chart coefficients."""
    ghat = wedge_transport(hist, w)
    a_r1 = G.algebra_element(var.k_coeff(G, w.r1))
    a_r2 = G.algebra_element(var.k_coeff(G, w.r2))
    a_l = G.algebra_element(var.h_coeff(G, w.l1) - var.h_coeff(G, w.l2))
    x = hist.k[w.r1] @ hist.h[w.l1]
    return (a_r1 @ ghat - ghat @ a_r2
            + x @ a_l @ G.inv(x) @ ghat)


@dataclass
class GaugeDS:
    """Directional derivative of the action, split by equation class."""

    interior: float
    gluing: float
    boundary: float

    @property
    def bulk(self) -> float:
        return self.interior + self.gluing

    @property
    def total(self) -> float:
        return self.interior + self.gluing + self.boundary


def dS(model: GaugeModel, hist: GaugeHistory,
       var: GaugeVariation) -> GaugeDS:
    cplx = hist.complex
    G = model.group
    scale = model.beta / G.size
    interior = 0.0
    for l in cplx.all_links():
        c = var.h.get(l)
        if c is not None:
            interior += float(np.dot(c, interior_residual(model, hist, l)))
    gluing = 0.0
    boundary = 0.0
    for f in cplx.all_faces():
        if cplx.on_region_boundary(f):
            (atom,) = _adjacent_atoms(cplx, f)
            for r in cplx.face_rlinks(f):
                c = var.k.get(r)
                if c is not None:
                    th = theta_hat(model, hist, _wedge_r_first(atom, r))
                    boundary += float(np.dot(c, th))
        else:
            for r in cplx.face_rlinks(f):
                c = var.k.get(r)
                if c is not None:
                    gluing += float(np.dot(c, gluing_residual(model, hist, r)))
    return GaugeDS(scale * interior, scale * gluing, scale * boundary)


# -- solver -------------------------------------------------------------


class _Layout:
    """Flat indexing of the solver unknowns (all h, interior-face k)."""

    def __init__(self, cplx: CubicalComplexND, group: MatrixGroup):
        self.links = cplx.all_links()
        self.rlinks = [r for f in cplx.interior_faces()
                       for r in cplx.face_rlinks(f)]
        d = group.dim
        self.dim = d
        self.link_pos = {l: d * i for i, l in enumerate(self.links)}
        base = d * len(self.links)
        self.rlink_pos = {r: base + d * i for i, r in enumerate(self.rlinks)}
        self.n_unknowns = base + d * len(self.rlinks)


def _residual_vector(model, hist, layout) -> np.ndarray:
    parts = [interior_residual(model, hist, l) for l in layout.links]
    parts += [gluing_residual(model, hist, r) for r in layout.rlinks]
    if not parts:
        return np.zeros(0)
    return np.concatenate(parts)


def _jacobian(model, hist, layout, boundary_pos=None):
    """Dense Jacobian of the residual vector in the solver charts.

    ``boundary_pos`` optionally maps boundary r-links to columns of a
    second returned matrix holding the boundary-data derivatives.
    """
    G = model.group
    cplx = hist.complex
    d = layout.dim
    rows = d * (len(layout.links) + len(layout.rlinks))
    J = np.zeros((rows, layout.n_unknowns))
    B = None
    if boundary_pos is not None:
        B = np.zeros((rows, d * len(boundary_pos)))

    def add(row, slot_key, block):
        if isinstance(slot_key, Link):
            J[row:row + d, layout.link_pos[slot_key]:
              layout.link_pos[slot_key] + d] += block
            return
        col = layout.rlink_pos.get(slot_key)
        if col is not None:
            J[row:row + d, col:col + d] += block
        elif B is not None:
            col = boundary_pos[slot_key]
            B[row:row + d, col:col + d] += block

    for li, l in enumerate(layout.links):
        row = d * li
        for w in cplx.wedges_at_link(l):
            blocks = _theta_blocks(G, hist, w)
            add(row, w.l1, blocks["l1"])
            add(row, w.l2, blocks["l2"])
            add(row, w.r1, blocks["r1"])
            add(row, w.r2, blocks["r2"])
    base = d * len(layout.links)
    for ri, r in enumerate(layout.rlinks):
        row = base + d * ri
        for atom in _adjacent_atoms(cplx, r.face):
            w = _wedge_r_first(atom, r)
            blocks = _theta_hat_blocks(G, hist, w)
            add(row, w.l1, blocks["l1"])
            add(row, w.l2, blocks["l2"])
            add(row, w.r1, blocks["r1"])
            add(row, w.r2, blocks["r2"])
    return J, B


def _bulk_sites(cplx) -> list:
    sites = list(cplx.atoms())
    sites += [f for f in cplx.interior_faces()]
    sites += cplx.interior_sigmas()
    return sites


def _null_matrix(hist, layout) -> np.ndarray:
    """Columns spanning the gauge null directions in the unknown chart."""
    G = hist.group
    d = layout.dim
    cols = []
    for site in _bulk_sites(hist.complex):
        for m in range(d):
            e = np.zeros(d)
            e[m] = 1.0
            var = gauge_direction(hist, site, e)
            v = np.zeros(layout.n_unknowns)
            for l, c in var.h.items():
                v[layout.link_pos[l]:layout.link_pos[l] + d] += c
            for r, c in var.k.items():
                pos = layout.rlink_pos[r]
                v[pos:pos + d] += c
            cols.append(v)
    return np.column_stack(cols)


def _apply_step(hist, dx, layout) -> GaugeHistory:
    G = hist.group
    d = layout.dim
    h = {}
    for l, g in hist.h.items():
        pos = layout.link_pos[l]
        h[l] = g @ G.exp(G.algebra_element(dx[pos:pos + d]))
    k = dict(hist.k)
    for r in layout.rlinks:
        pos = layout.rlink_pos[r]
        k[r] = G.exp(G.algebra_element(dx[pos:pos + d])) @ hist.k[r]
    return GaugeHistory(hist.complex, G, h, k, check=False)


def solve(model: GaugeModel, cplx: CubicalComplexND, boundary_k, *,
          tol: float = 1e-9, max_iter: int = 60,
          on_iteration=None) -> GaugeHistory:
    """Solve the interior and gluing equations for fixed boundary k data.

    ``boundary_k`` maps every boundary-face r-link to a group element.
    The Newton step uses the analytic Jacobian, a least-squares solve,
    and removal of the gauge null directions (rotations at every atom and
    every interior face and corner cell), which fixes the gauge of the
    update without constraining the physics.
    """
    G = model.group
    needed = set(boundary_rlinks(cplx))
    given = set(boundary_k)
    if given != needed:
        raise ValueError("boundary data must cover exactly the boundary "
                         f"r-links ({len(needed)} expected, {len(given)} given)")
    for r, g in boundary_k.items():
        if not G.is_member(g, tol=1e-11):
            raise ValueError(f"boundary value at {r} is not a group member")
        if G.norm(G.log(g)) >= SMALL_FIELD_RADIUS:
            raise BranchAmbiguityError(
                f"boundary value at {r} leaves the small-field regime "
                f"(|log k| >= pi/4); solution branch is ambiguous")
    eye = G.identity()
    h = {l: eye for l in cplx.all_links()}
    k = {r: eye for f in cplx.interior_faces() for r in cplx.face_rlinks(f)}
    k.update(boundary_k)
    state = GaugeHistory(cplx, G, h, k, check=False)
    layout = _Layout(cplx, G)
    if layout.n_unknowns == 0:
        return state

    def project(st, dx):
        q, _ = np.linalg.qr(_null_matrix(st, layout))
        return dx - q @ (q.T @ dx)

    state, _info = newton_solve(
        state,
        lambda st: _residual_vector(model, st, layout),
        lambda st: _jacobian(model, st, layout)[0],
        lambda st, dx: _apply_step(st, dx, layout),
        tol=tol,
        max_iter=max_iter,
        use_lstsq=True,
        project_step=project,
        on_iteration=on_iteration,
    )
    return GaugeHistory(cplx, G, state.h, state.k)


def first_variation(model: GaugeModel, hist: GaugeHistory,
                    boundary_var: GaugeVariation) -> GaugeVariation:
    """Extend boundary-data coefficients to a solution of the linearized
    equations at ``hist`` (least-norm modulo gauge)."""
    cplx = hist.complex
    G = model.group
    d = G.dim
    layout = _Layout(cplx, G)
    brs = boundary_rlinks(cplx)
    bpos = {r: d * i for i, r in enumerate(brs)}
    b = np.zeros(d * len(brs))
    for r, c in boundary_var.k.items():
        if r not in bpos:
            raise ValueError(f"{r} is not a boundary r-link")
        b[bpos[r]:bpos[r] + d] = c
    J, B = _jacobian(model, hist, layout, boundary_pos=bpos)
    if layout.n_unknowns:
        x = np.linalg.lstsq(J, -B @ b, rcond=None)[0]
        q, _ = np.linalg.qr(_null_matrix(hist, layout))
        x = x - q @ (q.T @ x)
    else:
        x = np.zeros(0)
    var = GaugeVariation()
    for l in layout.links:
        pos = layout.link_pos[l]
        var.h[l] = x[pos:pos + d].copy()
    for r in layout.rlinks:
        pos = layout.rlink_pos[r]
        var.k[r] = x[pos:pos + d].copy()
    for r in brs:
        var.k[r] = b[bpos[r]:bpos[r] + d].copy()
    return var


def _omega_at_face(model, hist, face, var1, var2) -> float:
    """Boundary two-form pairing at one boundary face."""
    G = model.group
    (atom,) = _adjacent_atoms(hist.complex, face)
    total = 0.0
    for r in hist.complex.face_rlinks(face):
        w = _wedge_r_first(atom, r)
        xi = var1.k_coeff(G, r)
        eta = var2.k_coeff(G, r)
        d1 = G.theta_components(_transport_variation(G, hist, w, var1))
        d2 = G.theta_components(_transport_variation(G, hist, w, var2))
        th = theta_hat(model, hist, w)
        br = G.coefficients(G.bracket(G.algebra_element(xi),
                                      G.algebra_element(eta)))
        total += (float(np.dot(eta, d1)) - float(np.dot(xi, d2))
                  + float(np.dot(th, br)))
    return -(model.beta / G.size) * total


def _solution_residuals(model, hist) -> dict:
    cplx = hist.complex
    interior = 0.0
    for l in cplx.all_links():
        interior = max(interior,
                       float(np.max(np.abs(interior_residual(model, hist, l)))))
    gluing = 0.0
    for f in cplx.interior_faces():
        for r in cplx.face_rlinks(f):
            gluing = max(gluing,
                         float(np.max(np.abs(gluing_residual(model, hist, r)))))
    return {"interior": interior, "gluing": gluing}


def multisymplectic_defect(model: GaugeModel, hist: GaugeHistory,
                           var1: GaugeVariation, var2: GaugeVariation, *,
                           require_solution: bool = True,
                           solution_tol: float = 1e-6) -> float:
    """Total boundary two-form pairing; vanishes for first variations of
    a solution."""
    if require_solution:
        res = _solution_residuals(model, hist)
        worst = max(res.values())
        if not worst <= solution_tol:
            raise NotASolutionError(
                f"history violates the field equations (residual {worst:.3e})",
                residuals=res)
    cplx = hist.complex
    total = 0.0
    for f in cplx.all_faces():
        if cplx.on_region_boundary(f):
            total += _omega_at_face(model, hist, f, var1, var2)
    return total


# -- reduction to plaquette variables -----------------------------------


def reduce_wilson(model: GaugeModel, hist: GaugeHistory):
    """Collapse wedge holonomies into dual-cell plaquette variables.

    For each interior corner cell the cyclically ordered product of the
    corner-based wedge holonomies telescopes to a single loop g; the
    reduced action charges each loop 4 beta [1 - (1/N) Re Tr g^(1/4)].
    On histories satisfying the corner gluing equations this equals the
    full action.  Returns ``(value, plaquettes)`` with the loop per cell.
    """
    cplx = hist.complex
    G = model.group
    n = G.size
    plaquettes = {}
    total = 0.0
    for sigma in cplx.interior_sigmas():
        cycle = cplx.sigma_wedge_cycle(sigma)
        prod = None
        for w in cycle:
            ghat = wedge_transport(hist, w)
            G.log(ghat)  # branch check on every wedge holonomy
            prod = ghat if prod is None else ghat @ prod
        plaquettes[sigma] = prod
        quarter = G.frac_power(prod, 0.25)
        total += len(cycle) * (1.0 - np.real(np.trace(quarter)) / n)
    return model.beta * total, plaquettes


def build_quarter_split(group: MatrixGroup, cplx: CubicalComplexND, rng,
                        scale: float = 0.05) -> GaugeHistory:
    """History whose wedge holonomies are quarter roots of plaquette loops.

    Links are random near the identity; around every interior corner the
    k values are chosen so all four wedge transports equal the quarter
    root of the dual loop, and around boundary corners so they are the
    identity.  All gluing equations hold by construction.
    """
    h = {l: group.exp(group.random_algebra(rng, scale))
         for l in cplx.all_links()}
    return split_transports(group, cplx, h)


def split_transports(group: MatrixGroup, cplx: CubicalComplexND,
                     h: dict) -> GaugeHistory:
    """Fill in k values that split the dual loops of the given links."""
    k = {}
    eye = group.identity()

    def a_of(w):
        return h[w.l1] @ group.inv(h[w.l2])

    for sigma in cplx.all_sigmas():
        if cplx.on_region_boundary(sigma):
            # broken dual loop: make every wedge transport the identity
            pending = list(cplx.wedges_at_sigma(sigma))
            while pending:
                progress = []
                for w in pending:
                    a = a_of(w)
                    if w.r2 in k and w.r1 not in k:
                        k[w.r1] = k[w.r2] @ group.inv(a)
                    elif w.r1 in k and w.r2 not in k:
                        k[w.r2] = k[w.r1] @ a
                    elif w.r1 not in k and w.r2 not in k:
                        continue
                    progress.append(w)
                if progress:
                    pending = [w for w in pending if w not in progress]
                else:
                    k[pending[0].r2] = eye
            continue
        cycle = cplx.sigma_wedge_cycle(sigma)
        loop = None
        for w in cycle:
            loop = a_of(w) if loop is None else a_of(w) @ loop
        x = group.frac_power(loop, 0.25)
        k[cycle[0].r2] = eye
        for w in cycle[:-1]:
            k[w.r1] = x @ k[w.r2] @ group.inv(a_of(w))
    return GaugeHistory(cplx, group, h, k)
