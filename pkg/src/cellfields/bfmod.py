"""First-order (BF-type) lattice fields: holonomies paired with wedge bivectors.

A history extends the gauge-field record: besides ``h_l`` and ``k_r`` it
carries algebra coefficients ``e_s`` on every wedge and, optionally, a
symmetric traceless multiplier ``phi_nu`` per atom.  The action is

    S = sum_nu [ sum_{s in nu} e_s . theta_s  +  Phi(nu, {e_s}, phi_nu) ]

where ``theta_s = theta_components(g_bs)`` is the dual-pairing readout of
the wedge boundary holonomy and ``Phi`` is a per-atom interaction term.
The wedge sum runs over one orientation per unordered wedge; flipping a
stored orientation negates both ``e_s`` and ``theta_s``, so the action is
orientation independent by construction (evaluation canonicalizes, which
makes the invariance bit-exact).

Interactions are supplied as a :class:`PhiTerm`: ``none`` for pure BF, a
``quadratic`` multiplier coupling driven by a per-wedge-class sign table,
or arbitrary callbacks.  The quadratic variant implements

    Phi = -(c/2) phi^{ij} sum_{s,s'} e_{s,i} e_{s',j} sgn(s, s')

so that the wedge equation reads theta_s = c phi Sum_s' sgn(s,s') e_s'
with c the ``coefficient`` (default 1/60).  The sign table is symmetric
in its two wedge classes, zero on the diagonal, and extends to arbitrary
orientations by flip-antisymmetry in each argument.

Variations use the same invariant charts as the gauge module
(``delta h = h xi``, ``delta k = xi k``) plus additive shifts of ``e``
and ``phi``.  Residuals are exact directional derivatives of S: there is
no coupling prefactor to strip.  The face-gluing residual and the
boundary one-form depend only on (h, k, e), never on the interaction;
their signatures do not take a PhiTerm at all.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from ._newton import SolverFailure
from .complexes import CubicalComplexND, Link, RLink, Wedge
from .errors import NotASolutionError
from .gauge import (
    _adjacent_atoms,
    _face_normal_axis,
    _wedge_r_first,
    boundary_rlinks,
    random_gauge_assignment,
    wedge_boundary,
)
from .liegroup import MatrixGroup

__all__ = [
    "PhiTerm",
    "BFHistory",
    "BFVariation",
    "BFResiduals",
    "BFDS",
    "load_sgn_table",
    "sign_product_table",
    "sgn_value",
    "sym_traceless",
    "random_sym_traceless",
    "action",
    "theta",
    "wedge_momentum",
    "interior_residual",
    "wedge_residual",
    "multiplier_residual",
    "gluing_residual",
    "residuals",
    "u_sigma",
    "gluing_check",
    "cartan_form",
    "dS",
    "perturb",
    "boundary_basis",
    "gauge_direction",
    "gauge_transform",
    "random_gauge_assignment",
    "pure_bf_solution",
    "first_variation",
    "admissible_boundary_basis",
    "multisymplectic_defect",
]


# ---------------------------------------------------------------------------
# multiplier space helpers


def sym_traceless(m: np.ndarray) -> np.ndarray:
    """Project a square matrix onto its symmetric traceless part."""
    m = np.asarray(m, dtype=float)
    s = 0.5 * (m + m.T)
    return s - (np.trace(s) / m.shape[0]) * np.eye(m.shape[0])


def random_sym_traceless(rng, dim: int, scale: float = 1.0) -> np.ndarray:
    return sym_traceless(rng.normal(scale=scale, size=(dim, dim)))


# ---------------------------------------------------------------------------
# sign tables for the quadratic interaction


def _wedge_class(w: Wedge) -> tuple:
    return (w.axis1, w.sign1, w.axis2, w.sign2)


def _check_class(cls) -> tuple:
    cls = tuple(int(x) for x in cls)
    if len(cls) != 4:
        raise ValueError(f"wedge class needs four entries, got {cls}")
    a1, s1, a2, s2 = cls
    if a1 < 0 or a2 < 0 or s1 not in (-1, 1) or s2 not in (-1, 1):
        raise ValueError(f"invalid wedge class {cls}")
    if (a1, s1) >= (a2, s2):
        raise ValueError(f"wedge class {cls} is not canonically oriented")
    return cls


def load_sgn_table(entries) -> dict:
    """Build a validated sign table from (class, class', value) triples.

    Classes are canonical wedge signatures ``(axis1, sign1, axis2, sign2)``
    shared by every atom.  Values must lie in {-1, 0, 1}; the table must
    be symmetric in its two arguments (the antisymmetric part would drop
    out of the quadratic form anyway) and zero on the diagonal.  Also
    accepts an already-built table dict and re-validates it.
    """
    if isinstance(entries, dict):
        entries = [(c1, c2, v) for (c1, c2), v in entries.items()]
    table = {}
    for c1, c2, v in entries:
        c1, c2 = _check_class(c1), _check_class(c2)
        v = float(v)
        if v not in (-1.0, 0.0, 1.0):
            raise ValueError(f"sign table value {v} not in -1/0/1")
        if c1 == c2 and v != 0.0:
            raise ValueError(f"diagonal entry for {c1} must vanish")
        for key in ((c1, c2), (c2, c1)):
            if key in table and table[key] != v:
                raise ValueError(f"conflicting entries for pair {key}")
            table[key] = v
    return table


def sign_product_table(n_axes: int) -> dict:
    """Symmetric table with sgn = product of the four orientation signs."""
    classes = [
        (a1, s1, a2, s2)
        for a1 in range(n_axes)
        for a2 in range(a1 + 1, n_axes)
        for s1 in (-1, 1)
        for s2 in (-1, 1)
    ]
    entries = []
    for i, c1 in enumerate(classes):
        for c2 in classes[i + 1:]:
            entries.append((c1, c2, c1[1] * c1[3] * c2[1] * c2[3]))
    return load_sgn_table(entries)


def sgn_value(table: dict, w1: Wedge, w2: Wedge) -> float:
    """Table lookup extended to arbitrary orientations.

    Flipping either argument negates the value, matching the covariance
    of the e coefficients it contracts with.
    """
    s = 1.0
    if not w1.is_canonical:
        w1, s = w1.reverse(), -s
    if not w2.is_canonical:
        w2, s = w2.reverse(), -s
    return s * table.get((_wedge_class(w1), _wedge_class(w2)), 0.0)


# ---------------------------------------------------------------------------
# interaction terms


@dataclass(frozen=True)
class PhiTerm:
    """Per-atom interaction Phi(nu, {e_s}, phi_nu) with its partials.

    ``value(atom, e_by, phi)`` returns the scalar contribution,
    ``de(atom, wedge, e_by, phi)`` the partial with respect to one
    canonical wedge's coefficients, ``dphi(atom, e_by, phi)`` the partial
    with respect to the multiplier (symmetric traceless).  ``e_by`` maps
    each canonical wedge of the atom to its coefficient vector.
    """

    variant: str
    value: Callable
    de: Callable
    dphi: Optional[Callable] = None
    uses_multiplier: bool = False

    @classmethod
    def none(cls) -> "PhiTerm":
        return cls(
            variant="none",
            value=lambda atom, e_by, phi: 0.0,
            de=lambda atom, w, e_by, phi: np.zeros_like(e_by[w]),
        )

    @classmethod
    def quadratic(cls, sgn_table, coefficient: float = 1.0 / 60.0) -> "PhiTerm":
        table = load_sgn_table(sgn_table)
        c = float(coefficient)

        def _need_phi(phi):
            if phi is None:
                raise ValueError("quadratic interaction needs a multiplier per atom")
            return np.asarray(phi, dtype=float)

        def _weighted_sum(w, e_by):
            # sum_{s'} sgn(s, s') e_{s'}
            out = np.zeros_like(e_by[w])
            cw = _wedge_class(w)
            for w2, e2 in e_by.items():
                v = table.get((cw, _wedge_class(w2)), 0.0)
                if v:
                    out += v * e2
            return out

        def value(atom, e_by, phi):
            phi = _need_phi(phi)
            total = 0.0
            for w, e in e_by.items():
                total += float(e @ phi @ _weighted_sum(w, e_by))
            return -0.5 * c * total

        def de(atom, w, e_by, phi):
            phi = _need_phi(phi)
            return -c * (phi @ _weighted_sum(w, e_by))

        def dphi(atom, e_by, phi):
            dim = len(next(iter(e_by.values())))
            q = np.zeros((dim, dim))
            for w, e in e_by.items():
                q += np.outer(e, _weighted_sum(w, e_by))
            return -0.5 * c * sym_traceless(q)

        return cls(variant="quadratic", value=value, de=de, dphi=dphi,
                   uses_multiplier=True)

    @classmethod
    def from_callbacks(cls, value, de, dphi=None, variant: str = "custom") -> "PhiTerm":
        return cls(variant=variant, value=value, de=de, dphi=dphi,
                   uses_multiplier=dphi is not None)


# ---------------------------------------------------------------------------
# histories


class BFHistory:
    """Holonomies plus wedge bivectors (and optional atom multipliers).

    ``e`` stores one coefficient vector per unordered wedge, keyed by an
    oriented :class:`Wedge`; the stored orientation fixes the sign and
    :meth:`e_coeff` resolves any other orientation covariantly.
    """

    def __init__(self, cplx: CubicalComplexND, group: MatrixGroup, h, k, e,
                 phi=None, *, check: bool = True):
        self.complex = cplx
        self.group = group
        self.h = dict(h)
        self.k = dict(k)
        self.e = dict(e)
        self.phi = dict(phi) if phi else {}
        if check:
            self._validate()

    def _validate(self):
        G = self.group
        for l, g in self.h.items():
            if not G.is_member(g, tol=1e-11):
                raise ValueError(f"h[{l}] is not a group element")
        for r, g in self.k.items():
            if not G.is_member(g, tol=1e-11):
                raise ValueError(f"k[{r}] is not a group element")
        seen = 0
        for atom in self.complex.atoms():
            for w in self.complex.atom_wedges(atom, oriented=False):
                has = (w in self.e) + (w.reverse() in self.e)
                if has != 1:
                    raise ValueError(
                        f"wedge {w.key} needs exactly one stored orientation")
                seen += 1
        if seen != len(self.e):
            raise ValueError("e carries entries for unknown wedges")
        for w, v in self.e.items():
            if np.shape(v) != (G.dim,):
                raise ValueError(f"e[{w.key}] has wrong shape")
        for atom, m in self.phi.items():
            m = np.asarray(m, dtype=float)
            if m.shape != (G.dim, G.dim):
                raise ValueError(f"phi[{atom}] has wrong shape")
            if not np.allclose(m, sym_traceless(m), atol=1e-9):
                raise ValueError(f"phi[{atom}] is not symmetric traceless")

    def e_coeff(self, w: Wedge) -> np.ndarray:
        if w in self.e:
            return self.e[w]
        return -self.e[w.reverse()]

    def e_matrix(self, w: Wedge) -> np.ndarray:
        return self.group.algebra_element(self.e_coeff(w))

    @classmethod
    def identity(cls, cplx, group, *, with_phi: bool = False) -> "BFHistory":
        eye = group.identity()
        h = {l: eye.copy() for l in cplx.all_links()}
        k = {r: eye.copy() for r in cplx.all_rlinks()}
        e = {w: np.zeros(group.dim) for atom in cplx.atoms()
             for w in cplx.atom_wedges(atom, oriented=False)}
        phi = ({a: np.zeros((group.dim, group.dim)) for a in cplx.atoms()}
               if with_phi else None)
        return cls(cplx, group, h, k, e, phi, check=False)

    @classmethod
    def random(cls, cplx, group, rng, *, scale: float = 0.3,
               e_scale: float = 1.0, with_phi: bool = False) -> "BFHistory":
        h = {l: group.random(rng, scale) for l in cplx.all_links()}
        k = {r: group.random(rng, scale) for r in cplx.all_rlinks()}
        e = {w: rng.normal(scale=e_scale, size=group.dim)
             for atom in cplx.atoms()
             for w in cplx.atom_wedges(atom, oriented=False)}
        phi = ({a: random_sym_traceless(rng, group.dim, e_scale)
                for a in cplx.atoms()} if with_phi else None)
        return cls(cplx, group, h, k, e, phi, check=False)

    def copy(self) -> "BFHistory":
        return BFHistory(
            self.complex, self.group,
            {l: g.copy() for l, g in self.h.items()},
            {r: g.copy() for r, g in self.k.items()},
            {w: v.copy() for w, v in self.e.items()},
            {a: m.copy() for a, m in self.phi.items()},
            check=False)

    def flip_orientation(self, wedges) -> "BFHistory":
        """Re-store the given wedges in the opposite orientation."""
        out = self.copy()
        for w in wedges:
            if w not in out.e:
                raise ValueError(f"{w.key} is not stored in this orientation")
            out.e[w.reverse()] = -out.e.pop(w)
        return out


# ---------------------------------------------------------------------------
# action and pointwise residuals


def theta(hist: BFHistory, w: Wedge) -> np.ndarray:
    """Dual-pairing components of the wedge boundary holonomy."""
    return hist.group.theta_components(wedge_boundary(hist, w))


def _atom_e_by(hist: BFHistory, atom) -> dict:
    return {w: hist.e_coeff(w)
            for w in hist.complex.atom_wedges(atom, oriented=False)}


def action(phi_term: PhiTerm, hist: BFHistory) -> float:
    """Sum of e . theta over canonical wedges plus the interaction."""
    total = 0.0
    for atom in hist.complex.atoms():
        e_by = _atom_e_by(hist, atom)
        for w, e in e_by.items():
            total += float(np.dot(e, theta(hist, w)))
        total += float(phi_term.value(atom, e_by, hist.phi.get(atom)))
    return total


def interior_residual(hist: BFHistory, l: Link) -> np.ndarray:
    """Exact derivative of S along ``delta h_l = h_l f_j``.

    Independent of the interaction term: Phi never sees the links.
    """
    cplx = hist.complex
    if not cplx.in_region(l.atom) or cplx.codim(l.atom) != 0:
        raise ValueError(f"{l} does not start at an atom of the complex")
    if not (0 <= l.axis < len(l.atom)) or l.sign not in (-1, 1):
        raise ValueError(f"{l} is not a valid link")
    G = hist.group
    out = np.zeros(G.dim)
    for w in cplx.wedges_at_link(l):
        out += G.theta_components(hist.e_matrix(w) @ wedge_boundary(hist, w))
    return out


def wedge_residual(phi_term: PhiTerm, hist: BFHistory, w: Wedge) -> np.ndarray:
    """Exact derivative of S along the e coefficients of one wedge."""
    wc = w.canonical()
    e_by = _atom_e_by(hist, wc.atom)
    res = theta(hist, wc) + np.asarray(
        phi_term.de(wc.atom, wc, e_by, hist.phi.get(wc.atom)), dtype=float)
    return res if w.is_canonical else -res


def multiplier_residual(phi_term: PhiTerm, hist: BFHistory, atom) -> np.ndarray:
    """Exact derivative of S along a symmetric traceless multiplier shift."""
    if phi_term.dphi is None:
        raise ValueError(f"{phi_term.variant} interaction has no multiplier")
    e_by = _atom_e_by(hist, atom)
    return np.asarray(phi_term.dphi(atom, e_by, hist.phi.get(atom)), dtype=float)


def wedge_momentum(hist: BFHistory, w: Wedge) -> np.ndarray:
    """Corner-transported pairing vector of one oriented wedge.

    Components -Re Tr(f_j Ad_{k_r1 h_l1}(E_s g_bs)); reversing the wedge
    negates the result.  This is the per-wedge contribution to both the
    face-gluing residual and the boundary one-form.
    """
    G = hist.group
    y = hist.k[w.r1] @ hist.h[w.l1]
    m = y @ (hist.e_matrix(w) @ wedge_boundary(hist, w)) @ G.inv(y)
    return G.theta_components(m)


def gluing_residual(hist: BFHistory, r: RLink) -> np.ndarray:
    """Exact derivative of S along ``delta k_r = f_j k_r`` at an interior face.

    Sums the wedge momenta of the two adjacent atoms' r-first wedges; in
    consistently transported histories this is a difference of matched
    corner values, so it vanishes on solutions.
    """
    cplx = hist.complex
    if cplx.on_region_boundary(r.face):
        raise ValueError(f"{r} sits on the region boundary, not an interior face")
    out = np.zeros(hist.group.dim)
    for atom in _adjacent_atoms(cplx, r.face):
        out += wedge_momentum(hist, _wedge_r_first(atom, r))
    return out


@dataclass
class BFResiduals:
    """Field equations by class; each entry is an exact dS pairing."""

    interior: dict
    wedge: dict
    multiplier: dict
    gluing: dict

    def class_norms(self) -> dict:
        def mx(d):
            return max((float(np.max(np.abs(v))) for v in d.values()),
                       default=0.0)

        norms = {"interior": mx(self.interior), "wedge": mx(self.wedge),
                 "gluing": mx(self.gluing)}
        if self.multiplier:
            norms["multiplier"] = mx(self.multiplier)
        return norms

    def max_norm(self) -> float:
        return max(self.class_norms().values())


def residuals(phi_term: PhiTerm, hist: BFHistory) -> BFResiduals:
    cplx = hist.complex
    interior = {l: interior_residual(hist, l) for l in cplx.all_links()}
    wedge = {}
    multiplier = {}
    for atom in cplx.atoms():
        for w in cplx.atom_wedges(atom, oriented=False):
            wedge[w] = wedge_residual(phi_term, hist, w)
        if phi_term.uses_multiplier:
            multiplier[atom] = multiplier_residual(phi_term, hist, atom)
    gluing = {r: gluing_residual(hist, r)
              for f in cplx.interior_faces() for r in cplx.face_rlinks(f)}
    return BFResiduals(interior, wedge, multiplier, gluing)


# ---------------------------------------------------------------------------
# corner data


def u_sigma(hist: BFHistory, sigma, atom) -> np.ndarray:
    """Corner value computed through one adjacent atom.

    Interior corners use the orientation of the corner's wedge cycle, so
    the result is atom independent exactly when the gluing equations
    hold.  Boundary corners fall back to the canonical orientation.
    """
    cplx = hist.complex
    if cplx.codim(sigma) != 2 or not cplx.in_region(sigma):
        raise ValueError(f"{sigma} is not a corner cell of the complex")
    if cplx.on_region_boundary(sigma):
        candidates = [w for w in cplx.atom_wedges(atom, oriented=False)
                      if w.sigma == sigma]
    else:
        candidates = [w for w in cplx.sigma_wedge_cycle(sigma)
                      if w.atom == atom]
    if not candidates:
        raise ValueError(f"atom {atom} does not touch corner {sigma}")
    return wedge_momentum(hist, candidates[0])


def gluing_check(hist: BFHistory, sigma) -> float:
    """Max pairwise mismatch of the corner value over its atoms."""
    cplx = hist.complex
    us = [wedge_momentum(hist, w) for w in cplx.sigma_wedge_cycle(sigma)]
    worst = 0.0
    for i in range(len(us)):
        for j in range(i + 1, len(us)):
            worst = max(worst, float(np.max(np.abs(us[i] - us[j]))))
    return worst


# ---------------------------------------------------------------------------
# variations


@dataclass
class BFVariation:
    """Chart coefficients of a tangent: h right chart, k left chart,
    additive e and phi shifts.  Missing entries read as zero."""

    h: dict = field(default_factory=dict)
    k: dict = field(default_factory=dict)
    e: dict = field(default_factory=dict)
    phi: dict = field(default_factory=dict)

    def h_coeff(self, group, l) -> np.ndarray:
        c = self.h.get(l)
        return np.zeros(group.dim) if c is None else np.asarray(c, dtype=float)

    def k_coeff(self, group, r) -> np.ndarray:
        c = self.k.get(r)
        return np.zeros(group.dim) if c is None else np.asarray(c, dtype=float)

    def e_coeff(self, group, w) -> np.ndarray:
        if w in self.e:
            return np.asarray(self.e[w], dtype=float)
        rw = w.reverse()
        if rw in self.e:
            return -np.asarray(self.e[rw], dtype=float)
        return np.zeros(group.dim)

    def phi_mat(self, group, atom) -> np.ndarray:
        m = self.phi.get(atom)
        if m is None:
            return np.zeros((group.dim, group.dim))
        return np.asarray(m, dtype=float)

    @classmethod
    def random(cls, cplx, group, rng, *, scale: float = 1.0,
               with_phi: bool = False) -> "BFVariation":
        var = cls()
        for l in cplx.all_links():
            var.h[l] = rng.normal(scale=scale, size=group.dim)
        for r in cplx.all_rlinks():
            var.k[r] = rng.normal(scale=scale, size=group.dim)
        for atom in cplx.atoms():
            for w in cplx.atom_wedges(atom, oriented=False):
                var.e[w] = rng.normal(scale=scale, size=group.dim)
            if with_phi:
                var.phi[atom] = random_sym_traceless(rng, group.dim, scale)
        return var


def perturb(hist: BFHistory, var: BFVariation, t: float = 1.0) -> BFHistory:
    """Move along a variation; group slots via exp in their charts."""
    G = hist.group
    h = {l: g @ G.exp(t * G.algebra_element(var.h_coeff(G, l)))
         for l, g in hist.h.items()}
    k = {r: G.exp(t * G.algebra_element(var.k_coeff(G, r))) @ g
         for r, g in hist.k.items()}
    e = {w: v + t * var.e_coeff(G, w) for w, v in hist.e.items()}
    phi = {a: m + t * var.phi_mat(G, a) for a, m in hist.phi.items()}
    return BFHistory(hist.complex, G, h, k, e, phi, check=False)


@dataclass
class BFDS:
    """Directional derivative of the action, split by equation class."""

    interior: float
    wedge: float
    multiplier: float
    gluing: float
    boundary: float

    @property
    def bulk(self) -> float:
        return self.interior + self.wedge + self.multiplier + self.gluing

    @property
    def total(self) -> float:
        return self.bulk + self.boundary


def dS(phi_term: PhiTerm, hist: BFHistory, var: BFVariation) -> BFDS:
    cplx = hist.complex
    G = hist.group
    interior = 0.0
    for l in cplx.all_links():
        c = var.h.get(l)
        if c is not None:
            interior += float(np.dot(c, interior_residual(hist, l)))
    wedge = 0.0
    for w, c in var.e.items():
        wedge += float(np.dot(c, wedge_residual(phi_term, hist, w)))
    multiplier = 0.0
    if phi_term.uses_multiplier:
        for atom, m in var.phi.items():
            multiplier += float(np.sum(np.asarray(m, dtype=float)
                                       * multiplier_residual(phi_term, hist, atom)))
    gluing = 0.0
    boundary = 0.0
    for f in cplx.all_faces():
        if cplx.on_region_boundary(f):
            (atom,) = _adjacent_atoms(cplx, f)
            for r in cplx.face_rlinks(f):
                c = var.k.get(r)
                if c is not None:
                    mom = wedge_momentum(hist, _wedge_r_first(atom, r))
                    boundary += float(np.dot(c, mom))
        else:
            for r in cplx.face_rlinks(f):
                c = var.k.get(r)
                if c is not None:
                    gluing += float(np.dot(c, gluing_residual(hist, r)))
    return BFDS(interior, wedge, multiplier, gluing, boundary)


def boundary_basis(cplx: CubicalComplexND, group: MatrixGroup) -> list:
    """Unit boundary-data variations, one per boundary r-link and axis."""
    out = []
    for r in boundary_rlinks(cplx):
        for i in range(group.dim):
            coeff = np.zeros(group.dim)
            coeff[i] = 1.0
            out.append(BFVariation(k={r: coeff}))
    return out


# ---------------------------------------------------------------------------
# gauge action on BF records


def gauge_direction(hist: BFHistory, site, coeffs) -> BFVariation:
    """Tangent generated by a gauge rotation exp(zeta) at one cell.

    Same link/r-link pattern as the gauge module; atom rotations also
    turn the wedge coefficients through the adjoint bracket and the
    multiplier through the induced conjugation.
    """
    cplx = hist.complex
    G = hist.group
    coeffs = np.asarray(coeffs, dtype=float)
    zeta = G.algebra_element(coeffs)
    if not cplx.in_region(site):
        raise ValueError(f"{site} is outside the complex")
    cd = cplx.codim(site)
    var = BFVariation()
    if cd == 0:
        for l in cplx.links(site):
            var.h[l] = -coeffs
        for w in cplx.atom_wedges(site, oriented=False):
            var.e[w] = G.coefficients(G.bracket(zeta, hist.e_matrix(w)))
        if site in hist.phi:
            ad = np.column_stack(
                [G.coefficients(G.bracket(zeta, f)) for f in G.basis])
            m = hist.phi[site]
            var.phi[site] = ad @ m + m @ ad.T
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
        raise ValueError(f"{site} carries no field variables (codimension {cd})")
    return var


def gauge_transform(hist: BFHistory, assignment) -> BFHistory:
    """Rotate by g(cell) per cell; missing cells act as the identity.

    h and k transform as in the gauge module; e rotates in the adjoint
    at its atom and phi conjugates with the adjoint matrix.
    """
    G = hist.group
    eye = G.identity()

    def g_at(cell):
        return assignment.get(cell, eye)

    def ad_matrix(g):
        return np.column_stack(
            [G.coefficients(G.adjoint_transport(g, f)) for f in G.basis])

    h = {l: g_at(l.face) @ v @ G.inv(g_at(l.atom)) for l, v in hist.h.items()}
    k = {r: g_at(r.sigma) @ v @ G.inv(g_at(r.face)) for r, v in hist.k.items()}
    e = {}
    rot_cache = {}
    for w, v in hist.e.items():
        atom = w.atom
        if atom not in rot_cache:
            rot_cache[atom] = ad_matrix(g_at(atom))
        e[w] = rot_cache[atom] @ v
    phi = {}
    for atom, m in hist.phi.items():
        if atom not in rot_cache:
            rot_cache[atom] = ad_matrix(g_at(atom))
        rot = rot_cache[atom]
        phi[atom] = rot @ m @ rot.T
    return BFHistory(hist.complex, G, h, k, e, phi, check=False)


def pure_bf_solution(cplx: CubicalComplexND, group: MatrixGroup, coeffs,
                     assignment=None) -> BFHistory:
    """Flat links with a covariantly matched e field.

    Every wedge carries the same coefficients ``coeffs`` in its
    rotational orientation (sign1 * sign2 for canonical wedges), which
    cancels the interior sums pairwise and matches every corner value.
    An optional gauge assignment moves the solution off the identity
    frame without breaking any field equation.
    """
    hist = BFHistory.identity(cplx, group)
    c = np.asarray(coeffs, dtype=float)
    if c.shape != (group.dim,):
        raise ValueError("coeffs must have one entry per algebra direction")
    for atom in cplx.atoms():
        for w in cplx.atom_wedges(atom, oriented=False):
            hist.e[w] = (c if w.sign1 * w.sign2 > 0 else -c).copy()
    if assignment is not None:
        hist = gauge_transform(hist, assignment)
    return hist


# ---------------------------------------------------------------------------
# linearization around pure BF solutions


class _Layout:
    """Flat indexing of the linear unknowns (all h, interior k, all e)."""

    def __init__(self, cplx: CubicalComplexND, group: MatrixGroup):
        self.links = cplx.all_links()
        self.rlinks = [r for f in cplx.interior_faces()
                       for r in cplx.face_rlinks(f)]
        self.wedges = [w for atom in cplx.atoms()
                       for w in cplx.atom_wedges(atom, oriented=False)]
        d = group.dim
        self.link_pos = {l: d * i for i, l in enumerate(self.links)}
        base = d * len(self.links)
        self.rlink_pos = {r: base + d * i for i, r in enumerate(self.rlinks)}
        base += d * len(self.rlinks)
        self.wedge_pos = {w: base + d * i for i, w in enumerate(self.wedges)}
        self.n_unknowns = base + d * len(self.wedges)


def _wedge_products(hist, w):
    G = hist.group
    g = wedge_boundary(hist, w)
    c = G.inv(hist.h[w.l2]) @ G.inv(hist.k[w.r2])
    cinv = hist.k[w.r2] @ hist.h[w.l2]
    return g, c, cinv


def _orient_sign(w: Wedge) -> float:
    return 1.0 if w.is_canonical else -1.0


def _jacobian(hist: BFHistory, layout: _Layout, boundary_pos=None):
    """Rows: interior links, canonical wedges, interior r-links.  Columns
    follow the layout; boundary k columns go into the second matrix."""
    cplx = hist.complex
    G = hist.group
    d = G.dim
    n_rows = d * (len(layout.links) + len(layout.wedges) + len(layout.rlinks))
    J = np.zeros((n_rows, layout.n_unknowns))
    nb = d * len(boundary_pos) if boundary_pos else 0
    B = np.zeros((n_rows, nb))

    def add(row, slot_key, block):
        if isinstance(slot_key, Link):
            J[row:row + d, layout.link_pos[slot_key]:
              layout.link_pos[slot_key] + d] += block
        elif isinstance(slot_key, RLink):
            if slot_key in layout.rlink_pos:
                pos = layout.rlink_pos[slot_key]
                J[row:row + d, pos:pos + d] += block
            else:
                pos = boundary_pos[slot_key]
                B[row:row + d, pos:pos + d] += block
        else:  # canonical wedge
            pos = layout.wedge_pos[slot_key]
            J[row:row + d, pos:pos + d] += block

    def cols(fn):
        out = np.empty((d, d))
        for j, f in enumerate(G.basis):
            out[:, j] = fn(f)
        return out

    row = 0
    for l in layout.links:
        for w in cplx.wedges_at_link(l):
            g, c, cinv = _wedge_products(hist, w)
            em = hist.e_matrix(w)
            sg = _orient_sign(w)
            add(row, w.l1, cols(lambda f: G.theta_components(em @ g @ f)))
            add(row, w.l2, cols(lambda f: -G.theta_components(em @ f @ g)))
            r1b = cols(lambda f: G.theta_components(em @ c @ f @ cinv @ g))
            add(row, w.r1, r1b)
            add(row, w.r2, -r1b)
            add(row, w.canonical(),
                sg * cols(lambda f: G.theta_components(f @ g)))
        row += d
    for w in layout.wedges:
        g, c, cinv = _wedge_products(hist, w)
        add(row, w.l1, cols(lambda f: G.theta_components(g @ f)))
        add(row, w.l2, cols(lambda f: -G.theta_components(f @ g)))
        r1b = cols(lambda f: G.theta_components(c @ f @ cinv @ g))
        add(row, w.r1, r1b)
        add(row, w.r2, -r1b)
        row += d
    for r in layout.rlinks:
        for atom in _adjacent_atoms(cplx, r.face):
            w = _wedge_r_first(atom, r)
            g, c, cinv = _wedge_products(hist, w)
            em = hist.e_matrix(w)
            sg = _orient_sign(w)
            y = hist.k[w.r1] @ hist.h[w.l1]
            yi = G.inv(y)
            m = y @ em @ g @ yi
            add(row, w.r1, cols(lambda f: G.theta_components(f @ m - m @ f)))
            add(row, w.r2, cols(
                lambda f: -G.theta_components(y @ em @ c @ f @ cinv @ g @ yi)))

            def l1_col(f):
                p = y @ f @ yi
                return G.theta_components(p @ m - m @ p + y @ em @ g @ f @ yi)

            add(row, w.l1, cols(l1_col))
            add(row, w.l2, cols(
                lambda f: -G.theta_components(y @ em @ f @ g @ yi)))
            add(row, w.canonical(), sg * cols(
                lambda f: G.theta_components(y @ f @ g @ yi)))
        row += d
    return J, B


def _bulk_sites(cplx) -> list:
    return (list(cplx.atoms()) + cplx.interior_faces()
            + list(cplx.interior_sigmas()))


def _null_matrix(hist: BFHistory, layout: _Layout) -> np.ndarray:
    G = hist.group
    d = G.dim
    cols = []
    for site in _bulk_sites(hist.complex):
        for i in range(d):
            coeffs = np.zeros(d)
            coeffs[i] = 1.0
            var = gauge_direction(hist, site, coeffs)
            vec = np.zeros(layout.n_unknowns)
            for l, c in var.h.items():
                vec[layout.link_pos[l]:layout.link_pos[l] + d] = c
            for r, c in var.k.items():
                vec[layout.rlink_pos[r]:layout.rlink_pos[r] + d] = c
            for w, c in var.e.items():
                vec[layout.wedge_pos[w]:layout.wedge_pos[w] + d] = c
            cols.append(vec)
    return np.array(cols).T


def _linear_system(hist: BFHistory):
    G = hist.group
    d = G.dim
    layout = _Layout(hist.complex, G)
    brs = boundary_rlinks(hist.complex)
    bpos = {r: d * i for i, r in enumerate(brs)}
    J, B = _jacobian(hist, layout, boundary_pos=bpos)
    return layout, brs, bpos, J, B


def first_variation(phi_term: PhiTerm, hist: BFHistory,
                    boundary_var: BFVariation,
                    *, consistency_tol: float = 1e-8) -> BFVariation:
    """Extend boundary-data coefficients to a solution of the linearized
    pure-BF equations at ``hist`` (least-norm modulo gauge).

    The wedge equations impose flatness, so not every boundary-k
    variation is tangent to the solution set; inadmissible data leaves a
    least-squares defect and raises :class:`SolverFailure`.  Use
    :func:`admissible_boundary_basis` to enumerate the solvable
    directions.
    """
    if phi_term.variant != "none":
        raise NotImplementedError(
            "linearized solve is only provided for the pure BF interaction")
    G = hist.group
    d = G.dim
    layout, brs, bpos, J, B = _linear_system(hist)
    b = np.zeros(d * len(brs))
    for r, c in boundary_var.k.items():
        if r not in bpos:
            raise ValueError(f"{r} is not a boundary r-link")
        b[bpos[r]:bpos[r] + d] = c
    x = np.linalg.lstsq(J, -B @ b, rcond=None)[0]
    mismatch = float(np.max(np.abs(J @ x + B @ b), initial=0.0))
    if mismatch > consistency_tol * max(1.0, float(np.max(np.abs(b), initial=0.0))):
        raise SolverFailure(
            "boundary data violates the linearized flatness constraints",
            residual_norm=mismatch, iterations=0)
    q, _ = np.linalg.qr(_null_matrix(hist, layout))
    x = x - q @ (q.T @ x)
    var = BFVariation()
    for l in layout.links:
        pos = layout.link_pos[l]
        var.h[l] = x[pos:pos + d].copy()
    for r in layout.rlinks:
        pos = layout.rlink_pos[r]
        var.k[r] = x[pos:pos + d].copy()
    for w in layout.wedges:
        pos = layout.wedge_pos[w]
        var.e[w] = x[pos:pos + d].copy()
    for r in brs:
        var.k[r] = b[bpos[r]:bpos[r] + d].copy()
    return var


def admissible_boundary_basis(phi_term: PhiTerm, hist: BFHistory,
                              *, tol: float = 1e-9) -> list:
    """Orthonormal basis of the boundary-k variations that extend to first
    variations of the pure-BF equations at ``hist``.

    Flatness couples the boundary holonomy data through a global closure
    constraint (dim G conditions on a connected region), so the basis is
    smaller than one unit vector per boundary slot.
    """
    if phi_term.variant != "none":
        raise NotImplementedError(
            "linearized solve is only provided for the pure BF interaction")
    G = hist.group
    d = G.dim
    layout, brs, bpos, J, B = _linear_system(hist)
    u, s, _ = np.linalg.svd(J)
    col = u[:, s > s[0] * 1e-12]
    resid = B - col @ (col.T @ B)
    _, s2, v2 = np.linalg.svd(resid)
    keep = np.concatenate([s2 <= max(tol, s2[0] * tol),
                           np.ones(v2.shape[0] - len(s2), dtype=bool)])
    out = []
    for b in v2[keep]:
        var = BFVariation()
        for r in brs:
            var.k[r] = b[bpos[r]:bpos[r] + d].copy()
        out.append(var)
    return out


# ---------------------------------------------------------------------------
# boundary forms


def _g_variation(hist: BFHistory, w: Wedge, var: BFVariation) -> np.ndarray:
    """First-order change of g_bs along a variation's chart coefficients."""
    G = hist.group
    g, c, cinv = _wedge_products(hist, w)
    a1 = G.algebra_element(var.h_coeff(G, w.l1))
    a2 = G.algebra_element(var.h_coeff(G, w.l2))
    xk = G.algebra_element(var.k_coeff(G, w.r1) - var.k_coeff(G, w.r2))
    return g @ a1 - a2 @ g + c @ xk @ cinv @ g


def _u_variation(hist: BFHistory, w: Wedge, var: BFVariation) -> np.ndarray:
    """First-order change of the wedge momentum along a variation."""
    G = hist.group
    y = hist.k[w.r1] @ hist.h[w.l1]
    yi = G.inv(y)
    g = wedge_boundary(hist, w)
    em = hist.e_matrix(w)
    m = y @ em @ g @ yi
    dy = (G.algebra_element(var.k_coeff(G, w.r1))
          + y @ G.algebra_element(var.h_coeff(G, w.l1)) @ yi)
    d_eg = (G.algebra_element(var.e_coeff(G, w)) @ g
            + em @ _g_variation(hist, w, var))
    return G.theta_components(dy @ m - m @ dy + y @ d_eg @ yi)


def cartan_form(hist: BFHistory, face, var: BFVariation, atom=None) -> float:
    """Boundary one-form pairing at one (face, atom): sum of xi_r . u_r.

    For a boundary face the atom is inferred; interior faces require the
    atom explicitly and yield the one-sided pairing.
    """
    cplx = hist.complex
    if atom is None:
        if not cplx.on_region_boundary(face):
            raise ValueError(f"{face} is interior; pass the atom to use")
        (atom,) = _adjacent_atoms(cplx, face)
    elif atom not in _adjacent_atoms(cplx, face):
        raise ValueError(f"atom {atom} does not touch face {face}")
    G = hist.group
    total = 0.0
    for r in cplx.face_rlinks(face):
        mom = wedge_momentum(hist, _wedge_r_first(atom, r))
        total += float(np.dot(var.k_coeff(G, r), mom))
    return total


def _omega_at_face(hist, face, atom, var1, var2) -> float:
    """Boundary two-form pairing at one boundary face."""
    G = hist.group
    total = 0.0
    for r in hist.complex.face_rlinks(face):
        w = _wedge_r_first(atom, r)
        xi = var1.k_coeff(G, r)
        eta = var2.k_coeff(G, r)
        d1 = _u_variation(hist, w, var1)
        d2 = _u_variation(hist, w, var2)
        mom = wedge_momentum(hist, w)
        br = G.coefficients(G.bracket(G.algebra_element(xi),
                                      G.algebra_element(eta)))
        total += (float(np.dot(eta, d1)) - float(np.dot(xi, d2))
                  + float(np.dot(mom, br)))
    return -total


def multisymplectic_defect(phi_term: PhiTerm, hist: BFHistory,
                           var1: BFVariation, var2: BFVariation, *,
                           require_solution: bool = True,
                           solution_tol: float = 1e-6) -> float:
    """Total boundary two-form pairing; vanishes for first variations of
    a solution."""
    if require_solution:
        norms = residuals(phi_term, hist).class_norms()
        worst = max(norms.values())
        if not worst <= solution_tol:
            raise NotASolutionError(
                f"history violates the field equations (residual {worst:.3e})",
                residuals=norms)
    cplx = hist.complex
    total = 0.0
    for f in cplx.all_faces():
        if cplx.on_region_boundary(f):
            (atom,) = _adjacent_atoms(cplx, f)
            total += _omega_at_face(hist, f, atom, var1, var2)
    return total
