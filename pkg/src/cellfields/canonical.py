"""Per-atom covariant Legendre transform onto a discrete dual bundle.

Each atom's first-order data maps to a point carrying a real center
momentum plus one cotangent pair per boundary slot: (face value, face
momentum) for the scalar model, (k matrix, momentum coefficient vector)
per r-link for the connection models. The center momentum is defined so
that the bulk canonical form evaluates back to the per-atom lagrangian
identically; the boundary one-form and the derived two-forms are then
compared against the lagrangian-side structural forms, with tangent
pushforwards taken by central differences of the transform itself.

The per-slot affine evaluation helpers divide the center momentum by
n+1 (scalar) respectively n(n+1) (connection case) where n is the
spacetime dimension; these counts match simplicial atoms, in which case
the slot sum telescopes to the bulk form. On the cubical atoms built
here the slot counts differ, so the helpers are exposed as local
evaluations only and no slot-sum identity is asserted.
"""

from dataclasses import dataclass

import numpy as np

from . import bfmod, gauge, scalar2d
from .errors import NotASolutionError

__all__ = [
    "ScalarCanonicalPoint",
    "GroupCanonicalPoint",
    "PullbackReport",
    "legendre",
    "theta_hat_value",
    "theta_boundary",
    "affine_face_value",
    "affine_rlink_value",
    "measure_total",
    "face_constraint",
    "pullback_check",
    "canonical_gluing_defect",
]


# ---------------------------------------------------------------------------
# dual-bundle points


@dataclass
class ScalarCanonicalPoint:
    """One atom's image: center value/momentum plus per-face pairs."""

    complex: object
    atom: tuple
    phi_atom: float
    p_atom: float
    faces: dict  # label -> (face value, face momentum)


@dataclass
class GroupCanonicalPoint:
    """Connection-model image: interior data, center momentum, and one
    cotangent pair (k_r, p_r) per r-link of the atom's faces."""

    complex: object
    group: object
    atom: tuple
    phi_atom: object  # multiplier matrix or None
    e: dict  # canonical wedge -> coefficient vector (empty for pure gauge)
    h: dict  # interior link -> group element
    p_atom: float
    boundary: dict  # RLink -> (k matrix, momentum coefficient vector)

    def rlink_momentum(self, r):
        return self.boundary[r][1]


class _PointFrame:
    """History-shaped view of a point's stored configuration, enough for
    the wedge transport helpers."""

    __slots__ = ("group", "h", "k")

    def __init__(self, point):
        self.group = point.group
        self.h = point.h
        self.k = {r: pair[0] for r, pair in point.boundary.items()}


# ---------------------------------------------------------------------------
# family dispatch


_SCALAR, _GAUGE, _BF = "scalar", "gauge", "bf"


def _family(hist):
    if isinstance(hist, scalar2d.ScalarHistory):
        return _SCALAR
    if isinstance(hist, bfmod.BFHistory):
        return _BF
    if isinstance(hist, gauge.GaugeHistory):
        return _GAUGE
    raise TypeError(f"unsupported history type {type(hist).__name__}")


def _atoms(hist):
    return list(hist.complex.atoms())


def _perturb(hist, var, t):
    fam = _family(hist)
    if fam == _SCALAR:
        return scalar2d.ScalarHistory(
            hist.complex,
            hist.centers + t * var.centers,
            hist.tfaces + t * var.tfaces,
            hist.sfaces + t * var.sfaces,
        )
    if fam == _BF:
        return bfmod.perturb(hist, var, t)
    return gauge.perturb(hist, var, t)


# ---------------------------------------------------------------------------
# per-atom lagrangians and their boundary partials


def _scalar_face_values(hist, atom):
    return {lbl: hist.face_value(atom, lbl) for lbl in ("0+", "0-", "1+", "1-")}


def _scalar_lagrangian(model, hist, atom):
    """Four-corner sum for one atom; totals to the module action."""
    cplx = hist.complex
    h, k = cplx.h, cplx.k
    c = float(hist.centers[atom])
    f = _scalar_face_values(hist, atom)
    d0p = (f["0+"] - c) / h
    d0m = (c - f["0-"]) / h
    d1p = (f["1+"] - c) / k
    d1m = (c - f["1-"]) / k
    kinetic = (d0p**2 + d0m**2) - (d1p**2 + d1m**2)
    return float(h * k * (kinetic + 4.0 * model.nonlinearity.value(c)))


def _scalar_face_momenta(model, hist, atom):
    cplx = hist.complex
    h, k = cplx.h, cplx.k
    c = float(hist.centers[atom])
    f = _scalar_face_values(hist, atom)
    return {
        "0+": (2.0 * k / h) * (f["0+"] - c),
        "0-": -(2.0 * k / h) * (c - f["0-"]),
        "1+": -(2.0 * h / k) * (f["1+"] - c),
        "1-": (2.0 * h / k) * (c - f["1-"]),
    }


def _scalar_center_partial(model, hist, atom):
    cplx = hist.complex
    h, k = cplx.h, cplx.k
    c = float(hist.centers[atom])
    f = _scalar_face_values(hist, atom)
    d0p = (f["0+"] - c) / h
    d0m = (c - f["0-"]) / h
    d1p = (f["1+"] - c) / k
    d1m = (c - f["1-"]) / k
    nprime = float(model.nonlinearity.deriv(c))
    return float(2.0 * k * (d0m - d0p) + 2.0 * h * (d1p - d1m)
                 + 4.0 * h * k * nprime)


def _group_lagrangian(model, hist, atom):
    if _family(hist) == _BF:
        e_by = bfmod._atom_e_by(hist, atom)
        total = 0.0
        for w, coeff in e_by.items():
            total += float(coeff @ bfmod.theta(hist, w))
        return total + float(model.value(atom, e_by, hist.phi.get(atom)))
    n = model.group.size
    total = 0.0
    for w in hist.complex.atom_wedges(atom, oriented=False):
        g = gauge.wedge_boundary(hist, w)
        total += 1.0 - np.real(np.trace(g)) / n
    return float(model.beta * total)


def _atom_lagrangian(model, hist, atom):
    if _family(hist) == _SCALAR:
        return _scalar_lagrangian(model, hist, atom)
    return _group_lagrangian(model, hist, atom)


def _atom_rlinks(cplx, atom):
    out = []
    for l in cplx.links(atom):
        out.extend(cplx.face_rlinks(l.face))
    return out


def _rlink_momentum(model, hist, atom, r):
    """Directional derivative of the atom lagrangian along delta k = f_i k."""
    w = gauge._wedge_r_first(atom, r)
    if _family(hist) == _BF:
        return bfmod.wedge_momentum(hist, w)
    G = model.group
    scale = model.beta / G.size
    return scale * G.theta_components(gauge.wedge_transport(hist, w))


def _transport_components(hist, w):
    G = hist.group
    return G.theta_components(gauge.wedge_transport(hist, w))


def _canonical_wedges(cplx, atom):
    return list(cplx.atom_wedges(atom, oriented=False))


# ---------------------------------------------------------------------------
# the transform


def legendre(model, hist, atom):
    """Map one atom's first-order data to its dual-bundle point."""
    fam = _family(hist)
    if fam == _SCALAR:
        momenta = _scalar_face_momenta(model, hist, atom)
        values = _scalar_face_values(hist, atom)
        lag = _scalar_lagrangian(model, hist, atom)
        phi_atom = float(hist.centers[atom])
        p_atom = lag
        faces = {}
        for lbl in ("0+", "0-", "1+", "1-"):
            p_atom -= momenta[lbl] * (phi_atom - values[lbl])
            faces[lbl] = (values[lbl], momenta[lbl])
        return ScalarCanonicalPoint(hist.complex, atom, phi_atom, p_atom, faces)

    cplx = hist.complex
    G = hist.group if fam == _BF else model.group
    boundary = {}
    for r in _atom_rlinks(cplx, atom):
        boundary[r] = (hist.k[r].copy(), _rlink_momentum(model, hist, atom, r))
    lag = _group_lagrangian(model, hist, atom)
    p_atom = lag
    for w in _canonical_wedges(cplx, atom):
        diff = boundary[w.r1][1] - boundary[w.r2][1]
        p_atom += float(diff @ _transport_components(hist, w))
    if fam == _BF:
        e = {w: hist.e_coeff(w).copy() for w in _canonical_wedges(cplx, atom)}
        phi_atom = hist.phi.get(atom)
        if phi_atom is not None:
            phi_atom = phi_atom.copy()
    else:
        e = {}
        phi_atom = None
    h = {l: hist.h[l].copy() for l in cplx.links(atom)}
    return GroupCanonicalPoint(cplx, G, atom, phi_atom, e, h, p_atom, boundary)


# ---------------------------------------------------------------------------
# canonical forms on points


def theta_hat_value(point):
    """Bulk canonical form; equals the atom lagrangian on Legendre images."""
    if isinstance(point, ScalarCanonicalPoint):
        total = point.p_atom
        for value, momentum in point.faces.values():
            total += momentum * (point.phi_atom - value)
        return float(total)
    frame = _PointFrame(point)
    total = point.p_atom
    for w in _canonical_wedges(point.complex, point.atom):
        diff = point.boundary[w.r1][1] - point.boundary[w.r2][1]
        total -= float(diff @ _transport_components(frame, w))
    return float(total)


def theta_boundary(point, face, var):
    """Boundary one-form at the (face, atom) incidence.

    ``face`` is a face label for scalar points and a doubled-coordinate
    face key for connection points.
    """
    if isinstance(point, ScalarCanonicalPoint):
        momentum = point.faces[face][1]
        return float(momentum * var.face_value(point.complex, point.atom, face))
    G = point.group
    total = 0.0
    for r in point.complex.face_rlinks(face):
        if r not in point.boundary:
            raise ValueError(f"{face} is not a face of atom {point.atom}")
        total += float(point.boundary[r][1] @ var.k_coeff(G, r))
    return total


def affine_face_value(point, face):
    """Scalar per-face affine evaluation with the printed n+1 divisor."""
    if not isinstance(point, ScalarCanonicalPoint):
        raise TypeError("per-face affine evaluation is for scalar points")
    n = 2
    value, momentum = point.faces[face]
    return float(point.p_atom / (n + 1) + momentum * (point.phi_atom - value))


def affine_rlink_value(point, r):
    """Connection per-r-link affine evaluation, printed n(n+1) divisor."""
    if not isinstance(point, GroupCanonicalPoint):
        raise TypeError("per-r-link affine evaluation is for connection points")
    n = point.complex.n
    frame = _PointFrame(point)
    w = gauge._wedge_r_first(point.atom, r)
    theta_hat = _transport_components(frame, w)
    return float(point.p_atom / (n * (n + 1))
                 - point.boundary[r][1] @ theta_hat)


def measure_total(model, hist):
    """Sum of the bulk canonical form over all atoms; equals the action."""
    return float(sum(theta_hat_value(legendre(model, hist, atom))
                     for atom in _atoms(hist)))


def face_constraint(point, face):
    """Gauge-rotation combination of the face's r-link momenta.

    Transports each momentum back through its own k and sums; vanishes
    on solutions at boundary faces, where the rotation trades the sum
    for the face link's interior equation.
    """
    if isinstance(point, ScalarCanonicalPoint):
        raise TypeError("the face constraint needs connection momenta")
    G = point.group
    out = np.zeros(G.dim)
    for r in point.complex.face_rlinks(face):
        if r not in point.boundary:
            raise ValueError(f"{face} is not a face of atom {point.atom}")
        k, p = point.boundary[r]
        out += G.coefficients(
            G.adjoint_transport(k, G.algebra_element(p), inverse=True))
    return out


# ---------------------------------------------------------------------------
# pullback identity report


@dataclass
class PullbackReport:
    """Worst absolute defect of each structural identity."""

    theta_hat: float
    theta: float
    omega_hat: float
    omega: float

    def max(self):
        return max(self.theta_hat, self.theta, self.omega_hat, self.omega)


def _atom_faces(hist, atom):
    if _family(hist) == _SCALAR:
        return [lbl for lbl, _ in hist.complex.atom_faces(atom)]
    return [l.face for l in hist.complex.links(atom)]


def _lagrangian_theta(model, hist, atom, face, var):
    fam = _family(hist)
    if fam == _SCALAR:
        return scalar2d.cartan_form(model, hist, atom, face, var)
    if fam == _BF:
        return bfmod.cartan_form(hist, face, var, atom=atom)
    G = model.group
    scale = model.beta / G.size
    total = 0.0
    for r in hist.complex.face_rlinks(face):
        w = gauge._wedge_r_first(atom, r)
        total += float(var.k_coeff(G, r)
                       @ (scale * G.theta_components(gauge.wedge_transport(hist, w))))
    return total


def _lagrangian_omega(model, hist, atom, face, var1, var2):
    fam = _family(hist)
    if fam == _SCALAR:
        return scalar2d.omega_form(model, hist, atom, face, var1, var2)
    if fam == _BF:
        return bfmod._omega_at_face(hist, face, atom, var1, var2)
    return gauge._omega_at_face(model, hist, face, var1, var2)


class _Pushforward:
    """Central-difference image of one variation under the transform."""

    def __init__(self, model, hist, var, eps):
        self.var = var
        self.eps = eps
        self.hist_plus = _perturb(hist, var, eps)
        self.hist_minus = _perturb(hist, var, -eps)
        self._points = {}
        self._model = model

    def points(self, atom):
        if atom not in self._points:
            self._points[atom] = (
                legendre(self._model, self.hist_plus, atom),
                legendre(self._model, self.hist_minus, atom),
            )
        return self._points[atom]

    def dp_atom(self, atom):
        pp, pm = self.points(atom)
        return (pp.p_atom - pm.p_atom) / (2.0 * self.eps)

    def dp_face(self, atom, face):
        pp, pm = self.points(atom)
        return (pp.faces[face][1] - pm.faces[face][1]) / (2.0 * self.eps)

    def dp_rlink(self, atom, r):
        pp, pm = self.points(atom)
        return (pp.boundary[r][1] - pm.boundary[r][1]) / (2.0 * self.eps)

    def d_transport(self, w):
        plus = _transport_components(self.hist_plus, w)
        minus = _transport_components(self.hist_minus, w)
        return (plus - minus) / (2.0 * self.eps)

    def d_lagrangian(self, atom):
        plus = _atom_lagrangian(self._model, self.hist_plus, atom)
        minus = _atom_lagrangian(self._model, self.hist_minus, atom)
        return (plus - minus) / (2.0 * self.eps)


def _d_theta_hat(point, push, atom):
    """Derivative of the bulk form along the pushed variation."""
    if isinstance(point, ScalarCanonicalPoint):
        var = push.var
        cplx = point.complex
        v_center = float(var.centers[atom])
        total = push.dp_atom(atom)
        for lbl, (value, momentum) in point.faces.items():
            v_face = var.face_value(cplx, atom, lbl)
            total += (push.dp_face(atom, lbl) * (point.phi_atom - value)
                      + momentum * (v_center - v_face))
        return total
    frame = _PointFrame(point)
    total = push.dp_atom(atom)
    for w in _canonical_wedges(point.complex, atom):
        diff = point.boundary[w.r1][1] - point.boundary[w.r2][1]
        d_diff = push.dp_rlink(atom, w.r1) - push.dp_rlink(atom, w.r2)
        total -= float(d_diff @ _transport_components(frame, w))
        total -= float(diff @ push.d_transport(w))
    return total


def _canonical_omega(point, face, push1, push2):
    atom = point.atom
    if isinstance(point, ScalarCanonicalPoint):
        cplx = point.complex
        v1f = push1.var.face_value(cplx, atom, face)
        v2f = push2.var.face_value(cplx, atom, face)
        return float(v1f * push2.dp_face(atom, face)
                     - v2f * push1.dp_face(atom, face))
    G = point.group
    total = 0.0
    for r in point.complex.face_rlinks(face):
        eta1 = push1.var.k_coeff(G, r)
        eta2 = push2.var.k_coeff(G, r)
        bracket = G.coefficients(G.bracket(G.algebra_element(eta1),
                                           G.algebra_element(eta2)))
        total += (float(eta2 @ push1.dp_rlink(atom, r))
                  - float(eta1 @ push2.dp_rlink(atom, r))
                  + float(point.boundary[r][1] @ bracket))
    return -total


def pullback_check(model, hist, variations, *, eps=1e-5):
    """Defects of the four structural identities relating the transform
    to the lagrangian-side forms, maximized over atoms and faces.

    The bulk-form identity is exact by construction; the one-form
    identity compares stored momenta against the module boundary forms;
    both derived-form identities push the supplied variations through
    the transform by central differences, so their defects carry an
    O(eps^2) remainder."""
    variations = list(variations)
    if not variations:
        raise ValueError("at least one variation is required")
    fam = _family(hist)
    atoms = _atoms(hist)
    points = {atom: legendre(model, hist, atom) for atom in atoms}

    d_theta_hat = 0.0
    for atom in atoms:
        lag = _atom_lagrangian(model, hist, atom)
        d_theta_hat = max(d_theta_hat,
                          abs(theta_hat_value(points[atom]) - lag))

    pushes = [_Pushforward(model, hist, var, eps) for var in variations]

    d_theta = 0.0
    d_omega_hat = 0.0
    for push in pushes:
        for atom in atoms:
            d_omega_hat = max(
                d_omega_hat,
                abs(_d_theta_hat(points[atom], push, atom)
                    - push.d_lagrangian(atom)))
            for face in _atom_faces(hist, atom):
                got = theta_boundary(points[atom], face, push.var)
                want = _lagrangian_theta(model, hist, atom, face, push.var)
                d_theta = max(d_theta, abs(got - want))

    d_omega = 0.0
    for push1, push2 in zip(pushes, pushes[1:]):
        for atom in atoms:
            for face in _atom_faces(hist, atom):
                if fam == _GAUGE and not hist.complex.on_region_boundary(face):
                    continue
                got = _canonical_omega(points[atom], face, push1, push2)
                want = _lagrangian_omega(model, hist, atom, face,
                                         push1.var, push2.var)
                d_omega = max(d_omega, abs(got - want))

    return PullbackReport(d_theta_hat, d_theta, d_omega_hat, d_omega)


# ---------------------------------------------------------------------------
# gluing through the transform


def _solution_report(model, hist):
    fam = _family(hist)
    if fam == _SCALAR:
        return scalar2d._solution_residuals(model, hist)
    if fam == _BF:
        return bfmod.residuals(model, hist).class_norms()
    return gauge._solution_residuals(model, hist)


def canonical_gluing_defect(model, hist, *, solution_tol=1e-8):
    """Worst mismatch of face momenta mapped from the two sides.

    The two-sided momentum sum at each shared slot is the gluing
    residual, so it must vanish on solutions; non-solutions are refused
    with the residual report."""
    res = _solution_report(model, hist)
    worst = max(res.values()) if res else 0.0
    if not worst <= solution_tol:
        raise NotASolutionError(
            f"history does not solve the field equations (residual {worst:.3e})",
            residuals=res)

    fam = _family(hist)
    points = {atom: legendre(model, hist, atom) for atom in _atoms(hist)}
    defect = 0.0
    if fam == _SCALAR:
        cplx = hist.complex
        for face in cplx.interior_faces():
            lo, hi = cplx.face_atoms(face)
            axis = cplx.face_axis(face)
            p_lo = points[lo].faces[f"{axis}+"][1]
            p_hi = points[hi].faces[f"{axis}-"][1]
            defect = max(defect, abs(p_lo + p_hi))
        return float(defect)
    cplx = hist.complex
    for face in cplx.interior_faces():
        lo, hi = gauge._adjacent_atoms(cplx, face)
        for r in cplx.face_rlinks(face):
            mismatch = (points[lo].boundary[r][1]
                        + points[hi].boundary[r][1])
            defect = max(defect, float(np.max(np.abs(mismatch))))
    return float(defect)
