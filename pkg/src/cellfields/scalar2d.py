"""Nonlinear scalar waves on a 2D grid of rectangular atoms.

The record of a history keeps one value per atom center and one value
per face, faces being shared between neighbors.  Each atom contributes
four quarter ("corner") lagrangians built from one-sided differences
toward its faces; the x0 direction enters with positive kinetic sign,
x1 with negative.  Varying the total action splits into

* interior equations (per center): a five-point second-difference
  operator plus the nonlinearity derivative,
* gluing equations (per interior face): solved exactly by the midpoint
  of the two neighboring centers, independent of the nonlinearity,
* boundary one-form coefficients (per boundary face): the theta form.

On top of these the module provides the symplectic two-form and its
boundary-sum defect, an explicit time-marching scheme whose output
satisfies the produced equations identically, a sparse Newton solver
for the boundary-value problem, a linearized solver for first
variations, the center-only reduced model summed over plaquettes, and
the single-atom boundary-data model.

Grid kernels live in :mod:`cellfields._kernels`, where a numba build
and a pure-numpy build are selectable via CELLFIELDS_DISABLE_NUMBA.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.linalg import spsolve

from . import _kernels
from ._newton import SolverFailure
from .complexes import CartesianComplex2D, build_cartesian_2d
from .errors import NotASolutionError

__all__ = [
    "WaveModel",
    "ScalarHistory",
    "ScalarVariation",
    "BoundaryData",
    "InitialData",
    "DirichletBoundary",
    "ScalarDS",
    "ReducedScalar",
    "ZeroNonlinearity",
    "CubicNonlinearity",
    "CosineNonlinearity",
    "CallableNonlinearity",
    "action",
    "interior_residual",
    "interior_residual_grid",
    "gluing_residual",
    "gluing_residual_grids",
    "glue_solve",
    "apply_glue",
    "boundary_coefficients",
    "boundary_incidences",
    "boundary_basis",
    "dS",
    "solve",
    "first_variation",
    "evolve",
    "restrict_to_initial_data",
    "cartan_form",
    "omega_form",
    "multisymplectic_defect",
    "reduce",
    "boundary_model_Lb",
    "slab_momentum",
]


# ---------------------------------------------------------------------------
# nonlinearities


class ZeroNonlinearity:
    def value(self, phi):
        return np.zeros_like(np.asarray(phi, dtype=float))

    def deriv(self, phi):
        return np.zeros_like(np.asarray(phi, dtype=float))

    def deriv2(self, phi):
        return np.zeros_like(np.asarray(phi, dtype=float))


@dataclass
class CubicNonlinearity:
    """N(phi) = coefficient * phi^3."""

    coefficient: float = 1.0

    def value(self, phi):
        phi = np.asarray(phi, dtype=float)
        return self.coefficient * phi ** 3

    def deriv(self, phi):
        phi = np.asarray(phi, dtype=float)
        return 3.0 * self.coefficient * phi ** 2

    def deriv2(self, phi):
        phi = np.asarray(phi, dtype=float)
        return 6.0 * self.coefficient * phi


@dataclass
class CosineNonlinearity:
    """N(phi) = amplitude * cos(phi), the sine-Gordon-type choice."""

    amplitude: float = 1.0

    def value(self, phi):
        return self.amplitude * np.cos(np.asarray(phi, dtype=float))

    def deriv(self, phi):
        return -self.amplitude * np.sin(np.asarray(phi, dtype=float))

    def deriv2(self, phi):
        return -self.amplitude * np.cos(np.asarray(phi, dtype=float))


class CallableNonlinearity:
    """Wrap plain callables; second derivative falls back to differences."""

    def __init__(self, value_fn, deriv_fn, deriv2_fn=None):
        self._value = value_fn
        self._deriv = deriv_fn
        self._deriv2 = deriv2_fn

    def value(self, phi):
        return np.asarray(self._value(np.asarray(phi, dtype=float)), dtype=float)

    def deriv(self, phi):
        return np.asarray(self._deriv(np.asarray(phi, dtype=float)), dtype=float)

    def deriv2(self, phi):
        if self._deriv2 is not None:
            return np.asarray(self._deriv2(np.asarray(phi, dtype=float)), dtype=float)
        e = 1e-6
        phi = np.asarray(phi, dtype=float)
        return (self.deriv(phi + e) - self.deriv(phi - e)) / (2.0 * e)


class WaveModel:
    """Field model: a nonlinearity N with derivatives; spacings come
    from the complex a history lives on.

    The first derivative is validated against central differences of
    the value on sample points at tolerance 1e-6.
    """

    def __init__(self, nonlinearity=None):
        self.nonlinearity = nonlinearity if nonlinearity is not None else ZeroNonlinearity()
        self._validate()

    def _validate(self):
        pts = np.linspace(-2.0, 2.0, 9)
        e = 1e-5
        fd = (self.nonlinearity.value(pts + e) - self.nonlinearity.value(pts - e)) / (2.0 * e)
        err = np.max(np.abs(fd - self.nonlinearity.deriv(pts)))
        if not err <= 1e-6:
            raise ValueError(
                "nonlinearity derivative disagrees with differences of the value "
                f"(max error {err:.3e})"
            )


# ---------------------------------------------------------------------------
# histories and variations


def _check_shapes(cplx, centers, tfaces, sfaces):
    n0, n1 = cplx.n0, cplx.n1
    if centers.shape != (n0, n1):
        raise ValueError(f"centers must have shape {(n0, n1)}")
    if tfaces.shape != (n0 + 1, n1):
        raise ValueError(f"tfaces must have shape {(n0 + 1, n1)}")
    if sfaces.shape != (n0, n1 + 1):
        raise ValueError(f"sfaces must have shape {(n0, n1 + 1)}")


def _face_slot(cplx, atom, label):
    i, j = atom
    if label == "0+":
        return ("t", i + 1, j)
    if label == "0-":
        return ("t", i, j)
    if label == "1+":
        return ("s", i, j + 1)
    if label == "1-":
        return ("s", i, j)
    raise ValueError(f"unknown face label {label!r}")


def _face_key_slot(cplx, face):
    a, b = face
    if a % 2 == 0:
        return ("t", a // 2, (b - 1) // 2)
    return ("s", (a - 1) // 2, b // 2)


@dataclass
class ScalarHistory:
    """Center values (n0, n1), axis-0 faces (n0+1, n1), axis-1 faces
    (n0, n1+1); interior faces stored once, so sharing between
    neighboring atoms holds by construction."""

    complex: CartesianComplex2D
    centers: np.ndarray
    tfaces: np.ndarray
    sfaces: np.ndarray

    def __post_init__(self):
        self.centers = np.ascontiguousarray(self.centers, dtype=float)
        self.tfaces = np.ascontiguousarray(self.tfaces, dtype=float)
        self.sfaces = np.ascontiguousarray(self.sfaces, dtype=float)
        _check_shapes(self.complex, self.centers, self.tfaces, self.sfaces)

    @classmethod
    def zeros(cls, cplx):
        return cls(cplx,
                   np.zeros((cplx.n0, cplx.n1)),
                   np.zeros((cplx.n0 + 1, cplx.n1)),
                   np.zeros((cplx.n0, cplx.n1 + 1)))

    @classmethod
    def from_function(cls, cplx, fn):
        """Sample a vectorized fn(x0, x1) at centers and face midpoints."""
        h, k = cplx.h, cplx.k
        x0c = (2.0 * np.arange(cplx.n0) + 1.0) * h
        x1c = (2.0 * np.arange(cplx.n1) + 1.0) * k
        x0t = 2.0 * np.arange(cplx.n0 + 1) * h
        x1s = 2.0 * np.arange(cplx.n1 + 1) * k
        centers = fn(x0c[:, None], x1c[None, :])
        tfaces = fn(x0t[:, None], x1c[None, :])
        sfaces = fn(x0c[:, None], x1s[None, :])
        return cls(cplx, np.asarray(centers, dtype=float),
                   np.asarray(tfaces, dtype=float),
                   np.asarray(sfaces, dtype=float))

    def copy(self):
        return ScalarHistory(self.complex, self.centers.copy(),
                             self.tfaces.copy(), self.sfaces.copy())

    def face_value(self, atom, label):
        kind, i, j = _face_slot(self.complex, atom, label)
        return float(self.tfaces[i, j] if kind == "t" else self.sfaces[i, j])

    def set_face(self, atom, label, value):
        kind, i, j = _face_slot(self.complex, atom, label)
        if kind == "t":
            self.tfaces[i, j] = value
        else:
            self.sfaces[i, j] = value

    def face_by_key(self, face):
        kind, i, j = _face_key_slot(self.complex, face)
        return float(self.tfaces[i, j] if kind == "t" else self.sfaces[i, j])


@dataclass
class ScalarVariation:
    """Tangent data with the same layout as a history."""

    centers: np.ndarray
    tfaces: np.ndarray
    sfaces: np.ndarray

    def __post_init__(self):
        self.centers = np.ascontiguousarray(self.centers, dtype=float)
        self.tfaces = np.ascontiguousarray(self.tfaces, dtype=float)
        self.sfaces = np.ascontiguousarray(self.sfaces, dtype=float)

    @classmethod
    def zeros(cls, cplx):
        return cls(np.zeros((cplx.n0, cplx.n1)),
                   np.zeros((cplx.n0 + 1, cplx.n1)),
                   np.zeros((cplx.n0, cplx.n1 + 1)))

    def face_value(self, cplx, atom, label):
        kind, i, j = _face_slot(cplx, atom, label)
        return float(self.tfaces[i, j] if kind == "t" else self.sfaces[i, j])


@dataclass
class BoundaryData:
    """Values on the four boundary runs of faces.

    tfaces_minus/plus: axis-0 faces at the past (i=0) and future (i=n0)
    edges, length n1.  sfaces_minus/plus: axis-1 faces at j=0 and j=n1,
    length n0.
    """

    tfaces_minus: np.ndarray
    tfaces_plus: np.ndarray
    sfaces_minus: np.ndarray
    sfaces_plus: np.ndarray

    def __post_init__(self):
        self.tfaces_minus = np.asarray(self.tfaces_minus, dtype=float)
        self.tfaces_plus = np.asarray(self.tfaces_plus, dtype=float)
        self.sfaces_minus = np.asarray(self.sfaces_minus, dtype=float)
        self.sfaces_plus = np.asarray(self.sfaces_plus, dtype=float)

    @classmethod
    def zeros(cls, cplx):
        return cls(np.zeros(cplx.n1), np.zeros(cplx.n1),
                   np.zeros(cplx.n0), np.zeros(cplx.n0))

    @classmethod
    def from_history(cls, hist):
        return cls(hist.tfaces[0, :].copy(), hist.tfaces[-1, :].copy(),
                   hist.sfaces[:, 0].copy(), hist.sfaces[:, -1].copy())


def boundary_basis(cplx):
    """Unit boundary data, one per boundary face (2*n1 + 2*n0 of them)."""
    out = []
    for name, length in (("tfaces_minus", cplx.n1), ("tfaces_plus", cplx.n1),
                         ("sfaces_minus", cplx.n0), ("sfaces_plus", cplx.n0)):
        for m in range(length):
            b = BoundaryData.zeros(cplx)
            getattr(b, name)[m] = 1.0
            out.append(b)
    return out


def boundary_incidences(cplx):
    """Boundary (atom, label) pairs; each boundary face meets one atom."""
    out = []
    for j in range(cplx.n1):
        out.append(((0, j), "0-"))
        out.append(((cplx.n0 - 1, j), "0+"))
    for i in range(cplx.n0):
        out.append(((i, 0), "1-"))
        out.append(((i, cplx.n1 - 1), "1+"))
    return out


# ---------------------------------------------------------------------------
# action and residuals


def action(model, hist, *, corners="all"):
    """Total action, a sum of per-atom corner lagrangians.

    corners="all" sums every corner of every atom;
    corners="complete" keeps only corners whose diagonal plaquette lies
    inside the grid (the subset matched by the reduced model).
    """
    cplx = hist.complex
    nvals = model.nonlinearity.value(hist.centers)
    if corners == "all":
        return float(_kernels.corner_action_sum(
            hist.centers, hist.tfaces, hist.sfaces, cplx.h, cplx.k, nvals))
    if corners != "complete":
        raise ValueError("corners must be 'all' or 'complete'")
    h, k = cplx.h, cplx.k
    n0, n1 = cplx.n0, cplx.n1
    d0p = (hist.tfaces[1:, :] - hist.centers) / h
    d0m = (hist.centers - hist.tfaces[:-1, :]) / h
    d1p = (hist.sfaces[:, 1:] - hist.centers) / k
    d1m = (hist.centers - hist.sfaces[:, :-1]) / k
    # corner (c0, c1) of atom (i, j) is kept iff the atom diagonally
    # across it exists, i.e. i+c0 and j+c1 stay on the grid
    total = 0.0
    for d0, rows in ((d0p, slice(0, n0 - 1)), (d0m, slice(1, n0))):
        for d1, cols in ((d1p, slice(0, n1 - 1)), (d1m, slice(1, n1))):
            block = (0.5 * d0[rows, cols] ** 2 - 0.5 * d1[rows, cols] ** 2
                     + nvals[rows, cols])
            total += float(np.sum(h * k * block))
    return total


def interior_residual_grid(model, hist):
    cplx = hist.complex
    nprime = model.nonlinearity.deriv(hist.centers)
    return np.asarray(_kernels.interior_residual_grid(
        hist.centers, hist.tfaces, hist.sfaces, cplx.h, cplx.k, nprime))


def interior_residual(model, hist, atom):
    i, j = atom
    return float(interior_residual_grid(model, hist)[i, j])


def gluing_residual_grids(model, hist):
    """(axis-0 interior faces (n0-1, n1), axis-1 interior faces (n0, n1-1))."""
    cplx = hist.complex
    tg = np.asarray(_kernels.time_gluing_grid(
        hist.centers, hist.tfaces, cplx.h, cplx.k))
    sg = np.asarray(_kernels.space_gluing_grid(
        hist.centers, hist.sfaces, cplx.h, cplx.k))
    return tg, sg


def _interior_face_atoms(cplx, face):
    lo, hi = cplx.face_atoms(face)
    if lo is None or hi is None:
        raise ValueError(f"face {face} lies on the boundary; no gluing there")
    return lo, hi


def gluing_residual(model, hist, face):
    cplx = hist.complex
    lo, hi = _interior_face_atoms(cplx, face)
    kind, i, j = _face_key_slot(cplx, face)
    f = hist.face_by_key(face)
    a = hist.centers[lo]
    b = hist.centers[hi]
    if kind == "t":
        return float((2.0 * cplx.k / cplx.h) * ((f - a) - (b - f)))
    return float(-(2.0 * cplx.h / cplx.k) * ((f - a) - (b - f)))


def glue_solve(hist, face):
    """Midpoint of the neighboring centers; zeros the gluing residual."""
    lo, hi = _interior_face_atoms(hist.complex, face)
    return float(0.5 * (hist.centers[lo] + hist.centers[hi]))


def apply_glue(hist):
    """Set every interior face to the glue_solve midpoint, in place."""
    c = hist.centers
    hist.tfaces[1:-1, :] = 0.5 * (c[:-1, :] + c[1:, :])
    hist.sfaces[:, 1:-1] = 0.5 * (c[:, :-1] + c[:, 1:])
    return hist


def boundary_coefficients(model, hist):
    """Signed boundary one-form coefficients, one per boundary face.

    These are the theta coefficients and also the boundary blocks of
    dS; the sign pattern distinguishes past from future and left from
    right edges.
    """
    cplx = hist.complex
    h, k = cplx.h, cplx.k
    c = hist.centers
    return BoundaryData(
        tfaces_minus=-(2.0 * k / h) * (c[0, :] - hist.tfaces[0, :]),
        tfaces_plus=(2.0 * k / h) * (hist.tfaces[-1, :] - c[-1, :]),
        sfaces_minus=(2.0 * h / k) * (c[:, 0] - hist.sfaces[:, 0]),
        sfaces_plus=-(2.0 * h / k) * (hist.sfaces[:, -1] - c[:, -1]),
    )


@dataclass
class ScalarDS:
    """dS contracted with a variation, split into blocks."""

    interior: float
    gluing: float
    boundary: float

    @property
    def bulk(self):
        return self.interior + self.gluing

    @property
    def total(self):
        return self.interior + self.gluing + self.boundary


def dS(model, hist, var):
    ig = interior_residual_grid(model, hist)
    tg, sg = gluing_residual_grids(model, hist)
    interior = float(np.sum(ig * var.centers))
    gluing = float(np.sum(tg * var.tfaces[1:-1, :]) + np.sum(sg * var.sfaces[:, 1:-1]))
    bc = boundary_coefficients(model, hist)
    boundary = float(
        np.dot(bc.tfaces_minus, var.tfaces[0, :])
        + np.dot(bc.tfaces_plus, var.tfaces[-1, :])
        + np.dot(bc.sfaces_minus, var.sfaces[:, 0])
        + np.dot(bc.sfaces_plus, var.sfaces[:, -1])
    )
    return ScalarDS(interior, gluing, boundary)


# ---------------------------------------------------------------------------
# boundary-value Newton solver and first variations


def _layout(cplx):
    n0, n1 = cplx.n0, cplx.n1
    nc = n0 * n1
    nt = (n0 - 1) * n1
    ns = n0 * (n1 - 1)
    return nc, nt, ns


def _assemble(model, cplx, hist):
    """Residual vector and sparse Jacobian over the interior unknowns."""
    n0, n1 = cplx.n0, cplx.n1
    h, k = cplx.h, cplx.k
    nc, nt, ns = _layout(cplx)

    def idx_c(i, j):
        return i * n1 + j

    def idx_t(m, j):
        return nc + (m - 1) * n1 + j

    def idx_s(i, m):
        return nc + nt + i * (n1 - 1) + (m - 1)

    ig = interior_residual_grid(model, hist)
    tg, sg = gluing_residual_grids(model, hist)
    res = np.concatenate([ig.ravel(), tg.ravel(), sg.ravel()])

    rows, cols, vals = [], [], []
    d2 = model.nonlinearity.deriv2(hist.centers)
    for i in range(n0):
        for j in range(n1):
            r = idx_c(i, j)
            rows.append(r); cols.append(idx_c(i, j))
            vals.append(2.0 * h * k * (2.0 / h ** 2 - 2.0 / k ** 2 + 2.0 * d2[i, j]))
            if i >= 1:
                rows.append(r); cols.append(idx_t(i, j)); vals.append(-2.0 * k / h)
            if i + 1 <= n0 - 1:
                rows.append(r); cols.append(idx_t(i + 1, j)); vals.append(-2.0 * k / h)
            if j >= 1:
                rows.append(r); cols.append(idx_s(i, j)); vals.append(2.0 * h / k)
            if j + 1 <= n1 - 1:
                rows.append(r); cols.append(idx_s(i, j + 1)); vals.append(2.0 * h / k)
    for m in range(1, n0):
        for j in range(n1):
            r = idx_t(m, j)
            rows.append(r); cols.append(idx_t(m, j)); vals.append(4.0 * k / h)
            rows.append(r); cols.append(idx_c(m - 1, j)); vals.append(-2.0 * k / h)
            rows.append(r); cols.append(idx_c(m, j)); vals.append(-2.0 * k / h)
    for i in range(n0):
        for m in range(1, n1):
            r = idx_s(i, m)
            rows.append(r); cols.append(idx_s(i, m)); vals.append(-4.0 * h / k)
            rows.append(r); cols.append(idx_c(i, m - 1)); vals.append(2.0 * h / k)
            rows.append(r); cols.append(idx_c(i, m)); vals.append(2.0 * h / k)
    size = nc + nt + ns
    jac = coo_matrix((vals, (rows, cols)), shape=(size, size)).tocsr()
    return res, jac


def _apply_vector(cplx, hist, x, scale=1.0):
    n0, n1 = cplx.n0, cplx.n1
    nc, nt, ns = _layout(cplx)
    out = hist.copy()
    out.centers += scale * x[:nc].reshape(n0, n1)
    if nt:
        out.tfaces[1:-1, :] += scale * x[nc:nc + nt].reshape(n0 - 1, n1)
    if ns:
        out.sfaces[:, 1:-1] += scale * x[nc + nt:].reshape(n0, n1 - 1)
    return out


def _set_boundary(hist, boundary):
    hist.tfaces[0, :] = boundary.tfaces_minus
    hist.tfaces[-1, :] = boundary.tfaces_plus
    hist.sfaces[:, 0] = boundary.sfaces_minus
    hist.sfaces[:, -1] = boundary.sfaces_plus


def solve(model, cplx, boundary, *, guess=None, tol=1e-12, max_iter=60):
    """Newton solve of the boundary-value problem with fixed boundary
    faces; unknowns are all centers and all interior faces."""
    hist = guess.copy() if guess is not None else ScalarHistory.zeros(cplx)
    _set_boundary(hist, boundary)
    res, jac = _assemble(model, cplx, hist)
    rn = float(np.max(np.abs(res))) if res.size else 0.0
    for it in range(max_iter):
        if rn <= tol:
            return hist
        step = np.atleast_1d(np.asarray(spsolve(jac, -res), dtype=float))
        if not np.all(np.isfinite(step)):
            raise SolverFailure("singular linearization in the grid solve",
                                residual_norm=rn, iterations=it)
        t = 1.0
        for _ in range(40):
            cand = _apply_vector(cplx, hist, step, t)
            res_c, jac_c = _assemble(model, cplx, cand)
            rn_c = float(np.max(np.abs(res_c))) if res_c.size else 0.0
            if rn_c <= tol or rn_c < rn:
                hist, res, jac, rn = cand, res_c, jac_c, rn_c
                break
            t *= 0.5
        else:
            raise SolverFailure("line search stalled in the grid solve",
                                residual_norm=rn, iterations=it)
    if rn <= tol:
        return hist
    raise SolverFailure("grid solve did not converge", residual_norm=rn,
                        iterations=max_iter)


def first_variation(model, hist, boundary_var):
    """Solve the linearized equations for the variation with the given
    boundary face values; interior values come out of a sparse solve."""
    cplx = hist.complex
    n0, n1 = cplx.n0, cplx.n1
    h, k = cplx.h, cplx.k
    nc, nt, ns = _layout(cplx)
    _, jac = _assemble(model, cplx, hist)
    rhs = np.zeros(nc + nt + ns)
    bv = boundary_var
    for j in range(n1):
        rhs[0 * n1 + j] += (-2.0 * k / h) * bv.tfaces_minus[j]
        rhs[(n0 - 1) * n1 + j] += (-2.0 * k / h) * bv.tfaces_plus[j]
    for i in range(n0):
        rhs[i * n1 + 0] += (2.0 * h / k) * bv.sfaces_minus[i]
        rhs[i * n1 + (n1 - 1)] += (2.0 * h / k) * bv.sfaces_plus[i]
    x = spsolve(jac, -rhs) if rhs.size else rhs
    x = np.atleast_1d(np.asarray(x, dtype=float))
    var = ScalarVariation.zeros(cplx)
    var.centers[:, :] = x[:nc].reshape(n0, n1)
    if nt:
        var.tfaces[1:-1, :] = x[nc:nc + nt].reshape(n0 - 1, n1)
    if ns:
        var.sfaces[:, 1:-1] = x[nc + nt:].reshape(n0, n1 - 1)
    var.tfaces[0, :] = bv.tfaces_minus
    var.tfaces[-1, :] = bv.tfaces_plus
    var.sfaces[:, 0] = bv.sfaces_minus
    var.sfaces[:, -1] = bv.sfaces_plus
    return var


# ---------------------------------------------------------------------------
# explicit evolution


@dataclass
class InitialData:
    """Faces on the starting isochronous surface plus the centers of
    the atoms just past it."""

    h: float
    k: float
    centers: np.ndarray
    tfaces: np.ndarray

    def __post_init__(self):
        self.centers = np.asarray(self.centers, dtype=float)
        self.tfaces = np.asarray(self.tfaces, dtype=float)
        if self.centers.shape != self.tfaces.shape or self.centers.ndim != 1:
            raise ValueError("centers and tfaces must be equal-length vectors")


@dataclass
class DirichletBoundary:
    """Held values for the two spatial edge runs; scalars broadcast."""

    left: object = 0.0
    right: object = 0.0

    def row_values(self, n0):
        left = np.broadcast_to(np.asarray(self.left, dtype=float), (n0,))
        right = np.broadcast_to(np.asarray(self.right, dtype=float), (n0,))
        return np.array(left), np.array(right)


def evolve(model, initial, n_steps, boundary=None):
    """March n_steps new rows of atoms out of the initial data.

    Each step completes the current row (spatial faces by midpoint
    gluing, edge faces from the Dirichlet policy), solves the row's
    interior equation for its future face, and mirrors the center
    across that face.  Produced interior and gluing residuals vanish
    identically.
    """
    if n_steps < 0:
        raise ValueError("n_steps must be nonnegative")
    if boundary is None:
        boundary = DirichletBoundary()
    n1 = initial.centers.shape[0]
    n0 = n_steps + 1
    cplx = build_cartesian_2d(n0, n1, initial.h, initial.k)
    h, k = cplx.h, cplx.k
    left, right = boundary.row_values(n0)
    hist = ScalarHistory.zeros(cplx)
    hist.centers[0, :] = initial.centers
    hist.tfaces[0, :] = initial.tfaces
    for i in range(n0):
        c = hist.centers[i, :]
        hist.sfaces[i, 1:-1] = 0.5 * (c[:-1] + c[1:])
        hist.sfaces[i, 0] = left[i]
        hist.sfaces[i, -1] = right[i]
        d1 = (hist.sfaces[i, 1:] - 2.0 * c) + hist.sfaces[i, :-1]
        nprime = model.nonlinearity.deriv(c)
        hist.tfaces[i + 1, :] = (2.0 * c - hist.tfaces[i, :]) + h * h * (
            d1 / (k * k) + 2.0 * nprime)
        if i + 1 < n0:
            hist.centers[i + 1, :] = 2.0 * hist.tfaces[i + 1, :] - c
    return hist


def restrict_to_initial_data(hist):
    """Initial data and Dirichlet policy that regenerate hist under
    evolve (``n_steps = n0 - 1``) when hist solves the equations."""
    initial = InitialData(hist.complex.h, hist.complex.k,
                          hist.centers[0, :].copy(), hist.tfaces[0, :].copy())
    boundary = DirichletBoundary(hist.sfaces[:, 0].copy(),
                                 hist.sfaces[:, -1].copy())
    return initial, boundary


# ---------------------------------------------------------------------------
# structural forms


def cartan_form(model, hist, atom, label, var):
    """Theta at the (face, atom) incidence contracted with a variation."""
    cplx = hist.complex
    h, k = cplx.h, cplx.k
    i, j = atom
    c = hist.centers[i, j]
    f = hist.face_value(atom, label)
    vf = var.face_value(cplx, atom, label)
    if label == "0+":
        return float((2.0 * k / h) * (f - c) * vf)
    if label == "0-":
        return float(-(2.0 * k / h) * (c - f) * vf)
    if label == "1+":
        return float(-(2.0 * h / k) * (f - c) * vf)
    if label == "1-":
        return float((2.0 * h / k) * (c - f) * vf)
    raise ValueError(f"unknown face label {label!r}")


def omega_form(model, hist, atom, label, var1, var2):
    """Symplectic two-form coefficient at the incidence, applied to a
    pair of variations; axis 0 carries +2k/h, axis 1 carries -2h/k."""
    cplx = hist.complex
    i, j = atom
    v1c = var1.centers[i, j]
    v2c = var2.centers[i, j]
    v1f = var1.face_value(cplx, atom, label)
    v2f = var2.face_value(cplx, atom, label)
    wedge = v1c * v2f - v2c * v1f
    if label[0] == "0":
        coef = 2.0 * cplx.k / cplx.h
    else:
        coef = -2.0 * cplx.h / cplx.k
    return float(coef * wedge)


def _solution_residuals(model, hist):
    ig = interior_residual_grid(model, hist)
    tg, sg = gluing_residual_grids(model, hist)
    return {
        "interior": float(np.max(np.abs(ig))) if ig.size else 0.0,
        "gluing_axis0": float(np.max(np.abs(tg))) if tg.size else 0.0,
        "gluing_axis1": float(np.max(np.abs(sg))) if sg.size else 0.0,
    }


def multisymplectic_defect(model, hist, var1, var2, *, require_solution=True,
                           solution_tol=1e-6):
    """Boundary sum of the two-form over all boundary incidences.

    Vanishes on solutions when both variations solve the linearized
    equations; refuses histories whose residuals exceed solution_tol.
    """
    if require_solution:
        res = _solution_residuals(model, hist)
        worst = max(res.values())
        if worst > solution_tol:
            raise NotASolutionError(
                f"history does not solve the field equations (max residual {worst:.3e})",
                residuals=res)
    total = 0.0
    for atom, label in boundary_incidences(hist.complex):
        total += omega_form(model, hist, atom, label, var1, var2)
    return float(total)


# ---------------------------------------------------------------------------
# reduced model


@dataclass
class ReducedScalar:
    """Reduced interior residuals, the plaquette-sum action, and the
    midpoint lift of the bulk data."""

    residuals: np.ndarray
    value: float
    lift: ScalarHistory

    def __float__(self):
        return float(self.value)


def reduce(model, cplx, bulk):
    """Center-only model: second differences across neighboring atoms
    and the plaquette lagrangian summed over complete plaquettes.

    The lift places midpoints on interior faces; its "complete" corner
    action reproduces the reduced action exactly.
    """
    bulk = np.asarray(bulk, dtype=float)
    if bulk.shape != (cplx.n0, cplx.n1):
        raise ValueError(f"bulk must have shape {(cplx.n0, cplx.n1)}")
    h, k = cplx.h, cplx.k
    nprime = model.nonlinearity.deriv(bulk)
    if cplx.n0 >= 3 and cplx.n1 >= 3:
        core = bulk[1:-1, 1:-1]
        d0 = bulk[2:, 1:-1] - 2.0 * core + bulk[:-2, 1:-1]
        d1 = bulk[1:-1, 2:] - 2.0 * core + bulk[1:-1, :-2]
        residuals = h * k * (-d0 / h ** 2 + d1 / k ** 2 + 4.0 * nprime[1:-1, 1:-1])
    else:
        residuals = np.zeros((max(cplx.n0 - 2, 0), max(cplx.n1 - 2, 0)))
    da = (bulk[1:, :] - bulk[:-1, :]) / (2.0 * h)
    db = (bulk[:, 1:] - bulk[:, :-1]) / (2.0 * k)
    nv = model.nonlinearity.value(bulk)
    if cplx.n0 >= 2 and cplx.n1 >= 2:
        p0 = da[:, :-1] ** 2 + da[:, 1:] ** 2
        p1 = db[:-1, :] ** 2 + db[1:, :] ** 2
        pn = nv[:-1, :-1] + nv[1:, :-1] + nv[:-1, 1:] + nv[1:, 1:]
        per_plaq = 4.0 * h * k * (0.5 * (p0 / 2.0 - p1 / 2.0) + 0.25 * pn)
        value = float(per_plaq.sum())
    else:
        value = 0.0
    lift = ScalarHistory.zeros(cplx)
    lift.centers[:, :] = bulk
    apply_glue(lift)
    lift.tfaces[0, :] = bulk[0, :]
    lift.tfaces[-1, :] = bulk[-1, :]
    lift.sfaces[:, 0] = bulk[:, 0]
    lift.sfaces[:, -1] = bulk[:, -1]
    return ReducedScalar(residuals=residuals, value=value, lift=lift)


# ---------------------------------------------------------------------------
# boundary-data model


def boundary_model_Lb(model, quads, h, k):
    """Single-atom model on boundary data alone.

    quads: (..., 4) arrays of per-atom face values in the column order
    (0+, 0-, 1+, 1-); the result sums the per-atom value
    [((q0p-q0m)/h)^2 - ((q1p-q1m)/k)^2 + N(mean)] * 4hk.
    """
    quads = np.atleast_2d(np.asarray(quads, dtype=float))
    if quads.shape[-1] != 4:
        raise ValueError("need four face values per atom")
    d0 = (quads[..., 0] - quads[..., 1]) / h
    d1 = (quads[..., 2] - quads[..., 3]) / k
    nmean = model.nonlinearity.value(quads.mean(axis=-1))
    return float(np.sum((d0 ** 2 - d1 ** 2 + nmean) * 4.0 * h * k))


# ---------------------------------------------------------------------------
# conserved slab data (value-shift symmetry when N = 0)


def slab_momentum(model, hist, m):
    """Signed flux through the isochronous slice of axis-0 faces at row
    m; constant in m on solutions with N = 0 up to the spatial edge
    flux."""
    cplx = hist.complex
    h, k = cplx.h, cplx.k
    if m == 0:
        return float(np.sum((2.0 * k / h) * (hist.centers[0, :] - hist.tfaces[0, :])))
    return float(np.sum((2.0 * k / h) * (hist.tfaces[m, :] - hist.centers[m - 1, :])))
