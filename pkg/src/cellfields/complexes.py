"""Cellular decompositions of spacetime regions.

Three region types are provided:

* :class:`TimeComplex` -- a 1D chain of time atoms for discrete mechanics.
* :class:`CartesianComplex2D` -- a rectangular grid of 2D atoms for the
  scalar field models.
* :class:`CubicalComplexND` -- an n-dimensional cubical complex (n >= 2)
  carrying the link/wedge combinatorics used by the connection models.

Cells of the cubical complexes are identified by "doubled" integer
coordinates: the atom with index tuple (i_0, ..., i_{n-1}) has center
coordinate (2 i_0 + 1, ..., 2 i_{n-1} + 1).  A cell key with exactly one
even entry is a face center, one with exactly two even entries is a
codimension-2 cell (sigma).  This gives every cell a canonical hashable
identity shared between the atoms that contain it.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterator, NamedTuple


class Link(NamedTuple):
    """Interior link from an atom center to one of its face centers."""

    atom: tuple
    axis: int
    sign: int

    @property
    def face(self) -> tuple:
        c = list(self.atom)
        c[self.axis] += self.sign
        return tuple(c)


class RLink(NamedTuple):
    """Link from a face center to a codimension-2 cell center within the face.

    Keyed by the face alone (not the atom), so the same RLink is seen by
    both atoms sharing the face.
    """

    face: tuple
    axis: int
    sign: int

    @property
    def sigma(self) -> tuple:
        c = list(self.face)
        c[self.axis] += self.sign
        return tuple(c)


@dataclass(frozen=True)
class Wedge:
    """Oriented wedge: atom center, two interior links, two r-links.

    The boundary path runs Cnu -> Ctau1 (l1) -> Csigma (r1) -> Ctau2
    (r2 reversed) -> Cnu (l2 reversed).  ``axis1``/``sign1`` select the
    first route's face, ``axis2``/``sign2`` the second.  The canonical
    orientation has (axis1, sign1) < (axis2, sign2) lexicographically.
    """

    atom: tuple
    axis1: int
    sign1: int
    axis2: int
    sign2: int

    @property
    def l1(self) -> Link:
        return Link(self.atom, self.axis1, self.sign1)

    @property
    def l2(self) -> Link:
        return Link(self.atom, self.axis2, self.sign2)

    @property
    def sigma(self) -> tuple:
        c = list(self.atom)
        c[self.axis1] += self.sign1
        c[self.axis2] += self.sign2
        return tuple(c)

    @property
    def r1(self) -> RLink:
        return RLink(self.l1.face, self.axis2, self.sign2)

    @property
    def r2(self) -> RLink:
        return RLink(self.l2.face, self.axis1, self.sign1)

    @property
    def is_canonical(self) -> bool:
        return (self.axis1, self.sign1) < (self.axis2, self.sign2)

    def reverse(self) -> "Wedge":
        return Wedge(self.atom, self.axis2, self.sign2, self.axis1, self.sign1)

    def canonical(self) -> "Wedge":
        return self if self.is_canonical else self.reverse()

    @property
    def key(self) -> tuple:
        """Orientation-independent identity (atom, sigma)."""
        return (self.atom, self.sigma)


class TimeComplex:
    """Chain of ``n_atoms`` time atoms with marker spacing ``lapse``.

    Atom ``nu`` (1-based) spans markers nu- , Cnu , nu+ at times
    2a(nu-1), a(2nu-1), 2a nu.  Marker nu+ is identified with (nu+1)-;
    the shared markers are indexed 0..n (0 is 1-, n is n+), centers 1..n.
    """

    def __init__(self, n_atoms: int, lapse: float):
        if n_atoms < 1:
            raise ValueError("need at least one atom")
        if lapse <= 0:
            raise ValueError("lapse must be positive")
        self.n_atoms = int(n_atoms)
        self.lapse = float(lapse)

    def atoms(self) -> range:
        return range(1, self.n_atoms + 1)

    def marker_time(self, index: int) -> float:
        # shared marker index 0..n_atoms
        return 2.0 * self.lapse * index

    def center_time(self, nu: int) -> float:
        return self.lapse * (2 * nu - 1)

    @property
    def total_time(self) -> float:
        return 2.0 * self.lapse * self.n_atoms

    def decimation_points(self) -> list:
        """All 2n+1 decimation points as (kind, index, time), time ordered."""
        pts = []
        for nu in self.atoms():
            pts.append(("marker", nu - 1, self.marker_time(nu - 1)))
            pts.append(("center", nu, self.center_time(nu)))
        pts.append(("marker", self.n_atoms, self.marker_time(self.n_atoms)))
        return pts

    def boundary(self) -> list:
        """Oriented boundary of the region: [(-1, first marker), (+1, last)]."""
        return [(-1, 0), (+1, self.n_atoms)]


def build_time_complex(n_atoms: int, lapse: float) -> TimeComplex:
    return TimeComplex(n_atoms, lapse)


class CartesianComplex2D:
    """n0 x n1 grid of rectangular atoms with half-extents (h, k).

    Atom (i, j) has center at ((2i+1)h, (2j+1)k); its four faces sit at
    offsets (+-h, 0) and (0, +-k), labelled "0+", "0-", "1+", "1-".
    Face values are shared between neighboring atoms.
    """

    FACE_LABELS = ("0+", "0-", "1+", "1-")

    def __init__(self, n0: int, n1: int, h: float, k: float):
        if n0 < 1 or n1 < 1:
            raise ValueError("grid must contain at least one atom per axis")
        if h <= 0 or k <= 0:
            raise ValueError("spacings must be positive")
        self.n0 = int(n0)
        self.n1 = int(n1)
        self.h = float(h)
        self.k = float(k)

    def atoms(self) -> Iterator[tuple]:
        return itertools.product(range(self.n0), range(self.n1))

    @property
    def n_atoms(self) -> int:
        return self.n0 * self.n1

    def atom_center(self, atom: tuple) -> tuple:
        i, j = atom
        return ((2 * i + 1) * self.h, (2 * j + 1) * self.k)

    def face_key(self, atom: tuple, label: str) -> tuple:
        """Doubled-coordinate key of the labelled face of ``atom``."""
        i, j = atom
        c = [2 * i + 1, 2 * j + 1]
        axis = int(label[0])
        sign = 1 if label[1] == "+" else -1
        c[axis] += sign
        return tuple(c)

    def atom_faces(self, atom: tuple) -> list:
        return [(lbl, self.face_key(atom, lbl)) for lbl in self.FACE_LABELS]

    def face_axis(self, face: tuple) -> int:
        return 0 if face[0] % 2 == 0 else 1

    def is_interior_face(self, face: tuple) -> bool:
        axis = self.face_axis(face)
        n = (self.n0, self.n1)[axis]
        return 0 < face[axis] < 2 * n

    def face_atoms(self, face: tuple) -> tuple:
        """(atom on the - side, atom on the + side); None outside the grid."""
        axis = self.face_axis(face)
        lo = list(face)
        hi = list(face)
        lo[axis] -= 1
        hi[axis] += 1
        def to_atom(c):
            i, j = (c[0] - 1) // 2, (c[1] - 1) // 2
            if 0 <= i < self.n0 and 0 <= j < self.n1:
                return (i, j)
            return None
        return (to_atom(lo), to_atom(hi))

    def interior_faces(self) -> list:
        out = []
        for i, j in self.atoms():
            if i + 1 < self.n0:
                out.append(self.face_key((i, j), "0+"))
            if j + 1 < self.n1:
                out.append(self.face_key((i, j), "1+"))
        return out

    def boundary_faces(self) -> list:
        out = []
        for j in range(self.n1):
            out.append(self.face_key((0, j), "0-"))
            out.append(self.face_key((self.n0 - 1, j), "0+"))
        for i in range(self.n0):
            out.append(self.face_key((i, 0), "1-"))
            out.append(self.face_key((i, self.n1 - 1), "1+"))
        return out


def build_cartesian_2d(n0: int, n1: int, h: float, k: float) -> CartesianComplex2D:
    return CartesianComplex2D(n0, n1, h, k)


class CubicalComplexND:
    """Cubical complex with ``dims[i]`` atoms along axis i (n = len(dims) >= 2).

    Provides the link / r-link / wedge combinatorics: each atom carries 2n
    interior links, each face 2(n-1) r-links, and each (link, adjacent
    sigma) pair one oriented wedge, i.e. 4n(n-1) oriented wedges per atom
    of which 2n(n-1) are canonically oriented.
    """

    def __init__(self, dims):
        dims = tuple(int(d) for d in dims)
        if len(dims) < 2:
            raise ValueError("need at least two axes")
        if any(d < 1 for d in dims):
            raise ValueError("each axis needs at least one atom")
        self.dims = dims
        self.n = len(dims)

    # -- cells ---------------------------------------------------------

    def atoms(self) -> Iterator[tuple]:
        for idx in itertools.product(*(range(d) for d in self.dims)):
            yield tuple(2 * i + 1 for i in idx)

    @property
    def n_atoms(self) -> int:
        out = 1
        for d in self.dims:
            out *= d
        return out

    def codim(self, cell: tuple) -> int:
        return sum(1 for c in cell if c % 2 == 0)

    def in_region(self, cell: tuple) -> bool:
        return all(0 <= c <= 2 * d for c, d in zip(cell, self.dims))

    def on_region_boundary(self, cell: tuple) -> bool:
        return any(c == 0 or c == 2 * d for c, d in zip(cell, self.dims))

    # -- links ---------------------------------------------------------

    def links(self, atom: tuple) -> list:
        return [Link(atom, a, s) for a in range(self.n) for s in (+1, -1)]

    def all_links(self) -> list:
        return [l for nu in self.atoms() for l in self.links(nu)]

    def face_rlinks(self, face: tuple) -> list:
        axis = next(i for i, c in enumerate(face) if c % 2 == 0)
        return [RLink(face, b, s)
                for b in range(self.n) if b != axis
                for s in (+1, -1)]

    def all_faces(self) -> list:
        seen = []
        found = set()
        for nu in self.atoms():
            for l in self.links(nu):
                f = l.face
                if f not in found:
                    found.add(f)
                    seen.append(f)
        return seen

    def interior_faces(self) -> list:
        return [f for f in self.all_faces() if not self.on_region_boundary(f)]

    def all_rlinks(self) -> list:
        return [r for f in self.all_faces() for r in self.face_rlinks(f)]

    def face_atoms(self, face: tuple) -> tuple:
        axis = next(i for i, c in enumerate(face) if c % 2 == 0)
        lo = list(face)
        hi = list(face)
        lo[axis] -= 1
        hi[axis] += 1
        lo, hi = tuple(lo), tuple(hi)
        return (lo if self.in_region(lo) else None,
                hi if self.in_region(hi) else None)

    # -- wedges --------------------------------------------------------

    def atom_wedges(self, atom: tuple, oriented: bool = True) -> list:
        """Wedges of one atom; oriented (both orientations) by default."""
        out = []
        for a1, a2 in itertools.combinations(range(self.n), 2):
            for s1, s2 in itertools.product((+1, -1), repeat=2):
                w = Wedge(atom, a1, s1, a2, s2)
                out.append(w)
                if oriented:
                    out.append(w.reverse())
        return out

    def wedges_at_link(self, link: Link) -> list:
        """Oriented wedges whose first route runs through ``link``."""
        out = []
        for b in range(self.n):
            if b == link.axis:
                continue
            for s in (+1, -1):
                out.append(Wedge(link.atom, link.axis, link.sign, b, s))
        return out

    def sigma_atoms(self, sigma: tuple) -> list:
        axes = [i for i, c in enumerate(sigma) if c % 2 == 0]
        out = []
        for s1, s2 in itertools.product((+1, -1), repeat=2):
            c = list(sigma)
            c[axes[0]] += s1
            c[axes[1]] += s2
            c = tuple(c)
            if self.in_region(c):
                out.append(c)
        return out

    def wedges_at_sigma(self, sigma: tuple) -> list:
        """One canonically oriented wedge per atom containing ``sigma``."""
        axes = [i for i, c in enumerate(sigma) if c % 2 == 0]
        out = []
        for nu in self.sigma_atoms(sigma):
            s1 = sigma[axes[0]] - nu[axes[0]]
            s2 = sigma[axes[1]] - nu[axes[1]]
            out.append(Wedge(nu, axes[0], s1, axes[1], s2))
        return out

    def all_sigmas(self) -> list:
        found = set()
        out = []
        for nu in self.atoms():
            for w in self.atom_wedges(nu, oriented=False):
                s = w.sigma
                if s not in found:
                    found.add(s)
                    out.append(s)
        return out

    def interior_sigmas(self) -> list:
        return [s for s in self.all_sigmas() if not self.on_region_boundary(s)]

    def sigma_wedge_cycle(self, sigma: tuple) -> list:
        """Wedges around an interior sigma, oriented so that consecutive
        wedges share an r-link as (r-last of one, r-first of the next) and
        the ordered holonomy product telescopes to the dual-cell loop.
        """
        if self.on_region_boundary(sigma):
            raise ValueError("sigma lies on the region boundary")
        atoms = self.sigma_atoms(sigma)
        start = self.wedges_at_sigma(sigma)[0]
        cycle = [start]
        while len(cycle) < len(atoms):
            prev = cycle[-1]
            tau1 = prev.l1.face
            pair = self.face_atoms(tau1)
            nxt_atom = pair[0] if pair[1] == prev.atom else pair[1]
            # next wedge in nxt_atom, oriented with its r2 equal to prev.r1
            a2 = prev.axis1
            s2 = sigma[a2] - nxt_atom[a2]
            a1 = prev.axis2
            s1 = sigma[a1] - nxt_atom[a1]
            cycle.append(Wedge(nxt_atom, a1, s1, a2, s2))
        # closure: the first wedge's r2 must be the last wedge's r1
        if cycle[0].r2 != cycle[-1].r1:
            raise AssertionError("wedge cycle failed to close")
        return cycle


def build_cubical(dims) -> CubicalComplexND:
    return CubicalComplexND(dims)
