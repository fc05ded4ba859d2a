"""Matrix Lie groups used by the connection-type models.

Supported families: SO(N) with the real orthonormal basis
(E_ab - E_ba)/sqrt(2) under <A, B> = Tr(A^T B), and SU(N) with the basis
i lambda_a / 2 (Pauli for N = 2, generalized Gell-Mann above) under the
scaled pairing <A, B> = 2 Re Tr(A^dagger B).  Both bases are orthonormal
under their group's pairing; ``pairing_scale`` records the factor (1 or
2) between the raw trace pairing and the metric.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg


class BranchAmbiguityError(RuntimeError):
    """A matrix logarithm was requested too close to the branch cut."""


_BRANCH_MARGIN = 1.0 - 1e-6


class MatrixGroup:
    """Descriptor for one matrix group: basis, pairing, and the maps
    between group/algebra elements and coefficient vectors."""

    def __init__(self, tag: str, size: int, basis: np.ndarray, pairing_scale: float):
        self.tag = tag
        self.size = size
        self.basis = basis  # shape (dim, size, size)
        self.dim = basis.shape[0]
        self.pairing_scale = float(pairing_scale)
        self.dtype = basis.dtype

    def __repr__(self):
        return f"MatrixGroup({self.tag}({self.size}), dim={self.dim})"

    # -- basic elements ------------------------------------------------

    def identity(self) -> np.ndarray:
        return np.eye(self.size, dtype=self.dtype)

    def inv(self, g: np.ndarray) -> np.ndarray:
        # valid for group members only
        return np.ascontiguousarray(g.conj().T)

    def is_member(self, g: np.ndarray, tol: float = 1e-9) -> bool:
        if g.shape != (self.size, self.size):
            return False
        if not np.allclose(g.conj().T @ g, np.eye(self.size), atol=tol):
            return False
        det = np.linalg.det(g)
        return abs(det - 1.0) <= 10 * tol

    def project(self, g: np.ndarray) -> np.ndarray:
        """Nearest group member (polar decomposition, det fixed to +1)."""
        u, _, vh = np.linalg.svd(g)
        m = u @ vh
        det = np.linalg.det(m)
        if self.tag == "SO":
            if det.real < 0:
                u = u.copy()
                u[:, -1] = -u[:, -1]
                m = u @ vh
            return m.real
        # SU: divide out the residual determinant phase
        phase = det ** (1.0 / self.size)
        return m / phase

    # -- algebra <-> coefficients --------------------------------------

    def algebra_element(self, coeffs) -> np.ndarray:
        return np.tensordot(np.asarray(coeffs), self.basis, axes=(0, 0))

    def coefficients(self, xi: np.ndarray) -> np.ndarray:
        """Coefficients of an algebra element in the orthonormal basis."""
        out = np.array(
            [np.real(np.trace(f.conj().T @ xi)) for f in self.basis]
        )
        return self.pairing_scale * out

    def proj_algebra(self, m: np.ndarray) -> np.ndarray:
        """Antihermitian (traceless for SU) part of a matrix."""
        a = 0.5 * (m - m.conj().T)
        if self.tag == "SU":
            a = a - (np.trace(a) / self.size) * np.eye(self.size)
        return a

    def norm(self, xi: np.ndarray) -> float:
        return float(np.linalg.norm(self.coefficients(xi)))

    def bracket(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return x @ y - y @ x

    # -- pairings ------------------------------------------------------

    def theta_components(self, g: np.ndarray) -> np.ndarray:
        """Raw trace pairing theta_i = -Re Tr(f_i g).

        Equals the basis coefficients of the algebra part of g up to the
        group's pairing scale.
        """
        return np.array([-np.real(np.trace(f @ g)) for f in self.basis])

    # -- exp / log / powers --------------------------------------------

    def exp(self, xi: np.ndarray) -> np.ndarray:
        g = scipy.linalg.expm(xi)
        if self.tag == "SO":
            g = g.real
        return g

    def log(self, g: np.ndarray) -> np.ndarray:
        """Principal matrix logarithm of a group member.

        Raises :class:`BranchAmbiguityError` when an eigenvalue angle
        reaches pi (up to a small margin), where the principal branch is
        no longer well separated.
        """
        t, q = scipy.linalg.schur(np.asarray(g, dtype=complex), output="complex")
        ev = np.diag(t)
        angles = np.angle(ev)
        if np.max(np.abs(angles)) >= np.pi * _BRANCH_MARGIN:
            raise BranchAmbiguityError(
                f"eigenvalue angle {np.max(np.abs(angles)):.6f} too close to pi"
            )
        xi = q @ np.diag(1j * angles) @ q.conj().T
        if self.tag == "SO":
            xi = xi.real
        return self.proj_algebra(xi)

    def frac_power(self, g: np.ndarray, p: float) -> np.ndarray:
        return self.exp(p * self.log(g))

    # -- conjugation ---------------------------------------------------

    def adjoint_transport(self, g: np.ndarray, xi: np.ndarray,
                          inverse: bool = False) -> np.ndarray:
        """Ad_g(xi) = g xi g^{-1} (or Ad_{g^{-1}} with inverse=True)."""
        if inverse:
            return self.inv(g) @ xi @ g
        return g @ xi @ self.inv(g)

    # -- random draws --------------------------------------------------

    def random_algebra(self, rng: np.random.Generator, scale: float = 1.0) -> np.ndarray:
        return self.algebra_element(scale * rng.standard_normal(self.dim))

    def random(self, rng: np.random.Generator, scale: float = 1.0) -> np.ndarray:
        return self.exp(self.random_algebra(rng, scale))


def _so_basis(n: int) -> np.ndarray:
    basis = []
    inv_sqrt2 = 1.0 / np.sqrt(2.0)
    for a in range(n):
        for b in range(a + 1, n):
            f = np.zeros((n, n))
            f[a, b] = inv_sqrt2
            f[b, a] = -inv_sqrt2
            basis.append(f)
    return np.array(basis)


def _gellmann(n: int) -> np.ndarray:
    """Generalized Gell-Mann matrices, normalized to Tr(l_a l_b) = 2 d_ab."""
    mats = []
    for a in range(n):
        for b in range(a + 1, n):
            s = np.zeros((n, n), dtype=complex)
            s[a, b] = s[b, a] = 1.0
            mats.append(s)
            t = np.zeros((n, n), dtype=complex)
            t[a, b] = -1j
            t[b, a] = 1j
            mats.append(t)
    for l in range(1, n):
        d = np.zeros((n, n), dtype=complex)
        for j in range(l):
            d[j, j] = 1.0
        d[l, l] = -l
        d *= np.sqrt(2.0 / (l * (l + 1)))
        mats.append(d)
    return np.array(mats)


def so_group(n: int) -> MatrixGroup:
    if n < 2:
        raise ValueError("SO(N) needs N >= 2")
    return MatrixGroup("SO", n, _so_basis(n), pairing_scale=1.0)


def su_group(n: int) -> MatrixGroup:
    if n < 2:
        raise ValueError("SU(N) needs N >= 2")
    basis = 0.5j * _gellmann(n)
    return MatrixGroup("SU", n, basis, pairing_scale=2.0)
