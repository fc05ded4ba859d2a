"""Decimation between scales, continuum-limit diagnostics, and the
corrected action.

A scale pair records how each coarse decimation slot reads off the fine
history: point values are selected at coinciding decimation points, and
group elements are composed along the fine path that a coarse link or
r-link decomposes into. Refinement factors must be odd wherever a
coarse cell has to land on a fine cell of the same kind (2D grids and
cubical complexes); the 1D chain also admits even factors, where coarse
centers fall on fine shared markers instead of fine centers.

The convergence harness decimates a closed-form smooth section and
variation to a sequence of scales and compares the discrete bulk and
boundary pairings of the first variation against the continuum values,
which are computed by adaptive quadrature of the supplied callbacks,
never tabulated here. The corrected action evaluates the fine action
at the constrained stationary point whose decimation reproduces the
given coarse data. For mechanics that point is a minimizer away from
conjugate points; the wave kinetic term is indefinite, so stationarity
rather than minimality is what the 2D branch certifies.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.integrate import dblquad, quad
from scipy.interpolate import RegularGridInterpolator

from . import mech1d, scalar2d
from ._newton import SolverFailure, newton_solve
from .complexes import (
    CartesianComplex2D,
    CubicalComplexND,
    Link,
    RLink,
    TimeComplex,
)
from .gauge import GaugeHistory

__all__ = [
    "ScalePair",
    "refine_time",
    "refine_grid",
    "refine_cubical",
    "compose",
    "decimate",
    "link_path",
    "rlink_path",
    "ParticleSection",
    "RigidSection",
    "WaveSection",
    "sample_particle",
    "sample_rigid",
    "sample_wave",
    "ConvergenceRow",
    "ConvergenceTable",
    "continuum_convergence",
    "corrected_action",
]


# ---------------------------------------------------------------------------
# scale pairs


@dataclass(frozen=True)
class ScalePair:
    """Coarse and fine complexes plus the per-axis refinement factors.

    The correspondence itself needs no stored table: with doubled
    coordinates the distinguished fine cell of a coarse cell is the
    componentwise product with the factors, and odd factors preserve
    the parity signature, so atoms map to atoms and faces to faces."""

    kind: str  # "time" | "grid" | "cubical"
    coarse: object
    fine: object
    factors: tuple


def refine_time(coarse: TimeComplex, factor: int) -> ScalePair:
    factor = int(factor)
    if factor < 1:
        raise ValueError("refinement factor must be at least 1")
    fine = TimeComplex(coarse.n_atoms * factor, coarse.lapse / factor)
    return ScalePair("time", coarse, fine, (factor,))


def refine_grid(coarse: CartesianComplex2D, factors) -> ScalePair:
    f0, f1 = (int(f) for f in factors)
    if f0 < 1 or f1 < 1 or f0 % 2 == 0 or f1 % 2 == 0:
        raise ValueError("grid refinement factors must be odd and positive")
    fine = CartesianComplex2D(coarse.n0 * f0, coarse.n1 * f1,
                              coarse.h / f0, coarse.k / f1)
    return ScalePair("grid", coarse, fine, (f0, f1))


def refine_cubical(coarse: CubicalComplexND, factors) -> ScalePair:
    factors = tuple(int(f) for f in factors)
    if len(factors) != coarse.n:
        raise ValueError("need one refinement factor per axis")
    if any(f < 1 or f % 2 == 0 for f in factors):
        raise ValueError("cubical refinement factors must be odd and positive")
    fine = CubicalComplexND(tuple(d * f for d, f in zip(coarse.dims, factors)))
    return ScalePair("cubical", coarse, fine, factors)


def _same_complex(a, b) -> bool:
    if isinstance(a, TimeComplex) and isinstance(b, TimeComplex):
        return a.n_atoms == b.n_atoms and abs(a.lapse - b.lapse) <= 1e-12 * a.lapse
    if isinstance(a, CartesianComplex2D) and isinstance(b, CartesianComplex2D):
        return ((a.n0, a.n1) == (b.n0, b.n1)
                and abs(a.h - b.h) <= 1e-12 * a.h
                and abs(a.k - b.k) <= 1e-12 * a.k)
    if isinstance(a, CubicalComplexND) and isinstance(b, CubicalComplexND):
        return a.dims == b.dims
    return False


def compose(outer: ScalePair, inner: ScalePair) -> ScalePair:
    """Pair decimating straight past the intermediate scale: ``outer``
    runs coarse -> mid, ``inner`` runs mid -> fine."""
    if outer.kind != inner.kind or not _same_complex(outer.fine, inner.coarse):
        raise ValueError("intermediate scales do not match")
    factors = tuple(a * b for a, b in zip(outer.factors, inner.factors))
    return ScalePair(outer.kind, outer.coarse, inner.fine, factors)


# ---------------------------------------------------------------------------
# decimation


def _time_center_slot(pair: ScalePair, nu: int):
    """Fine decimation slot under the coarse center of atom nu (1-based)."""
    rho = pair.factors[0]
    pos = rho * (2 * nu - 1)  # position in units of the fine lapse
    if pos % 2:
        return ("center", (pos + 1) // 2)
    return ("marker", pos // 2)


def _decimate_particle(pair, hist):
    rho = pair.factors[0]
    n = pair.coarse.n_atoms
    qb = np.stack([hist.qb[rho * i] for i in range(n + 1)])
    rows = []
    for nu in range(1, n + 1):
        kind, j = _time_center_slot(pair, nu)
        rows.append(hist.qc[j - 1] if kind == "center" else hist.qb[j])
    return mech1d.ParticleHistory(pair.coarse, qb, np.stack(rows))


def _grid_maps(pair):
    """Index selections into the fine grids for the coarse slots."""
    f0, f1 = pair.factors
    c0, c1 = (f0 - 1) // 2, (f1 - 1) // 2
    n0, n1 = pair.coarse.n0, pair.coarse.n1
    centers = np.ix_(f0 * np.arange(n0) + c0, f1 * np.arange(n1) + c1)
    tfaces = np.ix_(f0 * np.arange(n0 + 1), f1 * np.arange(n1) + c1)
    sfaces = np.ix_(f0 * np.arange(n0) + c0, f1 * np.arange(n1 + 1))
    return centers, tfaces, sfaces


def _decimate_scalar(pair, hist):
    cm, tm, sm = _grid_maps(pair)
    return scalar2d.ScalarHistory(pair.coarse, hist.centers[cm].copy(),
                                  hist.tfaces[tm].copy(),
                                  hist.sfaces[sm].copy())


def _scaled_cell(pair, cell) -> tuple:
    return tuple(c * f for c, f in zip(cell, pair.factors))


def link_path(pair: ScalePair, link: Link) -> list:
    """Ordered fine moves composing a coarse link, as (fine link, exponent).

    The walk from the fine image of the coarse atom to the fine image of
    the coarse face alternates atom-to-face steps along the link
    direction with face-to-atom steps against it, so the exponents
    alternate +1, -1 and the +1 count exceeds the -1 count by one."""
    d, s = link.axis, link.sign
    target = _scaled_cell(pair, link.face)
    moves = []
    x = list(_scaled_cell(pair, link.atom))
    while True:
        moves.append((Link(tuple(x), d, s), +1))
        x[d] += s
        if tuple(x) == target:
            return moves
        x[d] += s
        moves.append((Link(tuple(x), d, -s), -1))


def rlink_path(pair: ScalePair, r: RLink) -> list:
    """Ordered fine moves composing a coarse r-link, as (fine r-link, exponent)."""
    b, s = r.axis, r.sign
    target = _scaled_cell(pair, r.sigma)
    moves = []
    x = list(_scaled_cell(pair, r.face))
    while True:
        moves.append((RLink(tuple(x), b, s), +1))
        x[b] += s
        if tuple(x) == target:
            return moves
        x[b] += s
        moves.append((RLink(tuple(x), b, -s), -1))


def _path_product(group, table, moves):
    g = group.identity()
    for key, expo in moves:
        m = table[key]
        if expo < 0:
            m = group.inv(m)
        g = m @ g  # first move acts first, so it sits rightmost
    return g


def _decimate_gauge(pair, hist):
    G = hist.group
    cplx = pair.coarse
    h = {l: _path_product(G, hist.h, link_path(pair, l))
         for l in cplx.all_links()}
    k = {r: _path_product(G, hist.k, rlink_path(pair, r))
         for r in cplx.all_rlinks()}
    return GaugeHistory(cplx, G, h, k, check=False)


def decimate(pair: ScalePair, fine_history):
    """Read the coarse history off the fine one through the scale pair."""
    if not _same_complex(pair.fine, fine_history.complex):
        raise ValueError("fine history does not live on the pair's fine scale")
    if pair.kind == "time":
        if isinstance(fine_history, mech1d.ParticleHistory):
            return _decimate_particle(pair, fine_history)
        raise TypeError("time decimation expects a particle history")
    if pair.kind == "grid":
        if isinstance(fine_history, scalar2d.ScalarHistory):
            return _decimate_scalar(pair, fine_history)
        raise TypeError("grid decimation expects a scalar history")
    if not (hasattr(fine_history, "h") and hasattr(fine_history, "k")):
        raise TypeError("cubical decimation expects link and r-link tables")
    return _decimate_gauge(pair, fine_history)


# ---------------------------------------------------------------------------
# continuum sections and their per-scale samples


@dataclass
class ParticleSection:
    """Closed-form path q(t) with derivatives and a variation v(t)."""

    q: object
    qdot: object
    qddot: object
    v: object
    total_time: float


@dataclass
class RigidSection:
    """Rotation path with body angular velocity in algebra coefficients
    and a right-chart variation eta(t) (dq = q alg(eta))."""

    q: object        # t -> group matrix
    omega: object    # t -> coefficients of q^-1 qdot
    omegadot: object
    eta: object      # t -> coefficient vector
    total_time: float


@dataclass
class WaveSection:
    """Field phi(x0, x1) with first and second partials and a variation;
    all callbacks vectorized over broadcast grids."""

    phi: object
    phi_t: object
    phi_x: object
    phi_tt: object
    phi_xx: object
    v: object
    extent: tuple  # (X0, X1)


def _point(fn, t):
    return np.atleast_1d(np.asarray(fn(t), dtype=float))


def sample_particle(section: ParticleSection, cplx: TimeComplex):
    tb = [cplx.marker_time(i) for i in range(cplx.n_atoms + 1)]
    tc = [cplx.center_time(nu) for nu in cplx.atoms()]
    hist = mech1d.ParticleHistory(
        cplx,
        np.stack([_point(section.q, t) for t in tb]),
        np.stack([_point(section.q, t) for t in tc]))
    var = mech1d.ParticleVariation(
        np.stack([_point(section.v, t) for t in tb]),
        np.stack([_point(section.v, t) for t in tc]))
    return hist, var


def sample_rigid(model, section: RigidSection, cplx: TimeComplex):
    n = cplx.n_atoms
    a = cplx.lapse
    qb = np.stack([section.q(cplx.marker_time(i)) for i in range(n + 1)])
    qc = np.stack([section.q(cplx.center_time(nu)) for nu in cplx.atoms()])
    # half-atom wedge momenta slaved to the sampled rotations; the wedge
    # residual blocks then vanish identically and a zero (dem, dep) pair
    # loses nothing from the first variation
    em = np.stack([mech1d._slaved_e(model, qb[i].T @ qc[i], a)
                   for i in range(n)])
    ep = np.stack([mech1d._slaved_e(model, qc[i].T @ qb[i + 1], a)
                   for i in range(n)])
    hist = mech1d.RigidHistory(cplx, qb, qc, em, ep)
    dim = model.group.dim
    var = mech1d.RigidVariation(
        np.stack([_point(section.eta, cplx.marker_time(i))
                  for i in range(n + 1)]),
        np.stack([_point(section.eta, cplx.center_time(nu))
                  for nu in cplx.atoms()]),
        np.zeros((n, dim)),
        np.zeros((n, dim)))
    return hist, var


def _sample_grid(cplx, fn):
    h, k = cplx.h, cplx.k
    x0c = (2.0 * np.arange(cplx.n0) + 1.0) * h
    x1c = (2.0 * np.arange(cplx.n1) + 1.0) * k
    x0t = 2.0 * np.arange(cplx.n0 + 1) * h
    x1s = 2.0 * np.arange(cplx.n1 + 1) * k
    return (np.asarray(fn(x0c[:, None], x1c[None, :]), dtype=float),
            np.asarray(fn(x0t[:, None], x1c[None, :]), dtype=float),
            np.asarray(fn(x0c[:, None], x1s[None, :]), dtype=float))


def sample_wave(section: WaveSection, cplx: CartesianComplex2D):
    hist = scalar2d.ScalarHistory(cplx, *_sample_grid(cplx, section.phi))
    var = scalar2d.ScalarVariation(*_sample_grid(cplx, section.v))
    return hist, var


# ---------------------------------------------------------------------------
# convergence harness


@dataclass
class ConvergenceRow:
    scale: float
    bulk: float
    boundary: float
    bulk_defect: float
    boundary_defect: float


@dataclass
class ConvergenceTable:
    rows: list
    bulk_continuum: float
    boundary_continuum: float
    bulk_order: float
    boundary_order: float


def _fit_order(scales, defects, reference):
    """Least-squares slope of log defect against log scale.

    Defects at round-off relative to the reference are dropped; if
    fewer than two informative points remain the data is consistent
    with exact agreement and the order is reported as inf."""
    floor = 1e-13 * max(1.0, abs(reference))
    pts = [(s, d) for s, d in zip(scales, defects) if d > floor]
    if len(pts) < 2:
        return float("inf")
    logs = np.log([s for s, _ in pts])
    logd = np.log([d for _, d in pts])
    return float(np.polyfit(logs, logd, 1)[0])


def _quad(fn, lo, hi, tol):
    value, _ = quad(fn, lo, hi, epsabs=tol, epsrel=tol, limit=200)
    return value


def _particle_continuum(model, section, tol):
    d = _point(section.q, 0.0).shape[0]
    g = model.metric_matrix(d)
    m = model.mass

    def bulk_integrand(t):
        force = -m * (g @ _point(section.qddot, t)) \
            - model.potential.grad(_point(section.q, t))
        return float(force @ _point(section.v, t))

    def pairing(t):
        return float((m * (g @ _point(section.qdot, t))) @ _point(section.v, t))

    T = section.total_time
    return _quad(bulk_integrand, 0.0, T, tol), pairing(T) - pairing(0.0)


def _rigid_continuum(model, section, tol):
    G = model.group
    inertia = model.inertia

    def bulk_integrand(t):
        om = _point(section.omega, t)
        eta = _point(section.eta, t)
        br = G.coefficients(G.bracket(G.algebra_element(om),
                                      G.algebra_element(eta)))
        return float(-(inertia * _point(section.omegadot, t)) @ eta
                     + (inertia * om) @ br)

    def pairing(t):
        return float((inertia * _point(section.omega, t))
                     @ _point(section.eta, t))

    T = section.total_time
    return _quad(bulk_integrand, 0.0, T, tol), pairing(T) - pairing(0.0)


def _wave_continuum(model, section, tol):
    X0, X1 = section.extent
    nprime = model.nonlinearity.deriv

    def bulk_integrand(x1, x0):
        return float((-section.phi_tt(x0, x1) + section.phi_xx(x0, x1)
                      + nprime(section.phi(x0, x1))) * section.v(x0, x1))

    bulk, _ = dblquad(bulk_integrand, 0.0, X0, 0.0, X1, epsabs=tol, epsrel=tol)
    boundary = (
        _quad(lambda x1: section.phi_t(X0, x1) * section.v(X0, x1), 0.0, X1, tol)
        - _quad(lambda x1: section.phi_t(0.0, x1) * section.v(0.0, x1), 0.0, X1, tol)
        + _quad(lambda x0: section.phi_x(x0, 0.0) * section.v(x0, 0.0), 0.0, X0, tol)
        - _quad(lambda x0: section.phi_x(x0, X1) * section.v(x0, X1), 0.0, X0, tol)
    )
    return bulk, boundary


def continuum_convergence(model, section, scales, *, threads=1,
                          quad_tol=1e-11) -> ConvergenceTable:
    """Discrete bulk and boundary pairings of the decimated section
    against quadrature values, with fitted convergence orders.

    ``scales`` lists atom counts (1D sections) or grid sizes, either
    ints for square grids or (n0, n1) pairs (wave sections); the row
    scale column holds the lapse or the larger grid spacing."""
    if isinstance(section, ParticleSection):
        bulk_c, bdry_c = _particle_continuum(model, section, quad_tol)

        def one(n):
            cplx = TimeComplex(int(n), section.total_time / (2 * int(n)))
            hist, var = sample_particle(section, cplx)
            blocks = mech1d.dS(model, hist, var)
            return cplx.lapse, blocks.bulk, blocks.boundary
    elif isinstance(section, RigidSection):
        bulk_c, bdry_c = _rigid_continuum(model, section, quad_tol)

        def one(n):
            cplx = TimeComplex(int(n), section.total_time / (2 * int(n)))
            hist, var = sample_rigid(model, section, cplx)
            blocks = mech1d.dS(model, hist, var)
            return cplx.lapse, blocks.bulk, blocks.boundary
    elif isinstance(section, WaveSection):
        bulk_c, bdry_c = _wave_continuum(model, section, quad_tol)
        X0, X1 = section.extent

        def one(dims):
            n0, n1 = (int(dims), int(dims)) if np.isscalar(dims) else dims
            cplx = CartesianComplex2D(n0, n1, X0 / (2 * n0), X1 / (2 * n1))
            hist, var = sample_wave(section, cplx)
            blocks = scalar2d.dS(model, hist, var)
            return max(cplx.h, cplx.k), blocks.bulk, blocks.boundary
    else:
        raise TypeError(f"unsupported section type {type(section).__name__}")

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            samples = list(pool.map(one, scales))
    else:
        samples = [one(s) for s in scales]

    rows = [ConvergenceRow(scale, bulk, boundary,
                           abs(bulk - bulk_c), abs(boundary - bdry_c))
            for scale, bulk, boundary in samples]
    scale_col = [r.scale for r in rows]
    return ConvergenceTable(
        rows, bulk_c, bdry_c,
        _fit_order(scale_col, [r.bulk_defect for r in rows], bulk_c),
        _fit_order(scale_col, [r.boundary_defect for r in rows], bdry_c))


# ---------------------------------------------------------------------------
# corrected action


def _particle_pins(pair, coarse_hist, pinned):
    """Pinned fine slots as ({marker index: value}, {center index: value})."""
    rho = pair.factors[0]
    n = pair.coarse.n_atoms
    markers = {0: coarse_hist.qb[0], rho * n: coarse_hist.qb[n]}
    centers = {}
    if pinned == "decimation":
        for i in range(1, n):
            markers[rho * i] = coarse_hist.qb[i]
        for nu in range(1, n + 1):
            kind, j = _time_center_slot(pair, nu)
            if kind == "center":
                centers[j - 1] = coarse_hist.qc[nu - 1]
            else:
                markers[j] = coarse_hist.qc[nu - 1]
    elif pinned != "boundary":
        raise ValueError("pinned must be 'decimation' or 'boundary'")
    return markers, centers


def _corrected_particle(pair, coarse_hist, model, pinned, tol, max_iter,
                        jitter=None):
    fine = pair.fine
    n = fine.n_atoms
    d = coarse_hist.dim
    markers, centers = _particle_pins(pair, coarse_hist, pinned)

    # seed: interpolate through the pinned slots in time; np.interp
    # returns a knot's own value at the knot, so the pins hold exactly
    t_pin = [fine.marker_time(i) for i in markers]
    v_pin = list(markers.values())
    t_pin += [fine.center_time(j + 1) for j in centers]
    v_pin += list(centers.values())
    order = np.argsort(t_pin)
    t_pin = np.asarray(t_pin, dtype=float)[order]
    v_pin = np.stack(v_pin)[order]
    tb = np.array([fine.marker_time(i) for i in range(n + 1)])
    tc = np.array([fine.center_time(nu) for nu in fine.atoms()])
    qb = np.column_stack([np.interp(tb, t_pin, v_pin[:, c]) for c in range(d)])
    qc = np.column_stack([np.interp(tc, t_pin, v_pin[:, c]) for c in range(d)])
    hist = mech1d.ParticleHistory(fine, qb, qc)

    # stationarity over the free slots of the packed layout; endpoint
    # markers sit outside the layout and stay pinned for free
    free = np.ones(n * d + (n - 1) * d, dtype=bool)
    for j in centers:
        free[j * d:(j + 1) * d] = False
    for i in markers:
        if 1 <= i <= n - 1:
            free[n * d + (i - 1) * d: n * d + i * d] = False

    base = mech1d._particle_pack(hist)

    def unpack(x):
        full = base.copy()
        full[free] = x
        return mech1d._particle_unpack(hist, full)

    def residual(x):
        interior, gluing, _, _ = mech1d._particle_blocks(model, unpack(x))
        return np.concatenate([interior.ravel(), gluing.ravel()])[free]

    def jacobian(x):
        J = mech1d._particle_jacobian(model, unpack(x))
        return J[np.ix_(free, free)]

    x0 = base[free]
    if jitter is not None:
        x0 = x0 + jitter.normal(scale=0.5, size=x0.shape)
    x, _ = newton_solve(x0, residual, jacobian, lambda x, dx: x + dx,
                        tol=tol, max_iter=max_iter)
    return unpack(x)


def _scalar_pin_masks(pair, pinned):
    fine = pair.fine
    cmask = np.zeros((fine.n0, fine.n1), dtype=bool)
    tmask = np.zeros((fine.n0 + 1, fine.n1), dtype=bool)
    smask = np.zeros((fine.n0, fine.n1 + 1), dtype=bool)
    cm, tm, sm = _grid_maps(pair)
    if pinned == "decimation":
        cmask[cm] = True
        tmask[tm] = True
        smask[sm] = True
    elif pinned == "boundary":
        tsel = np.zeros_like(tmask)
        tsel[tm] = True
        tmask[0, :] = tsel[0, :]
        tmask[-1, :] = tsel[-1, :]
        ssel = np.zeros_like(smask)
        ssel[sm] = True
        smask[:, 0] = ssel[:, 0]
        smask[:, -1] = ssel[:, -1]
    else:
        raise ValueError("pinned must be 'decimation' or 'boundary'")
    return cmask, tmask, smask


def _corrected_scalar(pair, coarse_hist, model, pinned, tol, max_iter,
                      jitter=None):
    fine = pair.fine
    cmask, tmask, smask = _scalar_pin_masks(pair, pinned)
    cm, tm, sm = _grid_maps(pair)

    # seed the fine grids from a surface through the coarse centers
    cc = pair.coarse
    x0c = (2.0 * np.arange(cc.n0) + 1.0) * cc.h
    x1c = (2.0 * np.arange(cc.n1) + 1.0) * cc.k
    method = "linear" if cc.n0 > 1 and cc.n1 > 1 else "nearest"
    interp = RegularGridInterpolator((x0c, x1c), coarse_hist.centers,
                                     method=method, bounds_error=False,
                                     fill_value=None)

    def surface(x0, x1):
        return interp(np.stack(np.broadcast_arrays(x0, x1), axis=-1))

    hist = scalar2d.ScalarHistory(fine, *_sample_grid(fine, surface))
    hist.centers[cm] = coarse_hist.centers
    if pinned == "decimation":
        hist.tfaces[tm] = coarse_hist.tfaces
        hist.sfaces[sm] = coarse_hist.sfaces
    else:
        hist.tfaces[0, :][tmask[0, :]] = coarse_hist.tfaces[0, :]
        hist.tfaces[-1, :][tmask[-1, :]] = coarse_hist.tfaces[-1, :]
        hist.sfaces[:, 0][smask[:, 0]] = coarse_hist.sfaces[:, 0]
        hist.sfaces[:, -1][smask[:, -1]] = coarse_hist.sfaces[:, -1]

    free_slots = [("c", i, j)
                  for i in range(fine.n0) for j in range(fine.n1)
                  if not cmask[i, j]]
    free_slots += [("t", i, j)
                   for i in range(fine.n0 + 1) for j in range(fine.n1)
                   if not tmask[i, j]]
    free_slots += [("s", i, j)
                   for i in range(fine.n0) for j in range(fine.n1 + 1)
                   if not smask[i, j]]

    def grids(h, kind):
        return {"c": h.centers, "t": h.tfaces, "s": h.sfaces}[kind]

    work = hist.copy()

    def load(x):
        for (kind, i, j), value in zip(free_slots, x):
            grids(work, kind)[i, j] = value
        return work

    def residual(x):
        h = load(x)
        ig = scalar2d.interior_residual_grid(model, h)
        tg, sg = scalar2d.gluing_residual_grids(model, h)
        bc = scalar2d.boundary_coefficients(model, h)
        out = np.empty(len(free_slots))
        for idx, (kind, i, j) in enumerate(free_slots):
            if kind == "c":
                out[idx] = ig[i, j]
            elif kind == "t":
                # unpinned boundary faces carry the natural condition:
                # the matching boundary coefficient of dS must vanish
                if i == 0:
                    out[idx] = bc.tfaces_minus[j]
                elif i == fine.n0:
                    out[idx] = bc.tfaces_plus[j]
                else:
                    out[idx] = tg[i - 1, j]
            else:
                if j == 0:
                    out[idx] = bc.sfaces_minus[i]
                elif j == fine.n1:
                    out[idx] = bc.sfaces_plus[i]
                else:
                    out[idx] = sg[i, j - 1]
        return out

    def jacobian(x):
        eps = 1e-6
        J = np.empty((len(free_slots), len(free_slots)))
        for col in range(len(free_slots)):
            xp = x.copy()
            xp[col] += eps
            rp = residual(xp).copy()
            xm = x.copy()
            xm[col] -= eps
            J[:, col] = (rp - residual(xm)) / (2.0 * eps)
        return J

    x0 = np.array([grids(hist, kind)[i, j] for kind, i, j in free_slots])
    if jitter is not None and x0.size:
        x0 = x0 + jitter.normal(scale=0.5, size=x0.shape)
    x, _ = newton_solve(x0, residual, jacobian, lambda x, dx: x + dx,
                        tol=tol, max_iter=max_iter)
    out = hist.copy()
    for (kind, i, j), value in zip(free_slots, x):
        grids(out, kind)[i, j] = value
    return out


def corrected_action(pair: ScalePair, coarse_history, model, *,
                     pinned="decimation", tol=1e-11, max_iter=80,
                     restarts=0, seed=0):
    """Fine action at the constrained stationary point whose decimation
    reproduces the coarse data.

    ``pinned="decimation"`` constrains every slot the scale pair reads;
    ``pinned="boundary"`` constrains only the region boundary, the mode
    whose value approaches the two-point principal function of the
    coarse boundary data under 1D refinement. ``restarts`` reruns the
    stationarity solve from jittered seeds and the least converged
    value is returned, so distinct local minima resolve to the lower
    branch."""
    if pair.kind == "time":
        if not isinstance(coarse_history, mech1d.ParticleHistory):
            raise TypeError("time corrected action expects a particle history")
        solve, act = _corrected_particle, mech1d.action
    elif pair.kind == "grid":
        if not isinstance(coarse_history, scalar2d.ScalarHistory):
            raise TypeError("grid corrected action expects a scalar history")
        solve, act = _corrected_scalar, scalar2d.action
    else:
        raise TypeError("corrected action covers the 1D chain and 2D grid")
    if not _same_complex(pair.coarse, coarse_history.complex):
        raise ValueError("coarse history does not live on the pair's coarse scale")

    rng = np.random.default_rng(seed)
    best = None
    last_failure = None
    for attempt in range(1 + max(0, int(restarts))):
        try:
            hist = solve(pair, coarse_history, model, pinned, tol, max_iter,
                         jitter=rng if attempt else None)
        except SolverFailure as exc:
            last_failure = exc
            continue
        value = act(model, hist)
        if best is None or value < best:
            best = value
    if best is None:
        raise SolverFailure(
            "no constrained stationary point found",
            residual_norm=getattr(last_failure, "residual_norm", None))
    return float(best)
