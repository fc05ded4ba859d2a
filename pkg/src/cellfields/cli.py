"""Command line front end for the cell-complex field models.

Each subcommand reads a JSON config (with an explicit ``version`` field;
unknown keys are rejected before anything runs), computes in memory, and
only then writes its CSV or JSON outputs into ``--out``.  A one-line JSON
summary goes to stdout.  Exit codes: 0 on success, 2 on a config error
(no output files are produced), 3 on solver failure, 4 on an unresolved
solution-branch ambiguity.

CSV cells carry 17 significant digits, so a rerun with the same config
and seed reproduces the files byte for byte.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os

import numpy as np

from . import bfmod, canonical, coarse, gauge, liegroup, mech1d, scalar2d
from ._newton import SolverFailure
from .complexes import CartesianComplex2D, CubicalComplexND, RLink, TimeComplex
from .errors import NotASolutionError
from .liegroup import BranchAmbiguityError

CONFIG_VERSION = 1

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_BRANCH = 4


class ConfigError(ValueError):
    """Config file is missing, malformed, or violates the schema."""


# ---------------------------------------------------------------------------
# config parsing helpers

def _check_keys(cfg, where, required, optional=()):
    unknown = sorted(set(cfg) - set(required) - set(optional) - {"version"})
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    missing = sorted(set(required) - set(cfg))
    if missing:
        raise ConfigError(f"{where}: missing keys {missing}")


def _as_int(cfg, key, *, minimum=None):
    v = cfg[key]
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"{key} must be an integer")
    if minimum is not None and v < minimum:
        raise ConfigError(f"{key} must be >= {minimum}")
    return v


def _as_real(cfg, key, *, positive=False):
    v = cfg[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{key} must be a number")
    v = float(v)
    if not math.isfinite(v):
        raise ConfigError(f"{key} must be finite")
    if positive and v <= 0.0:
        raise ConfigError(f"{key} must be positive")
    return v


def _as_vector(cfg, key, *, length=None):
    v = cfg[key]
    if isinstance(v, (int, float)) and not isinstance(v, bool):
        v = [v]
    if not isinstance(v, list) or not v:
        raise ConfigError(f"{key} must be a number or a non-empty list")
    out = []
    for x in v:
        if isinstance(x, bool) or not isinstance(x, (int, float)):
            raise ConfigError(f"{key} entries must be numbers")
        out.append(float(x))
    if length is not None and len(out) != length:
        raise ConfigError(f"{key} must have {length} entries")
    return np.array(out)


def _as_bool(cfg, key):
    v = cfg[key]
    if not isinstance(v, bool):
        raise ConfigError(f"{key} must be a boolean")
    return v


def _as_str(cfg, key, choices=None):
    v = cfg[key]
    if not isinstance(v, str):
        raise ConfigError(f"{key} must be a string")
    if choices is not None and v not in choices:
        raise ConfigError(f"{key} must be one of {sorted(choices)}")
    return v


def _load_config(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        cfg = json.loads(text)
    except ValueError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    if "version" not in cfg:
        raise ConfigError("config needs a version field")
    if cfg["version"] != CONFIG_VERSION:
        raise ConfigError(f"unsupported config version {cfg['version']!r}; "
                          f"expected {CONFIG_VERSION}")
    return cfg


def _resolve(path, config_path):
    """Relative data paths count from the config file's directory."""
    if os.path.isabs(path):
        return path
    return os.path.join(os.path.dirname(os.path.abspath(config_path)), path)


def _build_group(cfg, where):
    spec = cfg.get("group", {"family": "su", "n": 2})
    if not isinstance(spec, dict):
        raise ConfigError(f"{where}: group must be an object")
    _check_keys(spec, f"{where}.group", ("family", "n"))
    family = _as_str(spec, "family", choices={"su", "so"})
    n = _as_int(spec, "n", minimum=2)
    return liegroup.su_group(n) if family == "su" else liegroup.so_group(n)


# ---------------------------------------------------------------------------
# output helpers

def _fmt_cell(v):
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".17g")


def _json_safe(obj):
    if isinstance(obj, dict):
        return {str(k): _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, (bool, str)) or obj is None:
        return obj
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else format(v, "g")
    return obj


def _emit(obj):
    print(json.dumps(_json_safe(obj), sort_keys=True, separators=(",", ":")))


def _write_outputs(out_dir, files):
    os.makedirs(out_dir, exist_ok=True)
    for name, payload in files.items():
        path = os.path.join(out_dir, name)
        if payload[0] == "csv":
            _, header, rows = payload
            with open(path, "w", encoding="utf-8", newline="") as fh:
                writer = csv.writer(fh, lineterminator="\n")
                writer.writerow(header)
                for row in rows:
                    writer.writerow([_fmt_cell(v) for v in row])
        else:
            with open(path, "w", encoding="utf-8") as fh:
                json.dump(_json_safe(payload[1]), fh, sort_keys=True, indent=2)
                fh.write("\n")


def _maxabs(a):
    a = np.asarray(a)
    return 0.0 if a.size == 0 else float(np.max(np.abs(a)))


# ---------------------------------------------------------------------------
# mech

def _run_mech(cfg, args):
    _check_keys(cfg, "mech", ("variant", "n_atoms", "lapse"),
                ("mass", "stiffness", "inertia", "q_start", "q_end",
                 "rotation_start", "rotation_end", "generator", "tol",
                 "max_iter", "search_branches", "branch_policy"))
    variant = _as_str(cfg, "variant", choices={"free", "harmonic", "rigid"})
    n_atoms = _as_int(cfg, "n_atoms", minimum=1)
    lapse = _as_real(cfg, "lapse", positive=True)
    tol = args.tol if args.tol is not None else (
        _as_real(cfg, "tol", positive=True) if "tol" in cfg else None)
    max_iter = _as_int(cfg, "max_iter", minimum=1) if "max_iter" in cfg else 80
    policy = _as_str(cfg, "branch_policy", choices={"strict", "least-action"}) \
        if "branch_policy" in cfg else "strict"
    cplx = TimeComplex(n_atoms, lapse)

    if variant == "rigid":
        for key in ("mass", "stiffness", "q_start", "q_end"):
            if key in cfg:
                raise ConfigError(f"mech: {key} does not apply to the rigid variant")
        _check_keys({k: cfg[k] for k in ("inertia", "rotation_end") if k in cfg},
                    "mech", ("inertia", "rotation_end"))
        group = liegroup.so_group(3)
        inertia = _as_vector(cfg, "inertia", length=group.dim)
        model = mech1d.RigidBodyModel(group, inertia)
        start = _as_vector(cfg, "rotation_start", length=group.dim) \
            if "rotation_start" in cfg else np.zeros(group.dim)
        end = _as_vector(cfg, "rotation_end", length=group.dim)
        q_start = group.exp(group.algebra_element(start))
        q_end = group.exp(group.algebra_element(end))
        generator = _as_vector(cfg, "generator", length=group.dim) \
            if "generator" in cfg else np.array([0.0, 0.0, 1.0])
        search = _as_bool(cfg, "search_branches") \
            if "search_branches" in cfg else True
        result = mech1d.solve(model, cplx, q_start, q_end, tol=tol,
                              max_iter=max_iter, search_branches=search)
        dim = group.dim
    else:
        for key in ("inertia", "rotation_start", "rotation_end", "search_branches"):
            if key in cfg:
                raise ConfigError(f"mech: {key} does not apply to the {variant} variant")
        _check_keys({k: cfg[k] for k in ("mass", "q_start", "q_end") if k in cfg},
                    "mech", ("mass", "q_start", "q_end"))
        mass = _as_real(cfg, "mass", positive=True)
        if variant == "harmonic":
            if "stiffness" not in cfg:
                raise ConfigError("mech: harmonic variant needs stiffness")
            model = mech1d.ParticleModel(
                mass, mech1d.HarmonicPotential(_as_real(cfg, "stiffness")))
        else:
            if "stiffness" in cfg:
                raise ConfigError("mech: stiffness needs the harmonic variant")
            model = mech1d.ParticleModel(mass)
        q_start = _as_vector(cfg, "q_start")
        q_end = _as_vector(cfg, "q_end", length=q_start.size)
        dim = q_start.size
        generator = _as_vector(cfg, "generator", length=dim) \
            if "generator" in cfg else np.eye(dim)[0]
        result = mech1d.solve(model, cplx, q_start, q_end, tol=tol,
                              max_iter=max_iter)

    if result.notice is not None and policy == "strict":
        actions = [float(a) for a, _ in result.branches]
        raise BranchAmbiguityError(
            f"{result.notice}; branch actions {actions}; rerun with "
            f"branch_policy \"least-action\" to accept the smallest")
    hist = result.history

    blocks = mech1d.residual_blocks(model, hist)
    interior = np.asarray(blocks["interior"])
    gluing = np.asarray(blocks["gluing"])
    row_interior = np.max(np.abs(interior.reshape(n_atoms, -1)), axis=1)
    for key in ("wedge_minus", "wedge_plus"):
        if key in blocks:
            extra = np.max(np.abs(np.asarray(blocks[key]).reshape(n_atoms, -1)),
                           axis=1)
            row_interior = np.maximum(row_interior, extra)
    row_gluing = np.zeros(n_atoms)
    if n_atoms > 1:
        row_gluing[:-1] = np.max(np.abs(gluing.reshape(n_atoms - 1, -1)), axis=1)

    sites, currents = mech1d.noether_current(model, hist, generator,
                                             require_solution=False)
    by_site = dict(zip(sites, np.asarray(currents, dtype=float)))

    basis = np.eye(dim)
    var1 = mech1d.first_variation(model, hist, basis[0], np.zeros(dim))
    var2 = mech1d.first_variation(model, hist, np.zeros(dim), basis[dim - 1])
    omega_rows = [
        mech1d.omega_form(model, hist, var1, var2, (nu, "+"))
        - mech1d.omega_form(model, hist, var1, var2, (nu, "-"))
        for nu in cplx.atoms()
    ]

    rows = [
        (nu, row_interior[nu - 1], row_gluing[nu - 1],
         by_site[(nu, "-")], by_site[(nu, "+")], omega_rows[nu - 1])
        for nu in cplx.atoms()
    ]
    header = ["atom", "residual_interior", "residual_gluing",
              "current_minus", "current_plus", "omega_defect"]

    all_currents = np.asarray(currents, dtype=float)
    summary = {
        "command": "mech",
        "variant": variant,
        "n_atoms": n_atoms,
        "iterations": result.iterations,
        "residual": result.residual,
        "action": mech1d.action(model, hist),
        "current_spread": float(np.max(all_currents) - np.min(all_currents)),
        "symplectic_defect": mech1d.symplectic_defect(model, hist, var1, var2),
        "outputs": ["mech.csv"],
    }
    if result.notice is not None:
        summary["notice"] = result.notice
        summary["branch_actions"] = [float(a) for a, _ in result.branches]
    return summary, {"mech.csv": ("csv", header, rows)}


# ---------------------------------------------------------------------------
# wave

def _nonlinearity_from(cfg, where):
    spec = cfg.get("nonlinearity", {"kind": "none"})
    if not isinstance(spec, dict):
        raise ConfigError(f"{where}: nonlinearity must be an object")
    _check_keys(spec, f"{where}.nonlinearity", ("kind",),
                ("coefficient", "amplitude"))
    kind = _as_str(spec, "kind", choices={"none", "cubic", "cosine"})
    if kind == "none":
        if len(spec) > 1:
            raise ConfigError(f"{where}: kind none takes no parameters")
        return kind, scalar2d.ZeroNonlinearity()
    if kind == "cubic":
        if "coefficient" not in spec:
            raise ConfigError(f"{where}: cubic nonlinearity needs coefficient")
        return kind, scalar2d.CubicNonlinearity(_as_real(spec, "coefficient"))
    amp = _as_real(spec, "amplitude") if "amplitude" in spec else 1.0
    return kind, scalar2d.CosineNonlinearity(amp)


def _wave_initial(cfg, args):
    spec = cfg["initial"]
    if not isinstance(spec, dict):
        raise ConfigError("wave: initial must be an object")
    if "csv" in spec:
        _check_keys(spec, "wave.initial", ("csv",))
        path = _resolve(_as_str(spec, "csv"), args.config)
        try:
            with open(path, "r", encoding="utf-8", newline="") as fh:
                reader = csv.reader(fh)
                rows = list(reader)
        except OSError as exc:
            raise ConfigError(f"wave: cannot read initial data {path}: {exc}")
        if not rows or rows[0] != ["centers", "tfaces"]:
            raise ConfigError("wave: initial CSV needs a centers,tfaces header")
        try:
            data = np.array([[float(a), float(b)] for a, b in rows[1:]])
        except ValueError as exc:
            raise ConfigError(f"wave: bad initial CSV row: {exc}")
        if data.size == 0:
            raise ConfigError("wave: initial CSV has no data rows")
        return data[:, 0], data[:, 1]
    _check_keys(spec, "wave.initial", ("centers", "tfaces"))
    centers = _as_vector(spec, "centers")
    tfaces = _as_vector(spec, "tfaces", length=centers.size)
    return centers, tfaces


def _run_wave(cfg, args):
    _check_keys(cfg, "wave", ("h", "k", "n_steps", "initial"),
                ("nonlinearity", "boundary", "tol"))
    h = _as_real(cfg, "h", positive=True)
    k = _as_real(cfg, "k", positive=True)
    n_steps = _as_int(cfg, "n_steps", minimum=0)
    kind, nonlinearity = _nonlinearity_from(cfg, "wave")
    centers, tfaces = _wave_initial(cfg, args)
    n0 = n_steps + 1

    bspec = cfg.get("boundary", {})
    if not isinstance(bspec, dict):
        raise ConfigError("wave: boundary must be an object")
    _check_keys(bspec, "wave.boundary", (), ("left", "right"))
    sides = []
    for side in ("left", "right"):
        if side in bspec:
            vals = _as_vector(bspec, side)
            if vals.size not in (1, n0):
                raise ConfigError(f"wave: boundary {side} needs 1 or {n0} values")
            sides.append(vals[0] if vals.size == 1 else vals)
        else:
            sides.append(0.0)
    boundary = scalar2d.DirichletBoundary(*sides)

    model = scalar2d.WaveModel(nonlinearity)
    initial = scalar2d.InitialData(h, k, centers, tfaces)
    hist = scalar2d.evolve(model, initial, n_steps, boundary=boundary)
    n1 = centers.size

    ig = scalar2d.interior_residual_grid(model, hist)
    tg, sg = scalar2d.gluing_residual_grids(model, hist)

    rng = np.random.default_rng(args.seed)
    variations = []
    for _ in range(2):
        bv = scalar2d.BoundaryData(
            tfaces_minus=rng.normal(size=n1), tfaces_plus=rng.normal(size=n1),
            sfaces_minus=rng.normal(size=n0), sfaces_plus=rng.normal(size=n0))
        variations.append(scalar2d.first_variation(model, hist, bv))
    defect = scalar2d.multisymplectic_defect(model, hist, *variations)

    fluxes = [scalar2d.slab_momentum(model, hist, i) for i in range(n0)] \
        if kind == "none" else None

    header = ["step", "residual_interior", "residual_gluing_t",
              "residual_gluing_s"]
    if fluxes is not None:
        header.append("noether_flux")
    header.append("multisymplectic_defect")
    header.extend(f"phi_{j}" for j in range(n1))
    rows = []
    for i in range(n0):
        row = [i, _maxabs(ig[i]), _maxabs(tg[i]) if i < n0 - 1 else 0.0,
               _maxabs(sg[i])]
        if fluxes is not None:
            row.append(fluxes[i])
        row.append(defect)
        row.extend(hist.centers[i, :])
        rows.append(row)

    summary = {
        "command": "wave",
        "n0": n0,
        "n1": n1,
        "nonlinearity": kind,
        "residual_max": max(_maxabs(ig), _maxabs(tg), _maxabs(sg)),
        "multisymplectic_defect": defect,
        "outputs": ["wave.csv"],
    }
    if fluxes is not None:
        summary["noether_drift"] = float(np.max(fluxes) - np.min(fluxes))
    return summary, {"wave.csv": ("csv", header, rows)}


# ---------------------------------------------------------------------------
# lgt

def _lgt_boundary(cfg, args, cplx, group):
    spec = cfg["boundary"]
    if not isinstance(spec, dict):
        raise ConfigError("lgt: boundary must be an object")
    kind = _as_str(spec, "kind", choices={"identity", "random-small", "file"})
    rlinks = gauge.boundary_rlinks(cplx)
    if kind == "identity":
        _check_keys(spec, "lgt.boundary", ("kind",))
        eye = group.identity()
        return {r: eye.copy() for r in rlinks}
    if kind == "random-small":
        _check_keys(spec, "lgt.boundary", ("kind", "radius"), ("seed",))
        radius = _as_real(spec, "radius", positive=True)
        seed = _as_int(spec, "seed", minimum=0) if "seed" in spec else args.seed
        rng = np.random.default_rng(seed)
        return {r: group.random(rng, radius) for r in rlinks}
    _check_keys(spec, "lgt.boundary", ("kind", "path"))
    path = _resolve(_as_str(spec, "path"), args.config)
    try:
        with open(path, "r", encoding="utf-8") as fh:
            entries = json.load(fh)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"lgt: cannot read boundary file {path}: {exc}")
    if not isinstance(entries, list):
        raise ConfigError("lgt: boundary file must hold a list of entries")
    out = {}
    for entry in entries:
        if not isinstance(entry, dict) or \
                set(entry) != {"face", "axis", "sign", "matrix"}:
            raise ConfigError("lgt: each boundary entry needs face, axis, "
                              "sign, matrix")
        try:
            r = RLink(tuple(int(c) for c in entry["face"]),
                      int(entry["axis"]), int(entry["sign"]))
            mat = np.array([[complex(*c) if isinstance(c, list) else complex(c)
                             for c in row] for row in entry["matrix"]])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"lgt: bad boundary entry: {exc}")
        if mat.shape != (group.size, group.size):
            raise ConfigError(f"lgt: boundary matrix at {r} has shape "
                              f"{mat.shape}; expected {(group.size,) * 2}")
        if np.issubdtype(group.dtype, np.floating):
            if _maxabs(mat.imag) > 0.0:
                raise ConfigError(f"lgt: boundary matrix at {r} is complex "
                                  "but the group is real")
            mat = mat.real
        out[r] = mat.astype(group.dtype)
    return out


def _run_lgt(cfg, args):
    _check_keys(cfg, "lgt", ("dims", "beta", "boundary"),
                ("group", "tol", "max_iter"))
    dims = cfg["dims"]
    if not isinstance(dims, list) or not dims or \
            any(isinstance(d, bool) or not isinstance(d, int) or d < 1
                for d in dims):
        raise ConfigError("lgt: dims must be a list of positive integers")
    beta = _as_real(cfg, "beta", positive=True)
    group = _build_group(cfg, "lgt")
    tol = args.tol if args.tol is not None else (
        _as_real(cfg, "tol", positive=True) if "tol" in cfg else 1e-9)
    max_iter = _as_int(cfg, "max_iter", minimum=1) if "max_iter" in cfg else 60

    cplx = CubicalComplexND(tuple(dims))
    model = gauge.GaugeModel(group, beta)
    boundary_k = _lgt_boundary(cfg, args, cplx, group)

    trace = []
    hist = gauge.solve(model, cplx, boundary_k, tol=tol, max_iter=max_iter,
                       on_iteration=lambda it, rn: trace.append((it, rn)))

    rows = [(f"residual_iter_{it}", rn) for it, rn in trace]
    constraint_max = 0.0
    for face in sorted(f for f in cplx.all_faces()
                       if cplx.on_region_boundary(f)):
        norm = _maxabs(gauge.gauge_constraint(model, hist, face))
        constraint_max = max(constraint_max, norm)
        rows.append(("constraint_" + "_".join(str(c) for c in face), norm))
    value = gauge.action(model, hist)
    reduced, plaquettes = gauge.reduce_wilson(model, hist)
    rows.append(("action", value))
    rows.append(("action_reduced", reduced))
    rows.append(("reduction_gap", abs(value - reduced)))

    summary = {
        "command": "lgt",
        "dims": list(dims),
        "group": f"{group.tag}({group.size})",
        "iterations": trace[-1][0] if trace else 0,
        "residual": trace[-1][1] if trace else 0.0,
        "action": value,
        "action_reduced": reduced,
        "reduction_gap": abs(value - reduced),
        "constraint_max": constraint_max,
        "plaquettes": len(plaquettes),
        "outputs": ["lgt.csv"],
    }
    return summary, {"lgt.csv": ("csv", ["quantity", "value"], rows)}


# ---------------------------------------------------------------------------
# bf

def _load_sgn_table(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            entries = json.load(fh)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"bf: cannot read sign table {path}: {exc}")
    if not isinstance(entries, list):
        raise ConfigError("bf: sign table must hold a list of "
                          "[class, class, value] triples")
    try:
        return bfmod.load_sgn_table(
            [(tuple(c1), tuple(c2), v) for c1, c2, v in entries])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bf: bad sign table: {exc}")


def _bf_phi_term(cfg, args, n_axes):
    spec = cfg.get("phi", {"kind": "none"})
    if not isinstance(spec, dict):
        raise ConfigError("bf: phi must be an object")
    _check_keys(spec, "bf.phi", ("kind",), ("coefficient", "sgn_table"))
    kind = _as_str(spec, "kind", choices={"none", "quadratic"})
    if kind == "none":
        if len(spec) > 1:
            raise ConfigError("bf: phi kind none takes no parameters")
        return bfmod.PhiTerm.none()
    table = _load_sgn_table(_resolve(_as_str(spec, "sgn_table"), args.config)) \
        if "sgn_table" in spec else bfmod.sign_product_table(n_axes)
    coeff = _as_real(spec, "coefficient") if "coefficient" in spec else 1.0 / 60.0
    return bfmod.PhiTerm.quadratic(table, coeff)


def _run_bf(cfg, args):
    _check_keys(cfg, "bf", ("dims",),
                ("group", "phi", "e_coeffs", "n_variations", "scale"))
    dims = cfg["dims"]
    if not isinstance(dims, list) or not dims or \
            any(isinstance(d, bool) or not isinstance(d, int) or d < 1
                for d in dims):
        raise ConfigError("bf: dims must be a list of positive integers")
    group = _build_group(cfg, "bf")
    phi_term = _bf_phi_term(cfg, args, len(dims))
    n_vars = _as_int(cfg, "n_variations", minimum=2) \
        if "n_variations" in cfg else 3
    scale = _as_real(cfg, "scale", positive=True) if "scale" in cfg else 0.3

    rng = np.random.default_rng(args.seed)
    coeffs = _as_vector(cfg, "e_coeffs", length=group.dim) \
        if "e_coeffs" in cfg else 0.3 * rng.normal(size=group.dim)

    cplx = CubicalComplexND(tuple(dims))
    hist = bfmod.pure_bf_solution(cplx, group, coeffs)
    if phi_term.uses_multiplier:
        zero = np.zeros((group.dim, group.dim))
        hist = bfmod.BFHistory(cplx, group, hist.h, hist.k, hist.e,
                               phi={atom: zero.copy() for atom in cplx.atoms()})

    norms = bfmod.residuals(phi_term, hist).class_norms()
    rows = [(f"residual_{name}", norms[name]) for name in sorted(norms)]

    # Pure BF: lift admissible boundary directions to first variations, so
    # the defect column tests the conservation identity.  With the
    # interaction switched on the flat history is not a solution and no
    # linearized solver applies; random directions document the raw values.
    is_solution = phi_term.variant == "none"
    if is_solution:
        basis = bfmod.admissible_boundary_basis(phi_term, hist)
        variations = [bfmod.first_variation(phi_term, hist, b)
                      for b in basis[:n_vars]]
    else:
        variations = [
            bfmod.BFVariation.random(cplx, group, rng, scale=scale,
                                     with_phi=phi_term.uses_multiplier)
            for _ in range(n_vars)
        ]
    defect_max = 0.0
    for i in range(len(variations)):
        for j in range(i + 1, len(variations)):
            d = bfmod.multisymplectic_defect(
                phi_term, hist, variations[i], variations[j],
                require_solution=is_solution)
            defect_max = max(defect_max, abs(d))
            rows.append((f"defect_{i}_{j}", d))

    summary = {
        "command": "bf",
        "dims": list(dims),
        "group": f"{group.tag}({group.size})",
        "phi": phi_term.variant,
        "residual_max": max(norms.values()),
        "defect_max": defect_max,
        "is_solution": is_solution,
        "outputs": ["bf.csv"],
    }
    return summary, {"bf.csv": ("csv", ["quantity", "value"], rows)}


# ---------------------------------------------------------------------------
# canonical-check

def _run_canonical(cfg, args):
    _check_keys(cfg, "canonical-check", ("family",),
                ("n0", "n1", "h", "k", "nonlinearity", "dims", "beta",
                 "group", "phi", "n_variations", "eps", "scale"))
    family = _as_str(cfg, "family", choices={"scalar", "gauge", "bf"})
    n_vars = _as_int(cfg, "n_variations", minimum=1) \
        if "n_variations" in cfg else 4
    eps = _as_real(cfg, "eps", positive=True) if "eps" in cfg else 1e-5
    scale = _as_real(cfg, "scale", positive=True) if "scale" in cfg else 0.3
    rng = np.random.default_rng(args.seed)

    if family == "scalar":
        for key in ("dims", "beta", "group", "phi"):
            if key in cfg:
                raise ConfigError(f"canonical-check: {key} does not apply to "
                                  "the scalar family")
        n0 = _as_int(cfg, "n0", minimum=1) if "n0" in cfg else 3
        n1 = _as_int(cfg, "n1", minimum=1) if "n1" in cfg else 3
        h = _as_real(cfg, "h", positive=True) if "h" in cfg else 0.2
        k = _as_real(cfg, "k", positive=True) if "k" in cfg else 0.25
        _, nonlinearity = _nonlinearity_from(cfg, "canonical-check")
        cplx = CartesianComplex2D(n0, n1, h, k)
        model = scalar2d.WaveModel(nonlinearity)
        hist = scalar2d.ScalarHistory(
            cplx, scale * rng.normal(size=(n0, n1)),
            scale * rng.normal(size=(n0 + 1, n1)),
            scale * rng.normal(size=(n0, n1 + 1)))
        variations = [
            scalar2d.ScalarVariation(rng.normal(size=(n0, n1)),
                                     rng.normal(size=(n0 + 1, n1)),
                                     rng.normal(size=(n0, n1 + 1)))
            for _ in range(n_vars)
        ]
    else:
        for key in ("n0", "n1", "h", "k", "nonlinearity"):
            if key in cfg:
                raise ConfigError(f"canonical-check: {key} does not apply to "
                                  f"the {family} family")
        dims = cfg.get("dims", [2, 2])
        if not isinstance(dims, list) or not dims or \
                any(isinstance(d, bool) or not isinstance(d, int) or d < 1
                    for d in dims):
            raise ConfigError("canonical-check: dims must be a list of "
                              "positive integers")
        group = _build_group(cfg, "canonical-check")
        cplx = CubicalComplexND(tuple(dims))
        if family == "gauge":
            if "phi" in cfg:
                raise ConfigError("canonical-check: phi needs the bf family")
            beta = _as_real(cfg, "beta", positive=True) if "beta" in cfg else 1.0
            model = gauge.GaugeModel(group, beta)
            hist = gauge.GaugeHistory.random(cplx, group, rng, scale)
            variations = [gauge.GaugeVariation.random(cplx, group, rng, scale)
                          for _ in range(n_vars)]
        else:
            if "beta" in cfg:
                raise ConfigError("canonical-check: beta needs the gauge family")
            model = _bf_phi_term(cfg, args, len(dims))
            with_phi = model.uses_multiplier
            h_links = {l: group.random(rng, scale) for l in cplx.all_links()}
            k_links = {r: group.random(rng, scale) for r in cplx.all_rlinks()}
            e = {}
            phi = {}
            for atom in cplx.atoms():
                for w in cplx.atom_wedges(atom, oriented=False):
                    e[w] = rng.normal(scale=scale, size=group.dim)
                if with_phi:
                    phi[atom] = bfmod.random_sym_traceless(rng, group.dim, scale)
            hist = bfmod.BFHistory(cplx, group, h_links, k_links, e,
                                   phi=phi or None)
            variations = [
                bfmod.BFVariation.random(cplx, group, rng, scale=scale,
                                         with_phi=with_phi)
                for _ in range(n_vars)
            ]

    rep = canonical.pullback_check(model, hist, variations, eps=eps)
    report = {
        "family": family,
        "n_variations": n_vars,
        "eps": eps,
        "theta_hat": rep.theta_hat,
        "theta": rep.theta,
        "omega_hat": rep.omega_hat,
        "omega": rep.omega,
        "max": rep.max(),
    }
    summary = dict(report)
    summary["command"] = "canonical-check"
    summary["outputs"] = ["canonical_check.json"]
    return summary, {"canonical_check.json": ("json", report)}


# ---------------------------------------------------------------------------
# converge

def _converge_scenario(name):
    if name == "particle":
        model = mech1d.ParticleModel(1.3, mech1d.HarmonicPotential(0.9))
        section = coarse.ParticleSection(
            q=lambda t: np.sin(t + 0.4),
            qdot=lambda t: np.cos(t + 0.4),
            qddot=lambda t: -np.sin(t + 0.4),
            v=lambda t: np.cos(0.8 * t) + 0.3,
            total_time=3.0)
        return model, section
    if name == "rigid":
        from scipy.linalg import expm

        group = liegroup.so_group(3)
        model = mech1d.RigidBodyModel(group, np.array([1.0, 1.7, 2.4]))
        om0 = np.array([0.3, -0.5, 0.4])
        xi = group.algebra_element(om0)
        section = coarse.RigidSection(
            q=lambda t: expm(t * xi),
            omega=lambda t: om0,
            omegadot=lambda t: np.zeros(3),
            eta=lambda t: np.array([np.sin(t), 0.2 * np.cos(t), 0.1 + 0.1 * t]),
            total_time=2.0)
        return model, section
    model = scalar2d.WaveModel()
    section = coarse.WaveSection(
        phi=lambda x0, x1: np.sin(x0) * np.sin(x1),
        phi_t=lambda x0, x1: np.cos(x0) * np.sin(x1),
        phi_x=lambda x0, x1: np.sin(x0) * np.cos(x1),
        phi_tt=lambda x0, x1: -np.sin(x0) * np.sin(x1),
        phi_xx=lambda x0, x1: -np.sin(x0) * np.sin(x1),
        v=lambda x0, x1: np.exp(0.3 * x0) * (1.0 + 0.4 * np.cos(x1)),
        extent=(np.pi, np.pi))
    return model, section


def _run_converge(cfg, args):
    _check_keys(cfg, "converge", ("scenario", "scales"), ("quad_tol",))
    scenario = _as_str(cfg, "scenario", choices={"particle", "rigid", "wave"})
    scales = cfg["scales"]
    if not isinstance(scales, list) or len(scales) < 2 or \
            any(isinstance(s, bool) or not isinstance(s, int) or s < 1
                for s in scales):
        raise ConfigError("converge: scales must be a list of at least two "
                          "positive integers")
    quad_tol = _as_real(cfg, "quad_tol", positive=True) \
        if "quad_tol" in cfg else 1e-11

    model, section = _converge_scenario(scenario)
    table = coarse.continuum_convergence(model, section, scales,
                                         threads=args.threads,
                                         quad_tol=quad_tol)

    header = ["scale", "bulk_defect", "boundary_defect", "bulk_order",
              "boundary_order"]
    rows = [(row.scale, row.bulk_defect, row.boundary_defect,
             table.bulk_order, table.boundary_order) for row in table.rows]
    summary = {
        "command": "converge",
        "scenario": scenario,
        "scales": list(scales),
        "bulk_order": table.bulk_order,
        "boundary_order": table.boundary_order,
        "bulk_continuum": table.bulk_continuum,
        "boundary_continuum": table.boundary_continuum,
        "outputs": ["converge.csv"],
    }
    return summary, {"converge.csv": ("csv", header, rows)}


# ---------------------------------------------------------------------------
# entry point

_RUNNERS = {
    "mech": _run_mech,
    "wave": _run_wave,
    "lgt": _run_lgt,
    "bf": _run_bf,
    "canonical-check": _run_canonical,
    "converge": _run_converge,
}


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="cellfields",
        description="Discrete field-theory models on cell complexes.")
    sub = parser.add_subparsers(dest="command", required=True)
    briefs = {
        "mech": "trajectory models on a time complex",
        "wave": "march the 2d scalar field and report residuals",
        "lgt": "lattice gauge boundary-value solve",
        "bf": "topological-sector residual and defect report",
        "canonical-check": "canonical-transform identity defects",
        "converge": "continuum-limit defect table",
    }
    for name in _RUNNERS:
        p = sub.add_parser(name, help=briefs[name])
        p.add_argument("--config", required=True, help="JSON config path")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--seed", type=int, default=0, help="RNG seed")
        p.add_argument("--tol", type=float, default=None,
                       help="override the config tolerance")
        p.add_argument("--threads", type=int, default=1,
                       help="worker threads where supported")
    return parser


def main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if not exc.code else EXIT_CONFIG
    if args.seed < 0:
        _emit({"error": {"code": "config", "message": "seed must be >= 0"}})
        return EXIT_CONFIG
    if args.threads < 1:
        _emit({"error": {"code": "config", "message": "threads must be >= 1"}})
        return EXIT_CONFIG
    try:
        cfg = _load_config(args.config)
        summary, files = _RUNNERS[args.command](cfg, args)
    except ConfigError as exc:
        _emit({"error": {"code": "config", "message": str(exc)}})
        return EXIT_CONFIG
    except BranchAmbiguityError as exc:
        _emit({"error": {"code": "branch", "message": str(exc)}})
        return EXIT_BRANCH
    except (SolverFailure, NotASolutionError) as exc:
        _emit({"error": {"code": "solver", "message": str(exc)}})
        return EXIT_SOLVER
    _write_outputs(args.out, files)
    _emit(summary)
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
