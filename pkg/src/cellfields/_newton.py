"""Damped Newton iteration shared by the model solvers.

The driver works on an opaque ``state``; callers supply the residual,
the Jacobian with respect to their own chart coordinates, and the chart
retraction ``apply_step(state, dx) -> state``.  Flat vector problems pass
``apply_step = lambda x, dx: x + dx``.
"""

from __future__ import annotations

import numpy as np


class SolverFailure(RuntimeError):
    """Newton iteration did not reach the requested tolerance."""

    def __init__(self, message, residual_norm=None, iterations=None):
        super().__init__(message)
        self.residual_norm = residual_norm
        self.iterations = iterations

    def report(self) -> str:
        return "{} (residual {:.3e} after {} iterations)".format(
            self.args[0], self.residual_norm, self.iterations
        )


def _maxabs(r):
    return 0.0 if r.size == 0 else float(np.max(np.abs(r)))


def newton_solve(
    state,
    residual,
    jacobian,
    apply_step,
    *,
    tol,
    max_iter=60,
    use_lstsq=False,
    project_step=None,
    max_halvings=40,
    on_iteration=None,
):
    """Solve residual(state) = 0 by damped Newton steps.

    ``project_step``, when given, maps a raw Newton increment to the one
    actually applied (used to remove gauge null directions).
    ``on_iteration(it, residual_norm)``, when given, is called once with
    the starting norm and once after every accepted step.  Returns
    ``(state, info)`` with iteration count and final residual norm.
    """
    r = np.asarray(residual(state), dtype=float)
    rn = _maxabs(r)
    if on_iteration is not None:
        on_iteration(0, rn)
    for it in range(max_iter):
        if rn <= tol:
            return state, {"iterations": it, "residual": rn}
        J = np.asarray(jacobian(state), dtype=float)
        if use_lstsq:
            dx = np.linalg.lstsq(J, -r, rcond=None)[0]
        else:
            try:
                dx = np.linalg.solve(J, -r)
            except np.linalg.LinAlgError:
                dx = np.linalg.lstsq(J, -r, rcond=None)[0]
        if project_step is not None:
            dx = project_step(state, dx)
        if not np.all(np.isfinite(dx)):
            raise SolverFailure("newton step is not finite", rn, it)
        t = 1.0
        for _ in range(max_halvings):
            cand = apply_step(state, t * dx)
            r_new = np.asarray(residual(cand), dtype=float)
            rn_new = _maxabs(r_new)
            if rn_new <= tol or rn_new < rn:
                state, r, rn = cand, r_new, rn_new
                if on_iteration is not None:
                    on_iteration(it + 1, rn)
                break
            t *= 0.5
        else:
            raise SolverFailure("line search stalled", rn, it)
    if rn <= tol:
        return state, {"iterations": max_iter, "residual": rn}
    raise SolverFailure("maximum iterations exceeded", rn, max_iter)
