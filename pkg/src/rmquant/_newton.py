"""Damped Newton iteration on a tridiagonal system, shared by the
single-distribution quantizer and the recursive marginal engine.

The objective's Hessian is symmetric tridiagonal, so each iteration is an
O(N) banded solve.  A full Newton step is accepted only if the trial grid
stays strictly increasing (and inside its domain) and does not increase
the gradient sup-norm; otherwise the step is halved, up to 30 times, and
as a last resort one Lloyd centroid step replaces the Newton step.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable, Optional

import numpy as np
from scipy.linalg import solve_banded

GRAD_TOL = 1e-12        # early exit: below Phi-evaluation accuracy
DIAG_FLOOR = 1e-12      # keeps the banded solve nonsingular for empty regions
MAX_HALVINGS = 30


@dataclass
class StepEval:
    """Gradient, Hessian bands and Lloyd centroids at one candidate grid."""

    grad: np.ndarray        # length N
    hess_diag: np.ndarray   # length N
    hess_off: np.ndarray    # length N-1 (super/sub diagonal, symmetric)
    centroids: np.ndarray   # conditional means per region (Lloyd update)
    aux: Any = None         # caller-specific payload (probabilities, matrices)


def solve_tridiag(diag, off, rhs):
    """Solve the symmetric tridiagonal system H x = rhs."""
    n = diag.shape[0]
    if n == 1:
        return rhs / diag
    ab = np.zeros((3, n))
    ab[0, 1:] = off
    ab[1] = diag
    ab[2, :-1] = off
    return solve_banded((1, 1), ab, rhs)


def _admissible(gam, lo, hi):
    if not np.all(np.isfinite(gam)):
        return False
    if np.any(np.diff(gam) <= 0.0):
        return False
    if lo is not None and gam[0] <= lo:
        return False
    if hi is not None and gam[-1] >= hi:
        return False
    return True


def damped_newton(gamma0: np.ndarray,
                  evaluate: Callable[[np.ndarray], StepEval],
                  n_iter: int,
                  lo: Optional[float] = None,
                  hi: Optional[float] = None,
                  grad_tol: float = GRAD_TOL):
    """Run up to ``n_iter`` safeguarded Newton steps from ``gamma0``.

    ``evaluate`` maps a strictly increasing grid to a :class:`StepEval`.
    ``lo``/``hi`` are open domain bounds the grid must respect (pass None
    for unbounded ends).  Returns the final grid together with its
    evaluation, which is always consistent with the returned grid.
    """
    gam = np.asarray(gamma0, dtype=float)
    ev = evaluate(gam)
    for _ in range(n_iter):
        g0 = float(np.max(np.abs(ev.grad)))
        if not np.isfinite(g0) or g0 < grad_tol:
            break
        step = solve_tridiag(np.maximum(ev.hess_diag, DIAG_FLOOR),
                             ev.hess_off, ev.grad)
        accepted = None
        alpha = 1.0
        for _ in range(MAX_HALVINGS + 1):
            trial = gam - alpha * step
            if _admissible(trial, lo, hi):
                trial_ev = evaluate(trial)
                gt = float(np.max(np.abs(trial_ev.grad)))
                if gt <= g0 or gt < grad_tol:
                    accepted = (trial, trial_ev)
                    break
            alpha *= 0.5
        if accepted is None:
            # Lloyd fallback: move every codeword to its region centroid.
            trial = ev.centroids
            if not _admissible(trial, lo, hi):
                break  # nothing safe left to do; keep the current grid
            accepted = (trial, evaluate(trial))
        gam, ev = accepted
    return gam, ev
