"""Recursive marginal quantization of a scalar diffusion.

The state distribution after each time step is a mixture: conditional on
the previous step's quantizer, every codeword contributes one affine
update m Z + c with a known innovation law.  Each step therefore
quantizes that mixture with a damped Newton iteration whose gradient and
tridiagonal Hessian are assembled from three matrices, all evaluated at
the normalized region boundaries R[i, j] = (r[j] - c_i) / m_i:

    P[i, j] = sgn(m_i) (F_i(R+) - F_i(R-))      transition probabilities
    M[i, j] = M1_i(R+) - M1_i(R-)               partial-moment increments
    f[i, j] = f_i(R+)                           densities at inner bounds

The chain (grids, probabilities, transition matrices) is an inhomogeneous
discrete-time Markov chain used directly by the pricers.

Zero boundary handling: in ``absorbing`` mode the innovation domain of
each update is left-truncated at -c_i / m_i (the image of state zero) and
the missing mass accumulates in an extra zero-valued codeword that only
transitions to itself.  In ``reflecting`` mode the same truncation is
applied and every innovation law is replaced by its reflection about
-c_i / m_i, so no mass is lost.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import IO, List, Optional, Sequence, Union

import numpy as np

from . import _fast
from ._newton import StepEval, damped_newton
from .affine_schemes import SCHEME_BUILDERS, UpdateBatch, as_batch
from .sde_models import SdeModel
from .vq1d import Quantizer, RegionBounds, initial_guess

FREE = "free"
ABSORBING = "absorbing"
REFLECTING = "reflecting"
BOUNDARY_MODES = (FREE, ABSORBING, REFLECTING)

PROB_FLOOR = 1e-14  # previous-step components below this are skipped

GRID_SCHEMA = "rmquant.grid.v1"
SEQUENCE_SCHEMA = "rmquant.sequence.v1"


class RmqError(Exception):
    """Numerical failure inside the recursive quantization."""


class CodewordDomainError(RmqError):
    """A step produced codewords outside the model's state domain."""

    def __init__(self, step: int, message: str):
        super().__init__(message)
        self.step = step


@dataclass(frozen=True)
class Schedule:
    """Time grid and iteration budget of a quantization run."""

    T: float
    K: int
    n_per_step: Union[int, Sequence[int]] = 200
    n_max_vq: int = 50
    n_max_rmq: int = 5

    def __post_init__(self):
        if not self.T > 0.0:
            raise ValueError("T must be positive")
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if self.n_max_vq < 1 or self.n_max_rmq < 1:
            raise ValueError("iteration budgets must be >= 1")
        ns = self.n_per_step
        if np.isscalar(ns):
            if int(ns) < 1:
                raise ValueError("cardinality must be >= 1")
        else:
            ns = [int(v) for v in ns]
            if len(ns) != self.K:
                raise ValueError("n_per_step must have one entry per step")
            if any(v < 1 for v in ns):
                raise ValueError("cardinality must be >= 1")
            object.__setattr__(self, "n_per_step", tuple(ns))

    @property
    def dt(self) -> float:
        return self.T / self.K

    def n_at(self, k: int) -> int:
        """Cardinality of the step-k quantizer (1-based k)."""
        if np.isscalar(self.n_per_step):
            return int(self.n_per_step)
        return self.n_per_step[k - 1]


@dataclass(frozen=True)
class TransitionSet:
    """Transition, partial-moment and boundary-density matrices."""

    P: np.ndarray   # (N_k, N_next) transition probabilities
    M: np.ndarray   # (N_k, N_next) first-partial-moment increments
    f: np.ndarray   # (N_k, N_next - 1) densities at inner boundaries


def _validate_boundary(boundary: str):
    if boundary not in BOUNDARY_MODES:
        raise ValueError(f"boundary must be one of {BOUNDARY_MODES}, got {boundary!r}")


def _require_positive_scale(batch: UpdateBatch, boundary: str):
    if boundary != FREE and np.any(batch.m <= 0.0):
        raise RmqError(
            "absorbing/reflecting modes require a positive affine scale m "
            "for every state; got min m = %.3g" % float(np.min(batch.m))
        )


def normalized_bounds(update, bounds: RegionBounds, truncate_at_zero: bool = False):
    """Map state-space region bounds into the innovation's coordinates.

    Returns ``(lowers, uppers)`` images of the state bounds under
    z = (r - c) / m, keeping the state-space association: for m < 0 the
    images swap order and consumers must flip the inequality direction.
    With ``truncate_at_zero`` the first lower bound is replaced by the
    image of state zero, -c / m.
    """
    if update.m == 0.0:
        raise ValueError("normalized bounds need m != 0 (degenerate updates "
                         "are handled by the scheme fallback)")
    lowers = (bounds.lowers - update.c) / update.m
    uppers = (bounds.uppers - update.c) / update.m
    if truncate_at_zero:
        lowers = lowers.copy()
        lowers[0] = -update.c / update.m
    return lowers, uppers


def _state_edges(next_codewords: np.ndarray, truncated: bool) -> np.ndarray:
    edges = np.empty(next_codewords.size + 1)
    edges[0] = 0.0 if truncated else -np.inf
    edges[-1] = np.inf
    edges[1:-1] = 0.5 * (next_codewords[:-1] + next_codewords[1:])
    return edges


def _z_matrices(batch: UpdateBatch, next_codewords: np.ndarray, boundary: str):
    """P, M and inner-density matrices for one candidate next grid."""
    edges = _state_edges(next_codewords, boundary != FREE)
    if _fast.HAVE_NUMBA:
        return _fast.transition_blocks(
            edges, batch.c, batch.m, batch.lam, batch.is_ncx2,
            boundary == REFLECTING)
    z = (edges[None, :] - batch.c[:, None]) / batch.m[:, None]
    xbar = -batch.c / batch.m if boundary == REFLECTING else None
    f, F, M1 = batch.law_fFM(z, xbar)
    sgn = np.sign(batch.m)[:, None]
    P = np.maximum(sgn * (F[:, 1:] - F[:, :-1]), 0.0)
    M = M1[:, 1:] - M1[:, :-1]
    return P, M, f[:, 1:-1]


def _validate_next_grid(next_codewords, boundary: str) -> np.ndarray:
    gam = np.asarray(next_codewords, dtype=float)
    if gam.ndim != 1 or gam.size == 0:
        raise ValueError("next grid must be a nonempty 1-d vector")
    if np.any(np.diff(gam) <= 0.0):
        raise ValueError("next grid must be strictly increasing")
    if boundary != FREE and gam[0] <= 0.0:
        raise ValueError("next grid must be strictly positive under "
                         "absorbing/reflecting boundaries")
    return gam


def transition_set(prev: Quantizer, updates, next_codewords,
                   boundary: str = FREE) -> TransitionSet:
    """Transition matrices from ``prev`` onto the grid ``next_codewords``.

    Row i uses the innovation law of update i.  In ``free`` and
    ``reflecting`` modes each row sums to one; in ``absorbing`` mode row i
    sums to one minus the mass absorbed at zero from state i.
    """
    _validate_boundary(boundary)
    batch = as_batch(updates)
    if batch.size != prev.size:
        raise ValueError("updates must align with the previous quantizer")
    _require_positive_scale(batch, boundary)
    gam = _validate_next_grid(next_codewords, boundary)
    P, M, f = _z_matrices(batch, gam, boundary)
    return TransitionSet(P=P, M=M, f=f)


@dataclass
class _StepMatrices:
    P: np.ndarray
    M: np.ndarray
    f: np.ndarray


def _mixture_evaluator(prev_p: np.ndarray, batch: UpdateBatch, boundary: str):
    """Closure computing gradient/Hessian/centroids of the mixture distortion."""
    absm = np.abs(batch.m)
    pw = np.where(prev_p < PROB_FLOOR, 0.0, prev_p)
    p_c = pw * batch.c
    p_m = pw * absm
    p_f = pw / absm

    def evaluate(gam: np.ndarray) -> StepEval:
        P, M, f = _z_matrices(batch, gam, boundary)
        pP = pw @ P
        cP = p_c @ P
        mM = p_m @ M
        grad = 2.0 * (gam * pP - cP - mM)
        off = -0.5 * (p_f @ f) * np.diff(gam)
        diag = 2.0 * pP
        diag[:-1] += off
        diag[1:] += off
        mom = cP + mM
        occupied = pP > 1e-300
        cent = np.where(occupied, mom / np.where(occupied, pP, 1.0), gam)
        return StepEval(grad=grad, hess_diag=diag, hess_off=off, centroids=cent,
                        aux=_StepMatrices(P, M, f))

    return evaluate


def rmq_newton_step(next_codewords, prev: Quantizer, updates,
                    boundary: str = FREE) -> np.ndarray:
    """One safeguarded Newton step on the mixture distortion.

    Returns the updated (still strictly increasing) grid; at a stationary
    grid the output equals the input.
    """
    _validate_boundary(boundary)
    batch = as_batch(updates)
    _require_positive_scale(batch, boundary)
    gam = _validate_next_grid(next_codewords, boundary)
    evaluate = _mixture_evaluator(prev.probabilities, batch, boundary)
    out, _ = damped_newton(gam, evaluate, 1,
                           lo=0.0 if boundary != FREE else None)
    return out


def mixture_distortion(next_codewords, prev: Quantizer, updates,
                       boundary: str = FREE) -> float:
    """Distortion of the grid under the conditional mixture (diagnostic)."""
    _validate_boundary(boundary)
    batch = as_batch(updates)
    gam = _validate_next_grid(next_codewords, boundary)
    edges = _state_edges(gam, boundary != FREE)
    z = (edges[None, :] - batch.c[:, None]) / batch.m[:, None]
    xbar = -batch.c / batch.m if boundary == REFLECTING else None
    _, F, M1 = batch.law_fFM(z, xbar)
    M2 = batch.law_m2(z, xbar)
    sgn = np.sign(batch.m)[:, None]
    P = sgn * (F[:, 1:] - F[:, :-1])
    M = M1[:, 1:] - M1[:, :-1]
    dM2 = sgn * (M2[:, 1:] - M2[:, :-1])
    gc = gam[None, :] - batch.c[:, None]
    absm = np.abs(batch.m)[:, None]
    comp = gc * gc * P - 2.0 * gc * absm * M + (absm * absm) * dM2
    return float(prev.probabilities @ comp.sum(axis=1))


def implied_marginal_cdf(x, prev: Quantizer, updates, boundary: str = FREE,
                         zero_mass: float = 0.0):
    """Distribution function of the one-step mixture implied by ``prev``.

    F(x) = sum_i p_i [ H(-m_i) + sgn(m_i) F_i((x - c_i) / m_i) ] in free
    mode.  Under ``absorbing`` the result includes the atom at zero of
    size ``zero_mass`` plus the newly absorbed mass; under ``reflecting``
    each component law is reflected.  Vectorized over ``x``.
    """
    _validate_boundary(boundary)
    batch = as_batch(updates)
    _require_positive_scale(batch, boundary)
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    z = (xs[None, :] - batch.c[:, None]) / batch.m[:, None]
    p = prev.probabilities
    if boundary == FREE:
        _, F, _ = batch.law_fFM(z)
        heavi = (batch.m < 0.0).astype(float)[:, None]
        sgn = np.sign(batch.m)[:, None]
        out = p @ (heavi + sgn * F)
    elif boundary == ABSORBING:
        _, F, _ = batch.law_fFM(z)
        out = zero_mass + p @ F
        out = np.where(xs < 0.0, 0.0, out)
    else:
        _, F, _ = batch.law_fFM(z, -batch.c / batch.m)
        out = p @ F
        out = np.where(xs < 0.0, 0.0, out)
    out = np.clip(out, 0.0, 1.0)
    return out if np.ndim(x) else float(out[0])


class QuantizationSequence:
    """Per-step quantizers, probabilities and transition matrices.

    In absorbing mode every stored grid carries the zero state in front
    (codeword 0 with the accumulated absorbed mass) and the transition
    matrices carry the matching absorbing row/column.  Instances are
    immutable by convention once built and safe to share across threads.
    """

    def __init__(self, *, scheme: str, boundary: str, model_kind: str,
                 s0: float, horizon: float, codewords: List[np.ndarray],
                 probabilities: List[np.ndarray],
                 transitions: List[np.ndarray],
                 zero_state_mass: Optional[np.ndarray] = None):
        self.scheme = scheme
        self.boundary = boundary
        self.model_kind = model_kind
        self.s0 = float(s0)
        self.horizon = float(horizon)
        self.codewords = codewords
        self.probabilities = probabilities
        self.transitions = transitions
        self.zero_state_mass = zero_state_mass

    @property
    def n_steps(self) -> int:
        return len(self.codewords)

    @property
    def dt(self) -> float:
        return self.horizon / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(1, self.n_steps + 1)

    def terminal_mean(self) -> float:
        """First moment of the final-step quantizer."""
        return float(self.probabilities[-1] @ self.codewords[-1])

    def live_quantizer(self, k: int):
        """(Quantizer, zero mass) of step k (1-based), augmentation stripped."""
        cw = self.codewords[k - 1]
        p = self.probabilities[k - 1]
        if self.boundary == ABSORBING:
            return Quantizer(cw[1:], p[1:]), float(p[0])
        return Quantizer(cw, p), 0.0

    # -- serialization ---------------------------------------------------

    def to_json_dict(self) -> dict:
        doc = {
            "schema": SEQUENCE_SCHEMA,
            "model": self.model_kind,
            "scheme": self.scheme,
            "boundary": self.boundary,
            "s0": self.s0,
            "horizon": self.horizon,
            "steps": [
                {
                    "step": k + 1,
                    "time": (k + 1) * self.dt,
                    "codewords": self.codewords[k].tolist(),
                    "probabilities": self.probabilities[k].tolist(),
                }
                for k in range(self.n_steps)
            ],
            "transitions": [P.tolist() for P in self.transitions],
        }
        if self.zero_state_mass is not None:
            doc["zero_state_mass"] = self.zero_state_mass.tolist()
        return doc

    def dump_json(self, fh: IO[str]):
        json.dump(self.to_json_dict(), fh)
        fh.write("\n")

    def dump_csv(self, fh: IO[str]):
        """Grid dump: one row per codeword, 17 significant digits."""
        fh.write(f"# schema: {GRID_SCHEMA}\n")
        fh.write("step,time,index,codeword,probability\n")
        for k in range(self.n_steps):
            t = (k + 1) * self.dt
            cw = self.codewords[k]
            pr = self.probabilities[k]
            for j in range(cw.size):
                fh.write(f"{k + 1},{t:.17g},{j},{cw[j]:.17g},{pr[j]:.17g}\n")

    @classmethod
    def from_json_dict(cls, doc: dict) -> "QuantizationSequence":
        if doc.get("schema") != SEQUENCE_SCHEMA:
            raise ValueError(f"unsupported sequence schema {doc.get('schema')!r}")
        zs = doc.get("zero_state_mass")
        return cls(
            scheme=doc["scheme"],
            boundary=doc["boundary"],
            model_kind=doc["model"],
            s0=doc["s0"],
            horizon=doc["horizon"],
            codewords=[np.asarray(s["codewords"], dtype=float) for s in doc["steps"]],
            probabilities=[np.asarray(s["probabilities"], dtype=float)
                           for s in doc["steps"]],
            transitions=[np.asarray(P, dtype=float) for P in doc["transitions"]],
            zero_state_mass=None if zs is None else np.asarray(zs, dtype=float),
        )


def load_sequence_json(fh: IO[str]) -> QuantizationSequence:
    return QuantizationSequence.from_json_dict(json.load(fh))


def _step1_guess(batch: UpdateBatch, n: int, boundary: str) -> np.ndarray:
    """Map the single-law starting grid through the first affine update."""
    if batch.is_ncx2[0]:
        z0 = initial_guess("ncx2", n, float(batch.lam[0]))
    else:
        z0 = initial_guess("normal", n)
    g = np.sort(batch.m[0] * z0 + batch.c[0])
    if boundary != FREE and g[0] <= 0.0:
        if g[-1] <= 0.0:
            raise RmqError("first-step guess lies entirely below zero; the "
                           "model/step size is incompatible with a zero boundary")
        lo = g[-1] * 1e-8
        g = lo + (g - g[0]) * (g[-1] - lo) / (g[-1] - g[0])
    return g


def _resample_grid(grid: np.ndarray, n: int) -> np.ndarray:
    if grid.size == n:
        return grid
    src = np.linspace(0.0, 1.0, grid.size)
    return np.interp(np.linspace(0.0, 1.0, n), src, grid)


def _check_domain(gam: np.ndarray, model: SdeModel, step: int):
    """Abort before the next step would evaluate coefficients off-domain."""
    lo, hi = model.coef_domain
    if np.all(np.isfinite(gam)) and np.all(gam > lo) and np.all(gam < hi):
        return
    bad = float(np.min(gam)) if np.all(np.isfinite(gam)) else np.nan
    raise CodewordDomainError(
        step,
        f"step {step}: quantizer left the coefficient domain ({lo:g}, {hi:g}) "
        f"(min codeword {bad:.6g}); for processes that can reach zero, "
        f"rerun with an absorbing or reflecting boundary",
    )


def rmq_run(model: SdeModel, scheme: str, s0: float, sched: Schedule,
            boundary: str = FREE) -> QuantizationSequence:
    """Quantize the discretized diffusion over the whole schedule.

    Step one quantizes the exact one-step conditional law from ``s0``
    (a single-component mixture) with the schedule's VQ iteration budget;
    every later step starts from the previous grid and spends the smaller
    recursive budget.  Probabilities are propagated through the transition
    matrices recomputed at each accepted grid.
    """
    _validate_boundary(boundary)
    if scheme not in SCHEME_BUILDERS:
        raise ValueError(f"unknown scheme {scheme!r}; expected one of "
                         f"{tuple(SCHEME_BUILDERS)}")
    lo_dom, hi_dom = model.state_domain
    if not (lo_dom < s0 < hi_dom):
        raise ValueError("s0 must lie inside the model's state domain")
    build = SCHEME_BUILDERS[scheme]
    dt = sched.dt
    newton_lo = 0.0 if boundary != FREE else None

    prev_cw = np.array([float(s0)])
    prev_p = np.array([1.0])
    zero_mass = 0.0

    codewords: List[np.ndarray] = []
    probabilities: List[np.ndarray] = []
    transitions: List[np.ndarray] = []
    zero_masses: List[float] = []

    for k in range(1, sched.K + 1):
        batch = build(model, prev_cw, dt)
        _require_positive_scale(batch, boundary)
        n_next = sched.n_at(k)
        if k == 1:
            guess = _step1_guess(batch, n_next, boundary)
            n_iter = sched.n_max_vq
        else:
            guess = _resample_grid(prev_cw, n_next)
            n_iter = sched.n_max_rmq
        evaluate = _mixture_evaluator(prev_p, batch, boundary)
        gam, ev = damped_newton(guess, evaluate, n_iter, lo=newton_lo)
        _check_domain(gam, model, k)
        P = ev.aux.P
        p_next = prev_p @ P
        if boundary == ABSORBING:
            absorbed = np.maximum(1.0 - P.sum(axis=1), 0.0)
            zero_mass = zero_mass + float(prev_p @ absorbed)
            aug = np.zeros((P.shape[0] + 1, P.shape[1] + 1))
            aug[0, 0] = 1.0
            aug[1:, 0] = absorbed
            aug[1:, 1:] = P
            codewords.append(np.concatenate([[0.0], gam]))
            probabilities.append(np.concatenate([[zero_mass], p_next]))
            if k > 1:
                transitions.append(aug)
            zero_masses.append(zero_mass)
        else:
            codewords.append(gam)
            probabilities.append(p_next)
            if k > 1:
                transitions.append(P)
        prev_cw, prev_p = gam, p_next

    # Re-derive the stored augmented probabilities from the augmented
    # transition products so the Markov identity holds exactly as stored.
    if boundary == ABSORBING:
        run_p = probabilities[0]
        for idx, P in enumerate(transitions, start=2):
            run_p = run_p @ P
            probabilities[idx - 1] = run_p
            zero_masses[idx - 1] = float(run_p[0])

    return QuantizationSequence(
        scheme=scheme,
        boundary=boundary,
        model_kind=model.kind,
        s0=s0,
        horizon=sched.T,
        codewords=codewords,
        probabilities=probabilities,
        transitions=transitions,
        zero_state_mass=np.asarray(zero_masses) if boundary == ABSORBING else None,
    )
