"""Optimal quantization of a scalar distribution by Newton-Raphson.

A quantizer is a strictly increasing grid of N codewords; its Voronoi
regions on the support are the intervals between consecutive midpoints.
The squared-error distortion, its gradient and its tridiagonal Hessian
all reduce to differences of the distribution's cdf and lower partial
expectations across the region boundaries:

    D        = sum_i [ dM2_i - 2 g_i dM1_i + g_i^2 dF_i ]
    dD/dg_i  = 2 g_i dF_i - 2 dM1_i
    d2D/dg_i^2        = 2 dF_i + (f(r+_i)(g_i - g_{i+1}) + f(r-_i)(g_{i-1} - g_i)) / 2
    d2D/dg_i dg_{i+1} = f(r+_i)(g_i - g_{i+1}) / 2

where dF_i = F(r+_i) - F(r-_i) etc.  Setting the gradient to zero is the
centroid (Lloyd) condition: each codeword equals the conditional mean of
its region.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ._newton import StepEval, damped_newton
from .distributions import ScalarDistribution


@dataclass(frozen=True)
class Quantizer:
    """Strictly increasing codewords with their region probabilities."""

    codewords: np.ndarray
    probabilities: np.ndarray

    def __post_init__(self):
        cw = np.asarray(self.codewords, dtype=float)
        pr = np.asarray(self.probabilities, dtype=float)
        object.__setattr__(self, "codewords", cw)
        object.__setattr__(self, "probabilities", pr)
        if cw.ndim != 1 or pr.shape != cw.shape:
            raise ValueError("codewords and probabilities must be 1-d and aligned")
        if cw.size == 0:
            raise ValueError("quantizer must contain at least one codeword")
        if np.any(np.diff(cw) <= 0.0):
            raise ValueError("codewords must be strictly increasing")
        if np.any(pr < -1e-12) or np.any(pr > 1.0 + 1e-12):
            raise ValueError("probabilities must lie in [0, 1]")

    @property
    def size(self) -> int:
        return self.codewords.shape[0]


@dataclass(frozen=True)
class RegionBounds:
    """Per-region lower/upper boundaries (Voronoi cells of the grid)."""

    lowers: np.ndarray
    uppers: np.ndarray

    @property
    def edges(self) -> np.ndarray:
        """The N+1 distinct boundary points, first lower through last upper."""
        return np.concatenate([self.lowers, self.uppers[-1:]])


def region_boundaries(codewords, support=(-np.inf, np.inf)) -> RegionBounds:
    """Voronoi region bounds: midpoints inside, support ends outside."""
    gam = np.asarray(codewords, dtype=float)
    if gam.ndim != 1 or gam.size == 0:
        raise ValueError("codewords must be a nonempty 1-d vector")
    if np.any(np.diff(gam) <= 0.0):
        raise ValueError("codewords must be strictly increasing")
    lo, hi = support
    if not (gam[0] > lo and gam[-1] < hi):
        raise ValueError("codewords must lie strictly inside the support")
    edges = np.empty(gam.size + 1)
    edges[0] = lo
    edges[-1] = hi
    edges[1:-1] = 0.5 * (gam[:-1] + gam[1:])
    if np.any(np.diff(edges) <= 0.0):
        raise ValueError("codewords are too close: region boundaries collapse")
    return RegionBounds(lowers=edges[:-1], uppers=edges[1:])


def _edge_diffs(dist: ScalarDistribution, edges: np.ndarray):
    """cdf and M1 increments per region, plus pdf at the inner edges."""
    F = dist.cdf(edges)
    M1 = dist.m1(edges)
    f_inner = dist.pdf(edges[1:-1])
    return np.diff(F), np.diff(M1), f_inner


def distortion(dist: ScalarDistribution, codewords) -> float:
    """Expected squared quantization error of the grid under ``dist``.

    Requires the distribution's second lower partial expectation.
    """
    if dist.m2 is None:
        raise ValueError("distortion needs the distribution's m2 function")
    gam = np.asarray(codewords, dtype=float)
    edges = region_boundaries(gam, dist.support).edges
    dF, dM1, _ = _edge_diffs(dist, edges)
    dM2 = np.diff(dist.m2(edges))
    return float(np.sum(dM2 - 2.0 * gam * dM1 + gam * gam * dF))


def distortion_gradient(dist: ScalarDistribution, codewords) -> np.ndarray:
    """Gradient of the distortion with respect to each codeword."""
    gam = np.asarray(codewords, dtype=float)
    edges = region_boundaries(gam, dist.support).edges
    dF, dM1, _ = _edge_diffs(dist, edges)
    return 2.0 * gam * dF - 2.0 * dM1


def distortion_hessian(dist: ScalarDistribution, codewords) -> np.ndarray:
    """Dense symmetric tridiagonal Hessian of the distortion."""
    gam = np.asarray(codewords, dtype=float)
    edges = region_boundaries(gam, dist.support).edges
    dF, _, f_inner = _edge_diffs(dist, edges)
    off = 0.5 * f_inner * (gam[:-1] - gam[1:])
    diag = 2.0 * dF
    diag[:-1] += off
    diag[1:] += off
    hess = np.diag(diag)
    idx = np.arange(gam.size - 1)
    hess[idx, idx + 1] = off
    hess[idx + 1, idx] = off
    return hess


def _evaluate(dist: ScalarDistribution, gam: np.ndarray) -> StepEval:
    edges = np.empty(gam.size + 1)
    edges[0], edges[-1] = dist.support
    edges[1:-1] = 0.5 * (gam[:-1] + gam[1:])
    dF, dM1, f_inner = _edge_diffs(dist, edges)
    grad = 2.0 * gam * dF - 2.0 * dM1
    off = 0.5 * f_inner * (gam[:-1] - gam[1:])
    diag = 2.0 * dF
    diag[:-1] += off
    diag[1:] += off
    occupied = dF > 1e-300
    cent = np.where(occupied, dM1 / np.where(occupied, dF, 1.0), gam)
    return StepEval(grad=grad, hess_diag=diag, hess_off=off,
                    centroids=cent, aux=dF)


def newton_quantize(dist: ScalarDistribution, gamma0, n_max: int) -> Quantizer:
    """Quantize ``dist`` starting from the grid ``gamma0``.

    Runs at most ``n_max`` safeguarded Newton iterations (early exit once
    the gradient sup-norm falls below 1e-12) and returns the final grid
    with the probabilities of its regions.
    """
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    gam = np.asarray(gamma0, dtype=float)
    region_boundaries(gam, dist.support)  # validates the start grid
    lo, hi = dist.support
    gam, ev = damped_newton(
        gam, lambda g: _evaluate(dist, g), n_max,
        lo=None if np.isneginf(lo) else lo,
        hi=None if np.isposinf(hi) else hi,
    )
    return Quantizer(codewords=gam, probabilities=np.maximum(ev.aux, 0.0))


def initial_guess(family: str, n: int, lam: Optional[float] = None) -> np.ndarray:
    """Starting grids that put Newton in the basin of attraction.

    ``normal``: n equally spaced points spanning about +/-2.75.
    ``ncx2``: squares of an affine ramp whose placement switches on
    sqrt(lam) = 2.5, matching the bimodal-to-Gaussian shape transition of
    the 1-dof noncentral chi-squared family.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    k = np.arange(1, n + 1, dtype=float)
    if family == "normal":
        return 5.5 * k / (n + 1) - 2.75
    if family == "ncx2":
        if lam is None or lam < 0.0:
            raise ValueError("ncx2 initial guess needs lam >= 0")
        sl = np.sqrt(lam)
        if sl < 2.5:
            return ((3.0 + sl) * k / n) ** 2
        return (5.0 * k / (n + 1) - 2.5 + sl) ** 2
    raise ValueError(f"unknown family {family!r}")
