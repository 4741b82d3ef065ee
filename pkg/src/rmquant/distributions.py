"""Scalar distribution kernels: pdf, cdf and lower partial expectations.

Everything the quantization engine needs from a distribution is the triple

    f(x)   = density,
    F(x)   = P(X <= x),
    M1(x)  = E[X * 1{X < x}]   (first lower partial expectation),

plus, for distortion estimates only, M2(x) = E[X^2 * 1{X < x}].  Two laws
are supported in closed form: the standard normal and the noncentral
chi-squared with one degree of freedom, which can be written entirely in
terms of the normal pdf/cdf.  A reflection transform folds mass below a
boundary back onto the support, again in closed form.

All kernels are vectorized over numpy arrays, accept +/-inf arguments and
return the exact limit values there (no NaNs leak out of limit cases).
Phi is evaluated through scipy's erfc-based ``ndtr``, accurate to close to
machine precision over the whole real line.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np
from scipy.special import ndtr

_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)

# Real-line support, used as the default for the standard normal.
REAL_LINE = (-np.inf, np.inf)


def norm_pdf(x):
    """Standard normal density; exact 0 at +/-inf."""
    x = np.asarray(x, dtype=float)
    return _INV_SQRT_2PI * np.exp(-0.5 * x * x)


def norm_cdf(x):
    """Standard normal distribution function (erfc-based)."""
    return ndtr(np.asarray(x, dtype=float))


def norm_m1(x):
    """First lower partial expectation of the standard normal: -pdf(x)."""
    return -norm_pdf(x)


def norm_m2(x):
    """Second lower partial expectation of the standard normal.

    M2(x) = F(x) - x * f(x); the x*f(x) term vanishes in both tails.
    """
    x = np.asarray(x, dtype=float)
    xf = np.where(np.isfinite(x), x, 0.0)
    return ndtr(x) - xf * norm_pdf(x)


def _split_sqrt(x, lam):
    """sqrt helpers for the 1-dof noncentral chi-squared kernels.

    Returns (positive mask, finite mask, sqrt(x), x_plus, x_minus) where
    x_plus/minus are +/-sqrt(x) - sqrt(lam), computed on a safely clipped
    copy of x so that nonpositive or infinite entries never produce NaN
    intermediates (those entries are masked out by the callers).
    """
    x = np.asarray(x, dtype=float)
    pos = x > 0.0
    finite = np.isfinite(x)
    xs = np.sqrt(np.where(pos & finite, x, 1.0))
    sl = np.sqrt(lam)
    return pos, finite, xs, xs - sl, -xs - sl


def ncx2_pdf(x, lam):
    """Density of the noncentral chi-squared law with 1 dof.

    f(x) = (phi(sqrt(x) - sqrt(lam)) + phi(-sqrt(x) - sqrt(lam))) / (2 sqrt(x))
    on x > 0, with the boundary convention f(0) = 0 and f(inf) = 0.
    ``lam`` broadcasts against ``x`` (e.g. one noncentrality per row).
    """
    pos, finite, xs, xp, xm = _split_sqrt(x, lam)
    val = (norm_pdf(xp) + norm_pdf(xm)) / (2.0 * xs)
    return np.where(pos & finite, val, 0.0)


def ncx2_cdf(x, lam):
    """Distribution function of the 1-dof noncentral chi-squared law.

    F(x) = Phi(sqrt(x) - sqrt(lam)) - Phi(-sqrt(x) - sqrt(lam)); 0 for
    x <= 0 and 1 at x = inf.
    """
    pos, finite, _, xp, xm = _split_sqrt(x, lam)
    val = ndtr(xp) - ndtr(xm)
    return np.where(pos, np.where(finite, val, 1.0), 0.0)


def ncx2_m1(x, lam):
    """First lower partial expectation of the 1-dof noncentral chi-squared.

    M1(x) = (1 + lam) * (Phi(x+) - Phi(x-)) + phi(x+) x- - phi(x-) x+
    with x+- = +-sqrt(x) - sqrt(lam).  Limits: M1(0) = 0, M1(inf) = 1 + lam.
    """
    lam = np.asarray(lam, dtype=float)
    pos, finite, _, xp, xm = _split_sqrt(x, lam)
    val = (1.0 + lam) * (ndtr(xp) - ndtr(xm)) + norm_pdf(xp) * xm - norm_pdf(xm) * xp
    return np.where(pos, np.where(finite, val, 1.0 + lam), 0.0)


def _phi_poly_ints(z):
    """Antiderivatives of z^k * phi(z) for k = 0..4, limit-safe at +/-inf."""
    z = np.asarray(z, dtype=float)
    F = ndtr(z)
    p = norm_pdf(z)
    zf = np.where(np.isfinite(z), z, 0.0)
    i0 = F
    i1 = -p
    i2 = F - zf * p
    i3 = -(zf * zf + 2.0) * p
    i4 = 3.0 * F - (zf ** 3 + 3.0 * zf) * p
    return i0, i1, i2, i3, i4


def ncx2_m2(x, lam):
    """Second lower partial expectation of the 1-dof noncentral chi-squared.

    With X = (Z + mu)^2, mu = sqrt(lam), expand E[(Z+mu)^4 1{x- < Z < x+}]
    binomially into moments of the truncated normal.  M2(inf) equals
    E[X^2] = lam^2 + 6 lam + 3.
    """
    lam = np.asarray(lam, dtype=float)
    mu = np.sqrt(lam)
    pos, finite, _, xp, xm = _split_sqrt(x, lam)
    d = [u - v for u, v in zip(_phi_poly_ints(xp), _phi_poly_ints(xm))]
    val = (mu ** 4) * d[0] + 4.0 * mu ** 3 * d[1] + 6.0 * mu ** 2 * d[2] \
        + 4.0 * mu * d[3] + d[4]
    full = lam * lam + 6.0 * lam + 3.0
    out = np.where(pos, np.where(finite, val, full), 0.0)
    return out


@dataclass(frozen=True)
class ScalarDistribution:
    """Evaluable (pdf, cdf, m1) triple on a stated support interval.

    ``m2`` is optional and only needed for numerical distortion estimates.
    All callables are vectorized over numpy arrays and return exact limit
    values at the support endpoints.  Instances are immutable and safe for
    concurrent reads.
    """

    pdf: Optional[Callable]
    cdf: Callable
    m1: Callable
    m2: Optional[Callable] = None
    support: Tuple[float, float] = REAL_LINE


@dataclass(frozen=True)
class Ncx2Params:
    """Noncentrality parameter of the 1-dof noncentral chi-squared law."""

    lam: float

    def __post_init__(self):
        if not self.lam >= 0.0:
            raise ValueError(f"noncentrality must be >= 0, got {self.lam}")


def std_normal_funcs() -> ScalarDistribution:
    """Standard normal triple (phi, Phi, -phi) on the real line."""
    return ScalarDistribution(
        pdf=norm_pdf, cdf=norm_cdf, m1=norm_m1, m2=norm_m2, support=REAL_LINE
    )


def ncx2_1_funcs(params: Ncx2Params) -> ScalarDistribution:
    """Noncentral chi-squared (1 dof) triple on [0, inf).

    All three functions return 0 for x <= 0 and their exact limits at
    infinity: F(inf) = 1, M1(inf) = 1 + lam.
    """
    lam = float(params.lam)
    return ScalarDistribution(
        pdf=lambda x: ncx2_pdf(x, lam),
        cdf=lambda x: ncx2_cdf(x, lam),
        m1=lambda x: ncx2_m1(x, lam),
        m2=lambda x: ncx2_m2(x, lam),
        support=(0.0, np.inf),
    )


def reflect_funcs(base: ScalarDistribution, xbar: float) -> ScalarDistribution:
    """Fold the mass of ``base`` below ``xbar`` back onto [xbar, inf).

    The reflected functions are

        f~(x)  = f(x) + f(2 xbar - x)
        F~(x)  = F(x) - F(2 xbar - x)
        M1~(x) = M1(x) + M1(2 xbar - x) - 2 xbar F(2 xbar - x)

    The M1~ form drops per-distribution constants: quantization consumes
    only differences of M1, so the constants cancel and are omitted.  The
    same reduction applies to the optional M2~.  Inputs below xbar are
    clamped to xbar, so differences across the boundary vanish.
    """
    hi = base.support[1]
    if not xbar < hi:
        raise ValueError("reflection point must lie below the support's upper end")
    xb = float(xbar)

    def _clamp(x):
        return np.maximum(np.asarray(x, dtype=float), xb)

    def pdf(x):
        x = np.asarray(x, dtype=float)
        val = base.pdf(x) + base.pdf(2.0 * xb - x)
        return np.where(x >= xb, val, 0.0)

    def cdf(x):
        x = _clamp(x)
        return base.cdf(x) - base.cdf(2.0 * xb - x)

    def m1(x):
        x = _clamp(x)
        xr = 2.0 * xb - x
        return base.m1(x) + base.m1(xr) - 2.0 * xb * base.cdf(xr)

    m2 = None
    if base.m2 is not None:
        def m2(x):
            x = _clamp(x)
            xr = 2.0 * xb - x
            return (base.m2(x) - base.m2(xr)
                    + 4.0 * xb * base.m1(xr) - 4.0 * xb * xb * base.cdf(xr))

    return ScalarDistribution(pdf=pdf, cdf=cdf, m1=m1, m2=m2, support=(xb, hi))
