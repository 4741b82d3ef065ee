"""One-step scheme updates written in affine form U = m Z + c.

Conditional on the current state, each supported scheme's one-step update
is an affine transform of a single innovation Z with a known law:

    euler     U = b sqrt(dt) Z + (x + a dt),                Z ~ N(0, 1)
    milstein  U = (b b' dt / 2) Z + c,                      Z ~ ncx2(1, lam)
    weak2     U = (b b' dt / 2) Z + c,                      Z ~ ncx2(1, lam)

For the two higher-order schemes the quadratic Z^2 term is absorbed by
completing the square, which turns the Gaussian innovation into a
noncentral chi-squared one with one degree of freedom.  The offsets and
noncentralities are

    milstein  c   = x + (a - b b'/2) dt - b / (2 b')
              lam = 1 / (dt b'^2)
    weak2     c   = x + (a - b b'/2) dt + (a a' + a'' b^2 / 2) dt^2 / 2
                    - beta^2 / (2 b b')
              lam = beta^2 / (b^2 b'^2 dt)
              beta = b + (a' b + a b' + b'' b^2 / 2) dt / 2

Both completions reproduce the scheme's conditional mean exactly:
x + a dt for milstein, plus (a a' + a'' b^2 / 2) dt^2 / 2 for weak2.
Where b b' dt is numerically degenerate the noncentral form is
meaningless (lam diverges); those states fall back to the euler update
and are flagged.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, List, Sequence, Union

import numpy as np
from scipy.special import ndtr

from . import _fast
from .distributions import _split_sqrt, ncx2_m2, norm_m2, norm_pdf
from .sde_models import SdeModel

GAUSSIAN = "gaussian"
NCX2 = "ncx2"

# Below this, b b' dt carries no information relative to the state scale.
DEGENERACY_THRESHOLD = 1e-12


@dataclass(frozen=True)
class InnovationLaw:
    """Law of the innovation Z: standard normal or ncx2 with 1 dof."""

    kind: str
    lam: float = 0.0

    def __post_init__(self):
        if self.kind not in (GAUSSIAN, NCX2):
            raise ValueError(f"unknown innovation kind {self.kind!r}")
        if self.lam < 0.0:
            raise ValueError("noncentrality must be >= 0")


@dataclass(frozen=True)
class AffineUpdate:
    """One-step update U = m Z + c for a single originating state.

    ``fallback`` marks higher-order updates that degenerated to euler.
    ``m`` may be negative in general; consumers must apply the sign
    conventions when turning state intervals into Z intervals.
    """

    m: float
    c: float
    law: InnovationLaw
    fallback: bool = False

    def mean(self) -> float:
        ez = 1.0 + self.law.lam if self.law.kind == NCX2 else 0.0
        return self.m * ez + self.c

    def variance(self) -> float:
        vz = 2.0 * (1.0 + 2.0 * self.law.lam) if self.law.kind == NCX2 else 1.0
        return self.m * self.m * vz


class UpdateBatch:
    """Vectorized view of the per-state updates for one time step.

    Stores the affine coefficients and innovation parameters as arrays and
    evaluates the innovation (pdf, cdf, m1) row-wise on matrices of
    normalized arguments; rows may mix Gaussian and noncentral laws.  An
    optional per-row reflection point folds each law's mass below it back
    onto the support.
    """

    def __init__(self, m, c, lam, is_ncx2, fallback):
        self.m = np.asarray(m, dtype=float)
        self.c = np.asarray(c, dtype=float)
        self.lam = np.asarray(lam, dtype=float)
        self.is_ncx2 = np.asarray(is_ncx2, dtype=bool)
        self.fallback = np.asarray(fallback, dtype=bool)

    @property
    def size(self) -> int:
        return self.m.shape[0]

    @classmethod
    def from_updates(cls, updates: Sequence[AffineUpdate]) -> "UpdateBatch":
        m = [u.m for u in updates]
        c = [u.c for u in updates]
        lam = [u.law.lam for u in updates]
        kinds = [u.law.kind == NCX2 for u in updates]
        fb = [u.fallback for u in updates]
        return cls(m, c, lam, kinds, fb)

    def to_updates(self) -> List[AffineUpdate]:
        out = []
        for i in range(self.size):
            kind = NCX2 if self.is_ncx2[i] else GAUSSIAN
            lam = float(self.lam[i]) if self.is_ncx2[i] else 0.0
            out.append(AffineUpdate(m=float(self.m[i]), c=float(self.c[i]),
                                    law=InnovationLaw(kind, lam),
                                    fallback=bool(self.fallback[i])))
        return out

    def innovation_mean(self) -> np.ndarray:
        return np.where(self.is_ncx2, 1.0 + self.lam, 0.0)

    # -- row-parameterized law evaluation -------------------------------

    @property
    def _homogeneous(self):
        """'gaussian' / 'ncx2' when all rows share a law kind, else None."""
        if not np.any(self.is_ncx2):
            return GAUSSIAN
        if np.all(self.is_ncx2):
            return NCX2
        return None

    def _base_fFM(self, z):
        """(pdf, cdf, m1) of each row's innovation at the matrix z."""
        z = np.asarray(z, dtype=float)
        if not np.any(self.is_ncx2):
            p = norm_pdf(z)
            return p, ndtr(z), -p
        lam = self.lam[:, None]
        pos, finite, xs, xp, xm = _split_sqrt(z, lam)
        Pp, Pm = ndtr(xp), ndtr(xm)
        pp, pm = norm_pdf(xp), norm_pdf(xm)
        live = pos & finite
        f = np.where(live, (pp + pm) / (2.0 * xs), 0.0)
        F = np.where(pos, np.where(finite, Pp - Pm, 1.0), 0.0)
        M1 = np.where(
            pos,
            np.where(finite, (1.0 + lam) * (Pp - Pm) + pp * xm - pm * xp,
                     1.0 + lam),
            0.0,
        )
        if np.all(self.is_ncx2):
            return f, F, M1
        # Mixed rows (euler fallback inside a higher-order step).
        g = norm_pdf(z)
        mask = self.is_ncx2[:, None]
        return (np.where(mask, f, g), np.where(mask, F, ndtr(z)),
                np.where(mask, M1, -g))

    def law_fFM(self, z, xbar=None):
        """Innovation (pdf, cdf, m1) at z; reflected about xbar if given.

        ``z`` has one row per state; ``xbar`` (if any) is one reflection
        point per row.  The reflected m1 omits per-row constants, which
        cancel in the differences consumed by the quantization engine.
        """
        kind = self._homogeneous
        if _fast.HAVE_NUMBA and kind is not None and np.ndim(z) == 2:
            zc = np.ascontiguousarray(z, dtype=float)
            if xbar is None:
                if kind == GAUSSIAN:
                    return _fast.gaussian_triple(zc)
                return _fast.ncx2_triple(zc, np.ascontiguousarray(self.lam))
            xb = np.ascontiguousarray(xbar, dtype=float)
            if kind == GAUSSIAN:
                return _fast.gaussian_triple_reflected(zc, xb)
            return _fast.ncx2_triple_reflected(
                zc, np.ascontiguousarray(self.lam), xb)
        if xbar is None:
            return self._base_fFM(z)
        xb = np.asarray(xbar, dtype=float)[:, None]
        f1, F1, M11 = self._base_fFM(z)
        zr = 2.0 * xb - np.asarray(z, dtype=float)
        f2, F2, M12 = self._base_fFM(zr)
        return f1 + f2, F1 - F2, M11 + M12 - 2.0 * xb * F2

    def law_m2(self, z, xbar=None):
        """Second lower partial expectation, for distortion estimates."""
        def base(v):
            if not np.any(self.is_ncx2):
                return norm_m2(v)
            nc = ncx2_m2(v, self.lam[:, None])
            if np.all(self.is_ncx2):
                return nc
            return np.where(self.is_ncx2[:, None], nc, norm_m2(v))

        if xbar is None:
            return base(z)
        xb = np.asarray(xbar, dtype=float)[:, None]
        zr = 2.0 * xb - np.asarray(z, dtype=float)
        _, Fr, M1r = self._base_fFM(zr)
        return base(z) - base(zr) + 4.0 * xb * M1r - 4.0 * xb * xb * Fr


def as_batch(updates: Union[UpdateBatch, Iterable[AffineUpdate]]) -> UpdateBatch:
    if isinstance(updates, UpdateBatch):
        return updates
    return UpdateBatch.from_updates(list(updates))


def euler_updates(model: SdeModel, x, dt: float) -> UpdateBatch:
    """Vectorized euler updates for the states ``x``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if not dt > 0.0:
        raise ValueError("dt must be positive")
    m = model.b(x) * np.sqrt(dt)
    c = x + model.a(x) * dt
    zeros = np.zeros_like(x)
    return UpdateBatch(m, c, zeros, zeros.astype(bool), zeros.astype(bool))


def _completed_square(model: SdeModel, x, dt: float, weak2: bool) -> UpdateBatch:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if not dt > 0.0:
        raise ValueError("dt must be positive")
    a = model.a(x)
    b = model.b(x)
    bx = model.b_x(x)
    bbx = b * bx
    degen = np.abs(bbx) * dt < DEGENERACY_THRESHOLD * np.maximum(1.0, np.abs(x))
    safe_bbx = np.where(degen, 1.0, bbx)
    safe_bx = np.where(degen, 1.0, bx)

    m = 0.5 * bbx * dt
    if weak2:
        ax = model.a_x(x)
        axx = model.a_xx(x)
        bxx = model.b_xx(x)
        beta = b + 0.5 * (ax * b + a * bx + 0.5 * bxx * b * b) * dt
        c = (x + (a - 0.5 * bbx) * dt
             + 0.5 * (a * ax + 0.5 * axx * b * b) * dt * dt
             - beta * beta / (2.0 * safe_bbx))
        lam = (beta / (safe_bbx * np.sqrt(dt))) ** 2
    else:
        c = x + (a - 0.5 * bbx) * dt - 0.5 * b / safe_bx
        lam = 1.0 / (dt * safe_bx ** 2)

    if np.any(degen):
        m = np.where(degen, b * np.sqrt(dt), m)
        c = np.where(degen, x + a * dt, c)
        lam = np.where(degen, 0.0, lam)
    return UpdateBatch(m, c, lam, ~degen, degen)


def milstein_updates(model: SdeModel, x, dt: float) -> UpdateBatch:
    """Vectorized milstein updates (noncentral chi-squared innovations)."""
    return _completed_square(model, x, dt, weak2=False)


def weak2_updates(model: SdeModel, x, dt: float) -> UpdateBatch:
    """Vectorized simplified weak order 2.0 updates."""
    return _completed_square(model, x, dt, weak2=True)


def _single(batch: UpdateBatch) -> AffineUpdate:
    return batch.to_updates()[0]


def euler_update(model: SdeModel, gamma: float, dt: float) -> AffineUpdate:
    """Euler update of one state: m = b sqrt(dt), c = gamma + a dt."""
    return _single(euler_updates(model, [gamma], dt))


def milstein_update(model: SdeModel, gamma: float, dt: float) -> AffineUpdate:
    """Milstein update of one state, completed-square form."""
    return _single(milstein_updates(model, [gamma], dt))


def weak2_update(model: SdeModel, gamma: float, dt: float) -> AffineUpdate:
    """Simplified weak order 2.0 update of one state."""
    return _single(weak2_updates(model, [gamma], dt))


SCHEME_BUILDERS = {
    "euler": euler_updates,
    "milstein": milstein_updates,
    "weak2": weak2_updates,
}
