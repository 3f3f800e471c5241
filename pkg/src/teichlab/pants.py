"""Right-angled hexagon and pentagon trigonometry of a pair of pants.

For boundary lengths ``(x, y, z)`` of the curves ``(alpha0, beta0, beta1)`` the
common perpendicular ``T`` between ``alpha0`` and ``beta0`` meets the
perpendicular ``D`` from ``beta1`` to itself at a point ``p0``.  The solver
returns ``t = d(p0, alpha0)``, ``t_star = d(p0, beta0)`` and
``ell_star = d(p0, beta1)``, which satisfy::

    cosh(t + t_star) = (cosh(x/2) cosh(y/2) + cosh(z/2)) / (sinh(x/2) sinh(y/2))
    cosh(t)          = coth(x/2) coth(ell_star)
    cosh(t_star)     = coth(y/2) coth(ell_star)

Writing ``u = coth(ell_star)`` and ``v = u**2 - 1`` the hexagon relation
becomes ``v + sqrt((v + sech(x/2)**2) (v + sech(y/2)**2)) = cosh(z/2) / (cosh(x/2) cosh(y/2))``,
whose left side is increasing in ``v``; squaring gives the unique root::

    v = sinh(z/2)**2 / (cosh(x/2)**2 + cosh(y/2)**2 + 2 cosh(x/2) cosh(y/2) cosh(z/2))

``z = 0`` (a cusp) gives ``v = 0`` and ``ell_star = inf`` while ``t`` and
``t_star`` stay finite.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import mpmath
import numpy as np

from .errors import InvalidArgument, NumericFailure
from .hypmat import log_cosh

ArrayLike = Union[float, np.ndarray]


@dataclass(frozen=True)
class PantsTrig:
    x: ArrayLike
    y: ArrayLike
    z: ArrayLike
    t: ArrayLike
    t_star: ArrayLike
    ell_star: ArrayLike

    def residuals(self) -> dict:
        """Relative residuals of the hexagon and both pentagon identities."""
        return pants_residuals(self)


def _scalar(v):
    v = np.asarray(v, dtype=float)
    return float(v) if v.ndim == 0 else v


def solve_pants(x: ArrayLike, y: ArrayLike, z: ArrayLike, verify: bool = False) -> PantsTrig:
    x, y, z = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (x, y, z)))
    if np.any(~(x > 0)) or np.any(~(y > 0)):
        raise InvalidArgument("pants boundary lengths x and y must be positive")
    if np.any(~(z >= 0)) or not np.all(np.isfinite(z)):
        raise InvalidArgument("pants boundary length z must be finite and >= 0")
    lcx, lcy, lcz = log_cosh(x / 2), log_cosh(y / 2), log_cosh(z / 2)
    # v in log form: denominator expanded around its largest term
    with np.errstate(divide="ignore"):  # subnormal z underflows to a cusp
        lsz2 = 2.0 * np.log(np.where(z > 0, np.sinh(np.minimum(z, 1400.0) / 2), 1.0))
    lsz2 = np.where(z > 1400.0, z - 2 * np.log(2.0), lsz2)
    terms = np.stack([2 * lcx, 2 * lcy, np.log(2.0) + lcx + lcy + lcz])
    top = terms.max(axis=0)
    lden = top + np.log(np.exp(terms - top).sum(axis=0))
    with np.errstate(divide="ignore", over="ignore"):
        v = np.where(z > 0, np.exp(lsz2 - lden), 0.0)
        # sinh(t) = sqrt(v cosh(x/2)^2 + 1) / sinh(x/2), kept in logs for long boundaries
        log_v = np.where(z > 0, lsz2 - lden, -np.inf)
        t = np.arcsinh(np.exp(0.5 * np.logaddexp(0.0, log_v + 2 * lcx) - _log_sinh(x / 2)))
        t_star = np.arcsinh(np.exp(0.5 * np.logaddexp(0.0, log_v + 2 * lcy) - _log_sinh(y / 2)))
        ell_star = np.where(v > 0, np.arcsinh(1.0 / np.sqrt(v)), np.inf)
    if not (np.all(np.isfinite(t)) and np.all(np.isfinite(t_star))):
        raise NumericFailure(f"pants solver produced non-finite perpendiculars for x={x}, y={y}, z={z}")
    trig = PantsTrig(*(_scalar(a) for a in (x, y, z, t, t_star, ell_star)))
    if verify:
        worst = max(float(np.max(r)) for r in pants_residuals(trig).values())
        if worst > 1e-10:
            raise NumericFailure(f"pants identities violated (worst relative residual {worst:.2e})")
    return trig


def solve_pants_mp(x, y, z) -> PantsTrig:
    """:func:`solve_pants` for one pants at the current mpmath precision."""
    x, y, z = (mpmath.mpf(v) for v in (x, y, z))
    cx, cy, cz = mpmath.cosh(x / 2), mpmath.cosh(y / 2), mpmath.cosh(z / 2)
    v = mpmath.sinh(z / 2) ** 2 / (cx**2 + cy**2 + 2 * cx * cy * cz)
    t = mpmath.asinh(mpmath.sqrt(v * cx**2 + 1) / mpmath.sinh(x / 2))
    t_star = mpmath.asinh(mpmath.sqrt(v * cy**2 + 1) / mpmath.sinh(y / 2))
    ell_star = mpmath.asinh(1 / mpmath.sqrt(v)) if v > 0 else mpmath.inf
    return PantsTrig(x, y, z, t, t_star, ell_star)


def _log_sinh(h):
    h = np.asarray(h, dtype=float)
    return np.where(h > 20, h - np.log(2.0), np.log(np.sinh(np.minimum(h, 20.0))))


def pants_residuals(trig: PantsTrig) -> dict:
    """Relative residuals of the three identities, evaluated directly."""
    x, y, z = (np.asarray(v, dtype=float) for v in (trig.x, trig.y, trig.z))
    t, ts, ls = (np.asarray(v, dtype=float) for v in (trig.t, trig.t_star, trig.ell_star))
    with np.errstate(over="ignore", divide="ignore"):
        coth_ls = np.where(np.isinf(ls), 1.0, 1.0 / np.tanh(ls))
        hex_rhs = (np.cosh(x / 2) * np.cosh(y / 2) + np.cosh(z / 2)) / (np.sinh(x / 2) * np.sinh(y / 2))
        pent_a = coth_ls / np.tanh(x / 2)
        pent_b = coth_ls / np.tanh(y / 2)
    return {
        "hexagon": np.abs(np.cosh(t + ts) / hex_rhs - 1.0),
        "pentagon_alpha": np.abs(np.cosh(t) / pent_a - 1.0),
        "pentagon_beta": np.abs(np.cosh(ts) / pent_b - 1.0),
    }
