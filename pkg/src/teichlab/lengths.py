"""Length functions over Fenchel-Nielsen coordinates and numerical probes of
their structure."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import nnls

from . import hypmat
from .coords import FNPoint
from .errors import (
    AssumptionViolated,
    CalibrationFailure,
    FitFailure,
    InvalidArgument,
    NonHyperbolicElement,
)
from .hypmat import LN2, log_cosh
from .loops import CLOSED, LoopSpec, PantsWord, holonomy_pants, loop_trace
from .pants import solve_pants

__all__ = [
    "FNPoint",
    "loop_length",
    "figure_eight_length",
    "FigureEightMap",
    "okai_dual_length",
    "calibrate_twist_origin",
    "boundary_growth_probe",
    "ray_asymptotics",
    "exp_sum_fit",
]

GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


def loop_length(loop: LoopSpec, fn: FNPoint, strict: bool = True):
    """Length of the closed geodesic in the free homotopy class of ``loop``.

    With ``strict=False`` non-hyperbolic points give NaN instead of raising.
    Traces that cancel far below the rounding bound are recomputed in
    extended precision.
    """
    return hypmat.trace_to_length(loop_trace(loop, fn), strict=strict)


def figure_eight_length(x, y, z):
    """Closed form ``2 arccosh(2 cosh(x/2) cosh(y/2) + cosh(z/2))``, overflow-safe."""
    x, y, z = (np.asarray(v, dtype=float) for v in (x, y, z))
    l1 = LN2 + log_cosh(x / 2) + log_cosh(y / 2)
    l2 = log_cosh(z / 2)
    top = np.maximum(l1, l2)
    log_c = top + np.log(np.exp(l1 - top) + np.exp(l2 - top))
    # arccosh(C) = log C + log(1 + sqrt(1 - C^-2))
    out = 2.0 * (log_c + np.log1p(np.sqrt(-np.expm1(-2.0 * log_c))))
    return float(out) if out.ndim == 0 else out


class FigureEightMap:
    """Vectorised figure-eight length on ``(n, 3)`` arrays of ``(x, y, z)``.

    Also provides the exact partial derivatives and the inverse in any one
    coordinate, which density engines use when available.
    """

    dim = 3

    def __call__(self, X):
        X = np.atleast_2d(X)
        return figure_eight_length(X[:, 0], X[:, 1], X[:, 2])

    def partial(self, X, i: int):
        X = np.atleast_2d(X)
        ch = np.cosh(X / 2)
        ell = self(X)
        other = 2 * ch[:, 1 - i] if i < 2 else 1.0
        return np.sinh(X[:, i] / 2) * other / np.sinh(ell / 2)

    def solve(self, X, ell, i: int):
        X = np.atleast_2d(X)
        ch = np.cosh(X / 2)
        c = np.cosh(np.asarray(ell) / 2)
        if i < 2:
            target = (c - ch[:, 2]) / (2 * ch[:, 1 - i])
        else:
            target = c - 2 * ch[:, 0] * ch[:, 1]
        ok = target >= 1.0
        return 2 * np.arccosh(np.maximum(target, 1.0)), ok


def okai_dual_length(ell_a, tau_a, L):
    """Length of the curve dual to ``a`` on a once-holed torus with boundary ``L``.

    Uses the orthogonal-intersection twist origin.
    """
    ell_a, tau_a, L = (np.asarray(v, dtype=float) for v in (ell_a, tau_a, L))
    if np.any(~(ell_a > 0)):
        raise InvalidArgument("ell_a must be positive")
    c = np.cosh(tau_a / 2) / np.sinh(ell_a / 2) * np.sqrt((np.cosh(ell_a) + np.cosh(L / 2)) / 2)
    assert np.all(c >= 1.0 / np.tanh(ell_a / 2) * (1 - 1e-12))
    out = 2.0 * np.arccosh(c)
    return float(out) if out.ndim == 0 else out


def golden_section(f: Callable[[float], float], lo: float, hi: float, tol: float = 1e-10) -> float:
    a, b = lo, hi
    c, d = b - GOLDEN * (b - a), a + GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def calibrate_twist_origin(
    loop: LoopSpec, curve: str, fn: FNPoint, window: Optional[Tuple[float, float]] = None, tol: float = 1e-10
) -> float:
    """Twist value minimising the loop length along ``curve``.

    ``window`` defaults to one curve length on either side of the current
    twist.  A minimiser on the window edge means no interior minimum.
    """
    ell = float(fn.length(curve))
    if window is None:
        tau = float(fn.twist(curve))
        window = (tau - ell, tau + ell)
    lo, hi = window

    def f(t):
        return float(loop_length(loop, fn.with_twist(curve, t)))

    tau0 = golden_section(f, lo, hi, tol)
    edge = 10 * tol + 1e-9 * (hi - lo)
    if tau0 - lo < edge or hi - tau0 < edge:
        raise CalibrationFailure(f"no interior minimum of the length in twist window [{lo}, {hi}]")
    # the minimum is flat, so golden section only pins tau0 to ~sqrt(eps);
    # one parabolic step through a wider stencil recovers full precision
    for _ in range(2):
        d = 1e-3 * max(ell, 1e-3)
        fm, f0, fp = f(tau0 - d), f(tau0), f(tau0 + d)
        curv = fp - 2 * f0 + fm
        if curv <= 0:
            break
        tau0 -= 0.5 * d * (fp - fm) / curv
    return tau0


@dataclass
class GrowthReport:
    curve: str
    grid: np.ndarray
    samples: np.ndarray
    monotone: bool
    divergent: bool
    tail_slope: float


def boundary_growth_probe(
    loop: LoopSpec,
    fn: FNPoint,
    curve: str,
    steps: Sequence[float],
    slope_threshold: float = 0.1,
    tol: float = 1e-9,
) -> GrowthReport:
    """Sample the length as one boundary length grows.

    ``monotone`` allows decreases up to ``tol`` (relative); ``divergent``
    requires the least-squares slope over the upper half of the grid to reach
    ``slope_threshold``, i.e. at least linear growth.
    """
    grid = np.asarray(steps, dtype=float)
    pt = fn.with_length(curve, grid)
    # a loop that never meets ``curve`` returns one scalar
    vals = np.broadcast_to(np.asarray(loop_length(loop, pt), dtype=float), grid.shape).copy()
    drops = vals[:-1] - vals[1:]
    monotone = bool(np.all(drops <= tol * np.maximum(1.0, np.abs(vals[:-1]))))
    half = grid >= 0.5 * (grid[0] + grid[-1])
    slope = float(np.polyfit(grid[half], vals[half], 1)[0]) if half.sum() >= 2 else 0.0
    return GrowthReport(curve, grid, vals, monotone, slope >= slope_threshold, slope)


# --- rays -------------------------------------------------------------------

Coordinate = Tuple[str, str]  # (curve, "length" | "twist")


def point_along(base: FNPoint, coords: Sequence[Coordinate], direction, t) -> FNPoint:
    pt = base
    t = np.asarray(t, dtype=float)
    for (curve, kind), d in zip(coords, direction):
        if d == 0:
            continue
        if kind == "length":
            pt = pt.with_length(curve, np.asarray(base.length(curve)) + d * t)
        elif kind == "twist":
            pt = pt.with_twist(curve, np.asarray(base.twist(curve)) + d * t)
        else:
            raise InvalidArgument(f"coordinate kind must be 'length' or 'twist', got {kind!r}")
    return pt


@dataclass
class RayReport:
    direction: np.ndarray
    slope: float
    intercept: float
    residual_sup: float
    samples: int
    residual_sup_doubled: float
    stable: bool
    skipped: int = 0


def _affine_fit(h: Callable, t_max: float, samples: int):
    ts = np.linspace(t_max / 2, t_max, samples)
    vals = np.broadcast_to(np.asarray(h(ts), dtype=float), ts.shape)
    ok = np.isfinite(vals)
    slope, icpt = np.polyfit(ts[ok], vals[ok], 1)
    res = float(np.max(np.abs(vals[ok] - slope * ts[ok] - icpt)))
    return float(slope), float(icpt), res, int((~ok).sum())


def ray_asymptotics(
    loop_or_h,
    base: Optional[FNPoint],
    direction,
    t_max: float,
    samples: int = 64,
    coords: Optional[Sequence[Coordinate]] = None,
    rel_growth: float = 0.1,
    abs_floor: float = 1e-9,
) -> RayReport:
    """Affine fit of the length along ``base + t * direction`` for ``t`` in
    ``[t_max/2, t_max]``.

    ``loop_or_h`` is a :class:`LoopSpec` (then ``coords`` names the FN
    coordinate of each direction component) or a plain vectorised callable of
    the ray parameter's point array ``x0 + t * d``.  The fit is repeated at
    ``2 * t_max``; ``stable`` means the sup residual did not grow by more than
    ``rel_growth`` (plus ``abs_floor``) under the doubling.
    """
    d = np.asarray(direction, dtype=float)
    norm = np.linalg.norm(d)
    if norm == 0:
        raise InvalidArgument("ray direction must be nonzero")
    d = d / norm
    if isinstance(loop_or_h, LoopSpec):
        if coords is None or len(coords) != len(d):
            raise InvalidArgument("coords must name one FN coordinate per direction component")

        def h(ts):
            return loop_length(loop_or_h, point_along(base, coords, d, ts), strict=False)

    else:
        x0 = np.zeros_like(d) if base is None else np.asarray(base, dtype=float)

        def h(ts):
            pts = x0[None, :] + np.asarray(ts)[:, None] * d[None, :]
            return loop_or_h(*pts.T)

    slope, icpt, res, skipped = _affine_fit(h, t_max, samples)
    _, _, res2, skipped2 = _affine_fit(h, 2 * t_max, samples)
    stable = bool(np.isfinite(res) and res2 <= (1 + rel_growth) * res + abs_floor)
    return RayReport(d, slope, icpt, res, samples, res2, stable, skipped + skipped2)


# --- exp-sum fitting ----------------------------------------------------------


@dataclass
class ExpSumForm:
    """``cosh(l/2) = sum_T a_T exp(T . (x, y, z))`` with all ``a_T > 0``."""

    forms: np.ndarray  # (k, 3) linear form coefficients
    coeffs: np.ndarray  # (k,)
    residual: float = 0.0

    def __post_init__(self):
        self.forms = np.asarray(self.forms, dtype=float).reshape(-1, 3)
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if np.any(self.coeffs <= 0):
            raise InvalidArgument("exp-sum coefficients must be strictly positive")

    def evaluate(self, pts: np.ndarray) -> np.ndarray:
        return np.exp(np.asarray(pts) @ self.forms.T) @ self.coeffs

    def support(self) -> set:
        return {tuple(np.round(2 * f).astype(int)) for f in self.forms}

    def as_dict(self) -> Dict[Tuple[int, int, int], float]:
        """Map of doubled integer forms to coefficients."""
        return {tuple(np.round(2 * f).astype(int)): float(c) for f, c in zip(self.forms, self.coeffs)}


def half_integer_forms(kx: int, ky: int, kz: int) -> np.ndarray:
    rng = [range(-k, k + 1) for k in (kx, ky, kz)]
    return np.array(list(itertools.product(*rng)), dtype=float) / 2.0


def default_candidates(word: PantsWord) -> np.ndarray:
    na = sum(abs(e) for l, e in word.syllables if l == "a")
    nb = sum(abs(e) for l, e in word.syllables if l == "b")
    return half_integer_forms(na, nb, min(na, nb))


def exp_sum_fit(
    loop: LoopSpec,
    candidates: Optional[np.ndarray] = None,
    samples: Optional[np.ndarray] = None,
    seed: int = 0,
    box: Tuple[float, float] = (0.1, 3.0),
    tol: float = 1e-6,
    support_tol: float = 1e-7,
) -> ExpSumForm:
    """Non-negative least squares of ``cosh(l/2)`` on exponentials of linear
    forms in the three boundary lengths of a single-pants loop.

    Rows are scaled by the target so the fit is in relative terms.  The
    result is checked on a held-out sample of the same size.
    """
    if len(loop.incursions) != 1 or loop.incursions[0].form != CLOSED:
        raise InvalidArgument("exp_sum_fit needs a loop contained in one pair of pants")
    word = loop.incursions[0].word
    forms = default_candidates(word) if candidates is None else np.asarray(candidates, dtype=float)
    rng = np.random.default_rng(seed)
    n = max(10 * len(forms), 200)
    pts = rng.uniform(*box, size=(n, 3)) if samples is None else np.asarray(samples, dtype=float)
    if len(pts) < 10 * len(forms):
        raise InvalidArgument("sample grid needs at least ten points per candidate form")
    held = rng.uniform(*box, size=(len(pts), 3))

    def target(p):
        trig = solve_pants(p[:, 0], p[:, 1], p[:, 2])
        t = hypmat.trace_signed(holonomy_pants(word, trig))
        return np.exp(np.asarray(t.log_abs)) / 2.0

    y = target(pts)
    design = np.exp(pts @ forms.T) / y[:, None]
    coef, _ = nnls(design, np.ones(len(y)), maxiter=50 * design.shape[1])
    keep = coef > support_tol * coef.max()
    # refit on the support alone to clean out numerically tiny weights
    coef2, _ = nnls(design[:, keep], np.ones(len(y)))
    form = ExpSumForm(forms[keep][coef2 > 0], coef2[coef2 > 0])
    yh = target(held)
    form.residual = float(np.max(np.abs(form.evaluate(held) / yh - 1.0)))
    if form.residual > tol:
        raise FitFailure(f"exp-sum fit residual {form.residual:.2e} exceeds {tol:.0e}; enlarge the candidate set")
    return form
