"""Densities of pushforwards of weighted Lebesgue measure under length maps.

Two engines estimate the same density: a Monte Carlo histogram of ``h`` and a
level-set disintegration that inverts ``h`` in one pivot coordinate.  The
module also carries the primitive operators ``P`` / ``L`` and a fitter that
splits a density into a polynomial part and an exponentially small remainder.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.interpolate import PchipInterpolator

from .errors import (
    AssumptionViolated,
    ConfigurationError,
    DegreeTooHigh,
    EmptyDensity,
    FitFailure,
    InvalidArgument,
)

Evaluator = Callable[[np.ndarray], np.ndarray]  # (n, d) -> (n,)
# An evaluator may also expose ``solve(X, ell, i) -> (x_i, ok)`` and
# ``partial(X, i)``; the disintegration engine then uses them in place of
# root finding and finite differences.

DEFAULT_BIN_WIDTH = 0.05


# --- grids -------------------------------------------------------------------


@dataclass
class DensityGrid:
    """Per-bin density values on ``[ell_min, ell_max)`` with MC variance."""

    ell_min: float
    ell_max: float
    bin_width: float
    mass: np.ndarray
    variance: np.ndarray = None
    total_samples: int = 0

    def __post_init__(self):
        if not self.bin_width > 0:
            raise InvalidArgument("bin_width must be positive")
        n = self.n_bins_for(self.ell_min, self.ell_max, self.bin_width)
        self.mass = np.asarray(self.mass, dtype=float)
        if self.variance is None:
            self.variance = np.zeros(n)
        self.variance = np.asarray(self.variance, dtype=float)
        if self.mass.shape != (n,) or self.variance.shape != (n,):
            raise InvalidArgument(f"grid needs {n} bins, got mass {self.mass.shape} variance {self.variance.shape}")

    @staticmethod
    def n_bins_for(lo: float, hi: float, bw: float) -> int:
        # tolerate float noise in (hi - lo) / bw
        return int(math.ceil((hi - lo) / bw - 1e-9))

    @classmethod
    def zeros(cls, lo: float, hi: float, bw: float = DEFAULT_BIN_WIDTH) -> "DensityGrid":
        return cls(lo, hi, bw, np.zeros(cls.n_bins_for(lo, hi, bw)))

    @classmethod
    def from_function(cls, f: Callable, lo: float, hi: float, bw: float = DEFAULT_BIN_WIDTH) -> "DensityGrid":
        """Grid of point values of ``f`` at bin centres (no variance)."""
        g = cls.zeros(lo, hi, bw)
        g.mass = np.asarray(f(g.centers), dtype=float) * np.ones(g.n_bins)
        return g

    @property
    def n_bins(self) -> int:
        return len(self.mass)

    @property
    def edges(self) -> np.ndarray:
        return self.ell_min + self.bin_width * np.arange(self.n_bins + 1)

    @property
    def centers(self) -> np.ndarray:
        return self.ell_min + self.bin_width * (np.arange(self.n_bins) + 0.5)

    @property
    def stderr(self) -> np.ndarray:
        return np.sqrt(self.variance)

    def total_mass(self) -> float:
        return float(self.mass.sum() * self.bin_width)

    def integrate(self, g: Callable = None) -> Tuple[float, float]:
        """``(integral of g * density, standard error)`` using bin centres."""
        gv = np.ones(self.n_bins) if g is None else np.asarray(g(self.centers), dtype=float)
        val = float(np.sum(gv * self.mass) * self.bin_width)
        se = float(np.sqrt(np.sum(gv**2 * self.variance)) * self.bin_width)
        return val, se

    def same_grid(self, other: "DensityGrid") -> bool:
        return (
            self.n_bins == other.n_bins
            and abs(self.ell_min - other.ell_min) < 1e-12
            and abs(self.bin_width - other.bin_width) < 1e-12
        )

    def merge(self, other: "DensityGrid") -> "DensityGrid":
        """Sample-weighted average of two independent runs on the same grid."""
        if not self.same_grid(other):
            raise InvalidArgument("cannot merge density grids with different binning")
        n1, n2 = self.total_samples, other.total_samples
        if n1 + n2 == 0:
            raise InvalidArgument("cannot merge grids with no samples")
        a, b = n1 / (n1 + n2), n2 / (n1 + n2)
        return replace(
            self,
            mass=a * self.mass + b * other.mass,
            variance=a * a * self.variance + b * b * other.variance,
            total_samples=n1 + n2,
        )

    def resample(self, lo: float, hi: float, bw: float) -> "DensityGrid":
        """Linear interpolation of bin-centre values onto another grid (zero outside)."""
        tgt = DensityGrid.zeros(lo, hi, bw)
        tgt.mass = np.interp(tgt.centers, self.centers, self.mass, left=0.0, right=0.0)
        tgt.variance = np.interp(tgt.centers, self.centers, self.variance, left=0.0, right=0.0)
        tgt.total_samples = self.total_samples
        return tgt

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["ell_lo", "ell_hi", "density", "stderr"])
        e, se = self.edges, self.stderr
        for i in range(self.n_bins):
            w.writerow([fmt(e[i]), fmt(e[i + 1]), fmt(self.mass[i]), fmt(se[i])])
        return buf.getvalue()

    def to_json(self) -> dict:
        return {
            "ellMin": self.ell_min,
            "ellMax": self.ell_max,
            "binWidth": self.bin_width,
            "mass": [float(v) for v in self.mass],
            "variance": [float(v) for v in self.variance],
            "totalSamples": int(self.total_samples),
        }

    @classmethod
    def from_json(cls, data: dict) -> "DensityGrid":
        keys = {"ellMin", "ellMax", "binWidth", "mass", "variance", "totalSamples"}
        extra = set(data) - keys - {"schemaVersion"}
        if extra:
            raise ConfigurationError(f"unknown DensityGrid fields {sorted(extra)}")
        return cls(
            float(data["ellMin"]),
            float(data["ellMax"]),
            float(data["binWidth"]),
            np.asarray(data["mass"], dtype=float),
            np.asarray(data.get("variance", np.zeros(len(data["mass"]))), dtype=float),
            int(data.get("totalSamples", 0)),
        )


def fmt(v: float) -> str:
    return format(float(v), ".17g")


# --- weights and domains --------------------------------------------------------

EXTRA_FACTORS = ("one", "expNegSum")


@dataclass(frozen=True)
class WeightSpec:
    """Product weight ``prod_i f_i(x_i) * phi(x)``.

    ``per_coordinate[i]`` holds ascending polynomial coefficients of ``f_i``;
    ``phi`` is ``1`` or ``exp(-sum of x_i for i in exp_coords)``.
    """

    per_coordinate: Tuple[Tuple[float, ...], ...]
    extra: str = "one"
    exp_coords: Tuple[int, ...] = ()

    def __post_init__(self):
        if self.extra not in EXTRA_FACTORS:
            raise ConfigurationError(f"extra factor must be one of {EXTRA_FACTORS}, got {self.extra!r}")
        if self.extra == "one" and self.exp_coords:
            raise ConfigurationError("exp_coords only apply to the expNegSum factor")
        if any(not 0 <= i < self.dim for i in self.exp_coords):
            raise ConfigurationError("exp_coords out of range")

    @classmethod
    def uniform(cls, d: int) -> "WeightSpec":
        return cls(tuple((1.0,) for _ in range(d)))

    @classmethod
    def monomials(cls, degrees: Sequence[int]) -> "WeightSpec":
        return cls(tuple(tuple([0.0] * k + [1.0]) for k in degrees))

    @property
    def dim(self) -> int:
        return len(self.per_coordinate)

    @property
    def degrees(self) -> Tuple[int, ...]:
        out = []
        for c in self.per_coordinate:
            nz = [i for i, v in enumerate(c) if v != 0]
            out.append(max(nz) if nz else 0)
        return tuple(out)

    def factor(self, i: int, xi: np.ndarray) -> np.ndarray:
        return np.polynomial.polynomial.polyval(xi, self.per_coordinate[i])

    def evaluate(self, X: np.ndarray, skip: Optional[int] = None) -> np.ndarray:
        X = np.atleast_2d(X)
        out = np.ones(len(X))
        for i in range(self.dim):
            if i != skip:
                out = out * self.factor(i, X[:, i])
        if self.extra == "expNegSum":
            out = out * np.exp(-X[:, list(self.exp_coords)].sum(axis=1))
        return out


@dataclass(frozen=True)
class DomainSpec:
    """Box bounds plus linear constraints ``A x <= b``."""

    lower: Tuple[float, ...]
    upper: Tuple[float, ...]
    A: Tuple[Tuple[float, ...], ...] = ()
    b: Tuple[float, ...] = ()
    strict: Tuple[bool, ...] = ()
    cone: bool = False

    def __post_init__(self):
        if len(self.lower) != len(self.upper):
            raise ConfigurationError("lower and upper bounds differ in length")
        if any(not lo < hi for lo, hi in zip(self.lower, self.upper)):
            raise ConfigurationError("every coordinate needs lower < upper")
        if len(self.A) != len(self.b) or (self.strict and len(self.strict) != len(self.b)):
            raise ConfigurationError("constraint rows, right-hand sides and strict flags must align")
        if any(len(r) != self.dim for r in self.A):
            raise ConfigurationError("constraint row length must equal the dimension")

    @classmethod
    def box(cls, lower: Sequence[float], upper: Sequence[float]) -> "DomainSpec":
        return cls(tuple(map(float, lower)), tuple(map(float, upper)))

    @classmethod
    def orthant(cls, d: int, radius: float) -> "DomainSpec":
        return cls((0.0,) * d, (float(radius),) * d, cone=True)

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def is_box(self) -> bool:
        return not self.A

    def truncated(self, radius: float) -> "DomainSpec":
        lo = tuple(max(v, -radius) for v in self.lower)
        hi = tuple(min(v, radius) for v in self.upper)
        return replace(self, lower=lo, upper=hi)

    def require_finite(self) -> None:
        if not (np.all(np.isfinite(self.lower)) and np.all(np.isfinite(self.upper))):
            raise ConfigurationError("domain must be truncated to a bounded box before sampling")

    def box_volume(self, skip: Optional[int] = None) -> float:
        w = [hi - lo for i, (lo, hi) in enumerate(zip(self.lower, self.upper)) if i != skip]
        return float(np.prod(w)) if w else 1.0

    def contains(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        ok = np.all((X >= np.asarray(self.lower)) & (X <= np.asarray(self.upper)), axis=1)
        if self.A:
            # strict and non-strict rows are treated alike (boundaries are null sets)
            ok &= np.all(X @ np.asarray(self.A).T <= np.asarray(self.b), axis=1)
        return ok

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        self.require_finite()
        return rng.uniform(self.lower, self.upper, size=(n, self.dim))

    def check_interior(self, rng: np.random.Generator, n: int = 10_000) -> None:
        if not self.contains(self.sample(n, rng)).any():
            raise ConfigurationError("domain has empty interior (no sample satisfied the constraints)")


def _check_dims(h_dim: int, w: WeightSpec, dom: DomainSpec) -> None:
    if w.dim != dom.dim or (h_dim and h_dim != dom.dim):
        raise ConfigurationError(f"weight dimension {w.dim} and domain dimension {dom.dim} differ")


class _BinAccumulator:
    def __init__(self, lo: float, hi: float, bw: float):
        self.grid = DensityGrid.zeros(lo, hi, bw)
        self.s1 = np.zeros(self.grid.n_bins)
        self.s2 = np.zeros(self.grid.n_bins)

    def bin_index(self, ell: np.ndarray) -> np.ndarray:
        k = np.floor((ell - self.grid.ell_min) / self.grid.bin_width)
        return np.clip(k, -1, self.grid.n_bins).astype(np.int64)

    def add(self, idx: np.ndarray, y: np.ndarray) -> None:
        ok = (idx >= 0) & (idx < self.grid.n_bins) & np.isfinite(y)
        n = self.grid.n_bins
        self.s1 += np.bincount(idx[ok], weights=y[ok], minlength=n)
        self.s2 += np.bincount(idx[ok], weights=y[ok] ** 2, minlength=n)


# --- pushforward engine ----------------------------------------------------------


def push_forward_density(
    h: Evaluator,
    w: WeightSpec,
    dom: DomainSpec,
    n_samples: int,
    seed: int = 0,
    ell_min: float = 0.0,
    ell_max: float = 10.0,
    bin_width: float = DEFAULT_BIN_WIDTH,
    batch: int = 200_000,
) -> DensityGrid:
    """Histogram estimate of ``d(h_* (w dx)) / d ell`` from uniform box samples.

    Each sample contributes ``vol * w(x) / bin_width`` to the bin of ``h(x)``;
    samples outside the constraints or with non-finite ``h`` contribute zero.
    """
    _check_dims(0, w, dom)
    dom.require_finite()
    if n_samples <= 0:
        raise InvalidArgument("n_samples must be positive")
    rng = np.random.default_rng(seed)
    acc = _BinAccumulator(ell_min, ell_max, bin_width)
    vol = dom.box_volume()
    accepted = 0
    done = 0
    while done < n_samples:
        m = min(batch, n_samples - done)
        X = dom.sample(m, rng)
        inside = dom.contains(X)
        accepted += int(inside.sum())
        vals = np.full(m, np.nan)
        if inside.any():
            vals[inside] = np.asarray(h(X[inside]), dtype=float)
        y = vol * w.evaluate(X) / bin_width
        acc.add(np.where(np.isfinite(vals), acc.bin_index(np.nan_to_num(vals, nan=-1e300)), -1), y)
        done += m
    if accepted == 0:
        raise EmptyDensity("no sample fell inside the domain")
    n = float(n_samples)
    mean = acc.s1 / n
    var = np.maximum(acc.s2 / n - mean**2, 0.0) / n
    g = acc.grid
    g.mass, g.variance, g.total_samples = mean, var, int(n_samples)
    return g


# --- disintegration engine ----------------------------------------------------------


def partial_derivative(h: Evaluator, X: np.ndarray, i: int, rel_step: float = 1e-5) -> np.ndarray:
    exact = getattr(h, "partial", None)
    if exact is not None:
        return np.asarray(exact(X, i), dtype=float)
    step = rel_step * np.maximum(np.abs(X[:, i]), 1.0)
    Xp, Xm = X.copy(), X.copy()
    Xp[:, i] += step
    Xm[:, i] -= step
    return (np.asarray(h(Xp)) - np.asarray(h(Xm))) / (2 * step)


def choose_pivot(h: Evaluator, dom: DomainSpec, rng: np.random.Generator, n: int = 2000) -> int:
    """Coordinate with the largest mean ``|dh/dx_i|``; ties go to the highest index."""
    X = dom.sample(n, rng)
    X = X[dom.contains(X)]
    means = [float(np.mean(np.abs(partial_derivative(h, X, i)))) for i in range(dom.dim)]
    best = max(means)
    return max(i for i, m in enumerate(means) if m >= best * (1 - 1e-12))


def check_monotone(h: Evaluator, dom: DomainSpec, pivot: int, rng: np.random.Generator, n: int = 2000) -> int:
    """Sign of ``dh/dx_pivot``; raises if it is not strictly one-signed on samples."""
    X = dom.sample(n, rng)
    X = X[dom.contains(X)]
    d = partial_derivative(h, X, pivot)
    if np.all(d > 0):
        return 1
    if np.all(d < 0):
        return -1
    bad = int(np.sum(d <= 0) if np.mean(d > 0) > 0.5 else np.sum(d >= 0))
    raise AssumptionViolated(
        f"h is not strictly monotone in pivot coordinate {pivot} ({bad} of {len(d)} sampled derivatives disagree)"
    )


def invert_pivot(
    h: Evaluator,
    X: np.ndarray,
    ell: np.ndarray,
    pivot: int,
    lo: float,
    hi: float,
    sign: int,
    tol: float = 1e-12,
    max_iter: int = 100,
) -> Tuple[np.ndarray, np.ndarray]:
    """Solve ``h(X with x_pivot = s) = ell`` for ``s`` in ``[lo, hi]``.

    Safeguarded Newton: a Newton step is taken when it lands inside the
    current bracket, otherwise the bracket is bisected.  Returns the roots and
    a mask of rows whose root was bracketed.
    """
    solve = getattr(h, "solve", None)
    if solve is not None:
        root, ok = solve(X, ell, pivot)
        ok = ok & (root >= lo) & (root <= hi)
        return np.where(ok, root, 0.5 * (lo + hi)), ok
    X = X.copy()

    def g(s, rows):
        Y = X[rows].copy()
        Y[:, pivot] = s
        return sign * (np.asarray(h(Y), dtype=float) - ell[rows])

    n = len(X)
    every = np.arange(n)
    ga, gb = g(np.full(n, lo), every), g(np.full(n, hi), every)
    ok = (ga <= 0) & (gb >= 0) & np.isfinite(ga) & np.isfinite(gb)
    a = np.full(n, lo)
    b = np.full(n, hi)
    s = np.full(n, 0.5 * (lo + hi))
    active = np.flatnonzero(ok)
    for _ in range(max_iter):
        if active.size == 0:
            break
        sa = s[active]
        step = 1e-5 * np.maximum(np.abs(sa), 1.0)
        gs = g(sa, active)
        dg = (g(sa + step, active) - g(sa - step, active)) / (2 * step)
        left = gs < 0
        a[active] = np.where(left, sa, a[active])
        b[active] = np.where(left, b[active], sa)
        with np.errstate(divide="ignore", invalid="ignore"):
            newton = sa - gs / dg
        inside = np.isfinite(newton) & (newton > a[active]) & (newton < b[active]) & (dg > 0)
        new = np.where(inside, newton, 0.5 * (a[active] + b[active]))
        done = (np.abs(new - sa) <= tol * np.maximum(1.0, np.abs(sa))) | (gs == 0) | (
            b[active] - a[active] <= tol * np.maximum(1.0, np.abs(sa))
        )
        s[active] = np.where(gs == 0, sa, new)
        active = active[~done]
    return s, ok


def disintegrate_density(
    h: Evaluator,
    w: WeightSpec,
    dom: DomainSpec,
    pivot: Optional[int] = None,
    ell_min: float = 0.0,
    ell_max: float = 10.0,
    bin_width: float = DEFAULT_BIN_WIDTH,
    inner_samples: int = 1000,
    seed: int = 0,
    method: str = "mc",
    quad_order: int = 10,
    ell_points: int = 3,
    panel_length: float = 1.0,
) -> DensityGrid:
    """Density of ``h_* (w dx)`` via the pivot-coordinate inverse of ``h``.

    For each level ``ell`` the remaining coordinates are integrated against
    ``w(x) / |dh/dx_pivot|`` at ``x_pivot = h^{-1}(ell, rest)``; rows whose
    root is not bracketed lie outside the level set's projection and add zero.

    ``method="mc"`` draws ``inner_samples`` points per bin (``ell`` uniform in
    the bin, so bins hold unbiased bin averages).  ``method="quadrature"``
    uses nested composite Gauss-Legendre rules (``quad_order`` nodes per panel
    of about ``panel_length``, ``ell_points`` levels per bin) and needs a box
    domain on which ``h`` is nondecreasing in every coordinate; the level-set
    projection is then cut out exactly by one-dimensional root finding.
    """
    _check_dims(0, w, dom)
    dom.require_finite()
    rng = np.random.default_rng(seed)
    dom.check_interior(rng)
    if pivot is None:
        pivot = choose_pivot(h, dom, rng)
    if not 0 <= pivot < dom.dim:
        raise InvalidArgument(f"pivot {pivot} out of range for dimension {dom.dim}")
    sign = check_monotone(h, dom, pivot, rng)
    if method == "quadrature":
        return _disintegrate_quadrature(
            h, w, dom, pivot, ell_min, ell_max, bin_width, rng, quad_order, ell_points, panel_length
        )
    if method != "mc":
        raise InvalidArgument(f"unknown disintegration method {method!r}")

    acc = _BinAccumulator(ell_min, ell_max, bin_width)
    nb = acc.grid.n_bins
    lo, hi = dom.lower[pivot], dom.upper[pivot]
    rest_vol = dom.box_volume(skip=pivot)
    chunk = max(1, 400_000 // inner_samples)
    for start in range(0, nb, chunk):
        bins = np.arange(start, min(nb, start + chunk))
        idx = np.repeat(bins, inner_samples)
        ell = acc.grid.ell_min + bin_width * (idx + rng.uniform(size=idx.size))
        X = dom.sample(idx.size, rng)
        s, ok = invert_pivot(h, X, ell, pivot, lo, hi, sign)
        X[:, pivot] = s
        ok &= dom.contains(X)
        val = np.zeros(idx.size)
        if ok.any():
            Xo = X[ok]
            dh = np.abs(partial_derivative(h, Xo, pivot))
            val[ok] = rest_vol * w.evaluate(Xo) / dh
        acc.add(idx, val)
    n = float(inner_samples)
    g = acc.grid
    g.mass = acc.s1 / n
    g.variance = np.maximum(acc.s2 / n - g.mass**2, 0.0) / n
    g.total_samples = int(inner_samples * nb)
    return g


def _tanh_sinh(order: int):
    """Tanh-sinh rule on [0, 1] with ``2 * order + 1`` nodes; nodes cluster
    double-exponentially at both ends, which tames endpoint layers."""
    step = 3.2 / order
    t = step * np.arange(-order, order + 1)
    arg = 0.5 * np.pi * np.sinh(t)
    x = 0.5 * (1 + np.tanh(arg))
    wt = 0.5 * step * 0.5 * np.pi * np.cosh(t) / np.cosh(arg) ** 2
    keep = (x > 0) & (x < 1)
    return x[keep], wt[keep]


def _composite_rule(order: int, panels: int):
    """Composite rule on [0, 1]: Gauss-Legendre on interior panels and
    tanh-sinh on the two end panels, where the level set's projection ends."""
    s, wt = np.polynomial.legendre.leggauss(order)
    s, wt = 0.5 * (s + 1), 0.5 * wt
    ts, tw = _tanh_sinh(2 * order)
    nodes, weights = [], []
    for k in range(panels):
        end = k == 0 or k == panels - 1
        a, b = (ts, tw) if end else (s, wt)
        nodes.append((k + a) / panels)
        weights.append(b / panels)
    return np.concatenate(nodes), np.concatenate(weights)


def derivative_5pt(h: Evaluator, X: np.ndarray, i: int, lower: float, rel_step: float = 1e-3) -> np.ndarray:
    """Fourth-order finite difference in coordinate ``i``, one-sided near ``lower``."""
    exact = getattr(h, "partial", None)
    if exact is not None:
        return np.asarray(exact(X, i), dtype=float)
    step = rel_step * np.maximum(np.abs(X[:, i]), 1.0)
    one_sided = X[:, i] - 2 * step < lower

    def at(offsets, coeffs):
        out = np.zeros(len(X))
        for o, c in zip(offsets, coeffs):
            Y = X.copy()
            Y[:, i] += o * step
            out += c * np.asarray(h(Y), dtype=float)
        return out / (12 * step)

    d = np.empty(len(X))
    c = ~one_sided
    if c.any():
        d[c] = at((-2, -1, 1, 2), (1, -8, 8, -1))[c] if c.all() else _sub(h, X, i, step, c, ((-2, -1, 1, 2), (1, -8, 8, -1)))
    if one_sided.any():
        d[one_sided] = _sub(h, X, i, step, one_sided, ((0, 1, 2, 3, 4), (-25, 48, -36, 16, -3)))
    return d


def _sub(h, X, i, step, mask, stencil):
    Xs, st = X[mask], step[mask]
    out = np.zeros(len(Xs))
    for o, c in zip(*stencil):
        Y = Xs.copy()
        Y[:, i] += o * st
        out += c * np.asarray(h(Y), dtype=float)
    return out / (12 * st)


def _monotone_limit(f: Callable[[np.ndarray], np.ndarray], lo: np.ndarray, hi: np.ndarray, iters: int = 80):
    """Largest ``x`` in ``[lo, hi]`` with ``f(x) <= 0`` for increasing ``f`` (elementwise)."""
    a, b = lo.copy(), hi.copy()
    fb = f(b)
    full = fb <= 0
    for _ in range(iters):
        m = 0.5 * (a + b)
        left = f(m) <= 0
        a = np.where(left, m, a)
        b = np.where(left, b, m)
    return np.where(full, hi, a)


def _disintegrate_quadrature(h, w, dom, pivot, ell_min, ell_max, bw, rng, order, ell_points, panel) -> DensityGrid:
    if not dom.is_box:
        raise ConfigurationError("quadrature disintegration needs a box domain")
    for i in range(dom.dim):
        if i != pivot and check_monotone_weak(h, dom, i, rng) < 0:
            raise AssumptionViolated(f"quadrature disintegration needs h nondecreasing in coordinate {i}")
    rest = [i for i in range(dom.dim) if i != pivot]
    lo = np.asarray(dom.lower, dtype=float)
    hi = np.asarray(dom.upper, dtype=float)
    gl_t, gl_w = np.polynomial.legendre.leggauss(ell_points)
    grid = DensityGrid.zeros(ell_min, ell_max, bw)

    h_at = h
    out = np.zeros(grid.n_bins)
    for b in range(grid.n_bins):
        total = 0.0
        for tq, wq in zip(gl_t, gl_w):
            ell = grid.edges[b] + 0.5 * bw * (tq + 1)
            total += 0.5 * wq * _level_integral(h_at, w, lo, hi, pivot, rest, ell, order, panel)
        out[b] = total
    grid.mass = out
    grid.total_samples = 0
    return grid


def check_monotone_weak(h, dom, i, rng, n: int = 500) -> int:
    X = dom.sample(n, rng)
    d = partial_derivative(h, X, i)
    scale = np.max(np.abs(d)) if d.size else 0.0
    if np.all(d >= -1e-9 * max(scale, 1.0)):
        return 1
    if np.all(d <= 1e-9 * max(scale, 1.0)):
        return -1
    return 0


def _level_integral(h_at, w, lo, hi, pivot, rest, ell, order, panel) -> float:
    """Nested Gauss integral over the rest coordinates for one level."""
    d = len(lo)
    # rows carry partially assigned points and their accumulated quadrature weight
    P = np.tile(lo, (1, 1))
    W = np.ones(1)
    for depth, j in enumerate(rest):
        later = rest[depth + 1 :]

        def f_upper(xj, P=P, j=j, later=later):
            Q = P.copy()
            Q[:, j] = xj
            Q[:, later] = lo[later]
            Q[:, pivot] = lo[pivot]
            return np.asarray(h_at(Q), dtype=float) - ell

        def f_lower(xj, P=P, j=j, later=later):
            Q = P.copy()
            Q[:, j] = xj
            Q[:, later] = hi[later]
            Q[:, pivot] = hi[pivot]
            return ell - np.asarray(h_at(Q), dtype=float)

        n = len(P)
        lo_j = np.full(n, lo[j])
        hi_j = np.full(n, hi[j])
        upper = _monotone_limit(f_upper, lo_j, hi_j)
        # reflect to reuse the increasing-root routine for the lower limit
        lower = -_monotone_limit(lambda u: f_lower(-u), -hi_j, -lo_j)
        lower = np.where(f_lower(lo_j) <= 0, lo_j, lower)
        width = np.maximum(upper - lower, 0.0)
        keep = width > 0
        if not keep.any():
            return 0.0
        P, W, lower, width = P[keep], W[keep], lower[keep], width[keep]
        nodes, weights = _composite_rule(order, max(1, int(np.ceil(width.max() / panel))))
        P = np.repeat(P, len(nodes), axis=0)
        P[:, j] = (lower[:, None] + width[:, None] * nodes[None, :]).ravel()
        W = (W[:, None] * width[:, None] * weights[None, :]).ravel()
    sign = 1
    s, ok = invert_pivot(h_at, P, np.full(len(P), ell), pivot, lo[pivot], hi[pivot], sign)
    if not ok.any():
        return 0.0
    P = P[ok]
    P[:, pivot] = s[ok]
    dh = np.abs(derivative_5pt(h_at, P, pivot, lo[pivot]))
    wv = w.evaluate(P)
    good = dh > 0
    return float(np.sum(W[ok][good] * wv[good] / dh[good]))


# --- change of variables ---------------------------------------------------------


def u_map(ell):
    """``2 log(2 cosh(ell/2)) = ell + 2 log(1 + exp(-ell))``."""
    ell = np.asarray(ell, dtype=float)
    return ell + 2.0 * np.log1p(np.exp(-ell))


def u_inverse(s):
    """Inverse of :func:`u_map` on ``ell >= 0`` (``s >= 2 log 2``)."""
    s = np.asarray(s, dtype=float)
    # 2 cosh(ell/2) = e^{s/2}  =>  ell = 2 arccosh(e^{s/2} / 2)
    c = np.exp(np.minimum(s, 1400.0) / 2) / 2
    big = s > 60
    return np.where(big, s - 2 * np.log1p(np.exp(-np.minimum(s, 1400.0))), 2 * np.arccosh(np.maximum(c, 1.0)))


def pseudo_length_transform(
    grid: DensityGrid, direction: str = "forward", target: Optional[Tuple[float, float, float]] = None
) -> DensityGrid:
    """Re-express a density in ``ell`` as one in ``u(ell)`` (or back).

    Bin masses are remapped through the cumulative distribution, which is
    interpolated monotonically, so total mass is preserved.  ``target`` gives
    ``(min, max, bin_width)`` for the output; by default the image of the input
    range is used with the input bin width.
    """
    if direction not in ("forward", "inverse"):
        raise InvalidArgument("direction must be 'forward' or 'inverse'")
    if direction == "forward" and grid.ell_min < 0:
        raise InvalidArgument("forward transform needs a grid on ell >= 0")
    fwd, back = (u_map, u_inverse) if direction == "forward" else (u_inverse, u_map)
    if target is None:
        target = (float(fwd(grid.ell_min)), float(fwd(grid.ell_max)), grid.bin_width)
    lo, hi, bw = target
    out = DensityGrid.zeros(lo, hi, bw)
    cdf = np.concatenate([[0.0], np.cumsum(grid.mass) * grid.bin_width])
    cvar = np.concatenate([[0.0], np.cumsum(grid.variance) * grid.bin_width**2])
    # the last bin may extend past the support
    knots = grid.edges.copy()
    knots[-1] = min(knots[-1], grid.ell_max)
    F = PchipInterpolator(knots, cdf, extrapolate=False)
    e = back(np.clip(out.edges, fwd(knots[0]), fwd(knots[-1])))
    ce = np.nan_to_num(F(np.clip(e, knots[0], knots[-1])), nan=0.0)
    out.mass = np.diff(ce) / bw
    ve = np.interp(e, knots, cvar)
    out.variance = np.maximum(np.diff(ve), 0.0) / bw**2
    out.total_samples = grid.total_samples
    return out


# --- primitive operators ---------------------------------------------------------


def _from_zero(grid: DensityGrid) -> DensityGrid:
    if grid.ell_min < -1e-12:
        raise InvalidArgument("P/L operators need a grid on ell >= 0")
    k = int(round(grid.ell_min / grid.bin_width))
    if k == 0 or abs(k * grid.bin_width - grid.ell_min) > 1e-9:
        return grid
    # extend by zero down to 0
    return DensityGrid(
        0.0,
        grid.ell_max,
        grid.bin_width,
        np.concatenate([np.zeros(k), grid.mass]),
        np.concatenate([np.zeros(k), grid.variance]),
        grid.total_samples,
    )


def op_p(grid: DensityGrid) -> DensityGrid:
    """Primitive vanishing at 0, sampled at the bin centres.

    Trapezoid rule between centres plus a midpoint half-bin from the grid
    start: ``P_k = bw * (f_0 + ... + f_{k-1} + f_k / 2)``.
    """
    g = _from_zero(grid)
    f, v, bw = g.mass, g.variance, g.bin_width
    cs = np.concatenate([[0.0], np.cumsum(f)[:-1]])
    cv = np.concatenate([[0.0], np.cumsum(v)[:-1]])
    return replace(g, mass=bw * (cs + 0.5 * f), variance=bw**2 * (cv + 0.25 * v))


def op_l(grid: DensityGrid) -> DensityGrid:
    """``Id - P``; the variance ignores the (positive) correlation with ``P``."""
    g = _from_zero(grid)
    p = op_p(g)
    return replace(g, mass=g.mass - p.mass, variance=g.variance + p.variance)


def linear_conv_oracle(degrees: Sequence[int], ell) -> np.ndarray:
    """Exact density of ``x_1 + ... + x_n`` under ``prod x_i^{K_i} dx`` on the
    positive orthant: ``ell^{sum K + n - 1} prod K_i! / (sum K + n - 1)!``."""
    degrees = [int(k) for k in degrees]
    if not degrees or any(k < 0 for k in degrees) or len(degrees) > 10:
        raise InvalidArgument("degrees must be 1..10 nonnegative integers")
    n = len(degrees)
    tot = sum(degrees) + n - 1
    coef = math.exp(sum(math.lgamma(k + 1) for k in degrees) - math.lgamma(tot + 1))
    ell = np.asarray(ell, dtype=float)
    return coef * np.where(ell > 0, ell, 0.0) ** tot


# --- Friedman-Ramanujan fitting ----------------------------------------------------


@dataclass
class FRReport:
    poly_coeffs: np.ndarray  # ascending, in ell
    poly_stderr: np.ndarray
    degree: int
    residual: DensityGrid
    lambda_hat: float
    bound_constants: Tuple[float, float]
    check_range: Tuple[float, float]
    fit_window: Tuple[float, float]
    tail_windows: int = 0

    def to_json(self) -> dict:
        return {
            "polyCoeffs": [float(c) for c in self.poly_coeffs],
            "polyStderr": [float(c) for c in self.poly_stderr],
            "degree": self.degree,
            "lambdaHat": self.lambda_hat,
            "boundConstants": {"c0": self.bound_constants[0], "c": self.bound_constants[1]},
            "checkRange": list(self.check_range),
            "fitWindow": list(self.fit_window),
            "tailWindows": self.tail_windows,
            "residual": self.residual.to_json(),
        }


MAX_CONDITION = 1e12


def fr_decompose(
    grid: DensityGrid,
    max_degree: int,
    fit_window: Tuple[float, float],
    trim_tol: float = 1e-7,
    noise_factor: float = 10.0,
) -> FRReport:
    """Split ``density = P(ell) + r(ell)`` with ``deg P <= max_degree``.

    ``P`` is a (variance-weighted) least-squares fit on ``fit_window``.  The
    top coefficient is dropped and the fit repeated while it is within three
    standard errors of zero or contributes less than ``trim_tol`` relative to
    ``max |P|`` on the window; what survives gives the reported degree.
    ``lambda_hat`` is minus the slope of ``log`` of unit-window integrals of
    ``|r|`` over the windows that sit above the noise floor, lowered by two
    standard errors of that slope and clamped to ``(0, 1]``.  The bound
    constants are fitted on the first half of that range so that
    :func:`fr_bound_check` tests the second half out of sample.
    """
    if max_degree < 0:
        raise InvalidArgument("max_degree must be >= 0")
    w0, w1 = fit_window
    if not (grid.ell_min <= w0 < w1 <= grid.ell_max + 1e-9):
        raise InvalidArgument("fit window must lie inside the grid")
    c = grid.centers
    sel = (c >= w0) & (c <= w1)
    if sel.sum() <= max_degree + 1:
        raise InvalidArgument("fit window holds too few bins for the requested degree")
    x, y, var = c[sel], grid.mass[sel], grid.variance[sel]
    has_var = bool(np.all(var > 0))
    degree = max_degree
    coeffs, stderr = _poly_fit(x, y, var if has_var else None, degree)
    # backward elimination: drop the top term while it is indistinguishable
    # from zero or negligible on the window, then refit
    while degree > 0:
        top = np.max(np.abs(coeffs[degree] * x**degree))
        scale = max(float(np.max(np.abs(np.polynomial.polynomial.polyval(x, coeffs)))), 1e-300)
        if abs(coeffs[degree]) > 3 * stderr[degree] and top >= trim_tol * scale:
            break
        degree -= 1
        coeffs, stderr = _poly_fit(x, y, var if has_var else None, degree)
    scale = max(float(np.max(np.abs(np.polynomial.polynomial.polyval(x, coeffs)))), 1e-300)

    P = np.polynomial.polynomial.polyval(c, coeffs)
    r = grid.mass - P
    resid = replace(grid, mass=r, variance=grid.variance.copy())

    # noise floor per unit window: MC error, or the model misfit on the window
    if has_var:
        floor_density = 3.0 * np.sqrt(np.mean(var))
    else:
        floor_density = noise_factor * float(np.sqrt(np.mean(r[sel] ** 2)))
    floor_density = max(floor_density, 1e-14 * scale)
    per_unit = max(1, int(round(1.0 / grid.bin_width)))
    starts, vals = [], []
    for k in range(0, grid.n_bins - per_unit + 1, per_unit):
        if c[k] >= w0:
            break
        v = float(np.sum(np.abs(r[k : k + per_unit])) * grid.bin_width)
        if v <= floor_density * per_unit * grid.bin_width:
            break
        starts.append(grid.edges[k])
        vals.append(v)
    if len(starts) >= 3:
        A = np.vstack([np.ones(len(starts)), starts]).T
        beta, res, *_ = np.linalg.lstsq(A, np.log(vals), rcond=None)
        dof = len(starts) - 2
        s2 = float(res[0]) / dof if (dof > 0 and res.size) else 0.0
        se = math.sqrt(s2 * np.linalg.inv(A.T @ A)[1, 1]) if dof > 0 else 0.0
        lam = float(min(1.0, max(-beta[1] - 2 * se, 1e-6)))
        end = starts[-1] + 1.0
    else:
        lam = 1.0
        end = starts[-1] + 1.0 if starts else grid.ell_min + 1.0
    check = (1.0, max(1.0 + grid.bin_width, min(end, grid.ell_max)))
    c0, cexp = _fit_bound_constants(resid, lam, check)
    return FRReport(coeffs, stderr, degree, resid, lam, (c0, cexp), check, (w0, w1), len(starts))


def _poly_fit(x, y, var, degree):
    """Least squares in the monomial basis with equilibrated columns.

    Returns coefficients and their standard errors: from the supplied
    variances, or from the residual scatter when there are none.
    """
    wts = 1.0 / np.sqrt(var) if var is not None else np.ones_like(x)
    V = np.vander(x, degree + 1, increasing=True) * wts[:, None]
    col = np.linalg.norm(V, axis=0)
    Vn = V / col
    cond = np.linalg.cond(Vn)
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise DegreeTooHigh(f"polynomial fit of degree {degree} is ill-conditioned (condition {cond:.2e})")
    sol, *_ = np.linalg.lstsq(Vn, y * wts, rcond=None)
    gram_inv = np.linalg.inv(Vn.T @ Vn)
    if var is None:
        dof = max(len(x) - degree - 1, 1)
        gram_inv = gram_inv * float(np.sum((Vn @ sol - y) ** 2)) / dof
    stderr = np.sqrt(np.maximum(np.diag(gram_inv), 0.0)) / col
    return sol / col, stderr


def _cumulative_weighted(resid: DensityGrid) -> Tuple[np.ndarray, np.ndarray]:
    g = _from_zero(resid)
    e = g.edges[1:]
    # exact integral of e^l over each bin times the bin value
    seg = np.abs(g.mass) * (np.exp(g.edges[1:]) - np.exp(g.edges[:-1]))
    return e, np.cumsum(seg)


def _fit_bound_constants(resid: DensityGrid, lam: float, check: Tuple[float, float]) -> Tuple[float, float]:
    M, I = _cumulative_weighted(resid)
    lo, hi = check
    mid = lo + 0.5 * (hi - lo)
    sel = (M >= lo) & (M <= mid) & (I > 0)
    if sel.sum() < 2:
        sel = (M >= lo) & (M <= hi) & (I > 0)
    if not sel.any():
        return 1.0, 0.0
    g = np.log(I[sel]) - (1 - lam) * M[sel]
    lx = np.log1p(M[sel])
    cexp = float(max(0.0, np.polyfit(lx, g, 1)[0])) if sel.sum() >= 2 else 0.0
    c0 = float(np.exp(np.max(g - cexp * lx)))
    return c0, cexp


def fr_bound_check(report: FRReport, rel_slack: float = 1e-9) -> bool:
    """``int_0^M e^l |r| <= c0 (1 + M)^c e^{(1 - lambda) M}`` on the report's check range."""
    M, I = _cumulative_weighted(report.residual)
    lo, hi = report.check_range
    sel = (M >= lo) & (M <= hi + 1e-12)
    c0, cexp = report.bound_constants
    bound = c0 * (1 + M[sel]) ** cexp * np.exp((1 - report.lambda_hat) * M[sel])
    return bool(np.all(I[sel] <= bound * (1 + rel_slack)))
