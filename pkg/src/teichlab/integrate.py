"""Expectations of orbit length statistics and their densities.

The integrand over the filled surface's coordinates is
``F(h(x)) * y_1 ... y_N * V_Gamma(y, L)``, divided by the orbit index ``m`` and
by the normalising volume.  Interior (length, twist) pairs of the filled
surface range over a box cut out by properness; complement twists are already
folded into the ``y`` factors and are never sampled.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import integrate as sp_integrate
from scipy.interpolate import CubicSpline

from .coords import FNPoint
from .errors import ConfigurationError, InconsistentInput, InvalidArgument
from .lengths import FigureEightMap, loop_length
from .loops import LoopSpec
from .measure import DEFAULT_BIN_WIDTH, DensityGrid, DomainSpec, disintegrate_density, push_forward_density

Number = Union[int, float, Fraction]


# --- polynomials ------------------------------------------------------------------


def _as_fraction(v) -> Fraction:
    if isinstance(v, Fraction):
        return v
    if isinstance(v, str):
        return Fraction(v)
    if isinstance(v, (int, np.integer)):
        return Fraction(int(v))
    return Fraction(float(v))


class Polynomial:
    """Sparse multivariate polynomial with exact rational coefficients."""

    def __init__(self, nvars: int, terms: Optional[Mapping[Tuple[int, ...], Number]] = None):
        if nvars < 0:
            raise InvalidArgument("nvars must be >= 0")
        self.nvars = nvars
        self.terms: Dict[Tuple[int, ...], Fraction] = {}
        for exp, c in (terms or {}).items():
            exp = tuple(int(e) for e in exp)
            if len(exp) != nvars or any(e < 0 for e in exp):
                raise InvalidArgument(f"exponent {exp} does not fit {nvars} variables")
            c = _as_fraction(c)
            if c:
                self.terms[exp] = self.terms.get(exp, Fraction(0)) + c
        self.terms = {e: c for e, c in self.terms.items() if c != 0}

    @classmethod
    def constant(cls, nvars: int, c: Number = 1) -> "Polynomial":
        return cls(nvars, {(0,) * nvars: c})

    @classmethod
    def monomial(cls, exp: Sequence[int], c: Number = 1) -> "Polynomial":
        return cls(len(exp), {tuple(exp): c})

    def __eq__(self, other) -> bool:
        return isinstance(other, Polynomial) and self.nvars == other.nvars and self.terms == other.terms

    def __repr__(self) -> str:
        return f"Polynomial({self.nvars}, {self.terms!r})"

    def _check(self, other: "Polynomial") -> None:
        if self.nvars != other.nvars:
            raise InvalidArgument(f"variable count mismatch: {self.nvars} vs {other.nvars}")

    def __add__(self, other: "Polynomial") -> "Polynomial":
        self._check(other)
        out = dict(self.terms)
        for e, c in other.terms.items():
            out[e] = out.get(e, Fraction(0)) + c
        return Polynomial(self.nvars, out)

    def __mul__(self, other: "Polynomial") -> "Polynomial":
        self._check(other)
        out: Dict[Tuple[int, ...], Fraction] = {}
        for e1, c1 in self.terms.items():
            for e2, c2 in other.terms.items():
                e = tuple(a + b for a, b in zip(e1, e2))
                out[e] = out.get(e, Fraction(0)) + c1 * c2
        return Polynomial(self.nvars, out)

    def scale(self, c: Number) -> "Polynomial":
        return Polynomial(self.nvars, {e: v * _as_fraction(c) for e, v in self.terms.items()})

    def degree(self) -> int:
        return max((sum(e) for e in self.terms), default=0)

    def is_even(self) -> bool:
        return all(k % 2 == 0 for e in self.terms for k in e)

    def __call__(self, *point):
        """Evaluate at a point; arguments may be numpy arrays (broadcast) or exact rationals."""
        if len(point) != self.nvars:
            raise InvalidArgument(f"expected {self.nvars} values, got {len(point)}")
        exact = all(isinstance(p, (int, Fraction)) for p in point)
        if exact:
            total = Fraction(0)
            for e, c in self.terms.items():
                term = c
                for p, k in zip(point, e):
                    term *= Fraction(p) ** k
                total += term
            return total
        arrs = [np.asarray(p, dtype=float) for p in point]
        shape = np.broadcast(*arrs).shape if arrs else ()
        total = np.zeros(shape)
        for e, c in self.terms.items():
            term = np.full(shape, float(c))
            for p, k in zip(arrs, e):
                if k:
                    term = term * p**k
            total = total + term
        return float(total) if total.ndim == 0 else total

    def integrate_box(self, bounds: Sequence[Tuple[Number, Number]]):
        """Exact integral over a box; rational bounds give a :class:`Fraction`."""
        if len(bounds) != self.nvars:
            raise InvalidArgument(f"need {self.nvars} bounds, got {len(bounds)}")
        exact = all(isinstance(v, (int, Fraction)) for b in bounds for v in b)
        conv = Fraction if exact else float
        total = conv(0)
        for e, c in self.terms.items():
            term = conv(c)
            for (a, b), k in zip(bounds, e):
                a, b = conv(a), conv(b)
                term *= (b ** (k + 1) - a ** (k + 1)) / (k + 1)
            total += term
        return total

    def to_json(self) -> dict:
        return {",".join(map(str, e)): str(c) for e, c in sorted(self.terms.items())}

    @classmethod
    def from_json(cls, nvars: int, data: Mapping[str, object]) -> "Polynomial":
        terms = {}
        for key, v in data.items():
            exp = tuple(int(t) for t in key.split(",")) if key else ()
            terms[exp] = v
        return cls(nvars, terms)


def poly_ops(p: Polynomial, q: Optional[Polynomial], op: str, arg=None):
    """Dispatch for ``eval``, ``add``, ``multiply`` and ``integrateBox``."""
    if op == "eval":
        return p(*arg)
    if op == "add":
        return p + q
    if op == "multiply":
        return p * q
    if op == "integrateBox":
        return p.integrate_box(arg)
    raise InvalidArgument(f"unknown polynomial op {op!r}")


class VolumeRegistry:
    """Volume polynomials keyed by ``(g, n)``, in the boundary lengths.

    Only the thrice-holed sphere (``V = 1``) is built in; other entries are
    configuration data.
    """

    def __init__(self):
        self._store: Dict[Tuple[int, int], Polynomial] = {(0, 3): Polynomial.constant(3, 1)}

    def add(self, g: int, n: int, poly: Polynomial) -> None:
        if poly.nvars != n:
            raise ConfigurationError(f"V_({g},{n}) must be a polynomial in {n} variables")
        if not poly.is_even():
            raise ConfigurationError(f"V_({g},{n}) has odd powers; volume polynomials are even in each L_i")
        self._store[(g, n)] = poly

    def get(self, g: int, n: int) -> Polynomial:
        try:
            return self._store[(g, n)]
        except KeyError:
            raise ConfigurationError(f"no volume polynomial registered for (g, n) = ({g}, {n})") from None

    def __contains__(self, key) -> bool:
        return key in self._store

    def load_entry(self, data: Mapping) -> None:
        extra = set(data) - {"g", "n", "coeffs"}
        if extra or not {"g", "n", "coeffs"} <= set(data):
            raise ConfigurationError("volume entries need exactly the fields g, n, coeffs")
        g, n = int(data["g"]), int(data["n"])
        self.add(g, n, Polynomial.from_json(n, data["coeffs"]))

    def load(self, path) -> None:
        with open(path) as fh:
            data = json.load(fh)
        for entry in data if isinstance(data, list) else [data]:
            self.load_entry(entry)


# --- test functions ------------------------------------------------------------------


@dataclass(frozen=True)
class TestFunction:
    """``indicator`` of ``[0, a]`` or a clamped cubic ``spline`` that vanishes
    outside its knot range."""

    kind: str
    a: float = 0.0
    knots: Tuple[float, ...] = ()
    values: Tuple[float, ...] = ()

    __test__ = False  # keep pytest from collecting this class

    def __post_init__(self):
        if self.kind == "indicator":
            if not self.a >= 0:
                raise ConfigurationError("indicator cutoff must be >= 0")
        elif self.kind == "spline":
            if len(self.knots) < 2 or len(self.knots) != len(self.values):
                raise ConfigurationError("spline needs matching knots and values (at least two)")
            if np.any(np.diff(self.knots) <= 0):
                raise ConfigurationError("spline knots must increase")
            if self.values[0] != 0 or self.values[-1] != 0:
                raise ConfigurationError("spline values must vanish at the end knots")
        elif self.kind != "zero":
            raise ConfigurationError(f"unknown test function kind {self.kind!r}")

    @classmethod
    def indicator(cls, a: float) -> "TestFunction":
        return cls("indicator", a=float(a))

    @classmethod
    def spline(cls, knots, values) -> "TestFunction":
        return cls("spline", knots=tuple(map(float, knots)), values=tuple(map(float, values)))

    @property
    def support_max(self) -> float:
        if self.kind == "indicator":
            return self.a
        if self.kind == "spline":
            return self.knots[-1]
        return 0.0

    def __call__(self, ell):
        ell = np.asarray(ell, dtype=float)
        if self.kind == "zero":
            return np.zeros_like(ell)
        if self.kind == "indicator":
            return ((ell >= 0) & (ell <= self.a)).astype(float)
        cs = CubicSpline(self.knots, self.values, bc_type="clamped")
        inside = (ell >= self.knots[0]) & (ell <= self.knots[-1])
        return np.where(inside, cs(np.clip(ell, self.knots[0], self.knots[-1])), 0.0)

    def to_json(self) -> dict:
        if self.kind == "indicator":
            return {"type": "indicator", "a": self.a}
        if self.kind == "spline":
            return {"type": "spline", "knots": list(self.knots), "values": list(self.values)}
        return {"type": "zero"}

    @classmethod
    def from_json(cls, data: Mapping) -> "TestFunction":
        kind = data.get("type")
        allowed = {"indicator": {"type", "a"}, "spline": {"type", "knots", "values"}, "zero": {"type"}}
        if kind not in allowed:
            raise ConfigurationError(f"testFunction.type must be one of {sorted(allowed)}")
        extra = set(data) - allowed[kind]
        if extra:
            raise ConfigurationError(f"unknown testFunction fields {sorted(extra)}")
        if kind == "indicator":
            return cls.indicator(data["a"])
        if kind == "spline":
            return cls.spline(data["knots"], data["values"])
        return cls("zero")


# --- configuration ------------------------------------------------------------------

ANALYTIC_MAPS = ("figureEight",)


@dataclass
class ExpectationConfig:
    """Inputs of the integration formula.

    Either ``loop`` (with ``integrated`` naming the ``N`` boundary curves of
    the filled surface that are integrated against ``y``) or ``analytic``
    (a named closed-form length map) must be given.  ``complement_volume`` is a
    polynomial in ``(y_1..y_N, L_1..L_M)`` where the ``L`` are the values of
    ``fixed`` in sorted-key order.
    """

    m_gamma: int = 1
    test_function: TestFunction = field(default_factory=lambda: TestFunction.indicator(5.0))
    complement_volume: Polynomial = None
    teich_half_dim: int = 0
    curve_count: int = 3
    normalization: Union[float, str] = "unnormalized"
    loop: Optional[LoopSpec] = None
    analytic: Optional[str] = "figureEight"
    integrated: Tuple[str, ...] = ()
    fixed: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if int(self.m_gamma) != self.m_gamma or self.m_gamma < 1:
            raise ConfigurationError("mGamma must be an integer >= 1")
        if self.normalization != "unnormalized" and not (
            isinstance(self.normalization, (int, float)) and self.normalization > 0
        ):
            raise ConfigurationError("normalization must be a positive number or 'unnormalized'")
        if self.complement_volume is None:
            self.complement_volume = Polynomial.constant(self.curve_count + len(self.fixed), 1)
        if (self.loop is None) == (self.analytic is None):
            raise ConfigurationError("give exactly one of loop or analytic")
        if self.analytic is not None:
            if self.analytic not in ANALYTIC_MAPS:
                raise ConfigurationError(f"analytic map must be one of {ANALYTIC_MAPS}")
            if self.teich_half_dim != 0 or self.curve_count != 3:
                raise InconsistentInput("figureEight fills a pair of pants: teichHalfDim 0, curveCount 3")
        else:
            surf = self.loop.surface
            k = len(surf.interior_curves())
            if self.teich_half_dim != k:
                raise InconsistentInput(f"teichHalfDim is {self.teich_half_dim} but the filled surface has {k} interior curves")
            if len(self.integrated) != self.curve_count:
                raise InconsistentInput("curveCount must equal the number of integrated boundary curves")
            bnd = set(surf.boundary_curves())
            if set(self.integrated) | set(self.fixed) != bnd or set(self.integrated) & set(self.fixed):
                raise InconsistentInput("integrated and fixed must partition the filled surface's boundary curves")
        if self.complement_volume.nvars != self.curve_count + len(self.fixed):
            raise InconsistentInput("complementVolume must be a polynomial in the N y-variables and the fixed L's")

    @property
    def dim(self) -> int:
        return 2 * self.teich_half_dim + self.curve_count

    def interior_curves(self) -> List[str]:
        return [] if self.loop is None else sorted(self.loop.surface.interior_curves())

    def fn_point(self, X: np.ndarray) -> FNPoint:
        """FN point batch from coordinate rows ``[l_1, t_1, ..., y_1, ..., y_N]``."""
        interior = {c: (X[:, 2 * i], X[:, 2 * i + 1]) for i, c in enumerate(self.interior_curves())}
        off = 2 * self.teich_half_dim
        boundary = {c: X[:, off + j] for j, c in enumerate(self.integrated)}
        boundary.update({c: np.full(len(X), float(v)) for c, v in self.fixed.items()})
        return FNPoint(interior, boundary)

    def length_map(self) -> Callable:
        if self.analytic == "figureEight":
            return FigureEightMap()
        return _LoopMap(self)

    def to_json(self) -> dict:
        out = {
            "mGamma": self.m_gamma,
            "testFunction": self.test_function.to_json(),
            "complementVolume": self.complement_volume.to_json(),
            "teichHalfDim": self.teich_half_dim,
            "curveCount": self.curve_count,
            "normalization": self.normalization,
        }
        if self.loop is not None:
            out.update(loop=self.loop.to_json(), integrated=list(self.integrated), fixed=dict(self.fixed))
        else:
            out["analytic"] = self.analytic
        return out

    @classmethod
    def from_json(cls, data: Mapping) -> "ExpectationConfig":
        keys = {
            "mGamma",
            "testFunction",
            "complementVolume",
            "teichHalfDim",
            "curveCount",
            "normalization",
            "loop",
            "analytic",
            "integrated",
            "fixed",
        }
        extra = set(data) - keys
        if extra:
            raise ConfigurationError(f"unknown ExpectationConfig fields {sorted(extra)}")
        loop = LoopSpec.from_json(data["loop"]) if "loop" in data else None
        analytic = data.get("analytic", None if loop is not None else "figureEight")
        fixed = {k: float(v) for k, v in data.get("fixed", {}).items()}
        n = int(data.get("curveCount", 3))
        vol = data.get("complementVolume")
        poly = Polynomial.from_json(n + len(fixed), vol) if vol is not None else None
        tf = TestFunction.from_json(data["testFunction"]) if "testFunction" in data else TestFunction.indicator(5.0)
        return cls(
            m_gamma=int(data.get("mGamma", 1)),
            test_function=tf,
            complement_volume=poly,
            teich_half_dim=int(data.get("teichHalfDim", 0)),
            curve_count=n,
            normalization=data.get("normalization", "unnormalized"),
            loop=loop,
            analytic=analytic,
            integrated=tuple(data.get("integrated", ())),
            fixed=fixed,
        )


class _LoopMap:
    def __init__(self, cfg: ExpectationConfig):
        self.cfg = cfg

    def __call__(self, X):
        X = np.atleast_2d(X)
        return np.asarray(loop_length(self.cfg.loop, self.cfg.fn_point(X), strict=False), dtype=float)


class FormulaWeight:
    """``y_1 ... y_N * V_Gamma(y, L)`` on coordinate rows."""

    def __init__(self, cfg: ExpectationConfig):
        self.cfg = cfg
        self.dim = cfg.dim

    def evaluate(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        off = 2 * self.cfg.teich_half_dim
        ys = [X[:, off + j] for j in range(self.cfg.curve_count)]
        Ls = [np.full(len(X), float(self.cfg.fixed[k])) for k in sorted(self.cfg.fixed)]
        prod = np.prod(np.stack(ys), axis=0) if ys else np.ones(len(X))
        return prod * np.asarray(self.cfg.complement_volume(*ys, *Ls)) * np.ones(len(X))


# --- properness -------------------------------------------------------------------


def _domain(cfg: ExpectationConfig, R: float) -> DomainSpec:
    lo, hi = [], []
    for _ in range(cfg.teich_half_dim):
        lo += [0.0, -R]
        hi += [R, R]
    lo += [0.0] * cfg.curve_count
    hi += [R] * cfg.curve_count
    return DomainSpec.box(lo, hi)


def _face_samples(lo, hi, rng, per_face: int) -> np.ndarray:
    d = len(lo)
    rows = []
    for i in range(d):
        for side in (lo[i], hi[i]):
            if side == lo[i] == 0.0:
                continue  # the zero face is interior to the true domain
            F = rng.uniform(lo, hi, size=(per_face, d))
            F[:, i] = side
            rows.append(F)
    return np.vstack(rows) if rows else np.zeros((0, d))


def properness_radius(
    cfg: ExpectationConfig, threshold: float, seed: int = 0, start: float = 1.0, limit: float = 1e4, per_face: int = 2000
) -> float:
    """Smallest doubling radius ``R`` with ``h > threshold`` sampled on every
    outer face of the coordinate box, times a safety factor 2.

    Boundary lengths and twists are checked on their outer faces; lengths of
    interior curves also on the face ``l = R``.
    """
    h = cfg.length_map()
    rng = np.random.default_rng(seed)
    R = start
    while R <= limit:
        dom = _domain(cfg, R)
        F = _face_samples(np.asarray(dom.lower), np.asarray(dom.upper), rng, per_face)
        if F.size == 0:
            return 2 * R
        with np.errstate(all="ignore"):
            vals = np.asarray(h(F), dtype=float)
        vals = np.where(np.isfinite(vals), vals, np.inf)
        if np.all(vals > threshold):
            return 2 * R
        R *= 2
    raise ConfigurationError(f"effective domain unbounded: length stays <= {threshold} on faces at radius {limit:g}")


# --- engines -------------------------------------------------------------------------


def _norm(cfg: ExpectationConfig) -> float:
    return 1.0 if cfg.normalization == "unnormalized" else float(cfg.normalization)


def expectation_via_formula(
    cfg: ExpectationConfig, n_samples: int = 200_000, seed: int = 0, radius: Optional[float] = None, batch: int = 200_000
) -> Tuple[float, float]:
    """Monte Carlo value and standard error of the integration formula."""
    F = cfg.test_function
    if F.kind == "zero":
        return 0.0, 0.0
    R = radius if radius is not None else properness_radius(cfg, F.support_max, seed)
    dom = _domain(cfg, R)
    h = cfg.length_map()
    wt = FormulaWeight(cfg)
    rng = np.random.default_rng(seed)
    vol = dom.box_volume()
    s1 = s2 = 0.0
    done = 0
    while done < n_samples:
        m = min(batch, n_samples - done)
        X = dom.sample(m, rng)
        with np.errstate(all="ignore"):
            ell = np.asarray(h(X), dtype=float)
        fv = np.where(np.isfinite(ell), F(np.nan_to_num(ell, nan=np.inf)), 0.0)
        y = vol * fv * wt.evaluate(X)
        s1 += float(y.sum())
        s2 += float((y**2).sum())
        done += m
    mean = s1 / n_samples
    var = max(s2 / n_samples - mean**2, 0.0) / n_samples
    scale = 1.0 / (cfg.m_gamma * _norm(cfg))
    return mean * scale, math.sqrt(var) * scale


def density_via_formula(
    cfg: ExpectationConfig,
    ell_min: float = 0.0,
    ell_max: float = 10.0,
    bin_width: float = DEFAULT_BIN_WIDTH,
    n_samples: int = 200_000,
    seed: int = 0,
    engine: str = "pushforward",
    radius: Optional[float] = None,
    **engine_options,
) -> DensityGrid:
    """Density in ``ell`` of the formula's measure (before applying ``F``).

    ``engine`` is ``pushforward`` (histogram), ``disintegrate`` (Monte Carlo
    level sets) or ``quadrature`` (nested Gauss level sets; box domains with
    ``h`` nondecreasing in every coordinate).
    """
    R = radius if radius is not None else properness_radius(cfg, ell_max, seed)
    dom = _domain(cfg, R)
    h = cfg.length_map()
    wt = FormulaWeight(cfg)
    if engine == "pushforward":
        g = push_forward_density(h, wt, dom, n_samples, seed, ell_min, ell_max, bin_width)
    elif engine in ("disintegrate", "quadrature"):
        nb = DensityGrid.n_bins_for(ell_min, ell_max, bin_width)
        g = disintegrate_density(
            h,
            wt,
            dom,
            ell_min=ell_min,
            ell_max=ell_max,
            bin_width=bin_width,
            inner_samples=max(1, n_samples // nb),
            seed=seed,
            method="mc" if engine == "disintegrate" else "quadrature",
            **engine_options,
        )
    else:
        raise InvalidArgument(f"unknown density engine {engine!r}")
    scale = 1.0 / (cfg.m_gamma * _norm(cfg))
    g.mass = g.mass * scale
    g.variance = g.variance * scale**2
    return g


def counting_curve(density: DensityGrid) -> DensityGrid:
    """Running integral ``Q(a) = int_0^a density`` evaluated at the right bin
    edges; the variance adds the bin variances (bins are independent)."""
    if np.any(density.mass < -1e-12 * max(1.0, float(np.max(np.abs(density.mass))))):
        raise InvalidArgument("counting curve needs a nonnegative density")
    bw = density.bin_width
    q = np.cumsum(np.maximum(density.mass, 0.0)) * bw
    v = np.cumsum(density.variance) * bw**2
    return DensityGrid(density.ell_min, density.ell_max, bw, q, v, density.total_samples)


def counting_at(curve: DensityGrid, a: float) -> Tuple[float, float]:
    """``Q(a)`` read off a counting curve at a bin edge (``a`` is snapped down)."""
    k = int(math.floor((a - curve.ell_min) / curve.bin_width + 1e-9)) - 1
    if k < 0:
        return 0.0, 0.0
    k = min(k, curve.n_bins - 1)
    return float(curve.mass[k]), float(math.sqrt(curve.variance[k]))


# --- twist unfolding -------------------------------------------------------------------


def twist_unfolding_check(
    h_of_twist: Callable[[np.ndarray], np.ndarray],
    ell: float,
    F: Callable,
    K: int,
    tau_span: float,
    panels: int = 64,
    order: int = 16,
) -> Tuple[float, float]:
    """Folded ``int_0^ell sum_{|k|<=K} F(h(t + k ell)) dt`` by composite Gauss
    and unfolded ``int F(h(t)) dt`` over ``[-tau_span, tau_span]`` by adaptive
    quadrature."""
    x, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(0.0, ell, panels + 1)
    t = ((edges[:-1, None] + edges[1:, None]) / 2 + (edges[1:, None] - edges[:-1, None]) / 2 * x[None, :]).ravel()
    wt = ((edges[1:, None] - edges[:-1, None]) / 2 * w[None, :]).ravel()
    folded = 0.0
    for k in range(-K, K + 1):
        folded += float(np.sum(wt * F(h_of_twist(t + k * ell))))
    pts = np.linspace(-tau_span, tau_span, 65)
    unfolded = 0.0
    for a, b in zip(pts[:-1], pts[1:]):
        val, _ = sp_integrate.quad(lambda s: float(F(h_of_twist(np.array([s])))[0]), a, b, epsabs=1e-13, epsrel=1e-12, limit=200)
        unfolded += val
    return folded, unfolded
