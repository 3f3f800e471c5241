"""Fast invariant checks across all modules, aggregated into one report."""

from __future__ import annotations

import time
from dataclasses import dataclass
from fractions import Fraction
from typing import List

import numpy as np

from . import hypmat
from .catalog import SQUARE_TORUS_LENGTH, dual_curve, figure_eight, loop_catalog, pants_loop, torus_point
from .integrate import Polynomial
from .lengths import boundary_growth_probe, calibrate_twist_origin, figure_eight_length, loop_length, okai_dual_length
from .loops import PantsWord, dehn_twist
from .measure import DensityGrid, DomainSpec, WeightSpec, disintegrate_density, op_l
from .orbit import canonical_word, enumerate_orbit, simple_curves_brute_force
from .pants import solve_pants


@dataclass
class Check:
    name: str
    passed: bool
    residual: float
    tolerance: float
    seconds: float = 0.0

    def to_json(self) -> dict:
        return {
            "property": self.name,
            "passed": self.passed,
            "residual": self.residual,
            "tolerance": self.tolerance,
            "seconds": round(self.seconds, 3),
        }


def random_generator_words(rng, n_words: int, max_len: int = 100, lo: float = -50.0, hi: float = 50.0) -> hypmat.Mat2:
    """Products of ``n_words`` seeded random generator words of length
    ``1..max_len``, composed as one vectorised batch."""
    lens = rng.integers(1, max_len + 1, size=n_words)
    out = None
    for i in range(max_len):
        kind = rng.integers(0, 3, size=n_words)
        p = rng.uniform(lo, hi, size=n_words)
        live = i < lens
        g = hypmat.Mat2(
            np.where(live & (kind == 0), p, np.where(live & (kind == 2), -np.pi / 2, 0.0)),
            np.where(live & (kind > 0), p, 0.0),
            np.where(live & (kind == 2), np.pi / 2, 0.0),
        )
        out = g if out is None else out @ g
    return out


def sl2_residuals(u: hypmat.Mat2, v: hypmat.Mat2) -> dict:
    """Worst unimodularity, cyclic-trace and trace-formula residuals.

    Trace residuals are relative to ``|U| |V|``, the scale of the rounding
    error of any floating-point product.
    """
    scale = hypmat.log_norm(u) + hypmat.log_norm(v)

    def rel(tr):
        with np.errstate(over="ignore", under="ignore"):
            return tr.sign * np.exp(tr.log_abs - scale)

    tuv = rel(hypmat.trace_signed(u @ v))
    tvu = rel(hypmat.trace_signed(v @ u))
    tu, tv = hypmat.trace_signed(u), hypmat.trace_signed(v)
    with np.errstate(over="ignore", under="ignore"):
        prod = tu.sign * tv.sign * np.exp(tu.log_abs + tv.log_abs - scale)
    tinv = rel(hypmat.trace_signed(hypmat.invert(u) @ v))
    return {
        "unimodular": float(np.max(np.maximum(u.det_residual(), v.det_residual()))),
        "cyclic": float(np.max(np.abs(tuv - tvu))),
        "traceFormula": float(np.max(np.abs(tuv - prod + tinv))),
    }


def check_sl2(seed: int = 0, n_words: int = 1000) -> float:
    rng = np.random.default_rng(seed)
    r = sl2_residuals(random_generator_words(rng, n_words), random_generator_words(rng, n_words))
    return max(r.values())


def check_pants() -> float:
    g = np.linspace(0.05, 20, 12)
    x, y, z = np.meshgrid(g, g, np.linspace(0, 20, 12), indexing="ij")
    res = solve_pants(x.ravel(), y.ravel(), z.ravel()).residuals()
    return max(float(np.max(r)) for r in res.values())


def check_figure_eight(seed: int = 0) -> float:
    rng = np.random.default_rng(seed)
    p = rng.uniform(0.05, 8, size=(100, 3))
    from .coords import FNPoint

    fn = FNPoint({}, {"x": p[:, 0], "y": p[:, 1], "z": p[:, 2]})
    got = loop_length(figure_eight(), fn)
    want = figure_eight_length(p[:, 0], p[:, 1], p[:, 2])
    z = loop_length(pants_loop("a1 b1"), fn)
    return max(float(np.max(np.abs(got / want - 1))), float(np.max(np.abs(z / p[:, 2] - 1))))


def check_okai() -> float:
    loop = dual_curve()
    worst = 0.0
    for L in (0.0, 1.0, 4.0):
        for ell in (0.5, 2.0, 6.0):
            fn = torus_point(ell, 0.0, L)
            t0 = calibrate_twist_origin(loop, "a", fn)
            tau = np.linspace(-3, 3, 7)
            got = loop_length(loop, fn.with_twist("a", tau + t0))
            worst = max(worst, float(np.max(np.abs(got / okai_dual_length(ell, tau, L) - 1))))
    self_dual = float(loop_length(loop, torus_point()))
    return max(worst, abs(self_dual / SQUARE_TORUS_LENGTH - 1))


def check_twist_equivariance() -> float:
    worst = 0.0
    for entry in loop_catalog().values():
        for c in entry.loop.surface.interior_curves():
            fn = entry.point
            ell, tau = fn.length(c), fn.twist(c)
            a = loop_length(dehn_twist(entry.loop, c, 1), fn)
            b = loop_length(entry.loop, fn.with_twist(c, tau + ell))
            worst = max(worst, abs(a / b - 1))
    return worst


def check_growth() -> float:
    bad = 0
    for entry in loop_catalog().values():
        for c in entry.filled_boundaries:
            rep = boundary_growth_probe(entry.loop, entry.point, c, np.linspace(0.1, 20, 40))
            bad += (not rep.monotone) + (not rep.divergent)
    return float(bad)


def check_convolution() -> float:
    h = lambda X: X.sum(axis=1)
    g = disintegrate_density(h, WeightSpec.monomials((1, 0)), DomainSpec.orthant(2, 6.0), ell_max=5.0, bin_width=0.25,
                             method="quadrature", ell_points=3, quad_order=8)
    e = g.edges
    exact = (e[1:] ** 3 - e[:-1] ** 3) / 6 / g.bin_width
    return float(np.max(np.abs(g.mass - exact)))


def check_operators() -> float:
    bw = 0.01
    g = DensityGrid.from_function(np.exp, 0.0, 5.0, bw)
    ll = DensityGrid.from_function(lambda l: l * np.exp(l), 0.0, 5.0, bw)
    e1 = float(np.max(np.abs(op_l(g).mass - 1.0) / np.exp(g.centers)))
    e2 = float(np.max(np.abs(op_l(op_l(ll)).mass - ll.centers) / np.exp(ll.centers)))
    return max(e1, e2) / bw**2


def check_canonical(seed: int = 0) -> float:
    rng = np.random.default_rng(seed)
    bad = 0
    for _ in range(200):
        n = int(rng.integers(1, 10))
        w = PantsWord.from_letters([(str(rng.choice(["a", "b"])), int(rng.choice([1, -1]))) for _ in range(n)])
        c = canonical_word(w)
        bad += canonical_word(c) != c
    return float(bad)


def check_orbit() -> float:
    fn = torus_point()
    got = {e.word for e in enumerate_orbit(PantsWord.parse("a1"), fn, 6.0).entries}
    want = {w for w, _ in simple_curves_brute_force(fn, 6.0)}
    return float(len(got ^ want))


def check_polynomial() -> float:
    p = Polynomial.monomial((2, 1))
    return float(abs(p.integrate_box([(0, 1), (0, 1)]) - Fraction(1, 6)))


CHECKS: List[tuple] = [
    ("hypmat.sl2-identities", check_sl2, 1e-9),
    ("pants.hexagon-pentagon", check_pants, 1e-10),
    ("lengths.figure-eight-closed-form", check_figure_eight, 1e-9),
    ("lengths.okai-after-calibration", check_okai, 1e-6),
    ("loops.twist-equivariance", check_twist_equivariance, 1e-9),
    ("lengths.monotone-divergent-probes", check_growth, 0.0),
    ("measure.linear-convolution-oracle", check_convolution, 1e-8),
    ("measure.operator-algebra-per-bw2", check_operators, 1.0),
    ("orbit.canonical-idempotent", check_canonical, 0.0),
    ("orbit.bfs-vs-brute-force", check_orbit, 0.0),
    ("integrate.polynomial-box", check_polynomial, 0.0),
]


def run_selftest() -> List[Check]:
    out = []
    for name, fn, tol in CHECKS:
        t = time.perf_counter()
        try:
            r = float(fn())
        except Exception:  # a crash is a failed property, reported as such
            r = float("inf")
        out.append(Check(name, bool(r <= tol), r, tol, time.perf_counter() - t))
    return out
