from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from teichlab.errors import ConfigurationError, DegreeTooHigh, EmptyDensity, InvalidArgument
from teichlab.lengths import FigureEightMap
from teichlab.measure import (
    DensityGrid,
    FRReport,
    DomainSpec,
    WeightSpec,
    disintegrate_density,
    fr_bound_check,
    fr_decompose,
    linear_conv_oracle,
    op_l,
    op_p,
    pseudo_length_transform,
    push_forward_density,
    u_inverse,
    u_map,
)

SUM = lambda X: X.sum(axis=1)


def bin_average(f, grid, points=201):
    e = grid.edges
    return np.array([np.mean(f(np.linspace(a, b, points))) for a, b in zip(e[:-1], e[1:])])


def l1(a, b, bw):
    return float(np.sum(np.abs(a - b)) * bw)


def combined_se(bw, *variances):
    """Sum over bins of the per-bin standard error of the difference."""
    return float(np.sum(np.sqrt(sum(variances))) * bw)


# --- grids -----------------------------------------------------------------------------


def test_grid_shapes_and_json_round_trip():
    g = DensityGrid.from_function(lambda l: l**2, 0.0, 3.0, 0.1)
    assert g.n_bins == 30 and g.edges[-1] == pytest.approx(3.0)
    back = DensityGrid.from_json(g.to_json())
    np.testing.assert_array_equal(back.mass, g.mass)
    with pytest.raises(ConfigurationError):
        DensityGrid.from_json({**g.to_json(), "extra": 1})
    with pytest.raises(InvalidArgument):
        DensityGrid(0.0, 1.0, 0.1, np.zeros(3))


def test_merge_averages_by_samples():
    a = DensityGrid(0.0, 1.0, 0.5, np.array([1.0, 1.0]), np.array([1.0, 1.0]), 100)
    b = DensityGrid(0.0, 1.0, 0.5, np.array([4.0, 4.0]), np.array([1.0, 1.0]), 300)
    m = a.merge(b)
    np.testing.assert_allclose(m.mass, 3.25)
    assert m.total_samples == 400
    with pytest.raises(InvalidArgument):
        a.merge(DensityGrid.zeros(0.0, 1.0, 0.25))


# --- pushforward -----------------------------------------------------------------------


def test_pushforward_uniform():
    g = push_forward_density(lambda X: X[:, 0], WeightSpec.uniform(1), DomainSpec.box([0], [1]), 200_000, seed=1,
                             ell_min=0.0, ell_max=1.0, bin_width=0.1)
    assert np.all(np.abs(g.mass - 1.0) < 5 * g.stderr + 1e-12)
    assert g.total_mass() == pytest.approx(1.0, abs=1e-12)


def test_pushforward_triangle():
    g = push_forward_density(SUM, WeightSpec.uniform(2), DomainSpec.box([0, 0], [1, 1]), 400_000, seed=2,
                             ell_min=0.0, ell_max=2.0, bin_width=0.1)
    want = bin_average(lambda l: np.where(l < 1, l, 2 - l), g)
    assert np.all(np.abs(g.mass - want) < 5 * g.stderr)
    at = lambda x: np.interp(x, g.centers, g.mass)
    assert at(0.5) == pytest.approx(0.5, abs=0.02) and at(1.5) == pytest.approx(0.5, abs=0.02)


def test_pushforward_is_deterministic_per_seed():
    args = (SUM, WeightSpec.uniform(2), DomainSpec.orthant(2, 3.0), 50_000)
    a, b = push_forward_density(*args, seed=9), push_forward_density(*args, seed=9)
    np.testing.assert_array_equal(a.mass, b.mass)


def test_pushforward_empty_domain():
    dom = DomainSpec((0.0, 0.0), (1.0, 1.0), A=((1.0, 1.0),), b=(-1.0,))
    with pytest.raises(EmptyDensity):
        push_forward_density(SUM, WeightSpec.uniform(2), dom, 1000)


def test_mismatched_dimensions():
    with pytest.raises(ConfigurationError):
        push_forward_density(SUM, WeightSpec.uniform(3), DomainSpec.orthant(2, 1.0), 10)


# --- disintegration ------------------------------------------------------------------------


def test_disintegration_uniform_sum():
    g = disintegrate_density(SUM, WeightSpec.uniform(2), DomainSpec.orthant(2, 6.0), ell_max=5.0, bin_width=0.25,
                             method="quadrature")
    e = g.edges
    np.testing.assert_allclose(g.mass, (e[1:] + e[:-1]) / 2, rtol=1e-8, atol=1e-10)


def test_disintegration_weighted_sum():
    g = disintegrate_density(SUM, WeightSpec.monomials((1, 0)), DomainSpec.orthant(2, 6.0), ell_max=5.0,
                             bin_width=0.25, method="quadrature")
    e = g.edges
    np.testing.assert_allclose(g.mass, (e[1:] ** 3 - e[:-1] ** 3) / 6 / 0.25, rtol=1e-8, atol=1e-10)


def test_disintegration_mc_is_unbiased():
    g = disintegrate_density(SUM, WeightSpec.uniform(3), DomainSpec.orthant(3, 8.0), ell_max=5.0, bin_width=0.25,
                             inner_samples=4000, seed=3)
    want = bin_average(lambda l: l**2 / 2, g)
    assert l1(g.mass, want, 0.25) <= 3 * combined_se(0.25, g.variance)


def test_disintegration_rejects_bad_pivot_and_method():
    with pytest.raises(InvalidArgument):
        disintegrate_density(SUM, WeightSpec.uniform(2), DomainSpec.orthant(2, 1.0), pivot=5)
    with pytest.raises(InvalidArgument):
        disintegrate_density(SUM, WeightSpec.uniform(2), DomainSpec.orthant(2, 1.0), method="magic")


@pytest.mark.parametrize("degs", [(0, 0), (1, 0), (0, 2, 1)])
def test_engines_match_linear_oracle(degs):
    n = len(degs)
    dom, w = DomainSpec.orthant(n, 10.0), WeightSpec.monomials(degs)
    pf = push_forward_density(SUM, w, dom, 300_000, seed=4, ell_max=8.0, bin_width=0.2)
    di = disintegrate_density(SUM, w, dom, ell_max=8.0, bin_width=0.2, inner_samples=3000, seed=5)
    exact = bin_average(lambda l: linear_conv_oracle(degs, l), pf)
    for g in (pf, di):
        assert l1(g.mass, exact, 0.2) <= 3 * combined_se(0.2, g.variance)
    assert l1(pf.mass, di.mass, 0.2) <= 3 * combined_se(0.2, pf.variance, di.variance)


def test_engines_agree_on_figure_eight():
    h = FigureEightMap()
    dom, w = DomainSpec.orthant(3, 8.0), WeightSpec.monomials((1, 1, 1))
    pf = push_forward_density(h, w, dom, 300_000, seed=6, ell_min=0.0, ell_max=10.0, bin_width=0.2)
    di = disintegrate_density(h, w, dom, ell_min=0.0, ell_max=10.0, bin_width=0.2, inner_samples=3000, seed=7)
    assert l1(pf.mass, di.mass, 0.2) <= 3 * combined_se(0.2, pf.variance, di.variance)
    # nothing is shorter than the figure-eight systole at the cusp limit
    floor = 2 * math.acosh(3)
    assert np.all(pf.mass[pf.edges[1:] <= floor - 0.2] == 0)
    assert np.all(di.mass[di.edges[1:] <= floor - 0.2] == 0)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 3), st.integers(0, 3), st.integers(0, 2**31))
def test_mass_conservation(k1, k2, seed):
    # the total pushforward mass equals the weighted volume of the box
    dom, w = DomainSpec.orthant(2, 2.0), WeightSpec.monomials((k1, k2))
    g = push_forward_density(SUM, w, dom, 100_000, seed=seed, ell_max=4.0, bin_width=0.25)
    vol = 2.0 ** (k1 + 1) / (k1 + 1) * 2.0 ** (k2 + 1) / (k2 + 1)
    se = math.sqrt(np.sum(g.variance)) * 0.25
    assert abs(g.total_mass() - vol) <= 5 * se + 1e-12


# --- change of variables --------------------------------------------------------------------


@pytest.mark.parametrize("ell", [1.0, 10.0, 100.0])
def test_u_map_identity(ell):
    assert float(u_map(ell)) == pytest.approx(2 * math.log(2 * math.cosh(ell / 2)), rel=1e-14)
    assert float(u_inverse(u_map(ell))) == pytest.approx(ell, rel=1e-10)


def test_pseudo_length_round_trip():
    # u' = tanh(l/2) vanishes at 0, so a uniform u grid cannot resolve mass
    # near l = 0; length densities vanish below the systole anyway
    g = DensityGrid.from_function(lambda l: np.where((l > 2) & (l < 10), np.sin(np.pi * (l - 2) / 8) ** 4, 0.0),
                                  0.0, 12.0, 0.01)
    fwd = pseudo_length_transform(g)
    back = pseudo_length_transform(fwd, "inverse", target=(0.0, 12.0, 0.01))
    assert fwd.total_mass() == pytest.approx(g.total_mass(), rel=1e-12)
    assert l1(back.mass, g.mass, 0.01) < 1e-6


def test_pseudo_length_preserves_mass_of_constant():
    g = DensityGrid.from_function(lambda l: np.where((l > 5) & (l < 6), 1.0, 0.0), 0.0, 10.0, 0.05)
    out = pseudo_length_transform(g)
    assert out.total_mass() == pytest.approx(1.0, rel=1e-12)
    lo, hi = float(u_map(5.0)), float(u_map(6.0))
    c = out.centers
    assert np.all(out.mass[(c < lo - 0.05) | (c > hi + 0.05)] == 0)


def test_pseudo_length_rejects_bad_input():
    g = DensityGrid.zeros(-1.0, 1.0, 0.1)
    with pytest.raises(InvalidArgument):
        pseudo_length_transform(g)
    with pytest.raises(InvalidArgument):
        pseudo_length_transform(DensityGrid.zeros(0.0, 1.0, 0.1), "sideways")


# --- operators -------------------------------------------------------------------------


BW = 0.01


def grid_of(f):
    return DensityGrid.from_function(f, 0.0, 5.0, BW)


def test_op_p_examples():
    c = grid_of(lambda l: l).centers
    assert np.max(np.abs(op_p(grid_of(lambda l: 1.0)).mass - c)) < 1e-12
    assert np.max(np.abs(op_p(grid_of(lambda l: l)).mass - c**2 / 2)) < BW**2
    assert np.max(np.abs(op_p(grid_of(np.exp)).mass - np.expm1(c)) / np.exp(c)) < BW**2


def test_op_l_examples():
    c = grid_of(lambda l: l).centers
    assert np.max(np.abs(op_l(grid_of(np.exp)).mass - 1.0) / np.exp(c)) < BW**2
    assert np.max(np.abs(op_l(grid_of(lambda l: 1.0)).mass - (1 - c))) < 1e-12
    twice = op_l(op_l(grid_of(lambda l: l * np.exp(l))))
    assert np.max(np.abs(twice.mass - c) / np.exp(c)) < BW**2


def test_op_p_raises_degree():
    g = grid_of(lambda l: 3 * l**2 - l + 2)
    c = g.centers
    want = c**3 - c**2 / 2 + 2 * c
    assert np.max(np.abs(op_p(g).mass - want)) < 10 * BW**2


@settings(max_examples=30)
@given(st.lists(st.floats(-3, 3), min_size=1, max_size=4))
def test_p_and_l_commute(coeffs):
    g = grid_of(lambda l: np.polynomial.polynomial.polyval(l, coeffs) * np.exp(-l / 2))
    a, b = op_p(op_l(g)).mass, op_l(op_p(g)).mass
    assert np.max(np.abs(a - b)) < 1e-9 * (1 + np.max(np.abs(g.mass)))


def test_operators_extend_from_zero():
    g = DensityGrid.from_function(lambda l: np.ones_like(l), 1.0, 2.0, 0.1)
    p = op_p(g)
    assert p.ell_min == 0.0 and p.n_bins == 20
    with pytest.raises(InvalidArgument):
        op_p(DensityGrid.zeros(-1.0, 1.0, 0.1))


def test_linear_oracle_examples():
    ell = np.array([0.5, 2.0, 7.0])
    np.testing.assert_allclose(linear_conv_oracle((0, 0), ell), ell)
    np.testing.assert_allclose(linear_conv_oracle((0, 0, 0), ell), ell**2 / 2)
    np.testing.assert_allclose(linear_conv_oracle((1, 0), ell), ell**2 / 2)
    np.testing.assert_allclose(linear_conv_oracle((1, 1), ell), ell**3 / 6)
    assert linear_conv_oracle((2,), -1.0) == 0.0
    with pytest.raises(InvalidArgument):
        linear_conv_oracle((), ell)


@given(st.lists(st.integers(0, 4), min_size=1, max_size=5))
def test_linear_oracle_degree_law(degs):
    ell = np.array([1.0, 2.0])
    v = linear_conv_oracle(degs, ell)
    assert v[1] / v[0] == pytest.approx(2.0 ** (sum(degs) + len(degs) - 1), rel=1e-12)


# --- FR fitting ------------------------------------------------------------------------------


def test_fr_synthetic_decay_rate():
    g = DensityGrid.from_function(lambda l: l + np.exp(-l / 2), 0.0, 30.0, 0.05)
    rep = fr_decompose(g, 1, (20.0, 30.0))
    assert rep.degree == 1
    np.testing.assert_allclose(rep.poly_coeffs, [0, 1], atol=1e-4)
    assert 0.4 <= rep.lambda_hat <= 0.6
    assert fr_bound_check(rep)


def test_fr_exact_cubic():
    g = DensityGrid.from_function(lambda l: l**3 - 2 * l + 1, 0.0, 10.0, 0.05)
    rep = fr_decompose(g, 3, (2.0, 10.0))
    assert rep.degree == 3
    assert np.max(np.abs(rep.residual.mass)) < 1e-8
    assert rep.lambda_hat == 1.0
    np.testing.assert_allclose(rep.poly_coeffs, [1, -2, 0, 1], atol=1e-8)


def test_fr_pure_noise():
    rng = np.random.default_rng(12)
    g = DensityGrid.zeros(0.0, 10.0, 0.1)
    g.mass = rng.normal(0, 0.01, g.n_bins)
    g.variance = np.full(g.n_bins, 0.01**2)
    rep = fr_decompose(g, 2, (0.0, 10.0))
    c = g.centers
    P = np.polynomial.polynomial.polyval(c, rep.poly_coeffs)
    assert np.all(np.abs(rep.poly_coeffs) <= 3 * rep.poly_stderr + 1e-15)
    assert np.max(np.abs(P)) < 0.01


def test_fr_bound_check_examples():
    def report(f, lam, constants):
        g = DensityGrid.from_function(f, 0.0, 10.0, 0.05)
        return FRReport(np.zeros(1), np.zeros(1), 0, g, lam, constants, (1.0, 9.0), (8.0, 10.0))

    # int_0^M e^l e^-l = M <= 1 + M
    assert fr_bound_check(report(lambda l: np.exp(-l), 1.0, (1.0, 1.0)))
    # int_0^M e^l = e^M - 1 outgrows (1 + M) e^{0.1 M}
    assert not fr_bound_check(report(lambda l: np.ones_like(l), 0.9, (1.0, 1.0)))


def test_fr_errors():
    g = DensityGrid.from_function(lambda l: l, 0.0, 1.0, 0.1)
    with pytest.raises(InvalidArgument):
        fr_decompose(g, -1, (0.0, 1.0))
    with pytest.raises(InvalidArgument):
        fr_decompose(g, 2, (0.5, 3.0))
    with pytest.raises(InvalidArgument):
        fr_decompose(g, 12, (0.0, 1.0))
    wide = DensityGrid.from_function(lambda l: l, 0.0, 400.0, 0.1)
    with pytest.raises(DegreeTooHigh):
        fr_decompose(wide, 9, (300.0, 400.0))
