from __future__ import annotations

import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import mp_generator, mp_product, relative_entry_error
from teichlab import hypmat
from teichlab.errors import InvalidArgument, NonHyperbolicElement
from teichlab.pants import solve_pants
from teichlab.selftest import random_generator_words, sl2_residuals

KINDS = ("rotation", "translation", "woffset")

param = st.floats(-50, 50, allow_nan=False)
small = st.floats(-5, 5, allow_nan=False)
generator = st.tuples(st.sampled_from(KINDS), param)


def build(factors):
    return hypmat.compose(hypmat.make_generator(k, p) for k, p in factors)


def rel_trace(m: hypmat.Mat2, scale: float) -> float:
    tr = hypmat.trace_signed(m)
    return float(tr.sign) * math.exp(float(tr.log_abs) - scale)


# --- generators ------------------------------------------------------------------


@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("p", [-7.3, -0.4, 0.0, 1.1, 25.0])
def test_generators_match_definitions(kind, p):
    mp.mp.dps = 40
    m = hypmat.make_generator(kind, p)
    assert relative_entry_error(m, mp_generator(kind, p)) < 1e-15


def test_rotation_zero_is_identity():
    assert hypmat.make_generator("rotation", 0.0).allclose(hypmat.identity())


def test_rotation_pi_is_w():
    np.testing.assert_allclose(hypmat.make_generator("rotation", np.pi).to_array(), [[0, 1], [-1, 0]], atol=1e-15)


def test_woffset_is_conjugated_translation():
    for ell in (0.3, 4.0, 40.0):
        want = hypmat.compose([hypmat.rotation(-np.pi / 2), hypmat.translation(ell), hypmat.rotation(np.pi / 2)])
        assert hypmat.woffset(ell).allclose(want, rtol=1e-14)


def test_generator_errors():
    with pytest.raises(InvalidArgument):
        hypmat.make_generator("rotation", float("nan"))
    with pytest.raises(InvalidArgument):
        hypmat.make_generator("shear", 1.0)
    with pytest.raises(InvalidArgument):
        hypmat.compose([])


# --- compose / invert -------------------------------------------------------------------


@given(param, param)
def test_translations_form_a_subgroup(l1, l2):
    got = hypmat.compose([hypmat.translation(l1), hypmat.translation(l2)])
    assert got.allclose(hypmat.translation(l1 + l2), rtol=1e-12)


def test_w_squared_is_minus_identity():
    np.testing.assert_allclose(hypmat.compose([hypmat.W, hypmat.W]).to_array(), -np.eye(2), atol=1e-15)


@given(st.lists(generator, min_size=1, max_size=12))
def test_product_matches_extended_precision(factors):
    mp.mp.dps = 60
    m = build(factors)
    bound = sum(abs(p) / 2 for k, p in factors if k != "rotation")
    assert relative_entry_error(m, mp_product(factors), bound) < 1e-13


@pytest.mark.parametrize("seed", range(10))
def test_long_products_match_extended_precision(seed):
    rng = np.random.default_rng(seed)
    kinds = rng.choice(KINDS, size=10_000)
    params = rng.uniform(-2, 2, size=10_000)
    factors = list(zip(kinds, params))
    m = build(factors)
    mp.mp.dps = int(float(m.t) / 2 / 2.3) + 60
    ref = mp_product(factors)
    assert relative_entry_error(m, ref) < 1e-8
    assert float(m.det_residual()) < 1e-8
    ref_trace = float(mp.log(abs(ref[0, 0] + ref[1, 1])))
    assert abs(float(hypmat.trace_signed(m).log_abs) - ref_trace) < 1e-8 * max(1.0, ref_trace)


def test_no_overflow_for_huge_magnitudes():
    m = hypmat.compose([hypmat.translation(1e5)] * 20)
    assert np.isfinite(m.log_scale) and abs(float(m.t) - 2e6) < 1e-6
    assert abs(float(hypmat.length(m)) / 2e6 - 1) < 1e-12


def test_invert_examples():
    assert hypmat.invert(hypmat.identity()).allclose(hypmat.identity())
    assert hypmat.invert(hypmat.translation(3.2)).allclose(hypmat.translation(-3.2), rtol=1e-14)


@given(st.lists(generator, min_size=1, max_size=20))
def test_invert_is_inverse(factors):
    m = build(factors)
    prod = hypmat.compose([m, hypmat.invert(m)])
    scale = float(hypmat.log_norm(m))
    # the product's entries carry rounding of size eps * |m|^2
    err = np.abs(prod.to_array() - np.eye(2)).max()
    assert err <= 1e-10 * max(1.0, math.exp(2 * scale))


def test_power_matches_repeated_product():
    g = build([("translation", 1.3), ("rotation", 0.7), ("woffset", -0.4)])
    assert hypmat.power(g, 7).allclose(hypmat.compose([g] * 7), rtol=1e-12)
    assert hypmat.power(g, -3).allclose(hypmat.invert(hypmat.compose([g] * 3)), rtol=1e-12)


# --- traces --------------------------------------------------------------------------


def test_trace_examples():
    for th in (0.0, 0.5, 2.0, 5.0):
        assert abs(float(hypmat.trace_signed(hypmat.rotation(th)).value) - 2 * math.cos(th / 2)) < 1e-15
    assert abs(float(hypmat.trace_signed(hypmat.translation(2.0)).value) - 3.0861612696304874) < 1e-14


def test_trace_of_a_is_boundary_half_length():
    from teichlab.loops import pants_power

    for x, y, z in [(1.0, 2.0, 3.0), (0.2, 7.0, 0.0), (15.0, 15.0, 15.0)]:
        tr = hypmat.trace_signed(pants_power("a", 1, solve_pants(x, y, z)))
        assert abs(abs(float(tr.value)) / (2 * math.cosh(x / 2)) - 1) < 1e-12


@settings(max_examples=200)
@given(st.lists(st.tuples(st.sampled_from(KINDS), small), min_size=1, max_size=20))
def test_trace_cyclic_invariance(factors):
    ms = [hypmat.make_generator(k, p) for k, p in factors]
    scale = sum(float(hypmat.log_norm(m)) for m in ms)
    ref = rel_trace(hypmat.compose(ms), scale)
    for k in range(1, len(ms)):
        assert abs(rel_trace(hypmat.compose(ms[k:] + ms[:k]), scale) - ref) < 1e-10


@settings(max_examples=200)
@given(st.lists(generator, min_size=1, max_size=10), st.lists(generator, min_size=1, max_size=10))
def test_trace_formula(fu, fv):
    r = sl2_residuals(build(fu), build(fv))
    assert r["traceFormula"] < 1e-9
    assert r["cyclic"] < 1e-10


def test_random_word_batch_identities():
    rng = np.random.default_rng(7)
    r = sl2_residuals(random_generator_words(rng, 500), random_generator_words(rng, 500))
    assert r["unimodular"] < 1e-10 and r["cyclic"] < 1e-10 and r["traceFormula"] < 1e-9


# --- lengths -------------------------------------------------------------------------


def test_trace_to_length_identity():
    ell = np.geomspace(1e-6, 1e5, 400)
    got = hypmat.trace_to_length(hypmat.trace_signed(hypmat.translation(ell)))
    assert np.max(np.abs(got / ell - 1)) < 1e-10


def test_trace_to_length_six():
    tr = hypmat.SignedTrace(1.0, math.log(6.0), 6.0, 4.0)
    assert abs(float(hypmat.trace_to_length(tr)) - 2 * math.acosh(3)) < 1e-14
    assert abs(2 * math.acosh(3) - 3.52549) < 1e-5


def test_parabolic_and_elliptic_rejected():
    parabolic = hypmat.compose([hypmat.woffset(0.0), hypmat.identity()])
    with pytest.raises(NonHyperbolicElement) as e:
        hypmat.length(parabolic)
    assert e.value.kind == "parabolic"
    with pytest.raises(NonHyperbolicElement) as e:
        hypmat.length(hypmat.rotation(1.0))
    assert e.value.kind == "elliptic"
    assert np.isnan(hypmat.length(hypmat.rotation(1.0), strict=False))


def test_near_parabolic_length_is_accurate():
    for ell in (1e-6, 1e-4, 1e-2):
        m = hypmat.conjugate(hypmat.rotation(0.8), hypmat.translation(ell))
        assert abs(float(hypmat.length(m)) / ell - 1) < 1e-6
    # below the parabolic tolerance the element is reported, not measured
    with pytest.raises(NonHyperbolicElement):
        hypmat.length(hypmat.conjugate(hypmat.rotation(0.8), hypmat.translation(1e-9)))


# --- W conjugation -------------------------------------------------------------------------


@given(param)
def test_w_conjugation(p):
    assert hypmat.conjugate(hypmat.W, hypmat.translation(p)).allclose(hypmat.translation(-p), atol=1e-12)
    assert hypmat.conjugate(hypmat.W, hypmat.woffset(p)).allclose(hypmat.woffset(-p), atol=1e-12)


# --- S matrices --------------------------------------------------------------------------


def s_closed_form(n, x, t):
    eps = 1.0 if n > 0 else -1.0
    sh = math.sinh(n * x / 2)
    ch = math.cosh(n * x / 2)
    return eps * np.array([[math.sinh(t) * sh, math.cosh(t) * sh + ch], [math.cosh(t) * sh - ch, math.sinh(t) * sh]])


@pytest.mark.parametrize("n", [-3, -1, 1, 2, 4])
def test_s_mat_closed_form_and_definition(n):
    from teichlab.loops import pants_power

    trig = solve_pants(1.3, 2.1, 0.8)
    s = hypmat.s_mat("a", n, trig)
    np.testing.assert_allclose(s.to_array(), s_closed_form(n, trig.x, trig.t), rtol=1e-12, atol=1e-12)
    eps = 1.0 if n > 0 else -1.0
    want = hypmat.compose([hypmat.rotation(np.pi / 2), pants_power("a", n, trig), hypmat.rotation(np.pi / 2)])
    np.testing.assert_allclose(s.to_array(), eps * want.to_array(), rtol=1e-10, atol=1e-10)


@pytest.mark.parametrize("n", [-2, 1, 3])
def test_s_mat_inverse_is_w_conjugate(n):
    trig = solve_pants(0.9, 1.7, 2.5)
    lhs = hypmat.invert(hypmat.s_mat("a", n, trig))
    rhs = hypmat.conjugate(hypmat.W, hypmat.s_mat("a", -n, trig))
    assert lhs.allclose(rhs, atol=1e-12)


@settings(max_examples=100)
@given(st.floats(0.1, 10), st.floats(0.1, 10), st.floats(0.1, 10))
def test_s_mat_entries_nonnegative(x, y, z):
    trig = solve_pants(x, y, z)
    for letter in "ab":
        blk = hypmat.s_mat(letter, 3, trig).block()
        assert np.all(blk >= -1e-15)


@settings(max_examples=50)
@given(st.floats(0.1, 10), st.floats(0.1, 10), st.floats(0, 10), st.sampled_from([-2, -1, 1, 3]))
def test_s_mat_letter_swap(x, y, z, n):
    a = hypmat.s_mat("b", n, solve_pants(x, y, z))
    b = hypmat.s_mat("a", n, solve_pants(y, x, z))
    assert a.allclose(b, atol=1e-12)


def test_s_mat_zero_exponent_rejected():
    with pytest.raises(InvalidArgument):
        hypmat.s_mat("a", 0, solve_pants(1.0, 1.0, 1.0))
