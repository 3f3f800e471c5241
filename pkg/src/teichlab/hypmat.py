"""Overflow-safe 2x2 real matrices for SL(2, R) holonomy.

A :class:`Mat2` is stored in Cartan form ``R(alpha) a(t) R(beta)`` with
``t >= 0``.  Unimodularity holds by construction and products never subtract
quantities of size ``exp(t)``, so entries far beyond float range cause no
overflow.  A product still carries rounding of size ``eps * |U| |V|``; when
its trace is many orders below the product of the factor norms,
:func:`certified_trace` recomputes it in extended precision.
The normalised block ``exp(log_scale) * [[e11, e12], [e21, e22]]`` is derived
on demand.

All fields may be numpy arrays of a common broadcast shape; every operation
then acts elementwise, which is how the Monte Carlo engines evaluate a length
function on a million sample points at once.

Generators follow the usual upper half-plane conventions::

    R(theta) = [[cos(theta/2), sin(theta/2)], [-sin(theta/2), cos(theta/2)]]
    a(l)     = diag(exp(l/2), exp(-l/2))
    w(l)     = R(-pi/2) a(l) R(pi/2) = [[cosh(l/2), sinh(l/2)], [sinh(l/2), cosh(l/2)]]
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence, Union

import numpy as np

import mpmath

from .errors import InconsistentInput, InvalidArgument, NonHyperbolicElement

ArrayLike = Union[float, np.ndarray]

LN2 = float(np.log(2.0))
FOUR_PI = 4.0 * np.pi

#: ``|Tr| - 2`` at or below this value is treated as non-hyperbolic.
PARABOLIC_TOL = 1e-14

#: Log-ratio of the factor-norm bound to ``|Tr|`` above which
#: :func:`certified_trace` switches to extended precision; float rounding is
#: amplified by at most ``exp(CANCEL_LIMIT)``.
CANCEL_LIMIT = 10.0


def log_cosh(x: ArrayLike) -> ArrayLike:
    """``log(cosh(x))`` without overflow."""
    ax = np.abs(x)
    return ax + np.log1p(np.exp(-2.0 * ax)) - LN2


def log_sinh(x: ArrayLike) -> ArrayLike:
    """``log(sinh(x))`` for ``x > 0`` without overflow or cancellation."""
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore"):
        return x + np.log(-np.expm1(-2.0 * x)) - LN2


def _asinh_of_log(log_r: ArrayLike) -> ArrayLike:
    """``asinh(exp(log_r))`` for any real or ``-inf`` argument."""
    log_r = np.asarray(log_r, dtype=float)
    with np.errstate(over="ignore", invalid="ignore"):
        small = np.arcsinh(np.exp(np.minimum(log_r, 20.0)))
        big = log_r + np.log1p(np.sqrt(1.0 + np.exp(-2.0 * np.maximum(log_r, 20.0))))
    return np.where(log_r < 20.0, small, big)


def _scalar(x):
    if isinstance(x, np.ndarray) and x.ndim == 0:
        return float(x)
    return x


def _wrap(angle):
    """Reduce mod ``4 pi`` only when needed, so exact angles such as ``pi/2`` stay exact."""
    angle = np.asarray(angle, dtype=float)
    return _scalar(np.where(np.abs(angle) > 2.0 * np.pi, np.mod(angle, FOUR_PI), angle))


def _cosh_ratio(x, m):
    """``cosh(x)/cosh(m)`` for ``|x| <= m``."""
    ax = np.abs(x)
    return np.exp(ax - m) * (1.0 + np.exp(-2.0 * ax)) / (1.0 + np.exp(-2.0 * m))


def _sinh_ratio(x, m):
    """``sinh(x)/sinh(m)`` for ``|x| <= m``, zero when ``m == 0``."""
    ax = np.abs(x)
    with np.errstate(invalid="ignore", divide="ignore"):
        r = np.sign(x) * np.exp(ax - m) * np.expm1(-2.0 * ax) / np.expm1(-2.0 * m)
    return np.where(m > 0, np.nan_to_num(r), 0.0)


@dataclass(frozen=True)
class Mat2:
    """``R(alpha) a(t) R(beta)``; angles live mod ``4 pi`` since ``R(2 pi) = -I``.

    Generators, inverses and products of translations with no rotation
    between them may carry a negative ``t``, so that ``a(-l)`` needs no
    rotation by the inexact ``pi``; other products return ``t >= 0``.
    """

    alpha: ArrayLike
    t: ArrayLike
    beta: ArrayLike

    @classmethod
    def from_entries(cls, e11, e12, e21, e22, log_scale=0.0) -> "Mat2":
        """Cartan form of ``exp(log_scale) * [[e11, e12], [e21, e22]]``.

        The input must be unimodular; only the rotation angles and
        ``sinh(t/2)`` are read from it.
        """
        e11, e12, e21, e22, log_scale = np.broadcast_arrays(
            *(np.asarray(v, dtype=float) for v in (e11, e12, e21, e22, log_scale))
        )
        if not all(np.all(np.isfinite(v)) for v in (e11, e12, e21, e22, log_scale)):
            raise InvalidArgument("matrix entries must be finite")
        big = np.maximum(np.maximum(np.abs(e11), np.abs(e12)), np.maximum(np.abs(e21), np.abs(e22)))
        if np.any(big == 0.0):
            raise InvalidArgument("zero matrix is not in SL(2, R)")
        e, f = (e11 + e22) / 2.0, (e11 - e22) / 2.0
        g, h = (e12 + e21) / 2.0, (e21 - e12) / 2.0
        u, v = np.arctan2(h, e), np.arctan2(-g, f)
        with np.errstate(divide="ignore"):
            log_r = np.log(np.hypot(f, g)) + log_scale
        t = 2.0 * _asinh_of_log(log_r)
        # Rot(x) diag Rot(y) with x = (u - v)/2, y = (u + v)/2, and R(theta) = Rot(-theta/2)
        return cls(_wrap(v - u), _scalar(t), _wrap(-(u + v)))

    @property
    def shape(self) -> tuple:
        return np.broadcast(self.alpha, self.t, self.beta).shape

    def _raw_block(self):
        ca, sa = np.cos(np.asarray(self.alpha) / 2.0), np.sin(np.asarray(self.alpha) / 2.0)
        cb, sb = np.cos(np.asarray(self.beta) / 2.0), np.sin(np.asarray(self.beta) / 2.0)
        t = np.asarray(self.t, dtype=float)
        p, q = np.exp((t - np.abs(t)) / 2.0), np.exp((-t - np.abs(t)) / 2.0)
        return (
            ca * p * cb - sa * q * sb,
            ca * p * sb + sa * q * cb,
            -sa * p * cb - ca * q * sb,
            -sa * p * sb + ca * q * cb,
        )

    def _normalised(self):
        raw = self._raw_block()
        big = np.maximum(np.maximum(np.abs(raw[0]), np.abs(raw[1])), np.maximum(np.abs(raw[2]), np.abs(raw[3])))
        _, expo = np.frexp(big)
        return [np.ldexp(x, -expo) for x in raw], np.abs(np.asarray(self.t, dtype=float)) / 2.0 + expo * LN2

    @property
    def e11(self):
        return _scalar(self._normalised()[0][0])

    @property
    def e12(self):
        return _scalar(self._normalised()[0][1])

    @property
    def e21(self):
        return _scalar(self._normalised()[0][2])

    @property
    def e22(self):
        return _scalar(self._normalised()[0][3])

    @property
    def log_scale(self):
        return _scalar(self._normalised()[1])

    def block(self) -> np.ndarray:
        """Normalised block with shape ``(..., 2, 2)``; largest entry in ``[1/2, 1)``."""
        (a, b, c, d), _ = self._normalised()
        return np.stack([np.stack([a, b], -1), np.stack([c, d], -1)], -2)

    def to_array(self) -> np.ndarray:
        """Plain float matrix; overflows to inf for very long holonomies."""
        blk, ls = self._normalised()
        with np.errstate(over="ignore"):
            return self.block() * np.exp(ls)[..., None, None]

    def det_residual(self) -> ArrayLike:
        """``|det - 1|`` of the stored factors, i.e. the rounding in
        ``cos^2 + sin^2`` of both rotations."""
        ca, sa = np.cos(np.asarray(self.alpha) / 2.0), np.sin(np.asarray(self.alpha) / 2.0)
        cb, sb = np.cos(np.asarray(self.beta) / 2.0), np.sin(np.asarray(self.beta) / 2.0)
        return _scalar(np.abs((ca * ca + sa * sa) * (cb * cb + sb * sb) - 1.0))

    def __matmul__(self, other: "Mat2") -> "Mat2":
        return multiply(self, other)

    def allclose(self, other: "Mat2", rtol: float = 1e-12, atol: float = 0.0) -> bool:
        """Entrywise comparison relative to the larger of the two scales."""
        ba, la = self._normalised()
        bb, lb = other._normalised()
        shift = np.maximum(la, lb)
        a = np.stack(ba, -1) * np.exp(la - shift)[..., None]
        b = np.stack(bb, -1) * np.exp(lb - shift)[..., None]
        return bool(np.all(np.abs(a - b) <= atol + rtol * np.max(np.abs(b), axis=-1, keepdims=True)))


@dataclass(frozen=True)
class SignedTrace:
    """Trace of a :class:`Mat2` in sign/log form.

    ``excess`` is ``|Tr| - 2``, evaluated as a difference of two
    nonnegative terms that are each accurate to rounding, so it stays
    accurate for nearly parabolic elements.
    """

    sign: ArrayLike
    log_abs: ArrayLike
    value: ArrayLike
    excess: ArrayLike


def identity() -> Mat2:
    return Mat2(0.0, 0.0, 0.0)


def rotation(theta: ArrayLike) -> Mat2:
    theta = np.asarray(theta, dtype=float)
    return Mat2(_wrap(theta), _scalar(np.zeros_like(theta)), _scalar(np.zeros_like(theta)))


def translation(length: ArrayLike) -> Mat2:
    length = np.asarray(length, dtype=float)
    zero = np.zeros_like(length)
    return Mat2(_scalar(zero), _scalar(length), _scalar(zero))


def woffset(length: ArrayLike) -> Mat2:
    length = np.asarray(length, dtype=float)
    quarter = np.full_like(length, np.pi / 2)
    return Mat2(_scalar(-quarter), _scalar(length), _scalar(quarter))


W = Mat2(np.pi, 0.0, 0.0)


def make_generator(kind: str, param: ArrayLike) -> Mat2:
    """Return ``R(param)``, ``a(param)`` or ``w(param)`` for kind
    ``"rotation"``, ``"translation"`` or ``"woffset"``."""
    if not np.all(np.isfinite(param)):
        raise InvalidArgument(f"generator parameter must be finite, got {param!r}")
    try:
        build = {"rotation": rotation, "translation": translation, "woffset": woffset}[kind]
    except KeyError:
        raise InvalidArgument(f"unknown generator kind {kind!r}") from None
    return build(param)


def multiply(m: Mat2, n: Mat2) -> Mat2:
    """Product in Cartan form.

    The middle factor ``a(t1) R(phi) a(t2)`` is decomposed from closed forms
    of its symmetric parts, scaled by the larger of ``|S|, |D|`` with
    ``S, D = (t1 +- t2)/2``; no large quantities are ever subtracted.
    """
    if all(isinstance(x, float) for x in (m.alpha, m.t, m.beta, n.alpha, n.t, n.beta)):
        return _multiply_scalar(m, n)
    phi = np.asarray(m.beta, dtype=float) + np.asarray(n.alpha, dtype=float)
    t1, t2 = np.asarray(m.t, dtype=float), np.asarray(n.t, dtype=float)
    c, s = np.cos(phi / 2.0), np.sin(phi / 2.0)
    big, diff = (t1 + t2) / 2.0, (t1 - t2) / 2.0
    top = np.maximum(np.abs(big), np.abs(diff))
    u = np.arctan2(-s * _cosh_ratio(diff, top), c * _cosh_ratio(big, top))
    ss, sd = _sinh_ratio(big, top), _sinh_ratio(diff, top)
    v = np.where(top > 0, np.arctan2(-s * sd, c * ss), 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        log_r = np.where(top > 0, log_sinh(top) + 0.5 * np.log(c * c * ss * ss + s * s * sd * sd), -np.inf)
    t = 2.0 * _asinh_of_log(log_r)
    a, b = np.asarray(m.alpha) + v - u, np.asarray(n.beta) - u - v
    # commuting translations: keep the signed sum exact
    flat = phi == 0.0
    if np.any(flat):
        a, t, b = np.where(flat, m.alpha, a), np.where(flat, t1 + t2, t), np.where(flat, n.beta, b)
    return Mat2(_wrap(a), _scalar(t), _wrap(b))


def _multiply_scalar(m: Mat2, n: Mat2) -> Mat2:
    phi = m.beta + n.alpha
    c, s = math.cos(phi / 2.0), math.sin(phi / 2.0)
    big, diff = (m.t + n.t) / 2.0, (m.t - n.t) / 2.0
    top = max(abs(big), abs(diff))
    if top == 0.0:
        u, v, t = math.atan2(-s, c), 0.0, 0.0
    else:
        def cr(x):
            ax = abs(x)
            return math.exp(ax - top) * (1.0 + math.exp(-2.0 * ax)) / (1.0 + math.exp(-2.0 * top))

        def sr(x):
            ax = abs(x)
            return math.copysign(math.exp(ax - top) * math.expm1(-2.0 * ax) / math.expm1(-2.0 * top), x)

        ss, sd = sr(big), sr(diff)
        u = math.atan2(-s * cr(diff), c * cr(big))
        v = math.atan2(-s * sd, c * ss)
        q = c * c * ss * ss + s * s * sd * sd
        if q == 0.0:
            t = 0.0
        else:
            log_r = top + math.log(-math.expm1(-2.0 * top)) - LN2 + 0.5 * math.log(q)
            t = 2.0 * (math.asinh(math.exp(log_r)) if log_r < 20.0 else log_r + math.log1p(math.sqrt(1.0 + math.exp(-2.0 * log_r))))
    a, b = m.alpha + v - u, n.beta - u - v
    if phi == 0.0:
        # commuting translations: keep the signed sum exact
        a, t, b = m.alpha, m.t + n.t, n.beta
    if abs(a) > 2.0 * math.pi:
        a = a % FOUR_PI
    if abs(b) > 2.0 * math.pi:
        b = b % FOUR_PI
    return Mat2(a, t, b)


def compose(factors: Iterable[Mat2]) -> Mat2:
    """Ordered product of the factors."""
    it = iter(factors)
    try:
        out = next(it)
    except StopIteration:
        raise InvalidArgument("compose() needs at least one factor") from None
    for f in it:
        out = multiply(out, f)
    return out


def invert(m: Mat2, check: bool = False, tol: float = 1e-8) -> Mat2:
    """``R(-beta) a(-t) R(-alpha)``."""
    if check and np.any(m.det_residual() > tol):
        raise InconsistentInput("invert() requires a unimodular matrix")
    return Mat2(_scalar(-np.asarray(m.beta, dtype=float)), _scalar(-np.asarray(m.t, dtype=float)), _scalar(-np.asarray(m.alpha, dtype=float)))


def power(m: Mat2, n: int) -> Mat2:
    """Integer power by repeated squaring."""
    if n < 0:
        return power(invert(m), -n)
    out, base = identity(), m
    while n:
        if n & 1:
            out = multiply(out, base)
        base = multiply(base, base)
        n >>= 1
    return out


def conjugate(g: Mat2, m: Mat2) -> Mat2:
    """``g m g^-1``."""
    return compose([g, m, invert(g)])

def log_norm(m: Mat2) -> ArrayLike:
    """Natural log of the operator norm, ``|t|/2``."""
    return _scalar(np.abs(np.asarray(m.t, dtype=float)) / 2.0)


def trace_signed(m: Mat2) -> SignedTrace:
    """``Tr = 2 cosh(t/2) cos((alpha + beta)/2)``."""
    t = np.asarray(m.t, dtype=float)
    half = np.mod((np.asarray(m.alpha) + np.asarray(m.beta)) / 2.0, 2.0 * np.pi)
    cos = np.cos(half)
    sign = np.sign(cos)
    # psi: distance from half to the nearest multiple of pi, so |cos| = cos(psi)
    psi = np.abs(half - np.pi * np.round(half / np.pi))
    cpsi = np.cos(psi)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        log_abs = LN2 + log_cosh(t / 2.0) + np.log(cpsi)
        value = np.where(log_abs < 700.0, sign * np.exp(log_abs), sign * np.inf)
        value = np.where(sign == 0, 0.0, value)
        sh = np.sinh(np.minimum(t, 2800.0) / 4.0)
        excess = np.where(
            t < 8.0,
            4.0 * (sh * sh * cpsi - np.sin(psi / 2.0) ** 2),
            np.abs(value) - 2.0,
        )
    return SignedTrace(_scalar(sign), _scalar(log_abs), _scalar(value), _scalar(excess))

def trace_to_length(t: SignedTrace, tol: float = PARABOLIC_TOL, strict: bool = True) -> ArrayLike:
    """Translation length ``2 arccosh(|Tr|/2)``.

    Non-hyperbolic entries raise :class:`NonHyperbolicElement` when
    ``strict`` is set, and become NaN otherwise.
    """
    excess = np.asarray(t.excess, dtype=float)
    log_abs = np.asarray(t.log_abs, dtype=float)
    bad = ~(excess > tol)
    if strict and np.any(bad):
        e = float(np.min(np.where(bad, excess, np.inf)))
        raise NonHyperbolicElement("parabolic" if abs(e) <= tol else "elliptic", e)
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        ex = np.where(bad, np.nan, excess)
        near = 2.0 * np.arcsinh(np.sqrt(ex * (ex + 4.0)) / 2.0)
        far = 2.0 * (log_abs - LN2 + np.log1p(np.sqrt(-np.expm1(-2.0 * (log_abs - LN2)))))
        out = np.where(log_abs < np.log(4.0), near, far)
    out = np.where(bad, np.nan, out)
    return _scalar(out)


Factor = tuple  # (kind, param) with kind "rotation" | "translation" | "woffset"


def _mp_generator(kind: str, p):
    if kind == "rotation":
        c, s = mpmath.cos(p / 2), mpmath.sin(p / 2)
        return mpmath.matrix([[c, s], [-s, c]])
    if kind == "translation":
        return mpmath.matrix([[mpmath.exp(p / 2), 0], [0, mpmath.exp(-p / 2)]])
    c, s = mpmath.cosh(p / 2), mpmath.sinh(p / 2)
    return mpmath.matrix([[c, s], [s, c]])


def _mp_trace(factors: Sequence[Factor]):
    """Sign, log ``|Tr|`` and ``|Tr| - 2`` of a factor product at the working precision."""
    m = mpmath.eye(2)
    for kind, p in factors:
        m = m * _mp_generator(kind, mpmath.mpf(p))
    tr = m[0, 0] + m[1, 1]
    if tr == 0:
        return 0.0, -math.inf, -2.0
    return float(mpmath.sign(tr)), float(mpmath.log(abs(tr))), float(abs(tr) - 2)


def certified_trace(factors: Sequence[Factor], limit: float = CANCEL_LIMIT, exact=None) -> SignedTrace:
    """Trace of the product of generator factors ``(kind, param)``.

    The product is formed in floating point; entries whose ``log |Tr|``
    falls more than ``limit`` below the summed factor log norms are
    recomputed in extended precision with enough digits to cover the loss.
    Parameters may be arrays of a common broadcast shape.  When the float
    parameters are themselves rounded values of derived quantities, pass
    ``exact(index)`` returning the factor list for one entry rebuilt at the
    current mpmath precision; otherwise the floats are taken as exact.
    """
    factors = [(k, np.asarray(p, dtype=float)) for k, p in factors]
    if not factors:
        raise InvalidArgument("certified_trace() needs at least one factor")
    tr = trace_signed(compose(make_generator(k, p) for k, p in factors))
    shape = np.broadcast_shapes(*(p.shape for _, p in factors))
    bound = np.zeros(shape)
    for k, p in factors:
        if k != "rotation":
            bound = bound + np.abs(p) / 2.0
    with np.errstate(invalid="ignore"):
        deficit = bound - np.asarray(tr.log_abs, dtype=float)
    flagged = np.argwhere(np.broadcast_to(~(deficit <= limit), shape))
    if flagged.size == 0:
        return tr
    sign, log_abs, value, excess = (np.array(np.broadcast_to(np.asarray(v, dtype=float), shape)) for v in (tr.sign, tr.log_abs, tr.value, tr.excess))
    params = [(k, np.broadcast_to(p, shape)) for k, p in factors]
    for idx in map(tuple, flagged):
        # digits: the loss in decimal orders plus a working margin
        digits = int(float(bound[idx]) / math.log(10.0)) + 30
        with mpmath.workdps(digits):
            fs = exact(idx) if exact is not None else [(k, float(p[idx])) for k, p in params]
            s, la, ex = _mp_trace(fs)
        sign[idx], log_abs[idx], excess[idx] = s, la, ex
        value[idx] = s * math.exp(la) if la < 700.0 else s * math.inf
    return SignedTrace(_scalar(sign), _scalar(log_abs), _scalar(value), _scalar(excess))


def length(m: Mat2, strict: bool = True) -> ArrayLike:
    return trace_to_length(trace_signed(m), strict=strict)


def s_mat(letter: str, n: int, trig) -> Mat2:
    """The non-negative matrices ``S_a^n`` / ``S_b^n`` of a pair of pants.

    ``S_a^n = eps_n R(pi/2) A^n R(pi/2)`` and ``S_b^n = eps_n R(-pi/2) B^n R(-pi/2)``
    in closed form, with the common factor ``cosh(n x / 2)`` moved into the scale.
    """
    if n == 0 or int(n) != n:
        raise InvalidArgument("s_mat exponent must be a nonzero integer")
    if letter == "a":
        half, t = trig.x / 2.0, trig.t
    elif letter == "b":
        half, t = trig.y / 2.0, trig.t_star
    else:
        raise InvalidArgument(f"unknown letter {letter!r}")
    eps = 1.0 if n > 0 else -1.0
    th = np.tanh(n * half)
    sh, ch = np.sinh(t), np.cosh(t)
    return Mat2.from_entries(
        eps * sh * th, eps * (ch * th + 1.0), eps * (ch * th - 1.0), eps * sh * th, log_cosh(n * half)
    )
