"""Combinatorial loops and their holonomy.

A loop is described relative to a pants decomposition as a cyclic sequence of
*incursions*.  Inside a pair of pants with boundary slots ``(alpha0, beta0,
beta1)`` the fundamental group based at ``p0`` is free on the letters ``a``
(around ``alpha0``) and ``b`` (around ``beta0``), whose holonomies are::

    A = [[cosh(x/2), e^-t sinh(x/2)], [e^t sinh(x/2), cosh(x/2)]]   = a(-t) w(x) a(t)
    B = [[cosh(y/2), -e^t* sinh(y/2)], [-e^-t* sinh(y/2), cosh(y/2)]] = a(t*) w(-y) a(-t*)

An incursion entering through slot ``alpha0`` contributes

* ``a(t) W(word) a(t*) R(pi/2) a(s) R(-pi/2)`` when it leaves through another
  slot (which then plays the role of ``beta0``), and
* ``a(t) W(word) R(pi) a(t) R(pi/2) a(s) R(-pi/2)`` when it returns through
  ``alpha0`` (``beta0`` is then the next slot cyclically),

with ``s = twist_sign * tau + (m/2) * ell`` read off the curve it exits
through.  A loop that never leaves its pants is a single ``closed`` incursion
whose holonomy is just ``W(word)``.

Dehn twists only touch the half-twist counters: twisting ``power`` times
around ``c`` adds ``2 * power * twist_sign`` to ``m`` on every incursion
exiting through ``c``, which makes ``length(dehn_twist(loop, c, 1))`` at
``tau_c`` equal to ``length(loop)`` at ``tau_c + ell_c`` exactly.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import mpmath
import numpy as np

from . import hypmat
from .coords import FNPoint
from .errors import ConfigurationError, InvalidArgument, InvalidLoop, NonHyperbolicElement
from .hypmat import Factor, Mat2
from .pants import PantsTrig, solve_pants, solve_pants_mp

HALF_PI = np.pi / 2

Syllable = Tuple[str, int]


def _normalize(syllables: Iterable[Syllable]) -> Tuple[Syllable, ...]:
    out: List[List] = []
    for letter, e in syllables:
        if letter not in ("a", "b"):
            raise InvalidArgument(f"pants words use letters a and b, got {letter!r}")
        e = int(e)
        if e == 0:
            continue
        if out and out[-1][0] == letter:
            out[-1][1] += e
            if out[-1][1] == 0:
                out.pop()
        else:
            out.append([letter, e])
    return tuple((l, e) for l, e in out)


_TOKEN = re.compile(r"\s*([abAB])\s*(?:\^?\s*\{?\s*([+-]?\d+)\s*\}?)?")


@dataclass(frozen=True)
class PantsWord:
    """Freely reduced word in ``a`` and ``b``, stored as syllables."""

    syllables: Tuple[Syllable, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "syllables", _normalize(self.syllables))

    @classmethod
    def parse(cls, text: str) -> "PantsWord":
        """Parse ``"a1 b-1"``, ``"a^2b^-1"`` or letter strings like ``"aB"``
        (upper case meaning inverse)."""
        pos, syl = 0, []
        text = text.strip()
        while pos < len(text):
            m = _TOKEN.match(text, pos)
            if not m or m.end() == pos:
                raise InvalidArgument(f"cannot parse word {text!r} at position {pos}")
            letter, exp = m.group(1), m.group(2)
            e = int(exp) if exp is not None else 1
            if letter.isupper():
                letter, e = letter.lower(), -e
            syl.append((letter, e))
            pos = m.end()
        return cls(tuple(syl))

    @classmethod
    def from_letters(cls, letters: Sequence[Tuple[str, int]]) -> "PantsWord":
        return cls(tuple(letters))

    def letters(self) -> List[Syllable]:
        """Expanded form, one ``(letter, +-1)`` per generator occurrence."""
        out = []
        for l, e in self.syllables:
            out.extend([(l, 1 if e > 0 else -1)] * abs(e))
        return out

    def __len__(self) -> int:
        return sum(abs(e) for _, e in self.syllables)

    def __bool__(self) -> bool:
        return bool(self.syllables)

    def __mul__(self, other: "PantsWord") -> "PantsWord":
        return PantsWord(self.syllables + other.syllables)

    def inverse(self) -> "PantsWord":
        return PantsWord(tuple((l, -e) for l, e in reversed(self.syllables)))

    def cyclic_reduce(self) -> "PantsWord":
        syl = list(self.syllables)
        while len(syl) > 1 and syl[0][0] == syl[-1][0]:
            l, e = syl.pop()
            syl[0] = (l, syl[0][1] + e)
            if syl[0][1] == 0:
                syl.pop(0)
        return PantsWord(tuple(syl))

    def is_cyclically_reduced(self) -> bool:
        s = self.syllables
        return len(s) < 2 or s[0][0] != s[-1][0]

    def to_json(self) -> list:
        return [[l, e] for l, e in self.syllables]

    @classmethod
    def from_json(cls, data) -> "PantsWord":
        if isinstance(data, str):
            return cls.parse(data)
        return cls(tuple((str(l), int(e)) for l, e in data))

    def __str__(self) -> str:
        return " ".join(f"{l}{e}" for l, e in self.syllables) or "1"


# --- surfaces ---------------------------------------------------------------


@dataclass(frozen=True)
class SurfaceGraph:
    """Pants decomposition as a graph: pants are nodes with three curve slots.

    A pants glued to itself lists the same interior curve in two slots.
    """

    pants: Mapping[str, Tuple[str, str, str]]
    curves: Mapping[str, str]  # id -> "interior" | "boundary"

    def __post_init__(self):
        slots: Dict[str, int] = {c: 0 for c in self.curves}
        for pid, sl in self.pants.items():
            if len(sl) != 3:
                raise InvalidArgument(f"pants {pid!r} needs exactly three slots")
            for c in sl:
                if c not in self.curves:
                    raise InvalidArgument(f"pants {pid!r} references unknown curve {c!r}")
                slots[c] += 1
        for c, kind in self.curves.items():
            want = {"interior": 2, "boundary": 1}.get(kind)
            if want is None:
                raise InvalidArgument(f"curve {c!r} has unknown kind {kind!r}")
            if slots[c] != want:
                raise InvalidArgument(f"{kind} curve {c!r} fills {slots[c]} slots, expected {want}")
        n_int = len(self.interior_curves())
        n_bd = len(self.boundary_curves())
        if 3 * len(self.pants) != 2 * n_int + n_bd:
            raise InvalidArgument("slot count mismatch")
        if not self._connected():
            raise InvalidArgument("surface graph is not connected")

    def _connected(self) -> bool:
        ids = list(self.pants)
        if not ids:
            return False
        seen, stack = {ids[0]}, [ids[0]]
        while stack:
            p = stack.pop()
            for q in ids:
                if q not in seen and set(self.pants[p]) & set(self.pants[q]) & set(self.interior_curves()):
                    seen.add(q)
                    stack.append(q)
        return len(seen) == len(ids)

    def interior_curves(self) -> List[str]:
        return [c for c, k in self.curves.items() if k == "interior"]

    def boundary_curves(self) -> List[str]:
        return [c for c, k in self.curves.items() if k == "boundary"]

    @property
    def euler_char(self) -> int:
        return -len(self.pants)

    @property
    def n_boundary(self) -> int:
        return len(self.boundary_curves())

    @property
    def genus(self) -> int:
        # chi = 2 - 2g - n
        return (2 - self.euler_char - self.n_boundary) // 2

    def to_json(self) -> dict:
        return {"pants": {k: list(v) for k, v in self.pants.items()}, "curves": dict(self.curves)}

    @classmethod
    def from_json(cls, data: Mapping) -> "SurfaceGraph":
        extra = set(data) - {"pants", "curves"}
        if extra:
            raise ConfigurationError(f"unknown surface fields {sorted(extra)}")
        return cls({k: tuple(v) for k, v in data["pants"].items()}, dict(data["curves"]))


# --- incursions -------------------------------------------------------------

THROUGH = "throughDistinct"
RETURN = "sameCurveReturn"
CLOSED = "closed"


@dataclass(frozen=True)
class Incursion:
    """One passage of a loop through a pair of pants.

    ``entry`` and ``exit`` are slot indices (0, 1, 2) of the pants; both are
    ``None`` for a loop that stays inside a single pants.
    """

    pants: str
    entry: Optional[int]
    exit: Optional[int]
    word: PantsWord = field(default_factory=PantsWord)
    m: int = 0
    twist_sign: int = 1

    def __post_init__(self):
        if (self.entry is None) != (self.exit is None):
            raise InvalidArgument("entry and exit must both be set or both be None")
        for s in (self.entry, self.exit):
            if s is not None and s not in (0, 1, 2):
                raise InvalidArgument(f"slot index must be 0, 1 or 2, got {s!r}")
        if self.twist_sign not in (1, -1):
            raise InvalidArgument("twist_sign must be +1 or -1")
        if self.entry is None and not self.word:
            raise InvalidArgument("a closed incursion needs a nonempty word")

    @property
    def form(self) -> str:
        if self.entry is None:
            return CLOSED
        return THROUGH if self.entry != self.exit else RETURN

    def roles(self) -> Tuple[int, int, int]:
        """Slot indices playing ``(alpha0, beta0, beta1)``."""
        if self.form == CLOSED:
            return (0, 1, 2)
        a0 = self.entry
        b0 = self.exit if self.form == THROUGH else (a0 + 1) % 3
        b1 = 3 - a0 - b0
        return (a0, b0, b1)

    def to_json(self, surface: Optional[SurfaceGraph] = None) -> dict:
        return {
            "pants": self.pants,
            "entry": self.entry,
            "exit": self.exit,
            "word": self.word.to_json(),
            "m": self.m,
            "twistSign": self.twist_sign,
        }


def _slot(value, pants_slots: Sequence[str], what: str) -> Optional[int]:
    if value is None or isinstance(value, int):
        return value
    hits = [i for i, c in enumerate(pants_slots) if c == value]
    if len(hits) != 1:
        raise ConfigurationError(f"{what} curve {value!r} does not name a unique slot; use a slot index")
    return hits[0]


@dataclass(frozen=True)
class LoopSpec:
    incursions: Tuple[Incursion, ...]
    surface: SurfaceGraph

    def __post_init__(self):
        object.__setattr__(self, "incursions", tuple(self.incursions))
        self.validate()

    def validate(self) -> None:
        incs = self.incursions
        if not incs:
            raise InvalidLoop("a loop needs at least one incursion")
        for inc in incs:
            if inc.pants not in self.surface.pants:
                raise InvalidLoop(f"unknown pants {inc.pants!r}")
        closed = [inc.form == CLOSED for inc in incs]
        if any(closed):
            if len(incs) != 1:
                raise InvalidLoop("a closed incursion must be the only incursion of its loop")
            return
        for k, inc in enumerate(incs):
            nxt = incs[(k + 1) % len(incs)]
            out_curve = self.curve_of(inc, inc.exit)
            in_curve = self.curve_of(nxt, nxt.entry)
            if out_curve != in_curve:
                raise InvalidLoop(
                    f"incursion {k} exits through {out_curve!r} but incursion {(k + 1) % len(incs)} "
                    f"enters through {in_curve!r}"
                )
            if self.surface.curves[out_curve] != "interior":
                raise InvalidLoop(f"incursion {k} exits through boundary curve {out_curve!r}")
            if inc.exit is not None and nxt.pants == inc.pants and nxt.entry == inc.exit:
                raise InvalidLoop(f"incursion {k} re-enters its pants through the slot it left by")

    def curve_of(self, inc: Incursion, slot: int) -> str:
        return self.surface.pants[inc.pants][slot]

    def crossed_curves(self) -> List[str]:
        return [self.curve_of(i, i.exit) for i in self.incursions if i.form != CLOSED]

    def rotate(self, k: int) -> "LoopSpec":
        incs = self.incursions
        k %= len(incs)
        return replace(self, incursions=incs[k:] + incs[:k])

    def to_json(self) -> dict:
        return {"surface": self.surface.to_json(), "incursions": [i.to_json() for i in self.incursions]}

    @classmethod
    def from_json(cls, data: Mapping) -> "LoopSpec":
        extra = set(data) - {"surface", "incursions"}
        if extra:
            raise ConfigurationError(f"unknown loop fields {sorted(extra)}")
        surface = SurfaceGraph.from_json(data["surface"])
        incs = []
        for k, d in enumerate(data["incursions"]):
            extra = set(d) - {"pants", "entry", "exit", "word", "m", "twistSign"}
            if extra:
                raise ConfigurationError(f"incursions[{k}]: unknown fields {sorted(extra)}")
            slots = surface.pants.get(d["pants"])
            if slots is None:
                raise ConfigurationError(f"incursions[{k}]: unknown pants {d['pants']!r}")
            incs.append(
                Incursion(
                    pants=d["pants"],
                    entry=_slot(d.get("entry"), slots, "entry"),
                    exit=_slot(d.get("exit"), slots, "exit"),
                    word=PantsWord.from_json(d.get("word", [])),
                    m=int(d.get("m", 0)),
                    twist_sign=int(d.get("twistSign", 1)),
                )
            )
        return cls(tuple(incs), surface)


# --- holonomy ---------------------------------------------------------------


def power_factors(letter: str, n: int, trig: PantsTrig) -> List[Factor]:
    """Generator factors of ``A**n`` or ``B**n``."""
    if letter == "a":
        return [("translation", -trig.t), ("woffset", n * trig.x), ("translation", trig.t)]
    if letter == "b":
        return [("translation", trig.t_star), ("woffset", -n * trig.y), ("translation", -trig.t_star)]
    raise InvalidArgument(f"unknown letter {letter!r}")


def _product(factors: Sequence[Factor]) -> Mat2:
    return hypmat.compose(hypmat.make_generator(k, p) for k, p in factors)


def pants_power(letter: str, n: int, trig: PantsTrig) -> Mat2:
    """``A**n`` or ``B**n`` in closed form."""
    return _product(power_factors(letter, n, trig))


def word_factors(word: PantsWord, trig: PantsTrig) -> List[Factor]:
    if not word:
        raise InvalidArgument("holonomy of the empty word is the identity; use hypmat.identity()")
    return [f for l, e in word.syllables for f in power_factors(l, e, trig)]


def holonomy_pants(word: PantsWord, trig: PantsTrig) -> Mat2:
    return _product(word_factors(word, trig))


def incursion_trig(inc: Incursion, surface: SurfaceGraph, fn: FNPoint) -> PantsTrig:
    slots = surface.pants[inc.pants]
    a0, b0, b1 = inc.roles()
    return solve_pants(fn.length(slots[a0]), fn.length(slots[b0]), fn.length(slots[b1]))


class _ExactPoint:
    """One entry of a vectorised FN point, read as mpmath numbers."""

    def __init__(self, fn: FNPoint, index: tuple, shape: tuple):
        self.fn, self.index, self.shape = fn, index, shape

    def _at(self, v):
        return mpmath.mpf(float(np.broadcast_to(np.asarray(v, dtype=float), self.shape)[self.index]))

    def length(self, curve: str):
        return self._at(self.fn.length(curve))

    def twist(self, curve: str):
        return self._at(self.fn.twist(curve))


def incursion_factors(inc: Incursion, fn, surface: SurfaceGraph) -> List[Factor]:
    exact = isinstance(fn, _ExactPoint)
    pi = mpmath.pi if exact else np.pi
    slots = surface.pants[inc.pants]
    a0, b0, b1 = inc.roles()
    lengths = (fn.length(slots[a0]), fn.length(slots[b0]), fn.length(slots[b1]))
    trig = solve_pants_mp(*lengths) if exact else solve_pants(*lengths)
    if inc.form == CLOSED:
        return word_factors(inc.word, trig)
    exit_curve = slots[inc.exit]
    if surface.curves[exit_curve] != "interior":
        raise InvalidLoop(f"incursion exits through boundary curve {exit_curve!r}")
    s = inc.twist_sign * fn.twist(exit_curve) + inc.m * fn.length(exit_curve) / 2
    factors = [("translation", trig.t)]
    if inc.word:
        factors += word_factors(inc.word, trig)
    if inc.form == THROUGH:
        factors.append(("translation", trig.t_star))
    else:
        factors += [("rotation", pi), ("translation", trig.t)]
    factors += [("rotation", pi / 2), ("translation", s), ("rotation", -pi / 2)]
    return factors


def incursion_matrix(inc: Incursion, fn: FNPoint, surface: SurfaceGraph) -> Mat2:
    """The holonomy matrix of one incursion."""
    return _product(incursion_factors(inc, fn, surface))


def loop_factors(loop: LoopSpec, fn) -> List[Factor]:
    """Generator factors of the holonomy, incursion by incursion."""
    return [f for inc in loop.incursions for f in incursion_factors(inc, fn, loop.surface)]


def exact_loop_factors(loop: LoopSpec, fn: FNPoint, shape: tuple):
    """``index -> factors`` rebuilt from the FN coordinates at mpmath precision."""

    def build(index):
        return loop_factors(loop, _ExactPoint(fn, index, shape))

    return build


def loop_trace(loop: LoopSpec, fn: FNPoint) -> hypmat.SignedTrace:
    """Signed holonomy trace, recomputed in extended precision where it cancels."""
    factors = loop_factors(loop, fn)
    shape = np.broadcast_shapes(*(np.shape(p) for _, p in factors))
    return hypmat.certified_trace(factors, exact=exact_loop_factors(loop, fn, shape))


def holonomy_loop(loop: LoopSpec, fn: FNPoint) -> Mat2:
    return _product(loop_factors(loop, fn))


def dehn_twist(loop: LoopSpec, curve: str, power: int) -> LoopSpec:
    """Twist ``power`` times around an interior curve."""
    kind = loop.surface.curves.get(curve)
    if kind is None:
        raise InvalidArgument(f"unknown curve {curve!r}")
    if kind != "interior":
        raise InvalidArgument(f"cannot twist around boundary curve {curve!r}")
    if power == 0:
        return loop
    incs = []
    for inc in loop.incursions:
        if inc.form != CLOSED and loop.curve_of(inc, inc.exit) == curve:
            inc = replace(inc, m=inc.m + 2 * power * inc.twist_sign)
        incs.append(inc)
    return replace(loop, incursions=tuple(incs))


# --- resolutions ------------------------------------------------------------


def split_resolve(word: PantsWord, cut_a: int, cut_b: int) -> Tuple[PantsWord, PantsWord, PantsWord]:
    """Open a cyclic word at two letter positions.

    ``cut_a`` and ``cut_b`` index the gaps before letters of the expanded
    cyclic word.  Returns the two arcs ``u`` (from ``cut_a`` to ``cut_b``) and
    ``v`` (the rest) and the non-separating resolution ``u v^-1``, all
    cyclically reduced.
    """
    letters = word.letters()
    n = len(letters)
    if n < 2:
        raise InvalidArgument("need at least two letters to resolve")
    i, j = cut_a % n, cut_b % n
    if i == j:
        raise InvalidArgument("cut positions must differ")
    if i < j:
        u, v = letters[i:j], letters[j:] + letters[:i]
    else:
        u, v = letters[i:] + letters[:j], letters[j:i]
    uw, vw = PantsWord(tuple(u)), PantsWord(tuple(v))
    return uw.cyclic_reduce(), vw.cyclic_reduce(), (uw * vw.inverse()).cyclic_reduce()


@dataclass(frozen=True)
class ResolutionReport:
    sign_case: Optional[str]  # "plus", "minus" or None when excluded
    residual: float
    residual_plus: float
    residual_minus: float
    half_traces: Dict[str, float]
    hyperbolic: bool = True


def check_resolution(word: PantsWord, cuts: Tuple[int, int], trig: PantsTrig) -> ResolutionReport:
    """Decide which length relation links a loop to its resolutions.

    With ``C(w) = cosh(l_w / 2) = |Tr W| / 2`` the relation is
    ``C(gamma) = 2 C(u) C(v) + C(nonsep)`` (plus) or
    ``C(gamma) = |2 C(u) C(v) - C(nonsep)|`` (minus).  Residuals are relative
    to the largest term of the relation.
    """
    u, v, ns = split_resolve(word, *cuts)
    gamma = word.cyclic_reduce()
    half = {}
    for name, w in (("gamma", gamma), ("u", u), ("v", v), ("nonsep", ns)):
        if not w:
            half[name] = 1.0
            continue
        t = hypmat.trace_signed(holonomy_pants(w, trig))
        half[name] = abs(float(t.value)) / 2.0
        if not (float(t.excess) > hypmat.PARABOLIC_TOL):
            half[name] = float("nan")
    if any(not (half[k] > 1.0) for k in half):
        return ResolutionReport(None, float("nan"), float("nan"), float("nan"), half, hyperbolic=False)
    g, prod, c = half["gamma"], 2.0 * half["u"] * half["v"], half["nonsep"]
    scale = max(g, prod, c)
    rp = abs(g - (prod + c)) / scale
    rm = abs(g - abs(prod - c)) / scale
    case = "plus" if rp <= rm else "minus"
    return ResolutionReport(case, min(rp, rm), rp, rm, half)
