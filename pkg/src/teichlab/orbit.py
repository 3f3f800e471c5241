"""Mapping class group orbits of curves and their counting functions.

Supported surfaces are the once-holed torus, whose mapping class group acts on
``pi_1 = <a, b>`` through the two Dehn twists below, and a single pair of
pants, whose boundary twists act trivially on free homotopy classes.
"""

from __future__ import annotations

import csv
import io
import math
from collections import deque
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from . import hypmat
from .coords import FNPoint
from .errors import InvalidArgument, MarginTooSmall
from .hypmat import Mat2
from .loops import PantsWord, holonomy_pants, pants_power
from .pants import solve_pants

TORUS = "onceHoledTorus"
PANTS = "pants"
SURFACES = (TORUS, PANTS)

Letter = Tuple[str, int]

_ORDER = {("a", 1): 0, ("a", -1): 1, ("b", 1): 2, ("b", -1): 3}


def _reduce_letters(letters: Sequence[Letter]) -> List[Letter]:
    out: List[Letter] = []
    for l in letters:
        if out and out[-1][0] == l[0] and out[-1][1] == -l[1]:
            out.pop()
        else:
            out.append(l)
    return out


def _cyclic_reduce_letters(letters: Sequence[Letter]) -> List[Letter]:
    out = _reduce_letters(letters)
    i, j = 0, len(out) - 1
    while i < j and out[i][0] == out[j][0] and out[i][1] == -out[j][1]:
        i += 1
        j -= 1
    return out[i : j + 1]


def _inverse_letters(letters: Sequence[Letter]) -> List[Letter]:
    return [(l, -e) for l, e in reversed(letters)]


def _min_rotation(letters: Sequence[Letter]) -> Tuple[int, ...]:
    key = [_ORDER[l] for l in letters]
    n = len(key)
    if n == 0:
        return ()
    return min(tuple(key[i:] + key[:i]) for i in range(n))


def canonical_word(w: PantsWord) -> PantsWord:
    """Cyclically reduced, lexicographically least rotation of ``w`` or ``w^-1``
    (letter order ``a < a^-1 < b < b^-1``)."""
    letters = _cyclic_reduce_letters(w.letters())
    if not letters:
        return PantsWord()
    best = min(_min_rotation(letters), _min_rotation(_inverse_letters(letters)))
    inv = {v: k for k, v in _ORDER.items()}
    return PantsWord.from_letters([inv[k] for k in best])


def is_primitive(w: PantsWord) -> bool:
    """False when the cyclic reduction of ``w`` is a proper power."""
    letters = _cyclic_reduce_letters(w.letters())
    n = len(letters)
    if n == 0:
        return False
    for d in range(1, n):
        if n % d == 0 and letters == letters[:d] * (n // d):
            return False
    return True


def _substitute(w: PantsWord, images: Dict[str, List[Letter]]) -> PantsWord:
    out: List[Letter] = []
    for l, e in w.letters():
        img = images[l] if e > 0 else _inverse_letters(images[l])
        out.extend(img)
    return PantsWord.from_letters(_reduce_letters(out))


# a -> a, b -> ba  and  a -> ab, b -> b, with inverses
TWISTS: Dict[str, Dict[str, List[Letter]]] = {
    "Ta": {"a": [("a", 1)], "b": [("b", 1), ("a", 1)]},
    "Ta^-1": {"a": [("a", 1)], "b": [("b", 1), ("a", -1)]},
    "Tb": {"a": [("a", 1), ("b", 1)], "b": [("b", 1)]},
    "Tb^-1": {"a": [("a", 1), ("b", -1)], "b": [("b", 1)]},
}


def mcg_neighbors(w: PantsWord, surface: str = TORUS) -> Dict[str, PantsWord]:
    """Images of ``w`` under the four generating twists, canonicalised."""
    if surface == PANTS:
        return {}
    if surface != TORUS:
        raise InvalidArgument(f"unsupported surface type {surface!r}; use one of {SURFACES}")
    return {name: canonical_word(_substitute(w, img)) for name, img in TWISTS.items()}


# --- lengths -------------------------------------------------------------------


class WordLength:
    """Length of free-group words at a fixed FN point.

    On the torus ``a`` is the interior curve and ``b`` the dual curve through
    the gluing; on pants the letters are the pants generators.
    """

    def __init__(self, surface: str, fn: FNPoint, curve: str = "a", boundary: str = "L"):
        if surface not in SURFACES:
            raise InvalidArgument(f"unsupported surface type {surface!r}")
        self.surface = surface
        if surface == TORUS:
            ell, tau = (float(v) for v in (fn.length(curve), fn.twist(curve)))
            trig = solve_pants(ell, ell, float(fn.length(boundary)))
            t = trig.t
            self.gens = {
                "a": hypmat.compose([hypmat.translation(t), pants_power("a", 1, trig), hypmat.translation(-t)]),
                "b": hypmat.compose(
                    [
                        hypmat.translation(t + trig.t_star),
                        hypmat.rotation(np.pi / 2),
                        hypmat.translation(tau),
                        hypmat.rotation(-np.pi / 2),
                    ]
                ),
            }
            self.gens_inv = {k: hypmat.invert(v) for k, v in self.gens.items()}
        else:
            self.trig = solve_pants(*(float(fn.length(c)) for c in ("x", "y", "z")))

    def matrix(self, w: PantsWord) -> Mat2:
        if self.surface == PANTS:
            return holonomy_pants(w, self.trig)
        mats = []
        for l, e in w.syllables:
            g = self.gens[l] if e > 0 else self.gens_inv[l]
            mats.append(hypmat.power(g, abs(e)))
        return hypmat.compose(mats) if mats else hypmat.identity()

    def __call__(self, w: PantsWord) -> float:
        return float(hypmat.length(self.matrix(w)))


# --- enumeration -------------------------------------------------------------------


@dataclass(frozen=True)
class OrbitEntry:
    word: PantsWord
    length: float
    generation: int

    def to_json(self) -> dict:
        return {"word": str(self.word), "length": self.length, "generation": self.generation}


def _bfs(seed: PantsWord, length_of: WordLength, surface: str, bound: float) -> Dict[PantsWord, OrbitEntry]:
    start = canonical_word(seed)
    l0 = length_of(start)
    seen: Dict[PantsWord, OrbitEntry] = {start: OrbitEntry(start, l0, 0)}
    if l0 > bound:
        return seen
    queue = deque([start])
    while queue:
        w = queue.popleft()
        gen = seen[w].generation
        for v in mcg_neighbors(w, surface).values():
            if v in seen:
                continue
            lv = length_of(v)
            seen[v] = OrbitEntry(v, lv, gen + 1)
            if lv <= bound:
                queue.append(v)
    return seen


@dataclass
class OrbitResult:
    entries: List[OrbitEntry]  # sorted by length, all <= cutoff
    cutoff: float
    margin: float
    visited: int

    @property
    def lengths(self) -> np.ndarray:
        return np.array([e.length for e in self.entries])

    def count(self, a) -> np.ndarray:
        return np.searchsorted(self.lengths, np.asarray(a, dtype=float), side="right")

    def counting_csv(self, a_values: Iterable[float]) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["a", "N"])
        for a in a_values:
            w.writerow([format(float(a), ".17g"), int(self.count(a))])
        return buf.getvalue()

    def to_json(self) -> dict:
        return {
            "cutoff": self.cutoff,
            "margin": self.margin,
            "visited": self.visited,
            "entries": [e.to_json() for e in self.entries],
        }


def enumerate_orbit(
    seed: PantsWord, fn: FNPoint, cutoff: float, margin: float = 2.0, surface: str = TORUS, check: bool = True
) -> OrbitResult:
    """All orbit classes of length ``<= cutoff`` by breadth-first search over
    the twist generators, not expanding classes longer than ``cutoff + margin``.

    With ``check`` the search is repeated at twice the margin and must find
    the same classes, otherwise :class:`MarginTooSmall` is raised.
    """
    if margin < 0:
        raise InvalidArgument("margin must be >= 0")
    length_of = WordLength(surface, fn)
    found = _bfs(seed, length_of, surface, cutoff + margin)
    keep = sorted((e for e in found.values() if e.length <= cutoff), key=lambda e: (e.length, str(e.word)))
    if check:
        wider = _bfs(seed, length_of, surface, cutoff + 2 * margin)
        a = {e.word for e in keep}
        b = {w for w, e in wider.items() if e.length <= cutoff}
        if a != b:
            raise MarginTooSmall(
                f"margin {margin} misses {len(b - a)} classes found with margin {2 * margin}; rerun with a larger margin"
            )
    return OrbitResult(keep, cutoff, margin, len(found))


# --- brute-force oracle ---------------------------------------------------------------


def christoffel_word(p: int, q: int) -> PantsWord:
    """Word of the simple closed curve with homology class ``p a + q b``.

    For ``p, q >= 0`` this is the lower Christoffel word; a negative ``q``
    replaces ``b`` by ``b^-1``.
    """
    if math.gcd(p, q) != 1 or p < 0:
        raise InvalidArgument("need coprime (p, q) with p >= 0")
    sign = 1 if q >= 0 else -1
    q = abs(q)
    n = p + q
    letters = []
    for i in range(1, n + 1):
        step = (i * q) // n - ((i - 1) * q) // n
        letters.append(("b", sign) if step else ("a", 1))
    return PantsWord.from_letters(letters)


def simple_curves_brute_force(fn: FNPoint, cutoff: float, max_letters: int = 40) -> List[Tuple[PantsWord, float]]:
    """Every simple class ``(p, q)`` up to sign with ``p + |q| <= max_letters``
    and length ``<= cutoff``, via Christoffel words."""
    length_of = WordLength(TORUS, fn)
    out = []
    for p in range(0, max_letters + 1):
        for q in range(-max_letters, max_letters + 1):
            if p + abs(q) > max_letters or math.gcd(p, q) != 1:
                continue
            if p == 0 and q != 1:
                continue  # (0, -1) is the inverse of (0, 1)
            w = christoffel_word(p, q)
            ell = length_of(w)
            if ell <= cutoff:
                out.append((canonical_word(w), ell))
    return sorted(out, key=lambda t: t[1])


def growth_exponent(result: OrbitResult, a_min: float, a_max: float, points: int = 25) -> float:
    """Slope of ``log N(a)`` against ``log a`` on ``[a_min, a_max]``."""
    a = np.linspace(a_min, a_max, points)
    n = result.count(a)
    if np.any(n == 0):
        raise InvalidArgument("counting function vanishes on the regression range")
    return float(np.polyfit(np.log(a), np.log(n), 1)[0])
