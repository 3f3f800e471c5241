"""Standard surfaces and test loops.

Each catalog entry pairs a :class:`~teichlab.loops.LoopSpec` with a base
Fenchel-Nielsen point and the list of boundary curves of the surface the loop
fills (the curves along which length must grow without bound).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Tuple

import numpy as np

from .coords import FNPoint
from .loops import Incursion, LoopSpec, PantsWord, SurfaceGraph

SQUARE_TORUS_LENGTH = 2.0 * float(np.arcsinh(1.0))


def pants_surface() -> SurfaceGraph:
    """A single pair of pants with boundary curves ``x``, ``y``, ``z``."""
    return SurfaceGraph({"P": ("x", "y", "z")}, {"x": "boundary", "y": "boundary", "z": "boundary"})


def once_holed_torus() -> SurfaceGraph:
    """One pants with two slots glued along the interior curve ``a``."""
    return SurfaceGraph({"P": ("a", "a", "L")}, {"a": "interior", "L": "boundary"})


def four_holed_sphere() -> SurfaceGraph:
    """Two pants glued along ``c``; boundaries ``d1``..``d4``."""
    return SurfaceGraph(
        {"P": ("c", "d1", "d2"), "Q": ("c", "d3", "d4")},
        {"c": "interior", "d1": "boundary", "d2": "boundary", "d3": "boundary", "d4": "boundary"},
    )


def pants_loop(word: str) -> LoopSpec:
    return LoopSpec((Incursion("P", None, None, PantsWord.parse(word)),), pants_surface())


def figure_eight() -> LoopSpec:
    return pants_loop("a1 b-1")


def torus_loop(words: List[str], m: int = 0) -> LoopSpec:
    """Loop on the once-holed torus crossing ``a`` once per entry of ``words``.

    Each incursion enters through slot 0 and leaves through slot 1; torus word
    ``a^k b`` corresponds to the incursion word ``a^k``.
    """
    incs = tuple(Incursion("P", 0, 1, PantsWord.parse(w) if w else PantsWord(), m=m) for w in words)
    return LoopSpec(incs, once_holed_torus())


def dual_curve() -> LoopSpec:
    return torus_loop([""])


def pants_point(x=2.0, y=2.0, z=2.0) -> FNPoint:
    return FNPoint({}, {"x": x, "y": y, "z": z})


def torus_point(ell=SQUARE_TORUS_LENGTH, tau=0.0, L=0.0) -> FNPoint:
    return FNPoint({"a": (ell, tau)}, {"L": L})


def sphere_point(c=2.0, tau=0.3, d=(1.0, 1.5, 2.0, 2.5)) -> FNPoint:
    return FNPoint({"c": (c, tau)}, {f"d{i + 1}": v for i, v in enumerate(d)})


@dataclass(frozen=True)
class CatalogEntry:
    name: str
    loop: LoopSpec
    point: FNPoint
    filled_boundaries: Tuple[str, ...]


def loop_catalog() -> Dict[str, CatalogEntry]:
    sphere = four_holed_sphere()
    around_d1_d3 = LoopSpec(
        (Incursion("P", 0, 0, PantsWord.parse("b1")), Incursion("Q", 0, 0, PantsWord.parse("b1"))), sphere
    )
    eight_d1_d3 = LoopSpec(
        (Incursion("P", 0, 0, PantsWord.parse("b2")), Incursion("Q", 0, 0, PantsWord.parse("b-1"))), sphere
    )
    entries = [
        CatalogEntry("figure-eight", figure_eight(), pants_point(), ("x", "y", "z")),
        CatalogEntry("pants-a2b-1", pants_loop("a2 b-1"), pants_point(1.0, 1.5, 0.7), ("x", "y", "z")),
        CatalogEntry("torus-dual", dual_curve(), torus_point(1.3, 0.4, 0.5), ("L",)),
        CatalogEntry("torus-ab", torus_loop(["a1"]), torus_point(1.1, -0.6, 1.0), ("L",)),
        CatalogEntry("torus-ab2", torus_loop(["a1", ""]), torus_point(1.7, 0.2, 0.8), ("L",)),
        CatalogEntry("sphere-d1d3", around_d1_d3, sphere_point(), ("d1", "d2", "d3", "d4")),
        CatalogEntry("sphere-eight", eight_d1_d3, sphere_point(1.2, -0.5), ("d1", "d2", "d3", "d4")),
    ]
    return {e.name: e for e in entries}
