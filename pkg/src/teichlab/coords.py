"""Fenchel-Nielsen points."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Dict, Mapping, Tuple

import numpy as np

from .errors import ConfigurationError, InvalidArgument


@dataclass(frozen=True)
class FNPoint:
    """Lengths and twists of interior curves plus lengths of boundary curves.

    Values may be numpy arrays of a common shape, in which case the point is a
    batch of points and every length function evaluates elementwise.
    """

    interior: Mapping[str, Tuple[object, object]] = field(default_factory=dict)
    boundary: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self):
        for cid, (ell, _tau) in self.interior.items():
            if np.any(~(np.asarray(ell) > 0)):
                raise InvalidArgument(f"interior curve {cid!r} needs a positive length")
        for cid, L in self.boundary.items():
            if np.any(~(np.asarray(L) >= 0)):
                raise InvalidArgument(f"boundary curve {cid!r} needs a length >= 0")

    def length(self, curve: str):
        if curve in self.interior:
            return self.interior[curve][0]
        if curve in self.boundary:
            return self.boundary[curve]
        raise ConfigurationError(f"curve {curve!r} missing from Fenchel-Nielsen point")

    def twist(self, curve: str):
        try:
            return self.interior[curve][1]
        except KeyError:
            raise ConfigurationError(f"no twist for curve {curve!r} (not interior)") from None

    def with_twist(self, curve: str, tau) -> "FNPoint":
        interior = dict(self.interior)
        interior[curve] = (interior[curve][0], tau)
        return replace(self, interior=interior)

    def with_length(self, curve: str, value) -> "FNPoint":
        if curve in self.interior:
            interior = dict(self.interior)
            interior[curve] = (value, interior[curve][1])
            return replace(self, interior=interior)
        if curve in self.boundary:
            boundary = dict(self.boundary)
            boundary[curve] = value
            return replace(self, boundary=boundary)
        raise ConfigurationError(f"curve {curve!r} missing from Fenchel-Nielsen point")

    def check_covers(self, surface) -> None:
        want_i = set(surface.interior_curves())
        want_b = set(surface.boundary_curves())
        if set(self.interior) != want_i or set(self.boundary) != want_b:
            raise ConfigurationError(
                f"point covers interior {sorted(self.interior)} / boundary {sorted(self.boundary)}, "
                f"surface has interior {sorted(want_i)} / boundary {sorted(want_b)}"
            )

    def to_json(self) -> dict:
        return {
            "interior": {k: [float(l), float(t)] for k, (l, t) in self.interior.items()},
            "boundary": {k: float(v) for k, v in self.boundary.items()},
        }

    @classmethod
    def from_json(cls, data: Mapping) -> "FNPoint":
        extra = set(data) - {"interior", "boundary"}
        if extra:
            raise ConfigurationError(f"unknown FNPoint fields {sorted(extra)}")
        interior: Dict[str, Tuple[float, float]] = {}
        for k, v in data.get("interior", {}).items():
            if not isinstance(v, (list, tuple)) or len(v) != 2:
                raise ConfigurationError(f"interior.{k} must be [length, twist]")
            interior[k] = (float(v[0]), float(v[1]))
        boundary = {k: float(v) for k, v in data.get("boundary", {}).items()}
        return cls(interior, boundary)
