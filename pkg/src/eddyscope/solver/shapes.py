"""Reference shapes of the dictionary as implicit inequalities."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..errors import DomainError

KINDS = ("cube", "cylinder", "ellipsoid", "l_shape", "prism", "sphere",
         "custom_implicit")

# Dictionary labels in the order used by the classification figures.
DICTIONARY_LABELS = ("cube", "cylinder", "ellipsoid", "L-shape", "prism",
                     "sphere")
LABEL_TO_KIND = {"cube": "cube", "cylinder": "cylinder",
                 "ellipsoid": "ellipsoid", "L-shape": "l_shape",
                 "prism": "prism", "sphere": "sphere"}

_DEFAULTS = {
    "cube": {"half_width": 1.0},
    "cylinder": {"radius": 1.0, "half_height": 0.5},
    "ellipsoid": {"semi_axes": (1.0, 1.0, 2.0)},
    "l_shape": {"half_extents": (1.0, 0.5, 0.5)},
    "prism": {"half_height": 1.0},
    "sphere": {"radius": 1.0},
}


@dataclass(frozen=True)
class ShapeSpec:
    """A bounded shape containing the origin.

    ``parameters`` override the per-kind defaults, which reproduce the
    dictionary of the numerical experiments (cube ``[-1, 1]^3``, cylinder of
    radius 1 and height 1, ellipsoid ``x^2 + y^2 + z^2/4 <= 1``, the box
    ``[-1, 1] x [-0.5, 0.5]^2`` labelled L-shape, the triangular prism
    ``{x >= -1, y >= -1, x + y <= 1} x [-1, 1]`` and the unit sphere).
    ``custom_implicit`` takes a vectorized ``indicator`` callable and a
    ``bounds`` half-width.
    """

    kind: str
    parameters: dict = field(default_factory=dict)
    indicator_fn: Callable | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DomainError(f"unknown shape kind {self.kind!r}")
        merged = dict(_DEFAULTS.get(self.kind, {}))
        merged.update(self.parameters)
        object.__setattr__(self, "parameters", merged)
        if self.kind == "custom_implicit" and self.indicator_fn is None:
            raise DomainError("custom_implicit shapes need an indicator_fn")
        if not self.contains(np.zeros((1, 3)))[0]:
            raise DomainError(f"{self.kind} does not contain the origin")

    def contains(self, x: np.ndarray) -> np.ndarray:
        """Membership of the rows of ``x`` (closed set)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        X, Y, Z = x[:, 0], x[:, 1], x[:, 2]
        p = self.parameters
        if self.kind == "cube":
            w = p["half_width"]
            return np.max(np.abs(x), axis=1) <= w
        if self.kind == "cylinder":
            return (X**2 + Y**2 <= p["radius"] ** 2) & (np.abs(Z) <= p["half_height"])
        if self.kind == "ellipsoid":
            a, b, c = p["semi_axes"]
            return (X / a) ** 2 + (Y / b) ** 2 + (Z / c) ** 2 <= 1.0
        if self.kind == "l_shape":
            hx, hy, hz = p["half_extents"]
            return (np.abs(X) <= hx) & (np.abs(Y) <= hy) & (np.abs(Z) <= hz)
        if self.kind == "prism":
            return ((X >= -1) & (Y >= -1) & (X + Y <= 1)
                    & (np.abs(Z) <= p["half_height"]))
        if self.kind == "sphere":
            return np.sum(x**2, axis=1) <= p["radius"] ** 2
        return np.asarray(self.indicator_fn(x), dtype=bool)

    def bounding_box(self) -> np.ndarray:
        """(3, 2) array of lower/upper coordinate bounds."""
        p = self.parameters
        if self.kind == "cube":
            w = p["half_width"]
            half = (w, w, w)
        elif self.kind == "cylinder":
            half = (p["radius"], p["radius"], p["half_height"])
        elif self.kind == "ellipsoid":
            half = tuple(p["semi_axes"])
        elif self.kind == "l_shape":
            half = tuple(p["half_extents"])
        elif self.kind == "prism":
            h = p["half_height"]
            return np.array([[-1.0, 2.0], [-1.0, 2.0], [-h, h]])
        elif self.kind == "sphere":
            r = p["radius"]
            half = (r, r, r)
        else:
            b = float(p.get("bounds", 1.0))
            half = (b, b, b)
        half = np.asarray(half, dtype=float)
        return np.stack([-half, half], axis=1)

    def min_width(self) -> float:
        """Smallest bounding-box extent, used to bound the voxel size."""
        box = self.bounding_box()
        return float(np.min(box[:, 1] - box[:, 0]))

    def exact_volume(self) -> float | None:
        p = self.parameters
        if self.kind == "cube":
            return (2 * p["half_width"]) ** 3
        if self.kind == "cylinder":
            return np.pi * p["radius"] ** 2 * 2 * p["half_height"]
        if self.kind == "ellipsoid":
            return 4 / 3 * np.pi * np.prod(p["semi_axes"])
        if self.kind == "l_shape":
            return 8 * np.prod(p["half_extents"])
        if self.kind == "prism":
            return 4.5 * 2 * p["half_height"]
        if self.kind == "sphere":
            return 4 / 3 * np.pi * p["radius"] ** 3
        return None


def shape_for_label(label: str) -> ShapeSpec:
    return ShapeSpec(LABEL_TO_KIND[label])
