"""Detector grid geometry.

The detector is a square grid of ``side`` x ``side`` pixels addressed by
integer coordinates on a centered lattice: pixel (0, 0) sits at coordinate
(-side/2, -side/2) and pixel (side-1, side-1) at (side/2 - 1, side/2 - 1).
Every pixel carries the same quadrature weight 1/side**2, so the weights sum
to exactly 1 and grid sums approximate normalized integrals over the field
of view.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError


@dataclass(frozen=True)
class GridSpec:
    """Square centered pixel lattice.

    Attributes
    ----------
    side : int
        Pixels per edge. Even and >= 2 so the lattice is symmetric about 0.
    """

    side: int

    def __post_init__(self):
        if not isinstance(self.side, (int, np.integer)):
            raise InvalidArgumentError(f"side must be an integer, got {self.side!r}")
        if self.side < 2 or self.side % 2 != 0:
            raise InvalidArgumentError(f"side must be even and >= 2, got {self.side}")

    @property
    def n_pixels(self) -> int:
        return self.side * self.side

    @property
    def pixel_weight(self) -> float:
        """Quadrature weight per pixel; weights sum to 1 over the grid."""
        return 1.0 / (self.side * self.side)

    def axis(self) -> np.ndarray:
        """1-D coordinate axis {-side/2, ..., side/2 - 1}."""
        return np.arange(self.side, dtype=np.float64) - self.side // 2

    def coords(self) -> tuple[np.ndarray, np.ndarray]:
        """Return (X, Y) coordinate maps, each shaped (side, side).

        X varies along columns, Y along rows, so pixel (row i, col j) has
        coordinate (axis[j], axis[i]) and pixel (0, 0) is (-side/2, -side/2).
        """
        ax = self.axis()
        return np.meshgrid(ax, ax, indexing="xy")


def make_grid(side: int) -> GridSpec:
    """Validate ``side`` and build a GridSpec."""
    return GridSpec(int(side))
