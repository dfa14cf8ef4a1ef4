"""Model configuration and the truncated momentum lattice.

Momenta live in a cube ``[-L, L]^3``. In ``cubic`` mode every point of the
cube is an active mode; in ``slice`` mode only the points with
``1 + n^2 <= M^(2 j_max)`` are active.  Flattened indices follow C order over
``(n1, n2, n3)`` so that ``kron(a, b, c)`` acts colour by colour.
"""

from __future__ import annotations

import cmath
import hashlib
import json
import math
from dataclasses import asdict, dataclass
from functools import cached_property

import numpy as np

CUTOFF_MODES = ("cubic", "slice")


class DomainError(ValueError):
    """Raised when parameters leave the regime where a computation is defined."""


def ball_radius(M: int, j: int) -> int:
    """Largest |n_c| allowed by ``1 + n^2 <= M^(2j)``."""
    return math.isqrt(M ** (2 * j) - 1)


@dataclass(frozen=True)
class ModelParams:
    g: complex = 0.0
    M: int = 2
    j_max: int = 1
    rho: float = 0.25
    N: int | None = None
    cutoff: str = "cubic"

    def __post_init__(self):
        object.__setattr__(self, "g", complex(self.g))
        if self.M < 2:
            raise DomainError(f"slice ratio M must be >= 2, got {self.M}")
        if self.j_max < 1:
            raise DomainError(f"j_max must be >= 1, got {self.j_max}")
        if not self.rho > 0:
            raise DomainError(f"rho must be positive, got {self.rho}")
        if self.N is not None and self.N < 0:
            raise DomainError(f"cutoff N must be >= 0, got {self.N}")
        if self.cutoff not in CUTOFF_MODES:
            raise DomainError(f"unknown cutoff mode {self.cutoff!r}")

    @property
    def lam(self) -> complex:
        # principal branch; the cardioid keeps Arg g away from the cut
        return cmath.sqrt(self.g)

    @property
    def L(self) -> int:
        return self.N if self.N is not None else ball_radius(self.M, self.j_max)

    def with_g(self, g) -> "ModelParams":
        return ModelParams(g, self.M, self.j_max, self.rho, self.N, self.cutoff)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["g"] = [self.g.real, self.g.imag]
        return d

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(frozen=True)
class Lattice:
    """Geometry of the cube ``[-L, L]^3`` plus the active-mode mask."""

    L: int
    M: int = 2
    j_max: int | None = None

    @classmethod
    def from_params(cls, params: ModelParams) -> "Lattice":
        jm = params.j_max if params.cutoff == "slice" else None
        return cls(params.L, params.M, jm)

    @property
    def d(self) -> int:
        return 2 * self.L + 1

    @property
    def dim(self) -> int:
        return self.d ** 3

    @cached_property
    def axis(self) -> np.ndarray:
        return np.arange(-self.L, self.L + 1)

    @cached_property
    def momenta(self) -> np.ndarray:
        """Integer array of shape (dim, 3)."""
        g = np.meshgrid(self.axis, self.axis, self.axis, indexing="ij")
        return np.stack([x.ravel() for x in g], axis=1)

    @cached_property
    def n2(self) -> np.ndarray:
        return (self.momenta ** 2).sum(axis=1)

    @cached_property
    def propagator(self) -> np.ndarray:
        return 1.0 / (self.n2 + 1.0)

    def ball(self, j: int) -> np.ndarray:
        """Indicator of ``1 + n^2 <= M^(2j)`` (0 for j <= 0)."""
        if j <= 0:
            return np.zeros(self.dim)
        return (1 + self.n2 <= self.M ** (2 * j)).astype(float)

    def slice(self, j: int) -> np.ndarray:
        return self.ball(j) - self.ball(j - 1)

    @cached_property
    def active(self) -> np.ndarray:
        if self.j_max is None:
            return np.ones(self.dim)
        return self.ball(self.j_max)
