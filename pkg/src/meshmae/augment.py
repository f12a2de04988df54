"""Training-time augmentation applied to raw meshes before remeshing."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import comb

from .mesh import Mesh

SCALE_CLAMP = (0.6, 1.4)


@dataclass(frozen=True)
class AugmentConfig:
    enable: bool = False
    scale_sigma: float = 0.1
    ffd_magnitude: float = 0.05

    def __post_init__(self):
        if self.scale_sigma < 0 or self.ffd_magnitude < 0:
            raise ValueError("augmentation scales must be non-negative")


def anisotropic_scale(mesh: Mesh, rng: np.random.Generator, sigma: float = 0.1,
                      factors=None) -> Mesh:
    """Scale each axis by a Normal(1, sigma) factor clamped to [0.6, 1.4].

    Explicit ``factors`` bypass the draw (and the clamp).
    """
    if factors is None:
        factors = np.clip(rng.normal(1.0, sigma, size=3), *SCALE_CLAMP)
    return Mesh(mesh.vertices * np.asarray(factors, dtype=np.float64), mesh.faces)


@dataclass
class FFDLattice:
    """Control-point displacements on a regular grid over a box.

    ``displacements`` has shape (l+1, m+1, n+1, 3); the Bernstein degree per
    axis is the grid size minus one.
    """

    lower: np.ndarray
    upper: np.ndarray
    displacements: np.ndarray

    @classmethod
    def around(cls, mesh: Mesh, shape=(4, 4, 4), inflate: float = 0.05) -> "FFDLattice":
        """Zero-displacement lattice on the bounding box inflated by ``inflate``."""
        lo = mesh.vertices.min(axis=0)
        hi = mesh.vertices.max(axis=0)
        pad = (hi - lo) * inflate / 2 + 1e-12
        return cls(lo - pad, hi + pad, np.zeros((*shape, 3)))

    @property
    def degree(self) -> tuple[int, int, int]:
        return tuple(s - 1 for s in self.displacements.shape[:3])

    def randomized(self, magnitude: float, rng: np.random.Generator, scale: float = 1.0) -> "FFDLattice":
        d = rng.uniform(-magnitude * scale, magnitude * scale, size=self.displacements.shape)
        return FFDLattice(self.lower, self.upper, d)

    def displacement(self, points: np.ndarray) -> np.ndarray:
        """Trivariate Bernstein interpolation of the displacements at ``points``."""
        t = (np.asarray(points, dtype=np.float64) - self.lower) / (self.upper - self.lower)
        t = np.clip(t, 0.0, 1.0)
        basis = [_bernstein(deg, t[:, axis]) for axis, deg in enumerate(self.degree)]
        return np.einsum("pi,pj,pk,ijkc->pc", *basis, self.displacements)


def _bernstein(degree: int, t: np.ndarray) -> np.ndarray:
    """(n, degree+1) basis values."""
    i = np.arange(degree + 1)
    return comb(degree, i) * t[:, None] ** i * (1 - t[:, None]) ** (degree - i)


def ffd_deform(mesh: Mesh, lattice: FFDLattice | None = None, magnitude: float = 0.05,
               rng: np.random.Generator | None = None) -> Mesh:
    """Free-form deformation of the vertices; faces are untouched.

    Without a ``lattice`` a 4x4x4 one is built around the mesh and each
    control point is displaced by Uniform(-magnitude, magnitude) times the
    bounding-box diagonal per axis.
    """
    if lattice is None:
        lattice = FFDLattice.around(mesh)
        if magnitude > 0:
            if rng is None:
                raise ValueError("rng required for a random lattice")
            lattice = lattice.randomized(magnitude, rng, mesh.bbox_diagonal())
    return Mesh(mesh.vertices + lattice.displacement(mesh.vertices), mesh.faces)


def augment(mesh: Mesh, rng: np.random.Generator, config: AugmentConfig = AugmentConfig(enable=True)) -> Mesh:
    """Anisotropic scaling followed by FFD (when enabled)."""
    if not config.enable:
        return mesh
    out = anisotropic_scale(mesh, rng, config.scale_sigma)
    return ffd_deform(out, magnitude=config.ffd_magnitude, rng=rng)
