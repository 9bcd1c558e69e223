"""Quadrature grids on spheres and direction grids with tangent frames.

Both grids use Gauss-Legendre nodes in cos(theta) crossed with a uniform
phi grid, which integrates products of spherical harmonics exactly once the
node counts exceed the bandwidth (n_theta >= N+1, n_phi >= 2N+2).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["unit_sphere_nodes", "frames", "SphereGrid", "sphere_grid_for_order", "DirectionGrid"]


def unit_sphere_nodes(n_theta: int, n_phi: int):
    """Product quadrature on the unit sphere; weights sum to 4 pi exactly."""
    if n_theta < 1 or n_phi < 1:
        raise ValueError("n_theta and n_phi must be positive")
    x, wx = np.polynomial.legendre.leggauss(n_theta)
    theta1 = np.arccos(x)
    phi1 = 2.0 * np.pi * np.arange(n_phi) / n_phi
    theta = np.repeat(theta1, n_phi)
    phi = np.tile(phi1, n_theta)
    w = np.repeat(wx, n_phi) * (2.0 * np.pi / n_phi)
    return theta, phi, w


def frames(theta: np.ndarray, phi: np.ndarray):
    """Orthonormal (r-hat, theta-hat, phi-hat) triads, arrays of shape (npts, 3)."""
    st, ct = np.sin(theta), np.cos(theta)
    sp, cp = np.sin(phi), np.cos(phi)
    rhat = np.stack([st * cp, st * sp, ct], axis=-1)
    that = np.stack([ct * cp, ct * sp, -st], axis=-1)
    phat = np.stack([-sp, cp, np.zeros_like(phi)], axis=-1)
    return rhat, that, phat


@dataclass(frozen=True)
class SphereGrid:
    """Surface quadrature on a sphere of given center and radius.

    ``weights`` carry the surface measure (they sum to 4 pi R^2); the
    projection formulas integrate against the unit-sphere measure, available
    as ``solid_angle_weights``.
    """

    center: np.ndarray
    radius: float
    n_theta: int
    n_phi: int
    theta: np.ndarray = field(repr=False)
    phi: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)

    @property
    def solid_angle_weights(self) -> np.ndarray:
        return self.weights / self.radius**2

    @property
    def points(self) -> np.ndarray:
        rhat, _, _ = frames(self.theta, self.phi)
        return self.center[None, :] + self.radius * rhat

    def triads(self):
        return frames(self.theta, self.phi)


def sphere_grid_for_order(order_max: int, center, radius: float,
                          n_theta: int | None = None, n_phi: int | None = None) -> SphereGrid:
    """Grid sized (N+2) x (2N+4): one margin above exactness for order N."""
    if radius <= 0:
        raise ValueError(f"radius must be positive, got {radius}")
    nt = n_theta if n_theta is not None else order_max + 2
    np_ = n_phi if n_phi is not None else 2 * order_max + 4
    theta, phi, w = unit_sphere_nodes(nt, np_)
    return SphereGrid(np.asarray(center, dtype=float), float(radius), nt, np_,
                      theta, phi, w * radius**2)


@dataclass(frozen=True)
class DirectionGrid:
    """Far-field / incidence direction grid with per-direction frames.

    Channels per direction: one longitudinal amplitude along alpha and two
    transversal amplitudes along (theta-hat, phi-hat).
    """

    n_theta: int
    n_phi: int
    theta: np.ndarray = field(repr=False)
    phi: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)
    alpha: np.ndarray = field(repr=False)
    theta_hat: np.ndarray = field(repr=False)
    phi_hat: np.ndarray = field(repr=False)

    @classmethod
    def build(cls, n_theta: int = 11, n_phi: int = 21) -> "DirectionGrid":
        theta, phi, w = unit_sphere_nodes(n_theta, n_phi)
        a, t, p = frames(theta, phi)
        return cls(n_theta, n_phi, theta, phi, w, a, t, p)

    @property
    def n_directions(self) -> int:
        return self.theta.size

    @property
    def n_channels(self) -> int:
        return 3 * self.n_directions

    def antipodal_permutation(self) -> np.ndarray:
        """Index array q -> q' with alpha_{q'} = -alpha_q.

        Requires an even phi count; the Gauss-Legendre theta nodes are
        symmetric about pi/2, so the grid is then closed under the map.
        """
        if self.n_phi % 2:
            raise ValueError("antipodal map needs an even number of phi nodes")
        it = np.arange(self.n_theta)[:, None]
        ip = np.arange(self.n_phi)[None, :]
        q = (self.n_theta - 1 - it) * self.n_phi + (ip + self.n_phi // 2) % self.n_phi
        return q.reshape(-1)
